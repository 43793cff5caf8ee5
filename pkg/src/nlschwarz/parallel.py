from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, workers=1):
    """``list(map(fn, items))``, optionally on a thread pool; results keep input order."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
