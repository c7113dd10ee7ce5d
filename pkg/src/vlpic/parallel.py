"""Deterministic chunked execution of particle loops.

Particle work is always split into fixed-size chunks, whether it runs on
one worker or several, and chunk results are merged with a fixed-shape
pairwise tree.  Both choices make the floating-point result a function of
the inputs alone: the same run produces bitwise identical output for any
worker count.
"""

from concurrent.futures import ThreadPoolExecutor

__all__ = ["CHUNK_SIZE", "chunk_spans", "map_chunks", "pairwise_sum"]

CHUNK_SIZE = 4096


def chunk_spans(n, chunk=CHUNK_SIZE):
    """Half-open index ranges [(lo, hi), ...] covering range(n)."""
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_chunks(fn, n, workers=1):
    """Apply fn(lo, hi) to every chunk span, in span order.

    With workers > 1 the chunks run on a thread pool; numpy releases the
    GIL in its inner loops, so read-only shared arrays need no copies.
    """
    spans = chunk_spans(n)
    if workers <= 1 or len(spans) <= 1:
        return [fn(lo, hi) for lo, hi in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda span: fn(*span), spans))


def pairwise_sum(parts):
    """Sum a list of arrays with a fixed binary tree.

    The association depends only on len(parts), never on worker timing,
    so accumulated deposits are reproducible.
    """
    items = list(parts)
    if not items:
        raise ValueError("pairwise_sum needs at least one term")
    while len(items) > 1:
        merged = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]
