"""Small shared helpers: confidence radii, block-parallel trials, table codecs."""

from __future__ import annotations

import base64
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

Z99 = 2.576  # two-sided 99% normal quantile


def confidence99_half_width(p_hat: float, trials: int) -> float:
    """Normal-approximation 99% half-width, rule-of-three floor at p_hat = 0 or 1."""
    if trials <= 0:
        return 0.0
    if p_hat <= 0.0 or p_hat >= 1.0:
        return 3.0 / trials
    return Z99 * float(np.sqrt(p_hat * (1.0 - p_hat) / trials))


def split_blocks(total: int, block_size: int) -> list[tuple[int, int]]:
    """(block_index, block_count) pairs; boundaries depend only on block_size."""
    return [(i, min(block_size, total - i * block_size))
            for i in range((total + block_size - 1) // block_size)]


def run_blocks(blocks: Sequence[tuple[int, int]], fn: Callable, workers: int = 1) -> list:
    """Run fn(block_index, block_count) over blocks, results in block order.

    With workers > 1 the blocks execute on a thread pool; because every
    block derives its own RNG substream from its index, the aggregate is
    independent of the worker count.
    """
    if workers <= 1 or len(blocks) <= 1:
        return [fn(i, c) for i, c in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i, c) for i, c in blocks]
        return [f.result() for f in futures]


def encode_array(arr: np.ndarray) -> dict:
    """Lossless JSON-safe encoding of an integer/float array."""
    arr = np.ascontiguousarray(arr)
    return {
        "dtype": arr.dtype.str,
        "shape": list(arr.shape),
        "b64": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["b64"])
    return np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()
