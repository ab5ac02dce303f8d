"""Counter-based random numbers keyed by (seed, item index).

Built on Philox: ``advance`` moves the counter in blocks of four 64-bit
words, so each item is given an aligned block budget.  The stream seen by
item ``i`` depends only on ``(seed, i)``, which makes results identical for
any partition of the index range across workers.
"""

import numpy as np
from scipy.special import ndtri

_WORDS_PER_BLOCK = 4
_MASK64 = (1 << 64) - 1


def _blocks_per_item(words_per_item):
    return -(-words_per_item // _WORDS_PER_BLOCK)


def _generator(seed, block_offset):
    bg = np.random.Philox(key=np.uint64(int(seed) & _MASK64))
    if block_offset:
        bg.advance(int(block_offset))
    return np.random.Generator(bg)


def uniform_items(seed, start, count, words_per_item):
    """Uniform(0,1) draws for items ``start .. start+count-1``.

    Returns an array of shape ``(count, words_per_item)`` whose row ``i``
    is a pure function of ``(seed, start + i)``.
    """
    if count < 0 or words_per_item < 1:
        raise ValueError("count must be >= 0 and words_per_item >= 1")
    blocks = _blocks_per_item(words_per_item)
    gen = _generator(seed, start * blocks)
    u = gen.random(count * blocks * _WORDS_PER_BLOCK)
    return u.reshape(count, blocks * _WORDS_PER_BLOCK)[:, :words_per_item]


def normal_items(seed, start, count, words_per_item):
    """Standard-normal draws via the inverse CDF of :func:`uniform_items`."""
    u = uniform_items(seed, start, count, words_per_item)
    # random() yields multiples of 2^-53 in [0, 1); keep ndtri finite at 0.
    return ndtri(np.clip(u, 1e-17, 1.0 - 1e-17))


def substream(seed, label):
    """Derive an independent seed for a named substream.

    Deterministic splitting for estimators that need several independent
    streams (e.g. labels vs. points, or per-check seeds).
    """
    h = np.uint64(int(seed) & _MASK64)
    for ch in str(label).encode():
        h = np.uint64((int(h) * 1099511628211 + ch + 1) & _MASK64)
    return int(h)
