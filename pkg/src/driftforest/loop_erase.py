"""Chronological loop erasure."""

import numpy as np

from . import _kernels
from .errors import DomainError
from .walk import Path

__all__ = ["pack_rows", "vertex_ids", "loop_erase_indices", "loop_erase", "juxtapose_check"]


def pack_rows(*arrays):
    """Encode integer rows as single int64 keys, equal rows to equal keys.

    Mixed-radix encoding over the joint bounding box of all arrays. Returns
    None when the box is too large for 63 bits.
    """
    stacked = np.concatenate(arrays, axis=0)
    lo = stacked.min(axis=0)
    span = stacked.max(axis=0) - lo + 1
    if float(np.prod(span.astype(float))) >= 2.0**62:
        return None
    radix = np.cumprod(np.concatenate([[1], span[:0:-1]]))[::-1].astype(np.int64)
    return [(a - lo) @ radix for a in arrays]


def vertex_ids(*arrays):
    """Dense integer ids for the rows of one or more ``(m, k)`` vertex arrays.

    Equal rows get equal ids across all arrays. Returns one id array per input.
    """
    keys = pack_rows(*arrays)
    if keys is not None:
        _, inverse = np.unique(np.concatenate(keys), return_inverse=True)
    else:
        _, inverse = np.unique(np.concatenate(arrays, axis=0), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1).astype(np.int64)
    out, off = [], 0
    for a in arrays:
        out.append(inverse[off : off + a.shape[0]])
        off += a.shape[0]
    return out


def loop_erase_indices(array):
    """Indices of the visits of ``array`` that survive loop erasure."""
    if array.shape[0] == 0:
        raise DomainError("cannot loop-erase an empty path")
    (ids,) = vertex_ids(array)
    return _kernels.loop_erase_ids(ids)


def loop_erase(path):
    """Erase cycles of ``path`` in the order they are closed.

    Single pass: the erased path grows one vertex at a time, and a vertex that
    is already on it truncates the erased path back to that vertex.
    """
    if len(path) == 0:
        raise DomainError("cannot loop-erase an empty path")
    return Path(path.array[loop_erase_indices(path.array)])


def juxtapose_check(path, level):
    """Check that loop erasure splits at a splitting level of ``path``.

    If ``level`` is visited by the drifted coordinate exactly once, at index
    ``m0``, the erasure of the whole path must equal the erasure of
    ``path[:m0 + 1]`` followed by the erasure of ``path[m0:]`` without its
    first vertex. Otherwise the check holds vacuously.
    """
    if len(path) == 0:
        raise DomainError("empty path")
    hits = np.flatnonzero(path.levels == level)
    if hits.size != 1:
        return True
    m0 = int(hits[0])
    whole = loop_erase(path).array
    left = loop_erase(path[: m0 + 1]).array
    right = loop_erase(path[m0:]).array
    return np.array_equal(whole, np.vstack([left, right[1:]]))
