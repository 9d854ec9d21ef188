"""Dense kernels used by the CUR score approximation.

Matrices and vectors are plain float64 numpy arrays. Every public
function validates its input and raises :class:`ValidationError` on
empty or non-finite data.
"""

import numpy as np

from .errors import FactorizationError, ValidationError

DEFAULT_RCOND = 1e-12


def as_matrix(m, name="matrix"):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    return a


def as_vector(v, name="vector"):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    return a


def pseudo_inverse(m, rcond=DEFAULT_RCOND):
    """Moore-Penrose pseudo-inverse via a thin SVD.

    Singular values ``s <= rcond * s.max()`` are treated as zero, so
    rank-deficient inputs (e.g. linearly dependent anchor columns) are
    handled. The result has shape ``(m.shape[1], m.shape[0])``.
    """
    a = as_matrix(m)
    if a.size == 0:
        raise ValidationError("pseudo_inverse of an empty matrix")
    if not rcond > 0:
        raise ValidationError(f"rcond must be positive, got {rcond}")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"SVD did not converge: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > rcond * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def softmax(v):
    """Numerically stable softmax of a 1-D vector."""
    a = as_vector(v)
    if a.size == 0:
        raise ValidationError("softmax of an empty vector")
    e = np.exp(a - a.max())
    return e / e.sum()


def top_k_indices(v, k):
    """Indices of the ``k`` largest entries, descending.

    Ties are broken by ascending index so that the result is fully
    deterministic. ``-inf`` entries are allowed and sort last.
    """
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ValidationError(f"expected a 1-D vector, got shape {a.shape}")
    if np.isnan(a).any():
        raise ValidationError("top_k_indices input has NaN entries")
    k = int(k)
    if k < 0 or k > a.size:
        raise ValidationError(f"k={k} out of range for a vector of length {a.size}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k < a.size:
        # argpartition keeps the candidate set small; the boundary value may be
        # shared by elements left out, so include every tie at the threshold.
        part = np.argpartition(-a, k - 1)[:k]
        threshold = a[part].min()
        cand = np.flatnonzero(a >= threshold)
    else:
        cand = np.arange(a.size)
    order = np.lexsort((cand, -a[cand]))
    return cand[order[:k]].astype(np.int64)


def matmul(a, b):
    """Matrix product with shape checking; 1-D operands are treated as row/column vectors."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim not in (1, 2) or y.ndim not in (1, 2):
        raise ValidationError("matmul operands must be 1-D or 2-D")
    inner_a = x.shape[-1]
    inner_b = y.shape[0]
    if inner_a != inner_b:
        raise ValidationError(f"matmul dimension mismatch: {x.shape} x {y.shape}")
    return x @ y
