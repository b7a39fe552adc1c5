"""Set functions on {0,1}^p and their Lovász extension.

The extension of a set function ``F`` with ``F(empty) = 0`` at a point ``m``
is obtained by visiting the coordinates of ``m`` in decreasing order and
weighting each one by the marginal gain of ``F`` when that coordinate joins
the set built so far.  For submodular ``F`` this is the tight convex closure.

Ties in ``m`` are broken by a stable sort, so lower indices come first.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .validation import as_float_vector

MAX_SUBMODULAR_CHECK_SIZE = 12


class SetFunction:
    """A real-valued function on subsets of ``{0, ..., p-1}``.

    Subsets are passed to ``evaluate`` as boolean indicator arrays of length
    ``p``.  The empty set must map to exactly 0; this is checked here rather
    than silently corrected.
    """

    def __init__(self, ground_set_size: int, func: Callable[[np.ndarray], float]):
        if int(ground_set_size) != ground_set_size or ground_set_size < 1:
            raise ValueError("ground_set_size must be a positive integer")
        self.ground_set_size = int(ground_set_size)
        self._func = func
        empty = self._func(np.zeros(self.ground_set_size, dtype=bool))
        if empty != 0:
            raise ValueError(f"set function must vanish on the empty set, got {empty!r}")

    def evaluate(self, subset) -> float:
        s = np.asarray(subset)
        if s.shape != (self.ground_set_size,):
            raise ValueError(
                f"subset indicator must have shape ({self.ground_set_size},), got {s.shape}"
            )
        return float(self._func(s.astype(bool)))

    __call__ = evaluate

    @classmethod
    def modular(cls, weights):
        """``F(S) = sum of weights[i] for i in S``."""
        w = as_float_vector(weights, "weights")
        return cls(len(w), lambda s: float(w[s].sum()))

    @classmethod
    def hamming(cls, p: int):
        """Normalized Hamming distance ``|S| / p``."""
        return cls(p, lambda s: float(s.sum()) / p)

    def __repr__(self):
        return f"SetFunction(ground_set_size={self.ground_set_size})"


@dataclass(frozen=True)
class ExtensionResult:
    value: float
    gradient: np.ndarray


def decreasing_order(m) -> np.ndarray:
    """Stable permutation sorting ``m`` in decreasing order."""
    return sort_decreasing(m)[0]


def sort_decreasing(m):
    """``(order, m[order])`` for the stable decreasing order of ``m``.

    Without ties any sort gives the stable order, so the cheaper unstable
    argsort is tried first; numpy's indirect stable sort degrades badly with
    cache misses for large ``p``.
    """
    neg = -np.asarray(m, dtype=np.float64)
    order = np.argsort(neg)
    s = neg[order]
    if len(s) > 1 and np.any(s[1:] == s[:-1]):
        order = np.argsort(neg, kind="stable")
        s = neg[order]
    return order, -s


def inverse_permutation(order) -> np.ndarray:
    order = np.asarray(order)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return inv


def _check_point(setfn: SetFunction, m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 1 or len(m) != setfn.ground_set_size:
        raise ValueError(
            f"expected a vector of length {setfn.ground_set_size}, got shape {m.shape}"
        )
    if np.isnan(m).any():
        raise ValueError("m contains NaN")
    if not np.all(np.isfinite(m)):
        raise ValueError("m contains infinite values")
    return m


def lovasz_extension(setfn: SetFunction, m) -> ExtensionResult:
    """Evaluate the Lovász extension of ``setfn`` at ``m`` and its gradient.

    The gradient is the vector of marginal gains along the decreasing
    ordering of ``m``; it is constant on each linear piece and
    ``value == m @ gradient`` up to rounding.
    """
    m = _check_point(setfn, m)
    p = setfn.ground_set_size
    order = decreasing_order(m)
    subset = np.zeros(p, dtype=bool)
    prefix = np.empty(p)
    for i, idx in enumerate(order):
        subset[idx] = True
        prefix[i] = setfn.evaluate(subset)
    g_sorted = np.diff(prefix, prepend=0.0)
    gradient = np.empty(p)
    gradient[order] = g_sorted
    # summation by parts, so that vertices of the cube give F(S) exactly
    m_sorted = m[order]
    gaps = m_sorted - np.append(m_sorted[1:], 0.0)
    return ExtensionResult(float(np.dot(gaps, prefix)), gradient)


def threshold_oracle(setfn: SetFunction, m) -> float:
    """Lovász extension on the unit cube through its level-set integral.

    ``ext(m) = integral over theta in [0, 1] of F({i : m_i > theta})``, which is
    a finite sum over the intervals between consecutive distinct values of
    ``m``.  Independent of the sorting/marginal-gain route and used to check it.
    """
    m = _check_point(setfn, m)
    if m.min() < 0.0 or m.max() > 1.0:
        raise ValueError("threshold_oracle is only defined for m in [0, 1]^p")
    levels = np.unique(m)
    total = 0.0
    lower = 0.0
    for level in levels:
        if level <= 0.0:
            continue
        # on (lower, level) the super-level set is {m >= level}
        total += (level - lower) * setfn.evaluate(m >= level)
        lower = level
    return float(total)


def is_submodular(setfn: SetFunction, tol: float = 1e-12) -> bool:
    """Exhaustively check ``F(A) + F(B) >= F(A | B) + F(A & B)`` for all pairs."""
    p = setfn.ground_set_size
    if p > MAX_SUBMODULAR_CHECK_SIZE:
        raise ValueError(
            f"exhaustive submodularity check limited to ground sets of size "
            f"<= {MAX_SUBMODULAR_CHECK_SIZE} (4^p pairs); got p={p}"
        )
    n = 1 << p
    masks = np.arange(n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(p)) & 1).astype(bool)
    values = np.array([setfn.evaluate(b) for b in bits])
    for a in range(n):
        union = values[a | masks]
        inter = values[a & masks]
        if np.any(values[a] + values < union + inter - tol):
            return False
    return True
