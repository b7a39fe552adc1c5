"""Jaccard set function, its Lovász extension gradient, and loss layers.

Every loss returns a :class:`LossOutput` holding the scalar value and the
gradient with respect to the input it was given (scores for all layers
except :func:`rahman_wang_iou`, which takes probabilities).
"""

from dataclasses import dataclass

import numpy as np

from .submodular import ExtensionResult, SetFunction, lovasz_extension, sort_decreasing
from .validation import (
    as_binary_labels,
    as_float_matrix,
    as_float_vector,
    as_indicator,
    as_labels,
    check_same_length,
)

CE_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad: np.ndarray


def jaccard_set_function(delta) -> SetFunction:
    """Jaccard loss as a function of the misprediction set.

    ``M -> |M| / |{delta = 1} | M|``.  The empty set maps to 0 even when the
    foreground is empty.
    """
    fg = as_indicator(delta).astype(bool)

    def func(mis):
        n_mis = int(mis.sum())
        if n_mis == 0:
            return 0.0
        return n_mis / int((fg | mis).sum())

    return SetFunction(len(fg), func)


def _jaccard_sorted_losses(fg_sorted):
    """Jaccard loss of each prefix of an already sorted foreground."""
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    # (U - I) / U rather than 1 - I / U: exact ratio of integer counts
    return (union - intersection) / union


def _jaccard_sorted_gradient(fg_sorted):
    """Marginal gains of the Jaccard loss along an already sorted foreground."""
    g = _jaccard_sorted_losses(fg_sorted)
    if len(g) > 1:
        g[1:] = g[1:] - g[:-1]
    return g


def jaccard_grad(m, delta) -> ExtensionResult:
    """Lovász extension of the Jaccard loss and its gradient in O(p log p).

    One stable decreasing sort of the errors, then running counts of the
    foreground pixels removed from the intersection and the background
    pixels added to the union.
    """
    m = as_float_vector(m, "m")
    fg = as_indicator(delta)
    check_same_length(m, fg, ("m", "delta"))
    if len(m) == 0:
        raise ValueError("m must contain at least one entry")
    if m.min() < 0:
        raise ValueError("error vector entries must be nonnegative")
    order, m_sorted = sort_decreasing(m)
    cum = _jaccard_sorted_losses(fg[order])
    g_sorted = cum.copy()
    g_sorted[1:] -= cum[:-1]
    gradient = np.empty_like(g_sorted)
    gradient[order] = g_sorted
    # summation by parts over the gaps between sorted errors; at a vertex of
    # the cube a single gap is nonzero and the value is the set function
    gaps = m_sorted.copy()
    gaps[:-1] -= m_sorted[1:]
    return ExtensionResult(float(np.dot(gaps, cum)), gradient)


def hinge_margins(F, y):
    """Per-pixel hinge errors ``max(1 - F*y, 0)`` and ``d m / d F``.

    The derivative is ``-y`` where the margin is strictly positive and 0 where
    it is clamped.
    """
    F = as_float_vector(F, "F")
    y = as_binary_labels(y)
    check_same_length(F, y, ("F", "y"))
    raw = 1.0 - F * y
    m = np.maximum(raw, 0.0)
    dm_dF = np.where(raw > 0.0, -y, 0.0)
    return m, dm_dF


def lovasz_hinge(F, y, setfn: SetFunction = None) -> LossOutput:
    """Lovász hinge of binary scores ``F`` against labels ``y`` in {-1, +1}.

    By default the Jaccard loss of the foreground ``{y = +1}`` is extended.
    Passing ``setfn`` substitutes another set function on the pixels (e.g.
    :meth:`SetFunction.hamming`) and goes through the generic extension.
    """
    m, dm_dF = hinge_margins(F, y)
    if setfn is None:
        ext = jaccard_grad(m, as_binary_labels(y) > 0)
    else:
        ext = lovasz_extension(setfn, m)
    return LossOutput(ext.value, ext.gradient * dm_dF)


def hinge(F, y) -> LossOutput:
    """Mean per-pixel hinge loss."""
    m, dm_dF = hinge_margins(F, y)
    p = len(m)
    return LossOutput(float(m.mean()), dm_dF / p)


def softmax(F) -> np.ndarray:
    F = as_float_matrix(F, "F")
    z = F - F.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_errors(f, y, c) -> np.ndarray:
    """Errors of class ``c``: ``1 - f_i(c)`` on its pixels, ``f_i(c)`` elsewhere."""
    f = as_float_matrix(f, "f")
    y = as_labels(y, f.shape[1])
    check_same_length(f, y, ("f", "y"))
    if int(c) != c or not 0 <= c < f.shape[1]:
        raise ValueError(f"unknown class {c!r} for {f.shape[1]} classes")
    fg = y == c
    return np.where(fg, 1.0 - f[:, c], f[:, c])


def _softmax_backward(f, grad_f):
    """Chain ``dL/df`` through the row-wise softmax Jacobian."""
    return f * (grad_f - np.sum(grad_f * f, axis=1, keepdims=True))


def lovasz_softmax(F, y, classes="present") -> LossOutput:
    """Class-averaged Lovász extension of the Jaccard loss on softmax errors.

    Parameters
    ----------
    F : array of shape (p, C)
        Unnormalized scores.
    y : array of shape (p,)
        Integer labels in ``0..C-1``.
    classes : {"present", "all"}
        Average over the classes occurring in ``y`` or over all ``C`` classes.
    """
    F = as_float_matrix(F, "F")
    p, n_classes = F.shape
    if n_classes < 2:
        raise ValueError("lovasz_softmax needs at least two classes")
    y = as_labels(y, n_classes)
    check_same_length(F, y, ("F", "y"))
    if p == 0:
        raise ValueError("lovasz_softmax needs at least one pixel")
    if classes == "present":
        class_set = np.unique(y)
    elif classes == "all":
        class_set = np.arange(n_classes)
    else:
        raise ValueError(f"classes must be 'present' or 'all', got {classes!r}")

    f = softmax(F)
    grad_f = np.zeros_like(f)
    total = 0.0
    for c in class_set:
        fg = y == c
        errors = np.where(fg, 1.0 - f[:, c], f[:, c])
        ext = jaccard_grad(errors, fg)
        total += ext.value
        # d m_i / d f_i(c) is -1 on the class pixels, +1 elsewhere
        grad_f[:, c] = np.where(fg, -ext.gradient, ext.gradient)
    k = len(class_set)
    return LossOutput(total / k, _softmax_backward(f, grad_f / k))


def cross_entropy(F, y) -> LossOutput:
    """Mean negative log-likelihood of the softmax of ``F``."""
    F = as_float_matrix(F, "F")
    p, n_classes = F.shape
    y = as_labels(y, n_classes)
    check_same_length(F, y, ("F", "y"))
    f = softmax(F)
    picked = f[np.arange(p), y]
    value = -np.mean(np.log(np.maximum(picked, CE_PROB_FLOOR)))
    grad = f.copy()
    grad[np.arange(p), y] -= 1.0
    return LossOutput(float(value), grad / p)


def binary_cross_entropy(F, y) -> LossOutput:
    """Logistic loss of binary scores: two-class softmax over ``(0, F)``."""
    F = as_float_vector(F, "F")
    y = as_binary_labels(y)
    out = cross_entropy(np.column_stack([np.zeros_like(F), F]), (y > 0).astype(np.int64))
    return LossOutput(out.value, out.grad[:, 1])


def sigmoid(F):
    F = np.asarray(F, dtype=np.float64)
    out = np.empty_like(F)
    pos = F >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-F[pos]))
    e = np.exp(F[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def rahman_wang_iou(f, y) -> LossOutput:
    """IoU approximation of Rahman and Wang on foreground probabilities.

    ``I = sum f_i [y_i = 1]``, ``U = sum (f_i + [y_i = 1]) - I`` and the loss is
    ``1 - I / U``.  When ``U == 0`` (empty foreground, all-zero probabilities)
    the ratio is taken as 1 and the loss and gradient are 0.  The gradient is
    with respect to ``f``.
    """
    f = as_float_vector(f, "f")
    y = as_binary_labels(y)
    check_same_length(f, y, ("f", "y"))
    if f.size and (f.min() < 0.0 or f.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    t = (y > 0).astype(np.float64)
    inter = float(np.dot(f, t))
    union = float(f.sum() + t.sum()) - inter
    if union == 0.0:
        return LossOutput(0.0, np.zeros_like(f))
    grad = -(t * union - inter * (1.0 - t)) / union**2
    return LossOutput(1.0 - inter / union, grad)


def rahman_wang_scores(F, y) -> LossOutput:
    """:func:`rahman_wang_iou` applied to ``sigmoid(F)``; gradient w.r.t. ``F``."""
    F = as_float_vector(F, "F")
    f = sigmoid(F)
    out = rahman_wang_iou(f, y)
    return LossOutput(out.value, out.grad * f * (1.0 - f))
