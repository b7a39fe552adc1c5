"""Finite-difference gradient checks and a self-contained property suite.

Gradient checks only use tie-free points: every pair of sorted errors, and
every hinge margin and the clamp at zero, are kept further apart than
``min_gap`` so that a finite-difference step never crosses a kink.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import losses
from .submodular import SetFunction, is_submodular, lovasz_extension, threshold_oracle

FD_STEP = 1e-6
GRADCHECK_LOSSES = ("lovasz_hinge", "lovasz_softmax", "cross_entropy", "hinge", "rahman_wang")


def _min_gap(values):
    s = np.sort(np.asarray(values, dtype=np.float64).ravel())
    return np.inf if len(s) < 2 else float(np.min(np.diff(s)))


def _binary_point(rng, p):
    F = rng.normal(scale=2.0, size=p)
    y = np.where(rng.random(p) < 0.5, 1.0, -1.0)
    return F, y


def _multiclass_point(rng, p, n_classes):
    F = rng.normal(scale=2.0, size=(p, n_classes))
    y = rng.integers(0, n_classes, size=p)
    return F, y


def _loss_fn(name, mode="present"):
    if name == "lovasz_hinge":
        return losses.lovasz_hinge
    if name == "hinge":
        return losses.hinge
    if name == "rahman_wang":
        return losses.rahman_wang_scores
    if name == "cross_entropy":
        return losses.cross_entropy
    if name == "lovasz_softmax":
        return lambda F, y: losses.lovasz_softmax(F, y, classes=mode)
    raise ValueError(f"unknown loss {name!r}; choose from {GRADCHECK_LOSSES}")


def is_tie_free(name, F, y, min_gap=1e-4) -> bool:
    """Whether no kink of ``name`` lies within ``min_gap`` of the point."""
    if name in ("lovasz_hinge", "hinge"):
        r = 1.0 - F * y
        # the clamp at zero counts as one more breakpoint
        return _min_gap(np.append(r, 0.0)) > min_gap
    if name == "lovasz_softmax":
        f = losses.softmax(F)
        return all(
            _min_gap(losses.softmax_errors(f, y, c)) > min_gap for c in range(F.shape[1])
        )
    return True


def sample_point(name, rng, p, n_classes=3, min_gap=1e-4, max_tries=1000):
    """Random ``(F, y)`` for ``name`` that passes :func:`is_tie_free`."""
    for _ in range(max_tries):
        if name in ("lovasz_softmax", "cross_entropy"):
            F, y = _multiclass_point(rng, p, n_classes)
        else:
            F, y = _binary_point(rng, p)
        if is_tie_free(name, F, y, min_gap):
            return F, y
    raise RuntimeError(f"no tie-free point found for {name} with p={p} after {max_tries} tries")


def numerical_gradient(fn, F, y, h=FD_STEP):
    """Central differences of ``fn(F, y).value`` with respect to ``F``."""
    F = np.asarray(F, dtype=np.float64)
    grad = np.empty_like(F)
    flat, gflat = F.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(F, y).value
        flat[i] = old - h
        down = fn(F, y).value
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def gradcheck(name, p, n_classes=3, trials=100, seed=0, h=FD_STEP):
    """Max absolute error between analytic and numerical gradients, per trial."""
    if p < 1:
        raise ValueError("p must be at least 1")
    if n_classes < 2:
        raise ValueError("need at least two classes")
    fn = _loss_fn(name)
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(trials):
        F, y = sample_point(name, rng, p, n_classes)
        analytic = fn(F, y).grad
        errors.append(float(np.max(np.abs(analytic - numerical_gradient(fn, F, y, h)))))
    return errors


def gradcheck_to_csv(errors) -> str:
    lines = ["trial,max_abs_err"]
    lines += [f"{i},{e!r}" for i, e in enumerate(errors)]
    return "\n".join(lines) + "\n"


def gradcheck_from_csv(text: str):
    lines = text.strip().splitlines()
    if not lines or lines[0] != "trial,max_abs_err":
        raise ValueError("not a gradcheck table")
    out = []
    for i, line in enumerate(lines[1:]):
        trial, err = line.split(",")
        if int(trial) != i:
            raise ValueError(f"trial index {trial} out of sequence")
        out.append(float(err))
    return out


# -- property suite ---------------------------------------------------------------


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _prop_oracles(rng, n):
    worst = 0.0
    for _ in range(n):
        p = int(rng.integers(1, 17))
        delta = rng.random(p) < 0.5
        m = rng.random(p)
        fast = losses.jaccard_grad(m, delta)
        setfn = losses.jaccard_set_function(delta)
        slow = lovasz_extension(setfn, m)
        worst = max(worst, abs(fast.value - slow.value),
                    float(np.max(np.abs(fast.gradient - slow.gradient))),
                    abs(fast.value - threshold_oracle(setfn, m)))
    return worst <= 1e-9, f"max deviation {worst:.3e}"


def _prop_submodular(rng, n):
    for _ in range(n):
        p = int(rng.integers(1, 7))
        if not is_submodular(losses.jaccard_set_function(rng.random(p) < 0.5)):
            return False, f"non-submodular Jaccard set function at p={p}"
    return True, f"{n} random foregrounds"


def _prop_vertices(rng, n):
    for _ in range(n):
        p = int(rng.integers(1, 11))
        delta = rng.random(p) < 0.5
        s = rng.random(p) < 0.5
        got = losses.jaccard_grad(s.astype(float), delta).value
        if got != losses.jaccard_set_function(delta)(s):
            return False, f"vertex mismatch at p={p}"
    return True, f"{n} random vertices"


def _prop_single_pixel(rng, n):
    F = rng.normal(scale=3.0, size=n)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    for f, t in zip(F, y):
        if losses.lovasz_hinge([f], [t]).value != max(0.0, 1.0 - f * t):
            return False, f"single-pixel mismatch at F={f!r}, y={t}"
    return True, f"{n} scores"


def _prop_hamming(rng, n):
    worst = 0.0
    for _ in range(n):
        p = int(rng.integers(1, 33))
        F, y = _binary_point(rng, p)
        got = losses.lovasz_hinge(F, y, SetFunction.hamming(p)).value
        worst = max(worst, abs(got - losses.hinge(F, y).value))
    return worst <= 1e-12, f"max deviation {worst:.3e}"


def _prop_homogeneous(rng, n):
    worst = 0.0
    for _ in range(n):
        p = int(rng.integers(1, 33))
        delta = rng.random(p) < 0.5
        m = rng.random(p)
        a = float(rng.uniform(0.1, 10.0))
        base = losses.jaccard_grad(m, delta).value
        worst = max(worst, abs(losses.jaccard_grad(a * m, delta).value - a * base))
    return worst <= 1e-9, f"max deviation {worst:.3e}"


PROPERTIES = {
    "oracle_equivalence": _prop_oracles,
    "submodularity": _prop_submodular,
    "vertex_interpolation": _prop_vertices,
    "single_pixel_hinge": _prop_single_pixel,
    "hamming_is_mean_hinge": _prop_hamming,
    "positive_homogeneity": _prop_homogeneous,
}


def run_properties(seed=0, n=200):
    """Run every property in :data:`PROPERTIES` with ``n`` random instances."""
    results = []
    for name, prop in PROPERTIES.items():
        rng = np.random.default_rng([seed, len(results)])
        start = time.perf_counter()
        passed, detail = prop(rng, n)
        results.append(PropertyResult(name, bool(passed), detail, time.perf_counter() - start))
    return results
