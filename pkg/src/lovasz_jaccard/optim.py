"""First-order optimizers: poly schedule, momentum, and proximal steps.

The proximal operator of the Lovász hinge is computed on the margin vector
``r = 1 - F*y`` (before clamping), for ``f(u) = ext_J(max(u, 0))``:

    prox(r0) = argmin_u  f(u) + lam/2 * ||u - r0||^2

It first follows a greedy path in sorted space.  Coordinates move along the
negative piece gradient; tied coordinates are kept tied (their gradients are
averaged) and a coordinate that reaches zero stays there.  Between events
the path is a straight segment, and it stops once the quadratic term balances
the linear decrease, which happens at total path "time" ``1 / lam``.

The path never reorders coordinates, so it misses the prox when the optimum
lets a foreground margin drop below a background one.  Its end point is
therefore certified: the Jaccard loss is monotone, so ``f`` is the support
function of its polymatroid ``P`` and ``u`` is the prox exactly when
``s = lam * (r0 - u)`` lies in ``P`` and attains ``f(u) = s . u``.  Membership
is decided exactly in O(p^2) because the loss depends only on the numbers of
foreground and background mistakes.  When the certificate fails, the prox is
recomputed as ``r0 - proj_P(lam * r0) / lam`` with Wolfe's minimum-norm-point
algorithm.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .losses import _jaccard_sorted_gradient, jaccard_grad
from .submodular import sort_decreasing
from .validation import as_binary_labels, as_float_vector, as_indicator, check_same_length


# -- learning-rate schedule ------------------------------------------------


@dataclass(frozen=True)
class LRSchedule:
    lr_base: float
    max_iter: int
    power: float = 0.9

    def __post_init__(self):
        if self.lr_base <= 0:
            raise ValueError("lr_base must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if self.power <= 0:
            raise ValueError("power must be positive")

    def __call__(self, k):
        return poly_lr(self, k)


def poly_lr(sched: LRSchedule, k: int) -> float:
    """``lr_base * (1 - k / max_iter) ** power`` for ``0 <= k <= max_iter``."""
    if not 0 <= k <= sched.max_iter:
        raise ValueError(f"iteration {k} outside [0, {sched.max_iter}]")
    return sched.lr_base * (1.0 - k / sched.max_iter) ** sched.power


# -- momentum ----------------------------------------------------------------


@dataclass
class OptimizerState:
    velocity: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(np.asarray(params, dtype=np.float64)))


def momentum_step(state: OptimizerState, grad, eta: float, alpha: float):
    """One heavy-ball update.

    ``v <- alpha * v + grad`` and the parameter change is ``-eta * v``.
    Returns ``(delta, new_state)``; ``state`` is left untouched.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.velocity.shape:
        raise ValueError(
            f"gradient shape {grad.shape} does not match velocity {state.velocity.shape}"
        )
    v = alpha * state.velocity + grad
    return -eta * v, OptimizerState(v, state.step_count + 1)


# -- prox of the Lovász hinge ------------------------------------------------


@dataclass(frozen=True)
class ProxConfig:
    lam: float
    max_pieces: Optional[int] = None  # None -> 2p + 1
    tol: float = 1e-12
    max_iter: Optional[int] = None  # minimum-norm-point iterations, None -> 100 (p + 1)
    certificate_tol: float = 1e-9

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.certificate_tol > 0:
            raise ValueError("certificate_tol must be positive")


class ProxNotConverged(RuntimeError):
    """Raised when the path needs more than ``max_pieces`` edges, or the
    minimum-norm-point fallback more than ``max_iter`` iterations."""

    def __init__(self, message, iterate):
        super().__init__(message)
        self.iterate = iterate


@dataclass
class ProxResult:
    point: np.ndarray
    n_edges: int
    path: list = field(default_factory=list)
    method: str = "path"  # or "min_norm_point" when the path was not certified


def _prox_objective(u, r0, fg, lam):
    return jaccard_grad(np.maximum(u, 0.0), fg).value + 0.5 * lam * np.sum((u - r0) ** 2)


def _prox_path(r0, fg, cfg: ProxConfig, return_path):
    """Greedy edge-following path; returns ``(point, n_edges, path)``."""
    p = len(r0)
    max_pieces = 2 * p + 1 if cfg.max_pieces is None else cfg.max_pieces

    order, v0 = sort_decreasing(r0)
    v0 = v0.copy()
    g = _jaccard_sorted_gradient(fg[order])

    # groups of tied, still-positive coordinates, in sorted order
    sizes, values, gsums = [], [], []
    i = 0
    while i < p and v0[i] > 0:
        j = i
        while j + 1 < p and v0[j + 1] == v0[i]:
            j += 1
        sizes.append(j - i + 1)
        values.append(v0[i])
        gsums.append(g[i : j + 1].sum())
        i = j + 1
    n_pos = i  # coordinates [n_pos:] are zero-constrained and never move
    sizes = np.array(sizes, dtype=np.float64)
    values = np.array(values, dtype=np.float64)
    gsums = np.array(gsums, dtype=np.float64)

    def current():
        v = v0.copy()
        v[:n_pos] = np.repeat(values, sizes.astype(np.int64))
        out = np.empty(p)
        out[order] = v
        return out

    path = [current()] if return_path else []
    elapsed = 0.0
    budget = 1.0 / cfg.lam
    n_edges = 0
    while len(values):
        rates = gsums / sizes
        if np.all(np.abs(rates) <= cfg.tol):
            break
        remaining = budget - elapsed
        # time until adjacent groups meet, and until the last one reaches zero
        closing = rates[:-1] - rates[1:]
        gaps = values[:-1] - values[1:]
        t_merge = np.full(len(closing), np.inf)
        moving = closing > cfg.tol
        t_merge[moving] = gaps[moving] / closing[moving]
        t_zero = values[-1] / rates[-1] if rates[-1] > cfg.tol else np.inf
        k = int(np.argmin(t_merge)) if len(t_merge) else -1
        t_edge = min(t_merge[k] if k >= 0 else np.inf, t_zero)
        if remaining <= t_edge:
            values = values - remaining * rates
            elapsed = budget
            break
        if n_edges >= max_pieces:
            raise ProxNotConverged(
                f"prox path did not finish within {max_pieces} edges", current()
            )
        values = values - t_edge * rates
        elapsed += t_edge
        n_edges += 1
        if k >= 0 and t_merge[k] <= t_zero:
            sizes[k] += sizes[k + 1]
            gsums[k] += gsums[k + 1]
            sizes = np.delete(sizes, k + 1)
            gsums = np.delete(gsums, k + 1)
            values = np.delete(values, k + 1)
        else:
            last = int(sizes[-1])
            n_pos -= last
            v0[n_pos : n_pos + last] = 0.0
            sizes, gsums, values = sizes[:-1], gsums[:-1], values[:-1]
        if return_path:
            path.append(current())

    point = current()
    if return_path:
        path.append(point)
    return point, n_edges, path


def _jaccard_count_losses(n_fg, n_bg):
    """Jaccard loss of a mistake set with ``a`` foreground and ``b`` background pixels."""
    a = np.arange(n_fg + 1, dtype=np.float64)[:, None]
    b = np.arange(n_bg + 1, dtype=np.float64)[None, :]
    union = n_fg + b
    with np.errstate(invalid="ignore"):
        out = (a + b) / union
    out[0, 0] = 0.0
    return out


def in_jaccard_polymatroid(s, fg, tol=1e-9) -> bool:
    """Whether ``s >= 0`` and ``s(A) <= Jaccard loss of A`` for every set ``A``.

    The loss depends only on the counts of foreground and background pixels
    in ``A``, and for fixed counts ``s(A)`` is largest on the top entries of
    each part, so all ``(n_fg + 1) (n_bg + 1)`` count pairs are checked.
    """
    s = np.asarray(s, dtype=np.float64)
    fg = np.asarray(fg, dtype=bool)
    if np.any(s < -tol):
        return False
    top_fg = np.concatenate([[0.0], np.cumsum(np.sort(s[fg])[::-1])])
    top_bg = np.concatenate([[0.0], np.cumsum(np.sort(s[~fg])[::-1])])
    slack = _jaccard_count_losses(len(top_fg) - 1, len(top_bg) - 1)
    slack -= top_fg[:, None] + top_bg[None, :]
    return bool(slack.min() >= -tol)


def _is_prox(u, r0, fg, lam, tol):
    # optimality of the prox: lam (r0 - u) is a subgradient of f at u
    s = lam * (r0 - u)
    f = jaccard_grad(np.maximum(u, 0.0), fg).value
    return in_jaccard_polymatroid(s, fg, tol) and float(s @ u) >= f - tol


def _polymatroid_vertex(w, fg):
    """Vertex of the Jaccard polymatroid maximizing ``w . s``."""
    order, w_sorted = sort_decreasing(w)
    k = int(np.count_nonzero(w_sorted > 0))
    s = np.zeros(len(w))
    s[order[:k]] = _jaccard_sorted_gradient(fg[order])[:k]
    return s


def _affine_minimizer(S):
    # weights summing to one that minimize ||weights @ S||
    k = len(S)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = S @ S.T
    kkt[:k, k] = kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    return np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]


def project_jaccard_polymatroid(z, fg, tol=1e-12, max_iter=None):
    """Euclidean projection of ``z`` onto the Jaccard polymatroid.

    Wolfe's minimum-norm-point algorithm on the shifted vertex set, with the
    greedy vertex as linear oracle.

    Raises
    ------
    ProxNotConverged
        If ``max_iter`` major iterations do not reach the stopping rule.
    """
    z = np.asarray(z, dtype=np.float64)
    fg = np.asarray(fg, dtype=bool)
    max_iter = 100 * (len(z) + 1) if max_iter is None else max_iter
    S = (_polymatroid_vertex(z, fg) - z)[None, :]
    weights = np.ones(1)
    x = S[0].copy()
    for _ in range(max_iter):
        q = _polymatroid_vertex(-x, fg) - z
        if x @ x - x @ q <= tol * max(1.0, x @ x):
            return x + z
        S = np.vstack([S, q])
        weights = np.append(weights, 0.0)
        while True:
            alpha = _affine_minimizer(S)
            if np.all(alpha > tol):
                weights = alpha
                break
            low = alpha <= tol
            theta = min(1.0, float(np.min(weights[low] / (weights[low] - alpha[low]))))
            weights = theta * alpha + (1.0 - theta) * weights
            keep = weights > tol
            if not keep[-1] and keep[:-1].sum() == len(keep) - 1:
                # the new vertex was dropped at once: no progress is possible
                return weights[:-1] @ S[:-1] / weights[:-1].sum() + z
            S, weights = S[keep], weights[keep] / weights[keep].sum()
        x = weights @ S
    raise ProxNotConverged(f"minimum-norm point not found in {max_iter} iterations", x + z)


def prox_lovasz_hinge(r0, delta, cfg: ProxConfig, return_path=False):
    """Proximal point of the Lovász hinge (Jaccard loss) at margins ``r0``.

    Parameters
    ----------
    r0 : array of shape (p,)
        Margins ``1 - F*y``; negative entries lie in the flat region.
    delta : array of shape (p,)
        Foreground indicator.
    cfg : ProxConfig

    Returns
    -------
    ndarray, or :class:`ProxResult` with the visited vertices of the path
    when ``return_path`` is true.  If the path end point fails the
    optimality certificate, the exact prox is appended as a last vertex and
    ``method`` is ``"min_norm_point"``.

    Raises
    ------
    ProxNotConverged
        If more than ``cfg.max_pieces`` edges are crossed, or the fallback
        does not converge within ``cfg.max_iter`` iterations.
    """
    r0 = as_float_vector(r0, "r0")
    fg = as_indicator(delta)
    check_same_length(r0, fg, ("r0", "delta"))
    point, n_edges, path = _prox_path(r0, fg, cfg, return_path)
    method = "path"
    if not _is_prox(point, r0, fg, cfg.lam, cfg.certificate_tol):
        z = cfg.lam * r0
        s = project_jaccard_polymatroid(z, fg, cfg.tol, cfg.max_iter)
        # exact projections onto a down-closed set obey 0 <= s <= max(z, 0)
        s = np.clip(s, 0.0, np.maximum(z, 0.0))
        point = r0 - s / cfg.lam
        method = "min_norm_point"
        if return_path:
            path.append(point)
    if return_path:
        return ProxResult(point, n_edges, path, method)
    return point


def prox_hinge_direction(F, y, cfg: ProxConfig):
    """Loss-layer direction ``lam * (r - prox(r))`` chained to the scores.

    Inside a linear piece this equals the Lovász hinge gradient.  Returns
    ``(lovasz_hinge_value, d_direction/dF)``.
    """
    F = as_float_vector(F, "F")
    y = as_binary_labels(y)
    check_same_length(F, y, ("F", "y"))
    r = 1.0 - F * y
    fg = y > 0
    prox = prox_lovasz_hinge(r, fg, cfg)
    value = jaccard_grad(np.maximum(r, 0.0), fg).value
    return value, cfg.lam * (r - prox) * (-y)


def prox_gradient_step(theta, design, y, lr: float, cfg: ProxConfig):
    """One step of the linear model ``F = design @ theta`` along the prox direction."""
    theta = np.asarray(theta, dtype=np.float64)
    design = np.asarray(design, dtype=np.float64)
    _, dF = prox_hinge_direction(design @ theta, y, cfg)
    return theta - lr * (design.T @ dF)


# -- piecewise-linear toy problem -------------------------------------------


def _toy_pieces(nu):
    # rows in tie-break priority order: 0, nu*x1, x2
    return np.array([[0.0, 0.0], [nu, 0.0], [0.0, 1.0]])


def toy_piecewise_objective(x, nu: float):
    """``max(0, nu*x1, x2)`` and the gradient of the active piece."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    x = np.asarray(x, dtype=np.float64)
    A = _toy_pieces(nu)
    vals = A @ x
    k = int(np.argmax(vals))
    return float(vals[k]), A[k].copy()


def prox_max_affine(x0, A, b, lam: float):
    """Exact prox of ``u -> max_k (A[k] @ u + b[k])`` by active-set enumeration.

    Only meant for a handful of pieces; every subset of pieces is tried as the
    active set and the one satisfying the optimality conditions is returned.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, d = A.shape
    best, best_obj = None, np.inf
    for size in range(1, n + 1):
        for S in combinations(range(n), size):
            S = list(S)
            AS = A[S]
            # unknowns: mu (|S|) and level t; u = x0 - AS.T @ mu / lam
            M = np.zeros((size + 1, size + 1))
            rhs = np.zeros(size + 1)
            M[:size, :size] = -(AS @ AS.T) / lam
            M[:size, size] = -1.0
            rhs[:size] = -(AS @ x0 + b[S])
            M[size, :size] = 1.0
            rhs[size] = 1.0
            sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
            mu, t = sol[:size], sol[size]
            if np.any(mu < -1e-12) or not np.allclose(M @ sol, rhs, atol=1e-10):
                continue
            u = x0 - AS.T @ mu / lam
            if np.any(A @ u + b > t + 1e-10):
                continue
            obj = np.max(A @ u + b) + 0.5 * lam * np.sum((u - x0) ** 2)
            if obj < best_obj - 1e-15:
                best, best_obj = u, obj
    return best


def toy_prox(x, nu: float, lam: float):
    return prox_max_affine(x, _toy_pieces(nu), np.zeros(3), lam)


def toy_trajectory(method: str, x0, nu: float, eta: float, alpha: float = 0.9, steps: int = 50):
    """Iterates of ``gd``, ``momentum`` or ``prox`` on the toy objective.

    Returns an array of rows ``(step, objective, x1, x2)`` starting at step 0.
    The prox method uses ``lam = 1 / eta`` so that its steps match gradient
    descent inside a linear piece.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    state = OptimizerState.zeros_like(x)
    rows = [(0, toy_piecewise_objective(x, nu)[0], x[0], x[1])]
    for step in range(1, steps + 1):
        _, g = toy_piecewise_objective(x, nu)
        if method == "gd":
            x = x - eta * g
        elif method == "momentum":
            delta, state = momentum_step(state, g, eta, alpha)
            x = x + delta
        elif method == "prox":
            x = toy_prox(x, nu, 1.0 / eta)
        else:
            raise ValueError(f"unknown method {method!r}")
        rows.append((step, toy_piecewise_objective(x, nu)[0], x[0], x[1]))
    return np.array(rows, dtype=np.float64).reshape(-1, 4)
