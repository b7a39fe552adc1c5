"""Per-pixel linear classifier trained with any of the loss layers.

Pixels are rows of ``X``; ``groups`` tells which image each pixel belongs
to, so that image-level losses (the Lovász family, Rahman-Wang) are computed
per image and averaged over the images of a minibatch.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import losses
from .sampling import equibatch_sampler
from .metrics import ConfusionAccumulator, image_miou
from .optim import LRSchedule, OptimizerState, ProxConfig, momentum_step, poly_lr, prox_hinge_direction

BINARY_LOSSES = ("cross_entropy", "hinge", "lovasz_hinge", "rahman_wang")
MULTICLASS_LOSSES = ("cross_entropy", "lovasz_softmax_all", "lovasz_softmax_present")
LOSSES = BINARY_LOSSES + MULTICLASS_LOSSES[1:]
OPTIMIZERS = ("sgd", "momentum", "prox")


class TrainingDiverged(RuntimeError):
    def __init__(self, step):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


def split_groups(groups):
    """Map each image id to the row indices of its pixels (sorted by id)."""
    groups = np.asarray(groups)
    ids, inverse = np.unique(groups, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.cumsum(np.bincount(inverse, minlength=len(ids)))[:-1]
    return ids, np.split(order, bounds)


def _image_loss(kind, F, y):
    """Loss value and ``dL/dF`` for one image.

    Binary losses take a score vector and labels in {-1, +1}; the softmax
    losses take a (p, C) score matrix and integer labels.
    """
    if kind == "lovasz_hinge":
        out = losses.lovasz_hinge(F, y)
    elif kind == "hinge":
        out = losses.hinge(F, y)
    elif kind == "rahman_wang":
        out = losses.rahman_wang_scores(F, y)
    elif kind == "cross_entropy":
        out = losses.binary_cross_entropy(F, y) if F.ndim == 1 else losses.cross_entropy(F, y)
    elif kind == "lovasz_softmax_all":
        out = losses.lovasz_softmax(F, y, classes="all")
    elif kind == "lovasz_softmax_present":
        out = losses.lovasz_softmax(F, y, classes="present")
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return out.value, out.grad


class LinearPixelSegmenter(ClassifierMixin, BaseEstimator):
    """Linear scores ``F = X @ coef_ + intercept_`` trained by minibatch descent.

    Parameters
    ----------
    loss : str
        One of ``cross_entropy``, ``hinge``, ``lovasz_hinge``, ``rahman_wang``
        (binary problems) or ``cross_entropy``, ``lovasz_softmax_all``,
        ``lovasz_softmax_present``.
    optimizer : {"sgd", "momentum", "prox"}
        ``prox`` replaces the Lovász hinge gradient by the prox direction and
        is only valid with ``loss="lovasz_hinge"``.
    lr : float
        Base learning rate of the poly schedule.
    lr_power : float
        Exponent of the poly schedule.
    momentum : float
        Heavy-ball coefficient for ``momentum`` and ``prox``.
    n_epochs : int
        Passes over the training images.
    batch_size : int
        Images per minibatch.
    per_image : bool
        Compute the loss per image and average; otherwise pool the batch.
    equibatch : bool
        Draw images by cycling over classes instead of shuffling.
    prox_lambda : float
        Regularization of the proximal operator.
    eval_interval : int
        Evaluate ``eval_set`` every this many steps.
    random_state : int
        Seed for minibatch order.
    fixed_coef : float or None
        If set, the weights are frozen at this value and only the intercepts
        are learned (the thresholding classifier ``coef * f + b > 0``).
    """

    def __init__(
        self,
        loss="lovasz_hinge",
        optimizer="momentum",
        lr=0.05,
        lr_power=0.9,
        momentum=0.9,
        n_epochs=20,
        batch_size=1,
        per_image=True,
        equibatch=False,
        prox_lambda=10.0,
        eval_interval=50,
        random_state=0,
        fixed_coef=None,
    ):
        self.loss = loss
        self.optimizer = optimizer
        self.lr = lr
        self.lr_power = lr_power
        self.momentum = momentum
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.per_image = per_image
        self.equibatch = equibatch
        self.prox_lambda = prox_lambda
        self.eval_interval = eval_interval
        self.random_state = random_state
        self.fixed_coef = fixed_coef

    def _check_params(self, n_classes):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        allowed = BINARY_LOSSES if n_classes == 2 else MULTICLASS_LOSSES
        if self.loss == "lovasz_softmax_all" or self.loss == "lovasz_softmax_present":
            allowed = MULTICLASS_LOSSES
        if self.loss not in allowed:
            raise ValueError(f"loss {self.loss!r} not available for {n_classes} classes")
        if self.optimizer == "prox" and self.loss != "lovasz_hinge":
            raise ValueError("the prox optimizer requires loss='lovasz_hinge'")
        if self.batch_size < 1 or self.n_epochs < 1:
            raise ValueError("batch_size and n_epochs must be at least 1")

    def _binary_head(self):
        return len(self.classes_) == 2 and self.loss in BINARY_LOSSES

    def _scores(self, X, theta):
        W = theta[:-self._n_out].reshape(X.shape[1], self._n_out)
        F = X @ W + theta[-self._n_out:]
        return F[:, 0] if self._binary_head() else F

    def _encode(self, y_idx):
        return np.where(y_idx == 1, 1.0, -1.0) if self._binary_head() else y_idx

    def fit(self, X, y, groups=None, eval_set=None):
        """Train on pixel rows ``X`` with labels ``y``.

        ``eval_set`` is an optional ``(X, y, groups)`` triple evaluated every
        ``eval_interval`` steps; records land in ``history_``.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to fit")
        self._check_params(len(self.classes_))
        y_idx = np.searchsorted(self.classes_, y)
        groups = np.zeros(len(y), dtype=np.int64) if groups is None else np.asarray(groups)
        _, images = split_groups(groups)
        n_features = X.shape[1]
        self.n_features_in_ = n_features
        self._n_out = 1 if self._binary_head() else len(self.classes_)
        design = np.hstack([X, np.ones((len(X), 1))])
        target = self._encode(y_idx)

        rng = np.random.default_rng(self.random_state)
        n_batches = max(1, int(np.ceil(len(images) / self.batch_size)))
        total_steps = self.n_epochs * n_batches
        sched = LRSchedule(self.lr, total_steps, self.lr_power)
        if self.equibatch:
            class_index = {}
            for i, rows in enumerate(images):
                for c in np.unique(y_idx[rows]):
                    class_index.setdefault(int(c), []).append(i)
            stream = equibatch_sampler(class_index, rng.integers(2**63))
        theta = np.zeros((n_features + 1) * self._n_out)
        free = np.ones_like(theta)
        if self.fixed_coef is not None:
            theta[: -self._n_out] = self.fixed_coef
            free[: -self._n_out] = 0.0
        state = OptimizerState.zeros_like(theta)
        alpha = 0.0 if self.optimizer == "sgd" else self.momentum
        prox_cfg = ProxConfig(self.prox_lambda) if self.optimizer == "prox" else None
        self.history_ = []

        step = 0
        for _ in range(self.n_epochs):
            if self.equibatch:
                picks = [next(stream)[1] for _ in range(n_batches * self.batch_size)]
            else:
                picks = list(rng.permutation(len(images)))
            for b in range(n_batches):
                batch = picks[b * self.batch_size : (b + 1) * self.batch_size]
                if not batch:
                    continue
                parts = [images[i] for i in batch]
                if not self.per_image:
                    parts = [np.concatenate(parts)]
                grad = np.zeros_like(theta)
                value = 0.0
                for rows in parts:
                    value_i, grad_i = self._part_loss(design[rows], target[rows], theta, prox_cfg)
                    value += value_i / len(parts)
                    grad += grad_i / len(parts)
                grad *= free
                if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                    raise TrainingDiverged(step)
                delta, state = momentum_step(state, grad, poly_lr(sched, step), alpha)
                theta = theta + delta
                step += 1
                if eval_set is not None and (step % self.eval_interval == 0 or step == total_steps):
                    self.theta_ = theta
                    self.history_.append((step, value) + self._evaluate(*eval_set))
        self.theta_ = theta
        self.n_steps_ = step
        W = theta[:-self._n_out].reshape(n_features, self._n_out)
        self.coef_ = W[:, 0] if self._n_out == 1 else W
        self.intercept_ = theta[-self._n_out:]
        return self

    def _part_loss(self, design, target, theta, prox_cfg):
        W = theta[:-self._n_out].reshape(design.shape[1] - 1, self._n_out)
        F = design[:, :-1] @ W + theta[-self._n_out:]
        if self._n_out == 1:
            F = F[:, 0]
        if prox_cfg is not None:
            value, dF = prox_hinge_direction(F, target, prox_cfg)
        else:
            value, dF = _image_loss(self.loss, F, target)
        dF = dF.reshape(len(design), self._n_out)
        gW = design[:, :-1].T @ dF
        gb = dF.sum(axis=0)
        return value, np.concatenate([gW.ravel(), gb])

    def _evaluate(self, X, y, groups=None):
        pred = self.predict(X)
        y = np.asarray(y)
        groups = np.zeros(len(y), dtype=np.int64) if groups is None else np.asarray(groups)
        _, images = split_groups(groups)
        gts = [np.searchsorted(self.classes_, y[r]) for r in images]
        preds = [np.searchsorted(self.classes_, pred[r]) for r in images]
        k = len(self.classes_)
        acc = ConfusionAccumulator(k)
        for g, p in zip(gts, preds):
            acc.accumulate(g, p)
        return image_miou(gts, preds, range(k)), acc.report().mean_iou

    def decision_function(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self._scores(X, self.theta_)

    def predict(self, X):
        F = self.decision_function(X)
        if F.ndim == 1:
            return self.classes_[(F > 0).astype(np.int64)]
        return self.classes_[np.argmax(F, axis=1)]

    def predict_proba(self, X):
        F = self.decision_function(X)
        if F.ndim == 1:
            p1 = losses.sigmoid(F)
            return np.column_stack([1.0 - p1, p1])
        return losses.softmax(F)

    def score(self, X, y, groups=None):
        """Image-mIoU of the predictions, images given by ``groups``."""
        check_is_fitted(self, "theta_")
        return self._evaluate(X, y, groups)[0]
