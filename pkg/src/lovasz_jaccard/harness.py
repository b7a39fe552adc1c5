"""Synthetic segmentation data, bias sweeps, training runs and metric probes.

All randomness flows from ``numpy.random.SeedSequence(seed)``; per-image
streams are spawned from it so that images can be generated in any order.
"""

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import losses
from .estimator import LinearPixelSegmenter
from .metrics import ConfusionAccumulator, IoUReport, image_iou_per_class
from .sampling import equibatch_sampler  # noqa: F401  re-exported

BIAS_LOSSES = ("lovasz_hinge", "hinge", "cross_entropy", "rahman_wang", "jaccard")


def default_bias_grid():
    return np.round(np.arange(-300, 301) * 0.01, 2)


@dataclass
class SyntheticConfig:
    n_images: int = 10
    height: int = 50
    width: int = 50
    feature_mean_gap: float = 0.5
    noise_std: float = 1.0
    seed: int = 0
    bias_grid: np.ndarray = field(default_factory=default_bias_grid)

    def __post_init__(self):
        if self.n_images < 1 or self.height < 1 or self.width < 1:
            raise ValueError("image count and dimensions must be positive")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        grid = np.asarray(self.bias_grid, dtype=np.float64)
        if grid.size == 0 or np.any(np.diff(grid) < 0):
            raise ValueError("bias_grid must be nonempty and sorted")
        self.bias_grid = grid


def _disk(rng, h, w):
    radius = rng.uniform(0.1, 0.4) * min(h, w)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= radius**2


def generate_circles(cfg: SyntheticConfig):
    """Binary disk masks and one noisy feature per pixel.

    Returns ``(masks, features)``: lists of ``(height, width)`` arrays; masks
    hold 0/1 labels and features are ``+eps`` on the disk, ``-eps`` off it,
    plus Gaussian noise of scale ``noise_std``.
    """
    masks, features = [], []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.n_images):
        rng = np.random.default_rng(child)
        disk = _disk(rng, cfg.height, cfg.width)
        noise = rng.standard_normal((cfg.height, cfg.width))
        masks.append(disk.astype(np.int64))
        features.append(np.where(disk, cfg.feature_mean_gap, -cfg.feature_mean_gap)
                        + cfg.noise_std * noise)
    return masks, features


def generate_multiclass(cfg: SyntheticConfig, class_frequency=(1.0, 0.2)):
    """Background plus one disk per foreground class, drawn with the given frequencies.

    Class ``k + 1`` appears in an image with probability ``class_frequency[k]``
    (later classes paint over earlier ones).  Features have one channel per
    class: ``+eps`` on the channel of the true class, ``-eps`` on the others,
    plus noise.  Returns ``(masks, features)`` with features of shape
    ``(height, width, n_classes)``.
    """
    n_classes = len(class_frequency) + 1
    masks, features = [], []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.n_images):
        rng = np.random.default_rng(child)
        mask = np.zeros((cfg.height, cfg.width), dtype=np.int64)
        for k, freq in enumerate(class_frequency):
            # always consume the draws so images stay aligned across frequencies
            present = rng.random() < freq
            disk = _disk(rng, cfg.height, cfg.width)
            if present:
                mask[disk] = k + 1
        onehot = np.eye(n_classes)[mask]
        noise = rng.standard_normal((cfg.height, cfg.width, n_classes))
        masks.append(mask)
        features.append(cfg.feature_mean_gap * (2 * onehot - 1) + cfg.noise_std * noise)
    return masks, features


# -- bias sweep ---------------------------------------------------------------


def _discrete_jaccard_loss(gt, pred):
    union = np.count_nonzero(gt | pred)
    return 0.0 if union == 0 else 1.0 - np.count_nonzero(gt & pred) / union


def worker_count() -> int:
    """Worker cap from ``LSV_THREADS`` (default 1)."""
    raw = os.environ.get("LSV_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"LSV_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"LSV_THREADS must be a positive integer, got {raw!r}")
    return n


def _sweep_image(name, f, gt, grid):
    y = np.where(gt, 1.0, -1.0)
    out = np.empty(len(grid))
    for j, b in enumerate(grid):
        F = f + b
        if name == "lovasz_hinge":
            out[j] = losses.lovasz_hinge(F, y).value
        elif name == "hinge":
            out[j] = losses.hinge(F, y).value
        elif name == "cross_entropy":
            out[j] = losses.binary_cross_entropy(F, y).value
        elif name == "rahman_wang":
            out[j] = losses.rahman_wang_scores(F, y).value
        else:
            out[j] = _discrete_jaccard_loss(gt, F > 0)
    return out


def bias_sweep(masks, features, losses_=("lovasz_hinge", "hinge", "cross_entropy", "jaccard"),
               bias_grid=None):
    """Loss of the thresholding classifier ``F = f + b`` for every ``b``.

    Each loss is computed per image and averaged over images; ``jaccard`` is
    the discrete loss ``1 - IoU`` of the foreground under ``F > 0``.  Images
    are processed by up to ``LSV_THREADS`` workers; the reduction order is
    fixed, so the result does not depend on the worker count.  Returns a list
    of ``(loss, bias, value)`` rows.
    """
    grid = default_bias_grid() if bias_grid is None else np.asarray(bias_grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("bias grid is empty")
    for name in losses_:
        if name not in BIAS_LOSSES:
            raise ValueError(f"unknown loss {name!r}; choose from {BIAS_LOSSES}")
    if len(masks) == 0 or len(masks) != len(features):
        raise ValueError("need aligned, nonempty masks and features")
    flat = [(np.asarray(f, dtype=np.float64).ravel(), np.asarray(m).ravel() > 0)
            for m, f in zip(masks, features)]
    rows = []
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        for name in losses_:
            per_image = list(pool.map(lambda fg: _sweep_image(name, fg[0], fg[1], grid), flat))
            values = np.mean(per_image, axis=0)
            rows.extend((name, float(b), float(v)) for b, v in zip(grid, values))
    return rows


def sweep_argmin(rows, loss):
    """Bias minimizing ``loss`` in a sweep table (first one on ties)."""
    sel = [(v, b) for name, b, v in rows if name == loss]
    if not sel:
        raise KeyError(loss)
    vals = np.array([v for v, _ in sel])
    return sel[int(np.argmin(vals))][1]


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["loss", "bias", "value"])
    for name, b, v in rows:
        w.writerow([name, repr(float(b)), repr(float(v))])
    return buf.getvalue()


def sweep_from_csv(text: str):
    reader = csv.reader(io.StringIO(text))
    if next(reader) != ["loss", "bias", "value"]:
        raise ValueError("not a bias sweep table")
    return [(name, float(b), float(v)) for name, b, v in reader]


# -- training -------------------------------------------------------------------


@dataclass
class TrainConfig:
    loss_kind: str = "lovasz_hinge"
    optimizer: str = "momentum"
    batch_size: int = 1
    epochs: int = 20
    lr: float = 0.05
    lr_power: float = 0.9
    momentum: float = 0.9
    equibatch: bool = False
    per_image: bool = True
    prox_lambda: float = 10.0
    eval_interval: int = 50
    seed: int = 0
    fixed_coef: float = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")

    def estimator(self) -> LinearPixelSegmenter:
        return LinearPixelSegmenter(
            loss=self.loss_kind, optimizer=self.optimizer, lr=self.lr,
            lr_power=self.lr_power, momentum=self.momentum, n_epochs=self.epochs,
            batch_size=self.batch_size, per_image=self.per_image,
            equibatch=self.equibatch, prox_lambda=self.prox_lambda,
            eval_interval=self.eval_interval, random_state=self.seed,
            fixed_coef=self.fixed_coef,
        )


@dataclass
class ExperimentResult:
    records: list
    report: IoUReport
    image_iou: np.ndarray = None  # per-class validation IoU averaged over images
    model: LinearPixelSegmenter = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "image_miou", "dataset_miou"])
        for step, loss, im, ds in self.records:
            w.writerow([int(step), repr(float(loss)), repr(float(im)), repr(float(ds))])
        return buf.getvalue()

    @staticmethod
    def records_from_csv(text: str):
        reader = csv.reader(io.StringIO(text))
        if next(reader) != ["step", "loss", "image_miou", "dataset_miou"]:
            raise ValueError("not an experiment log")
        return [(int(s), float(l), float(i), float(d)) for s, l, i, d in reader]


def to_pixels(masks, features):
    """Stack images into ``(X, y, groups)`` pixel rows."""
    X, y, groups = [], [], []
    for i, (m, f) in enumerate(zip(masks, features)):
        f = np.asarray(f, dtype=np.float64)
        n = np.asarray(m).size
        X.append(f.reshape(n, -1))
        y.append(np.asarray(m).ravel())
        groups.append(np.full(n, i))
    return np.vstack(X), np.concatenate(y), np.concatenate(groups)


def train_val_split(masks, features, val_fraction=0.2):
    """Last ``val_fraction`` of the images (at least one) go to validation."""
    n = len(masks)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise ValueError("need at least two images to split")
    k = n - n_val
    return (masks[:k], features[:k]), (masks[k:], features[k:])


def train_linear(data, cfg: TrainConfig) -> ExperimentResult:
    """Fit a per-pixel linear model on ``data = (masks, features)``.

    Validation uses the last 20% of the images.  Metrics are logged every
    ``cfg.eval_interval`` steps and after the final step.
    """
    masks, features = data
    if len(masks) != len(features):
        raise ValueError("masks and features are not aligned")
    (tm, tf), (vm, vf) = train_val_split(masks, features)
    X, y, g = to_pixels(tm, tf)
    Xv, yv, gv = to_pixels(vm, vf)
    model = cfg.estimator().fit(X, y, groups=g, eval_set=(Xv, yv, gv))
    pred = model.predict(Xv)
    n_classes = max(len(model.classes_), int(yv.max()) + 1)
    acc = ConfusionAccumulator(n_classes)
    gts, preds = [], []
    for i in np.unique(gv):
        gts.append(yv[gv == i])
        preds.append(pred[gv == i])
        acc.accumulate(gts[-1], preds[-1])
    per_image = image_iou_per_class(gts, preds, range(n_classes))
    return ExperimentResult(model.history_, acc.report(), per_image.mean(axis=0), model)


# -- absent-class probe ------------------------------------------------------------


def _pooled_iou(gt_images, pred_images, c):
    inter = union = 0
    for g, p in zip(gt_images, pred_images):
        a, b = np.asarray(g) == c, np.asarray(p) == c
        inter += int(np.count_nonzero(a & b))
        union += int(np.count_nonzero(a | b))
    return Fraction(1) if union == 0 else Fraction(inter, union)


def _image_iou(g, p, c):
    a, b = np.asarray(g) == c, np.asarray(p) == c
    union = int(np.count_nonzero(a | b))
    return Fraction(1) if union == 0 else Fraction(int(np.count_nonzero(a & b)), union)


@dataclass(frozen=True)
class ProbeReport:
    image_iou_before: Fraction
    image_iou_after: Fraction
    dataset_iou_before: Fraction
    dataset_iou_after: Fraction
    total_pixels: int

    @property
    def image_delta(self):
        return self.image_iou_after - self.image_iou_before

    @property
    def dataset_delta(self):
        return self.dataset_iou_after - self.dataset_iou_before


def absent_class_probe(gt_images, pred_images, image, c, pixels=((0, 0),)):
    """Effect on class ``c`` of predicting it at ``pixels`` of one image.

    Class ``c`` must be absent from the ground truth of that image.  The
    class-``c`` IoU of that image and the pooled dataset IoU of ``c`` are
    compared before and after, with exact rational arithmetic.
    """
    gt = np.asarray(gt_images[image])
    if np.any(gt == c):
        raise ValueError(f"class {c} is present in the ground truth of image {image}")
    after = [np.array(p, copy=True) for p in pred_images]
    for px in pixels:
        after[image][tuple(px)] = c
    total = sum(np.asarray(g).size for g in gt_images)
    return ProbeReport(
        _image_iou(gt, pred_images[image], c),
        _image_iou(gt, after[image], c),
        _pooled_iou(gt_images, pred_images, c),
        _pooled_iou(gt_images, after, c),
        total,
    )


def exact_mious(gt_images, pred_images, classes):
    """``(image_miou, dataset_miou)`` as exact fractions over ``classes``."""
    if len(gt_images) == 0 or len(gt_images) != len(pred_images):
        raise ValueError("need aligned, nonempty image lists")
    classes = list(classes)
    per_image = [sum(_image_iou(g, p, c) for c in classes) / len(classes)
                 for g, p in zip(gt_images, pred_images)]
    image = sum(per_image) / len(per_image)
    dataset = sum(_pooled_iou(gt_images, pred_images, c) for c in classes) / len(classes)
    return image, dataset


def divergence_witness():
    """Two images and two predictors ranked oppositely by image- and dataset-mIoU.

    Image 0 is pure background; image 1 holds a 50-pixel foreground.
    Predictor A is exact on image 0 and misses 10 foreground pixels of
    image 1.  Predictor B is exact on image 1 but paints one false
    foreground pixel on image 0, which costs a whole class there.
    Returns ``(gt_images, pred_a, pred_b)`` of 10x10 label masks.
    """
    g0 = np.zeros((10, 10), dtype=np.int64)
    g1 = np.zeros((10, 10), dtype=np.int64)
    g1[:5] = 1
    a0, a1 = g0.copy(), g1.copy()
    a1[4] = 0
    b0, b1 = g0.copy(), g1.copy()
    b0[9, 9] = 1
    return [g0, g1], [a0, a1], [b0, b1]
