"""IoU metrics: per-class Jaccard index, Dice, image- and dataset-mIoU.

Absent classes follow the ``0/0 = 1`` convention.  Dataset-level numbers are
computed from pooled integer counts, so streaming accumulation is exact and
order independent.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .validation import as_labels, check_same_length


def _masks(gt, pred, c):
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    check_same_length(gt, pred, ("gt", "pred"))
    return gt == c, pred == c


def jaccard_index(gt, pred, c) -> float:
    """``|{gt=c} & {pred=c}| / |{gt=c} | {pred=c}|``, 1 when both are empty."""
    a, b = _masks(gt, pred, c)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def dice(gt, pred, c) -> float:
    """``2|A & B| / (|A| + |B|)`` (equivalently ``2J / (1 + J)``), 1 when both are empty."""
    a, b = _masks(gt, pred, c)
    total = int(np.count_nonzero(a) + np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2 * np.count_nonzero(a & b) / total


@dataclass(frozen=True)
class IoUReport:
    per_class_iou: dict
    mean_iou: float
    intersection: dict = field(default_factory=dict)
    union: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        """``class,intersection,union,iou`` rows, then ``mean,,,<miou>``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "intersection", "union", "iou"])
        for c, iou in self.per_class_iou.items():
            w.writerow([c, self.intersection.get(c, ""), self.union.get(c, ""), f"{iou:.6f}"])
        w.writerow(["mean", "", "", f"{self.mean_iou:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "IoUReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["class", "intersection", "union", "iou"]:
            raise ValueError("not an IoU report: bad header")
        if rows[-1][0] != "mean":
            raise ValueError("not an IoU report: missing mean row")
        per_class, inter, union = {}, {}, {}
        for name, i, u, iou in rows[1:-1]:
            key = int(name) if name.lstrip("-").isdigit() else name
            per_class[key] = float(iou)
            if i != "":
                inter[key] = int(i)
            if u != "":
                union[key] = int(u)
        return cls(per_class, float(rows[-1][3]), inter, union)


class ConfusionAccumulator:
    """Running per-class intersection and union counts over images.

    Parameters
    ----------
    n_classes : int
        Labels are ``0 .. n_classes - 1``.
    """

    def __init__(self, n_classes: int):
        if n_classes < 1:
            raise ValueError("n_classes must be positive")
        self.n_classes = int(n_classes)
        self.intersection = np.zeros(self.n_classes, dtype=np.int64)
        self.union = np.zeros(self.n_classes, dtype=np.int64)
        self.images_seen = 0

    def accumulate(self, gt, pred):
        """Add one image; returns ``self`` so calls can be chained."""
        gt = as_labels(np.asarray(gt).ravel(), self.n_classes, "gt")
        pred = as_labels(np.asarray(pred).ravel(), self.n_classes, "pred")
        check_same_length(gt, pred, ("gt", "pred"))
        k = self.n_classes
        conf = np.bincount(k * gt + pred, minlength=k * k).reshape(k, k)
        tp = np.diag(conf)
        self.intersection += tp
        self.union += conf.sum(axis=0) + conf.sum(axis=1) - tp
        self.images_seen += 1
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge accumulators over different class sets")
        out = ConfusionAccumulator(self.n_classes)
        out.intersection = self.intersection + other.intersection
        out.union = self.union + other.union
        out.images_seen = self.images_seen + other.images_seen
        return out

    def report(self) -> IoUReport:
        return dataset_miou(self)


def accumulate(acc: ConfusionAccumulator, gt, pred) -> ConfusionAccumulator:
    return acc.accumulate(gt, pred)


def dataset_miou(acc: ConfusionAccumulator) -> IoUReport:
    """Per-class IoU from pooled counts, averaged over all declared classes."""
    per_class, inter, union = {}, {}, {}
    for c in range(acc.n_classes):
        i, u = int(acc.intersection[c]), int(acc.union[c])
        per_class[c] = 1.0 if u == 0 else i / u
        inter[c], union[c] = i, u
    return IoUReport(per_class, float(np.mean(list(per_class.values()))), inter, union)


def image_iou_per_class(gt_images, pred_images, class_set) -> np.ndarray:
    """Array ``(n_images, len(class_set))`` of per-image Jaccard indices."""
    if len(gt_images) == 0:
        raise ValueError("need at least one image")
    check_same_length(gt_images, pred_images, ("gt_images", "pred_images"))
    return np.array(
        [[jaccard_index(g, p, c) for c in class_set] for g, p in zip(gt_images, pred_images)]
    )


def image_miou(gt_images, pred_images, class_set) -> float:
    """Mean over images of the per-image mean IoU over ``class_set``."""
    return float(image_iou_per_class(gt_images, pred_images, class_set).mean())
