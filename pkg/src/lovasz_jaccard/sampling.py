"""Class-cycling ("equibatch") sampling of training images."""

import numpy as np


def equibatch_sampler(class_index, seed):
    """Endless stream of ``(class, sample_id)`` pairs cycling over classes.

    The class order is a seed-dependent permutation that repeats unchanged,
    so every window of ``len(class_index)`` consecutive emissions contains
    each class exactly once; reshuffling per cycle would break that for
    windows straddling two cycles.  Within a class the sample is drawn
    uniformly.
    """
    classes = list(class_index)
    if not classes:
        raise ValueError("need at least one class")
    for c in classes:
        if len(class_index[c]) == 0:
            raise ValueError(f"class {c!r} has no samples")
    pools = {c: list(class_index[c]) for c in classes}
    rng = np.random.default_rng(seed)
    cycle = [classes[i] for i in rng.permutation(len(classes))]
    return _cycle(cycle, pools, rng)


def _cycle(cycle, pools, rng):
    while True:
        for c in cycle:
            pool = pools[c]
            yield c, pool[int(rng.integers(len(pool)))]
