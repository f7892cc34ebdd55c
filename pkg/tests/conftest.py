"""Shared test setup.

BLAS thread pools are pinned to one thread before numpy loads anywhere in
the test process, so timing-sensitive checks measure single-threaded work.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from salfuse.preprocess import SuperpixelGrid  # noqa: E402


def grid_from_labels(labels, mean_lab=None) -> SuperpixelGrid:
    """Build a SuperpixelGrid directly from a label raster.

    Feature vectors default to zeros; pass mean_lab to control colors.
    Useful for hand-crafted fixtures where segmentation is beside the point.
    """
    labels = np.asarray(labels, dtype=np.int32)
    n = int(labels.max()) + 1
    counts = np.bincount(labels.ravel(), minlength=n).astype(np.int64)
    if mean_lab is None:
        mean_lab = np.zeros((n, 3))
    else:
        mean_lab = np.asarray(mean_lab, dtype=np.float64)

    boundary = np.zeros(n, dtype=bool)
    for border in (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]):
        boundary[np.unique(border)] = True

    pairs = np.concatenate(
        [
            np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1),
            np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1),
        ]
    )
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    edges = (
        np.unique(pairs, axis=0).astype(np.int32)
        if pairs.size
        else np.empty((0, 2), dtype=np.int32)
    )
    return SuperpixelGrid(
        labels=labels,
        n_superpixels=n,
        mean_lab=mean_lab,
        boundary=boundary,
        edges=edges,
        pixel_counts=counts,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
