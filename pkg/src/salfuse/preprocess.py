"""Image preparation: CIELab conversion, superpixel over-segmentation,
pixel/superpixel pooling, and histogram thresholding.

Everything downstream works on per-superpixel vectors, so this module owns
the pixel-level representation and the only two crossings between the two
worlds (``pool`` and ``unpool``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, InputError

# sRGB -> XYZ under D65, 2-degree observer.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


@dataclass(frozen=True)
class LabImage:
    """CIELab raster with every channel rescaled to [0, 1].

    L is divided by 100; a and b are shifted by 128 and divided by 255, so
    Euclidean color distances live on a predictable unit scale.
    """

    lab: np.ndarray  # (H, W, 3) float64 in [0, 1]

    @property
    def height(self) -> int:
        return self.lab.shape[0]

    @property
    def width(self) -> int:
        return self.lab.shape[1]


@dataclass(frozen=True)
class SuperpixelGrid:
    """Over-segmentation of one image.

    labels assigns every pixel a superpixel id in {0..n-1}; mean_lab holds
    the per-superpixel mean rescaled-Lab triple; boundary flags superpixels
    touching the image border; edges lists adjacent superpixel pairs (i < j).
    """

    labels: np.ndarray  # (H, W) int32
    n_superpixels: int
    mean_lab: np.ndarray  # (N, 3) float64
    boundary: np.ndarray  # (N,) bool
    edges: np.ndarray  # (E, 2) int32, i < j, lexicographically sorted
    pixel_counts: np.ndarray  # (N,) int64

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def to_lab(rgb: np.ndarray) -> LabImage:
    """Convert an 8-bit RGB raster to a rescaled-[0, 1] CIELab image."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"expected (H, W, 3) RGB raster, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InputError("zero-size image")

    srgb = arr.astype(np.float64) / 255.0
    linear = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _D65_WHITE

    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta**2) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lum = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)

    lab = np.stack([lum / 100.0, (a + 128.0) / 255.0, (b + 128.0) / 255.0], axis=-1)
    return LabImage(lab=np.clip(lab, 0.0, 1.0))


def slic_segment(
    lab: LabImage,
    n_target: int,
    compactness: float = 10.0,
    iters: int = 10,
) -> SuperpixelGrid:
    """Over-segment into roughly ``n_target`` superpixels.

    Grid-seeded local k-means in (color, position) space: seeds start at the
    centers of a near-square grid of cells, pixels are assigned to the best
    seed within a 2-step window, and seeds move to their cluster means for a
    fixed number of iterations.  A connectivity pass then absorbs stray
    fragments into the largest adjacent superpixel, so every superpixel is
    4-connected.  Fully deterministic: no randomness anywhere.
    """
    h, w = lab.height, lab.width
    n_pixels = h * w
    if n_target < 2 or n_target > n_pixels:
        raise ConfigError(f"n_target must be in [2, {n_pixels}], got {n_target}")

    gx, gy = _seed_grid(w, h, n_target)
    n_seeds = gx * gy
    step = math.sqrt(n_pixels / n_seeds)
    ratio = compactness / step
    reach = max(1, int(math.ceil(2.0 * step)))

    cell_w, cell_h = w / gx, h / gy
    seed_x = np.floor((np.arange(gx) + 0.5) * cell_w).astype(np.int64)
    seed_y = np.floor((np.arange(gy) + 0.5) * cell_h).astype(np.int64)
    cy, cx = [g.ravel() for g in np.meshgrid(seed_y, seed_x, indexing="ij")]

    img = lab.lab
    centers_color = img[cy, cx].copy()
    centers_y = cy.astype(np.float64)
    centers_x = cx.astype(np.float64)

    yy, xx = np.mgrid[0:h, 0:w]
    labels = np.full((h, w), -1, dtype=np.int64)

    for _ in range(iters):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for k in range(n_seeds):
            y0 = max(0, int(centers_y[k]) - reach)
            y1 = min(h, int(centers_y[k]) + reach + 1)
            x0 = max(0, int(centers_x[k]) - reach)
            x1 = min(w, int(centers_x[k]) + reach + 1)
            window = img[y0:y1, x0:x1]
            dc2 = np.sum((window - centers_color[k]) ** 2, axis=-1)
            ds2 = (yy[y0:y1, x0:x1] - centers_y[k]) ** 2 + (
                xx[y0:y1, x0:x1] - centers_x[k]
            ) ** 2
            d = dc2 + ratio * ratio * ds2
            closer = d < best[y0:y1, x0:x1]
            best[y0:y1, x0:x1][closer] = d[closer]
            labels[y0:y1, x0:x1][closer] = k

        unassigned = labels < 0
        if unassigned.any():
            uy, ux = np.nonzero(unassigned)
            spatial = (uy[:, None] - centers_y[None, :]) ** 2 + (
                ux[:, None] - centers_x[None, :]
            ) ** 2
            labels[uy, ux] = np.argmin(spatial, axis=1)

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n_seeds).astype(np.float64)
        occupied = counts > 0
        sum_y = np.bincount(flat, weights=yy.ravel(), minlength=n_seeds)
        sum_x = np.bincount(flat, weights=xx.ravel(), minlength=n_seeds)
        centers_y[occupied] = sum_y[occupied] / counts[occupied]
        centers_x[occupied] = sum_x[occupied] / counts[occupied]
        for c in range(3):
            sum_c = np.bincount(flat, weights=img[..., c].ravel(), minlength=n_seeds)
            centers_color[occupied, c] = sum_c[occupied] / counts[occupied]

    labels = _enforce_connectivity(labels)
    return _build_grid(labels, img)


def _seed_grid(w: int, h: int, n_target: int) -> tuple[int, int]:
    """Pick the seed grid closest to the target count with near-square
    cells; ties prefer wider grids for determinism."""
    best = None
    for gy in range(1, min(h, n_target) + 1):
        gx = min(w, max(1, round(n_target / gy)))
        count_err = abs(gx * gy - n_target)
        squareness = abs(math.log((w / gx) / (h / gy)))
        key = (count_err, squareness, -gx)
        if best is None or key < best[0]:
            best = (key, gx, gy)
    return best[1], best[2]


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Absorb disconnected fragments into the largest adjacent superpixel.

    Repeats until every label is one connected component: chained merges
    within a pass can leave a fragment whose neighbors all share its own
    label, which the next pass (with freshly recomputed components) fixes.
    Each absorption strictly reduces the component count, so this
    terminates.
    """
    out = labels.copy()
    while True:
        n_comp, comp, comp_label, comp_sizes = _label_components(out)

        keeper: dict[int, int] = {}
        for c in range(n_comp):
            lbl = int(comp_label[c])
            best = keeper.get(lbl)
            if best is None or comp_sizes[c] > comp_sizes[best]:
                keeper[lbl] = c
        orphans = [c for c in range(n_comp) if keeper[int(comp_label[c])] != c]
        if not orphans:
            break

        label_sizes = np.bincount(out.ravel(), minlength=int(out.max()) + 1)
        for c in orphans:
            mask = comp == c
            neighbor_labels = _adjacent_labels(out, mask)
            neighbor_labels = neighbor_labels[neighbor_labels != comp_label[c]]
            if neighbor_labels.size == 0:
                continue  # merged with own label earlier this pass; next pass
            sizes = label_sizes[neighbor_labels]
            order = np.lexsort((neighbor_labels, -sizes))
            target = int(neighbor_labels[order[0]])
            n_moved = int(mask.sum())
            label_sizes[int(comp_label[c])] -= n_moved
            label_sizes[target] += n_moved
            out[mask] = target

    # Compact ids in row-major first-occurrence order.
    flat = out.ravel()
    uniq, first = np.unique(flat, return_index=True)
    order = np.argsort(first)
    remap = np.empty(int(uniq.max()) + 1, dtype=np.int32)
    remap[uniq[order]] = np.arange(uniq.size, dtype=np.int32)
    return remap[flat].reshape(out.shape)


def _label_components(labels: np.ndarray):
    """Connected components of equal-label regions (4-neighborhood)."""
    h, w = labels.shape
    idx = np.arange(h * w).reshape(h, w)
    same_right = labels[:, :-1] == labels[:, 1:]
    same_down = labels[:-1, :] == labels[1:, :]
    rows = np.concatenate([idx[:, :-1][same_right], idx[:-1, :][same_down]])
    cols = np.concatenate([idx[:, 1:][same_right], idx[1:, :][same_down]])
    graph = coo_matrix(
        (np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(h * w, h * w)
    )
    n_comp, comp = connected_components(graph.tocsr(), directed=False)
    flat_labels = labels.ravel()
    comp_sizes = np.bincount(comp, minlength=n_comp)
    first_pixel = np.full(n_comp, -1, dtype=np.int64)
    uniq, first = np.unique(comp, return_index=True)
    first_pixel[uniq] = first
    comp_label = flat_labels[first_pixel]
    return n_comp, comp.reshape(h, w), comp_label, comp_sizes


def _adjacent_labels(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Distinct labels 4-adjacent to ``mask`` but outside it."""
    found = []
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        neighbor_mask = np.roll(mask, shift, axis=axis)
        if axis == 0:
            if shift == 1:
                neighbor_mask[0, :] = False
            else:
                neighbor_mask[-1, :] = False
        else:
            if shift == 1:
                neighbor_mask[:, 0] = False
            else:
                neighbor_mask[:, -1] = False
        sel = neighbor_mask & ~mask
        if sel.any():
            found.append(labels[sel])
    if not found:
        return np.empty(0, dtype=labels.dtype)
    return np.unique(np.concatenate(found))


def _build_grid(labels: np.ndarray, img: np.ndarray) -> SuperpixelGrid:
    h, w = labels.shape
    flat = labels.ravel()
    n = int(flat.max()) + 1
    counts = np.bincount(flat, minlength=n)

    mean_lab = np.empty((n, 3))
    for c in range(3):
        mean_lab[:, c] = (
            np.bincount(flat, weights=img[..., c].ravel(), minlength=n) / counts
        )

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
    edges = np.unique(pairs, axis=0).astype(np.int32) if pairs.size else np.empty(
        (0, 2), dtype=np.int32
    )

    return SuperpixelGrid(
        labels=labels.astype(np.int32),
        n_superpixels=n,
        mean_lab=mean_lab,
        boundary=boundary,
        edges=edges,
        pixel_counts=counts.astype(np.int64),
    )


def pool(pixel_map: np.ndarray, grid: SuperpixelGrid) -> np.ndarray:
    """Mean pixel value per superpixel.

    A superpixel whose pixels all carry one value pools to exactly that
    value, so pooling inverts ``unpool`` without rounding error.
    """
    arr = np.asarray(pixel_map, dtype=np.float64)
    if arr.shape != grid.shape:
        raise InputError(
            f"raster shape {arr.shape} does not match grid shape {grid.shape}"
        )
    flat = grid.labels.ravel()
    values = arr.ravel()
    sums = np.bincount(flat, weights=values, minlength=grid.n_superpixels)
    means = sums / grid.pixel_counts

    order = np.argsort(flat, kind="stable")
    sorted_vals = values[order]
    starts = np.searchsorted(flat[order], np.arange(grid.n_superpixels))
    lo = np.minimum.reduceat(sorted_vals, starts)
    hi = np.maximum.reduceat(sorted_vals, starts)
    constant = lo == hi
    means[constant] = lo[constant]
    return means


def unpool(vec: np.ndarray, grid: SuperpixelGrid) -> np.ndarray:
    """Paint each superpixel's value back onto its pixels."""
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (grid.n_superpixels,):
        raise InputError(
            f"vector length {v.shape} does not match {grid.n_superpixels} superpixels"
        )
    return v[grid.labels]


def otsu_threshold(vec: np.ndarray) -> float:
    """Threshold maximizing between-class variance on a 256-bin histogram.

    Ties resolve to the smallest qualifying threshold; the comparison is done
    in exact integer arithmetic so the argmax is platform-independent.  A
    vector whose values all fall into one bin has no valid split and yields
    its minimum value, under which every entry binarizes to 1.
    """
    v = np.asarray(vec, dtype=np.float64)
    if v.size == 0:
        raise InputError("cannot threshold an empty vector")

    bins = np.minimum((v * 256.0).astype(np.int64), 255)
    bins = np.maximum(bins, 0)
    counts = np.bincount(bins, minlength=256)
    cum_n = np.cumsum(counts)
    cum_s = np.cumsum(counts * np.arange(256, dtype=np.int64))
    total_n = int(cum_n[-1])
    total_s = int(cum_s[-1])

    best_k = -1
    best_num = -1  # python ints: exact cross-multiplied comparisons
    best_den = 1
    for k in range(1, 256):
        n0 = int(cum_n[k - 1])
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        s0 = int(cum_s[k - 1])
        a = (total_s - s0) * n0 - s0 * n1
        num = a * a
        den = n0 * n1
        if best_k < 0 or num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den

    if best_k < 0:
        return float(v.min())
    return best_k / 256.0


def binarize(vec: np.ndarray, gamma: float) -> np.ndarray:
    """Foreground where the value reaches the threshold (>= convention)."""
    return np.asarray(vec) >= gamma


def minmax_normalize(vec: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; a constant vector carries no signal and maps to 0."""
    v = np.asarray(vec, dtype=np.float64)
    lo = v.min()
    hi = v.max()
    if hi <= lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)
