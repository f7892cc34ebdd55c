"""Reference generation: external knowledge, candidate consensus, and
graph propagation.

The reference map starts from evidence that is independent of any single
candidate: a boundary-prior color model (or a user-supplied knowledge map),
gated by the candidates' majority vote, then diffused over a geodesic
affinity graph so sparse consensus spreads to the whole image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import InputError
from .preprocess import SuperpixelGrid, minmax_normalize, pool


@dataclass(frozen=True)
class AffinityGraph:
    """Dense pairwise structure over superpixels.

    geodesic holds shortest-path distances where each hop costs the color
    gap beyond the adaptive threshold; weights is the Gaussian affinity
    exp(-g^2 / (2 theta^2)) including the unit diagonal.
    """

    geodesic: np.ndarray  # (N, N) float64, symmetric, zero diagonal
    weights: np.ndarray  # (N, N) float64 in (0, 1]
    degrees: np.ndarray  # (N,) float64, row sums of weights
    threshold: float  # adaptive edge-cost offset
    theta: float


@dataclass(frozen=True)
class KnowledgeBundle:
    """The four vectors feeding fusion, plus where the knowledge came from."""

    s_ext: np.ndarray
    s_maj: np.ndarray
    s_con: np.ndarray
    s_ref: np.ndarray
    source: str  # "boundary" or "file"


def boundary_knowledge(grid: SuperpixelGrid, k: int, seed: int = 0) -> np.ndarray:
    """Saliency evidence from the boundary prior.

    Border superpixels are clustered into k color groups; a superpixel's raw
    score is its mean color distance to the members of its most similar
    group, so regions resembling no border group score high.  Min-max
    normalized to [0, 1].
    """
    return minmax_normalize(_boundary_scores(grid, k, seed))


def _boundary_scores(grid: SuperpixelGrid, k: int, seed: int = 0) -> np.ndarray:
    if k < 1:
        raise InputError("cluster count must be >= 1")
    boundary_ids = np.nonzero(grid.boundary)[0]
    if boundary_ids.size == 0:
        raise InputError("grid has no boundary superpixels")

    k_eff = min(k, boundary_ids.size)
    seeds_lab = grid.mean_lab[boundary_ids]
    assignment = _kmeans(seeds_lab, k_eff, seed)

    scores = np.full(grid.n_superpixels, np.inf)
    for cluster in range(k_eff):
        members = seeds_lab[assignment == cluster]
        if members.size == 0:
            continue
        # Mean distance to cluster members, not distance to the centroid.
        dists = np.linalg.norm(
            grid.mean_lab[:, None, :] - members[None, :, :], axis=2
        ).mean(axis=1)
        scores = np.minimum(scores, dists)
    return scores


def _kmeans(points: np.ndarray, k: int, seed: int, iters: int = 100) -> np.ndarray:
    """Seeded k-means++ / Lloyd returning the assignment vector."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]

    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[j:] = points[rng.integers(n, size=k - j)]
            break
        probs = closest / total
        centers[j] = points[rng.choice(n, p=probs)]
        closest = np.minimum(closest, np.sum((points - centers[j]) ** 2, axis=1))

    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assignment = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = points[assignment == j]
            if members.shape[0] > 0:
                new_centers[j] = members.mean(axis=0)
            else:
                # Revive an empty cluster at the farthest point.
                new_centers[j] = points[np.argmax(d2.min(axis=1))]
        shift = np.max(np.linalg.norm(new_centers - centers, axis=1))
        centers = new_centers
        if shift < 1e-6:
            break
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def load_external_map(pixel_map: np.ndarray, grid: SuperpixelGrid) -> np.ndarray:
    """Pool a file-supplied knowledge raster to superpixels and normalize."""
    arr = np.asarray(pixel_map, dtype=np.float64)
    if arr.shape != grid.shape:
        raise InputError(
            f"knowledge map shape {arr.shape} does not match image shape {grid.shape}"
        )
    return minmax_normalize(pool(arr, grid))


def majority_vote(binary_maps: np.ndarray) -> np.ndarray:
    """1 where strictly more than half of the candidates vote foreground."""
    maps = np.asarray(binary_maps, dtype=np.float64)
    if maps.ndim != 2 or maps.shape[0] < 1:
        raise InputError("expected a (P, N) stack of binary maps with P >= 1")
    p = maps.shape[0]
    return (maps.sum(axis=0) > p / 2.0).astype(np.float64)


def consensus(s_ext: np.ndarray, s_maj: np.ndarray) -> np.ndarray:
    """Elementwise product: salient only where knowledge and majority agree."""
    a = np.asarray(s_ext, dtype=np.float64)
    b = np.asarray(s_maj, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError("consensus inputs must have equal length")
    return a * b


def build_affinity(
    grid: SuperpixelGrid,
    theta: float = 0.25,
    adaptive_threshold: float | None = None,
) -> AffinityGraph:
    """All-pairs geodesic distances and Gaussian affinities over the grid.

    Each adjacency edge costs max(color_distance - a, 0) where a defaults to
    the mean adjacent color distance; geodesic distance is the shortest-path
    sum of those costs.  Disconnected adjacency (possible only on synthetic
    grids) is bridged through the closest-color cross-component pair.
    """
    n = grid.n_superpixels
    edges = grid.edges
    if edges.shape[0] == 0 and n > 1:
        edges = _bridge_all(grid, np.empty((0, 2), dtype=np.int64))

    color_dist = np.linalg.norm(
        grid.mean_lab[edges[:, 0]] - grid.mean_lab[edges[:, 1]], axis=1
    )
    if adaptive_threshold is None:
        adaptive_threshold = float(color_dist.mean()) if color_dist.size else 0.0

    edges, color_dist = _ensure_connected(grid, edges, color_dist)
    costs = np.maximum(color_dist - adaptive_threshold, 0.0)

    graph = coo_matrix((costs, (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    geodesic = dijkstra(graph, directed=False)
    geodesic = np.minimum(geodesic, geodesic.T)  # symmetry against fp drift
    np.fill_diagonal(geodesic, 0.0)

    weights = np.exp(-(geodesic**2) / (2.0 * theta * theta))
    degrees = weights.sum(axis=1)
    return AffinityGraph(
        geodesic=geodesic,
        weights=weights,
        degrees=degrees,
        threshold=float(adaptive_threshold),
        theta=float(theta),
    )


def _ensure_connected(
    grid: SuperpixelGrid, edges: np.ndarray, color_dist: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    n = grid.n_superpixels
    adj = coo_matrix(
        (np.ones(edges.shape[0]), (edges[:, 0], edges[:, 1])), shape=(n, n)
    ).tocsr()
    n_comp, comp = connected_components(adj, directed=False)
    while n_comp > 1:
        extra = _closest_cross_pair(grid.mean_lab, comp)
        edges = np.vstack([edges, [extra]])
        color_dist = np.append(
            color_dist,
            np.linalg.norm(grid.mean_lab[extra[0]] - grid.mean_lab[extra[1]]),
        )
        adj = coo_matrix(
            (np.ones(edges.shape[0]), (edges[:, 0], edges[:, 1])), shape=(n, n)
        ).tocsr()
        n_comp, comp = connected_components(adj, directed=False)
    return edges, color_dist


def _closest_cross_pair(mean_lab: np.ndarray, comp: np.ndarray) -> tuple[int, int]:
    root = comp == comp[0]
    inside = np.nonzero(root)[0]
    outside = np.nonzero(~root)[0]
    d = np.linalg.norm(mean_lab[inside][:, None, :] - mean_lab[outside][None, :, :],
                       axis=2)
    i, j = np.unravel_index(np.argmin(d), d.shape)
    a, b = int(inside[i]), int(outside[j])
    return (a, b) if a < b else (b, a)


def _bridge_all(grid: SuperpixelGrid, edges: np.ndarray) -> np.ndarray:
    # Edgeless grid: chain superpixels by nearest color, one bridge at a time.
    comp = np.arange(grid.n_superpixels)
    out = list(map(tuple, edges))
    while len(set(comp)) > 1:
        pair = _closest_cross_pair(grid.mean_lab, comp)
        out.append(pair)
        comp[comp == comp[pair[1]]] = comp[pair[0]]
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def propagate(
    vec: np.ndarray,
    graph: AffinityGraph,
    iters: int = 5,
    normalize: bool = True,
) -> np.ndarray:
    """Diffuse a vector with the row-stochastic affinity operator.

    Each iteration replaces every value with the affinity-weighted mean of
    all values, so the output range never leaves [min(vec), max(vec)].
    """
    if iters < 0:
        raise InputError("iteration count must be >= 0")
    transition = graph.weights / graph.degrees[:, None]
    out = np.asarray(vec, dtype=np.float64).copy()
    for _ in range(iters):
        out = transition @ out
    return minmax_normalize(out) if normalize else out


def build_knowledge(
    grid: SuperpixelGrid,
    binary_maps: np.ndarray,
    theta: float = 0.25,
    propagation_iters: int = 5,
    kmeans_clusters: int = 3,
    seed: int = 0,
    external_map: np.ndarray | None = None,
) -> KnowledgeBundle:
    """Assemble the full reference bundle for one image.

    When ``external_map`` is given it replaces the boundary prior as the
    knowledge source (pooled and normalized); otherwise knowledge comes from
    border color clustering.
    """
    if external_map is not None:
        s_ext = load_external_map(external_map, grid)
        source = "file"
    else:
        s_ext = boundary_knowledge(grid, kmeans_clusters, seed)
        source = "boundary"

    s_maj = majority_vote(binary_maps)
    s_con = consensus(s_ext, s_maj)
    graph = build_affinity(grid, theta)
    s_ref = propagate(s_con, graph, propagation_iters)
    return KnowledgeBundle(
        s_ext=s_ext, s_maj=s_maj, s_con=s_con, s_ref=s_ref, source=source
    )
