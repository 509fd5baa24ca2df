"""Spatial expert features: active-voxel masks, density clustering, contour
geometry, and white-matter/ventricle overlap counting."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, Delaunay, QhullError

from . import anatomy

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True)
class SpatialParams:
    # Fraction of the per-slice maximum used as the active-voxel cutoff.
    activation_threshold: float = 0.6
    eps: float = 1.5
    vmin: int = 3
    large_cluster_px: int = 135  # calibrated for 64x64 slices
    sobel_edge_threshold: float = 0.5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.vmin < 1:
            raise ValueError("vmin must be >= 1")
        if self.large_cluster_px < 1:
            raise ValueError("large_cluster_px must be >= 1")
        if not 0 < self.activation_threshold <= 1:
            raise ValueError("activation_threshold must be in (0, 1]")


def params_for_dims(height: int, width: int, **overrides) -> SpatialParams:
    """Default params with the large-cluster pixel threshold rescaled from its
    64x64 calibration to the given slice area."""
    scaled = max(8, round(135 * (height * width) / 4096))
    overrides.setdefault("large_cluster_px", scaled)
    return SpatialParams(**overrides)


@dataclass
class Cluster:
    voxels: np.ndarray  # (k, 2) int rows of (row, col)

    @property
    def size(self) -> int:
        return len(self.voxels)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        r, c = self.voxels[:, 0], self.voxels[:, 1]
        return int(r.min()), int(c.min()), int(r.max()), int(c.max())


@dataclass
class SliceClustering:
    clusters: list[Cluster]

    def __len__(self) -> int:
        return len(self.clusters)


@dataclass
class BrainGeometry:
    contours: list[np.ndarray]  # per contour: (k, 2) voxel coordinates
    white_matter: np.ndarray  # bool mask
    ventricles: np.ndarray  # bool mask

    @property
    def principal_contour(self) -> np.ndarray | None:
        if not self.contours:
            return None
        return max(self.contours, key=len)


# ---------------------------------------------------------------------------
# Active-voxel masks
# ---------------------------------------------------------------------------


def extract_brain_slices(ic, params: SpatialParams) -> list[np.ndarray]:
    """Binarized active-voxel masks, one per slice.

    The cutoff is activation_threshold * (maximum over the IC's whole slice
    stack): per-IC normalization keeps slices without activation empty
    instead of letting the relative threshold sink into the anatomy
    background.  An all-zero IC yields all-empty masks.
    """
    if not np.isfinite(ic.slices).all():
        raise ValueError(f"{ic.ic_id}: non-finite slice values")
    peak = float(ic.slices.max())
    if peak <= 0:
        return [np.zeros(sl.shape, dtype=bool) for sl in ic.slices]
    cutoff = params.activation_threshold * peak
    return [sl >= cutoff for sl in ic.slices]


# ---------------------------------------------------------------------------
# DBSCAN on voxel grids
# ---------------------------------------------------------------------------


def _stencil_offsets(eps: float) -> np.ndarray:
    """Integer offsets (dr, dc) within Euclidean distance eps, excluding (0,0)."""
    r = int(np.floor(eps))
    grid = np.mgrid[-r : r + 1, -r : r + 1].reshape(2, -1).T
    d2 = (grid**2).sum(axis=1)
    keep = (d2 <= eps * eps + 1e-12) & (d2 > 0)
    return grid[keep]


def dbscan_clusters(mask: np.ndarray, eps: float, vmin: int) -> SliceClustering:
    """Grid DBSCAN: core voxels have >= vmin active neighbors (self excluded)
    within eps; cores connect within eps; border voxels join the nearest
    core's cluster (ties: nearest, then lowest (row, col) core); everything
    else is disregarded.

    Output is deterministic and independent of voxel enumeration order:
    clusters are sorted by their minimal (row, col) voxel.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return SliceClustering(clusters=[])
    offsets = _stencil_offsets(eps)

    kernel_r = int(np.floor(eps))
    kernel = np.zeros((2 * kernel_r + 1, 2 * kernel_r + 1))
    kernel[offsets[:, 0] + kernel_r, offsets[:, 1] + kernel_r] = 1.0
    counts = ndimage.convolve(mask.astype(np.float64), kernel, mode="constant", cval=0.0)
    core = mask & (np.rint(counts).astype(int) >= vmin)
    if not core.any():
        return SliceClustering(clusters=[])

    # Connected components of core voxels under eps-adjacency. scipy's label
    # only accepts 3x3 structures; wider stencils fall back to BFS.
    if kernel_r == 1:
        structure = kernel.astype(bool)
        structure[1, 1] = True
        core_labels, n_clusters = ndimage.label(core, structure=structure)
    else:
        core_labels, n_clusters = _label_bfs(core, offsets)
    if n_clusters == 0:
        return SliceClustering(clusters=[])

    members: list[list[tuple[int, int]]] = [[] for _ in range(n_clusters)]
    core_rows, core_cols = np.nonzero(core)
    for r, c in zip(core_rows.tolist(), core_cols.tolist()):
        members[core_labels[r, c] - 1].append((r, c))

    # Border assignment: active non-core voxels adjacent to a core voxel.
    h, w = mask.shape
    border_rows, border_cols = np.nonzero(mask & ~core)
    for r, c in zip(border_rows.tolist(), border_cols.tolist()):
        best = None  # (distance, core_row, core_col, label)
        for dr, dc in offsets:
            nr, nc = r + int(dr), c + int(dc)
            if 0 <= nr < h and 0 <= nc < w and core[nr, nc]:
                cand = (float(np.hypot(dr, dc)), nr, nc, core_labels[nr, nc])
                if best is None or cand < best:
                    best = cand
        if best is not None:
            members[best[3] - 1].append((r, c))

    clusters = [Cluster(np.array(sorted(m), dtype=int)) for m in members if m]
    clusters.sort(key=lambda cl: tuple(cl.voxels[0]))
    return SliceClustering(clusters=clusters)


def _label_bfs(core: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, int]:
    """Component labeling of core voxels for stencils wider than 3x3."""
    h, w = core.shape
    labels = np.zeros((h, w), dtype=int)
    n = 0
    off = [tuple(o) for o in offsets.tolist()]
    for r, c in zip(*np.nonzero(core)):
        if labels[r, c]:
            continue
        n += 1
        stack = [(int(r), int(c))]
        labels[r, c] = n
        while stack:
            cr, cc = stack.pop()
            for dr, dc in off:
                nr, nc = cr + dr, cc + dc
                if 0 <= nr < h and 0 <= nc < w and core[nr, nc] and not labels[nr, nc]:
                    labels[nr, nc] = n
                    stack.append((nr, nc))
    return labels, n


def dbscan_brute_force(mask: np.ndarray, eps: float, vmin: int) -> SliceClustering:
    """O(n^2) reference DBSCAN used as an oracle in tests; same rules as
    dbscan_clusters, implemented from pairwise distances only."""
    pts = np.argwhere(np.asarray(mask, dtype=bool))
    n = len(pts)
    if n == 0:
        return SliceClustering(clusters=[])
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2).astype(float)
    within = d2 <= eps * eps + 1e-12
    np.fill_diagonal(within, False)
    core = within.sum(axis=1) >= vmin

    labels = np.zeros(n, dtype=int)
    n_clusters = 0
    for i in range(n):
        if not core[i] or labels[i]:
            continue
        n_clusters += 1
        stack = [i]
        labels[i] = n_clusters
        while stack:
            j = stack.pop()
            for k in np.nonzero(within[j] & core)[0]:
                if not labels[k]:
                    labels[k] = n_clusters
                    stack.append(int(k))

    members: list[list[tuple[int, int]]] = [[] for _ in range(n_clusters)]
    for i in range(n):
        if core[i]:
            members[labels[i] - 1].append((int(pts[i, 0]), int(pts[i, 1])))
    for i in range(n):
        if core[i]:
            continue
        cand = [
            (float(np.sqrt(d2[i, j])), int(pts[j, 0]), int(pts[j, 1]), labels[j])
            for j in np.nonzero(within[i] & core)[0]
        ]
        if cand:
            members[min(cand)[3] - 1].append((int(pts[i, 0]), int(pts[i, 1])))

    clusters = [Cluster(np.array(sorted(m), dtype=int)) for m in members if m]
    clusters.sort(key=lambda cl: tuple(cl.voxels[0]))
    return SliceClustering(clusters=clusters)


# ---------------------------------------------------------------------------
# Contour geometry
# ---------------------------------------------------------------------------


def sobel_magnitude(img: np.ndarray) -> np.ndarray:
    gx = ndimage.correlate(np.asarray(img, dtype=np.float64), SOBEL_X, mode="nearest")
    gy = ndimage.correlate(np.asarray(img, dtype=np.float64), SOBEL_Y, mode="nearest")
    return np.hypot(gx, gy)


def _hull_interior(contour: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Voxels inside the convex hull of a contour's points (contour included)."""
    out = np.zeros(shape, dtype=bool)
    if len(contour) < 3:
        return out
    pts = contour.astype(float)
    try:
        hull = ConvexHull(pts)
        tri = Delaunay(pts[hull.vertices])
    except QhullError:
        return out
    r0, c0 = contour.min(axis=0)
    r1, c1 = contour.max(axis=0)
    yy, xx = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    inside = tri.find_simplex(np.column_stack([yy.ravel(), xx.ravel()])) >= 0
    out[yy.ravel()[inside], xx.ravel()[inside]] = True
    return out


def detect_geometry(slice_img: np.ndarray, params: SpatialParams) -> BrainGeometry:
    """Contours from Sobel edges on an anatomical template slice.

    The longest contour is the brain boundary; the white-matter region is the
    band within band_width of it.  Ventricular regions exist only when more
    than one contour is present: interiors of the convex hulls of the
    secondary contours, excluding every contour voxel.
    """
    img = np.asarray(slice_img, dtype=np.float64)
    h, w = img.shape
    if h < 8 or w < 8:
        raise ValueError("slice must be at least 8x8")
    edges = sobel_magnitude(img) > params.sobel_edge_threshold
    empty = BrainGeometry(
        contours=[],
        white_matter=np.zeros((h, w), dtype=bool),
        ventricles=np.zeros((h, w), dtype=bool),
    )
    if not edges.any():
        return empty

    labels, n = ndimage.label(edges, structure=np.ones((3, 3), dtype=bool))
    contours = [np.argwhere(labels == i + 1) for i in range(n)]
    contours.sort(key=lambda c: (-len(c), tuple(c[0])))

    principal = np.zeros((h, w), dtype=bool)
    principal[contours[0][:, 0], contours[0][:, 1]] = True
    wm = ndimage.distance_transform_edt(~principal) <= anatomy.band_width(h, w)

    ventricles = np.zeros((h, w), dtype=bool)
    if len(contours) > 1:
        for contour in contours[1:]:
            ventricles |= _hull_interior(contour, (h, w))
        ventricles &= ~edges
    return BrainGeometry(contours=contours, white_matter=wm, ventricles=ventricles)


# ---------------------------------------------------------------------------
# Overlap feature
# ---------------------------------------------------------------------------


def white_matter_overlap_count(
    clustering: SliceClustering, geom: BrainGeometry, params: SpatialParams
) -> int:
    """Clusters larger than large_cluster_px that touch the white-matter band
    and reach the ventricles ("extended towards" = intersecting the ventricle
    region or within eps of it)."""
    if not clustering.clusters or not geom.ventricles.any():
        return 0
    vent_dist = ndimage.distance_transform_edt(~geom.ventricles)
    count = 0
    for cl in clustering.clusters:
        if cl.size <= params.large_cluster_px:
            continue
        r, c = cl.voxels[:, 0], cl.voxels[:, 1]
        if not geom.white_matter[r, c].any():
            continue
        if (vent_dist[r, c] <= params.eps).any():
            count += 1
    return count


@lru_cache(maxsize=8)
def _template_geometry(height: int, width: int, params: SpatialParams) -> BrainGeometry:
    return detect_geometry(anatomy.template_slice(height, width), params)


def spatial_features(ic, params: SpatialParams) -> tuple[int, int]:
    """(max per-slice cluster count, white-matter overlap count summed over
    slices), with geometry detected on the anatomical template for the IC's
    slice dimensions."""
    geom = _template_geometry(ic.slices.shape[1], ic.slices.shape[2], params)
    masks = extract_brain_slices(ic, params)
    n_clusters = 0
    wm_overlap = 0
    for mask in masks:
        clustering = dbscan_clusters(mask, params.eps, params.vmin)
        n_clusters = max(n_clusters, len(clustering))
        wm_overlap += white_matter_overlap_count(clustering, geom, params)
    return n_clusters, wm_overlap
