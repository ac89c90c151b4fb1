"""Articulatory-space measurement: tongue contours, isolation-forest
pruning, convex hulls, and per-speaker/mode hull areas."""

from __future__ import annotations

import csv
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from . import svgfig

logger = logging.getLogger(__name__)

_EULER_GAMMA = 0.5772156649015329
_ORIENT_SCALE = 1 << 16


# ---------------------------------------------------------------------------
# Contours


@dataclass
class TongueContour:
    utt_id: str
    frame_index: int
    points: np.ndarray  # (n, 2) of (x, y) pixel coordinates

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] < 2:
            raise DataError(
                f"{self.utt_id}[{self.frame_index}]: contour needs >= 2 (x, y) points")


@dataclass
class ContourCloud:
    speaker_id: str
    mode: str
    points: np.ndarray  # (n, 2) pooled over all contours of speaker x mode

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.size == 0:
            raise DataError(f"{self.speaker_id}/{self.mode}: empty contour cloud")


@dataclass
class HullResult:
    speaker_id: str
    mode: str
    vertices: np.ndarray  # counter-clockwise hull vertices
    area: float
    n_points: int
    n_pruned: int


def write_contours(path: str | Path, contours: list[TongueContour]) -> None:
    """CSV with one point per row: utt_id,frame,x,y."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["utt_id", "frame", "x", "y"])
        for c in contours:
            for x, y in c.points:
                w.writerow([c.utt_id, c.frame_index, f"{x:.10g}", f"{y:.10g}"])


def read_contours(path: str | Path) -> list[TongueContour]:
    rows: dict[tuple[str, int], list[tuple[float, float]]] = {}
    order: list[tuple[str, int]] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for i, row in enumerate(reader):
            try:
                key = (row["utt_id"], int(row["frame"]))
                pt = (float(row["x"]), float(row["y"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: bad contour row {i + 2}: {exc}") from exc
            if key not in rows:
                rows[key] = []
                order.append(key)
            rows[key].append(pt)
    return [TongueContour(u, f, np.array(rows[(u, f)])) for u, f in order]


# ---------------------------------------------------------------------------
# Ridge tracking (stand-in contour extractor for synthetic frames)


def _smooth_columns(frame: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing along rows (per column), edge-replicated."""
    radius = max(1, int(math.ceil(3 * sigma)))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(frame, ((radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(frame, dtype=np.float64)
    h = frame.shape[0]
    for k, w in enumerate(kernel):
        out += w * padded[k:k + h, :]
    return out


def ridge_track(frame: np.ndarray, threshold: float = 0.5,
                smooth_sigma: float = 2.0, utt_id: str = "",
                frame_index: int = 0) -> TongueContour:
    """Track the brightest ridge: per column, the row of maximum smoothed
    intensity; columns whose smoothed maximum stays below ``threshold`` are
    omitted."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.size == 0:
        raise DataError(f"expected non-empty 2-D frame, got shape {frame.shape}")
    smoothed = _smooth_columns(frame, smooth_sigma)
    rows = smoothed.argmax(axis=0)
    peak = smoothed.max(axis=0)
    cols = np.nonzero(peak >= threshold)[0]
    if cols.size < 2:
        raise DataError("no ridge found: fewer than 2 columns exceed the threshold")
    pts = np.stack([cols.astype(np.float64), rows[cols].astype(np.float64)], axis=1)
    return TongueContour(utt_id=utt_id, frame_index=frame_index, points=pts)


# ---------------------------------------------------------------------------
# Isolation forest


def average_path_length(n: int | np.ndarray) -> np.ndarray | float:
    """Expected isolation path length c(n) = 2 H(n-1) - 2 (n-1)/n with
    H(i) = ln(i) + Euler-Mascheroni; 0 for n <= 1."""
    n_arr = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n_arr)
    mask = n_arr >= 2
    nm = n_arr[mask]
    out[mask] = 2.0 * (np.log(nm - 1.0) + _EULER_GAMMA) - 2.0 * (nm - 1.0) / nm
    return float(out) if np.isscalar(n) else out


@dataclass
class _Tree:
    feature: np.ndarray    # split dim per node; -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    leaf_adjust: np.ndarray  # c(leaf size) for leaves, 0 elsewhere


@dataclass
class IsolationForest:
    n_trees: int
    psi: int            # effective subsample size
    height_limit: int
    seed: int
    trees: list[_Tree] = field(repr=False, default_factory=list)

    def path_lengths(self, points: np.ndarray) -> np.ndarray:
        """Mean isolation depth E[h(x)] per point, leaf-adjusted."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        total = np.zeros(points.shape[0])
        for tree in self.trees:
            node = np.zeros(points.shape[0], dtype=np.int64)
            for _ in range(self.height_limit + 1):
                feat = tree.feature[node]
                active = feat >= 0
                if not active.any():
                    break
                idx = np.nonzero(active)[0]
                go_left = points[idx, feat[idx]] < tree.threshold[node[idx]]
                node[idx] = np.where(go_left, tree.left[node[idx]], tree.right[node[idx]])
            total += tree.depth[node] + tree.leaf_adjust[node]
        return total / self.n_trees


def _build_tree(data: np.ndarray, height_limit: int, rng: np.random.Generator) -> _Tree:
    feature, threshold, left, right, depth, adjust = [], [], [], [], [], []

    def add_node(d: int) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        depth.append(d)
        adjust.append(0.0)
        return len(feature) - 1

    def grow(idx: np.ndarray, d: int) -> int:
        node = add_node(d)
        sub = data[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.nonzero(hi > lo)[0]
        if d >= height_limit or idx.size <= 1 or splittable.size == 0:
            adjust[node] = float(average_path_length(int(idx.size)))
            return node
        dim = int(rng.choice(splittable))
        val = float(rng.uniform(lo[dim], hi[dim]))
        mask = sub[:, dim] < val
        feature[node] = dim
        threshold[node] = val
        left[node] = grow(idx[mask], d + 1)
        right[node] = grow(idx[~mask], d + 1)
        return node

    grow(np.arange(data.shape[0]), 0)
    return _Tree(np.array(feature), np.array(threshold), np.array(left),
                 np.array(right), np.array(depth, dtype=np.float64),
                 np.array(adjust))


def fit_iforest(points: np.ndarray, n_trees: int = 100, psi: int = 256,
                seed: int = 0) -> IsolationForest:
    """Standard isolation forest: each tree on a psi-subsample with uniform
    random split dimension and uniform split value, grown to height limit
    ceil(log2 psi)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if n < 2:
        raise DataError(f"isolation forest needs >= 2 points, got {n}")
    psi_eff = min(psi, n)
    height_limit = int(math.ceil(math.log2(psi_eff))) if psi_eff > 1 else 0
    rng = np.random.default_rng(seed)
    forest = IsolationForest(n_trees=n_trees, psi=psi_eff,
                             height_limit=height_limit, seed=seed)
    for _ in range(n_trees):
        idx = rng.choice(n, size=psi_eff, replace=False)
        forest.trees.append(_build_tree(points[idx], height_limit, rng))
    return forest


def score_from_mean_path(mean_path: np.ndarray | float, psi: int) -> np.ndarray | float:
    """Anomaly score s = 2^(-E[h(x)] / c(psi))."""
    return 2.0 ** (-np.asarray(mean_path, dtype=np.float64) / average_path_length(psi))


def anomaly_score(forest: IsolationForest, points: np.ndarray) -> np.ndarray:
    """Score in (0, 1); higher is more anomalous."""
    scores = score_from_mean_path(forest.path_lengths(points), forest.psi)
    return np.atleast_1d(scores)


def prune_outliers(cloud: ContourCloud, contamination: float = 0.02,
                   n_trees: int = 100, psi: int = 256, seed: int = 0) -> ContourCloud:
    """Drop the ceil(contamination * N) highest-scoring points; ties broken
    by stable input order."""
    if not 0.0 <= contamination < 0.5:
        raise ValueError(f"contamination must be in [0, 0.5), got {contamination}")
    n = cloud.points.shape[0]
    k = int(math.ceil(contamination * n))
    if k == 0:
        return ContourCloud(cloud.speaker_id, cloud.mode, cloud.points.copy())
    if k >= n:
        raise DataError("pruning would remove every point")
    forest = fit_iforest(cloud.points, n_trees=n_trees, psi=psi, seed=seed)
    scores = anomaly_score(forest, cloud.points)
    drop = np.argsort(-scores, kind="stable")[:k]
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    return ContourCloud(cloud.speaker_id, cloud.mode, cloud.points[keep])


# ---------------------------------------------------------------------------
# Convex hull (exact orientation on integer-scaled coordinates)


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew monotone-chain hull, counter-clockwise, collinear boundary
    points excluded.

    Orientation tests run on exact integers after scaling coordinates by
    2^16, so hull membership never depends on floating-point rounding.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] < 1 or points.shape[1] != 2:
        raise DataError(f"convex_hull expects (n, 2) points, got {points.shape}")
    scaled = np.rint(points * _ORIENT_SCALE).astype(np.int64)

    first_of: dict[tuple[int, int], int] = {}
    for i, (x, y) in enumerate(scaled.tolist()):
        first_of.setdefault((x, y), i)
    uniq = sorted(first_of)
    if len(uniq) == 1:
        return points[[first_of[uniq[0]]]]

    def chain(pts):
        out = []
        for p in pts:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = chain(uniq)
    upper = chain(uniq[::-1])
    hull_int = lower[:-1] + upper[:-1]
    return points[[first_of[p] for p in hull_int]]


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a simple polygon; fewer than 3 vertices -> 0."""
    vertices = np.atleast_2d(np.asarray(vertices, dtype=np.float64))
    if vertices.shape[0] < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))


# ---------------------------------------------------------------------------
# Per-speaker x mode analysis


def derive_seed(base_seed: int, *parts: str) -> int:
    """Stable per-cloud seed from the global seed and string tags."""
    h = base_seed & 0xFFFFFFFF
    for part in parts:
        h = zlib.crc32(part.encode(), h)
    return int(h)


def pool_clouds(contours_by_utt: dict[str, list[TongueContour]],
                utt_meta: dict[str, tuple[str, str]]) -> list[ContourCloud]:
    """Pool contour points per (speaker, mode).

    ``utt_meta`` maps utt_id -> (speaker_id, mode).
    """
    pooled: dict[tuple[str, str], list[np.ndarray]] = {}
    for utt_id, contours in contours_by_utt.items():
        if utt_id not in utt_meta:
            raise DataError(f"contours reference unknown utterance {utt_id!r}")
        key = utt_meta[utt_id]
        pooled.setdefault(key, []).extend(c.points for c in contours)
    return [ContourCloud(spk, mode, np.concatenate(pts))
            for (spk, mode), pts in sorted(pooled.items())]


def articulatory_space(clouds: list[ContourCloud], contamination: float = 0.02,
                       n_trees: int = 100, psi: int = 256,
                       seed: int = 0, pixel_scale: float = 1.0) -> list[HullResult]:
    """Prune each speaker x mode cloud, then compute its hull and area.

    ``pixel_scale`` converts pixel areas to physical units (area scales by
    pixel_scale squared); default leaves areas in pixels squared.
    """
    results = []
    for cloud in clouds:
        cloud_seed = derive_seed(seed, cloud.speaker_id, cloud.mode)
        pruned = prune_outliers(cloud, contamination, n_trees, psi, cloud_seed)
        hull = convex_hull(pruned.points)
        area = polygon_area(hull) * pixel_scale ** 2
        results.append(HullResult(
            speaker_id=cloud.speaker_id, mode=cloud.mode, vertices=hull,
            area=area, n_points=cloud.points.shape[0],
            n_pruned=cloud.points.shape[0] - pruned.points.shape[0]))
    return results


def paired_areas(results: list[HullResult], mode_a: str,
                 mode_b: str) -> dict[str, tuple[float, float]]:
    """Per-speaker (area_a, area_b); speakers missing a mode are excluded
    with a warning."""
    by_speaker: dict[str, dict[str, float]] = {}
    for r in results:
        by_speaker.setdefault(r.speaker_id, {})[r.mode] = r.area
    paired = {}
    for spk, areas in sorted(by_speaker.items()):
        if mode_a in areas and mode_b in areas:
            paired[spk] = (areas[mode_a], areas[mode_b])
        else:
            logger.warning("speaker %s missing mode %s; excluded from paired areas",
                           spk, mode_a if mode_a not in areas else mode_b)
    return paired


def write_hull_report(results: list[HullResult], clouds: list[ContourCloud],
                      outdir: str | Path) -> Path:
    """hulls.csv plus one SVG per speaker overlaying clouds and hulls."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "hulls.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["speaker", "mode", "n_points", "n_pruned", "area"])
        for r in results:
            w.writerow([r.speaker_id, r.mode, r.n_points, r.n_pruned, f"{r.area:.10g}"])

    cloud_map = {(c.speaker_id, c.mode): c.points for c in clouds}
    speakers = sorted({r.speaker_id for r in results})
    for spk in speakers:
        pts = {r.mode: cloud_map.get((spk, r.mode), np.zeros((0, 2)))
               for r in results if r.speaker_id == spk}
        hulls = {r.mode: r.vertices for r in results if r.speaker_id == spk}
        svgfig.contour_hull_svg(outdir / f"hull_{spk}.svg", pts, hulls,
                                title=f"articulatory space: {spk}")
    return csv_path
