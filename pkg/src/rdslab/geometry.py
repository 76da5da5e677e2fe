"""Point sets on the cube [0,1]^d and on the probability simplex.

Compact sets are carried as finite point clouds together with the Hausdorff
dimension of the idealized set they truncate.  Nothing here estimates a
dimension from data; the dimension is part of the construction.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.spatial import cKDTree

SIMPLEX_TOL = 1e-12
LEVEL_SENTINEL = 2**62  # level of points with zero second-largest weight (vertices)


class GeometryError(ValueError):
    pass


def as_cube_points(x) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.ndim != 2:
        raise GeometryError("expected an (n, d) array of points")
    if np.any(pts < 0.0) or np.any(pts > 1.0) or np.any(~np.isfinite(pts)):
        raise GeometryError("point outside the unit cube")
    return pts


def as_simplex_points(x, tol: float = SIMPLEX_TOL) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(pts < 0.0) or np.any(~np.isfinite(pts)):
        raise GeometryError("negative or non-finite simplex weight")
    if np.any(np.abs(pts.sum(axis=1) - 1.0) > tol):
        raise GeometryError("simplex weights do not sum to one")
    return pts


def _metric_p(metric: str) -> float:
    if metric == "uniform":
        return np.inf
    if metric == "euclidean":
        return 2.0
    raise GeometryError(f"unknown metric {metric!r}")


def hausdorff_semidistance(A, B, metric: str = "uniform") -> float:
    """sup over a in A of the distance from a to B.

    Not symmetric: a subset of B is at distance zero from B whatever B
    contains besides it.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.size == 0 or B.size == 0:
        raise GeometryError("empty set")
    A = A.reshape(len(A), -1)
    B = B.reshape(len(B), -1)
    if A.shape[1] != B.shape[1]:
        raise GeometryError("point sets live in different dimensions")
    dist, _ = cKDTree(B).query(A, k=1, p=_metric_p(metric))
    return float(np.max(dist))


def height(C, k: int) -> float:
    """Largest weight of type ``k`` (0-based) over the point set ``C``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.size == 0:
        raise GeometryError("empty set")
    if not 0 <= k < C.shape[1]:
        raise GeometryError(f"type index {k} out of range for m={C.shape[1]}")
    return float(C[:, k].max())


def diamond_membership(x, h: float, variant: str, i: int | None = None) -> bool:
    """Membership in the neighbourhoods of the vertices used by the height argument.

    ``D_i``:    x_i <= h
    ``Ubar_i``: x_j <= h for every j != i
    ``Ubar``:   x lies in some ``Ubar_i``
    """
    x = np.asarray(x, dtype=float)
    if not 0.0 <= h <= 1.0:
        raise GeometryError("h must lie in [0, 1]")
    if variant in ("D_i", "Ubar_i"):
        if i is None:
            raise GeometryError(f"variant {variant} needs a type index")
        if not 0 <= i < x.shape[-1]:
            raise GeometryError(f"type index {i} out of range")
        if variant == "D_i":
            return bool(x[i] <= h)
        others = np.delete(x, i)
        return bool(np.all(others <= h))
    if variant == "Ubar":
        return bool(second_largest(x) <= h)
    raise GeometryError(f"unknown variant {variant!r}")


def second_largest(X) -> np.ndarray | float:
    """Second-largest weight per point; x is in Ubar_h iff this is <= h."""
    X = np.asarray(X, dtype=float)
    s = np.partition(X, -2, axis=-1)[..., -2]
    return float(s) if np.ndim(s) == 0 else s


def level_index(x, l0: int, d: int) -> int:
    """The level l with x in Q_l.

    Q_0 is everything outside Ubar at radius d**-(l0+1); for l >= 1 the point
    has level >= l exactly when its second-largest weight is <= d**-(l0+l).
    Vertices sit in every Ubar and get ``LEVEL_SENTINEL``.
    """
    return int(level_indices(np.atleast_2d(x), l0, d)[0])


def level_indices(X, l0: int, d: int) -> np.ndarray:
    if l0 < 0 or d < 2:
        raise GeometryError("need l0 >= 0 and d >= 2")
    s2 = np.atleast_1d(second_largest(np.asarray(X, dtype=float)))
    out = np.zeros(s2.shape, dtype=np.int64)
    pos = s2 > 0
    out[~pos] = LEVEL_SENTINEL
    if np.any(pos):
        est = np.floor(-np.log(s2[pos]) / math.log(d)) - l0
        est = np.clip(est, 0, 10**6).astype(np.int64)
        fd = float(d)
        # correct the logarithmic estimate with exact threshold comparisons
        thr = fd ** (-(l0 + est).astype(float))
        too_high = (est > 0) & (s2[pos] > thr)
        est[too_high] -= 1
        thr_next = fd ** (-(l0 + est + 1).astype(float))
        est[s2[pos] <= thr_next] += 1
        est[est < 1] = 0
        out[pos] = est
    return out


@dataclass
class CompactSetApprox:
    """Finite point cloud standing in for a compact set.

    ``nominal_dimension`` is the Hausdorff dimension of the depth -> infinity
    limit.  Product clouds keep their one-dimensional ``factors`` so that
    coordinate-wise dynamics can be simulated per axis.
    """

    points: np.ndarray
    nominal_dimension: float
    depth: int
    descriptor: dict[str, Any]
    factors: tuple["CompactSetApprox", ...] = field(default=(), repr=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            raise GeometryError("empty set")
        if self.nominal_dimension < 0:
            raise GeometryError("nominal dimension must be non-negative")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def _cantor_intervals(r: float, depth: int) -> np.ndarray:
    iv = np.array([[0.0, 1.0]])
    for _ in range(depth):
        a, b = iv[:, 0], iv[:, 1]
        w = (b - a) * r
        iv = np.stack([np.stack([a, a + w], 1), np.stack([b - w, b], 1)], 1).reshape(-1, 2)
    return iv


def _embed(values: np.ndarray, embed) -> np.ndarray:
    if embed is None:
        return values[:, None]
    cols = []
    if sum(1 for e in embed if e == "x") != 1:
        raise GeometryError("embed must contain exactly one 'x' slot")
    for e in embed:
        if e == "x":
            cols.append(values)
        elif e == "1-x":
            cols.append(1.0 - values)
        else:
            cols.append(np.full_like(values, float(e)))
    return np.stack(cols, 1)


def make_cantor_cloud(ratio: float | None, depth: int, embed: Sequence | None = None,
                      *, log_ratio: float | None = None) -> CompactSetApprox:
    """Endpoints of the depth-``depth`` stage of the two-map Cantor set.

    Each interval keeps its outer pieces of relative length ``ratio``.  For
    ratios too small to represent, pass ``log_ratio`` instead; the endpoints
    then collapse in floating point but the recipe keeps the exact ratio.

    ``embed`` places the cloud in a higher-dimensional space: a sequence
    with one ``"x"`` entry for the Cantor coordinate and constants (or the
    string ``"1-x"``) elsewhere, e.g. ``("x", "1-x")`` for the simplex edge.
    """
    if log_ratio is None:
        if ratio is None or not 0.0 < ratio <= 0.5:
            raise GeometryError("ratio must lie in (0, 1/2]")
        log_ratio = math.log(ratio)
    else:
        if not log_ratio <= math.log(0.5):
            raise GeometryError("ratio must lie in (0, 1/2]")
        ratio = math.exp(log_ratio)
    if depth < 0:
        raise GeometryError("depth must be non-negative")
    iv = _cantor_intervals(ratio, depth)
    vals = np.unique(iv.ravel())
    desc = {"kind": "cantor", "log_ratio": log_ratio, "depth": depth,
            "embed": None if embed is None else [e if isinstance(e, str) else float(e) for e in embed]}
    return CompactSetApprox(_embed(vals, embed), math.log(2.0) / -log_ratio, depth, desc)


def make_interval_cloud(n: int, lo: float = 0.0, hi: float = 1.0) -> CompactSetApprox:
    """Uniform grid of ``n`` points on [lo, hi]; a stand-in for a segment."""
    if n < 2:
        raise GeometryError("need at least two grid points")
    return CompactSetApprox(np.linspace(lo, hi, n)[:, None], 1.0, n,
                            {"kind": "interval", "n": n, "lo": lo, "hi": hi})


def make_point_cloud(values: Sequence[float]) -> CompactSetApprox:
    return CompactSetApprox(np.asarray(values, dtype=float)[None, :], 0.0, 0,
                            {"kind": "point", "values": [float(v) for v in values]})


def product_cloud(*clouds: CompactSetApprox) -> CompactSetApprox:
    """Cartesian product; nominal dimensions add."""
    if not clouds:
        raise GeometryError("empty product")
    axes = _flatten_axes(clouds)
    pts = np.stack([g.ravel() for g in np.meshgrid(*[a.points[:, 0] for a in axes], indexing="ij")], 1)
    return CompactSetApprox(pts, sum(c.nominal_dimension for c in clouds), max(c.depth for c in clouds),
                            {"kind": "product", "factors": [c.descriptor for c in axes]}, tuple(axes))


def _flatten_axes(clouds) -> list[CompactSetApprox]:
    axes: list[CompactSetApprox] = []
    for c in clouds:
        if c.factors:
            axes.extend(c.factors)
        elif c.dim == 1:
            axes.append(c)
        elif c.descriptor.get("kind") == "point":
            axes.extend(make_point_cloud([v]) for v in c.descriptor["values"])
        else:
            raise GeometryError("product factors must be one-dimensional clouds")
    return axes


def face_points(alpha: Sequence[int], grid: int) -> np.ndarray:
    """Grid on the face where coordinate i is fixed at (1+alpha_i)/2 for alpha_i != 0."""
    alpha = [int(a) for a in alpha]
    if any(a not in (-1, 0, 1) for a in alpha):
        raise GeometryError("face index entries must be -1, 0 or +1")
    free = np.linspace(0.0, 1.0, grid) if grid >= 2 else np.array([0.5])
    axes = [free if a == 0 else np.array([(1.0 + a) / 2.0]) for a in alpha]
    return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], 1)


def h_union(m_level: int, d: int, grid: int = 11) -> np.ndarray:
    """Grid on the union of all ``m_level``-dimensional faces of [0,1]^d."""
    if not 0 <= m_level <= d:
        raise GeometryError("need 0 <= m_level <= d")
    pts = []
    for zeros in itertools.combinations(range(d), m_level):
        for signs in itertools.product((-1, 1), repeat=d - m_level):
            alpha, it = [], iter(signs)
            for i in range(d):
                alpha.append(0 if i in zeros else next(it))
            pts.append(face_points(alpha, grid))
    return np.unique(np.concatenate(pts, 0), axis=0)


def distance_to_h(X, m_level: int) -> np.ndarray:
    """Uniform-norm distance of each point to the union of ``m_level``-faces.

    A face of dimension m fixes d-m coordinates at 0 or 1, so the nearest one
    fixes the d-m coordinates closest to the boundary.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    if not 0 <= m_level <= d:
        raise GeometryError("need 0 <= m_level <= d")
    if m_level == d:
        return np.zeros(len(X))
    e = np.sort(np.minimum(X, 1.0 - X), axis=1)
    return e[:, d - m_level - 1]


def semidistance_to_h(X, m_level: int) -> float:
    return float(distance_to_h(X, m_level).max())


def product_semidistance_to_h(axis_points: Sequence[np.ndarray], m_level: int) -> float:
    """Distance to the m-faces of a product set given by its per-axis point sets.

    For a product of sets S_i the worst point picks, on every axis, the value
    farthest from {0, 1}; the answer is the (d-m)-th smallest of those maxima.
    """
    d = len(axis_points)
    if m_level >= d:
        return 0.0
    worst = np.sort([float(np.max(np.minimum(a, 1.0 - a))) for a in axis_points])
    return float(worst[d - m_level - 1])


def greedy_cover(points, radius: float, metric: str = "euclidean") -> tuple[np.ndarray, np.ndarray]:
    """Greedy cover by closed balls of ``radius`` centred at cloud points.

    Returns the centres and, for each point, the index of its ball.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    tree = cKDTree(P)
    owner = np.full(len(P), -1, dtype=np.int64)
    centers = []
    for i in range(len(P)):
        if owner[i] >= 0:
            continue
        nbrs = tree.query_ball_point(P[i], radius, p=_metric_p(metric))
        free = [j for j in nbrs if owner[j] < 0]
        owner[free] = len(centers)
        owner[i] = len(centers)
        centers.append(P[i])
    return np.array(centers), owner


def write_cloud_csv(cloud: CompactSetApprox, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point_id"] + [f"x{i}" for i in range(cloud.dim)])
        for i, p in enumerate(cloud.points):
            w.writerow([i] + [repr(float(v)) for v in p])


def recipe_json(cloud: CompactSetApprox) -> str:
    return json.dumps({"nominal_dimension": cloud.nominal_dimension, "depth": cloud.depth,
                       "recipe": cloud.descriptor}, sort_keys=True)


def cloud_from_recipe(recipe: dict) -> CompactSetApprox:
    """Rebuild a cloud from a recipe emitted by ``recipe_json``."""
    r = recipe.get("recipe", recipe)
    kind = r.get("kind")
    if kind == "cantor":
        return make_cantor_cloud(None, int(r["depth"]), r.get("embed"), log_ratio=float(r["log_ratio"]))
    if kind == "interval":
        return make_interval_cloud(int(r["n"]), float(r.get("lo", 0.0)), float(r.get("hi", 1.0)))
    if kind == "point":
        return make_point_cloud(r["values"])
    if kind == "product":
        return product_cloud(*[cloud_from_recipe(f) for f in r["factors"]])
    raise GeometryError(f"unknown recipe kind {kind!r}")
