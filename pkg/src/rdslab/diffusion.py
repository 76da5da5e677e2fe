"""The product martingale diffusion on [0,1]^d and its inverse flow.

Forward flow, per coordinate:  dX = X(1-X) dW.
Inverse flow, per coordinate:  dY = Y(1-Y)(1-2Y) dt - Y(1-Y) dW,
or, in the interior, Z = -log(Y/(1-Y)) with dZ = -tanh(Z/2)/2 dt + dW.

Arrays of states have shape (S, P, d): S paths (seeds), P points per path,
d coordinates.  All P points of a path feel the same noise, and coordinate c
of every point is driven by coordinate c of the path.  Because coordinates
never interact, a point array may also hold unrelated per-axis data in its
columns (used for product sets and for per-coordinate bisection).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from . import geometry
from .noise import PathEnsemble, WienerPath2S, step_level
from .stats import fraction_report, ks_uniform

INTEGRATORS = ("direct_em", "logit_em")


class FlowError(ValueError):
    pass


class UndecidedBasinError(RuntimeError):
    """Raised when basin classification stalls at the horizon cap."""

    def __init__(self, seed, coord, interval):
        super().__init__(f"undecided basin for seed {seed}, coordinate {coord}: "
                         f"bracket {interval} did not shrink at the horizon cap")
        self.seed = seed
        self.coord = coord
        self.interval = interval


@dataclass(frozen=True)
class FlowConfig:
    d: int = 1
    dt: float = 2.0**-10
    horizon: float = 50.0
    boundary_eps: float = 1e-4
    integrator: str = "direct_em"
    cap_factor: float = 4.0

    def __post_init__(self):
        step_level(self.dt)
        if self.d < 1:
            raise FlowError("dimension must be positive")
        if not 0.0 < self.boundary_eps < 0.5:
            raise FlowError("boundary_eps must lie in (0, 1/2)")
        if self.integrator not in INTEGRATORS:
            raise FlowError(f"integrator must be one of {INTEGRATORS}")
        if self.horizon <= 0 or self.cap_factor < 1:
            raise FlowError("need a positive horizon and cap_factor >= 1")

    @property
    def horizon_cap(self) -> float:
        return self.cap_factor * self.horizon


# ---------------------------------------------------------------------------
# kernels


# Loops run over time steps outside and points inside so the point loop
# vectorizes; the boundary values 0 and 1 are exact fixed points of every
# update, so absorbed points need no special casing.


@nb.njit(parallel=True, cache=True)
def _forward_chunk(x, dW):
    n, S, d = dW.shape
    P = x.shape[1]
    for s in nb.prange(S):
        for c in range(d):
            v = x[s, :, c].copy()
            for k in range(n):
                w = dW[k, s, c]
                for p in range(P):
                    u = v[p] + v[p] * (1.0 - v[p]) * w
                    v[p] = min(max(u, 0.0), 1.0)
            x[s, :, c] = v


@nb.njit(parallel=True, cache=True)
def _inverse_direct_chunk(y, dW, dt):
    n, S, d = dW.shape
    P = y.shape[1]
    for s in nb.prange(S):
        for c in range(d):
            v = y[s, :, c].copy()
            for k in range(n):
                w = dW[k, s, c]
                for p in range(P):
                    g = v[p] * (1.0 - v[p])
                    u = v[p] + g * (1.0 - 2.0 * v[p]) * dt - g * w
                    v[p] = min(max(u, 0.0), 1.0)
            y[s, :, c] = v


@nb.njit(parallel=True, cache=True)
def _inverse_logit_chunk(z, dW, dt):
    n, S, d = dW.shape
    P = z.shape[1]
    for s in nb.prange(S):
        for c in range(d):
            v = z[s, :, c].copy()
            for k in range(n):
                w = dW[k, s, c]
                for p in range(P):
                    # tanh(v/2) through a single exp of a non-positive argument
                    e = math.exp(-abs(v[p]))
                    v[p] += -0.5 * math.copysign((1.0 - e) / (1.0 + e), v[p]) * dt + w
            z[s, :, c] = v


# ---------------------------------------------------------------------------
# scalar helpers


def logit_drift(z):
    """Drift of the logit-transformed inverse flow; odd and bounded by 1/2."""
    return -0.5 * np.tanh(0.5 * np.asarray(z, dtype=float))


def to_logit(y):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0) or np.any(y >= 1.0):
        raise FlowError("logit integration needs interior points")
    return -np.log(y / (1.0 - y))


def from_logit(z):
    return 1.0 / (1.0 + np.exp(np.asarray(z, dtype=float)))


def scale_function(y: float) -> float:
    """Scale function of the inverse flow on (0, 1); antisymmetric about 1/2."""
    if not 0.0 < y < 1.0:
        raise FlowError("scale function is defined on the open interval (0, 1)")
    return (2.0 * math.log(y / (1.0 - y)) - (1.0 - 2.0 * y) / (y * (1.0 - y))) / 16.0


# ---------------------------------------------------------------------------
# integration


def as_ensemble(path) -> PathEnsemble:
    if isinstance(path, PathEnsemble):
        return path
    if isinstance(path, WienerPath2S):
        return path.as_ensemble()
    raise FlowError("path must be a WienerPath2S or a PathEnsemble")


def _broadcast_points(x0, S: int, d: int) -> np.ndarray:
    x = np.asarray(x0, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, d) if d > 1 else x[:, None]
    if x.ndim == 2:
        x = np.broadcast_to(x, (S,) + x.shape)
    if x.ndim != 3 or x.shape[0] != S or x.shape[2] != d:
        raise FlowError(f"points must have shape (P, {d}) or ({S}, P, {d})")
    return np.array(x, dtype=float)


def integrate(state: np.ndarray, path: PathEnsemble, t0: float, t1: float,
              dt: float, kind: str) -> np.ndarray:
    """Advance ``state`` (S, P, d) in place from t0 to t1 against ``path``.

    ``kind`` is ``forward``, ``inverse_direct`` or ``inverse_logit`` (the
    latter acts on logit coordinates).
    """
    if t1 <= t0:
        return state
    for _, dW in path.iter_increments(t0, t1, dt):
        if kind == "forward":
            _forward_chunk(state, dW)
        elif kind == "inverse_direct":
            _inverse_direct_chunk(state, dW, dt)
        elif kind == "inverse_logit":
            _inverse_logit_chunk(state, dW, dt)
        else:
            raise FlowError(f"unknown integration kind {kind!r}")
    return state


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), S, P, d)
    seeds: tuple[int, ...]

    def final(self) -> np.ndarray:
        return self.states[-1]


def _record(state0: np.ndarray, path: PathEnsemble, times, dt: float, kind: str,
            post=None) -> Trajectory:
    times = np.asarray(sorted(set(float(t) for t in times) | {0.0}))
    state = state0.copy()
    out = np.empty((len(times),) + state.shape)
    prev = 0.0
    for i, t in enumerate(times):
        integrate(state, path, prev, t, dt, kind)
        out[i] = state if post is None else post(state)
        prev = t
    return Trajectory(times, out, path.seeds)


def _default_times(cfg: FlowConfig, times):
    if times is None:
        return np.arange(0.0, cfg.horizon + 1.0, 1.0)
    return times


def forward_flow(x0, path, cfg: FlowConfig, times=None) -> Trajectory:
    """Euler-Maruyama images of the points ``x0`` under the forward flow.

    One path, many initial conditions: every point sees the same noise.
    States are recorded at ``times`` (default: every unit of time up to the
    horizon).
    """
    ens = as_ensemble(path)
    x = _broadcast_points(x0, ens.size, cfg.d)
    if np.any(x < 0) or np.any(x > 1):
        raise FlowError("point outside the unit cube")
    return _record(x, ens, _default_times(cfg, times), cfg.dt, "forward")


def inverse_flow(y0, path, cfg: FlowConfig, times=None) -> Trajectory:
    """Images of ``y0`` under the inverse flow driven by the increments of ``path``."""
    ens = as_ensemble(path)
    y = _broadcast_points(y0, ens.size, cfg.d)
    if np.any(y < 0) or np.any(y > 1):
        raise FlowError("point outside the unit cube")
    times = _default_times(cfg, times)
    if cfg.integrator == "direct_em":
        return _record(y, ens, times, cfg.dt, "inverse_direct")
    if np.any(y <= 0) or np.any(y >= 1):
        raise FlowError("logit integration needs interior points")
    return _record(to_logit(y), ens, times, cfg.dt, "inverse_logit", post=from_logit)


def inverse_view(path):
    """The noise seen by the inverse flow run forward in time.

    The inverse flow at time t undoes the forward flow over [-t, 0], so it
    consumes those increments from the latest to the earliest.
    """
    return path.time_reversed()


def pullback_view(path, t: float):
    """Noise for the inverse flow pulled back by t: the forward increments on [0, t] reversed."""
    return path.time_reversed().shift(-t)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per (seed, t, point); columns seed, t, point_id, x0..x{d-1}."""
    T, S, P, d = traj.states.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "t", "point_id"] + [f"x{i}" for i in range(d)])
        for s in range(S):
            for i in range(T):
                for p in range(P):
                    w.writerow([traj.seeds[s], repr(float(traj.times[i])), p]
                               + [repr(float(v)) for v in traj.states[i, s, p]])


# ---------------------------------------------------------------------------
# the random point b


@dataclass
class BasinEstimate:
    """Bracket [lower, upper] around b for one path; ``b`` is its midpoint.

    ``lower`` is always classified into the basin of 0 and ``upper`` into the
    basin of 1 (or they are the trivial endpoints 0 and 1).
    """

    b: np.ndarray
    tolerance: float
    horizon_used: float
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)
    history: list = field(default_factory=list, repr=False)


def classify(points: np.ndarray, path: PathEnsemble, cfg: FlowConfig) -> tuple[np.ndarray, np.ndarray]:
    """Label forward limits: 0, 1, or -1 if still undecided at the horizon cap.

    The horizon is extended only for paths that still have undecided points.
    Returns labels (S, P, d) and the horizon used per path.
    """
    x = _broadcast_points(points, path.size, cfg.d)
    integrate(x, path, 0.0, cfg.horizon, cfg.dt, "forward")
    eps = cfg.boundary_eps
    horizon = np.full(path.size, cfg.horizon)
    t = cfg.horizon
    while t < cfg.horizon_cap:
        undecided = ((x >= eps) & (x <= 1 - eps)).reshape(path.size, -1).any(axis=1)
        if not undecided.any():
            break
        idx = np.flatnonzero(undecided)
        sub = x[idx]
        t_next = min(t + 1.0, cfg.horizon_cap)
        integrate(sub, path.subset(idx), t, t_next, cfg.dt, "forward")
        x[idx] = sub
        horizon[idx] = t_next
        t = t_next
    labels = np.full(x.shape, -1, dtype=np.int8)
    labels[x < eps] = 0
    labels[x > 1 - eps] = 1
    return labels, horizon


def estimate_b_ensemble(path: PathEnsemble, cfg: FlowConfig, tol: float,
                        points_per_round: int = 31) -> dict:
    """Multisection for b on every path and coordinate at once.

    Each round places ``points_per_round`` equispaced initial conditions
    strictly inside the current bracket (one set per coordinate, stored in
    the coordinate's column) and keeps the largest point sent to 0 and the
    smallest point sent to 1.  ``points_per_round=1`` is plain bisection.
    """
    if tol <= 0:
        raise FlowError("tol must be positive")
    S, d = path.size, cfg.d
    if path.dim != d:
        raise FlowError("path dimension does not match the config")
    lo = np.zeros((S, d))
    hi = np.ones((S, d))
    horizon = np.full(S, cfg.horizon)
    frac = np.arange(1, points_per_round + 1) / (points_per_round + 1)
    rounds = 0
    while True:
        active = np.flatnonzero(((hi - lo) > tol).any(axis=1))
        if active.size == 0:
            break
        rounds += 1
        a, w = lo[active], (hi - lo)[active]
        pts = a[:, None, :] + w[:, None, :] * frac[None, :, None]
        labels, hz = classify(pts, path.subset(active), cfg)
        horizon[active] = np.maximum(horizon[active], hz)
        zero = np.where(labels == 0, pts, -np.inf).max(axis=1)
        one = np.where(labels == 1, pts, np.inf).min(axis=1)
        new_lo = np.maximum(a, zero)
        new_hi = np.minimum(a + w, one)
        stalled = (w > tol) & (new_hi - new_lo >= w)
        if stalled.any():
            i, c = map(int, np.argwhere(stalled)[0])
            raise UndecidedBasinError(path.seeds[active[i]], c, (float(a[i, c]), float(a[i, c] + w[i, c])))
        lo[active], hi[active] = new_lo, new_hi
    return {"lower": lo, "upper": hi, "b": 0.5 * (lo + hi), "horizon_used": horizon,
            "rounds": rounds}


def estimate_b(path, cfg: FlowConfig, tol: float, points_per_round: int = 31) -> BasinEstimate:
    ens = as_ensemble(path)
    if ens.size != 1:
        raise FlowError("estimate_b takes a single path; use estimate_b_ensemble")
    r = estimate_b_ensemble(ens, cfg, tol, points_per_round)
    b = r["b"][0]
    if np.any(b <= 0) or np.any(b >= 1):
        raise FlowError("estimated b is not interior")
    return BasinEstimate(b, tol, float(r["horizon_used"][0]), r["lower"][0], r["upper"][0])


# ---------------------------------------------------------------------------
# pullback distances


def pullback_distance(x0, target, times: Sequence[float], path, cfg: FlowConfig,
                      flow: str = "inverse") -> np.ndarray:
    """d(phi(t, theta_{-t} omega) x0, target) for each t; shape (len(times), S).

    ``target`` is a point set (Q, d) shared by all paths or (S, Q, d) with
    one set per path.  ``flow="inverse"`` pulls back the inverse flow, whose
    image at time t is obtained from the forward increments on [0, t] in
    reverse order; ``flow="forward"`` runs the forward flow on [-t, 0].
    """
    ens = as_ensemble(path)
    x = _broadcast_points(x0, ens.size, cfg.d)
    tgt = np.asarray(target, dtype=float)
    if tgt.ndim == 2:
        tgt = np.broadcast_to(tgt, (ens.size,) + tgt.shape)
    out = np.empty((len(times), ens.size))
    for i, t in enumerate(times):
        if t < 0:
            raise FlowError("pullback times must be non-negative")
        if t == 0:
            img = x
        elif flow == "inverse":
            img = inverse_flow(x, pullback_view(ens, t), cfg, times=[t]).final()
        elif flow == "forward":
            img = forward_flow(x, ens.shift(-t), cfg, times=[t]).final()
        else:
            raise FlowError(f"unknown flow {flow!r}")
        for s in range(ens.size):
            out[i, s] = geometry.hausdorff_semidistance(img[s], tgt[s], "uniform")
    return out


# ---------------------------------------------------------------------------
# experiments


def _fill_image_gaps(x_init: np.ndarray, x_img: np.ndarray, path: PathEnsemble, coord: int,
                     t: float, cfg: FlowConfig, gap: float, max_rounds: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Insert initial conditions until consecutive images are ``gap``-close.

    Works on one coordinate of a single path; the forward map is monotone, so
    bisection on the initial condition finds preimages of every gap.  Stops
    early when floating point cannot separate neighbouring initial points.
    """
    xi, xf = np.asarray(x_init, float), np.asarray(x_img, float)
    order = np.argsort(xi)
    xi, xf = xi[order], xf[order]
    if not np.any(np.diff(xf) > gap):
        return xi, xf
    # one path is re-used for every round, so materialize its increments once
    dW = path.increments(0.0, t, cfg.dt)
    for _ in range(max_rounds):
        big = np.flatnonzero(np.diff(xf) > gap)
        mids = 0.5 * (xi[big] + xi[big + 1])
        ok = (mids > xi[big]) & (mids < xi[big + 1])
        mids = mids[ok]
        if mids.size == 0:
            break
        pts = np.zeros((1, mids.size, cfg.d))
        pts[0, :, coord] = mids
        _forward_chunk(pts, dW)
        xi = np.concatenate([xi, mids])
        xf = np.concatenate([xf, pts[0, :, coord]])
        order = np.argsort(xi, kind="stable")
        xi, xf = xi[order], xf[order]
    return xi, xf


def experiment_face_attraction(C: geometry.CompactSetApprox, m_level: int, seeds: Sequence[int],
                               cfg: FlowConfig, threshold: float = 0.05,
                               times: Sequence[float] | None = None,
                               refine_gap: float | None = None,
                               check_dimension: bool = True) -> dict:
    """Forward-flow a compact set and track its distance to the m-faces.

    Product sets are flowed factor by factor (the flow acts coordinate-wise),
    which keeps the cost linear in the factor sizes.  With ``refine_gap`` the
    image of every factor is kept ``refine_gap``-dense at the final time by
    inserting preimages, so a continuum is not mistaken for its grid.
    """
    if check_dimension and not C.nominal_dimension < m_level + 1:
        raise FlowError("set dimension must be below m_level + 1")
    if C.dim != cfg.d:
        raise FlowError("set dimension does not match the config")
    times = list(_default_times(cfg, times))
    T = max(times)
    ens = PathEnsemble(tuple(int(s) for s in seeds), cfg.d)
    if C.factors:
        cols = [f.points[:, 0] for f in C.factors]
        P = max(len(c) for c in cols)
        x0 = np.stack([np.concatenate([c, np.full(P - len(c), c[-1])]) for c in cols], 1)
    else:
        x0 = C.points
    traj = forward_flow(x0, ens, cfg, times=times)
    dist = np.empty((len(traj.times), ens.size))
    for i in range(len(traj.times)):
        for s in range(ens.size):
            img = traj.states[i, s]
            if C.factors:
                dist[i, s] = geometry.product_semidistance_to_h(
                    [img[: len(cols[c]), c] for c in range(cfg.d)], m_level)
            else:
                dist[i, s] = geometry.semidistance_to_h(img, m_level)
    refined_points = None
    if refine_gap is not None:
        if not C.factors:
            raise FlowError("refinement needs a product of one-dimensional factors")
        refined_points = np.zeros(ens.size, dtype=np.int64)
        for s in range(ens.size):
            sub = ens.subset([s])
            axes = []
            for c in range(cfg.d):
                xi, xf = _fill_image_gaps(cols[c], traj.states[-1, s, : len(cols[c]), c], sub, c, T, cfg, refine_gap)
                axes.append(xf)
                refined_points[s] += len(xi)
            dist[-1, s] = geometry.product_semidistance_to_h(axes, m_level)
    final = dist[-1]
    rep = fraction_report(final < threshold)
    rep.update({"m_level": m_level, "threshold": threshold, "horizon": T,
                "nominal_dimension": C.nominal_dimension, "times": traj.times.tolist(),
                "distances": dist, "terminal": final, "seeds": list(ens.seeds)})
    if refined_points is not None:
        rep["refined_points"] = refined_points
    return rep


def cc_grid(z_max: float = 12.0, mesh: float = 0.05) -> np.ndarray:
    n = int(round(2 * z_max / mesh))
    return np.linspace(-z_max, z_max, n + 1)


def experiment_cc_density(seeds: Sequence[int], cfg: FlowConfig, z_max: float = 12.0,
                          mesh: float = 0.05, times: Sequence[float] | None = None,
                          pairs: Sequence[tuple[float, float]] = ((0.1, 0.9),),
                          gap_threshold: float = 0.1, pair_threshold: float = 0.05) -> dict:
    """Inverse flow of the countable set {0, 1} and the logit grid.

    Reports, per path and recorded time:
      ``grid_gap``  largest distance between images of consecutive grid points,
      ``full_gap``  the same with the fixed endpoints 0 and 1 included,
      ``pair_distance`` |image(x) - image(y)| for each requested pair.
    Runs on one coordinate; the product case factorizes.
    """
    if cfg.d != 1:
        raise FlowError("the density experiment runs in one dimension")
    z = cc_grid(z_max, mesh)
    pair_pts = np.array([v for pr in pairs for v in pr], dtype=float)
    ens = inverse_view(PathEnsemble(tuple(int(s) for s in seeds), 1))
    times = list(_default_times(cfg, times))
    zs = np.concatenate([z, to_logit(pair_pts)])
    traj = _record(_broadcast_points(zs[:, None], ens.size, 1), ens, times, cfg.dt, "inverse_logit",
                   post=from_logit)
    n = len(z)
    y = traj.states[..., 0]  # (T, S, P)
    grid_img = np.sort(y[:, :, :n], axis=2)
    grid_gap = np.diff(grid_img, axis=2).max(axis=2)
    full = np.concatenate([np.zeros(grid_img.shape[:2] + (1,)), grid_img,
                           np.ones(grid_img.shape[:2] + (1,))], axis=2)
    full_gap = np.diff(full, axis=2).max(axis=2)
    pv = y[:, :, n:]
    pair_dist = np.abs(pv[:, :, 0::2] - pv[:, :, 1::2])
    rep = fraction_report(grid_gap[-1] < gap_threshold)
    rep.update({"times": traj.times.tolist(), "grid_gap": grid_gap, "full_gap": full_gap,
                "pair_distance": pair_dist, "gap_threshold": gap_threshold,
                "full_gap_fraction": float(np.mean(full_gap[-1] < gap_threshold)),
                "pair_fraction": np.mean(pair_dist[-1] < pair_threshold, axis=0).tolist(),
                "pairs": [list(p) for p in pairs], "grid_size": n, "seeds": list(seeds)})
    return rep


def experiment_b_uniformity(seeds: Sequence[int], cfg: FlowConfig, tol: float = 1e-3) -> dict:
    """Estimate b on every seed and test each coordinate against uniform(0, 1)."""
    ens = PathEnsemble(tuple(int(s) for s in seeds), cfg.d)
    est = estimate_b_ensemble(ens, cfg, tol)
    b = est["b"]
    ks = [ks_uniform(b[:, c]) for c in range(cfg.d)]
    rep = {"n": len(seeds), "d": cfg.d, "tol": tol, "b": b,
           "ks_statistic": [k[0] for k in ks], "ks_pvalue": [k[1] for k in ks],
           "max_horizon": float(est["horizon_used"].max())}
    if cfg.d >= 2:
        rep["correlation"] = np.corrcoef(b.T).tolist()
        rep["max_abs_correlation"] = float(np.max(np.abs(np.corrcoef(b.T) - np.eye(cfg.d))))
    return rep


def experiment_synchronization(seeds: Sequence[int], cfg: FlowConfig, points=(0.1, 0.9),
                               t_final: float | None = None, threshold: float = 0.05,
                               tol: float = 1e-3, times: Sequence[float] | None = None) -> dict:
    """Pullback convergence of the inverse flow to b, and forward pairwise collapse.

    For each seed: b is bracketed with the forward flow; the inverse flow is
    pulled back from the points and compared with b; and the inverse flow run
    forward in time from the points is checked for mutual collapse.
    """
    if cfg.d != 1:
        raise FlowError("the synchronization experiment runs in one dimension")
    t_final = cfg.horizon if t_final is None else t_final
    times = sorted(set(times or []) | {0.0, t_final})
    ens = PathEnsemble(tuple(int(s) for s in seeds), 1)
    est = estimate_b_ensemble(ens, cfg, tol)
    target = est["b"][:, None, :]
    pts = np.asarray(points, dtype=float)[:, None]
    pull = pullback_distance(pts, target, times, ens, cfg, flow="inverse")
    fwd = inverse_flow(pts, inverse_view(ens), cfg, times=times)
    pair = np.abs(fwd.states[:, :, 0, 0] - fwd.states[:, :, 1, 0]) if len(pts) >= 2 else None
    rep = {"n": ens.size, "times": list(times), "threshold": threshold,
           "pullback_distance": pull, "pair_distance": pair, "b": est["b"][:, 0],
           "pullback_fraction": float(np.mean(pull[-1] < threshold)),
           "pair_fraction": float(np.mean(pair[-1] < threshold)) if pair is not None else None}
    return rep
