"""Polynomial stochastic operators on the simplex and their random iteration.

A PSO of degree d on m types is given by heredity coefficients
p[parents][k], the probability that d parents of the listed types produce a
child of type k.  Coefficients are stored once per sorted parent multiset;
evaluation weights each multiset by its number of orderings.

Types are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .geometry import as_simplex_points
from .seeding import generator

SUM_TOL = 1e-12
# Both height bounds can be tight (the canonical d=2 operator meets the
# purebred one with equality), so comparisons allow a few ulps of rounding.
BOUND_SLACK = 8 * 2.0**-52
LIPSCHITZ_ABS_SLACK = 8 * 2.0**-52


class TensorError(ValueError):
    pass


def multisets(m: int, d: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations_with_replacement(range(m), d))


def multiplicity(key: Sequence[int]) -> int:
    """Number of ordered parent tuples with the given multiset of types."""
    counts = np.bincount(np.asarray(key))
    out = math.factorial(len(key))
    for c in counts:
        out //= math.factorial(int(c))
    return out


@dataclass(frozen=True, eq=False)
class PsoTensor:
    """Heredity coefficients keyed by sorted parent multiset.

    ``coeffs[key]`` is a length-m vector of child probabilities.  Missing keys
    are an error; construction validates non-negativity and unit row sums.
    """

    m: int
    d: int
    coeffs: dict
    name: str = ""
    _keys: np.ndarray = field(init=False, repr=False)
    _mult: np.ndarray = field(init=False, repr=False)
    _table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.m < 2 or self.d < 2:
            raise TensorError("need m >= 2 types and degree d >= 2")
        keys = multisets(self.m, self.d)
        table = np.empty((len(keys), self.m))
        given = {tuple(sorted(int(i) for i in k)): v for k, v in self.coeffs.items()}
        extra = set(given) - set(keys)
        if extra:
            raise TensorError(f"parent multiset {sorted(extra)[0]} out of range")
        for r, key in enumerate(keys):
            if key not in given:
                raise TensorError(f"missing coefficients for parents {key}")
            row = np.asarray(given[key], dtype=float)
            if row.shape != (self.m,):
                raise TensorError(f"parents {key}: expected {self.m} child probabilities")
            if np.any(row < 0) or not np.all(np.isfinite(row)):
                raise TensorError(f"parents {key}: negative coefficient")
            if abs(row.sum() - 1.0) > SUM_TOL:
                raise TensorError(f"parents {key}: child probabilities sum to {row.sum()!r}, not 1")
            table[r] = row
        object.__setattr__(self, "coeffs", {k: table[i].copy() for i, k in enumerate(keys)})
        object.__setattr__(self, "_keys", np.array(keys, dtype=np.int64))
        object.__setattr__(self, "_mult", np.array([multiplicity(k) for k in keys], dtype=float))
        object.__setattr__(self, "_table", table)

    @property
    def keys(self) -> list[tuple[int, ...]]:
        return [tuple(k) for k in self._keys]

    def coefficient(self, parents: Sequence[int], child: int) -> float:
        return float(self.coeffs[tuple(sorted(parents))][child])

    def raw(self, X) -> np.ndarray:
        """The polynomial map without renormalization; X has shape (..., m)."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.m:
            raise TensorError(f"point has {X.shape[-1]} weights, operator expects {self.m}")
        mono = X[..., self._keys].prod(axis=-1) * self._mult
        return mono @ self._table

    def __call__(self, X) -> np.ndarray:
        return apply(self, X)

    def __repr__(self):
        return f"PsoTensor(m={self.m}, d={self.d}{', ' + self.name if self.name else ''})"


def renormalize(Y: np.ndarray, tol: float = SUM_TOL) -> np.ndarray:
    """Absorb float drift of the row sums into the largest weight of each row.

    Smaller weights are left untouched, so exact zeros stay zero and tiny
    weights keep their full relative precision.  Drift beyond ``tol`` means
    the operator or the input is not stochastic and raises.
    """
    Y = np.array(Y, dtype=float)
    flat = Y.reshape(-1, Y.shape[-1])
    s = flat.sum(axis=1)
    bad = np.abs(s - 1.0) > tol
    if np.any(bad):
        raise TensorError(f"sum drift {float(np.max(np.abs(s - 1.0)))!r} exceeds {tol}")
    j = flat.argmax(axis=1)
    rows = np.arange(len(flat))
    flat[rows, j] += 1.0 - s
    return flat.reshape(Y.shape)


def apply(V: PsoTensor, X) -> np.ndarray:
    """(Vx)_k = sum over ordered parent tuples of p * x_{i1} ... x_{id}."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != V.m:
        raise TensorError(f"point has {X.shape[-1]} weights, operator expects {V.m}")
    return renormalize(V.raw(X))


# ---------------------------------------------------------------------------
# predicates and constructors


def is_volterra(V: PsoTensor) -> bool:
    """The child type always occurs among the parents."""
    for key, row in zip(V.keys, V._table):
        present = set(key)
        if any(row[k] != 0.0 for k in range(V.m) if k not in present):
            return False
    return True


def is_purebred(V: PsoTensor, k: int) -> bool:
    """Type k is only born to parent sets holding at least two of type k."""
    for key, row in zip(V.keys, V._table):
        if key.count(k) <= 1 and row[k] != 0.0:
            return False
    return True


def purebred_types(V: PsoTensor) -> frozenset:
    return frozenset(k for k in range(V.m) if is_purebred(V, k))


def canonical_purebred(m: int, d: int, k: int) -> PsoTensor:
    """A Volterra operator for which type k is purebred.

    Two or more parents of type k give a child of type k; otherwise the child
    copies one of the parents of a different type, chosen in proportion to
    how many parent slots that type fills.
    """
    if not 0 <= k < m:
        raise TensorError("type index out of range")
    coeffs = {}
    for key in multisets(m, d):
        row = np.zeros(m)
        if key.count(k) >= 2:
            row[k] = 1.0
        else:
            others = [i for i in key if i != k]
            for i in others:
                row[i] += 1.0
            row /= len(others)
        coeffs[key] = row
    return PsoTensor(m, d, coeffs, name=f"purebred-{k}")


def random_pso(m: int, d: int, rng: np.random.Generator, kind: str = "volterra",
               concentration: float = 1.0, purebred: Sequence[int] = ()) -> PsoTensor:
    """Random tensor with Dirichlet child distributions.

    ``kind``: ``general`` (any child), ``volterra`` (child among parents),
    or ``all_purebred`` (child must fill at least two parent slots; exists
    only when d > m, so that every parent multiset repeats a type).
    Types listed in ``purebred`` are additionally made purebred.
    """
    coeffs = {}
    for key in multisets(m, d):
        if kind == "general":
            support = list(range(m))
        elif kind == "volterra":
            support = sorted(set(key))
        elif kind == "all_purebred":
            support = [i for i in range(m) if key.count(i) >= 2]
            if not support:
                raise TensorError("no all-purebred tensor: some parent multiset has no repeated type")
        else:
            raise TensorError(f"unknown kind {kind!r}")
        support = [i for i in support if i not in purebred or key.count(i) >= 2]
        if not support:
            raise TensorError(f"no admissible child for parents {key}")
        row = np.zeros(m)
        row[support] = rng.dirichlet(np.full(len(support), concentration))
        # force an exact unit sum so validation never trips on Dirichlet rounding
        row[support[int(np.argmax(row[support]))]] += 1.0 - row.sum()
        coeffs[key] = row
    return PsoTensor(m, d, coeffs, name=f"random-{kind}")


# ---------------------------------------------------------------------------
# bounds


def check_height_bounds(V: PsoTensor, x, rel_slack: float = BOUND_SLACK) -> dict:
    """Evaluate both height bounds at x and list the violated ones.

    For each purebred type k: (Vx)_k <= C(d,2) x_k^2.
    For a Volterra operator, for every k: (Vx)_k <= d x_k.
    ``rel_slack`` allows a relative rounding margin on the right-hand side.
    """
    x = np.asarray(x, dtype=float)
    y = apply(V, x)
    cd2 = math.comb(V.d, 2)
    checks = []
    for k in purebred_types(V):
        checks.append(("purebred", k, float(y[k]), cd2 * x[k] * x[k]))
    if is_volterra(V):
        for k in range(V.m):
            checks.append(("volterra", k, float(y[k]), V.d * float(x[k])))
    violations = [c for c in checks if c[2] > c[3] * (1.0 + rel_slack)]
    return {"checks": checks, "violations": violations}


# ---------------------------------------------------------------------------
# catalogs and streams


@dataclass(frozen=True, eq=False)
class OperatorCatalog:
    """Finitely supported law of the random operator.

    ``labels[j]`` is the set of types that are purebred for entry j.
    """

    entries: tuple
    weights: np.ndarray
    labels: tuple = field(init=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        w = np.asarray(self.weights, dtype=float)
        if len(entries) == 0 or w.shape != (len(entries),):
            raise TensorError("catalog needs one weight per entry")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise TensorError("catalog weights must be non-negative and sum to 1")
        m, d = entries[0].m, entries[0].d
        if any(e.m != m or e.d != d for e in entries):
            raise TensorError("catalog entries must share m and d")
        labels = tuple(purebred_types(e) for e in entries)
        for k in range(m):
            if sum(w[j] for j in range(len(entries)) if k in labels[j]) <= 0:
                raise TensorError(f"no positive-weight entry is purebred for type {k}")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.entries[0].m

    @property
    def d(self) -> int:
        return self.entries[0].d

    def class_weight(self, k: int) -> float:
        return float(sum(self.weights[j] for j in range(len(self.entries)) if k in self.labels[j]))

    @property
    def nu_lower(self) -> float:
        return min(self.class_weight(k) for k in range(self.m))

    def purebred_mask(self, k: int) -> np.ndarray:
        return np.array([k in lab for lab in self.labels])


def canonical_catalog(m: int, d: int) -> OperatorCatalog:
    """The m canonical purebred operators with equal weights."""
    return OperatorCatalog(tuple(canonical_purebred(m, d, k) for k in range(m)), np.full(m, 1.0 / m))


@dataclass(frozen=True, eq=False)
class OperatorStream:
    catalog: OperatorCatalog
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[tuple[PsoTensor, frozenset]]:
        for j in self.indices:
            yield self.catalog.entries[j], self.catalog.labels[j]


def sample_indices(catalog: OperatorCatalog, seed: int, shape) -> np.ndarray:
    rng = generator(seed, 0x5054)
    return rng.choice(len(catalog.entries), size=shape, p=catalog.weights)


def sample_stream(catalog: OperatorCatalog, seed: int, n: int) -> OperatorStream:
    """n i.i.d. draws from the catalog, reproducible from ``seed``."""
    if n < 0:
        raise TensorError("stream length must be non-negative")
    return OperatorStream(catalog, sample_indices(catalog, seed, n))


def iterate_rds(stream, x0) -> np.ndarray:
    """Trajectory x0, V1 x0, V2 V1 x0, ...; shape (n+1, m)."""
    x = as_simplex_points(x0)[0]
    out = [x]
    for V, _ in stream:
        x = apply(V, x)
        out.append(x)
    return np.array(out)


def apply_indexed(catalog: OperatorCatalog, idx: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Apply entry idx[r] of the catalog to row r of X."""
    Y = np.empty_like(X)
    for j, V in enumerate(catalog.entries):
        rows = idx == j
        if rows.any():
            Y[rows] = apply(V, X[rows])
    return Y


def iterate_batch(catalog: OperatorCatalog, indices: np.ndarray, X0, record: bool = False):
    """Iterate many replicas at once; indices has shape (R, n), X0 shape (R, m).

    Returns the final states, or the whole (n+1, R, m) history with ``record``.
    """
    X = np.array(X0, dtype=float)
    hist = [X.copy()] if record else None
    for t in range(indices.shape[1]):
        X = apply_indexed(catalog, indices[:, t], X)
        if record:
            hist.append(X.copy())
    return np.array(hist) if record else X


# ---------------------------------------------------------------------------
# file format

_LINE = re.compile(r"^\(\s*([\d\s,]+)\)\s+(\d+)\s+(\S+)$")


def format_tensor(V: PsoTensor) -> str:
    """Text form: ``m``/``d`` header lines, then ``(i1,...,id) k value`` per non-zero entry."""
    lines = [f"m {V.m}", f"d {V.d}"]
    for key, row in zip(V.keys, V._table):
        for k in range(V.m):
            if row[k] != 0.0:
                lines.append(f"({','.join(str(i) for i in key)}) {k} {float(row[k])!r}")
    return "\n".join(lines) + "\n"


def parse_tensor(text: str) -> PsoTensor:
    """Parse the text form; errors name the first offending line or key."""
    m = d = None
    entries: dict[tuple[int, ...], np.ndarray] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("m "):
            m = int(line.split()[1])
            continue
        if line.startswith("d "):
            d = int(line.split()[1])
            continue
        if m is None or d is None:
            raise TensorError(f"line {lineno}: m and d must precede the entries")
        mt = _LINE.match(line)
        if not mt:
            raise TensorError(f"line {lineno}: cannot parse {raw!r}")
        key = tuple(int(s) for s in mt.group(1).replace(",", " ").split())
        try:
            k, val = int(mt.group(2)), float(mt.group(3))
        except ValueError:
            raise TensorError(f"line {lineno}: invalid value in {raw!r}") from None
        if len(key) != d:
            raise TensorError(f"line {lineno}: key {key} has {len(key)} parents, expected {d}")
        if list(key) != sorted(key):
            raise TensorError(f"line {lineno}: key {key} is not sorted")
        if any(not 0 <= i < m for i in key) or not 0 <= k < m:
            raise TensorError(f"line {lineno}: key {key} child {k} out of range for m={m}")
        entries.setdefault(key, np.zeros(m))[k] += val
    if m is None or d is None:
        raise TensorError("missing m or d header")
    for key in multisets(m, d):
        entries.setdefault(key, np.zeros(m))
    return PsoTensor(m, d, entries)


def load_tensor(path) -> PsoTensor:
    with open(path) as fh:
        return parse_tensor(fh.read())


def save_tensor(V: PsoTensor, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_tensor(V))


# ---------------------------------------------------------------------------
# randomized property suite


def _random_point(m: int, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet point, sometimes pushed towards a vertex or onto a face."""
    x = rng.dirichlet(np.full(m, rng.choice([0.1, 1.0, 10.0])))
    r = rng.random()
    if r < 0.2:
        x[rng.integers(m)] += 10.0 ** rng.uniform(1, 8)
        x /= x.sum()
    elif r < 0.4:
        x[rng.integers(m)] = 0.0
        x /= x.sum()
    return renormalize(x, tol=1e-9)


def _random_volterra_with_purebred(m: int, d: int, rng: np.random.Generator) -> PsoTensor:
    while True:
        pb = [k for k in range(m) if rng.random() < 0.5]
        try:
            return random_pso(m, d, rng, "volterra", concentration=float(rng.choice([0.2, 1.0])), purebred=pb)
        except TensorError:
            continue


def property_suite(n_cases: int, seed: int, m_range=(2, 4), d_range=(2, 3)) -> dict:
    """Count violations of the operator properties over random cases.

    Each property gets ``n_cases`` fresh (operator, point) draws:
    simplex preservation, vertex fixedness, face invariance, both height
    bounds, all-purebred implies Volterra, and the Lipschitz factor d*m.
    """
    rng = generator(seed, 0x5053)
    out = {k: 0 for k in ("simplex", "vertex", "face", "height_bounds", "all_purebred_volterra", "lipschitz")}
    worst = {"simplex_drift": 0.0, "lipschitz_ratio": 0.0}

    def dims():
        return int(rng.integers(m_range[0], m_range[1] + 1)), int(rng.integers(d_range[0], d_range[1] + 1))

    for _ in range(n_cases):
        m, d = dims()
        V = random_pso(m, d, rng, str(rng.choice(["general", "volterra"])))
        y = apply(V, _random_point(m, rng))
        drift = abs(y.sum() - 1.0)
        worst["simplex_drift"] = max(worst["simplex_drift"], float(drift))
        out["simplex"] += bool(np.any(y < 0) or drift > SUM_TOL)

        m, d = dims()
        V = random_pso(m, d, rng, "volterra")
        k = int(rng.integers(m))
        e = np.zeros(m)
        e[k] = 1.0
        out["vertex"] += not np.array_equal(apply(V, e), e)

        m, d = dims()
        V = random_pso(m, d, rng, "volterra")
        zero = rng.random(m) < 0.5
        zero[int(rng.integers(m))] = False
        x = np.zeros(m)
        x[~zero] = rng.dirichlet(np.ones(int((~zero).sum())))
        x = renormalize(x, tol=1e-9)
        out["face"] += bool(np.any(apply(V, x)[zero] != 0.0))

        m, d = dims()
        V = _random_volterra_with_purebred(m, d, rng)
        out["height_bounds"] += bool(check_height_bounds(V, _random_point(m, rng))["violations"])

        m = int(rng.integers(2, 4))
        d = m + int(rng.integers(1, 3))
        out["all_purebred_volterra"] += not is_volterra(random_pso(m, d, rng, "all_purebred"))

        m, d = dims()
        V = random_pso(m, d, rng, "volterra")
        x, z = _random_point(m, rng), _random_point(m, rng)
        if rng.random() < 0.5:
            z = renormalize(x + 1e-3 * (z - x), tol=1e-9)
        gap = np.linalg.norm(x - z)
        diff = np.linalg.norm(apply(V, x) - apply(V, z))
        # images are rounded to ulps of 1, which dominates for gaps near 1e-16
        out["lipschitz"] += bool(diff > d * m * gap + LIPSCHITZ_ABS_SLACK)
        if gap > 1e-12:
            worst["lipschitz_ratio"] = max(worst["lipschitz_ratio"], float(diff / gap / (d * m)))
    return {"n_cases": n_cases, "violations": out, "worst": worst,
            "passed": not any(out.values())}
