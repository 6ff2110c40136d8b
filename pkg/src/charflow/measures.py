"""Signed atomic measures: Jordan decomposition, push-forward, pairings,
and an exact bounded-Lipschitz (flat) metric.

A measure is a finite list of weighted atoms.  Atoms whose positions agree
within an absolute tolerance are merged on construction (floating-point
flows can collapse distinct atoms; merging keeps the total variation well
defined), and zero weights are pruned, so Jordan decomposition is just a
split by weight sign.

The flat distance

    sup { integral of phi d(mu - nu) : |phi|_inf <= scale, Lip(phi) <= 1 }

is exact for atomic measures: the supremum is attained by a function
supported on the atoms, so it is a finite linear program in the values
phi(x_i).  The all-pairs Lipschitz constraints are applied lazily
(constraint generation): the LP is solved over a nearest-neighbor subset,
violated pairs are added, and the loop repeats until none remain, at which
point the relaxed optimum is feasible for - hence equal to - the full LP.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .errors import DomainError, PushforwardError, SizeError

__all__ = [
    "SignedParticleMeasure",
    "TestFunction",
    "bump_bank",
    "jordan_decompose",
    "pushforward",
    "pair",
    "pair_gradient",
    "flat_distance",
    "load_measure_csv",
    "save_measure_csv",
]

MERGE_TOL = 1e-12


def _merge_atoms(positions: np.ndarray, weights: np.ndarray, tol: float):
    """Merge atoms with coincident positions (chebyshev distance <= tol).

    Stable: each merged atom keeps the position and order slot of its
    group's first occurrence.  Returns (positions, weights, merged_flag).
    """
    n = len(weights)
    if n == 0:
        return positions, weights, False
    close = cKDTree(positions).query_pairs(tol, p=np.inf)
    if not close:
        return positions, weights, False
    root = np.arange(n)

    def find(i):
        while root[i] != i:
            root[i] = root[root[i]]
            i = root[i]
        return i

    for i, j in close:
        ri, rj = find(i), find(j)
        if ri != rj:
            root[max(ri, rj)] = min(ri, rj)  # representative = first occurrence
    reps = np.array([find(i) for i in range(n)])
    uniq, inverse = np.unique(reps, return_inverse=True)
    sums = np.zeros(len(uniq))
    np.add.at(sums, inverse, weights)
    return positions[uniq], sums, True


class SignedParticleMeasure:
    """Finitely many weighted atoms representing a signed measure on R^d.

    Construction merges coincident atoms and prunes zero weights; the
    ``merged`` flag records whether either happened (the renormalization
    and tracking invariants only apply to merge-free objects).  Instances
    are immutable values.
    """

    __slots__ = ("positions", "weights", "dimension", "merged")

    def __init__(self, positions, weights, dimension: int | None = None):
        pos = np.atleast_2d(np.asarray(positions, float))
        w = np.asarray(weights, float).ravel()
        if w.size == 0:
            pos = pos.reshape(0, dimension if dimension else pos.shape[-1] if pos.size else 1)
        if pos.shape[0] != w.size:
            raise DomainError("need one weight per atom position")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(w))):
            raise DomainError("atom data must be finite")
        pos, w, merged = _merge_atoms(pos, w, MERGE_TOL)
        live = w != 0.0
        if not np.all(live):
            merged = True
            pos, w = pos[live], w[live]
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dimension", int(pos.shape[1]) if pos.size else
                           int(dimension or pos.shape[-1] or 1))
        object.__setattr__(self, "merged", merged)

    def __setattr__(self, *a):
        raise AttributeError("SignedParticleMeasure is immutable")

    @staticmethod
    def empty(dimension: int) -> "SignedParticleMeasure":
        return SignedParticleMeasure(np.zeros((0, dimension)), np.zeros(0), dimension)

    @staticmethod
    def dirac(position, weight: float = 1.0) -> "SignedParticleMeasure":
        return SignedParticleMeasure([position], [weight])

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    def __add__(self, other: "SignedParticleMeasure") -> "SignedParticleMeasure":
        if other.n_atoms and self.n_atoms and other.dimension != self.dimension:
            raise DomainError("dimension mismatch")
        dim = self.dimension if self.n_atoms else other.dimension
        return SignedParticleMeasure(
            np.concatenate([self.positions.reshape(-1, dim), other.positions.reshape(-1, dim)]),
            np.concatenate([self.weights, other.weights]), dim)

    def __neg__(self) -> "SignedParticleMeasure":
        return SignedParticleMeasure(self.positions.copy(), -self.weights, self.dimension)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c: float) -> "SignedParticleMeasure":
        return SignedParticleMeasure(self.positions.copy(), c * self.weights, self.dimension)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SignedParticleMeasure({self.n_atoms} atoms, d={self.dimension}, TV={self.total_variation:g})"

    def is_close_to(self, other: "SignedParticleMeasure", tol: float = 0.0) -> bool:
        """Atomwise equality of the merged difference, to an absolute weight tolerance."""
        diff = self - other
        return diff.n_atoms == 0 or np.max(np.abs(diff.weights)) <= tol


def jordan_decompose(mu: SignedParticleMeasure):
    """Split into mutually singular nonnegative parts (mu = plus - minus)."""
    pos_mask = mu.weights > 0
    plus = SignedParticleMeasure(mu.positions[pos_mask], mu.weights[pos_mask], mu.dimension)
    minus = SignedParticleMeasure(mu.positions[~pos_mask], -mu.weights[~pos_mask], mu.dimension)
    return plus, minus


def pushforward(mu: SignedParticleMeasure, mapping: Callable) -> SignedParticleMeasure:
    """Image measure: atoms mapped, weights unchanged, coincident images merged.

    ``mapping`` takes a batch (n, d) or a single point (d,); a failure on
    any atom aborts the operation naming that atom.
    """
    if mu.n_atoms == 0:
        return mu
    try:
        out = np.asarray(mapping(mu.positions), float)
        if out.shape[0] != mu.n_atoms:
            raise ValueError("mapping did not return one point per atom")
    except Exception:
        rows = []
        for i, p in enumerate(mu.positions):
            try:
                q = np.asarray(mapping(p), float).ravel()
                if not np.all(np.isfinite(q)):
                    raise ValueError("non-finite image")
                rows.append(q)
            except Exception as inner:
                raise PushforwardError(
                    f"pushforward failed on atom {i} at {p.tolist()}: {inner}",
                    atom_index=i, position=p.copy()) from inner
        out = np.stack(rows)
    if not np.all(np.isfinite(out)):
        i = int(np.argmax(~np.all(np.isfinite(out), axis=-1)))
        raise PushforwardError(f"pushforward produced non-finite image for atom {i}",
                               atom_index=i, position=mu.positions[i].copy())
    return SignedParticleMeasure(out, mu.weights.copy(), mu.dimension)


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """Compactly supported C^1 bump with explicit gradient.

    phi(x) = (1 - |z|^2)^3 for z = (x - center)/radius inside the unit
    ball, 0 outside; grad phi = -6 z (1 - |z|^2)^2 / radius.
    """

    __test__ = False  # not a pytest class, despite the name

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise DomainError("bump radius must be positive")

    def value(self, x):
        z = (np.asarray(x, float) - np.asarray(self.center)) / self.radius
        q = np.sum(z * z, axis=-1)
        return np.where(q < 1.0, (1.0 - np.minimum(q, 1.0)) ** 3, 0.0)

    def gradient(self, x):
        x = np.asarray(x, float)
        z = (x - np.asarray(self.center)) / self.radius
        q = np.sum(z * z, axis=-1, keepdims=True)
        inside = q < 1.0
        return np.where(inside, -6.0 * z * (1.0 - np.minimum(q, 1.0)) ** 2 / self.radius, 0.0)


def bump_bank(dim: int, n: int, *, box: float = 0.8, radius: float = 0.45,
              seed: int = 0) -> list[TestFunction]:
    """Seeded bank of bumps with centers scattered in [-box, box]^dim."""
    rng = np.random.default_rng(seed)
    return [TestFunction(tuple(rng.uniform(-box, box, dim)), radius) for _ in range(n)]


def pair(mu: SignedParticleMeasure, phi: TestFunction) -> float:
    """<mu, phi> = sum of w_i phi(x_i)."""
    if mu.n_atoms == 0:
        return 0.0
    return float(np.sum(mu.weights * phi.value(mu.positions)))


def pair_gradient(mu: SignedParticleMeasure, phi: TestFunction, field, t: float) -> float:
    """<mu, <V(t,.), grad phi>> = sum of w_i <V(t, x_i), grad phi(x_i)>."""
    if mu.n_atoms == 0:
        return 0.0
    vel = field(t, mu.positions)
    return float(np.sum(mu.weights * np.sum(vel * phi.gradient(mu.positions), axis=-1)))


# ---------------------------------------------------------------------------
# Flat (bounded-Lipschitz) distance
# ---------------------------------------------------------------------------

def _violated_pairs(pts: np.ndarray, phi: np.ndarray, have: set, tol: float, cap: int):
    """All-pairs scan for |phi_i - phi_j| > d_ij + tol, blocked for memory."""
    m = len(pts)
    found = []
    block = max(1, int(2e6 // max(m, 1)))
    for a in range(0, m, block):
        b = min(a + block, m)
        d = np.sqrt(np.maximum(
            np.sum((pts[a:b, None, :] - pts[None, :, :]) ** 2, axis=-1), 0.0))
        gap = np.abs(phi[a:b, None] - phi[None, :]) - d
        ii, jj = np.nonzero(gap > tol)
        for i, j in zip(ii, jj):
            gi, gj = a + int(i), int(j)
            if gi < gj and (gi, gj) not in have:
                found.append((float(gap[i, j]), gi, gj))
    found.sort(reverse=True)
    return [(i, j) for _, i, j in found[:cap]]


def _lipschitz_rows(pts: np.ndarray, pairs_list: list):
    rows = []
    cols = []
    vals = []
    rhs = []
    for r, (i, j) in enumerate(pairs_list):
        d = float(np.linalg.norm(pts[i] - pts[j]))
        rows += [2 * r, 2 * r, 2 * r + 1, 2 * r + 1]
        cols += [i, j, i, j]
        vals += [1.0, -1.0, -1.0, 1.0]
        rhs += [d, d]
    a = sparse.coo_matrix((vals, (rows, cols)), shape=(2 * len(pairs_list), len(pts)))
    return a.tocsr(), np.asarray(rhs)


def flat_distance(mu: SignedParticleMeasure, nu: SignedParticleMeasure, scale: float,
                  *, n_max: int = 2000, tol: float = 1e-11) -> float:
    """Exact bounded-Lipschitz distance between two atomic measures.

    Maximizes sum w_i phi_i subject to |phi_i - phi_j| <= |x_i - x_j| and
    |phi_i| <= scale over the merged difference mu - nu.  Atom counts above
    ``n_max`` are refused (the LP is quadratic in the support size).
    """
    if scale <= 0:
        raise DomainError("flat_distance needs scale > 0")
    if mu.n_atoms > n_max or nu.n_atoms > n_max:
        raise SizeError(f"measure exceeds n_max={n_max} atoms")
    diff = mu - nu
    m = diff.n_atoms
    if m == 0:
        return 0.0
    pts = diff.positions
    w = diff.weights
    if m == 1:
        return float(abs(w[0]) * scale)

    if m <= 350:
        pair_set = {(i, j) for i in range(m) for j in range(i + 1, m)}
    else:
        k = min(12, m - 1)
        _, idx = cKDTree(pts).query(pts, k=k + 1)
        pair_set = set()
        for i in range(m):
            for j in idx[i, 1:]:
                a, b = (i, int(j)) if i < j else (int(j), i)
                if a != b:
                    pair_set.add((a, b))
    pairs_list = sorted(pair_set)

    for _ in range(60):
        a_ub, b_ub = _lipschitz_rows(pts, pairs_list)
        res = linprog(-w, A_ub=a_ub, b_ub=b_ub, bounds=(-scale, scale), method="highs")
        if res.status != 0:
            raise DomainError(f"flat-distance LP failed: {res.message}")
        phi = res.x
        new = _violated_pairs(pts, phi, pair_set, tol, cap=200_000)
        if not new:
            return max(0.0, float(-res.fun))
        pair_set.update(new)
        pairs_list.extend(new)
    raise DomainError("flat-distance constraint generation did not converge")


# ---------------------------------------------------------------------------
# CSV I/O (one row per atom: d position columns then the weight)
# ---------------------------------------------------------------------------

def load_measure_csv(path: str) -> SignedParticleMeasure:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from exc
            if len(vals) < 2:
                raise DomainError(f"{path}:{lineno}: need d position columns plus a weight")
            rows.append(vals)
    if not rows:
        return SignedParticleMeasure.empty(1)
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise DomainError(f"{path}: inconsistent column counts {sorted(width)}")
    arr = np.asarray(rows, float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{path}: non-finite atom data")
    if np.any(arr[:, -1] == 0.0):
        raise DomainError(f"{path}: zero atom weights are not allowed")
    return SignedParticleMeasure(arr[:, :-1], arr[:, -1])


def save_measure_csv(path: str, mu: SignedParticleMeasure, header: Iterable[str] = ()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        for p, w in zip(mu.positions, mu.weights):
            writer.writerow([format(v, ".17g") for v in (*p, w)])
