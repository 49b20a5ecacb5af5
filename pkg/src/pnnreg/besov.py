"""Multilevel B-spline decompositions, Besov sequence norms and sparse approximation.

Everything here is one-dimensional on [0, 1].  A level-``k`` atom is
``M_m(2^k x - i)`` (shift ``s = i / 2^k``); the atoms touching [0, 1] are
``i = -m .. 2^k - 1``.

The decomposition of ``f`` up to level ``K`` is

    Q_0 f + sum_{k=1..K} (Q_k f - Q_{k-1} f)

where ``Q_k`` is a local quasi-interpolant reproducing level-``k`` splines and
each difference is written in the level-``k`` basis via the two-scale relation
``M_m(x) = 2^-m sum_l C(m+1, l) M_m(2x - l)``.  The sum telescopes to ``Q_K f``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numkern import lp_norm_p
from .pnn import ParallelNet, atomic_write_text, to_constrained_form
from .splinenet import ConstructedNet, SplineAtom, bspline_eval, build_bspline_net


@lru_cache(maxsize=None)
def dual_functional(m: int):
    """Sample offsets and weights of the local dual functional.

    Returns ``(t, lam)``: the coefficient of ``M_m(y - i)`` in a spline
    ``g(y) = sum_r a_r M_m(y - r)`` is ``a_i = sum_l lam[l] * g(i + t[l])``.
    The samples sit in the single knot cell ``[c, c+1]`` with ``c = floor(m/2)``.
    """
    c = m // 2
    if m == 0:
        return (np.array([0.5]), np.array([1.0]))
    pts = c + np.arange(m + 1) / m
    # A[l, q] = M_m(pts[l] - (c - m + q)), q indexes the m+1 B-splines alive on the cell
    q = np.arange(m + 1)
    A = bspline_eval(m, pts[:, None] - (c - m + q)[None, :])
    row = np.linalg.solve(A.T, np.eye(m + 1)[:, m - c])
    return pts, row


def _poly_extend(f, m: int):
    """Wrap ``f`` so that outside [0, 1] it continues as the degree-``m`` polynomial
    interpolating ``f`` on the boundary cell ``[0, 1/(m+1)]`` (resp. ``[m/(m+1), 1]``)."""
    deg = max(m, 0)
    h = 1.0 / (deg + 1) if deg else 1.0
    nodes_l = np.linspace(0.0, h, deg + 1)
    nodes_r = np.linspace(1.0 - h, 1.0, deg + 1)
    cl = np.polyfit(nodes_l, np.asarray(f(nodes_l), dtype=np.float64), deg)
    cr = np.polyfit(nodes_r, np.asarray(f(nodes_r), dtype=np.float64), deg)

    def g(x):
        x = np.asarray(x, dtype=np.float64)
        inside = np.clip(x, 0.0, 1.0)
        out = np.asarray(f(inside), dtype=np.float64).copy()
        out = np.where(x < 0, np.polyval(cl, x), out)
        return np.where(x > 1, np.polyval(cr, x), out)

    return g


def level_shifts(m: int, k: int) -> np.ndarray:
    """Integer shift indices ``i`` of level-``k`` atoms whose support meets [0, 1]."""
    return np.arange(-m, 2**k)


def quasi_interpolant_level(f, m: int, k: int) -> np.ndarray:
    """Coefficients of ``Q_k f`` on :func:`level_shifts` (``f`` vectorized)."""
    t, lam = dual_functional(m)
    idx = level_shifts(m, k)
    pts = (idx[:, None] + t[None, :]) / 2.0**k
    vals = np.asarray(f(pts.ravel()), dtype=np.float64).reshape(pts.shape)
    return vals @ lam


def refine(coeffs: np.ndarray, m: int, k: int) -> np.ndarray:
    """Level-``k`` coefficients of the level ``k-1`` spline with ``coeffs``."""
    mask = np.array([math.comb(m + 1, l) for l in range(m + 2)]) / 2.0**m
    fine = np.zeros(2**k + m)
    lo = -m
    for i, c in zip(level_shifts(m, k - 1), coeffs):
        if c == 0:
            continue
        for l in range(m + 2):
            j = 2 * i + l
            if lo <= j < 2**k:
                fine[j - lo] += c * mask[l]
    return fine


@dataclass
class SplineDecomposition:
    """Per-level coefficient arrays ``levels[k]`` aligned with ``level_shifts(m, k)``."""

    m: int
    levels: list
    meta: dict = field(default_factory=dict)

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1

    def atoms(self, nonzero: bool = True) -> list:
        out = []
        for k, cs in enumerate(self.levels):
            for i, c in zip(level_shifts(self.m, k), cs):
                if c != 0 or not nonzero:
                    out.append(SplineAtom(self.m, k, (i / 2.0**k,), float(c)))
        return out

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for k, cs in enumerate(self.levels):
            y = (2.0**k) * x
            for i, c in zip(level_shifts(self.m, k), cs):
                if c != 0:
                    out += c * bspline_eval(self.m, y - i)
        return out

    def __add__(self, other: "SplineDecomposition") -> "SplineDecomposition":
        if other.m != self.m or other.max_level != self.max_level:
            raise ValueError("decompositions must share order and depth")
        return SplineDecomposition(self.m, [a + b for a, b in zip(self.levels, other.levels)])


def quasi_interpolant(f, m: int, k_bar: int, d: int = 1, extend: str | None = None,
                      grid: np.ndarray | None = None) -> SplineDecomposition:
    """Multilevel decomposition of ``f`` whose sum is ``Q_{k_bar} f``.

    ``f`` is sampled slightly outside [0, 1] near the ends.  Pass
    ``extend="poly"`` when ``f`` is only defined on [0, 1]; it is then
    continued by the boundary-cell interpolating polynomial of degree ``m``.
    The sup residual on ``grid`` (default 2048 points) is stored in ``meta``.
    """
    if d != 1:
        raise NotImplementedError("only d = 1 decompositions are supported")
    if m < 0 or k_bar < 0:
        raise ValueError("order and level must be non-negative")
    g = _poly_extend(f, m) if extend == "poly" else f
    prev = None
    levels = []
    for k in range(k_bar + 1):
        q = quasi_interpolant_level(g, m, k)
        levels.append(q if prev is None else q - refine(prev, m, k))
        prev = q
    dec = SplineDecomposition(m, levels)
    grid = np.linspace(0.0, 1.0, 2048) if grid is None else grid
    dec.meta["residual_sup"] = float(np.max(np.abs(dec(grid) - np.asarray(f(grid), dtype=np.float64))))
    return dec


def sequence_norm(dec: SplineDecomposition, alpha: float, p: float, q: float = math.inf, d: int = 1) -> float:
    """``|| { 2^{(alpha - d/p) k} ||c_k||_p }_k ||_q``."""
    if p < 1 or (q != math.inf and q < 1):
        raise ValueError("need p, q >= 1")
    if not dec.levels:
        return 0.0
    per = np.array([2.0 ** ((alpha - d / p) * k) * lp_norm_p(c, p) ** (1.0 / p) if len(c) else 0.0
                    for k, c in enumerate(dec.levels)])
    if q == math.inf:
        return float(per.max())
    return float(np.sum(per**q) ** (1.0 / q))


@dataclass
class SparseApprox:
    atoms: list
    budget: int
    target_error: float = math.nan
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.atoms)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for a in self.atoms:
            out += a(x)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "k", "s", "coeff"])
        for a in self.atoms:
            w.writerow([a.m, a.k, repr(a.s[0]), repr(a.coeff)])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "SparseApprox":
        rows = list(csv.DictReader(io.StringIO(text)))
        atoms = [SplineAtom(int(r["m"]), int(r["k"]), (float(r["s"]),), float(r["coeff"])) for r in rows]
        return cls(atoms, len(atoms))


def base_levels(m: int, budget: int, d: int = 1) -> int:
    """Deepest level ``K`` with all atoms of levels ``0..K`` fitting the budget (-1 if none)."""
    total, K = 0, -1
    while total + 2 ** (K + 1) + m <= budget:
        K += 1
        total += 2**K + m
    return K


def _greedy_order(atoms, K: int) -> tuple:
    """Atoms of levels <= K first, then finer ones by decreasing |coeff|.

    Returns ``(order, nbase)``.  Ties go to the lower level, then the smaller shift.
    """
    key = lambda a: (-abs(a.coeff), a.k, a.s)  # noqa: E731
    base = sorted((a for a in atoms if a.k <= K), key=key)
    rest = sorted((a for a in atoms if a.k > K), key=key)
    return base + rest, len(base)


def greedy_sparse_approx(dec: SplineDecomposition, budget: int, grid: np.ndarray | None = None,
                         truth=None) -> SparseApprox:
    """At most ``budget`` atoms: whole coarse levels, then the largest finer coefficients.

    For every base depth the budget allows, atoms are added in greedy order and
    the L2 distance (on ``grid``) to the full decomposition is tracked after each
    one; the best prefix over all depths is returned.  A larger budget only adds
    candidates, so the error never goes up with the budget.  If ``truth`` is
    given the L2 grid error against it is stored as ``target_error``.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    atoms = dec.atoms(nonzero=True)
    grid = np.linspace(0.0, 1.0, 2048) if grid is None else grid
    if budget >= len(atoms):
        chosen = atoms
    else:
        full = dec(grid)
        cache: dict = {}
        best = (math.inf, 0, [])
        for K in range(-1, base_levels(dec.m, budget) + 1):
            order, nbase = _greedy_order(atoms, K)
            if nbase > budget:
                continue
            resid = full.copy()
            for count, a in enumerate(order[:budget], start=1):
                key = (a.k, a.s)
                if key not in cache:
                    cache[key] = a(grid)
                resid -= cache[key]
                if count >= max(nbase, 1):
                    err = float(np.mean(resid**2))
                    if err < best[0]:
                        best = (err, count, order[:count])
        chosen = sorted(best[2], key=lambda a: (a.k, a.s))
    approx = SparseApprox(chosen, budget)
    if truth is not None:
        approx.target_error = float(np.sqrt(np.mean((approx(grid) - truth(grid)) ** 2)))
    return approx


def weighted_lp_coefficient_norm(approx: SparseApprox, p: float) -> float:
    """``|| { 2^{k_i} c_i } ||_p`` over the atoms of ``approx``."""
    v = np.array([2.0**a.k * a.coeff for a in approx.atoms])
    return lp_norm_p(v, p) ** (1.0 / p) if v.size else 0.0


def assemble_approx_net(approx: SparseApprox, epsilon_net: float, c1: float = 1.0) -> ParallelNet:
    """One parallel net for the whole sparse approximation.

    Each atom contributes the subnetworks of its B-spline construction with
    the term coefficient times the atom coefficient folded into the output
    layer.  ``meta`` reports the measured ``||a||_{2/L}^{2/L}`` of the
    constrained form and the per-subnetwork atom index.
    """
    if not approx.atoms:
        raise ValueError("empty approximation")
    blocks, owners = [], []
    for idx, atom in enumerate(approx.atoms):
        nets, a = build_bspline_net(atom.m, atom.k, atom.s, atom.d, epsilon_net)
        for net, aj in zip(nets, a):
            blocks.append((net, atom.coeff * aj))
            owners.append(idx)
    width = max(max(n.widths()) for n, _ in blocks)
    depth = max(n.depth for n, _ in blocks)
    subs = [_pad_depth(n.scaled(c), depth).to_subnetwork(width) for n, c in blocks]
    pn = ParallelNet.from_subnets(subs, {"target": "sparse-bspline", "epsilon": epsilon_net,
                                         "owners": owners})
    pn.meta["budget_2_over_L"] = to_constrained_form(pn, c1).budget
    return pn


def _pad_depth(net, depth: int):
    """Append identity layers before the output layer (exact for ReLU outputs >= 0)."""
    W, B = list(net.weights), list(net.biases)
    while len(W) < depth:
        w = W[-1].shape[1]
        W.insert(len(W) - 1, np.eye(w))
        B.insert(len(B) - 1, np.zeros(w))
    return ConstructedNet(W, B, net.target, net.epsilon, dict(net.meta))


def lp_power_bound(a, p_prime: float, p: float) -> tuple:
    """Both sides of ``||a||_{p'}^{p'} <= Mbar^{1 - p'/p} ||a||_p^{p'}`` for ``0 < p' < p``."""
    if not 0 < p_prime < p:
        raise ValueError("need 0 < p' < p")
    a = np.asarray(a, dtype=np.float64).ravel()
    lhs = lp_norm_p(a, p_prime)
    rhs = a.size ** (1.0 - p_prime / p) * lp_norm_p(a, p) ** (p_prime / p)
    return lhs, rhs
