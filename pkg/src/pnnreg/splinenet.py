"""Cardinal B-splines and explicit ReLU networks that approximate them.

The constructions are:

* a multiplication gadget ``f_x(x, y) ~ x*y`` on [0, 1]^2 built from the
  sawtooth approximation of ``u**2`` (error ``2**(-2t-2)`` with ``t`` teeth)
  and the polarisation identity ``xy = 2[((x+y)/2)^2 - (x/2)^2 - (y/2)^2]``;
  it returns exactly 0 when either input is 0;
* truncated powers ``x_+^m`` by binary exponentiation over chained gadgets;
* B-spline basis networks, one subnetwork per truncated-power term of the
  symmetric representation ``M_m(x) = sum_j c_j ((min(x, m+1-x) - j)/h)_+^m``.

Networks are plain lists of weight matrices and bias vectors with ReLU between
layers and an affine output layer, the same convention as :mod:`pnnreg.pnn`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .pnn import ParallelNet, Subnetwork


def bspline_eval(m: int, x) -> np.ndarray | float:
    """Cardinal B-spline of order (degree) ``m`` with support [0, m+1].

    Evaluated from the truncated-power formula on the folded argument
    ``min(x, m+1-x)``, which keeps only terms with ``j < (m+1)/2`` and avoids
    the cancellation the plain sum suffers near the right end.
    """
    if m < 0:
        raise ValueError("order must be non-negative")
    xa = np.asarray(x, dtype=np.float64)
    u = np.minimum(xa, (m + 1) - xa)
    out = np.zeros_like(u)
    inside = (xa >= 0) & (xa <= m + 1)
    if m == 0:
        out = np.where((xa >= 0) & (xa < 1), 1.0, 0.0)
    else:
        for j in range((m + 2) // 2):
            out = out + (-1) ** j * math.comb(m + 1, j) * np.maximum(u - j, 0.0) ** m
        out = np.where(inside, np.maximum(out / math.factorial(m), 0.0), 0.0)
    return float(out) if np.ndim(x) == 0 else out


def bspline_eval_multi(m: int, k: int, s, x) -> np.ndarray | float:
    """Tensor-product B-spline ``prod_i M_m(2^k (x_i - s_i))``.

    ``x`` may be a single point of shape (d,) or a batch of shape (n, d).
    """
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    xa = np.asarray(x, dtype=np.float64)
    single = xa.ndim <= 1
    pts = xa.reshape(1, -1) if single else xa
    if pts.shape[1] != s.shape[0]:
        raise ValueError("dimension mismatch between shift and point")
    vals = np.prod(bspline_eval(m, (2.0**k) * (pts - s[None, :])), axis=1)
    return float(vals[0]) if single else vals


@dataclass(frozen=True)
class SplineAtom:
    """Coefficient times ``M_m(2^k (x - s))``; support is ``s <= x <= s + (m+1)/2^k`` per coordinate."""

    m: int
    k: int
    s: tuple
    coeff: float = 1.0

    def __post_init__(self):
        if self.m < 0 or self.k < 0:
            raise ValueError("order and level must be non-negative")
        object.__setattr__(self, "s", tuple(float(v) for v in np.atleast_1d(self.s)))

    @property
    def d(self) -> int:
        return len(self.s)

    def support(self):
        width = (self.m + 1) / 2.0**self.k
        return [(v, v + width) for v in self.s]

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.d == 1 and x.ndim <= 1:
            return self.coeff * bspline_eval(self.m, (2.0**self.k) * (x - self.s[0]))
        return self.coeff * bspline_eval_multi(self.m, self.k, self.s, x)


def truncated_power_terms(m: int):
    """``(scale, shifts, coeffs)`` with ``M_m(x) = sum_j coeffs[j] * ((u - shifts[j]) / scale)_+^m``.

    ``u = min(x, m+1-x)``; ``scale = (m+1)/2`` maps the used range of ``u`` onto [0, 1].
    """
    h = (m + 1) / 2.0
    nterms = math.ceil((m + 1) / 2)
    shifts = np.arange(nterms, dtype=np.float64)
    coeffs = np.array([(-1) ** j * math.comb(m + 1, j) * h**m / math.factorial(m) for j in range(nterms)])
    return h, shifts, coeffs


# --------------------------------------------------------------------------
# layer-graph builder

class _Builder:
    """Builds a ReLU net layer by layer from named channels.

    Every hidden layer is a list of neurons ``relu(sum coef*channel + bias)``
    whose inputs are neurons of the previous layer; a channel is a linear
    combination of previous-layer neurons.  Values that must survive several
    layers are carried through identity neurons, which is exact for the
    non-negative quantities used here.
    """

    def __init__(self, d: int):
        self.d = d
        self.layers = []  # list of (W, b)
        self.width_in = d

    def add_layer(self, rows):
        """``rows`` is a list of (dict{input_index: coef}, bias)."""
        W = np.zeros((len(rows), self.width_in))
        b = np.zeros(len(rows))
        for r, (coefs, bias) in enumerate(rows):
            for i, c in coefs.items():
                W[r, i] += c
            b[r] = bias
        self.layers.append((W, b))
        self.width_in = len(rows)

    def finish(self, coefs: dict, bias: float = 0.0):
        W = np.zeros((1, self.width_in))
        for i, c in coefs.items():
            W[0, i] += c
        self.layers.append((W, np.array([bias])))
        return [W for W, _ in self.layers], [b for _, b in self.layers]


def _combine(*pairs):
    out = {}
    for scale, lin in pairs:
        for i, c in lin.items():
            out[i] = out.get(i, 0.0) + scale * c
    return {i: c for i, c in out.items() if c != 0.0}


def _square_stage_rows(inputs, accs, teeth_left):
    """Rows of one sawtooth layer for each square unit.

    ``inputs[q]`` is the linear form (over previous neurons) of the current
    tooth argument, ``accs[q]`` the linear form of the running approximation.
    """
    rows = []
    for lin, acc in zip(inputs, accs):
        rows.append((dict(lin), 0.0))
        rows.append((dict(lin), -0.5))
        rows.append((dict(lin), -1.0))
        rows.append((dict(acc), 0.0))
    return rows


def _mul_block(builder: _Builder, pairs, carry, teeth: int):
    """Append layers computing products for ``pairs`` of input linear forms.

    ``carry`` is a list of linear forms to pass through unchanged.  Returns the
    linear forms (over the final layer's neurons) of the products and of the
    carried values.  Uses ``teeth + 1`` layers.
    """
    # clip layer: relu(x), relu(x-1) per input, and carried values
    rows = []
    for lx, ly in pairs:
        rows += [(dict(lx), 0.0), (dict(lx), -1.0), (dict(ly), 0.0), (dict(ly), -1.0)]
    rows += [(dict(c), 0.0) for c in carry]
    builder.add_layer(rows)
    args, accs = [], []
    for p in range(len(pairs)):
        cx = {4 * p: 1.0, 4 * p + 1: -1.0}
        cy = {4 * p + 2: 1.0, 4 * p + 3: -1.0}
        for lin in (_combine((0.5, cx), (0.5, cy)), _combine((0.5, cx)), _combine((0.5, cy))):
            args.append(lin)
            accs.append(lin)
    carry_forms = [{4 * len(pairs) + i: 1.0} for i in range(len(carry))]
    nsq = len(args)
    for s in range(1, teeth + 1):
        rows = _square_stage_rows(args, accs, teeth - s)
        rows += [(dict(c), 0.0) for c in carry_forms]
        builder.add_layer(rows)
        new_args, new_accs = [], []
        for q in range(nsq):
            g = {4 * q: 2.0, 4 * q + 1: -4.0, 4 * q + 2: 2.0}
            new_args.append(g)
            new_accs.append(_combine((1.0, {4 * q + 3: 1.0}), (-(0.25**s), g)))
        args, accs = new_args, new_accs
        carry_forms = [{4 * nsq + i: 1.0} for i in range(len(carry))]
    if teeth == 0:
        # no sawtooth layer: square approximated by u itself
        accs = args
    products = []
    for p in range(len(pairs)):
        a, bx, by = accs[3 * p], accs[3 * p + 1], accs[3 * p + 2]
        products.append(_combine((2.0, a), (-2.0, bx), (-2.0, by)))
    return products, carry_forms


def mul_error_bound(teeth: int) -> float:
    """Sup error of the gadget on [0,1]^2: three squares, each within 2^(-2t-2), times 2."""
    return 6.0 * 2.0 ** (-2 * teeth - 2)


def teeth_for(delta: float) -> int:
    t = 0
    while mul_error_bound(t) > delta:
        t += 1
    return t


@dataclass
class ConstructedNet:
    """Explicit ReLU network with a declared sup-error certificate."""

    weights: list
    biases: list
    target: str
    epsilon: float
    meta: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.weights[0].shape[1]

    def __call__(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        if h.ndim <= 1:
            h = h.reshape(-1, 1) if self.d == 1 else h.reshape(1, -1)
        h = h.T
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = W @ h + b[:, None]
            if l < self.depth - 1:
                h = np.maximum(h, 0.0)
        return h[0]

    def widths(self) -> list:
        return [W.shape[0] for W in self.weights[:-1]]

    def scaled(self, c: float) -> "ConstructedNet":
        W = [w.copy() for w in self.weights]
        b = [v.copy() for v in self.biases]
        W[-1] *= c
        b[-1] *= c
        return ConstructedNet(W, b, self.target, abs(c) * self.epsilon, dict(self.meta))

    def to_subnetwork(self, width: int | None = None) -> Subnetwork:
        """Zero-pad hidden layers to a common ``width`` (default: the max width)."""
        width = width or max(self.widths())
        Ws, bs = [], []
        prev_in = self.d
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            out = 1 if l == self.depth - 1 else width
            P = np.zeros((out, prev_in))
            P[: W.shape[0], : W.shape[1]] = W
            q = np.zeros(out)
            q[: b.shape[0]] = b
            Ws.append(P)
            bs.append(q)
            prev_in = out
        return Subnetwork(Ws, bs)


def build_mul_net(epsilon: float) -> ConstructedNet:
    """Two-input network with ``|f(x,y) - xy| <= epsilon`` on [0,1]^2."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    t = teeth_for(epsilon)
    b = _Builder(2)
    prods, (cx, cy) = _mul_block(b, [({0: 1.0}, {1: 1.0})], [{0: 1.0}, {1: 1.0}], t)
    # clamp to [0, min(x, y)]: never increases the error since 0 <= xy <= min(x, y),
    # and makes the output exactly zero when either input is zero
    g = prods[0]
    b.add_layer([(dict(g), 0.0), (_combine((1.0, g), (-1.0, cx)), 0.0), (dict(cy), 0.0)])
    b.add_layer([({0: 1.0, 1: -1.0}, 0.0), ({0: 1.0, 1: -1.0, 2: -1.0}, 0.0)])
    W, B = b.finish({0: 1.0, 1: -1.0})
    return ConstructedNet(W, B, "mul", epsilon, {"teeth": t, "bound": mul_error_bound(t)})


@lru_cache(maxsize=None)
def power_schedule(m: int):
    """Binary-exponentiation plan for ``x**m``.

    Returns a list of stages; each stage is a list of operations
    ``(dst, a, b)`` meaning ``dst = a * b`` where names are ``"x"``,
    ``"q{i}"`` (``x**(2**i)``) and ``"p{k}"`` (partial products).  Operations in
    one stage only read values produced by earlier stages.
    """
    if m < 1:
        raise ValueError("power must be >= 1")
    bits = [int(c) for c in reversed(bin(m)[2:])]
    ready = {"x": 0, "q0": 0}
    ops = []
    p_name = "q0" if bits[0] else None
    q_name = "q0"
    pk = 0
    for i in range(1, len(bits)):
        nq = f"q{i}"
        ops.append((nq, q_name, q_name))
        ready[nq] = ready[q_name] + 1
        q_name = nq
        if bits[i]:
            if p_name is None:
                p_name = nq
            else:
                pk += 1
                dst = f"p{pk}"
                ops.append((dst, p_name, nq))
                ready[dst] = max(ready[p_name], ready[nq]) + 1
                p_name = dst
    nstages = max(ready.values())
    stages = [[] for _ in range(nstages)]
    for dst, a, b in ops:
        stages[ready[dst] - 1].append((dst, a, b))
    return stages, p_name


def power_error_bound(m: int, delta: float) -> float:
    """Error bound propagated through the schedule: ``e(ab) <= delta + e(a) + e(b)``."""
    stages, result = power_schedule(m)
    err = {"x": 0.0, "q0": 0.0}
    for stage in stages:
        for dst, a, b in stage:
            err[dst] = delta + err[a] + err[b]
    return err[result]


def _power_layers(builder: _Builder, x_form: dict, m: int, teeth: int, extra_carry=()):
    """Append layers computing ``x_+^m`` from a linear form ``x_form`` (x >= 0 after relu).

    Returns the linear form of the result and of any ``extra_carry`` forms.
    """
    stages, result = power_schedule(m)
    # entry layer: relu(x) and extra carries
    builder.add_layer([(dict(x_form), 0.0)] + [(dict(c), 0.0) for c in extra_carry])
    forms = {"q0": {0: 1.0}}
    forms["x"] = forms["q0"]
    extras = [{1 + i: 1.0} for i in range(len(extra_carry))]
    # values that are still needed later
    for si, stage in enumerate(stages):
        needed_later = set()
        for later in stages[si + 1:]:
            for _, a, b in later:
                needed_later.update((a, b))
        needed_later.add(result)
        produced = {dst for dst, _, _ in stage}
        carry_names = sorted(n for n in needed_later if n in forms and n not in produced)
        pairs = [(forms[a], forms[b]) for _, a, b in stage]
        carry = [forms[n] for n in carry_names] + extras
        prods, carried = _mul_block(builder, pairs, carry, teeth)
        new_forms = {dst: prods[i] for i, (dst, _, _) in enumerate(stage)}
        for i, n in enumerate(carry_names):
            new_forms[n] = carried[i]
        extras = carried[len(carry_names):]
        forms = new_forms
    return forms[result], extras


def build_power_net(m: int, epsilon: float) -> ConstructedNet:
    """Network approximating ``x_+^m`` on [0, 1] within ``epsilon``; exactly 0 for x <= 0."""
    if m < 1:
        raise ValueError("power must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    stages, _ = power_schedule(m)
    teeth = 0
    if stages:
        while power_error_bound(m, mul_error_bound(teeth)) > epsilon:
            teeth += 1
    b = _Builder(1)
    out, _ = _power_layers(b, {0: 1.0}, m, teeth)
    W, B = b.finish(out)
    bound = power_error_bound(m, mul_error_bound(teeth)) if stages else 0.0
    return ConstructedNet(W, B, "power", epsilon,
                          {"m": m, "teeth": teeth, "stages": len(stages),
                           "multiplications": sum(len(s) for s in stages), "bound": bound})


def _bspline_term_net(m, k, s, j_multi, teeth, scale, shifts):
    """One subnetwork: ``prod_i ((u_i - shift_{j_i}) / scale)_+^m`` with ``u_i`` folded."""
    d = len(s)
    b = _Builder(d)
    # layer 1: relu(t), relu(-t), relu(2t - (m+1)) with t = 2^k (x - s)
    rows = []
    for i in range(d):
        ck = 2.0**k
        rows += [({i: ck}, -ck * s[i]), ({i: -ck}, ck * s[i]), ({i: 2 * ck}, -2 * ck * s[i] - (m + 1))]
    b.add_layer(rows)
    # z_i = (t - relu(2t - m - 1) - shift) / scale = (a - b - c - shift) / scale
    zs = []
    for i in range(d):
        inv = 1.0 / scale
        zs.append(({3 * i: inv, 3 * i + 1: -inv, 3 * i + 2: -inv}, -shifts[j_multi[i]] * inv))
    if d == 1:
        lin, bias = zs[0]
        # relu(z) is produced by the power block's entry layer; fold the bias in
        # through a dedicated layer so the form stays purely linear
        b.add_layer([(lin, bias)])
        out, _ = _power_layers(b, {0: 1.0}, m, teeth)
        return b, out
    b.add_layer([(lin, bias) for lin, bias in zs])
    # per-dimension powers computed side by side
    forms = [{i: 1.0} for i in range(d)]
    forms = _parallel_powers(b, forms, m, teeth)
    # balanced binary tree of products
    while len(forms) > 1:
        pairs = [(forms[2 * i], forms[2 * i + 1]) for i in range(len(forms) // 2)]
        carry = [forms[-1]] if len(forms) % 2 else []
        prods, carried = _mul_block(b, pairs, carry, teeth)
        forms = prods + carried
    return b, forms[0]


def _parallel_powers(builder: _Builder, forms, m, teeth):
    """Compute ``(form_i)_+^m`` for all i with one shared schedule."""
    stages, result = power_schedule(m)
    builder.add_layer([(dict(f), 0.0) for f in forms])
    cur = [{"q0": {i: 1.0}} for i in range(len(forms))]
    for si, stage in enumerate(stages):
        needed_later = set()
        for later in stages[si + 1:]:
            for _, a, bb in later:
                needed_later.update((a, bb))
        needed_later.add(result)
        produced = {dst for dst, _, _ in stage}
        carry_names = sorted(n for n in needed_later if n in cur[0] and n not in produced)
        pairs, carry = [], []
        for c in cur:
            pairs += [(c[a], c[bb]) for _, a, bb in stage]
        for c in cur:
            carry += [c[n] for n in carry_names]
        prods, carried = _mul_block(builder, pairs, carry, teeth)
        nxt = []
        for i in range(len(cur)):
            f = {}
            for q, (dst, _, _) in enumerate(stage):
                f[dst] = prods[i * len(stage) + q]
            for q, n in enumerate(carry_names):
                f[n] = carried[i * len(carry_names) + q]
            nxt.append(f)
        cur = nxt
    return [c[result] for c in cur]


def bspline_error_bound(m: int, d: int, teeth: int) -> float:
    """Certified sup error of the assembled B-spline network for given teeth."""
    _, _, coeffs = truncated_power_terms(m)
    delta = mul_error_bound(teeth)
    e1 = power_error_bound(m, delta) if m > 1 else 0.0
    # product of d factors in [0,1] each within e1: errors add, plus one gadget per internal node
    tree_mults = d - 1
    depth_tree = math.ceil(math.log2(d)) if d > 1 else 0
    e_term = d * e1 + tree_mults * delta if d > 1 else e1
    del depth_tree
    total_coeff = float(np.sum(np.abs(coeffs))) ** d
    return total_coeff * e_term


def build_bspline_net(m: int, k: int, s, d: int, epsilon: float):
    """Parallel ReLU approximation of ``M_{m,k,s}``.

    Returns ``(nets, a)``: one :class:`ConstructedNet` per truncated-power term
    and the coefficient vector so that ``sum_j a[j] * nets[j](x)`` approximates
    the B-spline within ``epsilon`` on its support box and is exactly zero
    outside it.  There are ``ceil((m+1)/2)**d`` terms.
    """
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (d,)).copy()
    scale, shifts, coeffs = truncated_power_terms(m)
    teeth = 0
    if m > 1 or d > 1:
        while bspline_error_bound(m, d, teeth) > epsilon:
            teeth += 1
    nterm = len(shifts)
    nets, a = [], []
    for flat in range(nterm**d):
        j_multi = np.unravel_index(flat, (nterm,) * d)
        b, out = _bspline_term_net(m, k, s, j_multi, teeth, scale, shifts)
        W, B = b.finish(out)
        nets.append(ConstructedNet(W, B, "bspline", epsilon,
                                   {"m": m, "k": k, "s": s.tolist(), "term": [int(j) for j in j_multi],
                                    "teeth": teeth}))
        a.append(float(np.prod([coeffs[j] for j in j_multi])))
    bound = bspline_error_bound(m, d, teeth)
    for net in nets:
        net.meta["bound"] = bound
    return nets, np.array(a)


def bspline_parallel_net(m: int, k: int, s, d: int, epsilon: float, coeff: float = 1.0) -> ParallelNet:
    """The construction of :func:`build_bspline_net` as one :class:`ParallelNet`,
    with the term coefficients (times ``coeff``) folded into the output layer."""
    nets, a = build_bspline_net(m, k, s, d, epsilon)
    width = max(max(n.widths()) for n in nets)
    subs = [n.scaled(coeff * aj).to_subnetwork(width) for n, aj in zip(nets, a)]
    return ParallelNet.from_subnets(subs, {"target": "bspline", "m": m, "k": k,
                                           "s": np.atleast_1d(s).tolist(), "epsilon": epsilon})


def evaluate_parallel(nets, a, x) -> np.ndarray:
    return sum(aj * net(x) for net, aj in zip(nets, a))
