"""Parallel ReLU networks trained with weight decay.

A parallel net is ``M`` independent ReLU MLPs ("subnetworks") that share the
input and whose outputs are summed.  Parameters of all subnetworks are stored
stacked along a leading axis so every layer is a single batched matmul:

    weights[l] : (M, out_l, in_l)      biases[l] : (M, out_l)

with ``in_0 = d``, ``out_{L-1} = 1`` and every hidden width equal to ``w``.

Besides forward/backward and Adam training of the weight-decayed objective,
this module implements the homogeneity rescalings that turn a trained net into
its constrained sparse form: per-subnetwork rebalancing of layer norms and the
extraction of the scalar path coefficients ``a_j``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .numkern import Rng

CHECKPOINT_FORMAT = "pnnreg-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class CannotRebalance(ValueError):
    pass


def _float_array(a) -> np.ndarray:
    a = np.asarray(a)
    return a if a.dtype == np.float32 else a.astype(np.float64, copy=False)


@dataclass
class Subnetwork:
    """A single ReLU MLP; ``weights[l]`` is (out, in), ``biases[l]`` is (out,)."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=np.float64) for W in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if len(self.weights) < 2 or len(self.weights) != len(self.biases):
            raise ValueError("a subnetwork needs at least two layers with one bias per layer")
        for l in range(1, len(self.weights)):
            if self.weights[l].shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"shape chain broken at layer {l}")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("last layer must have a single output")

    @property
    def depth(self) -> int:
        return len(self.weights)

    def __call__(self, x) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.weights[0].shape[1]:
            h = h.T
        h = h.T
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = W @ h + b[:, None]
            if l < self.depth - 1:
                h = np.maximum(h, 0.0)
        return h[0]

    def layer_norms(self) -> np.ndarray:
        return np.array([np.sqrt(np.sum(W * W)) for W in self.weights])


@dataclass
class ParallelNet:
    weights: list
    biases: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = [_float_array(W) for W in self.weights]
        self.biases = [_float_array(b) for b in self.biases]
        if len(self.weights) < 2 or len(self.weights) != len(self.biases):
            raise ValueError("a parallel net needs at least two layers with one bias per layer")
        M = self.weights[0].shape[0]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 3 or W.shape[0] != M or b.shape != (M, W.shape[1]):
                raise ValueError(f"layer {l}: inconsistent shapes {W.shape} / {b.shape}")
            if l and W.shape[2] != self.weights[l - 1].shape[1]:
                raise ValueError(f"shape chain broken at layer {l}")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("last layer must have a single output")

    @property
    def M(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d(self) -> int:
        return self.weights[0].shape[2]

    @property
    def w(self) -> int:
        return self.weights[0].shape[1]

    @property
    def L(self) -> int:
        return len(self.weights)

    def copy(self) -> "ParallelNet":
        return ParallelNet([W.copy() for W in self.weights], [b.copy() for b in self.biases], dict(self.meta))

    def subnet(self, j: int) -> Subnetwork:
        return Subnetwork([W[j] for W in self.weights], [b[j] for b in self.biases])

    @classmethod
    def from_subnets(cls, subnets, meta=None) -> "ParallelNet":
        depth = subnets[0].depth
        if any(s.depth != depth for s in subnets):
            raise ValueError("all subnetworks must have the same depth")
        weights = [np.stack([s.weights[l] for s in subnets]) for l in range(depth)]
        biases = [np.stack([s.biases[l] for s in subnets]) for l in range(depth)]
        return cls(weights, biases, dict(meta or {}))

    def zeros_like(self) -> "ParallelNet":
        return ParallelNet([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])

    def parameters(self) -> list:
        return self.weights + self.biases

    def penalty(self) -> float:
        """Sum of squared Frobenius norms of all weight matrices (biases excluded)."""
        return float(sum(np.sum(W * W) for W in self.weights))

    def layer_norms(self) -> np.ndarray:
        """(M, L) array of per-subnetwork, per-layer Frobenius norms."""
        return np.stack([np.sqrt(np.sum(W * W, axis=(1, 2))) for W in self.weights], axis=1)


def _as_design(xs, d: int) -> np.ndarray:
    """Inputs as a (d, n) array."""
    x = np.asarray(xs, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[None, :] if d == 1 else x[:, None]
    elif x.shape[1] == d:
        x = x.T
    if x.shape[0] != d:
        raise ValueError(f"expected inputs of dimension {d}, got array of shape {np.shape(xs)}")
    return x


def init_parallel_net(M: int, d: int, w: int, L: int, rng: Rng, domain=(0.0, 1.0)) -> ParallelNet:
    """He-style Gaussian init with the output layer scaled by 1/M.

    First-layer biases put each unit's kink at a uniform location in ``domain``
    (for d = 1; the projection of a uniform point otherwise) so that a fresh
    net is not piecewise linear around the origin only.
    """
    if L < 2:
        raise ValueError("need at least two layers")
    lo, hi = domain
    weights = [rng.normal((M, w, d)) * math.sqrt(2.0 / d)]
    centers = lo + (hi - lo) * rng.uniform(M * w * d).reshape(M, w, d)
    biases = [-np.sum(weights[0] * centers, axis=2)]
    for _ in range(L - 2):
        weights.append(rng.normal((M, w, w)) * math.sqrt(2.0 / w))
        biases.append(np.zeros((M, w)))
    weights.append(rng.normal((M, 1, w)) * (math.sqrt(2.0 / w) / M))
    biases.append(np.zeros((M, 1)))
    return ParallelNet(weights, biases, {"init": "he", "seed": rng.seed})


def _forward_cache(net: ParallelNet, X: np.ndarray):
    """Forward pass keeping post-activations; returns (acts, out) with out (M, n)."""
    acts = [X]
    h = X
    L = net.L
    for l in range(L):
        z = np.matmul(net.weights[l], h)
        z += net.biases[l][:, :, None]
        if l < L - 1:
            np.maximum(z, 0.0, out=z)
            acts.append(z)
        h = z
    return acts, h[:, 0, :]


def subnet_outputs(net: ParallelNet, xs) -> np.ndarray:
    """Per-subnetwork outputs, shape (M, n)."""
    X = _as_design(xs, net.d)
    return _forward_cache(net, X)[1]


def forward(net: ParallelNet, xs) -> np.ndarray | float:
    """Network output ``sum_j f_j(x)``.

    A single input point (scalar, or 1-D of length ``d``) gives a float; a batch
    gives an (n,) array.
    """
    x = np.asarray(xs, dtype=np.float64)
    if x.ndim <= 1 and x.size == net.d:
        return float(subnet_outputs(net, x.reshape(net.d, 1)).sum())
    if x.ndim == 1 and net.d > 1:
        raise ValueError(f"expected input of length {net.d}, got {x.shape[0]}")
    return subnet_outputs(net, x).sum(axis=0)


def loss_weight_decay(net: ParallelNet, xs, ys, lam: float) -> float:
    """Mean squared error plus ``lam`` times the summed squared Frobenius norms."""
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    X = _as_design(xs, net.d)
    if X.shape[1] != ys.shape[0] or ys.shape[0] == 0:
        raise ValueError("xs and ys must be non-empty and of equal length")
    f = _forward_cache(net, X)[1].sum(axis=0)
    return float(np.mean((f - ys) ** 2) + lam * net.penalty())


def _backward_cached(net: ParallelNet, X, ys, lam, acts, f):
    n = ys.shape[0]
    r = 2.0 * (f - ys) / n
    grads = net.zeros_like()
    delta = np.broadcast_to(r[None, None, :], (net.M, 1, n))
    for l in range(net.L - 1, -1, -1):
        h = acts[l]
        if l == 0:
            grads.weights[0] = np.matmul(delta, h.T)
        else:
            grads.weights[l] = np.matmul(delta, h.transpose(0, 2, 1))
        grads.biases[l] = delta.sum(axis=2)
        if lam:
            grads.weights[l] += 2.0 * lam * net.weights[l]
        if l:
            g = np.matmul(net.weights[l].transpose(0, 2, 1), delta)
            g *= h > 0
            delta = g
    return grads


def backward(net: ParallelNet, xs, ys, lam: float) -> ParallelNet:
    """Exact gradient of :func:`loss_weight_decay` (ReLU'(0) taken as 0).

    The result is a :class:`ParallelNet` with the same shapes holding the
    partial derivatives.
    """
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    X = _as_design(xs, net.d)
    acts, out = _forward_cache(net, X)
    return _backward_cached(net, X, ys, lam, acts, out.sum(axis=0))


@dataclass
class TrainConfig:
    lam: float = 0.0
    lr: float = 1e-3
    epochs: int = 1000
    seed: int = 0
    layerwise: bool = False
    pretrain_epochs: int = 200
    full_batch: bool = True
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    log_every: int = 0
    dtype: str = "float64"  # "float32" halves memory traffic in training
    decay_tail: float = 0.0  # fraction of the final stage with cosine learning-rate decay

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not self.full_batch:
            raise ValueError("only full-batch training is supported")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        if not 0.0 <= self.decay_tail <= 1.0:
            raise ValueError("decay_tail must lie in [0, 1]")


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        step = self.lr / c1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= step * m / (np.sqrt(v / c2) + self.eps)


def _adam_loop(net: ParallelNet, X, ys, lam, lr, epochs, cfg: TrainConfig, losses: list, stage: str,
               decay_tail: float = 0.0):
    params = net.parameters()
    opt = Adam(params, lr, cfg.betas, cfg.eps)
    tail = int(round(decay_tail * epochs))
    for epoch in range(epochs):
        if tail and epoch >= epochs - tail:
            opt.lr = lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - (epochs - tail)) / tail))
        acts, out = _forward_cache(net, X)
        f = out.sum(axis=0)
        loss = float(np.mean((f - ys) ** 2) + lam * net.penalty())
        if not math.isfinite(loss):
            raise TrainingDiverged(len(losses), loss)
        losses.append(loss)
        grads = _backward_cached(net, X, ys, lam, acts, f)
        opt.step(params, grads.parameters())
        if cfg.log_every and epoch % cfg.log_every == 0:
            print(f"[{stage}] epoch {epoch} loss {loss:.6g}", flush=True)
    final = loss_weight_decay(net, X, ys, lam)
    if not math.isfinite(final):
        raise TrainingDiverged(len(losses), final)
    losses.append(final)
    return net


def _cast(net: ParallelNet, dtype: str) -> ParallelNet:
    return ParallelNet([W.astype(dtype) for W in net.weights], [b.astype(dtype) for b in net.biases],
                       dict(net.meta))


def grow_depth(net: ParallelNet) -> ParallelNet:
    """Insert an identity hidden layer before the output layer.

    Hidden activations are non-negative, so ``relu(I h + 0) = h`` and the
    function computed by the net is unchanged.
    """
    M, w = net.M, net.w
    eye = np.broadcast_to(np.eye(w), (M, w, w)).copy()
    weights = net.weights[:-1] + [eye, net.weights[-1]]
    biases = net.biases[:-1] + [np.zeros((M, w)), net.biases[-1]]
    return ParallelNet([W.copy() for W in weights], [b.copy() for b in biases], dict(net.meta))


def shallow_view(net: ParallelNet) -> ParallelNet:
    """Two-layer net made of the first and last layers of ``net`` (layerwise start)."""
    return ParallelNet([net.weights[0].copy(), net.weights[-1].copy()],
                       [net.biases[0].copy(), net.biases[-1].copy()], dict(net.meta))


def train(net: ParallelNet, xs, ys, cfg: TrainConfig):
    """Full-batch Adam on the weight-decayed squared loss.

    With ``cfg.layerwise`` the net is first grown from two layers to its full
    depth, training ``cfg.pretrain_epochs`` at each depth without weight decay,
    then trained for ``cfg.epochs`` with ``cfg.lam``.  Returns ``(net, losses)``
    where ``losses`` is the per-epoch objective of the stage being run.
    """
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    X = _as_design(xs, net.d)
    if X.shape[1] != ys.shape[0]:
        raise ValueError("xs and ys must have equal length")
    losses: list = []
    target_depth = net.L
    current = net.copy()
    if cfg.dtype != "float64":
        current = _cast(current, cfg.dtype)
        X, ys = X.astype(cfg.dtype), ys.astype(cfg.dtype)
    if cfg.layerwise and target_depth > 2:
        current = shallow_view(current)
        while True:
            _adam_loop(current, X, ys, 0.0, cfg.lr, cfg.pretrain_epochs, cfg, [], f"depth {current.L}")
            if current.L == target_depth:
                break
            current = grow_depth(current)
    _adam_loop(current, X, ys, cfg.lam, cfg.lr, cfg.epochs, cfg, losses, "decay", cfg.decay_tail)
    current = _cast(current, "float64")
    current.meta.update({"lam": cfg.lam, "epochs": cfg.epochs, "lr": cfg.lr})
    return current, losses


def rebalance(net: ParallelNet) -> ParallelNet:
    """Rescale layers so every layer of a subnetwork has the same Frobenius norm.

    Uses positive homogeneity of ReLU: layer ``l`` is multiplied by
    ``c_l = t / ||W_l||`` with ``t`` the geometric mean of the layer norms, and
    bias ``l`` by ``c_1 * ... * c_l``.  Since ``prod c_l = 1`` the function is
    unchanged while the penalty drops to ``L * t**2`` (AM-GM).  Subnetworks with
    all-zero weights are left as they are.
    """
    out = net.copy()
    norms = net.layer_norms()
    for j in range(net.M):
        nj = norms[j]
        if np.all(nj == nj[0]):  # dead or already balanced
            continue
        if np.any(nj == 0):
            raise CannotRebalance(f"subnetwork {j} has a zero layer ({np.flatnonzero(nj == 0).tolist()})")
        t = math.exp(float(np.mean(np.log(nj))))
        cum = 1.0
        for l in range(net.L):
            c = t / nj[l]
            cum *= c
            out.weights[l][j] *= c
            out.biases[l][j] *= cum
    return out


@dataclass
class ConstrainedForm:
    """Sparse-regression form of a parallel net.

    ``f(x) = sum_j coeffs[j] * normalized(x)_j + offset`` where the normalized
    subnetworks have ``||W_1||_F = c1*sqrt(d)``, ``||W_l||_F = c1*sqrt(w)``
    (or are all-zero) and no output bias; ``offset`` collects the output biases.
    """

    normalized: ParallelNet
    coeffs: np.ndarray
    offset: float
    c1: float

    @property
    def L(self) -> int:
        return self.normalized.L

    @property
    def budget(self) -> float:
        """``||a||_{2/L}^{2/L}``."""
        return float(np.sum(np.abs(self.coeffs) ** (2.0 / self.L)))

    def terms(self, xs) -> np.ndarray:
        """(M, n) array of ``a_j * normalized_j(x)``."""
        return self.coeffs[:, None] * subnet_outputs(self.normalized, xs)

    def __call__(self, xs) -> np.ndarray:
        return self.terms(xs).sum(axis=0) + self.offset


def layer_caps(d: int, w: int, L: int, c1: float = 1.0) -> np.ndarray:
    return np.array([c1 * math.sqrt(d)] + [c1 * math.sqrt(w)] * (L - 1))


def to_constrained_form(net: ParallelNet, c1: float = 1.0) -> ConstrainedForm:
    """Extract ``a_j = prod_l ||W_l|| / prod_l beta_l`` after rebalancing."""
    bal = rebalance(net)
    betas = layer_caps(net.d, net.w, net.L, c1)
    norms = bal.layer_norms()
    normalized = bal.copy()
    coeffs = np.zeros(net.M)
    offset = float(np.sum(bal.biases[-1]))
    normalized.biases[-1][:] = 0.0
    for j in range(net.M):
        t = norms[j, 0]
        if t == 0:
            continue
        scales = betas / t
        coeffs[j] = float(np.prod(norms[j] / betas))
        cum = 1.0
        for l in range(net.L):
            cum *= scales[l]
            normalized.weights[l][j] *= scales[l]
            if l < net.L - 1:
                normalized.biases[l][j] *= cum
    return ConstrainedForm(normalized, coeffs, offset, c1)


def active_subnetworks(net: ParallelNet, grid, tol: float | None = None, ys=None) -> list:
    """Indices of subnetworks whose output is not constant over ``grid``.

    Default ``tol`` is ``1e-6 * (max(ys) - min(ys))`` when ``ys`` is given,
    else ``1e-6`` times the range of the net's own output.
    """
    out = subnet_outputs(net, grid)
    if out.shape[1] == 0:
        raise ValueError("grid must be non-empty")
    spread = out.max(axis=1) - out.min(axis=1)
    if tol is None:
        ref = np.ptp(ys) if ys is not None else np.ptp(out.sum(axis=0))
        tol = 1e-6 * (ref if ref > 0 else 1.0)
    return [int(j) for j in np.flatnonzero(spread > tol)]


def to_json_dict(net: ParallelNet) -> dict:
    layers = []
    for W, b in zip(net.weights, net.biases):
        layers.append({"shape": list(W.shape), "weights": W.reshape(-1).tolist(), "bias": b.reshape(-1).tolist()})
    return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "M": net.M, "d": net.d, "w": net.w, "L": net.L, "layers": layers, "meta": net.meta}


def from_json_dict(obj: dict) -> ParallelNet:
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a pnnreg checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    weights, biases = [], []
    for layer in obj["layers"]:
        shape = tuple(layer["shape"])
        weights.append(np.array(layer["weights"], dtype=np.float64).reshape(shape))
        biases.append(np.array(layer["bias"], dtype=np.float64).reshape(shape[0], shape[1]))
    return ParallelNet(weights, biases, dict(obj.get("meta", {})))


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(net: ParallelNet, path) -> None:
    atomic_write_text(path, json.dumps(to_json_dict(net)))


def load_checkpoint(path) -> ParallelNet:
    with open(path) as fh:
        return from_json_dict(json.load(fh))
