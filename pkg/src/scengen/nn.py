"""Small neural toolkit: reverse-mode autodiff, MLPs, squashed Gaussians, Adam.

The autodiff core is a tape of numpy arrays supporting exactly the
primitives the training losses need (affine maps, tanh/relu, exp/log,
reductions, elementwise min, log-sum-exp and the tanh log-Jacobian).
Anything else fails at graph-build time, so unsupported math cannot
silently produce wrong gradients. Double precision throughout.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StructuralError, TrainingError

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the computation graph. Wraps a float64 numpy array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _bw=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._bw = _bw

    # -- graph plumbing ------------------------------------------------

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise StructuralError("backward() needs a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        out._bw = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        out._bw = bw
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise StructuralError("matmul expects 2-D operands")
        out = Tensor(self.data @ other.data, _parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(g @ other.data.T)
            if other.requires_grad:
                other._accum(self.data.T @ g)

        out._bw = bw
        return out

    # -- elementwise ---------------------------------------------------

    def exp(self):
        val = np.exp(self.data)
        out = Tensor(val, _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(g * val)
        return out

    def log(self):
        out = Tensor(np.log(self.data), _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(g / self.data)
        return out

    def tanh(self):
        val = np.tanh(self.data)
        out = Tensor(val, _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(g * (1.0 - val * val))
        return out

    def relu(self):
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(g * mask)
        return out

    def square(self):
        out = Tensor(self.data * self.data, _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(g * 2.0 * self.data)
        return out

    def clip(self, lo: float, hi: float):
        mask = (self.data >= lo) & (self.data <= hi)
        out = Tensor(np.clip(self.data, lo, hi), _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(g * mask)
        return out

    def log_sech2(self):
        """log(1 - tanh(x)^2), evaluated stably; d/dx = -2 tanh(x)."""
        ax = np.abs(self.data)
        val = 2.0 * (math.log(2.0) - ax - np.log1p(np.exp(-2.0 * ax)))
        out = Tensor(val, _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(
            g * (-2.0 * np.tanh(self.data))
        )
        return out

    # -- reductions / shape --------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))

        def bw(g):
            if not self.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape).copy())

        out._bw = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def logsumexp(self):
        """log-sum-exp over every element, with max subtraction."""
        m = self.data.max()
        shifted = np.exp(self.data - m)
        total = shifted.sum()
        out = Tensor(m + np.log(total), _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(g * shifted / total)
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,))
        out._bw = lambda g: self.requires_grad and self._accum(
            g.reshape(self.data.shape)
        )
        return out

    def slice_cols(self, lo: int, hi: int):
        if self.data.ndim != 2:
            raise StructuralError("slice_cols expects a 2-D tensor")
        out = Tensor(self.data[:, lo:hi], _parents=(self,))

        def bw(g):
            if not self.requires_grad:
                return
            full = np.zeros_like(self.data)
            full[:, lo:hi] = g
            self._accum(full)

        out._bw = bw
        return out

    def slice_rows(self, lo: int, hi: int):
        if self.data.ndim != 2 and self.data.ndim != 1:
            raise StructuralError("slice_rows expects a 1-D or 2-D tensor")
        out = Tensor(self.data[lo:hi], _parents=(self,))

        def bw(g):
            if not self.requires_grad:
                return
            full = np.zeros_like(self.data)
            full[lo:hi] = g
            self._accum(full)

        out._bw = bw
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data), _parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * ~take_a, b.data.shape))

    out._bw = bw
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise StructuralError("concat_cols expects 2-D tensors")
    na = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1), _parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a._accum(g[:, :na])
        if b.requires_grad:
            b._accum(g[:, na:])

    out._bw = bw
    return out


# -- multilayer perceptron ----------------------------------------------


@dataclass
class MlpParams:
    weights: list  # (d_in, d_out) matrices
    biases: list  # (d_out,) vectors
    activation: str = "relu"

    @property
    def sizes(self) -> tuple:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )

    def arrays(self) -> list:
        return list(self.weights) + list(self.biases)

    def replace_arrays(self, arrs) -> "MlpParams":
        k = len(self.weights)
        return MlpParams(
            weights=list(arrs[:k]), biases=list(arrs[k:]), activation=self.activation
        )


_ACTIVATIONS = ("relu", "tanh")


def mlp_init(sizes, activation="relu", rng=None) -> MlpParams:
    """He init for relu, Xavier for tanh; zero biases."""
    if len(sizes) < 2:
        raise ConfigError(f"an MLP needs input and output dims, got sizes {tuple(sizes)}")
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        if activation == "relu":
            scale = math.sqrt(2.0 / d_in)
        else:
            scale = math.sqrt(1.0 / d_in)
        weights.append(rng.normal(0.0, scale, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpParams(weights=weights, biases=biases, activation=activation)


def _act_np(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    return np.tanh(x)


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass (inference path, no tape)."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w + b
        if i < last:
            h = _act_np(h, p.activation)
    return h


def mlp_tensors(p: MlpParams) -> list:
    """Leaf tensors wrapping the parameter arrays, weights then biases."""
    return [Tensor(a, requires_grad=True) for a in p.arrays()]


def mlp_apply(leaves: list, x, activation: str) -> Tensor:
    """Graph-building forward through parameter leaf tensors."""
    k = len(leaves) // 2
    ws, bs = leaves[:k], leaves[k:]
    h = as_tensor(x)
    for i, (w, b) in enumerate(zip(ws, bs)):
        h = h @ w + b
        if i < k - 1:
            h = h.relu() if activation == "relu" else h.tanh()
    return h


def grads_of(leaves: list) -> list:
    """Gradients gathered from leaf tensors after backward()."""
    out = []
    for leaf in leaves:
        if leaf.grad is None:
            out.append(np.zeros_like(leaf.data))
        else:
            out.append(leaf.grad)
    return out


# -- squashed Gaussian policy head ---------------------------------------


@dataclass(frozen=True)
class GaussianHead:
    mu: np.ndarray
    log_sigma: np.ndarray  # already clipped to [LOG_SIGMA_MIN, LOG_SIGMA_MAX]


def split_head(raw: np.ndarray) -> GaussianHead:
    """Split a policy-net output (n, 2*da) into mean/log-sigma halves."""
    raw = np.atleast_2d(raw)
    da = raw.shape[1] // 2
    return GaussianHead(
        mu=raw[:, :da],
        log_sigma=np.clip(raw[:, da:], LOG_SIGMA_MIN, LOG_SIGMA_MAX),
    )


def _squash_const(limits) -> tuple:
    lo, hi = (np.asarray(v, dtype=np.float64) for v in limits)
    return lo, hi, float(np.sum(np.log((hi - lo) / 2.0)))


def _log_sech2_np(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return 2.0 * (math.log(2.0) - ax - np.log1p(np.exp(-2.0 * ax)))


def squashed_log_prob(head: GaussianHead, xi: np.ndarray, limits) -> np.ndarray:
    """log pi(a|s) for the pre-squash draw xi; shape (n,)."""
    _, _, log_span = _squash_const(limits)
    sigma = np.exp(head.log_sigma)
    logn = -0.5 * ((xi - head.mu) / sigma) ** 2 - head.log_sigma - 0.5 * _LOG_2PI
    return logn.sum(axis=1) - _log_sech2_np(xi).sum(axis=1) - log_span


def sample_squashed(head: GaussianHead, limits, rng=None, deterministic=False):
    """Draw actions inside the box limits; returns (action, log_prob)."""
    lo, hi, _ = _squash_const(limits)
    if deterministic:
        xi = head.mu.copy()
    else:
        if rng is None:
            raise ConfigError("stochastic sampling needs an rng")
        xi = head.mu + np.exp(head.log_sigma) * rng.standard_normal(head.mu.shape)
    zeta = np.tanh(xi)
    # rounding in the affine map can overshoot the box by one ulp
    action = np.clip(lo + (zeta + 1.0) * 0.5 * (hi - lo), lo, hi)
    return action, squashed_log_prob(head, xi, limits)


def squashed_sample_graph(raw_out: Tensor, eps: np.ndarray, limits):
    """Differentiable squashed sample from a policy-net output tensor.

    Returns (action, log_prob) tensors; eps is the fixed N(0,1) draw so
    gradients flow through the reparameterization.
    """
    lo, hi, log_span = _squash_const(limits)
    da = raw_out.shape[1] // 2
    mu = raw_out.slice_cols(0, da)
    log_sigma = raw_out.slice_cols(da, 2 * da).clip(LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    sigma = log_sigma.exp()
    xi = mu + sigma * eps
    zeta = xi.tanh()
    action = (zeta + 1.0) * (0.5 * (hi - lo)) + lo
    quad = (xi - mu).square() * (log_sigma * (-2.0)).exp() * (-0.5)
    logn = quad - log_sigma - 0.5 * _LOG_2PI
    log_prob = logn.sum(axis=1) - xi.log_sech2().sum(axis=1) - log_span
    return action, log_prob


# -- optimizer ------------------------------------------------------------


@dataclass
class OptState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def opt_init(params: list, lr: float) -> OptState:
    return OptState(
        lr=lr,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def opt_step(params: list, grads: list, st: OptState) -> tuple:
    """One Adam update with bias correction; returns (new_params, state)."""
    if len(params) != len(st.m):
        raise StructuralError("optimizer state does not match parameter count")
    st.step += 1
    b1t = 1.0 - st.beta1**st.step
    b2t = 1.0 - st.beta2**st.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {i}")
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g
        m_hat = st.m[i] / b1t
        v_hat = st.v[i] / b2t
        out.append(p - st.lr * m_hat / (np.sqrt(v_hat) + st.eps))
    return out, st


def polyak(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """target <- (1 - tau) * target + tau * online, returned as a new net."""
    return MlpParams(
        weights=[(1 - tau) * t + tau * o for t, o in zip(target.weights, online.weights)],
        biases=[(1 - tau) * t + tau * o for t, o in zip(target.biases, online.biases)],
        activation=target.activation,
    )


# -- checkpoint container --------------------------------------------------

_MAGIC = b"SGCK"
_VERSION = 2


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Versioned binary container: header with dims, then row-major data."""
    index = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.array(arr, dtype=np.float64, order="C")  # keeps 0-d shapes
        index.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta or {}, "arrays": index}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path) -> tuple:
    """Read a container written by save_arrays; returns (arrays, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise StructuralError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise StructuralError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise StructuralError(f"{path}: truncated array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return arrays, header["meta"]


def save_mlp(path, p: MlpParams, meta: dict | None = None) -> None:
    arrays = {}
    for i, w in enumerate(p.weights):
        arrays[f"w{i}"] = w
    for i, b in enumerate(p.biases):
        arrays[f"b{i}"] = b
    full_meta = {"kind": "mlp", "activation": p.activation, "n_layers": len(p.weights)}
    full_meta.update(meta or {})
    save_arrays(path, arrays, full_meta)


def load_mlp(path, expect_sizes=None) -> MlpParams:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "mlp":
        raise StructuralError(f"{path}: not an MLP checkpoint")
    n = int(meta["n_layers"])
    p = MlpParams(
        weights=[arrays[f"w{i}"] for i in range(n)],
        biases=[arrays[f"b{i}"] for i in range(n)],
        activation=meta["activation"],
    )
    for i in range(n):
        if p.weights[i].shape[1] != p.biases[i].shape[0]:
            raise StructuralError(f"{path}: layer {i} weight/bias mismatch")
        if i > 0 and p.weights[i].shape[0] != p.weights[i - 1].shape[1]:
            raise StructuralError(f"{path}: layer {i} input dim mismatch")
    if expect_sizes is not None and p.sizes != tuple(expect_sizes):
        raise StructuralError(
            f"{path}: checkpoint sizes {p.sizes} != expected {tuple(expect_sizes)}"
        )
    return p
