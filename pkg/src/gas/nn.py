"""Small MLPs with hand-written backprop, Adam, and binary checkpoints.

Hidden layers compute affine -> layer norm (optional) -> GELU; the output
layer is affine only. Parameters are float32; callers that need more
precision (e.g. finite-difference checks) can cast a copy via `Mlp.astype`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

LN_EPS = 1e-6

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

_MAGIC = b"GASMLP01"


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


@dataclass
class Mlp:
    """Fully connected network. Parameter order in `params()` is fixed:
    weights, biases, then layer-norm gains and shifts (hidden layers only)."""

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    ln_gains: list[np.ndarray]
    ln_shifts: list[np.ndarray]
    layer_norm: bool = True

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, *self.ln_gains, *self.ln_shifts]

    def set_params(self, arrays: list[np.ndarray]) -> None:
        old = self.params()
        assert len(arrays) == len(old)
        for dst, src in zip(old, arrays):
            assert dst.shape == src.shape
            dst[...] = src

    def copy(self) -> "Mlp":
        return Mlp(
            widths=self.widths,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            ln_gains=[g.copy() for g in self.ln_gains],
            ln_shifts=[s.copy() for s in self.ln_shifts],
            layer_norm=self.layer_norm,
        )

    def astype(self, dtype) -> "Mlp":
        out = self.copy()
        out.weights = [w.astype(dtype) for w in out.weights]
        out.biases = [b.astype(dtype) for b in out.biases]
        out.ln_gains = [g.astype(dtype) for g in out.ln_gains]
        out.ln_shifts = [s.astype(dtype) for s in out.ln_shifts]
        return out

    def assert_finite(self) -> None:
        for p in self.params():
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("non-finite network parameter")


def init_mlp(
    widths: tuple[int, ...] | list[int],
    rng: np.random.Generator,
    layer_norm: bool = True,
    dtype=np.float32,
) -> Mlp:
    """Scaled uniform fan-in init for weights, zeros for biases."""
    widths = tuple(int(w) for w in widths)
    assert len(widths) >= 2
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    ln_gains, ln_shifts = [], []
    if layer_norm:
        for w in widths[1:-1]:
            ln_gains.append(np.ones(w, dtype=dtype))
            ln_shifts.append(np.zeros(w, dtype=dtype))
    return Mlp(widths, weights, biases, ln_gains, ln_shifts, layer_norm)


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: list[np.ndarray]       # affine outputs per layer
    ln_xhat: list[np.ndarray]   # normalized activations per hidden layer
    ln_inv_std: list[np.ndarray]
    act_in: list[np.ndarray]    # GELU inputs per hidden layer
    act_cdf: list[np.ndarray]   # Gaussian CDF of act_in, reused by backward
    hidden: list[np.ndarray]    # inputs to each layer (hidden[0] == x)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Batched forward pass; accepts (B, in_dim) or (in_dim,)."""
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    assert h.shape[1] == net.in_dim, (h.shape, net.widths)
    n = net.n_layers
    for i in range(n):
        z = h @ net.weights[i] + net.biases[i]
        if i == n - 1:
            h = z
            break
        if net.layer_norm:
            mean = z.mean(axis=1, keepdims=True)
            var = z.var(axis=1, keepdims=True)
            xhat = (z - mean) / np.sqrt(var + LN_EPS)
            z = xhat * net.ln_gains[i] + net.ln_shifts[i]
        h = gelu(z)
    return h[0] if squeeze else h


def forward_cached(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass retaining the activations needed by `backward`."""
    h = np.atleast_2d(x)
    assert h.shape[1] == net.in_dim, (h.shape, net.widths)
    cache = ForwardCache(x=h, pre=[], ln_xhat=[], ln_inv_std=[], act_in=[], act_cdf=[], hidden=[h])
    n = net.n_layers
    for i in range(n):
        z = h @ net.weights[i] + net.biases[i]
        cache.pre.append(z)
        if i == n - 1:
            h = z
            break
        if net.layer_norm:
            mean = z.mean(axis=1, keepdims=True)
            var = z.var(axis=1, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + LN_EPS)
            xhat = (z - mean) * inv_std
            cache.ln_xhat.append(xhat)
            cache.ln_inv_std.append(inv_std)
            a = xhat * net.ln_gains[i] + net.ln_shifts[i]
        else:
            a = z
        cache.act_in.append(a)
        cdf = 0.5 * (1.0 + erf(a / _SQRT2))
        cache.act_cdf.append(cdf)
        h = a * cdf
        cache.hidden.append(h)
    return h, cache


def backward(
    net: Mlp, cache: ForwardCache, upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Backprop `upstream` (same shape as the forward output) through the
    cached pass. Returns (param gradients in `params()` order, input grad).
    Gradients from several passes can be combined with `add_grads`."""
    dy = np.atleast_2d(upstream)
    n = net.n_layers
    d_weights = [None] * n
    d_biases = [None] * n
    d_gains = [None] * len(net.ln_gains)
    d_shifts = [None] * len(net.ln_shifts)

    # output layer: affine only
    h_in = cache.hidden[n - 1]
    d_weights[n - 1] = h_in.T @ dy
    d_biases[n - 1] = dy.sum(axis=0)
    dh = dy @ net.weights[n - 1].T

    for i in range(n - 2, -1, -1):
        a = cache.act_in[i]
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
        da = dh * (cache.act_cdf[i] + a * pdf)
        if net.layer_norm:
            xhat = cache.ln_xhat[i]
            inv_std = cache.ln_inv_std[i]
            d_gains[i] = (da * xhat).sum(axis=0)
            d_shifts[i] = da.sum(axis=0)
            dxhat = da * net.ln_gains[i]
            # dz for z -> (z - mean) * inv_std with mean/var over the feature axis
            m = xhat.shape[1]
            dz = (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            ) * inv_std
        else:
            dz = da
        h_in = cache.hidden[i]
        d_weights[i] = h_in.T @ dz
        d_biases[i] = dz.sum(axis=0)
        dh = dz @ net.weights[i].T

    grads = [*d_weights, *d_biases, *d_gains, *d_shifts]
    return grads, dh


def backward_input_only(net: Mlp, cache: ForwardCache, upstream: np.ndarray) -> np.ndarray:
    """Input gradient of the cached pass, skipping parameter gradients."""
    dy = np.atleast_2d(upstream)
    n = net.n_layers
    dh = dy @ net.weights[n - 1].T
    for i in range(n - 2, -1, -1):
        a = cache.act_in[i]
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
        da = dh * (cache.act_cdf[i] + a * pdf)
        if net.layer_norm:
            xhat = cache.ln_xhat[i]
            dxhat = da * net.ln_gains[i]
            dz = (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            ) * cache.ln_inv_std[i]
        else:
            dz = da
        dh = dz @ net.weights[i].T
    return dh


def zero_grads(net: Mlp) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in net.params()]


def add_grads(acc: list[np.ndarray], extra: list[np.ndarray]) -> list[np.ndarray]:
    for a, e in zip(acc, extra):
        a += e
    return acc


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(net: Mlp, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        m=[np.zeros_like(p) for p in net.params()],
        v=[np.zeros_like(p) for p in net.params()],
    )


def adam_step(net: Mlp, grads: list[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, in place. Non-finite gradients abort."""
    params = net.params()
    assert len(grads) == len(params) == len(state.m)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in adam_step")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, element-wise."""
    tp, op = target.params(), online.params()
    assert len(tp) == len(op)
    for t, o in zip(tp, op):
        assert t.shape == o.shape
        t *= 1.0 - tau
        t += tau * o


# --- checkpoint I/O ---------------------------------------------------------

def write_mlp(f, net: Mlp, adam: AdamState | None = None) -> None:
    """Versioned binary block: header, widths, then float32 LE parameter
    payloads in `params()` order; optional optimizer state."""
    f.write(_MAGIC)
    f.write(struct.pack("<BBH", int(net.layer_norm), int(adam is not None), len(net.widths)))
    f.write(struct.pack("<%dI" % len(net.widths), *net.widths))
    for p in net.params():
        f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    if adam is not None:
        f.write(struct.pack("<Qdddd", adam.step, adam.lr, adam.beta1, adam.beta2, adam.eps))
        for arr in (*adam.m, *adam.v):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_mlp(f) -> tuple[Mlp, AdamState | None]:
    magic = f.read(len(_MAGIC))
    if magic != _MAGIC:
        raise ValueError("bad MLP checkpoint magic %r" % magic)
    layer_norm, has_adam, n_widths = struct.unpack("<BBH", f.read(4))
    widths = struct.unpack("<%dI" % n_widths, f.read(4 * n_widths))
    net = init_mlp(widths, np.random.default_rng(0), layer_norm=bool(layer_norm))

    def read_block(shape):
        n = int(np.prod(shape))
        buf = f.read(4 * n)
        if len(buf) != 4 * n:
            raise ValueError("truncated MLP checkpoint")
        return np.frombuffer(buf, dtype="<f4").reshape(shape).copy()

    net.set_params([read_block(p.shape) for p in net.params()])
    adam = None
    if has_adam:
        step, lr, b1, b2, eps = struct.unpack("<Qdddd", f.read(8 + 32))
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step)
        adam.m = [read_block(p.shape) for p in net.params()]
        adam.v = [read_block(p.shape) for p in net.params()]
    return net, adam


def save_mlp(path, net: Mlp, adam: AdamState | None = None) -> None:
    with open(path, "wb") as f:
        write_mlp(f, net, adam)


def load_mlp(path) -> tuple[Mlp, AdamState | None]:
    with open(path, "rb") as f:
        return read_mlp(f)
