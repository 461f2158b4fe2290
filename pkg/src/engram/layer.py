"""Engram fusion: context-aware gating and the short causal conv, forward and backward.

Shapes: H and Y are [M, T, d] (M residual branches), the retrieved memory e is
[T, d_mem]. The key projection is per branch; the value projection, the conv
kernel and all RMSNorm gains are shared by every branch.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .hasher import NGramConfig, RetrievalPlan, plan_retrieval

RMS_EPS = 1e-6


class LayerShapeError(ValueError):
    pass


@dataclass
class EngramLayerWeights:
    W_V: np.ndarray            # [d, d_mem]
    W_K: np.ndarray            # [M, d, d_mem]
    rms_gain_h: np.ndarray     # [d]
    rms_gain_k: np.ndarray     # [d]
    conv_kernel: np.ndarray    # [d, w]
    conv_bias: np.ndarray      # [d]
    rms_gain_conv: np.ndarray  # [d]
    dilation: int = 3

    @property
    def d(self) -> int:
        return int(self.W_V.shape[0])

    @property
    def d_mem(self) -> int:
        return int(self.W_V.shape[1])

    @property
    def branches(self) -> int:
        return int(self.W_K.shape[0])

    @property
    def width(self) -> int:
        return int(self.conv_kernel.shape[1])

    @staticmethod
    def tensor_shapes(d, d_mem, branches, width):
        return [(d, d_mem), (branches, d, d_mem), (d,), (d,), (d, width), (d,), (d,)]

    def tensors(self) -> list[np.ndarray]:
        return [self.W_V, self.W_K, self.rms_gain_h, self.rms_gain_k,
                self.conv_kernel, self.conv_bias, self.rms_gain_conv]

    @classmethod
    def from_tensors(cls, arrays, dilation: int) -> "EngramLayerWeights":
        return cls(*arrays, dilation=dilation)

    @classmethod
    def init(cls, d: int, d_mem: int, branches: int = 1, *, width: int = 4, dilation: int = 3,
             seed: int = 0, dtype=np.float64) -> "EngramLayerWeights":
        rng = np.random.default_rng(seed)
        std = 1.0 / np.sqrt(d_mem)
        return cls(
            W_V=rng.normal(0, std, (d, d_mem)).astype(dtype),
            W_K=rng.normal(0, std, (branches, d, d_mem)).astype(dtype),
            rms_gain_h=np.ones(d, dtype),
            rms_gain_k=np.ones(d, dtype),
            conv_kernel=np.zeros((d, width), dtype),
            conv_bias=np.zeros(d, dtype),
            rms_gain_conv=np.ones(d, dtype),
            dilation=dilation,
        )

    def param_names(self) -> list[str]:
        return [f.name for f in fields(self) if f.name != "dilation"]

    def zeros_like(self) -> "EngramLayerWeights":
        return replace(self, **{n: np.zeros_like(getattr(self, n)) for n in self.param_names()})

    def copy(self) -> "EngramLayerWeights":
        return replace(self, **{n: getattr(self, n).copy() for n in self.param_names()})


@dataclass
class EngramForwardTape:
    e: np.ndarray
    v: np.ndarray           # [T, d]
    k: np.ndarray           # [M, T, d]
    h: np.ndarray           # [M, T, d]
    h_norm: np.ndarray
    k_norm: np.ndarray
    alpha: np.ndarray       # [M, T]
    u: np.ndarray           # gated values [M, T, d]
    u_norm: np.ndarray
    conv_pre: np.ndarray    # conv output before SiLU
    alpha_override: float | None = None


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def rmsnorm(x, gain, eps: float = RMS_EPS):
    x = np.asarray(x)
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return gain * x * r


def rmsnorm_backward(x, gain, dy, eps: float = RMS_EPS):
    """Returns (dx, dgain) for y = gain * x / rms(x); dgain is summed over leading axes."""
    d = x.shape[-1]
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    gdy = gain * dy
    dx = gdy * r - x * (r ** 3) * np.sum(gdy * x, axis=-1, keepdims=True) / d
    dgain = np.sum((dy * x * r).reshape(-1, d), axis=0)
    return dx, dgain


def _check_inputs(H, e, w: EngramLayerWeights):
    if H.ndim != 3:
        raise LayerShapeError(f"hidden states must be [M, T, d], got shape {H.shape}")
    M, T, d = H.shape
    if M != w.branches or d != w.d:
        raise LayerShapeError(f"hidden {H.shape} does not match weights (M={w.branches}, d={w.d})")
    if e.shape != (T, w.d_mem):
        raise LayerShapeError(f"memory {e.shape} != {(T, w.d_mem)}")


def gate_forward(H, e, w: EngramLayerWeights, alpha_override: float | None = None):
    """Branch gates alpha[m, t] and gated values u[m, t] = alpha[m, t] * W_V e_t."""
    H = np.asarray(H)
    e = np.asarray(e)
    _check_inputs(H, e, w)
    v = e @ w.W_V.T
    k = np.einsum("td,mjd->mtj", e, w.W_K)
    h_norm = rmsnorm(H, w.rms_gain_h)
    k_norm = rmsnorm(k, w.rms_gain_k)
    if alpha_override is None:
        alpha = _sigmoid(np.sum(h_norm * k_norm, axis=-1) / np.sqrt(w.d))
    else:
        alpha = np.full(H.shape[:2], float(alpha_override), dtype=H.dtype)
    u = alpha[..., None] * v[None]
    return u, alpha, dict(v=v, k=k, h_norm=h_norm, k_norm=k_norm)


def causal_conv(x, kernel, bias, dilation: int):
    """Depthwise causal dilated conv along axis -2: out[t] = b + sum_j K[:, j] x[t - (w-1-j) dil]."""
    T = x.shape[-2]
    width = kernel.shape[1]
    pad = (width - 1) * dilation
    xp = np.concatenate([np.zeros(x.shape[:-2] + (pad, x.shape[-1]), x.dtype), x], axis=-2)
    out = np.broadcast_to(bias, x.shape).copy()
    for j in range(width):
        out += kernel[:, j] * xp[..., j * dilation:j * dilation + T, :]
    return out


def causal_conv_backward(x, kernel, dilation: int, dout):
    T = x.shape[-2]
    d = x.shape[-1]
    width = kernel.shape[1]
    pad = (width - 1) * dilation
    xp = np.concatenate([np.zeros(x.shape[:-2] + (pad, d), x.dtype), x], axis=-2)
    dxp = np.zeros_like(xp)
    dk = np.empty_like(kernel)
    for j in range(width):
        window = xp[..., j * dilation:j * dilation + T, :]
        dk[:, j] = np.sum((dout * window).reshape(-1, d), axis=0)
        dxp[..., j * dilation:j * dilation + T, :] += dout * kernel[:, j]
    db = np.sum(dout.reshape(-1, d), axis=0)
    return dxp[..., pad:, :], dk, db


def conv_block(u, w: EngramLayerWeights):
    """Y = SiLU(conv(RMSNorm(u))) + u, applied to each branch with the shared kernel."""
    u = np.asarray(u)
    if u.shape[-2] == 0:
        return u.copy(), u.copy(), u.copy()
    u_norm = rmsnorm(u, w.rms_gain_conv)
    pre = causal_conv(u_norm, w.conv_kernel, w.conv_bias, w.dilation)
    return pre * _sigmoid(pre) + u, u_norm, pre


def fuse_forward(H, e, w: EngramLayerWeights, alpha_override: float | None = None):
    H = np.asarray(H)
    e = np.asarray(e)
    u, alpha, parts = gate_forward(H, e, w, alpha_override)
    Y, u_norm, pre = conv_block(u, w)
    tape = EngramForwardTape(e=e, h=H, alpha=alpha, u=u, u_norm=u_norm, conv_pre=pre,
                             alpha_override=alpha_override, **parts)
    return Y, tape


def fuse_backward(tape: EngramForwardTape, dY, w: EngramLayerWeights):
    """Exact gradients of sum(dY * Y) wrt H, e and every weight tensor."""
    dY = np.asarray(dY)
    if dY.shape != tape.u.shape:
        raise LayerShapeError(f"dY shape {dY.shape} != forward output {tape.u.shape}")
    grads = w.zeros_like()
    d = w.d

    # conv block
    if dY.shape[-2]:
        sig = _sigmoid(tape.conv_pre)
        dpre = dY * sig * (1.0 + tape.conv_pre * (1.0 - sig))
        du_norm, grads.conv_kernel, grads.conv_bias = causal_conv_backward(
            tape.u_norm, w.conv_kernel, w.dilation, dpre)
        du_conv, grads.rms_gain_conv = rmsnorm_backward(tape.u, w.rms_gain_conv, du_norm)
        du = dY + du_conv
    else:
        du = dY.copy()

    # gating: u = alpha * v
    dv = np.sum(tape.alpha[..., None] * du, axis=0)
    if tape.alpha_override is None:
        dalpha = np.sum(du * tape.v[None], axis=-1)
        ds = dalpha * tape.alpha * (1.0 - tape.alpha) / np.sqrt(d)
        dh_norm = ds[..., None] * tape.k_norm
        dk_norm = ds[..., None] * tape.h_norm
        dH, grads.rms_gain_h = rmsnorm_backward(tape.h, w.rms_gain_h, dh_norm)
        dk, grads.rms_gain_k = rmsnorm_backward(tape.k, w.rms_gain_k, dk_norm)
    else:
        dH = np.zeros_like(tape.h)
        dk = np.zeros_like(tape.k)

    grads.W_K = np.einsum("mtj,td->mjd", dk, tape.e)
    grads.W_V = dv.T @ tape.e
    de = dv @ w.W_V + np.einsum("mtj,mjd->td", dk, w.W_K)
    return dH, de, grads


def engram_layer_forward(tokens, H, store, cfg: NGramConfig, w: EngramLayerWeights, *,
                         projection=None, sentinel: int | None = None,
                         alpha_override: float | None = None):
    """Project tokens, plan retrieval, gather memory and fuse it into every branch.

    Returns (Y, tape, plan); the caller adds Y into its residual stream.
    """
    canonical = projection(tokens) if projection is not None else np.asarray(tokens, dtype=np.int64)
    if sentinel is None:
        sentinel = projection.sentinel_id if projection is not None else 0xFFFFFFFF
    plan: RetrievalPlan = plan_retrieval(canonical, cfg, sentinel)
    e = store.gather(plan).astype(w.W_V.dtype)
    Y, tape = fuse_forward(H, e, w, alpha_override)
    return Y, tape, plan


def engram_layer_backward(tape: EngramForwardTape, dY, w: EngramLayerWeights, store=None,
                          plan: RetrievalPlan | None = None):
    """Backward pass; when a store and plan are given, grad_e is scattered into the tables."""
    dH, de, grads = fuse_backward(tape, dY, w)
    if store is not None and plan is not None:
        store.scatter_add(plan, de)
    return dH, de, grads
