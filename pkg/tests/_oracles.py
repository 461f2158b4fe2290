"""Independent reference computations shared by the test modules."""

import itertools

import numpy as np

from engram.hasher import NGramConfig, largest_prime_at_most
from engram.layer import EngramLayerWeights, engram_layer_backward, engram_layer_forward
from engram.store import ShardedStore

FD_STEP = 1e-6


def random_layer_instance(rng, T, d, d_mem, M):
    """A float64 layer with non-trivial conv and gains, plus a store and hidden states.

    Two tables (bigram and trigram, one head each), so d_mem must be even.
    """
    sizes = tuple(largest_prime_at_most(int(rng.integers(5, 40))) for _ in range(2))
    cfg = NGramConfig((2, 3), 1, sizes)
    store = ShardedStore.create(cfg, d_mem // 2, init_std=1.0, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    w = EngramLayerWeights.init(d, d_mem, M, dilation=int(rng.integers(1, 4)), seed=int(rng.integers(1 << 30)))
    w.conv_kernel[:] = rng.normal(0, 0.5, w.conv_kernel.shape)
    w.conv_bias[:] = rng.normal(0, 0.2, w.conv_bias.shape)
    for g in (w.rms_gain_h, w.rms_gain_k, w.rms_gain_conv):
        g[:] = rng.uniform(0.5, 1.5, g.shape)
    tokens = rng.integers(0, 6, T)
    H = rng.normal(size=(M, T, d))
    dY = rng.normal(size=(M, T, d))
    return tokens, H, dY, store, cfg, w


def _loss(tokens, H, dY, store, cfg, w):
    Y, _, _ = engram_layer_forward(tokens, H, store, cfg, w, sentinel=99)
    return float(np.sum(Y * dY))


def _central(fn, arr, idx):
    old = arr[idx]
    arr[idx] = old + FD_STEP
    up = fn()
    arr[idx] = old - FD_STEP
    down = fn()
    arr[idx] = old
    return (up - down) / (2 * FD_STEP)


def fd_check_layer(rng, T, d, d_mem, M, rtol=1e-4, atol=1e-7):
    """Compare every analytic gradient of the full layer (tables included) with
    central differences. Returns {name: (max abs error, passed)}."""
    tokens, H, dY, store, cfg, w = random_layer_instance(rng, T, d, d_mem, M)
    Y, tape, plan = engram_layer_forward(tokens, H, store, cfg, w, sentinel=99)
    dH, de, grads = engram_layer_backward(tape, dY, w, store, plan)
    loss = lambda: _loss(tokens, H, dY, store, cfg, w)  # noqa: E731

    checks = [("H", H, dH)]
    checks += [(n, getattr(w, n), getattr(grads, n)) for n in w.param_names()]
    dense = store.dense_gradients()
    for j, shards in enumerate(store.shards):
        checks.append((f"table{j}", shards[0].rows, dense[j]))

    out = {}
    for name, arr, analytic in checks:
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            fd[idx] = _central(loss, arr, idx)
        ok = np.allclose(analytic, fd, rtol=rtol, atol=atol)
        out[name] = (float(np.max(np.abs(analytic - fd), initial=0.0)), bool(ok))
    return out


def hsic_definition(K, L):
    """Unbiased HSIC as the U-statistic over ordered distinct 4-tuples, O(n^4)."""
    n = K.shape[0]
    total = 0.0
    for i, j, q, r in itertools.permutations(range(n), 4):
        total += K[i, j] * L[i, j] + K[i, j] * L[q, r] - 2.0 * K[i, j] * L[i, q]
    return total / (n * (n - 1) * (n - 2) * (n - 3))


def naive_causal_conv(x, kernel, bias, dilation):
    """out[t, c] = bias[c] + sum_j kernel[c, j] * x[t - (w-1-j) * dilation, c], zero before 0."""
    T, d = x.shape
    w = kernel.shape[1]
    out = np.zeros((T, d))
    for t in range(T):
        for c in range(d):
            acc = bias[c]
            for j in range(w):
                s = t - (w - 1 - j) * dilation
                if s >= 0:
                    acc += kernel[c, j] * x[s, c]
            out[t, c] = acc
    return out


def zipf_head_mass(m, head, s=1.0):
    r = np.arange(1, m + 1, dtype=float) ** -s
    return r[:head].sum() / r.sum()
