"""Representation analysis: logit-lens KL curves, linear CKA with unbiased HSIC,
soft layer alignment and gate-activation export."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, xlogy

log = logging.getLogger(__name__)


class AnalysisError(ValueError):
    pass


def kl_divergence(p, q, axis: int = -1):
    """KL(p || q) in nats; 0 log 0 = 0 and p > 0 where q = 0 gives +inf."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise AnalysisError(f"support mismatch: {p.shape} vs {q.shape}")
    with np.errstate(divide="ignore"):
        terms = xlogy(p, p) - xlogy(p, q)
    terms = np.where(p > 0, terms, 0.0)
    return np.sum(terms, axis=axis)


def kl_from_logits(logits_p, logits_q, axis: int = -1):
    lp = log_softmax(np.asarray(logits_p, dtype=np.float64), axis=axis)
    lq = log_softmax(np.asarray(logits_q, dtype=np.float64), axis=axis)
    return np.sum(np.exp(lp) * (lp - lq), axis=axis)


def logitlens_curve(hidden, lm_head, final_logits) -> np.ndarray:
    """Mean over positions of KL(final || lens(layer)) for every layer.

    hidden [L, T, d], lm_head [d, V], final_logits [T, V].
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    lm_head = np.asarray(lm_head, dtype=np.float64)
    final_logits = np.asarray(final_logits, dtype=np.float64)
    if hidden.ndim != 3:
        raise AnalysisError("hidden dump must be [layers, positions, dim]")
    if lm_head.shape[0] != hidden.shape[2]:
        raise AnalysisError(f"lm_head rows {lm_head.shape[0]} != hidden dim {hidden.shape[2]}")
    if final_logits.shape != (hidden.shape[1], lm_head.shape[1]):
        raise AnalysisError(f"final logits {final_logits.shape} != {(hidden.shape[1], lm_head.shape[1])}")
    lens = hidden @ lm_head
    return kl_from_logits(final_logits[None], lens).mean(axis=1)


def hsic_unbiased(K, L) -> float:
    K = np.array(K, dtype=np.float64)
    L = np.array(L, dtype=np.float64)
    n = K.shape[0]
    if n < 4:
        raise AnalysisError("unbiased HSIC needs n >= 4")
    if K.shape != (n, n) or L.shape != (n, n):
        raise AnalysisError("Gram matrices must be square and the same size")
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(L, 0.0)
    ones_K = K.sum(axis=0)
    ones_L = L.sum(axis=0)
    trace = float(np.sum(K * L))
    middle = ones_K.sum() * ones_L.sum() / ((n - 1) * (n - 2))
    cross = 2.0 / (n - 2) * float(ones_K @ ones_L)
    return (trace + middle - cross) / (n * (n - 3))


@dataclass
class CKAResult:
    value: float
    raw: float
    hsic_xy: float
    hsic_xx: float
    hsic_yy: float
    batches: int
    clamped: bool = False


def cka(X, Y, minibatch: int | None = None, *, center: bool = True) -> CKAResult:
    """Linear CKA; with `minibatch`, HSIC terms are averaged over batches before the ratio."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise AnalysisError(f"need [n, d] inputs with equal n, got {X.shape} and {Y.shape}")
    n = X.shape[0]
    size = int(minibatch) if minibatch else n
    if size < 4:
        raise AnalysisError("CKA batches need at least 4 rows")
    batches = [(s, min(s + size, n)) for s in range(0, n, size)]
    if len(batches) > 1 and batches[-1][1] - batches[-1][0] < 4:
        dropped = batches.pop()
        log.debug("dropping %d tail rows from CKA batches", dropped[1] - dropped[0])
    xy = xx = yy = 0.0
    for lo, hi in batches:
        xb, yb = X[lo:hi], Y[lo:hi]
        if center:
            xb = xb - xb.mean(axis=0)
            yb = yb - yb.mean(axis=0)
        K, L = xb @ xb.T, yb @ yb.T
        xy += hsic_unbiased(K, L)
        xx += hsic_unbiased(K, K)
        yy += hsic_unbiased(L, L)
    nb = len(batches)
    xy, xx, yy = xy / nb, xx / nb, yy / nb
    if xx <= 0 or yy <= 0:
        raise AnalysisError("zero-variance representation: self-HSIC is not positive")
    raw = xy / np.sqrt(xx * yy)
    value = float(np.clip(raw, 0.0, 1.0))
    return CKAResult(value, float(raw), float(xy), float(xx), float(yy), nb, clamped=bool(value != raw))


def cka_matrix(A, B, minibatch: int | None = None) -> np.ndarray:
    """S[i, j] = CKA(A[i], B[j]) over layers of two [L, n, d] dumps."""
    A = np.asarray(A)
    B = np.asarray(B)
    S = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            S[i, j] = cka(A[i], B[j], minibatch).value
    return S


def soft_alignment(S, k: int = 5) -> np.ndarray:
    """Similarity-weighted centroid of the k rows most similar to each column.

    Returns row indices (0-based); NaN marks a column whose top-k weights sum to zero.
    """
    S = np.asarray(S, dtype=np.float64)
    if k < 1 or k > S.shape[0]:
        raise AnalysisError(f"k={k} must lie in [1, {S.shape[0]}]")
    rows = np.arange(S.shape[0])
    out = np.empty(S.shape[1])
    for j in range(S.shape[1]):
        # stable sort on -S keeps the smaller index first among ties
        top = np.argsort(-S[:, j], kind="stable")[:k]
        w = S[top, j]
        total = w.sum()
        out[j] = np.nan if total == 0 else float(w @ rows[top] / total)
    return out


@dataclass
class GateHeatmap:
    records: list = field(default_factory=list)
    layers: list = field(default_factory=list)
    branches: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"layers": self.layers, "branches": self.branches, "tokens": self.records}


def export_gate_heatmap(tokens, alpha, token_text=None, select=None, layer_names=None) -> GateHeatmap:
    """Per-token gate records; alpha is [layers][branches][T]."""
    alpha = np.asarray(alpha, dtype=np.float64)
    tokens = list(tokens)
    if alpha.ndim != 3:
        raise AnalysisError("alpha must be [layers, branches, T]")
    if alpha.shape[2] != len(tokens):
        raise AnalysisError(f"{alpha.shape[2]} gate values for {len(tokens)} tokens")
    branches = list(range(alpha.shape[1])) if select is None else [int(b) for b in select]
    if any(not 0 <= b < alpha.shape[1] for b in branches):
        raise AnalysisError(f"branch selection {branches} out of range")
    layers = list(layer_names) if layer_names is not None else list(range(alpha.shape[0]))
    if token_text is None:
        token_text = [str(t) for t in tokens]
    recs = []
    for t, tok in enumerate(tokens):
        recs.append({
            "position": t,
            "token": int(tok) if isinstance(tok, (int, np.integer)) else tok,
            "token_text": token_text[t],
            "alpha": {f"{layers[l]}/{b}": float(alpha[l, b, t])
                      for l in range(alpha.shape[0]) for b in branches},
        })
    return GateHeatmap(recs, layers, branches)
