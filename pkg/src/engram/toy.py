"""End-to-end memorization check: an Engram layer plus a linear head learns planted bigrams.

Tokens split into a "first" alphabet A and a "second" alphabet B. Every pair
(a, b) is a planted pattern whose class depends on both tokens, and given b
alone the class is uniform, so nothing but the bigram memory can beat chance.
Sequences are concatenated patterns a1 b1 a2 b2 ...; the loss is taken at
the b positions (pattern completions), while a positions are background.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .hasher import NGramConfig, largest_prime_at_most, plan_retrieval
from .layer import EngramLayerWeights, fuse_backward, fuse_forward
from .store import ShardedStore, SparseAdam

log = logging.getLogger(__name__)


@dataclass
class ToyTask:
    first: int = 40
    second: int = 25
    classes: int = 10
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return self.first + self.second

    @property
    def sentinel(self) -> int:
        return self.vocab_size

    def patterns(self) -> np.ndarray:
        a, b = np.meshgrid(np.arange(self.first), np.arange(self.second), indexing="ij")
        return np.stack([a.ravel(), self.first + b.ravel()], axis=1)

    def target(self, a, b):
        rng = np.random.default_rng(self.seed + 1)
        shift = rng.permutation(self.first)
        return (shift[np.asarray(a)] + 3 * (np.asarray(b) - self.first)) % self.classes

    def sequence(self, pattern_ids) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(tokens, targets, completion mask) for the given patterns in order."""
        pats = self.patterns()[np.asarray(pattern_ids)]
        tokens = pats.reshape(-1)
        targets = np.full(tokens.size, -1, dtype=np.int64)
        targets[1::2] = self.target(pats[:, 0], pats[:, 1])
        return tokens, targets, targets >= 0


@dataclass
class ToyConfig:
    d: int = 32
    d_sub: int = 16
    heads: int = 2
    orders: tuple[int, ...] = (2,)
    slots_per_table: int = 4096
    branches: int = 1
    steps: int = 2000
    patterns_per_step: int = 256
    lr_dense: float = 3e-3
    lr_embed: float = 1e-3
    lr_multiplier: float = 5.0
    table_init_std: float = 0.006
    gate_off: bool = False
    eval_every: int = 100
    seed: int = 0


@dataclass
class ToyReport:
    steps: int
    accuracy: float
    chance: float
    loss_curve: list = field(default_factory=list)
    accuracy_curve: list = field(default_factory=list)
    alpha_completion: float = float("nan")
    alpha_background: float = float("nan")
    steps_to_99: int | None = None

    @property
    def alpha_gap(self) -> float:
        return self.alpha_completion - self.alpha_background

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_gap"] = self.alpha_gap
        return d


class Adam:
    """Plain dense Adam over a dict of arrays."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.95), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.betas
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mh = self.m[k] / (1 - b1 ** self.t)
            vh = self.v[k] / (1 - b2 ** self.t)
            p -= self.lr * mh / (np.sqrt(vh) + self.eps)


class ToyModel:
    def __init__(self, task: ToyTask, cfg: ToyConfig):
        self.task, self.cfg = task, cfg
        rng = np.random.default_rng(cfg.seed)
        m = largest_prime_at_most(cfg.slots_per_table)
        n_tables = len(cfg.orders) * cfg.heads
        self.hash_cfg = NGramConfig(cfg.orders, cfg.heads, (m,) * n_tables, global_seed=cfg.seed)
        self.store = ShardedStore.create(self.hash_cfg, cfg.d_sub, init_std=cfg.table_init_std,
                                         seed=cfg.seed + 1, dtype=np.float64)
        self.weights = EngramLayerWeights.init(cfg.d, self.store.d_mem, cfg.branches,
                                               dilation=max(cfg.orders), seed=cfg.seed + 2)
        # frozen stand-in for the backbone: one random vector per token and branch
        self.token_hidden = rng.normal(0, 1, (cfg.branches, task.vocab_size, cfg.d))
        self.W_out = rng.normal(0, 1 / np.sqrt(cfg.d), (cfg.d, task.classes))
        self.b_out = np.zeros(task.classes)
        self.opt_embed = SparseAdam(lr=cfg.lr_embed, lr_multiplier=cfg.lr_multiplier)
        self.opt_dense = Adam(self._dense(), cfg.lr_dense)

    def _dense(self) -> dict:
        p = {n: getattr(self.weights, n) for n in self.weights.param_names()}
        p.update(W_out=self.W_out, b_out=self.b_out)
        return p

    @property
    def alpha_override(self):
        return 0.0 if self.cfg.gate_off else None

    def forward(self, tokens):
        plan = plan_retrieval(tokens, self.hash_cfg, self.task.sentinel)
        e = self.store.gather(plan)
        H = self.token_hidden[:, tokens, :]
        Y, tape = fuse_forward(H, e, self.weights, self.alpha_override)
        z = (H + Y).sum(axis=0)
        logits = z @ self.W_out + self.b_out
        return logits, z, tape, plan

    def train_step(self, tokens, targets, mask) -> float:
        logits, z, tape, plan = self.forward(tokens)
        lg = logits[mask]
        lg = lg - lg.max(axis=1, keepdims=True)
        p = np.exp(lg)
        p /= p.sum(axis=1, keepdims=True)
        y = targets[mask]
        n = y.size
        loss = float(-np.mean(np.log(p[np.arange(n), y] + 1e-300)))
        dlogits = np.zeros_like(logits)
        p[np.arange(n), y] -= 1.0
        dlogits[mask] = p / n
        dz = dlogits @ self.W_out.T
        grads = {"W_out": z.T @ dlogits, "b_out": dlogits.sum(axis=0)}
        dY = np.broadcast_to(dz, (self.cfg.branches,) + dz.shape)
        _, de, gw = fuse_backward(tape, dY, self.weights)
        grads.update({nm: getattr(gw, nm) for nm in gw.param_names()})
        self.store.scatter_add(plan, de)
        self.store.sparse_adam_step(self.opt_embed)
        self.opt_dense.step(self._dense(), grads)
        return loss

    def evaluate(self, seed: int = 12345) -> tuple[float, float, float]:
        """Accuracy over every planted pattern, plus mean gate at completions and background."""
        order = np.random.default_rng(seed).permutation(len(self.task.patterns()))
        tokens, targets, mask = self.task.sequence(order)
        logits, _, tape, _ = self.forward(tokens)
        acc = float(np.mean(logits[mask].argmax(axis=1) == targets[mask]))
        alpha = tape.alpha.mean(axis=0)
        return acc, float(alpha[mask].mean()), float(alpha[~mask].mean())


def toy_memorization_fit(task: ToyTask | None = None, cfg: ToyConfig | None = None,
                         model: ToyModel | None = None) -> ToyReport:
    task = task or ToyTask()
    cfg = cfg or ToyConfig()
    model = model or ToyModel(task, cfg)
    rng = np.random.default_rng(cfg.seed + 3)
    n_patterns = len(task.patterns())
    report = ToyReport(steps=cfg.steps, accuracy=0.0, chance=1.0 / task.classes)
    for step in range(1, cfg.steps + 1):
        ids = rng.integers(0, n_patterns, cfg.patterns_per_step)
        loss = model.train_step(*task.sequence(ids))
        report.loss_curve.append(loss)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            acc, _, _ = model.evaluate()
            report.accuracy_curve.append((step, acc))
            log.debug("step %d loss %.4f acc %.4f", step, loss, acc)
            if acc >= 0.99 and report.steps_to_99 is None:
                report.steps_to_99 = step
    report.accuracy, report.alpha_completion, report.alpha_background = model.evaluate()
    report.model = model
    return report
