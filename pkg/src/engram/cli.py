"""Command-line entry point. Every subcommand writes a JSON report carrying the
package version, seed and a hash of its effective inputs; figures land next to
the report unless --no-figures is given."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, cka_matrix, export_gate_heatmap, logitlens_curve, soft_alignment
from .config import ConfigError, EngramConfig, config_hash
from .formats import (FormatError, read_projection, read_tables, read_tensor, read_weights,
                      write_projection, write_tables, write_tensor, write_weights)
from .hasher import HashConfigError, NGramConfig, RetrievalPlan, plan_retrieval, plan_stats
from .layer import EngramLayerWeights, LayerShapeError, engram_layer_backward, engram_layer_forward
from .planner import (AllocationSpec, PlanError, engram_param_count, fit_power_law, realized_rho,
                      slots_for_params, split_budget, vocab_interpretations)
from .store import ShardedStore, StoreError, TierConfig, prefetch_execute, trace_for_window, wallclock_overlap
from .vocab import NormalizeOptions, VocabError, build_projection, load_vocab_jsonl, projection_report

log = logging.getLogger("engram")

USER_ERRORS = (ConfigError, FormatError, VocabError, HashConfigError, StoreError, LayerShapeError,
               PlanError, AnalysisError, ValueError, IndexError, KeyError, OSError)


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- helpers

def read_tokens(path) -> np.ndarray:
    text = Path(path).read_text()
    try:
        return np.array([int(t) for t in text.split()], dtype=np.int64)
    except ValueError as exc:
        raise UsageError(f"{path}: tokens must be whitespace-separated integers ({exc})") from exc


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def tables_by_layer(tables) -> dict:
    out: dict[int, list] = {}
    for t in tables:
        out.setdefault(t.table_id.layer, []).append(t)
    for layer in out:
        out[layer].sort(key=lambda t: (t.table_id.order, t.table_id.head))
    return out


def hash_config_for(tables, global_seed: int, layer: int) -> NGramConfig:
    orders = sorted({t.table_id.order for t in tables})
    heads = len(tables) // len(orders)
    expect = [(n, k) for n in orders for k in range(heads)]
    got = [(t.table_id.order, t.table_id.head) for t in tables]
    if got != expect:
        raise StoreError(f"layer {layer} tables {got} do not form a full orders x heads grid")
    return NGramConfig(tuple(orders), heads, tuple(t.size for t in tables), global_seed, layer)


def pick_layer(by_layer: dict, layer):
    if layer is None:
        if len(by_layer) != 1:
            raise UsageError(f"table file holds layers {sorted(by_layer)}; pick one with --layer")
        layer = next(iter(by_layer))
    if layer not in by_layer:
        raise UsageError(f"layer {layer} not in table file (have {sorted(by_layer)})")
    return layer, by_layer[layer]


def global_seed(args) -> int:
    if getattr(args, "config", None):
        return EngramConfig.load(args.config).global_seed
    return args.hash_seed


def project_tokens(args, tokens):
    if getattr(args, "proj", None):
        proj = read_projection(args.proj)
        return proj(tokens).astype(np.int64), proj.sentinel_id
    return tokens, 0xFFFFFFFF


def as_branches(H):
    """Accept [T, d] as a single branch."""
    return (H[None], True) if H.ndim == 2 else (H, False)


def plan_to_json(plan: RetrievalPlan) -> dict:
    return {"layer": plan.layer, "table_of": [list(x) for x in plan.table_of],
            "table_sizes": list(plan.table_sizes), "indices": plan.indices.tolist()}


def plan_from_json(d: dict) -> RetrievalPlan:
    idx = np.asarray(d["indices"], dtype=np.int64).reshape(-1, len(d["table_sizes"]))
    return RetrievalPlan(idx, [tuple(x) for x in d["table_of"]], tuple(d["table_sizes"]),
                         d.get("layer", 0))


def _inputs_digest(args, extra=None) -> str:
    skip = {"func", "report", "out", "no_figures", "verbose", "argv"}
    d = {k: v for k, v in vars(args).items() if k not in skip}
    if extra is not None:
        d["config"] = extra
    return config_hash(d)


def figure_path(report, name: str) -> Path:
    report = Path(report)
    return report.with_name(f"{report.stem}.{name}.png")


def emit(args, payload: dict, report_path, figures=None, config: dict | None = None) -> int:
    """Attach metadata, render figures and write the report."""
    paths = []
    if figures and not args.no_figures:
        from . import plotting  # matplotlib only loads when figures are wanted

        for name, fn in figures.items():
            paths.append(str(fn(plotting, figure_path(report_path, name))))
    payload = {
        "meta": {
            "version": __version__,
            "command": args.command_path,
            "seed": args.seed,
            "deterministic": args.deterministic,
            "config_hash": _inputs_digest(args, config),
            "argv": args.argv,
        },
        **payload,
        "figures": paths,
    }
    Path(report_path).parent.mkdir(parents=True, exist_ok=True)
    Path(report_path).write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")
    log.info("wrote %s", report_path)
    return 0


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _nan_to_none(a):
    return [None if np.isnan(x) else float(x) for x in a]


# ---------------------------------------------------------------- vocab

def cmd_vocab_build(args) -> int:
    vocab = load_vocab_jsonl(args.input)
    opts = NormalizeOptions(casefold=not args.no_casefold, strip_marks=not args.no_strip_marks)
    proj = build_projection(vocab, opts)
    write_projection(args.out, proj)
    rep = projection_report(proj, vocab)
    rep["normalization"] = {"casefold": opts.casefold, "strip_marks": opts.strip_marks}
    return emit(args, {"projection": rep, "projection_file": str(args.out)}, args.report)


# ---------------------------------------------------------------- hash

def _plan_from_config(args):
    cfg = EngramConfig.load(args.config)
    tokens = read_tokens(args.tokens)
    ids, sentinel = project_tokens(args, tokens)
    return plan_retrieval(ids, cfg.hash_config(args.layer), sentinel, workers=args.threads), cfg


def cmd_hash_plan(args) -> int:
    plan, cfg = _plan_from_config(args)
    Path(args.out).write_text(json.dumps(plan_to_json(plan)) + "\n")
    if args.report:
        return emit(args, {"shape": list(plan.indices.shape), "plan_file": str(args.out)},
                    args.report, config=cfg.to_dict())
    return 0


def cmd_hash_stats(args) -> int:
    cfg = None
    if args.plan:
        plan = plan_from_json(read_json(args.plan))
    elif args.config and args.tokens:
        plan, cfg = _plan_from_config(args)
    elif args.config and args.random:
        cfg = EngramConfig.load(args.config)
        rng = np.random.default_rng(args.seed)
        grams = rng.integers(0, args.id_range, size=args.random, dtype=np.int64)
        plan = plan_retrieval(grams, cfg.hash_config(args.layer), args.id_range, workers=args.threads)
    else:
        raise UsageError("hash stats needs --plan, or --config with --tokens or --random")
    stats = plan_stats(plan)
    out = args.report or args.out
    if out is None:
        print(json.dumps({k: stats[k] for k in ("collision_rate", "chi2")}))
        return 0
    return emit(args, stats, out, config=cfg.to_dict() if cfg else None)


# ---------------------------------------------------------------- plan

def _rho_sweep(spec: AllocationSpec):
    rhos = np.linspace(0.0, 1.0, 21)
    plans = [split_budget(AllocationSpec(spec.p_tot, spec.p_act, spec.per_expert_params, spec.top_k,
                                         float(r), spec.per_slot_params, spec.shared_experts))
             for r in rhos]
    return rhos, [p.routed_experts_total for p in plans], [p.engram_slots for p in plans]


def cmd_plan(args) -> int:
    out, figures = {}, {}
    spec = None
    if args.rho is not None and args.per_expert is not None:
        if args.top_k is None:
            raise UsageError("--top-k is required for a budget split")
        kw = dict(per_slot_params=args.per_slot, shared_experts=args.shared_experts)
        if args.p_tot is not None:
            spec = AllocationSpec(args.p_tot, args.p_act or 0.0, args.per_expert, args.top_k,
                                  args.rho, **kw)
        elif args.baseline_routed is not None:
            spec = AllocationSpec.from_baseline(args.baseline_routed, args.top_k, args.per_expert,
                                                args.rho, p_act=args.p_act or 0.0, **kw)
    if spec is not None:
        out["allocation"] = {"input": {k: getattr(spec, k) for k in spec.__dataclass_fields__},
                             "plan": split_budget(spec).to_dict()}
        rhos, experts, slots = _rho_sweep(spec)
        figures["allocation"] = lambda p, f: p.allocation_plot(rhos, experts, slots, f)
    if args.baseline_routed is not None and args.engram_routed is not None:
        if args.top_k is None:
            raise UsageError("--top-k is required for realized rho")
        out["realized_rho"] = realized_rho(args.baseline_routed, args.engram_routed, args.top_k)
    geometry = (args.layers, args.tables, args.d_sub)
    if all(g is not None for g in geometry):
        if args.vocab_size is not None:
            out["engram_params"] = vocab_interpretations(args.vocab_size, *geometry)
        if args.slots is not None:
            out["engram_param_count"] = engram_param_count(*geometry[:2], args.slots, args.d_sub)
        if args.target_params is not None:
            out["slots_for_target"] = slots_for_params(args.target_params, *geometry)
    if args.fit:
        pts = np.asarray(read_json(args.fit), dtype=float)
        fit = fit_power_law(pts)
        out["power_law"] = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
                            "slope_stderr": fit.slope_stderr}
        figures["power_law"] = lambda p, f: p.power_law_plot(pts, fit, f)
    if not out:
        raise UsageError("nothing to compute: give a budget (--rho, --per-expert and --p-tot or "
                         "--baseline-routed), --baseline-routed/--engram-routed, table geometry, or --fit")
    return emit(args, out, args.out, figures)


# ---------------------------------------------------------------- layer

def _layer_inputs(args):
    w = read_weights(args.weights)
    layer, tables = pick_layer(tables_by_layer(read_tables(args.tables, dtype=np.float64)), args.layer)
    cfg = hash_config_for(tables, global_seed(args), layer)
    store = ShardedStore(tables)
    tokens = read_tokens(args.tokens)
    H, squeeze = as_branches(read_tensor(args.hidden))
    proj = read_projection(args.proj) if args.proj else None
    return w, cfg, store, tokens, H, squeeze, proj


def cmd_layer_init(args) -> int:
    cfg = EngramConfig.load(args.config)
    w = EngramLayerWeights.init(cfg.d, cfg.d_mem, cfg.branches, width=cfg.kernel_width,
                                dilation=max(cfg.orders), seed=args.seed)
    write_weights(args.out, w)
    return 0


def cmd_layer_forward(args) -> int:
    w, cfg, store, tokens, H, squeeze, proj = _layer_inputs(args)
    Y, tape, plan = engram_layer_forward(tokens, H, store, cfg, w, projection=proj)
    write_tensor(args.out, Y[0] if squeeze else Y)
    if args.report:
        rep = {"output": str(args.out), "shape": list(Y.shape), "max_abs": float(np.abs(Y).max(initial=0.0)),
               "alpha_mean": tape.alpha.mean(axis=1).tolist() if tape.alpha.size else []}
        return emit(args, rep, args.report)
    return 0


def cmd_layer_backward(args) -> int:
    w, cfg, store, tokens, H, squeeze, proj = _layer_inputs(args)
    Y, tape, plan = engram_layer_forward(tokens, H, store, cfg, w, projection=proj)
    dY, _ = as_branches(read_tensor(args.grad))
    dH, de, grads = engram_layer_backward(tape, dY, w, store, plan)
    write_tensor(args.out, dH[0] if squeeze else dH)
    if args.weight_grads:
        write_weights(args.weight_grads, grads)
    if args.table_grads:
        dense = store.dense_gradients()
        write_tables(args.table_grads, [type(t)(t.table_id, g) for t, g in zip(store.tables(), dense)])
    if args.report:
        rep = {"output": str(args.out),
               "grad_norms": {n: float(np.linalg.norm(getattr(grads, n))) for n in grads.param_names()},
               "grad_e_norm": float(np.linalg.norm(de)),
               "rows_touched": int(sum(r.size for r, _ in store.staged_gradients()))}
        return emit(args, rep, args.report)
    return 0


def cmd_layer_train_toy(args) -> int:
    from .toy import ToyConfig, ToyTask, toy_memorization_fit

    task = ToyTask(first=args.first, second=args.second, classes=args.classes, seed=args.seed)
    cfg = ToyConfig(steps=args.steps, slots_per_table=args.slots, heads=args.heads,
                    gate_off=args.gate_off, eval_every=args.eval_every, seed=args.seed)
    rep = toy_memorization_fit(task, cfg)
    model = rep.model
    tokens, _, mask = task.sequence(np.arange(min(24, len(task.patterns()))) * 37 % len(task.patterns()))
    _, _, tape, _ = model.forward(tokens)
    text = [("b" if m else "a") + str(int(t)) for t, m in zip(tokens, mask)]
    gates = export_gate_heatmap(tokens, tape.alpha[None], token_text=text).to_dict()
    body = {"task": vars(task), "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
            "result": rep.to_dict(), "gates": gates}
    figures = {
        "training": lambda p, f: p.training_curves(rep.loss_curve, rep.accuracy_curve, f, rep.chance),
        "gates": lambda p, f: p.gate_heatmap(gates, f),
    }
    return emit(args, body, args.report, figures)


# ---------------------------------------------------------------- store

def cmd_store_init(args) -> int:
    cfg = EngramConfig.load(args.config)
    tables = []
    for i, depth in enumerate(cfg.placements):
        hc = cfg.hash_config(depth)
        store = ShardedStore.create(hc, cfg.d_sub, init_std=args.init_std, seed=args.seed + i)
        tables.extend(store.tables())
    write_tables(args.out, tables)
    return 0


def cmd_store_bench(args) -> int:
    tiers_doc = read_json(args.tiers)
    tiers = TierConfig.from_dict(tiers_doc)
    gseed = global_seed(args)
    by_layer = tables_by_layer(read_tables(args.tables))
    stores, cfgs = {}, {}
    for depth, tables in sorted(by_layer.items()):
        cfgs[depth] = hash_config_for(tables, gseed, depth)
        stores[depth] = ShardedStore(tables, args.shards)
    tokens = read_tokens(args.tokens)
    ids, sentinel = project_tokens(args, tokens)
    if ids.size == 0:
        raise UsageError("token file is empty")
    batch = args.batch or ids.size
    steps = []
    for lo in range(0, ids.size, batch):
        chunk = ids[lo:lo + batch]
        steps.append({d: plan_retrieval(chunk, c, sentinel, workers=args.threads) for d, c in cfgs.items()})

    if "compute_trace" in tiers_doc:
        trace = [float(x) for x in tiers_doc["compute_trace"]]
    else:
        n_blocks = int(tiers_doc.get("n_blocks", max(stores) + 1))
        trace = trace_for_window(sorted(stores), n_blocks, tiers.compute_window_us)
    rep = prefetch_execute(stores, steps, tiers, trace, warmup_steps=args.warmup, seed=args.seed)
    body = {"overlap": {k: v for k, v in rep.to_dict().items() if k != "steps"},
            "per_step": [{"stall_us": s.stall_us, "rows_fetched": s.rows_fetched,
                          "fetch_us": s.fetch_us} for s in rep.steps],
            "compute_trace": trace, "placements": sorted(stores)}

    total_rows = sum(sum(s.sizes) for s in stores.values())
    caps = sorted({int(c) for c in np.linspace(0, total_rows, 9)} | {tiers.hot_capacity_rows})
    sweep = []
    for cap in caps:
        t = TierConfig.from_dict({**tiers.__dict__, "hot_capacity_rows": cap})
        sweep.append(prefetch_execute(stores, steps, t, trace, warmup_steps=args.warmup,
                                      seed=args.seed).throughput_penalty)
    body["capacity_sweep"] = {"capacity_rows": caps, "throughput_penalty": sweep}
    if args.wall_clock:
        if args.deterministic:
            raise UsageError("--wall-clock timings are not reproducible; drop --deterministic")
        body["wall_clock"] = wallclock_overlap(stores, steps, tiers, trace)
    figures = {"overlap": lambda p, f: p.overlap_plot(caps, sweep, f)}
    return emit(args, body, args.report, figures)


# ---------------------------------------------------------------- analyze

def cmd_analyze_logitlens(args) -> int:
    lm_head = read_tensor(args.lm_head)
    curves = {}
    for path in args.hidden:
        hidden = read_tensor(path)
        final = read_tensor(args.final) if args.final else hidden[-1] @ lm_head
        curves[Path(path).stem] = logitlens_curve(hidden, lm_head, final).tolist()
    figures = {"logitlens": lambda p, f: p.logitlens_plot(curves, f)}
    return emit(args, {"curves": curves}, args.out, figures)


def cmd_analyze_cka(args) -> int:
    A = read_tensor(args.a)
    B = read_tensor(args.b) if args.b else A
    S = cka_matrix(A, B, args.minibatch)
    k = min(args.k, S.shape[0])
    a = soft_alignment(S, k)
    body = {"S": S.tolist(), "alignment": _nan_to_none(a), "k": k, "minibatch": args.minibatch}
    figures = {"cka": lambda p, f: p.cka_heatmap(S, f, alignment=a)}
    return emit(args, body, args.out, figures)


def cmd_analyze_align(args) -> int:
    doc = read_json(args.matrix)
    S = np.asarray(doc["S"] if isinstance(doc, dict) else doc, dtype=float)
    a = soft_alignment(S, args.k)
    figures = {"align": lambda p, f: p.cka_heatmap(S, f, alignment=a)}
    return emit(args, {"alignment": _nan_to_none(a), "k": args.k}, args.out, figures)


def cmd_analyze_gates(args) -> int:
    meta = read_json(args.meta) if args.meta else {}
    if args.alpha:
        alpha = read_tensor(args.alpha)
        tokens = read_tokens(args.tokens) if args.tokens else meta.get("tokens", list(range(alpha.shape[-1])))
    elif args.weights:
        w, cfg, store, tokens, H, _, proj = _layer_inputs(args)
        _, tape, _ = engram_layer_forward(tokens, H, store, cfg, w, projection=proj)
        alpha = tape.alpha[None]
    else:
        raise UsageError("analyze gates needs --alpha, or --weights with --tables/--tokens/--hidden")
    doc = export_gate_heatmap(tokens, alpha, token_text=meta.get("token_text"), select=args.select).to_dict()
    figures = {"gates": lambda p, f: p.gate_heatmap(doc, f)}
    return emit(args, doc, args.out, figures)


# ---------------------------------------------------------------- parser

GLOBAL_DEFAULTS = {"threads": 1, "seed": 0, "deterministic": False, "no_figures": False, "verbose": 0}


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; SUPPRESS keeps a
    # subparser from overwriting a value given at the top level
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                   help="workers for retrieval planning (default 1)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="default 0")
    g.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                   help="single-threaded, reject wall-clock measurements")
    g.add_argument("--no-figures", action="store_true", default=argparse.SUPPRESS)
    g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="engram", description=__doc__.split("\n")[0], parents=[common])
    p.add_argument("--version", action="version", version=f"engram {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def leaf(parent, name, func, help_):
        sp = parent.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=func)
        return sp

    def hashing_opts(sp, tables=False):
        sp.add_argument("--proj", help="projection file (EGVP); tokens are raw ids")
        sp.add_argument("--layer", type=int, default=None if tables else 0)
        if tables:
            sp.add_argument("--config", help="JSON config supplying global_seed")
            sp.add_argument("--hash-seed", type=int, default=0, help="global hash seed without --config")

    # vocab
    vocab = sub.add_parser("vocab", help="tokenizer compression").add_subparsers(dest="action", required=True)
    sp = leaf(vocab, "build", cmd_vocab_build, "build a projection from a JSONL vocab")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--no-casefold", action="store_true")
    sp.add_argument("--no-strip-marks", action="store_true")

    # hash
    hsh = sub.add_parser("hash", help="N-gram hashing").add_subparsers(dest="action", required=True)
    sp = leaf(hsh, "plan", cmd_hash_plan, "compute a retrieval plan")
    sp.add_argument("--config", required=True)
    sp.add_argument("--tokens", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")
    hashing_opts(sp)
    sp = leaf(hsh, "stats", cmd_hash_stats, "collision and load statistics")
    sp.add_argument("--plan")
    sp.add_argument("--config")
    sp.add_argument("--tokens")
    sp.add_argument("--random", type=int, help="hash this many random bigram-stream positions")
    sp.add_argument("--id-range", type=int, default=1 << 20)
    sp.add_argument("--report")
    sp.add_argument("--out", help="alias of --report")
    hashing_opts(sp)

    # plan
    sp = leaf(sub, "plan", cmd_plan, "sparsity allocation arithmetic")
    sp.add_argument("--p-tot", type=float)
    sp.add_argument("--p-act", type=float)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--per-expert", type=float)
    sp.add_argument("--top-k", type=int)
    sp.add_argument("--shared-experts", type=int, default=0)
    sp.add_argument("--per-slot", type=int, default=80)
    sp.add_argument("--baseline-routed", type=int)
    sp.add_argument("--engram-routed", type=int)
    sp.add_argument("--vocab-size", type=int, help="published table vocab size")
    sp.add_argument("--slots", type=int, help="slots per table")
    sp.add_argument("--layers", type=int)
    sp.add_argument("--tables", type=int, help="tables per layer")
    sp.add_argument("--d-sub", type=int)
    sp.add_argument("--target-params", type=float)
    sp.add_argument("--fit", help="JSON list of [slots, loss] points")
    sp.add_argument("--out", required=True)

    # layer
    layer = sub.add_parser("layer", help="gated fusion layer").add_subparsers(dest="action", required=True)
    sp = leaf(layer, "init", cmd_layer_init, "write freshly initialized weights")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    for name, func in (("forward", cmd_layer_forward), ("backward", cmd_layer_backward)):
        sp = leaf(layer, name, func, f"{name} pass over a token file")
        sp.add_argument("--weights", required=True)
        sp.add_argument("--tables", required=True)
        sp.add_argument("--tokens", required=True)
        sp.add_argument("--hidden", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--report")
        hashing_opts(sp, tables=True)
        if name == "backward":
            sp.add_argument("--grad", required=True, help="upstream gradient dY (EGTS)")
            sp.add_argument("--weight-grads", help="write weight gradients (EGLW)")
            sp.add_argument("--table-grads", help="write dense table gradients (EGTB)")
    sp = leaf(layer, "train-toy", cmd_layer_train_toy, "planted-bigram memorization run")
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--slots", type=int, default=4096)
    sp.add_argument("--heads", type=int, default=2)
    sp.add_argument("--first", type=int, default=40)
    sp.add_argument("--second", type=int, default=25)
    sp.add_argument("--classes", type=int, default=10)
    sp.add_argument("--eval-every", type=int, default=100)
    sp.add_argument("--gate-off", action="store_true")
    sp.add_argument("--report", required=True)

    # store
    store = sub.add_parser("store", help="tables and tiers").add_subparsers(dest="action", required=True)
    sp = leaf(store, "init", cmd_store_init, "write tables for every placement in a config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--init-std", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp = leaf(store, "bench-overlap", cmd_store_bench, "simulate prefetch overlap")
    sp.add_argument("--tables", required=True)
    sp.add_argument("--tokens", required=True)
    sp.add_argument("--tiers", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--batch", type=int, help="tokens per simulated step (default: all)")
    sp.add_argument("--warmup", type=int, default=1)
    sp.add_argument("--shards", type=int, default=1)
    sp.add_argument("--wall-clock", action="store_true")
    hashing_opts(sp, tables=True)

    # analyze
    ana = sub.add_parser("analyze", help="representation analysis").add_subparsers(dest="action", required=True)
    sp = leaf(ana, "logitlens", cmd_analyze_logitlens, "per-layer KL to the final distribution")
    sp.add_argument("--hidden", nargs="+", required=True, help="[L, T, d] dumps")
    sp.add_argument("--lm-head", required=True, help="[d, V]")
    sp.add_argument("--final", help="[T, V] final logits (default: last layer through the head)")
    sp.add_argument("--out", required=True)
    sp = leaf(ana, "cka", cmd_analyze_cka, "layer-by-layer CKA and soft alignment")
    sp.add_argument("--a", required=True, help="[L, n, d] dump")
    sp.add_argument("--b", help="second [L, n, d] dump (default: --a)")
    sp.add_argument("--minibatch", type=int)
    sp.add_argument("-k", type=int, default=5)
    sp.add_argument("--out", required=True)
    sp = leaf(ana, "align", cmd_analyze_align, "soft alignment of a similarity matrix")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("-k", type=int, default=5)
    sp.add_argument("--out", required=True)
    sp = leaf(ana, "gates", cmd_analyze_gates, "export per-token gate values")
    sp.add_argument("--alpha", help="[layers, branches, T] tensor")
    sp.add_argument("--meta", help="JSON sidecar with tokens and token_text")
    sp.add_argument("--select", type=int, nargs="+")
    sp.add_argument("--weights")
    sp.add_argument("--tables")
    sp.add_argument("--tokens")
    sp.add_argument("--hidden")
    sp.add_argument("--out", required=True)
    hashing_opts(sp, tables=True)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    args.command_path = " ".join(x for x in (args.command, getattr(args, "action", None)) if x)
    if args.deterministic:
        args.threads = 1
    if args.threads < 1:
        args.threads = 1
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        problems = exc.problems if isinstance(exc, ConfigError) else [str(exc)]
        diag = {"error": type(exc).__name__, "command": args.command_path, "problems": problems}
        print(json.dumps(diag), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
