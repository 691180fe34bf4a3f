"""Command-line entry point: ``convgat <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure.
Warnings go to stderr; ``--json`` puts machine-readable results on stdout.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import MODEL_KINDS, make_model
from .errors import ConfigError, ConvGatError, IdLookupError, NumericError
from .features import EmbeddingStore, bind_features, load_embeddings, save_embeddings
from .gat import GatConfig, extract_attention
from .graph import (
    EDGE_MODES,
    TrimConfig,
    build_graph,
    export_dot,
    k_hop_nodes,
    read_graphs,
    receptive_field_stats,
    write_graphs,
)
from .metrics import format_ci
from .nn import grad_check, load_checkpoint, save_checkpoint
from .synth import snowball_corpus
from .thread import read_threads, thread_from_dict, write_threads
from .train import TrainConfig, bind_samples, evaluate, run_experiment

logger = logging.getLogger("convgat")

JOBS_ENV = "CONVGAT_JOBS"


def _emit(args, payload, text=None):
    if args.json or text is None:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- ingest / trim


def cmd_ingest(args) -> int:
    threads, problems = [], []
    with open(args.threads, "rb") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                threads.append(thread_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: malformed JSON at byte {exc.pos}: {exc.msg}")
            except ConvGatError as exc:
                problems.append(f"line {lineno}: {exc}")
            if problems and not args.skip_invalid:
                raise ConfigError(f"{args.threads}: {problems[0]}")
    write_threads(threads, args.out)
    warnings = [f"{t.thread_id}: {w}" for t in threads for w in t.warnings]
    for w in warnings:
        logger.warning(w)
    report = {
        "threads": len(threads),
        "comments": sum(len(t) for t in threads),
        "labeled": sum(len(t.labeled()) for t in threads),
        "warnings": warnings,
        "rejected": problems,
    }
    if args.report:
        _write_json(args.report, report)
    _emit(args, report, f"ingested {report['threads']} threads ({report['comments']} comments, "
          f"{report['labeled']} labeled); {len(warnings)} warnings, {len(problems)} rejected")
    return 0


def _trim_config(args) -> TrimConfig:
    return TrimConfig(
        strategy=args.strategy,
        top_k=args.top_k,
        post_edges={"all": "all_nodes", "target": "target_only"}[args.post_edges],
        recent_budget=args.recent_budget,
        edge_mode=args.edge_mode,
        exclude_after_target=not args.include_after_target,
    )


def cmd_trim(args) -> int:
    cfg = _trim_config(args)
    threads = read_threads(args.threads)
    if args.targets == "all-labeled":
        wanted = None
    else:
        wanted = [line.strip() for line in Path(args.targets).read_text(encoding="utf-8").splitlines() if line.strip()]
    graphs = []
    if wanted is None:
        for t in threads:
            graphs.extend(build_graph(t, c.id, cfg) for c in t.labeled())
    else:
        owner = {c.id: t for t in threads for c in t.comments}
        for target in wanted:
            if target not in owner:
                raise IdLookupError(f"target {target!r} not found in any thread", target)
            graphs.append(build_graph(owner[target], target, cfg))
    write_graphs(graphs, args.out)
    sizes = [len(g) for g in graphs]
    payload = {"graphs": len(graphs), "max_nodes": max(sizes, default=0), "config": dataclasses.asdict(cfg)}
    _emit(args, payload, f"wrote {len(graphs)} graphs to {args.out}")
    return 0


def cmd_stats(args) -> int:
    graphs = read_graphs(args.graphs)
    if not graphs:
        raise ConfigError(f"{args.graphs}: no graphs")
    table = []
    for k in range(1, args.k + 1):
        mx, med = receptive_field_stats(graphs, k)
        table.append({"k": k, "max": mx, "median": med})
    sizes = sorted(len(g) for g in graphs)
    histogram = dict(sorted(Counter(sizes).items()))
    payload = {
        "graphs": len(graphs),
        "receptive_field": table,
        "node_count": {"max": sizes[-1], "median": sizes[(len(sizes) - 1) // 2], "histogram": histogram},
    }
    lines = ["k  (max, median) nodes"] + [f"{r['k']}  ({r['max']}, {r['median']})" for r in table]
    lines.append(f"graph size: max {sizes[-1]}, median {payload['node_count']['median']}")
    lines += [f"  {n:3d} nodes: {c}" for n, c in histogram.items()]
    _emit(args, payload, "\n".join(lines))
    return 0


# ---------------------------------------------------------------- features


def _texts(threads_path) -> dict:
    return {c.id: c.text for t in read_threads(threads_path) for c in t.comments}


def _store(args) -> EmbeddingStore:
    if args.embeddings:
        return load_embeddings(args.embeddings)
    if args.hash_dim:
        if not args.threads:
            raise ConfigError("--hash-dim needs --threads to read comment texts")
        return EmbeddingStore.from_texts(_texts(args.threads), args.hash_dim, args.hash_seed)
    raise ConfigError("give --embeddings FILE or --hash-dim D with --threads FILE")


def cmd_embed(args) -> int:
    store = EmbeddingStore.from_texts(_texts(args.threads), args.hash_dim, args.hash_seed)
    save_embeddings(store, args.out)
    _emit(args, {"rows": len(store), "dim": store.d}, f"wrote {len(store)} embeddings (d={store.d}) to {args.out}")
    return 0


# ---------------------------------------------------------------- training

_GAT_KEYS = {f.name for f in dataclasses.fields(GatConfig)} - {"dim", "head_combine"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        parts = [p for p in value.replace(",", " ").split() if p]
        return tuple(type(like[0])(p) if like else float(p) for p in parts)
    return value.strip()


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    result = {}
    defaults = {**dataclasses.asdict(GatConfig()), **dataclasses.asdict(TrainConfig())}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            result[key] = _coerce(value, defaults[key])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return result


def _resolve(args, dim: int) -> tuple:
    """Defaults, then the ``--config`` file, then explicit flags (or a manifest's recorded values)."""
    values = getattr(args, "manifest_values", None)
    if values is not None:
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    else:
        values = read_config_file(args.config) if args.config else {}
        overrides = {
            "num_layers": args.layers,
            "heads": args.heads,
            "lr": args.lr,
            "max_epochs": args.epochs,
            "patience": args.patience,
            "accumulation_steps": args.accumulation_steps,
            "weight_decay": args.weight_decay,
            "selection": args.selection,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        if args.seeds is not None:
            values["seeds"] = tuple(range(args.seed_base, args.seed_base + args.seeds))
        if args.no_dropout:
            values["input_dropout"] = values["layer_dropout"] = 0.0
    gat = GatConfig(dim=dim, **{k: v for k, v in values.items() if k in _GAT_KEYS})
    train_cfg = TrainConfig(**{k: v for k, v in values.items() if k in _TRAIN_KEYS})
    return gat, train_cfg


def _save_run(out: Path, kind, gat_cfg, train_cfg, run) -> None:
    meta = {"model": kind, "gat": dataclasses.asdict(gat_cfg), "threshold": train_cfg.threshold, "seed": run.seed}
    save_checkpoint(out / f"checkpoint_seed{run.seed}.ckpt", run.params, meta)
    fields = ["epoch", "train_loss", "val_f1"] + (["val_loss"] if train_cfg.selection == "val_loss" else [])
    with open(out / f"history_seed{run.seed}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in run.history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    _write_json(out / f"report_seed{run.seed}.json", run.report.to_dict())


def cmd_train(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        _apply_manifest(args, manifest)
    store = _store(args)
    gat_cfg, train_cfg = _resolve(args, store.d)
    graphs = read_graphs(args.graphs)
    samples = bind_samples(graphs, store, args.missing)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {"graphs": args.graphs, "embeddings": args.embeddings, "threads": args.threads}
    manifest = {
        "tool": "convgat",
        "version": __version__,
        "command": "train",
        "model": args.model,
        "gat": dataclasses.asdict(gat_cfg),
        "train": dataclasses.asdict(train_cfg),
        "features": {"hash_dim": args.hash_dim, "hash_seed": args.hash_seed, "missing": args.missing},
        "inputs": {k: {"path": str(v), "sha256": _digest(v)} for k, v in inputs.items() if v},
        "seeds": list(train_cfg.seeds),
    }
    _write_json(out / "manifest.json", manifest)
    metrics, runs = run_experiment(args.model, gat_cfg, train_cfg, samples, jobs=args.jobs)
    for run in runs:
        _save_run(out, args.model, gat_cfg, train_cfg, run)
    _write_json(out / "metrics.json", metrics)
    text = f"{args.model}: mean F1 {metrics['mean_f1']:.4f}"
    if metrics["ci_halfwidth"] is not None:
        text = f"{args.model}: F1 {format_ci(metrics['mean_f1'], metrics['ci_halfwidth'])} over {metrics['n']} runs"
    _emit(args, metrics, text)
    return 0


def _apply_manifest(args, manifest) -> None:
    """Replace the run configuration with the one recorded in ``manifest``."""
    if manifest.get("command") != "train":
        raise ConfigError("manifest was not written by 'train'")
    inputs = manifest.get("inputs", {})
    for key in ("graphs", "embeddings", "threads"):
        entry = inputs.get(key)
        setattr(args, key, entry["path"] if entry else None)
        if entry and _digest(entry["path"]) != entry["sha256"]:
            raise ConfigError(f"input {entry['path']} changed since the manifest was written")
    feats = manifest["features"]
    args.hash_dim, args.hash_seed, args.missing = feats["hash_dim"], feats["hash_seed"], feats["missing"]
    args.model = manifest["model"]
    values = {**manifest["gat"], **manifest["train"]}
    values.pop("dim", None)
    values.pop("head_combine", None)
    args.manifest_values = values


def _load_model(path):
    tensors, meta = load_checkpoint(path)
    try:
        cfg = GatConfig(**meta["gat"])
        model = make_model(meta["model"], cfg)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: checkpoint metadata incomplete ({exc})") from None
    params = model.init_params(meta.get("seed", 0))
    params.load_state_dict(tensors)
    return model, params, meta


def cmd_eval(args) -> int:
    model, params, meta = _load_model(args.checkpoint)
    store = _store(args)
    samples = bind_samples(read_graphs(args.graphs), store, args.missing)
    report = evaluate(model, params, samples, meta.get("threshold", 0.5), meta.get("seed"))
    payload = report.to_dict()
    _write_json(args.out, payload)
    css = "n/a" if report.css_pcp is None else f"{report.css_pcp:.2f}%"
    cfs = "n/a" if report.cfs_pcp is None else f"{report.cfs_pcp:.2f}%"
    _emit(args, {k: payload[k] for k in ("f1", "css_pcp", "cfs_pcp", "seed")},
          f"F1 {report.f1:.4f}  CSS {css}  CFS {cfs}  ({len(samples)} samples)")
    return 0


def cmd_explain(args) -> int:
    model, params, _ = _load_model(args.checkpoint)
    if model.kind != "gat":
        raise ConfigError("explain needs a GAT checkpoint")
    graphs = [g for g in read_graphs(args.graphs) if args.graph_id in (g.target_id, f"{g.thread_id}/{g.target_id}")]
    if not graphs:
        raise IdLookupError(f"no graph with id {args.graph_id!r}", args.graph_id)
    graph = graphs[0]
    store = _store(args)
    x = bind_features(graph, store, args.missing)
    output = model.forward(graph, x, params, training=False)
    att = extract_attention(output, args.layer)
    texts = _texts(args.threads) if args.threads else None
    Path(args.out).write_text(export_dot(graph, att.as_edge_map(), texts), encoding="utf-8")
    payload = {"prob": float(output.prob), **att.to_json(graph)}
    if args.attention_json:
        _write_json(args.attention_json, att.to_json(graph))
    _emit(args, payload, f"{graph.target_id}: p(abusive) = {float(output.prob):.4f}; wrote {args.out}")
    return 0


# ---------------------------------------------------------------- checks / synthetic data


def random_tree_graph(rng, n, target=None):
    """Random reply tree of ``n`` nodes with post links, as a ConversationGraph."""
    from .graph import ConversationGraph

    parents = [None] + [int(rng.integers(0, i)) for i in range(1, n)]
    edges = [(parents[i], i, "reply") for i in range(1, n)] + [(0, i, "post_link") for i in range(1, n)]
    target = n - 1 if target is None else target
    return ConversationGraph("rand", f"c{target}", [f"c{i}" for i in range(n)], edges, label="abusive")


def run_gradcheck(dim, layers, heads, seed, nodes=5, eps=1e-6, model_kind="gat") -> dict:
    rng = np.random.default_rng(seed)
    graph = random_tree_graph(rng, nodes)
    cfg = GatConfig(num_layers=layers, heads=heads, dim=dim, input_dropout=0.0, layer_dropout=0.0)
    model = make_model(model_kind, cfg)
    params = model.init_params(seed)
    x = rng.standard_normal((nodes, dim))
    y = int(rng.integers(0, 2))

    def f(p, backward):
        out = model.forward(graph, x, p)
        if backward:
            model.backward(out, y, p)
        return model.loss(out, y)

    err = grad_check(f, params, eps)
    return {"max_rel_error": err, "parameters": params.num_parameters(), "dim": dim, "layers": layers,
            "heads": heads, "seed": seed, "nodes": nodes, "eps": eps, "model": model_kind}


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(args.dim, args.layers, args.heads, args.seed, args.nodes, args.eps, args.model)
    result["tolerance"] = args.tol
    result["passed"] = result["max_rel_error"] <= args.tol
    _emit(args, result, f"max relative error {result['max_rel_error']:.3e} "
          f"({'ok' if result['passed'] else 'FAILED'}, tolerance {args.tol:g})")
    if not result["passed"]:
        raise NumericError(f"gradient check failed: {result['max_rel_error']:.3e} > {args.tol:g}")
    return 0


def cmd_gen_synth(args) -> int:
    threads, cues = snowball_corpus(args.threads, args.snowball_depth, args.seed)
    write_threads(threads, args.out)
    if args.cues_out:
        _write_json(args.cues_out, cues)
    _emit(args, {"threads": len(threads), "depth": args.snowball_depth, "seed": args.seed},
          f"wrote {len(threads)} synthetic threads (cue depth {args.snowball_depth}) to {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def _add_feature_args(p) -> None:
    p.add_argument("--embeddings", help="embedding TSV (id<TAB>v0<TAB>...)")
    p.add_argument("--hash-dim", type=int, help="use the hashing embedder with this dimension")
    p.add_argument("--hash-seed", type=int, default=0)
    p.add_argument("--threads", help="thread JSONL, needed for --hash-dim and for node texts")
    p.add_argument("--missing", choices=("error", "zero"), default="error")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convgat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"convgat {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print machine-readable JSON on stdout")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate a thread corpus")
    p.add_argument("--threads", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the warning report as JSON")
    p.add_argument("--skip-invalid", action="store_true", help="drop invalid threads instead of failing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("trim", parents=[common], help="build per-target conversation graphs")
    p.add_argument("--threads", required=True)
    p.add_argument("--targets", default="all-labeled", help="file of target ids, or 'all-labeled'")
    p.add_argument("--strategy", choices=("affordance", "recent"), default="affordance")
    p.add_argument("--post-edges", choices=("all", "target"), default="all")
    p.add_argument("--edge-mode", choices=EDGE_MODES, default="directed")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--recent-budget", type=int, default=25)
    p.add_argument("--include-after-target", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trim)

    p = sub.add_parser("stats", parents=[common], help="receptive-field and graph-size statistics")
    p.add_argument("--graphs", required=True)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("embed", parents=[common], help="write hashing-embedder vectors as TSV")
    p.add_argument("--threads", required=True)
    p.add_argument("--hash-dim", type=int, required=True)
    p.add_argument("--hash-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", parents=[common], help="train one model per seed and report F1")
    p.add_argument("--graphs")
    _add_feature_args(p)
    p.add_argument("--model", choices=MODEL_KINDS, default="gat")
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--seeds", type=int, help="number of seeded runs")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--accumulation-steps", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--selection", choices=("val_f1", "val_loss"))
    p.add_argument("--no-dropout", action="store_true")
    p.add_argument("--config", help="key=value file; flags take precedence")
    p.add_argument("--manifest", help="rerun exactly the configuration recorded in a manifest.json")
    p.add_argument("--jobs", type=int, default=int(os.environ.get(JOBS_ENV, "1")))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graphs", required=True)
    _add_feature_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="DOT graph with learned attention weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--graph-id", required=True, help="target id (or thread_id/target_id)")
    p.add_argument("--layer", type=int, default=3)
    _add_feature_args(p)
    p.add_argument("--attention-json", help="also write the attention export JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the backward pass")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--model", choices=MODEL_KINDS, default="gat")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-synth", parents=[common], help="synthetic corpus with a cue K hops above the target")
    p.add_argument("--threads", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snowball-depth", type=int, default=3)
    p.add_argument("--cues-out", help="write thread_id -> cue comment id JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConvGatError as exc:
        print(f"convgat {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"convgat {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
