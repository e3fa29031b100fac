"""Command-line entry point: ``glace {train,eval-lp,eval-nc,eval-inductive,export,replay}``."""

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from glace import __version__
from glace.encoder import load_checkpoint, save_checkpoint
from glace.errors import GlaceError, ValidationError
from glace.evaluate import (
    EvalReport,
    classification_features,
    concat_scores,
    embed,
    export_embeddings,
    inductive_link_prediction,
    link_prediction,
    node_classification,
)
from glace.graph import (
    hide_nodes,
    load_graph,
    load_labels,
    read_inductive,
    read_split,
    split_edges,
    write_id_map,
    write_inductive,
    write_split,
)
from glace.trainer import TrainConfig, train

log = logging.getLogger("glace")

DEFAULTS = {
    "directed": False,
    "mode": "first",
    "kind": "glace",
    "dim": 64,
    "hidden": 512,
    "negatives": 5,
    "batch": 512,
    "lr": 1e-3,
    "iters": 2000,
    "patience": 10,
    "val_every": 25,
    "seed": 0,
    "workers": 1,
    "test_frac": 0.2,
    "val_frac": 0.05,
    "hide_frac": 0.0,
    "symmetric": "auto",
    "activation": "linear",
    "export_sigma": True,
    "trials": 10,
    "train_frac": "0.1:0.9:0.1",
    "which": "test",
    "normalize": True,
    "with_sigma": False,
}

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


class UsageError(GlaceError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_config(path):
    """Plain ``key = value`` lines; ``#`` starts a comment. Keys use flag names."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(key, value):
    if not isinstance(value, str):
        return value
    default = DEFAULTS.get(key)
    if isinstance(default, bool):
        if value.lower() not in _BOOL:
            raise UsageError(f"config key {key}: expected a boolean, got {value!r}")
        return _BOOL[value.lower()]
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def resolve(args):
    """Merge built-in defaults < config file < command-line flags."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update({k: _coerce(k, v) for k, v in read_config(args.config).items()})
    for k, v in vars(args).items():
        if v is not None:
            merged[k] = v
        else:
            merged.setdefault(k, None)
    return argparse.Namespace(**merged)


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out, command, argv, cfg, inputs, outputs, started):
    manifest = {
        "command": command,
        "argv": argv,
        "config": {k: v for k, v in sorted(vars(cfg).items()) if k not in ("func", "command") and not k.startswith("_")},
        "seed": cfg.seed,
        "inputs": {str(p): _digest(p) for p in inputs if p and Path(p).exists()},
        "outputs": [str(p) for p in outputs],
        "wall_clock": round(time.time() - started, 3),
        "versions": {
            "glace": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    path = Path(out) / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _load(cfg):
    if not cfg.edges or not cfg.attrs:
        raise UsageError("--edges and --attrs are required")
    return load_graph(cfg.edges, cfg.attrs, directed=cfg.directed)


def _out_dir(cfg):
    if not cfg.out:
        raise UsageError("--out is required")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(cfg):
    symmetric = {"auto": None, "yes": True, "no": False}.get(cfg.symmetric)
    if cfg.symmetric not in ("auto", "yes", "no"):
        raise UsageError("--symmetric must be auto, yes or no")
    return TrainConfig(
        mode=cfg.mode,
        kind=cfg.kind,
        L=cfg.dim,
        m=cfg.hidden,
        N=cfg.negatives,
        batch_size=cfg.batch,
        learning_rate=cfg.lr,
        max_iters=cfg.iters,
        patience=cfg.patience,
        val_check_every=cfg.val_every,
        seed=cfg.seed,
        symmetric_kl=symmetric,
        hidden_activation=cfg.activation,
        workers=cfg.workers,
    )


# ---------------------------------------------------------------- commands


def cmd_train(cfg, argv):
    started = time.time()
    if cfg.kind == "lace" and getattr(cfg, "_explicit_export_sigma", False):
        raise UsageError("--export-sigma conflicts with --kind lace (point embeddings have no variances)")
    tcfg = _train_config(cfg)
    graph = _load(cfg)
    out = _out_dir(cfg)
    outputs = []

    if cfg.hide_frac:
        ind = hide_nodes(graph, cfg.hide_frac, seed=cfg.seed)
        write_inductive(out / "inductive.txt", ind)
        outputs.append(out / "inductive.txt")
        fit_graph = ind.visible_graph
        split = split_edges(fit_graph, test_frac=0.0, val_frac=cfg.val_frac, seed=cfg.seed)
    else:
        fit_graph = graph
        if cfg.split_manifest and Path(cfg.split_manifest).exists():
            split = read_split(cfg.split_manifest)
            if split.num_nodes != graph.num_nodes:
                raise ValidationError("split manifest does not match the graph")
        else:
            split = split_edges(graph, test_frac=cfg.test_frac, val_frac=cfg.val_frac, seed=cfg.seed)
            path = Path(cfg.split_manifest) if cfg.split_manifest else out / "split.txt"
            write_split(path, split)
            outputs.append(path)

    init = load_checkpoint(cfg.resume) if cfg.resume else None
    with open(out / "train.log", "w", encoding="utf-8") as log_file:
        model, report = train(fit_graph, split, tcfg, init=init, log_file=log_file)
    save_checkpoint(out / "model.ckpt", model)
    write_id_map(out / "ids.tsv", graph.node_ids)
    outputs += [out / "train.log", out / "model.ckpt", out / "ids.tsv"]
    if cfg.export:
        emb = embed(model, graph.attributes, graph.node_ids)
        if not cfg.export_sigma:
            emb.var = None
        export_embeddings(emb, cfg.export)
        outputs.append(Path(cfg.export))

    summary = EvalReport(
        task="train",
        seed=cfg.seed,
        config=tcfg.as_dict(),
        extra={
            "iterations_run": report.iterations_run,
            "best_iteration": report.best_iteration,
            "best_val_auc": f"{report.best_val_auc:.6f}",
        },
    )
    print(summary.to_text(), end="")
    _write_manifest(out, "train", argv, cfg, [cfg.edges, cfg.attrs, cfg.split_manifest, cfg.resume], outputs, started)
    return 0


def _checkpoints(cfg):
    paths = cfg.concat or ([cfg.checkpoint] if cfg.checkpoint else [])
    if not paths:
        raise UsageError("give --checkpoint or --concat")
    models = [load_checkpoint(p) for p in paths]
    shapes = {(m.shape[0], m.shape[2]) for m in models}
    if len(shapes) > 1:
        raise ValidationError(f"checkpoints disagree on (D, L): {sorted(shapes)}")
    return models


def _report(cfg, report, name):
    text = report.to_text()
    print(text, end="")
    if cfg.out:
        out = _out_dir(cfg)
        report.write(out / name)
        return [out / name]
    return []


def cmd_eval_lp(cfg, argv):
    started = time.time()
    models = _checkpoints(cfg)
    graph = _load(cfg)
    if not cfg.split_manifest:
        raise UsageError("--split-manifest is required")
    split = read_split(cfg.split_manifest)
    pos, neg = (split.test_pos, split.test_neg) if cfg.which == "test" else (split.val_pos, split.val_neg)
    embs = [embed(m, graph.attributes) for m in models]
    scores = concat_scores(embs, np.concatenate([pos, neg]), normalize=cfg.normalize)
    auc, ap = link_prediction(scores[: len(pos)], scores[len(pos):])
    report = EvalReport("link_prediction", auc=auc, ap=ap, seed=split.seed,
                        extra={"pairs": which_pairs(cfg.which), "models": len(models)})
    outputs = _report(cfg, report, "eval-lp.txt")
    if cfg.out:
        _write_manifest(cfg.out, "eval-lp", argv, cfg, [cfg.edges, cfg.attrs, cfg.split_manifest, *(cfg.concat or [cfg.checkpoint])], outputs, started)
    return 0


def which_pairs(which):
    return "test" if which == "test" else "validation"


def parse_fracs(spec):
    """``"0.5"`` or an inclusive sweep ``"lo:hi:step"``."""
    if ":" not in str(spec):
        return [float(spec)]
    lo, hi, step = (float(s) for s in spec.split(":"))
    count = int(round((hi - lo) / step)) + 1
    return [round(lo + k * step, 10) for k in range(count)]


def cmd_eval_nc(cfg, argv):
    started = time.time()
    graph = _load(cfg)
    if not cfg.labels:
        raise UsageError("--labels is required")
    labels, _ = load_labels(cfg.labels, graph)
    if cfg.raw:
        features = graph.attributes
        source = "attributes"
    else:
        models = _checkpoints(cfg)
        features = np.hstack([classification_features(embed(m, graph.attributes), cfg.with_sigma) for m in models])
        source = f"{len(models)}-model embedding"
    rows = []
    for frac in parse_fracs(cfg.train_frac):
        micro, macro = node_classification(features, labels, frac, seed=cfg.seed, trials=cfg.trials)
        rows.append((frac, micro, macro))
    text = "train_frac\tf1_micro\tf1_macro\n" + "".join(f"{f:.2f}\t{a:.6f}\t{b:.6f}\n" for f, a, b in rows)
    print(text, end="")
    outputs = []
    if cfg.out:
        out = _out_dir(cfg)
        (out / "eval-nc.tsv").write_text(text, encoding="utf-8")
        outputs.append(out / "eval-nc.tsv")
        if len(rows) == 1:
            EvalReport("node_classification", f1_micro=rows[0][1], f1_macro=rows[0][2], seed=cfg.seed,
                       extra={"features": source, "train_frac": rows[0][0]}).write(out / "eval-nc.txt")
            outputs.append(out / "eval-nc.txt")
        _write_manifest(out, "eval-nc", argv, cfg, [cfg.edges, cfg.attrs, cfg.labels], outputs, started)
    return 0


def cmd_eval_inductive(cfg, argv):
    started = time.time()
    models = _checkpoints(cfg)
    if len(models) != 1:
        raise UsageError("inductive evaluation takes a single --checkpoint")
    graph = _load(cfg)
    if not cfg.inductive_manifest:
        raise UsageError("--inductive-manifest is required")
    ind = read_inductive(cfg.inductive_manifest, graph)
    auc, ap = inductive_link_prediction(models[0], ind)
    report = EvalReport("inductive_link_prediction", auc=auc, ap=ap, seed=ind.seed,
                        extra={"hidden_nodes": len(ind.hidden_nodes)})
    outputs = _report(cfg, report, "eval-inductive.txt")
    if cfg.out:
        _write_manifest(cfg.out, "eval-inductive", argv, cfg, [cfg.edges, cfg.attrs, cfg.inductive_manifest], outputs, started)
    return 0


def cmd_export(cfg, argv):
    started = time.time()
    models = _checkpoints(cfg)
    if len(models) != 1:
        raise UsageError("export takes a single --checkpoint")
    graph = _load(cfg)
    if not cfg.out:
        raise UsageError("--out is required (path of the TSV to write)")
    emb = embed(models[0], graph.attributes, graph.node_ids)
    if not cfg.export_sigma:
        emb.var = None
    path = Path(cfg.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    export_embeddings(emb, path)
    print(f"wrote {emb.num_nodes} rows to {path}")
    _write_manifest(path.parent, "export", argv, cfg, [cfg.edges, cfg.attrs, cfg.checkpoint], [path], started)
    return 0


def cmd_replay(cfg, argv):
    manifest = json.loads(Path(cfg.manifest).read_text(encoding="utf-8"))
    return main(manifest["argv"])


# ---------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--edges")
    p.add_argument("--attrs")
    p.add_argument("--directed", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_inputs(p):
    p.add_argument("--checkpoint")
    p.add_argument("--concat", nargs="+", metavar="CKPT", help="score with several models combined")


def build_parser():
    parser = _Parser(prog="glace", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="fit a model")
    _common(p)
    p.add_argument("--mode", choices=("first", "second"))
    p.add_argument("--kind", choices=("glace", "lace"))
    p.add_argument("--dim", type=int, help="embedding dimension L")
    p.add_argument("--hidden", type=int, help="hidden width m")
    p.add_argument("--negatives", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--val-every", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--test-frac", type=float)
    p.add_argument("--val-frac", type=float)
    p.add_argument("--hide-frac", type=float, help="hide this node fraction (inductive setting)")
    p.add_argument("--symmetric", choices=("auto", "yes", "no"))
    p.add_argument("--activation", choices=("linear", "relu"))
    p.add_argument("--split-manifest")
    p.add_argument("--resume", metavar="CKPT")
    p.add_argument("--export", metavar="TSV")
    p.add_argument("--export-sigma", dest="export_sigma", action="store_true", default=None)
    p.add_argument("--no-export-sigma", dest="export_sigma", action="store_false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-lp", help="link prediction on a split manifest")
    _common(p)
    _model_inputs(p)
    p.add_argument("--split-manifest")
    p.add_argument("--which", choices=("test", "val"))
    p.add_argument("--no-normalize", dest="normalize", action="store_false", default=None)
    p.set_defaults(func=cmd_eval_lp)

    p = sub.add_parser("eval-nc", help="node classification")
    _common(p)
    _model_inputs(p)
    p.add_argument("--labels")
    p.add_argument("--train-frac", help="a fraction or lo:hi:step sweep")
    p.add_argument("--trials", type=int)
    p.add_argument("--raw", action="store_true", default=None, help="use raw attributes as features")
    p.add_argument("--with-sigma", action="store_true", default=None)
    p.set_defaults(func=cmd_eval_nc)

    p = sub.add_parser("eval-inductive", help="link prediction for hidden nodes")
    _common(p)
    _model_inputs(p)
    p.add_argument("--inductive-manifest")
    p.set_defaults(func=cmd_eval_inductive)

    p = sub.add_parser("export", help="write embeddings as TSV")
    _common(p)
    _model_inputs(p)
    p.add_argument("--export-sigma", dest="export_sigma", action="store_true", default=None)
    p.add_argument("--no-export-sigma", dest="export_sigma", action="store_false")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("glace: a command is required (try --help)")
        func = args.func
        explicit_sigma = getattr(args, "export_sigma", None) is True
        cfg = args if args.command == "replay" else resolve(args)
        cfg._explicit_export_sigma = explicit_sigma
        logging.basicConfig(level=logging.INFO if getattr(cfg, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        for key in ("edges", "attrs", "labels"):
            path = getattr(cfg, key, None)
            if path and not Path(path).exists():
                raise ValidationError(f"--{key}: no such file: {path}")
        return func(cfg, argv)
    except GlaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
