"""Batch command-line front end.

Subcommands: synth, probe, dvme, attn, report, gradcheck, inspect. Exit
codes: 0 success, 2 usage/config error, 3 data/corruption error, 4 numeric
failure. Flags are long-form only; an optional JSON config file supplies
defaults (keys mirror flag names, flags override); DVME_SEED is the fallback
seed. Every written report embeds the fully resolved run configuration.
"""

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .embedstore import SynthConfig, read_embx, synth_generate, validate, write_embx, write_manifest
from .errors import (
    DvmeError,
    FormatError,
    NumericError,
    ParameterError,
    UndefinedMetricError,
)
from .evalbench import (
    LeaderboardWeights,
    SubtaskSpec,
    TABLE1_SIZES,
    aggregate,
    combine_leaderboard,
    parse_report,
    render_report,
)
from .model import DvmeConfig, attention_block_summary, count_params, init_dvme
from .numerics import gradcheck, ops
from .protocol import derive_dvme_config, run_cv
from .training import TrainConfig

from . import model as model_ops

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _csv_ints(text):
    return tuple(int(v) for v in text.split(","))


def _csv_floats(text):
    return tuple(float(v) for v in text.split(","))


def _csv_names(text):
    return tuple(v.strip() for v in text.split(","))


def _add_training_flags(parser):
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--min-epochs", type=int, default=30)
    parser.add_argument("--max-epochs", type=int, default=50)
    parser.add_argument("--early-stop-patience", type=int, default=10)
    parser.add_argument("--scheduler-patience", type=int, default=5)
    parser.add_argument("--scheduler-factor", type=float, default=0.1)
    parser.add_argument("--oversample", action="store_true")
    parser.add_argument("--metric", choices=("auc", "kappa"), default="auc")
    parser.add_argument("--kappa-weighting", choices=("none", "quadratic"), default="quadratic")


def _add_protocol_flags(parser):
    parser.add_argument("--data", required=True)
    parser.add_argument("--subtask", choices=("small", "medium", "full"), default="small")
    parser.add_argument("--train-size", type=int, default=None)
    parser.add_argument("--dataset-name", default=None)
    parser.add_argument("--unbalanced", action="store_true")
    parser.add_argument("--folds", type=int, default=5)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    _add_training_flags(parser)


def _resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(os.environ.get("DVME_SEED", "0"))


def _train_config(args, seed):
    return TrainConfig(
        initial_lr=args.lr,
        batch_size=args.batch_size,
        min_epochs=args.min_epochs,
        max_epochs=args.max_epochs,
        early_stop_patience=args.early_stop_patience,
        scheduler_patience=args.scheduler_patience,
        scheduler_factor=args.scheduler_factor,
        seed=seed,
        oversample=args.oversample,
        monitor_metric=args.metric,
        kappa_weighting=args.kappa_weighting,
    )


def _subtask(args):
    if args.subtask == "full":
        return SubtaskSpec("full", args.train_size)
    if args.train_size is not None:
        return SubtaskSpec(args.subtask, args.train_size)
    if args.dataset_name:
        sizes = TABLE1_SIZES.get(args.dataset_name.lower())
        if sizes is None:
            raise ParameterError(
                f"unknown dataset {args.dataset_name!r}; known: {sorted(TABLE1_SIZES)}"
            )
        return SubtaskSpec(args.subtask, sizes[args.subtask])
    raise ParameterError("need --train-size or --dataset-name for this subtask")


def _load_dataset(path):
    dataset = read_embx(path)
    violations = validate(dataset)
    if violations:
        raise FormatError("invalid dataset: " + "; ".join(violations[:5]))
    return dataset


def _resolved_config(args, seed, **extra):
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    resolved["seed"] = seed
    resolved.update(extra)
    return json.dumps(resolved, sort_keys=True, default=str)


def _emit_report(args, text):
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)


def _print_cv_result(result, seed):
    print(f"model: {result.model_label}")
    print("fold  score")
    for outcome in result.outcomes:
        print(f"{outcome.fold:>4}  {outcome.score:.6f}")
    print(f"mean: {result.report.mean:.6f}  std: {result.report.std:.6f}  seed: {seed}")


def cmd_synth(args):
    seed = _resolve_seed(args)
    config = SynthConfig(
        num_classes=args.classes,
        source_dims=args.dims,
        samples_per_class=args.samples_per_class,
        sigma=args.sigma,
        mode=args.mode,
        seed=seed,
        source_names=args.source_names,
    )
    dataset = synth_generate(config)
    write_embx(dataset, args.out)
    write_manifest(
        args.out + ".manifest",
        {
            "dataset": "synthetic",
            "mode": config.mode,
            "classes": config.num_classes,
            "samples_per_class": config.samples_per_class,
            "sigma": config.sigma,
            "seed": seed,
            "sources": " ".join(f"{n}:{d}" for n, d in dataset.sources),
        },
    )
    dims = ",".join(str(d) for _, d in dataset.sources)
    print(f"wrote {args.out}: N={len(dataset)} dims={dims} classes={dataset.num_classes}")
    return EXIT_OK


def cmd_probe(args):
    seed = _resolve_seed(args)
    dataset = _load_dataset(args.data)
    result = run_cv(
        dataset,
        "probe",
        _subtask(args),
        _train_config(args, seed),
        seed,
        source=args.source,
        balanced=not args.unbalanced,
        k=args.folds,
        jobs=args.jobs,
    )
    _print_cv_result(result, seed)
    _emit_report(
        args,
        render_report(
            args.data,
            args.subtask,
            result.model_label,
            result.report,
            extra={"seed": seed, "config": _resolved_config(args, seed)},
        ),
    )
    return EXIT_OK


def cmd_dvme(args):
    seed = _resolve_seed(args)
    dataset = _load_dataset(args.data)
    dvme_config = derive_dvme_config(
        dataset,
        proj_dim=args.proj_dim,
        use_attention=not args.no_attention,
        dropout_p=args.dropout,
    )
    result = run_cv(
        dataset,
        "dvme",
        _subtask(args),
        _train_config(args, seed),
        seed,
        dvme_config=dvme_config,
        balanced=not args.unbalanced,
        k=args.folds,
        jobs=args.jobs,
    )
    _print_cv_result(result, seed)
    if args.checkpoint_out:
        best = result.outcomes[result.best_fold]
        save_checkpoint(args.checkpoint_out, dvme_config, best.params)
        print(f"checkpoint (fold {best.fold}): {args.checkpoint_out}")
    _emit_report(
        args,
        render_report(
            args.data,
            args.subtask,
            result.model_label,
            result.report,
            extra={"seed": seed, "config": _resolved_config(args, seed)},
        ),
    )
    return EXIT_OK


def cmd_attn(args):
    config, params = load_checkpoint(args.checkpoint)
    if not config.use_attention:
        raise ParameterError("checkpoint holds the no-attention variant")
    dataset = _load_dataset(args.data)
    if dataset.sources != config.source_dims:
        raise ParameterError(
            f"dataset sources {dataset.sources} do not match checkpoint {config.source_dims}"
        )
    inputs = {name: dataset.features[name] for name in dataset.source_names}
    summary = attention_block_summary(params, config, inputs)

    names = summary.source_names
    width = max(len(n) for n in names) + 2
    print(f"samples: {summary.sample_count}")
    print(" " * width + "".join(f"{n:>{width}}" for n in names))
    lines = []
    for i, name in enumerate(names):
        row = "".join(f"{summary.matrix[i, j]:>{width}.4f}" for j in range(len(names)))
        print(f"{name:>{width}}" + row)
        lines.append(f"{name}: " + " ".join(repr(float(v)) for v in summary.matrix[i]))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(f"samples: {summary.sample_count}\n")
            fh.write("sources: " + " ".join(names) + "\n")
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_report(args):
    if args.private is not None or args.public is not None or args.alpha is not None:
        if None in (args.private, args.public, args.alpha):
            raise ParameterError("--alpha, --private, and --public go together")
        combined = combine_leaderboard(
            LeaderboardWeights(args.alpha, args.private, args.public)
        )
        print(f"combined: {combined!r}")
        return EXIT_OK

    if args.scores:
        scores = args.scores
        metric = args.metric
    elif args.files:
        parsed = []
        for path in args.files:
            with open(path) as fh:
                parsed.append(parse_report(fh.read()))
        metrics = {p["metric"] for p in parsed}
        if len(metrics) > 1:
            raise ParameterError(f"mixed metric names: {sorted(metrics)}")
        metric = metrics.pop()
        scores = [s for p in parsed for s in p["fold_scores"]]
    else:
        raise ParameterError("need --scores, --files, or leaderboard flags")

    report = aggregate(scores, metric=metric)
    print(f"metric: {report.metric}")
    print("scores: " + " ".join(repr(s) for s in report.fold_scores))
    print(f"mean: {report.mean!r}")
    print(f"std: {report.std!r}")
    _emit_report(args, render_report("aggregate", "-", "-", report))
    return EXIT_OK


GRADCHECK_CONFIG = DvmeConfig(
    num_classes=3, source_dims=(("a", 5), ("b", 4), ("c", 3)), proj_dim=4
)


def _layer_checks(rng):
    """Per-layer finite-difference checks; yields (name, GradcheckResult)."""
    x = rng.standard_normal((3, 5))
    w_dir = rng.standard_normal((3, 4))

    def linear_f(params):
        y = ops.linear_forward(x, params["w"], params["b"])
        dx, dw, db = ops.linear_backward(x, params["w"], np.ones_like(y))
        return float(y.sum()), {"w": dw, "b": db}

    yield "linear", gradcheck(
        linear_f, {"w": rng.standard_normal((5, 4)), "b": rng.standard_normal(4)}
    )

    def softmax_f(params):
        y = ops.softmax_rows(params["x"])
        return float((y * w_dir).sum()), {"x": ops.softmax_rows_backward(y, w_dir)}

    yield "softmax", gradcheck(softmax_f, {"x": rng.standard_normal((3, 4))})

    def layernorm_f(params):
        y, cache = ops.layernorm_forward(params["x"], params["gamma"], params["beta"])
        dx, dgamma, dbeta = ops.layernorm_backward(cache, params["gamma"], w_dir)
        return float((y * w_dir).sum()), {"x": dx, "gamma": dgamma, "beta": dbeta}

    yield "layernorm", gradcheck(
        layernorm_f,
        {
            "x": rng.standard_normal((3, 4)),
            "gamma": rng.standard_normal(4),
            "beta": rng.standard_normal(4),
        },
    )

    def relu_f(params):
        y = ops.relu(params["x"])
        return float((y * w_dir).sum()), {"x": ops.relu_backward(params["x"], w_dir)}

    yield "relu", gradcheck(relu_f, {"x": rng.standard_normal((3, 4)) + 0.1})

    def dropout_f(params):
        stream = np.random.default_rng(99)
        y, scale = ops.dropout_forward(params["x"], 0.3, train=True, rng=stream)
        return float(y.sum()), {"x": ops.dropout_backward(scale, np.ones_like(y))}

    yield "dropout", gradcheck(dropout_f, {"x": rng.standard_normal((3, 4))})

    labels = rng.integers(0, 4, size=3)

    def ce_f(params):
        loss, probs = ops.cross_entropy(params["logits"], labels)
        return loss, {"logits": ops.cross_entropy_backward(probs, labels)}

    yield "cross_entropy", gradcheck(ce_f, {"logits": rng.standard_normal((3, 4))})

    ctx_dir = rng.standard_normal((2, 6))

    def attn_f(params):
        ctx = ops.attention_scalar_tokens(params["q"], params["k"], params["v"])
        dq, dk, dv = ops.attention_scalar_tokens_backward(
            params["q"], params["k"], params["v"], ctx_dir
        )
        return float((ctx * ctx_dir).sum()), {"q": dq, "k": dk, "v": dv}

    yield "attention", gradcheck(
        attn_f,
        {
            "q": np.ascontiguousarray(rng.standard_normal((2, 6))),
            "k": np.ascontiguousarray(rng.standard_normal((2, 6))),
            "v": np.ascontiguousarray(rng.standard_normal((2, 6))),
        },
    )


def full_model_check(seed, use_attention=True):
    rng = np.random.default_rng(seed)
    config = GRADCHECK_CONFIG if use_attention else DvmeConfig(
        num_classes=3,
        source_dims=GRADCHECK_CONFIG.source_dims,
        proj_dim=4,
        use_attention=False,
    )
    inputs = {
        name: rng.standard_normal((4, dim)) for name, dim in config.source_dims
    }
    labels = rng.integers(0, config.num_classes, size=4)

    def f(params):
        logits, cache = model_ops.dvme_forward(params, config, inputs, train=False)
        loss, probs = ops.cross_entropy(logits, labels)
        dlogits = ops.cross_entropy_backward(probs, labels)
        return loss, model_ops.dvme_backward(params, config, cache, dlogits)

    return gradcheck(f, init_dvme(config, seed=seed, dtype=np.float64))


def cmd_gradcheck(args):
    seed = _resolve_seed(args)
    rng = np.random.default_rng(seed)
    threshold = 1e-4
    worst = (0.0, "none")
    failed = False
    for name, result in _layer_checks(rng):
        status = "ok" if result.max_rel_err < threshold else "FAIL"
        print(f"{name:<16} {result.max_rel_err:.3e}  {status}")
        failed |= result.max_rel_err >= threshold
        if result.max_rel_err > worst[0]:
            worst = (result.max_rel_err, f"{name}:{result.worst_param}")
    for variant, use_attention in (("dvme", True), ("dvme-no-attention", False)):
        result = full_model_check(seed, use_attention)
        status = "ok" if result.max_rel_err < threshold else "FAIL"
        print(f"{variant:<16} {result.max_rel_err:.3e}  {status}")
        failed |= result.max_rel_err >= threshold
        if result.max_rel_err > worst[0]:
            worst = (result.max_rel_err, f"{variant}:{result.worst_param}")
    print(f"worst: {worst[1]} ({worst[0]:.3e})")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_inspect(args):
    dataset = read_embx(args.path)
    print(f"file: {args.path}")
    print(f"version: 1")
    print("sources: " + " ".join(f"{n}:{d}" for n, d in dataset.sources))
    print(f"classes: {dataset.num_classes}")
    print(f"samples: {len(dataset)}")
    print(f"group_ids: {'yes' if dataset.group_ids is not None else 'no'}")
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    print("class_counts: " + " ".join(str(int(c)) for c in counts))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dvme",
        description="Train and evaluate multi-source embedding fusion heads "
        "and linear probes with a cross-validated metric harness.",
    )
    parser.add_argument("--config", default=None, help="JSON file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic EMBX dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("redundant", "complementary"), default="complementary")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples-per-class", type=int, default=150)
    p.add_argument("--dims", type=_csv_ints, default=(24, 24, 24))
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--source-names", type=_csv_names, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("probe", help="5-fold linear probe on one source")
    p.add_argument("--source", required=True)
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("dvme", help="5-fold fusion-head evaluation")
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--proj-dim", type=int, default=512)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--checkpoint-out", default=None)
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_dvme)

    p = sub.add_parser("attn", help="attention summary of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("report", help="aggregate fold scores or combine leaderboard splits")
    p.add_argument("--scores", type=_csv_floats, default=None)
    p.add_argument("--files", nargs="+", default=None)
    p.add_argument("--metric", default="auc")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--private", type=float, default=None)
    p.add_argument("--public", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference suite over all layers")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="dump an EMBX header")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    return parser


def _apply_config_file(parser, argv):
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    with open(path) as fh:
        entries = json.load(fh)
    defaults = {key.replace("-", "_"): value for key, value in entries.items()}
    for action in parser._subparsers._group_actions[0].choices.values():
        known = {a.dest for a in action._actions}
        action.set_defaults(**{k: v for k, v in defaults.items() if k in known})


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        return args.func(args)
    except (FormatError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DvmeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint():
    sys.exit(main())
