"""Command-line orchestration: reproducible, config-driven runs.

Subcommands: extract, evaluate, sweep, baseline, train-lora, viz,
verify-checkpoint. Options resolve flag > config file > default; every
artifact embeds the effective configuration (everything that determines its
content, so output locations and job counts are excluded) and re-running
from that embedded config reproduces the artifact byte-for-byte.

Exit codes: 0 success, 1 validation, 2 runtime/data, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from . import baseline as baseline_mod
from . import evalkit, extract, filterscope, ingest, lora, probe, weight_io
from .encoder import ConfigError, EncodeInputError
from .numkit import NumericInstabilityError
from .probe import DivergenceError, TrainConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_VALIDATION_ERRORS = (
    ingest.ManifestError,
    ConfigError,
    evalkit.SplitError,
    weight_io.FormatError,
    probe.DegenerateLabelsError,
)
_DATA_ERRORS = (
    weight_io.CorruptCheckpointError,
    weight_io.FixtureIncompatibleError,
    extract.StaleCacheError,
    ingest.RecordLoadError,
    EncodeInputError,
    OSError,
)
_NUMERIC_ERRORS = (DivergenceError, NumericInstabilityError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=1))
        fh.write("\n")


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _resolve(args, name, default=None):
    """flag > config file > default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if getattr(args, "_config_file", None) and name in args._config_file:
        return args._config_file[name]
    return default


def _load_config_file(args) -> None:
    args._config_file = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            args._config_file = json.load(fh)


def _parse_layers(spec, n_layers: int):
    if isinstance(spec, (list, tuple)):
        layers = [int(v) for v in spec]
    else:
        layers = []
        for token in str(spec).split(","):
            token = token.strip()
            if token == "all":
                layers.extend(range(n_layers + 1))
            elif token == "last":
                layers.append(n_layers)
            elif token:
                layers.append(int(token))
    layers = sorted(set(layers))
    bad = [l for l in layers if l < 0 or l > n_layers]
    if bad:
        raise ConfigError(f"layer indices {bad} outside 0..{n_layers}")
    if not layers:
        raise ConfigError("no layers requested")
    return layers


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(_resolve(args, "lr", 1e-3)),
        epochs=int(_resolve(args, "epochs", 50)),
        batch_size=int(_resolve(args, "batch_size", 64)),
        seed=int(_resolve(args, "seed", 0)),
        weight_decay=float(_resolve(args, "weight_decay", 1e-5)),
        optimizer=str(_resolve(args, "optimizer", "adam")),
        class_weighting=bool(_resolve(args, "class_weighting", False)),
    )


def _train_echo(cfg: TrainConfig) -> dict:
    """Flat, flag-named echo so an artifact's config re-runs identically."""
    return {
        "lr": cfg.learning_rate,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "weight_decay": cfg.weight_decay,
        "optimizer": cfg.optimizer,
        "class_weighting": cfg.class_weighting,
    }


def _default_cache_path(out_dir, manifest, checkpoint_sha, options_key) -> str:
    cache_dir = os.environ.get("XMODAL_CACHE_DIR") or os.path.join(out_dir, "cache")
    os.makedirs(cache_dir, exist_ok=True)
    digest = hashlib.sha256(options_key.encode()).hexdigest()[:12]
    return os.path.join(cache_dir, f"{manifest.name}.{checkpoint_sha[:10]}.{digest}.cache")


def _prepare_cache(args, manifest, out_dir, layers):
    checkpoint = _resolve(args, "checkpoint")
    pooling = str(_resolve(args, "pooling", extract.POOL_MEAN))
    strategy = str(_resolve(args, "strategy", manifest.options.channel_strategy))
    up = int(_resolve(args, "upsample", manifest.options.upsample))
    std = bool(_resolve(args, "standardize", manifest.options.standardize))
    jobs = int(_resolve(args, "jobs", os.cpu_count() or 1))
    checkpoint_sha = weight_io.file_sha256(checkpoint)
    options_key = json.dumps(
        [sorted(layers), pooling, strategy, up, std], sort_keys=True
    )
    cache_path = _resolve(args, "cache") or _default_cache_path(
        out_dir, manifest, checkpoint_sha, options_key
    )
    cache, report = extract.extract_embeddings(
        manifest,
        checkpoint,
        layers,
        pooling=pooling,
        strategy=strategy,
        cache_path=cache_path,
        jobs=jobs,
        upsample_factor=up,
        standardize_flag=std,
    )
    echo = {
        "pooling": pooling,
        "strategy": strategy,
        "upsample": up,
        "standardize": std,
    }
    return cache, report, cache_path, echo


def _split_plan(args, manifest):
    scheme = str(_resolve(args, "scheme", manifest.eval_scheme.scheme))
    seed = int(_resolve(args, "split_seed", 0))
    if scheme == "loso":
        return evalkit.make_loso_splits(manifest), {"scheme": "loso", "split_seed": 0}
    k = int(_resolve(args, "k", manifest.eval_scheme.k or 5))
    plan = evalkit.make_kfold_splits(manifest, k, seed)
    return plan, {"scheme": "kfold", "k": k, "split_seed": seed}


def _format_agg(agg, scale=100.0, digits=1):
    if agg["mean"] is None:
        return "--"
    return f"{agg['mean'] * scale:.{digits}f} ± {agg['std'] * scale:.{digits}f}"


def _print_report_table(sweep_report):
    print(f"{'layer':>5}  {'macro-F1':>13}  {'accuracy':>13}  {'AUC':>13}")
    for layer in sorted(sweep_report.layers):
        agg = sweep_report.layers[layer].aggregate
        print(
            f"{layer:>5}  {_format_agg(agg['macro_f1']):>13}  "
            f"{_format_agg(agg['accuracy']):>13}  "
            f"{_format_agg(agg['auc'], scale=1.0, digits=3):>13}"
        )
    for layer, msg in sorted(sweep_report.errors.items()):
        print(f"{layer:>5}  ERROR: {msg}")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_extract(args) -> int:
    out_dir = _resolve(args, "out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    manifest = ingest.load_manifest(_resolve(args, "manifest"))
    ckpt_config = weight_io.load_checkpoint(_resolve(args, "checkpoint"))[0]
    layers = _parse_layers(
        _resolve(args, "layers", "all"), ckpt_config.n_transformer_layers
    )
    cache, report, cache_path, echo = _prepare_cache(args, manifest, out_dir, layers)
    effective = {
        "command": "extract",
        "version": __version__,
        "manifest": os.path.abspath(_resolve(args, "manifest")),
        "checkpoint": os.path.abspath(_resolve(args, "checkpoint")),
        "layers": layers,
        **echo,
    }
    artifact = {"effective_config": effective, "report": report.to_json_dict()}
    _write_json(os.path.join(out_dir, "extract_report.json"), artifact)
    print(
        f"extract: {report.n_computed} computed, {report.n_cached} cached, "
        f"{report.n_failed} failed -> {cache_path}"
    )
    for index, msg in report.failures:
        print(f"  record {index}: {msg}")
    return EXIT_OK if report.ok else EXIT_DATA


def _evaluate_like(args, command: str, write_csv: bool) -> int:
    out_dir = _resolve(args, "out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    manifest = ingest.load_manifest(_resolve(args, "manifest"))
    ckpt_config = weight_io.load_checkpoint(_resolve(args, "checkpoint"))[0]
    default_layers = "0,last" if command == "evaluate" else "all"
    layers = _parse_layers(
        _resolve(args, "layers", default_layers), ckpt_config.n_transformer_layers
    )
    probe_kind = str(_resolve(args, "probe", "mlp"))
    hidden_dim = int(_resolve(args, "hidden_dim", 512))
    train_cfg = _train_config(args)
    plan, plan_echo = _split_plan(args, manifest)

    cache, report, cache_path, extract_echo = _prepare_cache(
        args, manifest, out_dir, layers
    )
    if not report.ok:
        print(f"{command}: {report.n_failed} record(s) failed extraction", file=sys.stderr)
        for index, msg in report.failures:
            print(f"  record {index}: {msg}", file=sys.stderr)
        return EXIT_DATA

    effective = {
        "command": command,
        "version": __version__,
        "manifest": os.path.abspath(_resolve(args, "manifest")),
        "checkpoint": os.path.abspath(_resolve(args, "checkpoint")),
        "layers": layers,
        "probe": probe_kind,
        "hidden_dim": hidden_dim,
        **_train_echo(train_cfg),
        **extract_echo,
        **plan_echo,
    }
    sweep_report = evalkit.run_layer_sweep(
        cache,
        layers,
        plan,
        probe_kind,
        train_cfg,
        n_classes=manifest.n_classes,
        hidden_dim=hidden_dim,
        config_echo={"dataset": manifest.name},
    )
    artifact = {
        "effective_config": effective,
        "report": sweep_report.to_json_dict(),
    }
    name = "evaluate_report.json" if command == "evaluate" else "sweep_report.json"
    _write_json(os.path.join(out_dir, name), artifact)
    if write_csv:
        _write_text(os.path.join(out_dir, "sweep.csv"), evalkit.sweep_csv(sweep_report))
    _print_report_table(sweep_report)
    if sweep_report.errors:
        return EXIT_DATA
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    return _evaluate_like(args, "evaluate", write_csv=False)


def _cmd_sweep(args) -> int:
    return _evaluate_like(args, "sweep", write_csv=True)


def _cmd_baseline(args) -> int:
    out_dir = _resolve(args, "out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    manifest = ingest.load_manifest(_resolve(args, "manifest"))
    forest_cfg = baseline_mod.ForestConfig(
        n_trees=int(_resolve(args, "trees", 100)),
        max_depth=_resolve(args, "max_depth"),
        min_samples_leaf=int(_resolve(args, "min_samples_leaf", 1)),
        seed=int(_resolve(args, "seed", 0)),
    )
    plan, plan_echo = _split_plan(args, manifest)

    features = []
    labels = []
    for i in range(len(manifest.records)):
        window = ingest.load_window(manifest, i)
        features.append(baseline_mod.engineered_features(window))
        labels.append(window.label_id)
    x = np.stack(features)
    y = np.array(labels, dtype=np.int64)

    folds = []
    for fold_id, (train_idx, test_idx) in enumerate(plan.folds):
        forest = baseline_mod.train_forest(
            x[train_idx], y[train_idx], forest_cfg, n_classes=manifest.n_classes
        )
        probs = baseline_mod.forest_predict_batch(forest, x[test_idx])
        y_pred = probs.argmax(axis=1)
        try:
            fold_auc = evalkit.auc(y[test_idx], probs)
        except evalkit.UndefinedAUCError:
            fold_auc = None
        folds.append(
            evalkit.FoldMetrics(
                fold=fold_id,
                macro_f1=evalkit.macro_f1(y[test_idx], y_pred, manifest.n_classes),
                accuracy=evalkit.accuracy(y[test_idx], y_pred),
                auc=fold_auc,
                n_train=int(train_idx.size),
                n_test=int(test_idx.size),
            )
        )
    effective = {
        "command": "baseline",
        "version": __version__,
        "manifest": os.path.abspath(_resolve(args, "manifest")),
        "trees": forest_cfg.n_trees,
        "max_depth": forest_cfg.max_depth,
        "min_samples_leaf": forest_cfg.min_samples_leaf,
        "seed": forest_cfg.seed,
        **plan_echo,
    }
    report = evalkit.MetricReport(config=effective, folds=folds).finalize()
    _write_json(
        os.path.join(out_dir, "baseline_report.json"),
        {"effective_config": effective, "report": report.to_json_dict()},
    )
    final_forest = baseline_mod.train_forest(x, y, forest_cfg, n_classes=manifest.n_classes)
    _write_text(
        os.path.join(out_dir, "forest.json"), baseline_mod.forest_to_text(final_forest)
    )
    agg = report.aggregate
    print(
        f"baseline ({forest_cfg.n_trees} trees): macro-F1 {_format_agg(agg['macro_f1'])}, "
        f"accuracy {_format_agg(agg['accuracy'])}, "
        f"AUC {_format_agg(agg['auc'], scale=1.0, digits=3)}"
    )
    return EXIT_OK


def _cmd_train_lora(args) -> int:
    out_dir = _resolve(args, "out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    manifest = ingest.load_manifest(_resolve(args, "manifest"))
    checkpoint = _resolve(args, "checkpoint")
    ckpt_config, ckpt_weights = weight_io.load_checkpoint(checkpoint)
    n_layers = ckpt_config.n_transformer_layers
    probe_kind = str(_resolve(args, "probe", "mlp"))
    hidden_dim = int(_resolve(args, "hidden_dim", 512))
    rank = int(_resolve(args, "rank", lora.DEFAULT_RANK))
    alpha = float(_resolve(args, "alpha", lora.DEFAULT_ALPHA))
    raw_targets = _resolve(args, "targets", "q,v")
    if isinstance(raw_targets, (list, tuple)):
        targets = tuple(str(t) for t in raw_targets)
    else:
        targets = tuple(str(raw_targets).split(","))
    train_cfg = _train_config(args)
    plan, plan_echo = _split_plan(args, manifest)
    train_idx, test_idx = plan.folds[0]

    layer_spec = str(_resolve(args, "lora_layers", "all"))
    if layer_spec == "all":
        layer_sets = [tuple(range(1, n_layers + 1))]
    elif layer_spec == "one-at-a-time":
        layer_sets = [(l,) for l in range(1, n_layers + 1)]
    else:
        layer_sets = [tuple(sorted(int(t) for t in layer_spec.split(",")))]

    effective = {
        "command": "train-lora",
        "version": __version__,
        "manifest": os.path.abspath(_resolve(args, "manifest")),
        "checkpoint": os.path.abspath(checkpoint),
        "lora_layers": layer_spec,
        "rank": rank,
        "alpha": alpha,
        "targets": list(targets),
        "probe": probe_kind,
        "hidden_dim": hidden_dim,
        **_train_echo(train_cfg),
        **plan_echo,
    }

    runs = []
    for layer_set in layer_sets:
        lora_cfg = lora.LoraConfig(
            rank=rank, alpha=alpha, targets=targets, layers=layer_set, train=train_cfg
        )
        adapters, head, curve = lora.train_adapters(
            manifest,
            checkpoint,
            lora_cfg,
            probe_kind=probe_kind,
            record_indices=train_idx,
            hidden_dim=hidden_dim,
        )
        metrics = _lora_eval(
            manifest, ckpt_config, ckpt_weights, adapters, head, test_idx
        )
        tag = "-".join(str(l) for l in layer_set)
        bundle_path = os.path.join(out_dir, f"lora_layers_{tag}.bundle")
        lora.save_bundle(bundle_path, adapters, head, train_cfg)
        identity = not curve and all(np.all(a.B == 0.0) for a in adapters)
        runs.append(
            {
                "layers": list(layer_set),
                "loss_curve": curve,
                "test_macro_f1": metrics["macro_f1"],
                "test_accuracy": metrics["accuracy"],
                "adapters_identity": identity,
                "bundle": os.path.basename(bundle_path),
            }
        )
        note = " (identity: zero-epoch adapters)" if identity else ""
        print(
            f"train-lora layers {{{tag}}}: final loss "
            f"{curve[-1] if curve else float('nan'):.4f}, "
            f"test macro-F1 {metrics['macro_f1'] * 100:.1f}{note}"
        )
    _write_json(
        os.path.join(out_dir, "lora_report.json"),
        {"effective_config": effective, "runs": runs},
    )
    return EXIT_OK


def _lora_eval(manifest, config, weights, adapters, head, test_idx):
    adapter_map = {(a.layer, a.projection): a for a in adapters}
    w = weights.as_f64()
    from .numkit import RawOps

    rows = []
    labels = []
    for i in test_idx:
        window = ingest.load_window(manifest, int(i))
        waveforms = ingest.prepare_waveforms(window, manifest.options)
        inputs = [
            lora.conv_block_input(RawOps, wav[None, :], w, config) for wav in waveforms
        ]
        rows.append(
            lora._embed_with_adapters(
                RawOps, inputs, w, config, adapter_map, extract.POOL_MEAN
            )
        )
        labels.append(window.label_id)
    probs = probe.predict_batch(head, np.stack(rows))
    y = np.array(labels, dtype=np.int64)
    y_pred = probs.argmax(axis=1)
    return {
        "macro_f1": evalkit.macro_f1(y, y_pred, manifest.n_classes),
        "accuracy": evalkit.accuracy(y, y_pred),
    }


def _cmd_viz(args) -> int:
    out_dir = _resolve(args, "out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    checkpoint = _resolve(args, "checkpoint")
    _, weights = weight_io.load_checkpoint(checkpoint)
    top_k = int(_resolve(args, "top_k", 8))
    n_fft = int(_resolve(args, "n_fft", filterscope.DEFAULT_N_FFT))
    thresholds = filterscope.BandThresholds()
    raw_thresholds = _resolve(args, "thresholds")
    if isinstance(raw_thresholds, dict):
        thresholds = filterscope.BandThresholds(**raw_thresholds)
    elif raw_thresholds:
        a, b, c, d = (float(v) for v in str(raw_thresholds).split(","))
        thresholds = filterscope.BandThresholds(a, b, c, d)
    indices = None
    raw_indices = _resolve(args, "filters")
    if isinstance(raw_indices, (list, tuple)):
        indices = [int(v) for v in raw_indices]
    elif raw_indices:
        indices = [int(v) for v in str(raw_indices).split(",")]
    reports = filterscope.analyze_filters(
        weights["conv.0.weight"], top_k, n_fft, thresholds, indices=indices
    )
    effective = {
        "command": "viz",
        "version": __version__,
        "checkpoint": os.path.abspath(checkpoint),
        "top_k": top_k,
        "n_fft": n_fft,
        "thresholds": thresholds.to_json_dict(),
        "filters": indices,
    }
    _write_text(os.path.join(out_dir, "filters.csv"), filterscope.reports_to_csv(reports))
    _write_text(
        os.path.join(out_dir, "filters.svg"), filterscope.reports_to_svg(reports)
    )
    summary = json.loads(filterscope.reports_to_summary_json(reports, thresholds))
    _write_json(
        os.path.join(out_dir, "filters.json"),
        {"effective_config": effective, "summary": summary},
    )
    for rep in reports:
        print(f"filter {rep.index:>3}: L2 {rep.l2_norm:.4f}  {rep.band_class}")
    return EXIT_OK


def _cmd_verify_checkpoint(args) -> int:
    checkpoint = _resolve(args, "checkpoint")
    fixture = weight_io.load_fixture(_resolve(args, "fixture"))
    report = weight_io.verify_parity(checkpoint, fixture)
    for line in report.lines():
        print(line)
    print(
        f"parity {'PASS' if report.passed else 'FAIL'} "
        f"(tolerance {report.tolerance:g}, {report.n_frames} frames)"
    )
    return EXIT_OK if report.passed else EXIT_DATA


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def _add_common(p, with_checkpoint=True):
    p.add_argument("--manifest", help="dataset manifest JSON")
    if with_checkpoint:
        p.add_argument("--checkpoint", help="encoder checkpoint container")
    p.add_argument("--config", help="JSON config file; flags win over it")
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory (default .)")
    p.add_argument("--jobs", type=int, help="worker pool size (default: cores)")


def _add_train_flags(p):
    p.add_argument("--probe", choices=["linear", "mlp"])
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--class-weighting", dest="class_weighting", action="store_const", const=True)


def _add_eval_flags(p):
    p.add_argument("--scheme", choices=["loso", "kfold"])
    p.add_argument("--k", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)


def _add_extract_flags(p):
    p.add_argument("--layers", help='comma indices, "all", or "last"')
    p.add_argument("--pooling", choices=["mean", "max"])
    p.add_argument("--strategy", choices=["per-axis", "magnitude"])
    p.add_argument("--upsample", type=int)
    p.add_argument(
        "--no-standardize", dest="standardize", action="store_const", const=False
    )
    p.add_argument("--cache", help="embedding cache path (default: derived)")


def build_parser() -> _Parser:
    parser = _Parser(prog="xmodal", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed a manifest into a cache file")
    _add_common(p)
    _add_extract_flags(p)
    p.set_defaults(handler=_cmd_extract)

    for name, help_text in (
        ("evaluate", "probe selected layers and report metrics"),
        ("sweep", "probe every layer and emit plot-ready CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        _add_extract_flags(p)
        _add_train_flags(p)
        _add_eval_flags(p)
        p.set_defaults(handler=_cmd_evaluate if name == "evaluate" else _cmd_sweep)

    p = sub.add_parser("baseline", help="engineered features + random forest")
    _add_common(p, with_checkpoint=False)
    _add_eval_flags(p)
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("train-lora", help="train low-rank adapters + probe")
    _add_common(p)
    _add_train_flags(p)
    _add_eval_flags(p)
    p.add_argument("--lora-layers", dest="lora_layers",
                   help='"all", "one-at-a-time", or comma layer indices')
    p.add_argument("--rank", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--targets", help="comma projections from q,k,v,out")
    p.set_defaults(handler=_cmd_train_lora)

    p = sub.add_parser("viz", help="conv filter spectra: CSV + SVG")
    p.add_argument("--checkpoint")
    p.add_argument("--config", help="JSON config file; flags win over it")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--n-fft", dest="n_fft", type=int)
    p.add_argument("--thresholds", help="low_pos,high_pos,tail_ratio,edge_ratio")
    p.add_argument("--filters", help="comma filter indices (overrides top-k)")
    p.set_defaults(handler=_cmd_viz)

    p = sub.add_parser("verify-checkpoint", help="check a parity fixture")
    p.add_argument("--checkpoint")
    p.add_argument("--fixture")
    p.add_argument("--config", help="JSON config file; flags win over it")
    p.set_defaults(handler=_cmd_verify_checkpoint)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _load_config_file(args)
    try:
        return args.handler(args)
    except _NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except evalkit.UndefinedAUCError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
