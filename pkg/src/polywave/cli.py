"""Command-line entry point: ``polywave <subcommand> [options]``.

Subcommands: train, eval, gradcheck, equivalent, complexity, denoise, gen-data.
Every run writes ``manifest.json`` into ``--out`` with the resolved
configuration. Exit codes: 0 success, 1 a check failed (gradcheck above its
threshold), 2 configuration error, 3 topology error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, audio, complexity, datagen, equivalence
from .network import LayerSpec, Network, NetworkSpec, TopologyError, load_model
from .tensor import ShapeError
from .training import (FoldPlan, MSE, CategoricalCrossEntropy, NumericError, TrainConfig, evaluate, fit,
                       grad_check_report, kfold_train, write_trace)

log = logging.getLogger("polywave")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_TOPOLOGY = 3
EXIT_NUMERIC = 4

GRADCHECK_THRESHOLD = 1e-5
UNIT_RANGE_ACTIVATIONS = {"relu", "swish"}


class ConfigError(ValueError):
    """Bad flags, missing files or unusable datasets."""


# config helpers ---------------------------------------------------------------

def _load_spec(args) -> NetworkSpec:
    if not args.topology:
        raise ConfigError("--topology is required")
    path = Path(args.topology)
    if not path.is_file():
        raise ConfigError(f"topology file not found: {path}")
    spec = NetworkSpec.load(path)
    if getattr(args, "activation", None):
        spec = override_activation(spec, args.activation)
    return spec


def override_activation(spec: NetworkSpec, name: str) -> NetworkSpec:
    """Set every conv layer's activation to ``name``.

    Dense heads keep theirs. For relu and swish the last conv layer of a fully
    convolutional network gets sigmoid so its output stays bounded.
    """
    convs = [i for i, l in enumerate(spec.layers) if l.is_conv]
    fully_conv = not any(l.kind == "dense" for l in spec.layers)
    layers = []
    for i, l in enumerate(spec.layers):
        if l.is_conv:
            act = "sigmoid" if (fully_conv and i == convs[-1] and name in UNIT_RANGE_ACTIVATIONS) else name
            l = LayerSpec(l.kind, l.units, l.kernel, l.degree, act)
        layers.append(l)
    return spec.with_layers(layers)


def _load_data(args) -> dict:
    """A dataset directory, or a generator spec ``tones[:n_per_class]`` / ``denoise[:count]``."""
    if not args.data:
        raise ConfigError("--data is required")
    kind, _, count = args.data.partition(":")
    if kind in ("tones", "denoise") and not Path(args.data).exists():
        try:
            n = int(count) if count else None
        except ValueError:
            raise ConfigError(f"bad generator count in --data {args.data!r}") from None
        return generate(kind, n, args.seed, getattr(args, "snr_db", None))
    path = Path(args.data)
    if not (path / "dataset.json").is_file():
        raise ConfigError(f"not a dataset directory: {path}")
    return datagen.read_dataset(path)


def generate(kind: str, count: int | None, seed: int, snr_db: float | None, length: int | None = None) -> dict:
    if kind == "tones":
        spec = datagen.ToneSpec()
        if length:
            spec = datagen.ToneSpec(duration=length / spec.sample_rate)
        data = datagen.gen_tones(spec, count or 200, seed)
        return {"kind": "tones", "count": len(data.labels), "length": spec.length,
                "sample_rate": spec.sample_rate, "n_classes": spec.n_classes,
                "signals": data.signals, "labels": data.labels}
    snr_db = 0.0 if snr_db is None else snr_db
    length = length or 1600
    clean, noisy = datagen.gen_denoise_pairs(count or 500, length, seed, snr_db)
    return {"kind": "denoise", "count": len(clean), "length": length, "sample_rate": 16000,
            "snr_db": snr_db, "clean": clean, "noisy": noisy}


def _windowed(data: dict, spec: NetworkSpec, overlap: float, unit_range: bool):
    """Model-ready ``(x, y, groups, task)`` from a loaded dataset."""
    wspec = audio.WindowSpec(spec.input_length, overlap)
    if data["kind"] == "tones":
        signals = data["signals"]
        if unit_range:
            signals = np.stack([audio.to_unit_interval(s) for s in signals])
        labelled = datagen.LabeledSignals(signals, data["labels"], data["sample_rate"])
        x, y, groups = datagen.windowed_classification_set(labelled, wspec, data["n_classes"])
        return x, y, groups, "classification"
    xs, ys, groups = [], [], []
    for i, (c, n) in enumerate(zip(data["clean"], data["noisy"])):
        if unit_range:
            c, n = audio.to_unit_interval(c), audio.to_unit_interval(n)
        wn, _ = audio.slide(n, wspec)
        wc, _ = audio.slide(c, wspec)
        xs.append(wn)
        ys.append(wc)
        groups += [i] * len(wn)
    return (np.concatenate(xs)[:, None, :], np.concatenate(ys)[:, None, :], np.asarray(groups),
            "denoising")


def _holdout(groups, frac: float, seed: int):
    uniq = np.unique(groups)
    n_valid = max(1, int(round(frac * len(uniq))))
    if n_valid >= len(uniq):
        raise ConfigError("dataset too small for a hold-out split")
    valid = np.random.default_rng(seed).permutation(uniq)[:n_valid]
    return np.isin(groups, valid)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, args) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {"tool": "polywave", "version": __version__, "config": config,
                "threads": os.environ.get("POLYWAVE_THREADS")}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# subcommands ------------------------------------------------------------------

def cmd_train(args) -> int:
    spec = _load_spec(args)
    data = _load_data(args)
    unit_range = args.activation in UNIT_RANGE_ACTIVATIONS
    x, y, groups, task = _windowed(data, spec, args.overlap, unit_range)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, optimizer=args.optimizer,
                      clip_norm=args.clip_norm, seed=args.seed)
    out = _out_dir(args)
    write_manifest(out, args)
    if args.folds > 1:
        result = kfold_train(spec, (x, y), FoldPlan(args.folds, args.seed), cfg, task, groups)
        write_trace(result.rows, out / "trace.csv")
        for fi, net in enumerate(result.models):
            net.save(out / f"model-fold{fi}.pwm", {"task": task, "fold": fi})
        _write_json(out / "summary.json", result.summary())
        print(json.dumps(result.summary(), sort_keys=True))
        return EXIT_OK
    valid = _holdout(groups, args.valid_frac, args.seed)
    net = Network(spec, args.seed)
    rows = fit(net, (x[~valid], y[~valid]), (x[valid], y[valid]), task, cfg,
               valid_groups=groups[valid] if task == "classification" else None)
    write_trace(rows, out / "trace.csv")
    net.save(out / "model.pwm", {"task": task, "unit_range": unit_range})
    final = {r.metric: r.value for r in rows if r.epoch == cfg.epochs and r.split == "valid"}
    _write_json(out / "summary.json", final)
    print(json.dumps(final, sort_keys=True))
    return EXIT_OK


def _load_net(args):
    path = Path(args.model or "")
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}")
    try:
        return load_model(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None


def _denoise_signal(net, noisy, wspec, unit_range: bool):
    """End-to-end denoising in the signal's own range, mapping through [0, 1] for unit-range models."""
    if not unit_range:
        return audio.denoise_end_to_end(net, noisy, wspec)
    return audio.from_unit_interval(audio.denoise_end_to_end(net, audio.to_unit_interval(noisy), wspec))


def cmd_eval(args) -> int:
    net, meta = _load_net(args)
    data = _load_data(args)
    x, y, groups, task = _windowed(data, net.spec, args.overlap, bool(meta.get("unit_range")))
    metrics = evaluate(net, x, y, task, groups if task == "classification" else None)
    if task == "denoising":
        wspec = audio.WindowSpec(net.spec.input_length, args.overlap)
        unit = bool(meta.get("unit_range"))
        reports = [audio.MetricReport.for_signal(c, _denoise_signal(net, n, wspec, unit))
                   for c, n in zip(data["clean"], data["noisy"])]
        for key in ("snr_db", "snrseg_db", "mse"):
            metrics[f"end_to_end_{key}"] = float(np.mean([r.as_dict()[key] for r in reports]))
    out = _out_dir(args)
    write_manifest(out, args)
    _write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    spec = _load_spec(args)
    if args.length:
        spec = NetworkSpec(spec.input_channels, args.length, spec.layers, spec.padding)
    net = Network(spec, args.seed)
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.batch,) + net.shapes[0])
    if net.output_activation == "softmax":
        n_classes = net.shapes[-1][0]
        target, loss = np.eye(n_classes)[rng.integers(n_classes, size=args.batch)], CategoricalCrossEntropy()
    else:
        target, loss = rng.standard_normal((args.batch,) + net.shapes[-1]), MSE()
    report = grad_check_report(net, x, target, loss, h=args.h)
    out = _out_dir(args)
    write_manifest(out, args)
    result = {"worst_relative_error": report["worst"], "worst_absolute_error": report["worst_abs"],
              "where": report["where"], "threshold": args.threshold}
    _write_json(out / "gradcheck.json", result)
    print(f"worst relative error: {report['worst']:.3e}")
    return EXIT_OK if report["worst"] <= args.threshold else EXIT_CHECK_FAILED


def cmd_equivalent(args) -> int:
    spec = _load_spec(args)
    report = equivalence.build_equivalent(spec)
    out = _out_dir(args)
    write_manifest(out, args)
    if report.constructed is spec:
        text = Path(args.topology).read_text()
    else:
        text = report.constructed.to_text()
    (out / "equivalent.txt").write_text(text)
    (out / "report.txt").write_text(report.to_text())
    sys.stdout.write(text)
    sys.stderr.write(report.to_text())
    return EXIT_OK


def _parse_degrees(text: str) -> list[int]:
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-", 1))
            degrees = list(range(lo, hi + 1))
        else:
            degrees = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad degree list {text!r}") from None
    if not degrees or min(degrees) < 1:
        raise ConfigError("degrees must be >= 1")
    return degrees


def cmd_complexity(args) -> int:
    degrees = _parse_degrees(args.degrees)
    dims = complexity.REFERENCE_DIMS
    out = _out_dir(args)
    write_manifest(out, args)
    fwd_curve = complexity.time_curve(1.0, dims, degrees, "forward")
    learn_curve = complexity.time_curve(1.0, dims, degrees, "learning")
    rows = ["degree,cnn_forward_ops,pnn_forward_ops,cnn_learning_ops,pnn_learning_ops,"
            "forward_time_rel,learning_time_rel"]
    for i, d in enumerate(degrees):
        dd = dims.with_degree(d)
        rows.append(",".join([str(d), repr(float(complexity.cnn_forward_ops(dd))),
                              repr(float(complexity.forward_ops(dd))),
                              repr(float(complexity.cnn_learning_ops(dd))),
                              repr(float(complexity.learning_ops(dd))),
                              repr(float(fwd_curve[i])), repr(float(learn_curve[i]))]))
    (out / "complexity.csv").write_text("\n".join(rows) + "\n")
    if args.bench:
        results = complexity.run_bench(degrees, reps=args.reps, seed=args.seed)
        complexity.write_bench_csv(results, out / "bench.csv")
    print(f"wrote {out / 'complexity.csv'}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    net, meta = _load_net(args)
    if not args.input or not Path(args.input).is_file():
        raise ConfigError(f"input signal not found: {args.input}")
    noisy, rate = audio.read_signal(args.input)
    wspec = audio.WindowSpec(net.spec.input_length, args.overlap)
    est = _denoise_signal(net, noisy, wspec, bool(meta.get("unit_range")))
    out = _out_dir(args)
    write_manifest(out, args)
    audio.write_signal(out / "denoised.f8", est, rate or 16000)
    if args.reference:
        clean, _ = audio.read_signal(args.reference)
        metrics = {"input": audio.MetricReport.for_signal(clean, noisy).as_dict(),
                   "output": audio.MetricReport.for_signal(clean, est).as_dict()}
        _write_json(out / "metrics.json", metrics)
        print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    data = generate(args.kind, args.count, args.seed, args.snr_db, args.length)
    out = _out_dir(args)
    write_manifest(out, args)
    meta = {"seed": args.seed}
    if args.kind == "tones":
        labelled = datagen.LabeledSignals(data["signals"], data["labels"], data["sample_rate"])
        datagen.write_tone_dataset(out, labelled, data["n_classes"], meta)
    else:
        datagen.write_denoise_dataset(out, data["clean"], data["noisy"], data["sample_rate"],
                                      {**meta, "snr_db": data["snr_db"]})
    print(f"wrote {data['count']} signals to {out}")
    return EXIT_OK


# parser -----------------------------------------------------------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polywave", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=f"polywave-{name}", help="output directory")
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "train a network, write model file and metric trace")
    p.add_argument("--topology", required=True)
    p.add_argument("--data", required=True, help="dataset directory or tones[:n] / denoise[:n]")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--batch", type=_positive_int, default=32)
    p.add_argument("--folds", type=_positive_int, default=1, help="k-fold cross-validation when > 1")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--activation", default=None, help="override every conv layer's activation")
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--valid-frac", type=float, default=0.2)
    p.add_argument("--snr-db", type=float, default=None, help="noise level for the denoise generator")

    p = add("eval", cmd_eval, "evaluate a model file on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--snr-db", type=float, default=None)

    p = add("gradcheck", cmd_gradcheck, "compare analytic and finite-difference gradients")
    p.add_argument("--topology", required=True)
    p.add_argument("--length", type=_positive_int, default=None, help="override the input length")
    p.add_argument("--batch", type=_positive_int, default=1)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--threshold", type=float, default=GRADCHECK_THRESHOLD)
    p.add_argument("--activation", default=None)

    p = add("equivalent", cmd_equivalent, "build the parameter-matched plain conv network")
    p.add_argument("--topology", required=True)

    p = add("complexity", cmd_complexity, "operation counts and time curves as CSV")
    p.add_argument("--degrees", default="1-10", help="e.g. 1-10 or 1,2,5")
    p.add_argument("--bench", action="store_true", help="also time the reference layer")
    p.add_argument("--reps", type=_positive_int, default=1000)

    p = add("denoise", cmd_denoise, "denoise a signal with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="noisy signal (.f8 or .txt)")
    p.add_argument("--reference", default=None, help="clean signal for metrics")
    p.add_argument("--overlap", type=float, default=0.5)

    p = add("gen-data", cmd_gen_data, "write a synthetic dataset directory")
    p.add_argument("--kind", choices=["tones", "denoise"], required=True)
    p.add_argument("--count", type=_positive_int, default=None,
                   help="signals per class (tones) or pairs (denoise)")
    p.add_argument("--length", type=_positive_int, default=None, help="samples per signal")
    p.add_argument("--snr-db", type=float, default=None)
    return parser


def _thread_limit():
    value = os.environ.get("POLYWAVE_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"POLYWAVE_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("POLYWAVE_THREADS must be >= 1")
    return threadpool_limits(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (TopologyError, ShapeError) as exc:
        log.error("topology error: %s", exc)
        return EXIT_TOPOLOGY
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
