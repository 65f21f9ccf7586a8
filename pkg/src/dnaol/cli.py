"""Command line: ``dnaol {gen,train,eval,bench}``.

Settings come from an optional ``key = value`` config file; command-line
flags override it. Exit codes: 0 success, 1 runtime failure, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import baselines
from .admm import DivergenceError
from .classify import (REFERENCE_ACCURACY, evaluate, write_confusion_csv,
                       write_predictions_csv)
from .data import (FormatError, gen_synthetic, load_labels, load_matrix, load_model,
                   normalize_unit_l2, save_labels, save_matrix, save_model, split)
from .train import HyperParams, default_threads, train, write_training_log

logger = logging.getLogger("dnaol")

HP_KEYS = {f.name: f for f in fields(HyperParams)}
RUN_DEFAULTS = {
    "scheme": "sep",
    "normalize": True,
    "threads": None,
    "crc_ridge": 1e-3,
    "budgets": "40,80,160",
    "train_per_class": 50,
    "data": None,
    "labels": None,
    "model": None,
    "log": None,
}


class ConfigError(Exception):
    """Bad config file or flag value; maps to exit code 2."""


def _parse_bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _coerce(key, value):
    try:
        if key in HP_KEYS:
            return int(value) if HP_KEYS[key].type in ("int", int) else float(value)
        if key == "normalize":
            return _parse_bool(value)
        if key in ("threads", "train_per_class"):
            return int(value)
        if key == "crc_ridge":
            return float(value)
        if key == "scheme":
            if value not in ("sep", "nonsep"):
                raise ConfigError(f"scheme must be sep or nonsep, got {value!r}")
        return value
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in HP_KEYS and key not in RUN_DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_settings(args, announce=True):
    """Merge defaults < config file < flags. Returns ``(HyperParams, run_settings)``."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    for key in list(HP_KEYS) + list(RUN_DEFAULTS):
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = _coerce(key, flag)
    hp_kwargs = {k: cfg[k] for k in HP_KEYS if k in cfg}
    missing = [k for k in HP_KEYS if k not in cfg]
    if announce and missing:
        defaults = HyperParams()
        print("using defaults: " + ", ".join(f"{k}={getattr(defaults, k)}" for k in missing),
              file=sys.stderr)
    try:
        hp = HyperParams(**hp_kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    run = dict(RUN_DEFAULTS)
    run.update({k: v for k, v in cfg.items() if k in RUN_DEFAULTS})
    if run["threads"] is None:
        run["threads"] = default_threads()
    return hp, run


def _load_data(data, labels, normalize):
    X = load_matrix(data)
    y = load_labels(labels)
    if X.shape[1] != y.size:
        raise ValueError(f"{data} has {X.shape[1]} samples but {labels} has {y.size} labels")
    if normalize:
        X, _ = normalize_unit_l2(X)
    return X, y


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    X, y = gen_synthetic(args.classes, args.per_class, args.dim, args.sep, args.noise, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "csv" else "bin"
    save_matrix(out / f"X.{ext}", X, fmt=args.format)
    save_labels(out / "labels.txt", y)
    print(f"wrote {out / f'X.{ext}'} and {out / 'labels.txt'}: "
          f"{args.classes} classes x {args.per_class} samples, dim {args.dim}, "
          f"separation {args.sep}, noise {args.noise}, seed {args.seed}")
    return 0


def cmd_train(args):
    hp, run = resolve_settings(args)
    if not run["data"] or not run["labels"] or not run["model"]:
        raise ConfigError("train needs data, labels and model paths")
    X, y = _load_data(run["data"], run["labels"], run["normalize"])
    t0 = time.perf_counter()
    model = train(X, y, hp, scheme=run["scheme"], threads=run["threads"])
    elapsed = time.perf_counter() - t0
    save_model(run["model"], model)
    if run["log"]:
        write_training_log(model.log, run["log"])
    print(f"scheme {run['scheme']}: final loss {model.log[-1]['loss']:.6g} "
          f"after {model.log[-1]['iteration']} outer iterations, {elapsed:.2f} s")
    return 0


def cmd_eval(args):
    normalize = _parse_bool(args.normalize) if args.normalize is not None else True
    model = load_model(args.model)
    X, y = _load_data(args.data, args.labels, normalize)
    if X.shape[1] == 0:
        raise ValueError("empty test set")
    n_model = model.models[0].n if hasattr(model, "models") else model.model.n
    if X.shape[0] != n_model:
        raise ValueError(f"model expects dimension {n_model}, data has {X.shape[0]}")
    scheme = "sep" if hasattr(model, "models") else "nonsep"
    C = max(model.n_classes, int(y.max()) + 1)
    rep = evaluate(model, X, y, n_classes=C)
    print(f"[{scheme} model]")
    print(rep.summary())
    if args.predictions:
        write_predictions_csv(args.predictions, rep.predictions, y)
    if args.confusion:
        write_confusion_csv(args.confusion, rep.confusion)
    if args.baseline == "crc":
        if not args.train_data or not args.train_labels:
            raise ConfigError("--baseline crc needs --train-data and --train-labels")
        Xtr, ytr = _load_data(args.train_data, args.train_labels, normalize)
        crc = baselines.fit_crc(Xtr, ytr, ridge=args.crc_ridge)
        crep = evaluate(crc, X, y, n_classes=C)
        print("[CRC]")
        print(crep.summary())
    ref = REFERENCE_ACCURACY[scheme]
    print("reference accuracies on the original image benchmarks (context only): "
          + ", ".join(f"{k} {v:.1f}%" for k, v in ref.items()))
    return 0


def cmd_bench(args):
    hp, run = resolve_settings(args)
    try:
        budgets = [int(b) for b in str(run["budgets"]).split(",") if b.strip()]
    except ValueError:
        raise ConfigError(f"bad budgets list: {run['budgets']!r}") from None
    if not budgets:
        raise ConfigError("no feature-dimension budgets given")
    if run["data"] and run["labels"]:
        X, y = load_matrix(run["data"]), load_labels(run["labels"])
    else:
        print("no data given; using the synthetic fixture "
              "(4 classes x 100, dim 20, separation 5, noise 1)", file=sys.stderr)
        X, y = gen_synthetic(4, 100, 20, 5.0, 1.0, hp.seed)
    (Xtr, ytr), (Xte, yte) = split(X, y, run["train_per_class"], hp.seed)
    if run["normalize"]:
        Xtr, _ = normalize_unit_l2(Xtr)
        Xte, _ = normalize_unit_l2(Xte)
    rows = []
    for scheme in ("sep", "nonsep"):
        for budget in budgets:
            hpb = HyperParams(**{**vars(hp), "feature_dim": budget})
            t0 = time.perf_counter()
            model = train(Xtr, ytr, hpb, scheme=scheme, threads=run["threads"])
            train_s = time.perf_counter() - t0
            rep = evaluate(model, Xte, yte)
            rows.append([scheme, budget, f"{train_s:.6f}", f"{rep.mean_query_seconds:.9f}",
                         f"{rep.accuracy:.6f}"])
            print(f"{scheme:6s} budget {budget:5d}: train {train_s:8.3f} s, "
                  f"query {rep.mean_query_seconds * 1e6:8.1f} us, accuracy {rep.accuracy:.4f}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "feature_dim", "train_seconds", "test_seconds_per_query",
                    "accuracy"])
        w.writerows(rows)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_hp_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--scheme", choices=("sep", "nonsep"))
    for name, f in HP_KEYS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name,
                       type=int if f.type in ("int", int) else float)
    p.add_argument("--normalize", help="unit l2 column normalization (true/false)")
    p.add_argument("--threads", type=int, help="per-class training threads (sep)")


def build_parser():
    parser = argparse.ArgumentParser(prog="dnaol", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic Gaussian-cluster data set")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--dim", type=int, default=20)
    g.add_argument("--sep", type=float, default=5.0)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("csv", "bin"), default="csv")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    _add_hp_flags(t)
    t.add_argument("--data")
    t.add_argument("--labels")
    t.add_argument("--model", help="output model file")
    t.add_argument("--log", help="training log CSV")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model on labelled data")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--normalize")
    e.add_argument("--predictions", help="predictions CSV")
    e.add_argument("--confusion", help="confusion matrix CSV")
    e.add_argument("--baseline", choices=("crc",))
    e.add_argument("--train-data")
    e.add_argument("--train-labels")
    e.add_argument("--crc-ridge", type=float, default=1e-3)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="training/testing time across feature budgets")
    _add_hp_flags(b)
    b.add_argument("--data")
    b.add_argument("--labels")
    b.add_argument("--budgets", help="comma-separated feature-dimension budgets")
    b.add_argument("--train-per-class", type=int)
    b.add_argument("--out", required=True, help="timing table CSV")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"dnaol {args.command}: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"dnaol {args.command}: training diverged: {e}", file=sys.stderr)
        return 1
    except (FormatError, ValueError, np.linalg.LinAlgError) as e:
        print(f"dnaol {args.command}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"dnaol {args.command}: {e.filename}: {e.strerror}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
