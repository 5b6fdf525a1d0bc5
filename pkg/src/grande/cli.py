"""Command-line entry point: ``grande <verb> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or model-file error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cv import run_cv
from .exceptions import ConfigError, DataError, ModelError, NumericalError
from .explain import explain_instance, weight_report
from .gradients import fd_check
from .io import GrandeModel, load_csv
from .metrics import classification_report
from .model import init_parameters
from .training import TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grande", description="Gradient-trained hard decision tree ensembles for tabular CSV data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(p, *, model=False, data=True, target=False, out=True):
        if data:
            p.add_argument("--data", required=True, help="CSV file with a header row")
        if target:
            p.add_argument("--target", required=True, help="name of the binary target column")
            p.add_argument("--positive-label", help="target value treated as class 1")
        if model:
            p.add_argument("--model", required=True, help="model JSON file")
        if out:
            p.add_argument("--out", help="write the report here instead of stdout")

    p = sub.add_parser("train", help="fit a model and write it to --out")
    common(p, target=True, out=False)
    p.add_argument("--out", "--model", dest="out", required=True, help="model file to write")
    p.add_argument("--config", help="JSON file with TrainConfig keys")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("predict", help="write class-1 probabilities for every row")
    common(p, model=True)

    p = sub.add_parser("evaluate", help="test metrics of a model, or k-fold CV with --cv")
    common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--positive-label")
    p.add_argument("--model", help="model file (single-split evaluation)")
    p.add_argument("--cv", type=int, metavar="K", help="run stratified K-fold cross-validation instead")
    p.add_argument("--config", help="JSON config for --cv training")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("explain", help="highest-weighted estimators for one row")
    common(p, model=True)
    p.add_argument("--instance", type=int, required=True, help="0-based data row index")
    p.add_argument("--top-k", type=int, default=5)

    p = sub.add_parser("stats", help="distribution statistics of the instance-wise weights")
    common(p, model=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--out")
    return parser


def _load_config(path, seed):
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    if seed is not None:
        data["seed"] = seed
    try:
        return TrainConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _emit(report, out):
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cmd_train(args):
    config = _load_config(args.config, args.seed)
    data = load_csv(args.data, args.target, args.positive_label)
    model = GrandeModel.train(data, config)
    model.save(args.out)
    best = min(model.history, key=lambda h: h["valid_loss"]) if model.history else None
    _emit({"model": args.out, "epochs": len(model.history), "best_epoch": best}, None)


def _cmd_predict(args):
    model = GrandeModel.load(args.model)
    data = load_csv(args.data)
    proba = model.predict_proba(data)
    labels = [model.positive_label if p >= 0.5 else model.negative_label for p in proba]
    _emit({"predictions": [{"row": i, "probability": float(p), "label": lab}
                           for i, (p, lab) in enumerate(zip(proba, labels))]}, args.out)


def _cmd_evaluate(args):
    if (args.model is None) == (args.cv is None):
        raise UsageError("evaluate needs exactly one of --model or --cv")
    if args.cv is not None:
        config = _load_config(args.config, args.seed)
        data = load_csv(args.data, args.target, args.positive_label)
        _emit(run_cv(data, config, args.cv), args.out)
        return
    model = GrandeModel.load(args.model)
    data = load_csv(args.data, args.target, args.positive_label or model.positive_label)
    report = classification_report(data.labels, model.predict_proba(data))
    report["n_samples"] = len(data)
    _emit(report, args.out)


def _cmd_explain(args):
    model = GrandeModel.load(args.model)
    data = load_csv(args.data)
    if not 0 <= args.instance < len(data):
        raise DataError(f"--instance {args.instance} outside 0..{len(data) - 1}")
    x = model.transform(data)
    report = explain_instance(model.params, x[args.instance], args.top_k, reference=x,
                              preprocessor=model.preprocessor, kind=model.config.split_kind)
    report["instance"] = args.instance
    _emit(report, args.out)
    if args.out:
        print(report["rules"])


def _cmd_stats(args):
    model = GrandeModel.load(args.model)
    x = model.transform(load_csv(args.data))
    _emit(weight_report(model.params, x, model.config.split_kind).to_dict(), args.out)


def gradcheck_report(seed: int = 0, epsilon: float = 1e-5) -> dict:
    """Finite-difference report on a random E=4, d=3, n=5 model and a batch of 16."""
    rng = np.random.default_rng(seed)
    params = init_parameters(4, 3, 5, rng)
    params.leaf_values[...] = rng.standard_normal(params.leaf_values.shape)
    params.leaf_weights[...] = rng.standard_normal(params.leaf_weights.shape)
    x = rng.standard_normal((16, 5))
    y = rng.integers(0, 2, 16)
    y[:2] = (0, 1)
    errors = fd_check(params, x, y, epsilon)
    worst = max(errors[g] for g in ("thresholds", "leaf_values", "leaf_weights"))
    return {"seed": seed, "epsilon": epsilon, "max_rel_error": {k: float(v) for k, v in errors.items()},
            "worst": float(worst), "tolerance": GRADCHECK_TOLERANCE, "passed": bool(worst < GRADCHECK_TOLERANCE)}


def _cmd_gradcheck(args):
    if not args.epsilon > 0:
        raise ConfigError("--epsilon must be positive")
    report = gradcheck_report(args.seed, args.epsilon)
    _emit(report, args.out)
    if not report["passed"]:
        raise NumericalError(f"gradient check failed: max relative error {report['worst']:.3g}")


COMMANDS = {
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "stats": _cmd_stats,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.verb](args)
    except (UsageError, ConfigError) as exc:
        print(exc, file=sys.stderr)
        if isinstance(exc, UsageError):
            parser.print_help(sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
