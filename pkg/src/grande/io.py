"""CSV ingestion, the fitted-model wrapper and its JSON file format."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError, ModelError
from .model import EnsembleParameters, predict_proba
from .preprocess import Preprocessor
from .training import TrainConfig, fit

FORMAT_NAME = "grande-model"
FORMAT_VERSION = 1
RNG_ALGORITHM = "numpy.PCG64"
MISSING_TOKENS = {"", "?"}


@dataclass
class Dataset:
    columns: list
    rows: list
    labels: np.ndarray | None = None
    target: str | None = None
    positive_label: str | None = None
    negative_label: str | None = None

    def __len__(self):
        return len(self.rows)

    def subset(self, idx) -> "Dataset":
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(list(self.columns), [list(self.rows[i]) for i in idx], labels, self.target,
                       self.positive_label, self.negative_label)


def _cell(value: str):
    value = value.strip()
    return None if value in MISSING_TOKENS else value


def read_table(path):
    """Header and rows of a CSV file; missing cells become ``None``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file, header row required") from None
            header = [h.strip() for h in header]
            rows = []
            for lineno, raw in enumerate(reader, start=2):
                if not raw:
                    continue
                if len(raw) != len(header):
                    raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(raw)}")
                rows.append([_cell(c) for c in raw])
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except csv.Error as exc:
        raise DataError(f"{path}: malformed CSV: {exc}") from exc
    return header, rows


def load_csv(path, target: str | None = None, positive_label: str | None = None) -> Dataset:
    """Load a CSV file, splitting off and binarising ``target`` if given.

    Without ``positive_label`` the lexicographically greater of the two
    target values is the positive class.
    """
    header, rows = read_table(path)
    if target is None:
        return Dataset(header, rows)
    if target not in header:
        raise DataError(f"target column {target!r} not in header")
    t = header.index(target)
    raw_targets = [r[t] for r in rows]
    if any(v is None for v in raw_targets):
        raise DataError(f"target column {target!r} has missing values")
    values = sorted(set(raw_targets))
    if len(values) != 2:
        raise DataError(f"target column {target!r} must have exactly two values, found {len(values)}")
    if positive_label is None:
        positive_label = values[1]
    elif positive_label not in values:
        raise DataError(f"positive label {positive_label!r} not among target values {values}")
    negative_label = values[0] if values[1] == positive_label else values[1]
    labels = np.array([1 if v == positive_label else 0 for v in raw_targets], dtype=np.int64)
    columns = header[:t] + header[t + 1 :]
    rows = [r[:t] + r[t + 1 :] for r in rows]
    return Dataset(columns, rows, labels, target, positive_label, negative_label)


def align_rows(data: Dataset, columns: list) -> list:
    """Rows of ``data`` reordered to ``columns`` (extra columns ignored)."""
    missing = [c for c in columns if c not in data.columns]
    if missing:
        raise DataError(f"data lacks model columns: {', '.join(missing)}")
    pos = [data.columns.index(c) for c in columns]
    return [[r[p] for p in pos] for r in data.rows]


# ---------------------------------------------------------------------------
# Fitted model
# ---------------------------------------------------------------------------


@dataclass
class GrandeModel:
    config: TrainConfig
    preprocessor: Preprocessor
    params: EnsembleParameters
    history: list = field(default_factory=list)
    target: str | None = None
    positive_label: str | None = None
    negative_label: str | None = None

    @classmethod
    def train(cls, data: Dataset, config: TrainConfig | None = None) -> "GrandeModel":
        config = config or TrainConfig()
        if data.labels is None:
            raise DataError("training data needs a target column")
        pre = Preprocessor.fit(data.columns, data.rows, data.labels)
        x = pre.transform_train(data.rows, data.labels)
        params, history = fit(x, data.labels, config=config)
        return cls(config, pre, params, history, data.target, data.positive_label, data.negative_label)

    def transform(self, data: Dataset) -> np.ndarray:
        return self.preprocessor.transform_eval(align_rows(data, self.preprocessor.columns))

    def predict_proba(self, data: Dataset) -> np.ndarray:
        return predict_proba(self.transform(data), self.params, self.config.split_kind)

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        arrays = dict(self.params.arrays(), feature_masks=self.params.feature_masks.astype(np.int64))
        return {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "rng": {"algorithm": RNG_ALGORITHM, "seed": self.config.seed},
            "config": self.config.to_dict(),
            "target": {"name": self.target, "positive_label": self.positive_label,
                       "negative_label": self.negative_label},
            "preprocessor": self.preprocessor.to_dict(),
            "parameters": {
                "depth": self.params.depth,
                "n_estimators": self.params.n_estimators,
                "n_features": self.params.n_features,
                "arrays": {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in arrays.items()},
            },
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GrandeModel":
        if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
            raise ModelError("not a grande model file")
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelError(f"unsupported model format version {version!r}; this build reads {FORMAT_VERSION}")
        try:
            config = TrainConfig.from_dict(doc["config"])
            pre = Preprocessor.from_dict(doc["preprocessor"])
            header = doc["parameters"]
            arrays = {}
            for name, entry in header["arrays"].items():
                data = np.asarray(entry["data"], dtype=np.float64)
                shape = tuple(entry["shape"])
                if data.size != int(np.prod(shape)):
                    raise ModelError(f"array {name} holds {data.size} values for shape {shape}")
                arrays[name] = data.reshape(shape)
            params = EnsembleParameters(
                arrays["index_logits"],
                arrays["thresholds"],
                arrays["leaf_values"],
                arrays["leaf_weights"],
                arrays["feature_masks"].astype(bool),
            )
            target = doc["target"]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ModelError):
                raise
            raise ModelError(f"malformed model file: {exc}") from exc
        if (params.depth, params.n_estimators, params.n_features) != (
            header["depth"], header["n_estimators"], header["n_features"]
        ):
            raise ModelError("parameter header disagrees with array shapes")
        if params.n_features != pre.n_features:
            raise ModelError("preprocessor width disagrees with the ensemble")
        if not params.is_finite():
            raise ModelError("model parameters contain non-finite values")
        return cls(config, pre, params, doc.get("history", []), target["name"], target["positive_label"],
                   target["negative_label"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GrandeModel":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ModelError(f"cannot read model file {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelError(f"model file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


save_model = GrandeModel.save
load_model = GrandeModel.load
