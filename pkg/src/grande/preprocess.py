"""Fitted tabular preprocessing: imputation, categorical encoding, gaussianization.

Columns whose non-missing cells all parse as numbers are numeric; every other
column is categorical.  Categorical columns with at most ten distinct training
values are one-hot encoded, the rest are leave-one-out target encoded.
Numeric and leave-one-out outputs are then mapped through the empirical CDF
of the training split and the inverse standard-normal CDF.  One-hot outputs
stay 0/1.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .exceptions import DataError

MAX_ONEHOT_CATEGORIES = 10
QUANTILE_CLIP = 1e-7
MAX_REFERENCE_QUANTILES = 1000


def _parse_float(cell):
    try:
        return float(cell)
    except (TypeError, ValueError):
        return None


class QuantileMap:
    """Monotone map from raw values to standard-normal scores."""

    def __init__(self, references: np.ndarray):
        self.references = np.asarray(references, dtype=np.float64)
        self.grid = np.linspace(0.0, 1.0, self.references.size)

    @classmethod
    def fit(cls, values, n_quantiles: int = MAX_REFERENCE_QUANTILES) -> "QuantileMap":
        values = np.asarray(values, dtype=np.float64)
        k = max(2, min(n_quantiles, values.size))
        return cls(np.quantile(values, np.linspace(0.0, 1.0, k)))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        refs, grid = self.references, self.grid
        # average the forward and backward interpolation so repeated
        # reference values map to the middle of their quantile range
        up = np.interp(x, refs, grid)
        down = 1.0 - np.interp(-x, -refs[::-1], grid)
        return 0.5 * (up + down)

    def transform(self, x) -> np.ndarray:
        q = np.clip(self.cdf(x), QUANTILE_CLIP, 1.0 - QUANTILE_CLIP)
        return ndtri(q)

    def inverse(self, u) -> np.ndarray:
        """Raw-unit value corresponding to the normal score ``u``."""
        return np.interp(ndtr(np.asarray(u, dtype=np.float64)), self.grid, self.references)

    def to_dict(self) -> dict:
        return {"references": self.references.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "QuantileMap":
        return cls(np.asarray(data["references"], dtype=np.float64))


@dataclass
class ColumnEncoder:
    name: str
    kind: str  # "numeric" | "onehot" | "loo"
    fill: object  # median (numeric) or mode (categorical)
    categories: list = field(default_factory=list)
    sums: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    global_mean: float = 0.0
    qmap: QuantileMap | None = None

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == "onehot" else 1

    def output_names(self) -> list:
        if self.kind == "onehot":
            return [f"{self.name}={c}" for c in self.categories]
        if self.kind == "loo":
            return [f"{self.name}[target-rate]"]
        return [self.name]

    def _loo(self, cells, y=None) -> np.ndarray:
        out = np.empty(len(cells))
        for i, c in enumerate(cells):
            count = self.counts.get(c, 0)
            total = self.sums.get(c, 0.0)
            if y is not None:
                # training rows exclude their own target
                count -= 1
                total -= y[i]
            out[i] = total / count if count > 0 else self.global_mean
        return out

    def encode(self, cells, y=None) -> np.ndarray:
        if self.kind == "numeric":
            return self.qmap.transform(np.asarray(cells, dtype=np.float64))[:, None]
        if self.kind == "loo":
            return self.qmap.transform(self._loo(cells, y))[:, None]
        index = {c: j for j, c in enumerate(self.categories)}
        out = np.zeros((len(cells), len(self.categories)))
        for i, c in enumerate(cells):
            j = index.get(c)
            if j is not None:
                out[i, j] = 1.0
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "fill": self.fill,
            "categories": list(self.categories),
            "sums": [[k, v] for k, v in sorted(self.sums.items())],
            "counts": [[k, v] for k, v in sorted(self.counts.items())],
            "global_mean": self.global_mean,
            "qmap": self.qmap.to_dict() if self.qmap is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnEncoder":
        return cls(
            d["name"],
            d["kind"],
            d["fill"],
            list(d["categories"]),
            {k: float(v) for k, v in d["sums"]},
            {k: int(v) for k, v in d["counts"]},
            float(d["global_mean"]),
            QuantileMap.from_dict(d["qmap"]) if d["qmap"] is not None else None,
        )


def _mode(values):
    counts = Counter(values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


class Preprocessor:
    """Replayable encoder fitted on a training split.

    Parameters of :meth:`fit`
    -------------------------
    columns : list of str
        Feature column names.
    rows : sequence of sequences
        Raw cells as strings, ``None`` for missing values.
    labels : array-like of 0/1
    """

    def __init__(self, encoders: list):
        self.encoders = encoders

    # -- fitting ---------------------------------------------------------

    @classmethod
    def fit(cls, columns, rows, labels) -> "Preprocessor":
        labels = np.asarray(labels)
        if len(rows) < 2:
            raise DataError("need at least two training rows")
        if len(labels) != len(rows):
            raise DataError("one label per row required")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("target must be binary (0/1) after label mapping")
        y = labels.astype(np.float64)
        encoders = []
        for j, name in enumerate(columns):
            raw = [r[j] for r in rows]
            present = [c for c in raw if c is not None]
            if not present:
                raise DataError(f"column {name!r} has no values")
            parsed = [_parse_float(c) for c in present]
            if all(v is not None for v in parsed):
                fill = float(np.median(parsed))
                values = np.array([fill if c is None else float(c) for c in raw])
                encoders.append(ColumnEncoder(name, "numeric", fill, qmap=QuantileMap.fit(values)))
                continue
            fill = _mode(present)
            cells = [fill if c is None else c for c in raw]
            categories = sorted(set(cells))
            if len(categories) <= MAX_ONEHOT_CATEGORIES:
                encoders.append(ColumnEncoder(name, "onehot", fill, categories))
                continue
            enc = ColumnEncoder(name, "loo", fill, global_mean=float(y.mean()))
            for c, t in zip(cells, y):
                enc.sums[c] = enc.sums.get(c, 0.0) + t
                enc.counts[c] = enc.counts.get(c, 0) + 1
            enc.qmap = QuantileMap.fit(enc._loo(cells, y))
            encoders.append(enc)
        return cls(encoders)

    # -- transforms ------------------------------------------------------

    @property
    def n_features(self) -> int:
        return sum(e.width for e in self.encoders)

    @property
    def feature_names(self) -> list:
        return [n for e in self.encoders for n in e.output_names()]

    @property
    def columns(self) -> list:
        return [e.name for e in self.encoders]

    def feature_sources(self) -> list:
        """``(encoder, category-or-None)`` for every output column."""
        out = []
        for e in self.encoders:
            if e.kind == "onehot":
                out.extend((e, c) for c in e.categories)
            else:
                out.append((e, None))
        return out

    def impute(self, rows) -> list:
        width = len(self.encoders)
        imputed = []
        for r in rows:
            if len(r) != width:
                raise DataError(f"row has {len(r)} cells, expected {width}")
            imputed.append([e.fill if c is None else c for e, c in zip(self.encoders, r)])
        return imputed

    def _transform(self, rows, y=None) -> np.ndarray:
        rows = self.impute(rows)
        blocks = []
        for j, enc in enumerate(self.encoders):
            cells = [r[j] for r in rows]
            if enc.kind == "numeric":
                parsed = [_parse_float(c) for c in cells]
                if any(v is None for v in parsed):
                    bad = next(c for c, v in zip(cells, parsed) if v is None)
                    raise DataError(f"non-numeric value {bad!r} in numeric column {enc.name!r}")
                cells = parsed
            blocks.append(enc.encode(cells, y))
        if not blocks:
            return np.zeros((len(rows), 0))
        return np.hstack(blocks)

    def transform_train(self, rows, labels) -> np.ndarray:
        """Encode the rows the preprocessor was fitted on (leave-one-out mode)."""
        labels = np.asarray(labels, dtype=np.float64)
        if len(labels) != len(rows):
            raise DataError("one label per row required")
        return self._transform(rows, labels)

    def transform_eval(self, rows) -> np.ndarray:
        return self._transform(rows)

    # -- explanation helpers --------------------------------------------

    def describe_split(self, feature: int, threshold: float) -> tuple:
        """Render the test ``x[feature] >= threshold`` in raw units.

        Returns ``(true_text, false_text)``.
        """
        enc, category = self.feature_sources()[feature]
        if enc.kind == "onehot":
            if threshold <= 0:
                return "always", "never"
            if threshold > 1:
                return "never", "always"
            return f"{enc.name} == {category!r}", f"{enc.name} != {category!r}"
        raw = float(enc.qmap.inverse(threshold))
        label = enc.name if enc.kind == "numeric" else f"target_rate({enc.name})"
        return f"{label} >= {raw:.6g}", f"{label} < {raw:.6g}"

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {"encoders": [e.to_dict() for e in self.encoders]}

    @classmethod
    def from_dict(cls, data: dict) -> "Preprocessor":
        return cls([ColumnEncoder.from_dict(d) for d in data["encoders"]])
