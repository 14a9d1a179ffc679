"""Feature normalisation, stratified folds, (C, gamma) grid search and metrics."""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .rng import SplitMix64
from .svm import LabeledDataset, SvmModel, predict_many, train_smo

log = logging.getLogger(__name__)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    degenerate: Optional[np.ndarray] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.degenerate is None:
            self.degenerate = np.zeros(len(self.mean), dtype=bool)
        if np.any(self.std <= 0):
            raise InvalidArgument("normalizer std entries must be positive")

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != len(self.mean):
            raise InvalidArgument(f"expected {len(self.mean)} features, got {X.shape[-1]}")
        return (X - self.mean) / self.std

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.std + self.mean


def zscore_fit(X) -> Normalizer:
    """Per-feature mean and population std; constant features get std 1 and a flag."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise InvalidArgument("need at least 2 rows to fit a normalizer")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    degenerate = ~(std > 0)
    if np.any(degenerate):
        log.info("%d constant feature(s); std set to 1", int(degenerate.sum()))
    std = np.where(degenerate, 1.0, std)
    return Normalizer(mean, std, degenerate)


def zscore_apply(norm: Normalizer, x) -> np.ndarray:
    return norm.apply(x)


def stratified_kfold(y, m: int, seed: int = 0) -> list[np.ndarray]:
    """Split indices into ``m`` folds, dealing each class's shuffled indices round-robin."""
    y = np.asarray(y)
    if m < 2:
        raise InvalidArgument("need at least 2 folds")
    folds = [[] for _ in range(m)]
    rng = SplitMix64(seed)
    for label in sorted(set(y.tolist()), reverse=True):
        idx = np.flatnonzero(y == label).tolist()
        if len(idx) < m:
            raise InvalidArgument(f"class {label} has {len(idx)} members, fewer than {m} folds")
        rng.shuffle(idx)
        for k, i in enumerate(idx):
            folds[k % m].append(i)
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def stratified_subsample(y, fraction: float, seed: int, min_per_class: int = 1) -> np.ndarray:
    """Seeded stratified subset: ``round(fraction * n_c)`` per class, at least ``min_per_class``."""
    y = np.asarray(y)
    if not 0 < fraction <= 1:
        raise InvalidArgument("fraction must be in (0, 1]")
    rng = SplitMix64(seed)
    keep = []
    for label in sorted(set(y.tolist()), reverse=True):
        idx = np.flatnonzero(y == label).tolist()
        take = min(len(idx), max(min_per_class, int(round(fraction * len(idx)))))
        rng.shuffle(idx)
        keep.extend(idx[:take])
    return np.array(sorted(keep), dtype=np.int64)


@dataclass(frozen=True)
class GridSpec:
    log2C: tuple = (-5.0, 17.0, 2.0)
    log2gamma: tuple = (-15.0, 3.0, 2.0)
    fine_halfwidth: float = 2.0
    fine_step: float = 0.25
    folds: int = 5
    fraction: float = 0.05
    seed: int = 0
    tol: float = 1e-3
    refine: bool = True

    def __post_init__(self):
        for name in ("log2C", "log2gamma"):
            lo, hi, step = getattr(self, name)
            if step <= 0 or hi < lo:
                raise InvalidArgument(f"{name} range must be non-empty with positive step")
        if self.fine_step <= 0 or self.fine_halfwidth < 0:
            raise InvalidArgument("fine grid needs positive step and non-negative half-width")
        if not 0 < self.fraction <= 1:
            raise InvalidArgument("fraction must be in (0, 1]")
        if self.folds < 2:
            raise InvalidArgument("need at least 2 folds")


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def coarse_axes(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    return _axis(*spec.log2C), _axis(*spec.log2gamma)


@dataclass
class GridResult:
    best_log2C: float
    best_log2gamma: float
    best_accuracy: float
    cells: list = field(default_factory=list)  # (log2C, log2gamma, cv_accuracy, failed)

    @property
    def best_C(self) -> float:
        return float(2.0 ** self.best_log2C)

    @property
    def best_gamma(self) -> float:
        return float(2.0 ** self.best_log2gamma)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("log2C,log2gamma,cv_accuracy\n")
        for lc, lg, acc, _ in sorted(self.cells, key=lambda c: (c[0], c[1])):
            buf.write(f"{lc!r},{lg!r},{acc!r}\n")
        return buf.getvalue()


def cv_accuracy(data: LabeledDataset, folds, C: float, gamma: float, tol: float = 1e-3,
                seed: int = 0) -> float:
    """Unweighted mean validation accuracy over folds."""
    n = len(data)
    accs = []
    for k, val in enumerate(folds):
        train = np.setdiff1d(np.arange(n), val, assume_unique=True)
        model = train_smo(data.subset(train), C, gamma, tol=tol, seed=seed + k)
        pred = predict_many(model, data.X[val])
        accs.append(float(np.mean(pred == data.y[val])))
    return float(np.mean(accs))


def _better(acc, lc, lg, best):
    if best is None:
        return True
    bacc, blc, blg = best
    if acc != bacc:
        return acc > bacc
    return (lc, lg) < (blc, blg)


def grid_search(data: LabeledDataset, spec: GridSpec = GridSpec()) -> GridResult:
    """Coarse exponential grid, then a finer grid around the coarse winner.

    Cells are scored by mean k-fold CV accuracy on a stratified subsample.
    Ties go to the smaller C, then the smaller gamma.  A cell whose training
    raises scores 0 and is flagged.
    """
    if len(data) == 0:
        raise InvalidArgument("empty dataset")
    sub = stratified_subsample(data.y, spec.fraction, spec.seed, min_per_class=spec.folds)
    d = data.subset(sub)
    folds = stratified_kfold(d.y, spec.folds, spec.seed)
    scored: dict = {}

    def run(lcs, lgs):
        best = None
        for lc in lcs:
            for lg in lgs:
                key = (round(float(lc), 10), round(float(lg), 10))
                if key not in scored:
                    try:
                        acc = cv_accuracy(d, folds, 2.0 ** key[0], 2.0 ** key[1], spec.tol,
                                          spec.seed)
                        scored[key] = (acc, False)
                    except Exception as exc:  # noqa: BLE001 - a failed cell scores 0
                        log.warning("grid cell log2C=%s log2gamma=%s failed: %s", *key, exc)
                        scored[key] = (0.0, True)
                acc = scored[key][0]
                if _better(acc, key[0], key[1], best):
                    best = (acc, key[0], key[1])
        return best

    lcs, lgs = coarse_axes(spec)
    best = run(lcs, lgs)
    if spec.refine and spec.fine_halfwidth > 0:
        h, s = spec.fine_halfwidth, spec.fine_step
        run(_axis(best[1] - h, best[1] + h, s), _axis(best[2] - h, best[2] + h, s))
        best = None
        for (lc, lg), (acc, _) in sorted(scored.items()):
            if _better(acc, lc, lg, best):
                best = (acc, lc, lg)
    cells = [(lc, lg, acc, failed) for (lc, lg), (acc, failed) in sorted(scored.items())]
    return GridResult(best[1], best[2], best[0], cells)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class ConfusionMetrics:
    totals: dict
    recognized: dict

    @property
    def ratios(self) -> dict:
        return {k: (self.recognized[k] / t if t else 0.0) for k, t in self.totals.items()}

    @property
    def accuracy(self) -> float:
        tot = sum(self.totals.values())
        return sum(self.recognized.values()) / tot if tot else 0.0

    def to_dict(self) -> dict:
        r = self.ratios
        return {
            "per_class": {k: {"total": self.totals[k], "recognized": self.recognized[k],
                              "ratio": r[k]} for k in self.totals},
            "accuracy": self.accuracy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def table(self) -> str:
        """Plain-text results table with ratios rounded to one decimal percent."""
        rows = [("", "Total", "Recognized", "Ratio")]
        names = {"gamma": "Gammas", "hadron": "Hadrons"}
        for k in self.totals:
            rows.append((names.get(k, k), str(self.totals[k]), str(self.recognized[k]),
                         f"{100 * self.ratios[k]:.1f}%"))
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        lines = [" | ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
        lines.append(f"Overall accuracy: {100 * self.accuracy:.1f}%")
        return "\n".join(lines)


def metrics_from_counts(totals: dict, recognized: dict) -> ConfusionMetrics:
    for k in totals:
        if not 0 <= recognized[k] <= totals[k]:
            raise InvalidArgument(f"recognized count for {k} out of range")
    return ConfusionMetrics(dict(totals), dict(recognized))


def confusion_from_predictions(y_true, y_pred) -> ConfusionMetrics:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    totals, rec = {}, {}
    for name, lab in (("gamma", 1), ("hadron", -1)):
        mask = y_true == lab
        totals[name] = int(mask.sum())
        rec[name] = int((y_pred[mask] == lab).sum())
    return ConfusionMetrics(totals, rec)


def evaluate(model: SvmModel, test: LabeledDataset, raw: bool = False) -> ConfusionMetrics:
    if len(test) == 0:
        raise InvalidArgument("empty test set")
    return confusion_from_predictions(test.y, predict_many(model, test.X, raw=raw))
