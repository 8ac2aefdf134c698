"""ROC curves and AUC by two independent routes, plus evaluation reports.

``auc_trapezoid(roc_curve(s))`` integrates the tie-grouped ROC curve;
``auc_rank(s)`` is the Mann-Whitney statistic with ties counted as one half.
The two are algebraically identical, and :func:`evaluate` refuses to report
when they disagree.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

AGREEMENT_TOL = 1e-9


class ConsistencyError(RuntimeError):
    """Two computations that must agree did not."""


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError("scores and labels must be 1-D and the same length")
        if self.scores.size == 0:
            raise ValueError("scored set is empty")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())

    def require_both_classes(self):
        if self.n_pos == 0 or self.n_neg == 0:
            raise ValueError("AUC needs at least one positive and one negative")


def roc_curve(s: ScoredSet) -> np.ndarray:
    """ROC points ``(fpr, tpr)`` as a ``(K, 2)`` array.

    Thresholds sweep the distinct scores from high to low; tied scores move
    together.  The curve starts at (0, 0) and ends at (1, 1).
    """
    s.require_both_classes()
    order = np.argsort(-s.scores, kind="mergesort")
    scores = s.scores[order]
    labels = s.labels[order]
    ends = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tp = np.cumsum(labels)[ends]
    fp = (ends + 1) - tp
    fpr = np.r_[0.0, fp / s.n_neg]
    tpr = np.r_[0.0, tp / s.n_pos]
    return np.column_stack([fpr, tpr])


def auc_trapezoid(points) -> float:
    points = np.asarray(points, dtype=np.float64)
    x, y = points[:, 0], points[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1])) / 2.0)


def auc_rank(s: ScoredSet) -> float:
    s.require_both_classes()
    return float(_kernels.rank_auc(s.scores, s.labels))


# ---------------------------------------------------------------------------
# reports


def config_digest(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EvalReport:
    auc: float
    roc: np.ndarray
    mode: str
    seed: int
    config_digest: str
    n_pos: int
    n_neg: int
    auc_rank: float
    auc_trapezoid: float
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        """Reproducible fields only; wall time lives in a timing sidecar."""
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "auc": self.auc,
            "auc_rank": self.auc_rank,
            "auc_trapezoid": self.auc_trapezoid,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "roc_points": len(self.roc),
        }

    def write(self, path) -> tuple[Path, Path]:
        """Write the report (JSON) and the ROC table next to it (``*.roc.tsv``)."""
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        roc_path = path.with_suffix(".roc.tsv")
        lines = ["fpr\ttpr"] + [f"{x!r}\t{y!r}" for x, y in self.roc.tolist()]
        roc_path.write_text("\n".join(lines) + "\n")
        path.with_suffix(".timing.json").write_text(
            json.dumps({"wall_time": self.wall_time}) + "\n"
        )
        return path, roc_path

    @classmethod
    def read(cls, path) -> EvalReport:
        path = Path(path)
        d = json.loads(path.read_text())
        rows = path.with_suffix(".roc.tsv").read_text().splitlines()[1:]
        roc = np.array([[float(v) for v in r.split("\t")] for r in rows])
        timing = path.with_suffix(".timing.json")
        wall = json.loads(timing.read_text())["wall_time"] if timing.exists() else 0.0
        return cls(d["auc"], roc, d["mode"], d["seed"], d["config_digest"], d["n_pos"],
                   d["n_neg"], d["auc_rank"], d["auc_trapezoid"], wall)


def report_from_scores(scores, labels, mode: str, seed: int = 0, digest: str = "",
                       wall_time: float = 0.0) -> EvalReport:
    s = ScoredSet(scores, labels)
    roc = roc_curve(s)
    trap = auc_trapezoid(roc)
    rank = auc_rank(s)
    if abs(trap - rank) > AGREEMENT_TOL:
        raise ConsistencyError(f"AUC paths disagree: trapezoid={trap!r} rank={rank!r}")
    return EvalReport(rank, roc, mode, seed, digest, s.n_pos, s.n_neg, rank, trap, wall_time)


def evaluate(params, sequences, config, seed: int = 0, digest: str = "") -> EvalReport:
    """Score each sequence's last transaction and build a report."""
    from .encoder import score_sequences

    start = time.perf_counter()
    scores = score_sequences(config, params, [s.features for s in sequences],
                             [s.timestamps for s in sequences])
    labels = np.array([s.label for s in sequences])
    return report_from_scores(scores, labels, config.position_mode.value, seed, digest,
                              time.perf_counter() - start)
