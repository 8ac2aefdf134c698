"""Transaction ingestion, sequence assembly, featurisation and splitting.

Pipeline::

    load_transactions -> build_sequences -> split -> FeatureSchema.fit(train)
                      -> featurize -> Dataset (save / load)

The record table is a pandas DataFrame laid out like the Kaggle ieeecis
``train_transaction`` / ``train_identity`` files.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import container

log = logging.getLogger(__name__)

ID_COL = "TransactionID"
TIME_COL = "TransactionDT"
LABEL_COL = "isFraud"
AMOUNT_COL = "TransactionAmt"
REQUIRED = (ID_COL, TIME_COL, LABEL_COL)
DEFAULT_GROUPING = tuple(f"card{i}" for i in range(1, 7))
GAP_FEATURE = "gap_seconds"
DATASET_KIND = "redre-dataset"
STD_FLOOR = 1e-6


class DataError(ValueError):
    """Input data violates the expected layout or invariants."""


# ---------------------------------------------------------------------------
# loading


def _read_table(table) -> pd.DataFrame:
    if isinstance(table, pd.DataFrame):
        return table.copy()
    try:
        return pd.read_csv(table)
    except FileNotFoundError:
        raise DataError(f"no such file: {table}") from None


def load_transactions(transactions, identity=None) -> pd.DataFrame:
    """Read the transaction table and left-join the identity table onto it.

    Both arguments may be paths to comma-separated files or DataFrames.
    Row order of the transaction table is preserved.
    """
    df = _read_table(transactions)
    for col in REQUIRED:
        if col not in df.columns:
            raise DataError(f"transaction table lacks required column {col!r}")
    if df[TIME_COL].isna().any() or (df[TIME_COL] < 0).any():
        raise DataError(f"{TIME_COL} must be present and nonnegative")
    if not df[LABEL_COL].isin([0, 1]).all():
        raise DataError(f"{LABEL_COL} must be 0 or 1")
    if AMOUNT_COL in df.columns and (df[AMOUNT_COL].dropna() <= 0).any():
        raise DataError(f"{AMOUNT_COL} must be positive where present")
    if df[ID_COL].duplicated().any():
        raise DataError(f"duplicate {ID_COL} in transaction table")
    if identity is not None:
        ident = _read_table(identity)
        if ID_COL not in ident.columns:
            raise DataError(f"identity table lacks required column {ID_COL!r}")
        dup = ident[ID_COL].duplicated()
        if dup.any():
            raise DataError(
                f"identity table has duplicate {ID_COL} values, e.g. {ident[ID_COL][dup].iloc[0]!r}"
            )
        clash = (set(ident.columns) & set(df.columns)) - {ID_COL}
        if clash:
            raise DataError(f"identity columns collide with transaction columns: {sorted(clash)}")
        df = df.merge(ident, on=ID_COL, how="left", sort=False, validate="one_to_one")
    df[LABEL_COL] = df[LABEL_COL].astype(np.int64)
    return df.reset_index(drop=True)


# ---------------------------------------------------------------------------
# sequences


@dataclass
class RawSequence:
    """Record indices of one entity window, in chronological order."""

    entity_id: str
    window: int
    rows: np.ndarray


@dataclass
class Sequence:
    entity_id: str
    features: np.ndarray  # (n, feature_dim)
    timestamps: np.ndarray  # (n,) seconds
    labels: np.ndarray  # (n,) in {0, 1}
    window: int = 0

    def __len__(self):
        return len(self.timestamps)

    @property
    def label(self) -> int:
        """Label of the transaction under evaluation (the last one)."""
        return int(self.labels[-1])


def entity_keys(records: pd.DataFrame, grouping_columns) -> pd.Series:
    grouping_columns = list(grouping_columns)
    if not grouping_columns:
        raise ValueError("grouping key needs at least one column")
    missing = [c for c in grouping_columns if c not in records.columns]
    if missing:
        raise DataError(f"grouping columns not in table: {missing}")
    key = records[grouping_columns[0]].astype(str)
    for col in grouping_columns[1:]:
        key = key + "|" + records[col].astype(str)
    return key


def build_sequences(records: pd.DataFrame, grouping_columns=DEFAULT_GROUPING,
                    max_seq_len: int = 32) -> list[RawSequence]:
    """Group records by entity, sort each group by time (stable), cut into windows.

    Windows hold at most ``max_seq_len`` records, oldest first.  Output is
    ordered by entity id then window index; every record lands in exactly one
    window.
    """
    if max_seq_len < 1:
        raise ValueError("max_seq_len must be positive")
    keys = entity_keys(records, grouping_columns)
    codes, uniques = pd.factorize(keys, sort=True)
    order = np.lexsort((records[TIME_COL].to_numpy(), codes))
    sorted_codes = codes[order]
    bounds = np.flatnonzero(np.diff(sorted_codes)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(order)]])
    out = []
    for start, stop in zip(starts, stops):
        entity = str(uniques[sorted_codes[start]])
        rows = order[start:stop]
        for w, lo in enumerate(range(0, len(rows), max_seq_len)):
            out.append(RawSequence(entity, w, rows[lo:lo + max_seq_len]))
    return out


def sequence_gaps(timestamps: np.ndarray) -> np.ndarray:
    """Inter-transaction gaps, 0 for the first token."""
    return np.diff(timestamps, prepend=timestamps[:1])


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitResult:
    train: list
    valid: list
    counts: dict
    warnings: list[str] = field(default_factory=list)


def _target(seq) -> int:
    return seq.label if isinstance(seq, Sequence) else -1


def split(sequences: list, valid_fraction: float, seed: int, labels=None) -> SplitResult:
    """Entity-level train/valid split, deterministic in ``seed``.

    ``labels`` optionally supplies the target per sequence (needed for
    :class:`RawSequence` inputs to report class counts).
    """
    if not 0 < valid_fraction < 1:
        raise ValueError(f"valid_fraction must lie in (0, 1), got {valid_fraction}")
    entities = sorted({s.entity_id for s in sequences})
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(entities))
    n_valid = int(round(valid_fraction * len(entities)))
    valid_entities = {entities[i] for i in perm[:n_valid]}
    train_idx = [i for i, s in enumerate(sequences) if s.entity_id not in valid_entities]
    valid_idx = [i for i, s in enumerate(sequences) if s.entity_id in valid_entities]
    if labels is None:
        labels = [_target(s) for s in sequences]
    labels = np.asarray(labels)
    counts = {}
    warnings = []
    for side, idx in (("train", train_idx), ("valid", valid_idx)):
        pos = int((labels[idx] == 1).sum()) if idx else 0
        counts[side] = {
            "entities": len({sequences[i].entity_id for i in idx}),
            "sequences": len(idx),
            "positive": pos,
            "negative": len(idx) - pos,
        }
        if pos == 0:
            warnings.append(f"{side} split has no positive sequences")
    for w in warnings:
        log.warning(w)
    return SplitResult(
        [sequences[i] for i in train_idx], [sequences[i] for i in valid_idx], counts, warnings
    )


# ---------------------------------------------------------------------------
# featurisation


def stable_bucket(column: str, value, buckets: int) -> int:
    """Process-independent hash of ``column=value`` into ``[0, buckets)``."""
    text = "<NA>" if pd.isna(value) else str(value)
    digest = hashlib.blake2b(f"{column}={text}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


@dataclass
class FeatureSchema:
    numeric: dict = field(default_factory=dict)  # column -> {"mean", "std", "missing"}
    categorical: dict = field(default_factory=dict)  # column -> {"vocabulary": [...]}
    buckets: int = 64
    gap: dict = field(default_factory=dict)  # {"mean", "std"}
    fitted: bool = False

    @classmethod
    def fit(cls, records: pd.DataFrame, sequences: list[RawSequence], columns=None,
            buckets: int = 64) -> FeatureSchema:
        """Fit statistics on the records covered by ``sequences`` (the train split)."""
        if columns is None:
            columns = [c for c in records.columns if c not in REQUIRED]
        rows = np.concatenate([s.rows for s in sequences]) if sequences else np.array([], int)
        train = records.iloc[np.sort(rows)]
        schema = cls(buckets=buckets)
        for col in columns:
            if col not in records.columns:
                raise DataError(f"feature column {col!r} not in table")
            series = train[col]
            if pd.api.types.is_numeric_dtype(records[col]) and not pd.api.types.is_bool_dtype(records[col]):
                values = series.to_numpy(dtype=np.float64)
                present = values[~np.isnan(values)]
                mean = float(present.mean()) if present.size else 0.0
                std = float(present.std()) if present.size else 1.0
                schema.numeric[col] = {
                    "mean": mean,
                    "std": max(std, STD_FLOOR),
                    "missing": bool(np.isnan(values).any()),
                }
            else:
                vocab = sorted({str(v) for v in series.dropna().unique()})
                schema.categorical[col] = {"vocabulary": vocab}
        gaps = np.concatenate(
            [sequence_gaps(records[TIME_COL].to_numpy(np.float64)[s.rows]) for s in sequences]
        ) if sequences else np.zeros(1)
        schema.gap = {"mean": float(gaps.mean()), "std": max(float(gaps.std()), STD_FLOOR)}
        schema.fitted = True
        return schema

    def feature_names(self) -> list[str]:
        names = []
        for col, st in self.numeric.items():
            names.append(col)
            if st["missing"]:
                names.append(f"{col}__missing")
        for col in self.categorical:
            names.extend(f"{col}__b{b}" for b in range(self.buckets))
        names.append(GAP_FEATURE)
        return names

    @property
    def dim(self) -> int:
        return len(self.feature_names())

    def transform(self, records: pd.DataFrame) -> np.ndarray:
        """Per-record features, excluding the gap column (appended per sequence)."""
        if not self.fitted:
            raise ValueError("schema is not fitted")
        blocks = []
        for col, st in self.numeric.items():
            values = records[col].to_numpy(dtype=np.float64)
            missing = np.isnan(values)
            z = (values - st["mean"]) / st["std"]
            z[missing] = 0.0
            blocks.append(z[:, None])
            if st["missing"]:
                blocks.append(missing.astype(np.float64)[:, None])
        for col in self.categorical:
            idx, uniques = pd.factorize(records[col].astype(object), use_na_sentinel=True)
            table = np.array([stable_bucket(col, v, self.buckets) for v in uniques] + [
                stable_bucket(col, None, self.buckets)], dtype=np.int64)
            codes = table[idx]  # sentinel -1 picks the trailing NA bucket
            onehot = np.zeros((len(records), self.buckets))
            onehot[np.arange(len(records)), codes] = 1.0
            blocks.append(onehot)
        if not blocks:
            return np.zeros((len(records), 0))
        return np.hstack(blocks)

    def to_dict(self) -> dict:
        return {"numeric": self.numeric, "categorical": self.categorical,
                "buckets": self.buckets, "gap": self.gap}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSchema:
        return cls(d["numeric"], d["categorical"], d["buckets"], d["gap"], fitted=True)


def featurize(records: pd.DataFrame, sequences: list[RawSequence], schema: FeatureSchema) -> list[Sequence]:
    """Turn record windows into feature sequences using a fitted schema."""
    if not schema.fitted:
        raise ValueError("schema is not fitted")
    if not sequences:
        return []
    rows = np.concatenate([s.rows for s in sequences])
    base = schema.transform(records.iloc[rows])
    times = records[TIME_COL].to_numpy(np.float64)
    labels = records[LABEL_COL].to_numpy(np.int64)
    out = []
    offset = 0
    for s in sequences:
        n = len(s.rows)
        t = times[s.rows]
        gap = (sequence_gaps(t) - schema.gap["mean"]) / schema.gap["std"]
        feats = np.hstack([base[offset:offset + n], gap[:, None]])
        out.append(Sequence(s.entity_id, feats, t, labels[s.rows], s.window))
        offset += n
    return out


# ---------------------------------------------------------------------------
# dataset container


@dataclass
class Dataset:
    train: list[Sequence]
    valid: list[Sequence]
    feature_names: list[str]
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return len(self.feature_names)

    def save(self, path) -> None:
        arrays, meta = {}, {"feature_names": self.feature_names, **self.meta}
        for side in ("train", "valid"):
            seqs = getattr(self, side)
            dim = self.feature_dim
            arrays[f"{side}.features"] = (
                np.vstack([s.features for s in seqs]) if seqs else np.zeros((0, dim))
            )
            arrays[f"{side}.timestamps"] = (
                np.concatenate([s.timestamps for s in seqs]) if seqs else np.zeros(0)
            )
            arrays[f"{side}.labels"] = (
                np.concatenate([s.labels for s in seqs]) if seqs else np.zeros(0, np.int64)
            )
            arrays[f"{side}.lengths"] = np.array([len(s) for s in seqs], dtype=np.int64)
            arrays[f"{side}.windows"] = np.array([s.window for s in seqs], dtype=np.int64)
            meta[f"{side}.entities"] = [s.entity_id for s in seqs]
        container.write(path, DATASET_KIND, meta, arrays)

    @classmethod
    def load(cls, path) -> Dataset:
        if not Path(path).exists():
            raise DataError(f"no such dataset: {path}")
        meta, arrays = container.read(path, DATASET_KIND)
        sides = {}
        for side in ("train", "valid"):
            lengths = arrays[f"{side}.lengths"]
            bounds = np.concatenate([[0], np.cumsum(lengths)])
            entities = meta.pop(f"{side}.entities")
            sides[side] = [
                Sequence(
                    entities[i],
                    arrays[f"{side}.features"][bounds[i]:bounds[i + 1]],
                    arrays[f"{side}.timestamps"][bounds[i]:bounds[i + 1]],
                    arrays[f"{side}.labels"][bounds[i]:bounds[i + 1]],
                    int(arrays[f"{side}.windows"][i]),
                )
                for i in range(len(lengths))
            ]
        names = meta.pop("feature_names")
        return cls(sides["train"], sides["valid"], names, meta)


def prepare_dataset(records: pd.DataFrame, grouping_columns=DEFAULT_GROUPING, max_seq_len: int = 32,
                    valid_fraction: float = 0.2, seed: int = 0, feature_columns=None,
                    buckets: int = 64) -> Dataset:
    """Full pipeline from a record table to a featurised, split dataset."""
    raw = build_sequences(records, grouping_columns, max_seq_len)
    labels_all = records[LABEL_COL].to_numpy()
    targets = [int(labels_all[s.rows[-1]]) for s in raw]
    parts = split(raw, valid_fraction, seed, labels=targets)
    if feature_columns is None:
        skip = set(REQUIRED) | set(grouping_columns)
        feature_columns = [c for c in records.columns if c not in skip]
    schema = FeatureSchema.fit(records, parts.train, feature_columns, buckets)
    meta = {
        "schema": schema.to_dict(),
        "split": parts.counts,
        "split_warnings": parts.warnings,
        "grouping_columns": list(grouping_columns),
        "max_seq_len": max_seq_len,
        "valid_fraction": valid_fraction,
        "split_seed": seed,
    }
    return Dataset(
        featurize(records, parts.train, schema),
        featurize(records, parts.valid, schema),
        schema.feature_names(),
        meta,
    )
