"""Longitudinal panel model, CSV ingestion and design-matrix encoding.

A :class:`Panel` stores one row per (individual, time) observation with a
binary outcome.  Internally the panel is column-oriented (numpy arrays) so
that the validation loops can slice training subsets cheaply; the
record-oriented view is available through :attr:`Panel.records`.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyPanel, EmptySubset, MalformedRow, MissingColumn, SchemaMismatch


class UnseenIndividualWarning(UserWarning):
    """Prediction rows whose individual was absent from the training subset."""


@dataclass(frozen=True)
class ObservationRecord:
    individual_id: str
    time_index: int
    covariates: tuple[float, ...]
    outcome: int


@dataclass(frozen=True)
class SchemaConfig:
    id_column: str = "id"
    time_column: str = "time"
    outcome_column: str = "outcome"
    # None: every remaining header column, in header order.
    covariates: tuple[str, ...] | None = None
    delimiter: str = ","
    # First evaluated time index. None: every distinct time after the earliest.
    horizon_start: int | None = None


class Panel:
    """Immutable longitudinal panel sorted by ``(time_index, individual_id)``."""

    def __init__(self, schema: Sequence[str], ids, times, covariates, outcomes,
                 horizons: Iterable[int] | None = None):
        schema = tuple(schema)
        if len(set(schema)) != len(schema):
            raise SchemaMismatch(f"duplicate covariate names in {schema}")
        ids = np.asarray(ids, dtype=object)
        times = np.asarray(times, dtype=np.int64)
        covariates = np.asarray(covariates, dtype=float).reshape(len(ids), len(schema))
        outcomes = np.asarray(outcomes, dtype=np.int8)
        if len(ids) == 0:
            raise EmptyPanel("panel has no records")
        if not (len(ids) == len(times) == len(covariates) == len(outcomes)):
            raise SchemaMismatch("column lengths differ")
        if not np.isin(outcomes, (0, 1)).all():
            raise SchemaMismatch("outcomes must be 0/1")
        if (times < 0).any():
            raise SchemaMismatch("time indices must be non-negative")

        order = np.lexsort((ids.astype(str), times))
        self.schema = schema
        self.ids = ids[order]
        self.times = times[order]
        self.covariates = covariates[order]
        self.outcomes = outcomes[order]
        for arr in (self.ids, self.times, self.covariates, self.outcomes):
            arr.setflags(write=False)

        if horizons is None:
            distinct = np.unique(self.times)
            horizons = distinct[1:]
        self.horizons = tuple(sorted(int(h) for h in set(horizons)))

    def __len__(self) -> int:
        return len(self.ids)

    def __repr__(self) -> str:
        return (f"Panel(n={len(self)}, covariates={len(self.schema)}, "
                f"individuals={len(self.individuals)}, horizons={len(self.horizons)})")

    @classmethod
    def from_records(cls, schema, records: Sequence[ObservationRecord], horizons=None) -> Panel:
        if not records:
            raise EmptyPanel("panel has no records")
        for r in records:
            if len(r.covariates) != len(schema):
                raise SchemaMismatch(
                    f"record for {r.individual_id!r} at {r.time_index} has "
                    f"{len(r.covariates)} covariates, schema has {len(schema)}")
        return cls(
            schema,
            [r.individual_id for r in records],
            [r.time_index for r in records],
            [list(r.covariates) for r in records],
            [r.outcome for r in records],
            horizons,
        )

    @property
    def records(self) -> list[ObservationRecord]:
        return [
            ObservationRecord(str(i), int(t), tuple(float(v) for v in x), int(y))
            for i, t, x, y in zip(self.ids, self.times, self.covariates, self.outcomes)
        ]

    @property
    def individuals(self) -> list[str]:
        return sorted(set(self.ids.tolist()))

    @property
    def historical(self) -> np.ndarray:
        """Mask of records that are never scored (not at a horizon)."""
        return ~np.isin(self.times, self.horizons)

    def indices_before(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.times < t)

    def indices_at(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.times == t)

    def horizon_indices(self) -> np.ndarray:
        return np.flatnonzero(np.isin(self.times, self.horizons))

    def with_records(self, extra: Sequence[ObservationRecord], horizons=None) -> Panel:
        """New panel with ``extra`` records appended (horizons kept unless given)."""
        return Panel.from_records(self.schema, self.records + list(extra),
                                  self.horizons if horizons is None else horizons)


# -- CSV ---------------------------------------------------------------------

def ingest_csv(path, schema_config: SchemaConfig | None = None) -> Panel:
    cfg = schema_config or SchemaConfig()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=cfg.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyPanel(f"{path} is empty") from None
        for name in (cfg.id_column, cfg.time_column, cfg.outcome_column):
            if name not in header:
                raise MissingColumn(name)
        reserved = {cfg.id_column, cfg.time_column, cfg.outcome_column}
        if cfg.covariates is None:
            cov_names = [h for h in header if h not in reserved]
        else:
            cov_names = list(cfg.covariates)
            for name in cov_names:
                if name not in header:
                    raise MissingColumn(name)
        pos = {h: j for j, h in enumerate(header)}
        i_id, i_t, i_y = pos[cfg.id_column], pos[cfg.time_column], pos[cfg.outcome_column]
        i_cov = [pos[c] for c in cov_names]

        ids, times, covs, ys = [], [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
            ident = row[i_id].strip()
            if not ident:
                raise MalformedRow(line, "empty individual id")
            try:
                t = int(row[i_t])
            except ValueError:
                raise MalformedRow(line, f"non-integer time {row[i_t]!r}") from None
            if t < 0:
                raise MalformedRow(line, f"negative time {t}")
            y = row[i_y].strip()
            if y not in ("0", "1"):
                raise MalformedRow(line, f"non-binary outcome {y!r}")
            x = []
            for name, j in zip(cov_names, i_cov):
                cell = row[j].strip()
                if not cell:
                    raise MalformedRow(line, f"missing value for {name!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise MalformedRow(line, f"non-numeric {name!r}: {cell!r}") from None
                if not math.isfinite(v):
                    raise MalformedRow(line, f"non-finite {name!r}: {cell!r}")
                x.append(v)
            ids.append(ident)
            times.append(t)
            covs.append(x)
            ys.append(int(y))

    if not ids:
        raise EmptyPanel(f"{path} has no data rows")
    horizons = None
    if cfg.horizon_start is not None:
        horizons = sorted({t for t in times if t >= cfg.horizon_start})
    return Panel(cov_names, ids, times, np.array(covs, dtype=float).reshape(len(ids), len(cov_names)),
                 ys, horizons)


def emit_csv(panel: Panel, path, schema_config: SchemaConfig | None = None) -> None:
    cfg = schema_config or SchemaConfig()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=cfg.delimiter, lineterminator="\n")
        w.writerow([cfg.id_column, cfg.time_column, cfg.outcome_column, *panel.schema])
        for i, t, y, x in zip(panel.ids, panel.times, panel.outcomes, panel.covariates):
            w.writerow([i, int(t), int(y), *(repr(float(v)) for v in x)])


# -- encoding ----------------------------------------------------------------

@dataclass(frozen=True)
class EncodeOptions:
    # "lexicographic", "first-seen", or an explicit individual id.
    reference: str = "lexicographic"
    standardize: bool = False


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Encoded training matrix: intercept, covariates, then id dummies."""

    rows: np.ndarray
    response: np.ndarray
    weights: np.ndarray
    column_names: tuple[str, ...]
    encoding_map: dict[str, int]
    reference: str
    n_covariates: int
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    record_indices: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    @property
    def covariate_columns(self) -> slice:
        return slice(1, 1 + self.n_covariates)

    @property
    def id_columns(self) -> slice:
        return slice(1 + self.n_covariates, self.rows.shape[1])

    def transform(self, ids: Sequence[str], covariates) -> tuple[np.ndarray, np.ndarray]:
        """Encode prediction rows with the training encoding.

        Returns ``(X, unseen)``; rows whose individual was not in the training
        subset get an all-zero dummy block and ``unseen=True``.
        """
        covariates = np.asarray(covariates, dtype=float).reshape(len(ids), self.n_covariates)
        X = np.zeros((len(ids), self.rows.shape[1]))
        X[:, 0] = 1.0
        X[:, self.covariate_columns] = self._scaled(covariates)
        unseen = np.zeros(len(ids), dtype=bool)
        for r, ident in enumerate(ids):
            if ident == self.reference:
                continue
            col = self.encoding_map.get(ident)
            if col is None:
                unseen[r] = True
            else:
                X[r, col] = 1.0
        if unseen.any():
            missing = sorted({str(i) for i, u in zip(ids, unseen) if u})
            warnings.warn(f"individuals unseen at encoding time: {missing}",
                          UnseenIndividualWarning, stacklevel=2)
        return X, unseen

    def _scaled(self, covariates: np.ndarray) -> np.ndarray:
        if self.center is None:
            return covariates
        return (covariates - self.center) / self.scale


def _reference_level(ids: np.ndarray, options: EncodeOptions) -> str:
    present = sorted(set(ids.tolist()))
    if options.reference == "lexicographic":
        return present[0]
    if options.reference == "first-seen":
        return str(ids[0])
    if options.reference not in present:
        raise SchemaMismatch(f"reference individual {options.reference!r} not in subset")
    return options.reference


def encode(panel: Panel, subset=None, options: EncodeOptions | None = None) -> DesignMatrix:
    options = options or EncodeOptions()
    idx = np.arange(len(panel)) if subset is None else np.asarray(subset, dtype=np.int64)
    if idx.size == 0:
        raise EmptySubset("cannot encode an empty subset")
    ids = panel.ids[idx]
    cov = panel.covariates[idx]
    k = len(panel.schema)

    reference = _reference_level(ids, options)
    levels = [i for i in sorted(set(ids.tolist())) if i != reference]
    encoding_map = {ident: 1 + k + j for j, ident in enumerate(levels)}

    center = scale = None
    if options.standardize:
        center = cov.mean(axis=0)
        scale = cov.std(axis=0)
        scale[scale == 0] = 1.0
        cov = (cov - center) / scale

    X = np.zeros((idx.size, 1 + k + len(levels)))
    X[:, 0] = 1.0
    X[:, 1:1 + k] = cov
    if levels:
        cols = np.array([encoding_map.get(i, -1) for i in ids])
        hit = cols >= 0
        X[np.flatnonzero(hit), cols[hit]] = 1.0

    names = ("(intercept)", *panel.schema, *(f"id[{i}]" for i in levels))
    X.setflags(write=False)
    return DesignMatrix(
        rows=X,
        response=panel.outcomes[idx].astype(float),
        weights=np.ones(idx.size),
        column_names=names,
        encoding_map=encoding_map,
        reference=reference,
        n_covariates=k,
        center=center,
        scale=scale,
        record_indices=idx,
    )
