"""Dataset rebalancing: random under/over-sampling, case-control balancing,
SMOTE, Tomek-link cleaning, class bootstraps, and chains of these.

Samplers never copy data.  They return a :class:`ResampledSet` holding
indices into the source rows (with multiplicity) plus any synthetic rows,
which :meth:`ResampledSet.materialize` turns into ``(X, y, weights)`` for
a weighted fit.

Class convention: events (``y == 1``) are the minority, non-events the
majority.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from .data import DesignMatrix
from .errors import (
    ConfigParse,
    EmptyClass,
    KTooLarge,
    OutOfRange,
    RatioWouldShrinkMinority,
    TooFewMinority,
)


class SpecOrderWarning(UserWarning):
    """An oversampling stage runs before an undersampling stage."""


# -- spec types --------------------------------------------------------------

@dataclass(frozen=True)
class Identity:
    def __str__(self):
        return "id"


@dataclass(frozen=True)
class UnderRandom:
    rate: float

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise OutOfRange(f"undersampling rate must be in [0, 1), got {self.rate}")

    def __str__(self):
        return f"under({self.rate!r})"


@dataclass(frozen=True)
class OverRandom:
    a: int
    b: int

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise OutOfRange(f"ratio terms must be >= 1, got {self.a}:{self.b}")

    def __str__(self):
        return f"over({self.a}:{self.b})"


@dataclass(frozen=True)
class CaseControl:
    def __str__(self):
        return "cc"


@dataclass(frozen=True)
class Smote:
    k: int = 5
    m: int = 1

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise OutOfRange(f"smote needs k >= 1 and m >= 1, got k={self.k}, m={self.m}")

    def __str__(self):
        return f"smote(k={self.k},m={self.m})"


@dataclass(frozen=True)
class TomekClean:
    def __str__(self):
        return "tomek"


_BOOT_WHICH = {"maj": "majority", "min": "minority", "strat": "stratified"}


@dataclass(frozen=True)
class Bootstrap:
    which: str  # "majority", "minority" or "stratified"

    def __post_init__(self):
        if self.which not in _BOOT_WHICH.values():
            raise OutOfRange(f"unknown bootstrap target {self.which!r}")

    def __str__(self):
        short = {v: k for k, v in _BOOT_WHICH.items()}[self.which]
        return f"boot({short})"


Stage = Union[Identity, UnderRandom, OverRandom, CaseControl, Smote, TomekClean, Bootstrap]

_REMOVES_MAJORITY = (UnderRandom, CaseControl, TomekClean)
_ADDS_MINORITY = (OverRandom, Smote)


@dataclass(frozen=True)
class SamplerSpec:
    """An ordered chain of sampling stages; the empty chain is the identity."""

    stages: tuple[Stage, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stages",
                           tuple(s for s in self.stages if not isinstance(s, Identity)))

    def __str__(self):
        return "+".join(str(s) for s in self.stages) or "id"

    @property
    def is_identity(self) -> bool:
        return not self.stages

    @property
    def order_ok(self) -> bool:
        seen_over = False
        for s in self.stages:
            if isinstance(s, _ADDS_MINORITY):
                seen_over = True
            elif isinstance(s, _REMOVES_MAJORITY) and seen_over:
                return False
        return True


def check_order(spec: SamplerSpec) -> bool:
    """Warn when an undersampling stage follows oversampling."""
    if not spec.order_ok:
        warnings.warn(f"{spec}: undersampling after oversampling; the usual order is "
                      "undersample first, then oversample or SMOTE",
                      SpecOrderWarning, stacklevel=2)
        return False
    return True


# -- textual form ------------------------------------------------------------

_INT = re.compile(r"[0-9]+")
_FLOAT = re.compile(r"[0-9]+(?:\.[0-9]*)?(?:[eE][-+]?[0-9]+)?|\.[0-9]+(?:[eE][-+]?[0-9]+)?")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def offset(self, pos=None) -> int:
        return len(self.text[: self.pos if pos is None else pos].encode("utf-8"))

    def fail(self, reason: str, pos=None):
        raise ConfigParse(self.offset(pos), reason)

    def expect(self, lit: str):
        if not self.text.startswith(lit, self.pos):
            found = self.text[self.pos:self.pos + len(lit)] or "end of input"
            self.fail(f"expected {lit!r}, found {found!r}")
        self.pos += len(lit)

    def token(self, pattern: re.Pattern, what: str) -> str:
        m = pattern.match(self.text, self.pos)
        if not m:
            found = self.text[self.pos:self.pos + 1] or "end of input"
            self.fail(f"expected {what}, found {found!r}")
        self.pos = m.end()
        return m.group()

    def atom(self) -> Stage:
        start = self.pos
        t = self.text
        if t.startswith("under(", self.pos):
            self.pos += 6
            num_at = self.pos
            rate = float(self.token(_FLOAT, "a rate"))
            if not 0 <= rate < 1:
                self.fail(f"undersampling rate must be in [0, 1), got {rate}", num_at)
            self.expect(")")
            return UnderRandom(rate)
        if t.startswith("over(", self.pos):
            self.pos += 5
            a_at = self.pos
            a = int(self.token(_INT, "an integer"))
            self.expect(":")
            b_at = self.pos
            b = int(self.token(_INT, "an integer"))
            if a < 1:
                self.fail("ratio term a must be >= 1", a_at)
            if b < 1:
                self.fail("ratio term b must be >= 1", b_at)
            self.expect(")")
            return OverRandom(a, b)
        if t.startswith("smote(", self.pos):
            self.pos += 6
            self.expect("k=")
            k_at = self.pos
            k = int(self.token(_INT, "an integer"))
            self.expect(",m=")
            m_at = self.pos
            m = int(self.token(_INT, "an integer"))
            if k < 1:
                self.fail("smote k must be >= 1", k_at)
            if m < 1:
                self.fail("smote m must be >= 1", m_at)
            self.expect(")")
            return Smote(k, m)
        if t.startswith("boot(", self.pos):
            self.pos += 5
            for short, which in _BOOT_WHICH.items():
                if t.startswith(short + ")", self.pos):
                    self.pos += len(short) + 1
                    return Bootstrap(which)
            self.fail("expected one of 'maj', 'min', 'strat' followed by ')'")
        for word, stage in (("tomek", TomekClean()), ("cc", CaseControl()), ("id", Identity())):
            if t.startswith(word, self.pos):
                self.pos += len(word)
                return stage
        self.pos = start
        self.fail("expected one of under(, over(, smote(, boot(, cc, tomek, id")

    def parse(self) -> SamplerSpec:
        stages = [self.atom()]
        while self.pos < len(self.text):
            self.expect("+")
            stages.append(self.atom())
        return SamplerSpec(tuple(stages))


def parse_spec(text: str) -> SamplerSpec:
    """Parse the canonical textual form, e.g. ``"under(0.3)+over(5:3)"``.

    Grammar::

        spec := atom ("+" atom)*
        atom := "under(" float ")" | "over(" int ":" int ")"
              | "smote(k=" int ",m=" int ")" | "cc" | "tomek"
              | "boot(" ("maj" | "min" | "strat") ")" | "id"
    """
    if not isinstance(text, str):
        raise ConfigParse(0, f"expected a string, got {type(text).__name__}")
    lead = len(text) - len(text.lstrip())
    body = text.strip()
    try:
        return _Parser(body).parse()
    except ConfigParse as exc:
        raise ConfigParse(exc.position + len(text[:lead].encode("utf-8")), exc.reason) from None


# -- data containers ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LabeledSet:
    """Rows to resample.  ``distance_columns`` select the coordinates used by
    nearest-neighbour samplers and interpolated by SMOTE; other columns of a
    synthetic row are copied from its base event."""

    X: np.ndarray
    y: np.ndarray
    distance_columns: slice | np.ndarray = slice(None)

    @classmethod
    def from_design(cls, design: DesignMatrix) -> LabeledSet:
        return cls(design.rows, design.response.astype(np.int8), design.covariate_columns)

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True, eq=False)
class ResampledSet:
    row_indices: np.ndarray
    synthetic_pool: np.ndarray
    synthetic_indices: np.ndarray
    # Parents index into ``vstack(source.X, synthetic_pool)``.
    synthetic_parents: np.ndarray
    synthetic_u: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def synthetic_rows(self) -> np.ndarray:
        return self.synthetic_pool[self.synthetic_indices]

    def counts(self, n_source: int) -> np.ndarray:
        return np.bincount(self.row_indices, minlength=n_source)

    def class_counts(self, source: LabeledSet) -> tuple[int, int]:
        """(non-events, events) after resampling, synthetic rows included."""
        y = source.y[self.row_indices]
        n_min = int(np.sum(y == 1)) + len(self.synthetic_indices)
        return int(np.sum(y == 0)), n_min

    def materialize(self, source: LabeledSet, weights=None):
        """Return ``(X, y, w)``: duplicates become integer weights, synthetic
        rows are appended as events.  Rows with zero weight are dropped."""
        w = self.counts(len(source)).astype(float)
        if weights is not None:
            w = w * np.asarray(weights, dtype=float)
        keep = np.flatnonzero(w > 0)
        X, y, w = source.X[keep], source.y[keep].astype(float), w[keep]
        if len(self.synthetic_indices):
            sidx, scount = np.unique(self.synthetic_indices, return_counts=True)
            X = np.vstack([X, self.synthetic_pool[sidx]])
            y = np.concatenate([y, np.ones(len(sidx))])
            w = np.concatenate([w, scount.astype(float)])
        return X, y, w

    def materialize_rows(self, source: LabeledSet):
        """Explicit multiset of rows (duplicates repeated), for checking the
        weighted-likelihood identity."""
        X = np.vstack([source.X[self.row_indices], self.synthetic_rows])
        y = np.concatenate([source.y[self.row_indices].astype(float),
                            np.ones(len(self.synthetic_indices))])
        return X, y


# -- stage primitives on a running set ---------------------------------------
#
# Each primitive sees the materialized running rows (X, y) and returns
# (positions kept, with multiplicity; synthetic rows; their parent positions
# as (base, neighbour); interpolation weights).

_NO_SYNTH = None


def round_half_away(q: Fraction) -> int:
    n = int(abs(q) + Fraction(1, 2))
    return n if q >= 0 else -n


def undersample_count(n_majority: int, rate: float) -> int:
    """Majority rows kept by ``under(rate)``: round((1-r) N), at least 1."""
    keep = (1 - Fraction(repr(float(rate)))) * n_majority
    return max(1, round_half_away(keep))


def oversample_count(n_majority: int, a: int, b: int) -> int:
    """Event count targeted by ``over(a:b)``: round(N_maj b / a), at least 1."""
    return max(1, round_half_away(Fraction(n_majority * b, a)))


def case_control_rate(p: float) -> float:
    """Undersampling rate giving 1:1 balance for event proportion ``p``."""
    if not 0 < p <= 0.5:
        raise OutOfRange(f"event proportion must be in (0, 0.5], got {p}")
    return (1 - 2 * p) / (1 - p)


def _classes(y):
    maj = np.flatnonzero(y == 0)
    mino = np.flatnonzero(y == 1)
    return maj, mino


def _under(X, y, rate, rng):
    maj, mino = _classes(y)
    if maj.size == 0:
        raise EmptyClass("no majority rows to undersample")
    keep = undersample_count(maj.size, rate)
    kept = rng.choice(maj, size=keep, replace=False)
    return np.sort(np.concatenate([kept, mino])), _NO_SYNTH


def _case_control(X, y, rng):
    maj, mino = _classes(y)
    if maj.size == 0 or mino.size == 0:
        raise EmptyClass("case-control needs both classes")
    return _under(X, y, case_control_rate(mino.size / y.size), rng)


def _over(X, y, a, b, rng):
    maj, mino = _classes(y)
    if maj.size == 0 or mino.size == 0:
        raise EmptyClass("oversampling needs both classes")
    target = oversample_count(maj.size, a, b)
    if target < mino.size:
        raise RatioWouldShrinkMinority(
            f"over({a}:{b}) targets {target} events but {mino.size} are present")
    extra = rng.choice(mino, size=target - mino.size, replace=True)
    return np.sort(np.concatenate([np.arange(y.size), extra])), _NO_SYNTH


def _bootstrap(X, y, which, rng):
    maj, mino = _classes(y)
    parts = []
    for cls_rows, targeted in ((maj, which in ("majority", "stratified")),
                               (mino, which in ("minority", "stratified"))):
        if targeted:
            if cls_rows.size == 0:
                raise EmptyClass(f"bootstrap of an empty class ({which})")
            parts.append(rng.choice(cls_rows, size=cls_rows.size, replace=True))
        else:
            parts.append(cls_rows)
    return np.sort(np.concatenate(parts)), _NO_SYNTH


def _distance_view(X, cols, scale: bool):
    D = np.asarray(X[:, cols], dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    if scale and len(D):
        sd = D.std(axis=0)
        sd[sd == 0] = 1.0
        D = (D - D.mean(axis=0)) / sd
    return D


def _sq_dists(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(d, 0, out=d)
    return d


def nearest_minority_neighbors(D_min: np.ndarray, k: int) -> np.ndarray:
    """k nearest other minority rows for each minority row; ties go to the
    lower index."""
    n = len(D_min)
    out = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, 256):
        hi = min(n, lo + 256)
        diff = D_min[lo:hi, None, :] - D_min[None, :, :]
        d = np.einsum("ijk,ijk->ij", diff, diff)
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def _smote(X, y, k, m, rng, cols, scale):
    _, mino = _classes(y)
    if mino.size < 2:
        raise TooFewMinority(f"SMOTE needs at least 2 events, got {mino.size}")
    if k > mino.size - 1:
        raise KTooLarge(f"k={k} but only {mino.size - 1} other events")
    D = _distance_view(X, cols, scale)[mino]
    nn = nearest_minority_neighbors(D, k)
    interp = np.zeros(X.shape[1], dtype=bool)
    interp[cols] = True
    synth, parents, us = [], [], []
    for i in range(mino.size):
        base = X[mino[i]]
        for _ in range(m):
            j = nn[i, rng.integers(k)]
            u = rng.random()
            other = X[mino[j]]
            row = base.copy()
            row[interp] = base[interp] + u * (other[interp] - base[interp])
            synth.append(row)
            parents.append((mino[i], mino[j]))
            us.append(u)
    return np.arange(y.size), (np.array(synth), np.array(parents, dtype=np.int64), np.array(us))


def tomek_links(D: np.ndarray, y: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Pairs ``(event, non_event)`` that are mutual nearest neighbours.

    Nearest neighbours use Euclidean distance with ties broken by the lowest
    index.
    """
    n = len(y)
    nn = np.empty(n, dtype=np.int64)
    sq = (D * D).sum(1)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        d = sq[lo:hi, None] + sq[None, :] - 2.0 * D[lo:hi] @ D.T
        np.maximum(d, 0, out=d)
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        nn[lo:hi] = np.argmin(d, axis=1)
    i = np.arange(n)
    mutual = (nn[nn] == i) & (y != y[nn]) & (y == 1)
    return np.column_stack([i[mutual], nn[mutual]])


def _tomek(X, y, cols, scale):
    maj, mino = _classes(y)
    if maj.size == 0 or mino.size == 0:
        raise EmptyClass("Tomek cleaning needs both classes")
    links = tomek_links(_distance_view(X, cols, scale), y)
    drop = np.zeros(y.size, dtype=bool)
    drop[links[:, 1]] = True
    return np.flatnonzero(~drop), _NO_SYNTH


def _run_stage(stage, X, y, rng, cols, scale):
    if isinstance(stage, UnderRandom):
        return _under(X, y, stage.rate, rng)
    if isinstance(stage, OverRandom):
        return _over(X, y, stage.a, stage.b, rng)
    if isinstance(stage, CaseControl):
        return _case_control(X, y, rng)
    if isinstance(stage, Smote):
        return _smote(X, y, stage.k, stage.m, rng, cols, scale)
    if isinstance(stage, TomekClean):
        return _tomek(X, y, cols, scale)
    if isinstance(stage, Bootstrap):
        return _bootstrap(X, y, stage.which, rng)
    if isinstance(stage, Identity):
        return np.arange(y.size), _NO_SYNTH
    raise TypeError(f"unknown stage {stage!r}")


# -- public API --------------------------------------------------------------

SeedLike = Union[int, Sequence[int], np.random.Generator]


def _stage_rng(seed, stage_index: int) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    return np.random.default_rng(np.random.SeedSequence([*map(int, entropy), stage_index]))


def apply_chain(source: LabeledSet, spec: SamplerSpec | str, seed: SeedLike = 0,
                distance_scaling: bool = False, warn_order: bool = True) -> ResampledSet:
    """Apply the stages of ``spec`` left to right.

    Stage ``s`` draws from a stream derived from ``(*seed, s)``, so a chain
    is a pure function of (source, spec, seed).  A ``Generator`` may be
    passed instead, in which case all stages share it.
    """
    if isinstance(spec, str):
        spec = parse_spec(spec)
    if warn_order:
        check_order(spec)
    n = len(source)
    X_pool = np.asarray(source.X, dtype=float)
    y_pool = np.asarray(source.y).astype(np.int8)
    members = np.arange(n)
    pool, parents, us = [], [], []
    n_synth = 0
    for s, stage in enumerate(spec.stages):
        X_run = X_pool[members]
        y_run = y_pool[members]
        positions, synth = _run_stage(stage, X_run, y_run, _stage_rng(seed, s),
                                      source.distance_columns, distance_scaling)
        new_members = [members[positions]]
        if synth is not None:
            rows, par, u = synth
            ids = n + n_synth + np.arange(len(rows))
            pool.append(rows)
            parents.append(members[par])
            us.append(u)
            n_synth += len(rows)
            X_pool = np.vstack([X_pool, rows])
            y_pool = np.concatenate([y_pool, np.ones(len(rows), dtype=np.int8)])
            new_members.append(ids)
        members = np.sort(np.concatenate(new_members))

    width = source.X.shape[1]
    provenance = {
        "spec": str(spec),
        "seed": None if isinstance(seed, np.random.Generator)
        else ([int(seed)] if isinstance(seed, (int, np.integer)) else [int(v) for v in seed]),
        "stages": len(spec.stages),
    }
    return ResampledSet(
        row_indices=members[members < n],
        synthetic_pool=np.vstack(pool) if pool else np.empty((0, width)),
        synthetic_indices=members[members >= n] - n,
        synthetic_parents=np.vstack(parents) if parents else np.empty((0, 2), dtype=np.int64),
        synthetic_u=np.concatenate(us) if us else np.empty(0),
        provenance=provenance,
    )


def _as_set(source) -> LabeledSet:
    if isinstance(source, DesignMatrix):
        return LabeledSet.from_design(source)
    return source


def undersample_random(source, r: float, rng: SeedLike = 0) -> ResampledSet:
    return apply_chain(_as_set(source), SamplerSpec((UnderRandom(r),)), rng)


def oversample_random(source, a: int, b: int, rng: SeedLike = 0) -> ResampledSet:
    return apply_chain(_as_set(source), SamplerSpec((OverRandom(a, b),)), rng)


def case_control(source, rng: SeedLike = 0) -> ResampledSet:
    return apply_chain(_as_set(source), SamplerSpec((CaseControl(),)), rng)


def smote(source, k: int = 5, m: int = 1, rng: SeedLike = 0,
          distance_scaling: bool = False) -> ResampledSet:
    return apply_chain(_as_set(source), SamplerSpec((Smote(k, m),)), rng, distance_scaling)


def tomek_clean(source, distance_scaling: bool = False) -> ResampledSet:
    return apply_chain(_as_set(source), SamplerSpec((TomekClean(),)), 0, distance_scaling)


def bootstrap_class(source, which: str, rng: SeedLike = 0) -> ResampledSet:
    which = _BOOT_WHICH.get(which, which)
    return apply_chain(_as_set(source), SamplerSpec((Bootstrap(which),)), rng)
