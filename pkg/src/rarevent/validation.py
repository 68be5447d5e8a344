"""Evaluation protocols: longitudinal (rolling origin), leave-one-out, and a
single frozen train/test split, plus repeated-run rate sweeps.

All protocols pool the scored ``(probability, outcome)`` pairs and compute
one ROC curve over the pool.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .data import EncodeOptions, Panel, UnseenIndividualWarning, encode
from .ensemble import EnsembleModel, train_ensemble
from .errors import EmptySide, InvalidParameter, NoSeedHistory, OneClassOnly, RareventError
from .logistic import FitControl
from .metrics import ScoredPair
from .resampling import SamplerSpec, parse_spec

PROTOCOLS = ("longitudinal", "loocv", "split")


def derive_seed(*parts: int) -> int:
    """Named derivation of a child seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class Recipe:
    spec: SamplerSpec = SamplerSpec()
    K: int = 1
    seed: int = 0
    control: FitControl = FitControl()
    encoding: EncodeOptions = EncodeOptions()
    distance_scaling: bool = False
    name: str = ""

    def __post_init__(self):
        if isinstance(self.spec, str):
            object.__setattr__(self, "spec", parse_spec(self.spec))
        if self.K < 1:
            raise InvalidParameter(f"K must be >= 1, got {self.K}")
        if self.seed < 0:
            raise InvalidParameter(f"seed must be non-negative, got {self.seed}")

    @property
    def label(self) -> str:
        return self.name or str(self.spec)

    @property
    def deterministic(self) -> bool:
        return self.spec.is_identity

    def with_seed(self, seed: int) -> Recipe:
        return Recipe(self.spec, self.K, seed, self.control, self.encoding,
                      self.distance_scaling, self.name)


@dataclass(frozen=True)
class StepDiagnostic:
    time_index: int
    n_train: int
    n_events_train: int
    n_predicted: int
    failed_replicates: int = 0
    separated_replicates: int = 0
    unseen: int = 0


@dataclass(eq=False)
class EvalReport:
    pairs: list[ScoredPair]
    auc: float
    peirce: float
    gamma_star: float
    sens_at_star: float
    spec_at_star: float
    per_step_diagnostics: list[StepDiagnostic]
    protocol: str
    recipe: str = ""
    # (K, n_pairs) replicate probabilities, NaN where a replicate failed
    replicate_scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def scores(self) -> np.ndarray:
        return np.array([p.score for p in self.pairs])

    @property
    def outcomes(self) -> np.ndarray:
        return np.array([p.outcome for p in self.pairs])

    def roc(self) -> metrics.RocCurve:
        return metrics.roc(self.pairs)

    def to_dict(self, include_pairs: bool = True) -> dict:
        d = {
            "protocol": self.protocol,
            "recipe": self.recipe,
            "auc": self.auc,
            "peirce": self.peirce,
            "gamma_star": self.gamma_star,
            "sens_at_star": self.sens_at_star,
            "spec_at_star": self.spec_at_star,
            "n_pairs": len(self.pairs),
            "n_events": int(sum(p.outcome for p in self.pairs)),
            "per_step_diagnostics": [vars(s) for s in self.per_step_diagnostics],
        }
        if include_pairs:
            d["pairs"] = [{"time_index": p.time_index, "individual_id": p.individual_id,
                           "score": p.score, "outcome": p.outcome} for p in self.pairs]
        return d

    def to_json(self, include_pairs: bool = True) -> str:
        return json.dumps(self.to_dict(include_pairs), indent=1)

    def pairs_to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_index", "individual_id", "score", "outcome"])
            for p in self.pairs:
                w.writerow([p.time_index, p.individual_id, repr(p.score), p.outcome])


def _report(pairs, steps, protocol, recipe, rep_scores) -> EvalReport:
    s = metrics.summarize(pairs)
    return EvalReport(pairs, s.auc, s.peirce, s.gamma_star, float(s.sens_at_star),
                      float(s.spec_at_star), steps, protocol, recipe.label, rep_scores)


def _two_classes(y) -> bool:
    return bool(np.any(y == 1) and np.any(y == 0))


def _train(panel: Panel, train_idx, recipe: Recipe, seed: int):
    design = encode(panel, train_idx, recipe.encoding)
    model = train_ensemble(design, recipe.spec, recipe.K, seed, recipe.control, None,
                           recipe.distance_scaling)
    return design, model


def _score(panel: Panel, design, model: EnsembleModel, idx):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnseenIndividualWarning)
        X, unseen = design.transform(panel.ids[idx].tolist(), panel.covariates[idx])
    rep = model.replicate_predictions(X)
    return model.predict(X), rep, int(unseen.sum())


def _pairs(panel: Panel, idx, probs) -> list[ScoredPair]:
    return [ScoredPair(float(p), int(panel.outcomes[i]), int(panel.times[i]), str(panel.ids[i]))
            for p, i in zip(probs, idx)]


def _step(t, design, model, n_pred, unseen) -> StepDiagnostic:
    return StepDiagnostic(int(t), int(design.shape[0]), int(design.response.sum()), int(n_pred),
                          model.n_failed, model.n_separated, unseen)


def longitudinal_eval(panel: Panel, recipe: Recipe | None = None) -> EvalReport:
    """Rolling-origin evaluation: the model scoring horizon ``t`` is trained
    on records with ``time_index < t`` only, and is retrained at every
    horizon."""
    recipe = recipe or Recipe()
    if not panel.horizons:
        raise NoSeedHistory("panel has no horizons")
    seed_idx = panel.indices_before(panel.horizons[0])
    if seed_idx.size == 0 or not _two_classes(panel.outcomes[seed_idx]):
        raise NoSeedHistory("history before the first horizon must contain both classes")
    pairs, steps, reps = [], [], []
    for t in panel.horizons:
        idx = panel.indices_at(t)
        if idx.size == 0:
            continue
        # Cold start on purpose: under quasi-separation the stopping point of a
        # diverging coefficient depends on where IRLS started, so a warm start
        # would make the horizon-t model depend on earlier fits.
        design, model = _train(panel, panel.indices_before(t), recipe, derive_seed(recipe.seed, t))
        probs, rep, unseen = _score(panel, design, model, idx)
        pairs += _pairs(panel, idx, probs)
        reps.append(rep)
        steps.append(_step(t, design, model, idx.size, unseen))
    return _report(pairs, steps, "longitudinal", recipe, np.hstack(reps))


def loocv_eval(panel: Panel, recipe: Recipe | None = None) -> EvalReport:
    """Leave-one-out over horizon records; each fold trains on every other
    record, past and future alike."""
    recipe = recipe or Recipe()
    targets = panel.horizon_indices()
    if targets.size < 2:
        raise OneClassOnly("LOOCV needs at least two prediction records")
    everything = np.arange(len(panel))
    pairs, steps, reps = [], [], []
    for j in targets:
        train_idx = np.delete(everything, j)
        if not _two_classes(panel.outcomes[train_idx]):
            raise OneClassOnly(f"fold leaving out record {j} has one class")
        # cold start: a start fitted on all records would carry record j into its own fold
        design, model = _train(panel, train_idx, recipe, derive_seed(recipe.seed, 1, j))
        probs, rep, unseen = _score(panel, design, model, np.array([j]))
        pairs += _pairs(panel, [j], probs)
        reps.append(rep)
        steps.append(_step(panel.times[j], design, model, 1, unseen))
    return _report(pairs, steps, "loocv", recipe, np.hstack(reps))


def split_eval(panel: Panel, boundary: int | None = None, recipe: Recipe | None = None) -> EvalReport:
    """One model trained on ``time_index < boundary`` scores every later
    horizon without updating.  ``boundary`` defaults to the first horizon."""
    recipe = recipe or Recipe()
    if boundary is None:
        if not panel.horizons:
            raise EmptySide("panel has no horizons")
        boundary = panel.horizons[0]
    train_idx = panel.indices_before(boundary)
    test_h = [t for t in panel.horizons if t >= boundary]
    if train_idx.size == 0 or not test_h:
        raise EmptySide(f"boundary {boundary} leaves an empty side")
    if not _two_classes(panel.outcomes[train_idx]):
        raise OneClassOnly("training side has one class")
    design, model = _train(panel, train_idx, recipe, derive_seed(recipe.seed, 2, boundary))
    pairs, steps, reps = [], [], []
    for t in test_h:
        idx = panel.indices_at(t)
        if idx.size == 0:
            continue
        probs, rep, unseen = _score(panel, design, model, idx)
        pairs += _pairs(panel, idx, probs)
        reps.append(rep)
        steps.append(_step(t, design, model, idx.size, unseen))
    return _report(pairs, steps, "split", recipe, np.hstack(reps))


def evaluate(panel: Panel, protocol: str, recipe: Recipe | None = None,
             boundary: int | None = None) -> EvalReport:
    if protocol == "longitudinal":
        return longitudinal_eval(panel, recipe)
    if protocol == "loocv":
        return loocv_eval(panel, recipe)
    if protocol == "split":
        return split_eval(panel, boundary, recipe)
    raise InvalidParameter(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def aggregation_curve(report: EvalReport) -> list[tuple[int, float, float]]:
    """AUC and Peirce index of the running aggregate over replicates 1..k."""
    R = report.replicate_scores
    if R is None:
        raise ValueError("report has no replicate scores")
    y = report.outcomes
    ok = ~np.isnan(R)
    sums = np.cumsum(np.where(ok, R, 0.0), axis=0)
    counts = np.cumsum(ok, axis=0)
    out = []
    for k in range(R.shape[0]):
        if np.any(counts[k] == 0):
            continue
        s = metrics.summarize((sums[k] / counts[k], y))
        out.append((k + 1, s.auc, s.peirce))
    return out


# -- sweeps ------------------------------------------------------------------

@dataclass
class SweepRow:
    spec: str
    mean_auc: float
    std_auc: float
    mean_pi: float
    std_pi: float
    mean_sens_at_star: float
    mean_spec_at_star: float
    aucs: list[float] = field(default_factory=list)
    pis: list[float] = field(default_factory=list)
    error: str | None = None


SWEEP_COLUMNS = ("spec", "mean_auc", "std_auc", "mean_pi", "std_pi",
                 "mean_sens_at_star", "mean_spec_at_star")


@dataclass
class SweepTable:
    rows: list[SweepRow]
    protocol: str = "longitudinal"
    repeats: int = 0

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([r.spec, *(repr(float(getattr(r, c))) for c in SWEEP_COLUMNS[1:])])

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "repeats": self.repeats,
                "rows": [vars(r) for r in self.rows]}


def summarize_runs(label: str, reports: Sequence[EvalReport]) -> SweepRow:
    """Mean and sample standard deviation of AUC and Peirce index.

    Sensitivity and specificity come from the run whose Peirce index is
    closest to the mean (first such run on ties).  With one run the
    standard deviations are NaN.
    """
    aucs = np.array([r.auc for r in reports])
    pis = np.array([r.peirce for r in reports])
    mean_pi = float(pis.mean())
    rep = reports[int(np.argmin(np.abs(pis - mean_pi)))]
    # a single run has no spread estimate
    sd_auc = float(aucs.std(ddof=1)) if len(reports) > 1 else math.nan
    sd_pi = float(pis.std(ddof=1)) if len(reports) > 1 else math.nan
    return SweepRow(label, float(aucs.mean()), sd_auc, mean_pi, sd_pi,
                    rep.sens_at_star, rep.spec_at_star, aucs.tolist(), pis.tolist())


def failed_row(label: str, error: str) -> SweepRow:
    nan = math.nan
    return SweepRow(label, nan, nan, nan, nan, nan, nan, error=error)


def _repeat_task(args):
    panel, protocol, recipe, boundary = args
    return evaluate(panel, protocol, recipe, boundary)


def repeat_eval(panel: Panel, recipe: Recipe, repeats: int, protocol: str = "longitudinal",
                boundary: int | None = None, jobs: int = 1) -> list[EvalReport]:
    """Run ``repeats`` evaluations with seeds derived from ``recipe.seed``."""
    tasks = [(panel, protocol, recipe.with_seed(derive_seed(recipe.seed, 3, r)), boundary)
             for r in range(repeats)]
    if jobs > 1 and repeats > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_repeat_task, tasks))
    return [_repeat_task(t) for t in tasks]


def rate_sweep(panel: Panel, grid: Sequence, R: int = 15, K: int = 1, seed: int = 0,
               protocol: str = "longitudinal", boundary: int | None = None,
               control: FitControl | None = None, encoding: EncodeOptions | None = None,
               on_error: str = "raise", jobs: int = 1) -> SweepTable:
    """Evaluate each grid spec ``R`` times with independent seeds.

    With ``on_error="record"`` a failing grid point yields a NaN row carrying
    the error message instead of aborting the sweep.
    """
    if R < 2:
        raise InvalidParameter(f"a sweep needs R >= 2 repeats, got {R}")
    if not grid:
        raise InvalidParameter("empty sweep grid")
    rows = []
    for g, point in enumerate(grid):
        recipe = point if isinstance(point, Recipe) else Recipe(
            parse_spec(point) if isinstance(point, str) else point, K,
            derive_seed(seed, g), control or FitControl(), encoding or EncodeOptions())
        try:
            reports = repeat_eval(panel, recipe, R, protocol, boundary, jobs)
        except RareventError as exc:
            if on_error != "record":
                raise
            rows.append(failed_row(recipe.label, f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(summarize_runs(recipe.label, reports))
    return SweepTable(rows, protocol, R)
