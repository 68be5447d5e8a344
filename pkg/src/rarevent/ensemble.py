"""K-replicate resample / fit / average predictor.

Replicate ``k`` (1-based) resamples the training design with the stream
``(seed, k, stage)`` and fits a weighted logistic regression.  Predictions
are the plain mean of replicate probabilities, accumulated in replicate
order so the result does not depend on how replicates were scheduled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import DesignMatrix
from .errors import AllReplicatesFailed, ComputationError, DimensionMismatch
from .logistic import FitControl, FittedLogistic, fit_arrays, sigmoid
from .resampling import LabeledSet, SamplerSpec, apply_chain, check_order, parse_spec

DEFAULT_K = 20
MAX_K = 1000
MAX_RETRIES = 10


@dataclass(eq=False)
class Replicate:
    index: int
    seed: list[int]
    attempts: int
    fit: FittedLogistic | None = None
    error: str | None = None
    n_rows: float = 0.0
    n_events: float = 0.0

    @property
    def ok(self) -> bool:
        return self.fit is not None


@dataclass(eq=False)
class EnsembleModel:
    replicates: list[Replicate]
    spec: SamplerSpec
    base_seed: int
    column_names: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.replicates)

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.replicates)

    @property
    def n_separated(self) -> int:
        return sum(r.ok and r.fit.separation_flag for r in self.replicates)

    def replicate_predictions(self, X) -> np.ndarray:
        """(K, n) replicate probabilities; rows of failed replicates are NaN."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.column_names) and self.column_names:
            raise DimensionMismatch(f"expected {len(self.column_names)} columns, got {X.shape[1]}")
        out = np.full((self.K, X.shape[0]), np.nan)
        for j, r in enumerate(self.replicates):
            if r.ok:
                if r.fit.beta.shape[0] != X.shape[1]:
                    raise DimensionMismatch(
                        f"replicate has {r.fit.beta.shape[0]} coefficients, x has {X.shape[1]}")
                out[j] = sigmoid(X @ r.fit.beta)
        return out

    def predict(self, X) -> np.ndarray:
        P = self.replicate_predictions(X)
        ok = [j for j, r in enumerate(self.replicates) if r.ok]
        return P[ok].mean(axis=0)

    def to_dict(self) -> dict:
        reps = []
        for r in self.replicates:
            d = {"index": r.index, "seed": r.seed, "attempts": r.attempts, "error": r.error,
                 "n_rows": r.n_rows, "n_events": r.n_events}
            if r.ok:
                f = r.fit
                d.update(beta=f.beta.tolist(), covariance=f.covariance.tolist(),
                         converged=f.converged, iterations=f.iterations,
                         deviance=f.final_deviance, separation=f.separation_flag)
            reps.append(d)
        return {"spec": str(self.spec), "K": self.K, "base_seed": self.base_seed,
                "column_names": list(self.column_names), "diagnostics": self.diagnostics,
                "replicates": reps}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleModel:
        reps = []
        for r in d["replicates"]:
            fit = None
            if r.get("beta") is not None:
                fit = FittedLogistic(np.array(r["beta"]), np.array(r["covariance"]),
                                     r["converged"], r["iterations"], r["deviance"],
                                     r["separation"])
            reps.append(Replicate(r["index"], list(r["seed"]), r["attempts"], fit, r["error"],
                                  r["n_rows"], r["n_events"]))
        return cls(reps, parse_spec(d["spec"]), d["base_seed"], tuple(d["column_names"]),
                   dict(d.get("diagnostics", {})))

    @classmethod
    def from_json(cls, text: str) -> EnsembleModel:
        return cls.from_dict(json.loads(text))


def predict_aggregate(model: EnsembleModel, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    p = model.predict(x)
    return float(p[0]) if x.ndim == 1 else p


def _fit_replicate(source, design, spec, entropy, control, start, distance_scaling):
    rs = apply_chain(source, spec, entropy, distance_scaling, warn_order=False)
    X, y, w = rs.materialize(source, design.weights)
    return fit_arrays(X, y, w, control, start), float(w.sum()), float(w[y == 1].sum())


def train_ensemble(design: DesignMatrix, spec: SamplerSpec | str, K: int = DEFAULT_K,
                   seed: int = 0, control: FitControl | None = None, start=None,
                   distance_scaling: bool = False, max_retries: int = MAX_RETRIES) -> EnsembleModel:
    """Fit ``K`` logistic regressions on independent resamples of ``design``.

    A replicate whose resample cannot be fitted (a class emptied, a singular
    design) is retried with a fresh stream up to ``max_retries`` times and
    then dropped.  Separated fits are kept.

    ``start`` is one coefficient vector shared by every replicate, or a
    sequence giving replicate ``k`` its own start at position ``k - 1``.
    """
    if isinstance(spec, str):
        spec = parse_spec(spec)
    if not 1 <= K <= MAX_K:
        raise ValueError(f"K must be in 1..{MAX_K}, got {K}")
    check_order(spec)
    control = control or FitControl()
    source = LabeledSet.from_design(design)
    seed = int(seed)
    per_replicate = isinstance(start, (list, tuple)) and (
        not start or start[0] is None or np.ndim(start[0]) == 1)
    starts = list(start)[:K] + [None] * (K - len(start)) if per_replicate else [start] * K

    replicates = []
    shared = None
    for k in range(1, K + 1):
        if spec.is_identity and shared is not None:
            # every identity replicate is the same plain fit
            replicates.append(Replicate(k, [seed, k], 1, shared.fit, shared.error,
                                        shared.n_rows, shared.n_events))
            continue
        rep = Replicate(k, [seed, k], 0)
        for attempt in range(max_retries + 1):
            entropy = [seed, k] if attempt == 0 else [seed, k, attempt]
            rep.attempts = attempt + 1
            rep.seed = entropy
            try:
                rep.fit, rep.n_rows, rep.n_events = _fit_replicate(
                    source, design, spec, entropy, control, starts[k - 1], distance_scaling)
                rep.error = None
                break
            except ComputationError as exc:
                rep.error = f"{type(exc).__name__}: {exc}"
                if spec.is_identity:
                    break
        replicates.append(rep)
        shared = rep

    model = EnsembleModel(replicates, spec, seed, design.column_names)
    model.diagnostics = {"failed": model.n_failed, "separated": model.n_separated,
                         "retries": sum(r.attempts - 1 for r in replicates if not spec.is_identity)}
    if model.n_failed == K:
        raise AllReplicatesFailed(f"all {K} replicates failed; last error: {replicates[-1].error}")
    return model
