"""Seeded synthetic longitudinal follow-up data.

Each individual carries seven AR(1) covariates that evolve every time step.
At each step a random roster is exposed; rostered individuals have an
event with logistic probability given by the generating coefficients.  An
event bumps the individual's recovery_days and relapse_risk at the next
step, so outcomes shape later covariates.

The intercept is calibrated by bisection on a long pre-sample so the
marginal event rate matches the configured target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Panel
from .errors import CalibrationFailed, SchemaMismatch
from .logistic import sigmoid
from .metrics import ScoredPair


@dataclass(frozen=True)
class CovariateDynamics:
    name: str
    mean: float
    persistence: float
    noise: float

    def __post_init__(self):
        if not 0 <= self.persistence < 1:
            raise ValueError(f"{self.name}: persistence must be in [0, 1)")
        if self.noise < 0:
            raise ValueError(f"{self.name}: noise scale must be non-negative")

    @property
    def stationary_sd(self) -> float:
        return self.noise / np.sqrt(1 - self.persistence ** 2)


DEFAULT_DYNAMICS = (
    CovariateDynamics("workload_21d", 25.0, 0.8, 3.0),
    CovariateDynamics("playtime_21d", 4.5, 0.8, 0.9),
    CovariateDynamics("recovery_days", 4.0, 0.5, 1.3),
    CovariateDynamics("relapse_risk", 1.0, 0.9, 0.218),
    CovariateDynamics("accel_ratio", 0.33, 0.6, 0.04),
    CovariateDynamics("decel_ratio", 0.33, 0.6, 0.04),
    CovariateDynamics("speed_ratio", 0.33, 0.6, 0.032),
)

# log-odds change per stationary standard deviation
DEFAULT_EFFECTS_PER_SD = (0.35, 0.25, -0.30, 0.45, 0.30, 0.25, -0.20)


@dataclass(frozen=True)
class TrueBeta:
    intercept: float
    slopes: tuple[float, ...]
    effects: dict[str, float]

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "slopes": list(self.slopes),
                "effects": dict(self.effects)}


@dataclass(frozen=True)
class SynthConfig:
    n_individuals: int = 42
    n_horizons: int = 50
    seed_history_horizons: int = 150
    roster_size_per_horizon: int = 16
    target_event_rate: float = 0.04
    covariate_dynamics: tuple[CovariateDynamics, ...] = DEFAULT_DYNAMICS
    effects_per_sd: tuple[float, ...] = DEFAULT_EFFECTS_PER_SD
    individual_sd: float = 0.6
    # Per-individual AR(1) frailty added to the fixed effect: risk drifts
    # over time, so recent history is more informative than old history.
    frailty_persistence: float = 0.98
    frailty_sd: float = 0.8
    # Overrides slopes and individual effects; its intercept is recalibrated.
    true_beta: TrueBeta | None = None
    recovery_bump: float = 7.0
    relapse_bump: float = 0.5
    calibration_horizons: int = 4000
    seed: int = 42

    def __post_init__(self):
        if not 0 < self.target_event_rate < 0.5:
            raise ValueError("target_event_rate must be in (0, 0.5)")
        if not 0 <= self.frailty_persistence < 1 or self.frailty_sd < 0:
            raise ValueError("frailty persistence must be in [0, 1) and its sd non-negative")
        if not 0 < self.roster_size_per_horizon <= self.n_individuals:
            raise ValueError("roster size must be in 1..n_individuals")
        if self.n_horizons < 1 or self.seed_history_horizons < 1:
            raise ValueError("need at least one history step and one horizon")
        if len(self.effects_per_sd) != len(self.covariate_dynamics):
            raise ValueError("one effect per covariate required")

    @property
    def schema(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.covariate_dynamics)

    @property
    def ids(self) -> list[str]:
        width = len(str(self.n_individuals))
        return [f"P{i + 1:0{width}d}" for i in range(self.n_individuals)]

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        d = dict(d)
        if "covariate_dynamics" in d:
            d["covariate_dynamics"] = tuple(CovariateDynamics(**c) for c in d["covariate_dynamics"])
        if "effects_per_sd" in d:
            d["effects_per_sd"] = tuple(d["effects_per_sd"])
        if d.get("true_beta") is not None:
            tb = d["true_beta"]
            d["true_beta"] = TrueBeta(float(tb.get("intercept", 0.0)), tuple(tb["slopes"]),
                                      dict(tb["effects"]))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth settings: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SynthResult:
    panel: Panel
    truth: TrueBeta
    calibrated_rate: float


def _default_truth(config: SynthConfig, rng) -> TrueBeta:
    slopes = tuple(e / d.stationary_sd
                   for e, d in zip(config.effects_per_sd, config.covariate_dynamics))
    effects = rng.normal(0.0, config.individual_sd, config.n_individuals)
    return TrueBeta(0.0, slopes, dict(zip(config.ids, effects.tolist())))


def _simulate(config: SynthConfig, truth: TrueBeta, n_steps: int, rng, record: bool):
    dyn = config.covariate_dynamics
    mean = np.array([d.mean for d in dyn])
    phi = np.array([d.persistence for d in dyn])
    noise = np.array([d.noise for d in dyn])
    sd = np.array([d.stationary_sd for d in dyn])
    slopes = np.asarray(truth.slopes)
    effects = np.array([truth.effects[i] for i in config.ids])
    names = config.schema
    i_rec = names.index("recovery_days") if "recovery_days" in names else None
    i_rel = names.index("relapse_risk") if "relapse_risk" in names else None
    n, m = config.n_individuals, config.roster_size_per_horizon

    state = mean + sd * rng.standard_normal((n, len(dyn)))
    rho = config.frailty_persistence
    frailty = config.frailty_sd * rng.standard_normal(n)
    f_noise = config.frailty_sd * np.sqrt(1 - rho ** 2)
    rows_id, rows_t, rows_x, rows_y = [], [], [], []
    prob_sum = 0.0
    for t in range(n_steps):
        roster = np.sort(rng.choice(n, size=m, replace=False))
        x = state[roster]
        p = sigmoid(truth.intercept + x @ slopes + effects[roster] + frailty[roster])
        y = (rng.random(m) < p).astype(np.int8)
        prob_sum += float(p.sum())
        if record:
            rows_id.extend(roster.tolist())
            rows_t.extend([t] * m)
            rows_x.append(x.copy())
            rows_y.append(y)
        state = mean + phi * (state - mean) + noise * rng.standard_normal(state.shape)
        frailty = rho * frailty + f_noise * rng.standard_normal(n)
        hit = roster[y == 1]
        if i_rec is not None:
            state[hit, i_rec] += config.recovery_bump
        if i_rel is not None:
            state[hit, i_rel] += config.relapse_bump
    rate = prob_sum / (n_steps * m)
    if not record:
        return rate
    ids = np.array(config.ids, dtype=object)[rows_id]
    return rate, ids, np.array(rows_t), np.vstack(rows_x), np.concatenate(rows_y)


def calibrate_intercept(config: SynthConfig, truth: TrueBeta, tol: float = 0.005) -> tuple[float, float]:
    """Bisect the intercept so the pre-sample mean event probability hits the
    target.  Every evaluation replays the same random stream."""
    entropy = [config.seed, 2]

    def rate(b0):
        rng = np.random.default_rng(np.random.SeedSequence(entropy))
        return _simulate(config, replace(truth, intercept=b0), config.calibration_horizons,
                         rng, record=False)

    lo, hi = -20.0, 10.0
    r_lo, r_hi = rate(lo), rate(hi)
    target = config.target_event_rate
    if not r_lo <= target <= r_hi:
        raise CalibrationFailed(f"target rate {target} outside [{r_lo:.4g}, {r_hi:.4g}]")
    b0, r = lo, r_lo
    for _ in range(60):
        b0 = (lo + hi) / 2
        r = rate(b0)
        if abs(r - target) < tol / 10:
            break
        if r < target:
            lo = b0
        else:
            hi = b0
    if abs(r - target) > tol:
        raise CalibrationFailed(f"calibrated rate {r:.5f} misses target {target}")
    return b0, r


def simulate(config: SynthConfig | None = None) -> SynthResult:
    config = config or SynthConfig()
    if config.true_beta is None:
        truth = _default_truth(config, np.random.default_rng(np.random.SeedSequence([config.seed, 0])))
    else:
        truth = config.true_beta
        if len(truth.slopes) != len(config.covariate_dynamics):
            raise SchemaMismatch("true_beta slopes do not match the covariates")
        missing = set(config.ids) - set(truth.effects)
        if missing:
            raise SchemaMismatch(f"true_beta lacks effects for {sorted(missing)}")
    b0, rate = calibrate_intercept(config, truth)
    truth = replace(truth, intercept=b0)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    n_steps = config.seed_history_horizons + config.n_horizons
    _, ids, times, X, y = _simulate(config, truth, n_steps, rng, record=True)
    horizons = range(config.seed_history_horizons, n_steps)
    return SynthResult(Panel(config.schema, ids, times, X, y, horizons), truth, rate)


def generate(config: SynthConfig | None = None) -> Panel:
    return simulate(config).panel


def true_probabilities(panel: Panel, truth: TrueBeta, indices=None) -> np.ndarray:
    if len(truth.slopes) != len(panel.schema):
        raise SchemaMismatch(f"{len(truth.slopes)} slopes for {len(panel.schema)} covariates")
    idx = np.arange(len(panel)) if indices is None else np.asarray(indices)
    try:
        eff = np.array([truth.effects[i] for i in panel.ids[idx]])
    except KeyError as exc:
        raise SchemaMismatch(f"no generating effect for individual {exc.args[0]!r}") from None
    return sigmoid(truth.intercept + panel.covariates[idx] @ np.asarray(truth.slopes) + eff)


def oracle_score(panel: Panel, truth: TrueBeta) -> list[ScoredPair]:
    """Score every horizon record with its generating probability."""
    idx = panel.horizon_indices()
    p = true_probabilities(panel, truth, idx)
    return [ScoredPair(float(s), int(panel.outcomes[i]), int(panel.times[i]), str(panel.ids[i]))
            for s, i in zip(p, idx)]
