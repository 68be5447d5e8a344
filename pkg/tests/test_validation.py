import json

import numpy as np
import pytest

from rarevent import metrics
from rarevent.data import ObservationRecord, Panel
from rarevent.errors import EmptySide, InvalidParameter, NoSeedHistory
from rarevent.validation import (
    Recipe,
    aggregation_curve,
    evaluate,
    longitudinal_eval,
    loocv_eval,
    rate_sweep,
    repeat_eval,
    split_eval,
)


def injected(panel, t_future):
    """A future record whose covariates perfectly predict a future event."""
    x = tuple(float(v) * 100 for v in panel.covariates.max(axis=0))
    rec = ObservationRecord(str(panel.ids[0]), t_future, x, 1)
    return panel.with_records([rec])


def test_longitudinal_train_sizes_grow(small_panel):
    rep = longitudinal_eval(small_panel)
    n = [s.n_train for s in rep.per_step_diagnostics]
    assert n == sorted(n) and len(set(n)) == len(n)
    first = small_panel.horizons[0]
    assert n[0] == len(small_panel.indices_before(first))
    assert len(rep.pairs) == len(small_panel.horizon_indices())


def test_two_horizon_panel_uses_first_horizon_outcomes():
    xs = [(0, 0.0, 0), (0, 1.0, 1), (0, 2.0, 0), (0, 3.0, 1),
          (1, 0.5, 1), (1, 2.5, 0), (2, 0.1, 0), (2, 1.0, 1)]
    panel = Panel.from_records(["x"], [ObservationRecord("A", t, (x,), y) for t, x, y in xs],
                               horizons=[1, 2])
    steps = longitudinal_eval(panel).per_step_diagnostics
    assert [s.n_train for s in steps] == [4, 6]
    assert [s.n_events_train for s in steps] == [2, 3]


def test_temporal_canary(small_panel):
    base = longitudinal_eval(small_panel)
    t_inj = small_panel.horizons[-1]
    bigger = injected(small_panel, t_inj)
    after = longitudinal_eval(bigger)
    for a, b in zip(base.pairs, after.pairs):
        if a.time_index <= t_inj and (a.individual_id, a.time_index) == (b.individual_id, b.time_index):
            assert a.score == b.score
    # the canary is live: LOOCV sees the injected record
    lo_base = loocv_eval(small_panel).pairs
    lo_after = {(p.individual_id, p.time_index, p.outcome): p.score for p in loocv_eval(bigger).pairs}
    assert any(lo_after.get((p.individual_id, p.time_index, p.outcome)) != p.score for p in lo_base)


def test_no_seed_history_events():
    recs = [ObservationRecord("A", 0, (1.0,), 0), ObservationRecord("B", 0, (2.0,), 0),
            ObservationRecord("A", 1, (1.0,), 1), ObservationRecord("B", 1, (2.0,), 0)]
    with pytest.raises(NoSeedHistory):
        longitudinal_eval(Panel.from_records(["x"], recs))


def test_loocv_fold_count():
    recs = [ObservationRecord("A", 0, (0.0,), 0), ObservationRecord("A", 1, (1.0,), 1),
            ObservationRecord("A", 2, (2.0,), 0), ObservationRecord("A", 3, (3.0,), 1)]
    panel = Panel.from_records(["x"], recs, horizons=[0, 1, 2, 3])
    rep = loocv_eval(panel)
    assert len(rep.pairs) == 4
    assert all(s.n_train == 3 for s in rep.per_step_diagnostics)


def test_loocv_invariant_under_record_order(small_panel):
    recs = list(small_panel.records)
    shuffled = [recs[i] for i in np.random.default_rng(0).permutation(len(recs))]
    other = Panel.from_records(small_panel.schema, shuffled, horizons=small_panel.horizons)
    a, b = loocv_eval(small_panel), loocv_eval(other)
    assert [p.score for p in a.pairs] == [p.score for p in b.pairs]


def test_split_frozen_model(small_panel):
    rep = split_eval(small_panel)
    assert len({s.n_train for s in rep.per_step_diagnostics}) == 1


def test_split_boundary_at_min_time(small_panel):
    with pytest.raises(EmptySide):
        split_eval(small_panel, boundary=0)


def test_report_metrics_recomputable(small_panel):
    rep = longitudinal_eval(small_panel, Recipe("under(0.3)", K=3, seed=4))
    d = json.loads(rep.to_json())
    s = [p["score"] for p in d["pairs"]]
    y = [p["outcome"] for p in d["pairs"]]
    assert d["auc"] == metrics.auc((s, y))
    assert d["peirce"] == metrics.peirce((s, y)).index


@pytest.mark.parametrize("protocol", ["longitudinal", "loocv", "split"])
def test_protocols_reproducible(small_panel, protocol):
    r = Recipe("under(0.5)", K=2, seed=9)
    a, b = evaluate(small_panel, protocol, r), evaluate(small_panel, protocol, r)
    assert [p.score for p in a.pairs] == [p.score for p in b.pairs]


def test_aggregation_curve_last_point_equals_report(small_panel):
    rep = longitudinal_eval(small_panel, Recipe("under(0.3)", K=4, seed=1))
    curve = aggregation_curve(rep)
    assert [k for k, _, _ in curve] == [1, 2, 3, 4]
    assert curve[-1][1] == pytest.approx(rep.auc, abs=1e-12)
    assert curve[-1][2] == pytest.approx(rep.peirce, abs=1e-12)


def test_repeat_eval_parallel_matches_serial(small_panel):
    r = Recipe("boot(strat)", K=1, seed=2)
    serial = repeat_eval(small_panel, r, 2, "split")
    par = repeat_eval(small_panel, r, 2, "split", jobs=2)
    assert [x.auc for x in serial] == [x.auc for x in par]


def test_sweep_identity_has_zero_std(small_panel, tmp_path):
    tab = rate_sweep(small_panel, ["id"], R=2, protocol="split")
    row = tab.rows[0]
    assert row.std_auc == 0.0 and row.std_pi == 0.0
    tab.to_csv(tmp_path / "s.csv")
    head = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert head == "spec,mean_auc,std_auc,mean_pi,std_pi,mean_sens_at_star,mean_spec_at_star"


def test_sweep_random_spec_varies(small_panel):
    tab = rate_sweep(small_panel, ["under(0.5)"], R=3, protocol="split")
    assert tab.rows[0].std_auc > 0


def test_sweep_needs_two_repeats(small_panel):
    with pytest.raises(InvalidParameter):
        rate_sweep(small_panel, ["id"], R=1)


def test_sweep_records_failures(small_panel):
    tab = rate_sweep(small_panel, ["over(1000:1)", "id"], R=2, protocol="split", on_error="record")
    assert tab.rows[0].error and np.isnan(tab.rows[0].mean_auc)
    assert tab.rows[1].error is None


def test_unknown_protocol(small_panel):
    with pytest.raises(InvalidParameter):
        evaluate(small_panel, "kfold")
