import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rarevent import resampling as rs
from rarevent.errors import (
    ConfigParse,
    EmptyClass,
    KTooLarge,
    OutOfRange,
    RatioWouldShrinkMinority,
    TooFewMinority,
)
from rarevent.logistic import fit_arrays
from rarevent.resampling import (
    Bootstrap,
    LabeledSet,
    OverRandom,
    SamplerSpec,
    Smote,
    SpecOrderWarning,
    UnderRandom,
    apply_chain,
    bootstrap_class,
    case_control,
    case_control_rate,
    oversample_random,
    parse_spec,
    smote,
    tomek_clean,
    undersample_random,
)


def labeled(n_maj, n_min, dim=2, seed=0):
    rng = np.random.default_rng(seed)
    X = np.c_[np.ones(n_maj + n_min), rng.normal(size=(n_maj + n_min, dim))]
    y = np.r_[np.zeros(n_maj), np.ones(n_min)].astype(np.int8)
    return LabeledSet(X, y, slice(1, None))


def line_set(coords, labels):
    X = np.c_[np.ones(len(coords)), coords]
    return LabeledSet(X, np.asarray(labels, dtype=np.int8), slice(1, None))


class PinnedRng:
    """Stands in for a Generator: fixed neighbour choice and u."""

    def __init__(self, choice=0, u=0.5):
        self.choice, self.u = choice, u

    def integers(self, k):
        return self.choice

    def random(self):
        return self.u


# -- undersampling -----------------------------------------------------------

@pytest.mark.parametrize("r, kept", [(0.7, 30), (0.0, 100), (0.3, 70), (0.995, 1), (0.999, 1)])
def test_undersample_counts(r, kept):
    src = labeled(100, 4)
    out = undersample_random(src, r, 1)
    assert out.class_counts(src) == (kept, 4)


def test_undersample_zero_rate_is_identity():
    src = labeled(50, 3)
    assert np.array_equal(undersample_random(src, 0.0, 5).row_indices, np.arange(53))


def test_undersample_keeps_every_event_and_no_duplicates():
    src = labeled(100, 6)
    out = undersample_random(src, 0.5, 3)
    assert len(set(out.row_indices.tolist())) == len(out.row_indices)
    assert set(range(100, 106)) <= set(out.row_indices.tolist())


def test_undersample_needs_majority():
    with pytest.raises(EmptyClass):
        undersample_random(labeled(0, 3), 0.5)


def test_rate_out_of_range():
    with pytest.raises(OutOfRange):
        UnderRandom(1.0)


# -- case-control ------------------------------------------------------------

@pytest.mark.parametrize("p, r", [(0.5, 0.0), (1 / 3, 0.5), (0.04, 0.92 / 0.96)])
def test_case_control_rate(p, r):
    assert case_control_rate(p) == pytest.approx(r, abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 0.6, -0.1])
def test_case_control_rate_out_of_range(p):
    with pytest.raises(OutOfRange):
        case_control_rate(p)


@pytest.mark.parametrize("n_maj, n_min", [(96, 4), (25, 1), (999, 13), (10, 10)])
def test_case_control_balances(n_maj, n_min):
    src = labeled(n_maj, n_min)
    assert case_control(src, 2).class_counts(src) == (n_min, n_min)


# -- oversampling ------------------------------------------------------------

@pytest.mark.parametrize("a, b, n_min", [(1, 1, 100), (5, 3, 60), (2, 1, 50)])
def test_oversample_counts(a, b, n_min):
    src = labeled(100, 4)
    out = oversample_random(src, a, b, 0)
    assert out.class_counts(src) == (100, n_min)
    counts = out.counts(len(src))
    assert np.all(counts[100:] >= 1)
    assert np.all(counts[:100] == 1)


def test_oversample_refuses_to_shrink():
    with pytest.raises(RatioWouldShrinkMinority):
        oversample_random(labeled(100, 10), 25, 1)


# -- SMOTE -------------------------------------------------------------------

def test_smote_midpoint_with_pinned_u():
    src = line_set([[0.0, 0.0], [1.0, 1.0]], [1, 1])
    X = src.X.copy()
    _, (rows, parents, u) = rs._smote(X, src.y, 1, 1, PinnedRng(0, 0.5), slice(1, None), False)
    assert rows[0].tolist() == [1.0, 0.5, 0.5]
    assert parents[0].tolist() == [0, 1]


def test_smote_two_points():
    src = line_set([[0.0], [4.0], [9.0]], [1, 1, 0])
    out = smote(src, k=1, m=1, rng=3)
    assert len(out.synthetic_rows) == 2
    for row in out.synthetic_rows:
        assert 0.0 <= row[1] <= 4.0
    assert out.class_counts(src) == (1, 4)


def brute_force_knn(points, i, k):
    d = [(float(np.sum((points[j] - points[i]) ** 2)), j) for j in range(len(points)) if j != i]
    return sorted(d)[:k]


def test_smote_neighbors_on_a_line():
    pts = np.array([[0.0], [1.0], [2.0], [10.0]])
    nn = rs.nearest_minority_neighbors(pts, 2)
    assert set(nn[3].tolist()) == {1, 2}
    for i in range(4):
        oracle = brute_force_knn(pts, i, 2)
        assert sorted(nn[i].tolist()) == sorted(j for _, j in oracle)


@pytest.mark.parametrize("seed", range(20))
def test_knn_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 4, size=(12, 2)).astype(float)  # many ties
    k = 3
    nn = rs.nearest_minority_neighbors(pts, k)
    for i in range(len(pts)):
        assert nn[i].tolist() == [j for _, j in brute_force_knn(pts, i, k)]


def test_smote_geometry_and_labels():
    src = labeled(30, 12, dim=3, seed=4)
    out = smote(src, k=3, m=2, rng=11)
    pool = np.vstack([src.X, out.synthetic_pool])
    assert len(out.synthetic_rows) == 24
    for row, (a, b), u in zip(out.synthetic_pool, out.synthetic_parents, out.synthetic_u):
        lo = np.minimum(pool[a], pool[b]) - 1e-12
        hi = np.maximum(pool[a], pool[b]) + 1e-12
        assert np.all((lo <= row) & (row <= hi))
        assert src.y[a] == 1 and src.y[b] == 1
        np.testing.assert_allclose(row[1:], pool[a][1:] + u * (pool[b][1:] - pool[a][1:]))


def test_smote_copies_non_distance_columns_from_base():
    X = np.array([[1.0, 0.0, 1.0, 0.0], [1.0, 2.0, 0.0, 1.0], [1.0, 5.0, 0.0, 0.0]])
    src = LabeledSet(X, np.array([1, 1, 0], dtype=np.int8), slice(1, 2))
    out = smote(src, k=1, m=3, rng=0)
    for row, (a, _) in zip(out.synthetic_pool, out.synthetic_parents):
        assert row[0] == 1.0
        assert row[2:].tolist() == X[a, 2:].tolist()


def test_smote_errors():
    with pytest.raises(TooFewMinority):
        smote(labeled(5, 1), k=1)
    with pytest.raises(KTooLarge):
        smote(labeled(5, 3), k=3)


# -- Tomek -------------------------------------------------------------------

def brute_tomek(points, y):
    n = len(points)

    def nn(i):
        return min((abs(points[i] - points[j]), j) for j in range(n) if j != i)[1]

    return {(i, nn(i)) for i in range(n) if y[i] == 1 and y[nn(i)] == 0 and nn(nn(i)) == i}


def test_tomek_basic():
    src = line_set([[0.0], [0.1], [5.0]], [1, 0, 0])
    out = tomek_clean(src)
    assert out.row_indices.tolist() == [0, 2]
    assert brute_tomek([0.0, 0.1, 5.0], [1, 0, 0]) == {(0, 1)}


def test_tomek_separated_classes_identity():
    src = line_set([[0.0], [0.5], [1.0], [10.0], [10.5]], [1, 1, 1, 0, 0])
    assert tomek_clean(src).row_indices.tolist() == [0, 1, 2, 3, 4]


def test_tomek_tie_goes_to_lowest_index():
    src = line_set([[1.0], [0.0], [2.0]], [0, 1, 0])
    links = rs.tomek_links(src.X[:, 1:], src.y)
    assert links.tolist() == [[1, 0]]
    assert tomek_clean(src).row_indices.tolist() == [1, 2]


@pytest.mark.parametrize("seed", range(15))
def test_tomek_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=20)
    y = (rng.random(20) < 0.3).astype(np.int8)
    y[0], y[1] = 0, 1
    links = rs.tomek_links(pts[:, None], y)
    assert {tuple(l) for l in links.tolist()} == brute_tomek(pts.tolist(), y)
    out = tomek_clean(line_set(pts[:, None], y))
    assert out.class_counts(line_set(pts[:, None], y))[1] == int(y.sum())


def test_tomek_needs_both_classes():
    with pytest.raises(EmptyClass):
        tomek_clean(labeled(0, 3))


# -- bootstrap ---------------------------------------------------------------

def test_bootstrap_majority():
    src = labeled(100, 4)
    out = bootstrap_class(src, "maj", 8)
    c = out.counts(len(src))
    assert c[:100].sum() == 100
    assert c[100:].tolist() == [1, 1, 1, 1]
    assert (c[:100] > 1).any()


def test_bootstrap_stratified_preserves_class_sizes():
    src = labeled(40, 7)
    out = bootstrap_class(src, "stratified", 2)
    assert out.class_counts(src) == (40, 7)


def test_bootstrap_deterministic():
    src = labeled(60, 5)
    a = bootstrap_class(src, "minority", 123).row_indices
    b = bootstrap_class(src, "minority", 123).row_indices
    assert np.array_equal(a, b)


# -- chains ------------------------------------------------------------------

def test_hybrid_chain_counts():
    src = labeled(100, 4)
    spec = SamplerSpec((UnderRandom(0.3), OverRandom(5, 3)))
    out = apply_chain(src, spec, 9)
    assert out.class_counts(src) == (70, 42)
    assert out.provenance["spec"] == "under(0.3)+over(5:3)"
    assert out.provenance["seed"] == [9]


def test_empty_chain_is_identity():
    src = labeled(10, 2)
    out = apply_chain(src, SamplerSpec(), 0)
    assert out.row_indices.tolist() == list(range(12))
    assert len(out.synthetic_rows) == 0


def test_reverse_order_warns():
    src = labeled(100, 4)
    with pytest.warns(SpecOrderWarning):
        out = apply_chain(src, "over(1:1)+under(0.5)", 0)
    assert out.class_counts(src) == (50, 100)


def test_chain_with_smote_then_tomek_tracks_synthetic_rows():
    src = labeled(40, 6, seed=2)
    with pytest.warns(SpecOrderWarning):
        out = apply_chain(src, "smote(k=2,m=2)+tomek", 5)
    X, y, w = out.materialize(src)
    assert y[w > 0].sum() >= 6
    assert np.all(out.synthetic_indices < len(out.synthetic_pool))


def test_chain_determinism_and_seed_sensitivity():
    src = labeled(80, 6)
    spec = "under(0.5)+over(1:1)"
    a = apply_chain(src, spec, [4, 1])
    b = apply_chain(src, spec, [4, 1])
    c = apply_chain(src, spec, [4, 2])
    assert np.array_equal(a.row_indices, b.row_indices)
    assert not np.array_equal(a.row_indices, c.row_indices)


@pytest.mark.parametrize("spec", ["over(5:3)", "under(0.3)+over(1:1)", "boot(strat)", "under(0.4)"])
def test_resampled_fit_equals_weighted_fit(spec):
    rng = np.random.default_rng(1)
    n = 120
    X = np.c_[np.ones(n), rng.normal(size=(n, 2))]
    y = (rng.random(n) < 0.2).astype(np.int8)
    src = LabeledSet(X, y, slice(1, None))
    out = apply_chain(src, spec, 3)
    Xw, yw, w = out.materialize(src)
    Xd, yd = out.materialize_rows(src)
    np.testing.assert_allclose(fit_arrays(Xw, yw, w).beta, fit_arrays(Xd, yd).beta, atol=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 300), st.integers(1, 15), st.integers(0, 999))
def test_under_count_property(n_maj, n_min, r_milli):
    r = r_milli / 1000
    src = labeled(n_maj, n_min)
    got = undersample_random(src, r, 0).class_counts(src)
    expect = max(1, int(np.floor((1 - r) * n_maj + 0.5 + 1e-9)))
    assert got == (expect, n_min)


# -- textual form ------------------------------------------------------------

def test_parse_hybrid():
    spec = parse_spec("under(0.3)+over(5:3)")
    assert spec.stages == (UnderRandom(0.3), OverRandom(5, 3))
    assert str(spec) == "under(0.3)+over(5:3)"


@pytest.mark.parametrize("text", ["id", "cc", "tomek", "boot(maj)", "boot(min)", "boot(strat)",
                                  "smote(k=5,m=1)", "under(0.25)+smote(k=2,m=3)", "over(1:1)"])
def test_parse_round_trip(text):
    assert str(parse_spec(text)) == text


def test_parse_identity():
    assert parse_spec("id").is_identity
    assert parse_spec("id+id").is_identity
    assert parse_spec("boot(min)").stages == (Bootstrap("minority"),)
    assert parse_spec("smote(k=2,m=4)").stages == (Smote(2, 4),)


@pytest.mark.parametrize("text, offset", [
    ("over(0:3)", 5),
    ("over(3:0)", 7),
    ("under(1.5)", 6),
    ("under(0.3)+", 11),
    ("under(0.3)*over(1:1)", 10),
    ("smote(k=5)", 9),
    ("boot(all)", 5),
    ("foo", 0),
    ("", 0),
    ("under(0.3", 9),
])
def test_parse_errors_report_offsets(text, offset):
    with pytest.raises(ConfigParse) as exc:
        parse_spec(text)
    assert exc.value.position == offset


def test_parse_offsets_are_bytes():
    with pytest.raises(ConfigParse) as exc:
        parse_spec("é")
    assert exc.value.position == 0
    with pytest.raises(ConfigParse) as exc:
        parse_spec("id+é")
    assert exc.value.position == 3


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="undeovrsmtkcbia()+:=,.0123456789", max_size=25))
def test_parser_is_total(text):
    try:
        spec = parse_spec(text)
    except ConfigParse as exc:
        assert 0 <= exc.position <= len(text.encode())
    else:
        assert isinstance(spec, SamplerSpec)
        assert parse_spec(str(spec)) == spec


def test_all_atoms_accepted_in_any_combination():
    atoms = ["under(0.1)", "over(2:1)", "cc", "tomek", "boot(maj)", "id", "smote(k=1,m=1)"]
    for a, b in itertools.permutations(atoms, 2):
        assert len(parse_spec(f"{a}+{b}").stages) <= 2
