import json

import numpy as np
import pytest

from knockem import filter as kfilter
from knockem.exceptions import ConfigError
from knockem.filter import StatTensor


def test_pvalue_single_imputation_winner():
    t = StatTensor(z=[[[3.0]]], z_tilde=[[[1.0]]])
    assert kfilter.pvalues(t)[0] == pytest.approx(0.5)
    t = StatTensor(z=[[[1.0]]], z_tilde=[[[3.0]]])
    assert kfilter.pvalues(t)[0] == pytest.approx(1.0)


def test_pvalue_five_imputations_two_losses():
    z = np.array([[ [2.0] ], [[2.0]], [[2.0]], [[0.5]], [[0.5]]])
    zt = np.array([[[1.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]]])
    t = StatTensor(z=z, z_tilde=zt)
    assert kfilter.pvalues(t)[0] == pytest.approx(3.0 / 6.0)


def test_pvalue_two_outcomes_positive_product():
    t = StatTensor(z=[[[2.0], [3.0]]], z_tilde=[[[1.0], [1.0]]])
    assert kfilter.pvalues(t)[0] == pytest.approx(0.5)
    # one outcome flips: product <= 0
    t = StatTensor(z=[[[2.0], [1.0]]], z_tilde=[[[1.0], [3.0]]])
    assert kfilter.pvalues(t)[0] == pytest.approx(1.0)


def test_pvalues_live_on_lattice():
    rng = np.random.default_rng(0)
    for k in (1, 3, 5):
        t = StatTensor(z=rng.random((k, 1, 12)), z_tilde=rng.random((k, 1, 12)))
        pv = kfilter.pvalues(t)
        lattice = np.arange(1, k + 2) / (k + 1.0)
        assert np.all(np.isin(pv, lattice))


def test_order_all_zero_is_identity():
    t = StatTensor(z=np.zeros((2, 1, 5)), z_tilde=np.zeros((2, 1, 5)))
    assert np.array_equal(kfilter.order_features(t), np.arange(5))


def test_order_sorts_by_key():
    t = StatTensor(z=[[[5.0, 1.0, 3.0]]], z_tilde=[[[0.0, 0.0, 0.0]]])
    assert np.array_equal(kfilter.order_features(t), [0, 2, 1])


def test_order_stable_on_ties():
    t = StatTensor(z=[[[2.0, 7.0, 2.0, 7.0]]], z_tilde=[[[0.0] * 4]])
    assert np.array_equal(kfilter.order_features(t), [1, 3, 0, 2])


def test_order_mode_validation():
    single = StatTensor(z=np.ones((1, 1, 3)), z_tilde=np.ones((1, 1, 3)))
    double = StatTensor(z=np.ones((1, 2, 3)), z_tilde=np.ones((1, 2, 3)))
    with pytest.raises(ConfigError):
        kfilter.order_features(single, kfilter.MAXPROD)
    with pytest.raises(ConfigError):
        kfilter.order_features(double, kfilter.MAXMAX)
    with pytest.raises(ConfigError):
        kfilter.order_features(single, "nope")


def test_order_multi_outcome_modes():
    z = np.array([[[3.0, 1.0], [2.0, 5.0]], [[1.0, 1.0], [1.0, 4.0]]])
    zt = np.zeros_like(z)
    t = StatTensor(z=z, z_tilde=zt)
    # feature keys, maxprod: max(3*2, 1*1) = 6 and max(1*5, 1*4) = 5
    assert np.array_equal(kfilter.order_features(t, kfilter.MAXPROD), [0, 1])
    # sumprod: 6 + 1 = 7 vs 5 + 4 = 9
    assert np.array_equal(kfilter.order_features(t, kfilter.SUMPROD), [1, 0])


def _seqstep_oracle(p_vals, q, c):
    best = 0
    curve = []
    above = below = 0
    for j, pv in enumerate(p_vals, start=1):
        if pv > 0.5:
            above += 1
        else:
            below += 1
        ratio = (c + above) / max(below, 1)
        curve.append(ratio)
        if ratio <= q:
            best = j
    return best, curve


def test_seqstep_all_above_threshold():
    k, _ = kfilter.seqstep(np.ones(6), q=0.4, c=1)
    assert k == 0


def test_seqstep_worked_examples():
    p = np.array([0.25, 0.25, 1.0, 0.25, 1.0])
    k1, curve1 = kfilter.seqstep(p, q=0.5, c=1)
    assert np.allclose(curve1, [1.0, 0.5, 1.0, 2.0 / 3.0, 1.0])
    # only j=2 has ratio <= 1/2 (brute-force scan of the curve above)
    assert k1 == _seqstep_oracle(p, 0.5, 1)[0] == 2
    k0, curve0 = kfilter.seqstep(p, q=0.5, c=0)
    assert np.allclose(curve0, [0.0, 0.0, 0.5, 1.0 / 3.0, 2.0 / 3.0])
    assert k0 == _seqstep_oracle(p, 0.5, 0)[0] == 4


def test_seqstep_matches_bruteforce_on_random_vectors():
    rng = np.random.default_rng(1)
    for trial in range(1000):
        n = rng.integers(1, 40)
        k_imp = rng.integers(1, 7)
        p_vals = rng.integers(1, k_imp + 2, size=n) / (k_imp + 1.0)
        q = rng.uniform(0.05, 0.9)
        c = int(rng.integers(0, 2))
        k_hat, curve = kfilter.seqstep(p_vals, q, c)
        k_ref, curve_ref = _seqstep_oracle(p_vals, q, c)
        assert k_hat == k_ref
        assert np.allclose(curve, curve_ref)


def test_seqstep_monotone_in_q():
    rng = np.random.default_rng(2)
    p_vals = rng.integers(1, 7, size=30) / 6.0
    ks = [kfilter.seqstep(p_vals, q, 1)[0] for q in (0.05, 0.1, 0.2, 0.4, 0.8)]
    assert all(a <= b for a, b in zip(ks, ks[1:]))


def test_seqstep_validates_q():
    with pytest.raises(ConfigError):
        kfilter.seqstep(np.array([0.5]), q=1.5, c=1)
    with pytest.raises(ConfigError):
        kfilter.seqstep(np.array([0.5]), q=0.2, c=2)


def _knockoff_filter_oracle(z, zt, q, offset):
    """Classical filter on W_j = sign(z - zt) * max(z, zt)."""
    w = np.sign(z - zt) * np.maximum(z, zt)
    candidates = np.sort(np.abs(w[w != 0]))
    for t in candidates:
        num = offset + np.sum(w <= -t)
        den = max(1, np.sum(w >= t))
        if num / den <= q:
            return set(np.flatnonzero(w >= t).tolist())
    return set()


def test_select_single_imputation_equals_knockoff_filter():
    rng = np.random.default_rng(3)
    for trial in range(20):
        p = int(rng.integers(5, 60))
        z = rng.exponential(1.0, size=p)
        zt = rng.exponential(1.0, size=p)
        q = rng.uniform(0.1, 0.5)
        t = StatTensor(z=z[None, None, :], z_tilde=zt[None, None, :])
        for c in (0, 1):
            report = kfilter.select(t, q=q, c=c)
            got = set((report.selected_1 if c == 1 else report.selected_0).tolist())
            assert got == _knockoff_filter_oracle(z, zt, q, c)


def test_select_empty_case():
    t = StatTensor(z=np.zeros((1, 1, 4)), z_tilde=np.ones((1, 1, 4)))
    report = kfilter.select(t, q=0.25)
    assert report.k_hat_1 == 0
    assert report.selected_1.size == 0
    assert report.selected.size == 0


def test_select_scale_invariance():
    rng = np.random.default_rng(4)
    z = rng.exponential(size=(3, 1, 20))
    zt = rng.exponential(size=(3, 1, 20))
    a = kfilter.select(StatTensor(z=z, z_tilde=zt), q=0.3)
    b = kfilter.select(StatTensor(z=17.0 * z, z_tilde=17.0 * zt), q=0.3)
    assert np.array_equal(a.p_values, b.p_values)
    assert np.array_equal(a.order, b.order)
    assert np.array_equal(a.selected_1, b.selected_1)
    assert np.array_equal(a.selected_0, b.selected_0)


def test_selected_subset_of_prefix_and_below_threshold():
    rng = np.random.default_rng(5)
    z = rng.exponential(size=(4, 1, 30))
    zt = rng.exponential(size=(4, 1, 30))
    t = StatTensor(z=z, z_tilde=zt)
    report = kfilter.select(t, q=0.4)
    for c, sel, k_hat in ((0, report.selected_0, report.k_hat_0),
                          (1, report.selected_1, report.k_hat_1)):
        prefix = set(report.order[:k_hat].tolist())
        assert set(sel.tolist()) <= prefix
        assert np.all(report.p_values[sel] <= 0.5)


def test_stability_deterministic_stub():
    report = kfilter.stability_select(lambda rng: [0, 1], p=5, repetitions=7,
                                      rng=np.random.default_rng(6))
    assert np.array_equal(report.frequencies, [1.0, 1.0, 0.0, 0.0, 0.0])


def test_stability_counts_are_integers():
    rng = np.random.default_rng(7)

    def pipeline(child):
        return np.flatnonzero(child.random(6) < 0.4)

    report = kfilter.stability_select(pipeline, p=6, repetitions=25, rng=rng)
    scaled = report.frequencies * 25
    assert np.allclose(scaled, np.round(scaled))


def test_stability_rejects_bad_repetitions():
    with pytest.raises(ConfigError):
        kfilter.stability_select(lambda rng: [], p=3, repetitions=0,
                                 rng=np.random.default_rng(8))


def test_report_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    t = StatTensor(z=rng.exponential(size=(2, 1, 6)), z_tilde=rng.exponential(size=(2, 1, 6)))
    report = kfilter.select(t, q=0.3, statistic="lasso")
    stab = kfilter.StabilityReport(frequencies=np.linspace(0, 1, 6), repetitions=10)
    jpath = tmp_path / "report.json"
    cpath = tmp_path / "report.csv"
    kfilter.write_report_json(jpath, report, stab)
    kfilter.write_report_csv(cpath, report, stab)
    payload = json.loads(jpath.read_text())
    assert payload["q"] == 0.3
    assert len(payload["features"]) == 6
    assert payload["stability"]["repetitions"] == 10
    lines = cpath.read_text().strip().splitlines()
    assert lines[0].split(",")[0] == "index"
    assert len(lines) == 7
