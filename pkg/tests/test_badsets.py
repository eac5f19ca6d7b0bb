import math

import numpy as np
import pytest

from hscorr.badsets import (
    LABELS,
    Base,
    ExtensionSamples,
    StabilityParams,
    analytic_bound,
    bad_masks,
    default_scalings,
    estimate_all_labels,
    estimate_measure,
    in_bad,
    label_bound,
    random_base,
    verify_claim_i,
    verify_claim_ii,
)
from hscorr.dynamics import PhaseState
from hscorr.errors import PreconditionError

EPS = 1e-3


def params(**kw):
    base = dict(epsilon=EPS, kappa=0.5, alpha=0.05, R=2.0, T=1.0)
    base.update(kw)
    return default_scalings(**base)


def receding_pair():
    # backward in time the particles move apart along the x axis
    return Base.from_endpoint(PhaseState([[0, 0], [3, 0]], [[1, 0], [-1, 0]], EPS), m=3)


def test_default_scalings_example():
    p = default_scalings(1e-4, 0.5, 0.05, 2.0, 1.0)
    assert p.eta == pytest.approx(0.01) and p.y == pytest.approx(1e-3)
    assert math.sin(p.theta) > p.c_d * p.epsilon / p.y


def test_default_scalings_monotone():
    ps = [default_scalings(e, 0.5, 0.05, 2.0, 1.0) for e in (1e-2, 1e-3, 1e-4, 1e-5)]
    for a, b in zip(ps, ps[1:]):
        assert b.eta < a.eta and b.y < a.y and b.theta < a.theta


def test_default_scalings_infeasible():
    with pytest.raises(PreconditionError):
        default_scalings(0.3, 0.9, 0.05, 2.0, 1.0, c_d=10)
    with pytest.raises(PreconditionError):
        default_scalings(1e-3, 0.5, 0.05, 2.0, 1.0, theta_exponent=0.5)


def test_theta_exponent_knob():
    wide = default_scalings(1e-4, 0.5, 0.05, 2.0, 1.0, theta_exponent=0.125)
    assert math.sin(wide.theta) == pytest.approx(2 * 1e-4**0.125)


def test_params_validation():
    p = params()
    with pytest.raises(PreconditionError):
        p.replace(eta=3.0)
    with pytest.raises(PreconditionError):
        p.replace(theta=1e-9)
    with pytest.raises(PreconditionError):
        p.replace(alpha=2.0)


def test_band_label_on_perpendicular_direction():
    base = receding_pair()
    # v_i(0) = (1, 0); v_new - v_i = (0, 1) is perpendicular to omega
    for alpha in (1e-3, 0.05, 0.5):
        assert in_bad("II", base, 0.0, (1, 1), (1, 0), params(alpha=alpha), 0)


def test_slow_relative_velocity_on_post_side():
    p = params()
    base = Base.from_endpoint(PhaseState([[0, 0]], [[0, 0]], EPS), m=2)
    assert in_bad("V+", base, 0.3, (p.eta / 2, 0), (1, 0), p, 0)
    assert not in_bad("V+", base, 0.3, (2 * p.eta, 0), (1, 0), p, 0)
    # the pre-collisional side never belongs to a post label
    assert not in_bad("V+", base, 0.3, (-p.eta / 2, 0), (1, 0), p, 0)


def test_aligned_pre_collisional_sample_in_cone():
    p = params()
    base = receding_pair()
    x0, v0 = np.array([3.0, 0.0]), np.array([-1.0, 0.0])
    w = np.array([1.0, 0.0])
    # v_new - v0 points along x_created - x0, so the cosine is exactly 1
    v_new = v0 + 0.5 * (EPS * w - x0)
    assert w @ (v_new - np.array([1.0, 0.0])) < 0
    assert in_bad("IV-", base, 0.0, v_new, w, p, 0)
    assert not in_bad("IV-", base, 0.0, (-1, 2), w, p, 0)


def test_unknown_label_and_parent():
    base = receding_pair()
    with pytest.raises(ValueError):
        in_bad("VIII", base, 0.0, (0, 0), (1, 0), params(), 0)
    with pytest.raises(ValueError):
        in_bad("I", base, 0.0, (0, 0), (1, 0), params(), 5)


def test_post_labels_exclude_first_two_sets():
    base = receding_pair()
    rng = np.random.default_rng(0)
    p = params(alpha=0.3)
    masks = bad_masks(base, ExtensionSamples.uniform(rng, 5000, 2, p.T, p.R), p, 0)
    first = masks["I"] | masks["II"]
    for k in LABELS[2:]:
        assert not np.any(masks[k] & first)


def test_empty_labels_measure_zero():
    est = estimate_measure((), receding_pair(), params(), 0, 1000, seed=0)
    assert est.value == 0.0 and est.value_stderr == 0.0


def test_band_measure_single_particle():
    alpha = 0.1
    base = Base.from_endpoint(PhaseState([[0, 0]], [[0, 0]], EPS), m=2)
    est = estimate_measure(("II",), base, params(alpha=alpha), 0, 100_000, seed=1)
    # omega within alpha of the perpendicular to v_new: four arcs of length alpha each
    assert abs(est.mean - 4 * alpha / (2 * math.pi)) <= 3 * est.stderr


def test_measure_needs_enough_samples():
    with pytest.raises(ValueError):
        estimate_measure(("I",), receding_pair(), params(), 0, 10, seed=0)


def test_union_below_sum_of_labels():
    base = random_base(np.random.default_rng(4), 2, 1, 3, EPS, params().eta, 2.0)
    est = estimate_all_labels(base, params(), 0, 20_000, seed=2)
    total = sum(est[k].value for k in LABELS)
    assert est["all"].value <= total + 3 * est["all"].value_stderr
    assert est["all"].value <= est["pre"].value + est["post"].value + 1e-12


def test_analytic_bound_vanishes_with_parameters():
    vals = []
    # the angle term decays only like eps^(1/8), so span many decades
    for e in (1e-2, 1e-8, 1e-24, 1e-40):
        p = default_scalings(e, 0.5, e, 2.0, 1.0)
        vals.append(analytic_bound(p, "pre", 1.0) + analytic_bound(p, "post", 1.0))
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-2 * vals[0]
    p = default_scalings(1e-4, 0.5, 0.05, 2.0, 1.0)
    assert 0 < analytic_bound(p, "pre", 1.0) < np.inf
    with pytest.raises(ValueError):
        analytic_bound(p, "side", 1.0)
    for k in LABELS:
        assert label_bound(k, p, 1.0) > 0


def test_claim_i_trivial_cases():
    base = receding_pair()
    assert verify_claim_i(base, 0.0, 0.1)
    assert verify_claim_i(base, 1.0, 0.1)
    with pytest.raises(ValueError):
        verify_claim_i(base, -1.0, 0.1)


def test_claim_i_on_random_bases():
    rng = np.random.default_rng(11)
    eta = params().eta
    for _ in range(10):
        base = random_base(rng, 2, 2, 3, EPS, eta, 2.0)
        for tau in (0.1, 1.0, 10.0):
            assert verify_claim_i(base, tau, eta)


def test_claim_ii_precondition():
    base = Base.from_endpoint(PhaseState([[0, 0], [3, 0]], [[0.01, 0], [-0.01, 0]], EPS), m=3)
    with pytest.raises(PreconditionError):
        verify_claim_ii(base, params(), 0, 1000, seed=0)


def test_claim_ii_small_run():
    p = params()
    base = random_base(np.random.default_rng(3), 2, 1, 3, EPS, p.eta, p.R)
    res = verify_claim_ii(base, p, 0, 2000, seed=5)
    lo, hi = res.wilson
    assert res.n_outside_B > 0 and lo <= res.fraction_good <= hi
    assert res.fraction_good == 1.0
    assert set(res.to_dict()) >= {"fraction_good", "n_outside_B", "wilson_low", "wilson_high", "failures"}


def test_claim_ii_deterministic_per_seed():
    p = params()
    base = random_base(np.random.default_rng(3), 2, 1, 3, EPS, p.eta, p.R)
    a = verify_claim_ii(base, p, 1, 1000, seed=9)
    b = verify_claim_ii(base, p, 1, 1000, seed=9)
    assert a.to_dict() == b.to_dict()
