import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hscorr.dynamics import PhaseState, flow
from hscorr.errors import InvalidCreationError, PreconditionError
from hscorr.geometry import sample_sphere
from hscorr.pseudotraj import CreationSpec, HierarchyKind, build, build_batch, coefficient

from states import random_state

EPS = 0.01
Z1 = PhaseState([[0, 0]], [[1, 0]], EPS)


def one_creation(v2):
    return CreationSpec(1.0, (0.5,), [v2], [(0, 1)], (0,))


def test_pre_collisional_creation():
    traj = build(Z1, one_creation((0, -1)), HierarchyKind.bbgky_at(EPS))
    assert traj.kernel == pytest.approx(-1.0)
    assert np.allclose(traj.final_state.x, [[-1, 0], [-0.5, EPS + 0.5]])
    assert np.allclose(traj.final_state.v, [[1, 0], [0, -1]])


def test_post_collisional_creation_scatters():
    traj = build(Z1, one_creation((0, 1)), HierarchyKind.bbgky_at(EPS))
    assert traj.kernel == pytest.approx(1.0)
    assert np.allclose(traj.final_state.v, [[1, 1], [0, 0]])
    assert np.allclose(traj.final_state.x, [[-1, -0.5], [-0.5, EPS]])


def test_no_creation_is_backward_flow():
    rng = np.random.default_rng(0)
    z = random_state(rng, 4, 2, 0.3, box=1.0)
    kind = HierarchyKind.bbgky_at(0.3)
    traj = build(z, CreationSpec(2.0), kind)
    assert traj.kernel == 1.0
    forward, _ = flow(traj.final_state, 2.0)
    assert forward.allclose(z, 1e-8)


def test_coefficient_examples():
    kind = HierarchyKind.bbgky(5)
    assert coefficient(kind, 2, 1) == pytest.approx(3 * kind.epsilon)
    assert coefficient(HierarchyKind.enskog(0.1, 3, ell=2.0), 2, 3) == pytest.approx(1 / 8)
    for k in (HierarchyKind.boltzmann(), kind, HierarchyKind.enskog(0.1, 2)):
        assert coefficient(k, 2, 0) == 1.0
    with pytest.raises(PreconditionError):
        coefficient(kind, 2, 4)


@pytest.mark.parametrize("s, k", [(1, 1), (2, 2), (3, 4)])
def test_coefficient_approaches_power(s, k):
    for N in (100, 1000, 10_000):
        kind = HierarchyKind.bbgky(N, d=3)
        ratio = coefficient(kind, s, k) / (N**k * kind.epsilon ** (2 * k))
        assert abs(ratio - 1) <= 2 * (s + k) ** 2 / N


def test_kind_scaling_checked():
    with pytest.raises(ValueError):
        HierarchyKind("bbgky", 1.0, 2, 10, 0.5)
    k = HierarchyKind.bbgky_at(1e-3, d=3)
    assert k.N * k.epsilon**2 == pytest.approx(1 / k.ell, rel=1e-12)


def test_spec_validation():
    with pytest.raises(PreconditionError):
        build(Z1, CreationSpec(1.0, (0.5, 0.7), [(0, 1), (0, 1)], [(1, 0), (1, 0)], (0, 0)),
              HierarchyKind.boltzmann())
    with pytest.raises(PreconditionError):
        build(Z1, CreationSpec(1.0, (0.5,), [(0, 1)], [(1, 0)], (1,)), HierarchyKind.boltzmann())
    with pytest.raises(ValueError):
        CreationSpec(1.0, (0.5,), [(0, 1)], [], (0,))


def test_overlapping_creation_rejected():
    z = PhaseState([[0, 0], [0.015, 0]], [[0, 0], [0, 0]], EPS)
    spec = CreationSpec(1.0, (1.0,), [(1, 0)], [(1, 0)], (0,))
    with pytest.raises(InvalidCreationError):
        build(z, spec, HierarchyKind.bbgky_at(EPS))


def test_spec_round_trip():
    spec = CreationSpec(1.0, (0.5, 0.2), [(0, 1), (1, 1)], [(1, 0), (0, 1)], (0, 1))
    again = CreationSpec.from_dict(spec.to_dict())
    assert again.times == spec.times and np.array_equal(again.velocities, spec.velocities)


def random_spec(rng, s, k, t, d=2):
    times = tuple(np.sort(rng.uniform(0, t, k))[::-1])
    vel = rng.standard_normal((k, d))
    om = sample_sphere(rng, k, d)
    idx = tuple(int(rng.integers(0, s + j)) for j in range(k))
    return CreationSpec(t, times, vel, om, idx)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kernel_is_product_of_impact_factors(seed):
    rng = np.random.default_rng(seed)
    z = random_state(rng, 2, 2, EPS)
    spec = random_spec(rng, 2, 3, 1.0)
    traj = build(z, spec, HierarchyKind.enskog(EPS, 2))
    assert np.sign(traj.kernel) == np.prod(traj.signs)
    assert traj.final_state.s == 5 and np.isfinite(traj.kernel)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_enskog_m1_streams_freely(seed):
    rng = np.random.default_rng(seed)
    z = random_state(rng, 2, 2, 0.2, box=0.6)
    spec = random_spec(rng, 2, 2, 2.0)
    traj = build(z, spec, HierarchyKind.enskog(0.2, 1))
    assert all(log.collision_count == 0 for log in traj.logs)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_small_diameter_matches_boltzmann(seed):
    rng = np.random.default_rng(seed)
    z = random_state(rng, 2, 2, 1e-6, box=2.0)
    spec = random_spec(rng, 2, 2, 1.0)
    bz = build(z, spec, HierarchyKind.boltzmann())
    eps = 1e-6
    try:
        bb = build(z, spec, HierarchyKind.bbgky_at(eps))
    except InvalidCreationError:
        return
    if any(log.collision_count for log in bb.logs):
        return
    assert np.allclose(bb.final_state.v, bz.final_state.v, atol=1e-12)
    assert np.max(np.abs(bb.final_state.x - bz.final_state.x)) <= 10 * eps


@pytest.mark.parametrize("kind", [HierarchyKind.bbgky_at(0.05), HierarchyKind.enskog(0.05, 3),
                                  HierarchyKind.boltzmann()])
def test_batch_matches_scalar_build(kind):
    rng = np.random.default_rng(7)
    z = random_state(rng, 3, 2, 0.05, box=0.5)
    n, k, t = 300, 2, 1.0
    specs = [random_spec(rng, 3, k, t) for _ in range(n)]
    times = np.array([s.times for s in specs])
    vel = np.array([s.velocities for s in specs])
    om = np.array([s.omegas for s in specs])
    idx = np.array([s.indices for s in specs])
    batch = build_batch(z, t, times, vel, om, idx, kind)
    # the exact-recompute path must be exercised whenever particles have size
    assert batch.n_exact > 0 or kind.diameter == 0.0
    for r, spec in enumerate(specs):
        try:
            traj = build(z, spec, kind)
        except InvalidCreationError:
            assert not batch.valid[r] and batch.kernel[r] == 0.0
            continue
        assert batch.valid[r]
        assert np.allclose(batch.X[r], traj.final_state.x, atol=1e-10)
        assert np.allclose(batch.V[r], traj.final_state.v, atol=1e-10)
        assert batch.kernel[r] == pytest.approx(traj.kernel, rel=1e-10, abs=1e-14)
