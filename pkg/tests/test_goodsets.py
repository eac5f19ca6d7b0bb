import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hscorr.dynamics import BACKWARD, PhaseState, flow, pair_colliding_backward
from hscorr.goodsets import GoodSetParams, energy_below, in_G, in_good, in_K, in_U, in_Uhat
from hscorr.jset import jset

from states import random_state

EPS = 0.1


def test_in_G_empty_tail():
    z = pair_colliding_backward((0, 0), (1, 0), (-1, 0), (1, 0), 1.0, EPS)
    assert in_G(z, 3)


def test_in_G_tail_on_collision_course():
    head = PhaseState([[0, 0]], [[0, 0]], EPS)
    # the tail ray x - v tau passes the head point at distance eps/2
    z = head.append((2, EPS / 2), (1, 0))
    assert not in_G(z, 2)


def test_in_G_receding_tail():
    z = PhaseState([[0, 0], [5, 0], [5, 3 * EPS]], [[0, 0], [-1, 1], [-1, -1]], EPS)
    # backward the tail particles move right and apart, away from the head
    assert in_G(z, 2)


def test_in_G_tail_pair_condition():
    # tails converge backward onto each other
    z = PhaseState([[0, 0], [5, 0], [7, 0]], [[0, 0], [-1, 0], [1, 0]], EPS)
    assert not in_G(z, 2)


def test_in_G_ties_count_as_success():
    head = PhaseState([[0, 0]], [[0, 0]], EPS)
    assert in_G(head.append((2, EPS), (1, 0)), 2)


def test_in_Uhat_examples():
    eta = 0.2
    free = PhaseState([[0, 0], [3, 0]], [[3 * eta, 0], [0, 0]], EPS)
    assert in_Uhat(free, eta)
    same = PhaseState([[0, 0], [3, 0]], [[1, 0], [1, 0]], EPS)
    assert not in_Uhat(same, eta)


def test_in_K_in_U_examples():
    eta = 0.2
    receding = PhaseState([[0, 0], [3, 0]], [[1, 0], [-1, 0]], EPS)
    assert in_K(receding)
    slow = PhaseState([[0, 0], [3, 0]], [[0, 0], [eta / 2, 0]], EPS)
    assert not in_U(slow, eta)
    one = PhaseState([[0, 0]], [[1, 0]], EPS)
    assert in_K(one) and in_U(one, eta)
    # a gap of exactly eta fails the strict condition
    assert not in_U(PhaseState([[0, 0], [3, 0]], [[0, 0], [eta, 0]], EPS), eta)


def test_energy_below():
    z = PhaseState([[0, 0], [3, 0]], [[1, 0], [0, 1]], EPS)
    assert energy_below(z, 1.0) and not energy_below(z, 0.99)


def test_params():
    p = GoodSetParams.from_chaoticity(3, 1e-4, 0.5, 2.0)
    assert p.eta == pytest.approx(1e-2)
    with pytest.raises(ValueError):
        GoodSetParams(m=2, eta=3.0, epsilon=0.1, R=2.0)
    with pytest.raises(ValueError):
        GoodSetParams(m=1, eta=0.1, epsilon=0.1, R=2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.0))
def test_Uhat_reduces_to_U_on_free_states(seed, eta):
    z = random_state(np.random.default_rng(seed), 3, 2, EPS, box=3.0)
    if in_K(z):
        assert in_Uhat(z, eta) == in_U(z, eta)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 2.0), st.floats(0.0, 1.0))
def test_monotone_in_eta(seed, eta, frac):
    z = random_state(np.random.default_rng(seed), 3, 2, EPS, box=1.0)
    if in_Uhat(z, eta):
        assert in_Uhat(z, eta * frac)
    if in_U(z, eta):
        assert in_U(z, eta * frac)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
def test_in_G_stable_under_time_shift(seed, tau):
    rng = np.random.default_rng(seed)
    z = random_state(rng, 4, 2, EPS, box=2.0)
    if not in_G(z, 3):
        return
    # shifting all creation times by tau moves the endpoint back along its own flow
    shifted, _ = flow(z, tau, BACKWARD)
    assert in_G(shifted, 3)


def test_in_good_uses_head_jset():
    z = pair_colliding_backward((0, 0), (1, 0), (-1, 0), (1, 0), 1.0, EPS)
    z = z.append((0, 5), (0, -1))
    J = jset(z.take([0, 1]))
    assert in_G(z, 3, head_jset=J) == in_G(z, 3)
    assert in_good(z, 3, 0.5) == (in_G(z, 3) and in_Uhat(z, 0.5))
