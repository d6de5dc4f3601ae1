import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsbeam.model import ChannelSet, CommonRateSplit, PrecoderSet, SystemDims
from rsbeam.rates import (
    G_CONST,
    LN2,
    ao_update,
    mse,
    optimal_common_split,
    power_terms,
    power_terms_all,
    rates_from_precoders,
    sinr_broadcast,
    sinr_multicast,
    update_equalizers,
    update_weights,
    weighted_mse,
)

from conftest import random_instance


def _one_user(h, p_bc, p, group_of=(0,)):
    ch = ChannelSet(np.array(h, complex).reshape(1, 1, -1))
    pset = PrecoderSet(np.array(p_bc, complex).reshape(1, -1), np.array(p, complex).reshape(len(p), 1, -1))
    return ch, pset, list(group_of)


def test_power_terms_hand_example():
    ch, pset, g = _one_user([1, 0], [1, 0], [[1, 0]])
    t = power_terms(0, 0, pset, ch, g)
    assert (t.t_kn, t.e_kn, t.q_kn) == pytest.approx((3, 2, 1))


def test_power_terms_noise_only():
    ch, pset, g = _one_user([1, 0], [0, 0], [[0, 0]])
    t = power_terms(0, 0, pset, ch, g)
    assert (t.t_kn, t.e_kn, t.q_kn) == (1, 1, 1)


def test_power_terms_complex_example():
    ch, pset, g = _one_user([1, 1j], [0, 0], [[1, 1], [1, -1]])
    t = power_terms(0, 0, pset, ch, g)
    assert (t.t_kn, t.e_kn, t.q_kn) == pytest.approx((5, 5, 3))
    assert sinr_multicast(0, 0, pset, ch, g) == pytest.approx(2 / 3)


def test_sinr_examples():
    ch, pset, g = _one_user([1, 0], [0, 0], [[2, 0]])
    assert sinr_multicast(0, 0, pset, ch, g) == pytest.approx(4)
    ch, pset, g = _one_user([1, 0], [0, 0], [[0, 0]])
    assert sinr_multicast(0, 0, pset, ch, g) == 0
    ch, pset, g = _one_user([1, 0], [1, 0], [[1, 0]])
    assert sinr_broadcast(0, 0, pset, ch, g) == pytest.approx(0.5)
    ch, pset, g = _one_user([1, 0], [0, 0], [[1, 0]])
    assert sinr_broadcast(0, 0, pset, ch, g) == 0
    ch, pset, g = _one_user([1, 0], [1, 0], [[0, 0]])
    assert sinr_broadcast(0, 0, pset, ch, g) == pytest.approx(1)


def test_rate_examples():
    dims = SystemDims(1, 2, 1, 1)
    ch, pset, _ = _one_user([1, 0], [0, 0], [[0, 0]])
    rep = rates_from_precoders(pset, ch, dims, CommonRateSplit.zeros(dims))
    assert rep.sum_mmf == 0 and not rep.user_rate.any()
    ch, pset, _ = _one_user([1, 0], [0, 0], [[2, 0]])
    rep = rates_from_precoders(pset, ch, dims, CommonRateSplit.zeros(dims))
    assert rep.sum_mmf == pytest.approx(np.log2(5))


def test_common_split_overflow_flagged():
    dims = SystemDims(1, 2, 1, 1)
    ch, pset, _ = _one_user([1, 0], [1, 0], [[1, 0]])  # R_bc = log2(1.5)
    rep = rates_from_precoders(pset, ch, dims, CommonRateSplit([[1.0]]))
    assert rep.common_rate_infeasible
    rep = rates_from_precoders(pset, ch, dims)
    assert not rep.common_rate_infeasible
    assert rep.extras["common_split"][0, 0] == pytest.approx(np.log2(1.5))


def test_equalizer_and_weight_examples():
    ch, pset, g = _one_user([1, 0], [1, 0], [[1, 0]])
    g_bc, _ = update_equalizers(pset, ch, g)
    assert g_bc[0, 0] == pytest.approx(1 / 3)
    ch0, pset0, _ = _one_user([1, 0], [0, 0], [[1, 0]])
    assert update_equalizers(pset0, ch0, g)[0][0, 0] == 0
    mse_bc, _ = mse(pset, ch, g, *update_equalizers(pset, ch, g))
    assert mse_bc[0, 0] == pytest.approx(2 / 3)
    v_bc, _ = update_weights(2 / 3, 1.0)
    assert v_bc == pytest.approx(3 / (2 * LN2))
    v, _ = update_weights(1.0, 1.0)
    assert v == pytest.approx(1 / LN2)
    assert G_CONST - weighted_mse(v, 1.0) == pytest.approx(0, abs=1e-14)


seeds = st.integers(0, 100_000)
scales = st.sampled_from([0.1, 1.0, 10.0, 100.0])


@given(seeds, scales)
def test_rate_equals_minus_log_mse(seed, scale):
    dims, ch, pset = random_instance(seed, N=2, Nt=3, M=3, per_group=2, scale=scale)
    rep = rates_from_precoders(pset, ch, dims)
    mse_bc, mse_p = mse(pset, ch, dims.group_of, *update_equalizers(pset, ch, dims.group_of))
    np.testing.assert_allclose(-np.log2(mse_p), rep.user_rate, atol=1e-10)
    np.testing.assert_allclose(-np.log2(mse_bc), rep.bc_user_rate, atol=1e-10)


@given(seeds, scales)
def test_rate_wmse_identity(seed, scale):
    dims, ch, pset = random_instance(seed, scale=scale)
    ao = ao_update(pset, ch, dims.group_of)
    rep = rates_from_precoders(pset, ch, dims)
    mse_bc, mse_p = mse(pset, ch, dims.group_of, ao.g_bc, ao.g)
    np.testing.assert_allclose(weighted_mse(ao.v, mse_p) + rep.user_rate, G_CONST, atol=1e-10)
    np.testing.assert_allclose(weighted_mse(ao.v_bc, mse_bc) + rep.bc_user_rate, G_CONST, atol=1e-10)
    assert np.all(ao.v > 0) and np.all(ao.v_bc > 0)


@given(seeds, scales)
def test_power_ordering(seed, scale):
    dims, ch, pset = random_instance(seed, scale=scale)
    t, e, q = power_terms_all(pset, ch, dims.group_of)
    assert np.all(t >= e) and np.all(e >= q) and np.all(q >= ch.noise_var - 1e-12)
    for k in range(dims.n_users):
        for n in range(dims.n_subcarriers):
            pt = power_terms(k, n, pset, ch, dims.group_of)
            assert (pt.t_kn, pt.e_kn, pt.q_kn) == pytest.approx((t[k, n], e[k, n], q[k, n]), rel=1e-12)


@given(seeds, st.floats(0, 2 * np.pi), st.integers(0, 2))
def test_phase_invariance(seed, phase, which):
    dims, ch, pset = random_instance(seed)
    p, p_bc = np.array(pset.p), np.array(pset.p_bc)
    if which == 0:
        p_bc[0] *= np.exp(1j * phase)
    else:
        p[which - 1, 1] *= np.exp(1j * phase)
    a = rates_from_precoders(pset, ch, dims)
    b = rates_from_precoders(PrecoderSet(p_bc, p), ch, dims)
    np.testing.assert_allclose(a.user_rate, b.user_rate, atol=1e-10)
    np.testing.assert_allclose(a.bc_user_rate, b.bc_user_rate, atol=1e-10)
    m1 = mse(pset, ch, dims.group_of, *update_equalizers(pset, ch, dims.group_of))
    m2 = mse(PrecoderSet(p_bc, p), ch, dims.group_of, *update_equalizers(PrecoderSet(p_bc, p), ch, dims.group_of))
    np.testing.assert_allclose(m1, m2, atol=1e-10)


@given(seeds)
def test_classic_degeneration(seed):
    dims, ch, pset = random_instance(seed)
    pset = PrecoderSet(np.zeros_like(pset.p_bc), pset.p)
    rep = rates_from_precoders(pset, ch, dims, CommonRateSplit.zeros(dims))
    h, p = ch.h, pset.p
    for k in range(dims.n_users):
        for n in range(dims.n_subcarriers):
            gains = np.abs(p[:, n, :] @ h[k, n]) ** 2
            own = gains[dims.group_of[k]]
            assert rep.user_rate[k, n] == pytest.approx(np.log2(1 + own / (gains.sum() - own + 1)), abs=1e-12)
    assert rep.sum_mmf == pytest.approx(rep.subcarrier_mmf.sum())
    assert not rep.bc_user_rate.any()


@given(st.lists(st.floats(0, 5), min_size=1, max_size=4), st.floats(0, 5))
def test_common_split_is_optimal(private, budget):
    a = np.array(private)[:, None]
    c = optimal_common_split(np.array([budget]), a)
    assert np.all(c >= 0) and c.sum() <= budget + 1e-12
    level = (a + c).min()
    # no split can lift the minimum above the water level
    lo, hi = a.min(), a.min() + budget
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if np.maximum(0, mid - a).sum() <= budget else (lo, mid)
    assert level == pytest.approx(lo, abs=1e-9)
