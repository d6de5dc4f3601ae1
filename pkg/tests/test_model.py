import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsbeam.model import (
    ChannelSet,
    CommonRateSplit,
    PowerBudget,
    PrecoderSet,
    SystemDims,
    ValidationError,
    check,
    dump_channels,
    dump_instance,
    load_channels,
    load_instance,
    realized_total_power,
    subcarrier_power,
    validate,
)

from conftest import random_instance


def test_valid_instance_ok():
    dims = SystemDims(2, 2, 2, 4)
    ch = ChannelSet(np.ones((4, 2, 2), complex))
    assert validate(dims, ch, PowerBudget(1.0)) == []


def test_unequal_grouping_rejected():
    dims = SystemDims(1, 1, 2, 5)
    errs = validate(dims, ChannelSet(np.ones((5, 1, 1))), PowerBudget(1.0))
    assert any("K mod M" in e for e in errs)


def test_nan_channel_rejected():
    h = np.ones((4, 2, 2), complex)
    h[1, 0, 1] = np.nan
    errs = validate(SystemDims(2, 2, 2, 4), ChannelSet(h), PowerBudget(1.0))
    assert any("non-finite" in e for e in errs)
    with pytest.raises(ValidationError):
        check(SystemDims(2, 2, 2, 4), ChannelSet(h), PowerBudget(1.0))


def test_all_violations_listed():
    h = np.full((5, 1, 1), np.nan)
    errs = validate(SystemDims(1, 1, 2, 5), ChannelSet(h), PowerBudget(-1.0))
    assert len(errs) == 3


def test_shape_mismatch_and_bad_power():
    errs = validate(SystemDims(2, 2, 2, 4), ChannelSet(np.ones((4, 1, 2))), PowerBudget(0.0))
    assert any("shape" in e for e in errs)
    assert any("power" in e for e in errs)


def test_label_roundtrip():
    dims = SystemDims.from_label("2-4-3-3")
    assert (dims.n_subcarriers, dims.n_tx_antennas, dims.n_groups, dims.n_users) == (2, 4, 3, 9)
    assert dims.group_of == (0, 0, 0, 1, 1, 1, 2, 2, 2)
    assert dims.label == "2-4-3-3"


def test_power_examples():
    dims = SystemDims(1, 2, 1, 1)
    assert realized_total_power(PrecoderSet.zeros(dims)) == 0
    pset = PrecoderSet([[1, 0]], [[[0, 2]]])
    assert realized_total_power(pset) == pytest.approx(5.0)
    pset2 = PrecoderSet([[1, 0], [1, 0]], [[[0, 2], [0, 2]]])
    assert realized_total_power(pset2) == pytest.approx(10.0)
    np.testing.assert_allclose(subcarrier_power(pset2), [5.0, 5.0])


def test_snr_convention():
    assert PowerBudget.from_snr_db(30).total_power == pytest.approx(1000.0)
    assert PowerBudget(1000.0).snr_db() == pytest.approx(30.0)


def test_model_types_are_read_only():
    ch = ChannelSet(np.ones((1, 1, 1)))
    with pytest.raises(ValueError):
        ch.h[0, 0, 0] = 2.0


@given(st.integers(0, 10_000), st.integers(0, 2), st.floats(0, 2 * np.pi))
def test_power_phase_invariance(seed, which, phase):
    _, _, pset = random_instance(seed)
    p = np.array(pset.p)
    p_bc = np.array(pset.p_bc)
    rot = np.exp(1j * phase)
    if which == 0:
        p_bc[1] *= rot
    else:
        p[which - 1, 0] *= rot
    assert realized_total_power(PrecoderSet(p_bc, p)) == pytest.approx(realized_total_power(pset), rel=1e-12)


@given(st.integers(1, 4), st.integers(1, 3))
def test_group_map_is_equal_partition(m, per_group):
    dims = SystemDims(1, 1, m, m * per_group)
    assert dims.errors() == []
    counts = np.bincount(dims.group_of, minlength=m)
    assert set(dims.group_of) == set(range(m))
    assert np.all(counts == per_group)


@given(st.integers(0, 10_000))
def test_instance_roundtrip(tmp_path_factory, seed):
    dims, ch, pset = random_instance(seed)
    budget = PowerBudget(3.7)
    path = tmp_path_factory.mktemp("inst") / "inst.json"
    dump_instance(path, dims, ch, budget, pset)
    dims2, ch2, budget2, pset2 = load_instance(path)
    assert dims2 == dims and budget2 == budget
    assert np.array_equal(ch2.h, ch.h) and ch2.noise_var == ch.noise_var
    assert np.array_equal(pset2.p, pset.p) and np.array_equal(pset2.p_bc, pset.p_bc)


def test_channel_dump_roundtrip(tmp_path):
    dims, ch, _ = random_instance(5)
    path = dump_channels(tmp_path / "h.csv", dims, ch)
    lines = path.read_text().splitlines()
    assert lines[0] == "user,subcarrier,antenna,re,im"
    assert len(lines) == 1 + ch.h.size
    dims2, ch2 = load_channels(path)
    assert dims2 == dims
    assert np.array_equal(ch2.h, ch.h)


def test_common_split_zeros():
    c = CommonRateSplit.zeros(SystemDims(2, 2, 3, 3))
    assert c.c.shape == (3, 2) and not c.c.any()
