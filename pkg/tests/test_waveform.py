import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmc_modlab.core import OperatingPoint, Scheme
from mmc_modlab.errors import InvalidParameterError
from mmc_modlab.steady_state import solve, solve_direct, solve_improved_direct, solve_indirect
from mmc_modlab.waveform import (
    PeriodWaveform,
    cap_voltage_report,
    equivalence_gap,
    from_samples,
    margin,
    rwf_eval,
    rwf_margin,
    sample,
    waveform_table,
)

from conftest import POINTS

T = 0.02
W = 2 * math.pi / T


def test_pure_sinusoid_extrema():
    wf = sample(lambda t: 0.5 - 0.45 * np.sin(W * np.asarray(t)), T)
    assert wf.f_peak == pytest.approx(0.95, abs=1e-12)
    assert wf.f_valley == pytest.approx(0.05, abs=1e-12)
    assert W * wf.t_peak == pytest.approx(3 * math.pi / 2, abs=1e-6)
    assert W * wf.t_valley == pytest.approx(math.pi / 2, abs=1e-6)


def test_constant_waveform():
    wf = sample(lambda t: np.full(np.shape(t), 0.5), T)
    assert wf.f_peak == wf.f_valley == 0.5


def test_injected_waveform_against_dense_scan():
    f = lambda t: 0.5 - 0.4 * np.sin(W * np.asarray(t)) + 0.05 * np.sin(2 * W * np.asarray(t))
    wf = sample(f, T)
    dense = f(np.arange(1_000_000) * (T / 1_000_000))
    assert wf.f_peak == pytest.approx(dense.max(), abs=1e-6)
    assert wf.f_valley == pytest.approx(dense.min(), abs=1e-6)
    assert wf.f_peak >= dense.max() - 1e-12


def test_sample_count_floor():
    with pytest.raises(InvalidParameterError):
        sample(lambda t: np.asarray(t), T, 100)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(0.0, 0.49),
    st.floats(-math.pi, math.pi),
    st.floats(0.0, 0.1),
    st.floats(-math.pi, math.pi),
)
def test_refined_extrema_bound_the_samples(a1, p1, a2, p2):
    f = lambda t: 0.5 + a1 * np.sin(W * np.asarray(t) + p1) + a2 * np.sin(2 * W * np.asarray(t) + p2)
    wf = sample(f, T, 1024)
    assert wf.f_peak >= wf.values.max()
    assert wf.f_valley <= wf.values.min()
    dense = f(np.linspace(0, T, 20001))
    assert wf.f_peak >= dense.max() - 1e-9
    assert wf.f_valley <= dense.min() + 1e-9


def test_margin_rules():
    def report(peak, valley):
        return margin(PeriodWaveform(np.zeros(1), np.zeros(1), T, None, 0.0, peak, 0.0, valley))

    r = report(0.95, 0.05)
    assert r.delta_f_margin == pytest.approx(0.05) and r.linear
    r = report(1.02, 0.1)
    assert r.delta_f_margin == pytest.approx(-0.02) and not r.linear


def test_trig_interpolation_of_samples():
    n = 2048
    t = np.arange(n) * (T / n)
    values = 0.5 - 0.42 * np.sin(W * t + 0.3) + 0.03 * np.sin(2 * W * t - 1.0)
    wf = from_samples(values, T)
    dense = 0.5 - 0.42 * np.sin(W * np.linspace(0, T, 200001) + 0.3) + 0.03 * np.sin(2 * W * np.linspace(0, T, 200001) - 1.0)
    assert wf.f_peak == pytest.approx(dense.max(), abs=1e-8)


def test_direct_rwf_value(params):
    s = solve_direct(params, OperatingPoint(0.0, 0.0))
    s = type(s)(**{**s.__dict__, "m_ref1": 0.9, "delta_ref1": 0.0})
    assert rwf_eval("direct", params, s, "upper", params.period / 4) == pytest.approx(0.05)
    assert rwf_eval("direct", params, s, "lower", params.period / 4) == pytest.approx(0.95)


def test_indirect_no_load(params):
    s = solve_indirect(params, OperatingPoint(0.0, 0.0))
    t = np.linspace(0, params.period, 101)
    expected = 0.5 - 0.43 * np.sin(params.omega * t)
    assert np.allclose(rwf_eval("indirect", params, s, "upper", t), expected, atol=1e-12)
    cap = cap_voltage_report("indirect", params, s)
    assert cap.peak == pytest.approx(1.0) and cap.dc == pytest.approx(1.0)
    assert rwf_margin("indirect", params, s).delta_f_margin == pytest.approx(0.07)


@pytest.mark.parametrize("scheme", ["direct", "indirect", "improved-direct"])
def test_lower_arm_is_half_period_shift(params, scheme):
    s = solve(scheme, params, POINTS["B"])
    t = np.linspace(0, params.period, 257)
    up = rwf_eval(scheme, params, s, "upper", t + params.period / 2)
    lo = rwf_eval(scheme, params, s, "lower", t)
    assert np.allclose(up, lo, atol=1e-12)


def test_equivalence_gap(params):
    assert equivalence_gap(params, OperatingPoint(0.0, 0.0)) < 1e-12
    for name in ("A", "C"):
        assert equivalence_gap(params, POINTS[name]) < 0.01


def test_overmodulation_at_high_voltage(params):
    q = params.with_(u_acv_pu=0.91)
    s = solve_indirect(q, OperatingPoint(0.5, math.pi / 2))
    assert rwf_margin("indirect", q, s).delta_f_margin < 0


def test_waveform_table_columns(params):
    s = solve_improved_direct(params, POINTS["A"])
    table = waveform_table(Scheme.IMPROVED_DIRECT, params, s, 1024)
    assert list(table) == ["t_s", "f_upper", "f_lower", "u_cap_upper_v"]
    assert all(len(v) == 1024 for v in table.values())
