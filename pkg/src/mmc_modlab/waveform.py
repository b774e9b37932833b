"""Reference waveform functions (RWF), capacitor voltages and modulation margins."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .core import ConverterParams, OperatingPoint, Scheme
from .errors import InvalidParameterError, NegativeEnergyError
from .steady_state import (
    SteadyStateSolution,
    arm_energy_ripple,
    cap_ripple_harmonics,
    solve_improved_direct,
    solve_indirect,
)

DEFAULT_SAMPLES = 4096
MIN_SAMPLES = 1024
EQUIVALENCE_TOL = 0.01

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PeriodWaveform:
    t: np.ndarray
    values: np.ndarray
    period: float
    evaluator: Evaluator
    t_peak: float
    f_peak: float
    t_valley: float
    f_valley: float

    @property
    def n_samples(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class MarginReport:
    f_peak: float
    f_valley: float
    delta_f_margin: float
    linear: bool

    def to_record(self) -> dict:
        return {
            "f_peak": self.f_peak,
            "f_valley": self.f_valley,
            "delta_f_margin": self.delta_f_margin,
            "linear": self.linear,
        }


@dataclass(frozen=True)
class CapVoltageReport:
    peak: float
    dc: float
    waveform: PeriodWaveform


def _refine(evaluator: Evaluator, t0: float, dt: float, period: float, sign: float) -> tuple[float, float]:
    """Bounded scalar search for a local maximum (sign=+1) or minimum (sign=-1)
    of a periodic function inside [t0 - dt, t0 + dt]."""
    grid_value = float(evaluator(np.array([t0]))[0])
    res = minimize_scalar(
        lambda x: -sign * float(evaluator(np.array([x]))[0]),
        bounds=(t0 - dt, t0 + dt),
        method="bounded",
        options={"xatol": 1e-10 * period},
    )
    value = -sign * float(res.fun)
    if sign * value < sign * grid_value:
        return t0 % period, grid_value
    return float(res.x) % period, value


def extrema(waveform: PeriodWaveform) -> tuple[tuple[float, float], tuple[float, float]]:
    return (waveform.t_peak, waveform.f_peak), (waveform.t_valley, waveform.f_valley)


def sample(evaluator: Evaluator, period: float, n: int = DEFAULT_SAMPLES) -> PeriodWaveform:
    """Sample ``evaluator`` on ``n`` points over [0, period) and refine its
    extrema on the continuous function."""
    if n < MIN_SAMPLES:
        raise InvalidParameterError("n_samples", f"need at least {MIN_SAMPLES} samples, got {n}")
    t = np.arange(n) * (period / n)
    values = np.asarray(evaluator(t), dtype=float)
    dt = period / n
    ip, iv = int(np.argmax(values)), int(np.argmin(values))
    if values[ip] == values[iv]:
        t_peak, f_peak, t_valley, f_valley = t[ip], values[ip], t[iv], values[iv]
    else:
        t_peak, f_peak = _refine(evaluator, t[ip], dt, period, +1.0)
        t_valley, f_valley = _refine(evaluator, t[iv], dt, period, -1.0)
    f_peak = max(f_peak, float(values[ip]))
    f_valley = min(f_valley, float(values[iv]))
    t.setflags(write=False)
    values.setflags(write=False)
    return PeriodWaveform(t, values, period, evaluator, float(t_peak), f_peak, float(t_valley), f_valley)


def trig_interpolant(values, period: float) -> Evaluator:
    """Band-limited periodic interpolant of equally spaced samples over one period."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    coeffs = np.fft.rfft(values) / n
    k = np.arange(len(coeffs))
    weights = np.full(len(coeffs), 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    w = 2.0 * math.pi / period

    def evaluate(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        phase = np.exp(1j * w * np.outer(t, k))
        return (phase * (weights * coeffs)).real.sum(axis=1)

    return evaluate


def from_samples(values, period: float) -> PeriodWaveform:
    """Waveform from one period of uniformly sampled data (e.g. simulator output)."""
    return sample(trig_interpolant(values, period), period, len(values))


def margin(waveform: PeriodWaveform) -> MarginReport:
    delta = min(waveform.f_valley, 1.0 - waveform.f_peak)
    return MarginReport(waveform.f_peak, waveform.f_valley, delta, delta > 0.0)


# ---------------------------------------------------------------- RWF


def _arm_sign(arm: str) -> float:
    if arm == "upper":
        return 1.0
    if arm == "lower":
        return -1.0
    raise InvalidParameterError("arm", f"expected 'upper' or 'lower', got {arm!r}")


def _energy_cap_voltage(params: ConverterParams, solution: SteadyStateSolution, arm: str) -> Evaluator:
    ripple = arm_energy_ripple(params, solution)
    n, c = params.n_submodules, params.c_sm

    def u_cap(t):
        w = ripple.energy(t, arm)
        if np.any(w <= 0.0):
            raise NegativeEnergyError("arm energy falls to zero; capacitance too small for this point")
        return np.sqrt(2.0 * w / (n * c))

    return u_cap


def rwf_function(scheme: Scheme | str, params: ConverterParams, solution: SteadyStateSolution, arm: str) -> Evaluator:
    scheme = Scheme.parse(scheme)
    sign = _arm_sign(arm)
    w = params.omega
    s = solution
    if scheme is Scheme.DIRECT:
        return lambda t: 0.5 - sign * s.m_ref1 / 2.0 * np.sin(w * np.asarray(t) + s.delta_ref1)
    if scheme is Scheme.IMPROVED_DIRECT:
        return lambda t: (
            0.5 / s.h
            - sign * s.m_ref1 / 2.0 * np.sin(w * np.asarray(t) + s.delta_ref1)
            + s.m_ref2 / 2.0 * np.sin(2.0 * w * np.asarray(t) + s.delta_ref2)
        )
    if scheme.is_indirect:
        u_cap = _energy_cap_voltage(params, s, arm)
        half = params.u_dc_nominal / 2.0
        e_pk = s.m_conv1 * half
        n = params.n_submodules
        return lambda t: (half - sign * e_pk * np.sin(w * np.asarray(t) + s.delta_conv1)) / (n * u_cap(t))
    raise InvalidParameterError("scheme", f"{scheme.value} has no analytic reference waveform")


def rwf_eval(scheme: Scheme | str, params: ConverterParams, solution: SteadyStateSolution, arm: str, t):
    return rwf_function(scheme, params, solution, arm)(t)


def rwf_waveform(
    scheme: Scheme | str,
    params: ConverterParams,
    solution: SteadyStateSolution,
    arm: str = "upper",
    n: int = DEFAULT_SAMPLES,
) -> PeriodWaveform:
    return sample(rwf_function(scheme, params, solution, arm), params.period, n)


def rwf_margin(
    scheme: Scheme | str, params: ConverterParams, solution: SteadyStateSolution, n: int = DEFAULT_SAMPLES
) -> MarginReport:
    # the lower arm is the upper arm shifted by half a period for every
    # analytic scheme, so the upper arm carries the full margin information
    return margin(rwf_waveform(scheme, params, solution, "upper", n))


# ---------------------------------------------------------------- capacitor voltage


def cap_voltage_function(scheme: Scheme | str, params: ConverterParams, solution: SteadyStateSolution, arm: str = "upper"):
    """Per-submodule capacitor voltage (V) as a function of time."""
    scheme = Scheme.parse(scheme)
    _arm_sign(arm)
    if scheme is Scheme.DIRECT:
        ripple = cap_ripple_harmonics(params, solution)
        u_capn = params.u_dc_nominal / params.n_submodules
        dc_level = u_capn * (1.0 + solution.dc_cap_deviation_pu)
        return lambda t: dc_level + ripple.eval(t, arm)
    if scheme.is_indirect or scheme is Scheme.IMPROVED_DIRECT:
        return _energy_cap_voltage(params, solution, arm)
    raise InvalidParameterError("scheme", f"{scheme.value} has no analytic capacitor waveform")


def cap_voltage_report(
    scheme: Scheme | str, params: ConverterParams, solution: SteadyStateSolution, n: int = DEFAULT_SAMPLES
) -> CapVoltageReport:
    wf = sample(cap_voltage_function(scheme, params, solution), params.period, n)
    u_capn = params.u_dc_nominal / params.n_submodules
    return CapVoltageReport(peak=wf.f_peak / u_capn, dc=float(np.mean(wf.values)) / u_capn, waveform=wf)


def equivalence_gap(params: ConverterParams, point: OperatingPoint, n: int = DEFAULT_SAMPLES) -> float:
    """Largest pointwise difference between the indirect and improved direct RWFs."""
    ind = solve_indirect(params, point)
    imp = solve_improved_direct(params, point)
    t = np.arange(n) * (params.period / n)
    gap = 0.0
    for arm in ("upper", "lower"):
        diff = rwf_eval(Scheme.INDIRECT_CLOSED_LOOP, params, ind, arm, t) - rwf_eval(
            Scheme.IMPROVED_DIRECT, params, imp, arm, t
        )
        gap = max(gap, float(np.max(np.abs(diff))))
    return gap


def waveform_table(scheme: Scheme | str, params: ConverterParams, solution: SteadyStateSolution, n: int = DEFAULT_SAMPLES):
    """Columns t_s, f_upper, f_lower, u_cap_upper_v over one period."""
    t = np.arange(n) * (params.period / n)
    return {
        "t_s": t,
        "f_upper": rwf_eval(scheme, params, solution, "upper", t),
        "f_lower": rwf_eval(scheme, params, solution, "lower", t),
        "u_cap_upper_v": cap_voltage_function(scheme, params, solution)(t),
    }
