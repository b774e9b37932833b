"""Steady-state solutions of the three modulation families.

Complex phasors here use the "sine" convention: a phasor ``P`` of harmonic
order ``k`` stands for ``Im(P * exp(j*k*w*t)) = |P| sin(k*w*t + arg P)``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .core import (
    ConverterParams,
    DerivedConstants,
    OperatingPoint,
    Scheme,
    derive_constants,
    wrap_angle,
)
from .errors import (
    InvalidParameterError,
    NonConvergenceError,
    NonZeroMeanError,
    SingularDenominatorError,
    SingularJacobianError,
    SolverError,
)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
M_CONV1_LIMIT = 1.2
CONTINUATION_STEPS = 4


@dataclass(frozen=True)
class SteadyStateSolution:
    scheme: Scheme
    i_ac_pu: float
    phi: float
    m_conv1: float
    delta_conv1: float
    m_ref1: float
    delta_ref1: float
    m_ref2: float
    delta_ref2: float
    h: float
    k_cir: float
    theta_cir: float
    dc_cap_deviation_pu: float
    i_dc: float
    residual_norm: float

    @property
    def point(self) -> OperatingPoint:
        return OperatingPoint(self.i_ac_pu, self.phi)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["scheme"] = self.scheme.value
        return rec


# ---------------------------------------------------------------- closed forms


def required_output_voltage(params: ConverterParams, point: OperatingPoint) -> tuple[float, float]:
    """Valve-side voltage the converter must synthesize to drive ``point``
    through the interface reactance: ``U* (1 + jX I e^{-j phi})``."""
    xi = params.x_eq_pu * point.i_ac_pu
    re = 1.0 + xi * math.sin(point.phi)
    im = xi * math.cos(point.phi)
    return params.u_acv_pu * math.hypot(re, im), math.atan2(im, re)


def dc_link_current(params: ConverterParams, point: OperatingPoint, m_conv1: float, delta_conv1: float) -> float:
    """Lossless power balance between the dc link and the converter's
    internal ac voltage."""
    u_conv1_rms = m_conv1 * (params.u_dc_nominal / 2.0) / math.sqrt(2.0)
    i_ac = point.i_ac_pu * derive_constants(params).i_base
    return 3.0 * u_conv1_rms * i_ac * math.cos(delta_conv1 + point.phi) / params.u_dc_nominal


def _cir_denominator(params: ConverterParams, dc: DerivedConstants, m_ref1: float) -> float:
    return dc.x_arm_loop_pu * params.u_acv_pu / dc.c1 - 4.0 - 8.0 * m_ref1**2 / 3.0


def _cir_q(m, s, den):
    return m * complex(3.0 * math.sin(s), (3.0 - m * m) * math.cos(s)) / den


def circulating_params(params: ConverterParams, m_ref1: float, delta_ref1: float, phi: float) -> tuple[float, float]:
    """Second-harmonic circulating current index ``k_cir = I_cir/I_ac`` and
    phase, so that ``i_cir(t) = sqrt(2) k I_ac sin(2wt + theta)``."""
    dc = derive_constants(params)
    den = _cir_denominator(params, dc, m_ref1)
    scale = dc.x_arm_loop_pu * params.u_acv_pu / dc.c1
    if abs(den) < 1e-9 * scale:
        raise SingularDenominatorError(
            f"circulating-current denominator vanishes at m_ref1={m_ref1:.6g}, phi={phi:.6g}",
            block="circulating-current",
        )
    q = _cir_q(m_ref1, phi + delta_ref1, den)
    return abs(q), wrap_angle(cmath.phase(q) + 2.0 * delta_ref1)


# ---------------------------------------------------------------- Newton


def newton(
    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    x0,
    block: str,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> tuple[np.ndarray, float]:
    """Damped Newton iteration; the step is halved while the residual grows.

    Returns ``(x, residual_inf_norm)``. Raises NonConvergenceError or
    SingularJacobianError carrying the last residual and iterate.
    """
    x = np.array(x0, dtype=float)
    r, jac = fun(x)
    norm = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if norm < tol:
            return x, norm
        if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > 1e14:
            raise SingularJacobianError(f"{block}: singular Jacobian", block, r, x)
        step = np.linalg.solve(jac, -r)
        lam = 1.0
        for _ in range(30):
            x_try = x + lam * step
            r_try, jac_try = fun(x_try)
            norm_try = float(np.max(np.abs(r_try)))
            if np.isfinite(norm_try) and norm_try < norm:
                break
            lam *= 0.5
        else:
            raise NonConvergenceError(f"{block}: line search failed, residual {norm:.3e}", block, r, x)
        x, r, jac, norm = x_try, r_try, jac_try, norm_try
    if norm < tol:
        return x, norm
    raise NonConvergenceError(f"{block}: no convergence in {max_iter} iterations, residual {norm:.3e}", block, r, x)


# ---------------------------------------------------------------- direct


def _check_reference_target(params: ConverterParams) -> None:
    u_capn = params.u_dc_nominal / params.n_submodules
    if abs(params.u_cap_target - u_capn) > 1e-9 * u_capn:
        raise InvalidParameterError(
            "u_cap_ref", "direct-family analytics assume the capacitor target equals U_dcN/N"
        )


def direct_residual(params: ConverterParams, point: OperatingPoint, x: np.ndarray, m_c: float, d_c: float):
    """Fundamental balance of the direct scheme's synthesized voltage with
    the circulating-current coupling evaluated at the iterate.

    ``x = (m_ref1, delta_ref1)``; returns (residual[2], jacobian[2x2]).
    """
    dc = derive_constants(params)
    c, i_pu, phi = dc.c1, point.i_ac_pu, point.phi
    m, d = float(x[0]), float(x[1])
    s = phi + d
    den = _cir_denominator(params, dc, m)
    q = _cir_q(m, s, den)
    dq_dd = m * complex(3.0 * math.cos(s), -(3.0 - m * m) * math.sin(s)) / den
    dq_dm = complex(3.0 * math.sin(s), (3.0 - 3.0 * m * m) * math.cos(s)) / den - q * (-16.0 * m / 3.0) / den
    ed = cmath.exp(1j * d)
    emphi = cmath.exp(-1j * phi)
    ci = c * i_pu
    res = (
        m * ed
        + 1j * ci * (8.0 - 3.0 * m * m) * emphi
        + 12.0 * ci * m * q * ed
        - 4.0 * ci * m**3 * q.real * ed
        - m_c * cmath.exp(1j * d_c)
    )
    dr_dd = (
        1j * m * ed
        + 12.0 * ci * m * (dq_dd + 1j * q) * ed
        - 4.0 * ci * m**3 * (dq_dd.real + 1j * q.real) * ed
    )
    dr_dm = (
        ed
        - 1j * 6.0 * ci * m * emphi
        + 12.0 * ci * (q + m * dq_dm) * ed
        - 4.0 * ci * (3.0 * m * m * q.real + m**3 * dq_dm.real) * ed
    )
    r = np.array([res.real, res.imag])
    jac = np.array([[dr_dm.real, dr_dd.real], [dr_dm.imag, dr_dd.imag]])
    return r, jac


def solve_direct(params: ConverterParams, point: OperatingPoint) -> SteadyStateSolution:
    _check_reference_target(params)
    dc = derive_constants(params)
    m_c, d_c = required_output_voltage(params, point)
    if m_c >= M_CONV1_LIMIT:
        raise SolverError(f"required output m_conv1={m_c:.4f} exceeds {M_CONV1_LIMIT}", block="output-voltage")
    x, norm = newton(
        lambda v: direct_residual(params, point, v, m_c, d_c), [m_c, d_c], block="fundamental-balance"
    )
    m, d = float(x[0]), wrap_angle(float(x[1]))
    k, theta = circulating_params(params, m, d, point.phi)
    den = _cir_denominator(params, dc, m)
    q = _cir_q(m, point.phi + d, den)
    ci = dc.c1 * point.i_ac_pu
    du = -4.0 * ci * m * math.sin(point.phi + d) - 4.0 * ci * m * m * q.real
    return SteadyStateSolution(
        scheme=Scheme.DIRECT,
        i_ac_pu=point.i_ac_pu,
        phi=point.phi,
        m_conv1=m_c,
        delta_conv1=d_c,
        m_ref1=m,
        delta_ref1=d,
        m_ref2=0.0,
        delta_ref2=0.0,
        h=1.0,
        k_cir=k,
        theta_cir=theta,
        dc_cap_deviation_pu=du,
        i_dc=dc_link_current(params, point, m_c, d_c),
        residual_norm=norm,
    )


# ---------------------------------------------------------------- indirect


def solve_indirect(
    params: ConverterParams, point: OperatingPoint, scheme: Scheme = Scheme.INDIRECT_CLOSED_LOOP
) -> SteadyStateSolution:
    m_c, d_c = required_output_voltage(params, point)
    return SteadyStateSolution(
        scheme=scheme,
        i_ac_pu=point.i_ac_pu,
        phi=point.phi,
        m_conv1=m_c,
        delta_conv1=d_c,
        m_ref1=m_c,
        delta_ref1=d_c,
        m_ref2=0.0,
        delta_ref2=0.0,
        h=1.0,
        k_cir=0.0,
        theta_cir=0.0,
        dc_cap_deviation_pu=0.0,
        i_dc=dc_link_current(params, point, m_c, d_c),
        residual_norm=0.0,
    )


# ---------------------------------------------------------------- improved direct


def improved_residual(params: ConverterParams, point: OperatingPoint, v: np.ndarray, m_c: float, d_c: float):
    """Five real equations of the improved direct scheme: dc energy balance,
    zero 2w common-mode voltage (CCSC) and exact fundamental synthesis.

    ``v = (h, m_ref1, delta_ref1, x2, y2)`` where ``x2 + j y2`` is the
    second-harmonic reference phasor ``m_ref2 * exp(j delta_ref2)``.
    """
    dc = derive_constants(params)
    ci = dc.c1 * point.i_ac_pu
    phi = point.phi
    h, m, d, x2, y2 = (float(t) for t in v)
    z = complex(x2, y2)
    s = d + phi
    cs, sn = math.cos(s), math.sin(s)
    e_pd = cmath.exp(1j * (phi - d))
    e_dmp = cmath.exp(1j * (d - phi))
    e_2d = cmath.exp(2j * d)
    e_s = cmath.exp(1j * s)
    e_ms = cmath.exp(-1j * s)
    e_mphi = cmath.exp(-1j * phi)
    e_d = cmath.exp(1j * d)
    e_md = cmath.exp(-1j * d)

    p = (z * e_pd).real
    dp_dd = (z * e_pd).imag
    r0 = h * (1.0 + ci * m * p) - 1.0 - 4.0 * ci * m * sn
    j0 = [
        1.0 + ci * m * p,
        h * ci * p - 4.0 * ci * sn,
        h * ci * m * dp_dd - 4.0 * ci * m * cs,
        h * ci * m * e_pd.real,
        -h * ci * m * e_pd.imag,
    ]

    kz = -2j * ci * m * cs + 2j * ci * m * e_s + 2j * ci / 3.0 * m * e_ms + 1.0
    g = 6.0 * ci * m / h * e_dmp - 2.0 * ci * h * m**3 * cs * e_2d + kz * z
    dg = [
        -6.0 * ci * m / h**2 * e_dmp - 2.0 * ci * m**3 * cs * e_2d,
        6.0 * ci / h * e_dmp
        - 6.0 * ci * h * m * m * cs * e_2d
        + (-2j * ci * cs + 2j * ci * e_s + 2j * ci / 3.0 * e_ms) * z,
        6j * ci * m / h * e_dmp
        - 2.0 * ci * h * m**3 * (-sn + 2j * cs) * e_2d
        + (2j * ci * m * sn - 2.0 * ci * m * e_s + 2.0 * ci / 3.0 * m * e_ms) * z,
        kz,
        1j * kz,
    ]

    a = 8.0 / h**2 - 4.0 * (x2 * x2 + y2 * y2) / 3.0 + m * m
    hh = 1j * ci * a * e_mphi - ci * h * m * m * cs * e_md * z + (m - 4j * ci * m * m * cs) * e_d - m_c * cmath.exp(1j * d_c)
    dh = [
        1j * ci * (-16.0 / h**3) * e_mphi - ci * m * m * cs * e_md * z,
        2j * ci * m * e_mphi - 2.0 * ci * h * m * cs * e_md * z + (1.0 - 8j * ci * m * cs) * e_d,
        -ci * h * m * m * (-sn - 1j * cs) * e_md * z + 4j * ci * m * m * sn * e_d + 1j * (m - 4j * ci * m * m * cs) * e_d,
        1j * ci * (-8.0 * x2 / 3.0) * e_mphi - ci * h * m * m * cs * e_md,
        1j * ci * (-8.0 * y2 / 3.0) * e_mphi - 1j * ci * h * m * m * cs * e_md,
    ]

    r = np.array([r0, g.real, g.imag, hh.real, hh.imag])
    jac = np.array(
        [
            j0,
            [t.real for t in dg],
            [t.imag for t in dg],
            [t.real for t in dh],
            [t.imag for t in dh],
        ]
    )
    return r, jac


def solve_improved_direct(params: ConverterParams, point: OperatingPoint) -> SteadyStateSolution:
    _check_reference_target(params)
    m_c, d_c = required_output_voltage(params, point)

    def run(pt: OperatingPoint, guess):
        mc, dcv = required_output_voltage(params, pt)
        return newton(lambda v: improved_residual(params, pt, v, mc, dcv), guess, block="improved-direct")

    try:
        v, norm = run(point, [1.0, m_c, d_c, 0.0, 0.0])
    except SolverError:
        guess = [1.0, *required_output_voltage(params, OperatingPoint(0.0, point.phi)), 0.0, 0.0]
        for step in range(1, CONTINUATION_STEPS + 1):
            sub = OperatingPoint(point.i_ac_pu * step / CONTINUATION_STEPS, point.phi)
            guess, norm = run(sub, guess)
        v = guess

    h, m, d, x2, y2 = (float(t) for t in v)
    if m < 0.0:
        m, d = -m, d + math.pi
    z2 = complex(x2, y2)
    return SteadyStateSolution(
        scheme=Scheme.IMPROVED_DIRECT,
        i_ac_pu=point.i_ac_pu,
        phi=point.phi,
        m_conv1=m_c,
        delta_conv1=d_c,
        m_ref1=m,
        delta_ref1=wrap_angle(d),
        m_ref2=abs(z2),
        delta_ref2=wrap_angle(cmath.phase(z2)) if z2 != 0 else 0.0,
        h=h,
        k_cir=0.0,
        theta_cir=0.0,
        dc_cap_deviation_pu=0.0,
        i_dc=dc_link_current(params, point, m_c, d_c),
        residual_norm=norm,
    )


def solve(scheme: Scheme | str, params: ConverterParams, point: OperatingPoint) -> SteadyStateSolution:
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.DIRECT:
        return solve_direct(params, point)
    if scheme.is_indirect:
        return solve_indirect(params, point, scheme)
    if scheme is Scheme.IMPROVED_DIRECT:
        return solve_improved_direct(params, point)
    raise InvalidParameterError("scheme", f"{scheme.value} has no steady-state analytics (simulator only)")


# ---------------------------------------------------------------- ripple


@dataclass(frozen=True)
class CapRippleHarmonics:
    """Upper-arm capacitor-voltage ripple phasors (volts, per submodule).

    The lower arm has the odd orders negated.
    """

    order1: complex
    order2: complex
    order3: complex
    omega: float

    @property
    def phasors(self) -> tuple[complex, complex, complex]:
        return self.order1, self.order2, self.order3

    @property
    def amplitudes(self) -> tuple[float, float, float]:
        return tuple(abs(p) for p in self.phasors)

    def eval(self, t, arm: str = "upper"):
        t = np.asarray(t, dtype=float)
        sign = 1.0 if arm == "upper" else -1.0
        out = np.zeros_like(t)
        for k, p in enumerate(self.phasors, start=1):
            factor = sign if k % 2 else 1.0
            out = out + factor * np.imag(p * np.exp(1j * k * self.omega * t))
        return out


def cap_ripple_harmonics(params: ConverterParams, solution: SteadyStateSolution) -> CapRippleHarmonics:
    """Capacitor-voltage ripple harmonics 1-3 of the direct scheme's arms,
    consistent with the circulating current ``k_cir``/``theta_cir``."""
    dc = derive_constants(params)
    w = params.omega
    i_ac = solution.i_ac_pu * dc.i_base
    b = math.sqrt(2.0) * i_ac / (4.0 * w * params.c_sm)
    m, d, k, th, phi = solution.m_ref1, solution.delta_ref1, solution.k_cir, solution.theta_cir, solution.phi
    a1 = b * m * m / 2.0 * math.cos(phi + d)
    p1 = 1j * a1 * cmath.exp(1j * d) - 1j * b * cmath.exp(-1j * phi) - b * m * k * cmath.exp(1j * (th - d))
    p2 = -1j * b * k * cmath.exp(1j * th) + b * m / 4.0 * cmath.exp(1j * (d - phi))
    p3 = b * m * k / 3.0 * cmath.exp(1j * (d + th))
    return CapRippleHarmonics(p1, p2, p3, w)


@dataclass(frozen=True)
class ArmEnergyRipple:
    """Zero-mean arm energy ripple of the indirect family (joules).

    ``upper``/``lower`` hold the phasors of harmonics 1 and 2.
    """

    upper: tuple[complex, complex]
    lower: tuple[complex, complex]
    w0: float
    omega: float

    def ripple(self, t, arm: str = "upper"):
        t = np.asarray(t, dtype=float)
        coeffs = self.upper if arm == "upper" else self.lower
        return sum(np.imag(p * np.exp(1j * k * self.omega * t)) for k, p in enumerate(coeffs, start=1))

    def energy(self, t, arm: str = "upper"):
        return self.w0 + self.ripple(t, arm)


def arm_power_terms(params: ConverterParams, solution: SteadyStateSolution):
    """Instantaneous upper/lower arm power as callables, for quadrature checks."""
    dc = derive_constants(params)
    w = params.omega
    e_pk = solution.m_conv1 * params.u_dc_nominal / 2.0
    i_pk = math.sqrt(2.0) * solution.i_ac_pu * dc.i_base

    def power(t, arm="upper"):
        t = np.asarray(t, dtype=float)
        e = e_pk * np.sin(w * t + solution.delta_conv1)
        i_ac = i_pk * np.sin(w * t - solution.phi)
        if arm == "upper":
            return (params.u_dc_nominal / 2.0 - e) * (solution.i_dc / 3.0 + i_ac / 2.0)
        return (params.u_dc_nominal / 2.0 + e) * (solution.i_dc / 3.0 - i_ac / 2.0)

    return power


def arm_energy_ripple(
    params: ConverterParams, solution: SteadyStateSolution, i_dc: float | None = None
) -> ArmEnergyRipple:
    """Closed-form antiderivative of the arm power with exact synthesis of the
    required output voltage and no circulating current."""
    dc = derive_constants(params)
    w = params.omega
    i_dc = solution.i_dc if i_dc is None else i_dc
    u_dc = params.u_dc_nominal
    u_c = solution.m_conv1 * (u_dc / 2.0) / math.sqrt(2.0)
    i_ac = solution.i_ac_pu * dc.i_base
    phi, dlt = solution.phi, solution.delta_conv1

    mean_power = u_dc * i_dc / 6.0 - u_c * i_ac * math.cos(dlt + phi) / 2.0
    if abs(mean_power) > 1e-9 * params.s_rated:
        raise NonZeroMeanError(f"arm power has a dc component of {mean_power:.6g} W; I_dc is inconsistent")

    # cos(x) = sin(x + pi/2) -> phasor j*exp(j*arg)
    w1 = -math.sqrt(2.0) / 4.0 * u_dc * i_ac / w * 1j * cmath.exp(-1j * phi) + math.sqrt(
        2.0
    ) * u_c * i_dc / (3.0 * w) * 1j * cmath.exp(1j * dlt)
    w2 = u_c * i_ac / (4.0 * w) * cmath.exp(1j * (dlt - phi))
    w0 = 0.5 * params.c_sm * params.u_cap_target**2 * params.n_submodules
    return ArmEnergyRipple(upper=(w1, w2), lower=(-w1, w2), w0=w0, omega=w)
