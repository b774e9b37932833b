"""Average-arm-model MMC simulator used as an independent check of the analytics.

The plant has three legs, each with an upper and a lower arm represented by
the sum capacitor voltage ``u_sigma`` and a controlled voltage source
``f * u_sigma``. The ac side is a three-wire connection (floating neutral)
through ``L_arm/2 + L_T`` to a stiff grid at the valve-side voltage.

Outer controllers run at a fixed sample period and hold their outputs; the
modulation waveforms built from those outputs are evaluated continuously
inside every Runge-Kutta stage.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import ConverterParams, OperatingPoint, Scheme, derive_constants
from .errors import InvalidParameterError, NotSettledError, SimulationAborted
from .steady_state import solve, solve_direct
from .waveform import MarginReport, cap_voltage_report, from_samples, margin, rwf_eval, rwf_margin

STEPS_PER_PERIOD = 4000
CTRL_DIVIDER = 10
DEFAULT_R_PU = 1e-4
SETTLE_DRIFT = 2e-3
CLOSED_LOOP_RAMP_PERIODS = 10.0
OPEN_LOOP_RAMP_PERIODS = 30.0

_MODE = {
    Scheme.DIRECT: 0,
    Scheme.INDIRECT_CLOSED_LOOP: 1,
    Scheme.INDIRECT_OPEN_LOOP: 2,
    Scheme.IMPROVED_DIRECT: 3,
    Scheme.DIRECT_CVC_ONLY: 4,
    Scheme.DIRECT_CCSC_ONLY: 5,
}

# indices into the float configuration vector handed to the kernel
(
    P_UDC, P_N, P_C, P_L, P_LT, P_R, P_W, P_VG, P_UCAPREF,
    P_IREF0_RE, P_IREF0_IM, P_IREF1_RE, P_IREF1_IM, P_TSTEP, P_TRAMP,
    P_E1_RE, P_E1_IM, P_H1, P_V2_RE, P_V2_IM,
    P_KP_AC, P_KI_AC, P_LEQ, P_KP_W, P_KI_W, P_KC, P_KD,
    P_KP_V, P_KI_V, P_KP_2, P_KI_2, P_TC, P_GUARD_U, P_GUARD_I,
    P_SIZE,
) = range(35)

NSTATE = 6  # per leg: u_sigma_p, u_sigma_n, i_c, i_ac, W_p estimate, W_n estimate
NREC = 11  # per leg recorded channels, see SimSeries


@njit(cache=True)
def _ramp(t, t_ramp):
    """Smooth 0 -> 1 transition whose derivative is a Hann window. Over a
    whole number (>= 2) of periods its spectrum vanishes at every harmonic of
    the fundamental, so it leaves no dc offset in the inductor currents."""
    if t <= 0.0:
        return 0.0
    if t_ramp <= 0.0 or t >= t_ramp:
        return 1.0
    x = t / t_ramp
    return x - math.sin(2.0 * math.pi * x) / (2.0 * math.pi)


@njit(cache=True)
def _arm_refs(mode, t, x, cfg, held, k):
    """Arm voltage references and modulation denominators for leg k at time t."""
    w = cfg[P_W]
    udc = cfg[P_UDC]
    th = w * t - 2.0 * math.pi * k / 3.0
    e = held[0] * math.sin(th) + held[1] * math.cos(th)  # Im(E exp(j th))
    ed = held[2 + k]
    v2 = held[5] * math.sin(2.0 * th) + held[6] * math.cos(2.0 * th)  # Im(V2 exp(j 2th))
    ucm = 0.0
    if mode == 1 or mode == 2:
        ang = math.atan2(held[1], held[0])
        iref = held[7 + k] + held[10 + k] * math.sin(th + ang)
        # proportional loop plus the inductor drop of the balancing sinusoid
        ucm = cfg[P_KC] * (iref - held[13 + k]) + cfg[P_L] * w * held[10 + k] * math.cos(th + ang)
    vp = 0.5 * ed - e + 0.5 * v2 - ucm
    vn = 0.5 * ed + e + 0.5 * v2 - ucm
    if mode == 1:
        dp = x[k * NSTATE + 0]
        dn = x[k * NSTATE + 1]
    elif mode == 2:
        c_arm = cfg[P_C] / cfg[P_N]
        dp = math.sqrt(2.0 * max(x[k * NSTATE + 4], 1e-9) / c_arm)
        dn = math.sqrt(2.0 * max(x[k * NSTATE + 5], 1e-9) / c_arm)
    else:
        dp = cfg[P_N] * cfg[P_UCAPREF]
        dn = dp
    return vp, vn, dp, dn, e, th


@njit(cache=True)
def _deriv(mode, t, x, cfg, held, dx):
    n = cfg[P_N]
    c = cfg[P_C]
    l_arm = cfg[P_L]
    l_ac = 0.5 * l_arm + cfg[P_LT]
    r = cfg[P_R]
    udc = cfg[P_UDC]
    e_act = np.empty(3)
    vg = np.empty(3)
    for k in range(3):
        vp_ref, vn_ref, dp, dn, e, th = _arm_refs(mode, t, x, cfg, held, k)
        fp = min(max(vp_ref / dp, 0.0), 1.0)
        fn = min(max(vn_ref / dn, 0.0), 1.0)
        b = k * NSTATE
        usp, usn, ic, iac = x[b], x[b + 1], x[b + 2], x[b + 3]
        ip = ic + 0.5 * iac
        inn = ic - 0.5 * iac
        vp = fp * usp
        vn = fn * usn
        dx[b] = n / c * fp * ip
        dx[b + 1] = n / c * fn * inn
        dx[b + 2] = (udc - vp - vn - 2.0 * r * ic) / (2.0 * l_arm)
        dx[b + 4] = vp_ref * ip
        dx[b + 5] = vn_ref * inn
        e_act[k] = 0.5 * (vn - vp)
        vg[k] = cfg[P_VG] * math.sin(th)
    neutral = (e_act[0] + e_act[1] + e_act[2] - vg[0] - vg[1] - vg[2]) / 3.0
    for k in range(3):
        b = k * NSTATE
        dx[b + 3] = (e_act[k] - vg[k] - neutral - 0.5 * r * x[b + 3]) / l_ac


@njit(cache=True)
def _run(mode, feed, cfg, x0, dt, n_steps, ctrl_div, spp_ctrl, rec_every, rec_start):
    nx = 3 * NSTATE
    x = x0.copy()
    dx1 = np.empty(nx)
    dx2 = np.empty(nx)
    dx3 = np.empty(nx)
    dx4 = np.empty(nx)
    xt = np.empty(nx)
    # held controller outputs:
    # 0,1 E phasor; 2..4 e_d per leg; 5,6 V2 phasor; 7..9 i_c dc reference;
    # 10..12 balancing amplitude; 13..15 sampled i_c
    held = np.zeros(16)
    udc = cfg[P_UDC]
    n_sm = cfg[P_N]
    c_arm = cfg[P_C] / n_sm
    w = cfg[P_W]
    tc = cfg[P_TC]
    w_ref = 0.5 * c_arm * (n_sm * cfg[P_UCAPREF]) ** 2
    for k in range(3):
        held[2 + k] = udc
    held[0] = cfg[P_VG]
    acc_ac_re = 0.0
    acc_ac_im = 0.0
    acc_w = np.zeros(3)
    acc_v = np.zeros(3)
    acc2_re = 0.0
    acc2_im = 0.0
    buf_wp = np.full((3, spp_ctrl), w_ref)
    buf_wn = np.full((3, spp_ctrl), w_ref)
    sum_wp = np.full(3, w_ref * spp_ctrl)
    sum_wn = np.full(3, w_ref * spp_ctrl)
    buf_pos = 0

    n_rec = (n_steps - rec_start) // rec_every + 1
    rec_t = np.empty(n_rec)
    rec = np.empty((n_rec, 3, NREC))
    ir = 0
    status = 0
    t_abort = -1.0
    for step in range(n_steps + 1):
        t = step * dt
        if step % ctrl_div == 0:
            use_e = mode != 2
            # ---- sample energies into one-period moving averages
            for k in range(3):
                b = k * NSTATE
                if use_e:
                    wp = 0.5 * c_arm * x[b] ** 2
                    wn = 0.5 * c_arm * x[b + 1] ** 2
                else:
                    wp = x[b + 4]
                    wn = x[b + 5]
                sum_wp[k] += wp - buf_wp[k, buf_pos]
                sum_wn[k] += wn - buf_wn[k, buf_pos]
                buf_wp[k, buf_pos] = wp
                buf_wn[k, buf_pos] = wn
                held[13 + k] = x[b + 2]
            buf_pos = (buf_pos + 1) % spp_ctrl
            # ---- ac current phasor, I = (2j/3) sum i_k exp(-j th_k)
            s_re = 0.0
            s_im = 0.0
            c2_re = 0.0
            c2_im = 0.0
            for k in range(3):
                th = w * t - 2.0 * math.pi * k / 3.0
                iac = x[k * NSTATE + 3]
                ic = x[k * NSTATE + 2]
                s_re += iac * math.cos(th)
                s_im -= iac * math.sin(th)
                c2_re += ic * math.cos(2.0 * th)
                c2_im -= ic * math.sin(2.0 * th)
            im_re = -2.0 / 3.0 * s_im
            im_im = 2.0 / 3.0 * s_re
            i2_re = -2.0 / 3.0 * c2_im
            i2_im = 2.0 / 3.0 * c2_re
            ramp = _ramp(t, cfg[P_TRAMP])
            ir_re = ramp * cfg[P_IREF0_RE]
            ir_im = ramp * cfg[P_IREF0_IM]
            if t >= cfg[P_TSTEP]:
                sw = _ramp(t - cfg[P_TSTEP], 2.0 * 2.0 * math.pi / w)
                ir_re += sw * (cfg[P_IREF1_RE] - cfg[P_IREF0_RE])
                ir_im += sw * (cfg[P_IREF1_IM] - cfg[P_IREF0_IM])
            if feed == 1:
                held[0] = cfg[P_VG] + ramp * (cfg[P_E1_RE] - cfg[P_VG])
                held[1] = ramp * cfg[P_E1_IM]
                for k in range(3):
                    held[2 + k] = udc / (1.0 + ramp * (cfg[P_H1] - 1.0))
                held[5] = ramp * cfg[P_V2_RE]
                held[6] = ramp * cfg[P_V2_IM]
            else:
                er_re = ir_re - im_re
                er_im = ir_im - im_im
                acc_ac_re += er_re * tc
                acc_ac_im += er_im * tc
                xl = w * cfg[P_LEQ]
                held[0] = cfg[P_VG] - xl * im_im + cfg[P_KP_AC] * er_re + cfg[P_KI_AC] * acc_ac_re
                held[1] = xl * im_re + cfg[P_KP_AC] * er_im + cfg[P_KI_AC] * acc_ac_im
            # ---- capacitor-side controllers
            if mode == 1 or mode == 2:
                p_ff = 0.0
                for k in range(3):
                    th = w * t - 2.0 * math.pi * k / 3.0
                    e = held[0] * math.sin(th) + held[1] * math.cos(th)
                    p_ff += e * x[k * NSTATE + 3]
                e_pk = math.hypot(held[0], held[1])
                for k in range(3):
                    err = 2.0 * w_ref - (sum_wp[k] + sum_wn[k]) / spp_ctrl
                    acc_w[k] += err * tc
                    held[7 + k] = p_ff / (3.0 * udc) + cfg[P_KP_W] * err + cfg[P_KI_W] * acc_w[k]
                    held[10 + k] = cfg[P_KD] / max(e_pk, 1e-9) * (sum_wp[k] - sum_wn[k]) / spp_ctrl
            if feed == 0 and (mode == 3 or mode == 4):
                for k in range(3):
                    wbar = 0.5 * (sum_wp[k] + sum_wn[k]) / spp_ctrl
                    ubar = math.sqrt(2.0 * wbar / c_arm) / n_sm
                    err = cfg[P_UCAPREF] - ubar
                    acc_v[k] += err * tc
                    held[2 + k] = udc - n_sm * (cfg[P_KP_V] * err + cfg[P_KI_V] * acc_v[k])
            if feed == 0 and (mode == 3 or mode == 5):
                acc2_re += i2_re * tc
                acc2_im += i2_im * tc
                x4 = 4.0 * w * cfg[P_L]
                held[5] = cfg[P_KP_2] * i2_re + cfg[P_KI_2] * acc2_re + x4 * i2_im
                held[6] = cfg[P_KP_2] * i2_im + cfg[P_KI_2] * acc2_im - x4 * i2_re

        # ---- record
        if step >= rec_start and (step - rec_start) % rec_every == 0:
            rec_t[ir] = t
            for k in range(3):
                b = k * NSTATE
                vp_ref, vn_ref, dp, dn, e, th = _arm_refs(mode, t, x, cfg, held, k)
                rec[ir, k, 0] = x[b]
                rec[ir, k, 1] = x[b + 1]
                rec[ir, k, 2] = x[b + 2]
                rec[ir, k, 3] = x[b + 3]
                rec[ir, k, 4] = vp_ref / dp
                rec[ir, k, 5] = vn_ref / dn
                rec[ir, k, 6] = held[2 + k]
                rec[ir, k, 7] = 0.5 * (held[5] * math.sin(2.0 * th) + held[6] * math.cos(2.0 * th))
                rec[ir, k, 8] = cfg[P_VG] * math.sin(th)
                rec[ir, k, 9] = x[b + 4]
                rec[ir, k, 10] = x[b + 5]
            ir += 1
        if step == n_steps:
            break

        # ---- guards
        for k in range(3):
            b = k * NSTATE
            if x[b] <= 0.0 or x[b + 1] <= 0.0:
                status = 1
            if x[b] > cfg[P_GUARD_U] or x[b + 1] > cfg[P_GUARD_U]:
                status = 2
            if abs(x[b + 2]) > cfg[P_GUARD_I] or abs(x[b + 3]) > cfg[P_GUARD_I]:
                status = 3
            if not (np.isfinite(x[b]) and np.isfinite(x[b + 2]) and np.isfinite(x[b + 3])):
                status = 4
        if status != 0:
            t_abort = t
            break

        # ---- RK4 step
        _deriv(mode, t, x, cfg, held, dx1)
        for i in range(nx):
            xt[i] = x[i] + 0.5 * dt * dx1[i]
        _deriv(mode, t + 0.5 * dt, xt, cfg, held, dx2)
        for i in range(nx):
            xt[i] = x[i] + 0.5 * dt * dx2[i]
        _deriv(mode, t + 0.5 * dt, xt, cfg, held, dx3)
        for i in range(nx):
            xt[i] = x[i] + dt * dx3[i]
        _deriv(mode, t + dt, xt, cfg, held, dx4)
        for i in range(nx):
            x[i] += dt / 6.0 * (dx1[i] + 2.0 * dx2[i] + 2.0 * dx3[i] + dx4[i])
    return rec_t[:ir], rec[:ir], status, t_abort


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ControllerConfig:
    """Controller set-up. Gains left as ``None`` take bandwidth-based defaults:
    ac current loop w/3, circulating 2w loop strong virtual resistance, capacitor-average loop
    w/100, energy loop w/100."""

    scheme: Scheme
    point: OperatingPoint
    reference_feed: bool = False
    ramp_periods: float | None = None
    step_to: OperatingPoint | None = None
    t_step: float = float("inf")
    ac_bandwidth: float | None = None
    ccsc_bandwidth: float | None = None
    cvc_bandwidth: float | None = None
    energy_bandwidth: float | None = None
    ccsc_gains: tuple[float, float] | None = None
    cvc_gains: tuple[float, float] | None = None
    ac_gains: tuple[float, float] | None = None
    energy_gains: tuple[float, float] | None = None
    ctrl_divider: int = CTRL_DIVIDER
    r_pu: float = DEFAULT_R_PU

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if self.ctrl_divider < 1 or int(self.ctrl_divider) != self.ctrl_divider:
            raise InvalidParameterError("ctrl_divider", "must be a positive integer")
        for name in ("ac_gains", "ccsc_gains", "cvc_gains", "energy_gains"):
            g = getattr(self, name)
            if g is not None and not all(v > 0 for v in g):
                raise InvalidParameterError(name, "gains must be positive")
        if self.r_pu < 0:
            raise InvalidParameterError("r_pu", "must be >= 0")
        if self.ramp_periods is None:
            # without the ac loop nothing damps the startup transient, so the
            # open-loop ramp is made long enough not to excite it
            ramp = OPEN_LOOP_RAMP_PERIODS if self.reference_feed else CLOSED_LOOP_RAMP_PERIODS
            object.__setattr__(self, "ramp_periods", ramp)
        if self.ramp_periods < 0:
            raise InvalidParameterError("ramp_periods", "must be >= 0")


@dataclass
class SimSeries:
    """Recorded simulation. ``channels[i, k, :]`` holds, for leg k at sample i:
    u_sigma_p, u_sigma_n, i_c, i_ac, f_p, f_n, e_d_ref, 2w injection,
    grid voltage, W_p estimate, W_n estimate."""

    params: ConverterParams
    controller: ControllerConfig
    t: np.ndarray
    channels: np.ndarray
    dt: float
    samples_per_period: int
    status: int = 0
    t_abort: float = float("nan")

    CHANNELS = ("u_sigma_p", "u_sigma_n", "i_c", "i_ac", "f_p", "f_n", "e_d_ref", "v_2w", "v_grid", "w_p_est", "w_n_est")

    def channel(self, name: str, leg: int = 0) -> np.ndarray:
        return self.channels[:, leg, self.CHANNELS.index(name)]

    def arm_currents(self, leg: int = 0) -> tuple[np.ndarray, np.ndarray]:
        ic, iac = self.channel("i_c", leg), self.channel("i_ac", leg)
        return ic + 0.5 * iac, ic - 0.5 * iac

    def table(self) -> dict[str, np.ndarray]:
        cols: dict[str, np.ndarray] = {"t_s": self.t}
        for leg, name in enumerate("abc"):
            ip, i_n = self.arm_currents(leg)
            cols[f"u_sigma_p{name}_v"] = self.channel("u_sigma_p", leg)
            cols[f"u_sigma_n{name}_v"] = self.channel("u_sigma_n", leg)
            cols[f"i_p{name}_a"] = ip
            cols[f"i_n{name}_a"] = i_n
            cols[f"i_ac{name}_a"] = self.channel("i_ac", leg)
            cols[f"f_p{name}"] = self.channel("f_p", leg)
            cols[f"f_n{name}"] = self.channel("f_n", leg)
            cols[f"e_d_ref{name}_v"] = self.channel("e_d_ref", leg)
            cols[f"v_2w{name}_v"] = self.channel("v_2w", leg)
        return cols


def _default_gains(params: ConverterParams, cfg: ControllerConfig) -> dict:
    dc = derive_constants(params)
    w = params.omega
    l_ac = dc.l_arm / 2.0 + dc.l_t
    a_ac = cfg.ac_bandwidth or w / 3.0
    a_2 = cfg.ccsc_bandwidth or w / 20.0
    a_v = cfg.cvc_bandwidth or w / 100.0
    a_w = cfg.energy_bandwidth or w / 100.0
    kp_ac, ki_ac = cfg.ac_gains or (l_ac * a_ac, l_ac * a_ac**2 / 4.0)
    # circulating loop: in the 2w frame the plant is dominated by the net arm
    # reactance, so Kp is a virtual resistance well above it (2L * 2w) and
    # the integral zero sets the bandwidth
    kp_2 = 2.0 * dc.l_arm * 2.0 * w
    kp_2, ki_2 = cfg.ccsc_gains or (kp_2, kp_2 * a_2)
    # capacitor-average loop: the quasi-static plant from N*(Kp e + Ki int e) to
    # the capacitor mean has unit gain, so Ki = (1 + Kp) * bandwidth
    kp_v, ki_v = cfg.cvc_gains or (0.2, 1.2 * a_v)
    kp_w, ki_w = cfg.energy_gains or (a_w / params.u_dc_nominal, a_w**2 / (4.0 * params.u_dc_nominal))
    return dict(
        kp_ac=kp_ac, ki_ac=ki_ac, l_eq=l_ac, kp_2=kp_2, ki_2=ki_2, kp_v=kp_v, ki_v=ki_v,
        kp_w=kp_w, ki_w=ki_w, kc=dc.l_arm * 5.0 * w, kd=a_w,
    )


def _current_phasor(params: ConverterParams, point: OperatingPoint) -> complex:
    i_pk = math.sqrt(2.0) * point.i_ac_pu * derive_constants(params).i_base
    return i_pk * cmath.exp(-1j * point.phi)


def _build_cfg(params: ConverterParams, cfg: ControllerConfig, dt: float) -> np.ndarray:
    dc = derive_constants(params)
    g = _default_gains(params, cfg)
    half = params.u_dc_nominal / 2.0
    v = np.zeros(P_SIZE)
    v[P_UDC] = params.u_dc_nominal
    v[P_N] = params.n_submodules
    v[P_C] = params.c_sm
    v[P_L] = dc.l_arm
    v[P_LT] = dc.l_t
    v[P_R] = cfg.r_pu * dc.z_base
    v[P_W] = params.omega
    v[P_VG] = params.u_acv_pu * half
    v[P_UCAPREF] = params.u_cap_target
    i0 = _current_phasor(params, cfg.point)
    i1 = _current_phasor(params, cfg.step_to) if cfg.step_to is not None else i0
    v[P_IREF0_RE], v[P_IREF0_IM] = i0.real, i0.imag
    v[P_IREF1_RE], v[P_IREF1_IM] = i1.real, i1.imag
    v[P_TSTEP] = cfg.t_step
    v[P_TRAMP] = cfg.ramp_periods * params.period
    v[P_H1] = 1.0
    v[P_E1_RE] = params.u_acv_pu * half
    if cfg.reference_feed:
        if not cfg.scheme.has_analytics:
            raise InvalidParameterError("scheme", "reference feed needs a scheme with steady-state analytics")
        sol = solve(cfg.scheme, params, cfg.point)
        e1 = sol.m_ref1 * half * cmath.exp(1j * sol.delta_ref1)
        v2 = sol.m_ref2 * params.u_dc_nominal * cmath.exp(1j * sol.delta_ref2)
        v[P_E1_RE], v[P_E1_IM] = e1.real, e1.imag
        v[P_H1] = sol.h
        v[P_V2_RE], v[P_V2_IM] = v2.real, v2.imag
    v[P_KP_AC], v[P_KI_AC], v[P_LEQ] = g["kp_ac"], g["ki_ac"], g["l_eq"]
    v[P_KP_W], v[P_KI_W], v[P_KC], v[P_KD] = g["kp_w"], g["ki_w"], g["kc"], g["kd"]
    v[P_KP_V], v[P_KI_V] = g["kp_v"], g["ki_v"]
    v[P_KP_2], v[P_KI_2] = g["kp_2"], g["ki_2"]
    v[P_TC] = dt * cfg.ctrl_divider
    v[P_GUARD_U] = 10.0 * params.u_dc_nominal
    v[P_GUARD_I] = 10.0 * math.sqrt(2.0) * dc.i_base
    return v


def _initial_state(params: ConverterParams) -> np.ndarray:
    """No-load equilibrium: capacitors at target, no current."""
    x0 = np.zeros(3 * NSTATE)
    u_sigma = params.n_submodules * params.u_cap_target
    w0 = 0.5 * params.c_sm * params.u_cap_target**2 * params.n_submodules
    for k in range(3):
        x0[k * NSTATE + 0] = u_sigma
        x0[k * NSTATE + 1] = u_sigma
        x0[k * NSTATE + 4] = w0
        x0[k * NSTATE + 5] = w0
    return x0


_ABORT_REASON = {
    1: "sum capacitor voltage fell to zero",
    2: "sum capacitor voltage exceeded 10x rating",
    3: "current exceeded 10x rating",
    4: "state became non-finite",
}


def simulate(
    params: ConverterParams,
    controller: ControllerConfig,
    duration: float,
    dt: float | None = None,
    *,
    record_periods: float | None = None,
) -> SimSeries:
    """Integrate the plant with fixed-step RK4.

    ``record_periods`` keeps only the trailing periods (the whole run when None).
    """
    params.validate()
    period = params.period
    if dt is None:
        dt = period / STEPS_PER_PERIOD
    spp = period / dt
    if abs(spp - round(spp)) > 1e-6 or dt > period / 2000.0 * (1 + 1e-12):
        raise InvalidParameterError("dt", "must divide the period into an integer number >= 2000 of steps")
    spp = int(round(spp))
    if duration < 20.0 * period * (1 - 1e-12):
        raise InvalidParameterError("duration", "must cover at least 20 fundamental periods")
    if spp % controller.ctrl_divider:
        raise InvalidParameterError("ctrl_divider", "must divide the steps per period")
    n_steps = int(round(duration / dt))
    rec_start = 0 if record_periods is None else max(0, n_steps - int(round(record_periods * spp)))
    cfg = _build_cfg(params, controller, dt)
    t, rec, status, t_abort = _run(
        _MODE[controller.scheme],
        1 if controller.reference_feed else 0,
        cfg,
        _initial_state(params),
        dt,
        n_steps,
        controller.ctrl_divider,
        spp // controller.ctrl_divider,
        1,
        rec_start,
    )
    series = SimSeries(params, controller, t, rec, dt, spp, int(status), float(t_abort))
    if status:
        raise SimulationAborted(f"simulation aborted at t={t_abort:.6f} s: {_ABORT_REASON[int(status)]}", t_abort)
    return series


# ---------------------------------------------------------------- metrics


def dft_phasor(x: np.ndarray, t: np.ndarray, omega: float, order: int) -> complex:
    """Sine-convention phasor of harmonic ``order`` over whole periods:
    ``A sin(k w t + a)`` maps to ``A exp(j a)``; order 0 returns the mean."""
    if order == 0:
        return complex(np.mean(x))
    c = 2.0 / len(x) * np.sum(x * np.exp(-1j * order * omega * t))
    return 1j * c


@dataclass(frozen=True)
class ExtractedMetrics:
    i_ac_pu: float
    phi: float
    cir_phasor_pu: tuple[complex, complex, complex]
    k_cir: float
    theta_cir: float
    cap_dc_pu: float
    cap_peak_pu: float
    dc_cap_deviation_pu: float
    rwf: np.ndarray = field(repr=False)
    rwf_t: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    f_peak: float = float("nan")
    f_valley: float = float("nan")
    delta_f_margin: float = float("nan")
    leg_spread: float = 0.0

    @property
    def margin(self) -> MarginReport:
        return MarginReport(self.f_peak, self.f_valley, self.delta_f_margin, self.delta_f_margin > 0)

    def to_record(self) -> dict:
        return {
            "i_ac_pu": self.i_ac_pu,
            "phi": self.phi,
            "k_cir": self.k_cir,
            "theta_cir": self.theta_cir,
            "cap_dc_pu": self.cap_dc_pu,
            "cap_peak_pu": self.cap_peak_pu,
            "dc_cap_deviation_pu": self.dc_cap_deviation_pu,
            "f_peak": self.f_peak,
            "f_valley": self.f_valley,
            "delta_f_margin": self.delta_f_margin,
            "leg_spread": self.leg_spread,
        }


def _window_metrics(series: SimSeries, start: int, n_periods: int) -> ExtractedMetrics:
    p = series.params
    dc = derive_constants(p)
    spp = series.samples_per_period
    sl = slice(start, start + n_periods * spp)
    t = series.t[sl]
    w = p.omega
    u_capn = p.u_dc_nominal / p.n_submodules
    n = p.n_submodules

    i1 = dft_phasor(series.channel("i_ac", 0)[sl], t, w, 1)
    i_pu = abs(i1) / math.sqrt(2.0) / dc.i_base
    cir = []
    per_leg = []
    for leg in range(3):
        c2 = dft_phasor(series.channel("i_c", leg)[sl], t, w, 2)
        cir.append(c2 / (math.sqrt(2.0) * dc.i_base))
        ia = dft_phasor(series.channel("i_ac", leg)[sl], t, w, 1)
        ucap = series.channel("u_sigma_p", leg)[sl] / n
        per_leg.append((abs(ia), float(np.mean(ucap)), abs(c2)))
    k_cir = abs(cir[0]) / i_pu if i_pu > 0 else 0.0
    u = series.channel("u_sigma_p", 0)[sl] / n
    u_all = np.concatenate([series.channel(ch, leg)[sl] for leg in range(3) for ch in ("u_sigma_p", "u_sigma_n")]) / n
    rwf = np.array(series.channel("f_p", 0)[start : start + spp])
    wf = from_samples(rwf, p.period)
    m = margin(wf)
    cap = from_samples(u[:spp], p.period)
    spread = 0.0
    for j in range(2):
        vals = [leg[j] for leg in per_leg]
        spread = max(spread, (max(vals) - min(vals)) / max(abs(np.mean(vals)), 1e-30))
    return ExtractedMetrics(
        i_ac_pu=i_pu,
        phi=math.remainder(-cmath.phase(i1), 2 * math.pi) if abs(i1) > 0 else 0.0,
        cir_phasor_pu=tuple(cir),
        k_cir=k_cir,
        theta_cir=cmath.phase(cir[0]) if abs(cir[0]) > 0 else 0.0,
        cap_dc_pu=float(np.mean(u)) / u_capn,
        cap_peak_pu=cap.f_peak / u_capn,
        dc_cap_deviation_pu=float(np.mean(u_all)) / u_capn - 1.0,
        rwf=rwf,
        rwf_t=np.array(series.t[start : start + spp]),
        f_peak=m.f_peak,
        f_valley=m.f_valley,
        delta_f_margin=m.delta_f_margin,
        leg_spread=spread,
    )


def extract_metrics(series: SimSeries, n_periods: int = 1, *, check_settled: bool = True) -> ExtractedMetrics:
    """Fourier metrics over the final ``n_periods`` whole periods.

    When ``check_settled`` the same metrics from the preceding period must
    agree within 0.2 %.
    """
    spp = series.samples_per_period
    total = len(series.t) - 1  # the last sample repeats the phase of the first
    if total < (n_periods + 1) * spp:
        raise InvalidParameterError("n_periods", "series too short for the requested window")
    start = total - n_periods * spp
    final = _window_metrics(series, start, n_periods)
    if check_settled:
        prev = _window_metrics(series, start - spp, 1)
        last = _window_metrics(series, total - spp, 1)
        drift = {
            "i_ac_pu": abs(last.i_ac_pu - prev.i_ac_pu) / max(last.i_ac_pu, 1e-3),
            "cap_dc_pu": abs(last.cap_dc_pu - prev.cap_dc_pu) / last.cap_dc_pu,
            "cap_peak_pu": abs(last.cap_peak_pu - prev.cap_peak_pu) / last.cap_peak_pu,
            "f_peak": abs(last.f_peak - prev.f_peak),
            "f_valley": abs(last.f_valley - prev.f_valley),
        }
        if max(drift.values()) >= SETTLE_DRIFT:
            raise NotSettledError(f"metrics still drifting: {drift}", drift)
    return final


def run_to_steady_state(
    params: ConverterParams,
    controller: ControllerConfig,
    periods: float = 60.0,
    dt: float | None = None,
    n_periods: int = 1,
) -> tuple[SimSeries, ExtractedMetrics]:
    series = simulate(params, controller, periods * params.period, dt, record_periods=n_periods + 2)
    return series, extract_metrics(series, n_periods)


# ---------------------------------------------------------------- steps and hybrid modes


@dataclass(frozen=True)
class StepReport:
    settled: bool
    settling_time: float
    max_p_excursion_pu: float
    max_q_excursion_pu: float
    final_metrics: ExtractedMetrics | None


def _pq_trace(series: SimSeries) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous P*, Q* from the three-phase current space phasor."""
    dc = derive_constants(series.params)
    w = series.params.omega
    s = np.zeros(len(series.t), dtype=complex)
    for leg in range(3):
        th = w * series.t - 2.0 * math.pi * leg / 3.0
        s += series.channel("i_ac", leg) * np.exp(-1j * th)
    phasor = 2j / 3.0 * s / (math.sqrt(2.0) * dc.i_base)
    return phasor.real, -phasor.imag


def simulate_step(
    params: ConverterParams,
    scheme: Scheme | str,
    from_point: OperatingPoint,
    to_point: OperatingPoint,
    t_step: float,
    duration: float,
    dt: float | None = None,
    band: float = 0.02,
    **controller_kw,
) -> tuple[SimSeries, StepReport]:
    """Reference step from ``from_point`` to ``to_point`` at ``t_step``.

    Settling is the first time after which P*, Q* stay within ``band`` of the
    target and the capacitor period mean stays within ``band`` of the
    post-step analytic value.
    """
    scheme = Scheme.parse(scheme)
    ctrl = ControllerConfig(scheme, from_point, step_to=to_point, t_step=t_step, **controller_kw)
    series = simulate(params, ctrl, duration, dt)
    p, q = _pq_trace(series)
    after = series.t >= t_step
    # the controller moves its reference along the same smooth two-period
    # transition, so excursions are measured against that trajectory
    x = np.clip((series.t - t_step) / (2.0 * series.params.period), 0.0, 1.0)
    sw = x - np.sin(2.0 * np.pi * x) / (2.0 * np.pi)
    p_ref = from_point.p_pu + sw * (to_point.p_pu - from_point.p_pu)
    q_ref = from_point.q_pu + sw * (to_point.q_pu - from_point.q_pu)
    spp = series.samples_per_period
    post = after
    max_dp = float(np.max(np.abs(p - p_ref)[post])) if post.any() else float("nan")
    max_dq = float(np.max(np.abs(q - q_ref)[post])) if post.any() else float("nan")

    analytic_scheme = Scheme.DIRECT if not scheme.has_analytics else scheme
    sol = solve(analytic_scheme, params, to_point)
    cap_target = 1.0 + sol.dc_cap_deviation_pu
    u_capn = params.u_dc_nominal / params.n_submodules
    u = series.channel("u_sigma_p", 0) / params.n_submodules / u_capn
    kernel = np.ones(spp) / spp
    u_mean = np.convolve(u, kernel, mode="valid")  # mean over the trailing period
    t_mean = series.t[spp - 1 :]
    p_mean = np.convolve(p, kernel, mode="valid")
    q_mean = np.convolve(q, kernel, mode="valid")
    bad = (
        (np.abs(p_mean - to_point.p_pu) > band)
        | (np.abs(q_mean - to_point.q_pu) > band)
        | (np.abs(u_mean - cap_target) > band * cap_target)
    )
    bad |= t_mean < t_step
    settled = not bad[-1]
    if settled:
        idx = np.nonzero(bad)[0]
        t_settle = float(t_mean[idx[-1] + 1] - t_step) if len(idx) else 0.0
    else:
        t_settle = float("nan")
    final = None
    try:
        final = extract_metrics(series, 1)
    except NotSettledError:
        settled = False
    return series, StepReport(settled, t_settle, max_dp, max_dq, final)


def hybrid_mode_margin(
    params: ConverterParams, point: OperatingPoint, mode: Scheme | str, periods: float = 60.0, **controller_kw
) -> MarginReport:
    """Steady-state RWF margin with only one auxiliary loop added to direct modulation."""
    mode = Scheme.parse(mode)
    if mode not in (Scheme.DIRECT_CVC_ONLY, Scheme.DIRECT_CCSC_ONLY, Scheme.DIRECT):
        raise InvalidParameterError("mode", f"{mode.value} is not a hybrid diagnostic mode")
    solve_direct(params, point)  # the point must be solvable under plain direct modulation
    _, metrics = run_to_steady_state(params, ControllerConfig(mode, point, **controller_kw), periods)
    return metrics.margin


def energy_balance_error(series: SimSeries) -> np.ndarray:
    """Mismatch between stored-energy rate and dc-in minus ac-out power,
    normalized by S_N, at the interior samples (central differences)."""
    p = series.params
    dc = derive_constants(p)
    c_arm = p.c_sm / p.n_submodules
    w_store = np.zeros(len(series.t))
    p_net = np.zeros(len(series.t))
    for leg in range(3):
        usp, usn = series.channel("u_sigma_p", leg), series.channel("u_sigma_n", leg)
        ip, i_n = series.arm_currents(leg)
        iac = series.channel("i_ac", leg)
        w_store += 0.5 * c_arm * (usp**2 + usn**2)
        w_store += 0.5 * dc.l_arm * (ip**2 + i_n**2) + 0.5 * dc.l_t * iac**2
        p_net += p.u_dc_nominal * series.channel("i_c", leg) - series.channel("v_grid", leg) * iac
    dwdt = (w_store[2:] - w_store[:-2]) / (2.0 * series.dt)
    return (dwdt - p_net[1:-1]) / p.s_rated


def analytic_comparison(params: ConverterParams, scheme: Scheme | str, metrics: ExtractedMetrics) -> list[dict]:
    """Analytic steady state next to the simulated metrics, one row per quantity.

    Hybrid modes are compared against plain direct modulation.
    """
    scheme = Scheme.parse(scheme)
    ref = scheme if scheme.has_analytics else Scheme.DIRECT
    point = OperatingPoint(metrics.i_ac_pu, metrics.phi)
    sol = solve(ref, params, point)
    cap = cap_voltage_report(ref, params, sol)
    m = rwf_margin(ref, params, sol)
    gap = float(np.max(np.abs(rwf_eval(ref, params, sol, "upper", metrics.rwf_t) - metrics.rwf)))
    rows = [
        ("k_cir", sol.k_cir, metrics.k_cir),
        ("cap_dc_pu", cap.dc, metrics.cap_dc_pu),
        ("cap_peak_pu", cap.peak, metrics.cap_peak_pu),
        ("dc_cap_deviation_pu", sol.dc_cap_deviation_pu, metrics.dc_cap_deviation_pu),
        ("f_peak", m.f_peak, metrics.f_peak),
        ("f_valley", m.f_valley, metrics.f_valley),
        ("delta_f_margin", m.delta_f_margin, metrics.delta_f_margin),
        ("rwf_gap", 0.0, gap),
    ]
    return [{"quantity": q, "analytic": a, "simulated": b, "delta": b - a} for q, a, b in rows]
