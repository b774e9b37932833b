"""Converter parameters, per-unit bases and the required PQ operating range.

Per-unit conventions used throughout the package:

* voltages on the valve side are amplitude-based and normalized by U_dcN/2,
  so ``u_acv_pu = sqrt(2) * U_ACV_rms / (U_dcN / 2)``;
* the current base is ``I_B = S_N / (3 * U_ACV_rms)`` (RMS), so I* = 1 at
  phi = 0 carries the rated apparent power;
* the impedance base is ``Z_B = U_ACV_rms / I_B``.

The ac current phasor is ``I_ac / -phi`` against the valve voltage at angle 0.
Positive phi means the converter delivers reactive power (capacitive mode).
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import InvalidParameterError

# Table I lists the arm reactance "converted to the valve side": the ac path
# sees L_arm/2, so the physical per-arm reactance is twice the listed value.
ARM_REFERRAL_FACTOR = 2.0

U_ACV_PU_MAX = 1.2


class Scheme(str, enum.Enum):
    DIRECT = "direct"
    INDIRECT_CLOSED_LOOP = "indirect"
    INDIRECT_OPEN_LOOP = "indirect-open"
    IMPROVED_DIRECT = "improved-direct"
    DIRECT_CVC_ONLY = "direct-cvc"
    DIRECT_CCSC_ONLY = "direct-ccsc"

    @property
    def is_indirect(self) -> bool:
        return self in (Scheme.INDIRECT_CLOSED_LOOP, Scheme.INDIRECT_OPEN_LOOP)

    @property
    def has_analytics(self) -> bool:
        """Hybrid diagnostic modes exist only in the simulator."""
        return self not in (Scheme.DIRECT_CVC_ONLY, Scheme.DIRECT_CCSC_ONLY)

    @classmethod
    def parse(cls, name: str | "Scheme") -> "Scheme":
        if isinstance(name, Scheme):
            return name
        key = name.strip().lower().replace("_", "-")
        aliases = {
            "indirect-closed": cls.INDIRECT_CLOSED_LOOP,
            "indirect-closed-loop": cls.INDIRECT_CLOSED_LOOP,
            "indirect-open-loop": cls.INDIRECT_OPEN_LOOP,
            "improved": cls.IMPROVED_DIRECT,
            "direct-cvc-only": cls.DIRECT_CVC_ONLY,
            "direct-ccsc-only": cls.DIRECT_CCSC_ONLY,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise InvalidParameterError("scheme", f"unknown scheme {name!r} (valid: {valid})") from None


@dataclass(frozen=True)
class ConverterParams:
    u_dc_nominal: float
    n_submodules: int
    c_sm: float
    s_rated: float
    p_rated: float
    x_eq_pu: float
    x_arm_pu: float
    x_t_pu: float
    u_acv_pu: float
    frequency: float = 50.0
    u_cap_ref: float | None = None

    @property
    def u_cap_target(self) -> float:
        if self.u_cap_ref is None:
            return self.u_dc_nominal / self.n_submodules
        return self.u_cap_ref

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    def validate(self) -> None:
        for name in ("u_dc_nominal", "c_sm", "s_rated", "p_rated", "frequency"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidParameterError(name, f"must be a positive finite number, got {value!r}")
        if int(self.n_submodules) != self.n_submodules or self.n_submodules < 1:
            raise InvalidParameterError("n_submodules", f"must be a positive integer, got {self.n_submodules!r}")
        for name in ("x_eq_pu", "x_arm_pu", "x_t_pu"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(name, f"must be positive, got {value!r}")
        if abs(self.x_eq_pu - (self.x_t_pu + self.x_arm_pu)) > 1e-12:
            raise InvalidParameterError(
                "x_eq_pu",
                f"must equal x_t_pu + x_arm_pu ({self.x_t_pu} + {self.x_arm_pu}), got {self.x_eq_pu}",
            )
        if not (0.0 < self.u_acv_pu <= U_ACV_PU_MAX):
            raise InvalidParameterError("u_acv_pu", f"must lie in (0, {U_ACV_PU_MAX}], got {self.u_acv_pu!r}")
        if self.u_cap_ref is not None and not (math.isfinite(self.u_cap_ref) and self.u_cap_ref > 0):
            raise InvalidParameterError("u_cap_ref", f"must be positive, got {self.u_cap_ref!r}")

    def with_(self, **changes: Any) -> "ConverterParams":
        """Copy with some fields replaced; keeps x_eq consistent if x_arm/x_t change."""
        if ("x_arm_pu" in changes or "x_t_pu" in changes) and "x_eq_pu" not in changes:
            changes["x_eq_pu"] = changes.get("x_t_pu", self.x_t_pu) + changes.get("x_arm_pu", self.x_arm_pu)
        return replace(self, **changes)


@dataclass(frozen=True)
class DerivedConstants:
    u_cap_nominal: float
    e_req: float
    c1: float
    i_base: float
    u_acv_rms: float
    omega: float
    z_base: float
    l_eq: float
    l_arm: float
    l_t: float
    x_arm_loop_pu: float


def derive_constants(params: ConverterParams) -> DerivedConstants:
    """Closed-form derived constants for ``params``.

    ``e_req`` is the rated stored capacitor energy of all six arms divided by
    S_N (seconds) and ``c1 = 1 / (8 U_ACV* w E_req)`` is the ripple coefficient
    used by the direct and improved-direct steady-state equations.
    """
    params.validate()
    n = params.n_submodules
    u_capn = params.u_dc_nominal / n
    e_req = 6.0 * (0.5 * params.c_sm * u_capn**2 * n) / params.s_rated
    omega = params.omega
    c1 = 1.0 / (8.0 * params.u_acv_pu * omega * e_req)
    u_acv_rms = params.u_acv_pu * (params.u_dc_nominal / 2.0) / math.sqrt(2.0)
    i_base = params.s_rated / (3.0 * u_acv_rms)
    z_base = u_acv_rms / i_base
    x_arm_loop = ARM_REFERRAL_FACTOR * params.x_arm_pu
    l_eq = params.x_eq_pu * z_base / omega
    l_arm = x_arm_loop * z_base / omega
    return DerivedConstants(
        u_cap_nominal=u_capn,
        e_req=e_req,
        c1=c1,
        i_base=i_base,
        u_acv_rms=u_acv_rms,
        omega=omega,
        z_base=z_base,
        l_eq=l_eq,
        l_arm=l_arm,
        l_t=l_eq - l_arm / 2.0,
        x_arm_loop_pu=x_arm_loop,
    )


@dataclass(frozen=True)
class OperatingPoint:
    i_ac_pu: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.i_ac_pu) and self.i_ac_pu >= 0.0):
            raise InvalidParameterError("i_ac_pu", f"must be >= 0, got {self.i_ac_pu!r}")
        if not math.isfinite(self.phi):
            raise InvalidParameterError("phi", "must be finite")
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    @property
    def q_pu(self) -> float:
        return self.i_ac_pu * math.sin(self.phi)

    @property
    def p_pu(self) -> float:
        return self.i_ac_pu * math.cos(self.phi)


@dataclass(frozen=True)
class RequiredRange:
    q_max_pu: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.q_max_pu <= 1.0):
            raise InvalidParameterError("q_max_pu", f"must lie in (0, 1], got {self.q_max_pu!r}")


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def boundary_profile(rng: RequiredRange, phi: float) -> float:
    """Required-range boundary current I(phi) = min(1, Q_max / |sin phi|)."""
    s = abs(math.sin(phi))
    if s * 1.0 <= rng.q_max_pu:
        return 1.0
    return rng.q_max_pu / s


def pq_of(point: OperatingPoint) -> tuple[float, float]:
    return point.p_pu, point.q_pu


# Fundamental frequency is not given for either parameter set; 50 Hz assumed.
PRESETS: dict[str, dict[str, Any]] = {
    "table1": dict(
        converter=dict(
            u_dc_nominal_v=400e3,
            n_submodules=200,
            c_sm_farads=18.6e-3,
            s_rated_va=1250e6,
            p_rated_w=1250e6,
            x_eq_pu=0.25,
            x_arm_pu=0.15,
            x_t_pu=0.10,
            u_acv_pu=0.86,
            frequency_hz=50.0,
        ),
        range=dict(q_max_pu=0.5),
    ),
    # laboratory prototype; 74 V read as phase RMS, transformer leakage
    # assumed equal to the valve-referred arm reactance
    "table2": dict(
        converter=dict(
            u_dc_nominal_v=300.0,
            n_submodules=4,
            c_sm_farads=1.17e-3,
            s_rated_va=3000.0,
            p_rated_w=3000.0,
            x_eq_pu=2 * 0.38707,
            x_arm_pu=0.38707,
            x_t_pu=0.38707,
            u_acv_pu=round(math.sqrt(2) * 74.0 / 150.0, 6),
            frequency_hz=50.0,
        ),
        range=dict(q_max_pu=0.5),
    ),
}

_CONVERTER_KEYS = {
    "u_dc_nominal_v": "u_dc_nominal",
    "n_submodules": "n_submodules",
    "c_sm_farads": "c_sm",
    "s_rated_va": "s_rated",
    "p_rated_w": "p_rated",
    "x_eq_pu": "x_eq_pu",
    "x_arm_pu": "x_arm_pu",
    "x_t_pu": "x_t_pu",
    "u_acv_pu": "u_acv_pu",
    "frequency_hz": "frequency",
    "u_cap_ref_v": "u_cap_ref",
}
_RANGE_KEYS = {"q_max_pu"}


@dataclass(frozen=True)
class Config:
    params: ConverterParams
    required: RequiredRange = field(default_factory=RequiredRange)

    def to_mapping(self) -> dict[str, dict[str, Any]]:
        inverse = {v: k for k, v in _CONVERTER_KEYS.items()}
        conv = {inverse[k]: v for k, v in asdict(self.params).items() if v is not None}
        return {"converter": conv, "range": {"q_max_pu": self.required.q_max_pu}}


def config_from_mapping(data: Mapping[str, Any]) -> Config:
    """Build a Config from a nested mapping (``converter``/``range`` sections)
    or a flat one carrying the same keys."""
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, Mapping):
            flat.update(value)
        else:
            flat[key] = value
    unknown = set(flat) - set(_CONVERTER_KEYS) - _RANGE_KEYS
    if unknown:
        raise InvalidParameterError(sorted(unknown)[0], "unknown configuration key")
    kwargs: dict[str, Any] = {}
    for key, attr in _CONVERTER_KEYS.items():
        if key in flat:
            kwargs[attr] = flat[key]
        elif key not in ("u_cap_ref_v", "frequency_hz"):
            raise InvalidParameterError(key, "missing from configuration")
    try:
        kwargs = {k: (int(v) if k == "n_submodules" else float(v)) for k, v in kwargs.items()}
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError("config", str(exc)) from None
    params = ConverterParams(**kwargs)
    params.validate()
    required = RequiredRange(float(flat.get("q_max_pu", 0.5)))
    return Config(params, required)


def preset(name: str) -> Config:
    try:
        return config_from_mapping(PRESETS[name])
    except KeyError:
        raise InvalidParameterError("preset", f"unknown preset {name!r} (valid: {', '.join(PRESETS)})") from None


def load_config(path: str | Path) -> Config:
    """Read a YAML (or JSON, which YAML parses) configuration file."""
    import yaml

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidParameterError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidParameterError("config", f"cannot parse {path}: {exc}") from None
    if not isinstance(data, Mapping):
        raise InvalidParameterError("config", f"{path} does not contain a mapping")
    return config_from_mapping(data)


def param_field_names() -> list[str]:
    return [f.name for f in fields(ConverterParams)]
