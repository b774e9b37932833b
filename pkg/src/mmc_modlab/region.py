"""Sweeps over the PQ plane: boundary scans, linear regions, MS-ACV and capacitor sizing."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    ConverterParams,
    OperatingPoint,
    RequiredRange,
    Scheme,
    boundary_profile,
    derive_constants,
)
from .errors import BracketError, InvalidParameterError, ModlabError
from .steady_state import solve
from .waveform import cap_voltage_report, rwf_margin

DEFAULT_REGION_DPHI = math.pi / 360.0
DEFAULT_REGION_DI = 0.005
MSACV_DPHI = math.pi / 180.0
MSACV_BRACKET = (0.5, 1.2)
CAP_BRACKET = (1e-3, 100e-3)

BOUNDARY_FIELDS = ("phi", "i_pu", "f_peak", "f_valley", "delta_f_margin", "cap_peak_pu", "cap_dc_pu", "status")


def worker_count(requested: int | None = None) -> int:
    """Number of sweep workers: explicit request, else MMC_MODLAB_THREADS, else CPU count."""
    if requested is None:
        env = os.environ.get("MMC_MODLAB_THREADS")
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise InvalidParameterError("MMC_MODLAB_THREADS", f"not an integer: {env!r}") from None
        else:
            requested = os.cpu_count() or 1
    return max(1, int(requested))


def _parallel_map(fn: Callable, items: Sequence, workers: int | None) -> list:
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (4 * n))
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def phi_grid(dphi: float) -> np.ndarray:
    """Uniform grid of round(2*pi/dphi) angles starting at -pi."""
    if not (dphi > 0 and math.isfinite(dphi)):
        raise InvalidParameterError("dphi", f"must be positive, got {dphi!r}")
    n = max(1, int(round(2.0 * math.pi / dphi)))
    return -math.pi + 2.0 * math.pi * np.arange(n) / n


# ---------------------------------------------------------------- point pipeline


def evaluate_point(
    params: ConverterParams, scheme: Scheme, point: OperatingPoint, with_cap: bool = True
) -> dict:
    """Solve one point and return its boundary-scan record; failures land in ``status``."""
    rec = dict.fromkeys(BOUNDARY_FIELDS, float("nan"))
    rec["phi"], rec["i_pu"] = point.phi, point.i_ac_pu
    try:
        sol = solve(scheme, params, point)
        m = rwf_margin(scheme, params, sol)
        rec.update(f_peak=m.f_peak, f_valley=m.f_valley, delta_f_margin=m.delta_f_margin)
        if with_cap:
            cap = cap_voltage_report(scheme, params, sol)
            rec.update(cap_peak_pu=cap.peak, cap_dc_pu=cap.dc)
        rec["status"] = "ok"
    except ModlabError as exc:
        rec["status"] = f"{type(exc).__name__}: {exc}"
    return rec


@dataclass(frozen=True)
class _BoundaryTask:
    params: ConverterParams
    scheme: Scheme
    q_max: float
    with_cap: bool
    current: float | None

    def __call__(self, phi: float) -> dict:
        i = boundary_profile(RequiredRange(self.q_max), phi) if self.current is None else self.current
        rec = evaluate_point(self.params, self.scheme, OperatingPoint(i, float(phi)), self.with_cap)
        rec["phi"] = float(phi)  # keep the grid angle; the point itself wraps -pi to +pi
        return rec


@dataclass(frozen=True)
class BoundaryScan:
    scheme: Scheme
    records: list[dict]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)

    @property
    def ok(self) -> np.ndarray:
        return np.array([r["status"] == "ok" for r in self.records])

    def min_margin(self) -> tuple[float, float]:
        """(min delta_f_margin, phi at the minimum); a failed row counts as -inf."""
        margins = np.where(self.ok, self.column("delta_f_margin"), -np.inf)
        idx = int(np.argmin(margins))
        return float(margins[idx]), float(self.records[idx]["phi"])

    def worst_cap_peak(self) -> tuple[float, dict]:
        peaks = np.where(self.ok, self.column("cap_peak_pu"), np.inf)
        idx = int(np.argmax(peaks))
        return float(peaks[idx]), self.records[idx]


def scan_boundary(
    params: ConverterParams,
    scheme: Scheme | str,
    rng: RequiredRange,
    dphi: float,
    *,
    with_cap: bool = True,
    current: float | None = None,
    workers: int | None = None,
) -> BoundaryScan:
    """Evaluate the full pipeline along the required-range boundary.

    ``current`` replaces the boundary current with a constant (diagnostics).
    """
    scheme = Scheme.parse(scheme)
    if not (0.0 < dphi <= math.pi / 18.0 + 1e-15):
        raise InvalidParameterError("dphi", f"must lie in (0, pi/18], got {dphi!r}")
    task = _BoundaryTask(params, scheme, rng.q_max_pu, with_cap, current)
    records = _parallel_map(task, list(phi_grid(dphi)), workers)
    return BoundaryScan(scheme, records)


# ---------------------------------------------------------------- region


@dataclass(frozen=True)
class PqRegion:
    scheme: Scheme
    phi: np.ndarray
    i_max: np.ndarray
    dphi: float
    area: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "area", region_area(self))

    def records(self) -> list[dict]:
        return [
            {"phi_rad": p, "i_max_pu": i, "p_pu": i * math.cos(p), "q_pu": i * math.sin(p)}
            for p, i in zip(self.phi.tolist(), self.i_max.tolist())
        ]


def _is_linear(params: ConverterParams, scheme: Scheme, point: OperatingPoint) -> bool:
    rec = evaluate_point(params, scheme, point, with_cap=False)
    return rec["status"] == "ok" and rec["delta_f_margin"] > 0.0


@dataclass(frozen=True)
class _RegionTask:
    params: ConverterParams
    scheme: Scheme
    q_max: float
    di: float

    def __call__(self, phi: float) -> float:
        phi = float(phi)
        i = boundary_profile(RequiredRange(self.q_max), phi)
        while i > 0.0:
            if _is_linear(self.params, self.scheme, OperatingPoint(i, phi)):
                return i
            i -= self.di
            if i < 1e-12:
                i = 0.0
        return 0.0


def scan_region(
    params: ConverterParams,
    scheme: Scheme | str,
    rng: RequiredRange,
    dphi: float = DEFAULT_REGION_DPHI,
    di: float = DEFAULT_REGION_DI,
    *,
    workers: int | None = None,
) -> PqRegion:
    """Largest linear-modulation current at each angle, searched downward
    from the required boundary in steps of ``di``."""
    scheme = Scheme.parse(scheme)
    if not di > 0:
        raise InvalidParameterError("di", f"must be positive, got {di!r}")
    grid = phi_grid(dphi)
    i_max = _parallel_map(_RegionTask(params, scheme, rng.q_max_pu, di), list(grid), workers)
    return PqRegion(scheme, grid, np.array(i_max, dtype=float), 2.0 * math.pi / len(grid))


def region_area(region: PqRegion) -> float:
    """Polar area 1/2 * sum(I^2) * dphi over a uniform periodic grid."""
    if len(region.i_max) == 0:
        raise InvalidParameterError("region", "empty region")
    return 0.5 * float(np.sum(np.asarray(region.i_max) ** 2)) * region.dphi


def required_region(rng: RequiredRange, dphi: float = DEFAULT_REGION_DPHI) -> PqRegion:
    grid = phi_grid(dphi)
    i = np.array([boundary_profile(rng, p) for p in grid])
    return PqRegion(Scheme.DIRECT, grid, i, 2.0 * math.pi / len(grid))


# ---------------------------------------------------------------- sizing


@dataclass(frozen=True)
class SizingResult:
    u_msacv_pu: float
    c_sm_required: float
    e_req_at_solution: float
    worst_point: tuple[float, float]
    bracket: tuple[float, float] = (float("nan"), float("nan"))

    def to_record(self) -> dict:
        return {
            "u_msacv_pu": self.u_msacv_pu,
            "c_sm_required": self.c_sm_required,
            "e_req_at_solution": self.e_req_at_solution,
            "worst_phi": self.worst_point[0],
            "worst_i_pu": self.worst_point[1],
            "bracket_lo": self.bracket[0],
            "bracket_hi": self.bracket[1],
        }


def _min_boundary_margin(params, scheme, rng, dphi, workers) -> tuple[float, float]:
    return scan_boundary(params, scheme, rng, dphi, with_cap=False, workers=workers).min_margin()


def msacv(
    params: ConverterParams,
    scheme: Scheme | str,
    rng: RequiredRange,
    tol: float = 1e-3,
    *,
    dphi: float = MSACV_DPHI,
    workers: int | None = None,
) -> SizingResult:
    """Largest valve-side voltage keeping the whole required range linear,
    found by bisection on the boundary-margin predicate."""
    scheme = Scheme.parse(scheme)
    if tol < 1e-5:
        raise InvalidParameterError("tol", f"must be >= 1e-5, got {tol!r}")

    def feasible(u: float) -> tuple[bool, float]:
        worst, phi = _min_boundary_margin(params.with_(u_acv_pu=u), scheme, rng, dphi, workers)
        return worst >= 0.0, phi

    lo, hi = MSACV_BRACKET
    ok_lo, phi_lo = feasible(lo)
    ok_hi, _ = feasible(hi)
    if not ok_lo or ok_hi:
        raise BracketError(
            f"margin predicate is {ok_lo} at u={lo} and {ok_hi} at u={hi}; expected feasible then infeasible"
        )
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        ok, phi = feasible(mid)
        if ok:
            lo, phi_lo = mid, phi
        else:
            hi = mid
    u = 0.5 * (lo + hi)
    worst_i = boundary_profile(rng, phi_lo)
    return SizingResult(u, params.c_sm, derive_constants(params).e_req, (phi_lo, worst_i), (lo, hi))


def size_energy_storage(
    params: ConverterParams,
    scheme: Scheme | str,
    rng: RequiredRange,
    peak_limit: float = 1.1,
    tol: float = 1e-4,
    *,
    u_acv_pu: float | None = None,
    dphi: float = MSACV_DPHI,
    msacv_tol: float = 1e-3,
    workers: int | None = None,
) -> SizingResult:
    """Smallest submodule capacitance keeping the worst boundary capacitor
    peak at ``peak_limit`` while running at the scheme's MS-ACV."""
    scheme = Scheme.parse(scheme)
    if not peak_limit > 1.0:
        raise InvalidParameterError("peak_limit", f"must exceed 1, got {peak_limit!r}")
    if u_acv_pu is None:
        u_acv_pu = msacv(params, scheme, rng, msacv_tol, dphi=dphi, workers=workers).u_msacv_pu
    base = params.with_(u_acv_pu=u_acv_pu)

    def worst_peak(c: float) -> tuple[float, dict]:
        scan = scan_boundary(base.with_(c_sm=c), scheme, rng, dphi, workers=workers)
        return scan.worst_cap_peak()

    lo, hi = CAP_BRACKET
    peak_lo, _ = worst_peak(lo)
    peak_hi, rec_hi = worst_peak(hi)
    if peak_hi > peak_limit or peak_lo <= peak_limit:
        raise BracketError(
            f"capacitor peak is {peak_lo:.4g} at {lo * 1e3:g} mF and {peak_hi:.4g} at {hi * 1e3:g} mF; "
            f"limit {peak_limit} not bracketed"
        )
    while True:
        mid = 0.5 * (lo + hi)
        peak, rec = worst_peak(mid)
        if peak <= peak_limit:
            hi, peak_hi, rec_hi = mid, peak, rec
        else:
            lo = mid
        if (peak_limit - peak_hi) < tol or (hi - lo) < 1e-9 * hi:
            break
    sized = base.with_(c_sm=hi)
    return SizingResult(
        u_acv_pu, hi, derive_constants(sized).e_req, (rec_hi["phi"], rec_hi["i_pu"]), (lo, hi)
    )

