"""Command-line front end: ``mmc-modlab <command> [options]``.

CSV is written to ``--out DIR`` (with a ``manifest.json``) or, when no
directory is given, to stdout with the summary line on stderr.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 simulator abort.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import Config, OperatingPoint, RequiredRange, Scheme, load_config, preset
from .errors import (
    BracketError,
    InvalidParameterError,
    ModlabError,
    NotSettledError,
    SimulationAborted,
    SolverError,
)
from .output import RunManifest, csv_text, records_csv, svg_lines, table_csv, write_text

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_SIM = 4

ANALYTIC_SCHEMES = (Scheme.DIRECT, Scheme.INDIRECT_CLOSED_LOOP, Scheme.IMPROVED_DIRECT)


class _Context:
    """Where a command sends its files and summary lines."""

    def __init__(self, args: argparse.Namespace, config: Config):
        self.args = args
        self.config = config
        self.out = Path(args.out) if args.out else None
        self.written: list[str] = []
        self.settings: dict = {}
        self.t0 = time.perf_counter()

    def emit_csv(self, name: str, text: str) -> None:
        if self.out is None:
            sys.stdout.write(text)
        else:
            write_text(self.out / name, text)
            self.written.append(name)

    def emit_svg(self, name: str, text: str) -> None:
        if self.args.svg:
            target = self.out or Path(".")
            write_text(target / name, text)
            self.written.append(name)

    def summary(self, line: str) -> None:
        stream = sys.stdout if self.out is not None else sys.stderr
        print(line, file=stream)

    def finish(self) -> None:
        if self.out is None:
            return
        manifest = RunManifest(
            command=self.args.command,
            parameters=self.config.to_mapping(),
            version=__version__,
            settings=self.settings,
            outputs=list(self.written),
            wall_clock_s=time.perf_counter() - self.t0,
        )
        write_text(self.out / "manifest.json", manifest.to_json())


# ---------------------------------------------------------------- argument helpers


def _angle(args, value: float) -> float:
    return math.radians(value) if args.deg else value


def _point_arg(args, text: str) -> OperatingPoint:
    try:
        i_txt, phi_txt = text.split(",")
        return OperatingPoint(float(i_txt), _angle(args, float(phi_txt)))
    except ValueError:
        raise InvalidParameterError("point", f"expected 'I,phi', got {text!r}") from None


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else preset(args.preset)
    params = cfg.params
    if args.uacv is not None:
        params = params.with_(u_acv_pu=args.uacv)
    if getattr(args, "c_sm", None) is not None:
        params = params.with_(c_sm=args.c_sm)
    params.validate()
    required = RequiredRange(args.qmax) if args.qmax is not None else cfg.required
    return Config(params, required)


def _schemes(args, default: Sequence[Scheme]) -> list[Scheme]:
    if not args.scheme:
        return list(default)
    return [Scheme.parse(s) for s in args.scheme]


def _tag(scheme: Scheme) -> str:
    return scheme.value.replace("-", "_")


def _merge_columns(key_cols: Sequence[str], per_scheme: dict[Scheme, list[dict]], value_cols: Sequence[str]) -> str:
    """Side-by-side CSV: shared key columns then one block per scheme."""
    schemes = list(per_scheme)
    first = per_scheme[schemes[0]]
    if len(schemes) == 1:
        return records_csv(first, list(key_cols) + list(value_cols))
    header = list(key_cols) + [f"{c}_{_tag(s)}" for s in schemes for c in value_cols]
    rows = []
    for idx, rec in enumerate(first):
        row = [rec[c] for c in key_cols]
        for s in schemes:
            row.extend(per_scheme[s][idx][c] for c in value_cols)
        rows.append(row)
    return csv_text(header, rows)


# ---------------------------------------------------------------- commands


def cmd_point(ctx: _Context) -> int:
    from .steady_state import solve
    from .waveform import cap_voltage_report, rwf_margin, waveform_table

    args, params = ctx.args, ctx.config.params
    scheme = Scheme.parse(args.scheme[0] if args.scheme else "direct")
    point = OperatingPoint(args.i, _angle(args, args.phi))
    sol = solve(scheme, params, point)
    rec = sol.to_record()
    m = rwf_margin(scheme, params, sol)
    rec.update(m.to_record())
    cap = cap_voltage_report(scheme, params, sol)
    rec.update(cap_peak_pu=cap.peak, cap_dc_pu=cap.dc)
    ctx.emit_csv("point.csv", records_csv([rec]))
    if ctx.out is not None:
        ctx.emit_csv("waveform.csv", table_csv(waveform_table(scheme, params, sol)))
    ctx.summary(f"{scheme.value}: delta_f_margin={m.delta_f_margin:.6f} dc_cap_deviation_pu={sol.dc_cap_deviation_pu:+.6f}")
    return EXIT_OK


def cmd_boundary(ctx: _Context) -> int:
    from .region import BOUNDARY_FIELDS, scan_boundary

    args, cfg = ctx.args, ctx.config
    dphi = _angle(args, args.dphi) if args.dphi is not None else math.pi / 180.0
    ctx.settings.update(dphi=dphi, constant_current=args.i)
    scans = {}
    for s in _schemes(args, ANALYTIC_SCHEMES):
        scans[s] = scan_boundary(cfg.params, s, cfg.required, dphi, current=args.i, workers=args.workers)
    value_cols = [c for c in BOUNDARY_FIELDS if c not in ("phi", "i_pu")]
    ctx.emit_csv("boundary.csv", _merge_columns(("phi", "i_pu"), {s: sc.records for s, sc in scans.items()}, value_cols))
    ctx.emit_svg(
        "boundary.svg",
        svg_lines({s.value: (sc.column("phi"), sc.column("delta_f_margin")) for s, sc in scans.items()}, "delta F vs phi"),
    )
    any_ok = False
    for s, sc in scans.items():
        worst, at = sc.min_margin()
        any_ok |= bool(sc.ok.any())
        ctx.summary(f"{s.value}: rows={len(sc.records)} min_delta_f={worst:.6f} at phi={at:.6f}")
    return EXIT_OK if any_ok else EXIT_SOLVER


def cmd_region(ctx: _Context) -> int:
    from .region import DEFAULT_REGION_DI, DEFAULT_REGION_DPHI, required_region, scan_region

    args, cfg = ctx.args, ctx.config
    dphi = _angle(args, args.dphi) if args.dphi is not None else DEFAULT_REGION_DPHI
    di = args.di if args.di is not None else DEFAULT_REGION_DI
    ctx.settings.update(dphi=dphi, di=di)
    regions = {s: scan_region(cfg.params, s, cfg.required, dphi, di, workers=args.workers) for s in _schemes(args, ANALYTIC_SCHEMES)}
    req = required_region(cfg.required, dphi)
    ctx.emit_csv(
        "region.csv",
        _merge_columns(("phi_rad",), {s: r.records() for s, r in regions.items()}, ("i_max_pu", "p_pu", "q_pu")),
    )
    curves = {"required": (req.i_max * np.cos(req.phi), req.i_max * np.sin(req.phi))}
    for s, r in regions.items():
        curves[s.value] = (r.i_max * np.cos(r.phi), r.i_max * np.sin(r.phi))
    ctx.emit_svg("region.svg", svg_lines(curves, "linear PQ region (P*, Q*)"))
    first = next(iter(regions.values()))
    for s, r in regions.items():
        ctx.summary(
            f"{s.value}: area={r.area:.6f} area/required={r.area / req.area:.4f} "
            f"area/{first.scheme.value}={r.area / first.area:.4f}"
        )
    return EXIT_OK


def cmd_msacv(ctx: _Context) -> int:
    from .region import MSACV_DPHI, msacv

    args, cfg = ctx.args, ctx.config
    dphi = _angle(args, args.dphi) if args.dphi is not None else MSACV_DPHI
    ctx.settings.update(dphi=dphi, tol=args.tol)
    rows = []
    for s in _schemes(args, ANALYTIC_SCHEMES):
        res = msacv(cfg.params, s, cfg.required, args.tol, dphi=dphi, workers=args.workers)
        rows.append({"scheme": s.value, **res.to_record()})
        ctx.summary(f"{s.value}: msacv={res.u_msacv_pu:.4f}")
    ctx.emit_csv("msacv.csv", records_csv(rows))
    return EXIT_OK


def cmd_sizecap(ctx: _Context) -> int:
    from .region import MSACV_DPHI, size_energy_storage

    args, cfg = ctx.args, ctx.config
    dphi = _angle(args, args.dphi) if args.dphi is not None else MSACV_DPHI
    ctx.settings.update(dphi=dphi, peak_limit=args.peak_limit, tol=args.tol)
    rows = []
    for s in _schemes(args, ANALYTIC_SCHEMES):
        res = size_energy_storage(
            cfg.params, s, cfg.required, args.peak_limit, u_acv_pu=args.uacv, dphi=dphi, workers=args.workers
        )
        rows.append({"scheme": s.value, **res.to_record()})
        ctx.summary(
            f"{s.value}: u_acv={res.u_msacv_pu:.4f} c_sm={res.c_sm_required * 1e3:.4f} mF e_req={res.e_req_at_solution:.6f} J/VA"
        )
    ctx.emit_csv("sizecap.csv", records_csv(rows))
    return EXIT_OK


def _controller_kw(args) -> dict:
    kw = {}
    if args.ramp_periods is not None:
        kw["ramp_periods"] = args.ramp_periods
    if args.r_pu is not None:
        kw["r_pu"] = args.r_pu
    return kw


def cmd_simulate(ctx: _Context) -> int:
    from .simulator import ControllerConfig, analytic_comparison, extract_metrics, simulate

    args, params = ctx.args, ctx.config.params
    scheme = Scheme.parse(args.scheme[0] if args.scheme else "direct")
    point = OperatingPoint(args.i, _angle(args, args.phi))
    ctrl = ControllerConfig(scheme, point, reference_feed=args.openloop, **_controller_kw(args))
    dt = params.period / args.steps_per_period
    ctx.settings.update(periods=args.periods, steps_per_period=args.steps_per_period, record_periods=args.record_periods)
    series = simulate(params, ctrl, args.periods * params.period, dt, record_periods=args.record_periods)
    metrics = extract_metrics(series, 1)
    current_err = abs(metrics.i_ac_pu - point.i_ac_pu) / max(point.i_ac_pu, 1e-9)
    phase_err = math.degrees(abs(math.remainder(metrics.phi - point.phi, 2 * math.pi)))
    ctx.emit_csv("series.csv", table_csv(series.table()))
    ctx.emit_csv("metrics.csv", records_csv([metrics.to_record()]))
    ctx.emit_csv("comparison.csv", records_csv(analytic_comparison(params, scheme, metrics)))
    ctx.summary(
        f"{scheme.value}: i_ac={metrics.i_ac_pu:.5f} current_error={100 * current_err:.3f}% "
        f"phase_error={phase_err:.3f} deg delta_f={metrics.delta_f_margin:.5f}"
    )
    return EXIT_OK


def cmd_step(ctx: _Context) -> int:
    from .simulator import simulate_step

    args, params = ctx.args, ctx.config.params
    scheme = Scheme.parse(args.scheme[0] if args.scheme else "direct")
    a, b = _point_arg(args, args.from_point), _point_arg(args, args.to_point)
    T = params.period
    ctx.settings.update(t_step_periods=args.t_step, periods=args.periods, csv_stride=args.csv_stride)
    series, rep = simulate_step(
        params, scheme, a, b, args.t_step * T, args.periods * T, params.period / args.steps_per_period, **_controller_kw(args)
    )
    stride = max(1, args.csv_stride)
    ctx.emit_csv("series.csv", table_csv({k: v[::stride] for k, v in series.table().items()}))
    rec = {
        "settled": rep.settled,
        "settling_time_s": rep.settling_time,
        "max_p_excursion_pu": rep.max_p_excursion_pu,
        "max_q_excursion_pu": rep.max_q_excursion_pu,
    }
    if rep.final_metrics is not None:
        rec.update(rep.final_metrics.to_record())
    ctx.emit_csv("step.csv", records_csv([rec]))
    ctx.summary(
        f"{scheme.value}: settled={rep.settled} settling_time={rep.settling_time:.4f} s "
        f"max_dP={rep.max_p_excursion_pu:.4f} max_dQ={rep.max_q_excursion_pu:.4f}"
    )
    return EXIT_OK


def cmd_compare(ctx: _Context) -> int:
    from .waveform import EQUIVALENCE_TOL, equivalence_gap

    args, params = ctx.args, ctx.config.params
    point = OperatingPoint(args.i, _angle(args, args.phi))
    gap = equivalence_gap(params, point)
    verdict = "PASS" if gap < EQUIVALENCE_TOL else "FAIL"
    ctx.emit_csv("compare.csv", records_csv([{"i_pu": point.i_ac_pu, "phi": point.phi, "gap": gap, "verdict": verdict}]))
    ctx.summary(f"equivalence_gap={gap:.6f} tol={EQUIVALENCE_TOL} {verdict}")
    return EXIT_OK


COMMANDS = {
    "point": cmd_point,
    "boundary": cmd_boundary,
    "region": cmd_region,
    "msacv": cmd_msacv,
    "sizecap": cmd_sizecap,
    "simulate": cmd_simulate,
    "step": cmd_step,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--preset", default="table1", help="built-in parameter set (table1, table2)")
    src.add_argument("--config", help="YAML configuration file")
    common.add_argument("--scheme", action="append", help="modulation scheme; repeat for side-by-side output")
    common.add_argument("--uacv", type=float, help="override the valve-side voltage (p.u.)")
    common.add_argument("--qmax", type=float, help="override the required reactive range (p.u.)")
    common.add_argument("--deg", action="store_true", help="angles are given in degrees")
    common.add_argument("--out", help="output directory (CSV to stdout when omitted)")
    common.add_argument("--svg", action="store_true", help="also write an SVG chart")
    common.add_argument("--workers", type=int, help="sweep worker processes (default MMC_MODLAB_THREADS or CPU count)")

    parser = argparse.ArgumentParser(prog="mmc-modlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("point", parents=[common], help="steady state and margins at one operating point")
    p.add_argument("--i", type=float, required=True)
    p.add_argument("--phi", type=float, required=True)

    p = sub.add_parser("boundary", parents=[common], help="margins along the required-range boundary")
    p.add_argument("--dphi", type=float)
    p.add_argument("--i", type=float, help="scan at a constant current instead of the boundary")

    p = sub.add_parser("region", parents=[common], help="largest linear-modulation PQ region")
    p.add_argument("--dphi", type=float)
    p.add_argument("--di", type=float)

    p = sub.add_parser("msacv", parents=[common], help="maximum valve-side voltage keeping the range linear")
    p.add_argument("--dphi", type=float)
    p.add_argument("--tol", type=float, default=1e-3)

    p = sub.add_parser("sizecap", parents=[common], help="submodule capacitance for a capacitor peak limit")
    p.add_argument("--dphi", type=float)
    p.add_argument("--peak-limit", type=float, default=1.1)
    p.add_argument("--tol", type=float, default=1e-4)

    for name, helptext in (("simulate", "average-model simulation to steady state"), ("step", "reference step transient")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--periods", type=float, default=60.0 if name == "simulate" else 100.0)
        p.add_argument("--steps-per-period", type=int, default=4000)
        p.add_argument("--ramp-periods", type=float)
        p.add_argument("--r-pu", type=float)
        if name == "simulate":
            p.add_argument("--i", type=float, required=True)
            p.add_argument("--phi", type=float, required=True)
            p.add_argument("--openloop", action="store_true", help="feed the solved references, ac loop disabled")
            p.add_argument("--record-periods", type=float, default=3.0)
        else:
            p.add_argument("--from", dest="from_point", required=True, help="'I,phi' before the step")
            p.add_argument("--to", dest="to_point", required=True, help="'I,phi' after the step")
            p.add_argument("--t-step", type=float, default=40.0, help="step time in periods")
            p.add_argument("--csv-stride", type=int, default=20, help="write every n-th sample of the series")

    p = sub.add_parser("compare", parents=[common], help="indirect vs improved-direct reference waveforms")
    p.add_argument("--i", type=float, required=True)
    p.add_argument("--phi", type=float, required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on malformed flags
    try:
        ctx = _Context(args, _config(args))
        code = COMMANDS[args.command](ctx)
        ctx.finish()
        return code
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, BracketError) as exc:
        block = getattr(exc, "block", "")
        where = f" [{block}]" if block else ""
        print(f"solver error{where}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (SimulationAborted, NotSettledError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except ModlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
