"""Batch front door: parse a config, run one mode, write dumps and a report.

    semigeo <mode> --config run.cfg --out results/ [--threads N]

Modes: forward, reconstruct-metric, reconstruct-connection,
roundtrip-metric, roundtrip-connection, check-chart.

Exit codes: 0 success; 2 bad configuration or invalid input data;
3 numerical stop (blow-up or degeneracy; partial dumps are still
written); 4 round-trip residual above its gate.  When a run both stops
early and fails its round-trip gate, the stop wins: 3.

Every artifact is deterministic: fixed row order, fixed report key
order, floats via repr (which round-trips binary64 exactly), no
timestamps.  Running the same config twice gives byte-identical files.

Round-trip modes re-run the forward curvature oracle on the
reconstruction and report the largest discrepancy against the
prescribed sources as ``max_error``.  The pass gate adapts to the
lattice: the pipeline is repeated on a once-coarsened chart and the
difference of the two residuals gives a second-order Richardson
estimate of the fine-lattice discretization error (``error_estimate``).
The gate is max(roundtrip_tol, 10 * error_estimate): a residual of pure
discretization origin sits well under it, while source fields that are
not the curvature of any connection (or metric) leave a resolution-
independent residual that the gate flags as exit 4.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .chart_check import (
    geodesic_shoot,
    lemma1_check,
    pre_semigeodesic_residual,
    semigeodesic_check,
    unit_speed_residual,
)
from .config import MODES, defaulted_components, load_config, validate_for_mode
from .connection_recon import (
    ConnectionCurvatureSpec,
    HypersurfaceConnectionData,
    reconstruct_connection,
)
from .curvature import (
    ConnectionField,
    MetricField,
    christoffel_from_metric,
    curvature04_semigeo,
    curvature13,
    lower_and_check_identity,
)
from .errors import ConfigError, LeftDomain, SemigeoError
from .grid_field import ChartSpec, build_grid, write_curve_dump, write_tensor_dump
from .metric_recon import HypersurfaceMetricData, MetricCurvatureSpec, reconstruct_metric

SEMIGEO_TOL = 1e-12


def build_parser():
    parser = argparse.ArgumentParser(
        prog="semigeo",
        description="Reconstruct connections/metrics in tube charts and check them.",
    )
    parser.add_argument("mode", choices=MODES, help="what to run")
    parser.add_argument("--config", required=True, help="path to the run configuration")
    parser.add_argument("--out", default=None, help="output directory (or [run] out)")
    parser.add_argument(
        "--threads", type=int, default=1, help="worker threads for the marches"
    )
    return parser


# ------------------------------------------------------------------- report


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_report(out, lines, exit_code):
    with open(out / "report.txt", "w") as fh:
        for key, value in lines:
            fh.write(f"{key}: {_fmt(value)}\n")
        fh.write(f"exit_code: {exit_code}\n")


def read_report(path):
    """Parse a report file back into a dict (the inverse of the writer)."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            key, _, value = raw.rstrip("\n").partition(": ")
            out[key] = value
    return out


def _report_recon(lines, report):
    lines.append(("status", report.status))
    lines.append(("delta_hat_plus", report.delta_hat_plus))
    lines.append(("delta_hat_minus", report.delta_hat_minus))
    lines.append(("max_component", report.max_component))
    for key in sorted(report.diagnostics):
        lines.append((key, report.diagnostics[key]))


# ------------------------------------------------------------------ helpers


def _metric_inputs(cfg):
    n = cfg.chart.n
    init = HypersurfaceMetricData(
        n, g=cfg.fields.get("gtilde", {}), g1=cfg.fields.get("Gtilde", {})
    )
    sources = MetricCurvatureSpec(n, cfg.fields.get("a", {}))
    return init, sources


def _connection_inputs(cfg):
    n = cfg.chart.n
    init = HypersurfaceConnectionData(n, cfg.fields.get("gammatilde", {}))
    sources = ConnectionCurvatureSpec(n, cfg.fields.get("A", {}))
    return init, sources


def _coarse_chart(chart):
    """Once-coarsened chart for the Richardson estimate, or None."""
    res = tuple((r - 1) // 2 + 1 for r in chart.transverse_res)
    if any((r - 1) % 2 for r in chart.transverse_res) or any(r < 3 for r in res):
        return None
    lo, hi = chart.x1_range
    if (hi - lo) < 4.0 * chart.h1:
        return None
    return ChartSpec(
        n=chart.n,
        x1_range=chart.x1_range,
        h1=2.0 * chart.h1,
        transverse_box=chart.transverse_box,
        transverse_res=res,
        e=chart.e,
    )


def metric_roundtrip_residual(metric, sources, degeneracy_tol):
    """Forward-oracle discrepancy of a reconstructed metric, or None.

    Recomputes the prescribed axial curvature block from the metric by
    finite differences and returns the largest deviation from the
    sources over the metric's own grid (None when the grid is too short
    axially for the second-derivative stencil).
    """
    grid = metric.grid
    if grid.shape[0] < 4:
        return None, None
    axial = curvature04_semigeo(
        metric, degeneracy_tol=degeneracy_tol, semigeo_tol=SEMIGEO_TOL
    )
    target = sources.dense_on(grid)
    worst = 0.0
    for i in range(2, grid.n + 1):
        for j in range(i, grid.n + 1):
            diff = axial.component((1, i, j, 1)) - target[i - 2, j - 2]
            worst = max(worst, float(np.max(np.abs(diff))))
    return worst, axial


def connection_roundtrip_residual(conn, sources):
    """Forward-oracle discrepancy of a reconstructed connection, or None."""
    grid = conn.grid
    if grid.shape[0] < 3:
        return None, None
    r13 = curvature13(conn)
    target = sources.dense_on(grid)
    recovered = r13.dense[:, :, 0, 1:]
    worst = float(np.max(np.abs(recovered - target)))
    return worst, r13


def roundtrip_gate(residual, coarse_residual, roundtrip_tol):
    """(error_estimate, gate) from the fine and coarse residuals.

    Second-order Richardson: err_h ~ (res_2h - res_h) / 3.  A residual
    that does not shrink with refinement (incompatible sources) gives an
    estimate near 0, so the gate falls back to roundtrip_tol and flags
    it.
    """
    if residual is None or coarse_residual is None:
        return 0.0, roundtrip_tol
    estimate = max(coarse_residual - residual, 0.0) / 3.0
    return estimate, max(roundtrip_tol, 10.0 * estimate)


# --------------------------------------------------------------------- modes


def _run_forward(cfg, grid, out, threads):
    lines = [("mode", "forward")]
    tol = cfg.tolerances.degeneracy_tol
    if "g" in cfg.fields:
        metric = MetricField.from_fields(grid, cfg.fields["g"], e=cfg.chart.e)
        conn, first = christoffel_from_metric(metric, degeneracy_tol=tol)
        r13 = curvature13(conn)
        write_tensor_dump(out / "christoffel.csv", grid, [conn.tube(), first])
        write_tensor_dump(out / "curvature13.csv", grid, [r13.tube()])
        lines.append(("status", "Complete"))
        lines.append(("max_component", r13.max_abs()))
        r11, r1j = metric.semigeodesic_residuals()
        if max(r11, r1j) <= SEMIGEO_TOL:
            axial = curvature04_semigeo(metric, degeneracy_tol=tol, semigeo_tol=SEMIGEO_TOL)
            write_tensor_dump(out / "curvature04.csv", grid, [axial])
            _, identity = lower_and_check_identity(metric, r13, semigeo_tol=SEMIGEO_TOL)
            lines.append(("identity_residual", identity))
    else:
        conn = ConnectionField.from_fields(grid, cfg.fields["gamma"])
        r13 = curvature13(conn)
        write_tensor_dump(out / "curvature13.csv", grid, [r13.tube()])
        lines.append(("status", "Complete"))
        lines.append(("max_component", r13.max_abs()))
    return 0, lines


def _reconstruct_metric_once(cfg, chart, threads):
    grid = build_grid(chart)
    init, sources = _metric_inputs(cfg)
    metric, report = reconstruct_metric(
        init,
        sources,
        chart.e,
        chart,
        guards=cfg.tolerances.guards(),
        grid=grid,
        threads=threads,
        degeneracy_tol=cfg.tolerances.degeneracy_tol,
    )
    return metric, report, sources


def _run_reconstruct_metric(cfg, grid, out, threads, roundtrip=False):
    metric, report, sources = _reconstruct_metric_once(cfg, cfg.chart, threads)
    write_tensor_dump(out / "metric.csv", metric.grid, [metric.tube()])
    lines = [("mode", "roundtrip-metric" if roundtrip else "reconstruct-metric")]
    _report_recon(lines, report)
    code = 0 if report.complete else 3
    if roundtrip:
        residual, axial = metric_roundtrip_residual(
            metric, sources, cfg.tolerances.degeneracy_tol
        )
        if axial is not None:
            write_tensor_dump(out / "curvature_oracle.csv", metric.grid, [axial])
        coarse_residual = None
        coarse = _coarse_chart(cfg.chart)
        if coarse is not None and residual is not None:
            try:
                metric2, report2, _ = _reconstruct_metric_once(cfg, coarse, threads)
                if report2.complete:
                    coarse_residual, _ = metric_roundtrip_residual(
                        metric2, sources, cfg.tolerances.degeneracy_tol
                    )
            except SemigeoError:
                coarse_residual = None
        estimate, gate = roundtrip_gate(
            residual, coarse_residual, cfg.tolerances.roundtrip_tol
        )
        lines.append(("max_error", float("nan") if residual is None else residual))
        lines.append(("error_estimate", estimate))
        lines.append(("gate", gate))
        if code == 0 and residual is not None and residual > gate:
            code = 4
    return code, lines


def _reconstruct_connection_once(cfg, chart, threads):
    grid = build_grid(chart)
    init, sources = _connection_inputs(cfg)
    conn, report = reconstruct_connection(
        init,
        sources,
        chart,
        guards=cfg.tolerances.guards(),
        grid=grid,
        threads=threads,
    )
    return conn, report, sources


def _run_reconstruct_connection(cfg, grid, out, threads, roundtrip=False):
    conn, report, sources = _reconstruct_connection_once(cfg, cfg.chart, threads)
    write_tensor_dump(out / "connection.csv", conn.grid, [conn.tube()])
    lines = [("mode", "roundtrip-connection" if roundtrip else "reconstruct-connection")]
    _report_recon(lines, report)
    code = 0 if report.complete else 3
    if roundtrip:
        residual, r13 = connection_roundtrip_residual(conn, sources)
        if r13 is not None:
            write_tensor_dump(out / "curvature_oracle.csv", conn.grid, [r13.tube()])
        coarse_residual = None
        coarse = _coarse_chart(cfg.chart)
        if coarse is not None and residual is not None:
            try:
                conn2, report2, _ = _reconstruct_connection_once(cfg, coarse, threads)
                if report2.complete:
                    coarse_residual, _ = connection_roundtrip_residual(conn2, sources)
            except SemigeoError:
                coarse_residual = None
        estimate, gate = roundtrip_gate(
            residual, coarse_residual, cfg.tolerances.roundtrip_tol
        )
        lines.append(("max_error", float("nan") if residual is None else residual))
        lines.append(("error_estimate", estimate))
        lines.append(("gate", gate))
        if code == 0 and residual is not None and residual > gate:
            code = 4
    return code, lines


def _run_check_chart(cfg, grid, out, threads):
    lines = [("mode", "check-chart"), ("status", "Complete")]
    tol = cfg.tolerances.degeneracy_tol
    metric = None
    if "g" in cfg.fields:
        metric = MetricField.from_fields(grid, cfg.fields["g"], e=cfg.chart.e)
    if "gamma" in cfg.fields:
        conn = ConnectionField.from_fields(grid, cfg.fields["gamma"])
    else:
        conn, _ = christoffel_from_metric(metric, degeneracy_tol=tol)
    lines.append(("pre_semigeodesic_residual", pre_semigeodesic_residual(conn)))
    lines.append(("lemma1_residual", lemma1_check(conn)))
    if metric is not None:
        r11, r1j = semigeodesic_check(metric)
        lines.append(("semigeodesic_axial_residual", r11))
        lines.append(("semigeodesic_cross_residual", r1j))
        s_max = float(grid.x1_samples[-1])
        step = grid.spacing(1)
        if s_max >= step:
            mesh = grid.transverse_mesh()
            count = len(mesh[0])
            picks = np.unique(np.round(np.linspace(0, count - 1, 5)).astype(int))
            worst = 0.0
            v0 = np.zeros(grid.n)
            v0[0] = 1.0
            for rank, flat in enumerate(picks, start=1):
                x0 = np.array([0.0] + [float(m[flat]) for m in mesh])
                try:
                    curve = geodesic_shoot(conn, x0, v0, s_max, step)
                except LeftDomain as stop:
                    curve = stop.curve
                write_curve_dump(out / f"curve_{rank}.csv", curve)
                lines.append((f"curve_{rank}_samples", len(curve.s)))
                worst = max(worst, unit_speed_residual(metric, curve))
            lines.append(("unit_speed_residual", worst))
    return 0, lines


def run(cfg, mode, out, threads=1):
    """Execute one validated configuration; returns the exit code.

    Writes the mode's dumps plus report.txt into ``out``.  Numerical
    stops still produce dumps covering the reached x1 range.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    grid = build_grid(cfg.chart)
    if mode == "forward":
        code, lines = _run_forward(cfg, grid, out, threads)
    elif mode == "reconstruct-metric":
        code, lines = _run_reconstruct_metric(cfg, grid, out, threads)
    elif mode == "roundtrip-metric":
        code, lines = _run_reconstruct_metric(cfg, grid, out, threads, roundtrip=True)
    elif mode == "reconstruct-connection":
        code, lines = _run_reconstruct_connection(cfg, grid, out, threads)
    elif mode == "roundtrip-connection":
        code, lines = _run_reconstruct_connection(cfg, grid, out, threads, roundtrip=True)
    else:
        code, lines = _run_check_chart(cfg, grid, out, threads)
    _write_report(out, lines, code)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        mode = validate_for_mode(cfg, args.mode)
        out = args.out if args.out is not None else cfg.out
        if out is None:
            raise ConfigError("no output directory: give --out or [run] out")
        for name in defaulted_components(cfg, mode):
            print(f"note: {name} not set, defaulting to 0", file=sys.stderr)
        return run(cfg, mode, out, threads=args.threads)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SemigeoError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
