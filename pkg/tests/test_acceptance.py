"""Acceptance checks: every advertised guarantee at its stated tolerance.

Each class exercises one end-to-end promise, at the operating point it
is documented for, through the public API or the command line.  The
randomized round trips render symbolic scenarios from the independent
oracle into plain config files, so the whole pipeline (parsing, field
evaluation, marching, forward re-derivation, gating, reporting) is on
the line, not just the solvers.
"""

import functools
import math

import numpy as np
import pytest
import sympy as sp

import _oracles as orc
from semigeo.chart_check import lemma1_check, pre_semigeodesic_residual, semigeodesic_check
from semigeo.cli import (
    connection_roundtrip_residual,
    main,
    metric_roundtrip_residual,
    read_report,
)
from semigeo.connection_recon import (
    ConnectionCurvatureSpec,
    HypersurfaceConnectionData,
    reconstruct_connection,
)
from semigeo.curvature import (
    ConnectionField,
    CurvatureTube,
    MetricField,
    christoffel_from_metric,
    curvature13,
    lower_and_check_identity,
)
from semigeo.grid_field import ChartSpec, build_grid
from semigeo.metric_recon import (
    HypersurfaceMetricData,
    MetricCurvatureSpec,
    reconstruct_metric,
)


def unit_box_spec(n=2, x1_range=(0.0, 1.0), h1=1e-3, res=3):
    return ChartSpec(
        n=n,
        x1_range=x1_range,
        h1=h1,
        transverse_box=((0.0, 1.0),) * (n - 1),
        transverse_res=res,
    )


def run_cli(tmp_path, text, mode, out_name="out", extra=()):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    out = tmp_path / out_name
    code = main([mode, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


# ------------------------------------------------- exact flat round trips


FLAT_METRIC_RT = """\
[chart]
n = 2
x1_min = -0.5
x1_max = 0.5
h1 = 0.01
e = 1
transverse_res = 5

[fields]
gtilde.2.2 = "1"
Gtilde.2.2 = "0"
a.2.2 = "0"
"""

FLAT_CONNECTION_RT = """\
[chart]
n = 2
x1_min = -0.5
x1_max = 0.5
h1 = 0.01
transverse_res = 5
"""


class TestFlatRoundtripsAreExact:
    def test_metric_pipeline_is_exactly_zero(self):
        init = HypersurfaceMetricData(2, g={(2, 2): "1"}, g1={(2, 2): "0"})
        src = MetricCurvatureSpec(2, {(2, 2): "0"})
        spec = unit_box_spec(x1_range=(-0.5, 0.5), h1=1e-2, res=5)
        metric, report = reconstruct_metric(init, src, 1, spec)
        assert report.complete
        assert report.delta_hat_plus == 0.5
        assert report.delta_hat_minus == -0.5
        assert np.all(metric.component(2, 2) == 1.0)
        assert np.all(metric.component(1, 1) == 1.0)
        assert np.all(metric.component(1, 2) == 0.0)
        residual, _ = metric_roundtrip_residual(metric, src, 1e-10)
        assert residual == 0.0

    def test_connection_pipeline_is_exactly_zero(self):
        init = HypersurfaceConnectionData(2)
        src = ConnectionCurvatureSpec(2, {})
        spec = unit_box_spec(x1_range=(-0.5, 0.5), h1=1e-2, res=5)
        conn, report = reconstruct_connection(init, src, spec)
        assert report.complete
        assert report.delta_hat_plus == 0.5
        assert report.delta_hat_minus == -0.5
        assert np.all(conn.dense == 0.0)
        residual, _ = connection_roundtrip_residual(conn, src)
        assert residual == 0.0

    def test_cli_reports_zero_error_both_directions(self, tmp_path):
        code, out = run_cli(tmp_path, FLAT_METRIC_RT, "roundtrip-metric", "m")
        report = read_report(out / "report.txt")
        assert code == 0
        assert report["max_error"] == "0.0"
        assert report["delta_hat_plus"] == "0.5"
        assert report["delta_hat_minus"] == "-0.5"
        code, out = run_cli(tmp_path, FLAT_CONNECTION_RT, "roundtrip-connection", "c")
        report = read_report(out / "report.txt")
        assert code == 0
        assert report["max_error"] == "0.0"
        assert report["delta_hat_plus"] == "0.5"
        assert report["delta_hat_minus"] == "-0.5"


# ------------------------------------- constant-curvature metric recovery


class TestConstantCurvatureMetricRecovery:
    def recover(self, source, reference):
        init = HypersurfaceMetricData(2, g={(2, 2): "1"}, g1={(2, 2): "0"})
        src = MetricCurvatureSpec(2, {(2, 2): source})
        metric, report = reconstruct_metric(init, src, 1, unit_box_spec())
        assert report.complete
        xs = metric.grid.x1_samples
        err = np.max(np.abs(metric.component(2, 2) - reference(xs)[:, None]))
        return metric, float(err)

    def test_sphere_band(self):
        metric, err = self.recover("-cos(x1)^2", lambda x: np.cos(x) ** 2)
        assert err <= 1e-8
        assert semigeodesic_check(metric) == (0.0, 0.0)

    def test_hyperbolic_band(self):
        _, err = self.recover("cosh(x1)^2", lambda x: np.cosh(x) ** 2)
        assert err <= 1e-8


# --------------------------------------- closed-form connection recovery


class TestClosedFormConnectionRecovery:
    def test_sphere_sources(self):
        init = HypersurfaceConnectionData(2)
        src = ConnectionCurvatureSpec(2, {(2, 1, 2): "-1", (1, 2, 2): "cos(x1)^2"})
        conn, report = reconstruct_connection(init, src, unit_box_spec())
        assert report.complete
        xs = conn.grid.x1_samples[:, None]
        err_mixed = np.max(np.abs(conn.component(2, 1, 2) + np.tan(xs)))
        err_trans = np.max(np.abs(conn.component(1, 2, 2) - np.sin(xs) * np.cos(xs)))
        assert err_mixed <= 1e-8
        assert err_trans <= 1e-6

    def errs(self, res):
        init_c, src_c, gamma, xs = orc.connection_scenario(42, 2, scale=0.25)
        spec = ChartSpec(
            n=2,
            x1_range=(-0.4, 0.6),
            h1=1e-2,
            transverse_box=((0.0, 1.0),),
            transverse_res=res,
        )
        conn, report = reconstruct_connection(
            HypersurfaceConnectionData(2, init_c),
            ConnectionCurvatureSpec(2, src_c),
            spec,
        )
        assert report.complete
        worst = 0.0
        for h in range(1, 3):
            for i in range(1, 3):
                for j in range(i, 3):
                    if i == j == 1:
                        continue
                    ref = orc.sample(gamma[h - 1][i - 1][j - 1], xs, conn.grid)
                    err = np.max(np.abs(conn.component(h, i, j) - ref))
                    worst = max(worst, float(err))
        return worst

    def test_error_drops_fourfold_when_transverse_spacing_halves(self):
        coarse = self.errs(9)
        fine = self.errs(17)
        assert coarse < 5e-4
        assert 3.0 < coarse / fine < 5.0


# ------------------------------------------ truncated transport deviates


class TestTruncatedTransportDeviates:
    def test_dropping_cross_terms_biases_transverse_slot(self):
        init = HypersurfaceConnectionData(2)
        src = ConnectionCurvatureSpec(2, {(2, 1, 2): "-1", (1, 2, 2): "cos(x1)^2"})
        spec = unit_box_spec()
        good, _ = reconstruct_connection(init, src, spec)
        bad, _ = reconstruct_connection(init, src, spec, omit_quadratic_cross_term=True)
        i_half = int(round(0.5 / spec.h1))
        assert good.grid.x1_samples[i_half] == pytest.approx(0.5)
        truth = np.sin(0.5) * np.cos(0.5)
        deviation = abs(bad.component(1, 2, 2)[i_half, 0] - truth)
        assert deviation > 1e-2
        assert deviation == pytest.approx(0.03963225379802743, abs=1e-6)
        assert abs(good.component(1, 2, 2)[i_half, 0] - truth) <= 1e-6


# --------------------------------------------- randomized forward oracle


def _chart_lines(n, x1_range, h1, res):
    return [
        "[chart]",
        f"n = {n}",
        f"x1_min = {x1_range[0]}",
        f"x1_max = {x1_range[1]}",
        f"h1 = {h1}",
        "e = 1",
        f"transverse_res = {res}",
        "transverse_box = 0.0, 1.0",
    ]


@functools.lru_cache(maxsize=None)
def _metric_field_lines(seed, n):
    rng = np.random.default_rng(seed)
    g = orc.random_transverse_metric(rng, n, scale=0.2)
    xs = orc.coords(n)
    x1 = xs[0]
    blk = orc.axial_block(g, xs)
    lines = ["[fields]"]
    for i in range(2, n + 1):
        for j in range(i, n + 1):
            lines.append(f'gtilde.{i}.{j} = "{orc.sanitize(g[i - 1, j - 1].subs(x1, 0))}"')
            d1 = sp.diff(g[i - 1, j - 1], x1).subs(x1, 0)
            lines.append(f'Gtilde.{i}.{j} = "{orc.sanitize(d1)}"')
            lines.append(f'a.{i}.{j} = "{orc.sanitize(blk[i - 2, j - 2])}"')
    return tuple(lines)


@functools.lru_cache(maxsize=None)
def _connection_field_lines(seed, n):
    init, src, _, _ = orc.connection_scenario(seed, n, scale=0.25)
    lines = ["[fields]"]
    for (h, i, j), text in sorted(init.items()):
        lines.append(f'gammatilde.{h}.{i}.{j} = "{text}"')
    for (h, i, k), text in sorted(src.items()):
        lines.append(f'A.{h}.{i}.{k} = "{text}"')
    return tuple(lines)


RANDOM_SCENARIOS = [
    ("metric", 1, 2, (-0.3, 0.3), 0.005, 9),
    ("metric", 2, 2, (-0.3, 0.3), 0.005, 9),
    ("metric", 3, 2, (0.0, 0.6), 0.005, 9),
    ("metric", 4, 2, (-0.5, 0.1), 0.005, 9),
    ("metric", 11, 3, (-0.3, 0.3), 0.01, 5),
    ("metric", 12, 3, (-0.2, 0.4), 0.01, 5),
    ("connection", 42, 2, (-0.4, 0.6), 0.01, 9),
    ("connection", 7, 2, (-0.3, 0.5), 0.01, 9),
    ("connection", 3, 3, (-0.25, 0.25), 0.01, 5),
    ("connection", 5, 3, (-0.2, 0.3), 0.01, 5),
]


class TestRandomizedRoundtrips:
    """Rebuilding the sources from the reconstruction must land within
    ten times the lattice's own discretization estimate."""

    @pytest.mark.parametrize(
        "kind,seed,n,x1_range,h1,res",
        RANDOM_SCENARIOS,
        ids=[f"{k[0]}{k[2]}d-seed{k[1]}" for k in RANDOM_SCENARIOS],
    )
    def test_sources_reproduced_within_ten_times_estimate(
        self, tmp_path, kind, seed, n, x1_range, h1, res
    ):
        if kind == "metric":
            mode = "roundtrip-metric"
            fields = _metric_field_lines(seed, n)
        else:
            mode = "roundtrip-connection"
            fields = _connection_field_lines(seed, n)
        text = "\n".join(_chart_lines(n, x1_range, h1, res) + list(fields)) + "\n"
        code, out = run_cli(tmp_path, text, mode)
        assert code == 0
        report = read_report(out / "report.txt")
        assert report["status"] == "Complete"
        max_error = float(report["max_error"])
        estimate = float(report["error_estimate"])
        # scenarios the lattice represents exactly have estimate 0 and
        # a pure-roundoff residual: allow those through on an abs floor
        assert max_error <= 10.0 * estimate or max_error <= 1e-9


# ----------------------------------------------- lowering identity block


class TestLoweringIdentityAgreement:
    def exact_residual(self, g22, grid):
        xs = orc.coords(2)
        g = sp.eye(2)
        g[1, 1] = g22
        gamma = orc.christoffel(g, xs)
        r = orc.curvature13(gamma, xs)
        dense_r = np.zeros((2, 2, 2, 2) + grid.shape)
        for h in range(2):
            for i in range(2):
                for j in range(2):
                    for k in range(2):
                        if r[h][i][j][k] != 0:
                            dense_r[h, i, j, k] = orc.sample(r[h][i][j][k], xs, grid)
        dense_g = np.zeros((2, 2) + grid.shape)
        dense_g[0, 0] = 1.0
        dense_g[1, 1] = orc.sample(g22, xs, grid)
        metric = MetricField(grid, dense_g)
        _, residual = lower_and_check_identity(metric, CurvatureTube(grid, dense_r))
        return residual

    def test_four_expressions_agree_on_exact_samples(self):
        grid = build_grid(unit_box_spec(x1_range=(-0.3, 0.5), h1=1e-2, res=5))
        x1, x2 = sp.symbols("x1 x2")
        assert self.exact_residual(sp.cos(x1) ** 2, grid) <= 1e-6
        assert self.exact_residual(sp.cosh(x1) ** 2, grid) <= 1e-6
        rng = np.random.default_rng(7)
        g = orc.random_transverse_metric(rng, 2, scale=0.2)
        assert self.exact_residual(g[1, 1], grid) <= 1e-6

    def fd_residual(self, h1):
        grid = build_grid(unit_box_spec(x1_range=(-0.3, 0.5), h1=h1, res=5))
        metric = MetricField.from_fields(grid, {(1, 1): "1", (2, 2): "cos(x1)^2"})
        conn, _ = christoffel_from_metric(metric)
        _, residual = lower_and_check_identity(metric, curvature13(conn))
        return residual

    def test_discretized_agreement_converges_at_second_order(self):
        coarse = self.fd_residual(2e-2)
        fine = self.fd_residual(1e-2)
        assert fine < 5e-4
        assert 3.0 < coarse / fine < 5.0


# -------------------------------------------------- stops and boundaries


RICCATI_STOP = """\
[chart]
n = 2
x1_max = 2.0
h1 = 0.001
transverse_res = 3

[fields]
A.2.1.2 = "-1"
"""

CONE_STOP = """\
[chart]
n = 2
x1_max = 2.0
h1 = 0.001
e = 1
transverse_res = 3

[fields]
gtilde.2.2 = "1"
Gtilde.2.2 = "-2"
a.2.2 = "0"
"""


class TestNumericalStops:
    def test_quadratic_growth_stops_short_of_the_pole(self, tmp_path):
        code, out = run_cli(tmp_path, RICCATI_STOP, "reconstruct-connection")
        assert code == 3
        report = read_report(out / "report.txt")
        assert report["status"] == "StoppedBlowup"
        delta = float(report["delta_hat_plus"])
        assert math.pi / 2 - 10 * 1e-3 < delta < math.pi / 2
        assert "blowup" in report["stop_plus"]

    def test_metric_collapse_is_located(self, tmp_path):
        code, out = run_cli(tmp_path, CONE_STOP, "reconstruct-metric")
        assert code == 3
        report = read_report(out / "report.txt")
        assert report["status"] == "StoppedDegenerate"
        delta = float(report["delta_hat_plus"])
        assert abs(delta - 1.0) <= 10 * 1e-3
        assert "degenerate" in report["stop_plus"]


# ---------------------------------------------------- chart diagnostics


SPHERE_CHECK = """\
[chart]
n = 2
x1_max = 1.0
h1 = 0.01
transverse_res = 9

[fields]
g.1.1 = "1"
g.2.2 = "cos(x1)^2"
"""


class TestChartDiagnostics:
    def test_line_characterization_matches_direct_residual(self):
        grid = build_grid(unit_box_spec(x1_range=(-0.3, 0.5), h1=1e-2, res=5))
        conn = ConnectionField.from_fields(
            grid,
            {(1, 1, 1): "0.3*sin(x1 + x2)", (2, 1, 1): "0.1*x1", (2, 1, 2): "x2"},
        )
        assert lemma1_check(conn) == pre_semigeodesic_residual(conn)
        assert lemma1_check(conn) > 0.0

    def test_reconstructed_metric_is_exactly_adapted(self):
        init = HypersurfaceMetricData(2, g={(2, 2): "1"})
        src = MetricCurvatureSpec(2, {(2, 2): "-cos(x1)^2"})
        metric, _ = reconstruct_metric(init, src, 1, unit_box_spec(h1=1e-2))
        assert semigeodesic_check(metric) == (0.0, 0.0)

    def test_shot_geodesics_keep_unit_speed(self, tmp_path):
        code, out = run_cli(tmp_path, SPHERE_CHECK, "check-chart")
        assert code == 0
        report = read_report(out / "report.txt")
        assert float(report["unit_speed_residual"]) <= 1e-8
        for k in range(1, 6):
            assert (out / f"curve_{k}.csv").exists()
        assert float(report["pre_semigeodesic_residual"]) == 0.0
        assert float(report["lemma1_residual"]) == 0.0


# --------------------------------------------------------- determinism


SPHERE_CONNECTION_RT = """\
[chart]
n = 2
x1_max = 1.0
h1 = 0.001
transverse_res = 9

[fields]
A.2.1.2 = "-1"
A.1.2.2 = "cos(x1)^2"
"""


class TestDeterministicArtifacts:
    def test_reruns_and_thread_counts_are_byte_identical(self, tmp_path):
        outs = []
        for name, extra in (("o1", ()), ("o2", ()), ("o4", ("--threads", "4"))):
            code, out = run_cli(
                tmp_path, SPHERE_CONNECTION_RT, "roundtrip-connection", name, extra
            )
            assert code == 0
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir())
        assert names == ["connection.csv", "curvature_oracle.csv", "report.txt"]
        for name in names:
            reference = (outs[0] / name).read_bytes()
            assert (outs[1] / name).read_bytes() == reference
            assert (outs[2] / name).read_bytes() == reference
