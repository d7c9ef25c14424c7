"""Tube-chart toolkit: reconstruct connections and semigeodesic metrics
from hypersurface data and prescribed curvature, verify the results with
a forward curvature oracle, and test chart properties geodesically."""

from .chart_check import (
    Curve,
    geodesic_residual,
    geodesic_shoot,
    lemma1_check,
    pre_semigeodesic_residual,
    semigeodesic_check,
    unit_speed_residual,
)
from .config import MODES, RunConfig, Tolerances, load_config, validate_for_mode
from .connection_recon import (
    ConnectionCurvatureSpec,
    HypersurfaceConnectionData,
    ReconstructionReport,
    reconstruct_connection,
    stage1_integrate,
    stage2_integrate,
)
from .curvature import (
    DEGENERACY_TOL,
    ConnectionField,
    CurvatureTube,
    MetricField,
    christoffel_from_metric,
    curvature04_semigeo,
    curvature13,
    lower_and_check_identity,
)
from .errors import (
    ConfigError,
    DegenerateMetric,
    EvalError,
    FieldSyntaxError,
    GridTooCoarse,
    InvalidInit,
    InvalidSpec,
    LeftDomain,
    NotSemigeodesic,
    OutOfDomain,
    SemigeoError,
    UnknownSymbol,
    VariableOutOfRange,
)
from .expr import eval_field, eval_field_on, format_field, parse_field
from .grid_field import (
    ChartSpec,
    ExpressionField,
    SampledField,
    TensorTube,
    TubeGrid,
    build_grid,
    fd_partial,
    fd_second,
    fd_transverse,
    interpolate,
    read_tensor_dump,
    write_curve_dump,
    write_tensor_dump,
)
from .metric_recon import (
    HypersurfaceMetricData,
    MetricCurvatureSpec,
    metric_rhs,
    reconstruct_metric,
)
from .ode import GuardConfig, MarchResult, rk4_march, rk4_march_blocked, rk4_step

__version__ = "0.1.0"

__all__ = [
    "ChartSpec",
    "ConfigError",
    "ConnectionCurvatureSpec",
    "ConnectionField",
    "Curve",
    "CurvatureTube",
    "DEGENERACY_TOL",
    "DegenerateMetric",
    "EvalError",
    "ExpressionField",
    "FieldSyntaxError",
    "GridTooCoarse",
    "GuardConfig",
    "HypersurfaceConnectionData",
    "HypersurfaceMetricData",
    "InvalidInit",
    "InvalidSpec",
    "LeftDomain",
    "MarchResult",
    "MetricCurvatureSpec",
    "MetricField",
    "MODES",
    "NotSemigeodesic",
    "OutOfDomain",
    "ReconstructionReport",
    "RunConfig",
    "SampledField",
    "SemigeoError",
    "TensorTube",
    "Tolerances",
    "TubeGrid",
    "UnknownSymbol",
    "VariableOutOfRange",
    "build_grid",
    "christoffel_from_metric",
    "curvature04_semigeo",
    "curvature13",
    "eval_field",
    "eval_field_on",
    "fd_partial",
    "fd_second",
    "fd_transverse",
    "format_field",
    "geodesic_residual",
    "geodesic_shoot",
    "interpolate",
    "lemma1_check",
    "load_config",
    "lower_and_check_identity",
    "metric_rhs",
    "parse_field",
    "pre_semigeodesic_residual",
    "read_tensor_dump",
    "reconstruct_connection",
    "reconstruct_metric",
    "rk4_march",
    "rk4_march_blocked",
    "rk4_step",
    "semigeodesic_check",
    "stage1_integrate",
    "stage2_integrate",
    "unit_speed_residual",
    "validate_for_mode",
    "write_curve_dump",
    "write_tensor_dump",
]
