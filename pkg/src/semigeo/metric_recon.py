"""Reconstruction of a semigeodesic metric from hypersurface data.

Given on x1 = 0 the transverse block g~_ij and its axial derivative
G~_ij (i, j >= 2), plus prescribed axial curvature a_ij = R_1ij1, the
transverse block is marched in x1 with the coupled first-order system

    d1 g_ij = G_ij
    d1 G_ij = 1/2 g^{rs} G_ir G_js + 2 a_ij

and the full metric is assembled with g_11 = e, g_1j = 0 held exactly.
The system has no transverse coupling: every transverse node integrates
independently, so runs at different transverse resolutions agree bitwise
at shared nodes.

A direction stops, and its reached extent becomes delta_hat, when the
transverse determinant at any node falls below ``degeneracy_tol`` times
its initial value there or changes sign within a step, or when the
blow-up guards trip.  A fixed-step march can step across an isolated
determinant zero without ever sampling below the floor (the Riccati
quadratic then explodes one step later), so a blow-up stop is
reclassified as degenerate when the accepted trajectory witnessed the
determinant collapse below sqrt(degeneracy_tol) times its initial
per-node value: degeneracy is certified even if the sampled magnitude
recovers.
"""

import numpy as np

from .curvature import DEGENERACY_TOL, MetricField
from .errors import DegenerateMetric, InvalidInit, InvalidSpec
from .grid_field import build_grid
from .linalg import det_stack, inv_sym
from .ode import GuardConfig, StateRejected
from .connection_recon import (
    _assemble_whole,
    _march_both,
    _report,
    _restricted,
    _TransverseField,
    _tube_field,
)


def _symmetric_fields(n, components, what, index_floor=2):
    """Canonicalize {(i, j): value} with i, j in index_floor..n, i <= j."""
    out = {}
    for (i, j), value in (components or {}).items():
        if not (index_floor <= i <= n and index_floor <= j <= n):
            raise InvalidInit(f"{what} index {(i, j)} outside {index_floor}..{n}")
        key = (min(i, j), max(i, j))
        if key in out:
            raise InvalidInit(
                f"{what}{key} assigned twice (symmetric orderings conflict)"
            )
        out[key] = value
    return out


class HypersurfaceMetricData:
    """Transverse metric block and its axial derivative on x1 = 0.

    ``g`` and ``g1`` map (i, j) with 2 <= i <= j <= n to expression
    strings, FieldExpr, or transverse node sample arrays.  Both matrices
    are symmetric by canonical storage; conflicting mirror assignments
    raise InvalidInit.  Missing components default to 0.
    """

    def __init__(self, n, g=None, g1=None):
        if n < 2:
            raise InvalidInit("dimension must be >= 2")
        self.n = n
        self._g = {
            key: _TransverseField(value, n, f"gtilde{key}")
            for key, value in _symmetric_fields(n, g, "gtilde").items()
        }
        self._g1 = {
            key: _TransverseField(value, n, f"Gtilde{key}")
            for key, value in _symmetric_fields(n, g1, "Gtilde").items()
        }

    def _plane(self, fields, grid):
        n = self.n
        big_n = len(grid.transverse_mesh()[0])
        out = np.zeros((n - 1, n - 1, big_n))
        for (i, j), fld in fields.items():
            vals = fld.plane(grid)
            out[i - 2, j - 2] = vals
            out[j - 2, i - 2] = vals
        return out

    def g_plane(self, grid):
        return self._plane(self._g, grid)

    def g1_plane(self, grid):
        return self._plane(self._g1, grid)


class MetricCurvatureSpec:
    """Prescribed axial curvature a_ij = R_1ij1, 2 <= i <= j <= n.

    Symmetric by canonical storage (curvature symmetry forces it);
    conflicting mirror assignments are rejected.  Entries are expression
    strings, FieldExpr, ExpressionField, or SampledField on the tube.
    """

    def __init__(self, n, entries=None):
        if n < 2:
            raise InvalidSpec("dimension must be >= 2")
        self.n = n
        self._fields = {}
        for key, value in _symmetric_fields(n, entries, "a").items():
            self._fields[key] = _tube_field(value, n, f"a{key}")

    def plane(self, x1, grid):
        n = self.n
        big_n = len(grid.transverse_mesh()[0])
        out = np.zeros((n - 1, n - 1, big_n))
        for (i, j), fld in self._fields.items():
            vals = np.asarray(fld.on_transverse(x1, grid), dtype=np.float64)
            out[i - 2, j - 2] = vals
            out[j - 2, i - 2] = vals
        return out

    def dense_on(self, grid):
        """All prescribed values over a grid, shaped (n-1, n-1, *grid.shape)."""
        n = self.n
        out = np.zeros((n - 1, n - 1) + grid.shape)
        for (i, j), fld in self._fields.items():
            vals = fld.on_grid(grid)
            out[i - 2, j - 2] = vals
            out[j - 2, i - 2] = vals
        return out


def metric_rhs(g, G, a, degeneracy_tol=DEGENERACY_TOL):
    """Axial derivative of (g, G) for the transverse block.

    Inputs are (k, k) matrices or (k, k, N) node stacks, symmetric.
    Returns (d1 g, d1 G) = (G, 1/2 g^{rs} G_ir G_js + 2 a), with the
    quadratic term mirrored from i <= j so the output is symmetric
    exactly.  Raises DegenerateMetric when |det g| < degeneracy_tol.
    """
    g = np.asarray(g, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    single = g.ndim == 2
    if single:
        g, G, a = g[..., None], G[..., None], a[..., None]
    k = g.shape[0]
    det = det_stack(g.reshape((k, k, -1)))
    small = np.abs(det) < degeneracy_tol
    if np.any(small):
        node = int(np.argmax(small))
        raise DegenerateMetric(
            f"transverse block determinant {det[node]:.3e} below "
            f"{degeneracy_tol:.1e}",
            node=node,
            det=float(det[node]),
        )
    ginv = inv_sym(g.reshape((k, k, -1)), det).reshape(g.shape)
    quad = 0.5 * np.einsum("rs...,ir...,js...->ij...", ginv, G, G)
    for i in range(k):
        for j in range(i + 1, k):
            quad[j, i] = quad[i, j]
    dG = quad + 2.0 * a
    if single:
        return G[..., 0], dG[..., 0]
    return G.copy(), dG


def _relabel_collapse(march, det0, tol):
    """Reclassify a blow-up stop as degenerate after a witnessed collapse.

    A fixed step can land just past an isolated determinant zero with
    every sampled value still above the hard floor; the quadratic term
    then explodes one step later and the generic guard reports blow-up.
    When the accepted trajectory's per-node determinant ratio dipped
    below sqrt(tol), the stop is relabeled as degenerate at the node
    where the ratio was smallest.
    """
    if march.stopped != "blowup" or march.states.shape[0] == 0:
        return
    g_traj = march.states[:, 0]
    k = g_traj.shape[1]
    det = det_stack(np.moveaxis(g_traj, 0, 2).reshape((k, k, -1)))
    ratio = np.abs(det).reshape((g_traj.shape[0], -1)) / np.abs(det0)
    node_min = ratio.min(axis=0)
    if np.any(node_min < np.sqrt(tol)):
        march.stopped = "degenerate"
        march.stop_detail = int(np.argmin(node_min))


def reconstruct_metric(init, sources, e, spec, guards=None, grid=None, threads=1, degeneracy_tol=None):
    """March the transverse block from (g~, G~) and assemble the metric.

    Returns (MetricField, ReconstructionReport).  ``e`` is the axial
    sign g_11; it never enters the transverse system.  Initial data must
    be nondegenerate at every transverse node (InvalidInit otherwise).
    A direction stops at degeneracy (ratio ``degeneracy_tol``, default
    1e-10, against the initial determinant per node, or a determinant
    sign change) or at blow-up; the report carries the reached extents.
    """
    if e not in (-1, 1):
        raise InvalidSpec(f"e must be +1 or -1, got {e!r}")
    grid = grid or build_grid(spec)
    n = grid.n
    k = n - 1
    h1 = grid.spacing(1)
    tol = DEGENERACY_TOL if degeneracy_tol is None else float(degeneracy_tol)
    g0 = init.g_plane(grid)
    G0 = init.g1_plane(grid)
    det0 = det_stack(g0)
    if np.any(np.abs(det0) < tol):
        node = int(np.argmax(np.abs(det0) < tol))
        raise InvalidInit(
            f"initial transverse block is degenerate at flat node {node} "
            f"(det = {det0[node]:.3e})"
        )
    sign0 = np.sign(det0)
    floor = tol * np.abs(det0)
    state0 = np.stack([g0, G0])
    guards = guards or GuardConfig()
    src_cache = {}

    def rhs(x, state, sl):
        g, G = state[0], state[1]
        det = det_stack(g)
        bad = (np.abs(det) < floor[sl]) | (np.sign(det) * sign0[sl] < 0)
        if np.any(bad):
            # block-local index: the blocked marcher shifts it to global
            raise StateRejected("degenerate", int(np.argmax(bad)))
        plane = src_cache.get(x)
        if plane is None:
            plane = sources.plane(x, grid)
            src_cache[x] = plane
        ginv = inv_sym(g, det)
        quad = 0.5 * np.einsum("rs...,ir...,js...->ij...", ginv, G, G)
        for i in range(k):
            for j in range(i + 1, k):
                quad[j, i] = quad[i, j]
        return np.stack([G, quad + 2.0 * plane[..., sl]])

    k0 = grid.zero_index
    plus, minus = _march_both(
        rhs, h1, len(grid.x1_samples) - 1 - k0, k0, state0, guards, False, threads
    )
    _relabel_collapse(plus, det0, tol)
    _relabel_collapse(minus, det0, tol)
    rgrid, _ = _restricted(grid, plus, minus)
    whole = _assemble_whole(plus, minus)
    t = whole.shape[0]
    block = np.moveaxis(whole[:, 0], 0, 2).reshape((k, k, t) + rgrid.transverse_shape)
    metric = MetricField.semigeodesic(rgrid, block, e=e)
    report = _report(grid, rgrid, plus, minus, float(np.max(np.abs(whole))))
    return metric, report
