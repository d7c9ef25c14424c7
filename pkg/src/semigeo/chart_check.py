"""Diagnostics for whether a chart is (pre-)semigeodesic.

A chart is *pre-semigeodesic* when the x1 coordinate lines, in their
given parametrization, are geodesics of the connection; that holds iff
the axial-axial components Gamma^h_11 vanish.  A metric chart is
*semigeodesic* when additionally g_11 is a constant sign e and g_1j = 0.

Two routes to the same property are provided on purpose: reading the
Gamma^h_11 components directly, and driving straight coordinate lines
through the geodesic equation.  For the straight line c(s) = (s, q),
q fixed, the acceleration vanishes and the velocity is the first basis
vector, so the geodesic equation residual is exactly |Gamma^h_11(c(s))|;
the two routes therefore agree bit for bit on lattice lines.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GridTooCoarse, InvalidSpec, LeftDomain, OutOfDomain
from .ode import GuardConfig, rk4_step


@dataclass
class Curve:
    """A sampled curve: parameter values, points, optional velocities."""

    s: np.ndarray
    points: np.ndarray
    velocities: np.ndarray = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.s.ndim != 1 or self.points.ndim != 2:
            raise InvalidSpec("curve needs 1-d parameters and 2-d points")
        if len(self.s) != len(self.points):
            raise InvalidSpec("curve parameter and point counts differ")
        if len(self.s) >= 2 and not np.all(np.diff(self.s) > 0):
            raise InvalidSpec("curve parameters must increase strictly")
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=np.float64)
            if self.velocities.shape != self.points.shape:
                raise InvalidSpec("curve velocity shape does not match points")

    def uniform_step(self):
        if len(self.s) < 2:
            raise GridTooCoarse("curve has fewer than 2 samples")
        step = float(self.s[1] - self.s[0])
        if np.max(np.abs(np.diff(self.s) - step)) > 1e-9 * max(step, 1.0):
            raise InvalidSpec("curve parameter steps are not uniform")
        return step


def pre_semigeodesic_residual(conn):
    """Largest |Gamma^h_11| over the whole lattice (0 iff pre-semigeodesic)."""
    return float(np.max(np.abs(conn.dense[:, 0, 0])))


def lemma1_check(conn, trials=None):
    """Geodesic-line characterization residual over sampled x1 lines.

    Substituting a straight lattice line with unit axial velocity into
    the geodesic equation leaves |Gamma^h_11| as the whole residual, so
    the check reads those components along ``trials`` evenly spaced
    transverse lines (all of them by default).  With all lines the result
    equals :func:`pre_semigeodesic_residual` exactly.
    """
    vals = np.abs(conn.dense[:, 0, 0])
    flat = vals.reshape(vals.shape[:2] + (-1,))
    lines = flat.shape[2]
    if trials is None or trials >= lines:
        return float(np.max(flat))
    if trials < 1:
        raise InvalidSpec(f"trials must be >= 1, got {trials}")
    sel = np.unique(np.round(np.linspace(0, lines - 1, trials)).astype(int))
    return float(np.max(flat[:, :, sel]))


def geodesic_shoot(conn, x0, v0, s_max, step, guards=None):
    """Integrate the geodesic equation from (x0, v0) through the tube.

    Fixed-step RK4 on the first-order system (x' = v, v' = -Gamma v v)
    for floor(s_max / step) steps.  Returns a Curve carrying points and
    velocities.  If the geodesic escapes the tube, raises LeftDomain with
    ``exit_point`` set to the first outside position and the partial
    curve attached as ``.curve``.
    """
    grid = conn.grid
    n = grid.n
    x0 = np.asarray(x0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    if x0.shape != (n,) or v0.shape != (n,):
        raise InvalidSpec(f"start point and velocity must have {n} components")
    if not grid.contains(x0):
        raise OutOfDomain(f"geodesic start {tuple(x0)} is outside the tube")
    if not step > 0:
        raise InvalidSpec(f"step must be positive, got {step}")
    n_steps = int(np.floor(s_max / step + 1e-9))
    if n_steps < 1:
        raise InvalidSpec("s_max admits no whole step")
    guards = guards or GuardConfig()

    def rhs(s, state):
        pos, vel = state
        gam = conn.at(pos)
        return np.stack([vel, -np.einsum("hij,i,j->h", gam, vel, vel)])

    state = np.stack([x0, v0])
    svals = [0.0]
    traj = [state]

    def partial_curve():
        pts = np.array([st[0] for st in traj])
        vels = np.array([st[1] for st in traj])
        return Curve(np.array(svals), pts, vels)

    def escape(message, exit_point):
        err = LeftDomain(message, exit_point=np.asarray(exit_point, dtype=np.float64))
        err.curve = partial_curve()
        raise err

    for i in range(n_steps):
        s = i * step
        try:
            new, stopped, _ = rk4_step(rhs, s, step, state, guards)
        except OutOfDomain:
            escape(f"geodesic left the tube within step {i + 1}", state[0])
        if stopped is not None:
            escape(f"geodesic state rejected ({stopped}) at s = {s + step}", state[0])
        if not grid.contains(new[0]):
            escape(f"geodesic left the tube at s = {s + step}", new[0])
        state = new
        svals.append((i + 1) * step)
        traj.append(state)
    return partial_curve()


def geodesic_residual(conn, curve):
    """Largest interior geodesic-equation residual along a sampled curve.

    Velocities come from the curve when present, else from second-order
    differences of the points; accelerations always use the 3-point
    second difference, so only interior samples are scored.
    """
    step = curve.uniform_step()
    pts = curve.points
    if len(pts) < 3:
        raise GridTooCoarse("geodesic residual needs at least 3 samples")
    if curve.velocities is not None:
        vel = curve.velocities
    else:
        vel = np.gradient(pts, step, axis=0, edge_order=2)
    acc = (pts[:-2] - 2.0 * pts[1:-1] + pts[2:]) / (step * step)
    worst = 0.0
    for i in range(1, len(pts) - 1):
        gam = conn.at(pts[i])
        res = acc[i - 1] + np.einsum("hij,i,j->h", gam, vel[i], vel[i])
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def semigeodesic_check(metric, e=None):
    """(max |g_11 - e|, max |g_1j|) over the lattice; (0, 0) iff semigeodesic."""
    return metric.semigeodesic_residuals(e)


def unit_speed_residual(metric, curve):
    """Largest |v g(x) v - e| along a curve with velocities.

    For a semigeodesic metric, axial lattice lines make this vanish to
    interpolation accuracy: their speed is g_11 = e throughout.
    """
    if curve.velocities is None:
        vel = np.gradient(curve.points, curve.uniform_step(), axis=0, edge_order=2)
    else:
        vel = curve.velocities
    e = float(metric.e)
    worst = 0.0
    for pt, v in zip(curve.points, vel):
        g = metric.at(pt)
        worst = max(worst, abs(float(v @ g @ v) - e))
    return worst
