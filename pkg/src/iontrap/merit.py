"""Radial trapping figures of merit of a solved rf trap.

Conventions: the fit length scale r0 is the ion height d (distance from the
rf null to the bottom wafer). Harmonicity k is the magnitude of the quadratic
coefficient of the rf potential amplitude along a radial axis through the
null, normalized as phi ~ (V/2 r0^2) k s^2. Derived quantities:

    omega = V k e / (sqrt(2) m Omega r0^2)        radial secular frequency
    q     = 2 e V k / (m Omega^2 r0^2)            stability parameter
    omega = q Omega / (2 sqrt(2))                 equivalent identity
    q_op  = 0.250 k / 0.210  (clamped at 1)       operating point scaled from
                                                  the planar five-wire baseline
    omega_max = sqrt(q_op e V k / (4 m r0^2))     frequency at the q_op limit
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .constants import CA40, ECHARGE, IonSpecies
from .errors import DepthError, FitError, NullAmbiguityError, NullNotFoundError
from .pseudo import BemRfField, DriveParams, PseudoField, DEFAULT_DRIVE

# operating point of the reference five-wire design: q = 0.250 at k = 0.210
Q_BASE = 0.250
K_BASE = 0.210

DEFAULT_TARGET_OMEGA = 2.0 * math.pi * 10e6  # rad/s


# -- analytic operating-point formulas --------------------------------------


def radial_frequency(voltage, k, r0, species: IonSpecies, omega_rf) -> float:
    """Radial secular frequency (rad/s) from the harmonicity."""
    return voltage * k * species.charge / (
        math.sqrt(2.0) * species.mass * omega_rf * r0 * r0)


def stability_q(voltage, k, r0, species: IonSpecies, omega_rf) -> float:
    """Mathieu stability parameter q of the radial motion."""
    return 2.0 * species.charge * voltage * k / (
        species.mass * omega_rf * omega_rf * r0 * r0)


@dataclass(frozen=True)
class OperatingPoint:
    q: float
    clamped: bool


def operating_q(k: float) -> OperatingPoint:
    """Design operating q, scaled linearly in k from the planar baseline."""
    q = Q_BASE * k / K_BASE
    if q > 1.0:
        return OperatingPoint(1.0, True)
    return OperatingPoint(q, False)


def max_frequency(k, r0, species: IonSpecies, voltage) -> float:
    """Largest radial frequency (rad/s) reachable at fixed voltage, obtained
    by raising the drive frequency until q falls to the operating value."""
    q = operating_q(k).q
    return math.sqrt(q * species.charge * voltage * k /
                     (4.0 * species.mass * r0 * r0))


def drive_for_target(q, omega_target, r0, k, species: IonSpecies):
    """(voltage V, Omega_rf rad/s) that realize omega_target at the given q."""
    if not (0.0 < q <= 1.0):
        raise ValueError(f"q must be in (0, 1], got {q}")
    omega_rf = 2.0 * math.sqrt(2.0) * omega_target / q
    voltage = (math.sqrt(2.0) * species.mass * omega_rf * omega_target * r0 * r0
               / (k * species.charge))
    return voltage, omega_rf


def heating_norm(omega, d, omega_ref, d_ref) -> float:
    """Expected motional heating rate relative to a reference trap, from the
    1/omega^2 and 1/d^4 scalings of electric-field noise heating."""
    return (omega_ref / omega) ** 2 * (d_ref / d) ** 4


def power_norm(voltage, omega_rf, voltage_ref, omega_rf_ref) -> float:
    """Dissipated rf power relative to a reference drive: P ~ V^2 Omega^2."""
    return (voltage / voltage_ref) ** 2 * (omega_rf / omega_rf_ref) ** 2


# -- rf null -----------------------------------------------------------------


@dataclass
class NullResult:
    position: np.ndarray      # meters
    psi_J: float
    grad_norm: float          # |grad psi| at the null, J/m
    converged: bool
    iterations: int

    @property
    def height_um(self) -> float:
        """Ion height above the bottom wafer plane (y = 0)."""
        return float(self.position[1]) * 1e6


def _scan_axes(lo, hi, step):
    axes = []
    for a, b in zip(lo, hi):
        if b - a <= 0.0:
            axes.append(np.array([0.5 * (a + b)]))
        else:
            n = max(2, int(round((b - a) / step)) + 1)
            axes.append(np.linspace(a, b, n))
    return axes


def find_rf_null(pseudo: PseudoField, region_lo_um, region_hi_um,
                 scan_um: float = 1.0, max_iter: int = 60) -> NullResult:
    """Locate the pseudopotential minimum inside an axis-aligned region.

    Coarse grid scan (spacing scan_um) followed by Gauss-Newton iteration on
    E(r) = 0 using the analytic field Jacobian. The region must contain
    exactly one minimum: a scan minimum on the region face raises
    NullNotFoundError, several separated minima raise NullAmbiguityError.
    """
    lo = np.asarray(region_lo_um, float)
    hi = np.asarray(region_hi_um, float)
    axes = _scan_axes(lo, hi, scan_um)
    shape = tuple(len(a) for a in axes)
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]) * 1e-6
    vals = pseudo.psi(pts).reshape(shape)

    flat_min = int(np.argmin(vals))
    idx_min = np.unravel_index(flat_min, shape)
    for ax, n in enumerate(shape):
        if n > 1 and idx_min[ax] in (0, n - 1):
            raise NullNotFoundError(
                "pseudopotential minimum sits on the search region boundary; "
                "no interior null found")

    candidates = _local_minima(vals)
    vmin = vals[idx_min]
    tol = 1e-9 * float(vals.max() - vmin) + 1e-300
    near = [c for c in candidates if vals[c] <= vmin + tol]
    clusters = _cluster_cells(near)
    if len(clusters) > 1:
        coords = [tuple(float(axes[d][c[d]]) for d in range(3))
                  for c in sorted(cl[0] for cl in clusters)]
        raise NullAmbiguityError(
            f"{len(clusters)} equal pseudopotential minima in region", coords)

    p = np.array([axes[d][idx_min[d]] for d in range(3)]) * 1e-6
    step_cap = 2.0 * scan_um * 1e-6
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        E = pseudo.rf_field.field(p[None, :])[0]
        J = pseudo.rf_field.jacobian(p[None, :])[0]
        delta, *_ = np.linalg.lstsq(J, -E, rcond=1e-9)
        norm = np.linalg.norm(delta)
        if norm > step_cap:
            delta *= step_cap / norm
        p = p + delta
        if norm < 1e-13:
            converged = True
            break

    grad = pseudo.grad(p[None, :])[0]
    grad_norm = float(np.linalg.norm(grad))
    psi0 = float(pseudo.psi(p[None, :])[0])
    # scale check: the gradient must be tiny against psi one micron away
    ref = float(pseudo.psi((p + np.array([0.0, 1e-6, 0.0]))[None, :])[0])
    if grad_norm > 1e-3 * max(ref - psi0, 1e-300) / 1e-6:
        raise NullNotFoundError(
            f"null polish did not converge (|grad psi| = {grad_norm:.3e} J/m)")
    return NullResult(p, psi0, grad_norm, converged, it)


def _local_minima(vals):
    out = []
    it = np.nditer(vals, flags=["multi_index"])
    for v in it:
        idx = it.multi_index
        is_min = True
        for ax in range(vals.ndim):
            for d in (-1, 1):
                j = idx[ax] + d
                if 0 <= j < vals.shape[ax]:
                    nb = list(idx)
                    nb[ax] = j
                    if vals[tuple(nb)] < v:
                        is_min = False
                        break
            if not is_min:
                break
        if is_min:
            out.append(idx)
    return out


def _cluster_cells(cells):
    cells = set(map(tuple, cells))
    clusters = []
    while cells:
        seed = cells.pop()
        group = [seed]
        frontier = [seed]
        while frontier:
            c = frontier.pop()
            for ax in range(len(c)):
                for d in (-1, 1):
                    nb = list(c)
                    nb[ax] += d
                    nb = tuple(nb)
                    if nb in cells:
                        cells.remove(nb)
                        group.append(nb)
                        frontier.append(nb)
        clusters.append(group)
    return clusters


# -- harmonicity --------------------------------------------------------------


@dataclass
class AxisFit:
    axis: tuple
    k: float                 # |2 c2 r0^2 / V|
    k_signed: float
    std_err: float           # standard error of k from the fit covariance
    rms_residual: float
    n_points: int
    window_m: float
    residual_warning: bool


@dataclass
class HarmonicityResult:
    fits: dict
    k_x: float
    k_y: float
    scalar_axis: str

    @property
    def k(self) -> float:
        return self.fits[self.scalar_axis].k


DEFAULT_FIT_POINTS = 2001


def fit_axis_harmonicity(rf_field, drive: DriveParams, null_m, r0_m, axis,
                         window_frac: float = 0.2,
                         n_points: int = DEFAULT_FIT_POINTS) -> AxisFit:
    """Quadratic least squares of the rf potential amplitude along one axis.

    The dense default sampling keeps the standard error of k below 1e-3 on
    the stock designs, where the quartic tail of the well is the dominant
    fit residual.
    """
    if n_points < 5:
        raise FitError("need at least 5 sample points")
    if drive.voltage <= 0.0:
        raise FitError("harmonicity is normalized per volt of drive; "
                       "the drive amplitude must be positive")
    e = np.asarray(axis, float)
    e = e / np.linalg.norm(e)
    w = window_frac * r0_m
    s = np.linspace(-w, w, n_points)
    pts = np.asarray(null_m)[None, :] + s[:, None] * e[None, :]
    y = drive.voltage * rf_field.potential(pts)

    X = np.column_stack([np.ones_like(s), s, s * s])
    if np.linalg.matrix_rank(X) < 3:
        raise FitError("rank-deficient harmonicity sample")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    dof = n_points - 3
    sigma2 = float(r @ r) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    c2 = float(beta[2])
    se_c2 = math.sqrt(max(cov[2, 2], 0.0))
    scale = 2.0 * r0_m * r0_m / drive.voltage
    rms = math.sqrt(float(r @ r) / n_points)
    # warn when the residual is large against the quadratic signal itself
    signal = abs(c2) * w * w + 1e-300
    return AxisFit(
        axis=tuple(e),
        k=abs(c2) * scale,
        k_signed=c2 * scale,
        std_err=se_c2 * scale,
        rms_residual=rms,
        n_points=n_points,
        window_m=w,
        residual_warning=rms > 0.05 * signal,
    )


_PLANAR_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0)}
_SQ2 = math.sqrt(0.5)
_CROSS_AXES = {"diag_rf": (_SQ2, _SQ2, 0.0), "diag_gnd": (_SQ2, -_SQ2, 0.0)}


def fit_harmonicity(rf_field, drive: DriveParams, null_m, r0_m,
                    design: str = "surface", window_frac: float = 0.2,
                    n_points: int = DEFAULT_FIT_POINTS) -> HarmonicityResult:
    """Fit k along the radial axes of a design.

    Planar designs fit the transverse (x) and vertical (y) axes and report
    k = k_y. The cross-rf design fits the two diagonals; the rf-to-rf
    diagonal carries the reported k.
    """
    if design == "cross-rf":
        axes, scalar = _CROSS_AXES, "diag_rf"
    else:
        axes, scalar = _PLANAR_AXES, "y"
    fits = {
        name: fit_axis_harmonicity(rf_field, drive, null_m, r0_m, vec,
                                   window_frac, n_points)
        for name, vec in axes.items()
    }
    names = list(axes)
    return HarmonicityResult(fits=fits, k_x=fits[names[0]].k,
                             k_y=fits[names[1]].k, scalar_axis=scalar)


# -- trap depth ----------------------------------------------------------------


def flood_fill_escape(values: np.ndarray, start):
    """Escape level of a discrete landscape: the smallest threshold at which
    the connected region (face adjacency) containing `start` touches the array
    boundary. Returns (level, pass_cell, boundary_limited).

    Dijkstra-style bottleneck search: dist(c) = min over paths of the max
    value along the path (endpoints included). pass_cell is the cell where
    that max is attained; boundary_limited means the max sits on the boundary
    itself (no interior barrier).
    """
    shape = values.shape
    start = tuple(start)
    dist = {start: float(values[start])}
    passc = {start: start}
    heap = [(dist[start], start)]
    seen = set()
    while heap:
        d, c = heapq.heappop(heap)
        if c in seen:
            continue
        seen.add(c)
        if any(c[ax] in (0, shape[ax] - 1) for ax in range(values.ndim) if shape[ax] > 1):
            return d, passc[c], passc[c] == c and _on_boundary(c, shape)
        for ax in range(values.ndim):
            for dd in (-1, 1):
                nb = list(c)
                nb[ax] += dd
                if not (0 <= nb[ax] < shape[ax]):
                    continue
                nb = tuple(nb)
                if nb in seen:
                    continue
                nd = max(d, float(values[nb]))
                if nd < dist.get(nb, math.inf):
                    dist[nb] = nd
                    passc[nb] = nb if float(values[nb]) >= d else passc[c]
                    heapq.heappush(heap, (nd, nb))
    raise DepthError("no path from start to the grid boundary")


def _on_boundary(c, shape):
    return any(c[ax] in (0, shape[ax] - 1) for ax in range(len(shape)) if shape[ax] > 1)


@dataclass
class DepthResult:
    depth_J: float
    saddle: np.ndarray | None       # meters, None when boundary limited
    escape_direction: np.ndarray | None
    boundary_limited: bool
    polished: bool
    grid_level_J: float
    hessian_eigs: np.ndarray | None = None

    @property
    def depth_meV(self) -> float:
        return self.depth_J / ECHARGE * 1e3


def trap_depth(pseudo: PseudoField, null: NullResult,
               x_half_um: float = 300.0, y_lo_um: float = 2.0,
               y_hi_um: float | None = None, res_um: float | None = None,
               newton_steps: int = 60) -> DepthResult:
    """Trap depth by flood fill over the radial plane through the null.

    The grid spans x in [-x_half, x_half], y in [y_lo, y_hi] at the null's
    axial coordinate (the rf field of these linear traps is axially uniform
    near the trap center, so escape is radial). The grid only locates the
    pass; the depth value comes from an in-plane Newton polish of the saddle
    (grad psi = 0), so the default resolution adapts to the box height
    rather than chasing grid accuracy.
    """
    p0 = null.position
    if y_hi_um is None:
        y_hi_um = p0[1] * 1e6 + 300.0
    if res_um is None:
        res_um = max(2.0, min(8.0, (y_hi_um - y_lo_um) / 12.0))
    xs = _grid_axis_um(-x_half_um, x_half_um, res_um)
    ys = _grid_axis_um(y_lo_um, y_hi_um, res_um)
    z0 = p0[2]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel() * 1e-6, Y.ravel() * 1e-6,
                           np.full(X.size, z0)])
    vals = pseudo.psi(pts).reshape(X.shape)

    i0 = int(np.argmin(np.abs(xs - p0[0] * 1e6)))
    j0 = int(np.argmin(np.abs(ys - p0[1] * 1e6)))
    level, cell, on_bnd = flood_fill_escape(vals, (i0, j0))
    grid_level = float(level)

    if on_bnd:
        return DepthResult(depth_J=grid_level - null.psi_J, saddle=None,
                           escape_direction=None, boundary_limited=True,
                           polished=False, grid_level_J=grid_level)

    p = np.array([xs[cell[0]] * 1e-6, ys[cell[1]] * 1e-6, z0])
    cap = 2.0 * res_um * 1e-6
    polished = False
    for _ in range(newton_steps):
        g = pseudo.grad(p[None, :])[0][:2]
        H = pseudo.hessian(p[None, :])[0][:2, :2]
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        norm = np.linalg.norm(delta)
        if norm > cap:
            delta *= cap / norm
        p[:2] = p[:2] + delta
        if norm < 1e-13:
            polished = True
            break

    if polished:
        # classify with the in-plane Hessian: the axial curvature of these
        # translationally uniform traps is ~0 and its sign is numeric noise
        H2 = pseudo.hessian(p[None, :])[0][:2, :2]
        eigs, vecs = np.linalg.eigh(H2)
        neg = eigs < -1e-3 * np.abs(eigs).max()
        direction = np.append(vecs[:, int(np.argmin(eigs))], 0.0)
        saddle_val = float(pseudo.psi(p[None, :])[0])
        if neg.sum() != 1 or saddle_val < null.psi_J:
            # polish wandered off the pass; fall back to the grid level
            return DepthResult(depth_J=grid_level - null.psi_J, saddle=p,
                               escape_direction=direction, boundary_limited=False,
                               polished=False, grid_level_J=grid_level,
                               hessian_eigs=eigs)
        return DepthResult(depth_J=saddle_val - null.psi_J, saddle=p,
                           escape_direction=direction, boundary_limited=False,
                           polished=True, grid_level_J=grid_level,
                           hessian_eigs=eigs)
    return DepthResult(depth_J=grid_level - null.psi_J, saddle=p,
                       escape_direction=None, boundary_limited=False,
                       polished=False, grid_level_J=grid_level)


def _grid_axis_um(lo, hi, res):
    n = max(2, int(round((hi - lo) / res)) + 1)
    return np.linspace(lo, hi, n)


# -- full report ---------------------------------------------------------------


@dataclass
class TrapReport:
    design: str
    geometry_signature: str
    h_um: float | None
    species: str
    voltage_V: float
    freq_MHz: float
    d_um: float
    k_x: float
    k_y: float
    k: float
    fit_std_err: float
    D_meV: float
    depth_boundary_limited: bool
    omega_sim_MHz: float          # secular frequency at the simulation drive
    q_sim: float
    omega_target_MHz: float
    q_operating: float
    q_clamped: bool
    V_req_V: float                # drive realizing the target at q_operating
    Omega_req_MHz: float
    omega_max_MHz: float
    heating_norm: float
    power_norm: float
    rf_capacitance_fF: float
    eq_vs_hessian_rel: float
    null_grad_norm: float
    solver_cond: float
    solver_residual_V: float
    n_panels: int

    CSV_HEADER = "geometry,d_um,k,q,omega_MHz,V_kV,Omega_MHz,P_norm"

    def csv_row(self) -> str:
        cells = [
            self.design,
            f"{self.d_um:.3f}",
            f"{self.k:.4f}",
            f"{self.q_operating:.4f}",
            f"{self.omega_target_MHz:.4f}",
            f"{self.V_req_V / 1e3:.4f}",
            f"{self.Omega_req_MHz:.3f}",
            f"{self.power_norm:.4e}",
        ]
        return ",".join(cells)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        return d


def _null_search_region(design, h_um):
    if design in ("gnd-surface", "cross-rf"):
        hi = min(h_um - 5.0, 400.0) if design == "gnd-surface" else h_um - 5.0
        return (0.0, 5.0, 0.0), (0.0, hi, 0.0)
    return (0.0, 5.0, 0.0), (0.0, 300.0, 0.0)


def _depth_bounds(design, h_um, null_height_um):
    if design in ("gnd-surface", "cross-rf"):
        return 2.0, min(h_um - 2.0, null_height_um + 300.0)
    return 2.0, null_height_um + 300.0


def full_report(solved, species: IonSpecies = CA40,
                drive: DriveParams = DEFAULT_DRIVE,
                target_omega: float = DEFAULT_TARGET_OMEGA,
                reference: "TrapReport | None" = None,
                depth_res_um: float | None = None,
                scan_um: float = 1.0) -> TrapReport:
    """All figures of merit of a solved trap at one drive.

    reference supplies the trap against which heating_norm (matched drive)
    and power_norm (drive required for the same target frequency) are
    normalized; without one both come out 1.0 against the trap itself.
    """
    if reference is not None and (
            reference.voltage_V != drive.voltage
            or abs(reference.freq_MHz - drive.freq_MHz) > 1e-9):
        raise ValueError("reference report was computed at a different "
                         "drive; heating comparison needs matched drives")
    geom = solved.geometry
    design = geom.design
    h_um = geom.params.h_um
    rf = BemRfField(solved)
    pseudo = PseudoField(rf, species, drive)

    lo, hi = _null_search_region(design, h_um)
    null = find_rf_null(pseudo, lo, hi, scan_um=scan_um)
    d_m = null.position[1]

    harm = fit_harmonicity(rf, drive, null.position, d_m, design)
    k = harm.k

    y_lo, y_hi = _depth_bounds(design, h_um, null.height_um)
    depth = trap_depth(pseudo, null, y_lo_um=y_lo, y_hi_um=y_hi,
                       res_um=depth_res_um)

    omega_sim = radial_frequency(drive.voltage, k, d_m, species, drive.omega_rf)
    q_sim = stability_q(drive.voltage, k, d_m, species, drive.omega_rf)

    # secular frequency via the pseudopotential Hessian along the fit axis
    e = np.asarray(harm.fits[harm.scalar_axis].axis)
    H = pseudo.hessian(null.position[None, :])[0]
    curv = float(e @ H @ e)
    omega_hess = math.sqrt(max(curv, 0.0) / species.mass)
    eq_dev = abs(omega_sim - omega_hess) / omega_hess if omega_hess > 0 else math.inf

    op = operating_q(k)
    v_req, omega_req = drive_for_target(op.q, target_omega, d_m, k, species)
    omega_max = max_frequency(k, d_m, species, drive.voltage)

    if reference is not None:
        heat = heating_norm(omega_sim, d_m,
                            reference.omega_sim_MHz * 2e6 * math.pi,
                            reference.d_um * 1e-6)
        power = power_norm(v_req, omega_req, reference.V_req_V,
                           reference.Omega_req_MHz * 2e6 * math.pi)
    else:
        heat = 1.0
        power = 1.0

    return TrapReport(
        design=design,
        geometry_signature=geom.signature(),
        h_um=h_um,
        species=species.name,
        voltage_V=drive.voltage,
        freq_MHz=drive.freq_MHz,
        d_um=null.height_um,
        k_x=harm.k_x,
        k_y=harm.k_y,
        k=k,
        fit_std_err=harm.fits[harm.scalar_axis].std_err,
        D_meV=depth.depth_meV,
        depth_boundary_limited=depth.boundary_limited,
        omega_sim_MHz=omega_sim / (2e6 * math.pi),
        q_sim=q_sim,
        omega_target_MHz=target_omega / (2e6 * math.pi),
        q_operating=op.q,
        q_clamped=op.clamped,
        V_req_V=v_req,
        Omega_req_MHz=omega_req / (2e6 * math.pi),
        omega_max_MHz=omega_max / (2e6 * math.pi),
        heating_norm=heat,
        power_norm=power,
        rf_capacitance_fF=solved.rf_capacitance() * 1e15,
        eq_vs_hessian_rel=eq_dev,
        null_grad_norm=null.grad_norm,
        solver_cond=solved.cond_estimate,
        solver_residual_V=solved.residual_max,
        n_panels=geom.n_panels,
    )
