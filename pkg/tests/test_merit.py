"""Figures of merit: operating-point formulas, null finding, harmonicity
fits, flood-fill trap depth.

Oracles used here: closed-form quadrupole and quadrupole+hexapole fields
(null, curvature, and saddle positions known analytically), the continuous
least-squares limit for a quartic-contaminated harmonicity fit, and an
exhaustive threshold-sweep escape search for the flood fill.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from iontrap import (
    CA40,
    DriveParams,
    FitError,
    NullAmbiguityError,
    NullNotFoundError,
    NullResult,
    PseudoField,
    QuadrupoleField,
    drive_for_target,
    find_rf_null,
    fit_axis_harmonicity,
    fit_harmonicity,
    flood_fill_escape,
    get_species,
    heating_norm,
    max_frequency,
    operating_q,
    power_norm,
    radial_frequency,
    stability_q,
    trap_depth,
)

DRIVE = DriveParams.from_mhz(10.0, 20.0)


# -- analytic operating-point formulas ----------------------------------------


def test_frequency_q_identity_spot():
    omega = radial_frequency(10.0, 0.21, 90e-6, CA40, 2 * math.pi * 20e6)
    q = stability_q(10.0, 0.21, 90e-6, CA40, 2 * math.pi * 20e6)
    assert omega == pytest.approx(q * 2 * math.pi * 20e6 / (2 * math.sqrt(2)),
                                  rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(
    voltage=st.floats(1e-2, 1e5),
    k=st.floats(1e-3, 2.0),
    r0=st.floats(1e-6, 1e-3),
    f_rf=st.floats(1e5, 1e10),
    species=st.sampled_from(["Be9", "Mg24", "Ca40", "Sr88", "Ba138", "Yb171"]),
)
def test_frequency_q_identity_property(voltage, k, r0, f_rf, species):
    # omega = q Omega / (2 sqrt(2)) must hold identically
    ion = get_species(species)
    omega_rf = 2 * math.pi * f_rf
    omega = radial_frequency(voltage, k, r0, ion, omega_rf)
    q = stability_q(voltage, k, r0, ion, omega_rf)
    assert omega == pytest.approx(q * omega_rf / (2 * math.sqrt(2)), rel=1e-12)


def test_operating_q_scales_linearly_from_baseline():
    assert operating_q(0.210).q == pytest.approx(0.250, rel=1e-15)
    assert operating_q(0.210).clamped is False
    assert operating_q(0.420).q == pytest.approx(0.500, rel=1e-15)
    assert operating_q(0.105).q == pytest.approx(0.125, rel=1e-15)


def test_operating_q_clamps_at_one():
    op = operating_q(1.0)  # 0.25 * 1.0 / 0.21 = 1.19 -> clamp
    assert op.q == 1.0
    assert op.clamped is True


def test_max_frequency_frozen_surface_point():
    f = max_frequency(0.210, 90e-6, CA40, 10.0) / (2 * math.pi)
    assert f == pytest.approx(995476.7191757085, rel=1e-9)


def test_max_frequency_consistent_with_q_and_omega():
    # at the operating q the drive that realizes omega_max satisfies both
    # the q definition and the frequency formula
    k, r0, v = 0.35, 70e-6, 12.0
    q = operating_q(k).q
    w_max = max_frequency(k, r0, CA40, v)
    omega_rf = 2 * math.sqrt(2) * w_max / q
    assert stability_q(v, k, r0, CA40, omega_rf) == pytest.approx(q, rel=1e-12)
    assert radial_frequency(v, k, r0, CA40, omega_rf) == pytest.approx(
        w_max, rel=1e-12)


def test_drive_for_target_round_trip():
    k, r0, q = 0.28, 46e-6, 1.0 / 3.0
    target = 2 * math.pi * 10e6
    v, omega_rf = drive_for_target(q, target, r0, k, CA40)
    assert stability_q(v, k, r0, CA40, omega_rf) == pytest.approx(q, rel=1e-12)
    assert radial_frequency(v, k, r0, CA40, omega_rf) == pytest.approx(
        target, rel=1e-12)


def test_drive_for_target_rejects_bad_q():
    for q in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            drive_for_target(q, 2 * math.pi * 1e6, 90e-6, 0.21, CA40)


def test_norms_are_one_for_self_reference():
    assert heating_norm(2.0, 5.0, 2.0, 5.0) == 1.0
    assert power_norm(3.0, 7.0, 3.0, 7.0) == 1.0


def test_norm_scalings():
    # heating ~ (omega_ref/omega)^2 (d_ref/d)^4
    assert heating_norm(2.0, 1.0, 1.0, 1.0) == pytest.approx(0.25)
    assert heating_norm(1.0, 2.0, 1.0, 1.0) == pytest.approx(1.0 / 16.0)
    # power ~ V^2 Omega^2
    assert power_norm(2.0, 3.0, 1.0, 1.0) == pytest.approx(36.0)


# -- null finding --------------------------------------------------------------


def _offset_quad(center=(5e-6, 80e-6, 0.0)):
    return PseudoField(QuadrupoleField(kx=1.0, ky=-1.0, r0=100e-6,
                                       center=center),
                       species=CA40, drive=DRIVE)


def test_find_rf_null_exact_on_quadrupole():
    ps = _offset_quad()
    res = find_rf_null(ps, (-20.0, 40.0, 0.0), (30.0, 140.0, 0.0), scan_um=7.0)
    assert res.converged
    np.testing.assert_allclose(res.position, [5e-6, 80e-6, 0.0], atol=1e-12)
    assert res.height_um == pytest.approx(80.0, abs=1e-6)
    assert res.psi_J == pytest.approx(0.0, abs=1e-30)
    assert res.grad_norm == pytest.approx(0.0, abs=1e-18)


def test_find_rf_null_raises_when_minimum_on_boundary():
    ps = _offset_quad(center=(0.0, 200e-6, 0.0))  # outside the region below
    with pytest.raises(NullNotFoundError, match="boundary"):
        find_rf_null(ps, (-10.0, 40.0, 0.0), (10.0, 120.0, 0.0), scan_um=5.0)


class _TwoWellField:
    """|E| vanishing at exactly (0, y1, *) and (0, y2, *) (test double)."""

    signature = "two-well"

    def __init__(self, y1, y2, s=1e-4):
        self.y1, self.y2, self.s = y1, y2, s

    def field(self, points):
        p = np.atleast_2d(points)
        out = np.zeros_like(p)
        out[:, 0] = (p[:, 1] - self.y1) * (p[:, 1] - self.y2) / self.s**2
        out[:, 1] = p[:, 0] / self.s
        return out

    def jacobian(self, points):
        p = np.atleast_2d(points)
        J = np.zeros((p.shape[0], 3, 3))
        J[:, 0, 1] = (2 * p[:, 1] - self.y1 - self.y2) / self.s**2
        J[:, 1, 0] = 1.0 / self.s
        return J


def test_find_rf_null_raises_on_ambiguous_minima():
    ps = PseudoField(_TwoWellField(60e-6, 120e-6), species=CA40, drive=DRIVE)
    with pytest.raises(NullAmbiguityError, match="minima"):
        find_rf_null(ps, (-10.0, 30.0, 0.0), (10.0, 150.0, 0.0), scan_um=5.0)


# -- harmonicity ---------------------------------------------------------------


def test_fit_recovers_exact_quadrupole_k():
    r0 = 100e-6
    field = QuadrupoleField(kx=1.0, ky=-1.0, r0=r0)
    fit = fit_axis_harmonicity(field, DRIVE, np.zeros(3), r0, (0.0, 1.0, 0.0))
    assert fit.k == pytest.approx(1.0, rel=1e-10)
    assert fit.k_signed == pytest.approx(-1.0, rel=1e-10)
    assert fit.std_err < 1e-9
    assert not fit.residual_warning
    fx = fit_axis_harmonicity(field, DRIVE, np.zeros(3), r0, (1.0, 0.0, 0.0))
    assert fx.k_signed == pytest.approx(1.0, rel=1e-10)


def test_fit_k_independent_of_drive_voltage():
    r0 = 100e-6
    field = QuadrupoleField(kx=1.0, ky=-1.0, r0=r0)
    for v in (1.0, 10.0, 320.0):
        fit = fit_axis_harmonicity(field, DriveParams.from_mhz(v, 20.0),
                                   np.zeros(3), r0, (0.0, 1.0, 0.0))
        assert fit.k == pytest.approx(1.0, rel=1e-10)


def test_fit_rejects_degenerate_inputs():
    field = QuadrupoleField(kx=1.0, ky=-1.0, r0=100e-6)
    with pytest.raises(FitError, match="5 sample points"):
        fit_axis_harmonicity(field, DRIVE, np.zeros(3), 100e-6,
                             (0.0, 1.0, 0.0), n_points=4)
    with pytest.raises(FitError, match="positive"):
        fit_axis_harmonicity(field, DriveParams(0.0, 1e8), np.zeros(3),
                             100e-6, (0.0, 1.0, 0.0))


class _PolyField:
    """Potential a2 y^2 + a4 y^4 along y (per volt), for fit-bias tests."""

    signature = "poly"

    def __init__(self, a2, a4):
        self.a2, self.a4 = a2, a4

    def potential(self, points):
        y = np.atleast_2d(points)[:, 1]
        return self.a2 * y * y + self.a4 * y**4


def test_fit_bias_from_quartic_matches_moment_projection():
    # fitting 1, s, s^2 to a2 s^2 + a4 s^4 by least squares projects the
    # quartic onto the quadratic. Solving the normal equations by hand with
    # the even sample moments m_k = mean(s^k) gives
    #     c2 = a2 + a4 (m6 - m2 m4) / (m4 - m2^2),
    # which tends to a2 + (6/7) a4 w^2 for dense symmetric sampling.
    r0 = 100e-6
    w = 0.2 * r0
    a2, a4 = 1e7, 5e14
    n = 2001
    fit = fit_axis_harmonicity(_PolyField(a2, a4), DRIVE, np.zeros(3), r0,
                               (0.0, 1.0, 0.0), n_points=n)
    s = np.linspace(-w, w, n)
    m2, m4, m6 = (np.mean(s**k) for k in (2, 4, 6))
    c2_exact = a2 + a4 * (m6 - m2 * m4) / (m4 - m2 * m2)
    # k = 2 c2 r0^2 per volt of drive, and the potential above is per volt,
    # so the voltage cancels: c2 = k_signed / (2 r0^2)
    c2_fit = fit.k_signed / (2.0 * r0 * r0)
    assert c2_fit == pytest.approx(c2_exact, rel=1e-9)
    assert c2_fit == pytest.approx(a2 + (6.0 / 7.0) * a4 * w * w, rel=1e-3)


def test_residual_warning_fires_on_gross_anharmonicity():
    r0 = 100e-6
    quiet = fit_axis_harmonicity(_PolyField(1e7, 0.0), DRIVE, np.zeros(3),
                                 r0, (0.0, 1.0, 0.0))
    assert not quiet.residual_warning
    loud = fit_axis_harmonicity(_PolyField(1e7, 1e17), DRIVE, np.zeros(3),
                                r0, (0.0, 1.0, 0.0))
    assert loud.residual_warning


def test_fit_std_err_shrinks_with_sample_density():
    # with a systematic quartic residual the covariance-based standard error
    # falls off as 1/sqrt(n)
    r0 = 100e-6
    field = _PolyField(1e7, 5e14)
    se41 = fit_axis_harmonicity(field, DRIVE, np.zeros(3), r0,
                                (0.0, 1.0, 0.0), n_points=41).std_err
    se2001 = fit_axis_harmonicity(field, DRIVE, np.zeros(3), r0,
                                  (0.0, 1.0, 0.0), n_points=2001).std_err
    assert se2001 < se41 / 5.0


class _XYQuadrupole:
    """phi = x y / r0^2 per volt: principal axes on the diagonals."""

    signature = "xy-quad"

    def __init__(self, r0):
        self.r0 = r0

    def potential(self, points):
        p = np.atleast_2d(points)
        return p[:, 0] * p[:, 1] / self.r0**2

    def field(self, points):
        p = np.atleast_2d(points)
        return -np.column_stack([p[:, 1], p[:, 0], np.zeros(p.shape[0])]) / self.r0**2

    def jacobian(self, points):
        m = np.atleast_2d(points).shape[0]
        J = np.zeros((3, 3))
        J[0, 1] = J[1, 0] = -1.0 / self.r0**2
        return np.broadcast_to(J, (m, 3, 3)).copy()


def test_fit_harmonicity_axes_per_design():
    r0 = 100e-6
    planar = fit_harmonicity(QuadrupoleField(kx=1.0, ky=-1.0, r0=r0), DRIVE,
                             np.zeros(3), r0, design="surface")
    assert planar.scalar_axis == "y"
    assert set(planar.fits) == {"x", "y"}
    assert planar.k == pytest.approx(planar.k_y)
    assert planar.k_y == pytest.approx(1.0, rel=1e-10)

    cross = fit_harmonicity(_XYQuadrupole(r0), DRIVE, np.zeros(3), r0,
                            design="cross-rf")
    assert cross.scalar_axis == "diag_rf"
    assert set(cross.fits) == {"diag_rf", "diag_gnd"}
    assert cross.k == pytest.approx(1.0, rel=1e-10)
    assert cross.fits["diag_gnd"].k == pytest.approx(1.0, rel=1e-10)
    # the same field fitted on the cartesian axes shows no curvature at all
    planar_view = fit_harmonicity(_XYQuadrupole(r0), DRIVE, np.zeros(3), r0,
                                  design="surface")
    assert planar_view.k_y == pytest.approx(0.0, abs=1e-10)


# -- flood fill ----------------------------------------------------------------


def _escape_oracle(values, start):
    """Exhaustive reference: smallest threshold whose sublevel component of
    `start` touches the boundary."""
    values = np.asarray(values, float)
    shape = values.shape
    levels = np.unique(values)
    for t in levels:
        if values[start] > t:
            continue
        seen = {start}
        stack = [start]
        while stack:
            c = stack.pop()
            if any(c[ax] in (0, shape[ax] - 1)
                   for ax in range(values.ndim) if shape[ax] > 1):
                return float(t)
            for ax in range(values.ndim):
                for d in (-1, 1):
                    nb = list(c)
                    nb[ax] += d
                    nb = tuple(nb)
                    if 0 <= nb[ax] < shape[ax] and nb not in seen \
                            and values[nb] <= t:
                        seen.add(nb)
                        stack.append(nb)
    raise AssertionError("unreachable: max level floods everything")


def test_flood_fill_simple_ridge():
    values = np.array([[9.0, 9.0, 9.0, 9.0, 9.0],
                       [9.0, 0.0, 3.0, 1.0, 0.5],
                       [9.0, 9.0, 9.0, 9.0, 9.0]])
    level, cell, boundary_limited = flood_fill_escape(values, (1, 1))
    assert level == 3.0
    assert cell == (1, 2)
    assert not boundary_limited


def test_flood_fill_boundary_start_is_boundary_limited():
    values = np.array([[0.0, 1.0], [2.0, 3.0]])
    level, cell, boundary_limited = flood_fill_escape(values, (0, 0))
    assert level == 0.0
    assert boundary_limited


def test_flood_fill_monotonic_bowl_exits_at_rim():
    x = np.linspace(-1, 1, 11)
    X, Y = np.meshgrid(x, x, indexing="ij")
    values = X**2 + Y**2
    level, cell, boundary_limited = flood_fill_escape(values, (5, 5))
    assert level == pytest.approx(1.0)  # rim minimum (edge midpoint)
    assert boundary_limited


def test_flood_fill_matches_exhaustive_oracle_3d():
    rng = np.random.default_rng(42)
    for _ in range(20):
        values = rng.uniform(0.0, 1.0, size=(6, 5, 4))
        start = (rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 3))
        values[start] = 0.0
        level, cell, _ = flood_fill_escape(values, start)
        assert level == _escape_oracle(values, start)


@settings(max_examples=60, deadline=None)
@given(
    values=hnp.arrays(np.float64, (5, 5),
                      elements=st.floats(0.0, 10.0, allow_nan=False)),
    si=st.integers(1, 3), sj=st.integers(1, 3),
)
def test_flood_fill_matches_oracle_property(values, si, sj):
    level, cell, _ = flood_fill_escape(values, (si, sj))
    assert level == _escape_oracle(values, (si, sj))
    assert level >= values[si, sj]


# -- trap depth ----------------------------------------------------------------


class _HexQuadField:
    """Quadrupole with hexapole admixture: phi = [(x'^2 - y'^2)/2
    + beta (x'^3 - 3 x' y'^2) / (3 r0)] / r0^2 about (0, y0, 0), per volt.

    |E| has nulls at x' = 0 and x' = -r0/beta on y' = 0 and a saddle of
    |E|^2 between them at x' = -r0/(2 beta), height (r0 / (4 beta))^2 / r0^4.
    """

    signature = "hex-quad"

    def __init__(self, r0, beta, y0):
        self.r0, self.beta, self.y0 = r0, beta, y0

    def _xy(self, points):
        p = np.atleast_2d(points)
        return p[:, 0], p[:, 1] - self.y0

    def potential(self, points):
        x, y = self._xy(points)
        r0, b = self.r0, self.beta
        return ((x * x - y * y) / 2 + b * (x**3 - 3 * x * y * y) / (3 * r0)) / r0**2

    def field(self, points):
        x, y = self._xy(points)
        r0, b = self.r0, self.beta
        ex = -(x + b * (x * x - y * y) / r0) / r0**2
        ey = (y + 2 * b * x * y / r0) / r0**2
        return np.column_stack([ex, ey, np.zeros_like(ex)])

    def jacobian(self, points):
        x, y = self._xy(points)
        r0, b = self.r0, self.beta
        J = np.zeros((x.size, 3, 3))
        J[:, 0, 0] = -(1 + 2 * b * x / r0) / r0**2
        J[:, 0, 1] = J[:, 1, 0] = 2 * b * y / r0 / r0**2
        J[:, 1, 1] = (1 + 2 * b * x / r0) / r0**2
        return J


def test_trap_depth_finds_analytic_saddle():
    r0, beta, y0 = 100e-6, 0.4, 100e-6
    field = _HexQuadField(r0, beta, y0)
    pseudo = PseudoField(field, species=CA40, drive=DRIVE)
    null = find_rf_null(pseudo, (-40.0, 60.0, 0.0), (40.0, 140.0, 0.0),
                        scan_um=5.0)
    np.testing.assert_allclose(null.position, [0.0, y0, 0.0], atol=1e-12)
    depth = trap_depth(pseudo, null, x_half_um=300.0, y_lo_um=2.0,
                       y_hi_um=250.0)
    assert not depth.boundary_limited
    assert depth.polished
    x_saddle = -r0 / (2 * beta)
    np.testing.assert_allclose(depth.saddle[:2], [x_saddle, y0], atol=1e-11)
    expected = pseudo.coef * (r0 / (4 * beta)) ** 2 / r0**4
    assert depth.depth_J == pytest.approx(expected, rel=1e-8)
    # escape is along +/- x and the saddle has exactly one downhill direction
    assert abs(depth.escape_direction[0]) == pytest.approx(1.0, abs=1e-6)
    assert (depth.hessian_eigs < 0).sum() == 1
    # the polished depth is consistent with (and finer than) the grid level
    assert depth.grid_level_J == pytest.approx(expected, rel=0.05)


def test_trap_depth_pure_quadrupole_is_boundary_limited():
    # a pure quadrupole pseudopotential rises in every direction: no saddle
    ps = _offset_quad(center=(0.0, 100e-6, 0.0))
    null = find_rf_null(ps, (-20.0, 60.0, 0.0), (20.0, 140.0, 0.0), scan_um=5.0)
    depth = trap_depth(ps, null, x_half_um=120.0, y_lo_um=20.0, y_hi_um=180.0)
    assert depth.boundary_limited
    assert depth.saddle is None
    assert depth.depth_J > 0.0


def test_trap_depth_value_independent_of_grid_resolution():
    # the grid only locates the pass; the Newton polish sets the value
    r0, beta, y0 = 100e-6, 0.4, 100e-6
    pseudo = PseudoField(_HexQuadField(r0, beta, y0), species=CA40, drive=DRIVE)
    null = find_rf_null(pseudo, (-40.0, 60.0, 0.0), (40.0, 140.0, 0.0),
                        scan_um=5.0)
    d1 = trap_depth(pseudo, null, y_hi_um=250.0, res_um=4.0)
    d2 = trap_depth(pseudo, null, y_hi_um=250.0, res_um=9.0)
    assert d1.polished and d2.polished
    assert d1.depth_J == pytest.approx(d2.depth_J, rel=1e-10)
