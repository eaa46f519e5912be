"""Ponderomotive (pseudo)potential of the rf field.

For an ion of charge e and mass m in a field of amplitude E(r) oscillating at
Omega_rf, the cycle-averaged energy landscape is

    psi(r) = e^2 |E(r)|^2 / (4 m Omega_rf^2)   [J]

reported in meV at the interfaces (divide by e, times 1e3: numerically the
common "e |E|^2 / 4 m Omega^2 in eV" form). The gradient uses the analytic
field Jacobian J = dE/dr via grad psi = (e^2 V^2 / 2 m Omega^2) J^T E; the
Hessian adds second field derivatives obtained by central-differencing J with
a small step (default 0.1 um).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import bem
from .constants import CA40, IonSpecies


@dataclass(frozen=True)
class DriveParams:
    """rf drive: amplitude in volts, angular frequency in rad/s."""

    voltage: float
    omega_rf: float

    def __post_init__(self):
        # zero amplitude is a valid (trivially flat) drive for field maps
        if not (self.voltage >= 0.0):
            raise ValueError(f"voltage must be >= 0, got {self.voltage}")
        if not (self.omega_rf > 0.0):
            raise ValueError(f"omega_rf must be > 0, got {self.omega_rf}")

    @classmethod
    def from_mhz(cls, voltage_V: float, freq_MHz: float) -> "DriveParams":
        return cls(voltage=voltage_V, omega_rf=2.0 * math.pi * freq_MHz * 1e6)

    @property
    def freq_MHz(self) -> float:
        return self.omega_rf / (2.0 * math.pi * 1e6)


# default drive used for the solved field maps and figures of merit
DEFAULT_DRIVE = DriveParams.from_mhz(10.0, 20.0)


class BemRfField:
    """Unit-amplitude rf field (1 V on every rf electrode) of a solved trap."""

    def __init__(self, solved: bem.SolvedTrap, voltages: dict | None = None):
        self.solved = solved
        self.voltages = voltages or solved.rf_voltages()
        self._sigma = solved.sigma_for(self.voltages)

    @property
    def signature(self) -> str:
        return self.solved.geometry.signature()

    def potential(self, points):
        return bem.potential_of(self.solved.pset, self._sigma, points)

    def field(self, points):
        return bem.field_of(self.solved.pset, self._sigma, points)

    def jacobian(self, points):
        return bem.jacobian_of(self.solved.pset, self._sigma, points)


class QuadrupoleField:
    """Ideal linear quadrupole, unit amplitude: phi = (kx x^2 + ky y^2 + kz z^2)/(2 r0^2).

    Coefficients must sum to zero (Laplace). Used as an analytic reference.
    """

    signature = "analytic-quadrupole"

    def __init__(self, kx: float, ky: float, r0: float, kz: float = 0.0,
                 center=(0.0, 0.0, 0.0)):
        if abs(kx + ky + kz) > 1e-12 * max(1.0, abs(kx), abs(ky), abs(kz)):
            raise ValueError("quadrupole coefficients must sum to zero")
        self.k = np.array([kx, ky, kz], float)
        self.r0 = float(r0)
        self.center = np.asarray(center, float)

    def potential(self, points):
        d = np.atleast_2d(points) - self.center
        return 0.5 * (d * d) @ self.k / self.r0**2

    def field(self, points):
        d = np.atleast_2d(points) - self.center
        return -d * self.k / self.r0**2

    def jacobian(self, points):
        m = np.atleast_2d(points).shape[0]
        return np.broadcast_to(np.diag(-self.k / self.r0**2), (m, 3, 3)).copy()


class PseudoField:
    """psi, grad psi and Hessian of the pseudopotential for one drive/ion."""

    def __init__(self, rf_field, species: IonSpecies = CA40,
                 drive: DriveParams = DEFAULT_DRIVE):
        self.rf_field = rf_field
        self.species = species
        self.drive = drive
        q, m = species.charge, species.mass
        # psi = coef * |E_unit|^2 with E_unit the 1 V field
        self.coef = (q * drive.voltage) ** 2 / (4.0 * m * drive.omega_rf**2)

    def psi(self, points) -> np.ndarray:
        """Pseudopotential energy in J."""
        E = self.rf_field.field(points)
        return self.coef * np.einsum("mi,mi->m", E, E)

    def psi_meV(self, points) -> np.ndarray:
        from .constants import ECHARGE
        return self.psi(points) / ECHARGE * 1e3

    def grad(self, points) -> np.ndarray:
        """d psi / dr in J/m, from the analytic field Jacobian."""
        E = self.rf_field.field(points)
        J = self.rf_field.jacobian(points)
        return 2.0 * self.coef * np.einsum("mij,mi->mj", J, E)

    def hessian(self, points, step: float = 1e-7) -> np.ndarray:
        """d^2 psi / dr^2 in J/m^2.

        H = 2 c (J^T J + sum_i E_i K_i); the second field derivatives K are
        central differences of the analytic Jacobian with the given step (m).
        """
        p = np.atleast_2d(np.asarray(points, float))
        E = self.rf_field.field(p)
        J = self.rf_field.jacobian(p)
        H = np.einsum("mia,mib->mab", J, J)
        for b in range(3):
            dp = np.zeros(3)
            dp[b] = step
            dJ = (self.rf_field.jacobian(p + dp) - self.rf_field.jacobian(p - dp)) \
                / (2.0 * step)
            H[:, :, b] += np.einsum("mi,mia->ma", E, dJ)
        H *= 2.0 * self.coef
        return 0.5 * (H + H.transpose(0, 2, 1))


@dataclass
class PseudoMap:
    """Pseudopotential sampled on a regular grid; lengths um, values meV."""

    xs_um: np.ndarray
    ys_um: np.ndarray
    zs_um: np.ndarray
    values_meV: np.ndarray  # shape (len(xs), len(ys), len(zs))
    meta: dict = dc_field(default_factory=dict)

    CSV_HEADER = "x_um,y_um,z_um,psi_meV"

    def csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for i, x in enumerate(self.xs_um):
            for j, y in enumerate(self.ys_um):
                for k, z in enumerate(self.zs_um):
                    v = self.values_meV[i, j, k]
                    lines.append(f"{float(x)!r},{float(y)!r},{float(z)!r},{float(v)!r}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write(self.csv_text())


def _grid_axis(center, span, res):
    if span <= 0.0:
        return np.array([center])
    n = int(round(span / res)) + 1
    lo = center - 0.5 * span
    return lo + np.arange(n) * res


def pseudo_map(pseudo: PseudoField, center_um, span_um, res_um: float,
               meta: dict | None = None) -> PseudoMap:
    """Sample psi on a regular grid; axes with zero span collapse to a point."""
    if res_um <= 0.0:
        raise ValueError("res_um must be > 0")
    axes = [_grid_axis(c, s, res_um) for c, s in zip(center_um, span_um)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts_m = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]) * 1e-6
    vals = pseudo.psi_meV(pts_m).reshape(X.shape)
    info = {
        "center_um": list(map(float, center_um)),
        "span_um": list(map(float, span_um)),
        "res_um": float(res_um),
        "voltage_V": pseudo.drive.voltage,
        "freq_MHz": pseudo.drive.freq_MHz,
        "species": pseudo.species.name,
        "field_signature": getattr(pseudo.rf_field, "signature", "unknown"),
    }
    if meta:
        info.update(meta)
    return PseudoMap(axes[0], axes[1], axes[2], vals, info)
