"""Boundary-element electrostatics on rectangular sheet panels.

Each panel carries a uniform surface charge density. The potential of a unit
density over the rectangle [0,a]x[0,b] at local point (xi, eta, zeta) has the
closed antiderivative form

    phi = (1/4 pi eps0) * sum_corners +/- F(u, v),
    F(u, v) = u ln(v + r) + v ln(u + r) - |z| atan(u v / (|z| r)),

with u = x_corner - xi, v = y_corner - eta, r = sqrt(u^2 + v^2 + z^2). The
corner sum telescopes the same way for the field and the field Jacobian,
which are therefore analytic as well (the Jacobian trace vanishes identically:
Laplace). Logs are evaluated through the identity v + r = (u^2+z^2)/(r - v)
when v <= 0, which keeps every quantity finite up to the panel edge lines.

Collocation at panel centers with one row per center and one column per panel
gives a dense system A sigma = V; unit excitations (1 V on one electrode,
0 V elsewhere) are solved for every electrode from a single LU factorization.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import constants
from .errors import InvalidGeometryError, SolverError
from .geometry import TrapGeometry

_TINY = 1e-300
# target number of (point, panel) pairs held in memory per evaluation block
_BLOCK_PAIRS = 4_000_000
# hard conditioning limit for the dense collocation matrix
COND_LIMIT = 1e12
# boundary-condition residual each unit solve must satisfy, in volts
RESIDUAL_LIMIT = 1e-8

CACHE_ENV = "IONTRAP_CACHE_DIR"
_CACHE_MAGIC = b"ITSC"
_CACHE_VERSION = 1


class PanelSet:
    """Panel arrays (meters) with precomputed local frames."""

    def __init__(self, origins, edge_u, edge_v, electrode_idx):
        self.origins = np.asarray(origins, float)
        self.edge_u = np.asarray(edge_u, float)
        self.edge_v = np.asarray(edge_v, float)
        self.electrode_idx = np.asarray(electrode_idx)
        self.a = np.linalg.norm(self.edge_u, axis=1)
        self.b = np.linalg.norm(self.edge_v, axis=1)
        if np.any(self.a <= 0) or np.any(self.b <= 0):
            raise InvalidGeometryError("degenerate panel (zero edge length)")
        self.uhat = self.edge_u / self.a[:, None]
        self.vhat = self.edge_v / self.b[:, None]
        self.nhat = np.cross(self.uhat, self.vhat)
        self.centers = self.origins + 0.5 * (self.edge_u + self.edge_v)
        self.areas = self.a * self.b
        # offsets so local coords come from plain matrix products
        self._ou = np.einsum("ij,ij->i", self.origins, self.uhat)
        self._ov = np.einsum("ij,ij->i", self.origins, self.vhat)
        self._on = np.einsum("ij,ij->i", self.origins, self.nhat)

    @property
    def n(self):
        return self.origins.shape[0]

    def local_coords(self, points):
        """Corner-relative coordinates, each (m, n)."""
        p = np.atleast_2d(np.asarray(points, float))
        xi = p @ self.uhat.T - self._ou
        eta = p @ self.vhat.T - self._ov
        zeta = p @ self.nhat.T - self._on
        return -xi, self.a - xi, -eta, self.b - eta, zeta


def _ln_vr(u, v, z2, r):
    """ln(v + r), stable for v <= 0 via (u^2+z^2)/(r-v)."""
    pos = v > 0.0
    direct = np.where(pos, v + r, 1.0)
    num = np.maximum(u * u + z2, _TINY)
    den = np.maximum(np.where(pos, 1.0, r - v), _TINY)
    return np.where(pos, np.log(direct), np.log(num) - np.log(den))


def _potential_sums(U1, U2, V1, V2, Z):
    z2 = Z * Z
    t = np.abs(Z)

    def F(u, v):
        r = np.sqrt(u * u + v * v + z2)
        return (u * _ln_vr(u, v, z2, r)
                + v * _ln_vr(v, u, z2, r)
                - t * np.arctan2(u * v, t * r))

    return F(U2, V2) - F(U1, V2) - F(U2, V1) + F(U1, V1)


def _field_sums(U1, U2, V1, V2, Z):
    z2 = Z * Z
    t = np.abs(Z)
    sgn = np.sign(Z)
    ex = np.zeros_like(Z)
    ey = np.zeros_like(Z)
    ez = np.zeros_like(Z)
    for u, v, s in ((U2, V2, 1.0), (U1, V2, -1.0), (U2, V1, -1.0), (U1, V1, 1.0)):
        r = np.sqrt(u * u + v * v + z2)
        ex += s * _ln_vr(u, v, z2, r)
        ey += s * _ln_vr(v, u, z2, r)
        ez += s * np.arctan2(u * v, t * r)
    return ex, ey, ez * sgn


def _jacobian_sums(U1, U2, V1, V2, Z):
    z2 = Z * Z
    jxx = np.zeros_like(Z)
    jxy = np.zeros_like(Z)
    jxz = np.zeros_like(Z)
    jyy = np.zeros_like(Z)
    jyz = np.zeros_like(Z)
    jzz = np.zeros_like(Z)
    for u, v, s in ((U2, V2, 1.0), (U1, V2, -1.0), (U2, V1, -1.0), (U1, V1, 1.0)):
        r = np.maximum(np.sqrt(u * u + v * v + z2), _TINY)
        du = np.maximum(u * u + z2, _TINY)
        dv = np.maximum(v * v + z2, _TINY)
        jxx += s * u * (r - v) / (r * du)
        jxy += s / r
        jxz += s * Z * (r - v) / (r * du)
        jyy += s * v * (r - u) / (r * dv)
        jyz += s * Z * (r - u) / (r * dv)
        jzz += s * u * v * (r * r + z2) / (r * du * dv)
    return jxx, jxy, jxz, jyy, jyz, jzz


def _blocks(m, n):
    step = max(8, int(_BLOCK_PAIRS // max(n, 1)))
    for i0 in range(0, m, step):
        yield i0, min(i0 + step, m)


def potential_matrix(pset: PanelSet, points, out=None):
    """Potential at each point per unit charge density of each panel, (m, n)."""
    p = np.atleast_2d(np.asarray(points, float))
    m = p.shape[0]
    k = 1.0 / (4.0 * np.pi * constants.EPS0)
    A = out if out is not None else np.empty((m, pset.n))
    for i0, i1 in _blocks(m, pset.n):
        U1, U2, V1, V2, Z = pset.local_coords(p[i0:i1])
        A[i0:i1, :] = k * _potential_sums(U1, U2, V1, V2, Z)
    return A


def potential_of(pset: PanelSet, sigma, points):
    p = np.atleast_2d(np.asarray(points, float))
    k = 1.0 / (4.0 * np.pi * constants.EPS0)
    sig = np.asarray(sigma, float)
    phi = np.empty(p.shape[0] if sig.ndim == 1 else (p.shape[0], sig.shape[1]))
    for i0, i1 in _blocks(p.shape[0], pset.n):
        U1, U2, V1, V2, Z = pset.local_coords(p[i0:i1])
        phi[i0:i1] = k * (_potential_sums(U1, U2, V1, V2, Z) @ sig)
    return phi


def field_of(pset: PanelSet, sigma, points):
    p = np.atleast_2d(np.asarray(points, float))
    k = 1.0 / (4.0 * np.pi * constants.EPS0)
    sig = np.asarray(sigma, float)
    E = np.empty((p.shape[0], 3))
    for i0, i1 in _blocks(p.shape[0], pset.n):
        U1, U2, V1, V2, Z = pset.local_coords(p[i0:i1])
        ex, ey, ez = _field_sums(U1, U2, V1, V2, Z)
        E[i0:i1] = k * ((ex * sig) @ pset.uhat
                        + (ey * sig) @ pset.vhat
                        + (ez * sig) @ pset.nhat)
    return E


def jacobian_of(pset: PanelSet, sigma, points):
    """dE_i/dx_j of the superposed field, (m, 3, 3); trace is zero (Laplace)."""
    p = np.atleast_2d(np.asarray(points, float))
    k = 1.0 / (4.0 * np.pi * constants.EPS0)
    sig = np.asarray(sigma, float)
    J = np.zeros((p.shape[0], 3, 3))
    u, v, n = pset.uhat, pset.vhat, pset.nhat
    for i0, i1 in _blocks(p.shape[0], pset.n):
        U1, U2, V1, V2, Z = pset.local_coords(p[i0:i1])
        jxx, jxy, jxz, jyy, jyz, jzz = _jacobian_sums(U1, U2, V1, V2, Z)
        blk = np.zeros((i1 - i0, 3, 3))
        blk -= np.einsum("mn,ni,nj->mij", jxx * sig, u, u)
        blk -= np.einsum("mn,ni,nj->mij", jyy * sig, v, v)
        blk -= np.einsum("mn,ni,nj->mij", jzz * sig, n, n)
        sym = np.einsum("mn,ni,nj->mij", jxy * sig, u, v)
        blk -= sym + sym.transpose(0, 2, 1)
        sym = np.einsum("mn,ni,nj->mij", jxz * sig, u, n)
        blk += sym + sym.transpose(0, 2, 1)
        sym = np.einsum("mn,ni,nj->mij", jyz * sig, v, n)
        blk += sym + sym.transpose(0, 2, 1)
        J[i0:i1] = k * blk
    return J


# -- single-panel helpers (testing / inspection) ----------------------------


def _single(origin, edge_u, edge_v):
    return PanelSet(np.array([origin], float), np.array([edge_u], float),
                    np.array([edge_v], float), np.array([0]))


def panel_potential(origin, edge_u, edge_v, points):
    """Potential (V) per unit charge density (C/m^2), geometry in meters."""
    ps = _single(origin, edge_u, edge_v)
    out = potential_matrix(ps, points)[:, 0]
    return out if np.ndim(points) > 1 else float(out[0])


def panel_field(origin, edge_u, edge_v, points):
    """Field (V/m) per unit charge density. On the sheet itself the normal
    component is discontinuous; the principal value (tangential part) is
    returned and a warning is emitted."""
    ps = _single(origin, edge_u, edge_v)
    pts = np.atleast_2d(np.asarray(points, float))
    U1, U2, V1, V2, Z = ps.local_coords(pts)
    on_sheet = (np.abs(Z[:, 0]) < 1e-15 * max(ps.a[0], ps.b[0])) \
        & (U1[:, 0] <= 0) & (U2[:, 0] >= 0) & (V1[:, 0] <= 0) & (V2[:, 0] >= 0)
    if np.any(on_sheet):
        warnings.warn("point lies on the charged sheet; normal field is "
                      "discontinuous, returning the principal value")
    E = field_of(ps, np.ones(1), pts)
    return E if np.ndim(points) > 1 else E[0]


# -- solver ------------------------------------------------------------------


@dataclass
class UnitSolution:
    """Charge densities for 1 V on one electrode, all others grounded."""

    electrode: str
    sigma: np.ndarray
    residual_max: float


class SolvedTrap:
    """All unit excitations of a geometry plus evaluation helpers."""

    def __init__(self, geometry: TrapGeometry, pset: PanelSet,
                 solutions: dict[str, UnitSolution], cond_estimate: float):
        self.geometry = geometry
        self.pset = pset
        self.solutions = solutions
        self.cond_estimate = cond_estimate

    @property
    def residual_max(self) -> float:
        return max(s.residual_max for s in self.solutions.values())

    def sigma_for(self, voltages: dict[str, float]) -> np.ndarray:
        sig = np.zeros(self.pset.n)
        for name, volt in voltages.items():
            if name not in self.solutions:
                raise KeyError(f"no electrode named {name!r}")
            if volt:
                sig += volt * self.solutions[name].sigma
        return sig

    def rf_voltages(self, amplitude: float = 1.0) -> dict[str, float]:
        return {n: amplitude for n in self.geometry.electrodes_with_role("rf")}

    def potential(self, points, voltages=None):
        sig = self.sigma_for(voltages or self.rf_voltages())
        return potential_of(self.pset, sig, points)

    def field(self, points, voltages=None):
        sig = self.sigma_for(voltages or self.rf_voltages())
        return field_of(self.pset, sig, points)

    def jacobian(self, points, voltages=None):
        sig = self.sigma_for(voltages or self.rf_voltages())
        return jacobian_of(self.pset, sig, points)

    def charge(self, electrode: str, voltages: dict[str, float]) -> float:
        """Total charge (C) on an electrode under the given excitation."""
        sig = self.sigma_for(voltages)
        idx = self.geometry.electrode_names.index(electrode)
        sel = self.pset.electrode_idx == idx
        return float((sig[sel] * self.pset.areas[sel]).sum())

    def capacitance_matrix(self):
        """Maxwell capacitance matrix in F: C[i, j] = Q_i under unit excitation j."""
        names = self.geometry.electrode_names
        E = len(names)
        C = np.empty((E, E))
        for j, nj in enumerate(names):
            sig = self.solutions[nj].sigma
            for i in range(E):
                sel = self.pset.electrode_idx == i
                C[i, j] = (sig[sel] * self.pset.areas[sel]).sum()
        return names, C

    def rf_capacitance(self) -> float:
        """Charge on the rf electrodes with every rf rail at 1 V, in F."""
        volts = self.rf_voltages()
        return sum(self.charge(n, volts) for n in volts)


def evaluate_field(solved: SolvedTrap, points, voltages=None):
    """(potential V, field V/m) of a voltage pattern; default: 1 V on rf."""
    sig = solved.sigma_for(voltages or solved.rf_voltages())
    return (potential_of(solved.pset, sig, points),
            field_of(solved.pset, sig, points))


def solve_unit_excitations(geometry: TrapGeometry,
                           cache_dir: str | os.PathLike | None = None) -> SolvedTrap:
    """Solve 1 V unit excitations for every electrode of the geometry.

    cache_dir (or $IONTRAP_CACHE_DIR if set and cache_dir is None) enables a
    binary solution cache keyed by the geometry content hash.
    """
    if cache_dir is None:
        cache_dir = os.environ.get(CACHE_ENV) or None
    pset = PanelSet(*geometry.arrays_m())
    if cache_dir:
        cached = _cache_load(cache_dir, geometry, pset)
        if cached is not None:
            return cached

    scale = float(np.median(pset.a))
    key = np.round(pset.centers / (1e-9 * scale)).astype(np.int64)
    if np.unique(key, axis=0).shape[0] != pset.n:
        raise InvalidGeometryError(
            "coincident panel centers detected (overlapping electrodes?)")

    n = pset.n
    A = np.empty((n, n), order="F")
    potential_matrix(pset, pset.centers, out=A)
    anorm = float(np.abs(A).sum(axis=0).max())
    lu, piv = sla.lu_factor(A, overwrite_a=True, check_finite=False)
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond == 0.0:
        raise SolverError(f"condition estimate failed for {geometry.design}")
    cond = 1.0 / rcond
    if cond > COND_LIMIT:
        raise SolverError(
            f"BEM system for {geometry.design!r} is ill-conditioned "
            f"(cond ~ {cond:.2e} > {COND_LIMIT:.0e}); check the mesh")
    del A

    names = geometry.electrode_names
    B = np.zeros((n, len(names)), order="F")
    for j in range(len(names)):
        B[pset.electrode_idx == j, j] = 1.0
    S = sla.lu_solve((lu, piv), B, check_finite=False)

    # reconstruct the boundary potential through the public evaluation path;
    # every collocation point must sit on its prescribed voltage
    phi = potential_of(pset, S, pset.centers)
    solutions = {}
    for j, name in enumerate(names):
        res = float(np.abs(phi[:, j] - B[:, j]).max())
        if res > RESIDUAL_LIMIT:
            raise SolverError(
                f"boundary residual {res:.3e} V exceeds {RESIDUAL_LIMIT:.0e} V "
                f"for electrode {name!r} of {geometry.design!r}")
        solutions[name] = UnitSolution(name, np.ascontiguousarray(S[:, j]), res)

    solved = SolvedTrap(geometry, pset, solutions, cond)
    if cache_dir:
        _cache_save(cache_dir, solved)
    return solved


# -- solution cache ----------------------------------------------------------
#
# File layout (all integers little endian):
#   bytes 0:4    magic "ITSC"
#   bytes 4:8    uint32 format version (1)
#   bytes 8:16   uint64 header length H
#   bytes 16:16+H JSON header: signature, electrode names, n_panels,
#                 cond_estimate, residuals, payload sha256
#   remainder    one float64[n_panels] '<f8' charge-density block per
#                 electrode, in header order


def _cache_path(cache_dir, signature):
    return os.path.join(cache_dir, f"{signature}.itsc")


def _cache_save(cache_dir, solved: SolvedTrap):
    os.makedirs(cache_dir, exist_ok=True)
    names = list(solved.solutions)
    payload = b"".join(
        np.ascontiguousarray(solved.solutions[n].sigma, dtype="<f8").tobytes()
        for n in names)
    header = json.dumps({
        "signature": solved.geometry.signature(),
        "electrodes": names,
        "n_panels": solved.pset.n,
        "cond_estimate": solved.cond_estimate,
        "residuals": {n: solved.solutions[n].residual_max for n in names},
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }, sort_keys=True).encode()
    path = _cache_path(cache_dir, solved.geometry.signature())
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<I", _CACHE_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)
    os.replace(tmp, path)


def _cache_load(cache_dir, geometry, pset):
    path = _cache_path(cache_dir, geometry.signature())
    if not os.path.exists(path):
        return None
    try:
        with open(path, "rb") as f:
            if f.read(4) != _CACHE_MAGIC:
                raise ValueError("bad magic")
            (version,) = struct.unpack("<I", f.read(4))
            if version != _CACHE_VERSION:
                raise ValueError(f"unsupported cache version {version}")
            (hlen,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(hlen))
            payload = f.read()
        if header["signature"] != geometry.signature():
            raise ValueError("signature mismatch")
        if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
            raise ValueError("payload checksum mismatch")
        n = header["n_panels"]
        if n != pset.n:
            raise ValueError("panel count mismatch")
        sigmas = np.frombuffer(payload, dtype="<f8").reshape(len(header["electrodes"]), n)
        solutions = {
            name: UnitSolution(name, sigmas[i].copy(), header["residuals"][name])
            for i, name in enumerate(header["electrodes"])
        }
        return SolvedTrap(geometry, pset, solutions, header["cond_estimate"])
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        warnings.warn(f"ignoring corrupt solver cache {path}: {exc}")
        return None
