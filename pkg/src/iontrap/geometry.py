"""Trap geometries as collections of rectangular sheet electrodes.

Axes: x transverse, y vertical (height above the bottom wafer), z along the
trap axis. Interface lengths are in micrometers; panel arrays handed to the
field solver are in meters.

Three built-in designs:
  surface      five-wire planar trap: dc center rail, two rf rails, outer
               ground planes, all in the y=0 plane
  gnd-surface  the surface trap plus an unpatterned grounded plane at y=h
  cross-rf     four rails on two wafers (y=0 and y=h), rf pair on one
               diagonal, grounded pair on the other
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import InvalidGeometryError, InvalidInputError

ROLE_RF = "rf"
ROLE_DC = "dc"
ROLE_GROUND = "ground"
_ROLES = (ROLE_RF, ROLE_DC, ROLE_GROUND)

# mesh grading: target panel edge grows as 0.5 * distance from the fine box
_GROWTH = 0.5
# hard cap; a dense n x n solve matrix above this would not fit in memory
MAX_PANELS = 30000


@dataclass(frozen=True)
class Rect:
    """Axis-independent flat rectangle: origin corner plus two edge vectors.

    Coordinates in um. edge_u and edge_v must be orthogonal and nonzero.
    """

    origin: tuple[float, float, float]
    edge_u: tuple[float, float, float]
    edge_v: tuple[float, float, float]

    def __post_init__(self):
        u, v = np.asarray(self.edge_u, float), np.asarray(self.edge_v, float)
        lu, lv = np.linalg.norm(u), np.linalg.norm(v)
        if lu <= 0.0 or lv <= 0.0:
            raise InvalidGeometryError("rect edge vectors must be nonzero")
        if abs(float(u @ v)) > 1e-9 * lu * lv:
            raise InvalidGeometryError("rect edge vectors must be orthogonal")

    @property
    def area_um2(self) -> float:
        u, v = np.asarray(self.edge_u, float), np.asarray(self.edge_v, float)
        return float(np.linalg.norm(np.cross(u, v)))

    def corners(self) -> np.ndarray:
        o = np.asarray(self.origin, float)
        u = np.asarray(self.edge_u, float)
        v = np.asarray(self.edge_v, float)
        return np.stack([o, o + u, o + v, o + u + v])


@dataclass(frozen=True)
class Electrode:
    name: str
    role: str
    rects: tuple[Rect, ...]

    def __post_init__(self):
        if self.role not in _ROLES:
            raise InvalidGeometryError(
                f"electrode {self.name!r}: role must be one of {_ROLES}, got {self.role!r}"
            )
        if not self.rects:
            raise InvalidGeometryError(f"electrode {self.name!r} has no rects")

    @property
    def area_um2(self) -> float:
        return sum(r.area_um2 for r in self.rects)


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box, center/size in um."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def __post_init__(self):
        if any(s < 0 for s in self.size):
            raise InvalidGeometryError("box size components must be >= 0")

    @property
    def lo(self):
        return tuple(c - 0.5 * s for c, s in zip(self.center, self.size))

    @property
    def hi(self):
        return tuple(c + 0.5 * s for c, s in zip(self.center, self.size))


@dataclass(frozen=True)
class MeshParams:
    """Graded mesh control, lengths in um.

    coarse_um: max panel edge anywhere
    fine_um:   max panel edge for panels intersecting fine_region
    """

    coarse_um: float
    fine_um: float
    fine_region: Box3

    def __post_init__(self):
        if not (self.fine_um > 0.0):
            raise InvalidGeometryError("fine_um must be > 0")
        if self.coarse_um < self.fine_um:
            raise InvalidGeometryError("coarse_um must be >= fine_um")


@dataclass(frozen=True)
class GeometryParams:
    """Designer dimensions in um. Fields not used by a design stay None."""

    design: str
    mesh: MeshParams
    h_um: float | None = None
    rf_width_um: float | None = None
    center_width_um: float | None = None
    gap_um: float | None = None
    electrode_length_um: float | None = None
    wafer_extent_um: float | None = None

    def _require_positive(self, *names):
        for n in names:
            v = getattr(self, n)
            if v is None or not (v > 0.0):
                raise InvalidGeometryError(f"{self.design}: {n} must be > 0, got {v}")


class TrapGeometry:
    """Meshed electrode set ready for the field solver.

    Panels are stored as flat arrays (origin, edge_u, edge_v in um plus the
    owning electrode index); construction meshes the electrodes immediately.
    """

    def __init__(self, design: str, params: GeometryParams, electrodes: Iterable[Electrode]):
        self.design = design
        self.params = params
        self.electrodes = tuple(electrodes)
        if not self.electrodes:
            raise InvalidGeometryError("geometry has no electrodes")
        names = [e.name for e in self.electrodes]
        if len(set(names)) != len(names):
            raise InvalidGeometryError(f"duplicate electrode names: {names}")
        _check_no_overlap(self.electrodes)
        self.mesh = params.mesh
        self._warn_if_fine_region_outside()
        po, pu, pv, pe = _mesh_electrodes(self.electrodes, self.mesh)
        self.panel_origin_um = po
        self.panel_u_um = pu
        self.panel_v_um = pv
        self.panel_electrode = pe

    # -- basic queries ----------------------------------------------------

    @property
    def n_panels(self) -> int:
        return self.panel_origin_um.shape[0]

    @property
    def electrode_names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.electrodes)

    def electrodes_with_role(self, role: str) -> tuple[str, ...]:
        return tuple(e.name for e in self.electrodes if e.role == role)

    def panel_areas_um2(self) -> np.ndarray:
        return np.linalg.norm(np.cross(self.panel_u_um, self.panel_v_um), axis=1)

    def meshed_area_um2(self, name: str) -> float:
        idx = self.electrode_names.index(name)
        sel = self.panel_electrode == idx
        return float(self.panel_areas_um2()[sel].sum())

    def arrays_m(self):
        """Panel arrays in meters: (origins, edge_u, edge_v, electrode_idx)."""
        um = 1e-6
        return (
            self.panel_origin_um * um,
            self.panel_u_um * um,
            self.panel_v_um * um,
            self.panel_electrode,
        )

    def _warn_if_fine_region_outside(self):
        corners = np.concatenate([r.corners() for e in self.electrodes for r in e.rects])
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        blo, bhi = np.array(self.mesh.fine_region.lo), np.array(self.mesh.fine_region.hi)
        if np.any(bhi < lo) or np.any(blo > hi):
            warnings.warn(
                "fine_region does not intersect the electrode bounding box; "
                "mesh will be uniformly coarse",
                stacklevel=3,
            )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        params = {
            "mesh": {
                "coarse_um": self.mesh.coarse_um,
                "fine_um": self.mesh.fine_um,
                "fine_region": {
                    "center_um": list(self.mesh.fine_region.center),
                    "size_um": list(self.mesh.fine_region.size),
                },
            }
        }
        for key in ("h_um", "rf_width_um", "center_width_um", "gap_um",
                    "electrode_length_um", "wafer_extent_um"):
            val = getattr(self.params, key)
            if val is not None:
                params[key] = val
        return {
            "design": self.design,
            "units": "um",
            "params": params,
            "electrodes": [
                {
                    "name": e.name,
                    "role": e.role,
                    "rects": [
                        {
                            "origin": list(r.origin),
                            "u": list(r.edge_u),
                            "v": list(r.edge_v),
                        }
                        for r in e.rects
                    ],
                }
                for e in self.electrodes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrapGeometry":
        try:
            if d.get("units") != "um":
                raise InvalidInputError(
                    f"geometry units must be 'um', got {d.get('units')!r}"
                )
            p = d["params"]
            m = p["mesh"]
            mesh = MeshParams(
                coarse_um=float(m["coarse_um"]),
                fine_um=float(m["fine_um"]),
                fine_region=Box3(
                    center=tuple(float(x) for x in m["fine_region"]["center_um"]),
                    size=tuple(float(x) for x in m["fine_region"]["size_um"]),
                ),
            )
            params = GeometryParams(
                design=d["design"],
                mesh=mesh,
                **{
                    k: (float(p[k]) if k in p else None)
                    for k in ("h_um", "rf_width_um", "center_width_um", "gap_um",
                              "electrode_length_um", "wafer_extent_um")
                },
            )
            electrodes = [
                Electrode(
                    name=e["name"],
                    role=e["role"],
                    rects=tuple(
                        Rect(
                            origin=tuple(float(x) for x in r["origin"]),
                            edge_u=tuple(float(x) for x in r["u"]),
                            edge_v=tuple(float(x) for x in r["v"]),
                        )
                        for r in e["rects"]
                    ),
                )
                for e in d["electrodes"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed geometry dict: {exc}") from exc
        return cls(d["design"], params, electrodes)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "TrapGeometry":
        try:
            with open(path) as f:
                d = json.load(f)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(
                f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
        return cls.from_dict(d)

    def signature(self) -> str:
        """Content hash of the geometry + mesh; keys the solver cache."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def refine_mesh(geometry: TrapGeometry, mesh: MeshParams) -> TrapGeometry:
    """Re-mesh the same electrodes with different mesh parameters."""
    return TrapGeometry(geometry.design, replace(geometry.params, mesh=mesh),
                        geometry.electrodes)


# -- meshing ---------------------------------------------------------------


def _dist_to_box(cx, cy, cz, lo, hi):
    dx = max(lo[0] - cx, 0.0, cx - hi[0])
    dy = max(lo[1] - cy, 0.0, cy - hi[1])
    dz = max(lo[2] - cz, 0.0, cz - hi[2])
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def _mesh_electrodes(electrodes, mesh):
    fine, coarse = mesh.fine_um, mesh.coarse_um
    lo, hi = mesh.fine_region.lo, mesh.fine_region.hi
    origins, us, vs, eidx = [], [], [], []

    for ei, elec in enumerate(electrodes):
        for rect in elec.rects:
            stack = [(rect.origin, rect.edge_u, rect.edge_v)]
            while stack:
                o, u, v = stack.pop()
                lu = math.sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
                lv = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                # panel AABB; intersecting the fine box forces the fine target
                xs = (o[0], o[0] + u[0] + v[0], o[0] + u[0], o[0] + v[0])
                ys = (o[1], o[1] + u[1] + v[1], o[1] + u[1], o[1] + v[1])
                zs = (o[2], o[2] + u[2] + v[2], o[2] + u[2], o[2] + v[2])
                amin = (min(xs), min(ys), min(zs))
                amax = (max(xs), max(ys), max(zs))
                hits_box = all(amin[i] <= hi[i] and amax[i] >= lo[i] for i in range(3))
                if hits_box:
                    target = fine
                else:
                    cx = o[0] + 0.5 * (u[0] + v[0])
                    cy = o[1] + 0.5 * (u[1] + v[1])
                    cz = o[2] + 0.5 * (u[2] + v[2])
                    d = _dist_to_box(cx, cy, cz, lo, hi)
                    target = min(coarse, max(fine, _GROWTH * d))
                tol = target * (1.0 + 1e-9)
                if lu <= tol and lv <= tol:
                    origins.append(o)
                    us.append(u)
                    vs.append(v)
                    eidx.append(ei)
                    if len(origins) > MAX_PANELS:
                        raise InvalidGeometryError(
                            f"mesh exceeds {MAX_PANELS} panels; "
                            "coarsen fine_um or shrink fine_region"
                        )
                    continue
                if lu >= lv:  # split the longer edge, first half processed first
                    hu = (0.5 * u[0], 0.5 * u[1], 0.5 * u[2])
                    stack.append(((o[0] + hu[0], o[1] + hu[1], o[2] + hu[2]), hu, v))
                    stack.append((o, hu, v))
                else:
                    hv = (0.5 * v[0], 0.5 * v[1], 0.5 * v[2])
                    stack.append(((o[0] + hv[0], o[1] + hv[1], o[2] + hv[2]), u, hv))
                    stack.append((o, u, hv))

    if not origins:
        raise InvalidGeometryError("mesh produced zero panels")
    return (
        np.asarray(origins, float),
        np.asarray(us, float),
        np.asarray(vs, float),
        np.asarray(eidx, np.int32),
    )


def _check_no_overlap(electrodes):
    # rects are compared pairwise when they share a plane (same normal axis
    # and offset); positive-area 2D overlap is a construction error
    flat = [(e.name, r) for e in electrodes for r in e.rects]
    for i in range(len(flat)):
        for j in range(i + 1, len(flat)):
            ni, ri = flat[i]
            nj, rj = flat[j]
            if _rects_overlap(ri, rj):
                raise InvalidGeometryError(
                    f"electrode rects overlap: {ni!r} and {nj!r}"
                )


def _rects_overlap(a: Rect, b: Rect) -> bool:
    ca, cb = a.corners(), b.corners()
    for axis in range(3):
        if np.ptp(ca[:, axis]) < 1e-12 and np.ptp(cb[:, axis]) < 1e-12:
            if abs(ca[0, axis] - cb[0, axis]) > 1e-9:
                return False
            other = [k for k in range(3) if k != axis]
            for k in other:
                lo_a, hi_a = ca[:, k].min(), ca[:, k].max()
                lo_b, hi_b = cb[:, k].min(), cb[:, k].max()
                if min(hi_a, hi_b) - max(lo_a, lo_b) <= 1e-9:
                    return False
            return True
    return False  # non-coplanar or tilted rects: builders keep them disjoint


# -- built-in designs ------------------------------------------------------

# Calibrated five-wire dimensions: chosen so the solved surface trap puts the
# rf null 90 um above the wafer with vertical harmonicity 0.210 (see tests).
# The gapless analytic solution (null height sqrt(a*b) for rails spanning
# [a, b]) seeds these values; the boundary-element solve with real gaps
# shifts them slightly.
SURFACE_CENTER_WIDTH_UM = 114.6
SURFACE_RF_WIDTH_UM = 57.7
SURFACE_GAP_UM = 10.0
# The grounded-top design uses its own five-wire dimensions, calibrated so
# that the covered trap keeps a harmonicity edge over the bare surface trap
# down to wafer separations around 100 um (rf-rail separation 2a = 100 um)
# while its depth and maximum frequency stay between the surface and cross-rf
# designs at the default separation.
GND_CENTER_WIDTH_UM = 90.0
GND_RF_WIDTH_UM = 140.0
WAFER_EXTENT_UM = 8000.0
ELECTRODE_LENGTH_UM = 8000.0
CROSS_RF_WIDTH_UM = 100.0
DEFAULT_H_UM = 200.0

FINE_LATERAL_UM = 400.0
DEFAULT_FINE_UM = 10.0
DEFAULT_COARSE_UM = 500.0


def _pattern_mesh(fine_um=DEFAULT_FINE_UM, coarse_um=DEFAULT_COARSE_UM):
    """Refine the central window of the bottom electrode pattern; everything
    else (outer wafer, a distant cover plane) grades with distance."""
    return MeshParams(
        coarse_um=coarse_um,
        fine_um=fine_um,
        fine_region=Box3(center=(0.0, 0.0, 0.0),
                         size=(FINE_LATERAL_UM, 20.0, FINE_LATERAL_UM)),
    )


def _two_wafer_mesh(h_um, fine_um=DEFAULT_FINE_UM, coarse_um=DEFAULT_COARSE_UM):
    """Refine the central window of both wafer planes."""
    return MeshParams(
        coarse_um=coarse_um,
        fine_um=fine_um,
        fine_region=Box3(center=(0.0, 0.5 * h_um, 0.0),
                         size=(FINE_LATERAL_UM, h_um + 20.0, FINE_LATERAL_UM)),
    )


def five_wire_null_seed_um(center_width_um, gap_um, rf_width_um) -> float:
    """Gapless-analytic estimate of the five-wire null height: sqrt(a*b) for
    effective rail edges on the gap midlines."""
    a = 0.5 * center_width_um + 0.5 * gap_um
    b = 0.5 * center_width_um + gap_um + rf_width_um + 0.5 * gap_um
    return math.sqrt(a * b)


def default_surface_params(
    center_width_um=SURFACE_CENTER_WIDTH_UM,
    rf_width_um=SURFACE_RF_WIDTH_UM,
    gap_um=SURFACE_GAP_UM,
    electrode_length_um=ELECTRODE_LENGTH_UM,
    wafer_extent_um=WAFER_EXTENT_UM,
    fine_um=DEFAULT_FINE_UM,
    coarse_um=DEFAULT_COARSE_UM,
) -> GeometryParams:
    return GeometryParams(
        design="surface",
        mesh=_pattern_mesh(fine_um, coarse_um),
        rf_width_um=rf_width_um,
        center_width_um=center_width_um,
        gap_um=gap_um,
        electrode_length_um=electrode_length_um,
        wafer_extent_um=wafer_extent_um,
    )


def default_gnd_surface_params(
    h_um=DEFAULT_H_UM,
    center_width_um=GND_CENTER_WIDTH_UM,
    rf_width_um=GND_RF_WIDTH_UM,
    **kw,
) -> GeometryParams:
    base = default_surface_params(center_width_um=center_width_um,
                                  rf_width_um=rf_width_um, **kw)
    return replace(base, design="gnd-surface", h_um=h_um)


def default_cross_rf_params(
    h_um=DEFAULT_H_UM,
    rf_width_um=CROSS_RF_WIDTH_UM,
    electrode_length_um=ELECTRODE_LENGTH_UM,
    fine_um=DEFAULT_FINE_UM,
    coarse_um=DEFAULT_COARSE_UM,
) -> GeometryParams:
    return GeometryParams(
        design="cross-rf",
        mesh=_two_wafer_mesh(h_um, fine_um, coarse_um),
        h_um=h_um,
        rf_width_um=rf_width_um,
        electrode_length_um=electrode_length_um,
    )


def _strip(name, role, x_lo, x_hi, y, length_um):
    return Electrode(
        name=name,
        role=role,
        rects=(
            Rect(
                origin=(x_lo, y, -0.5 * length_um),
                edge_u=(x_hi - x_lo, 0.0, 0.0),
                edge_v=(0.0, 0.0, length_um),
            ),
        ),
    )


def build_surface_trap(params: GeometryParams | None = None) -> TrapGeometry:
    """Five-wire planar trap in the y=0 plane, mirror-symmetric about x=0."""
    p = params or default_surface_params()
    p._require_positive("rf_width_um", "center_width_um", "gap_um",
                        "electrode_length_um", "wafer_extent_um")
    cw, g, rw = p.center_width_um, p.gap_um, p.rf_width_um
    W, L = p.wafer_extent_um, p.electrode_length_um
    A = 0.5 * cw + g          # rf rail inner edge
    B = A + rw                # rf rail outer edge
    if B + g >= 0.5 * W:
        raise InvalidGeometryError(
            "rails plus gaps exceed the wafer extent; enlarge wafer_extent_um"
        )
    if L > W:
        raise InvalidGeometryError("electrode_length_um exceeds wafer_extent_um")
    electrodes = [
        _strip("dc_center", ROLE_DC, -0.5 * cw, 0.5 * cw, 0.0, L),
        _strip("rf_left", ROLE_RF, -B, -A, 0.0, L),
        _strip("rf_right", ROLE_RF, A, B, 0.0, L),
        _strip("gnd_left", ROLE_GROUND, -0.5 * W, -B - g, 0.0, L),
        _strip("gnd_right", ROLE_GROUND, B + g, 0.5 * W, 0.0, L),
    ]
    return TrapGeometry("surface", p, electrodes)


def build_gnd_surface_trap(params: GeometryParams | None = None) -> TrapGeometry:
    """Surface trap with an unpatterned grounded plane at height h."""
    p = params or default_gnd_surface_params()
    p._require_positive("h_um")
    base = build_surface_trap(replace(p, design="surface", h_um=None))
    W, L = p.wafer_extent_um, p.electrode_length_um
    top = Electrode(
        name="gnd_top",
        role=ROLE_GROUND,
        rects=(
            Rect(
                origin=(-0.5 * W, p.h_um, -0.5 * L),
                edge_u=(W, 0.0, 0.0),
                edge_v=(0.0, 0.0, L),
            ),
        ),
    )
    return TrapGeometry("gnd-surface", p, list(base.electrodes) + [top])


def build_cross_rf_trap(params: GeometryParams | None = None) -> TrapGeometry:
    """Four-rail trap on two wafers, rf rails diagonally opposed.

    Wafer planes at y=0 and y=h; rail centers at x = -h/2 and +h/2, so the
    horizontal center spacing equals the vertical wafer spacing. The layout
    maps to itself under the 180 degree rotation (x,y) -> (-x, h-y), which
    pins the rf null at exactly (0, h/2).
    """
    p = params or default_cross_rf_params()
    p._require_positive("h_um", "rf_width_um", "electrode_length_um")
    h, rw, L = p.h_um, p.rf_width_um, p.electrode_length_um
    if rw >= h:
        raise InvalidGeometryError(
            "rail width must be smaller than h (rails on one wafer would touch)"
        )
    electrodes = [
        _strip("rf_bottom", ROLE_RF, -0.5 * h - 0.5 * rw, -0.5 * h + 0.5 * rw, 0.0, L),
        _strip("rf_top", ROLE_RF, 0.5 * h - 0.5 * rw, 0.5 * h + 0.5 * rw, h, L),
        _strip("gnd_bottom", ROLE_GROUND, 0.5 * h - 0.5 * rw, 0.5 * h + 0.5 * rw, 0.0, L),
        _strip("gnd_top", ROLE_GROUND, -0.5 * h - 0.5 * rw, -0.5 * h + 0.5 * rw, h, L),
    ]
    return TrapGeometry("cross-rf", p, electrodes)


_BUILDERS = {
    "surface": build_surface_trap,
    "gnd-surface": build_gnd_surface_trap,
    "cross-rf": build_cross_rf_trap,
}


def build_default(design: str, h_um: float | None = None,
                  fine_um: float = DEFAULT_FINE_UM) -> TrapGeometry:
    """Build one of the named designs with calibrated default dimensions."""
    if design == "surface":
        return build_surface_trap(default_surface_params(fine_um=fine_um))
    if design == "gnd-surface":
        return build_gnd_surface_trap(
            default_gnd_surface_params(h_um=h_um or DEFAULT_H_UM, fine_um=fine_um))
    if design == "cross-rf":
        return build_cross_rf_trap(
            default_cross_rf_params(h_um=h_um or DEFAULT_H_UM, fine_um=fine_um))
    raise InvalidInputError(
        f"unknown design {design!r}; known: {', '.join(sorted(_BUILDERS))}"
    )
