"""2D cross-section scenes: vial circles, chamber wall, optional occluders.

The chamber cross-section is a square centered on the origin; vial layouts
are centered inside it. Occluders are full-height opaque polyline segment
sets (e.g. a tray frame) that participate in view-factor computation and in
the radiosity network as additional surfaces.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

ARRANGEMENTS = ("rectangular", "hexagonal", "custom")
GEOM_TOL = 1e-12


class LayoutTooLarge(ValueError):
    """Vial array does not fit inside the chamber cross-section."""


class GeometryConflict(ValueError):
    """Occluder intersects a vial circle."""


@dataclass(frozen=True)
class Chamber:
    """Square chamber cross-section and the wall surface parameters."""

    side: float = 0.30  # cross-section side, m
    A2: float = 0.54  # wall area used in radiative resistances, m^2
    eps_wall: float = 0.3
    T2: float = 293.15  # wall temperature, K

    def __post_init__(self):
        if self.side <= 0 or self.A2 <= 0:
            raise ValueError("chamber side and A2 must be positive")
        if not 0.0 < self.eps_wall < 1.0:
            raise ValueError("eps_wall must be in (0, 1)")
        if self.T2 <= 0:
            raise ValueError("T2 must be an absolute temperature > 0")


@dataclass(frozen=True)
class Layout:
    """Vial center positions plus the grid bookkeeping used for labeling."""

    centers: np.ndarray  # (n, 2) positions, m
    d: float  # vial diameter, m
    c: float  # surface-to-surface gap between adjacent vials, m
    arrangement: str = "custom"
    rows: np.ndarray | None = None  # per-vial row index (None for custom)
    cols: np.ndarray | None = None

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", centers)
        if self.arrangement not in ARRANGEMENTS:
            raise ValueError(f"arrangement must be one of {ARRANGEMENTS}")
        if self.d <= 0:
            raise ValueError("vial diameter must be positive")
        if self.c < 0:
            raise ValueError("vial gap must be nonnegative")
        n = len(centers)
        if n > 1:
            diff = centers[:, None, :] - centers[None, :, :]
            dist = np.sqrt((diff**2).sum(-1))
            np.fill_diagonal(dist, np.inf)
            if dist.min() < self.d - GEOM_TOL:
                raise ValueError("vial circles overlap")

    @property
    def n_vials(self) -> int:
        return len(self.centers)

    @property
    def pitch(self) -> float:
        return self.d + self.c


@dataclass(frozen=True)
class Occluder:
    """Opaque full-height obstruction made of straight segments.

    mode is either "fixed" (gray surface at a prescribed temperature,
    defaulting to the wall temperature) or "adiabatic" (zero net radiative
    flux; its radiosity floats in the network).
    """

    segments: np.ndarray  # (n, 4) rows of (x0, y0, x1, y1), m
    eps: float = 0.3
    mode: str = "fixed"
    temperature: float | None = None  # None -> chamber wall temperature
    height: float | None = None  # None -> product height

    def __post_init__(self):
        seg = np.atleast_2d(np.asarray(self.segments, dtype=float))
        if seg.shape[1] != 4:
            raise ValueError("segments must be rows of (x0, y0, x1, y1)")
        object.__setattr__(self, "segments", seg)
        if not 0.0 < self.eps < 1.0:
            raise ValueError("occluder emissivity must be in (0, 1)")
        if self.mode not in ("fixed", "adiabatic"):
            raise ValueError("occluder mode must be 'fixed' or 'adiabatic'")

    @property
    def total_length(self) -> float:
        seg = self.segments
        return float(np.hypot(seg[:, 2] - seg[:, 0], seg[:, 3] - seg[:, 1]).sum())


@dataclass(frozen=True)
class Scene:
    layout: Layout
    chamber: Chamber = field(default_factory=Chamber)
    occluders: tuple[Occluder, ...] = ()

    def __post_init__(self):
        half = self.chamber.side / 2.0
        r = self.layout.d / 2.0
        if np.any(np.abs(self.layout.centers) + r > half + GEOM_TOL):
            raise LayoutTooLarge("vials extend beyond the chamber cross-section")
        for occ in self.occluders:
            _check_occluder(self.layout, occ)
            if np.any(np.abs(occ.segments.reshape(-1, 2)) > half + GEOM_TOL):
                raise GeometryConflict("occluder extends beyond the chamber")

    def fingerprint(self) -> str:
        """Stable hash of the cross-section geometry (not temperatures)."""
        h = hashlib.sha256()
        h.update(np.round(self.layout.centers, 12).tobytes())
        h.update(np.float64([self.layout.d, self.chamber.side]).tobytes())
        for occ in self.occluders:
            h.update(np.round(occ.segments, 12).tobytes())
        return h.hexdigest()


def _point_segment_distance(px, py, seg):
    x0, y0, x1, y1 = seg
    ex, ey = x1 - x0, y1 - y0
    ll = ex * ex + ey * ey
    if ll == 0.0:
        return math.hypot(px - x0, py - y0)
    t = ((px - x0) * ex + (py - y0) * ey) / ll
    t = min(max(t, 0.0), 1.0)
    return math.hypot(px - (x0 + t * ex), py - (y0 + t * ey))


def _check_occluder(layout: Layout, occ: Occluder):
    r = layout.d / 2.0
    for seg in occ.segments:
        for cx, cy in layout.centers:
            if _point_segment_distance(cx, cy, seg) < r - GEOM_TOL:
                raise GeometryConflict("occluder segment intersects a vial")


def _center_grid(xs, ys):
    xs = xs - xs.mean()
    ys = ys - ys.mean()
    return xs, ys


def build_rectangular_layout(nx, ny, d, c, chamber: Chamber | None = None) -> Layout:
    """Grid of nx columns by ny rows with pitch d + c, centered at origin."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    chamber = chamber or Chamber()
    pitch = d + c
    extent_x = (nx - 1) * pitch + d
    extent_y = (ny - 1) * pitch + d
    if max(extent_x, extent_y) >= chamber.side:
        raise LayoutTooLarge(
            f"array extent {max(extent_x, extent_y):.4f} m >= chamber side "
            f"{chamber.side:.4f} m"
        )
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    xs = (ii.ravel() - (nx - 1) / 2.0) * pitch
    ys = (jj.ravel() - (ny - 1) / 2.0) * pitch
    return Layout(
        centers=np.column_stack([xs, ys]),
        d=d,
        c=c,
        arrangement="rectangular",
        rows=jj.ravel().copy(),
        cols=ii.ravel().copy(),
    )


def build_hexagonal_layout(n_rows, n_cols, d, c, chamber: Chamber | None = None) -> Layout:
    """Offset-row close packing, nearest-neighbor center distance d + c."""
    if n_rows < 1 or n_cols < 1:
        raise ValueError("n_rows and n_cols must be >= 1")
    chamber = chamber or Chamber()
    pitch = d + c
    rows = []
    cols = []
    xs = []
    ys = []
    for j in range(n_rows):
        off = 0.5 * pitch * (j % 2)
        for i in range(n_cols):
            xs.append(i * pitch + off)
            ys.append(j * pitch * math.sqrt(3.0) / 2.0)
            rows.append(j)
            cols.append(i)
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    xs, ys = _center_grid(xs, ys)
    extent_x = xs.max() - xs.min() + d
    extent_y = ys.max() - ys.min() + d
    if max(extent_x, extent_y) >= chamber.side:
        raise LayoutTooLarge("hexagonal array does not fit in the chamber")
    return Layout(
        centers=np.column_stack([xs, ys]),
        d=d,
        c=c,
        arrangement="hexagonal",
        rows=np.asarray(rows),
        cols=np.asarray(cols),
    )


def classify_vials(layout: Layout):
    """Label vials corner / edge / inner by grid position.

    Corner means extreme row and extreme position within that row; edge is
    any other boundary vial. Custom layouts get all-inner labels plus a
    warning flag as the second return value.
    """
    n = layout.n_vials
    if layout.arrangement == "custom" or layout.rows is None:
        return np.array(["inner"] * n, dtype=object), True
    rows = layout.rows
    cols = layout.cols
    labels = np.empty(n, dtype=object)
    row_extreme = (rows == rows.min()) | (rows == rows.max())
    col_extreme = (cols == cols.min()) | (cols == cols.max())
    labels[:] = "inner"
    labels[row_extreme | col_extreme] = "edge"
    labels[row_extreme & col_extreme] = "corner"
    if n == 1:
        labels[0] = "corner"
    return labels, False


def group_indices(layout: Layout) -> dict[str, np.ndarray]:
    """Reporting groups: corner, edge, inner, mid_edge and center vials.

    mid_edge picks the edge vials farthest from any corner (the values
    usually quoted for "edge vials"); center picks the vials closest to the
    layout centroid.
    """
    labels, _ = classify_vials(layout)
    out = {
        name: np.flatnonzero(labels == name) for name in ("corner", "edge", "inner")
    }
    centers = layout.centers
    if out["corner"].size and out["edge"].size:
        corner_pts = centers[out["corner"]]
        edge_pts = centers[out["edge"]]
        dmin = np.sqrt(
            ((edge_pts[:, None, :] - corner_pts[None, :, :]) ** 2).sum(-1)
        ).min(axis=1)
        out["mid_edge"] = out["edge"][dmin >= dmin.max() - GEOM_TOL]
    else:
        out["mid_edge"] = out["edge"]
    centroid = centers.mean(axis=0)
    dist = np.sqrt(((centers - centroid) ** 2).sum(-1))
    out["center"] = np.flatnonzero(dist <= dist.min() + GEOM_TOL)
    return out


def frame_occluder(
    side,
    eps=0.3,
    mode="fixed",
    temperature=None,
    height=None,
    center=(0.0, 0.0),
) -> Occluder:
    """Square frame of the given side length (e.g. a tray rim)."""
    if side <= 0:
        raise ValueError("frame side must be positive")
    hx, hy = center
    s = side / 2.0
    segments = np.array(
        [
            [hx - s, hy - s, hx + s, hy - s],
            [hx + s, hy - s, hx + s, hy + s],
            [hx + s, hy + s, hx - s, hy + s],
            [hx - s, hy + s, hx - s, hy - s],
        ]
    )
    return Occluder(
        segments=segments, eps=eps, mode=mode, temperature=temperature, height=height
    )


def add_occluder(scene: Scene, occluder: Occluder) -> Scene:
    """Return a new scene with the occluder added (validates intersections)."""
    return replace(scene, occluders=scene.occluders + (occluder,))


@dataclass(frozen=True)
class SurfaceRoster:
    """Flattened per-surface arrays for view factors and radiosity.

    Surfaces are ordered vials first, then occluders, with the chamber wall
    last. ``kind`` is 0 for vials, 1 for occluders, 2 for the wall.
    """

    names: tuple[str, ...]
    areas: np.ndarray
    eps: np.ndarray
    kind: np.ndarray
    adiabatic: np.ndarray  # bool per surface
    fixed_T: np.ndarray  # prescribed temperature for non-vial surfaces (nan else)
    # ray-tracing primitives
    circ_x: np.ndarray
    circ_y: np.ndarray
    circ_r: np.ndarray
    circ_surf: np.ndarray
    seg_x0: np.ndarray
    seg_y0: np.ndarray
    seg_x1: np.ndarray
    seg_y1: np.ndarray
    seg_surf: np.ndarray
    box: tuple[float, float, float, float]

    @property
    def n_surfaces(self) -> int:
        return len(self.names)

    @property
    def wall_index(self) -> int:
        return len(self.names) - 1

    @property
    def n_vials(self) -> int:
        return int((self.kind == 0).sum())


def assemble_roster(scene: Scene, vial_area, vial_eps, product_height) -> SurfaceRoster:
    """Build the surface roster for a scene.

    Occluder areas count both faces (2 * length * height) since a thin
    full-height obstruction radiates from both sides.
    """
    layout = scene.layout
    chamber = scene.chamber
    n_v = layout.n_vials
    names = [f"vial_{i}" for i in range(n_v)]
    areas = [float(vial_area)] * n_v
    eps = [float(vial_eps)] * n_v
    kind = [0] * n_v
    adiabatic = [False] * n_v
    fixed_T = [math.nan] * n_v

    seg_rows = []
    seg_surf = []
    for j, occ in enumerate(scene.occluders):
        idx = n_v + j
        names.append(f"occluder_{j}")
        height = occ.height if occ.height is not None else product_height
        areas.append(2.0 * occ.total_length * height)
        eps.append(occ.eps)
        kind.append(1)
        adiabatic.append(occ.mode == "adiabatic")
        if occ.mode == "adiabatic":
            fixed_T.append(math.nan)
        else:
            fixed_T.append(
                occ.temperature if occ.temperature is not None else chamber.T2
            )
        for seg in occ.segments:
            seg_rows.append(seg)
            seg_surf.append(idx)

    names.append("wall")
    areas.append(chamber.A2)
    eps.append(chamber.eps_wall)
    kind.append(2)
    adiabatic.append(False)
    fixed_T.append(chamber.T2)

    seg_rows = np.asarray(seg_rows, dtype=float).reshape(-1, 4)
    half = chamber.side / 2.0
    return SurfaceRoster(
        names=tuple(names),
        areas=np.asarray(areas),
        eps=np.asarray(eps),
        kind=np.asarray(kind),
        adiabatic=np.asarray(adiabatic, dtype=bool),
        fixed_T=np.asarray(fixed_T),
        circ_x=layout.centers[:, 0].copy(),
        circ_y=layout.centers[:, 1].copy(),
        circ_r=np.full(n_v, layout.d / 2.0),
        circ_surf=np.arange(n_v, dtype=np.int64),
        seg_x0=seg_rows[:, 0].copy(),
        seg_y0=seg_rows[:, 1].copy(),
        seg_x1=seg_rows[:, 2].copy(),
        seg_y1=seg_rows[:, 3].copy(),
        seg_surf=np.asarray(seg_surf, dtype=np.int64),
        box=(-half, half, -half, half),
    )
