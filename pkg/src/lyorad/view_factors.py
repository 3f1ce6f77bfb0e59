"""View factors between all scene surfaces.

Closed forms exist for rows of one to three vials; everything else goes
through Monte Carlo ray tracing: rays leave each emitting surface from
uniformly random boundary points with cosine-weighted directions about the
outward normal and are traced to their nearest intersection.

Raw Monte Carlo rows violate reciprocity at the noise level, and the chamber
wall row is never sampled directly. ``complete_and_validate`` symmetrizes
the exchange matrix A_i * F_ij, derives the wall row/column from
reciprocity, and rescales so that both the summation rule (rows sum to 1)
and the reciprocity rule hold to 1e-9 simultaneously.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .backend import thread_count
from .geometry import Scene, SurfaceRoster

CHUNK = 16384
ROW_TOL = 1e-9
REC_TOL = 1e-9
MAX_ROW_CORRECTION = 0.01  # raw row-sum defect
MAX_SCALE_CORRECTION = 0.025  # symmetric row rescale (absorbs pairwise MC noise)


class RayEscape(RuntimeError):
    """A ray left the enclosure: the scene is not closed."""


class InconsistentMatrix(ValueError):
    """Raw view factors needed more than the allowed correction."""


@dataclass(frozen=True)
class McConfig:
    n_rays: int = 100_000  # rays per emitting surface
    seed: int = 2024

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")


@dataclass(frozen=True)
class ViewFactorMatrix:
    F: np.ndarray  # (k, k)
    areas: np.ndarray  # (k,)
    names: tuple[str, ...]
    completed: bool = False
    n_rays: int | None = None  # rays per surface behind a raw MC estimate

    @property
    def wall_index(self) -> int:
        return len(self.names) - 1

    @property
    def vial_slice(self) -> slice:
        return slice(0, sum(1 for n in self.names if n.startswith("vial")))

    def to_wall(self) -> np.ndarray:
        """Per-surface view factor toward the chamber wall."""
        return self.F[:, self.wall_index].copy()


def analytical_two_vial_vf(c, d):
    """Vial-to-wall view factor for either of two identical parallel vials."""
    if d <= 0:
        raise ValueError("d must be positive")
    if c < 0:
        raise ValueError("c must be nonnegative")
    y = 1.0 + c / d
    return 1.0 - (math.sqrt(y * y - 1.0) + math.asin(1.0 / y) - y) / math.pi


def analytical_middle_three_vf(c, d):
    """Vial-to-wall view factor for the middle vial of three in a row."""
    if d <= 0:
        raise ValueError("d must be positive")
    if c < 0:
        raise ValueError("c must be nonnegative")
    y = 1.0 + c / d
    return 1.0 - 2.0 * (math.sqrt(y * y - 1.0) + math.asin(1.0 / y) - y) / math.pi


def analytical_view_factors(scene: Scene, roster: SurfaceRoster) -> ViewFactorMatrix:
    """Exact completed matrix for collinear rows of 1-3 vials, no occluders.

    For three equally spaced vials in a row the outer pair cannot see each
    other (the middle vial occludes the full tangent band), which closes the
    matrix exactly.
    """
    layout = scene.layout
    n = layout.n_vials
    if scene.occluders or n > 3:
        raise ValueError("analytical view factors cover rows of 1-3 vials only")
    k = roster.n_surfaces
    F = np.zeros((k, k))
    if n == 1:
        F[0, 1] = 1.0
    else:
        centers = layout.centers
        order = np.argsort(centers[:, 0] + 1e-9 * centers[:, 1])
        pts = centers[order]
        steps = np.diff(pts, axis=0)
        gaps = np.hypot(steps[:, 0], steps[:, 1])
        cross = steps[:, 0] * steps[0, 1] - steps[:, 1] * steps[0, 0]
        if np.abs(cross).max() > 1e-9 or np.abs(gaps - gaps[0]).max() > 1e-9:
            raise ValueError(
                "analytical view factors require an equally spaced collinear row"
            )
        c = gaps[0] - layout.d
        if n == 2:
            f_w = analytical_two_vial_vf(c, layout.d)
            a, b = order
            F[a, b] = F[b, a] = 1.0 - f_w
            F[a, -1] = F[b, -1] = f_w
        else:
            f_side = analytical_two_vial_vf(c, layout.d)
            f_mid = analytical_middle_three_vf(c, layout.d)
            left, mid, right = order
            F[left, mid] = F[right, mid] = 1.0 - f_side
            F[mid, left] = F[mid, right] = (1.0 - f_mid) / 2.0
            F[left, -1] = F[right, -1] = f_side
            F[mid, -1] = f_mid
    # wall row by reciprocity, wall self-view by closure
    aw = roster.areas[-1]
    F[-1, :-1] = roster.areas[:-1] * F[:-1, -1] / aw
    F[-1, -1] = 1.0 - F[-1, :-1].sum()
    return ViewFactorMatrix(
        F=F, areas=roster.areas.copy(), names=roster.names, completed=True
    )


def _emit_circle(roster, surf, u_pos, u_dir):
    phi = 2.0 * math.pi * u_pos
    r = roster.circ_r[surf]
    ox = roster.circ_x[surf] + r * np.cos(phi)
    oy = roster.circ_y[surf] + r * np.sin(phi)
    sin_t = np.clip(2.0 * u_dir - 1.0, -1.0 + 1e-15, 1.0 - 1e-15)
    theta = np.arcsin(sin_t)
    psi = phi + theta
    skip_circle = np.full(u_pos.shape[0], surf, dtype=np.int64)
    skip_seg = np.full(u_pos.shape[0], -1, dtype=np.int64)
    return ox, oy, np.cos(psi), np.sin(psi), skip_circle, skip_seg


def _emit_segments(roster, surf, u_pos, u_dir):
    mask = roster.seg_surf == surf
    idx = np.flatnonzero(mask)
    x0 = roster.seg_x0[idx]
    y0 = roster.seg_y0[idx]
    ex = roster.seg_x1[idx] - x0
    ey = roster.seg_y1[idx] - y0
    lengths = np.hypot(ex, ey)
    total = lengths.sum()
    # both faces emit: first half of the arc-length budget is the + side
    arc = u_pos * (2.0 * total)
    side = np.where(arc < total, 1.0, -1.0)
    arc = np.where(arc < total, arc, arc - total)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    seg_local = np.clip(np.searchsorted(cum, arc, side="right") - 1, 0, len(idx) - 1)
    tau = (arc - cum[seg_local]) / lengths[seg_local]
    ox = x0[seg_local] + tau * ex[seg_local]
    oy = y0[seg_local] + tau * ey[seg_local]
    tx = ex[seg_local] / lengths[seg_local]
    ty = ey[seg_local] / lengths[seg_local]
    nx = ty * side
    ny = -tx * side
    sin_t = np.clip(2.0 * u_dir - 1.0, -1.0 + 1e-15, 1.0 - 1e-15)
    cos_t = np.sqrt(1.0 - sin_t * sin_t)
    dx = cos_t * nx + sin_t * tx
    dy = cos_t * ny + sin_t * ty
    skip_circle = np.full(u_pos.shape[0], -1, dtype=np.int64)
    skip_seg = idx[seg_local].astype(np.int64)
    return ox, oy, dx, dy, skip_circle, skip_seg


def _trace_surface(roster: SurfaceRoster, surf: int, cfg: McConfig, use_numba):
    hits = np.zeros(roster.n_surfaces, dtype=np.int64)
    n_left = cfg.n_rays
    chunk_idx = 0
    bx0, bx1, by0, by1 = roster.box
    escapes = 0
    while n_left > 0:
        n = min(CHUNK, n_left)
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, surf, chunk_idx)))
        u = rng.random((2, n))
        if roster.kind[surf] == 0:
            rays = _emit_circle(roster, surf, u[0], u[1])
        else:
            rays = _emit_segments(roster, surf, u[0], u[1])
        escapes += kernels.trace_chunk(
            *rays,
            roster.circ_x,
            roster.circ_y,
            roster.circ_r,
            roster.circ_surf,
            roster.seg_x0,
            roster.seg_y0,
            roster.seg_x1,
            roster.seg_y1,
            roster.seg_surf,
            bx0,
            bx1,
            by0,
            by1,
            roster.wall_index,
            hits,
            use_numba=use_numba,
        )
        n_left -= n
        chunk_idx += 1
    if escapes:
        raise RayEscape(f"{escapes} rays escaped the enclosure from surface {surf}")
    return hits


def monte_carlo_view_factors(
    scene: Scene,
    cfg: McConfig,
    roster: SurfaceRoster,
    use_numba=None,
) -> ViewFactorMatrix:
    """Raw Monte Carlo view factors, rows for vials and occluders.

    Deterministic for a given (scene, n_rays, seed): rays are generated in
    fixed-size chunks whose RNG streams depend only on (seed, surface,
    chunk), so the result is independent of the worker count.
    """
    k = roster.n_surfaces
    emitters = [i for i in range(k - 1)]
    F = np.zeros((k, k))

    workers = min(thread_count(), len(emitters)) if emitters else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(
                    lambda s: _trace_surface(roster, s, cfg, use_numba), emitters
                )
            )
    else:
        rows = [_trace_surface(roster, s, cfg, use_numba) for s in emitters]
    for surf, hits in zip(emitters, rows):
        F[surf] = hits / cfg.n_rays
    return ViewFactorMatrix(
        F=F,
        areas=roster.areas.copy(),
        names=roster.names,
        completed=False,
        n_rays=cfg.n_rays,
    )


def complete_and_validate(raw: ViewFactorMatrix) -> ViewFactorMatrix:
    """Enforce reciprocity and summation closure on a raw matrix.

    Symmetrizes the exchange matrix m_ij = A_i F_ij between sampled
    surfaces, fills the wall column from the sampled rows and the wall
    self-view from closure, then applies a symmetric diagonal scaling
    (Sinkhorn iteration) so every row of F sums to 1 while m stays
    symmetric. Raises InconsistentMatrix when any sampled row needs more
    than 1% relative correction or the scaling cannot converge.
    """
    k = len(raw.names)
    A = raw.areas
    w = k - 1
    m = np.zeros((k, k))
    sampled = slice(0, w)
    afr = A[sampled, None] * raw.F[sampled, sampled]
    # inverse-variance weighted symmetrization: each pair has two independent
    # binomial estimates whose precisions can differ by orders of magnitude
    # when surface sizes differ (a big occluder resolves one small vial far
    # worse than the vial resolves the occluder)
    n = max(raw.n_rays or 100_000, 1)
    fs = raw.F[sampled, sampled]
    var = (A[sampled, None] ** 2) * (fs * (1.0 - fs) + 1.0 / n) / n
    wgt = 1.0 / var
    m[sampled, sampled] = (wgt * afr + wgt.T * afr.T) / (wgt + wgt.T)
    m[sampled, w] = A[:w] * raw.F[:w, w]
    m[w, sampled] = m[sampled, w]
    m_ww = A[w] - m[w, :w].sum()
    if m_ww < 0:
        raise InconsistentMatrix(
            "wall area too small for the sampled vial-to-wall view factors"
        )
    m[w, w] = m_ww

    d = np.ones(k)
    converged = False
    for _ in range(500):
        rows = (m * d).sum(axis=1) * d
        err = np.abs(rows / A - 1.0).max()
        if err < 1e-13:
            converged = True
            break
        d *= np.sqrt(A / rows)
    if not converged:
        raise InconsistentMatrix("row-sum scaling did not converge")

    m_scaled = m * d[:, None] * d[None, :]
    F = m_scaled / A[:, None]
    # guards: raw rows must already close to 1%; the symmetric rescale that
    # reconciles pairwise estimates may absorb a little more accumulated noise
    row_defect = np.abs(raw.F[sampled].sum(axis=1) - 1.0).max()
    if row_defect > MAX_ROW_CORRECTION:
        raise InconsistentMatrix(
            f"raw row-sum defect {row_defect:.3e} exceeds {MAX_ROW_CORRECTION:.0%}"
        )
    # vial rows are many and mutually consistent; occluder rows also absorb
    # the rounding of tabulated vial areas, so they get a looser bound
    scale = np.abs(d**2 - 1.0)
    vial_rows = raw.vial_slice
    scale_corr = scale[vial_rows].max()
    if scale_corr > MAX_SCALE_CORRECTION:
        raise InconsistentMatrix(
            f"row rescale {scale_corr:.3e} exceeds {MAX_SCALE_CORRECTION:.1%}"
        )
    if w > vial_rows.stop and scale[vial_rows.stop : w].max() > 4 * MAX_SCALE_CORRECTION:
        raise InconsistentMatrix("occluder row rescale exceeds 10%")
    return replace(raw, F=F, completed=True)


def check_invariants(vfm: ViewFactorMatrix):
    """Raise AssertionError if summation/reciprocity invariants fail."""
    rows = vfm.F.sum(axis=1)
    assert np.abs(rows - 1.0).max() < ROW_TOL, "row sums violate closure"
    ex = vfm.areas[:, None] * vfm.F
    assert np.abs(ex - ex.T).max() < REC_TOL, "reciprocity violated"
    assert (vfm.F >= -1e-15).all(), "negative view factor"


def export_matrix(vfm: ViewFactorMatrix, path, mc: McConfig | None = None, scene=None):
    """Write the matrix as CSV plus a reproducibility sidecar."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["surface", *vfm.names, "area_m2"])
        for i, name in enumerate(vfm.names):
            writer.writerow(
                [name, *[f"{v:.12g}" for v in vfm.F[i]], f"{vfm.areas[i]:.12g}"]
            )
    meta = {
        "completed": bool(vfm.completed),
        "n_surfaces": len(vfm.names),
    }
    if mc is not None:
        meta["n_rays"] = mc.n_rays
        meta["seed"] = mc.seed
    if scene is not None:
        meta["scene_fingerprint"] = scene.fingerprint()
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_matrix(path) -> ViewFactorMatrix:
    """Read a matrix written by :func:`export_matrix`."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = tuple(header[1:-1])
        rows = list(reader)
    k = len(names)
    if len(rows) != k:
        raise InconsistentMatrix("view factor CSV row count does not match header")
    F = np.array([[float(v) for v in row[1 : k + 1]] for row in rows])
    areas = np.array([float(row[-1]) for row in rows])
    return ViewFactorMatrix(F=F, areas=areas, names=names, completed=True)


_VF_CACHE: dict[tuple, ViewFactorMatrix] = {}


def get_view_factors(scene, roster, source="mc", cfg: McConfig | None = None, path=None):
    """Completed view factors with an in-process cache keyed by geometry."""
    if source == "file":
        return load_matrix(path)
    if source == "analytical":
        return analytical_view_factors(scene, roster)
    cfg = cfg or McConfig()
    key = (scene.fingerprint(), cfg.n_rays, cfg.seed)
    hit = _VF_CACHE.get(key)
    if hit is None:
        hit = complete_and_validate(monte_carlo_view_factors(scene, cfg, roster))
        _VF_CACHE[key] = hit
    return hit
