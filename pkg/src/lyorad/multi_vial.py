"""Coupled simulation of all vials in a scene.

Approaches:

* ``network``   - every surface exchanges with every other through the
  radiosity network. All vials advance on a shared clock; while any vial is
  still in its heating stage the network is solved once per spatial node per
  step (vials expose node-local temperatures, uniform surfaces repeat their
  scalar), afterwards once per step. The radiation term is lagged one step.
* ``simplified`` - each vial exchanges with the wall alone through its own
  view factor; vials are independent single-vial runs.
* ``hybrid``    - like simplified but with per-vial fitted resistances, no
  view factors needed.
* ``none``      - radiation off.

Stage events (heating -> sublimating -> done) are located per vial by linear
interpolation inside the bracketing step; other vials are not rolled back,
so the coupling error at an event is bounded by one time step.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model_core
from .geometry import Scene, SurfaceRoster, assemble_roster, classify_vials, group_indices
from .model_core import (
    HorizonExceeded,
    MaterialProperties,
    NegativeSublimationRate,
    NumericsConfig,
    ProcessSettings,
    ScalarRadiation,
    VialGeometry,
    node_weights,
    power_densities,
    shelf_temperature,
)
from .radiation import NetworkOperator, pair_resistance
from .view_factors import McConfig, ViewFactorMatrix, get_view_factors

APPROACHES = ("network", "simplified", "hybrid", "none")
DONE_MODES = ("final", "sublimation")


class MissingTimeSeries(RuntimeError):
    """The requested quantity needs time series that were not retained."""


class VialSimulationError(RuntimeError):
    """Wraps a model error with the offending vial index."""

    def __init__(self, vial, original):
        super().__init__(f"vial {vial}: {original}")
        self.vial = vial
        self.original = original


@dataclass(frozen=True)
class VfConfig:
    source: str = "mc"  # mc | analytical | file
    n_rays: int = 100_000
    seed: int = 2024
    path: str | None = None

    def mc(self) -> McConfig:
        return McConfig(n_rays=self.n_rays, seed=self.seed)


@dataclass(frozen=True)
class Scenario:
    scene: Scene
    mat: MaterialProperties
    settings: ProcessSettings
    geom: VialGeometry
    num: NumericsConfig = field(default_factory=NumericsConfig)
    approach: str = "none"
    vf: VfConfig = field(default_factory=VfConfig)
    hybrid_map: np.ndarray | None = None  # per-vial R_rad, 1/m^2
    done_mode: str = "final"
    time_series: bool = False
    series_stride: int = 60

    def __post_init__(self):
        if self.approach not in APPROACHES:
            raise ValueError(f"approach must be one of {APPROACHES}")
        if self.done_mode not in DONE_MODES:
            raise ValueError(f"done_mode must be one of {DONE_MODES}")
        if self.approach == "hybrid":
            if self.hybrid_map is None or len(self.hybrid_map) != self.scene.layout.n_vials:
                raise ValueError("hybrid approach needs one R_rad per vial")
            if np.any(np.asarray(self.hybrid_map) <= 0):
                raise ValueError("hybrid resistances must be positive")

    def roster(self) -> SurfaceRoster:
        return assemble_roster(
            self.scene, self.geom.A1, self.mat.eps_vial, self.geom.L
        )

    def view_factors(self, roster=None) -> ViewFactorMatrix:
        roster = roster or self.roster()
        return get_view_factors(
            self.scene, roster, source=self.vf.source, cfg=self.vf.mc(), path=self.vf.path
        )


@dataclass
class SimulationResult:
    t_m_s: np.ndarray
    t_dry_s: np.ndarray
    radiative_energy_J: np.ndarray
    labels: np.ndarray
    positions: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    groups: dict[str, np.ndarray]
    metadata: dict
    series: dict | None = None

    @property
    def n_vials(self) -> int:
        return len(self.t_dry_s)

    @property
    def t_m_hours(self) -> np.ndarray:
        return self.t_m_s / 3600.0

    @property
    def t_dry_hours(self) -> np.ndarray:
        return self.t_dry_s / 3600.0

    def group_mean_hours(self, name: str) -> float:
        idx = self.groups[name]
        if idx.size == 0:
            return math.nan
        return float(self.t_dry_hours[idx].mean())

    def group_mean_energy(self, name: str) -> float:
        idx = self.groups[name]
        if idx.size == 0:
            return math.nan
        return float(self.radiative_energy_J[idx].mean())


def _result_skeleton(scenario: Scenario, extra_meta=None) -> dict:
    layout = scenario.scene.layout
    labels, custom_warning = classify_vials(layout)
    n = layout.n_vials
    rows = layout.rows if layout.rows is not None else np.full(n, -1)
    cols = layout.cols if layout.cols is not None else np.full(n, -1)
    meta = {
        "approach": scenario.approach,
        "n_vials": n,
        "vf_source": scenario.vf.source,
        "vf_seed": scenario.vf.seed,
        "vf_n_rays": scenario.vf.n_rays,
        "custom_layout_warning": custom_warning,
        "done_mode": scenario.done_mode,
    }
    if extra_meta:
        meta.update(extra_meta)
    return {
        "labels": labels,
        "positions": layout.centers.copy(),
        "rows": np.asarray(rows),
        "cols": np.asarray(cols),
        "groups": group_indices(layout),
        "metadata": meta,
    }


def _simulate_independent(scenario: Scenario) -> SimulationResult:
    """none / simplified / hybrid: vials decouple into single-vial runs."""
    layout = scenario.scene.layout
    n = layout.n_vials
    chamber = scenario.scene.chamber
    if scenario.approach == "none":
        resistances = None
    elif scenario.approach == "hybrid":
        resistances = np.asarray(scenario.hybrid_map, dtype=float)
    else:
        roster = scenario.roster()
        vfm = scenario.view_factors(roster)
        f_wall = vfm.to_wall()[:n]
        resistances = np.array(
            [
                pair_resistance(
                    scenario.mat.eps_vial,
                    scenario.geom.A1,
                    max(f, 1e-12),
                    chamber.eps_wall,
                    chamber.A2,
                )
                for f in f_wall
            ]
        )

    stride = scenario.series_stride if scenario.time_series else 0
    t_m = np.empty(n)
    t_dry = np.empty(n)
    e_rad = np.zeros(n)
    series = {"t": [], "T_top": [], "T_bottom": [], "s": [], "e_rad": []} if stride else None
    wall_t0 = time.perf_counter()
    for i in range(n):
        rad = None
        if resistances is not None:
            rad = ScalarRadiation(float(resistances[i]), chamber.T2)
        try:
            res = model_core.simulate_single_vial(
                scenario.mat,
                scenario.settings,
                scenario.geom,
                radiation=rad,
                num=scenario.num,
                series_stride=stride,
            )
        except (NegativeSublimationRate, model_core.NoSublimationReached, HorizonExceeded) as exc:
            raise VialSimulationError(i, exc) from exc
        t_m[i] = res.t_m
        t_dry[i] = res.t_dry
        e_rad[i] = res.radiative_energy
        if stride:
            series["t"].append(res.t)
            series["T_top"].append(res.T_top)
            series["T_bottom"].append(res.T_bottom)
            series["s"].append(res.s)
            series["e_rad"].append(res.e_rad)

    parts = _result_skeleton(
        scenario, {"wall_clock_s": time.perf_counter() - wall_t0}
    )
    return SimulationResult(
        t_m_s=t_m,
        t_dry_s=t_dry,
        radiative_energy_J=e_rad,
        series=series,
        **parts,
    )


def _simulate_network(scenario: Scenario) -> SimulationResult:
    layout = scenario.scene.layout
    mat, settings, geom, num = (
        scenario.mat,
        scenario.settings,
        scenario.geom,
        scenario.num,
    )
    n_v = layout.n_vials
    roster = scenario.roster()
    vfm = scenario.view_factors(roster)
    op = NetworkOperator(
        roster.eps, roster.areas, vfm.F, adiabatic=roster.adiabatic
    )
    k = roster.n_surfaces
    N = num.N
    dt = num.dt

    hv1, hv2, hv3 = power_densities(settings, geom)
    denom_sub = (mat.rho - mat.rho_d) * mat.dH_sub
    inv_rhocp = 1.0 / (mat.rho * mat.Cp)
    a = mat.rho * mat.Cp / dt
    dx = geom.L / (N - 1)
    hcoef = 2.0 * settings.h / dx
    ainv_T = model_core._conduction_inverse(mat, settings, geom, num).T
    weights = node_weights(N)

    stage = np.zeros(n_v, dtype=np.int64)  # 0 heating, 1 sublimating, 2 done
    Tprof = np.full((n_v, N), float(settings.T0))
    prod_T = np.full(n_v, np.nan)
    s_pos = np.zeros(n_v)
    t_m = np.full(n_v, np.nan)
    t_dry = np.full(n_v, np.nan)
    e_rad = np.zeros(n_v)
    aux_T = roster.fixed_T[n_v:]

    stride = scenario.series_stride if scenario.time_series else 0
    samples = []

    if settings.T0 >= settings.Tm - num.tol_event:
        stage[:] = 1
        t_m[:] = 0.0
        prod_T[:] = settings.Tm

    q_scalar = np.zeros(n_v)
    q_dirty = True
    tsurf_col = np.empty(k)
    wall_t0 = time.perf_counter()

    t = 0.0
    step = 0
    max_steps = num.max_steps
    while step < max_steps:
        heating = np.flatnonzero(stage == 0)
        if heating.size:
            tsurf = np.empty((k, N))
            tsurf[:n_v] = np.where(
                (stage == 0)[:, None], Tprof, prod_T[:, None]
            )
            tsurf[n_v:] = aux_T[:, None]
            q_nodes = op.net_flows(tsurf)[:n_v]
            q_scalar = q_nodes.mean(axis=1)
            q_dirty = hv3 > 0.0
        elif q_dirty or hv3 > 0.0:
            tsurf_col[:n_v] = prod_T
            tsurf_col[n_v:] = aux_T
            q_scalar = op.net_flows(tsurf_col)[:n_v]
            q_dirty = False

        t_next = t + dt
        tb = float(shelf_temperature(t_next, settings))

        frac_new = None
        if heating.size:
            sink = q_nodes[heating] / geom.V
            rhs = a * Tprof[heating] + hv1 - sink
            rhs[:, -1] += hcoef * tb
            t_new = rhs @ ainv_T
            power_in = -(q_nodes[heating] @ weights)
            crossed = t_new[:, 0] >= settings.Tm
            local_cross = np.flatnonzero(crossed)
            keep = np.flatnonzero(~crossed)
            if keep.size:
                ki = heating[keep]
                Tprof[ki] = t_new[keep]
                e_rad[ki] += power_in[keep] * dt
            if local_cross.size:
                ci = heating[local_cross]
                top_old = Tprof[ci, 0]
                top_new = t_new[local_cross, 0]
                frac = np.ones(ci.size)
                grow = top_new > top_old
                frac[grow] = (settings.Tm - top_old[grow]) / (
                    top_new[grow] - top_old[grow]
                )
                frac = np.clip(frac, 0.0, 1.0)
                t_m[ci] = t + frac * dt
                e_rad[ci] += power_in[local_cross] * frac * dt
                stage[ci] = 1
                prod_T[ci] = settings.Tm
                Tprof[ci] = t_new[local_cross]
                frac_new = (ci, frac)
                q_dirty = True

        subl = np.flatnonzero(stage == 1)
        if subl.size:
            ddt = np.full(subl.size, dt)
            if frac_new is not None:
                ci, frac = frac_new
                pos = np.searchsorted(subl, ci)
                ddt[pos] = (1.0 - frac) * dt
            prod_next = settings.Tm + hv3 * inv_rhocp * (t_next - t_m[subl])
            q_i = q_scalar[subl]
            rate = (
                settings.h * (tb - prod_next) + hv2 * geom.L - q_i * geom.L / geom.V
            ) / denom_sub
            if np.any(rate <= 0.0):
                bad = int(subl[np.flatnonzero(rate <= 0.0)[0]])
                raise VialSimulationError(
                    bad,
                    NegativeSublimationRate(
                        f"interface energy balance nonpositive at t={t:.1f} s"
                    ),
                )
            s_new = s_pos[subl] + rate * ddt
            finish = s_new >= geom.L
            fin = np.flatnonzero(finish)
            run = np.flatnonzero(~finish)
            if run.size:
                ri = subl[run]
                e_rad[ri] += -q_i[run] * ddt[run]
                s_pos[ri] = s_new[run]
                prod_T[ri] = prod_next[run]
            if fin.size:
                fi = subl[fin]
                frac2 = (geom.L - s_pos[fi]) / (s_new[fin] - s_pos[fi])
                start_t = t_next - ddt[fin]
                t_dry[fi] = start_t + frac2 * ddt[fin]
                e_rad[fi] += -q_i[fin] * frac2 * ddt[fin]
                s_pos[fi] = geom.L
                stage[fi] = 2
                if scenario.done_mode == "final":
                    prod_T[fi] = settings.Tm + hv3 * inv_rhocp * (t_dry[fi] - t_m[fi])
                else:
                    prod_T[fi] = settings.Tm
                q_dirty = True

        t = t_next
        step += 1
        if stride and step % stride == 0:
            top = np.where(stage == 0, Tprof[:, 0], prod_T)
            bot = np.where(stage == 0, Tprof[:, -1], prod_T)
            samples.append((t, top.copy(), bot.copy(), s_pos.copy(), e_rad.copy()))
        if np.all(stage == 2):
            break
    else:
        raise HorizonExceeded(
            f"{int((stage != 2).sum())} vials still drying after {num.max_hours} h"
        )

    series = None
    if stride:
        ts = np.array([rec[0] for rec in samples])
        series = {
            "t": [ts] * n_v,
            "T_top": list(np.stack([rec[1] for rec in samples], axis=1))
            if samples
            else [],
            "T_bottom": list(np.stack([rec[2] for rec in samples], axis=1))
            if samples
            else [],
            "s": list(np.stack([rec[3] for rec in samples], axis=1)) if samples else [],
            "e_rad": list(np.stack([rec[4] for rec in samples], axis=1))
            if samples
            else [],
        }

    parts = _result_skeleton(
        scenario, {"wall_clock_s": time.perf_counter() - wall_t0}
    )
    return SimulationResult(
        t_m_s=t_m,
        t_dry_s=t_dry,
        radiative_energy_J=e_rad,
        series=series,
        **parts,
    )


def simulate(scenario: Scenario) -> SimulationResult:
    """Run the scenario with its configured radiation approach."""
    if scenario.approach == "network":
        return _simulate_network(scenario)
    return _simulate_independent(scenario)


def absorbed_radiative_energy(result: SimulationResult, vial: int) -> float:
    """Absorbed radiative energy of one vial from its retained time series."""
    if result.series is None:
        raise MissingTimeSeries("run the scenario with time_series enabled")
    e = result.series["e_rad"][vial]
    return float(e[-1]) if len(e) else 0.0


def compare_approaches(scenario: Scenario) -> dict:
    """Run network and simplified on identical inputs; report the deltas."""
    net = simulate(replace(scenario, approach="network"))
    simp = simulate(replace(scenario, approach="simplified"))
    t_net = net.t_dry_hours
    t_simp = simp.t_dry_hours
    return {
        "network_hours": t_net,
        "simplified_hours": t_simp,
        "delta_hours": t_net - t_simp,
        "rel_diff": (t_net - t_simp) / t_net,
        "labels": net.labels,
        "groups": net.groups,
    }
