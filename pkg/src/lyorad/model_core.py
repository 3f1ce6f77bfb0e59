"""Two-stage single-vial primary-drying model.

Heating stage: 1D transient conduction through the frozen slab (node 0 is
the top surface, node N-1 the bottom), shelf heating at the bottom through a
Robin condition, adiabatic top, an optional uniform microwave source and an
optional radiative sink. The stage ends when the top node reaches the
sublimation temperature. Sublimation stage: the frozen/dried interface
advances top-down by an energy balance fed by shelf heat, microwave power
and net radiation, while the product temperature stays at the sublimation
point (plus a slow linear microwave drift when configured).

Spatial discretization is second-order central differences on a uniform
grid with ghost-node boundary elimination; time stepping is implicit first
order with the radiation term lagged one step. Stage events are located by
linear interpolation inside the bracketing step.

All quantities are strict SI (m, s, K, W). Configuration-level unit
handling lives in :mod:`lyorad.config`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

STEFAN_BOLTZMANN = 5.67e-8  # W/m^2 K^4

MODES = ("CFD", "MFD", "HFD")


class NoSublimationReached(RuntimeError):
    """Top surface never reached the sublimation temperature in time."""


class NegativeSublimationRate(RuntimeError):
    """Interface energy balance went nonpositive (nonphysical setup)."""


class HorizonExceeded(RuntimeError):
    """Drying did not finish within the configured horizon."""


@dataclass(frozen=True)
class MaterialProperties:
    """Frozen product and vial surface properties."""

    rho: float  # frozen density, kg/m^3
    rho_d: float  # dried density, kg/m^3
    k: float  # thermal conductivity, W/m-K
    Cp: float  # heat capacity, J/kg-K
    dH_sub: float  # latent heat of sublimation, J/kg
    eps_vial: float = 0.8  # vial surface emissivity

    def __post_init__(self):
        for name in ("rho", "rho_d", "k", "Cp", "dH_sub"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.rho <= self.rho_d:
            raise ValueError("frozen density must exceed dried density")
        if not 0.0 < self.eps_vial < 1.0:
            raise ValueError("eps_vial must be in (0, 1)")


@dataclass(frozen=True)
class ProcessSettings:
    """Shelf protocol, microwave power split and drying mode.

    mode=CFD forces Q to zero; mode=MFD forces h to zero (no shelf
    conduction). Ramp rate r is in K/s.
    """

    mode: str
    h: float
    T0: float
    Tb0: float
    Tb_max: float
    r: float
    Tm: float
    Q: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    p3: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "CFD":
            object.__setattr__(self, "Q", 0.0)
        if self.mode == "MFD":
            object.__setattr__(self, "h", 0.0)
        if self.h < 0:
            raise ValueError("h must be nonnegative")
        if self.Q < 0:
            raise ValueError("Q must be nonnegative")
        if min(self.p1, self.p2, self.p3) < 0:
            raise ValueError("absorbed power fractions must be nonnegative")
        if self.Tb_max < self.Tb0:
            raise ValueError("Tb_max must be >= Tb0")
        for name in ("T0", "Tb0", "Tb_max", "Tm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be an absolute temperature > 0")


@dataclass(frozen=True)
class VialGeometry:
    """Vial diameter, product height, radiating area and product volume.

    A1 defaults to the lateral cylinder area pi*d*L and V to the cylinder
    volume; both can be overridden with tabulated values.
    """

    d: float
    L: float
    A1: float | None = None
    V: float | None = None

    def __post_init__(self):
        if self.d <= 0 or self.L <= 0:
            raise ValueError("d and L must be positive")
        if self.A1 is None:
            object.__setattr__(self, "A1", math.pi * self.d * self.L)
        if self.V is None:
            object.__setattr__(self, "V", math.pi * self.d**2 / 4.0 * self.L)
        if self.A1 <= 0 or self.V <= 0:
            raise ValueError("A1 and V must be positive")


@dataclass(frozen=True)
class NumericsConfig:
    N: int = 101  # spatial nodes
    dt: float = 1.0  # time step, s
    tol_event: float = 1e-6  # event tolerance, fraction of scale
    max_hours: float = 400.0  # integration horizon

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("N must be >= 3")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_hours <= 0:
            raise ValueError("max_hours must be positive")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.max_hours * 3600.0 / self.dt))


@dataclass
class VialState:
    """Mutable integration state of one vial."""

    stage: str  # heating | sublimating | done
    T_profile: np.ndarray  # node temperatures, node 0 = top
    s: float = 0.0  # interface position, m
    t: float = 0.0  # current time, s
    t_m: float | None = None
    t_dry: float | None = None
    product_T: float | None = None  # uniform temp once sublimating
    e_rad: float = 0.0  # cumulative absorbed radiative energy, J

    @classmethod
    def initial(cls, num: NumericsConfig, T0: float) -> "VialState":
        return cls(stage="heating", T_profile=np.full(num.N, float(T0)))


@dataclass(frozen=True)
class ScalarRadiation:
    """Closed-form radiation closure Q(T) = sigma*(T^4 - T2^4)/resistance."""

    resistance: float  # 1/m^2
    wall_temperature: float  # K

    def __post_init__(self):
        if self.resistance <= 0:
            raise ValueError("resistance must be positive")

    @property
    def scale(self) -> float:
        return STEFAN_BOLTZMANN / self.resistance


@dataclass
class VialResult:
    """Outcome of a single-vial run with optional sampled time series."""

    t_m: float
    t_dry: float
    radiative_energy: float
    final_product_T: float
    t: np.ndarray | None = None
    T_top: np.ndarray | None = None
    T_bottom: np.ndarray | None = None
    s: np.ndarray | None = None
    e_rad: np.ndarray | None = None

    @property
    def t_m_hours(self) -> float:
        return self.t_m / 3600.0

    @property
    def t_dry_hours(self) -> float:
        return self.t_dry / 3600.0


def shelf_temperature(t, settings: ProcessSettings):
    """Shelf setpoint: linear ramp from Tb0 capped at Tb_max."""
    return np.minimum(settings.r * t + settings.Tb0, settings.Tb_max)


def power_densities(settings: ProcessSettings, geom: VialGeometry):
    """Volumetric microwave source terms (Hv1, Hv2, Hv3) in W/m^3."""
    if settings.Q == 0.0:
        return 0.0, 0.0, 0.0
    qv = settings.Q / geom.V
    return settings.p1 * qv, settings.p2 * qv, settings.p3 * qv


def _conduction_inverse(mat, settings, geom, num):
    """Dense inverse of the implicit conduction matrix (constant in time)."""
    n = num.N
    dx = geom.L / (n - 1)
    a = mat.rho * mat.Cp / num.dt
    c = mat.k / dx**2
    A = np.zeros((n, n))
    idx = np.arange(n)
    A[idx, idx] = a + 2.0 * c
    A[idx[:-1], idx[:-1] + 1] = -c
    A[idx[1:], idx[1:] - 1] = -c
    A[0, 1] = -2.0 * c
    A[n - 1, n - 2] = -2.0 * c
    A[n - 1, n - 1] += 2.0 * settings.h / dx
    return np.linalg.inv(A)


_TRAPZ_CACHE: dict[int, np.ndarray] = {}


def node_weights(n: int) -> np.ndarray:
    """Trapezoid volume weights over the uniform grid (sum to 1)."""
    w = _TRAPZ_CACHE.get(n)
    if w is None:
        w = np.full(n, 1.0 / (n - 1))
        w[0] = w[-1] = 0.5 / (n - 1)
        _TRAPZ_CACHE[n] = w
    return w


def simulate_heating_stage(state, mat, settings, geom, rad_source, num):
    """Advance a heating-stage vial until the top node crosses Tm.

    rad_source(t, T_nodes) must return the volumetric radiative sink in
    W/m^3 per node (positive = net loss), or be None. Returns the updated
    state and the interpolated switching time.
    """
    if state.stage != "heating":
        raise ValueError("state is not in the heating stage")
    n = num.N
    if state.T_profile[0] >= settings.Tm - num.tol_event:
        state.stage = "sublimating"
        state.t_m = state.t
        state.product_T = settings.Tm
        return state, state.t_m

    hv1, _, _ = power_densities(settings, geom)
    ainv = _conduction_inverse(mat, settings, geom, num)
    a = mat.rho * mat.Cp / num.dt
    dx = geom.L / (n - 1)
    hcoef = 2.0 * settings.h / dx
    weights = node_weights(n)
    T = state.T_profile.astype(float)
    e_rad = state.e_rad

    max_steps = num.max_steps
    for _ in range(max_steps):
        t_next = state.t + num.dt
        sink = rad_source(state.t, T) if rad_source is not None else None
        rhs = a * T + hv1
        if sink is not None:
            rhs = rhs - sink
        rhs[-1] += hcoef * shelf_temperature(t_next, settings)
        T_new = ainv @ rhs
        if sink is not None:
            power_in = -float(weights @ sink) * geom.V
        else:
            power_in = 0.0
        if T_new[0] >= settings.Tm:
            top_old = T[0]
            frac = 1.0
            if T_new[0] > top_old:
                frac = (settings.Tm - top_old) / (T_new[0] - top_old)
            frac = min(max(frac, 0.0), 1.0)
            state.t_m = state.t + frac * num.dt
            state.t = t_next
            state.T_profile = T_new
            state.stage = "sublimating"
            state.product_T = settings.Tm
            state.e_rad = e_rad + power_in * frac * num.dt
            return state, state.t_m
        e_rad += power_in * num.dt
        T = T_new
        state.T_profile = T
        state.t = t_next
    state.e_rad = e_rad
    raise NoSublimationReached(
        f"top surface never reached Tm={settings.Tm} K within "
        f"{num.max_hours} h (no effective heat input?)"
    )


def simulate_sublimation_stage(state, mat, settings, geom, rad_source, num):
    """Advance a sublimating vial until the interface reaches the bottom.

    rad_source(t, T_product) must return the net radiative loss in W
    (positive = net loss), or be None. Returns the updated state and the
    interpolated drying completion time.
    """
    if state.stage != "sublimating":
        raise ValueError("state is not in the sublimation stage")
    _, hv2, hv3 = power_densities(settings, geom)
    denom = (mat.rho - mat.rho_d) * mat.dH_sub
    inv_rhocp = 1.0 / (mat.rho * mat.Cp)
    t_m = state.t_m
    e_rad = state.e_rad

    t_prev = t_m
    t_grid = state.t if state.t > t_m else t_m
    s = state.s
    T_prod = settings.Tm + hv3 * inv_rhocp * (t_prev - t_m)
    for _ in range(num.max_steps + 2):
        t_next = t_grid if t_grid > t_prev else t_prev + num.dt
        ddt = t_next - t_prev
        t_grid = t_next + num.dt
        T_prod_next = settings.Tm + hv3 * inv_rhocp * (t_next - t_m)
        q = float(rad_source(t_prev, T_prod)) if rad_source is not None else 0.0
        rate = (
            settings.h * (shelf_temperature(t_next, settings) - T_prod_next)
            + hv2 * geom.L
            - q * geom.L / geom.V
        ) / denom
        if rate <= 0.0:
            raise NegativeSublimationRate(
                f"interface energy balance nonpositive at t={t_prev:.1f} s"
            )
        s_next = s + rate * ddt
        if s_next >= geom.L:
            frac = (geom.L - s) / (s_next - s)
            state.t_dry = t_prev + frac * ddt
            e_rad += -q * frac * ddt
            state.s = geom.L
            state.t = state.t_dry
            state.stage = "done"
            state.product_T = settings.Tm + hv3 * inv_rhocp * (state.t_dry - t_m)
            state.e_rad = e_rad
            return state, state.t_dry
        e_rad += -q * ddt
        s = s_next
        T_prod = T_prod_next
        t_prev = t_next
        state.s = s
        state.t = t_next
        state.product_T = T_prod
    raise HorizonExceeded(f"sublimation did not finish within {num.max_hours} h")


def _run_kernel(mat, settings, geom, radiation, num, series_stride):
    hv1, hv2, hv3 = power_densities(settings, geom)
    if radiation is None:
        rad_scale, t2p4 = 0.0, 0.0
    else:
        rad_scale = radiation.scale
        t2p4 = radiation.wall_temperature**4
    if series_stride:
        cap = num.max_steps // series_stride + 8
    else:
        cap = 0
    buf = [np.empty(cap) for _ in range(5)]
    status, t_m, t_dry, e_rad, n_samp, t_final = kernels.single_vial_kernel(
        mat.rho,
        mat.Cp,
        mat.k,
        mat.rho_d,
        mat.dH_sub,
        settings.h,
        settings.T0,
        settings.Tb0,
        settings.Tb_max,
        settings.r,
        settings.Tm,
        hv1,
        hv2,
        hv3,
        geom.L,
        geom.V,
        rad_scale,
        t2p4,
        num.N,
        num.dt,
        num.max_steps,
        max(series_stride, 1),
        *buf,
    )
    if status == kernels.STATUS_NO_SUBLIMATION:
        raise NoSublimationReached(
            f"top surface never reached Tm={settings.Tm} K within {num.max_hours} h"
        )
    if status == kernels.STATUS_NEGATIVE_RATE:
        raise NegativeSublimationRate("interface energy balance nonpositive")
    if status == kernels.STATUS_HORIZON:
        raise HorizonExceeded(f"drying did not finish within {num.max_hours} h")
    result = VialResult(
        t_m=t_m, t_dry=t_dry, radiative_energy=e_rad, final_product_T=t_final
    )
    if series_stride:
        result.t = buf[0][:n_samp].copy()
        result.T_top = buf[1][:n_samp].copy()
        result.T_bottom = buf[2][:n_samp].copy()
        result.s = buf[3][:n_samp].copy()
        result.e_rad = buf[4][:n_samp].copy()
    return result


def simulate_single_vial(
    mat: MaterialProperties,
    settings: ProcessSettings,
    geom: VialGeometry,
    radiation=None,
    num: NumericsConfig | None = None,
    series_stride: int = 0,
) -> VialResult:
    """Run both drying stages for one vial.

    ``radiation`` is None (no radiation), a :class:`ScalarRadiation` closure
    (handled by the compiled kernel), or a pair of callbacks
    ``(heating_sink, interface_loss)`` with the signatures documented on the
    stage integrators. Set ``series_stride`` > 0 to retain time series
    sampled every that many steps.
    """
    num = num or NumericsConfig()
    if radiation is None or isinstance(radiation, ScalarRadiation):
        return _run_kernel(mat, settings, geom, radiation, num, series_stride)

    heat_cb, interface_cb = radiation
    state = VialState.initial(num, settings.T0)
    state, t_m = simulate_heating_stage(state, mat, settings, geom, heat_cb, num)
    state, t_dry = simulate_sublimation_stage(
        state, mat, settings, geom, interface_cb, num
    )
    return VialResult(
        t_m=t_m,
        t_dry=t_dry,
        radiative_energy=state.e_rad,
        final_product_T=state.product_T,
    )
