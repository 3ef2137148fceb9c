"""Direct numerical simulation of 2D Rayleigh-Benard convection.

The non-dimensional Boussinesq equations are integrated in
vorticity-streamfunction form::

    dw/dt + u.grad(w) = sqrt(Pr/Ra) lap(w) + dT/dx
    dT/dt + u.grad(T) = 1/sqrt(Ra Pr) lap(T)
    lap(psi) = -w,   u_x = dpsi/dy,   u_y = -dpsi/dx

with periodic x, no-slip isothermal walls at y_min (hot) and y_max (cold).
Advection and buoyancy are advanced with second-order Adams-Bashforth,
diffusion with Crank-Nicolson, each Fourier mode in x giving a small banded
system in y.  Wall vorticity comes from Thom's formula.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import Blowup
from .fields import Grid, ScalarField, fd_d2y, fd_dy, spectral_dx

DESK_GRID = Grid(nx=48, ny=32)
BLOWUP_LIMIT = 1e6


@dataclass(frozen=True)
class SimulationConfig:
    ra: float = 1e5
    pr: float = 0.7
    grid: Grid = DESK_GRID
    t_bottom: float = 2.0
    t_top: float = 1.0
    dt: float = 0.025
    record_interval: float = 1.0
    cook_time: float = 100.0
    episode_length: float = 500.0
    noise_amplitude: float = 1e-3
    seed: int = 0
    buoyancy: bool = True

    def __post_init__(self):
        if not (self.ra > 0 and self.pr > 0 and self.dt > 0):
            raise ValueError("ra, pr and dt must be positive")
        if self.record_interval <= 0 or self.cook_time < 0 or self.episode_length < 0:
            raise ValueError("record_interval must be positive; cook_time and episode_length non-negative")
        for name in ("record_interval", "cook_time"):
            ratio = getattr(self, name) / self.dt
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ValueError(f"{name} must be an integer multiple of dt")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be non-negative")

    @property
    def viscosity(self) -> float:
        return math.sqrt(self.pr / self.ra)

    @property
    def diffusivity(self) -> float:
        return 1.0 / math.sqrt(self.ra * self.pr)

    @property
    def steps_per_record(self) -> int:
        return round(self.record_interval / self.dt)

    @property
    def cook_steps(self) -> int:
        return round(self.cook_time / self.dt)

    @property
    def n_records(self) -> int:
        return int(round(self.episode_length / self.record_interval))

    def conduction_profile(self) -> np.ndarray:
        """Linear wall-to-wall temperature, shape (ny, 1)."""
        g = self.grid
        s = (g.y - g.y_min) / g.height
        return (self.t_bottom + (self.t_top - self.t_bottom) * s)[:, None]


@dataclass(frozen=True, eq=False)
class FlowState:
    temperature: ScalarField
    vorticity: ScalarField
    streamfunction: ScalarField
    u_x: ScalarField
    u_y: ScalarField
    time: float = 0.0
    steps: int = 0
    # previous explicit tendencies (vorticity, temperature) in Fourier space; None before the first step
    tendency: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def grid(self) -> Grid:
        return self.temperature.grid


def velocities(psi: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    return fd_dy(psi, grid.dy), -spectral_dx(psi, grid.lx)


def _make_state(config, T, w, psi, steps, tendency=None) -> FlowState:
    g = config.grid
    ux, uy = velocities(psi, g)
    return FlowState(
        temperature=ScalarField(g, T),
        vorticity=ScalarField(g, w),
        streamfunction=ScalarField(g, psi),
        u_x=ScalarField(g, ux),
        u_y=ScalarField(g, uy),
        time=steps * config.dt,
        steps=steps,
        tendency=tendency,
    )


def initial_condition(config: SimulationConfig) -> FlowState:
    """Conduction profile plus seeded uniform noise on the interior temperature."""
    g = config.grid
    T = np.repeat(config.conduction_profile(), g.nx, axis=1)
    if config.noise_amplitude > 0:
        rng = np.random.default_rng(config.seed)
        a = config.noise_amplitude
        T[1:-1] += rng.uniform(-a, a, size=(g.ny - 2, g.nx))
    zeros = np.zeros(g.shape)
    return _make_state(config, T, zeros, zeros.copy(), 0)


class _Operators:
    """Per-wavenumber inverses of the banded y-operators, built once per config."""

    def __init__(self, config: SimulationConfig):
        g = config.grid
        self.grid = g
        self.dt = config.dt
        self.nu = config.viscosity
        self.kappa = config.diffusivity
        n = g.ny - 2
        k = g.kx
        self.ik = 1j * k
        self.ik_odd = self.ik.copy()
        self.ik_odd[-1] = 0.0
        self.dealias = (np.arange(k.size) <= g.nx // 3).astype(float)
        d2 = (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) / g.dy**2
        eye = np.eye(n)
        lap_k = d2[None] - (k**2)[:, None, None] * eye[None]
        self.poisson_inv = np.linalg.inv(lap_k)
        self.cn_w_inv = np.linalg.inv(eye[None] - 0.5 * self.dt * self.nu * lap_k)
        self.cn_t_inv = np.linalg.inv(eye[None] - 0.5 * self.dt * self.kappa * lap_k)
        self.k2 = k**2
        self.dTc_dy = (config.t_top - config.t_bottom) / g.height
        self.tc = config.conduction_profile()
        self.buoyancy = config.buoyancy

    @staticmethod
    def apply(inv: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Apply per-mode matrices ``inv[k]`` to the columns of ``rhs`` (n, nk)."""
        return np.einsum("kij,jk->ik", inv, rhs.real) + 1j * np.einsum("kij,jk->ik", inv, rhs.imag)

    def lap_hat(self, f_hat: np.ndarray) -> np.ndarray:
        """Interior rows of the discrete Laplacian of a Fourier-in-x field."""
        dy2 = self.grid.dy**2
        return (f_hat[2:] - 2 * f_hat[1:-1] + f_hat[:-2]) / dy2 - self.k2 * f_hat[1:-1]

    def poisson_hat(self, w_hat: np.ndarray) -> np.ndarray:
        psi_hat = np.zeros_like(w_hat)
        psi_hat[1:-1] = self.apply(self.poisson_inv, -w_hat[1:-1])
        return psi_hat


@lru_cache(maxsize=16)
def _operators(config: SimulationConfig) -> _Operators:
    return _Operators(config)


def poisson_solve(vorticity: ScalarField) -> ScalarField:
    """Solve lap(psi) = -w with psi = 0 on both walls.

    Wall rows of ``vorticity`` do not enter; the solve uses interior rows only.
    """
    g = vorticity.grid
    ops = _operators(SimulationConfig(grid=g))
    w_hat = np.fft.rfft(vorticity.values, axis=1)
    psi = np.fft.irfft(ops.poisson_hat(w_hat), n=g.nx, axis=1)
    return ScalarField(g, psi)


def _check_finite(config, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)) or np.max(np.abs(a)) > BLOWUP_LIMIT:
            raise Blowup(f"field exceeded {BLOWUP_LIMIT:g} at ra={config.ra:g}, dt={config.dt:g}")


def step(state: FlowState, config: SimulationConfig) -> FlowState:
    """Advance ``state`` by one time step ``config.dt``."""
    ops = _operators(config)
    g = config.grid
    nx, dt, dy = g.nx, config.dt, g.dy

    theta = state.temperature.values - ops.tc
    w = state.vorticity.values
    ux, uy = state.u_x.values, state.u_y.values
    w_hat = np.fft.rfft(w, axis=1)
    th_hat = np.fft.rfft(theta, axis=1)

    wx = np.fft.irfft(ops.ik_odd * w_hat, n=nx, axis=1)
    thx = np.fft.irfft(ops.ik_odd * th_hat, n=nx, axis=1)
    adv_w = np.fft.rfft(ux * wx + uy * fd_dy(w, dy), axis=1) * ops.dealias
    adv_t = np.fft.rfft(ux * thx + uy * fd_dy(theta, dy), axis=1) * ops.dealias
    n_w = -adv_w
    if ops.buoyancy:
        n_w = n_w + ops.ik_odd * th_hat
    n_t = -adv_t - ops.dTc_dy * np.fft.rfft(uy, axis=1)

    if state.tendency is None:
        ab_w, ab_t = n_w, n_t
    else:
        prev_w, prev_t = state.tendency
        ab_w = 1.5 * n_w - 0.5 * prev_w
        ab_t = 1.5 * n_t - 0.5 * prev_t

    # vorticity: Crank-Nicolson with wall values lagged from the current streamfunction
    rhs_w = w_hat[1:-1] + 0.5 * dt * ops.nu * ops.lap_hat(w_hat) + dt * ab_w[1:-1]
    rhs_w[0] += 0.5 * dt * ops.nu * w_hat[0] / dy**2
    rhs_w[-1] += 0.5 * dt * ops.nu * w_hat[-1] / dy**2
    w_new_hat = np.empty_like(w_hat)
    w_new_hat[1:-1] = ops.apply(ops.cn_w_inv, rhs_w)
    w_new_hat[0] = w_hat[0]
    w_new_hat[-1] = w_hat[-1]

    psi_hat = ops.poisson_hat(w_new_hat)
    w_new_hat[0] = -2.0 * psi_hat[1] / dy**2
    w_new_hat[-1] = -2.0 * psi_hat[-2] / dy**2

    # temperature perturbation: homogeneous Dirichlet walls
    rhs_t = th_hat[1:-1] + 0.5 * dt * ops.kappa * ops.lap_hat(th_hat) + dt * ab_t[1:-1]
    th_new_hat = np.zeros_like(th_hat)
    th_new_hat[1:-1] = ops.apply(ops.cn_t_inv, rhs_t)

    w_new = np.fft.irfft(w_new_hat, n=nx, axis=1)
    psi = np.fft.irfft(psi_hat, n=nx, axis=1)
    T = ops.tc + np.fft.irfft(th_new_hat, n=nx, axis=1)
    _check_finite(config, w_new, psi, T)
    return _make_state(config, T, w_new, psi, state.steps + 1, (n_w, n_t))


def advance(state: FlowState, config: SimulationConfig, n_steps: int) -> FlowState:
    for _ in range(n_steps):
        state = step(state, config)
    return state


def kinetic_energy(state: FlowState) -> float:
    """Domain-averaged kinetic energy 0.5 <u_x^2 + u_y^2>."""
    return 0.5 * float(np.mean(state.u_x.values**2 + state.u_y.values**2))


def perturbation_energy(state: FlowState, config: SimulationConfig) -> float:
    """Kinetic energy plus 0.5 <theta'^2>, theta' the deviation from conduction."""
    theta = state.temperature.values - config.conduction_profile()
    return kinetic_energy(state) + 0.5 * float(np.mean(theta**2))


def divergence(state: FlowState) -> np.ndarray:
    g = state.grid
    return spectral_dx(state.u_x.values, g.lx) + fd_dy(state.u_y.values, g.dy)


def simulate_episode(config: SimulationConfig, progress=None):
    """Run ``cook_time`` unrecorded, then record the convective field every ``record_interval``.

    ``progress`` is an optional callable receiving the number of records written.
    """
    from .dataset import Episode, convective_field

    state = advance(initial_condition(config), config, config.cook_steps)
    snapshots, times = [], []
    spr = config.steps_per_record
    for i in range(config.n_records):
        state = advance(state, config, spr)
        snapshots.append(convective_field(state))
        times.append(state.steps * config.dt)
        if progress is not None:
            progress(i + 1)
    return Episode(
        ra=config.ra,
        pr=config.pr,
        seed=config.seed,
        times=np.array(times),
        snapshots=snapshots,
        grid=config.grid,
    )


def with_seed(config: SimulationConfig, seed: int) -> SimulationConfig:
    return replace(config, seed=seed)
