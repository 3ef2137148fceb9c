import dataclasses

import numpy as np
import pytest

from rbc_koopman.dataset import convective_field, read_episode, write_episode
from rbc_koopman.dns import (
    DESK_GRID,
    FlowState,
    SimulationConfig,
    advance,
    divergence,
    initial_condition,
    kinetic_energy,
    perturbation_energy,
    poisson_solve,
    simulate_episode,
    step,
)
from rbc_koopman.errors import Blowup
from rbc_koopman.fields import Grid, ScalarField, ddx, ddy, laplacian


@pytest.fixture(scope="module")
def developed():
    """A convecting Ra=1e5 state at t=40."""
    cfg = SimulationConfig(ra=1e5, seed=3)
    return cfg, advance(initial_condition(cfg), cfg, 1600)


class TestConfig:
    def test_defaults(self):
        c = SimulationConfig()
        assert (c.pr, c.t_top, c.t_bottom, c.dt, c.cook_time, c.episode_length) == (0.7, 1.0, 2.0, 0.025, 100.0, 500.0)
        assert c.steps_per_record == 40
        assert c.n_records == 500

    @pytest.mark.parametrize("kw", [{"ra": 0}, {"pr": -1}, {"dt": 0}, {"record_interval": 0.03}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimulationConfig(**kw)


class TestInitialCondition:
    def test_noise_free_is_conduction(self):
        cfg = SimulationConfig(noise_amplitude=0.0)
        s = initial_condition(cfg)
        T = s.temperature.values
        expected = 2.0 - (DESK_GRID.y + 1.0) / 2.0
        assert np.array_equal(T, np.repeat(expected[:, None], DESK_GRID.nx, axis=1))
        assert not s.u_x.values.any() and not s.u_y.values.any()

    def test_same_seed_identical(self):
        a = initial_condition(SimulationConfig(seed=5))
        b = initial_condition(SimulationConfig(seed=5))
        assert a.temperature == b.temperature

    def test_different_seeds_differ(self):
        a = initial_condition(SimulationConfig(seed=1)).temperature.values
        b = initial_condition(SimulationConfig(seed=2)).temperature.values
        assert np.any(a[1:-1] != b[1:-1])

    def test_walls_and_noise_bounds(self):
        cfg = SimulationConfig(noise_amplitude=1e-3, seed=9)
        s = initial_condition(cfg)
        T = s.temperature.values
        assert np.all(T[0] == 2.0) and np.all(T[-1] == 1.0)
        dev = T - cfg.conduction_profile()
        assert np.abs(dev).max() <= 1e-3


class TestPoisson:
    def test_zero(self):
        psi = poisson_solve(ScalarField(DESK_GRID, np.zeros(DESK_GRID.shape)))
        assert not psi.values.any()

    @staticmethod
    def manufactured_error(ny, k=2):
        g = Grid(nx=32, ny=ny)
        lam = k**2 + (np.pi / 2) ** 2
        w = ScalarField.from_function(g, lambda x, y: lam * np.sin(k * x) * np.cos(np.pi * y / 2))
        exact = ScalarField.from_function(g, lambda x, y: np.sin(k * x) * np.cos(np.pi * y / 2))
        psi = poisson_solve(w)
        return np.linalg.norm(psi.values - exact.values) / np.linalg.norm(exact.values)

    def test_manufactured_second_order(self):
        e33, e65 = self.manufactured_error(33), self.manufactured_error(65)
        assert e33 < 1e-3
        assert e33 / e65 == pytest.approx(4.0, rel=0.05)

    def test_discrete_residual(self):
        g = DESK_GRID
        w = np.random.default_rng(0).normal(size=g.shape)
        psi = poisson_solve(ScalarField(g, w))
        res = laplacian(psi).values + w
        assert np.linalg.norm(res[1:-1]) <= 1e-8 * np.linalg.norm(w[1:-1])
        assert not psi.values[0].any() and not psi.values[-1].any()


class TestStep:
    @pytest.mark.parametrize("ra", [1e3, 1e5, 5e6])
    def test_conduction_is_fixed_point(self, ra):
        cfg = SimulationConfig(ra=ra, noise_amplitude=0.0)
        s0 = initial_condition(cfg)
        s1 = step(s0, cfg)
        for name in ("temperature", "vorticity", "streamfunction"):
            assert np.max(np.abs(getattr(s1, name).values - getattr(s0, name).values)) <= 1e-12

    def test_time_advances(self):
        cfg = SimulationConfig()
        s = advance(initial_condition(cfg), cfg, 3)
        assert s.time == pytest.approx(3 * cfg.dt)
        assert s.steps == 3

    def test_onset_at_1e5(self):
        cfg = SimulationConfig(ra=1e5, seed=0)
        s = initial_condition(cfg)
        peak = 0.0
        for _ in range(100):
            s = advance(s, cfg, 40)
            peak = max(peak, convective_field(s).mean())
            if peak > 1e-2:
                break
        assert peak > 1e-2

    def test_subcritical_decay(self):
        # the critical value of Ra in these units is 1708/8 (gap height 2)
        cfg = SimulationConfig(ra=150, seed=0)
        s = initial_condition(cfg)
        energies = [perturbation_energy(s, cfg)]
        for _ in range(50):
            s = advance(s, cfg, 40)
            energies.append(perturbation_energy(s, cfg))
        assert np.all(np.diff(energies) <= 0)
        assert energies[-1] < 1e-6 * energies[0]

    def test_onset_bracket(self):
        def growth(ra):
            cfg = SimulationConfig(ra=ra, seed=0)
            # skip the initial transient in which even growing cases lose energy
            s = advance(initial_condition(cfg), cfg, 4000)
            e0 = kinetic_energy(s)
            s = advance(s, cfg, 8000)
            return kinetic_energy(s) / e0

        assert growth(190) < 1.0 < growth(240)

    def test_invariants_along_trajectory(self, developed):
        cfg, s = developed
        for _ in range(10):
            s = advance(s, cfg, 40)
            assert np.abs(divergence(s)).max() <= 1e-10
            T = s.temperature.values
            assert T.min() >= cfg.t_top - 0.05 and T.max() <= cfg.t_bottom + 0.05
            assert np.all(T[0] == cfg.t_bottom) and np.all(T[-1] == cfg.t_top)
            assert not s.streamfunction.values[0].any() and not s.streamfunction.values[-1].any()
            assert s.u_x == ddy(s.streamfunction)
            assert np.array_equal(s.u_y.values, -ddx(s.streamfunction).values)

    def test_viscous_decay_without_buoyancy(self, developed):
        cfg, s = developed
        cold = dataclasses.replace(cfg, buoyancy=False)
        s = dataclasses.replace(s, tendency=None)
        ke = [kinetic_energy(s)]
        for _ in range(400):
            s = step(s, cold)
            ke.append(kinetic_energy(s))
        assert np.all(np.diff(ke) <= 1e-12 * ke[0])
        assert ke[-1] < ke[0]

    def test_time_step_refinement(self, developed):
        cfg, s0 = developed
        s0 = dataclasses.replace(s0, tendency=None)

        def run(dt):
            c = dataclasses.replace(cfg, dt=dt)
            return convective_field(advance(s0, c, round(2.0 / dt))).values

        coarse, fine, finer = run(0.025), run(0.0125), run(0.00625)
        d1 = np.linalg.norm(coarse - fine) / np.linalg.norm(fine)
        d2 = np.linalg.norm(fine - finer) / np.linalg.norm(finer)
        assert d1 <= 0.025
        assert d1 / d2 > 1.8

    def test_blowup(self):
        cfg = SimulationConfig()
        s = initial_condition(cfg)
        g = cfg.grid
        big = ScalarField(g, np.full(g.shape, 1e7))
        bad = FlowState(s.temperature, big, s.streamfunction, s.u_x, s.u_y)
        with pytest.raises(Blowup):
            step(bad, cfg)


class TestEpisode:
    def test_record_times(self):
        cfg = SimulationConfig(episode_length=10, record_interval=1)
        ep = simulate_episode(cfg)
        assert len(ep) == 10
        assert ep.times.tolist() == list(range(101, 111))
        assert ep.data.shape == (10, 32, 48)

    def test_deterministic_after_persistence(self, tmp_path):
        cfg = SimulationConfig(cook_time=5, episode_length=5, seed=4)
        a = write_episode(simulate_episode(cfg), tmp_path / "a.rbce")
        b = write_episode(simulate_episode(cfg), tmp_path / "b.rbce")
        assert a.read_bytes() == b.read_bytes()
        assert read_episode(a) == read_episode(b)
