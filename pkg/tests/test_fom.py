import math

import numpy as np
import pytest

from trrom.fields import CAVITY, PERIODIC, Grid, VectorField, divergence, l2_inner
from trrom.fom import (LID_CAVITY, CflError, FomConfig, PoissonError, kinetic_energy, lid_profile,
                       run_fom, taylor_green_exact)


def tg_grid(n=32):
    return Grid(n, n, 2 * math.pi, 2 * math.pi, PERIODIC)


class TestTaylorGreenExact:
    def test_initial_energy_is_pi_squared(self):
        assert kinetic_energy(taylor_green_exact(0.0, 0.3, tg_grid())) == pytest.approx(math.pi**2, rel=1e-12)

    def test_decays_to_zero(self):
        f = taylor_green_exact(1e4, 0.01, tg_grid())
        assert np.max(np.abs(f.flat())) < 1e-80

    def test_inviscid_is_steady(self):
        a = taylor_green_exact(0.0, 0.0, tg_grid())
        b = taylor_green_exact(5.0, 0.0, tg_grid())
        assert np.array_equal(a.flat(), b.flat())

    def test_rejects_non_periodic_grid(self):
        with pytest.raises(ValueError):
            taylor_green_exact(0.0, 0.01, Grid(8, 8, 2 * math.pi, 2 * math.pi, CAVITY))
        with pytest.raises(ValueError):
            taylor_green_exact(0.0, 0.01, Grid(8, 8, 1.0, 1.0, PERIODIC))


def test_kinetic_energy_simple_cases():
    g = Grid(8, 8, 1.0, 1.0, PERIODIC)
    assert kinetic_energy(VectorField.zeros(g)) == 0.0
    one = VectorField.from_functions(g, lambda x, y: 1.0 + 0 * x, lambda x, y: 0 * x)
    assert kinetic_energy(one) == pytest.approx(0.5, rel=1e-14)


def test_lid_profile_vanishes_at_corners():
    x = np.array([0.0, 0.5, 1.0])
    assert np.allclose(lid_profile(x), [0.0, 1.0, 0.0])
    assert np.allclose(lid_profile(x, regularized=False), 1.0)


class TestConfig:
    def test_sample_interval_must_be_multiple(self):
        with pytest.raises(ValueError):
            FomConfig(dt=1e-3, dt_sample=0.0015)

    def test_cfl_precheck(self):
        with pytest.raises(ValueError, match="CFL"):
            FomConfig(nx=64, ny=64, dt=0.2, t_end=1.0, dt_sample=0.2)

    def test_digest_is_stable(self):
        assert FomConfig().digest() == FomConfig().digest()
        assert FomConfig().digest() != FomConfig(nu=0.02).digest()


@pytest.fixture(scope="module")
def errors():
    out = {}
    for n in (32, 64):
        cfg = FomConfig(nx=n, ny=n, nu=0.01, dt=1e-3, t_end=1.0, dt_sample=0.25)
        snaps = run_fom(cfg)
        g = cfg.grid()
        errs = []
        for f, t in zip(snaps.raw_fields(), snaps.times):
            e = f - taylor_green_exact(t, 0.01, g)
            errs.append(math.sqrt(l2_inner(e, e)))
        out[n] = (max(errs), snaps)
    return out


class TestTaylorGreenRun:
    def test_second_order_self_convergence(self, errors):
        order = math.log2(errors[32][0] / errors[64][0])
        assert 1.8 <= order <= 2.2

    def test_energy_decay_rate(self, errors):
        snaps = errors[64][1]
        e1 = kinetic_energy(snaps.raw_fields()[-1])
        assert snaps.times[-1] == pytest.approx(1.0)
        assert e1 == pytest.approx(math.pi**2 * math.exp(-4 * 0.01 * 1.0), rel=0.01)

    def test_zero_lift(self, errors):
        snaps = errors[32][1]
        assert not np.any(snaps.lift.flat())


class TestCavityRun:
    def test_snapshot_count_and_times(self, cavity_cfg, cavity_snaps):
        expected = round((cavity_cfg.t_end - cavity_cfg.t_start) / cavity_cfg.dt_sample) + 1
        assert len(cavity_snaps) == expected == cavity_cfg.n_samples
        assert cavity_snaps.times[0] == pytest.approx(cavity_cfg.t_start)
        assert cavity_snaps.times[-1] == pytest.approx(cavity_cfg.t_end)

    def test_snapshots_divergence_free(self, cavity_snaps):
        for f in cavity_snaps.raw_fields():
            assert np.max(np.abs(divergence(f))) <= 1e-8

    def test_lift_is_first_field_and_first_fluctuation_zero(self, cavity_snaps):
        assert not np.any(cavity_snaps.fields[0].flat())
        assert np.any(cavity_snaps.lift.flat())

    def test_mean_bookkeeping(self, cavity_snaps):
        raw = np.mean([f.flat() for f in cavity_snaps.raw_fields()], axis=0)
        fl = np.mean(cavity_snaps.matrix(), axis=0) + cavity_snaps.lift.flat()
        assert np.allclose(raw, fl, rtol=0, atol=1e-14)

    def test_approaches_steady_state(self, cavity_snaps):
        X = cavity_snaps.matrix()
        steps = np.linalg.norm(np.diff(X, axis=0), axis=1)
        assert steps[-1] < steps[len(steps) // 4]

    def test_metadata_records_config_hash(self, cavity_cfg, cavity_snaps):
        assert cavity_snaps.metadata["config_sha256"] == cavity_cfg.digest()

    def test_deterministic(self, cavity_cfg, cavity_snaps):
        again = run_fom(cavity_cfg)
        assert np.array_equal(again.matrix(), cavity_snaps.matrix())


def test_poisson_tolerance_violation_raises():
    cfg = FomConfig(case=LID_CAVITY, nx=8, ny=8, nu=0.05, dt=0.01, t_end=0.02, dt_sample=0.01,
                    poisson_tol=1e-300)
    with pytest.raises(PoissonError):
        run_fom(cfg)


def test_runtime_cfl_violation_raises(monkeypatch):
    # understate the velocity scale so the run gets past the precheck
    monkeypatch.setattr(FomConfig, "velocity_scale", lambda self: 0.01)
    cfg = FomConfig(nx=32, ny=32, nu=1e-3, dt=0.1, t_end=1.0, dt_sample=0.1)
    with pytest.raises(CflError):
        run_fom(cfg)
