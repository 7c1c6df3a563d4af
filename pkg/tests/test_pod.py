import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_field
from trrom.fields import CAVITY, PERIODIC, Grid, VectorField, divergence, h10_inner, l2_inner
from trrom.fom import SnapshotSet
from trrom.pod import (RANK_TOL, RankError, build_gramian, compute_pod, numerical_rank, project,
                       project_snapshots, tails)

GRID = Grid(8, 8, 1.0, 1.0, PERIODIC)


def snapset(fields, grid=GRID):
    return SnapshotSet(tuple(fields), VectorField.zeros(grid), np.arange(len(fields), dtype=float))


def orthonormal_fields(n, grid=GRID, seed=0):
    rng = np.random.default_rng(seed)
    sw = np.sqrt(grid.ops.weights)
    Q, _ = np.linalg.qr(rng.standard_normal((grid.n_dof, n)))
    return [VectorField.from_flat(Q[:, j] / sw, grid) for j in range(n)]


def brute_errors(snaps, basis, r):
    """Mean L2 and H1_0 projection errors evaluated field by field."""
    e2 = h2 = 0.0
    for u in snaps.fields:
        a = project(u, basis, r)
        res = u - basis.reconstruct(a) if r else u
        e2 += l2_inner(res, res)
        h2 += h10_inner(res, res)
    return e2 / len(snaps), h2 / len(snaps)


class TestGramian:
    def test_orthonormal_pair(self):
        K = build_gramian(snapset(orthonormal_fields(2)))
        assert np.allclose(K, np.diag([0.5, 0.5]), atol=1e-14)

    def test_single_snapshot(self):
        u = orthonormal_fields(1)[0] * 3.0
        K = build_gramian(snapset([u]))
        assert K.shape == (1, 1) and K[0, 0] == pytest.approx(9.0, rel=1e-13)

    def test_duplicated_snapshot_eigenvalues(self):
        u = orthonormal_fields(1)[0]
        lam = np.linalg.eigvalsh(build_gramian(snapset([u, u])))
        assert np.allclose(np.sort(lam), [0.0, 1.0], atol=1e-14)

    def test_gramian_spectrum_matches_pod(self, cavity_snaps, cavity_basis):
        lam = np.sort(np.linalg.eigvalsh(build_gramian(cavity_snaps)))[::-1]
        R = cavity_basis.R
        assert np.allclose(cavity_basis.eigenvalues[:R], lam[:R], rtol=1e-8, atol=1e-12 * lam[0])


class TestComputePod:
    def test_orthonormal_equal_energy_snapshots_reconstructed(self):
        fs = orthonormal_fields(4)
        s = snapset(fs)
        b = compute_pod(s)
        assert b.R == 4
        for u in fs:
            res = u - b.reconstruct(project(u, b, 4))
            assert np.sqrt(l2_inner(res, res)) <= 1e-10

    def test_single_snapshot_mode_is_normalized_snapshot(self):
        u = random_field(GRID, np.random.default_rng(5))
        b = compute_pod(snapset([u]))
        phi = b.mode(1)
        target = u * (1 / np.sqrt(l2_inner(u, u)))
        sign = np.sign(l2_inner(phi, target))
        assert np.allclose(phi.flat(), sign * target.flat(), atol=1e-12)

    def test_mode_zero_is_lift(self, cavity_basis, cavity_snaps):
        assert cavity_basis.mode(0) is cavity_snaps.lift

    def test_rank_error_names_threshold(self):
        fs = orthonormal_fields(2)
        with pytest.raises(RankError, match="1e-12"):
            compute_pod(snapset(fs + fs), R=3)

    def test_explicit_rank_stores_exactly_R(self, cavity_snaps):
        b = compute_pod(cavity_snaps, R=3)
        assert b.n_stored == b.R == 3

    def test_invariants_on_cavity(self, cavity_basis):
        b = cavity_basis
        G = (b.modes * b.grid.ops.weights) @ b.modes.T
        assert np.max(np.abs(G - np.eye(b.n_stored))) <= 1e-8
        assert np.all(np.diff(b.eigenvalues) <= 0) and np.all(b.eigenvalues >= -1e-12)
        assert b.R == numerical_rank(b.eigenvalues)
        assert b.eigenvalues[b.R - 1] > RANK_TOL * b.eigenvalues[0]
        for j in range(1, b.R + 1):
            assert np.max(np.abs(divergence(b.mode(j)))) <= 1e-7
        gn = [h10_inner(b.mode(j), b.mode(j)) for j in range(1, b.R + 1)]
        assert np.allclose(gn, b.grad_norms[: b.R], rtol=1e-12)


class TestTails:
    def test_endpoints_and_monotonicity(self, cavity_basis):
        t = tails(cavity_basis)
        R = cavity_basis.R
        assert len(t.l2) == len(t.h10) == R + 1 and len(t.s_norm) == R
        assert t.l2[0] == pytest.approx(cavity_basis.eigenvalues.sum(), rel=1e-14)
        assert np.all(np.diff(t.l2) <= 0) and np.all(np.diff(t.h10) <= 0)
        assert np.all(np.diff(t.s_norm) >= -1e-12 * t.s_norm[-1])
        # only sub-threshold energy is left after the admissible modes
        assert t.l2[R] <= 1e-9 * t.l2[0]

    def test_full_rank_tails_vanish(self):
        rng = np.random.default_rng(11)
        s = snapset([random_field(GRID, rng) for _ in range(10)])
        b = compute_pod(s)
        t = tails(b)
        assert b.R == 10 and t.l2[10] == 0.0 and t.h10[10] == 0.0

    def test_projection_error_identities_random(self):
        rng = np.random.default_rng(12)
        s = snapset([random_field(GRID, rng) for _ in range(10)])
        b = compute_pod(s, R=10)
        t = tails(b)
        for r in range(10):
            l2, h1 = brute_errors(s, b, r)
            assert l2 == pytest.approx(t.l2[r], rel=1e-8)
            assert h1 == pytest.approx(t.h10[r], rel=1e-8)

    def test_projection_error_identities_cavity(self, cavity_snaps, cavity_basis):
        t = tails(cavity_basis)
        for r in range(0, cavity_basis.R + 1, 3):
            l2, h1 = brute_errors(cavity_snaps, cavity_basis, r)
            assert l2 == pytest.approx(t.l2[r], rel=1e-8)
            assert h1 == pytest.approx(t.h10[r], rel=1e-8)

    def test_inverse_estimate(self, cavity_basis):
        t = tails(cavity_basis)
        rng = np.random.default_rng(13)
        r = min(6, cavity_basis.R)
        for _ in range(100):
            a = rng.standard_normal(r)
            u = cavity_basis.reconstruct(a)
            assert np.sqrt(h10_inner(u, u)) <= np.sqrt(t.s_norm_at(r)) * np.sqrt(l2_inner(u, u)) + 1e-10


class TestProjection:
    def test_mode_projects_to_unit_vector(self, cavity_basis):
        a = project(cavity_basis.mode(1), cavity_basis, 4)
        assert np.allclose(a, [1, 0, 0, 0], atol=1e-10)

    def test_orthogonal_field_projects_to_zero(self):
        fs = orthonormal_fields(3)
        b = compute_pod(snapset(fs[:2]))
        assert np.allclose(project(fs[2], b, 2), 0.0, atol=1e-12)

    def test_rank_check(self, cavity_basis):
        with pytest.raises(RankError):
            project(cavity_basis.mode(1), cavity_basis, cavity_basis.R + 1)

    def test_snapshot_matrix_projection_matches_single(self, cavity_snaps, cavity_basis):
        A = project_snapshots(cavity_snaps, cavity_basis, 5)
        assert np.allclose(A[7], project(cavity_snaps.fields[7], cavity_basis, 5), rtol=1e-12, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_projection_pythagoras_and_stability(seed, r):
    rng = np.random.default_rng(seed)
    g = Grid(6, 6, 1.0, 1.0, CAVITY)
    s = snapset([random_field(g, rng) for _ in range(6)], grid=g)
    b = compute_pod(s)
    u = random_field(g, rng)
    Pu = b.reconstruct(project(u, b, r))
    res = u - Pu
    nu, npu, nres = l2_inner(u, u), l2_inner(Pu, Pu), l2_inner(res, res)
    assert nu == pytest.approx(npu + nres, rel=1e-10)
    assert np.sqrt(npu) <= np.sqrt(nu) * (1 + 1e-10)
