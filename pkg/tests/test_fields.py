import numpy as np
import pytest

from bgkholo.fields import (DistributionField, MomentField, contract_e,
                            fluid_from_moments, load_distribution, load_moments_csv,
                            maxwellian_dual, maxwellian_field,
                            maxwellian_moments_against_basis, moments_from_fluid,
                            moments_of, save_distribution, save_moments_csv,
                            weighted_l2_diff)
from bgkholo.phase_space import (PhaseSpace, RealizabilityError, build_spatial_mesh,
                                 build_velocity_grid, project_function)

rng = np.random.default_rng(777)


def small_space(n_x=4, n_v=6, v_max=6.0, kappa=2):
    return PhaseSpace(build_spatial_mesh(-1, 1, [((-1, 1), n_x)], kappa),
                      build_velocity_grid(v_max, n_v))


def random_moments(ps, scale=0.1):
    """Realizable random moment field: positive density/temperature plus wiggles."""
    n_x, px = ps.mesh.n_cells, ps.mesh.n_modes
    c = np.zeros((3, n_x, px))
    base_n = rng.uniform(0.5, 2.0, n_x)
    base_u = rng.uniform(-0.5, 0.5, n_x)
    base_t = rng.uniform(0.5, 2.0, n_x)
    c[:, :, 0] = moments_from_fluid(base_n, base_u, base_t) * np.sqrt(ps.mesh.widths)
    c[:, :, 1:] = scale * rng.normal(size=(3, n_x, px - 1)) * 0.05
    return MomentField(coeffs=c, space=ps)


class TestFluidBijection:
    def test_standard_state(self):
        assert fluid_from_moments(np.array([1.0, 0.0, 0.5])) == pytest.approx((1, 0, 1))

    def test_sod_right_state(self):
        n, u, t = fluid_from_moments(np.array([0.125, 0.0, 0.05]))
        assert (n, u, t) == pytest.approx((0.125, 0.0, 0.8))

    def test_algebraic_state(self):
        assert fluid_from_moments(np.array([2.0, 2.0, 3.0])) == pytest.approx((2, 1, 2))

    def test_roundtrip_thousand_random_states(self):
        n = rng.uniform(1e-3, 10, 1000)
        u = rng.uniform(-5, 5, 1000)
        t = rng.uniform(1e-3, 10, 1000)
        rho = moments_from_fluid(n, u, t)
        n2, u2, t2 = fluid_from_moments(rho)
        assert np.allclose(n2, n, rtol=1e-14)
        assert np.allclose(u2, u, rtol=1e-14, atol=1e-14)
        assert np.allclose(t2, t, rtol=1e-14)

    def test_nonrealizable_rejected_with_location(self):
        with pytest.raises(RealizabilityError, match="cell 3"):
            fluid_from_moments(np.array([[1, 1, 1, 1], [0, 0, 0, 0], [.5, .5, .5, -1]]),
                               where="cell 3")


class TestMoments:
    def test_zero_field(self):
        ps = small_space()
        f = DistributionField(np.zeros((4, 3, 6, 3)), ps)
        assert moments_of(f).norm() == 0.0

    def test_projected_maxwellian_moments(self):
        ps = small_space(n_x=4, n_v=32)
        f = maxwellian_field(lambda x: np.broadcast_to(
            np.array([1.0, 0.0, 0.5]).reshape(3, *(1,) * np.ndim(x)),
            (3,) + np.shape(x)), ps)
        rho = moments_of(f)
        avg = rho.coeffs[:, :, 0] / np.sqrt(ps.mesh.widths)
        assert np.max(np.abs(avg - np.array([[1.0], [0.0], [0.5]]))) < 1e-7

    def test_linearity(self):
        ps = small_space()
        a = DistributionField(rng.normal(size=(4, 3, 6, 3)), ps)
        b = DistributionField(rng.normal(size=(4, 3, 6, 3)), ps)
        lhs = moments_of(DistributionField(2.5 * a.coeffs - 1.25 * b.coeffs, ps))
        rhs = 2.5 * moments_of(a) - 1.25 * moments_of(b)
        assert np.allclose(lhs.coeffs, rhs.coeffs, atol=1e-14)


class TestMaxwellianIdentity:
    def test_discrete_moment_identity(self):
        """Contracting the Maxwellian dual with e recovers the moments to 1e-13."""
        for trial in range(5):
            ps = small_space(n_x=5, n_v=rng.choice([4, 8, 32]))
            rho = random_moments(ps)
            dual = maxwellian_dual(rho)
            back = contract_e(dual, ps)
            assert np.allclose(back, rho.coeffs, rtol=1e-13, atol=1e-14 * rho.norm())

    def test_weight_one_total_mass(self):
        ps = small_space(n_x=1, n_v=8)
        c = np.zeros((3, 1, 3))
        c[:, 0, 0] = np.array([1.0, 0.0, 0.5]) * np.sqrt(ps.mesh.widths[0])
        rho = MomentField(c, ps)
        vals = maxwellian_moments_against_basis(rho, "1")     # (n_x, nq, n_v, 3)
        mode0 = np.einsum('iqjm,jm->iq', vals, ps.Ev[0])
        assert np.allclose(mode0, 1.0, atol=1e-13)

    def test_weight_v_zero_mean(self):
        ps = small_space(n_x=1, n_v=8)
        c = np.zeros((3, 1, 3))
        c[:, 0, 0] = np.array([1.0, 0.0, 0.5]) * np.sqrt(ps.mesh.widths[0])
        rho = MomentField(c, ps)
        vals = maxwellian_moments_against_basis(rho, "v")
        total = np.einsum('iqjm,jm->iq', vals, ps.Ev[0])
        assert np.allclose(total, 0.0, atol=1e-14)

    def test_weight_absv_half_moment(self):
        ps = small_space(n_x=1, n_v=8)
        c = np.zeros((3, 1, 3))
        c[:, 0, 0] = np.array([1.0, 0.0, 0.5]) * np.sqrt(ps.mesh.widths[0])
        rho = MomentField(c, ps)
        vals = maxwellian_moments_against_basis(rho, "|v|")
        total = np.einsum('iqjm,jm->iq', vals, ps.Ev[0])
        assert np.allclose(total, np.sqrt(2 / np.pi), rtol=1e-13)


class TestWeightedDiff:
    def test_identical_fields(self):
        ps = small_space()
        rho = random_moments(ps)
        assert weighted_l2_diff(rho, rho.copy()) == 0.0

    def test_factor_two(self):
        ps = small_space()
        rho = random_moments(ps)
        two = 2.0 * rho
        assert weighted_l2_diff(two, rho) == pytest.approx(0.5, rel=1e-14)

    def test_zero_denominator(self):
        ps = small_space()
        zero = MomentField(np.zeros((ps.mesh.n_cells, ps.mesh.n_modes, 3)).transpose(2, 0, 1) * 0
                           if False else np.zeros((3, ps.mesh.n_cells, ps.mesh.n_modes)), ps)
        with pytest.raises(ZeroDivisionError):
            weighted_l2_diff(zero, zero)


class TestSerialization:
    def test_moments_csv_roundtrip(self, tmp_path):
        ps = small_space()
        rho = random_moments(ps)
        path = tmp_path / "rho.csv"
        save_moments_csv(rho, path)
        back = load_moments_csv(path, ps)
        assert np.allclose(back.coeffs, rho.coeffs, rtol=1e-15)

    def test_distribution_binary_roundtrip(self, tmp_path):
        ps = small_space()
        f = DistributionField(rng.normal(size=(4, 3, 6, 3)), ps)
        path = tmp_path / "f.bin"
        save_distribution(f, path)
        back = load_distribution(path, ps)
        assert np.array_equal(back.coeffs, f.coeffs)
