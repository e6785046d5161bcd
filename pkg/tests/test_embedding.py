import numpy as np
import pytest

from gpmatch.embedding import (
    BASIS_KINDS,
    CosSqBasis,
    FourierBasis,
    IdentityBasis,
    SEBasis,
    embed,
    empirical_kernel,
    load_basis_file,
    metamer_separation,
    sample_basis,
    save_basis_file,
)
from gpmatch.exceptions import FormatError

SAMPLED_KINDS = ("fourier", "se", "cossq")


class TestSampling:
    def test_paper_default_width(self):
        basis = sample_basis("fourier", 256, 1.0, 0)
        assert basis.projection_.shape == (256, 2)
        assert basis.phase_.shape == (256,)

    @pytest.mark.parametrize("kind", SAMPLED_KINDS)
    def test_deterministic_per_seed(self, kind):
        a = sample_basis(kind, 64, 2.0, 123)
        b = sample_basis(kind, 64, 2.0, 123)
        if kind == "fourier":
            assert np.array_equal(a.projection_, b.projection_)
            assert np.array_equal(a.phase_, b.phase_)
        else:
            assert np.array_equal(a.centers_, b.centers_)

    def test_se_centers_within_box(self):
        for ell in (0.5, 1.0, 4.0):
            basis = sample_basis("se", 512, ell, 7)
            bound = 1.0 + 1.0 / ell
            assert np.abs(basis.centers_).max() <= bound

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            sample_basis("fourier", 0, 1.0, 0)
        with pytest.raises(ValueError):
            sample_basis("se", 16, 0.0, 0)
        with pytest.raises(ValueError):
            sample_basis("sinusoid", 16, 1.0, 0)

    def test_kinds_registry(self):
        assert set(SAMPLED_KINDS) <= set(BASIS_KINDS)


class TestEmbed:
    def test_fourier_range(self):
        basis = sample_basis("fourier", 128, 3.0, 0)
        vals = embed(basis, np.random.default_rng(0).uniform(-1, 1, (200, 2)))
        assert vals.min() >= -1.0 and vals.max() <= 1.0

    def test_bump_ranges(self):
        pts = np.random.default_rng(1).uniform(-1, 1, (200, 2))
        for kind in ("se", "cossq"):
            vals = embed(sample_basis(kind, 128, 3.0, 0), pts)
            assert vals.min() >= 0.0 and vals.max() <= 1.0

    def test_se_own_center_is_one(self):
        basis = sample_basis("se", 32, 2.0, 3)
        vals = embed(basis, basis.centers_[:1])
        assert vals[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_cossq_center_and_support(self):
        basis = sample_basis("cossq", 32, 2.0, 3)
        center = basis.centers_[0]
        assert embed(basis, center[None])[0, 0] == pytest.approx(1.0, abs=1e-12)
        radius = basis.support_length_ / 2.0
        outside = center + np.array([radius * 1.0001, 0.0])
        assert embed(basis, outside[None])[0, 0] == 0.0
        # continuity: just inside the boundary the value is near zero
        inside = center + np.array([radius * 0.999, 0.0])
        assert embed(basis, inside[None])[0, 0] < 1e-4

    def test_identity_passthrough(self):
        basis = IdentityBasis().fit()
        pts = np.array([[0.25, -0.5]])
        assert np.array_equal(embed(basis, pts), pts)

    def test_nonfinite_rejected(self):
        basis = sample_basis("fourier", 8, 1.0, 0)
        with pytest.raises(ValueError):
            embed(basis, [[np.nan, 0.0]])


class TestEmpiricalKernel:
    def test_symmetric_exact(self):
        rng = np.random.default_rng(2)
        for kind in SAMPLED_KINDS:
            basis = sample_basis(kind, 256, 1.5, 4)
            for _ in range(20):
                x, y = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
                assert empirical_kernel(basis, x, y) == empirical_kernel(basis, y, x)

    def test_fourier_gaussian_limit_monte_carlo(self):
        # 20 resampled bases at D=8192: mean deviation from exp(-1/2) small
        x = np.array([0.1, -0.2])
        y = x + np.array([1.0, 1.0]) / np.sqrt(2)  # unit distance
        assert np.hypot(*(x - y)) == pytest.approx(1.0)
        vals = [empirical_kernel(sample_basis("fourier", 8192, 1.0, s), x, y) for s in range(20)]
        assert abs(np.mean(vals) - np.exp(-0.5)) < 0.02
        assert np.abs(np.array(vals) - np.exp(-0.5)).mean() < 0.05

    def test_fourier_far_field_decay(self):
        basis = sample_basis("fourier", 16384, 2.0, 5)
        k = empirical_kernel(basis, [-0.9, -0.9], [0.9, 0.9])
        assert abs(k) < 5.0 / np.sqrt(16384)

    def test_identity_rejected(self):
        with pytest.raises(ValueError):
            empirical_kernel(IdentityBasis().fit(), [0.0, 0.0], [0.1, 0.1])

    @pytest.mark.parametrize("kind", SAMPLED_KINDS)
    def test_convergence_monotone_in_dimension(self, kind):
        # mean abs deviation from the Gaussian limit decreases monotonically
        # across D, averaged over 20 seeds (ell = 1, 100 random pairs)
        rng = np.random.default_rng(6)
        X = rng.uniform(-1, 1, (100, 2))
        Y = rng.uniform(-1, 1, (100, 2))
        target = np.exp(-((X - Y) ** 2).sum(-1) / 2.0)
        mads = []
        for dim in (256, 1024, 4096, 16384):
            devs = []
            for seed in range(20):
                basis = sample_basis(kind, dim, 1.0, seed)
                bx, by = basis.transform(X), basis.transform(Y)
                k = basis.kernel_factor_ * np.einsum("ij,ij->i", bx, by)
                devs.append(np.abs(k - target).mean())
            mads.append(np.mean(devs))
        assert all(a > b for a, b in zip(mads, mads[1:])), mads

    def test_sparsity_ordering(self):
        pts = np.random.default_rng(7).uniform(-1, 1, (100, 2))
        frac = {}
        for kind in SAMPLED_KINDS:
            vals = np.abs(embed(sample_basis(kind, 1024, 4.0, 8), pts))
            frac[kind] = (vals < 1e-3).mean()
        assert frac["cossq"] >= frac["se"] >= frac["fourier"]


class TestMetamerSeparation:
    def test_rejects_equal_points(self):
        basis = sample_basis("fourier", 64, 1.0, 0)
        with pytest.raises(ValueError):
            metamer_separation(basis, [0.1, 0.1], [0.1, 0.1])

    def test_well_separated_pair(self):
        x = np.array([-0.4, 0.1])
        y = x + np.array([0.6, 0.8])  # unit distance
        for seed in range(5):
            basis = sample_basis("fourier", 4096, 10.0, seed)
            rho_mid, rho_x, rho_y = metamer_separation(basis, x, y)
            assert abs(rho_x - 1 / np.sqrt(2)) < 0.1
            assert abs(rho_y - 1 / np.sqrt(2)) < 0.1
            assert rho_mid < 0.2

    def test_small_inverse_length_restores_metamers(self):
        basis = sample_basis("fourier", 4096, 0.01, 0)
        rho_mid, _, _ = metamer_separation(basis, [-0.4, 0.1], [0.2, 0.9])
        assert rho_mid > 0.9


class TestBasisFile:
    @pytest.mark.parametrize("kind", SAMPLED_KINDS + ("identity",))
    def test_round_trip_bit_exact(self, kind, tmp_path):
        basis = sample_basis(kind, 48, 2.5, 11)
        path = tmp_path / "b.dkeb"
        save_basis_file(basis, path)
        back = load_basis_file(path)
        pts = np.random.default_rng(9).uniform(-1, 1, (20, 2))
        assert np.array_equal(basis.transform(pts), back.transform(pts))
        assert back.kernel_factor_ == basis.kernel_factor_

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.dkeb"
        p.write_bytes(b"NOPE" + bytes(28))
        with pytest.raises(FormatError) as exc:
            load_basis_file(p)
        assert exc.value.offset == 0

    def test_truncated_parameters(self, tmp_path):
        basis = sample_basis("fourier", 16, 1.0, 0)
        p = tmp_path / "t.dkeb"
        save_basis_file(basis, p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_basis_file(p)


class TestEstimatorInterface:
    def test_get_params_round_trip(self):
        basis = FourierBasis(dim=32, inverse_length=2.0, seed=5)
        params = basis.get_params()
        assert params == {"dim": 32, "inverse_length": 2.0, "seed": 5}
        clone = FourierBasis(**params).fit()
        assert np.array_equal(clone.projection_, basis.fit().projection_)

    def test_fit_transform(self):
        pts = np.random.default_rng(0).uniform(-1, 1, (10, 2))
        vals = SEBasis(dim=16, inverse_length=1.0, seed=2).fit_transform(pts)
        assert vals.shape == (10, 16)

    def test_cossq_calibration_near_unity(self):
        basis = CosSqBasis(dim=2048, inverse_length=2.0, seed=1).fit()
        pts = np.random.default_rng(3).uniform(-0.8, 0.8, (50, 2))
        self_corr = [empirical_kernel(basis, p, p) for p in pts]
        assert abs(np.mean(self_corr) - 1.0) < 0.15
