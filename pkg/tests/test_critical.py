import numpy as np
import pytest

from splitwalk.critical import (
    EigenstateDistribution,
    EtaFromAutocorrelation,
    EtaFromFractal,
    EtaFromReturn,
    autocorrelation,
    coarse_grain_moment,
    dump_estimates_csv,
    dump_series_csv,
    eigenstate_distributions,
    pair_distribution,
    powers_of_two,
    return_probabilities,
)
from splitwalk.disorder import DisorderSpec
from splitwalk.evolve import classicalize
from splitwalk.lattice import sparse_timestep
from splitwalk.spectral import _block_indices
from splitwalk.validation import DegenerateFitError

ETA = 0.52


def test_powers_of_two():
    assert list(powers_of_two(40)) == [1, 2, 4, 8, 16, 32]
    assert list(powers_of_two(40, lower=4)) == [4, 8, 16, 32]


class TestAutocorrelation:
    def test_uniform(self):
        p = np.full((8, 8), 1 / 64)
        assert np.allclose(autocorrelation(p, [0, 1, 3]), 1 / 64)

    def test_zero_shift_is_ipr(self):
        p = np.random.default_rng(0).random((6, 6))
        p /= p.sum()
        assert np.isclose(autocorrelation(p, 0)[0], np.sum(p**2))

    def test_hand_3x3(self):
        p = np.array([[0.5, 0, 0], [0.25, 0, 0], [0, 0, 0.25]])
        # shift by one row: 0.5*0.25 + 0.25*0 + 0*0.5 on col 0; col 2: 0.25*0 pairs
        assert np.isclose(autocorrelation(p, 1)[0], 0.125)
        assert np.isclose(autocorrelation(p, 2)[0], 0.5 * 0 + 0.25 * 0.5 + 0)

    def test_symmetry(self):
        p = np.random.default_rng(1).random((10, 6))
        r = np.arange(1, 10)
        assert np.allclose(autocorrelation(p, r), autocorrelation(p, 10 - r))

    def test_range_check(self):
        with pytest.raises(ValueError):
            autocorrelation(np.ones((4, 4)), 4)


class TestCoarseGrain:
    def test_hand_4x4(self):
        p = np.zeros((4, 4))
        p[0, 0] = p[3, 3] = 0.5
        assert np.isclose(coarse_grain_moment(p, 1), 1 / 16 * 0.5)
        assert np.isclose(coarse_grain_moment(p, 2), 4 / 16 * 0.5)
        assert np.isclose(coarse_grain_moment(p, 4), 1.0)

    def test_uniform_scaling(self):
        p = np.full((16, 16), 1 / 256)
        for l in (1, 2, 4, 8, 16):
            assert np.isclose(coarse_grain_moment(p, l), l**4 / 256**2)

    def test_monotone(self):
        p = np.random.default_rng(2).random((16, 16))
        p /= p.sum()
        m = [coarse_grain_moment(p, l) for l in (1, 2, 4, 8, 16)]
        assert np.all(np.diff(m) > 0)

    def test_divisibility(self):
        with pytest.raises(ValueError):
            coarse_grain_moment(np.ones((6, 6)), 4)


class TestSyntheticRoundTrip:
    def test_autocorrelation(self):
        r = powers_of_two(64)
        X = np.vstack([3.0 * r**-ETA, 0.5 * r**-ETA])
        est = EtaFromAutocorrelation().fit(X, r, L=256).estimate()
        assert abs(est.eta - ETA) < 1e-3
        assert list(est.grid) == [4, 8, 16, 32, 64]

    def test_fractal(self):
        l = powers_of_two(128)
        X = np.vstack([l ** (4 - ETA) * 1e-3, l ** (4 - ETA) * 2e-3])
        est = EtaFromFractal().fit(X, l, L=128).estimate()
        assert abs(est.eta - ETA) < 1e-3
        assert est.grid.min() == 4 and est.grid.max() == 64

    def test_return(self):
        t = np.arange(2, 2049, 2)
        X = np.vstack([t ** (-1 + ETA / 2)] * 3)
        est = EtaFromReturn().fit(X, t).estimate()
        assert abs(est.eta - ETA) < 1e-3
        assert est.grid.min() == 16

    def test_noisy_ci_covers(self):
        rng = np.random.default_rng(3)
        r = powers_of_two(128)
        X = r**-ETA * np.exp(rng.normal(0, 0.2, size=(20, r.size)))
        est = EtaFromAutocorrelation().fit(X, r, L=512).estimate()
        lo, hi = est.interval()
        assert lo < ETA < hi

    def test_log_of_mean_option(self):
        r = powers_of_two(64)
        X = np.vstack([r**-ETA, 2 * r**-ETA])
        assert abs(EtaFromAutocorrelation(mean_of_logs=False).fit(X, r, L=256).eta_ - ETA) < 1e-3

    def test_too_few_points(self):
        r = powers_of_two(32)
        with pytest.raises(DegenerateFitError):
            EtaFromAutocorrelation().fit(np.atleast_2d(r**-0.5), r, L=64)

    def test_nonpositive(self):
        r = powers_of_two(64)
        X = np.atleast_2d(r**-0.5)
        X[0, 4] = 0
        with pytest.raises(DegenerateFitError):
            EtaFromAutocorrelation().fit(X, r, L=256)

    def test_predict(self):
        r = powers_of_two(64)
        m = EtaFromAutocorrelation().fit(np.atleast_2d(2 * r**-ETA), r, L=256)
        assert np.allclose(m.predict([8.0, 16.0]), 2 * np.array([8.0, 16.0]) ** -ETA)

    def test_csv(self, tmp_path):
        r = powers_of_two(64)
        est = EtaFromAutocorrelation().fit(np.atleast_2d(r**-ETA), r, L=256).estimate()
        dump_series_csv(est, tmp_path / "a.csv", ("r", "lnR"))
        dump_estimates_csv([est], tmp_path / "e.csv")
        assert (tmp_path / "a.csv").read_text().splitlines()[0] == "r,lnR"
        assert (tmp_path / "e.csv").read_text().splitlines()[1].startswith("autocorrelation,")


class TestEigenstates:
    def test_pair_distribution_and_energy(self):
        spec = DisorderSpec("phase", (0.25 * np.pi, 0.25 * np.pi), seed=1)
        dists = eigenstate_distributions(spec, (16, 16), count=4, target=0.3)
        assert len(dists) == 4
        for d in dists:
            assert isinstance(d, EigenstateDistribution)
            assert np.isclose(d.p.sum(), 1)
            assert np.all(d.p >= 0)
        gaps = [abs(np.angle(np.exp(2j * (d.epsilon - 0.3)))) for d in dists]
        assert gaps == sorted(gaps)

    def test_partner_lives_on_other_sublattice(self):
        coins = DisorderSpec("haar", seed=2).generate((8, 8))
        U = sparse_timestep(coins, "square")
        psi = np.random.default_rng(0).normal(size=64) + 0j
        p = pair_distribution(psi, U, (8, 8))
        a, b = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        even = (a + b) % 2 == 0
        assert np.isclose(p[even].sum(), 0.5) and np.isclose(p[~even].sum(), 0.5)

    def test_eigenpair_property(self):
        coins = DisorderSpec("haar", seed=3).generate((8, 8))
        U = sparse_timestep(coins, "square")
        idx = _block_indices((8, 8), 0)
        U2 = (U @ U[:, idx])[idx].toarray()
        w, v = np.linalg.eig(U2)
        full = np.zeros(128, complex)
        full[idx] = v[:, 0]
        # U psi has eigenvalue w under U^2 as well
        phi = U @ full
        assert np.abs(U @ (U @ phi) - w[0] * phi).max() < 1e-10

    def test_validation(self):
        with pytest.raises(ValueError):
            eigenstate_distributions(DisorderSpec(), (7, 8))
        with pytest.raises(ValueError):
            eigenstate_distributions(DisorderSpec(), (4, 4), block="x")
        with pytest.raises(ValueError):
            eigenstate_distributions(DisorderSpec(), (4, 4), count=20)


class TestReturn:
    def test_origin_starts_at_one(self):
        out = return_probabilities(DisorderSpec("haar", seed=0), (21, 21), [0, 2, 4], realizations=2)
        assert out.shape == (2, 3)
        assert np.all(out[:, 0] == 1)

    def test_odd_times_rejected(self):
        with pytest.raises(ValueError):
            return_probabilities(DisorderSpec(), (5, 5), [1])

    def test_stochastic_limit_is_diffusive(self):
        # classical diffusion gives p0 ~ 1/t, i.e. eta near 0
        spec = DisorderSpec("phase", (0.25 * np.pi, 0.25 * np.pi))
        run = classicalize(spec, (201, 201), 256, snapshots=[], record_origin=True)
        t = np.arange(2, 257, 2)
        est = EtaFromReturn().fit(np.atleast_2d(run.return_probability[t]), t).estimate()
        assert abs(est.eta) < 0.05
