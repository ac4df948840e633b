import warnings

import numpy as np
import pytest

from splitwalk.disorder import DisorderSpec
from splitwalk.lattice import CoinField
from splitwalk.scatter import (
    ScatterGeometry,
    _scatter_step,
    averaged_transmission,
    build_geometry,
    invariant_from_transmission,
    measure_transmission,
    resolvent_oracle,
    round_invariant,
    scaling_sweep,
    transmission_at_energy,
    transmission_series,
)
from splitwalk import _kernels
from splitwalk.validation import ConvergenceWarning


def phase_setup(L_x, L_y, cut="none", thetas=(0.3 * np.pi, 0.2 * np.pi), seed=0):
    spec = DisorderSpec("phase", thetas, seed=seed)
    return build_geometry(L_x, L_y, cut, spec.generate((L_x, L_y)))


class TestGeometry:
    def test_default_cut_rows(self):
        assert ScatterGeometry(5, 10, "A").cut_rows == (5, 6)
        assert ScatterGeometry(5, 10).cut_rows == ()

    @pytest.mark.parametrize("args", [(0, 4), (3, 5), (3, 1)])
    def test_bad_extents(self, args):
        with pytest.raises(ValueError):
            ScatterGeometry(*args)

    def test_bad_cut(self):
        with pytest.raises(ValueError):
            ScatterGeometry(3, 4, "C")
        with pytest.raises(ValueError):
            ScatterGeometry(3, 4, "A", (0, 1))

    def test_lead_and_cut_coins(self):
        geom, coins = phase_setup(4, 8, "B")
        assert coins.extents == (5, 8)
        assert np.all(coins.theta1[0] == 0) and np.all(coins.theta2[0] == 0)
        assert np.all(coins.theta1[1:, [3, 4]] == np.pi / 2)
        assert np.all(coins.theta2[1:, [3, 4]] == 0)
        assert np.all(coins.theta1[1:, 0] == 0.3 * np.pi)

    def test_coin_shape_checked(self):
        with pytest.raises(ValueError):
            build_geometry(4, 8, "none", CoinField.constant((5, 8)))


def test_compiled_step_matches_reference():
    geom, coins = phase_setup(5, 6, seed=3)
    rng = np.random.default_rng(0)
    up = rng.normal(size=(6, 6, 3)) + 1j * rng.normal(size=(6, 6, 3))
    dn = rng.normal(size=(6, 6, 3)) + 1j * rng.normal(size=(6, 6, 3))
    ref_up, ref_dn = _scatter_step(up, dn, coins)
    u, d = up.copy(), dn.copy()
    _kernels.scatter_step(u, d, np.empty_like(u), np.empty_like(d), coins.r1, coins.r2, coins.phase)
    assert np.abs(u - ref_up).max() < 1e-14 and np.abs(d - ref_dn).max() < 1e-14


@pytest.mark.parametrize("L_x,L_y", [(3, 8), (5, 6), (6, 4)])
def test_free_walk_single_spike(L_x, L_y):
    geom, coins = build_geometry(L_x, L_y, "none", CoinField.constant((L_x, L_y)))
    rec = transmission_series(geom, coins, t_max=3 * L_x + 5)
    assert np.allclose(rec.transmitted, 1) and np.allclose(rec.reflected, 0)
    t_hit, m, k = np.nonzero(np.abs(rec.t_series) > 1e-12)
    assert np.all(t_hit == L_x + 1)
    assert np.array_equal(m + 1, (rec.inputs[k] - 1 + L_x) % L_y + 1)
    assert np.allclose(np.abs(rec.t_series[t_hit, m, k]), 1)


def test_probability_bookkeeping():
    geom, coins = phase_setup(5, 8, seed=1)
    rec = transmission_series(geom, coins, t_max=40)
    assert np.allclose(rec.transmitted + rec.reflected + rec.residual, 1, atol=1e-12)
    assert np.allclose(rec.transmitted_by_output.sum(axis=0), rec.transmitted)


def test_subset_inputs_match_full_run():
    geom, coins = phase_setup(4, 6, seed=2)
    full = transmission_series(geom, coins, t_max=30)
    part = transmission_series(geom, coins, inputs=[5, 2], t_max=30)
    assert np.allclose(part.t_series[..., 0], full.t_series[..., 4])
    assert np.allclose(part.transmitted, full.transmitted[[4, 1]])
    with pytest.raises(ValueError):
        transmission_series(geom, coins, inputs=[7], t_max=3)


def test_fourier_matches_resolvent():
    geom, coins = phase_setup(5, 6, "A", seed=4)
    rec = transmission_series(geom, coins, t_max=4000)
    assert rec.residual.max() < 1e-25
    for eps in (0.0, 0.7, -2.1):
        t, r, cond = resolvent_oracle(geom, coins, eps)
        ft = transmission_at_energy(rec, eps, eigenvalues=False).t_matrix[0]
        fr = np.tensordot(np.exp(1j * eps * np.arange(4001)), rec.r_series, axes=(0, 0))
        assert np.abs(ft - t).max() < 1e-10
        assert np.abs(fr - r).max() < 1e-10
        # scattering matrix is unitary
        S = np.vstack([t, r])
        assert np.abs(S.conj().T @ S - np.eye(6)).max() < 1e-10


def test_energy_grid_average_equals_time_total():
    geom, coins = phase_setup(4, 6, seed=5)
    rec = transmission_series(geom, coins, t_max=512)
    er = transmission_at_energy(rec)
    assert len(er.epsilon) == 512
    assert np.isclose(er.T.mean(), rec.transmitted.sum())
    assert er.eigenvalues.shape == (512, 6)
    assert np.all(er.eigenvalues > -1e-12) and np.all(er.eigenvalues < 1 + 1e-12)
    assert np.allclose(er.eigenvalues.sum(axis=1), er.T)


def test_eigenvalues_need_all_inputs():
    geom, coins = phase_setup(4, 6)
    rec = transmission_series(geom, coins, inputs=[1], t_max=10)
    with pytest.raises(ValueError):
        transmission_at_energy(rec)
    rec = transmission_series(geom, coins, t_max=10, keep_series=False)
    with pytest.raises(ValueError):
        transmission_at_energy(rec, eigenvalues=False)


def test_convergence_warning():
    geom, coins = phase_setup(6, 8)
    rec = transmission_series(geom, coins, t_max=5)
    with pytest.warns(ConvergenceWarning):
        res = averaged_transmission(rec)
    assert not res["converged"]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        averaged_transmission(rec, warn=False)


def test_parity_split():
    geom, coins = phase_setup(4, 6, seed=6)
    res = averaged_transmission(transmission_series(geom, coins, t_max=50), warn=False)
    assert np.isclose(res["even"] + res["odd"], res["total"])


def test_clean_run_with_cut_converges():
    res = measure_transmission(DisorderSpec("fixed", (0.5 * np.pi, 0.0)), 9, 12, "B", t_max=400)
    assert res["converged"]


def test_invariant_helpers():
    assert invariant_from_transmission(2.0, 0.0) == 1.0
    assert invariant_from_transmission(0.0, 2.0) == -1.0
    assert invariant_from_transmission(1.0, 1.0) == 0.0
    assert round_invariant(0.85) == (1, True)
    assert round_invariant(0.7) == (1, False)
    with pytest.raises(ValueError):
        invariant_from_transmission(-1.0, 0.0)


def test_scaling_sweep_small():
    table = scaling_sweep(DisorderSpec("phase", (0.1 * np.pi, 0.4 * np.pi)), sizes=[(5, 8), (9, 14)],
                          realizations=2, t_max=[200, 400])
    assert table.T_samples.shape == (2, 2)
    assert len(table.rows) == 4
    assert table.classification in ("insulating", "diffusive")


def test_flat_band_reflects_everything():
    res = measure_transmission(DisorderSpec("fixed", (0.0, 0.5 * np.pi)), 5, 8, "none", 200)
    assert res["total"] < 1e-12 and res["min_absorbed"] > 1 - 1e-12


def test_eigenvalue_overshoot_shrinks_with_time():
    geom, coins = phase_setup(9, 10, "B", thetas=(0.2 * np.pi, 0.4 * np.pi), seed=1)
    overshoot = [transmission_at_energy(transmission_series(geom, coins, t_max=t)).eigenvalues.max() - 1
                 for t in (128, 256, 512, 1024)]
    assert np.all(np.diff(overshoot) < 0)
