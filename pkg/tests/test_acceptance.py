"""Acceptance suite: twelve end-to-end checks at their stated tolerances.

Each test prints one ``PASS``/``FAIL`` line. Run all of them with::

    pytest tests/test_acceptance.py -v

or directly with ``python tests/test_acceptance.py``. The whole suite takes
roughly 40 minutes on one core.
"""

import functools
import sys
import time

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from splitwalk.critical import (
    EtaFromAutocorrelation,
    EtaFromFractal,
    EtaFromReturn,
    eigenstate_distributions,
    powers_of_two,
    return_probabilities,
)
from splitwalk.disorder import APPENDIX_SET_A, DisorderSpec, clean_invariant
from splitwalk.evolve import (
    average_over_disorder,
    classicalize,
    fit_diffusive,
    fit_localized,
    geometric_snapshots,
    variance_series,
)
from splitwalk.lattice import (
    BoundaryCondition,
    SpinorField,
    apply_timestep,
    dense_build,
    sublattice_conjugate,
)
from splitwalk.scatter import (
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
from splitwalk.spectral import block_eigenvalues, build_u2_block, classify_statistics, spacings_from_block

PI = np.pi
SQRT2 = np.sqrt(2.0)
HAAR_EXTENTS = (301, 301)
HAAR_T = 1024


@pytest.fixture
def report(capsys):
    """Print one verdict line outside pytest's capture, then assert it."""

    def _report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return _report


def matched_distance(a, b) -> float:
    """Largest distance after an optimal one-to-one pairing of two multisets."""
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def random_state(extents, rng):
    a = rng.normal(size=tuple(extents) + (2,)) + 1j * rng.normal(size=tuple(extents) + (2,))
    return SpinorField(a / np.linalg.norm(a))


# --- shared long runs ---------------------------------------------------------


@functools.lru_cache(maxsize=None)
def haar_average(mode: str, realizations: int):
    specs = [DisorderSpec("haar", seed=1000 + i) for i in range(realizations)]
    snaps = geometric_snapshots(HAAR_T)
    if mode == "quantum":
        return average_over_disorder(specs, HAAR_EXTENTS, HAAR_T, snaps)

    def runner(spec, extents, t_max, snapshots):
        return classicalize(spec, extents, t_max, snapshots, mode=mode)

    return average_over_disorder(specs, HAAR_EXTENTS, HAAR_T, snaps, runner=runner)


def haar_diffusion(mode: str, realizations: int):
    dist = haar_average(mode, realizations)[-1]
    assert dist.t == HAAR_T
    return fit_diffusive(dist, core_radius=10 * SQRT2)


# --- criteria -----------------------------------------------------------------


def test_01_unitarity_locality_sublattice(report):
    rng = np.random.default_rng(1)
    norm_err = gamma_err = 0.0
    local = True
    for seed in range(5):
        coins = DisorderSpec("haar", seed=seed).generate((16, 16))
        state = random_state((16, 16), rng)
        for _ in range(10):
            nxt = apply_timestep(state, coins)
            norm_err = max(norm_err, abs(nxt.norm2() - 1))
            lhs = sublattice_conjugate(apply_timestep(sublattice_conjugate(state), coins)).amplitudes
            gamma_err = max(gamma_err, float(np.abs(lhs + nxt.amplitudes).max()))
            state = nxt
        point = SpinorField.delta((16, 16), (8, 8), +1)
        for t in range(1, 6):
            point = apply_timestep(point, coins)
            x, y = point.coordinates()
            local &= bool(np.all(point.probability()[(np.abs(x - 8) > t) | (np.abs(y - 8) > t)] == 0))
    lam = np.linalg.eigvals(dense_build(DisorderSpec("haar", seed=7).generate((4, 4))))
    pair_err = matched_distance(lam, -lam)
    ok = norm_err < 1e-12 and gamma_err < 1e-12 and pair_err < 1e-10 and local
    report(1, ok, f"norm {norm_err:.1e}, Gamma U Gamma + U {gamma_err:.1e}, pairing {pair_err:.1e}, local {local}")


def test_02_gauge_invariance(report):
    coins = DisorderSpec("haar", seed=3).generate((8, 8))
    const = lambda v: np.full((8, 8), float(v))
    zeroed = coins.replace(**{k: const(0.0) for k in ("alpha1", "alpha2", "beta1", "beta2")})

    # torus: constants with (alpha2 + beta1) L and (alpha1 + beta2) L in 2 pi Z
    torus = zeroed.replace(alpha1=const(0.25 * PI), alpha2=const(0.4 * PI), beta1=const(0.1 * PI), beta2=const(0.5 * PI))
    torus_err = max(
        matched_distance(block_eigenvalues(build_u2_block(zeroed, b)), block_eigenvalues(build_u2_block(torus, b)))
        for b in ("square-ee", "circle-eo")
    )

    # absorbing frame: any constants are a pure diagonal similarity
    generic = zeroed.replace(alpha1=const(0.25 * PI), alpha2=const(0.4 * PI), beta1=const(0.1 * PI), beta2=const(0.3 * PI))

    def open_u2(c):
        eye = np.eye(128, dtype=complex).reshape(8, 8, 2, 128)
        bc = BoundaryCondition.absorbing()
        once = apply_timestep(SpinorField(eye), c, bc)
        return apply_timestep(once, c, bc).amplitudes.reshape(128, 128)

    open_err = matched_distance(np.linalg.eigvals(open_u2(zeroed)), np.linalg.eigvals(open_u2(generic)))
    ok = torus_err < 1e-9 and open_err < 1e-9
    report(2, ok, f"torus (commensurate constants) {torus_err:.1e}, absorbing (generic constants) {open_err:.1e}")


def test_03_scattering_oracle(report):
    worst = 0.0
    for seed in range(5):
        geom, coins = build_geometry(3, 4, "none", DisorderSpec("haar", seed=seed).generate((3, 4)))
        rec = transmission_series(geom, coins, t_max=4096)
        for eps in np.linspace(-PI, PI, 7, endpoint=False) + 0.1:
            t_ref, _, _ = resolvent_oracle(geom, coins, eps)
            t_dft = transmission_at_energy(rec, eps, eigenvalues=False).t_matrix[0]
            worst = max(worst, float(np.abs(t_dft - t_ref).max()))
    report(3, worst < 1e-8, f"max |t_DFT - t_resolvent| = {worst:.1e} over 5 seeds x 7 energies")


def test_04_clean_invariant_map(report):
    # grid on u = theta1 + theta2, v = theta1 - theta2 (units of pi); critical
    # lines sit at integer u or v, so every point is at least 0.3 pi away
    consts = (0.25 * PI, 0.4 * PI, 0.1 * PI, 0.3 * PI)
    mismatches, worst = [], 0.0
    for u in (0.3, 0.4, 0.5, 0.6, 0.7):
        for v in (-0.7, -0.5, -0.3, 0.3, 0.5):
            t1, t2 = (u + v) / 2 * PI, (u - v) / 2 * PI
            spec = DisorderSpec("phase", (t1, t2) + consts, seed=1)
            T = {c: measure_transmission(spec, 19, 30, c, 1000, warn=False)["total"] for c in "AB"}
            nu = invariant_from_transmission(T["A"], T["B"])
            nearest, _ = round_invariant(nu)
            worst = max(worst, abs(nu - nearest))
            if nearest != clean_invariant(t1, t2):
                mismatches.append((round(t1 / PI, 3), round(t2 / PI, 3), round(nu, 3)))
    report(4, not mismatches, f"25 points, mismatches {mismatches}, max |nu - round(nu)| = {worst:.3f}")


def test_05_quantized_edge_transmission(report):
    spec = DisorderSpec("phase", (0.2 * PI, 0.4 * PI), seed=1)
    coins = spec.generate((29, 30))
    geom, full = build_geometry(29, 30, "B", coins)
    rec = transmission_series(geom, full, t_max=8192)
    res = averaged_transmission(rec, warn=False)
    ev = transmission_at_energy(rec).eigenvalues
    closed = float(np.mean(ev < 0.01))
    geom0, full0 = build_geometry(29, 30, "none", coins)
    no_cut = averaged_transmission(transmission_series(geom0, full0, t_max=8192, keep_series=False), warn=False)
    ok = abs(res["even"] - 1) <= 0.05 and abs(res["odd"] - 1) <= 0.05 and closed >= 0.9 and no_cut["total"] < 0.05
    report(5, ok, f"cut B T_even {res['even']:.4f}, T_odd {res['odd']:.4f}; closed channels {closed:.3f}; "
                  f"no-cut T {no_cut['total']:.4f}")


def test_06_finite_size_scaling(report):
    ratios = {}
    for t1 in (0.1, 0.3, 0.5):
        spec = DisorderSpec("phase", (t1 * PI, (0.6 - t1) * PI))
        table = scaling_sweep(spec, sizes=[(19, 30), (39, 60)], realizations=10)
        ratios[t1] = table.T_mean[0] / table.T_mean[1]
    ok = ratios[0.1] >= 3 and ratios[0.5] >= 3 and abs(1 / ratios[0.3] - 1) < 0.2
    report(6, ok, "T(19,30)/T(39,60): " + ", ".join(f"theta1={k}pi {v:.3g}" for k, v in ratios.items()))


@pytest.mark.parametrize(
    "name,spec,extents,expected",
    [
        ("localized", DisorderSpec("phase", (0.2 * PI, 0.4 * PI), seed=1), (48, 96), "poisson"),
        ("critical", DisorderSpec("phase", (0.2 * PI, 0.2 * PI), seed=1), (68, 68), "gue"),
        ("haar", DisorderSpec("haar", seed=1), (68, 68), "gue"),
    ],
)
def test_07_level_statistics(report, name, spec, extents, expected):
    ens = spacings_from_block(block_eigenvalues(build_u2_block(spec.generate(extents))))
    label, ks = classify_statistics(ens)
    mean_tol = 3 / np.sqrt(2 * ens.N)
    ok = label == expected and abs(ens.s.mean() - 1) <= mean_tol
    report(7, ok, f"{name} N={ens.N}: KS Poisson {ks['poisson']:.4f}, KS GUE {ks['gue']:.4f} -> {label}; "
                  f"mean s {ens.s.mean():.6f} (tol {mean_tol:.3f})")


def test_08_haar_diffusive_spread(report):
    snaps = haar_average("quantum", 20)
    series = variance_series(snaps)
    fit = haar_diffusion("quantum", 20)
    r2 = min(fit.goodness.values())
    ok = abs(series.exponent - 0.5) <= 0.05 and abs(series.prefactor - 1.4) <= 0.15 and r2 > 0.98
    report(8, ok, f"RMS exponent {series.exponent:.4f}, prefactor {series.prefactor:.4f}, Gaussian R2 {r2:.4f} "
                  f"(20 realizations, {HAAR_EXTENTS[0]}x{HAAR_EXTENTS[1]})")


def test_09_localization_signature(report):
    specs = [DisorderSpec("phase", (0.2 * PI, 0.4 * PI), seed=2000 + i) for i in range(20)]
    snaps = average_over_disorder(specs, (101, 203), 2000, snapshots=[500, 707, 1000, 1414, 2000])
    fit = fit_localized(snaps[-1])
    series = variance_series(snaps, t_min=500, t_max=2000)
    r2 = min(fit.goodness.values())
    zp, zm = fit.parameters["zeta_plus"], fit.parameters["zeta_minus"]
    ok = r2 > 0.98 and zm > zp and series.exponent < 0.15
    report(9, ok, f"zeta+ {zp:.3f}, zeta- {zm:.3f}, R2 {r2:.4f}, RMS exponent {series.exponent:.4f}")


def test_10_eta_concordance(report):
    # planted exponent round trips
    planted = 0.52
    r, l, t = powers_of_two(64), powers_of_two(128), np.arange(2, 2049, 2)
    trips = [
        EtaFromAutocorrelation().fit(np.atleast_2d(r ** -planted), r, 256).eta_,
        EtaFromFractal().fit(np.atleast_2d(l ** (4 - planted)), l, 128).eta_,
        EtaFromReturn().fit(np.atleast_2d(t ** (-1 + planted / 2)), t).eta_,
    ]
    trip_err = max(abs(e - planted) for e in trips)

    dists = []
    for i in range(5):
        dists += eigenstate_distributions(DisorderSpec("haar", seed=3000 + i), (128, 128), count=20)
    est = [
        EtaFromAutocorrelation().fit_distributions(dists).estimate(),
        EtaFromFractal().fit_distributions(dists).estimate(),
    ]
    times = powers_of_two(2048, lower=2)
    X = return_probabilities(DisorderSpec("haar", seed=4000), (161, 161), times, realizations=200)
    est.append(EtaFromReturn().fit(X, times).estimate())

    in_range = all(0.40 <= e.eta <= 0.65 for e in est)
    agree = all(
        abs(a.eta - b.eta) <= np.hypot(a.ci, b.ci) for i, a in enumerate(est) for b in est[i + 1:]
    )
    ok = in_range and agree and trip_err < 1e-3 and len(dists) == 100
    detail = ", ".join(f"{e.method} {e.eta:.3f}+-{e.ci:.3f}" for e in est)
    report(10, ok, f"{detail}; round-trip error {trip_err:.1e}")


def test_11_binary_criticality(report):
    a = APPENDIX_SET_A
    mirror = (a[0] - PI / 2, a[1] + PI / 2)
    grid = np.round(np.linspace(0, 1, 11), 10)
    no_cut, even, odd = [], [], []
    for p in grid:
        rows = {"none": [], "B": []}
        for seed in range(3):
            spec = DisorderSpec("binary", binary_params=a + mirror + (p,), seed=5000 + seed)
            for cut in rows:
                rows[cut].append(measure_transmission(spec, 39, 60, cut, 2000, warn=False))
        no_cut.append(np.mean([x["total"] for x in rows["none"]]))
        even.append(np.mean([x["even"] for x in rows["B"]]))
        odd.append(np.mean([x["odd"] for x in rows["B"]]))
    peak = float(grid[int(np.argmax(no_cut))])
    far = np.abs(grid - peak) >= 0.3 - 1e-9
    left, right = far & (grid < peak), far & (grid > peak)
    sub = np.array([even, odd])
    plateau_one = bool(np.all(np.abs(sub[:, left] - 1) <= 0.1))
    plateau_zero = bool(np.all(sub[:, right] <= 0.1))
    ok = abs(peak - 0.5) <= 0.1 and plateau_one and plateau_zero
    report(11, ok, f"no-cut peak at p_A={peak} (T={max(no_cut):.3f}); cut B per sublattice "
                   f"{np.round(sub[:, 0], 3).tolist()} at p_A=0 -> {np.round(sub[:, -1], 4).tolist()} at p_A=1; "
                   f"plateaus ~1 left {plateau_one}, ~0 right {plateau_zero}")


def test_12_classicalized_vs_quantum(report):
    fits = {
        "quantum": haar_diffusion("quantum", 20),
        "time_dependent": haar_diffusion("time_dependent", 10),
        "stochastic": haar_diffusion("stochastic", 20),
    }
    names = list(fits)
    worst = 0.0
    for i, x in enumerate(names):
        for y in names[i + 1:]:
            for key in ("D_plus", "D_minus"):
                dx, dy = fits[x].parameters[key], fits[y].parameters[key]
                worst = max(worst, abs(dx - dy) / min(dx, dy))
    detail = ", ".join(f"{k} D+ {f.parameters['D_plus']:.3f} D- {f.parameters['D_minus']:.3f}" for k, f in fits.items())
    report(12, worst <= 0.2, f"{detail}; max pairwise difference {100 * worst:.1f}%")


if __name__ == "__main__":
    start = time.time()
    code = pytest.main([__file__, "-v"])
    print(f"acceptance suite finished in {time.time() - start:.0f} s")
    sys.exit(code)
