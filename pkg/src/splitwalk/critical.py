"""Critical exponent eta from eigenstate correlations, box counting and return probability.

All three estimators fit a straight line in log-log coordinates and map its
slope to ``eta``; the quoted confidence is three OLS standard errors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy import stats
from sklearn.base import BaseEstimator

from .disorder import DisorderSpec
from .evolve import run_point_source
from .lattice import CoinField, sparse_timestep
from .spectral import BLOCKS, _block_indices
from .validation import DegenerateFitError, check_array, check_is_fitted

__all__ = [
    "EigenstateDistribution",
    "EtaEstimate",
    "EtaFromAutocorrelation",
    "EtaFromFractal",
    "EtaFromReturn",
    "autocorrelation",
    "coarse_grain_moment",
    "dump_estimates_csv",
    "dump_series_csv",
    "eigenstate_distributions",
    "pair_distribution",
    "powers_of_two",
    "return_probabilities",
]


@dataclass
class EigenstateDistribution:
    """Cell probabilities of a degenerate eigenstate pair of the two-step operator."""

    p: np.ndarray
    epsilon: float
    seed: Optional[int] = None

    @property
    def extents(self) -> tuple:
        return self.p.shape


@dataclass
class EtaEstimate:
    """``eta`` with a 3-sigma half-width and the underlying fit."""

    method: str
    eta: float
    ci: float
    slope: float
    slope_err: float
    n_samples: int
    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def interval(self) -> tuple:
        return (self.eta - self.ci, self.eta + self.ci)


def powers_of_two(upper: int, lower: int = 1) -> np.ndarray:
    out, v = [], 1
    while v <= upper:
        if v >= lower:
            out.append(v)
        v *= 2
    return np.asarray(out, dtype=int)


def pair_distribution(psi_block: np.ndarray, U, extents, block: str = "square-ee") -> np.ndarray:
    """Cell distribution ``(|Psi|^2 + |U Psi|^2) / 2`` with both members normalized.

    ``psi_block`` lives on the sublattice block; ``U`` is the sparse
    single-step operator of the matching rotated variant.
    """
    dim = 2 * extents[0] * extents[1]
    psi = np.zeros(dim, dtype=complex)
    psi[_block_indices(extents, BLOCKS[block][1])] = psi_block
    psi /= np.linalg.norm(psi)
    partner = U @ psi
    partner /= np.linalg.norm(partner)
    w = 0.5 * (np.abs(psi) ** 2 + np.abs(partner) ** 2)
    return w.reshape(extents[0], extents[1], 2).sum(axis=2)


def eigenstate_distributions(
    spec: DisorderSpec,
    extents,
    count: int = 20,
    target: float = 0.0,
    block: str = "square-ee",
    coins: Optional[CoinField] = None,
    tol: float = 1e-10,
) -> list:
    """Distributions of the ``count`` eigenpairs with quasienergy nearest ``target``.

    Uses shift-invert Arnoldi on the sparse sublattice block of the
    two-step operator around ``exp(-2 i target)``.
    """
    if block not in BLOCKS:
        raise ValueError(f"block must be one of {tuple(BLOCKS)}, got {block!r}")
    coins = spec.generate(extents) if coins is None else coins
    extents = coins.extents
    if extents[0] % 2 or extents[1] % 2:
        raise ValueError(f"sublattice blocks need even extents, got {extents}")
    U = sparse_timestep(coins, BLOCKS[block][0])
    idx = _block_indices(extents, BLOCKS[block][1])
    U2 = (U @ U[:, idx])[idx].tocsc()
    if count >= U2.shape[0] - 1:
        raise ValueError(f"count {count} too large for block dimension {U2.shape[0]}")
    sigma = np.exp(-2j * target)
    try:
        vals, vecs = spla.eigs(U2, k=count, sigma=sigma, which="LM", tol=tol)
    except (spla.ArpackError, spla.ArpackNoConvergence, RuntimeError) as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    eps = -np.angle(vals) / 2
    out = []
    for j in np.argsort(np.abs(np.angle(vals / sigma))):
        out.append(EigenstateDistribution(pair_distribution(vecs[:, j], U, extents, block), float(eps[j]), spec.seed))
    return out


def _as_p(dist) -> np.ndarray:
    return np.asarray(getattr(dist, "p", dist), dtype=float)


def autocorrelation(dist, r) -> np.ndarray:
    """Cyclic correlation ``sum p(n+, n-) p(n+ + r, n-)`` along the first axis."""
    p = _as_p(dist)
    r = np.atleast_1d(np.asarray(r, dtype=int))
    if np.any(r < 0) or np.any(r >= p.shape[0]):
        raise ValueError(f"r must lie in [0, {p.shape[0]})")
    return np.array([np.sum(p * np.roll(p, -int(k), axis=0)) for k in r])


def coarse_grain_moment(dist, l: int) -> float:
    """Box-averaged second moment ``(l^2 / (L+ L-)) sum_boxes p_l^2``."""
    p = _as_p(dist)
    L1, L2 = p.shape
    l = int(l)
    if l < 1 or L1 % l or L2 % l:
        raise ValueError(f"box size {l} must divide both extents {p.shape}")
    boxes = p.reshape(L1 // l, l, L2 // l, l).sum(axis=(1, 3))
    return float(l * l / (L1 * L2) * np.sum(boxes**2))


def return_probabilities(spec: DisorderSpec, extents, times: Sequence[int], realizations: int = 1) -> np.ndarray:
    """Origin probability at ``times`` for seeds ``spec.seed + i``; shape ``(realizations, len(times))``."""
    times = np.asarray(times, dtype=int)
    if np.any(times % 2):
        raise ValueError("the origin cell is only occupied at even times")
    out = np.empty((realizations, times.size))
    for i in range(realizations):
        run = run_point_source(spec.with_seed(spec.seed + i), extents, int(times.max()), snapshots=[], record_origin=True)
        out[i] = run.return_probability[times]
    return out


class _PowerLawEta(BaseEstimator):
    """Straight-line fit of log values against log grid, mapped to ``eta``.

    ``fit(X, grid)`` takes ``X`` of shape ``(n_samples, len(grid))``. With
    ``mean_of_logs`` the regression runs over every sample's log values (its
    slope equals that of the mean of logs); otherwise over the logs of the
    sample means.
    """

    method = ""
    _offset, _scale = 0.0, 1.0  # eta = offset + scale * slope

    def _window(self, grid, L):
        raise NotImplementedError

    def fit(self, X, grid, L: Optional[int] = None):
        X = check_array(X, "X", ndim=2, nonnegative=True)
        grid = np.asarray(grid, dtype=float)
        if grid.shape != (X.shape[1],):
            raise ValueError("grid length must match the number of columns of X")
        keep = self._window(grid, L)
        if keep.sum() < self.min_points:
            raise DegenerateFitError(f"{int(keep.sum())} grid points left after exclusions; need {self.min_points}")
        x = np.log(grid[keep])
        vals = X[:, keep]
        if np.any(vals <= 0):
            raise DegenerateFitError("nonpositive values inside the fit window")
        if self.mean_of_logs:
            y = np.log(vals)
            fit = stats.linregress(np.tile(x, y.shape[0]), y.ravel())
            log_mean = y.mean(axis=0)
        else:
            log_mean = np.log(vals.mean(axis=0))
            fit = stats.linregress(x, log_mean)
        self.slope_ = float(fit.slope)
        self.slope_err_ = float(fit.stderr)
        self.eta_ = float(self._offset + self._scale * fit.slope)
        self.ci_ = float(3 * abs(self._scale) * fit.stderr)
        self.grid_ = grid[keep]
        self.log_values_ = log_mean
        self.n_samples_ = X.shape[0]
        return self

    def predict(self, grid):
        """Fitted power law (up to the intercept-free scale) on ``grid``."""
        check_is_fitted(self, "slope_")
        x = np.log(np.asarray(grid, dtype=float))
        icpt = np.mean(self.log_values_ - self.slope_ * np.log(self.grid_))
        return np.exp(icpt + self.slope_ * x)

    def estimate(self) -> EtaEstimate:
        check_is_fitted(self, "eta_")
        return EtaEstimate(self.method, self.eta_, self.ci_, self.slope_, self.slope_err_, self.n_samples_,
                           self.grid_, self.log_values_)


class EtaFromAutocorrelation(_PowerLawEta):
    """``R(r) ~ r^-eta`` fit.

    Parameters
    ----------
    drop_smallest : int
        Number of smallest grid values discarded.
    max_fraction : float
        Values ``r > max_fraction * L`` are discarded (``L`` from ``fit``).
    min_points : int
    mean_of_logs : bool
    """

    method = "autocorrelation"
    _offset, _scale = 0.0, -1.0

    def __init__(self, drop_smallest=2, max_fraction=0.25, min_points=4, mean_of_logs=True):
        self.drop_smallest = drop_smallest
        self.max_fraction = max_fraction
        self.min_points = min_points
        self.mean_of_logs = mean_of_logs

    def _window(self, grid, L):
        keep = grid > 0
        if L is not None:
            keep &= grid <= self.max_fraction * L
        order = np.argsort(grid)
        keep[order[: self.drop_smallest]] = False
        return keep

    def fit_distributions(self, dists, r=None):
        p0 = _as_p(dists[0])
        L = p0.shape[0]
        r = powers_of_two(L // 2) if r is None else np.asarray(r, dtype=int)
        X = np.array([autocorrelation(d, r) for d in dists])
        return self.fit(X, r, L)


class EtaFromFractal(_PowerLawEta):
    """``<p^2(l)> ~ l^(4 - eta)`` fit over box sizes ``l``.

    Box sizes below ``min_box`` or above ``max_fraction * L`` are discarded.
    """

    method = "fractal"
    _offset, _scale = 4.0, -1.0

    def __init__(self, min_box=4, max_fraction=0.5, min_points=4, mean_of_logs=True):
        self.min_box = min_box
        self.max_fraction = max_fraction
        self.min_points = min_points
        self.mean_of_logs = mean_of_logs

    def _window(self, grid, L):
        keep = grid >= self.min_box
        if L is not None:
            keep &= grid <= self.max_fraction * L
        return keep

    def fit_distributions(self, dists, l=None):
        shape = _as_p(dists[0]).shape
        L = min(shape)
        if l is None:
            l = np.array([v for v in powers_of_two(L) if shape[0] % v == 0 and shape[1] % v == 0])
        X = np.array([[coarse_grain_moment(d, v) for v in l] for d in dists])
        return self.fit(X, l, L)


class EtaFromReturn(_PowerLawEta):
    """``p0(t) ~ t^(-1 + eta/2)`` fit over times in ``[t_min, t_max]``."""

    method = "return"
    _offset, _scale = 2.0, 2.0

    def __init__(self, t_min=16, t_max=None, min_points=4, mean_of_logs=True):
        self.t_min = t_min
        self.t_max = t_max
        self.min_points = min_points
        self.mean_of_logs = mean_of_logs

    def _window(self, grid, L):
        keep = grid >= self.t_min
        if self.t_max is not None:
            keep &= grid <= self.t_max
        return keep


def dump_series_csv(estimate: EtaEstimate, path, header: Sequence[str]) -> None:
    """Write ``grid, mean log value`` rows, e.g. ``header=("r", "lnR")``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for g, v in zip(estimate.grid, estimate.log_values):
            w.writerow([repr(float(g)), repr(float(v))])


def dump_estimates_csv(estimates: Sequence[EtaEstimate], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "eta", "ci", "slope", "slope_err", "n_samples"])
        for e in estimates:
            w.writerow([e.method, repr(e.eta), repr(e.ci), repr(e.slope), repr(e.slope_err), e.n_samples])
