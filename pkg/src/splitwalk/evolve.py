"""Point-source evolution, disorder averaging and spread fits.

Evolution runs in the square rotated basis with absorbing edges. Cell
``(n_plus, n_minus)`` sits at ``x_plus = sqrt(2) n_plus`` and
``x_minus = sqrt(2) n_minus`` in lattice units, so
``x**2 + y**2 = x_plus**2 + x_minus**2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator

from . import _kernels
from .disorder import DisorderSpec, dominant_axis
from .lattice import CoinField
from .validation import DegenerateFitError, check_extents, check_is_fitted

__all__ = [
    "DiffusiveEnvelope",
    "LocalizedEnvelope",
    "PointSourceRun",
    "PositionDistribution",
    "SpreadFit",
    "VarianceSeries",
    "average_over_disorder",
    "classicalize",
    "default_extents",
    "fit_diffusive",
    "fit_localized",
    "geometric_snapshots",
    "run_point_source",
    "variance_series",
]

log = logging.getLogger(__name__)
SQRT2 = np.sqrt(2.0)


@dataclass
class PositionDistribution:
    """Spin-summed probability per rotated cell at time ``t``."""

    probability: np.ndarray
    t: int
    origin: tuple
    realizations_averaged: int = 1
    p_leave: float = 0.0

    @property
    def extents(self) -> tuple:
        return self.probability.shape

    def cell_coordinates(self):
        n_plus = np.arange(self.extents[0]) - self.origin[0]
        n_minus = np.arange(self.extents[1]) - self.origin[1]
        return np.meshgrid(n_plus, n_minus, indexing="ij")

    def occupied_mask(self) -> np.ndarray:
        """Cells a square-started walker can occupy at time ``t``."""
        n_plus, n_minus = self.cell_coordinates()
        return (n_plus + n_minus - self.t) % 2 == 0

    @property
    def total(self) -> float:
        return float(self.probability.sum())

    def second_moment(self) -> float:
        """``<x**2 + y**2>`` in lattice units, normalized by the retained weight."""
        n_plus, n_minus = self.cell_coordinates()
        return float(np.sum(self.probability * 2.0 * (n_plus**2 + n_minus**2)) / self.total)

    def rms(self) -> float:
        return float(np.sqrt(self.second_moment()))

    def cut(self, axis: str, exclude_radius: float = 0.0, edge_margin: int = 2):
        """Occupied cells along ``x_minus = 0`` (``"plus"``) or ``x_plus = 0`` (``"minus"``).

        Returns the signed coordinate in lattice units and the probability.
        """
        p = self.probability
        if axis == "plus":
            line = p[:, self.origin[1]]
            n = np.arange(self.extents[0]) - self.origin[0]
        elif axis == "minus":
            line = p[self.origin[0], :]
            n = np.arange(self.extents[1]) - self.origin[1]
        else:
            raise ValueError(f"axis must be 'plus' or 'minus', got {axis!r}")
        keep = (n - self.t) % 2 == 0
        keep &= np.abs(n) * SQRT2 >= exclude_radius
        if edge_margin:
            keep[:edge_margin] = False
            keep[len(n) - edge_margin:] = False
        return n[keep] * SQRT2, line[keep]


@dataclass
class PointSourceRun:
    """Snapshots of one evolution plus boundary-loss bookkeeping."""

    distributions: list
    p_leave: float
    p_leave_series: np.ndarray
    return_probability: Optional[np.ndarray] = None


@dataclass
class SpreadFit:
    """Result of a localized or diffusive envelope fit."""

    model: str
    parameters: dict
    goodness: dict
    variance_measured: float
    variance_predicted: float
    t: int
    errors: dict = field(default_factory=dict)


@dataclass
class VarianceSeries:
    """RMS width versus time with a log-log power-law fit ``rms = prefactor * t**exponent``."""

    t: np.ndarray
    variance: np.ndarray
    rms: np.ndarray
    exponent: float
    exponent_err: float
    prefactor: float
    prefactor_err: float


def geometric_snapshots(t_max: int, ratio: int = 2) -> list:
    """``1, 2, 4, ...`` up to ``t_max``, always including ``t_max``."""
    out, t = [], 1
    while t < t_max:
        out.append(t)
        t *= ratio
    out.append(int(t_max))
    return out


def default_extents(thetas, size: int, aspect: float = 2.0) -> tuple:
    """Rectangular rotated region elongated along the predicted dominant axis."""
    axis = "isotropic" if thetas is None else dominant_axis(*thetas)
    size = int(size) | 1
    long = int(round(size * aspect)) | 1
    if axis == "diagonal":
        return (long, size)
    if axis == "antidiagonal":
        return (size, long)
    return (size, size)


class _RotatedEvolver:
    """Holds buffers for in-place evolution of one state."""

    def __init__(self, extents, classical: bool = False):
        self.extents = check_extents(extents)
        self.origin = (self.extents[0] // 2, self.extents[1] // 2)
        self.classical = classical
        self.up = np.zeros(self.extents, dtype=complex)
        self.dn = np.zeros(self.extents, dtype=complex)
        self.tu = np.empty_like(self.up)
        self.td = np.empty_like(self.up)
        self.up[self.origin] = 1.0
        self.lost = 0.0

    def set_coins(self, coins: CoinField):
        if coins.extents != self.extents:
            raise ValueError(f"coin extents {coins.extents} do not match region {self.extents}")
        if self.classical:
            self.r1 = _kernels.stochastic_entries(coins.theta1)
            self.r2 = _kernels.stochastic_entries(coins.theta2)
            self.ph = np.ones(self.extents, dtype=complex)
        else:
            self.r1, self.r2, self.ph = coins.r1, coins.r2, coins.phase

    def step(self):
        self.lost += _kernels.rotated_step(
            self.up, self.dn, self.tu, self.td, self.r1, self.r2, self.ph,
            _kernels.SQUARE, True, self.classical,
        )

    def probability(self) -> np.ndarray:
        if self.classical:
            return (self.up.real + self.dn.real).copy()
        return np.abs(self.up) ** 2 + np.abs(self.dn) ** 2

    def origin_probability(self) -> float:
        if self.classical:
            return float(self.up[self.origin].real + self.dn[self.origin].real)
        return float(abs(self.up[self.origin]) ** 2 + abs(self.dn[self.origin]) ** 2)


def _evolve(
    spec: DisorderSpec, extents, t_max: int, snapshots, classical=False, time_dependent=False, record_origin=False
) -> PointSourceRun:
    ev = _RotatedEvolver(extents, classical=classical)
    snaps = sorted(set(int(t) for t in (snapshots if snapshots is not None else geometric_snapshots(t_max))))
    if snaps and (snaps[0] < 0 or snaps[-1] > t_max):
        raise ValueError("snapshot times must lie in [0, t_max]")
    if not time_dependent:
        ev.set_coins(spec.generate(ev.extents))
    dists, leaves = [], []
    origin_series = np.empty(t_max + 1) if record_origin else None
    if record_origin:
        origin_series[0] = 1.0

    def snap(t):
        dists.append(PositionDistribution(ev.probability(), t, ev.origin, 1, ev.lost))
        leaves.append(ev.lost)

    if snaps and snaps[0] == 0:
        snap(0)
    k = 1 if snaps and snaps[0] == 0 else 0
    for t in range(1, t_max + 1):
        if time_dependent:
            ev.set_coins(spec.generate(ev.extents, step=t - 1))
        ev.step()
        if record_origin:
            origin_series[t] = ev.origin_probability()
        if k < len(snaps) and snaps[k] == t:
            snap(t)
            k += 1
    return PointSourceRun(dists, ev.lost, np.asarray(leaves), origin_series)


def run_point_source(
    spec: DisorderSpec, extents, t_max: int, snapshots: Optional[Sequence[int]] = None, record_origin: bool = False
) -> PointSourceRun:
    """Evolve ``|0, 0, +1>`` with absorbing edges and return distribution snapshots.

    ``p_leave`` is diagnostic only; it is never checked against a bound here.
    """
    return _evolve(spec, extents, int(t_max), snapshots, record_origin=record_origin)


def classicalize(
    spec: DisorderSpec,
    extents,
    t_max: int,
    snapshots: Optional[Sequence[int]] = None,
    mode: str = "stochastic",
    record_origin: bool = False,
) -> PointSourceRun:
    """Incoherent counterparts of the walk.

    ``mode="stochastic"`` evolves probabilities under the walk with every
    phase set to 1 and ``cos, sin`` replaced by ``cos**2, sin**2``;
    ``mode="time_dependent"`` evolves amplitudes with a fresh coin field
    drawn at every timestep.
    """
    if mode == "stochastic":
        return _evolve(spec, extents, int(t_max), snapshots, classical=True, record_origin=record_origin)
    if mode == "time_dependent":
        return _evolve(spec, extents, int(t_max), snapshots, time_dependent=True, record_origin=record_origin)
    raise ValueError(f"mode must be 'stochastic' or 'time_dependent', got {mode!r}")


def average_over_disorder(
    specs: Sequence[DisorderSpec], extents, t_max: int, snapshots=None, runner=run_point_source
) -> list:
    """Realization-averaged distributions at each snapshot time.

    Sums run in the order of ``specs`` so results are reproducible. Returns a
    list of :class:`PositionDistribution` (one per snapshot).
    """
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one disorder realization")
    base = specs[0]
    for s in specs[1:]:
        if s.with_seed(base.seed) != base:
            raise ValueError("realizations may differ only by seed")
    acc = None
    for s in specs:
        run = runner(s, extents, t_max, snapshots)
        if acc is None:
            acc = [[d.probability.copy(), d.p_leave] for d in run.distributions]
        else:
            for slot, d in zip(acc, run.distributions):
                slot[0] += d.probability
                slot[1] += d.p_leave
        log.debug("realization seed=%d p_leave=%.3g", s.seed, run.p_leave)
    n = len(specs)
    return [
        PositionDistribution(p / n, d.t, d.origin, n, leave / n)
        for (p, leave), d in zip(acc, run.distributions)
    ]


def variance_series(snapshots: Sequence[PositionDistribution], t_min: int = 1, t_max: Optional[int] = None) -> VarianceSeries:
    """Log-log fit of the RMS width against time over ``[t_min, t_max]``."""
    snaps = [d for d in snapshots if d.t >= max(t_min, 1) and (t_max is None or d.t <= t_max)]
    if len(snaps) < 4:
        raise DegenerateFitError(f"need at least 4 snapshots with t >= 1, got {len(snaps)}")
    t = np.array([d.t for d in snaps], dtype=float)
    var = np.array([d.second_moment() for d in snaps])
    rms = np.sqrt(var)
    fit = stats.linregress(np.log(t), np.log(rms))
    prefactor = float(np.exp(fit.intercept))
    return VarianceSeries(
        t=t, variance=var, rms=rms,
        exponent=float(fit.slope), exponent_err=float(fit.stderr),
        prefactor=prefactor, prefactor_err=float(prefactor * fit.intercept_stderr),
    )


def _line_fit(x, y, weights=None):
    """Least squares ``y = a + b x``; returns ``(a, b, r2, b_err)``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, float)
    A = np.column_stack([np.ones_like(x), x]) * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(A, y * np.sqrt(w), rcond=None)
    resid = y - (coef[0] + coef[1] * x)
    ybar = np.average(y, weights=w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    r2 = 1.0 - np.sum(w * resid**2) / ss_tot if ss_tot > 0 else 1.0
    dof = max(len(x) - 2, 1)
    cov = np.linalg.pinv(A.T @ A) * np.sum(w * resid**2) / dof
    return float(coef[0]), float(coef[1]), float(r2), float(np.sqrt(cov[1, 1]))


class _EnvelopeFit(BaseEstimator):
    """Shared machinery: pull the two cuts, fit a line per cut in log space."""

    min_points = 8

    def _usable(self, dist: PositionDistribution, axis: str):
        x, p = dist.cut(axis, exclude_radius=self.exclude_radius, edge_margin=self.edge_margin)
        ok = p > 0
        if self.floor is not None and np.any(ok):
            ok &= p >= self.floor * p[ok].max()
        x, p = x[ok], p[ok]
        if self.max_radius is not None:
            keep = np.abs(x) <= self.max_radius
            x, p = x[keep], p[keep]
        if len(x) < self.min_points:
            raise DegenerateFitError(f"only {len(x)} usable points on the {axis} cut (need {self.min_points})")
        return x, np.log(p), (p if self.weighted else None)

    def fit(self, dist: PositionDistribution, y=None):
        self.t_ = int(dist.t)
        self.lengths_, self.r2_, self.errors_ = {}, {}, {}
        for axis in ("plus", "minus"):
            x, logp, w = self._usable(dist, axis)
            _, slope, r2, err = _line_fit(self._abscissa(x), logp, w)
            self.lengths_[axis], self.errors_[axis] = self._length(slope, err)
            self.r2_[axis] = r2
        self.variance_measured_ = dist.second_moment()
        return self


class LocalizedEnvelope(_EnvelopeFit):
    """Fit ``p ~ exp(-sqrt((x+/z+)**2 + (x-/z-)**2))`` along the two cuts.

    On each cut the log-probability is linear in ``|x|`` with slope ``-1/zeta``.

    Parameters
    ----------
    exclude_radius : float
        Points closer than this to the origin (lattice units) are skipped.
    floor : float or None
        Points below ``floor * max`` on a cut are skipped.
    max_radius : float or None
        Points beyond this distance are skipped.
    edge_margin : int
        Cells next to the absorbing frame that are skipped.
    weighted : bool
        Weight points by their probability instead of uniformly.
    """

    def __init__(self, exclude_radius=4.0, floor=1e-13, max_radius=None, edge_margin=2, weighted=False):
        self.exclude_radius = exclude_radius
        self.floor = floor
        self.max_radius = max_radius
        self.edge_margin = edge_margin
        self.weighted = weighted

    @staticmethod
    def _abscissa(x):
        return np.abs(x)

    @staticmethod
    def _length(slope, err):
        if slope >= 0:
            raise DegenerateFitError("log-probability does not decay along the cut")
        return -1.0 / slope, err / slope**2

    def fit(self, dist, y=None):
        super().fit(dist)
        self.zeta_plus_, self.zeta_minus_ = self.lengths_["plus"], self.lengths_["minus"]
        self.variance_predicted_ = 3.0 * (self.zeta_plus_**2 + self.zeta_minus_**2)
        return self

    def predict(self, x_plus, x_minus):
        """Unnormalized envelope at the given rotated coordinates."""
        check_is_fitted(self, "zeta_plus_")
        return np.exp(-np.sqrt((np.asarray(x_plus) / self.zeta_plus_) ** 2 + (np.asarray(x_minus) / self.zeta_minus_) ** 2))


class DiffusiveEnvelope(_EnvelopeFit):
    """Fit ``p ~ exp(-x+**2 / (4 D+ t) - x-**2 / (4 D- t))`` along the two cuts.

    Parameters are as for :class:`LocalizedEnvelope`; ``core_radius`` (default
    10 lattice units) excludes the critical peak around the origin.
    """

    def __init__(self, core_radius=10.0, floor=1e-13, max_radius=None, edge_margin=2, weighted=False):
        self.core_radius = core_radius
        self.floor = floor
        self.max_radius = max_radius
        self.edge_margin = edge_margin
        self.weighted = weighted

    @property
    def exclude_radius(self):
        return self.core_radius

    def _abscissa(self, x):
        return np.asarray(x) ** 2 / (4.0 * self._t)

    @staticmethod
    def _length(slope, err):
        if slope >= 0:
            raise DegenerateFitError("log-probability does not decay along the cut")
        return -1.0 / slope, err / slope**2

    def fit(self, dist, y=None):
        if dist.t < 1:
            raise DegenerateFitError("diffusive fit needs t >= 1")
        self._t = dist.t
        super().fit(dist)
        self.D_plus_, self.D_minus_ = self.lengths_["plus"], self.lengths_["minus"]
        self.variance_predicted_ = 2.0 * (self.D_plus_ + self.D_minus_) * dist.t
        return self

    def predict(self, x_plus, x_minus):
        check_is_fitted(self, "D_plus_")
        t = self.t_
        return np.exp(-np.asarray(x_plus) ** 2 / (4 * self.D_plus_ * t) - np.asarray(x_minus) ** 2 / (4 * self.D_minus_ * t))


def _spread_fit(model, est, names) -> SpreadFit:
    return SpreadFit(
        model=model,
        parameters={names[0]: est.lengths_["plus"], names[1]: est.lengths_["minus"]},
        goodness={"r2_plus": est.r2_["plus"], "r2_minus": est.r2_["minus"]},
        variance_measured=est.variance_measured_,
        variance_predicted=est.variance_predicted_,
        t=est.t_,
        errors={names[0]: est.errors_["plus"], names[1]: est.errors_["minus"]},
    )


def fit_localized(dist: PositionDistribution, **params) -> SpreadFit:
    """Localization lengths ``zeta_plus, zeta_minus`` from the two cuts."""
    return _spread_fit("localized", LocalizedEnvelope(**params).fit(dist), ("zeta_plus", "zeta_minus"))


def fit_diffusive(dist: PositionDistribution, t: Optional[int] = None, **params) -> SpreadFit:
    """Diffusion coefficients ``D_plus, D_minus`` from the two cuts."""
    if t is not None and t != dist.t:
        dist = PositionDistribution(dist.probability, int(t), dist.origin, dist.realizations_averaged, dist.p_leave)
    return _spread_fit("diffusive", DiffusiveEnvelope(**params).fit(dist), ("D_plus", "D_minus"))
