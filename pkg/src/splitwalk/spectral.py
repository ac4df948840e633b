"""Sublattice blocks of the two-step operator and level-spacing statistics.

In the rotated basis one period flips the checkerboard parity of the cell
``(n_plus + n_minus) mod 2``, so the two-step operator splits into two
blocks of dimension ``N = L_plus * L_minus``. Block names follow the
original-lattice parity of the occupied sites: the square variant lives on
``(e,e)``/``(o,o)`` sites, the circle variant on ``(e,o)``/``(o,e)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy import optimize, special, stats
from sklearn.base import BaseEstimator

from .lattice import CoinField, sparse_timestep
from .validation import DegenerateFitError, check_array, check_is_fitted

__all__ = [
    "BLOCKS",
    "SpacingClassifier",
    "SpacingEnsemble",
    "TailFit",
    "block_eigenvalues",
    "build_u2_block",
    "classify_statistics",
    "compare_ensembles",
    "dump_spacings_csv",
    "ks_distances",
    "reference_cdf",
    "reference_pdf",
    "sample_reference",
    "spacings_from_block",
    "tail_analysis",
]

# block name -> (rotated variant, cell checkerboard parity)
BLOCKS = {
    "square-ee": ("square", 0),
    "square-oo": ("square", 1),
    "circle-eo": ("circle", 0),
    "circle-oe": ("circle", 1),
}
DEFAULT_BLOCK_CAP = 8192
_A_GUE = 4 / np.pi


def _block_indices(extents, parity: int) -> np.ndarray:
    a, b = np.meshgrid(np.arange(extents[0]), np.arange(extents[1]), indexing="ij")
    cells = np.flatnonzero(((a + b) % 2 == parity).ravel())
    return np.stack((2 * cells, 2 * cells + 1), axis=1).ravel()


def build_u2_block(coins: CoinField, block: str = "square-ee", cap: int = DEFAULT_BLOCK_CAP) -> np.ndarray:
    """Dense two-step operator restricted to one checkerboard sublattice.

    Both extents must be even so the checkerboard is consistent on the
    torus. Raises ``ValueError`` when ``L_plus * L_minus`` exceeds ``cap``.
    """
    if block not in BLOCKS:
        raise ValueError(f"block must be one of {tuple(BLOCKS)}, got {block!r}")
    L1, L2 = coins.extents
    if L1 % 2 or L2 % 2:
        raise ValueError(f"sublattice blocks need even extents, got {coins.extents}")
    if L1 * L2 > cap:
        raise ValueError(f"block dimension {L1 * L2} exceeds cap {cap}")
    variant, parity = BLOCKS[block]
    U = sparse_timestep(coins, variant)
    idx = _block_indices(coins.extents, parity)
    half = U[:, idx]
    return (U @ half)[idx].toarray()


def block_eigenvalues(block: np.ndarray) -> np.ndarray:
    """General complex eigenvalues; the input array is overwritten."""
    return scipy.linalg.eigvals(block, overwrite_a=True, check_finite=False)


@dataclass
class SpacingEnsemble:
    """Normalized quasienergy spacings of one block (or a pooled set)."""

    s: np.ndarray
    block: str
    N: int
    epsilon: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.s)

    def histogram(self, bins: int = 50, upper: float = 4.0):
        return np.histogram(self.s, bins=bins, range=(0.0, upper))


def spacings_from_block(eigenvalues, block: str = "square-ee", tol: float = 1e-8) -> SpacingEnsemble:
    """Fold quasienergies to ``[0, pi)``, sort, and normalize spacings by ``N/pi``.

    The wrap-around spacing is included, so the raw spacings sum to ``pi``.
    """
    lam = np.asarray(eigenvalues, dtype=complex).ravel()
    if lam.size < 2:
        raise ValueError("need at least two eigenvalues")
    dev = np.max(np.abs(np.abs(lam) - 1))
    if dev > tol:
        raise ValueError(f"eigenvalues deviate from the unit circle by {dev:.2e}")
    eps = np.sort(np.mod(-np.angle(lam) / 2, np.pi))
    n = eps.size
    delta = np.mod(np.roll(eps, -1) - eps, np.pi)
    # a single level, or exact degeneracy at the wrap, folds to 0 rather than pi
    return SpacingEnsemble(delta * n / np.pi, block, n, eps)


def reference_pdf(kind: str, s) -> np.ndarray:
    """Poisson ``exp(-s)`` or GUE ``(32/pi^2) s^2 exp(-4 s^2 / pi)``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("spacings must be nonnegative")
    if kind == "poisson":
        return np.exp(-s)
    if kind == "gue":
        return 32 / np.pi**2 * s**2 * np.exp(-_A_GUE * s**2)
    raise ValueError(f"kind must be 'poisson' or 'gue', got {kind!r}")


def reference_cdf(kind: str, s) -> np.ndarray:
    s = np.clip(np.asarray(s, dtype=float), 0, None)
    if kind == "poisson":
        return -np.expm1(-s)
    if kind == "gue":
        a = _A_GUE
        return 32 / np.pi**2 * (
            np.sqrt(np.pi) / (4 * a**1.5) * special.erf(np.sqrt(a) * s) - s * np.exp(-a * s**2) / (2 * a)
        )
    raise ValueError(f"kind must be 'poisson' or 'gue', got {kind!r}")


def sample_reference(kind: str, size: int, rng=None) -> np.ndarray:
    """Exact draws from either reference law."""
    rng = np.random.default_rng(rng)
    if kind == "poisson":
        return rng.exponential(size=size)
    if kind == "gue":
        # s^2 exp(-a s^2) is a scaled chi distribution with 3 degrees of freedom
        return stats.chi.rvs(3, size=size, random_state=rng) / np.sqrt(2 * _A_GUE)
    raise ValueError(f"kind must be 'poisson' or 'gue', got {kind!r}")


def ks_distances(s) -> dict:
    s = check_array(s, "s", ndim=1, nonnegative=True)
    return {kind: float(stats.kstest(s, lambda x, k=kind: reference_cdf(k, x)).statistic) for kind in ("poisson", "gue")}


class SpacingClassifier(BaseEstimator):
    """Label a spacing sample by its nearer reference law in KS distance.

    Parameters
    ----------
    margin : float
        Distances closer than this give ``"ambiguous"``.
    min_size : int
        Smallest sample accepted by ``fit``.

    Attributes
    ----------
    ks_ : dict
        KS distance to ``"poisson"`` and ``"gue"``.
    label_ : str
    """

    def __init__(self, margin: float = 0.02, min_size: int = 500):
        self.margin = margin
        self.min_size = min_size

    def fit(self, s, y=None):
        s = check_array(getattr(s, "s", s), "s", ndim=1, nonnegative=True)
        if s.size < self.min_size:
            raise ValueError(f"need at least {self.min_size} spacings, got {s.size}")
        self.ks_ = ks_distances(s)
        gap = self.ks_["poisson"] - self.ks_["gue"]
        if abs(gap) < self.margin:
            self.label_ = "ambiguous"
        else:
            self.label_ = "gue" if gap > 0 else "poisson"
        self.n_samples_ = s.size
        return self

    def predict(self, X=None):
        check_is_fitted(self, "label_")
        return self.label_


def classify_statistics(ensemble, margin: float = 0.02, min_size: int = 500):
    """Return ``(label, ks)`` for a :class:`SpacingEnsemble` or raw spacings."""
    clf = SpacingClassifier(margin=margin, min_size=min_size).fit(ensemble)
    return clf.label_, clf.ks_


def compare_ensembles(a, b) -> float:
    """Two-sample KS p-value between two spacing samples."""
    return float(stats.ks_2samp(getattr(a, "s", a), getattr(b, "s", b)).pvalue)


@dataclass
class TailFit:
    """Exponential fit to the spacing tail above ``s_min``.

    ``rate`` and ``intercept`` come from a log-linear fit of the empirical
    survival function. ``curvature`` is ``-c`` for the best tail density
    ``exp(-b x - c x^2)`` in the excess ``x = s - s_min`` and ``lr`` the
    likelihood-ratio statistic against ``c = 0``. A tail is rejected as
    exponential when ``lr`` exceeds ``lr_threshold`` with ``c > 0``.
    """

    rate: float
    intercept: float
    r2: float
    curvature: float
    lr: float
    n_tail: int
    exponential: bool


def _gauss_tail_nll(params, x):
    b, log_c = params
    c = np.exp(log_c)
    rc = np.sqrt(c)
    # normalizer of exp(-b x - c x^2) on [0, inf), written with erfcx for stability
    log_z = 0.5 * np.log(np.pi) - np.log(2 * rc) + np.log(special.erfcx(b / (2 * rc)))
    return float(np.sum(b * x + c * x**2) + x.size * log_z)


def tail_analysis(ensemble, s_min: float = 2.5, min_samples: int = 50, lr_threshold: float = 9.0) -> TailFit:
    """Survival-function fit on ``s > s_min`` plus a curvature test.

    The curvature test compares maximum likelihoods of an exponential
    and an exponential-times-Gaussian tail; ``lr_threshold = 9`` is
    roughly a 3 sigma rejection.
    """
    s = np.sort(check_array(getattr(ensemble, "s", ensemble), "s", ndim=1, nonnegative=True))
    n = s.size
    tail = s[s > s_min]
    if tail.size < min_samples:
        raise DegenerateFitError(f"only {tail.size} spacings above s={s_min}; need {min_samples}")
    survival = 1.0 - np.arange(1, n + 1) / n
    # the last few order statistics carry almost no information on ln S
    keep = (s > s_min) & (survival * n >= min(10, min_samples))
    lin = stats.linregress(s[keep], np.log(survival[keep]))

    x = tail - s_min
    mean = x.mean()
    nll_exp = x.size * (1 + np.log(mean))
    best = None
    for log_c in (-4.0, -1.0, 1.0, 3.0):
        res = optimize.minimize(_gauss_tail_nll, (1 / mean, log_c), args=(x,), method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    lr = max(0.0, 2 * (nll_exp - best.fun))
    curvature = -float(np.exp(best.x[1]))
    exponential = lr <= lr_threshold
    return TailFit(float(-lin.slope), float(lin.intercept), float(lin.rvalue**2), curvature, float(lr), int(x.size), bool(exponential))


def dump_spacings_csv(ensemble: SpacingEnsemble, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s"])
        for v in ensemble.s:
            w.writerow([repr(float(v))])
