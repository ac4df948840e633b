"""Scattering setup, transmission time series and transmission-based invariants.

Array layout is ``(L_x + 1, L_y, 2[, inputs])``: column ``0`` is the lead,
columns ``1 .. L_x`` are the system. Row index ``j`` is the 1-based row
``y = j + 1``; input and output channels ``n, m`` are reported 1-based.
The x-shift wraps with modulus ``L_x + 1``, the y-shift with ``L_y`` and is
skipped in the lead column. After every step the lead column is read out
(spin ``+1`` transmitted, ``-1`` reflected) and erased.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .disorder import DisorderSpec
from .lattice import ANGLE_NAMES, CoinField, _bcast, _rotate
from .validation import ConvergenceWarning

__all__ = [
    "DEFAULT_T_MAX",
    "EnergyResolved",
    "ScalingTable",
    "ScatterGeometry",
    "TransmissionRecord",
    "averaged_transmission",
    "build_geometry",
    "invariant_from_transmission",
    "measure_transmission",
    "resolvent_oracle",
    "round_invariant",
    "scaling_sweep",
    "transmission_at_energy",
    "transmission_series",
]

log = logging.getLogger(__name__)

# size -> t_max giving >99% escape probability
DEFAULT_T_MAX = {(19, 30): 1000, (39, 60): 2000, (59, 90): 3000, (79, 120): 4000}
CUT_THETAS = {"A": (0.0, np.pi / 2), "B": (np.pi / 2, 0.0)}
CUT_WINDING = {"A": -1, "B": +1}


@dataclass
class ScatterGeometry:
    """System of ``L_x x L_y`` sites with a one-column lead and optional cut rows.

    ``cut_rows`` are 1-based row numbers. The default pair ``L_y/2, L_y/2 + 1``
    covers one even and one odd row, so the cut treats both sublattices alike.
    """

    L_x: int
    L_y: int
    cut: str = "none"
    cut_rows: tuple = ()

    def __post_init__(self):
        if self.L_x < 1 or self.L_y < 2 or self.L_y % 2:
            raise ValueError(f"need L_x >= 1 and even L_y >= 2, got L_x={self.L_x}, L_y={self.L_y}")
        if self.cut not in ("none", "A", "B"):
            raise ValueError(f"cut must be 'none', 'A' or 'B', got {self.cut!r}")
        if self.cut != "none" and not self.cut_rows:
            self.cut_rows = (self.L_y // 2, self.L_y // 2 + 1)
        if self.cut == "none":
            self.cut_rows = ()
        for row in self.cut_rows:
            if not 1 <= row <= self.L_y:
                raise ValueError(f"cut row {row} outside 1..{self.L_y}")
        self.cut_rows = tuple(int(r) for r in self.cut_rows)

    @property
    def extents(self) -> tuple:
        return (self.L_x + 1, self.L_y)


def build_geometry(L_x: int, L_y: int, cut: str, coins: CoinField, cut_rows: Sequence[int] = ()):
    """Geometry plus the full coin field with lead column and cut rows applied.

    ``coins`` covers the system only (shape ``(L_x, L_y)``). The lead column
    gets all-zero angles; cut rows get the reflecting thetas with
    ``alpha = beta = 0`` (their phase is left as generated).
    """
    geom = ScatterGeometry(int(L_x), int(L_y), cut, tuple(cut_rows))
    if coins.extents != (geom.L_x, geom.L_y):
        raise ValueError(f"coins must cover the system ({geom.L_x}, {geom.L_y}), got {coins.extents}")
    arrays = {}
    for name in ANGLE_NAMES:
        full = np.zeros(geom.extents)
        full[1:] = getattr(coins, name)
        arrays[name] = full
    if geom.cut != "none":
        rows = [r - 1 for r in geom.cut_rows]
        t1, t2 = CUT_THETAS[geom.cut]
        arrays["theta1"][1:, rows] = t1
        arrays["theta2"][1:, rows] = t2
        for name in ("alpha1", "alpha2", "beta1", "beta2"):
            arrays[name][1:, rows] = 0.0
    return geom, CoinField(**arrays)


def _scatter_step(up, dn, coins: CoinField):
    """One period on the lead+system torus; returns new ``(up, dn)``."""
    nb = up.ndim - 2
    up, dn = _rotate(coins.r1, up, dn, nb)
    up, dn = np.roll(up, 1, axis=0), np.roll(dn, -1, axis=0)
    up, dn = _rotate(coins.r2, up, dn, nb)
    lead_up, lead_dn = up[0].copy(), dn[0].copy()
    up, dn = np.roll(up, 1, axis=1), np.roll(dn, -1, axis=1)
    up[0], dn[0] = lead_up, lead_dn
    f = _bcast(coins.phase, nb)
    return f * up, f * dn


@dataclass
class TransmissionRecord:
    """Readout of the lead column for a set of input channels.

    ``t_series[t, m-1, k]`` is the transmitted amplitude into row ``m`` at
    time ``t`` for input ``inputs[k]`` (``t = 0`` is always zero).
    """

    L_x: int
    L_y: int
    t_max: int
    inputs: np.ndarray
    transmitted: np.ndarray
    reflected: np.ndarray
    residual: np.ndarray
    t_series: Optional[np.ndarray] = None
    r_series: Optional[np.ndarray] = None
    transmitted_by_output: Optional[np.ndarray] = None

    @property
    def absorbed(self) -> np.ndarray:
        return self.transmitted + self.reflected


def transmission_series(
    geom: ScatterGeometry,
    coins: CoinField,
    inputs: Optional[Sequence[int]] = None,
    t_max: int = 1000,
    keep_series: bool = True,
) -> TransmissionRecord:
    """Time-domain transmission and reflection amplitudes for the given inputs.

    ``coins`` must be the full field from :func:`build_geometry`. All inputs
    are evolved together as a batch. ``residual`` is the probability still in
    the system at ``t_max`` for each input.
    """
    if coins.extents != geom.extents:
        raise ValueError(f"coins must cover lead+system {geom.extents}, got {coins.extents}")
    inputs = np.arange(1, geom.L_y + 1) if inputs is None else np.asarray(inputs, dtype=int)
    if inputs.size == 0 or inputs.min() < 1 or inputs.max() > geom.L_y:
        raise ValueError(f"inputs must lie in 1..{geom.L_y}")
    k = len(inputs)
    shape = geom.extents + (k,)
    up = np.zeros(shape, dtype=complex)
    dn = np.zeros(shape, dtype=complex)
    up[0, inputs - 1, np.arange(k)] = 1.0
    tu, td = np.empty_like(up), np.empty_like(dn)
    r1, r2, ph = coins.r1, coins.r2, coins.phase
    trans = np.zeros(k)
    refl = np.zeros(k)
    by_output = np.zeros((geom.L_y, k))
    t_ser = np.zeros((t_max + 1, geom.L_y, k), dtype=complex) if keep_series else None
    r_ser = np.zeros((t_max + 1, geom.L_y, k), dtype=complex) if keep_series else None
    for t in range(1, t_max + 1):
        _kernels.scatter_step(up, dn, tu, td, r1, r2, ph)
        out_t, out_r = up[0], dn[0]
        pt = np.abs(out_t) ** 2
        by_output += pt
        trans += pt.sum(axis=0)
        refl += np.sum(np.abs(out_r) ** 2, axis=0)
        if keep_series:
            t_ser[t] = out_t
            r_ser[t] = out_r
        up[0] = 0.0
        dn[0] = 0.0
    residual = np.sum(np.abs(up) ** 2 + np.abs(dn) ** 2, axis=(0, 1))
    return TransmissionRecord(
        geom.L_x, geom.L_y, int(t_max), inputs, trans, refl, residual, t_ser, r_ser, by_output
    )


@dataclass
class EnergyResolved:
    """Quasienergy-resolved transmission on a grid of ``epsilon`` values."""

    epsilon: np.ndarray
    t_matrix: np.ndarray
    T: np.ndarray
    eigenvalues: Optional[np.ndarray] = None


def _fourier(series: np.ndarray, eps) -> np.ndarray:
    """``sum_t exp(i eps t) series[t]`` over ``t = 1 .. t_max``."""
    n = series.shape[0] - 1
    if eps is None:
        x = np.concatenate([series[n:n + 1], series[1:n]], axis=0)
        return n * np.fft.ifft(x, axis=0)
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    phases = np.exp(1j * np.outer(eps, np.arange(n + 1)))
    return np.tensordot(phases, series, axes=(1, 0))


def transmission_at_energy(record: TransmissionRecord, epsilon=None, eigenvalues: bool = True) -> EnergyResolved:
    """Transmission matrix and total transmission at given quasienergies.

    With ``epsilon=None`` the grid ``2 pi k / t_max`` is used (no padding).
    Transmission eigenvalues need every input channel.
    """
    if record.t_series is None:
        raise ValueError("record was built without keep_series")
    tm = _fourier(record.t_series, epsilon)
    eps = 2 * np.pi * np.arange(record.t_max) / record.t_max if epsilon is None else np.atleast_1d(epsilon)
    T = np.sum(np.abs(tm) ** 2, axis=(1, 2))
    ev = None
    if eigenvalues:
        if len(record.inputs) != record.L_y:
            raise ValueError("transmission eigenvalues need all input channels")
        order = np.argsort(record.inputs)
        tsq = tm[:, :, order]
        ev = np.linalg.eigvalsh(np.conj(np.swapaxes(tsq, 1, 2)) @ tsq)
    return EnergyResolved(np.asarray(eps, float), tm, T, ev)


def averaged_transmission(record: TransmissionRecord, threshold: float = 0.99, warn: bool = True) -> dict:
    """Quasienergy-averaged total transmission, split by input-row parity.

    Keys ``total``, ``even`` and ``odd`` (1-based parity of the input ``n``)
    plus ``converged``: whether every channel has escaped with probability
    at least ``threshold``.
    """
    even = record.inputs % 2 == 0
    converged = bool(np.all(record.absorbed >= threshold))
    if warn and not converged:
        warnings.warn(
            f"min escaped probability {record.absorbed.min():.4f} below {threshold}; increase t_max",
            ConvergenceWarning,
            stacklevel=2,
        )
    return {
        "total": float(record.transmitted.sum()),
        "even": float(record.transmitted[even].sum()),
        "odd": float(record.transmitted[~even].sum()),
        "converged": converged,
        "min_absorbed": float(record.absorbed.min()),
    }


def invariant_from_transmission(T_A: float, T_B: float) -> float:
    """Signed half-sum ``sgn(T_A - T_B) (T_A + T_B) / 2``."""
    if T_A < 0 or T_B < 0:
        raise ValueError("transmissions must be nonnegative")
    return float(np.sign(T_A - T_B) * (T_A + T_B) / 2.0)


def round_invariant(estimate: float, tol: float = 0.2):
    """Nearest integer and whether the estimate is within ``tol`` of it."""
    nearest = int(np.rint(estimate))
    return nearest, abs(estimate - nearest) <= tol


def _dense_scatter_operator(coins: CoinField, cap: int) -> np.ndarray:
    dim = 2 * coins.extents[0] * coins.extents[1]
    if dim > cap:
        raise ValueError(f"state dimension {dim} exceeds dense cap {cap}")
    eye = np.eye(dim, dtype=complex).reshape(coins.extents + (2, dim))
    up, dn = _scatter_step(eye[:, :, 0], eye[:, :, 1], coins)
    return np.stack((up, dn), axis=2).reshape(dim, dim)


def resolvent_oracle(geom: ScatterGeometry, coins: CoinField, epsilon: float, cap: int = 4096):
    """Exact ``t(eps), r(eps)`` by a dense solve of the summed geometric series.

    Returns ``(t, r, cond)`` with ``t[m-1, n-1]`` and the condition number
    of ``1 - exp(i eps) P_sys U``.
    """
    U = _dense_scatter_operator(coins, cap)
    dim = U.shape[0]
    L1, L2 = geom.extents
    x = np.repeat(np.arange(L1), L2 * 2)
    proj = (x >= 1).astype(float)
    A = np.eye(dim) - np.exp(1j * epsilon) * proj[:, None] * U
    rows = np.arange(L2)
    inp = (0 * L2 + rows) * 2
    rhs = np.zeros((dim, L2), dtype=complex)
    rhs[inp, rows] = 1.0
    sol = U @ np.linalg.solve(A, rhs)
    cond = float(np.linalg.cond(A))
    t = np.exp(1j * epsilon) * sol[(0 * L2 + rows) * 2]
    r = np.exp(1j * epsilon) * sol[(0 * L2 + rows) * 2 + 1]
    return t, r, cond


def measure_transmission(
    spec: DisorderSpec, L_x: int, L_y: int, cut: str = "none", t_max: Optional[int] = None,
    inputs=None, keep_series: bool = False, warn: bool = True,
) -> dict:
    """Generate coins for ``spec``, run the scattering setup and average."""
    t_max = DEFAULT_T_MAX.get((L_x, L_y), 50 * (L_x + 1)) if t_max is None else int(t_max)
    geom, coins = build_geometry(L_x, L_y, cut, spec.generate((L_x, L_y)))
    record = transmission_series(geom, coins, inputs, t_max, keep_series=keep_series)
    return averaged_transmission(record, warn=warn)


@dataclass
class ScalingTable:
    """Disorder-averaged total transmission against system size."""

    sizes: list
    t_max: list
    T_mean: np.ndarray
    T_samples: np.ndarray
    slope: float
    classification: str
    rows: list = field(default_factory=list)


def scaling_sweep(
    spec: DisorderSpec,
    sizes: Sequence[tuple] = ((19, 30), (39, 60), (59, 90)),
    cut: str = "none",
    realizations: int = 10,
    t_max: Optional[Sequence[int]] = None,
    decay_threshold: float = 0.5,
) -> ScalingTable:
    """Finite-size scaling of the averaged total transmission.

    Seeds ``spec.seed + i`` for ``i < realizations``. The slope is that of
    ``ln T`` against ``L_x``; the trend counts as ``"insulating"`` when the
    fitted line drops by more than ``decay_threshold`` across the sizes.
    """
    sizes = [tuple(int(v) for v in s) for s in sizes]
    tmaxes = [DEFAULT_T_MAX.get(s, 50 * (s[0] + 1)) for s in sizes] if t_max is None else list(t_max)
    samples = np.zeros((len(sizes), realizations))
    rows = []
    for a, ((lx, ly), tm) in enumerate(zip(sizes, tmaxes)):
        for i in range(realizations):
            s = spec.with_seed(spec.seed + i)
            res = measure_transmission(s, lx, ly, cut, tm)
            samples[a, i] = res["total"]
            rows.append({"L_x": lx, "L_y": ly, "seed": s.seed, **res})
            log.info("size (%d, %d) seed %d: T=%.4g", lx, ly, s.seed, res["total"])
    mean = samples.mean(axis=1)
    Lx = np.array([s[0] for s in sizes], float)
    if len(sizes) > 1 and np.all(mean > 0):
        slope = float(np.polyfit(Lx, np.log(mean), 1)[0])
        drop = np.exp(slope * (Lx.max() - Lx.min()))
        label = "insulating" if drop < decay_threshold else "diffusive"
    else:
        slope, label = float("nan"), "undetermined"
    return ScalingTable(sizes, tmaxes, mean, samples, slope, label, rows)
