"""Lattice state, coin/shift/phase operators and the composed timestep.

Two bases are supported:

``original``
    Amplitudes indexed by site ``(x, y)`` and spin, array shape
    ``(L_x, L_y, 2)``.
``square`` / ``circle``
    Rotated basis with two-site unit cells. Cell ``(a, b)`` holds the
    square site ``(a - b, a + b)`` and the circle site ``(a - b, a + b + 1)``.
    A walker started on a square (``x + y`` even) is on squares at integer
    times; the ``circle`` variant tracks walkers started on circles.

Spin axis order is ``(+1, -1)`` everywhere and trailing axes beyond the spin
axis are treated as a batch of independent states. Flattened vectors use a
cell-major, spin-minor layout: ``index = (i * L2 + j) * 2 + spin``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .validation import check_extents, check_finite

__all__ = [
    "ANGLE_NAMES",
    "BoundaryCondition",
    "CoinField",
    "SpinorField",
    "apply_timestep",
    "apply_timestep_rotated",
    "coin_matrix",
    "dense_build",
    "dump_field_csv",
    "is_chiral_symmetric",
    "lift_rotated_coins",
    "lift_rotated_state",
    "project_to_rotated",
    "sparse_timestep",
    "sublattice_conjugate",
]

ANGLE_NAMES = ("theta1", "theta2", "alpha1", "alpha2", "beta1", "beta2", "phi")
BASES = ("original", "square", "circle")
DEFAULT_DENSE_CAP = 16384


def coin_matrix(alpha: float, beta: float, theta: float) -> np.ndarray:
    """Return the U(2) rotation ``exp(-i b sz) exp(-i t sy) exp(-i a sz)``.

    Rows and columns follow the spin order ``(+1, -1)``.

    Examples
    --------
    >>> np.allclose(coin_matrix(0.0, 0.0, np.pi / 2), [[0, -1], [1, 0]])
    True
    """
    check_finite(alpha=alpha, beta=beta, theta=theta)
    c, s = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [np.exp(-1j * (alpha + beta)) * c, -np.exp(1j * (alpha - beta)) * s],
            [np.exp(-1j * (alpha - beta)) * s, np.exp(1j * (alpha + beta)) * c],
        ]
    )


def _coin_entries(alpha, beta, theta) -> np.ndarray:
    """Vectorized ``coin_matrix``: array of shape ``(2, 2, *alpha.shape)``."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty((2, 2) + np.shape(theta), dtype=complex)
    out[0, 0] = np.exp(-1j * (alpha + beta)) * c
    out[0, 1] = -np.exp(1j * (alpha - beta)) * s
    out[1, 0] = np.exp(-1j * (alpha - beta)) * s
    out[1, 1] = np.exp(1j * (alpha + beta)) * c
    return out


def _f64(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=float) for a in arrays)


@dataclass
class CoinField:
    """Per-site angle parameters of the walk (radians).

    In the rotated basis the arrays are indexed by unit cell: the first
    rotation and the phase act on the site the walker occupies at integer
    times, the second rotation on the other site of the cell it visits in
    between. Arrays are treated as read-only once the field is used.
    """

    theta1: np.ndarray
    theta2: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        shape = None
        for name in ANGLE_NAMES:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            setattr(self, name, arr)
        check_extents(shape)

    @classmethod
    def constant(cls, extents, **angles) -> "CoinField":
        """Spatially uniform field; unspecified angles are zero."""
        unknown = set(angles) - set(ANGLE_NAMES)
        if unknown:
            raise TypeError(f"unknown angle names: {sorted(unknown)}")
        extents = tuple(int(n) for n in extents)
        return cls(**{k: np.full(extents, float(angles.get(k, 0.0))) for k in ANGLE_NAMES})

    @property
    def extents(self) -> tuple:
        return self.theta1.shape

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ANGLE_NAMES}

    def replace(self, **arrays) -> "CoinField":
        """Copy with some angle arrays swapped out."""
        fields = {k: getattr(self, k).copy() for k in ANGLE_NAMES}
        fields.update(arrays)
        return CoinField(**fields)

    @cached_property
    def r1(self) -> np.ndarray:
        return _kernels.coin_entries(*_f64(self.alpha1, self.beta1, self.theta1))

    @cached_property
    def r2(self) -> np.ndarray:
        return _kernels.coin_entries(*_f64(self.alpha2, self.beta2, self.theta2))

    @cached_property
    def phase(self) -> np.ndarray:
        return np.exp(1j * self.phi)


@dataclass
class BoundaryCondition:
    """Boundary kind per axis plus the running absorbed probability.

    ``accumulated_loss`` is the only mutable part: every absorbing timestep
    adds the probability it removed, so with absorbing edges on all sides it
    equals ``1 - |psi|^2`` for a normalized initial state.
    """

    x: str = "periodic"
    y: str = "periodic"
    accumulated_loss: float = 0.0

    def __post_init__(self):
        for axis in (self.x, self.y):
            if axis not in ("periodic", "absorbing"):
                raise ValueError(f"boundary kind must be 'periodic' or 'absorbing', got {axis!r}")

    @classmethod
    def periodic(cls) -> "BoundaryCondition":
        return cls("periodic", "periodic")

    @classmethod
    def absorbing(cls) -> "BoundaryCondition":
        return cls("absorbing", "absorbing")

    @property
    def any_absorbing(self) -> bool:
        return "absorbing" in (self.x, self.y)


@dataclass
class SpinorField:
    """Two-component wavefunction on a finite rectangular region.

    ``origin`` is the array index of lattice coordinate (or cell) ``(0, 0)``.
    """

    amplitudes: np.ndarray
    basis: str = "original"
    origin: tuple = (0, 0)

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}, got {self.basis!r}")
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim < 3 or self.amplitudes.shape[2] != 2:
            raise ValueError("amplitudes must have shape (L1, L2, 2, *batch)")
        check_extents(self.amplitudes.shape[:2])
        self.origin = tuple(int(o) for o in self.origin)

    @classmethod
    def zeros(cls, extents, basis="original", origin=(0, 0), batch=()) -> "SpinorField":
        extents = check_extents(extents)
        return cls(np.zeros(extents + (2,) + tuple(batch), dtype=complex), basis, origin)

    @classmethod
    def delta(cls, extents, site=(0, 0), spin=+1, basis="original", origin=(0, 0)) -> "SpinorField":
        """Normalized state localized on one site (or cell) and spin."""
        field_ = cls.zeros(extents, basis, origin)
        field_.amplitudes[field_.index(site) + (_spin_index(spin),)] = 1.0
        return field_

    @property
    def extents(self) -> tuple:
        return self.amplitudes.shape[:2]

    def index(self, site) -> tuple:
        """Array index of a coordinate pair, wrapped into the region."""
        return tuple((int(c) + o) % n for c, o, n in zip(site, self.origin, self.extents))

    def amplitude(self, site, spin=+1):
        return self.amplitudes[self.index(site) + (_spin_index(spin),)]

    def norm2(self):
        """Squared norm (per batch member when batched)."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=(0, 1, 2))

    def probability(self) -> np.ndarray:
        """Spin-summed probability per site or cell."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=2)

    def coordinates(self):
        """Coordinate grids ``(c1, c2)`` of the array axes relative to the origin."""
        c1 = np.arange(self.extents[0]) - self.origin[0]
        c2 = np.arange(self.extents[1]) - self.origin[1]
        return np.meshgrid(c1, c2, indexing="ij")

    def copy(self) -> "SpinorField":
        return SpinorField(self.amplitudes.copy(), self.basis, self.origin)


def _spin_index(spin) -> int:
    if spin not in (1, -1):
        raise ValueError(f"spin must be +1 or -1, got {spin!r}")
    return 0 if spin == 1 else 1


def _bcast(arr: np.ndarray, nbatch: int) -> np.ndarray:
    return arr.reshape(arr.shape + (1,) * nbatch) if nbatch else arr


def _rotate(m: np.ndarray, up: np.ndarray, dn: np.ndarray, nbatch: int):
    a, b, c, d = (_bcast(m[i, j], nbatch) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    return a * up + b * dn, c * up + d * dn


def _check_coins(state: SpinorField, coins: CoinField):
    if coins.extents != state.extents:
        raise ValueError(f"coin extents {coins.extents} do not match state extents {state.extents}")


def _absorb(amps: np.ndarray, bc: BoundaryCondition) -> float:
    """Zero the outermost frame along absorbing axes; return removed weight."""
    removed = 0.0
    if bc.x == "absorbing":
        for sl in (0, -1):
            removed += float(np.sum(np.abs(amps[sl]) ** 2))
            amps[sl] = 0.0
    if bc.y == "absorbing":
        for sl in (0, -1):
            removed += float(np.sum(np.abs(amps[:, sl]) ** 2))
            amps[:, sl] = 0.0
    return removed


def apply_timestep(state: SpinorField, coins: CoinField, bc: Optional[BoundaryCondition] = None) -> SpinorField:
    """One period ``F S_y R_2 S_x R_1`` of the walk in the original basis.

    With absorbing axes the boundary frame is zeroed after the full step and
    the removed probability is added to ``bc.accumulated_loss``.
    """
    bc = BoundaryCondition.periodic() if bc is None else bc
    if state.basis != "original":
        raise ValueError("apply_timestep expects a state in the original basis")
    _check_coins(state, coins)
    nb = state.amplitudes.ndim - 3
    up, dn = state.amplitudes[:, :, 0], state.amplitudes[:, :, 1]
    up, dn = _rotate(coins.r1, up, dn, nb)
    up, dn = np.roll(up, 1, axis=0), np.roll(dn, -1, axis=0)
    up, dn = _rotate(coins.r2, up, dn, nb)
    up, dn = np.roll(up, 1, axis=1), np.roll(dn, -1, axis=1)
    f = _bcast(coins.phase, nb)
    out = np.stack((f * up, f * dn), axis=2)
    if bc.any_absorbing:
        bc.accumulated_loss += _absorb(out, bc)
    return SpinorField(out, "original", state.origin)


def apply_timestep_rotated(
    state: SpinorField, coins: CoinField, variant: str = "square", bc: Optional[BoundaryCondition] = None
) -> SpinorField:
    """One period of the walk in the rotated basis (square or circle variant)."""
    bc = BoundaryCondition.periodic() if bc is None else bc
    if variant not in ("square", "circle"):
        raise ValueError(f"variant must be 'square' or 'circle', got {variant!r}")
    if state.basis != variant:
        raise ValueError(f"state basis {state.basis!r} does not match variant {variant!r}")
    _check_coins(state, coins)
    nb = state.amplitudes.ndim - 3
    up, dn = state.amplitudes[:, :, 0], state.amplitudes[:, :, 1]
    up, dn = _rotate(coins.r1, up, dn, nb)
    if variant == "square":
        up, dn = np.roll(up, -1, axis=1), np.roll(dn, -1, axis=0)
        up, dn = _rotate(coins.r2, up, dn, nb)
        up = np.roll(up, (1, 1), axis=(0, 1))
    else:
        up, dn = np.roll(up, 1, axis=0), np.roll(dn, 1, axis=1)
        up, dn = _rotate(coins.r2, up, dn, nb)
        dn = np.roll(dn, (-1, -1), axis=(0, 1))
    f = _bcast(coins.phase, nb)
    out = np.stack((f * up, f * dn), axis=2)
    if bc.any_absorbing:
        bc.accumulated_loss += _absorb(out, bc)
    return SpinorField(out, variant, state.origin)


def sublattice_conjugate(state: SpinorField) -> SpinorField:
    """Apply the sublattice operator: ``+1`` on even-x sites, ``-1`` on odd-x sites."""
    if state.basis != "original":
        raise ValueError("sublattice_conjugate expects the original basis")
    x, _ = state.coordinates()
    sign = np.where(x % 2 == 0, 1.0, -1.0)
    nb = state.amplitudes.ndim - 3
    return SpinorField(state.amplitudes * _bcast(sign[:, :, None], nb), "original", state.origin)


def _angle_close(a, b, period, tol) -> bool:
    d = np.remainder(np.asarray(a) - np.asarray(b) + period / 2, period) - period / 2
    return bool(np.all(np.abs(d) <= tol))


def is_chiral_symmetric(coins: CoinField, tol: float = 1e-12):
    """Check the fine-tuning conditions for chiral symmetry.

    Returns
    -------
    symmetric : bool
    operator : {"sigma_x", "sigma_y", None}
        ``"sigma_x"`` when both conditions hold (degenerate case).
    """
    two_pi = 2 * np.pi
    base = (
        _angle_close(coins.phi, 0.0, two_pi, tol)
        and _angle_close(coins.alpha2, coins.beta1, two_pi, tol)
        and _angle_close(coins.alpha1, coins.beta2, two_pi, tol)
    )
    if not base:
        return False, None
    if _angle_close(coins.theta1, coins.theta2, np.pi, tol):
        return True, "sigma_x"
    if _angle_close(coins.theta1, -coins.theta2, np.pi, tol):
        return True, "sigma_y"
    return False, None


# --- sparse / dense operators -------------------------------------------------


def _flat(i, j, s, L2):
    return (i * L2 + j) * 2 + s


def _sparse_coin(m: np.ndarray) -> sp.csr_matrix:
    L1, L2 = m.shape[2:]
    i, j = np.meshgrid(np.arange(L1), np.arange(L2), indexing="ij")
    rows, cols, vals = [], [], []
    for so in (0, 1):
        for si in (0, 1):
            rows.append(_flat(i, j, so, L2).ravel())
            cols.append(_flat(i, j, si, L2).ravel())
            vals.append(m[so, si].ravel())
    n = L1 * L2 * 2
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _sparse_shift(extents, moves) -> sp.csr_matrix:
    """Permutation moving spin ``s`` by ``moves[s] = (d1, d2)`` with wrap-around."""
    L1, L2 = extents
    i, j = np.meshgrid(np.arange(L1), np.arange(L2), indexing="ij")
    rows, cols = [], []
    for s, (d1, d2) in enumerate(moves):
        cols.append(_flat(i, j, s, L2).ravel())
        rows.append(_flat((i + d1) % L1, (j + d2) % L2, s, L2).ravel())
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    n = L1 * L2 * 2
    return sp.csr_matrix((np.ones(n), (rows, cols)), shape=(n, n))


_SHIFTS = {
    "original": (((1, 0), (-1, 0)), ((0, 1), (0, -1))),
    "square": (((0, -1), (-1, 0)), ((1, 1), (0, 0))),
    "circle": (((1, 0), (0, 1)), ((0, 0), (-1, -1))),
}


def sparse_timestep(coins: CoinField, basis: str = "original") -> sp.csr_matrix:
    """Periodic timestep operator as a sparse matrix in the flat layout."""
    if basis not in BASES:
        raise ValueError(f"basis must be one of {BASES}, got {basis!r}")
    first, second = _SHIFTS[basis]
    f = sp.diags(np.repeat(coins.phase.ravel(), 2))
    return (
        f
        @ _sparse_shift(coins.extents, second)
        @ _sparse_coin(coins.r2)
        @ _sparse_shift(coins.extents, first)
        @ _sparse_coin(coins.r1)
    ).tocsr()


def dense_build(coins: CoinField, basis: str = "original", cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense periodic timestep matrix; raises if the dimension exceeds ``cap``."""
    dim = 2 * coins.extents[0] * coins.extents[1]
    if dim > cap:
        raise ValueError(f"state dimension {dim} exceeds dense cap {cap}")
    return sparse_timestep(coins, basis).toarray()


# --- basis changes ------------------------------------------------------------


def _cell_sites(extents, variant):
    """Original-basis coordinates of the occupied and intermediate site per cell."""
    a, b = np.meshgrid(np.arange(extents[0]), np.arange(extents[1]), indexing="ij")
    square = (a - b, a + b)
    circle = (a - b, a + b + 1)
    return (square, circle) if variant == "square" else (circle, square)


def _lift_extents(extents):
    L1, L2 = extents
    if L1 != L2:
        raise ValueError("lifting to the original basis needs L_plus == L_minus")
    return (2 * L1, 2 * L1)


def lift_rotated_coins(coins: CoinField, variant: str = "square") -> CoinField:
    """Original-basis coin field on the ``2L x 2L`` torus covering an ``L x L`` rotated torus.

    Every cell's parameters are written to both of its sites, so each cell's
    first rotation and phase act on the occupied site and its second
    rotation on the intermediate site, as in the rotated step.
    """
    ext = _lift_extents(coins.extents)
    period = coins.extents[0]
    arrays = {}
    for name in ANGLE_NAMES:
        out = np.zeros(ext)
        src = getattr(coins, name)
        for (x, y) in _cell_sites(coins.extents, variant):
            # (x, y) and (x + L, y + L) are distinct sites of the cover
            for k in (0, period):
                out[(x + k) % ext[0], (y + k) % ext[1]] = src
        arrays[name] = out
    return CoinField(**arrays)


def lift_rotated_state(state: SpinorField) -> SpinorField:
    """Embed a rotated-basis state into the covering original-basis torus.

    Both preimages of each cell carry the cell's amplitude, so the lifted
    state has twice the squared norm.
    """
    if state.basis not in ("square", "circle"):
        raise ValueError("state must be in a rotated basis")
    ext = _lift_extents(state.extents)
    period = state.extents[0]
    out = np.zeros(ext + state.amplitudes.shape[2:], dtype=complex)
    (x, y), _ = _cell_sites(state.extents, state.basis)
    for k in (0, period):
        out[(x + k) % ext[0], (y + k) % ext[1]] = state.amplitudes
    return SpinorField(out, "original")


def project_to_rotated(state: SpinorField, variant: str, extents) -> SpinorField:
    """Read one preimage per cell back out of a lifted original-basis state."""
    (x, y), _ = _cell_sites(extents, variant)
    ext = state.extents
    return SpinorField(state.amplitudes[x % ext[0], y % ext[1]], variant)


# --- output -------------------------------------------------------------------


def dump_field_csv(state: SpinorField, path) -> None:
    """Write amplitudes as CSV with full double precision (one row per site or cell)."""
    if state.amplitudes.ndim != 3:
        raise ValueError("only unbatched fields can be dumped")
    c1, c2 = state.coordinates()
    names = ("x", "y") if state.basis == "original" else ("n_plus", "n_minus")
    amps = state.amplitudes
    cols = [c1.ravel(), c2.ravel(), amps[:, :, 0].real.ravel(), amps[:, :, 0].imag.ravel(),
            amps[:, :, 1].real.ravel(), amps[:, :, 1].imag.ravel()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names + ("re_up", "im_up", "re_down", "im_down")) + "\n")
        for row in zip(*cols):
            fh.write(f"{int(row[0])},{int(row[1])}," + ",".join(repr(float(v)) for v in row[2:]) + "\n")
