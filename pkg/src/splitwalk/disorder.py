"""Seeded coin-field generators and clean-limit predictors.

Random angles come from a counter-based Philox stream keyed by
``(seed, parameter id[, timestep])`` whose counter is the flat site index,
so any site's value is independent of the order in which the field is
generated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .lattice import ANGLE_NAMES, CoinField
from .validation import check_extents, check_probability

__all__ = [
    "APPENDIX_SET_A",
    "DISORDER_KINDS",
    "DisorderSpec",
    "clean_invariant",
    "dominant_axis",
    "gen_binary",
    "gen_haar",
    "gen_magnetic_disorder",
    "gen_phase_disorder",
    "site_uniforms",
]

DISORDER_KINDS = ("fixed", "phase", "magnetic", "haar", "binary")
APPENDIX_SET_A = (5 * np.pi / 8, -np.pi / 8)

_MASK64 = (1 << 64) - 1
_PARAM_IDS = {name: i for i, name in enumerate(ANGLE_NAMES)}
_PARAM_IDS.update(zeta1=16, zeta2=17, binary=18)


def site_uniforms(seed: int, param: str, count: int, start: int = 0, step: Optional[int] = None) -> np.ndarray:
    """Uniform ``[0, 1)`` draws for flat site indices ``start .. start + count - 1``."""
    word = _PARAM_IDS[param] if step is None else _PARAM_IDS[param] | ((int(step) + 1) << 8)
    bits = np.random.Philox(key=np.array([int(seed) & _MASK64, word], dtype=np.uint64))
    bits.advance(start // 4)
    gen = np.random.Generator(bits)
    if start % 4:
        gen.random(start % 4)
    return gen.random(count)


def _uniform_angles(seed, param, extents, step=None) -> np.ndarray:
    n = extents[0] * extents[1]
    return (-np.pi + 2 * np.pi * site_uniforms(seed, param, n, step=step)).reshape(extents)


def _fixed_dict(fixed_angles) -> dict:
    if fixed_angles is None:
        return {}
    if isinstance(fixed_angles, dict):
        return dict(fixed_angles)
    return dict(zip(ANGLE_NAMES[:6], fixed_angles))


def gen_phase_disorder(extents, fixed_angles=None, seed: int = 0, step=None) -> CoinField:
    """Constant rotation angles with i.i.d. uniform phases on ``[-pi, pi)``."""
    extents = check_extents(extents)
    fixed = _fixed_dict(fixed_angles)
    fixed.pop("phi", None)
    base = CoinField.constant(extents, **fixed)
    return base.replace(phi=_uniform_angles(seed, "phi", extents, step))


def gen_magnetic_disorder(extents, fixed_thetas=(0.0, 0.0), seed: int = 0, step=None) -> CoinField:
    """Constant ``theta_1, theta_2``; uniform ``alpha_j, beta_j``; zero phase."""
    extents = check_extents(extents)
    theta1, theta2 = fixed_thetas
    base = CoinField.constant(extents, theta1=theta1, theta2=theta2)
    return base.replace(
        **{name: _uniform_angles(seed, name, extents, step) for name in ("alpha1", "alpha2", "beta1", "beta2")}
    )


def _haar_thetas(seed, extents, step=None):
    n = extents[0] * extents[1]
    return tuple(
        np.arcsin(np.sqrt(site_uniforms(seed, z, n, step=step))).reshape(extents) for z in ("zeta1", "zeta2")
    )


def gen_haar(extents, seed: int = 0, step=None) -> CoinField:
    """Haar-random coins: ``theta_j = arcsin(sqrt(zeta_j))``, other angles uniform."""
    extents = check_extents(extents)
    theta1, theta2 = _haar_thetas(seed, extents, step)
    arrays = {name: _uniform_angles(seed, name, extents, step) for name in ("alpha1", "alpha2", "beta1", "beta2", "phi")}
    return CoinField(theta1=theta1, theta2=theta2, **arrays)


def gen_binary(extents, binary_params, seed: int = 0, step=None) -> CoinField:
    """Per-site choice between two ``(theta_1, theta_2)`` sets.

    ``binary_params = (theta1_A, theta2_A, theta1_B, theta2_B, p_A)``; both
    angles of a site come from the same set. All other angles are uniform.
    """
    extents = check_extents(extents)
    t1a, t2a, t1b, t2b, p_a = binary_params
    p_a = check_probability("p_A", p_a)
    pick_a = site_uniforms(seed, "binary", extents[0] * extents[1], step=step).reshape(extents) < p_a
    arrays = {name: _uniform_angles(seed, name, extents, step) for name in ("alpha1", "alpha2", "beta1", "beta2", "phi")}
    return CoinField(
        theta1=np.where(pick_a, float(t1a), float(t1b)),
        theta2=np.where(pick_a, float(t2a), float(t2b)),
        **arrays,
    )


@dataclass(frozen=True)
class DisorderSpec:
    """Recipe plus seed for a coin field.

    ``fixed_angles`` holds ``(theta1, theta2, alpha1, alpha2, beta1, beta2)``
    for the ``fixed``, ``phase`` and ``magnetic`` kinds (the latter uses
    only the thetas). ``binary_params`` is
    ``(theta1_A, theta2_A, theta1_B, theta2_B, p_A)``.
    """

    kind: str = "phase"
    fixed_angles: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    binary_params: tuple = APPENDIX_SET_A + (0.0, np.pi / 2, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DISORDER_KINDS:
            raise ValueError(f"kind must be one of {DISORDER_KINDS}, got {self.kind!r}")
        fixed = tuple(float(a) for a in self.fixed_angles)
        if len(fixed) == 2:
            fixed = fixed + (0.0,) * 4
        if len(fixed) != 6:
            raise ValueError("fixed_angles needs (theta1, theta2[, alpha1, alpha2, beta1, beta2])")
        object.__setattr__(self, "fixed_angles", fixed)
        binary = tuple(float(a) for a in self.binary_params)
        if len(binary) != 5:
            raise ValueError("binary_params needs (theta1_A, theta2_A, theta1_B, theta2_B, p_A)")
        check_probability("p_A", binary[4])
        object.__setattr__(self, "binary_params", binary)
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def thetas(self) -> tuple:
        return self.fixed_angles[:2]

    def with_seed(self, seed: int) -> "DisorderSpec":
        return replace(self, seed=int(seed))

    def generate(self, extents, step=None) -> CoinField:
        """Build the coin field; ``step`` selects an independent per-timestep draw."""
        if self.kind == "fixed":
            return CoinField.constant(check_extents(extents), **dict(zip(ANGLE_NAMES[:6], self.fixed_angles)))
        if self.kind == "phase":
            return gen_phase_disorder(extents, self.fixed_angles, self.seed, step)
        if self.kind == "magnetic":
            return gen_magnetic_disorder(extents, self.thetas, self.seed, step)
        if self.kind == "haar":
            return gen_haar(extents, self.seed, step)
        return gen_binary(extents, self.binary_params, self.seed, step)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "fixed_angles": list(self.fixed_angles),
            "binary_params": list(self.binary_params),
            "seed": int(self.seed),
        }


def clean_invariant(theta1: float, theta2: float, tol: float = 1e-12) -> int:
    """Winding number of the clean walk, ``0`` on the critical lines."""
    value = np.sin(theta1 - theta2) * np.sin(theta1 + theta2)
    if abs(value) <= tol:
        return 0
    return 1 if value > 0 else -1


def dominant_axis(theta1: float, theta2: float, tol: float = 1e-12) -> str:
    """Direction of elongation of the disorder-averaged spread.

    ``"diagonal"`` is the ``x + y`` direction (coordinate ``x_plus``),
    ``"antidiagonal"`` the ``x - y`` direction.
    """
    value = np.cos(theta1 - theta2) * np.cos(theta1 + theta2)
    if abs(value) <= tol:
        return "isotropic"
    return "diagonal" if value > 0 else "antidiagonal"
