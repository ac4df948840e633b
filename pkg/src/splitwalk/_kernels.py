"""Compiled in-place sweeps for rotated-basis evolution."""

import numpy as np
from numba import njit

SQUARE, CIRCLE = 0, 1


@njit(cache=True)
def rotated_step(up, dn, tu, td, r1, r2, ph, variant, absorbing, classical):
    """Advance ``(up, dn)`` by one period in place; return the absorbed weight.

    ``tu``/``td`` are scratch buffers of the same shape. With ``classical``
    the arrays hold probabilities and the absorbed weight is their plain sum.
    """
    L1, L2 = up.shape
    for i in range(L1):
        for j in range(L2):
            u = up[i, j]
            d = dn[i, j]
            nu = r1[0, 0, i, j] * u + r1[0, 1, i, j] * d
            nd = r1[1, 0, i, j] * u + r1[1, 1, i, j] * d
            if variant == SQUARE:
                tu[i, (j - 1) % L2] = nu
                td[(i - 1) % L1, j] = nd
            else:
                tu[(i + 1) % L1, j] = nu
                td[i, (j + 1) % L2] = nd
    for i in range(L1):
        for j in range(L2):
            u = tu[i, j]
            d = td[i, j]
            nu = r2[0, 0, i, j] * u + r2[0, 1, i, j] * d
            nd = r2[1, 0, i, j] * u + r2[1, 1, i, j] * d
            if variant == SQUARE:
                iu = (i + 1) % L1
                ju = (j + 1) % L2
                up[iu, ju] = nu * ph[iu, ju]
                dn[i, j] = nd * ph[i, j]
            else:
                i2 = (i - 1) % L1
                j2 = (j - 1) % L2
                up[i, j] = nu * ph[i, j]
                dn[i2, j2] = nd * ph[i2, j2]
    removed = 0.0
    if absorbing:
        for i in range(L1):
            for j in range(L2):
                if i == 0 or j == 0 or i == L1 - 1 or j == L2 - 1:
                    if classical:
                        removed += up[i, j].real + dn[i, j].real
                    else:
                        removed += abs(up[i, j]) ** 2 + abs(dn[i, j]) ** 2
                    up[i, j] = 0.0
                    dn[i, j] = 0.0
    return removed


def stochastic_entries(theta: np.ndarray) -> np.ndarray:
    """Coin entries with phases dropped and amplitudes squared."""
    c2, s2 = np.cos(theta) ** 2, np.sin(theta) ** 2
    return np.array([[c2, s2], [s2, c2]], dtype=complex)


@njit(cache=True)
def scatter_step(up, dn, tu, td, r1, r2, ph):
    """One period on the lead+system torus, batched over the last axis.

    Column ``0`` is the lead: the y-shift is skipped there. Arrays have
    shape ``(L1, L2, batch)``; ``tu``/``td`` are scratch buffers.
    """
    L1, L2, nb = up.shape
    for i in range(L1):
        iu = (i + 1) % L1
        idn = (i - 1) % L1
        for j in range(L2):
            a, b, c, d = r1[0, 0, i, j], r1[0, 1, i, j], r1[1, 0, i, j], r1[1, 1, i, j]
            for k in range(nb):
                u = up[i, j, k]
                w = dn[i, j, k]
                tu[iu, j, k] = a * u + b * w
                td[idn, j, k] = c * u + d * w
    for i in range(L1):
        for j in range(L2):
            a, b, c, d = r2[0, 0, i, j], r2[0, 1, i, j], r2[1, 0, i, j], r2[1, 1, i, j]
            if i == 0:
                ju = j
                jd = j
            else:
                ju = (j + 1) % L2
                jd = (j - 1) % L2
            pu = ph[i, ju]
            pd = ph[i, jd]
            for k in range(nb):
                u = tu[i, j, k]
                w = td[i, j, k]
                up[i, ju, k] = pu * (a * u + b * w)
                dn[i, jd, k] = pd * (c * u + d * w)


@njit(cache=True)
def coin_entries(alpha, beta, theta):
    """Fused elementwise coin matrices, shape ``(2, 2) + alpha.shape`` (2-D input)."""
    L1, L2 = theta.shape
    out = np.empty((2, 2, L1, L2), dtype=np.complex128)
    for i in range(L1):
        for j in range(L2):
            c = np.cos(theta[i, j])
            s = np.sin(theta[i, j])
            p = alpha[i, j] + beta[i, j]
            m = alpha[i, j] - beta[i, j]
            ep = complex(np.cos(p), -np.sin(p))
            em = complex(np.cos(m), -np.sin(m))
            out[0, 0, i, j] = ep * c
            out[0, 1, i, j] = -em.conjugate() * s
            out[1, 0, i, j] = em * s
            out[1, 1, i, j] = ep.conjugate() * c
    return out
