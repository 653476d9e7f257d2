"""Neumann-to-Dirichlet maps of the internal domain and of the ends.

With trace coefficients ``c_m = (<U_m, nu_g>)_g`` the internal map is

    N(lam) = sum_m c_m c_m^T / (e_m - lam),

positive definite for ``lam < 0``.  The accelerated form adds the exact map
at an auxiliary point ``lt``:

    N(lam) = N(lt) + sum_m (lam - lt) / ((e_m - lam)(e_m - lt)) c_m c_m^T,

whose tail decays like ``e_m^-2`` instead of ``e_m^-1``.

Derivative systems are written in Taylor coefficients: if ``g(lam)`` is an
analytic family of Neumann data and ``f = N g`` the Dirichlet data, then
``f_p = sum_q eta_(p-q+1) g_q`` with ``eta_(r) = N^(r-1) / (r-1)!``.  The
ends are treated the same way with the Taylor coefficients of
``1 / (i sqrt(lam - t))``.  Both system maps are therefore block lower
triangular and block Toeplitz.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EigenvalueCollision
from .modes import ext_inverse_jet


@dataclass(frozen=True, eq=False)
class NDMap:
    lam: complex
    matrix: np.ndarray
    accelerated: bool
    lam_tilde: float | None
    M_used: int


@dataclass(frozen=True, eq=False)
class SystemNDMap:
    """Block lower-triangular Toeplitz map; ``jet[r]`` is block (p, p - r)."""
    order: int
    jet: np.ndarray   # (n + 1, rows, cols)

    def block(self, p, q):
        if q > p:
            return np.zeros(self.jet.shape[1:], dtype=self.jet.dtype)
        return self.jet[p - q]

    def full(self):
        n1, r, c = self.jet.shape
        out = np.zeros((n1 * r, n1 * c), dtype=self.jet.dtype)
        for p in range(n1):
            for q in range(p + 1):
                out[p * r:(p + 1) * r, q * c:(q + 1) * c] = self.jet[p - q]
        return out


def _weights(eb, lam):
    e = eb.eigenvalues
    d = e - lam
    scale = max(1.0, float(np.abs(e).max()) if len(e) else 1.0)
    i = int(np.argmin(np.abs(d)))
    if abs(d[i]) < 1e-10 * scale:
        raise EigenvalueCollision(f"lambda={lam} coincides with eigenvalue e_{i + 1}={e[i]}")
    return d


def _outer_sum(C, w):
    # smallest terms first
    C = C[::-1]
    w = w[::-1]
    return (C.T * w) @ C


def lm_series(eb, lam):
    """Plain eigenfunction series for N(lam)."""
    lam = complex(lam)
    d = _weights(eb, lam)
    N = _outer_sum(eb.trace_coeffs, 1.0 / d)
    return NDMap(lam, N, False, None, eb.M)


def accelerated_nd(eb, lam, direct=None, lam_tilde=None):
    """Series with one auxiliary-point correction; needs N at ``lam_tilde``."""
    if direct is None:
        direct, lam_tilde = eb.direct, eb.lam_tilde
    if direct is None:
        raise ValueError("the accelerated series needs the direct map at the auxiliary point")
    if isinstance(direct, NDMap):
        direct, lam_tilde = direct.matrix, direct.lam
    lam = complex(lam)
    d = _weights(eb, lam)
    dt = _weights(eb, lam_tilde)
    w = (lam - lam_tilde) / (d * dt)
    N = direct + _outer_sum(eb.trace_coeffs, w)
    return NDMap(lam, N, True, float(np.real(lam_tilde)), eb.M)


def nd_map(eb, lam, accelerate=True):
    if accelerate and eb.direct is not None:
        return accelerated_nd(eb, lam)
    return lm_series(eb, lam)


def eta_block(eb, lam, p, accelerate=True):
    """``eta_(p) = N^(p-1)(lam) / (p-1)!``.

    For ``p >= 2`` the derivative of the correction term equals the plain
    derivative series, so only ``p = 1`` differs between the two forms.
    """
    if p < 1:
        raise ValueError("eta order starts at 1")
    if p == 1:
        return nd_map(eb, lam, accelerate).matrix
    d = _weights(eb, complex(lam))
    return _outer_sum(eb.trace_coeffs, d ** (-p))


def internal_system_map(eb, lam, n, accelerate=True):
    jet = np.array([eta_block(eb, lam, r + 1, accelerate) for r in range(n + 1)])
    return SystemNDMap(n, jet)


def external_system_map(lam, n, J, basis):
    """Taylor system of the ends' N-to-D map on the modes outside J."""
    coef = ext_inverse_jet(lam, n, J, basis)          # (n + 1, |K|)
    k = coef.shape[1]
    jet = np.zeros((n + 1, k, k), dtype=complex)
    idx = np.arange(k)
    jet[:, idx, idx] = coef
    return SystemNDMap(n, jet)
