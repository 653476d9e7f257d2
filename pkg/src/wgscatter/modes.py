"""Transverse cosine modes of the ports, thresholds and branch bookkeeping.

Each port of width ``a`` carries the Neumann modes

    nu_0(y) = 1/sqrt(a),   nu_m(y) = sqrt(2/a) cos(m pi y / a),

with thresholds ``t_m = (m pi / a)**2``.  All ports are merged into one global
mode list ordered by threshold (ties: port, then transverse index).  A sheet
of the Riemann surface is labelled by the set of global modes whose square
root ``sqrt(lambda - t)`` is taken on the flipped branch.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import BranchPointSingularity, WaveguideError

THRESHOLD_RTOL = 1e-12


@dataclass(frozen=True)
class TransverseBasis:
    widths: tuple
    modes_per_port: tuple
    port: np.ndarray        # 1-based port number of each global mode
    index: np.ndarray       # transverse index m of each global mode
    thresholds: np.ndarray  # t_g, nondecreasing

    @classmethod
    def from_widths(cls, widths, modes_per_port=20):
        widths = tuple(float(a) for a in widths)
        if np.isscalar(modes_per_port):
            modes_per_port = (int(modes_per_port),) * len(widths)
        modes_per_port = tuple(int(p) for p in modes_per_port)
        if len(modes_per_port) != len(widths):
            raise WaveguideError("one mode count per port is required")
        if any(a <= 0 for a in widths) or any(p < 1 for p in modes_per_port):
            raise WaveguideError("port widths and mode counts must be positive")
        rows = []
        for k, (a, pk) in enumerate(zip(widths, modes_per_port), start=1):
            for m in range(pk):
                rows.append(((m * np.pi / a) ** 2, k, m))
        rows.sort()
        t, port, index = (np.array(c) for c in zip(*rows))
        return cls(widths, modes_per_port, port.astype(int), index.astype(int),
                   t.astype(float))

    @property
    def size(self):
        return len(self.thresholds)

    def width_of(self, g):
        return self.widths[self.port[g] - 1]

    def trace(self, g, y):
        """Value of global mode ``g`` at arc-length ``y`` along its port."""
        a = self.width_of(g)
        m = self.index[g]
        y = np.asarray(y, dtype=float)
        if m == 0:
            return np.full_like(y, 1.0 / np.sqrt(a))
        return np.sqrt(2.0 / a) * np.cos(m * np.pi * y / a)

    def port_modes(self, k):
        """Global indices of the modes living on port ``k`` (1-based)."""
        return np.flatnonzero(self.port == k)

    def distinct_thresholds(self):
        """Distinct thresholds eta_1 < eta_2 < ... (the branch points)."""
        eta = []
        for t in self.thresholds:
            if not eta or abs(t - eta[-1]) > THRESHOLD_RTOL * max(1.0, abs(t)):
                eta.append(t)
        return np.array(eta)

    def threshold_label(self, g):
        """1-based position of mode ``g``'s threshold among distinct thresholds."""
        eta = self.distinct_thresholds()
        return int(np.argmin(np.abs(eta - self.thresholds[g]))) + 1

    def sheet(self, *labels):
        """Sheet index from distinct-threshold labels, e.g. ``basis.sheet(1)``.

        Label ``j`` flips every global mode whose threshold equals ``eta_j``,
        so the result is threshold-closed by construction.
        """
        if len(labels) == 1 and not np.isscalar(labels[0]):
            labels = tuple(labels[0])
        eta = self.distinct_thresholds()
        modes = set()
        for j in labels:
            j = int(j)
            if not 1 <= j <= len(eta):
                raise WaveguideError(f"sheet label {j} outside 1..{len(eta)}")
            close = np.abs(self.thresholds - eta[j - 1]) <= THRESHOLD_RTOL * max(1.0, eta[j - 1])
            modes.update(np.flatnonzero(close).tolist())
        return SheetIndex(frozenset(modes))


@dataclass(frozen=True)
class SheetIndex:
    """Set of global (0-based) mode indices on the flipped branch."""
    modes: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "modes", frozenset(int(g) for g in self.modes))

    @property
    def indices(self):
        return np.array(sorted(self.modes), dtype=int)

    def __len__(self):
        return len(self.modes)

    def __contains__(self, g):
        return int(g) in self.modes

    def complement(self, basis):
        return np.array([g for g in range(basis.size) if g not in self.modes], dtype=int)

    def labels(self, basis):
        return sorted({basis.threshold_label(g) for g in self.modes})

    def validate(self, basis):
        if any(g < 0 or g >= basis.size for g in self.modes):
            raise WaveguideError(f"sheet modes must lie in 0..{basis.size - 1}")
        t = basis.thresholds
        for g in self.modes:
            same = np.flatnonzero(np.abs(t - t[g]) <= THRESHOLD_RTOL * max(1.0, t[g]))
            if not set(same.tolist()) <= self.modes:
                raise WaveguideError(
                    f"sheet is not threshold-closed: mode {g} flipped but not its twins {same.tolist()}")
        return self


def branch_sqrt(lam, t, flipped=False):
    """Square root of ``lam - t`` on the chosen branch.

    The unflipped branch has positive imaginary part; on the cut
    ``lam - t > 0`` it is the limit from the upper half-plane, unless the
    imaginary part of ``lam`` is a negative zero, in which case the lower
    limit is returned.  The flipped branch is the negative of it.
    """
    z = np.asarray(lam, dtype=complex) - np.asarray(t, dtype=float)
    r = np.sqrt(z)  # principal root carries the sign of Im z, signed zeros included
    s = np.where(np.signbit(z.imag), -r, r)
    s = np.where(flipped, -s, s)
    return s[()] if s.ndim == 0 else s


def _falling(alpha, k):
    out = 1.0
    for i in range(k):
        out *= alpha - i
    return out


def mode_roots(lam, J, basis, physical=False):
    """Branch-resolved ``sqrt(lam - t_g)`` for every global mode."""
    flips = np.zeros(basis.size, dtype=bool)
    if not physical:
        flips[J.indices] = True
    return branch_sqrt(lam, basis.thresholds, flips)


def _root_power_derivative(s, alpha2, k):
    """k-th lambda-derivative of ``s**alpha2`` where ``s**2 = lam - t``."""
    return _falling(alpha2 / 2.0, k) * s ** (alpha2 - 2 * k)


def d_matrix(lam, k, J, basis, physical=False):
    """Diagonal of ``d^k/dlam^k [i sqrt(lam - t_j)]`` over the sheet modes.

    Returned as a 1-D array ordered like ``J.indices``.
    """
    idx = J.indices
    s = mode_roots(lam, J, basis, physical)[idx]
    if k == 0:
        return 1j * s
    if np.any(s == 0):
        raise BranchPointSingularity(f"lambda={lam} sits on a sheet threshold")
    return 1j * _root_power_derivative(s, 1, k)


def ext_diag(lam, J, basis):
    """Diagonal ``i sqrt(lam - t_j)`` (unflipped) over the modes outside J."""
    idx = J.complement(basis)
    s = branch_sqrt(lam, basis.thresholds[idx], False)
    return 1j * np.atleast_1d(s)


def ext_inverse_jet(lam, n, J, basis):
    """Taylor coefficients ``(1/q!) d^q/dlam^q [1/(i s_j)]`` for q = 0..n.

    Shape ``(n + 1, len(complement))``; these are the end-domain N-to-D
    entries for the square-integrable modes and their lambda-jet.
    """
    idx = J.complement(basis)
    s = np.atleast_1d(branch_sqrt(lam, basis.thresholds[idx], False))
    if np.any(s == 0):
        raise BranchPointSingularity(f"lambda={lam} sits on a threshold of a decaying mode")
    return np.array([-1j * _root_power_derivative(s, -1, q) / factorial(q)
                     for q in range(n + 1)])


def d_jet(lam, n, J, basis, physical=False):
    """Taylor coefficients of the sheet-mode diagonal ``i s_j``, q = 0..n."""
    return np.array([d_matrix(lam, q, J, basis, physical) / factorial(q)
                     for q in range(n + 1)])
