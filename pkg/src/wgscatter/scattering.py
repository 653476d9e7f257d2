"""Scattering matrix on a chosen sheet and its lambda-derivatives.

On an end, a mode in J is written ``(a e^{-isx} + b e^{isx}) nu`` with ``x``
the outward distance from the port and ``s`` its branch root, so that its
Dirichlet and (outward) Neumann data are ``f = a + b`` and
``g = D (b - a)`` with ``D = i s``.  If ``tau`` maps Dirichlet to Neumann
data on the span of generalized eigenfunctions, then ``b = S a`` with

    S = (D - tau)^{-1} (D + tau).

``tau`` is obtained from the null space of the matching matrix: the
Neumann data ``g`` of a generalized eigenfunction must reproduce the
decaying end solution ``f_k = g_k / (i s_k)`` on every mode outside J.
S itself is read from the kernel without inverting its Dirichlet data:
``2Da = DF - G`` and ``2Db = DF + G``, which stays accurate where tau has
a pole on the real axis.

Derivatives come from the same construction applied to Taylor jets: the
order-n matching system has a null space of dimension ``(n+1)|J|``, whose
jets give ``Q = D S D^{-1}`` as a block Toeplitz map, and the Taylor
coefficients ``S_k = S^(k) / k!`` follow by multiplying out the series.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .errors import AmbiguousKernel, SingularExtraction, SingularTau
from .modes import d_jet
from .ndmap import external_system_map, internal_system_map

GAP_THRESHOLD = 1e-2
COND_LIMIT = 1e13


@dataclass(frozen=True, eq=False)
class ScatteringDerivatives:
    lam: complex
    J: object
    modes: np.ndarray          # global indices of the rows/columns of S
    S: np.ndarray
    derivs: tuple              # S^(1) .. S^(n)
    physical: bool = False
    tau_jet: np.ndarray | None = None    # (n+1, |J|, |J|) Taylor coefficients
    d_jet: np.ndarray | None = None      # (n+1, |J|)
    diagnostics: dict = field(default_factory=dict)

    @property
    def order(self):
        return len(self.derivs)

    def __getitem__(self, k):
        return self.S if k == 0 else self.derivs[k - 1]

    def flux_normalized(self):
        """``diag(sqrt s) S diag(1/sqrt s)``, ``s_j = sqrt(lam - t_j)``.

        S relates mode amplitudes; when J mixes thresholds the unitary
        object is the one that relates energy fluxes.
        """
        w = np.sqrt(self.d_jet[0] / 1j)
        return (w[:, None] * self.S) / w[None, :]

    def log_det_derivative(self):
        """``Tr(S^-1 S')``."""
        if self.order < 1:
            raise ValueError("needs first-order jets")
        return complex(np.trace(np.linalg.solve(self.S, self.derivs[0])))

    def dirichlet_to_neumann(self):
        """Jet of the Dirichlet-to-Neumann map tau on the J modes."""
        if self.tau_jet is None:
            raise SingularTau("Dirichlet data of the kernel are singular "
                              f"(cond {self.diagnostics.get('cond_tau', np.inf):.3e})")
        return self.tau_jet


def _nd_matrix(N):
    return N.matrix if hasattr(N, "matrix") else np.asarray(N)


def matching_matrix(N, lam, J, basis):
    """``L = P N - E^{-1} P``: rows of modes in J are zero."""
    N = _nd_matrix(N)
    ext = external_system_map(lam, 0, J, basis).jet[0]
    K = J.complement(basis)
    L = np.zeros(N.shape, dtype=complex)
    L[K, :] = N[K, :]
    L[np.ix_(K, K)] -= ext
    return L


def system_matching_matrix(nsys, lam, J, basis):
    """Order-n matching matrix on Taylor jets, ``(n+1)P`` square."""
    n = nsys.order
    P = nsys.jet.shape[1]
    ext = external_system_map(lam, n, J, basis).jet
    K = J.complement(basis)
    L = np.zeros(((n + 1) * P, (n + 1) * P), dtype=complex)
    for p in range(n + 1):
        rows = p * P + K
        for q in range(p + 1):
            L[rows, q * P:(q + 1) * P] = nsys.jet[p - q][K, :]
            L[rows[:, None], (q * P + K)[None, :]] -= ext[p - q]
    return L


def null_space(L, dim, gap_threshold=GAP_THRESHOLD):
    """Right singular vectors of the ``dim`` smallest singular values.

    Returns ``(W, sigma, gap)`` with ``sigma`` ascending and
    ``gap = sigma[dim-1] / sigma[dim]``.
    """
    L = np.asarray(L)
    _, s, vh = np.linalg.svd(L)
    ncols = L.shape[1]
    sigma = np.concatenate([s, np.zeros(max(0, ncols - len(s)))])[::-1]
    if dim >= ncols:
        return vh.conj().T, sigma, 0.0
    top = sigma[dim]
    gap = sigma[dim - 1] / top if top > 0 else np.inf
    if gap > gap_threshold:
        raise AmbiguousKernel(
            f"no clear {dim}-dimensional kernel: sigma[{dim}]/sigma[{dim + 1}] = {gap:.3e}", gap)
    return vh[-dim:].conj().T, sigma, gap


def _block_toeplitz(blocks):
    """Lower block-triangular Toeplitz matrix acting on stacked jets."""
    n1 = len(blocks)
    j = blocks[0].shape[0]
    T = np.zeros((n1 * j, n1 * j), dtype=complex)
    for p in range(n1):
        for q in range(p + 1):
            T[p * j:(p + 1) * j, q * j:(q + 1) * j] = blocks[p - q]
    return T


def _toeplitz_blocks(T, j, n1):
    blocks = np.array([T[q * j:(q + 1) * j, :j] for q in range(n1)])
    defect = float(np.abs(T - _block_toeplitz(list(blocks))).max())
    return blocks, defect


def _kernel_data(nsys, lam, J, basis, gap_threshold):
    """Dirichlet (F) and Neumann (G) jets of the J-rows of the kernel."""
    n = nsys.order
    P = nsys.jet.shape[1]
    L = system_matching_matrix(nsys, lam, J, basis)
    W, sigma, gap = null_space(L, (n + 1) * len(J), gap_threshold)
    rows = np.concatenate([p * P + J.indices for p in range(n + 1)])
    G = W[rows]
    F = (nsys.full() @ W)[rows]
    return F, G, {"sigma": sigma[:(n + 1) * len(J) + 1], "gap": gap}


def _tau_from_kernel(F, G, j, n1):
    cond = np.linalg.cond(F)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        return None, cond
    tau, _ = _toeplitz_blocks(np.linalg.solve(F.T, G.T).T, j, n1)
    return tau, cond


def _series_reciprocal(d):
    """Taylor coefficients of 1/d for a jet of diagonals ``d[0..n]``."""
    e = [1.0 / d[0]]
    for k in range(1, len(d)):
        e.append(-sum(d[q] * e[k - q] for q in range(1, k + 1)) / d[0])
    return e


def scattering_from_kernel(lam, J, F, G, djet, physical=False, diagnostics=None):
    """S jets from the Dirichlet/Neumann jets of the kernel.

    With ``f = a + b`` and ``g = D (b - a)`` the incoming and outgoing
    amplitudes are ``2Da = DF - G`` and ``2Db = DF + G``, so
    ``Q = (DF + G)(DF - G)^{-1} = D S D^{-1}``.  Q is analytic wherever S
    is, including where the Dirichlet-to-Neumann map blows up.
    """
    n1 = len(djet)
    j = len(J)
    Dbig = _block_toeplitz([np.diag(djet[q]) for q in range(n1)])
    X = Dbig @ F - G
    Y = Dbig @ F + G
    scale = np.sqrt(np.linalg.norm(X, axis=0) ** 2 + np.linalg.norm(Y, axis=0) ** 2)
    X, Y = X / scale, Y / scale
    # order-0 rows only: the full jet matrix degenerates quadratically at a pole
    sv = np.linalg.svd(X[:j], compute_uv=False)
    rcond = sv[-1] / sv[0] if sv[0] > 0 else 0.0
    if rcond < 1.0 / COND_LIMIT:
        raise SingularExtraction(f"D - tau is singular at lambda={lam}: S has a pole here", rcond)
    Qbig = np.linalg.solve(X.T, Y.T).T
    Q, defect = _toeplitz_blocks(Qbig, j, n1)
    e = _series_reciprocal(djet)
    coef = []
    for k in range(n1):
        acc = np.zeros((j, j), dtype=complex)
        for a in range(k + 1):
            for b in range(k - a + 1):
                acc += (e[a][:, None] * Q[b]) * djet[k - a - b][None, :]
        coef.append(acc)
    derivs = tuple(factorial(k) * coef[k] for k in range(1, n1))
    yn = np.linalg.norm(Y)
    res = float(np.linalg.norm(Qbig @ X - Y) / yn) if yn > 0 else 0.0
    tau, cond = _tau_from_kernel(F, G, j, n1)
    diagnostics = dict(diagnostics or {}, extraction_rcond=rcond, extraction_residual=res,
                       toeplitz_defect=defect, cond_tau=cond)
    return ScatteringDerivatives(complex(lam), J, J.indices, coef[0], derivs, physical,
                                 tau, np.array(djet), diagnostics)


def scattering_from_jets(lam, J, tau, djet, physical=False, diagnostics=None):
    """S jets from a given Dirichlet-to-Neumann jet ``tau[0..n]``."""
    n1 = len(tau)
    F = np.eye(n1 * len(J), dtype=complex)
    G = _block_toeplitz(list(tau))
    return scattering_from_kernel(lam, J, F, G, djet, physical, diagnostics)


def s_derivatives(lam, J, basis, eb, n=1, physical=False, accelerate=True,
                  gap_threshold=GAP_THRESHOLD):
    """S_J and its first ``n`` lambda-derivatives.

    ``physical=True`` evaluates the J-mode roots on the unflipped branch,
    i.e. the same scattering channels seen from the physical sheet.
    """
    if len(J) == 0:
        raise ValueError("the sheet index must contain at least one mode")
    J.validate(basis)
    lam = complex(lam)
    nsys = internal_system_map(eb, lam, n, accelerate)
    F, G, diag = _kernel_data(nsys, lam, J, basis, gap_threshold)
    djet = d_jet(lam, n, J, basis, physical)
    return scattering_from_kernel(lam, J, F, G, djet, physical, diag)


def s_matrix(lam, J, basis, eb, physical=False, accelerate=True, gap_threshold=GAP_THRESHOLD):
    return s_derivatives(lam, J, basis, eb, 0, physical, accelerate, gap_threshold)


def log_det_derivative(lam, J, basis, eb, physical=False, accelerate=True):
    """``Tr(S_J^-1 S_J')``, the logarithmic derivative of det S_J."""
    sd = s_derivatives(lam, J, basis, eb, 1, physical, accelerate)
    return sd.log_det_derivative()


def truncation_check(lam, J, basis, eb, reduced_basis, columns, tol=1e-6, **kw):
    """Compare S against the same computation with fewer port modes.

    ``columns`` maps each mode of ``reduced_basis`` to its column in
    ``basis``.  Warns and returns the difference when it exceeds ``tol``.
    """
    from .modes import SheetIndex
    full = s_matrix(lam, J, basis, eb, **kw).S
    pos = {int(c): i for i, c in enumerate(columns)}
    if any(int(g) not in pos for g in J.indices):
        raise ValueError("the reduced basis must keep every sheet mode")
    Jr = SheetIndex(frozenset(pos[int(g)] for g in J.indices))
    red = s_matrix(lam, Jr, reduced_basis, eb.restricted(columns), **kw).S
    # both S are ordered by global index; the map preserves that order
    diff = float(np.abs(full - red).max())
    if diff > tol:
        warnings.warn(f"port-mode truncation changes S by {diff:.2e} at lambda={lam}",
                      RuntimeWarning, stacklevel=2)
    return diff
