"""Lagrange finite elements for the Neumann Laplacian on the internal domain.

The discrete pencil is ``K u = e M u``.  Port data enter through the trace
matrix ``B`` (``P_tot x ndof``), ``B[g, i] = int_Gamma phi_i nu_g``, so that

* the trace coefficients of an eigenfunction ``u`` are ``B u``;
* the Neumann problem with port flux ``sum_g c_g nu_g`` has load ``B^T c``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (CacheError, DegenerateTriangle, NotConverged, SingularSystem,
                     SolverBreakdown)

log = logging.getLogger(__name__)

EIG_RESIDUAL_TOL = 1e-9
DENSE_LIMIT = 2500

# Quadrature on the reference triangle; weights sum to one.
_Q3 = (np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]), np.full(3, 1 / 3))
_a, _b = 0.445948490915965, 0.091576213509771
_Q6 = (np.array([[_a, _a], [1 - 2 * _a, _a], [_a, 1 - 2 * _a],
                 [_b, _b], [1 - 2 * _b, _b], [_b, 1 - 2 * _b]]),
       np.array([0.223381589678011] * 3 + [0.109951743655322] * 3))
_GL_EDGE = np.polynomial.legendre.leggauss(8)


def _shape(order, xi):
    """Values (nq, nb) and reference gradients (nq, nb, 2) at points ``xi``."""
    x, y = xi[:, 0], xi[:, 1]
    L = np.stack([1 - x - y, x, y], axis=1)
    dL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if order == 1:
        return L, np.broadcast_to(dL, (len(xi), 3, 2)).copy()
    vals = [L[:, i] * (2 * L[:, i] - 1) for i in range(3)]
    grads = [(4 * L[:, i] - 1)[:, None] * dL[i] for i in range(3)]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        vals.append(4 * L[:, a] * L[:, b])
        grads.append(4 * (L[:, a][:, None] * dL[b] + L[:, b][:, None] * dL[a]))
    return np.stack(vals, axis=1), np.stack(grads, axis=1)


@dataclass(frozen=True, eq=False)
class SparseOperatorPair:
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    order: int
    dof_coords: np.ndarray   # (ndof, 2); vertex dofs first
    elements: np.ndarray     # (T, 3 or 6) dof indices
    edge_dofs: np.ndarray    # (E, 2 or 3): start, end[, midpoint] of each boundary edge

    @property
    def ndof(self):
        return self.stiffness.shape[0]


def _edge_midpoint_dofs(mesh):
    t = mesh.triangles
    nv = len(mesh.vertices)
    local = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(local, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T + nv
    return uniq, inv


def assemble(mesh, order=2):
    """Stiffness and mass matrices for Lagrange elements of the given order."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    p = mesh.vertices
    t = mesh.triangles
    x0 = p[t[:, 0]]
    J = np.stack([p[t[:, 1]] - x0, p[t[:, 2]] - x0], axis=2)  # (T, 2, 2) columns
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    area = 0.5 * det
    bad = np.flatnonzero(area < 1e-14 * max(area.sum(), 1e-300))
    if len(bad):
        raise DegenerateTriangle(f"{len(bad)} triangles are degenerate, first index {bad[0]}")
    Jinv_T = np.stack([np.stack([J[:, 1, 1], -J[:, 1, 0]], 1),
                       np.stack([-J[:, 0, 1], J[:, 0, 0]], 1)], 1) / det[:, None, None]

    if order == 1:
        elements = t.copy()
        coords = p.copy()
        edges_unique = None
    else:
        edges_unique, mids = _edge_midpoint_dofs(mesh)
        elements = np.hstack([t, mids])
        coords = np.vstack([p, 0.5 * (p[edges_unique[:, 0]] + p[edges_unique[:, 1]])])
    nb = elements.shape[1]
    ndof = len(coords)

    xs, ws = _Q3
    _, G = _shape(order, xs)
    Ke = np.zeros((len(t), nb, nb))
    for q in range(len(ws)):
        g = np.einsum("tij,bj->tbi", Jinv_T, G[q])   # physical gradients (T, nb, 2)
        Ke += ws[q] * np.einsum("tbi,tci->tbc", g, g)
    Ke *= area[:, None, None]
    xs, ws = _Q6
    V, _ = _shape(order, xs)
    Me = np.einsum("q,qb,qc->bc", ws, V, V)[None] * area[:, None, None]

    rows = np.repeat(elements, nb, axis=1).ravel()
    cols = np.tile(elements, (1, nb)).ravel()
    K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(ndof, ndof))
    M = sp.csr_matrix((Me.ravel(), (rows, cols)), shape=(ndof, ndof))
    K = ((K + K.T) * 0.5).tocsr()
    M = ((M + M.T) * 0.5).tocsr()

    e = mesh.edges
    if order == 1:
        edge_dofs = e.copy()
    else:
        lookup = {tuple(k): i for i, k in enumerate(edges_unique.tolist())}
        mid = np.array([lookup[tuple(sorted(pair))] for pair in e.tolist()]) + len(p)
        edge_dofs = np.column_stack([e, mid])
    return SparseOperatorPair(K, M, order, coords, elements, edge_dofs)


def trace_matrix(ops, mesh, basis):
    """``B[g, i] = int_Gamma phi_i nu_g`` by Gauss-Legendre on each port edge."""
    s, w = _GL_EDGE
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    if ops.order == 1:
        psi = np.stack([1 - s, s], axis=1)
    else:
        psi = np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)], axis=1)
    rows, cols, vals = [], [], []
    p = mesh.vertices
    if len(mesh.ports) != len(basis.widths):
        raise ValueError("mesh ports and transverse basis disagree on the port count")
    for port in mesh.ports:
        k = port.tag
        if abs(port.width - basis.widths[k - 1]) > 1e-9 * port.width:
            raise ValueError(f"port {k} width {port.width} != basis width {basis.widths[k - 1]}")
        modes = basis.port_modes(k)
        for e in port.edges:
            i, j = mesh.edges[e]
            a, b = p[i], p[j]
            pts = a[None, :] + s[:, None] * (b - a)[None, :]
            y = port.arclength(pts)
            length = np.hypot(*(b - a))
            nu = np.stack([basis.trace(g, y) for g in modes])   # (modes, nq)
            local = (nu * (w * length)) @ psi                    # (modes, nb)
            dofs = ops.edge_dofs[e]
            for c, dof in enumerate(dofs):
                rows.append(modes)
                cols.append(np.full(len(modes), dof))
                vals.append(local[:, c])
    B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(basis.size, ops.ndof))
    return B


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Neumann eigenvalues of the internal domain and port-trace coefficients."""
    eigenvalues: np.ndarray     # (M,)
    trace_coeffs: np.ndarray    # (M, P_tot)
    meta: dict = field(default_factory=dict)
    lam_tilde: float | None = None
    direct: np.ndarray | None = None   # N(lam_tilde), (P_tot, P_tot)

    @property
    def M(self):
        return len(self.eigenvalues)

    @property
    def P_tot(self):
        return self.trace_coeffs.shape[1]

    def truncated(self, M):
        """The same basis restricted to the lowest ``M`` eigenpairs."""
        if M > self.M:
            raise ValueError(f"only {self.M} eigenpairs available, asked for {M}")
        meta = dict(self.meta, M=M)
        return EigenBasis(self.eigenvalues[:M], self.trace_coeffs[:M], meta,
                          self.lam_tilde, self.direct)

    def restricted(self, columns):
        """Keep only the trace columns ``columns`` (a sub-list of port modes)."""
        columns = np.asarray(columns, dtype=int)
        direct = None if self.direct is None else self.direct[np.ix_(columns, columns)]
        meta = dict(self.meta, P_tot=len(columns))
        return EigenBasis(self.eigenvalues, self.trace_coeffs[:, columns], meta,
                          self.lam_tilde, direct)


def _residuals(K, Mm, vals, vecs):
    """Backward-error style residuals, scaled by the matrix norms."""
    nK = spla.norm(K, np.inf)
    nM = spla.norm(Mm, np.inf)
    num = np.linalg.norm(K @ vecs - (Mm @ vecs) * vals, axis=0)
    den = (nK + np.abs(vals) * nM) * np.linalg.norm(vecs, axis=0)
    return num / np.maximum(den, 1e-300)


def _gap_cut(values, lo, hi):
    """A point inside the widest spectral gap among ``values`` in ``[lo, hi]``."""
    v = np.sort(values[(values >= lo) & (values <= hi)])
    if len(v) < 2:
        return None
    k = int(np.argmax(np.diff(v)))
    return 0.5 * (v[k] + v[k + 1])


def neumann_eigenpairs(K, Mm, count, area=None, slice_size=120, seed=12345):
    """Lowest ``count`` eigenpairs of ``K u = e M u`` with M-orthonormal vectors.

    Large problems are solved by shift-invert Lanczos over overlapping
    spectral windows.  Windows are joined at cut points placed in spectral
    gaps so that no multiplet is split between two windows.
    """
    n = K.shape[0]
    if count > n - 1:
        raise ValueError(f"asked for {count} eigenpairs of a {n}-dof problem")
    if n <= DENSE_LIMIT:
        vals, vecs = sla.eigh(K.toarray(), Mm.toarray())
        vals, vecs = vals[:count], vecs[:, :count]
    else:
        vals, vecs = _sliced(K, Mm, count, area, slice_size, seed)
    res = _residuals(K, Mm, vals, vecs)
    if res.max() > EIG_RESIDUAL_TOL:
        raise NotConverged(f"eigen-residual {res.max():.2e} above {EIG_RESIDUAL_TOL:.0e}")
    return vals, vecs


def _sliced(K, Mm, count, area, k, seed):
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(K.shape[0])
    kept_vals, kept_vecs = [], []
    confirmed = -np.inf   # every eigenvalue below this has been kept
    sigma = -1.0
    while sum(len(v) for v in kept_vals) < count:
        nev = min(k, K.shape[0] - 2)
        try:
            lu = spla.splu((K - sigma * Mm).tocsc(), permc_spec="MMD_AT_PLUS_A")
            op = spla.LinearOperator(K.shape, matvec=lu.solve, dtype=float)
            vals, vecs = spla.eigsh(K, k=nev, M=Mm, sigma=sigma, which="LM", v0=v0, tol=0,
                                    OPinv=op)
        except (RuntimeError, spla.ArpackError) as exc:
            raise SolverBreakdown(f"shift-invert at sigma={sigma:.6g} failed: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        reach = np.abs(vals - sigma).max()
        low, high = sigma - reach, sigma + reach
        if np.isfinite(confirmed) and low > confirmed:
            # window does not reach back to what is already known
            sigma = confirmed + 0.5 * (sigma - confirmed)
            continue
        # eigenvalues in [low, high] are complete; the outermost cluster may not be
        upper = _gap_cut(vals, 0.5 * (sigma + high), high) if vals[-1] > sigma else None
        if upper is None:
            upper = high
        if np.isfinite(confirmed):
            take = (vals >= confirmed) & (vals < upper)
        else:
            take = vals < upper
        kept_vals.append(vals[take])
        kept_vecs.append(vecs[:, take])
        log.debug("slice sigma=%.6g kept %d eigenvalues in [%.6g, %.6g)", sigma,
                  int(take.sum()), confirmed, upper)
        confirmed = upper
        width = high - low
        sigma = confirmed + 0.35 * width
    vals = np.concatenate(kept_vals)
    vecs = np.hstack(kept_vecs)
    return vals[:count], vecs[:, :count]


def solve_neumann_eigenbasis(ops, mesh, basis, M, lam_tilde=-1.0):
    """Lowest ``M`` Neumann eigenpairs with their port-trace coefficients.

    The direct N-to-D map at ``lam_tilde`` is computed alongside (it is
    needed by the accelerated series) unless ``lam_tilde`` is None.  With
    ``basis=None`` only the spectrum is computed.
    """
    if M < 1 or M > ops.ndof - 1:
        raise ValueError(f"M must lie in 1..{ops.ndof - 1}")
    vals, vecs = neumann_eigenpairs(ops.stiffness, ops.mass, M, area=mesh.area)
    vals = np.where(np.abs(vals) < 1e-12 * max(1.0, vals[-1]), 0.0, vals)
    # fix each eigenvector's sign for reproducibility
    piv = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[piv, np.arange(vecs.shape[1])])
    meta = {"fingerprint": mesh.fingerprint, "M": M, "order": ops.order}
    if basis is None:
        # a closed domain: spectrum only
        return EigenBasis(vals, np.zeros((M, 0)), dict(meta, P_tot=0, widths=[],
                                                       modes_per_port=[]))
    B = trace_matrix(ops, mesh, basis)
    traces = np.asarray((B @ vecs).T)
    meta.update(P_tot=basis.size, widths=list(basis.widths),
                modes_per_port=list(basis.modes_per_port))
    direct = None
    if lam_tilde is not None:
        direct = direct_nd_map(ops, mesh, basis, lam_tilde, B=B)
    return EigenBasis(vals, traces, meta, lam_tilde, direct)


def _factor(ops, lam):
    A = (ops.stiffness - lam * ops.mass).tocsc()
    try:
        return spla.splu(A)
    except RuntimeError as exc:
        raise SingularSystem(f"K - {lam} M is singular: {exc}", 0.0) from exc


def _check_distance(ops, lam):
    """Distance from ``lam`` to the discrete spectrum (only needed for lam >= 0)."""
    if lam < 0:
        return -lam
    try:
        near = spla.eigsh(ops.stiffness, k=1, M=ops.mass, sigma=lam, which="LM",
                          return_eigenvectors=False)
    except (RuntimeError, spla.ArpackError):
        return 0.0
    return float(np.abs(near - lam).min())


def helmholtz_neumann_solve(ops, mesh, lam, g, basis=None, B=None):
    """Port trace coefficients of the solution with Neumann data ``sum g_k nu_k``."""
    if B is None:
        B = trace_matrix(ops, mesh, basis)
    dist = _check_distance(ops, lam)
    if dist < 1e-8 * max(1.0, abs(lam)):
        raise SingularSystem(f"lambda={lam} is within {dist:.3e} of an eigenvalue", dist)
    lu = _factor(ops, lam)
    g = np.asarray(g)
    rhs = B.T @ g
    if np.iscomplexobj(rhs):
        u = lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))
    else:
        u = lu.solve(np.ascontiguousarray(rhs, dtype=float))
    return B @ u


def direct_nd_map(ops, mesh, basis, lam, B=None):
    """Full N-to-D matrix ``B (K - lam M)^{-1} B^T`` at a real point."""
    if B is None:
        B = trace_matrix(ops, mesh, basis)
    dist = _check_distance(ops, lam)
    if dist < 1e-8 * max(1.0, abs(lam)):
        raise SingularSystem(f"lambda={lam} is within {dist:.3e} of an eigenvalue", dist)
    lu = _factor(ops, lam)
    X = lu.solve(np.ascontiguousarray(B.T.toarray()))
    N = np.asarray(B @ X)
    return 0.5 * (N + N.T)


# cache files -----------------------------------------------------------------

BASIS_HEADER = "wgbasis 1"


def _fmt(x):
    return "%.17g" % x


def basis_to_text(eb):
    m = eb.meta
    lines = [BASIS_HEADER,
             f"fingerprint {m.get('fingerprint', '-')}",
             f"M {eb.M}",
             f"P_tot {eb.P_tot}",
             f"order {m.get('order', 2)}",
             "widths " + " ".join(_fmt(a) for a in m.get("widths", [])),
             "modes_per_port " + " ".join(str(p) for p in m.get("modes_per_port", [])),
             "eigenvalues"]
    lines += [_fmt(e) for e in eb.eigenvalues]
    lines.append("traces")
    lines += [" ".join(_fmt(x) for x in row) for row in eb.trace_coeffs]
    if eb.direct is not None:
        lines.append(f"direct {_fmt(eb.lam_tilde)}")
        lines += [" ".join(_fmt(x) for x in row) for row in eb.direct]
    return "\n".join(lines) + "\n"


def basis_from_text(text, source="<string>"):
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    try:
        if not lines or lines[0] != BASIS_HEADER:
            raise CacheError(f"{source}: missing '{BASIS_HEADER}' header")
        kv = {}
        i = 1
        while lines[i] != "eigenvalues":
            key, _, val = lines[i].partition(" ")
            kv[key] = val
            i += 1
        M, P = int(kv["M"]), int(kv["P_tot"])
        i += 1
        vals = np.array([float(x) for x in lines[i:i + M]])
        i += M
        if lines[i] != "traces":
            raise CacheError(f"{source}: expected 'traces' block")
        i += 1
        tr = np.array([[float(x) for x in ln.split()] for ln in lines[i:i + M]])
        i += M
        if tr.shape != (M, P) or len(vals) != M:
            raise CacheError(f"{source}: block sizes disagree with M={M}, P_tot={P}")
        lam_tilde = direct = None
        if i < len(lines):
            head = lines[i].split()
            if head[0] != "direct":
                raise CacheError(f"{source}: unexpected line '{lines[i]}'")
            lam_tilde = float(head[1])
            direct = np.array([[float(x) for x in ln.split()] for ln in lines[i + 1:i + 1 + P]])
            if direct.shape != (P, P):
                raise CacheError(f"{source}: direct block has shape {direct.shape}")
    except CacheError:
        raise
    except (IndexError, KeyError, ValueError) as exc:
        raise CacheError(f"{source}: malformed basis cache ({exc})") from None
    meta = {"fingerprint": kv.get("fingerprint"), "M": M, "P_tot": P,
            "order": int(kv.get("order", 2)),
            "widths": [float(x) for x in kv.get("widths", "").split()],
            "modes_per_port": [int(x) for x in kv.get("modes_per_port", "").split()]}
    return EigenBasis(vals, tr, meta, lam_tilde, direct)


def save_basis(eb, path):
    Path(path).write_text(basis_to_text(eb))


def load_basis(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CacheError(f"{path}: {exc}") from None
    return basis_from_text(text, str(path))
