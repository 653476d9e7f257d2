"""A waveguide bundled with its cached spectral data."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import fem, scattering
from .errors import CacheError
from .geometry import DomainKind, DomainSpec, build_domain, read_mesh, write_mesh
from .modes import SheetIndex, TransverseBasis
from .ndmap import nd_map

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Waveguide:
    spec: DomainSpec
    mesh: object
    basis: TransverseBasis
    eigenbasis: fem.EigenBasis
    accelerate: bool = True

    @classmethod
    def build(cls, spec, M=1000, modes_per_port=20, order=2, lam_tilde=-1.0,
              cache_dir=None, accelerate=True):
        mesh = load_or_build_mesh(spec, cache_dir)
        basis = TransverseBasis.from_widths(mesh.port_widths, modes_per_port)
        eb = load_or_build_basis(mesh, basis, M, order, lam_tilde, cache_dir)
        return cls(spec, mesh, basis, eb, accelerate)

    @classmethod
    def from_mesh(cls, mesh, M=1000, modes_per_port=20, order=2, lam_tilde=-1.0,
                  cache_dir=None, accelerate=True, spec=None):
        basis = TransverseBasis.from_widths(mesh.port_widths, modes_per_port)
        eb = load_or_build_basis(mesh, basis, M, order, lam_tilde, cache_dir)
        return cls(spec, mesh, basis, eb, accelerate)

    @property
    def M(self):
        return self.eigenbasis.M

    def sheet(self, J):
        """Accept a SheetIndex, a threshold label or a list of labels."""
        if isinstance(J, SheetIndex):
            return J.validate(self.basis)
        if np.isscalar(J):
            J = [J]
        return self.basis.sheet(*J)

    def thresholds(self):
        return self.basis.distinct_thresholds()

    def nd(self, lam):
        return nd_map(self.eigenbasis, lam, self.accelerate)

    def s_matrix(self, lam, J, physical=False):
        return scattering.s_matrix(lam, self.sheet(J), self.basis, self.eigenbasis,
                                   physical, self.accelerate)

    def s_derivatives(self, lam, J, n=1, physical=False):
        return scattering.s_derivatives(lam, self.sheet(J), self.basis, self.eigenbasis, n,
                                        physical, self.accelerate)

    def log_det_derivative(self, lam, J, physical=False):
        return self.s_derivatives(lam, J, 1, physical).log_det_derivative()

    def truncated(self, M):
        return replace(self, eigenbasis=self.eigenbasis.truncated(M))

    def with_modes(self, modes_per_port):
        """The same data restricted to fewer transverse modes per port."""
        small = TransverseBasis.from_widths(self.basis.widths, modes_per_port)
        where = {(int(k), int(m)): g for g, (k, m) in
                 enumerate(zip(self.basis.port, self.basis.index))}
        try:
            cols = [where[(int(k), int(m))] for k, m in zip(small.port, small.index)]
        except KeyError:
            raise ValueError("can only drop modes, not add them") from None
        return replace(self, basis=small, eigenbasis=self.eigenbasis.restricted(cols)), cols

    def truncation_check(self, lam, J, drop=5, tol=1e-6):
        small, cols = self.with_modes([p - drop for p in self.basis.modes_per_port])
        return scattering.truncation_check(lam, self.sheet(J), self.basis, self.eigenbasis,
                                           small.basis, cols, tol, physical=False,
                                           accelerate=self.accelerate)


# caching ---------------------------------------------------------------------

def _spec_key(spec):
    blob = json.dumps(spec.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_or_build_mesh(spec, cache_dir=None):
    if spec.kind is DomainKind.EXTERNAL:
        return read_mesh(spec.mesh_path)
    if cache_dir is None:
        return build_domain(spec)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"mesh-{_spec_key(spec)}.wgmesh"
    with FileLock(str(path) + ".lock"):
        if path.exists():
            log.info("mesh cache hit %s", path)
            return read_mesh(path)
        mesh = build_domain(spec)
        write_mesh(mesh, path)
    return mesh


def basis_cache_path(cache_dir, mesh, basis, M, order, lam_tilde):
    tag = f"{mesh.fingerprint[:16]}-M{M}-P{'_'.join(map(str, basis.modes_per_port))}-o{order}"
    if lam_tilde is not None:
        tag += f"-lt{lam_tilde:g}"
    return Path(cache_dir) / f"basis-{tag}.wgbasis"


def load_or_build_basis(mesh, basis, M, order=2, lam_tilde=-1.0, cache_dir=None,
                        stats=None):
    """Eigenbasis for ``mesh``; reads/writes ``cache_dir`` when given.

    ``stats`` (a dict) receives ``hit`` = True/False for callers that report it.
    """
    def compute():
        ops = fem.assemble(mesh, order)
        return fem.solve_neumann_eigenbasis(ops, mesh, basis, M, lam_tilde)

    if cache_dir is None:
        if stats is not None:
            stats["hit"] = False
        return compute()
    path = basis_cache_path(cache_dir, mesh, basis, M, order, lam_tilde)
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(path) + ".lock"):
        if path.exists():
            eb = fem.load_basis(path)
            if eb.meta.get("fingerprint") != mesh.fingerprint:
                raise CacheError(f"{path}: mesh fingerprint does not match")
            if stats is not None:
                stats.update(hit=True, path=str(path))
            log.info("basis cache hit %s", path)
            return eb
        eb = compute()
        fem.save_basis(eb, path)
        # reload so that fresh and cached runs see identical numbers
        eb = fem.load_basis(path)
    if stats is not None:
        stats.update(hit=False, path=str(path))
    return eb
