"""Scattering resonances of planar acoustic waveguides.

Finite elements on the compact part, cosine modes on the straight ends,
glued through the Neumann-to-Dirichlet map.
"""
from .errors import *  # noqa: F401,F403
from .geometry import DomainKind, DomainSpec, Mesh, Stub, build_domain, read_mesh, write_mesh
from .modes import SheetIndex, TransverseBasis
from .fem import EigenBasis, assemble, solve_neumann_eigenbasis, trace_matrix
from .ndmap import nd_map
from .scattering import s_derivatives, s_matrix
from .model import Waveguide
from .resonance import Contour, count_poles, embedded_scan, locate_resonances, newton_refine
from .timedelay import scattering_length, time_delay

__version__ = "0.1.0"
