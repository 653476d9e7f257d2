"""
A waveguide with nothing in it
==============================

A straight channel of width 2 and length 8 should just let the lowest mode
through, picking up the phase exp(i sqrt(lam) 8).  A good first sanity check.
"""

import numpy as np

from wgscatter import DomainSpec, Waveguide

spec = DomainSpec.channel(width=2.0, length=8.0, refinement=12)
wg = Waveguide.build(spec, M=500, modes_per_port=10, cache_dir=".wgcache")
print("mesh:", len(wg.mesh.vertices), "vertices, area", wg.mesh.area)

# below the second threshold (pi/2)^2 only one mode per end propagates
for lam in np.linspace(0.2, 2.4, 6):
    S = wg.s_matrix(lam, 1, physical=True).S
    exact = np.exp(1j * np.sqrt(lam) * 8)
    print(f"lam={lam:.2f}  |S12 - exact| = {abs(S[0, 1] - exact):.2e}  |S11| = {abs(S[0, 0]):.1e}")

# on the unphysical sheet and on the axis, S is the inverse of the physical one
lam = 1.0
Sp = wg.s_matrix(lam, 1, physical=True).S
Sj = wg.s_matrix(lam, 1).S
print("S_J S_phys - I:", np.abs(Sj @ Sp - np.eye(2)).max())
