"""
A disc with a single end
========================

One end of width w attached to a disc of radius 2.  For small w the
resonances sit just above the closed disc's Neumann eigenvalues.  The time
delay at zero energy measures the area: 2 |X| / w.
"""

import numpy as np

from wgscatter import DomainSpec, Stub, Waveguide, assemble, build_domain, fem
from wgscatter import locate_resonances, scattering_length

# the closed disc first: no ends, just its Neumann spectrum
mesh = build_domain(DomainSpec.disc(2.0, refinement=20))
ops = assemble(mesh)
vals, _ = fem.neumann_eigenpairs(ops.stiffness, ops.mass, 12)
print("closed disc:", np.round(np.unique(np.round(vals[1:], 4)), 4))

spec = DomainSpec.disc(2.0, [Stub(0.5)], refinement=20)
wg = Waveguide.build(spec, M=300, cache_dir=".wgcache")
for r in locate_resonances(wg, (0.0, 5.0, 0.0, 1.0), 1):
    print(f"resonance {r.lam:.4f}")

print("scattering length", scattering_length(wg), " 2|X|/w =", 2 * wg.mesh.area / 0.5)
