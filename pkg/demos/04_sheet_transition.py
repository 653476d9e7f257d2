"""
A resonance changes sheets
==========================

Push a small obstacle (R=0.2) towards the wall.  Its resonance drifts up
to the second threshold and disappears through the branch cut, turning up
on the sheet of the second threshold instead.
"""

import numpy as np

from wgscatter import DomainSpec, Waveguide, locate_resonances

eta2 = np.pi**2 / 4
region = (2.40, eta2 + 0.01, 0.0, 0.01)

for d in (0.5, 0.6, 0.7):
    wg = Waveguide.build(DomainSpec.channel(radius=0.2, offset=d, refinement=20), M=600,
                         cache_dir=".wgcache")
    for J in (1, 2):
        # the threshold strip must be thin, the poles sit close to eta2
        found = locate_resonances(wg, region, J, margin=5e-5)
        print(f"offset {d}, J={{{J}}}:", [np.round(r.lam, 6) for r in found])
