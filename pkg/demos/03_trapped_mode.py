"""
Trapped modes on the centre line
================================

With the obstacle centred the problem is symmetric, and the odd part of
the field cannot leak into the lowest end mode.  The resonance of the
previous demo lands on the real axis as an embedded eigenvalue.
"""

import numpy as np

from wgscatter import DomainSpec, Waveguide, embedded_scan
from wgscatter.resonance import embedded_sigma

for R in (0.2, 0.3):
    spec = DomainSpec.channel(radius=R, offset=0.0, refinement=20)
    wg = Waveguide.build(spec, M=600, cache_dir=".wgcache")
    hits = embedded_scan(wg, (2.2, 2.46), 1, step=2e-3)
    print(f"R={R}: embedded eigenvalues {np.round(hits, 6)}")

    # sigma_min dips by many orders of magnitude at the eigenvalue
    for x in np.linspace(hits[0] - 0.01, hits[0] + 0.01, 5):
        print(f"   lam={x:.5f}  sigma_min={embedded_sigma(wg, x, 1):.3e}")
