"""
A narrow resonance behind a small obstacle
==========================================

A disc of radius 0.3 sits slightly off the centre line of a 2 x 4 channel.
Below the second threshold it nearly traps a mode: S has a pole just off
the real axis on the sheet where the first threshold's root is flipped.
"""

import numpy as np

from wgscatter import Contour, DomainSpec, Waveguide, count_poles, locate_resonances

spec = DomainSpec.channel(radius=0.3, offset=0.1, refinement=20)
wg = Waveguide.build(spec, M=600, cache_dir=".wgcache")

# the counting integral tells us where to look
J = wg.sheet(1)
for box in [(0.5, 2.0, 0.0, 0.05), (2.0, 2.4, 0.0, 0.05)]:
    print(box, "count =", np.round(count_poles(wg, Contour(*box, J)), 6))

res = locate_resonances(wg, (2.0, 2.4, -0.05, 0.05), 1)
for r in res:
    print(f"lam = {r.lam:.8f}   sqrt(lam) = {r.sqrt_lam:.7f}   order {r.order}")

# poles come in conjugate pairs, one on each side of the cut
