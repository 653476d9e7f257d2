"""Time delay and scattering length.

``T(lam) = -2 i sqrt(lam) S^-1 S'`` on the physical branch.  For a unitary
S, ``S^-1 S'`` is anti-Hermitian, so T is Hermitian; with ``S = e^{i theta}``
its trace is ``d theta / d sqrt(lam)``.  For one end the limit ``lam -> 0``
equals ``2 |X| / |Gamma|``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ExtrapolationUnstable


@dataclass(frozen=True, eq=False)
class TimeDelayResult:
    lam: float
    T: np.ndarray
    trace: complex
    hermiticity_defect: float
    raw: np.ndarray          # -2 sqrt(lam) S^-1 S', without the factor i

    @property
    def raw_trace(self):
        return complex(np.trace(self.raw))


def propagating_sheet(model, lam):
    """Labels of the thresholds strictly below ``lam``."""
    eta = model.thresholds()
    return [j + 1 for j, e in enumerate(eta) if e < lam]


def time_delay(model, lam, J=None):
    lam = float(lam)
    if J is None:
        J = propagating_sheet(model, lam)
    sd = model.s_derivatives(lam, J, 1, physical=True)
    G = np.linalg.solve(sd.S, sd[1])
    raw = -2.0 * np.sqrt(lam) * G
    T = 1j * raw
    nrm = np.linalg.norm(T)
    defect = float(np.linalg.norm(T - T.conj().T) / nrm) if nrm > 0 else 0.0
    return TimeDelayResult(lam, T, complex(np.trace(T)), defect, raw)


def richardson_zero(values):
    """Limit at 0 of samples at ``h, h/2, h/4`` of ``T0 + a h + b h^2``."""
    t1, t2, t3 = values
    return (8 * t3 - 6 * t2 + t1) / 3


def scattering_length(model, J=None, lams=(1e-2, 5e-3, 2.5e-3), rtol=1e-5, min_lam=1e-8):
    """Extrapolated trace of the time delay at ``lam -> 0``.

    Starts from ``lams`` and keeps halving the smallest sample until two
    successive Richardson limits agree to ``rtol``.  T rises steeply on a
    scale ``~ (|Gamma| / |X|)^2``, so large cavities behind narrow ports
    need samples well below the starting triple.
    """
    lams = list(lams)
    if len(lams) != 3 or not np.allclose(np.diff(np.log2(lams)), -1):
        raise ValueError("expects three points halving toward zero")
    if J is None:
        J = [1]
    tr = [time_delay(model, lam, J).trace for lam in lams]
    prev = None
    while True:
        window = np.array(tr[-3:])
        d = np.diff(window.real)
        if not (np.all(d > 0) or np.all(d < 0) or np.all(d == 0)):
            raise ExtrapolationUnstable(f"time-delay samples are not monotone: {window.real}")
        limit = richardson_zero(window)
        if prev is not None and abs(limit - prev) <= rtol * abs(limit):
            break
        if lams[-1] / 2 < min_lam:
            raise ExtrapolationUnstable(
                f"Richardson limits still moving at lam={lams[-1]:.1e}: {prev} -> {limit}")
        prev = limit
        lams.append(lams[-1] / 2)
        tr.append(time_delay(model, lams[-1], J).trace)
    if abs(limit.imag) > 1e-6:
        warnings.warn(f"scattering length has imaginary part {limit.imag:.2e}",
                      RuntimeWarning, stacklevel=2)
    return float(limit.real)
