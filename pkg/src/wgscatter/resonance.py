"""Poles of S_J: counting by the argument principle, Newton refinement,
recursive box subdivision, and a real-axis scan for embedded eigenvalues.

The counting integrand is ``f = Tr(S^-1 S') = (log det S)'``.  Near a pole of
order ``k`` it behaves like ``-k / (lam - lam0)``, so

    count = -(1 / 2 pi i) \\oint f dlam

is the number of poles minus zeros enclosed.  On a non-physical sheet the
zeros of S_J mirror poles of the physical-sheet matrix, which lie on the
real axis only, so off the axis the count is the number of poles.

Sheet J is a cut plane: the real axis beyond the lowest J threshold
separates its upper and lower halves, so search regions are split there and
the lower half is evaluated with a negative-zero imaginary part.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DriftedOutOfBox, NodeSingular, NotConverged, QuadratureNotConverged,
                     SingularExtraction, SingularTau, WaveguideError)
from .scattering import matching_matrix

log = logging.getLogger(__name__)

_GL = np.polynomial.legendre.leggauss(10)
DEFAULT_MARGIN = 1e-3


def _cplx(x, y):
    """Vectorised complex(x, y) that keeps the sign of a zero imaginary part."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    z = np.empty(x.shape, dtype=complex)
    z.real = x
    z.imag = y
    return z


@dataclass(frozen=True)
class Contour:
    """Positively oriented rectangle ``[re0, re1] x [im0, im1]`` on sheet J.

    ``im0`` or ``im1`` may be ``-0.0`` or ``0.0``: a zero imaginary part
    keeps its sign, which selects the side of the cut it lies on.
    """
    re0: float
    re1: float
    im0: float
    im1: float
    J: object
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if not (self.re1 > self.re0 and self.im1 > self.im0):
            raise ValueError("contour corners must satisfy re0 < re1, im0 < im1")

    @property
    def edges(self):
        a, b, c, d = self.re0, self.re1, self.im0, self.im1
        return (("h", c, a, b), ("v", b, c, d), ("h", d, b, a), ("v", a, d, c))

    def contains(self, z):
        return self.re0 <= z.real <= self.re1 and self.im0 <= z.imag <= self.im1

    def crosses_cut(self):
        return self.im0 < 0 < self.im1

    def check(self, thresholds):
        if self.crosses_cut():
            raise ValueError("contour crosses the real axis; split it first")
        near_axis = min(abs(self.im0), abs(self.im1)) < self.margin
        for eta in thresholds:
            if near_axis and self.re0 - self.margin < eta < self.re1 + self.margin:
                raise ValueError(f"contour passes within {self.margin} of threshold {eta}")
        return self


@dataclass(frozen=True)
class ResonanceResult:
    lam: complex
    order: int
    J: object
    newton_residual: float
    count_integral_value: complex
    iterations: int = 0
    cluster: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def sqrt_lam(self):
        """Root with nonnegative real part (the wavenumber parameterization)."""
        r = np.sqrt(complex(self.lam))
        return r if r.real >= 0 else -r


class _Integrand:
    """Memoised ``f(lam) = Tr(S^-1 S')`` for one model and sheet."""

    def __init__(self, model, J):
        self.model = model
        self.J = model.sheet(J)
        self.cache = {}
        self.evaluations = 0

    def _key(self, z):
        return (float(z.real), float(z.imag), math.copysign(1.0, z.imag))

    def __call__(self, z):
        z = complex(z)
        key = self._key(z)
        if key not in self.cache:
            self.evaluations += 1
            try:
                self.cache[key] = self.model.log_det_derivative(z, self.J)
            except (SingularExtraction, SingularTau) as exc:
                raise NodeSingular(f"S is singular at node {z}: {exc}", z) from exc
        return self.cache[key]

    def many(self, zs):
        return np.array([self(z) for z in zs])


class EdgeIntegrator:
    """Adaptive Gauss-Legendre line integrals with a segment cache."""

    def __init__(self, f, tol=1e-6, max_depth=48):
        self.f = f
        self.tol = tol
        self.max_depth = max_depth
        self.cache = {}

    def _nodes(self, kind, fixed, t0, t1):
        x, w = _GL
        t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x
        z = _cplx(t, fixed) if kind == "h" else _cplx(fixed, t)
        dz = 0.5 * (t1 - t0) * (1.0 if kind == "h" else 1j)
        return z, w * dz

    def _panel(self, kind, fixed, t0, t1):
        key = (kind, float(fixed), math.copysign(1.0, fixed), float(t0), float(t1))
        if key not in self.cache:
            z, w = self._nodes(kind, fixed, t0, t1)
            self.cache[key] = complex(np.dot(w, self.f.many(z)))
        return self.cache[key]

    def segment(self, kind, fixed, t0, t1, tol=None, depth=0):
        tol = self.tol if tol is None else tol
        whole = self._panel(kind, fixed, t0, t1)
        tm = 0.5 * (t0 + t1)
        left = self._panel(kind, fixed, t0, tm)
        right = self._panel(kind, fixed, tm, t1)
        # the second test stops refinement once the difference is round-off
        if abs(left + right - whole) < max(tol, 1e-12 * (abs(left) + abs(right))):
            return left + right
        if depth >= self.max_depth:
            raise QuadratureNotConverged(
                f"edge integral on [{t0}, {t1}] did not converge (depth {depth})")
        sub = max(0.5 * tol, 1e-11)
        return (self.segment(kind, fixed, t0, tm, sub, depth + 1)
                + self.segment(kind, fixed, tm, t1, sub, depth + 1))

    def contour(self, c):
        total = 0.0
        for kind, fixed, t0, t1 in c.edges:
            total += self.segment(kind, fixed, t0, t1)
        return total


class _Moment:
    """``lam * f(lam)``, reusing the node cache of f."""

    def __init__(self, f):
        self.f = f

    def many(self, zs):
        zs = np.asarray(zs)
        return zs * self.f.many(zs)


class PoleCounter:
    """Counting integrals for one model and sheet, sharing node evaluations."""

    def __init__(self, model, J, tol=1e-6):
        self.f = _Integrand(model, J)
        self.edges = EdgeIntegrator(self.f, tol * 2 * math.pi)
        self.moments = EdgeIntegrator(_Moment(self.f), tol * 2 * math.pi)
        self.model = model

    @property
    def J(self):
        return self.f.J

    def count(self, contour):
        return -self.edges.contour(contour) / (2j * math.pi)

    def moment(self, contour):
        """Sum of the poles minus the zeros enclosed, each with multiplicity."""
        return -self.moments.contour(contour) / (2j * math.pi)

    def circle(self, center, radius, start=16, max_nodes=1024, tol=1e-3):
        """Trapezoidal count on a small circle (exponentially convergent)."""
        prev = None
        n = start
        while n <= max_nodes:
            th = 2 * math.pi * np.arange(n) / n
            z = center + radius * np.exp(1j * th)
            vals = self.f.many(z)
            # dz = i r e^{i th} dth, so -(1/2 pi i) * sum f dz = -mean(f r e^{i th})
            val = -np.mean(vals * radius * np.exp(1j * th))
            if prev is not None and abs(val - prev) < tol:
                return val
            prev = val
            n *= 2
        raise QuadratureNotConverged(f"circle count around {center} did not converge")


def count_poles(model, contour, tol=1e-6, counter=None):
    """Raw value of ``-(1/2 pi i) \\oint Tr(S_J^-1 S_J') dlam`` (about an integer)."""
    contour.check(model.thresholds())
    counter = counter or PoleCounter(model, contour.J, tol)
    return counter.count(contour)


def newton_refine(model, lam0, J, tol=1e-10, max_iter=50, box=None, counter=None,
                  order_check=True):
    """Newton on ``1/det S_J`` via ``lam <- lam + 1 / Tr(S^-1 S')``."""
    counter = counter or PoleCounter(model, J)
    lam = complex(lam0)
    lower = math.copysign(1.0, lam.imag) < 0
    step = np.inf
    for it in range(1, max_iter + 1):
        try:
            f = model.log_det_derivative(lam, counter.J)
        except SingularExtraction:
            step = 0.0
            break
        step = 1.0 / f
        lam = lam + step
        if box is not None and not _in_box(box, lam):
            raise DriftedOutOfBox(f"Newton iterate {lam} left the search box")
        if (lam.imag < 0) != lower and lam.imag != 0:
            raise DriftedOutOfBox(f"Newton iterate {lam} crossed the cut")
        if abs(step) < tol:
            break
    else:
        raise NotConverged(f"Newton did not converge from {lam0} ({max_iter} iterations)")
    order, value = 1, complex(1.0)
    if order_check:
        r = 10 * tol * (1 + abs(lam))
        r = max(r, 1e-8 * (1 + abs(lam)))
        if lam.imag != 0:
            r = min(r, 0.5 * abs(lam.imag))
        value = counter.circle(lam, r)
        order = max(1, int(round(value.real)))
    return ResonanceResult(lam, order, counter.J, float(abs(step)), value, it)


def _in_box(box, z):
    re0, re1, im0, im1 = box
    wr, wi = re1 - re0, im1 - im0
    return (re0 - 0.5 * wr <= z.real <= re1 + 0.5 * wr
            and im0 - 0.5 * wi <= z.imag <= im1 + 0.5 * wi)


def _split_region(re0, re1, im0, im1, cuts, margin):
    """Rectangles covering the region minus the real axis and threshold strips."""
    if im0 < 0 < im1:
        halves = [(im0, -0.0), (0.0, im1)]
    elif im1 <= 0:
        halves = [(im0, -0.0 if im1 == 0 else im1)]
    else:
        halves = [(im0, im1)]
    xs = [re0]
    for eta in sorted(cuts):
        if re0 - margin < eta < re1 + margin:
            xs += [max(re0, eta - margin), min(re1, eta + margin)]
    xs.append(re1)
    boxes = []
    for lo, hi in halves:
        if min(abs(lo), abs(hi)) >= margin:
            boxes.append((re0, re1, lo, hi))
            continue
        for i in range(0, len(xs), 2):
            a, b = xs[i], xs[i + 1]
            if b > a:
                boxes.append((a, b, lo, hi))
    return boxes


def locate_resonances(model, region, J, max_depth=14, margin=DEFAULT_MARGIN, tol=1e-6,
                      newton_tol=1e-10):
    """All poles of S_J in ``region = (re0, re1, im0, im1)``.

    Boxes are bisected (longer side first) until they hold zero or one pole;
    single poles are refined by Newton.  Boxes still holding several poles
    at ``max_depth`` are returned as clusters.
    """
    counter = PoleCounter(model, J, tol)
    re0, re1, im0, im1 = region
    thresholds = model.thresholds()
    found = []
    for box in _split_region(re0, re1, im0, im1, thresholds, margin):
        found += _search(model, counter, box, 0, max_depth, margin, newton_tol)
    found.sort(key=lambda r: (r.lam.real, r.lam.imag))
    return found


def _count_box(counter, box, margin):
    c = Contour(*box, J=counter.J, margin=margin)
    return counter.count(c)


def _search(model, counter, box, depth, max_depth, margin, newton_tol):
    re0, re1, im0, im1 = box
    try:
        val = _count_box(counter, box, margin)
    except NodeSingular:
        # a pole sits on the contour: shift the box edges slightly
        w = 1e-3 * (re1 - re0)
        box = (re0 - w, re1 + w * 0.618, im0, im1)
        val = _count_box(counter, box, margin)
    n = int(round(val.real))
    if abs(val - n) > 0.05:
        log.warning("non-integer count %s in box %s", val, box)
    if n <= 0:
        return []
    if n == 1:
        center = complex(0.5 * (re0 + re1), 0.5 * (im0 + im1))
        # a narrow pole has a small Newton basin; the first moment lands inside it
        starts = [center]
        try:
            guess = complex(counter.moment(Contour(*box, J=counter.J, margin=margin)) / val)
            if _in_box(box, guess):
                starts.insert(0, _cplx(guess.real, math.copysign(abs(guess.imag), im1)))
        except WaveguideError as exc:
            log.debug("moment integral failed (%s)", exc)
        for start in starts:
            try:
                res = newton_refine(model, start, counter.J, newton_tol, box=box, counter=counter)
                if re0 <= res.lam.real <= re1 and im0 <= res.lam.imag <= im1:
                    return [_with_count(res, val)]
            except (DriftedOutOfBox, NotConverged, WaveguideError) as exc:
                log.debug("Newton from %s failed (%s)", start, exc)
        if depth >= max_depth:
            return [ResonanceResult(center, 1, counter.J, float("nan"), val, cluster=True)]
    if depth >= max_depth:
        center = complex(0.5 * (re0 + re1), 0.5 * (im0 + im1))
        return [ResonanceResult(center, n, counter.J, float("nan"), val, cluster=True)]
    out = []
    for sub in _bisect(box):
        out += _search(model, counter, sub, depth + 1, max_depth, margin, newton_tol)
    return out


def _with_count(res, val):
    return ResonanceResult(res.lam, res.order, res.J, res.newton_residual, res.count_integral_value,
                           res.iterations, res.cluster, dict(res.diagnostics, box_count=val))


def _bisect(box):
    re0, re1, im0, im1 = box
    if re1 - re0 >= im1 - im0:
        m = 0.5 * (re0 + re1)
        return [(re0, m, im0, im1), (m, re1, im0, im1)]
    m = 0.5 * (im0 + im1)
    if m == 0:
        m = math.copysign(0.0, im0)
    return [(re0, re1, im0, m), (re0, re1, m, im1)]


# embedded eigenvalues ---------------------------------------------------------

def embedded_matrix(model, lam, J):
    """Matching conditions for an L2 solution: no content on the modes in J.

    Columns are the Neumann data on the modes outside J; rows are the end
    matching on those modes plus vanishing Dirichlet data on the modes in J.
    """
    J = model.sheet(J)
    N = model.nd(lam)
    L = matching_matrix(N, lam, J, model.basis)
    K = J.complement(model.basis)
    return np.vstack([L[np.ix_(K, K)], N.matrix[np.ix_(J.indices, K)]])


def embedded_sigma(model, lam, J, square=False):
    J = model.sheet(J)
    if square:
        L = matching_matrix(model.nd(lam), lam, J, model.basis)
        K = J.complement(model.basis)
        A = L[np.ix_(K, K)]
    else:
        A = embedded_matrix(model, lam, J)
    return float(np.linalg.svd(A, compute_uv=False)[-1])


def _golden_min(f, a, b, width):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > width:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def embedded_scan(model, interval, J, step=1e-3, rel_threshold=1e-6, width=1e-12,
                  square=False, dip=0.5):
    """Real eigenvalues embedded in the continuous spectrum on ``interval``.

    Scans the smallest singular value of the L2 matching conditions.  Every
    local minimum of the scan, plateaus included, gets a coarse golden
    search; a dip can be narrower than ``step`` and hide between samples.
    Minima that fall below ``dip`` times the median are refined to
    ``width`` and kept if they reach ``rel_threshold`` times the median.
    sigma vanishes linearly at an eigenvalue, so ``width`` must be small
    against ``rel_threshold * step``.
    """
    a, b = interval
    grid = np.arange(a, b + 0.5 * step, step)
    f = lambda x: embedded_sigma(model, x, J, square)
    vals = np.array([f(x) for x in grid])
    med = float(np.median(vals))
    coarse = max(width, 1e-3 * step)
    out = []
    for i in range(1, len(grid) - 1):
        if not (vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]):
            continue
        x, fx = _golden_min(f, grid[i - 1], grid[i + 1], coarse)
        if fx >= dip * med:
            continue
        x, fx = _golden_min(f, max(grid[i - 1], x - 2 * coarse), min(grid[i + 1], x + 2 * coarse),
                            width)
        if fx < rel_threshold * med and not any(abs(x - y) < 2 * coarse for y in out):
            out.append(x)
    return out
