"""Spatio-temporal plane fitting and line geometry extraction.

Events of a translating line fill a plane in (x, y, t_scaled) space. The
plane is recovered from the eigen-decomposition of the 3x3 event covariance;
the smallest-eigenvalue eigenvector is the plane normal. Intersecting the
plane with the image plane at a query time yields the 2D line: direction from
the normal cross e_t, midpoint by transporting the event centroid along the
plane, length from the uniform-distribution identity l = sqrt(12)*sigma.

The accumulator keeps origin-shifted running sums so covariances stay accurate
while absolute microsecond timestamps grow; a periodic full recomputation
bounds incremental drift.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np


class InsufficientDataError(ValueError):
    """Too few events for a plane fit."""


class DegenerateGeometryError(ValueError):
    """Geometry undefined: zero covariance or plane parallel to the image."""


class MidpointMode(enum.Enum):
    ALONG_PLANE = "along_plane"
    ORTHOGONAL = "orthogonal"


#: Tie tolerance for sign canonicalization of unit vectors.
_TIE_EPS = 1e-9
#: Threshold on n_x^2 + n_y^2 below which the plane carries no image line.
PLANE_EPS = 1e-9


class EventAccumulator:
    """Incremental first/second moments of (x, y, t_scaled) event coordinates.

    Events must be added in non-decreasing timestamp order (the stream order);
    removal is from the old end (`drop_older_than`) or the new end
    (`pop_newest`). Sums are kept relative to the first event's coordinates;
    every `recompute_every` mutations the moments are rebuilt from the raw
    lists to shed floating-point drift.
    """

    __slots__ = ("scale_per_us", "recompute_every", "xs", "ys", "ts",
                 "n", "x0", "y0", "t0", "sx", "sy", "st",
                 "sxx", "sxy", "sxt", "syy", "syt", "stt", "_mutations")

    def __init__(self, scale_per_us: float, recompute_every: int = 256):
        self.scale_per_us = scale_per_us
        self.recompute_every = recompute_every
        self.xs: list[int] = []
        self.ys: list[int] = []
        self.ts: list[int] = []   # microseconds, non-decreasing
        self._zero()

    def _zero(self):
        self.n = 0
        self.x0 = 0.0
        self.y0 = 0.0
        self.t0 = 0.0   # scaled
        self.sx = self.sy = self.st = 0.0
        self.sxx = self.sxy = self.sxt = 0.0
        self.syy = self.syt = self.stt = 0.0
        self._mutations = 0

    def __len__(self) -> int:
        return self.n

    @property
    def count(self) -> int:
        return self.n

    def newest_t(self) -> int:
        if not self.ts:
            raise InsufficientDataError("empty accumulator")
        return self.ts[-1]

    def oldest_t(self) -> int:
        if not self.ts:
            raise InsufficientDataError("empty accumulator")
        return self.ts[0]

    def add(self, x: int, y: int, t: int) -> None:
        if self.n == 0:
            self.x0 = float(x)
            self.y0 = float(y)
            self.t0 = t * self.scale_per_us
        dx = x - self.x0
        dy = y - self.y0
        dt = t * self.scale_per_us - self.t0
        self.sx += dx
        self.sy += dy
        self.st += dt
        self.sxx += dx * dx
        self.sxy += dx * dy
        self.sxt += dx * dt
        self.syy += dy * dy
        self.syt += dy * dt
        self.stt += dt * dt
        self.n += 1
        self.xs.append(x)
        self.ys.append(y)
        self.ts.append(t)
        self._mutations += 1
        if self._mutations >= self.recompute_every:
            self.recompute()

    def _subtract(self, x: int, y: int, t: int) -> None:
        dx = x - self.x0
        dy = y - self.y0
        dt = t * self.scale_per_us - self.t0
        self.sx -= dx
        self.sy -= dy
        self.st -= dt
        self.sxx -= dx * dx
        self.sxy -= dx * dy
        self.sxt -= dx * dt
        self.syy -= dy * dy
        self.syt -= dy * dt
        self.stt -= dt * dt
        self.n -= 1

    def pop_newest(self) -> tuple[int, int, int]:
        if self.n == 0:
            raise InsufficientDataError("empty accumulator")
        x = self.xs.pop()
        y = self.ys.pop()
        t = self.ts.pop()
        self._subtract(x, y, t)
        self._mutations += 1
        if self._mutations >= self.recompute_every:
            self.recompute()
        return x, y, t

    def drop_older_than(self, cutoff_us: int) -> int:
        """Remove events with t < cutoff_us; returns how many were dropped."""
        idx = bisect_left(self.ts, cutoff_us)
        if idx == 0:
            return 0
        if idx >= self.n:
            dropped = self.n
            self.xs.clear()
            self.ys.clear()
            self.ts.clear()
            self._zero()
            return dropped
        for i in range(idx):
            self._subtract(self.xs[i], self.ys[i], self.ts[i])
        del self.xs[:idx]
        del self.ys[:idx]
        del self.ts[:idx]
        self._mutations += idx
        if self._mutations >= self.recompute_every:
            self.recompute()
        return idx

    def count_newer_than(self, t_us: int) -> int:
        """Events with timestamp strictly greater than t_us."""
        return self.n - bisect_right(self.ts, t_us)

    def merge_from(self, other: "EventAccumulator") -> None:
        """Absorb another accumulator's events, keeping timestamp order."""
        if other.n == 0:
            return
        merged = list(zip(self.ts, self.xs, self.ys))
        merged.extend(zip(other.ts, other.xs, other.ys))
        merged.sort(key=lambda r: r[0])
        self.ts = [r[0] for r in merged]
        self.xs = [r[1] for r in merged]
        self.ys = [r[2] for r in merged]
        self.recompute()

    def recompute(self) -> None:
        """Rebuild sums from the raw lists, recentering the origin."""
        n = len(self.ts)
        if n == 0:
            self._zero()
            return
        k = self.scale_per_us
        # recenter on the current mean to keep shifted values small
        self.x0 = math.fsum(self.xs) / n
        self.y0 = math.fsum(self.ys) / n
        self.t0 = math.fsum(t * k for t in self.ts) / n
        sx = sy = st = 0.0
        sxx = sxy = sxt = syy = syt = stt = 0.0
        x0 = self.x0
        y0 = self.y0
        t0 = self.t0
        for x, y, t in zip(self.xs, self.ys, self.ts):
            dx = x - x0
            dy = y - y0
            dt = t * k - t0
            sx += dx
            sy += dy
            st += dt
            sxx += dx * dx
            sxy += dx * dy
            sxt += dx * dt
            syy += dy * dy
            syt += dy * dt
            stt += dt * dt
        self.sx, self.sy, self.st = sx, sy, st
        self.sxx, self.sxy, self.sxt = sxx, sxy, sxt
        self.syy, self.syt, self.stt = syy, syt, stt
        self.n = n
        self._mutations = 0

    def mean(self) -> tuple[float, float, float]:
        """Centroid (x px, y px, t scaled)."""
        if self.n == 0:
            raise InsufficientDataError("empty accumulator")
        inv = 1.0 / self.n
        return (self.x0 + self.sx * inv,
                self.y0 + self.sy * inv,
                self.t0 + self.st * inv)

    def covariance(self) -> tuple[float, float, float, float, float, float]:
        """Sample covariance entries (cxx, cxy, cxt, cyy, cyt, ctt)."""
        n = self.n
        if n < 2:
            raise InsufficientDataError("need >= 2 events for covariance")
        inv = 1.0 / n
        m = 1.0 / (n - 1)
        sx, sy, st = self.sx, self.sy, self.st
        return ((self.sxx - sx * sx * inv) * m,
                (self.sxy - sx * sy * inv) * m,
                (self.sxt - sx * st * inv) * m,
                (self.syy - sy * sy * inv) * m,
                (self.syt - sy * st * inv) * m,
                (self.stt - st * st * inv) * m)

    def covariance_xy(self) -> tuple[float, float, float]:
        """2D sample covariance (cxx, cxy, cyy) of the pixel coordinates."""
        n = self.n
        if n < 2:
            raise InsufficientDataError("need >= 2 events for covariance")
        inv = 1.0 / n
        m = 1.0 / (n - 1)
        sx, sy = self.sx, self.sy
        return ((self.sxx - sx * sx * inv) * m,
                (self.sxy - sx * sy * inv) * m,
                (self.syy - sy * sy * inv) * m)


@dataclass
class PlaneFit:
    """Eigen-decomposition of the event covariance plus the centroid."""

    g: tuple[float, float, float]                 # centroid (px, px, scaled t)
    n: tuple[float, float, float]                 # unit normal, n_t <= 0
    eigenvalues: tuple[float, float, float]       # descending, >= 0
    q: tuple[tuple[float, float, float], ...]     # eigenvectors matching order


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


def _norm2(v):
    return v[0] * v[0] + v[1] * v[1] + v[2] * v[2]


def _eig_vector(a11, a12, a13, a22, a23, a33, lam):
    """Eigenvector from the largest cross product of rows of (A - lam*I)."""
    r1 = (a11 - lam, a12, a13)
    r2 = (a12, a22 - lam, a23)
    r3 = (a13, a23, a33 - lam)
    c12 = _cross(r1, r2)
    c13 = _cross(r1, r3)
    c23 = _cross(r2, r3)
    best = c12
    bn = _norm2(c12)
    n13 = _norm2(c13)
    if n13 > bn:
        best, bn = c13, n13
    n23 = _norm2(c23)
    if n23 > bn:
        best, bn = c23, n23
    if bn <= 0.0:
        return None
    inv = 1.0 / math.sqrt(bn)
    return (best[0] * inv, best[1] * inv, best[2] * inv)


def _eigh_fallback(a11, a12, a13, a22, a23, a33):
    mat = np.array([[a11, a12, a13], [a12, a22, a23], [a13, a23, a33]])
    vals, vecs = np.linalg.eigh(mat)
    order = (2, 1, 0)   # eigh returns ascending
    lams = tuple(float(vals[i]) for i in order)
    qs = tuple(tuple(float(v) for v in vecs[:, i]) for i in order)
    return lams, qs


def eigh_sym3(a11: float, a12: float, a13: float,
              a22: float, a23: float, a33: float):
    """Eigen-decomposition of a symmetric 3x3 matrix.

    Returns (eigenvalues descending, eigenvectors in matching order).
    Closed-form trigonometric solve with cross-product eigenvectors; falls
    back to numpy's iterative solver when the spectrum is near-degenerate or
    the residual check fails.
    """
    scale = max(abs(a11), abs(a12), abs(a13), abs(a22), abs(a23), abs(a33))
    if scale == 0.0:
        return (0.0, 0.0, 0.0), ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    p1 = a12 * a12 + a13 * a13 + a23 * a23
    if p1 <= (1e-14 * scale) ** 2:
        # effectively diagonal
        pairs = sorted(((a11, (1.0, 0.0, 0.0)),
                        (a22, (0.0, 1.0, 0.0)),
                        (a33, (0.0, 0.0, 1.0))), key=lambda p: -p[0])
        return tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)

    q = (a11 + a22 + a33) / 3.0
    b11 = a11 - q
    b22 = a22 - q
    b33 = a33 - q
    p2 = b11 * b11 + b22 * b22 + b33 * b33 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    inv_p = 1.0 / p
    c11 = b11 * inv_p
    c22 = b22 * inv_p
    c33 = b33 * inv_p
    c12 = a12 * inv_p
    c13 = a13 * inv_p
    c23 = a23 * inv_p
    det_half = (c11 * (c22 * c33 - c23 * c23)
                - c12 * (c12 * c33 - c23 * c13)
                + c13 * (c12 * c23 - c22 * c13)) / 2.0
    if det_half < -1.0:
        det_half = -1.0
    elif det_half > 1.0:
        det_half = 1.0
    phi = math.acos(det_half) / 3.0
    two_p = 2.0 * p
    l1 = q + two_p * math.cos(phi)
    l3 = q + two_p * math.cos(phi + 2.0943951023931953)   # + 2*pi/3
    l2 = 3.0 * q - l1 - l3

    gap_tol = 1e-6 * max(scale, abs(l1))
    if (l1 - l2) < gap_tol or (l2 - l3) < gap_tol:
        return _eigh_fallback(a11, a12, a13, a22, a23, a33)

    q1 = _eig_vector(a11, a12, a13, a22, a23, a33, l1)
    q3 = _eig_vector(a11, a12, a13, a22, a23, a33, l3)
    if q1 is None or q3 is None:
        return _eigh_fallback(a11, a12, a13, a22, a23, a33)
    q2 = _cross(q3, q1)
    n2 = _norm2(q2)
    if n2 <= 0.0:
        return _eigh_fallback(a11, a12, a13, a22, a23, a33)
    inv = 1.0 / math.sqrt(n2)
    q2 = (q2[0] * inv, q2[1] * inv, q2[2] * inv)

    # residual check; fall back rather than return a sloppy decomposition
    tol = 1e-10 * scale
    for lam, vec in ((l1, q1), (l2, q2), (l3, q3)):
        rx = a11 * vec[0] + a12 * vec[1] + a13 * vec[2] - lam * vec[0]
        ry = a12 * vec[0] + a22 * vec[1] + a23 * vec[2] - lam * vec[1]
        rz = a13 * vec[0] + a23 * vec[1] + a33 * vec[2] - lam * vec[2]
        if abs(rx) > tol or abs(ry) > tol or abs(rz) > tol:
            return _eigh_fallback(a11, a12, a13, a22, a23, a33)
    return (l1, l2, l3), (q1, q2, q3)


def _canonical_normal(n):
    """Normalize the sign convention: n_t <= 0, ties broken by n_x then n_y."""
    nx, ny, nt = n
    if nt > _TIE_EPS:
        return (-nx, -ny, -nt)
    if nt >= -_TIE_EPS:
        if nx < -_TIE_EPS:
            return (-nx, -ny, -nt)
        if nx <= _TIE_EPS and ny < 0.0:
            return (-nx, -ny, -nt)
    return (nx, ny, nt)


def fit_plane(acc: EventAccumulator) -> PlaneFit:
    """Fit the spatio-temporal plane to the accumulator's events."""
    if acc.count < 3:
        raise InsufficientDataError(f"plane fit needs >= 3 events, have {acc.count}")
    cxx, cxy, cxt, cyy, cyt, ctt = acc.covariance()
    scale = max(abs(cxx), abs(cxy), abs(cxt), abs(cyy), abs(cyt), abs(ctt))
    if scale <= 1e-12:
        raise DegenerateGeometryError("zero covariance: coincident events")
    (l1, l2, l3), (q1, q2, q3) = eigh_sym3(cxx, cxy, cxt, cyy, cyt, ctt)
    # tiny negative eigenvalues are rounding noise on a PSD matrix
    if l1 < 0.0:
        l1 = 0.0
    if l2 < 0.0:
        l2 = 0.0
    if l3 < 0.0:
        l3 = 0.0
    return PlaneFit(g=acc.mean(), n=_canonical_normal(q3),
                    eigenvalues=(l1, l2, l3), q=(q1, q2, q3))


def line_direction(n: tuple[float, float, float]) -> tuple[float, float]:
    """Unit 2D line direction: the normalized xy part of n x e_t.

    The normal's sign is canonicalized first, making the result invariant
    under n -> -n.
    """
    nx, ny, nt = _canonical_normal(n)
    k = nx * nx + ny * ny
    if k <= PLANE_EPS:
        raise DegenerateGeometryError("plane parallel to image: no line direction")
    inv = 1.0 / math.sqrt(k)
    return (ny * inv, -nx * inv)


def plane_velocity(fit: PlaneFit) -> tuple[float, float]:
    """Midpoint drift (px per scaled time unit) implied by the fitted plane."""
    nx, ny, nt = fit.n
    k = nx * nx + ny * ny
    if k <= PLANE_EPS:
        raise DegenerateGeometryError("plane parallel to image: no transport")
    f = -nt / k
    return (nx * f, ny * f)


def line_midpoint(fit: PlaneFit, t_now_scaled: float,
                  mode: MidpointMode = MidpointMode.ALONG_PLANE) -> tuple[float, float]:
    """Project the event centroid onto the line at the query time.

    ALONG_PLANE transports the centroid inside the fitted plane (tracks the
    line's motion); ORTHOGONAL drops it straight onto the image plane (used by
    hibernation, where the line must stand still).
    """
    gx, gy, gt = fit.g
    if mode is MidpointMode.ORTHOGONAL:
        return (gx, gy)
    nx, ny, nt = fit.n
    k = nx * nx + ny * ny
    if k <= PLANE_EPS:
        raise DegenerateGeometryError("plane parallel to image: midpoint undefined")
    f = (t_now_scaled - gt) / (-k)
    return (gx + f * nx * nt, gy + f * ny * nt)


def line_length(fit: PlaneFit, d: tuple[float, float],
                mode: str = "variance") -> float:
    """Line length from the event spread along the line direction.

    sigma is composed from the two largest eigenpairs projected onto the
    (in-plane) direction; the smallest eigenvector is the plane normal, which
    is orthogonal to d and contributes nothing. Uniformly distributed events
    on a segment of length L have sigma = L / sqrt(12), hence l = sqrt(12)*sigma.
    """
    l1, l2, _ = fit.eigenvalues
    q1, q2, _ = fit.q
    p1 = q1[0] * d[0] + q1[1] * d[1]
    p2 = q2[0] * d[0] + q2[1] * d[1]
    if mode == "variance":
        var = l1 * p1 * p1 + l2 * p2 * p2
    elif mode == "scaled_vector":
        a = l1 * p1
        b = l2 * p2
        var = a * a + b * b
    else:
        raise ValueError(f"unknown length projection mode {mode!r}")
    if var <= 0.0:
        return 0.0
    return math.sqrt(12.0 * var)


def point_line_distances(px: float, py: float, dx: float, dy: float,
                         ex: float, ey: float) -> tuple[float, float]:
    """(a, b): perpendicular offset from the line, and offset along it.

    Both measured from the midpoint (px, py) of a line with unit direction
    (dx, dy); both non-negative.
    """
    rx = ex - px
    ry = ey - py
    b = rx * dx + ry * dy
    a = dx * ry - dy * rx
    return (abs(a), abs(b))


def bin_chain_length(coords, bin_size: float = 2.0) -> float:
    """Length of the longest bin chain allowing single-bin gaps.

    Coordinates are shifted so bins start at the smallest one; a chain is a
    run of bins between occupied endpoints in which no two consecutive bins
    are empty. The returned length counts every bin in the chain (occupied or
    allowed gap) times the bin size.
    """
    if not coords:
        return 0.0
    cmin = min(coords)
    occupied = sorted({int((c - cmin) / bin_size) for c in coords})
    best = 1
    start = occupied[0]
    prev = occupied[0]
    for b in occupied[1:]:
        if b - prev > 2:     # a gap of two or more empty bins breaks the chain
            span = prev - start + 1
            if span > best:
                best = span
            start = b
        prev = b
    span = prev - start + 1
    if span > best:
        best = span
    return best * bin_size


def connected_length(xs, ys, ts_us, fit: PlaneFit, d: tuple[float, float],
                     t_now_us: int, scale_per_us: float,
                     bin_size: float = 2.0) -> float:
    """Connected length: events transported along the plane, binned on the line.

    Each event is moved to the query time with the same in-plane transport
    used for the midpoint, projected onto the line direction, and binned;
    the longest chain with gaps of at most one empty bin wins.
    """
    if not xs:
        return 0.0
    nx, ny, nt = fit.n
    k = nx * nx + ny * ny
    if k > PLANE_EPS:
        vx = -nx * nt / k
        vy = -ny * nt / k
    else:
        vx = vy = 0.0
    t_now_scaled = t_now_us * scale_per_us
    dx, dy = d
    coords = []
    for x, y, t in zip(xs, ys, ts_us):
        f = t_now_scaled - t * scale_per_us
        coords.append((x + vx * f) * dx + (y + vy * f) * dy)
    return bin_chain_length(coords, bin_size)


def principal_axis_2d(cxx: float, cxy: float, cyy: float):
    """Major axis of a 2D covariance: (dx, dy, sigma_major).

    Direction is canonical (dx > 0, or dx == 0 and dy > 0).
    """
    tr = cxx + cyy
    df = cxx - cyy
    disc = math.sqrt(df * df + 4.0 * cxy * cxy)
    lam = 0.5 * (tr + disc)
    # eigenvector of the 2x2 for lam: rows of (C - lam I) are parallel
    vx1, vy1 = cxy, lam - cxx
    vx2, vy2 = lam - cyy, cxy
    if vx1 * vx1 + vy1 * vy1 >= vx2 * vx2 + vy2 * vy2:
        vx, vy = vx1, vy1
    else:
        vx, vy = vx2, vy2
    n2 = vx * vx + vy * vy
    if n2 <= 0.0:
        vx, vy = 1.0, 0.0
        n2 = 1.0
    inv = 1.0 / math.sqrt(n2)
    vx *= inv
    vy *= inv
    if vx < -_TIE_EPS or (vx <= _TIE_EPS and vy < 0.0):
        vx, vy = -vx, -vy
    sig = math.sqrt(lam) if lam > 0.0 else 0.0
    return vx, vy, sig
