"""Sound one-second over-approximations of the encounter dynamics."""
from __future__ import annotations

import math

import numpy as np

from .cells import DynBounds

SERIES_CUTOFF = 1e-4
MAX_TURN = 2.0  # rad per step; e1/e2 are monotone well past this


def _pad(lo, hi):
    """Nudge interval ends outward to absorb floating-point rounding."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return lo - 1e-9 * (1.0 + np.abs(lo)), hi + 1e-9 * (1.0 + np.abs(hi))


# ---------------------------------------------------------------- vertical

def climb_distance(hdot, accel, limit: float | None = None):
    """Altitude gained in one second at constant ``accel`` with the rate clipped to +-limit."""
    hdot = np.asarray(hdot, dtype=np.float64)
    accel = np.asarray(accel, dtype=np.float64)
    if limit is None:
        return hdot + 0.5 * accel
    bound = np.where(accel >= 0, limit, -limit)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = np.where(accel != 0, (bound - hdot) / accel, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return hdot * t + 0.5 * accel * t * t + bound * (1.0 - t)


def vert_reach_bounds(h, hdot, accel, hdot_limit: float | None = None) -> DynBounds:
    """Next (h, hdot_own) bounds for a cell under an acceleration interval.

    ``h``, ``hdot`` and ``accel`` are (lo, hi) pairs in ft, ft/s, ft/s^2 with
    a level intruder. With ``hdot_limit`` the ownship rate saturates at that
    magnitude, which can move 2h' + hdot' by up to a quarter of the
    acceleration; the coupled constraint is widened accordingly.
    """
    (h0, h1), (d0, d1), (a0, a1) = map(lambda p: (float(p[0]), float(p[1])), (h, hdot, accel))
    h_lo = h0 - climb_distance(d1, a1, hdot_limit)
    h_hi = h1 - climb_distance(d0, a0, hdot_limit)
    r_lo, r_hi = d0 + a0, d1 + a1
    s_lo, s_hi = 2 * h0 - d1, 2 * h1 - d0
    if hdot_limit is not None:
        r_lo, r_hi = np.clip(r_lo, -hdot_limit, hdot_limit), np.clip(r_hi, -hdot_limit, hdot_limit)
        if d1 + a1 > hdot_limit and a1 > 0:
            s_lo -= a1 / 4
        if d0 + a0 < -hdot_limit and a0 < 0:
            s_hi -= a0 / 4
    lo, hi = _pad([h_lo, r_lo], [h_hi, r_hi])
    c_lo, c_hi = _pad(s_lo, s_hi)
    return DynBounds(lo, hi, [(np.array([2.0, 1.0]), float(c_lo), float(c_hi))])


# ---------------------------------------------------------------- horizontal

def e1(x: float) -> float:
    """(x - sin x) / x, with a series near zero."""
    if abs(x) < SERIES_CUTOFF:
        x2 = x * x
        return x2 / 6.0 - x2 * x2 / 120.0
    return (x - math.sin(x)) / x


def e2(x: float) -> float:
    """(1 - cos x) / x, with a series near zero."""
    if abs(x) < SERIES_CUTOFF:
        return x / 2.0 - x ** 3 / 24.0
    return (1.0 - math.cos(x)) / x


def _check_turn(u):
    if not (-MAX_TURN < u[0] <= u[1] < MAX_TURN):
        raise ValueError(f"turn interval {tuple(u)} outside the supported range (-{MAX_TURN}, {MAX_TURN}) rad")


def e1_range(u) -> tuple[float, float]:
    """e1 is even and increasing in |x| here."""
    _check_turn(u)
    lo = 0.0 if u[0] <= 0.0 <= u[1] else min(e1(u[0]), e1(u[1]))
    return lo, max(e1(u[0]), e1(u[1]))


def e2_range(u) -> tuple[float, float]:
    """e2 is increasing here."""
    _check_turn(u)
    return e2(u[0]), e2(u[1])


def cos_range(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo >= 2 * math.pi:
        return -1.0, 1.0
    vals = [math.cos(lo), math.cos(hi)]
    top = 1.0 if math.floor(hi / (2 * math.pi)) * 2 * math.pi >= lo else max(vals)
    bot = -1.0 if math.floor((hi - math.pi) / (2 * math.pi)) * 2 * math.pi + math.pi >= lo else min(vals)
    return bot, top


def sin_range(lo: float, hi: float) -> tuple[float, float]:
    return cos_range(lo - math.pi / 2, hi - math.pi / 2)


def _mul(a, b) -> tuple[float, float]:
    p = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
    return min(p), max(p)


def rotation_hull(x, y, angle) -> tuple[tuple[float, float], tuple[float, float]]:
    """Axis-aligned hull of the box x*y rotated by every angle in ``angle``.

    For each corner the rotated coordinates trace r*cos and r*sin over an
    angle interval, so the hull is exact.
    """
    xs, ys = [], []
    for cx in x:
        for cy in y:
            r = math.hypot(cx, cy)
            phi = math.atan2(cy, cx)
            c = cos_range(phi + angle[0], phi + angle[1])
            s = sin_range(phi + angle[0], phi + angle[1])
            xs += [r * c[0], r * c[1]]
            ys += [r * s[0], r * s[1]]
    return (min(xs), max(xs)), (min(ys), max(ys))


def hor_reach_bounds(x, y, psi, u_own, u_int, v_own: float = 200.0, v_int: float = 185.0) -> DynBounds:
    """Next (x, y, psi) bounds in the ownship frame after one second of turning.

    Intruder at (x, y) heading ``psi`` relative to the ownship; rates in rad/s,
    positive to the left. The ownship frame rotates by -u_own at the end.
    """
    _check_turn(u_own)
    _check_turn(u_int)
    cp, sp = cos_range(*psi), sin_range(*psi)
    e1o, e2o = e1_range(u_own), e2_range(u_own)
    e1i, e2i = e1_range(u_int), e2_range(u_int)
    vi = v_int
    # x + v_i cos psi - v_i cos psi e1(u_i) - v_i sin psi e2(u_i) - v_o + v_o e1(u_o)
    terms_x = [x, (vi * cp[0], vi * cp[1]), _mul((-vi * cp[1], -vi * cp[0]), e1i),
               _mul((-vi * sp[1], -vi * sp[0]), e2i), (-v_own, -v_own), (v_own * e1o[0], v_own * e1o[1])]
    # y + v_i sin psi + v_i cos psi e2(u_i) - v_i sin psi e1(u_i) - v_o e2(u_o)
    terms_y = [y, (vi * sp[0], vi * sp[1]), _mul((vi * cp[0], vi * cp[1]), e2i),
               _mul((-vi * sp[1], -vi * sp[0]), e1i), (-v_own * e2o[1], -v_own * e2o[0])]
    dx = (sum(t[0] for t in terms_x), sum(t[1] for t in terms_x))
    dy = (sum(t[0] for t in terms_y), sum(t[1] for t in terms_y))
    if u_own[0] == u_own[1] == 0.0:
        bx, by = dx, dy
    else:
        bx, by = rotation_hull(dx, dy, (-u_own[1], -u_own[0]))
    p_lo = psi[0] + u_int[0] - u_own[1]
    p_hi = psi[1] + u_int[1] - u_own[0]
    lo, hi = _pad([bx[0], by[0], p_lo], [bx[1], by[1], p_hi])
    return DynBounds(lo, hi)


def hor_exact_step(x, y, psi, u_own, u_int, v_own: float = 200.0, v_int: float = 185.0):
    """Reference one-second Cartesian step used by rollouts and tests."""
    def arc(u):
        if abs(u) < 1e-9:
            return 1.0, 0.0
        return math.sin(u) / u, (1 - math.cos(u)) / u

    so, co = arc(u_own)
    si, ci = arc(u_int)
    ox, oy = v_own * so, v_own * co
    ix = v_int * (math.cos(psi) * si - math.sin(psi) * ci)
    iy = v_int * (math.sin(psi) * si + math.cos(psi) * ci)
    dx, dy = x + ix - ox, y + iy - oy
    c, s = math.cos(u_own), math.sin(u_own)
    return c * dx + s * dy, -s * dx + c * dy, psi + u_int - u_own
