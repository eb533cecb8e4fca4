"""Numba kernels for exact grid walking.

Grid coordinates are in cells: cell (ix, iy) covers [ix, ix+1) x [iy, iy+1).
``occ`` is indexed ``occ[iy, ix]``.

A segment is blocked when any obstacle cell whose *closed* square touches the
segment also contains the segment's height at that place. Touching an obstacle
along an edge or at a corner therefore counts as a hit (obstacle wins ties).
"""
import math

import numpy as np
from numba import njit

_TOL = 1e-9


@njit(cache=True)
def _candidates(X, on_line):
    # columns touched by a point at coordinate X
    if on_line:
        r = int(round(X))
        return r - 1, r
    f = int(math.floor(X))
    return f, f


@njit(cache=True)
def _blocked_at(occ, X, Y, x_line, y_line, zlo, zhi, h):
    if zlo > h or zhi < 0.0:
        return False
    ny, nx = occ.shape
    c0, c1 = _candidates(X, x_line)
    r0, r1 = _candidates(Y, y_line)
    for ix in (c0, c1):
        for iy in (r0, r1):
            if ix < 0 or iy < 0 or ix >= nx or iy >= ny:
                return True
            if occ[iy, ix]:
                return True
    return False


@njit(cache=True)
def _is_int(a):
    return abs(a - round(a)) < _TOL


@njit(cache=True)
def segment_clear(occ, X0, Y0, Z0, X1, Y1, Z1, h):
    """True iff the segment between two grid-space points hits no obstacle."""
    dX = X1 - X0
    dY = Y1 - Y0
    dZ = Z1 - Z0
    # next x / y grid line crossings as segment parameters
    if abs(dX) < _TOL:
        tx = np.inf
        stepx = 0.0
        x_const_line = _is_int(X0)
    else:
        x_const_line = False
        if dX > 0:
            nxt = math.floor(X0 + _TOL) + 1.0
        else:
            nxt = math.ceil(X0 - _TOL) - 1.0
        tx = (nxt - X0) / dX
        stepx = 1.0 / abs(dX)
    if abs(dY) < _TOL:
        ty = np.inf
        stepy = 0.0
        y_const_line = _is_int(Y0)
    else:
        y_const_line = False
        if dY > 0:
            nyt = math.floor(Y0 + _TOL) + 1.0
        else:
            nyt = math.ceil(Y0 - _TOL) - 1.0
        ty = (nyt - Y0) / dY
        stepy = 1.0 / abs(dY)

    # start point
    if _blocked_at(occ, X0, Y0, x_const_line or _is_int(X0), y_const_line or _is_int(Y0), Z0, Z0, h):
        return False
    t_prev = 0.0
    while True:
        t_next = min(tx, ty, 1.0)
        # open interval (t_prev, t_next): one cell (or two when running along a line)
        tm = 0.5 * (t_prev + t_next)
        za = Z0 + t_prev * dZ
        zb = Z0 + t_next * dZ
        if _blocked_at(occ, X0 + tm * dX, Y0 + tm * dY, x_const_line, y_const_line,
                       min(za, zb), max(za, zb), h):
            return False
        if t_next >= 1.0:
            break
        Xb = X0 + t_next * dX
        Yb = Y0 + t_next * dY
        on_x = abs(tx - t_next) < 1e-12
        on_y = abs(ty - t_next) < 1e-12
        if on_x:
            Xb = round(Xb)
            tx += stepx
        if on_y:
            Yb = round(Yb)
            ty += stepy
        if _blocked_at(occ, Xb, Yb, on_x or x_const_line, on_y or y_const_line, zb, zb, h):
            return False
        t_prev = t_next
    if _blocked_at(occ, X1, Y1, x_const_line or _is_int(X1), y_const_line or _is_int(Y1), Z1, Z1, h):
        return False
    return True


@njit(cache=True)
def segments_clear(occ, X0, Y0, Z0, ends, h):
    out = np.empty(ends.shape[0], dtype=np.bool_)
    for i in range(ends.shape[0]):
        out[i] = segment_clear(occ, X0, Y0, Z0, ends[i, 0], ends[i, 1], ends[i, 2], h)
    return out


@njit(cache=True)
def ray_depth(occ, X0, Y0, ca, sa, max_range):
    """Distance (in cells) along a planar ray to the first obstacle cell."""
    ny, nx = occ.shape
    ix = int(math.floor(X0))
    iy = int(math.floor(Y0))
    if ix < 0 or iy < 0 or ix >= nx or iy >= ny or occ[iy, ix]:
        return 0.0
    if abs(ca) < 1e-15:
        tx = np.inf
        dtx = np.inf
        sx = 0
    else:
        sx = 1 if ca > 0 else -1
        bound = ix + 1.0 if ca > 0 else float(ix)
        tx = (bound - X0) / ca
        dtx = 1.0 / abs(ca)
    if abs(sa) < 1e-15:
        ty = np.inf
        dty = np.inf
        sy = 0
    else:
        sy = 1 if sa > 0 else -1
        bound = iy + 1.0 if sa > 0 else float(iy)
        ty = (bound - Y0) / sa
        dty = 1.0 / abs(sa)
    while True:
        if abs(tx - ty) < 1e-12:
            t = tx
            # corner crossing: either side cell blocks
            a = ix + sx
            b = iy + sy
            if a < 0 or a >= nx or occ[iy, a]:
                return t
            if b < 0 or b >= ny or occ[b, ix]:
                return t
            ix = a
            iy = b
            tx += dtx
            ty += dty
        elif tx < ty:
            t = tx
            ix += sx
            tx += dtx
        else:
            t = ty
            iy += sy
            ty += dty
        if t > max_range:
            return max_range
        if ix < 0 or iy < 0 or ix >= nx or iy >= ny or occ[iy, ix]:
            return t


@njit(cache=True)
def ray_depths(occ, X0, Y0, angles, max_range):
    out = np.empty(angles.shape[0])
    for i in range(angles.shape[0]):
        out[i] = ray_depth(occ, X0, Y0, math.cos(angles[i]), math.sin(angles[i]), max_range)
    return out
