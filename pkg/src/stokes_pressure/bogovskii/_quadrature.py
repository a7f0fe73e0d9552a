"""Compiled polar quadrature for the Bogovskii integral.

In polar coordinates ``y = rho * omega`` about the target ``x`` the kernel
singularity cancels against the Jacobian:

    B f(x) = int_S omega sum_m C(n-1, m) I_{n-1-m}(x, omega) M_m(x, omega) d omega

with ``I_p = int f(x - rho omega) rho^p d rho`` and
``M_m = int phi(x + r omega) r^m dr``.  ``M_m`` is integrated over the exact
chord of the bump's support ball, ``I_p`` over the ray segment inside the
(padded) support box of ``f`` with composite Gauss-Legendre panels no longer
than one grid spacing.  ``f`` is read through local cubic Lagrange
interpolation.

Each target point is independent; the outer loop runs in parallel.
"""

import math

import numba as nb
import numpy as np

if nb.config.THREADING_LAYER == "default":
    # the bundled TBB is too old and only produces a warning; prefer OpenMP
    nb.config.THREADING_LAYER = "omp"


@nb.njit(cache=True, inline="always")
def _weights4(t, w):
    w[0] = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0
    w[1] = t * (t - 2.0) * (t - 3.0) / 2.0
    w[2] = -t * (t - 1.0) * (t - 3.0) / 2.0
    w[3] = t * (t - 1.0) * (t - 2.0) / 6.0


@nb.njit(cache=True)
def _base(s, n):
    b = int(math.floor(s)) - 1
    if b < 0:
        b = 0
    if b > n - 4:
        b = n - 4
    return b


@nb.njit(cache=True)
def _interp2(data, origin, h, p0, p1, wa, wb):
    s0 = (p0 - origin[0]) / h
    s1 = (p1 - origin[1]) / h
    b0 = _base(s0, data.shape[0])
    b1 = _base(s1, data.shape[1])
    _weights4(s0 - b0, wa)
    _weights4(s1 - b1, wb)
    acc = 0.0
    for a in range(4):
        row = 0.0
        for b in range(4):
            row += wb[b] * data[b0 + a, b1 + b]
        acc += wa[a] * row
    return acc


@nb.njit(cache=True)
def _interp3(data, origin, h, p0, p1, p2, wa, wb, wc):
    s0 = (p0 - origin[0]) / h
    s1 = (p1 - origin[1]) / h
    s2 = (p2 - origin[2]) / h
    b0 = _base(s0, data.shape[0])
    b1 = _base(s1, data.shape[1])
    b2 = _base(s2, data.shape[2])
    _weights4(s0 - b0, wa)
    _weights4(s1 - b1, wb)
    _weights4(s2 - b2, wc)
    acc = 0.0
    for a in range(4):
        plane = 0.0
        for b in range(4):
            row = 0.0
            for c in range(4):
                row += wc[c] * data[b0 + a, b1 + b, b2 + c]
            plane += wb[b] * row
        acc += wa[a] * plane
    return acc


@nb.njit(cache=True)
def _bump(z, center, radius, const, axis):
    """Normalized bump ``const * exp(-1/(1-s^2))`` or its ``axis`` derivative."""
    r2 = 0.0
    for d in range(z.shape[0]):
        t = z[d] - center[d]
        r2 += t * t
    s2 = r2 / (radius * radius)
    if s2 >= 1.0:
        return 0.0
    e = 1.0 - s2
    v = const * math.exp(-1.0 / e)
    if axis < 0:
        return v
    return v * (-2.0 * (z[axis] - center[axis]) / (radius * radius * e * e))


@nb.njit(cache=True)
def _ray_box(x, om, lo, hi):
    """Parameter range ``[t0, t1]`` with ``x - t om`` inside the box, ``t >= 0``."""
    t0 = 0.0
    t1 = 1e300
    for d in range(x.shape[0]):
        md = -om[d]
        if md == 0.0:
            if x[d] < lo[d] or x[d] > hi[d]:
                return 0.0, -1.0
            continue
        a = (lo[d] - x[d]) / md
        b = (hi[d] - x[d]) / md
        if a > b:
            a, b = b, a
        if a > t0:
            t0 = a
        if b < t1:
            t1 = b
    return t0, t1


@nb.njit(cache=True)
def _moments(x, om, center, radius, const, axis, rx, rw, z, mpow):
    """``M_m = int phi(x + r om) r^m dr`` over the chord of the bump ball."""
    n = x.shape[0]
    b = 0.0
    c = 0.0
    for d in range(n):
        t = x[d] - center[d]
        b += t * om[d]
        c += t * t
    disc = b * b - (c - radius * radius)
    if disc <= 0.0:
        return False
    sq = math.sqrt(disc)
    r1 = max(0.0, -b - sq)
    r2 = max(0.0, -b + sq)
    if r2 <= r1:
        return False
    half = 0.5 * (r2 - r1)
    mid = 0.5 * (r2 + r1)
    for m in range(n):
        mpow[m] = 0.0
    for k in range(rx.shape[0]):
        r = mid + half * rx[k]
        for d in range(n):
            z[d] = x[d] + r * om[d]
        v = half * rw[k] * _bump(z, center, radius, const, axis)
        rp = 1.0
        for m in range(n):
            mpow[m] += v * rp
            rp *= r
    return True


@nb.njit(cache=True)
def _ray_sums2(data, origin, h, x, om, lo, hi, px, pw, ipow, wa, wb):
    """``I_p = int f(x - r om) r^p dr`` along the ray inside the support box."""
    t0, t1 = _ray_box(x, om, lo, hi)
    if t1 <= t0:
        return False
    ipow[0] = 0.0
    ipow[1] = 0.0
    length = t1 - t0
    npan = int(math.ceil(length / h))
    ph = length / npan
    for p in range(npan):
        cen = t0 + (p + 0.5) * ph
        for k in range(px.shape[0]):
            r = cen + 0.5 * ph * px[k]
            v = 0.5 * ph * pw[k] * _interp2(data, origin, h, x[0] - r * om[0],
                                            x[1] - r * om[1], wa, wb)
            ipow[0] += v
            ipow[1] += v * r
    return True


@nb.njit(cache=True)
def _ray_sums3(data, origin, h, x, om, lo, hi, px, pw, ipow, wa, wb, wc):
    t0, t1 = _ray_box(x, om, lo, hi)
    if t1 <= t0:
        return False
    ipow[0] = 0.0
    ipow[1] = 0.0
    ipow[2] = 0.0
    length = t1 - t0
    npan = int(math.ceil(length / h))
    ph = length / npan
    for p in range(npan):
        cen = t0 + (p + 0.5) * ph
        for k in range(px.shape[0]):
            r = cen + 0.5 * ph * px[k]
            v = 0.5 * ph * pw[k] * _interp3(data, origin, h, x[0] - r * om[0],
                                            x[1] - r * om[1], x[2] - r * om[2], wa, wb, wc)
            ipow[0] += v
            ipow[1] += v * r
            ipow[2] += v * r * r
    return True


@nb.njit(cache=True, parallel=True)
def polar_apply2(data, origin, h, targets, lo, hi, center, radius, const, axis,
                 rx, rw, px, pw, ang_x, ang_w):
    """2D: cone rule (Gauss-Legendre) toward the bump, full-circle trapezoid inside it."""
    m_targets = targets.shape[0]
    out = np.zeros((m_targets, 2))
    nang = ang_x.shape[0]
    for i in nb.prange(m_targets):
        x = targets[i].copy()
        om = np.empty(2)
        z = np.empty(2)
        ipow = np.empty(2)
        mpow = np.empty(2)
        wa = np.empty(4)
        wb = np.empty(4)
        dx = center[0] - x[0]
        dy = center[1] - x[1]
        dist = math.sqrt(dx * dx + dy * dy)
        inside = dist < radius
        th0 = math.atan2(dy, dx)
        alpha = math.asin(min(radius / dist, 1.0)) if not inside else math.pi
        acc0 = 0.0
        acc1 = 0.0
        for j in range(nang):
            if inside:
                th = 2.0 * math.pi * j / nang
                w = 2.0 * math.pi / nang
            else:
                th = th0 + alpha * ang_x[j]
                w = alpha * ang_w[j]
            om[0] = math.cos(th)
            om[1] = math.sin(th)
            if not _moments(x, om, center, radius, const, axis, rx, rw, z, mpow):
                continue
            if not _ray_sums2(data, origin, h, x, om, lo, hi, px, pw, ipow, wa, wb):
                continue
            val = ipow[1] * mpow[0] + ipow[0] * mpow[1]
            acc0 += w * val * om[0]
            acc1 += w * val * om[1]
        out[i, 0] = acc0
        out[i, 1] = acc1
    return out


@nb.njit(cache=True, parallel=True)
def polar_apply3(data, origin, h, targets, lo, hi, center, radius, const, axis,
                 rx, rw, px, pw, mu_x, mu_w, n_azimuth):
    """3D: Gauss-Legendre in ``cos(beta)`` about the bump axis, trapezoid in azimuth."""
    m_targets = targets.shape[0]
    out = np.zeros((m_targets, 3))
    for i in nb.prange(m_targets):
        x = targets[i].copy()
        om = np.empty(3)
        z = np.empty(3)
        ipow = np.empty(3)
        mpow = np.empty(3)
        wa = np.empty(4)
        wb = np.empty(4)
        wc = np.empty(4)
        ax = np.empty(3)
        for d in range(3):
            ax[d] = center[d] - x[d]
        dist = math.sqrt(ax[0] ** 2 + ax[1] ** 2 + ax[2] ** 2)
        inside = dist < radius
        if inside:
            ax[0] = 0.0
            ax[1] = 0.0
            ax[2] = 1.0
            mu_lo = -1.0
        else:
            for d in range(3):
                ax[d] /= dist
            mu_lo = math.sqrt(max(0.0, 1.0 - (radius / dist) ** 2))
        # orthonormal frame (e1, e2, ax)
        if abs(ax[0]) < 0.9:
            e1 = np.array([0.0, ax[2], -ax[1]])
        else:
            e1 = np.array([-ax[2], 0.0, ax[0]])
        nrm = math.sqrt(e1[0] ** 2 + e1[1] ** 2 + e1[2] ** 2)
        for d in range(3):
            e1[d] /= nrm
        e2 = np.array([ax[1] * e1[2] - ax[2] * e1[1],
                       ax[2] * e1[0] - ax[0] * e1[2],
                       ax[0] * e1[1] - ax[1] * e1[0]])
        half = 0.5 * (1.0 - mu_lo)
        mid = 0.5 * (1.0 + mu_lo)
        acc = np.zeros(3)
        for a in range(mu_x.shape[0]):
            mu = mid + half * mu_x[a]
            sn = math.sqrt(max(0.0, 1.0 - mu * mu))
            wmu = half * mu_w[a]
            for g in range(n_azimuth):
                gam = 2.0 * math.pi * g / n_azimuth
                cg = math.cos(gam)
                sg = math.sin(gam)
                for d in range(3):
                    om[d] = mu * ax[d] + sn * (cg * e1[d] + sg * e2[d])
                if not _moments(x, om, center, radius, const, axis, rx, rw, z, mpow):
                    continue
                if not _ray_sums3(data, origin, h, x, om, lo, hi, px, pw, ipow, wa, wb, wc):
                    continue
                val = ipow[2] * mpow[0] + 2.0 * ipow[1] * mpow[1] + ipow[0] * mpow[2]
                w = wmu * 2.0 * math.pi / n_azimuth * val
                for d in range(3):
                    acc[d] += w * om[d]
        for d in range(3):
            out[i, d] = acc[d]
    return out
