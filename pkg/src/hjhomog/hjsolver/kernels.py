"""Gauss-Seidel sweep kernels for the stationary solvers.

The discrete operator at a free node is

    F[w] = eps*w - tr(A D^2 w)_h + H(p_off + Dc w, y) - diss - rhs

where Dc is the (arm-weighted) central difference, and

    diss = sum_i alpha_i * ((w_+ - w)/h_+ - (w - w_-)/h_-) / 2

is the Lax-Friedrichs dissipation with per-node, per-axis coefficients
alpha_i taken from the model's gradient bound over the local one-sided
slopes.  Because F is affine in the node's own value once the central slope
is written in its w-free form, each visit solves F = 0 exactly for w
(optimal-step pseudo-time marching).  Sweeps alternate through the 2^d
orderings.

Mixed second derivatives use the slant-adapted seven-point stencil; the
off-diagonal entries of A are pre-scaled by the caller so that diagonal
dominance (hence monotonicity of the elliptic part) holds.

status codes: 0 free, 1 clamped to zero on the unit ball (metric problem,
with cut arms to the sphere), 2 fixed Dirichlet boundary.
"""

import numpy as np
from numba import njit

MODEL_POWER = 0
MODEL_QUAD = 1

ARM_FLOOR = 0.05


@njit(cache=True, inline="always")
def _pow_deriv(aq, q, qcase, t, other2):
    # |dH/dp_i| for H = a|p|^q - V at p_i = t, sum of squares of the other
    # components = other2; aq = a*q.  qcase: 1 and 2 take pow-free paths.
    if qcase == 2:
        return aq * abs(t)
    n2 = t * t + other2
    if n2 < 1e-300:
        return 0.0
    if qcase == 1:
        return aq * abs(t) / np.sqrt(n2)
    return aq * n2 ** (0.5 * (q - 2.0)) * abs(t)


@njit(cache=True, inline="always")
def _pow_H(a, V, q, qcase, n2):
    # H = a |p|^q - V with n2 = |p|^2
    if qcase == 2:
        return a * n2 - V
    if qcase == 1:
        return a * np.sqrt(n2) - V
    return a * n2 ** (0.5 * q) - V


@njit(cache=True, inline="always")
def _qcase(q):
    if q == 2.0:
        return 2
    if q == 1.0:
        return 1
    return 0


@njit(cache=True, inline="always")
def _cut_arm(node_c, center_c, other2, h):
    # distance along the grid edge from the node to the unit sphere around
    # the clamp center; other2 = squared transverse distance to the center.
    r2 = 1.0 - other2
    if r2 <= 0.0:
        return ARM_FLOOR * h
    s = abs(node_c - center_c)
    t = s - np.sqrt(r2)
    if t < ARM_FLOOR * h:
        return ARM_FLOOR * h
    if t > h:
        return h
    return t


@njit(cache=True)
def sweep_1d(w, status, a_arr, V_arr, A00, b0, model, q,
             eps, rhs, p0, h, x0, cx, periodic, cutcell,
             alpha_floor, write, rev):
    n = w.shape[0]
    qc = _qcase(q)
    max_upd = 0.0
    max_res = 0.0
    w_min = 1e300
    for ii in range(n):
        i = n - 1 - ii if rev else ii
        if status[i] != 0:
            continue
        if periodic:
            im = i - 1 if i > 0 else n - 1
            ip = i + 1 if i < n - 1 else 0
        else:
            im = i - 1
            ip = i + 1
        wm = w[im]
        wp = w[ip]
        hm = h
        hp = h
        if cutcell:
            px = x0 + i * h
            if status[im] == 1:
                hm = _cut_arm(px, cx, 0.0, h)
                wm = 0.0
            if status[ip] == 1:
                hp = _cut_arm(px, cx, 0.0, h)
                wp = 0.0
        wc = w[i]
        pc = (wp - wm) / (hp + hm)
        sm = p0 + (wc - wm) / hm
        sp = p0 + (wp - wc) / hp
        if model == MODEL_POWER:
            aq = a_arr[i] * q
            al = _pow_deriv(aq, q, qc, sm, 0.0)
            ar = _pow_deriv(aq, q, qc, sp, 0.0)
            pt = p0 + pc
            Hc = _pow_H(a_arr[i], V_arr[i], q, qc, pt * pt)
        else:
            al = abs(2.0 * A00[i] * sm + b0[i])
            ar = abs(2.0 * A00[i] * sp + b0[i])
            pt = p0 + pc
            Hc = A00[i] * pt * pt + b0[i] * pt - V_arr[i]
        alpha = al if al > ar else ar
        if alpha < alpha_floor:
            alpha = alpha_floor
        cm = alpha / (2.0 * hm) + 2.0 * A00[i] / (hm * (hm + hp))
        cp = alpha / (2.0 * hp) + 2.0 * A00[i] / (hp * (hm + hp))
        D = eps + cm + cp
        N = rhs - Hc + cm * wm + cp * wp
        wn = N / D
        res = abs(D * wc - N)
        if res > max_res:
            max_res = res
        if write:
            d = wn - wc
            if abs(d) > max_upd:
                max_upd = abs(d)
            w[i] = wn
            if wn < w_min:
                w_min = wn
        else:
            if wc < w_min:
                w_min = wc
    return max_upd, max_res, w_min


@njit(cache=True)
def sweep_2d(w, status, a_arr, V_arr, A00, A01, A11, b0, b1, model, q,
             eps, rhs, p0, p1, h, x0, y0, cx, cy, periodic, cutcell,
             alpha_floor, write, rev0, rev1):
    n0, n1 = w.shape
    qc = _qcase(q)
    max_upd = 0.0
    max_res = 0.0
    w_min = 1e300
    for ii in range(n0):
        i = n0 - 1 - ii if rev0 else ii
        for jj in range(n1):
            j = n1 - 1 - jj if rev1 else jj
            if status[i, j] != 0:
                continue
            if periodic:
                im = i - 1 if i > 0 else n0 - 1
                ip = i + 1 if i < n0 - 1 else 0
                jm = j - 1 if j > 0 else n1 - 1
                jp = j + 1 if j < n1 - 1 else 0
            else:
                im = i - 1
                ip = i + 1
                jm = j - 1
                jp = j + 1
            wxm = w[im, j]
            wxp = w[ip, j]
            wym = w[i, jm]
            wyp = w[i, jp]
            hxm = h
            hxp = h
            hym = h
            hyp = h
            if cutcell:
                px = x0 + i * h
                py = y0 + j * h
                dy2 = (py - cy) * (py - cy)
                dx2 = (px - cx) * (px - cx)
                if status[im, j] == 1:
                    hxm = _cut_arm(px, cx, dy2, h)
                    wxm = 0.0
                if status[ip, j] == 1:
                    hxp = _cut_arm(px, cx, dy2, h)
                    wxp = 0.0
                if status[i, jm] == 1:
                    hym = _cut_arm(py, cy, dx2, h)
                    wym = 0.0
                if status[i, jp] == 1:
                    hyp = _cut_arm(py, cy, dx2, h)
                    wyp = 0.0
            wc = w[i, j]
            pcx = (wxp - wxm) / (hxp + hxm)
            pcy = (wyp - wym) / (hyp + hym)
            smx = p0 + (wc - wxm) / hxm
            spx = p0 + (wxp - wc) / hxp
            smy = p1 + (wc - wym) / hym
            spy = p1 + (wyp - wc) / hyp
            ptx = p0 + pcx
            pty = p1 + pcy
            if model == MODEL_POWER:
                aq = a_arr[i, j] * q
                a1_ = _pow_deriv(aq, q, qc, smx, pty * pty)
                a2_ = _pow_deriv(aq, q, qc, spx, pty * pty)
                alx = a1_ if a1_ > a2_ else a2_
                a1_ = _pow_deriv(aq, q, qc, smy, ptx * ptx)
                a2_ = _pow_deriv(aq, q, qc, spy, ptx * ptx)
                aly = a1_ if a1_ > a2_ else a2_
                Hc = _pow_H(a_arr[i, j], V_arr[i, j], q, qc,
                            ptx * ptx + pty * pty)
            else:
                axx = A00[i, j]
                axy = A01[i, j]
                ayy = A11[i, j]
                a1_ = abs(2.0 * (axx * smx + axy * pty) + b0[i, j])
                a2_ = abs(2.0 * (axx * spx + axy * pty) + b0[i, j])
                alx = a1_ if a1_ > a2_ else a2_
                a1_ = abs(2.0 * (ayy * smy + axy * ptx) + b1[i, j])
                a2_ = abs(2.0 * (ayy * spy + axy * ptx) + b1[i, j])
                aly = a1_ if a1_ > a2_ else a2_
                Hc = (axx * ptx * ptx + 2.0 * axy * ptx * pty + ayy * pty * pty
                      + b0[i, j] * ptx + b1[i, j] * pty - V_arr[i, j])
            if alx < alpha_floor:
                alx = alpha_floor
            if aly < alpha_floor:
                aly = alpha_floor
            axy = A01[i, j]
            Axx_eff = A00[i, j] - abs(axy)
            Ayy_eff = A11[i, j] - abs(axy)
            cxm = alx / (2.0 * hxm) + 2.0 * Axx_eff / (hxm * (hxm + hxp))
            cxp = alx / (2.0 * hxp) + 2.0 * Axx_eff / (hxp * (hxm + hxp))
            cym = aly / (2.0 * hym) + 2.0 * Ayy_eff / (hym * (hym + hyp))
            cyp = aly / (2.0 * hyp) + 2.0 * Ayy_eff / (hyp * (hym + hyp))
            # slanted seven-point cross term: corners carry |A01|/h^2
            if axy >= 0.0:
                corner = (w[ip, jp] + w[im, jm]) * (axy / (h * h))
                ccoef = axy / (h * h)
            else:
                corner = (w[ip, jm] + w[im, jp]) * (-axy / (h * h))
                ccoef = -axy / (h * h)
            D = eps + cxm + cxp + cym + cyp + 2.0 * ccoef
            N = rhs - Hc + cxm * wxm + cxp * wxp + cym * wym + cyp * wyp + corner
            wn = N / D
            res = abs(D * wc - N)
            if res > max_res:
                max_res = res
            if write:
                dneq = wn - wc
                if abs(dneq) > max_upd:
                    max_upd = abs(dneq)
                w[i, j] = wn
                if wn < w_min:
                    w_min = wn
            else:
                if wc < w_min:
                    w_min = wc
    return max_upd, max_res, w_min


@njit(cache=True)
def sweep_3d(w, status, a_arr, V_arr, A00, A01, A02, A11, A12, A22,
             b0, b1, b2, model, q, eps, rhs, p0, p1, p2, h,
             x0, y0, z0, cx, cy, cz, periodic, cutcell,
             alpha_floor, write, rev0, rev1, rev2):
    n0, n1, n2 = w.shape
    qc = _qcase(q)
    max_upd = 0.0
    max_res = 0.0
    w_min = 1e300
    for ii in range(n0):
        i = n0 - 1 - ii if rev0 else ii
        for jj in range(n1):
            j = n1 - 1 - jj if rev1 else jj
            for kk in range(n2):
                k = n2 - 1 - kk if rev2 else kk
                if status[i, j, k] != 0:
                    continue
                if periodic:
                    im = i - 1 if i > 0 else n0 - 1
                    ip = i + 1 if i < n0 - 1 else 0
                    jm = j - 1 if j > 0 else n1 - 1
                    jp = j + 1 if j < n1 - 1 else 0
                    km = k - 1 if k > 0 else n2 - 1
                    kp = k + 1 if k < n2 - 1 else 0
                else:
                    im, ip, jm, jp, km, kp = i - 1, i + 1, j - 1, j + 1, k - 1, k + 1
                wxm = w[im, j, k]
                wxp = w[ip, j, k]
                wym = w[i, jm, k]
                wyp = w[i, jp, k]
                wzm = w[i, j, km]
                wzp = w[i, j, kp]
                hxm = hxp = hym = hyp = hzm = hzp = h
                if cutcell:
                    px = x0 + i * h
                    py = y0 + j * h
                    pz = z0 + k * h
                    dx2 = (px - cx) * (px - cx)
                    dy2 = (py - cy) * (py - cy)
                    dz2 = (pz - cz) * (pz - cz)
                    if status[im, j, k] == 1:
                        hxm = _cut_arm(px, cx, dy2 + dz2, h)
                        wxm = 0.0
                    if status[ip, j, k] == 1:
                        hxp = _cut_arm(px, cx, dy2 + dz2, h)
                        wxp = 0.0
                    if status[i, jm, k] == 1:
                        hym = _cut_arm(py, cy, dx2 + dz2, h)
                        wym = 0.0
                    if status[i, jp, k] == 1:
                        hyp = _cut_arm(py, cy, dx2 + dz2, h)
                        wyp = 0.0
                    if status[i, j, km] == 1:
                        hzm = _cut_arm(pz, cz, dx2 + dy2, h)
                        wzm = 0.0
                    if status[i, j, kp] == 1:
                        hzp = _cut_arm(pz, cz, dx2 + dy2, h)
                        wzp = 0.0
                wc = w[i, j, k]
                pcx = (wxp - wxm) / (hxp + hxm)
                pcy = (wyp - wym) / (hyp + hym)
                pcz = (wzp - wzm) / (hzp + hzm)
                ptx = p0 + pcx
                pty = p1 + pcy
                ptz = p2 + pcz
                smx = p0 + (wc - wxm) / hxm
                spx = p0 + (wxp - wc) / hxp
                smy = p1 + (wc - wym) / hym
                spy = p1 + (wyp - wc) / hyp
                smz = p2 + (wc - wzm) / hzm
                spz = p2 + (wzp - wc) / hzp
                if model == MODEL_POWER:
                    aq = a_arr[i, j, k] * q
                    o2 = pty * pty + ptz * ptz
                    a1_ = _pow_deriv(aq, q, qc, smx, o2)
                    a2_ = _pow_deriv(aq, q, qc, spx, o2)
                    alx = a1_ if a1_ > a2_ else a2_
                    o2 = ptx * ptx + ptz * ptz
                    a1_ = _pow_deriv(aq, q, qc, smy, o2)
                    a2_ = _pow_deriv(aq, q, qc, spy, o2)
                    aly = a1_ if a1_ > a2_ else a2_
                    o2 = ptx * ptx + pty * pty
                    a1_ = _pow_deriv(aq, q, qc, smz, o2)
                    a2_ = _pow_deriv(aq, q, qc, spz, o2)
                    alz = a1_ if a1_ > a2_ else a2_
                    Hc = _pow_H(a_arr[i, j, k], V_arr[i, j, k], q, qc,
                                ptx * ptx + pty * pty + ptz * ptz)
                else:
                    axx = A00[i, j, k]
                    ayy = A11[i, j, k]
                    azz = A22[i, j, k]
                    axy = A01[i, j, k]
                    axz = A02[i, j, k]
                    ayz = A12[i, j, k]
                    g1 = 2.0 * (axx * smx + axy * pty + axz * ptz) + b0[i, j, k]
                    g2 = 2.0 * (axx * spx + axy * pty + axz * ptz) + b0[i, j, k]
                    alx = abs(g1) if abs(g1) > abs(g2) else abs(g2)
                    g1 = 2.0 * (ayy * smy + axy * ptx + ayz * ptz) + b1[i, j, k]
                    g2 = 2.0 * (ayy * spy + axy * ptx + ayz * ptz) + b1[i, j, k]
                    aly = abs(g1) if abs(g1) > abs(g2) else abs(g2)
                    g1 = 2.0 * (azz * smz + axz * ptx + ayz * pty) + b2[i, j, k]
                    g2 = 2.0 * (azz * spz + axz * ptx + ayz * pty) + b2[i, j, k]
                    alz = abs(g1) if abs(g1) > abs(g2) else abs(g2)
                    Hc = (axx * ptx * ptx + ayy * pty * pty + azz * ptz * ptz
                          + 2.0 * (axy * ptx * pty + axz * ptx * ptz + ayz * pty * ptz)
                          + b0[i, j, k] * ptx + b1[i, j, k] * pty + b2[i, j, k] * ptz
                          - V_arr[i, j, k])
                if alx < alpha_floor:
                    alx = alpha_floor
                if aly < alpha_floor:
                    aly = alpha_floor
                if alz < alpha_floor:
                    alz = alpha_floor
                axy = A01[i, j, k]
                axz = A02[i, j, k]
                ayz = A12[i, j, k]
                Axx_eff = A00[i, j, k] - abs(axy) - abs(axz)
                Ayy_eff = A11[i, j, k] - abs(axy) - abs(ayz)
                Azz_eff = A22[i, j, k] - abs(axz) - abs(ayz)
                cxm = alx / (2.0 * hxm) + 2.0 * Axx_eff / (hxm * (hxm + hxp))
                cxp = alx / (2.0 * hxp) + 2.0 * Axx_eff / (hxp * (hxm + hxp))
                cym = aly / (2.0 * hym) + 2.0 * Ayy_eff / (hym * (hym + hyp))
                cyp = aly / (2.0 * hyp) + 2.0 * Ayy_eff / (hyp * (hym + hyp))
                czm = alz / (2.0 * hzm) + 2.0 * Azz_eff / (hzm * (hzm + hzp))
                czp = alz / (2.0 * hzp) + 2.0 * Azz_eff / (hzp * (hzm + hzp))
                corner = 0.0
                ccoef = 0.0
                if axy >= 0.0:
                    corner += (w[ip, jp, k] + w[im, jm, k]) * (axy / (h * h))
                    ccoef += axy / (h * h)
                else:
                    corner += (w[ip, jm, k] + w[im, jp, k]) * (-axy / (h * h))
                    ccoef += -axy / (h * h)
                if axz >= 0.0:
                    corner += (w[ip, j, kp] + w[im, j, km]) * (axz / (h * h))
                    ccoef += axz / (h * h)
                else:
                    corner += (w[ip, j, km] + w[im, j, kp]) * (-axz / (h * h))
                    ccoef += -axz / (h * h)
                if ayz >= 0.0:
                    corner += (w[i, jp, kp] + w[i, jm, km]) * (ayz / (h * h))
                    ccoef += ayz / (h * h)
                else:
                    corner += (w[i, jp, km] + w[i, jm, kp]) * (-ayz / (h * h))
                    ccoef += -ayz / (h * h)
                D = eps + cxm + cxp + cym + cyp + czm + czp + 2.0 * ccoef
                N = (rhs - Hc + cxm * wxm + cxp * wxp + cym * wym + cyp * wyp
                     + czm * wzm + czp * wzp + corner)
                wn = N / D
                res = abs(D * wc - N)
                if res > max_res:
                    max_res = res
                if write:
                    dneq = wn - wc
                    if abs(dneq) > max_upd:
                        max_upd = abs(dneq)
                    w[i, j, k] = wn
                    if wn < w_min:
                        w_min = wn
                else:
                    if wc < w_min:
                        w_min = wc
    return max_upd, max_res, w_min
