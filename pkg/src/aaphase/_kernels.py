"""Compiled inner loops: Hamiltonian derivatives, RK4 forward and adjoint sweeps.

Array conventions
-----------------
``y``      float64[8]   r1x r1y r2x r2y p1x p1y p2x p2y
``psi``    complex128[4]
``mats``   float64[3,4,4]  quadratic-form matrices (A, B, X) of the angular operator
``hp``     float64[4]   C3, axis_x, axis_y, r_min
``mobile`` float64[2]   depth, sigma of the steerable tweezer
``traps``  float64[k,4] cx, cy, depth, sigma of the static tweezers

The Hamiltonian is real symmetric in the two-atom basis, so it is carried as
a float array while wavefunctions are complex.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
GEOMETRY = 1
NONFINITE = 2


@njit(cache=True)
def hderivs(rx, ry, hp, mats, order, out):
    """Fill ``out[0]`` with H and, depending on ``order``, its derivatives with
    respect to the relative position rho = r2 - r1: ``out[1:3]`` = dH/drho_x,
    dH/drho_y and ``out[3:6]`` = d2H/dx2, d2H/dxdy, d2H/dy2.

    Returns the separation R.
    """
    c3, ex, ey = hp[0], hp[1], hp[2]
    px, py = ey, -ex
    c = rx * ex + ry * ey
    s = rx * px + ry * py
    r2 = c * c + s * s
    r = math.sqrt(r2)
    g = r2 ** -2.5
    A = mats[0]
    B = mats[1]
    X = mats[2]
    if order == 0:
        for i in range(4):
            for j in range(4):
                out[0, i, j] = c3 * (c * c * A[i, j] + s * s * B[i, j] + c * s * X[i, j]) * g
        return r
    g7 = g / r2
    gc = -5.0 * c * g7
    gs = -5.0 * s * g7
    g9 = g7 / r2
    gcc = -5.0 * g7 + 35.0 * c * c * g9
    gss = -5.0 * g7 + 35.0 * s * s * g9
    gcs = 35.0 * c * s * g9
    for i in range(4):
        for j in range(4):
            a = A[i, j]
            b = B[i, j]
            x = X[i, j]
            q = c * c * a + s * s * b + c * s * x
            qc = 2.0 * c * a + s * x
            qs = 2.0 * s * b + c * x
            out[0, i, j] = c3 * q * g
            hc = c3 * (qc * g + q * gc)
            hs = c3 * (qs * g + q * gs)
            out[1, i, j] = ex * hc + px * hs
            out[2, i, j] = ey * hc + py * hs
            if order > 1:
                hcc = c3 * (2.0 * a * g + 2.0 * qc * gc + q * gcc)
                hss = c3 * (2.0 * b * g + 2.0 * qs * gs + q * gss)
                hcs = c3 * (x * g + qc * gs + qs * gc + q * gcs)
                out[3, i, j] = ex * ex * hcc + 2.0 * ex * px * hcs + px * px * hss
                out[4, i, j] = ex * ey * hcc + (ex * py + px * ey) * hcs + px * py * hss
                out[5, i, j] = ey * ey * hcc + 2.0 * ey * py * hcs + py * py * hss
    return r


@njit(cache=True)
def _expect(M, psi):
    """Real part of psi^dagger M psi for real symmetric M."""
    acc = 0.0
    for i in range(4):
        v = 0.0j
        for j in range(4):
            v += M[i, j] * psi[j]
        acc += (psi[i].conjugate() * v).real
    return acc


@njit(cache=True)
def _bilinear(M, phi, psi):
    """phi^dagger M psi."""
    acc = 0.0j
    for i in range(4):
        v = 0.0j
        for j in range(4):
            v += M[i, j] * psi[j]
        acc += phi[i].conjugate() * v
    return acc


@njit(cache=True)
def trap_force(x, y, cx, cy, depth, sigma):
    """Force -grad U of an attractive Gaussian well U = -depth exp(-d^2/sigma^2)."""
    dx = x - cx
    dy = y - cy
    s2 = sigma * sigma
    e = math.exp(-(dx * dx + dy * dy) / s2)
    k = -2.0 * depth * e / s2
    return k * dx, k * dy


@njit(cache=True)
def trap_hessian(x, y, cx, cy, depth, sigma):
    """Second derivatives (Uxx, Uxy, Uyy) of the Gaussian well in r."""
    dx = x - cx
    dy = y - cy
    s2 = sigma * sigma
    e = math.exp(-(dx * dx + dy * dy) / s2)
    k = 2.0 * depth * e / s2
    return (k * (1.0 - 2.0 * dx * dx / s2), -k * 2.0 * dx * dy / s2,
            k * (1.0 - 2.0 * dy * dy / s2))


@njit(cache=True)
def _rhs(y, psi, U, ux, uy, mass, hp, mats, mobile, traps, want_prop, frozen,
         dy, dpsi, dU, work):
    """Joint right-hand side.  Returns (status, R)."""
    rx = y[2] - y[0]
    ry = y[3] - y[1]
    r = hderivs(rx, ry, hp, mats, 1, work)
    if r < hp[3]:
        return GEOMETRY, r
    H = work[0]
    f1x = _expect(work[1], psi)
    f1y = _expect(work[2], psi)
    if frozen:
        for k in range(8):
            dy[k] = 0.0
    else:
        dy[0] = y[4] / mass
        dy[1] = y[5] / mass
        dy[2] = y[6] / mass
        dy[3] = y[7] / mass
        for a in range(2):
            x = y[2 * a]
            yy = y[2 * a + 1]
            fx, fy = trap_force(x, yy, ux, uy, mobile[0], mobile[1])
            for t in range(traps.shape[0]):
                gx, gy = trap_force(x, yy, traps[t, 0], traps[t, 1], traps[t, 2], traps[t, 3])
                fx += gx
                fy += gy
            sgn = 1.0 if a == 0 else -1.0
            dy[4 + 2 * a] = fx + sgn * f1x
            dy[5 + 2 * a] = fy + sgn * f1y
    for i in range(4):
        v = 0.0j
        for j in range(4):
            v += H[i, j] * psi[j]
        dpsi[i] = -1j * v
    if want_prop:
        for i in range(4):
            for k in range(4):
                v = 0.0j
                for j in range(4):
                    v += H[i, j] * U[j, k]
                dU[i, k] = -1j * v
    return OK, r


@njit(cache=True)
def _accumulate_w(W, U, H, weight):
    """W += weight * U^dagger H U."""
    for i in range(4):
        for k in range(4):
            acc = 0.0j
            for j in range(4):
                hu = 0.0j
                for l in range(4):
                    hu += H[j, l] * U[l, k]
                acc += U[j, i].conjugate() * hu
            W[i, k] += weight * acc


@njit(cache=True, nogil=True)
def forward(y0, psi0, ux, uy, dt, nsteps, mass, hp, mats, mobile, traps,
            want_prop, frozen, damp, kick_sd, kicks):
    """Fixed-step RK4 on the joint classical/quantum state.

    ``ux``/``uy`` hold the mobile tweezer centre at every half step
    (length ``2*nsteps + 1``).  When ``kick_sd > 0`` or ``damp != 1`` the
    momenta receive an Ornstein-Uhlenbeck update after each RK4 step:
    ``p <- damp * p + kick_sd * kicks[n]``.
    """
    ys = np.zeros((nsteps + 1, 8))
    psis = np.zeros((nsteps + 1, 4), dtype=np.complex128)
    energy = np.zeros(nsteps + 1)
    U = np.eye(4, dtype=np.complex128)
    W = np.zeros((4, 4), dtype=np.complex128)
    work = np.zeros((6, 4, 4))
    stochastic = kick_sd > 0.0 or damp != 1.0

    y = y0.copy()
    psi = psi0.copy()
    k1 = np.zeros(8)
    k2 = np.zeros(8)
    k3 = np.zeros(8)
    k4 = np.zeros(8)
    q1 = np.zeros(4, dtype=np.complex128)
    q2 = np.zeros(4, dtype=np.complex128)
    q3 = np.zeros(4, dtype=np.complex128)
    q4 = np.zeros(4, dtype=np.complex128)
    P1 = np.zeros((4, 4), dtype=np.complex128)
    P2 = np.zeros((4, 4), dtype=np.complex128)
    P3 = np.zeros((4, 4), dtype=np.complex128)
    P4 = np.zeros((4, 4), dtype=np.complex128)
    yt = np.zeros(8)
    pt = np.zeros(4, dtype=np.complex128)
    Ut = np.zeros((4, 4), dtype=np.complex128)
    max_drift = 0.0
    h2 = 0.5 * dt

    for n in range(nsteps + 1):
        ys[n] = y
        psis[n] = psi
        st, r = _rhs(y, psi, U, ux[2 * n], uy[2 * n], mass, hp, mats, mobile, traps,
                     want_prop, frozen, k1, q1, P1, work)
        if st != OK:
            return ys, psis, energy, U, W, st, n, max_drift
        energy[n] = _expect(work[0], psi)
        if want_prop:
            wgt = h2 if (n == 0 or n == nsteps) else dt
            _accumulate_w(W, U, work[0], wgt)
        if n == nsteps:
            break
        # stage 2
        for k in range(8):
            yt[k] = y[k] + h2 * k1[k]
        for k in range(4):
            pt[k] = psi[k] + h2 * q1[k]
        if want_prop:
            for i in range(4):
                for j in range(4):
                    Ut[i, j] = U[i, j] + h2 * P1[i, j]
        st, r = _rhs(yt, pt, Ut, ux[2 * n + 1], uy[2 * n + 1], mass, hp, mats, mobile,
                     traps, want_prop, frozen, k2, q2, P2, work)
        if st != OK:
            return ys, psis, energy, U, W, st, n, max_drift
        # stage 3
        for k in range(8):
            yt[k] = y[k] + h2 * k2[k]
        for k in range(4):
            pt[k] = psi[k] + h2 * q2[k]
        if want_prop:
            for i in range(4):
                for j in range(4):
                    Ut[i, j] = U[i, j] + h2 * P2[i, j]
        st, r = _rhs(yt, pt, Ut, ux[2 * n + 1], uy[2 * n + 1], mass, hp, mats, mobile,
                     traps, want_prop, frozen, k3, q3, P3, work)
        if st != OK:
            return ys, psis, energy, U, W, st, n, max_drift
        # stage 4
        for k in range(8):
            yt[k] = y[k] + dt * k3[k]
        for k in range(4):
            pt[k] = psi[k] + dt * q3[k]
        if want_prop:
            for i in range(4):
                for j in range(4):
                    Ut[i, j] = U[i, j] + dt * P3[i, j]
        st, r = _rhs(yt, pt, Ut, ux[2 * n + 2], uy[2 * n + 2], mass, hp, mats, mobile,
                     traps, want_prop, frozen, k4, q4, P4, work)
        if st != OK:
            return ys, psis, energy, U, W, st, n, max_drift
        w6 = dt / 6.0
        for k in range(8):
            y[k] += w6 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        norm2 = 0.0
        for k in range(4):
            psi[k] += w6 * (q1[k] + 2.0 * q2[k] + 2.0 * q3[k] + q4[k])
            norm2 += psi[k].real ** 2 + psi[k].imag ** 2
        if want_prop:
            for i in range(4):
                for j in range(4):
                    U[i, j] += w6 * (P1[i, j] + 2.0 * P2[i, j] + 2.0 * P3[i, j] + P4[i, j])
        nrm = math.sqrt(norm2)
        drift = abs(nrm - 1.0)
        if drift > max_drift:
            max_drift = drift
        if drift > 1e-12:
            for k in range(4):
                psi[k] /= nrm
        if stochastic and not frozen:
            for k in range(4):
                y[4 + k] = damp * y[4 + k] + kick_sd * kicks[n, k]
        finite = True
        for k in range(8):
            if not math.isfinite(y[k]):
                finite = False
        for k in range(4):
            if not (math.isfinite(psi[k].real) and math.isfinite(psi[k].imag)):
                finite = False
        if not finite:
            ys[n + 1] = y
            return ys, psis, energy, U, W, NONFINITE, n + 1, max_drift
    return ys, psis, energy, U, W, OK, nsteps, max_drift


@njit(cache=True)
def _expm_herm(K, out):
    """out = exp(-i K) for Hermitian 4x4 K."""
    lam, V = np.linalg.eigh(K)
    for i in range(4):
        for j in range(4):
            acc = 0.0j
            for k in range(4):
                acc += V[i, k] * (math.cos(lam[k]) - 1j * math.sin(lam[k])) * V[j, k].conjugate()
            out[i, j] = acc


_GAUSS_C = math.sqrt(3.0) / 12.0


@njit(cache=True, nogil=True)
def prescribed(t, path, gauss, psi0, hp, mats, want_prop):
    """Fourth-order Magnus propagation along prescribed atom positions.

    ``t`` holds the (possibly non-uniform) nodes, ``path[k]`` the positions
    (r1x, r1y, r2x, r2y) at node k and ``gauss[k, 0:2]`` those at the two
    Gauss-Legendre points of interval k.  Each step applies the exact
    exponential of the two-point Magnus generator, so the evolution is
    unitary to round-off.
    """
    n = t.size - 1
    psis = np.zeros((n + 1, 4), dtype=np.complex128)
    energy = np.zeros(n + 1)
    U = np.eye(4, dtype=np.complex128)
    W = np.zeros((4, 4), dtype=np.complex128)
    work = np.zeros((6, 4, 4))
    H1 = np.zeros((4, 4))
    K = np.zeros((4, 4), dtype=np.complex128)
    E = np.zeros((4, 4), dtype=np.complex128)
    tmp = np.zeros((4, 4), dtype=np.complex128)
    psi = psi0.copy()
    pn = np.zeros(4, dtype=np.complex128)
    max_drift = 0.0
    for k in range(n + 1):
        psis[k] = psi
        r = hderivs(path[k, 2] - path[k, 0], path[k, 3] - path[k, 1], hp, mats, 0, work)
        if r < hp[3]:
            return psis, energy, U, W, GEOMETRY, k, max_drift
        energy[k] = _expect(work[0], psi)
        if want_prop:
            wl = 0.5 * (t[k] - t[k - 1]) if k > 0 else 0.0
            wr = 0.5 * (t[k + 1] - t[k]) if k < n else 0.0
            _accumulate_w(W, U, work[0], wl + wr)
        if k == n:
            break
        h = t[k + 1] - t[k]
        r = hderivs(gauss[k, 0, 2] - gauss[k, 0, 0], gauss[k, 0, 3] - gauss[k, 0, 1],
                    hp, mats, 0, work)
        if r < hp[3]:
            return psis, energy, U, W, GEOMETRY, k, max_drift
        for i in range(4):
            for j in range(4):
                H1[i, j] = work[0, i, j]
        r = hderivs(gauss[k, 1, 2] - gauss[k, 1, 0], gauss[k, 1, 3] - gauss[k, 1, 1],
                    hp, mats, 0, work)
        if r < hp[3]:
            return psis, energy, U, W, GEOMETRY, k, max_drift
        H2 = work[0]
        # Omega = -i K with K = h/2 (H1 + H2) - i c h^2 [H2, H1]
        for i in range(4):
            for j in range(4):
                comm = 0.0
                for l in range(4):
                    comm += H2[i, l] * H1[l, j] - H1[i, l] * H2[l, j]
                K[i, j] = 0.5 * h * (H1[i, j] + H2[i, j]) - 1j * _GAUSS_C * h * h * comm
        _expm_herm(K, E)
        norm2 = 0.0
        for i in range(4):
            acc = 0.0j
            for j in range(4):
                acc += E[i, j] * psi[j]
            pn[i] = acc
            norm2 += acc.real ** 2 + acc.imag ** 2
        for i in range(4):
            psi[i] = pn[i]
        drift = abs(math.sqrt(norm2) - 1.0)
        if drift > max_drift:
            max_drift = drift
        if want_prop:
            for i in range(4):
                for j in range(4):
                    acc = 0.0j
                    for l in range(4):
                        acc += E[i, l] * U[l, j]
                    tmp[i, j] = acc
            for i in range(4):
                for j in range(4):
                    U[i, j] = tmp[i, j]
    return psis, energy, U, W, OK, n, max_drift


@njit(cache=True)
def _adj_rhs(y, psi, ux, uy, lam, phi, lam_gamma, mass, hp, mats, mobile, traps,
             dlam, dphi, work):
    rx = y[2] - y[0]
    ry = y[3] - y[1]
    hderivs(rx, ry, hp, mats, 2, work)
    H = work[0]
    Kxx = _expect(work[3], psi)
    Kxy = _expect(work[4], psi)
    Kyy = _expect(work[5], psi)
    dx = lam[6] - lam[4]
    dyy = lam[7] - lam[5]
    kdx = Kxx * dx + Kxy * dyy
    kdy = Kxy * dx + Kyy * dyy
    imx = _bilinear(work[1], phi, psi).imag
    imy = _bilinear(work[2], phi, psi).imag
    ex_ = _expect(work[1], psi)
    ey_ = _expect(work[2], psi)
    for a in range(2):
        x = y[2 * a]
        yy = y[2 * a + 1]
        hxx, hxy, hyy = trap_hessian(x, yy, ux, uy, mobile[0], mobile[1])
        for t in range(traps.shape[0]):
            a1, a2, a3 = trap_hessian(x, yy, traps[t, 0], traps[t, 1], traps[t, 2], traps[t, 3])
            hxx += a1
            hxy += a2
            hyy += a3
        lpx = lam[4 + 2 * a]
        lpy = lam[5 + 2 * a]
        sgn = -1.0 if a == 0 else 1.0
        dlam[2 * a] = hxx * lpx + hxy * lpy + sgn * kdx - sgn * imx + sgn * lam_gamma * ex_
        dlam[2 * a + 1] = hxy * lpx + hyy * lpy + sgn * kdy - sgn * imy + sgn * lam_gamma * ey_
    for k in range(4):
        dlam[4 + k] = -lam[k] / mass
    for i in range(4):
        v = 0.0j
        s = 0.0j
        for j in range(4):
            v += H[i, j] * phi[j]
            s += (dx * work[1, i, j] + dyy * work[2, i, j] + lam_gamma * H[i, j]) * psi[j]
        dphi[i] = -1j * v + 2.0 * s


@njit(cache=True, nogil=True)
def adjoint(ys, psis, ux, uy, dt, nsteps, mass, hp, mats, mobile, traps,
            lam_gamma, lam_T, phi_T, direction):
    """RK4 sweep of the costate system with step ``2*dt``.

    Forward samples at steps n, n+1, n+2 serve as the stage points, so
    ``nsteps`` must be even.  ``ux``/``uy`` are the control at integer steps.
    ``direction = -1`` integrates from T down to 0 starting at ``lam_T``;
    ``direction = +1`` integrates upward from the values supplied in
    ``lam_T``/``phi_T`` taken as the t = 0 state.
    Returns costates at every even step.
    """
    m = nsteps // 2
    lams = np.zeros((m + 1, 8))
    phis = np.zeros((m + 1, 4), dtype=np.complex128)
    work = np.zeros((6, 4, 4))
    lam = lam_T.copy()
    phi = phi_T.copy()
    k = np.zeros((4, 8))
    q = np.zeros((4, 4), dtype=np.complex128)
    lt = np.zeros(8)
    pt = np.zeros(4, dtype=np.complex128)
    h = 2.0 * dt * direction
    coef = (0.0, 0.5, 0.5, 1.0)
    if direction < 0:
        start = m
    else:
        start = 0
    lams[start] = lam
    phis[start] = phi
    for step in range(m):
        if direction < 0:
            i0 = 2 * (m - step)
            idx = (i0, i0 - 1, i0 - 1, i0 - 2)
            out = m - step - 1
        else:
            i0 = 2 * step
            idx = (i0, i0 + 1, i0 + 1, i0 + 2)
            out = step + 1
        for s in range(4):
            for c in range(8):
                lt[c] = lam[c]
                if s > 0:
                    lt[c] += coef[s] * h * k[s - 1, c]
            for c in range(4):
                pt[c] = phi[c]
                if s > 0:
                    pt[c] += coef[s] * h * q[s - 1, c]
            n = idx[s]
            _adj_rhs(ys[n], psis[n], ux[n], uy[n], lt, pt, lam_gamma, mass, hp, mats,
                     mobile, traps, k[s], q[s], work)
        for c in range(8):
            lam[c] += h / 6.0 * (k[0, c] + 2.0 * k[1, c] + 2.0 * k[2, c] + k[3, c])
        for c in range(4):
            phi[c] += h / 6.0 * (q[0, c] + 2.0 * q[1, c] + 2.0 * q[2, c] + q[3, c])
        lams[out] = lam
        phis[out] = phi
    return lams, phis
