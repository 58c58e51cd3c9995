"""Hot inner-loop kernels, jitted via numba when enabled.

All kernels are plain loop code over float64 arrays so the same functions run
interpreted under the numpy fallback backend. Block matrices are 3x3 and the
per-strand system is strictly heptadiagonal: band storage is
``bands[off + 3, i] = A[i, i + off]`` for off in -3..3.

Status codes returned by the integrate kernels: 0 ok, -2 divergence detected,
k > 0 singular diagonal block at row k - 1.
"""

import math

import numpy as np

from .backend import njit

BAND_OFFSETS = 3    # heptadiagonal: offsets -3..3
DIVERGENCE_LIMIT = 1.0e6
DEGENERATE_EPS = 1e-12

STATUS_OK = 0
STATUS_DIVERGED = -2


@njit
def _inv3(m, out):
    """Exact 3x3 inverse via adjugate; returns 0.0 determinant on failure."""
    a = m[0, 0]; b = m[0, 1]; c = m[0, 2]
    d = m[1, 0]; e = m[1, 1]; f = m[1, 2]
    g = m[2, 0]; h = m[2, 1]; i = m[2, 2]
    co00 = e * i - f * h
    co01 = f * g - d * i
    co02 = d * h - e * g
    det = a * co00 + b * co01 + c * co02
    # Only exact/underflow zero or non-finite pivots are fatal: assembled
    # diagonals are identity-plus-PSD, so extreme anisotropy (dt^2 kappa/m
    # near 1e14) is legitimate and handled by iterative refinement
    if not math.isfinite(det) or abs(det) < 1e-300:
        return 0.0
    inv = 1.0 / det
    out[0, 0] = co00 * inv
    out[0, 1] = (c * h - b * i) * inv
    out[0, 2] = (b * f - c * e) * inv
    out[1, 0] = co01 * inv
    out[1, 1] = (a * i - c * g) * inv
    out[1, 2] = (c * d - a * f) * inv
    out[2, 0] = co02 * inv
    out[2, 1] = (b * g - a * h) * inv
    out[2, 2] = (a * e - b * d) * inv
    return det


@njit
def _matmul3(a, b, out):
    for r in range(3):
        for c in range(3):
            out[r, c] = a[r, 0] * b[0, c] + a[r, 1] * b[1, c] + a[r, 2] * b[2, c]


@njit
def _matvec3(a, v, out):
    for r in range(3):
        out[r] = a[r, 0] * v[0] + a[r, 1] * v[1] + a[r, 2] * v[2]


@njit
def assemble_strand(x, v, mass, plasticity,
                    rest_1, rest_2, rest_3,
                    k_edge, k_bend, k_tors, k_int, k_ang,
                    gamma, f_ext, y_int, y_ang, w_ghost,
                    anchor_k, anchor_pos, anchor_vel,
                    dt, pin_root, root_vel,
                    bands, rhs):
    """Assemble the semi-implicit heptadiagonal system for one strand.

    Ghost coupling contributes only to the diagonal and the rhs; the band
    structure therefore never exceeds |i - j| <= 3. Returns the number of
    degenerate (zero-length) springs encountered.
    """
    n = x.shape[0]
    degenerate = 0

    for bi in range(7):
        for i in range(n):
            for r in range(3):
                for c in range(3):
                    bands[bi, i, r, c] = 0.0
    sbuf = np.zeros((n, 3))
    bextra = np.zeros((n, 3))

    for i in range(n):
        cdiag = 1.0 + dt * gamma
        bands[3, i, 0, 0] = cdiag
        bands[3, i, 1, 1] = cdiag
        bands[3, i, 2, 2] = cdiag

    dt2 = dt * dt
    for off in range(1, 4):
        if off == 1:
            kap = k_edge
        elif off == 2:
            kap = k_bend
        else:
            kap = k_tors
        if kap <= 0.0:
            continue
        for i in range(n - off):
            j = i + off
            dx = x[j, 0] - x[i, 0]
            dy = x[j, 1] - x[i, 1]
            dz = x[j, 2] - x[i, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            if r < DEGENERATE_EPS:
                degenerate += 1
                continue
            inv = 1.0 / r
            ux = dx * inv
            uy = dy * inv
            uz = dz * inv
            if off == 1:
                rest = rest_1[i]
            elif off == 2:
                rest = rest_2[i]
            else:
                rest = rest_3[i]
            ext = kap * (r - rest)
            sbuf[i, 0] += ext * ux
            sbuf[i, 1] += ext * uy
            sbuf[i, 2] += ext * uz
            sbuf[j, 0] -= ext * ux
            sbuf[j, 1] -= ext * uy
            sbuf[j, 2] -= ext * uz
            ci = dt2 * kap / mass[i]
            cj = dt2 * kap / mass[j]
            u = (ux, uy, uz)
            for r_ in range(3):
                for c_ in range(3):
                    d_rc = u[r_] * u[c_]
                    bands[3 + off, i, r_, c_] -= ci * d_rc
                    bands[3 - off, j, r_, c_] -= cj * d_rc
                    bands[3, i, r_, c_] += ci * d_rc
                    bands[3, j, r_, c_] += cj * d_rc

    for i in range(n):
        if k_int > 0.0:
            ki = k_int * plasticity[i]
            dx = y_int[i, 0] - x[i, 0]
            dy = y_int[i, 1] - x[i, 1]
            dz = y_int[i, 2] - x[i, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            if r > 0.0:
                sbuf[i, 0] += ki * dx
                sbuf[i, 1] += ki * dy
                sbuf[i, 2] += ki * dz
                inv = 1.0 / r
                ux = dx * inv
                uy = dy * inv
                uz = dz * inv
                coef = dt2 * ki / mass[i]
                u = (ux, uy, uz)
                wx = w_ghost[i, 0]
                wy = w_ghost[i, 1]
                wz = w_ghost[i, 2]
                uw = ux * wx + uy * wy + uz * wz
                for r_ in range(3):
                    for c_ in range(3):
                        bands[3, i, r_, c_] += coef * u[r_] * u[c_]
                    bextra[i, r_] += coef * u[r_] * uw
        if k_ang > 0.0 and i >= 1:
            sax = x[i, 0] - x[i - 1, 0]
            say = x[i, 1] - x[i - 1, 1]
            saz = x[i, 2] - x[i - 1, 2]
            sgx = y_ang[i, 0] - x[i - 1, 0]
            sgy = y_ang[i, 1] - x[i - 1, 1]
            sgz = y_ang[i, 2] - x[i - 1, 2]
            lr = math.sqrt(sax * sax + say * say + saz * saz)
            lg = math.sqrt(sgx * sgx + sgy * sgy + sgz * sgz)
            if lr < DEGENERATE_EPS or lg < DEGENERATE_EPS:
                degenerate += 1
            else:
                cosang = (sax * sgx + say * sgy + saz * sgz) / (lr * lg)
                if cosang > 1.0:
                    cosang = 1.0
                elif cosang < -1.0:
                    cosang = -1.0
                dtheta = math.acos(cosang)
                dx = y_ang[i, 0] - x[i, 0]
                dy = y_ang[i, 1] - x[i, 1]
                dz = y_ang[i, 2] - x[i, 2]
                rd = math.sqrt(dx * dx + dy * dy + dz * dz)
                if rd > DEGENERATE_EPS:
                    inv = 1.0 / rd
                    ux = dx * inv
                    uy = dy * inv
                    uz = dz * inv
                    t = k_ang * dtheta
                    sbuf[i, 0] += t * ux
                    sbuf[i, 1] += t * uy
                    sbuf[i, 2] += t * uz
                    coef = dt2 * k_ang / mass[i]
                    u = (ux, uy, uz)
                    wx = w_ghost[i, 0]
                    wy = w_ghost[i, 1]
                    wz = w_ghost[i, 2]
                    uw = ux * wx + uy * wy + uz * wz
                    for r_ in range(3):
                        for c_ in range(3):
                            bands[3, i, r_, c_] += coef * u[r_] * u[c_]
                        bextra[i, r_] += coef * u[r_] * uw
        if anchor_k[i] > 0.0:
            ka = anchor_k[i]
            dx = anchor_pos[i, 0] - x[i, 0]
            dy = anchor_pos[i, 1] - x[i, 1]
            dz = anchor_pos[i, 2] - x[i, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            sbuf[i, 0] += ka * dx
            sbuf[i, 1] += ka * dy
            sbuf[i, 2] += ka * dz
            if r > 0.0:
                inv = 1.0 / r
                ux = dx * inv
                uy = dy * inv
                uz = dz * inv
                coef = dt2 * ka / mass[i]
                u = (ux, uy, uz)
                uw = ux * anchor_vel[i, 0] + uy * anchor_vel[i, 1] + uz * anchor_vel[i, 2]
                for r_ in range(3):
                    for c_ in range(3):
                        bands[3, i, r_, c_] += coef * u[r_] * u[c_]
                    bextra[i, r_] += coef * u[r_] * uw

    for i in range(n):
        cm = dt / mass[i]
        for r_ in range(3):
            rhs[i, r_] = v[i, r_] + cm * (f_ext[i, r_] + sbuf[i, r_]) + bextra[i, r_]

    if pin_root:
        for r_ in range(3):
            rhs[0, r_] = root_vel[r_]
            for c_ in range(3):
                bands[3, 0, r_, c_] = 1.0 if r_ == c_ else 0.0
        for off in range(1, 4):
            if off < n:
                # zero row-0 coupling and eliminate column 0 into the rhs
                for r_ in range(3):
                    for c_ in range(3):
                        bands[3 + off, 0, r_, c_] = 0.0
                blk = bands[3 - off, off]
                for r_ in range(3):
                    acc = 0.0
                    for c_ in range(3):
                        acc += blk[r_, c_] * root_vel[c_]
                    rhs[off, r_] -= acc
                for r_ in range(3):
                    for c_ in range(3):
                        bands[3 - off, off, r_, c_] = 0.0
    return degenerate


@njit
def assemble_strand_ms(x, v, mass,
                       rest_1, rest_2, rest_3,
                       k_edge, k_bend, k_tors,
                       gamma, f_ext,
                       dt, pin_root, root_vel,
                       bands, rhs):
    """Plain mass-spring assembly: identical to assemble_strand minus every
    ghost/anchor term. Kept as a separate path for the MS-equivalence check."""
    n = x.shape[0]
    degenerate = 0
    for bi in range(7):
        for i in range(n):
            for r in range(3):
                for c in range(3):
                    bands[bi, i, r, c] = 0.0
    sbuf = np.zeros((n, 3))
    for i in range(n):
        cdiag = 1.0 + dt * gamma
        bands[3, i, 0, 0] = cdiag
        bands[3, i, 1, 1] = cdiag
        bands[3, i, 2, 2] = cdiag
    dt2 = dt * dt
    for off in range(1, 4):
        if off == 1:
            kap = k_edge
        elif off == 2:
            kap = k_bend
        else:
            kap = k_tors
        if kap <= 0.0:
            continue
        for i in range(n - off):
            j = i + off
            dx = x[j, 0] - x[i, 0]
            dy = x[j, 1] - x[i, 1]
            dz = x[j, 2] - x[i, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            if r < DEGENERATE_EPS:
                degenerate += 1
                continue
            inv = 1.0 / r
            ux = dx * inv
            uy = dy * inv
            uz = dz * inv
            if off == 1:
                rest = rest_1[i]
            elif off == 2:
                rest = rest_2[i]
            else:
                rest = rest_3[i]
            ext = kap * (r - rest)
            sbuf[i, 0] += ext * ux
            sbuf[i, 1] += ext * uy
            sbuf[i, 2] += ext * uz
            sbuf[j, 0] -= ext * ux
            sbuf[j, 1] -= ext * uy
            sbuf[j, 2] -= ext * uz
            ci = dt2 * kap / mass[i]
            cj = dt2 * kap / mass[j]
            u = (ux, uy, uz)
            for r_ in range(3):
                for c_ in range(3):
                    d_rc = u[r_] * u[c_]
                    bands[3 + off, i, r_, c_] -= ci * d_rc
                    bands[3 - off, j, r_, c_] -= cj * d_rc
                    bands[3, i, r_, c_] += ci * d_rc
                    bands[3, j, r_, c_] += cj * d_rc
    for i in range(n):
        cm = dt / mass[i]
        for r_ in range(3):
            rhs[i, r_] = v[i, r_] + cm * (f_ext[i, r_] + sbuf[i, r_])
    if pin_root:
        for r_ in range(3):
            rhs[0, r_] = root_vel[r_]
            for c_ in range(3):
                bands[3, 0, r_, c_] = 1.0 if r_ == c_ else 0.0
        for off in range(1, 4):
            if off < n:
                for r_ in range(3):
                    for c_ in range(3):
                        bands[3 + off, 0, r_, c_] = 0.0
                blk = bands[3 - off, off]
                for r_ in range(3):
                    acc = 0.0
                    for c_ in range(3):
                        acc += blk[r_, c_] * root_vel[c_]
                    rhs[off, r_] -= acc
                for r_ in range(3):
                    for c_ in range(3):
                        bands[3 - off, off, r_, c_] = 0.0
    return degenerate


@njit
def factor_banded(bands, linv):
    """Block-LU factorization in place (Crout: L keeps the diagonal, U is
    unit upper); linv receives the diagonal block inverses.

    Returns 0 on success or row + 1 when a diagonal block is singular.
    """
    n = bands.shape[1]
    tmp = np.empty((3, 3))
    acc = np.empty((3, 3))
    for i in range(n):
        lo = i - 3
        if lo < 0:
            lo = 0
        # lower entries L[i, j], j = lo..i (stored over A)
        for j in range(lo, i + 1):
            klo = i - 3
            if j - 3 > klo:
                klo = j - 3
            if klo < 0:
                klo = 0
            for r in range(3):
                for c in range(3):
                    acc[r, c] = bands[j - i + 3, i, r, c]
            for k in range(klo, j):
                _matmul3(bands[k - i + 3, i], bands[j - k + 3, k], tmp)
                for r in range(3):
                    for c in range(3):
                        acc[r, c] -= tmp[r, c]
            for r in range(3):
                for c in range(3):
                    bands[j - i + 3, i, r, c] = acc[r, c]
        det = _inv3(bands[3, i], linv[i])
        if det == 0.0:
            return i + 1
        # upper entries U[i, j] = Linv (A[i, j] - sum L[i, k] U[k, j])
        hi = i + 3
        if hi > n - 1:
            hi = n - 1
        for j in range(i + 1, hi + 1):
            klo = i - 3
            if j - 3 > klo:
                klo = j - 3
            if klo < 0:
                klo = 0
            for r in range(3):
                for c in range(3):
                    acc[r, c] = bands[j - i + 3, i, r, c]
            for k in range(klo, i):
                _matmul3(bands[k - i + 3, i], bands[j - k + 3, k], tmp)
                for r in range(3):
                    for c in range(3):
                        acc[r, c] -= tmp[r, c]
            _matmul3(linv[i], acc, tmp)
            for r in range(3):
                for c in range(3):
                    bands[j - i + 3, i, r, c] = tmp[r, c]
    return 0


@njit
def substitute_banded(factored, linv, rhs, out):
    """Forward and backward sweeps over a factor_banded result."""
    n = rhs.shape[0]
    vec = np.empty(3)
    # forward sweep: y = Linv (b - L y)
    for i in range(n):
        lo = i - 3
        if lo < 0:
            lo = 0
        for r in range(3):
            vec[r] = rhs[i, r]
        for j in range(lo, i):
            blk = factored[j - i + 3, i]
            for r in range(3):
                vec[r] -= blk[r, 0] * out[j, 0] + blk[r, 1] * out[j, 1] + blk[r, 2] * out[j, 2]
        _matvec3(linv[i], vec, out[i])
    # backward sweep: x = y - U x
    for i in range(n - 1, -1, -1):
        hi = i + 3
        if hi > n - 1:
            hi = n - 1
        for j in range(i + 1, hi + 1):
            blk = factored[j - i + 3, i]
            for r in range(3):
                out[i, r] -= blk[r, 0] * out[j, 0] + blk[r, 1] * out[j, 1] + blk[r, 2] * out[j, 2]


@njit
def solve_banded_inplace(bands, rhs, out):
    """Exact heptadiagonal solve: factor, one forward/backward sweep pair,
    plus a single iterative refinement step reusing the factors (one banded
    matvec and one extra sweep pair).

    Destroys ``bands``/``rhs``. Returns 0 on success or row + 1 when a
    diagonal block is singular.
    """
    n = rhs.shape[0]
    factored = bands.copy()
    linv = np.empty((n, 3, 3))
    err = factor_banded(factored, linv)
    if err != 0:
        return err
    substitute_banded(factored, linv, rhs, out)
    resid = np.empty((n, 3))
    banded_matvec(bands, out, resid)
    for i in range(n):
        for r in range(3):
            resid[i, r] = rhs[i, r] - resid[i, r]
    delta = np.empty((n, 3))
    substitute_banded(factored, linv, resid, delta)
    for i in range(n):
        for r in range(3):
            out[i, r] += delta[i, r]
    return 0


@njit
def banded_matvec(bands, vec, out):
    """out = A @ vec for band-stored A (used for residual checks)."""
    n = vec.shape[0]
    for i in range(n):
        for r in range(3):
            out[i, r] = 0.0
        lo = i - 3
        if lo < 0:
            lo = 0
        hi = i + 3
        if hi > n - 1:
            hi = n - 1
        for j in range(lo, hi + 1):
            blk = bands[j - i + 3, i]
            for r in range(3):
                out[i, r] += blk[r, 0] * vec[j, 0] + blk[r, 1] * vec[j, 1] + blk[r, 2] * vec[j, 2]


@njit
def integrate_batch(xs, vs, masses, plasticity,
                    rest_1, rest_2, rest_3,
                    k_edge, k_bend, k_tors, k_int, k_ang,
                    gamma, f_ext,
                    y_int, y_ang, w_ghost, root_vel,
                    anchor_k, anchor_pos, anchor_vel,
                    dt_sub, n_substeps, pin_root,
                    status, degenerate):
    """Run the substep loop for a batch of equal-length strands in place.

    Ghost arrays are indexed per substep: y_int[m, s] is the integrity target
    of strand s at the end of substep m. Positions follow the backward-Euler
    rule X += dt' * V with V from the banded solve; the divergence detector
    aborts a strand when any coordinate leaves +-DIVERGENCE_LIMIT or goes
    non-finite.
    """
    n_strands = xs.shape[0]
    n = xs.shape[1]
    for s in range(n_strands):
        status[s] = STATUS_OK
        degenerate[s] = 0
        bands = np.empty((7, n, 3, 3))
        rhs = np.empty((n, 3))
        vout = np.empty((n, 3))
        for m in range(n_substeps):
            deg = assemble_strand(xs[s], vs[s], masses[s], plasticity[s],
                                  rest_1[s], rest_2[s], rest_3[s],
                                  k_edge[s], k_bend[s], k_tors[s], k_int[s], k_ang[s],
                                  gamma[s], f_ext[s],
                                  y_int[m, s], y_ang[m, s], w_ghost[m, s],
                                  anchor_k[s], anchor_pos[s], anchor_vel[s],
                                  dt_sub, pin_root, root_vel[m, s],
                                  bands, rhs)
            degenerate[s] += deg
            err = solve_banded_inplace(bands, rhs, vout)
            if err != 0:
                status[s] = err
                break
            bad = False
            for i in range(n):
                for r in range(3):
                    vs[s, i, r] = vout[i, r]
                    xs[s, i, r] += dt_sub * vout[i, r]
                    val = xs[s, i, r]
                    if not math.isfinite(val) or abs(val) > DIVERGENCE_LIMIT:
                        bad = True
            if bad:
                status[s] = STATUS_DIVERGED
                break


@njit
def ftl_batch(xs, vs, rest_1, dt, tol, max_passes, strain_out):
    """Follow-the-leader inextensibility projection, root to tip.

    Skips strands already within tolerance; velocities absorb the position
    change as V += dX / dt. strain_out[s] reports the post-projection maximum
    relative edge error.
    """
    n_strands = xs.shape[0]
    n = xs.shape[1]
    for s in range(n_strands):
        x_old = np.empty((n, 3))
        for i in range(n):
            for r in range(3):
                x_old[i, r] = xs[s, i, r]
        for _ in range(max_passes):
            err = 0.0
            for i in range(n - 1):
                dx = xs[s, i + 1, 0] - xs[s, i, 0]
                dy = xs[s, i + 1, 1] - xs[s, i, 1]
                dz = xs[s, i + 1, 2] - xs[s, i, 2]
                r = math.sqrt(dx * dx + dy * dy + dz * dz)
                rel = abs(r / rest_1[s, i] - 1.0)
                if rel > err:
                    err = rel
            if err <= tol:
                break
            px = 1.0
            py = 0.0
            pz = 0.0
            for i in range(1, n):
                dx = xs[s, i, 0] - xs[s, i - 1, 0]
                dy = xs[s, i, 1] - xs[s, i - 1, 1]
                dz = xs[s, i, 2] - xs[s, i - 1, 2]
                r = math.sqrt(dx * dx + dy * dy + dz * dz)
                if r > DEGENERATE_EPS:
                    inv = 1.0 / r
                    px = dx * inv
                    py = dy * inv
                    pz = dz * inv
                # degenerate edge falls back to the previous direction
                rest = rest_1[s, i - 1]
                xs[s, i, 0] = xs[s, i - 1, 0] + rest * px
                xs[s, i, 1] = xs[s, i - 1, 1] + rest * py
                xs[s, i, 2] = xs[s, i - 1, 2] + rest * pz
        err = 0.0
        for i in range(n - 1):
            dx = xs[s, i + 1, 0] - xs[s, i, 0]
            dy = xs[s, i + 1, 1] - xs[s, i, 1]
            dz = xs[s, i + 1, 2] - xs[s, i, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            rel = abs(r / rest_1[s, i] - 1.0)
            if rel > err:
                err = rel
        strain_out[s] = err
        inv_dt = 1.0 / dt
        for i in range(n):
            for r in range(3):
                vs[s, i, r] += (xs[s, i, r] - x_old[i, r]) * inv_dt


@njit
def scatter_trilinear(points, masses, velocities, origin, h, nx, ny, nz,
                      grid_mass, grid_momentum):
    """Scatter samples onto cell centers with trilinear weights.

    Out-of-bounds samples are skipped and counted. Accumulation order follows
    the sample order, keeping results independent of any outer parallelism.
    """
    skipped = 0
    k = points.shape[0]
    for p in range(k):
        ux = (points[p, 0] - origin[0]) / h - 0.5
        uy = (points[p, 1] - origin[1]) / h - 0.5
        uz = (points[p, 2] - origin[2]) / h - 0.5
        if not (0.0 <= ux <= nx - 1.0 and 0.0 <= uy <= ny - 1.0 and 0.0 <= uz <= nz - 1.0):
            skipped += 1
            continue
        i0 = int(math.floor(ux))
        j0 = int(math.floor(uy))
        k0 = int(math.floor(uz))
        if i0 > nx - 2:
            i0 = nx - 2
        if j0 > ny - 2:
            j0 = ny - 2
        if k0 > nz - 2:
            k0 = nz - 2
        fx = ux - i0
        fy = uy - j0
        fz = uz - k0
        m = masses[p]
        vx = velocities[p, 0]
        vy = velocities[p, 1]
        vz = velocities[p, 2]
        for di in range(2):
            wi = fx if di == 1 else 1.0 - fx
            for dj in range(2):
                wj = fy if dj == 1 else 1.0 - fy
                for dk in range(2):
                    wk = fz if dk == 1 else 1.0 - fz
                    w = wi * wj * wk
                    if w == 0.0:
                        continue
                    wm = w * m
                    grid_mass[i0 + di, j0 + dj, k0 + dk] += wm
                    grid_momentum[i0 + di, j0 + dj, k0 + dk, 0] += wm * vx
                    grid_momentum[i0 + di, j0 + dj, k0 + dk, 1] += wm * vy
                    grid_momentum[i0 + di, j0 + dj, k0 + dk, 2] += wm * vz
    return skipped


@njit
def gather_trilinear(points, origin, h, nx, ny, nz, grid_velocity, grid_mass,
                     out_velocity, out_mass):
    """Trilinear gather of grid velocity (and sampled mass) at points.

    Out-of-bounds points gather zero mass, which callers treat as 'leave the
    particle velocity unchanged'.
    """
    k = points.shape[0]
    for p in range(k):
        out_velocity[p, 0] = 0.0
        out_velocity[p, 1] = 0.0
        out_velocity[p, 2] = 0.0
        out_mass[p] = 0.0
        ux = (points[p, 0] - origin[0]) / h - 0.5
        uy = (points[p, 1] - origin[1]) / h - 0.5
        uz = (points[p, 2] - origin[2]) / h - 0.5
        if not (0.0 <= ux <= nx - 1.0 and 0.0 <= uy <= ny - 1.0 and 0.0 <= uz <= nz - 1.0):
            continue
        i0 = int(math.floor(ux))
        j0 = int(math.floor(uy))
        k0 = int(math.floor(uz))
        if i0 > nx - 2:
            i0 = nx - 2
        if j0 > ny - 2:
            j0 = ny - 2
        if k0 > nz - 2:
            k0 = nz - 2
        fx = ux - i0
        fy = uy - j0
        fz = uz - k0
        for di in range(2):
            wi = fx if di == 1 else 1.0 - fx
            for dj in range(2):
                wj = fy if dj == 1 else 1.0 - fy
                for dk in range(2):
                    wk = fz if dk == 1 else 1.0 - fz
                    w = wi * wj * wk
                    if w == 0.0:
                        continue
                    out_velocity[p, 0] += w * grid_velocity[i0 + di, j0 + dj, k0 + dk, 0]
                    out_velocity[p, 1] += w * grid_velocity[i0 + di, j0 + dj, k0 + dk, 1]
                    out_velocity[p, 2] += w * grid_velocity[i0 + di, j0 + dj, k0 + dk, 2]
                    out_mass[p] += w * grid_mass[i0 + di, j0 + dj, k0 + dk]


@njit
def pairwise_impulses(points, velocities, masses, strand_ids,
                      radius, stiffness, d_pos, d_vel):
    """Separating impulses between close particles of different strands.

    Particles are bucketed on a dense cell grid (cells >= radius per axis)
    built with a stable counting sort; traversal order is a pure function of
    the input, so results are deterministic for any worker count.
    Equal-and-opposite momentum exchange per pair.
    """
    k = points.shape[0]
    if k == 0 or radius <= 0.0:
        return 0
    minx = points[0, 0]
    miny = points[0, 1]
    minz = points[0, 2]
    maxx = minx
    maxy = miny
    maxz = minz
    for p in range(1, k):
        if points[p, 0] < minx:
            minx = points[p, 0]
        if points[p, 1] < miny:
            miny = points[p, 1]
        if points[p, 2] < minz:
            minz = points[p, 2]
        if points[p, 0] > maxx:
            maxx = points[p, 0]
        if points[p, 1] > maxy:
            maxy = points[p, 1]
        if points[p, 2] > maxz:
            maxz = points[p, 2]
    # per-axis cell sizes >= radius keep the 27-cell search exact; the axis
    # cap and the total-cell budget (~4 cells per particle) keep the dense
    # cell table proportional to the workload, not the spatial extent
    cell_x = radius
    cell_y = radius
    cell_z = radius
    if (maxx - minx) / 64.0 > cell_x:
        cell_x = (maxx - minx) / 64.0
    if (maxy - miny) / 64.0 > cell_y:
        cell_y = (maxy - miny) / 64.0
    if (maxz - minz) / 64.0 > cell_z:
        cell_z = (maxz - minz) / 64.0
    est = ((int((maxx - minx) / cell_x) + 1)
           * (int((maxy - miny) / cell_y) + 1)
           * (int((maxz - minz) / cell_z) + 1))
    budget = 4 * k + 1024
    if est > budget:
        f = (est / budget) ** (1.0 / 3.0)
        cell_x *= f
        cell_y *= f
        cell_z *= f
    inv_x = 1.0 / cell_x
    inv_y = 1.0 / cell_y
    inv_z = 1.0 / cell_z
    cix = np.empty(k, dtype=np.int64)
    ciy = np.empty(k, dtype=np.int64)
    ciz = np.empty(k, dtype=np.int64)
    maxcx = 0
    maxcy = 0
    maxcz = 0
    for p in range(k):
        cix[p] = int((points[p, 0] - minx) * inv_x)
        ciy[p] = int((points[p, 1] - miny) * inv_y)
        ciz[p] = int((points[p, 2] - minz) * inv_z)
        if cix[p] > maxcx:
            maxcx = cix[p]
        if ciy[p] > maxcy:
            maxcy = ciy[p]
        if ciz[p] > maxcz:
            maxcz = ciz[p]
    ncx = maxcx + 1
    ncy = maxcy + 1
    ncz = maxcz + 1
    ncells = ncx * ncy * ncz
    cell_of = np.empty(k, dtype=np.int64)
    counts = np.zeros(ncells + 1, dtype=np.int64)
    for p in range(k):
        c = (cix[p] * ncy + ciy[p]) * ncz + ciz[p]
        cell_of[p] = c
        counts[c + 1] += 1
    for c in range(ncells):
        counts[c + 1] += counts[c]
    order = np.empty(k, dtype=np.int64)
    cursor = counts.copy()
    for p in range(k):  # index order keeps buckets sorted by particle index
        c = cell_of[p]
        order[cursor[c]] = p
        cursor[c] += 1
    # cell-sorted copies make the bucket scans contiguous in memory
    sx = np.empty(k)
    sy = np.empty(k)
    sz = np.empty(k)
    sid = np.empty(k, dtype=np.int64)
    for idx in range(k):
        p = order[idx]
        sx[idx] = points[p, 0]
        sy[idx] = points[p, 1]
        sz[idx] = points[p, 2]
        sid[idx] = strand_ids[p]
    r2 = radius * radius
    npairs = 0
    for ai in range(k):
        a = order[ai]
        ax = sx[ai]
        ay = sy[ai]
        az = sz[ai]
        aid = sid[ai]
        ca_x = cix[a]
        ca_y = ciy[a]
        ca_z = ciz[a]
        for dxc in range(-1, 2):
            bx = ca_x + dxc
            if bx < 0 or bx >= ncx:
                continue
            for dyc in range(-1, 2):
                by = ca_y + dyc
                if by < 0 or by >= ncy:
                    continue
                for dzc in range(-1, 2):
                    bz = ca_z + dzc
                    if bz < 0 or bz >= ncz:
                        continue
                    c = (bx * ncy + by) * ncz + bz
                    for idx in range(counts[c], counts[c + 1]):
                        b = order[idx]
                        if b <= a:
                            continue
                        if sid[idx] == aid:
                            continue
                        dx = ax - sx[idx]
                        dy = ay - sy[idx]
                        dz = az - sz[idx]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 >= r2 or d2 < 1e-24:
                            continue
                        dist = math.sqrt(d2)
                        inv = 1.0 / dist
                        nxv = dx * inv
                        nyv = dy * inv
                        nzv = dz * inv
                        pen = radius - dist
                        ma = masses[a]
                        mb = masses[b]
                        wa = mb / (ma + mb)
                        wb = ma / (ma + mb)
                        corr = stiffness * pen
                        d_pos[a, 0] += corr * wa * nxv
                        d_pos[a, 1] += corr * wa * nyv
                        d_pos[a, 2] += corr * wa * nzv
                        d_pos[b, 0] -= corr * wb * nxv
                        d_pos[b, 1] -= corr * wb * nyv
                        d_pos[b, 2] -= corr * wb * nzv
                        vrel = ((velocities[a, 0] - velocities[b, 0]) * nxv
                                + (velocities[a, 1] - velocities[b, 1]) * nyv
                                + (velocities[a, 2] - velocities[b, 2]) * nzv)
                        if vrel < 0.0:
                            dv = stiffness * vrel
                            d_vel[a, 0] -= dv * wa * nxv
                            d_vel[a, 1] -= dv * wa * nyv
                            d_vel[a, 2] -= dv * wa * nzv
                            d_vel[b, 0] += dv * wb * nxv
                            d_vel[b, 1] += dv * wb * nyv
                            d_vel[b, 2] += dv * wb * nzv
                        npairs += 1
    return npairs


@njit
def diffuse_pass(mass, vel, strength, out):
    """One mass-weighted 7-point diffusion pass (self + 6 face neighbors).

    Zero-mass cells stay zero; callers restore total momentum afterwards.
    """
    nx, ny, nz = mass.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                m0 = mass[i, j, k]
                if m0 <= 1e-12:
                    out[i, j, k, 0] = 0.0
                    out[i, j, k, 1] = 0.0
                    out[i, j, k, 2] = 0.0
                    continue
                den = m0
                nx_ = m0 * vel[i, j, k, 0]
                ny_ = m0 * vel[i, j, k, 1]
                nz_ = m0 * vel[i, j, k, 2]
                if i > 0:
                    m = mass[i - 1, j, k]
                    den += m
                    nx_ += m * vel[i - 1, j, k, 0]
                    ny_ += m * vel[i - 1, j, k, 1]
                    nz_ += m * vel[i - 1, j, k, 2]
                if i < nx - 1:
                    m = mass[i + 1, j, k]
                    den += m
                    nx_ += m * vel[i + 1, j, k, 0]
                    ny_ += m * vel[i + 1, j, k, 1]
                    nz_ += m * vel[i + 1, j, k, 2]
                if j > 0:
                    m = mass[i, j - 1, k]
                    den += m
                    nx_ += m * vel[i, j - 1, k, 0]
                    ny_ += m * vel[i, j - 1, k, 1]
                    nz_ += m * vel[i, j - 1, k, 2]
                if j < ny - 1:
                    m = mass[i, j + 1, k]
                    den += m
                    nx_ += m * vel[i, j + 1, k, 0]
                    ny_ += m * vel[i, j + 1, k, 1]
                    nz_ += m * vel[i, j + 1, k, 2]
                if k > 0:
                    m = mass[i, j, k - 1]
                    den += m
                    nx_ += m * vel[i, j, k - 1, 0]
                    ny_ += m * vel[i, j, k - 1, 1]
                    nz_ += m * vel[i, j, k - 1, 2]
                if k < nz - 1:
                    m = mass[i, j, k + 1]
                    den += m
                    nx_ += m * vel[i, j, k + 1, 0]
                    ny_ += m * vel[i, j, k + 1, 1]
                    nz_ += m * vel[i, j, k + 1, 2]
                inv = 1.0 / den
                s1 = 1.0 - strength
                out[i, j, k, 0] = s1 * vel[i, j, k, 0] + strength * nx_ * inv
                out[i, j, k, 1] = s1 * vel[i, j, k, 1] + strength * ny_ * inv
                out[i, j, k, 2] = s1 * vel[i, j, k, 2] + strength * nz_ * inv


@njit
def _point_triangle_dist_sq(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        qx = apx - t * abx
        qy = apy - t * aby
        qz = apz - t * abz
        return qx * qx + qy * qy + qz * qz
    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        qx = apx - t * acx
        qy = apy - t * acy
        qz = apz - t * acz
        return qx * qx + qy * qy + qz * qz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = (bx + t * (cx - bx)) - px
        qy = (by + t * (cy - by)) - py
        qz = (bz + t * (cz - bz)) - pz
        return qx * qx + qy * qy + qz * qz
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = (ax + abx * v + acx * w) - px
    qy = (ay + aby * v + acy * w) - py
    qz = (az + abz * v + acz * w) - pz
    return qx * qx + qy * qy + qz * qz


@njit
def mesh_unsigned_distance(nodes, tri_a, tri_b, tri_c, out):
    """Exact unsigned distance from every node to the triangle soup."""
    n = nodes.shape[0]
    t = tri_a.shape[0]
    for i in range(n):
        px = nodes[i, 0]
        py = nodes[i, 1]
        pz = nodes[i, 2]
        best = 1e300
        for j in range(t):
            d2 = _point_triangle_dist_sq(px, py, pz,
                                         tri_a[j, 0], tri_a[j, 1], tri_a[j, 2],
                                         tri_b[j, 0], tri_b[j, 1], tri_b[j, 2],
                                         tri_c[j, 0], tri_c[j, 1], tri_c[j, 2])
            if d2 < best:
                best = d2
        out[i] = math.sqrt(best)


@njit
def parity_inside(xs_axis, ys_axis, zs_axis, tri_a, tri_b, tri_c, jitter, inside):
    """Inside classification by x-ray crossing parity, per (y, z) node column.

    The ray origin is jittered off exact edge alignments; crossings use strict
    barycentric interior tests, adequate for closed meshes.
    """
    nx = xs_axis.shape[0]
    ny = ys_axis.shape[0]
    nz = zs_axis.shape[0]
    t = tri_a.shape[0]
    crossings = np.empty(t)
    for j in range(ny):
        yq = ys_axis[j] + jitter
        for k in range(nz):
            zq = zs_axis[k] + jitter * 0.7071067811865476
            ncross = 0
            for m in range(t):
                ay = tri_a[m, 1]
                az = tri_a[m, 2]
                by = tri_b[m, 1]
                bz = tri_b[m, 2]
                cy = tri_c[m, 1]
                cz = tri_c[m, 2]
                det = (by - ay) * (cz - az) - (bz - az) * (cy - ay)
                if abs(det) < 1e-18:
                    continue
                inv = 1.0 / det
                u = ((yq - ay) * (cz - az) - (zq - az) * (cy - ay)) * inv
                v = ((by - ay) * (zq - az) - (bz - az) * (yq - ay)) * inv
                if u > 0.0 and v > 0.0 and u + v < 1.0:
                    xc = tri_a[m, 0] + u * (tri_b[m, 0] - tri_a[m, 0]) + v * (tri_c[m, 0] - tri_a[m, 0])
                    crossings[ncross] = xc
                    ncross += 1
            for i in range(nx):
                count = 0
                for m in range(ncross):
                    if crossings[m] > xs_axis[i]:
                        count += 1
                inside[i, j, k] = (count % 2) == 1
