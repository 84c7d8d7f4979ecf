"""Compiled inner loops for the MAC-grid flow and the scalar transport.

Cell classes follow :class:`dognose.geometry.CellClass` (0 fluid, 1 solid,
2 inhale, 3 exhale, 4 tube). Positions inside the kernels are in cell units.
"""
import numpy as np
from numba import njit

FLUID, SOLID, INHALE, EXHALE, TUBE = 0, 1, 2, 3, 4


@njit(cache=True, inline="always")
def _clamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit(cache=True)
def _bilinear(f, fx, fy):
    nx, ny = f.shape
    fx = _clamp(fx, 0.0, nx - 1.0)
    fy = _clamp(fy, 0.0, ny - 1.0)
    i0 = min(int(fx), nx - 2)
    j0 = min(int(fy), ny - 2)
    tx = fx - i0
    ty = fy - j0
    a = f[i0, j0] * (1.0 - tx) + f[i0 + 1, j0] * tx
    b = f[i0, j0 + 1] * (1.0 - tx) + f[i0 + 1, j0 + 1] * tx
    return a * (1.0 - ty) + b * ty


@njit(cache=True)
def _velocity_at(u, v, x, y):
    # u[i, j] sits at (i, j + 1/2), v[i, j] at (i + 1/2, j)
    return _bilinear(u, x, y - 0.5), _bilinear(v, x - 0.5, y)


@njit(cache=True)
def advect_velocity(u, v, free_u, free_v, dt_over_h):
    """Semi-Lagrangian advection of both face components (RK2 backtrace)."""
    un = u.copy()
    vn = v.copy()
    nxu, nyu = u.shape
    for i in range(nxu):
        for j in range(nyu):
            if not free_u[i, j]:
                continue
            x = float(i)
            y = j + 0.5
            a, b = _velocity_at(u, v, x, y)
            xm = x - 0.5 * dt_over_h * a
            ym = y - 0.5 * dt_over_h * b
            a, b = _velocity_at(u, v, xm, ym)
            un[i, j] = _bilinear(u, x - dt_over_h * a, y - dt_over_h * b - 0.5)
    nxv, nyv = v.shape
    for i in range(nxv):
        for j in range(nyv):
            if not free_v[i, j]:
                continue
            x = i + 0.5
            y = float(j)
            a, b = _velocity_at(u, v, x, y)
            xm = x - 0.5 * dt_over_h * a
            ym = y - 0.5 * dt_over_h * b
            a, b = _velocity_at(u, v, xm, ym)
            vn[i, j] = _bilinear(v, x - dt_over_h * a - 0.5, y - dt_over_h * b)
    return un, vn


@njit(cache=True)
def diffuse_faces(f, free, coef):
    """Explicit 5-point Laplacian step on one face array, edges zero-gradient."""
    out = f.copy()
    nx, ny = f.shape
    for i in range(nx):
        for j in range(ny):
            if not free[i, j]:
                continue
            c = f[i, j]
            lap = (f[max(i - 1, 0), j] + f[min(i + 1, nx - 1), j]
                   + f[i, max(j - 1, 0)] + f[i, min(j + 1, ny - 1)] - 4.0 * c)
            out[i, j] = c + coef * lap
    return out


@njit(cache=True)
def divergence(u, v, h):
    nx, ny = v.shape[0], u.shape[1]
    d = np.empty((nx, ny))
    for i in range(nx):
        for j in range(ny):
            d[i, j] = (u[i + 1, j] - u[i, j] + v[i, j + 1] - v[i, j]) / h
    return d


@njit(cache=True)
def pressure_rhs(u, v, h, dt, fi, fj, pinned, rhs):
    """Fill ``rhs`` with fluid-cell divergence / dt; returns the largest |divergence|."""
    dmax = 0.0
    for k in range(fi.shape[0]):
        i = fi[k]
        j = fj[k]
        d = (u[i + 1, j] - u[i, j] + v[i, j + 1] - v[i, j]) / h
        if abs(d) > dmax:
            dmax = abs(d)
        rhs[k] = d / dt
    for k in range(pinned.shape[0]):
        rhs[pinned[k]] = 0.0
    return dmax


@njit(cache=True)
def apply_pressure(u, v, p, corr, idx, free_u, free_v, scale):
    """Add a pressure correction and subtract its gradient on free faces.

    Cells outside the domain (open ghosts) hold zero pressure.
    """
    nx, ny = idx.shape
    for i in range(nx):
        for j in range(ny):
            if idx[i, j] >= 0:
                p[i, j] += corr[idx[i, j]]
    for i in range(nx + 1):
        for j in range(ny):
            if free_u[i, j]:
                hi = corr[idx[i, j]] if i < nx and idx[i, j] >= 0 else 0.0
                lo = corr[idx[i - 1, j]] if i > 0 and idx[i - 1, j] >= 0 else 0.0
                u[i, j] -= scale * (hi - lo)
    for i in range(nx):
        for j in range(ny + 1):
            if free_v[i, j]:
                hi = corr[idx[i, j]] if j < ny and idx[i, j] >= 0 else 0.0
                lo = corr[idx[i, j - 1]] if j > 0 and idx[i, j - 1] >= 0 else 0.0
                v[i, j] -= scale * (hi - lo)


@njit(cache=True)
def outflow_rate(u, v, cls, h, diff, open_lrbt):
    """Largest per-cell fraction of content leaving per unit time.

    Explicit upwind plus diffusion stays non-negative when dt times this
    rate is at most one.
    """
    nx, ny = cls.shape
    worst = 0.0
    for i in range(nx):
        for j in range(ny):
            if cls[i, j] != FLUID:
                continue
            r = 0.0
            if u[i + 1, j] > 0.0:
                r += u[i + 1, j]
            if u[i, j] < 0.0:
                r -= u[i, j]
            if v[i, j + 1] > 0.0:
                r += v[i, j + 1]
            if v[i, j] < 0.0:
                r -= v[i, j]
            r /= h
            nf = 0
            if i > 0 and cls[i - 1, j] == FLUID:
                nf += 1
            if i < nx - 1 and cls[i + 1, j] == FLUID:
                nf += 1
            if j > 0 and cls[i, j - 1] == FLUID:
                nf += 1
            if j < ny - 1 and cls[i, j + 1] == FLUID:
                nf += 1
            r += diff * nf / (h * h)
            if r > worst:
                worst = r
    return worst


@njit(cache=True)
def _face_flux(cL, cR, kL, kR, w, hdt, ddt, cpL, cpR):
    """Mass (per thickness, conc*m^2) crossing a face from L to R.

    Returns (flux, to_tube, to_open). Fluxes into inhale ports leave the left
    or right cell; fluxes out of ports carry the conduit concentration.
    """
    if kL == FLUID and kR == FLUID:
        if w > 0.0:
            f = w * hdt * cL
        else:
            f = w * hdt * cR
        return f + ddt * (cL - cR), 0.0, 0.0
    if kL == FLUID:
        if kR == TUBE:
            if w > 0.0:
                f = w * hdt * cL
                return f, f, 0.0
            return 0.0, 0.0, 0.0
        if kR == INHALE:
            if w > 0.0:
                return w * hdt * cL, 0.0, 0.0
            return w * hdt * cpR, 0.0, 0.0
        if kR == -1:
            # open boundary, ambient air is clean
            if w > 0.0:
                f = w * hdt * cL
                return f, 0.0, f
            return 0.0, 0.0, 0.0
        return 0.0, 0.0, 0.0
    if kR == FLUID:
        if kL == TUBE:
            if w < 0.0:
                f = w * hdt * cR
                return f, -f, 0.0
            return 0.0, 0.0, 0.0
        if kL == INHALE:
            if w < 0.0:
                return w * hdt * cR, 0.0, 0.0
            return w * hdt * cpL, 0.0, 0.0
        if kL == -1:
            if w < 0.0:
                f = w * hdt * cR
                return f, 0.0, -f
            return 0.0, 0.0, 0.0
    return 0.0, 0.0, 0.0


@njit(cache=True)
def _conduit(c, u, v, cls, cp):
    """Flux-weighted upstream concentration of each inhale port cell."""
    nx, ny = cls.shape
    for i in range(nx):
        for j in range(ny):
            if cls[i, j] != INHALE:
                continue
            vol = 0.0
            acc = 0.0
            if i > 0 and cls[i - 1, j] == FLUID and u[i, j] > 0.0:
                vol += u[i, j]
                acc += u[i, j] * c[i - 1, j]
            if i < nx - 1 and cls[i + 1, j] == FLUID and u[i + 1, j] < 0.0:
                vol -= u[i + 1, j]
                acc -= u[i + 1, j] * c[i + 1, j]
            if j > 0 and cls[i, j - 1] == FLUID and v[i, j] > 0.0:
                vol += v[i, j]
                acc += v[i, j] * c[i, j - 1]
            if j < ny - 1 and cls[i, j + 1] == FLUID and v[i, j + 1] < 0.0:
                vol -= v[i, j + 1]
                acc -= v[i, j + 1] * c[i, j + 1]
            cp[i, j] = acc / vol if vol > 0.0 else 0.0


@njit(cache=True)
def upwind_step(c, u, v, cls, h, dt, diff, open_lrbt):
    """One conservative first-order upwind + explicit diffusion update.

    Returns the new field and the areal masses removed through the tube and
    through open boundaries (conc*m^2 per unit thickness).
    """
    nx, ny = cls.shape
    out = np.zeros((nx, ny))
    tube, opened, _ = _upwind(c, u, v, cls, h, dt, diff, open_lrbt,
                              np.zeros((nx, ny)), np.zeros((nx, ny)), out)
    return out, tube, opened


@njit(cache=True)
def _upwind(c, u, v, cls, h, dt, diff, open_lrbt, cp, dm, out):
    nx, ny = cls.shape
    _conduit(c, u, v, cls, cp)
    dm[:, :] = 0.0
    hdt = h * dt
    ddt = diff * dt
    tube = 0.0
    opened = 0.0
    for i in range(nx + 1):
        for j in range(ny):
            if i == 0:
                kL = -1 if open_lrbt[0] else SOLID
                cL = 0.0
                cpL = 0.0
            else:
                kL = cls[i - 1, j]
                cL = c[i - 1, j]
                cpL = cp[i - 1, j]
            if i == nx:
                kR = -1 if open_lrbt[1] else SOLID
                cR = 0.0
                cpR = 0.0
            else:
                kR = cls[i, j]
                cR = c[i, j]
                cpR = cp[i, j]
            if kL != FLUID and kR != FLUID:
                continue
            f, ft, fo = _face_flux(cL, cR, kL, kR, u[i, j], hdt, ddt, cpL, cpR)
            if kL == FLUID:
                dm[i - 1, j] -= f
            if kR == FLUID:
                dm[i, j] += f
            tube += ft
            opened += fo
    for i in range(nx):
        for j in range(ny + 1):
            if j == 0:
                kL = -1 if open_lrbt[2] else SOLID
                cL = 0.0
                cpL = 0.0
            else:
                kL = cls[i, j - 1]
                cL = c[i, j - 1]
                cpL = cp[i, j - 1]
            if j == ny:
                kR = -1 if open_lrbt[3] else SOLID
                cR = 0.0
                cpR = 0.0
            else:
                kR = cls[i, j]
                cR = c[i, j]
                cpR = cp[i, j]
            if kL != FLUID and kR != FLUID:
                continue
            f, ft, fo = _face_flux(cL, cR, kL, kR, v[i, j], hdt, ddt, cpL, cpR)
            if kL == FLUID:
                dm[i, j - 1] -= f
            if kR == FLUID:
                dm[i, j] += f
            tube += ft
            opened += fo
    inv = 1.0 / (h * h)
    lo = np.inf
    for i in range(nx):
        for j in range(ny):
            if cls[i, j] == FLUID:
                x = c[i, j] + dm[i, j] * inv
                if x < lo:
                    lo = x
                out[i, j] = x if x > 0.0 else 0.0
            else:
                out[i, j] = 0.0
    return tube, opened, lo


@njit(cache=True)
def advance_scalar(c, u, v, cls, h, diff, open_lrbt, thickness, dts,
                   src_i, src_j, src_rate, src_on, og_i, og_j, og_rate, og_on,
                   reg_i, reg_j, tau, background, reading):
    """Advance the scalar through ``len(dts)`` steps on a fixed flow.

    Each step transports, then adds source and outgassing mass, then relaxes
    the sensor reading toward the region mean. Returns the new field, the
    ledger increments ``[emitted, outgassed, removed_tube, removed_open]`` in
    micrograms, the final reading and the lowest fluid value seen before
    clamping.
    """
    nx, ny = cls.shape
    cur = c.copy()
    nxt = np.zeros((nx, ny))
    cp = np.zeros((nx, ny))
    dm = np.zeros((nx, ny))
    ledger = np.zeros(4)
    inv_area = 1.0 / (h * h * thickness)
    cmin = np.inf
    for n in range(dts.shape[0]):
        dt = dts[n]
        ft, fo, lo = _upwind(cur, u, v, cls, h, dt, diff, open_lrbt, cp, dm, nxt)
        if lo < cmin:
            cmin = lo
        ledger[2] += ft * thickness
        ledger[3] += fo * thickness
        if src_on[n] and src_rate > 0.0 and src_i.shape[0] > 0:
            add = src_rate * dt * inv_area / src_i.shape[0]
            for k in range(src_i.shape[0]):
                nxt[src_i[k], src_j[k]] += add
            ledger[0] += src_rate * dt
        if og_on[n] and og_rate > 0.0 and og_i.shape[0] > 0:
            add = og_rate * dt * inv_area / og_i.shape[0]
            for k in range(og_i.shape[0]):
                nxt[og_i[k], og_j[k]] += add
            ledger[1] += og_rate * dt
        tmp = cur
        cur = nxt
        nxt = tmp
        acc = 0.0
        for k in range(reg_i.shape[0]):
            acc += cur[reg_i[k], reg_j[k]]
        target = acc / reg_i.shape[0] + background if reg_i.shape[0] > 0 else background
        if tau > 0.0:
            reading = target + (reading - target) * np.exp(-dt / tau)
        else:
            reading = target
    return cur, ledger, reading, cmin


@njit(cache=True)
def _upstream(i, j, u, v, cls, ny, out_idx, out_w):
    """Cells feeding inhale port (i, j) and their flux weights; returns count."""
    nx = cls.shape[0]
    vol = 0.0
    n = 0
    if i > 0 and cls[i - 1, j] == FLUID and u[i, j] > 0.0:
        out_idx[n] = (i - 1) * ny + j
        out_w[n] = u[i, j]
        n += 1
    if i < nx - 1 and cls[i + 1, j] == FLUID and u[i + 1, j] < 0.0:
        out_idx[n] = (i + 1) * ny + j
        out_w[n] = -u[i + 1, j]
        n += 1
    if j > 0 and cls[i, j - 1] == FLUID and v[i, j] > 0.0:
        out_idx[n] = i * ny + j - 1
        out_w[n] = v[i, j]
        n += 1
    if j < ny - 1 and cls[i, j + 1] == FLUID and v[i, j + 1] < 0.0:
        out_idx[n] = i * ny + j + 1
        out_w[n] = -v[i, j + 1]
        n += 1
    for k in range(n):
        vol += out_w[k]
    for k in range(n):
        out_w[k] /= vol
    return n


@njit(cache=True)
def _emit(rows, cols, vals, n, r, col, val):
    rows[n] = r
    cols[n] = col
    vals[n] = val
    return n + 1


@njit(cache=True)
def _face_terms(kL, kR, iL, iR, pL, pR, w, h, diff, u, v, cls, ny,
                rows, cols, vals, n, tube, opened, up_idx, up_w):
    """COO entries of the areal mass rate across one face (L to R)."""
    if kL == FLUID and kR == FLUID:
        aL = h * max(w, 0.0) + diff
        aR = h * min(w, 0.0) - diff
        n = _emit(rows, cols, vals, n, iL, iL, -aL)
        n = _emit(rows, cols, vals, n, iL, iR, -aR)
        n = _emit(rows, cols, vals, n, iR, iL, aL)
        n = _emit(rows, cols, vals, n, iR, iR, aR)
        return n
    if kL == FLUID:
        if w > 0.0 and (kR == TUBE or kR == INHALE or kR == -1):
            n = _emit(rows, cols, vals, n, iL, iL, -h * w)
            if kR == TUBE:
                tube[iL] += h * w
            elif kR == -1:
                opened[iL] += h * w
        elif w < 0.0 and kR == INHALE:
            m = _upstream(pR // ny, pR % ny, u, v, cls, ny, up_idx, up_w)
            for k in range(m):
                n = _emit(rows, cols, vals, n, iL, up_idx[k], -h * w * up_w[k])
        return n
    if kR == FLUID:
        if w < 0.0 and (kL == TUBE or kL == INHALE or kL == -1):
            n = _emit(rows, cols, vals, n, iR, iR, h * w)
            if kL == TUBE:
                tube[iR] -= h * w
            elif kL == -1:
                opened[iR] -= h * w
        elif w > 0.0 and kL == INHALE:
            m = _upstream(pL // ny, pL % ny, u, v, cls, ny, up_idx, up_w)
            for k in range(m):
                n = _emit(rows, cols, vals, n, iR, up_idx[k], h * w * up_w[k])
    return n


@njit(cache=True)
def transport_operator(u, v, cls, h, diff, open_lrbt):
    """Frozen-flow transport as COO triplets over flattened cells.

    ``dc/dt = (rows, cols, vals) @ c / h^2``; ``tube`` and ``opened`` give the
    areal removal rate per unit concentration of each cell.
    """
    nx, ny = cls.shape
    cap = 16 * (nx + 1) * (ny + 1)
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    vals = np.empty(cap)
    tube = np.zeros(nx * ny)
    opened = np.zeros(nx * ny)
    up_idx = np.empty(4, np.int64)
    up_w = np.empty(4)
    n = 0
    for i in range(nx + 1):
        for j in range(ny):
            kL = (-1 if open_lrbt[0] else SOLID) if i == 0 else cls[i - 1, j]
            kR = (-1 if open_lrbt[1] else SOLID) if i == nx else cls[i, j]
            if kL != FLUID and kR != FLUID:
                continue
            iL = (i - 1) * ny + j
            iR = i * ny + j
            n = _face_terms(kL, kR, iL, iR, iL, iR, u[i, j], h, diff, u, v, cls, ny,
                            rows, cols, vals, n, tube, opened, up_idx, up_w)
    for i in range(nx):
        for j in range(ny + 1):
            kL = (-1 if open_lrbt[2] else SOLID) if j == 0 else cls[i, j - 1]
            kR = (-1 if open_lrbt[3] else SOLID) if j == ny else cls[i, j]
            if kL != FLUID and kR != FLUID:
                continue
            iL = i * ny + j - 1
            iR = i * ny + j
            n = _face_terms(kL, kR, iL, iR, iL, iR, v[i, j], h, diff, u, v, cls, ny,
                            rows, cols, vals, n, tube, opened, up_idx, up_w)
    return rows[:n], cols[:n], vals[:n], tube, opened


@njit(cache=True)
def advance_stencil(c, coef, ex_row, ex_col, ex_val, tube_w, open_w, h, thickness, dts,
                    src_i, src_j, src_rate, src_on, og_i, og_j, og_rate, og_on,
                    reg_i, reg_j, tau, background, reading):
    """Same contract as :func:`advance_scalar` on a precomputed operator.

    ``coef[0..4]`` hold the self, -x, +x, -y, +y couplings of each cell;
    the ``ex_*`` triplets (flattened indices) carry the non-local conduit
    couplings. Work arrays are padded by one ghost cell on every side.
    """
    nx, ny = c.shape
    cur = np.zeros((nx + 2, ny + 2))
    cur[1:-1, 1:-1] = c
    nxt = np.zeros((nx + 2, ny + 2))
    ledger = np.zeros(4)
    inv_h2 = 1.0 / (h * h)
    inv_area = 1.0 / (h * h * thickness)
    cmin = np.inf
    a0 = coef[0]
    aw = coef[1]
    ae = coef[2]
    a_s = coef[3]
    an = coef[4]
    for n in range(dts.shape[0]):
        dt = dts[n]
        k = dt * inv_h2
        ft = 0.0
        fo = 0.0
        for i in range(nx):
            for j in range(ny):
                ci = cur[i + 1, j + 1]
                ft += tube_w[i, j] * ci
                fo += open_w[i, j] * ci
                nxt[i + 1, j + 1] = ci + k * (a0[i, j] * ci + aw[i, j] * cur[i, j + 1]
                                              + ae[i, j] * cur[i + 2, j + 1]
                                              + a_s[i, j] * cur[i + 1, j]
                                              + an[i, j] * cur[i + 1, j + 2])
        for q in range(ex_row.shape[0]):
            r = ex_row[q]
            s = ex_col[q]
            nxt[r // ny + 1, r % ny + 1] += k * ex_val[q] * cur[s // ny + 1, s % ny + 1]
        ledger[2] += ft * dt * thickness
        ledger[3] += fo * dt * thickness
        if src_on[n] and src_rate > 0.0 and src_i.shape[0] > 0:
            add = src_rate * dt * inv_area / src_i.shape[0]
            for q in range(src_i.shape[0]):
                nxt[src_i[q] + 1, src_j[q] + 1] += add
            ledger[0] += src_rate * dt
        if og_on[n] and og_rate > 0.0 and og_i.shape[0] > 0:
            add = og_rate * dt * inv_area / og_i.shape[0]
            for q in range(og_i.shape[0]):
                nxt[og_i[q] + 1, og_j[q] + 1] += add
            ledger[1] += og_rate * dt
        for i in range(1, nx + 1):
            for j in range(1, ny + 1):
                x = nxt[i, j]
                if x < cmin:
                    cmin = x
                if x < 0.0:
                    nxt[i, j] = 0.0
        tmp = cur
        cur = nxt
        nxt = tmp
        acc = 0.0
        for q in range(reg_i.shape[0]):
            acc += cur[reg_i[q] + 1, reg_j[q] + 1]
        target = acc / reg_i.shape[0] + background if reg_i.shape[0] > 0 else background
        if tau > 0.0:
            reading = target + (reading - target) * np.exp(-dt / tau)
        else:
            reading = target
    return cur[1:-1, 1:-1].copy(), ledger, reading, cmin
