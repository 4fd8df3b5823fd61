# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics are defined by ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor
from libc.stdlib cimport malloc, realloc, free, qsort
from libc.stdint cimport uint64_t, int64_t, int32_t

from ._pykernels import SamplingBudgetError

cnp.import_array()

cdef double SCALE = <double>(1 << 30)
cdef double INV53 = 1.0 / <double>(1ULL << 53)
cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t idx) noexcept nogil:
    return <double>(_mix(key + (idx + 1) * GAMMA) >> 11) * INV53


cdef inline bint _pip(const double[:, ::1] ring, double px, double py) noexcept nogil:
    cdef Py_ssize_t m = ring.shape[0]
    cdef Py_ssize_t i, j
    cdef bint inside = False
    cdef double xi, yi, xj, yj, cross, xint
    for i in range(m):
        j = i + 1
        if j == m:
            j = 0
        xi = ring[i, 0]
        yi = ring[i, 1]
        xj = ring[j, 0]
        yj = ring[j, 1]
        cross = (xj - xi) * (py - yi) - (yj - yi) * (px - xi)
        if (cross == 0.0 and px >= (xi if xi < xj else xj) and px <= (xj if xi < xj else xi)
                and py >= (yi if yi < yj else yj) and py <= (yj if yi < yj else yi)):
            return True
        if (yi > py) != (yj > py):
            xint = xi + (py - yi) * (xj - xi) / (yj - yi)
            if px < xint:
                inside = not inside
    return inside


def points_in_polygon(ring, pts):
    cdef const double[:, ::1] r = np.ascontiguousarray(ring, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = p.shape[0], i
    out = np.zeros(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _pip(r, p[i, 0], p[i, 1])
    return out


ctypedef struct Event:
    double t
    int32_t d
    int32_t seq


cdef int _cmp_event(const void* a, const void* b) noexcept nogil:
    cdef const Event* ea = <const Event*>a
    cdef const Event* eb = <const Event*>b
    if ea.t < eb.t:
        return -1
    if ea.t > eb.t:
        return 1
    return ea.seq - eb.seq


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    return (x > y) - (x < y)


def ray_tables(ring, centers, cos_a, sin_a, double r_limit):
    cdef const double[:, ::1] rg = np.ascontiguousarray(ring, dtype=np.float64)
    cdef const double[:, ::1] cs = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    cdef const double[::1] ca = np.ascontiguousarray(cos_a, dtype=np.float64)
    cdef const double[::1] sa = np.ascontiguousarray(sin_a, dtype=np.float64)
    cdef Py_ssize_t n = cs.shape[0], m = rg.shape[0], n_rays = ca.shape[0]
    offsets = np.zeros(n + 1, dtype=np.int64)
    base = np.zeros(n, dtype=np.int32)
    cdef int64_t[::1] off = offsets
    cdef int32_t[::1] bs = base

    cdef Py_ssize_t cap = 1024, used = 0, c, k, e, j, nh, start
    cdef Event* ev = <Event*>malloc(cap * sizeof(Event))
    cdef double* hits = <double*>malloc((m + 1) * sizeof(double))
    cdef double cx, cy, s_a, s_b, d_a, d_b, s, t, ax, ay, bx, by
    cdef int n_even, cum
    cdef Event* tmp
    if ev == NULL or hits == NULL:
        free(ev)
        free(hits)
        raise MemoryError()
    out_d = []
    out_i = []
    try:
        for c in range(n):
            cx = cs[c, 0]
            cy = cs[c, 1]
            used = 0
            n_even = 0
            with nogil:
                for k in range(n_rays):
                    nh = 0
                    for e in range(m):
                        j = e + 1
                        if j == m:
                            j = 0
                        ax = rg[e, 0]
                        ay = rg[e, 1]
                        bx = rg[j, 0]
                        by = rg[j, 1]
                        s_a = ca[k] * (ay - cy) - sa[k] * (ax - cx)
                        s_b = ca[k] * (by - cy) - sa[k] * (bx - cx)
                        if (s_a > 0.0) != (s_b > 0.0):
                            d_a = ca[k] * (ax - cx) + sa[k] * (ay - cy)
                            d_b = ca[k] * (bx - cx) + sa[k] * (by - cy)
                            s = s_a / (s_a - s_b)
                            t = d_a + s * (d_b - d_a)
                            if t > 0.0:
                                hits[nh] = t
                                nh += 1
                    if nh % 2 == 0:
                        n_even += 1
                    if nh > 1:
                        qsort(hits, nh, sizeof(double), _cmp_double)
                    for e in range(nh):
                        if hits[e] > r_limit:
                            break
                        if used == cap:
                            cap *= 2
                            tmp = <Event*>realloc(ev, cap * sizeof(Event))
                            if tmp == NULL:
                                with gil:
                                    raise MemoryError()
                            ev = tmp
                        ev[used].t = hits[e]
                        # rank e+1; remaining crossings nh-(e+1)
                        ev[used].d = -1 if (nh - e - 1) % 2 == 0 else 1
                        ev[used].seq = <int32_t>used
                        used += 1
                if used > 1:
                    qsort(ev, used, sizeof(Event), _cmp_event)
            bs[c] = <int32_t>(n_rays - n_even)
            dd = np.empty(used, dtype=np.float64)
            ii = np.empty(used, dtype=np.int32)
            fill_events(ev, used, bs[c], dd, ii)
            out_d.append(dd)
            out_i.append(ii)
            off[c + 1] = off[c] + used
    finally:
        free(ev)
        free(hits)
    dist = np.concatenate(out_d) if out_d else np.zeros(0)
    inside = np.concatenate(out_i) if out_i else np.zeros(0, dtype=np.int32)
    return offsets, dist, inside, base


cdef void fill_events(Event* ev, Py_ssize_t used, int32_t b, double[::1] dd, int32_t[::1] ii) noexcept:
    cdef Py_ssize_t e
    cdef int32_t cum = b
    for e in range(used):
        cum += ev[e].d
        dd[e] = ev[e].t
        ii[e] = cum


cdef inline int32_t _inside_at(Py_ssize_t row, double d,
                               const int64_t* off, const double* dist,
                               const int32_t* ins, const int32_t* base,
                               const int64_t* bidx, double inv_h, Py_ssize_t nq) noexcept nogil:
    # bidx[q] never skips a breakpoint below any d that lands in bucket q
    cdef int64_t lo = off[row], hi = off[row + 1], k
    cdef Py_ssize_t q = <Py_ssize_t>(d * inv_h)
    if q > nq - 1:
        q = nq - 1
    k = bidx[row * nq + q]
    while k < hi and dist[k] < d:
        k += 1
    return base[row] if k == lo else ins[k - 1]


cdef inline Py_ssize_t _bin(double d, const double* rg, Py_ssize_t nb, double inv_step) noexcept nogil:
    # initial guess only; the loops make the result exact
    cdef Py_ssize_t b = <Py_ssize_t>(d * inv_step)
    if b > nb - 1:
        b = nb - 1
    while b > 0 and d <= rg[b - 1]:
        b -= 1
    while d > rg[b]:
        b += 1
    return b


cdef struct Tables:
    const int64_t* off
    const double* dist
    const int32_t* ins
    const int32_t* base
    const int64_t* bidx
    const int64_t* bw
    double h
    Py_ssize_t nq


cdef object _unpack(tables, Tables* tb):
    """Fill ``tb`` with pointers into ``tables``; returns the arrays to keep alive."""
    off = np.ascontiguousarray(tables[0], dtype=np.int64)
    dist = np.ascontiguousarray(tables[1], dtype=np.float64)
    ins = np.ascontiguousarray(tables[2], dtype=np.int32)
    base = np.ascontiguousarray(tables[3], dtype=np.int32)
    bidx = np.ascontiguousarray(tables[4], dtype=np.int64)
    bw = np.ascontiguousarray(tables[6], dtype=np.int64)
    cdef const int64_t[::1] v_off = off
    cdef const double[::1] v_dist = dist
    cdef const int32_t[::1] v_ins = ins
    cdef const int32_t[::1] v_base = base
    cdef const int64_t[:, ::1] v_bidx = bidx
    cdef const int64_t[:, ::1] v_bw = bw
    tb.off = &v_off[0]
    tb.dist = &v_dist[0] if v_dist.shape[0] else NULL
    tb.ins = &v_ins[0] if v_ins.shape[0] else NULL
    tb.base = &v_base[0] if v_base.shape[0] else NULL
    tb.bidx = &v_bidx[0, 0] if v_bidx.shape[0] else NULL
    tb.bw = &v_bw[0, 0] if v_bw.shape[0] else NULL
    tb.h = float(tables[5])
    tb.nq = v_bidx.shape[1]
    return (off, dist, ins, base, bidx, bw)


def cross_hist(prior_xy, prior_rows, tables, new_xy, r_grid, wtab, bint weighted):
    pxy_a = np.ascontiguousarray(prior_xy, dtype=np.float64).reshape(-1, 2)
    rows_a = np.ascontiguousarray(prior_rows, dtype=np.int64)
    new_arr = np.ascontiguousarray(new_xy, dtype=np.float64)
    rg_a = np.ascontiguousarray(r_grid, dtype=np.float64)
    wt_a = np.ascontiguousarray(wtab, dtype=np.int64)
    cdef Py_ssize_t S = new_arr.shape[0], n2 = new_arr.shape[1], n1 = pxy_a.shape[0]
    cdef Py_ssize_t nb = rg_a.shape[0]
    out = np.zeros((S, nb), dtype=np.int64)
    if nb == 0 or n1 == 0 or n2 == 0 or S == 0:
        return out
    new_arr = new_arr.reshape(S, n2, 2)
    cdef Py_ssize_t max_cells = 4 * n2 + 64
    # per-sim buckets: geometry (xmin, ymin, cell, ncx, ncy), cell starts, sorted coords
    geo_a = np.empty((S, 5), dtype=np.float64)
    starts_a = np.empty((S, max_cells + 1), dtype=np.intp)
    sorted_a = np.empty((S, 2, n2), dtype=np.float64)
    cdef const double[:, ::1] v_pxy = pxy_a
    cdef const int64_t[::1] v_rows = rows_a
    cdef const double[:, :, ::1] v_nxy = new_arr
    cdef const double[::1] v_rg = rg_a
    cdef const int64_t[::1] v_wt = wt_a
    cdef int64_t[:, ::1] v_out = out
    cdef double[:, ::1] v_geo = geo_a
    cdef Py_ssize_t[:, ::1] v_starts = starts_a
    cdef double[:, :, ::1] v_sorted = sorted_a
    cdef const double* pxy = &v_pxy[0, 0]
    cdef const int64_t* rows = &v_rows[0]
    cdef const double* nxy = &v_nxy[0, 0, 0]
    cdef const double* rg = &v_rg[0]
    cdef const int64_t* wt = &v_wt[0]
    cdef int64_t* o = &v_out[0, 0]
    cdef double* geo = &v_geo[0, 0]
    cdef Py_ssize_t* starts = &v_starts[0, 0]
    cdef double* srt = &v_sorted[0, 0, 0]
    cdef Tables tb
    keep = None
    if weighted:
        keep = _unpack(tables, &tb)
    cdef double rmax = rg[nb - 1]
    cdef double inv_step = 1.0 / rg[0]
    cdef double cell, inv_h = 1.0 / tb.h if weighted else 1.0
    cdef int64_t unit = <int64_t>SCALE
    cdef Py_ssize_t s, i, j, a, b, gx, gy, ncx, ncy, ncell, cx, cy, x0c, x1c, y0c, y1c, p, q
    cdef double xmin, ymin, xmax, ymax, dx, dy, d, px, py, s2
    cdef double lim2 = rmax * rmax * (1.0 + 1e-12)
    cdef Py_ssize_t m
    cdef const double* sn
    cdef const double* sxs
    cdef const double* sys
    cdef Py_ssize_t* st
    cdef int64_t* orow
    cdef int64_t lo = 0, hi = 0, k, w
    cdef int32_t inside_base = 0
    cdef const int64_t* my_bw = NULL
    cdef const int64_t* my_bidx = NULL
    cdef const double* tdist = NULL
    cdef const int32_t* tins = NULL
    cdef Py_ssize_t tnq = 0
    cdef Py_ssize_t* cell_of = <Py_ssize_t*>malloc(n2 * sizeof(Py_ssize_t))
    cdef Py_ssize_t* order = <Py_ssize_t*>malloc(n2 * sizeof(Py_ssize_t))
    cdef double* buf = <double*>malloc(n2 * sizeof(double))
    if cell_of == NULL or order == NULL or buf == NULL:
        free(cell_of)
        free(order)
        free(buf)
        raise MemoryError()
    try:
        with nogil:
            for s in range(S):
                sn = nxy + s * n2 * 2
                st = starts + s * (max_cells + 1)
                xmin = sn[0]
                xmax = xmin
                ymin = sn[1]
                ymax = ymin
                for j in range(1, n2):
                    if sn[2 * j] < xmin:
                        xmin = sn[2 * j]
                    if sn[2 * j] > xmax:
                        xmax = sn[2 * j]
                    if sn[2 * j + 1] < ymin:
                        ymin = sn[2 * j + 1]
                    if sn[2 * j + 1] > ymax:
                        ymax = sn[2 * j + 1]
                cell = rmax * (1.0 + 1e-9)
                while True:
                    ncx = <Py_ssize_t>((xmax - xmin) / cell) + 1
                    ncy = <Py_ssize_t>((ymax - ymin) / cell) + 1
                    if ncx * ncy <= max_cells:
                        break
                    cell *= 2.0
                ncell = ncx * ncy
                for a in range(ncell + 1):
                    st[a] = 0
                for j in range(n2):
                    gx = <Py_ssize_t>((sn[2 * j] - xmin) / cell)
                    gy = <Py_ssize_t>((sn[2 * j + 1] - ymin) / cell)
                    if gx >= ncx:
                        gx = ncx - 1
                    if gy >= ncy:
                        gy = ncy - 1
                    cell_of[j] = gy * ncx + gx
                    st[cell_of[j] + 1] += 1
                for a in range(ncell):
                    st[a + 1] += st[a]
                for j in range(n2):
                    order[st[cell_of[j]]] = j
                    st[cell_of[j]] += 1
                for a in range(ncell, 0, -1):
                    st[a] = st[a - 1]
                st[0] = 0
                for a in range(n2):
                    srt[(2 * s) * n2 + a] = sn[2 * order[a]]
                    srt[(2 * s + 1) * n2 + a] = sn[2 * order[a] + 1]
                geo[5 * s] = xmin
                geo[5 * s + 1] = ymin
                geo[5 * s + 2] = cell
                geo[5 * s + 3] = <double>ncx
                geo[5 * s + 4] = <double>ncy

            # prior-major so each center's weight table stays in cache
            for i in range(n1):
                px = pxy[2 * i]
                py = pxy[2 * i + 1]
                if weighted:
                    lo = tb.off[rows[i]]
                    hi = tb.off[rows[i] + 1]
                    inside_base = tb.base[rows[i]]
                    my_bw = tb.bw + rows[i] * tb.nq
                    my_bidx = tb.bidx + rows[i] * tb.nq
                    tdist = tb.dist
                    tins = tb.ins
                    tnq = tb.nq
                for s in range(S):
                    xmin = geo[5 * s]
                    ymin = geo[5 * s + 1]
                    cell = geo[5 * s + 2]
                    ncx = <Py_ssize_t>geo[5 * s + 3]
                    ncy = <Py_ssize_t>geo[5 * s + 4]
                    st = starts + s * (max_cells + 1)
                    sxs = srt + (2 * s) * n2
                    sys = srt + (2 * s + 1) * n2
                    orow = o + s * nb
                    cx = <Py_ssize_t>floor((px - xmin) / cell)
                    cy = <Py_ssize_t>floor((py - ymin) / cell)
                    x0c = cx - 1 if cx - 1 > 0 else 0
                    x1c = cx + 1 if cx + 1 < ncx - 1 else ncx - 1
                    y0c = cy - 1 if cy - 1 > 0 else 0
                    y1c = cy + 1 if cy + 1 < ncy - 1 else ncy - 1
                    if x0c > x1c or y0c > y1c:
                        continue
                    # gather squared distances branch-free, then take roots in a
                    # separate pass the compiler can vectorize
                    m = 0
                    for gy in range(y0c, y1c + 1):
                        # cells x0c..x1c of one row are contiguous in sorted order
                        for p in range(st[gy * ncx + x0c], st[gy * ncx + x1c + 1]):
                            dx = sxs[p] - px
                            dy = sys[p] - py
                            s2 = dx * dx + dy * dy
                            buf[m] = s2
                            m += s2 <= lim2
                    for a in range(m):
                        buf[a] = sqrt(buf[a])
                    for a in range(m):
                        d = buf[a]
                        if d > rmax:
                            continue
                        b = _bin(d, rg, nb, inv_step)
                        if not weighted:
                            orow[b] += unit
                            continue
                        q = <Py_ssize_t>(d * inv_h)
                        if q > tnq - 1:
                            q = tnq - 1
                        w = my_bw[q]
                        if w < 0:
                            k = my_bidx[q]
                            while k < hi and tdist[k] < d:
                                k += 1
                            w = wt[inside_base] if k == lo else wt[tins[k - 1]]
                        orow[b] += w
    finally:
        free(cell_of)
        free(order)
        free(buf)
    return out


def forward_hist(xy, t, rows, tables, double tau, r_grid, int n_angles, double cap,
                 double span, bint weighted, bint temporal):
    p_a = np.ascontiguousarray(xy, dtype=np.float64).reshape(-1, 2)
    t_a = np.ascontiguousarray(t, dtype=np.float64)
    rg_a = np.ascontiguousarray(r_grid, dtype=np.float64)
    cdef Py_ssize_t n = p_a.shape[0], nb = rg_a.shape[0], i, j, b
    out = np.zeros(nb, dtype=np.int64)
    if nb == 0 or n < 2:
        return out
    rw_a = np.ascontiguousarray(rows if rows is not None else np.arange(n), dtype=np.int64)
    cdef const double[:, ::1] v_p = p_a
    cdef const double[::1] v_t = t_a
    cdef const double[::1] v_rg = rg_a
    cdef const int64_t[::1] v_rw = rw_a
    cdef int64_t[::1] v_o = out
    cdef const double* p = &v_p[0, 0]
    cdef const double* tt = &v_t[0]
    cdef const double* rg = &v_rg[0]
    cdef const int64_t* rw = &v_rw[0]
    cdef int64_t* o = &v_o[0]
    cdef Tables tb
    keep = None
    if weighted:
        keep = _unpack(tables, &tb)
    cdef double rmax = rg[nb - 1], inv_step = 1.0 / rg[0], dx, dy, d, dt, ws
    cdef int32_t k
    with nogil:
        for i in range(n):
            for j in range(n):
                dt = tt[j] - tt[i]
                if not (dt > 0.0 and dt <= tau):
                    continue
                dx = p[2 * j] - p[2 * i]
                if dx > rmax or dx < -rmax:
                    continue
                dy = p[2 * j + 1] - p[2 * i + 1]
                d = sqrt(dx * dx + dy * dy)
                if d > rmax:
                    continue
                b = _bin(d, rg, nb, inv_step)
                if weighted or temporal:
                    ws = 1.0
                    if weighted:
                        k = _inside_at(rw[i], d, tb.off, tb.dist, tb.ins, tb.base, tb.bidx,
                                       1.0 / tb.h, tb.nq)
                        if k > 0:
                            ws = <double>n_angles / <double>k
                            if ws > cap:
                                ws = cap
                        else:
                            ws = cap
                    if temporal:
                        ws = ws * (span / (span - dt))
                    o[b] += <int64_t>floor(ws * SCALE + 0.5)
                else:
                    o[b] += <int64_t>SCALE
    return out


def sample_uniform(ring, bbox, keys, Py_ssize_t n, Py_ssize_t budget):
    cdef const double[:, ::1] rg = np.ascontiguousarray(ring, dtype=np.float64)
    cdef const uint64_t[::1] ks = np.ascontiguousarray(keys, dtype=np.uint64)
    cdef double xmin = float(bbox[0]), ymin = float(bbox[1])
    cdef double xmax = float(bbox[2]), ymax = float(bbox[3])
    cdef Py_ssize_t S = ks.shape[0], s, filled, c
    out = np.empty((S, n, 2), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef double x, y
    cdef bint failed = False
    if n == 0:
        return out
    with nogil:
        for s in range(S):
            filled = 0
            c = 0
            while filled < n:
                if c >= budget:
                    failed = True
                    break
                x = xmin + _uniform(ks[s], 2 * c) * (xmax - xmin)
                y = ymin + _uniform(ks[s], 2 * c + 1) * (ymax - ymin)
                if _pip(rg, x, y):
                    o[s, filled, 0] = x
                    o[s, filled, 1] = y
                    filled += 1
                c += 1
            if failed:
                break
    if failed:
        raise SamplingBudgetError(
            f"rejection sampling exceeded {budget} candidates for {n} points"
        )
    return out
