"""Pure-numpy implementations of the hot kernels.

These define the reference semantics; the compiled ``_kernels`` module must
return identical arrays. Pair weights are accumulated as int64 fixed-point
values (``SCALE`` units per unit weight), which makes every histogram
independent of traversal order.
"""

from __future__ import annotations

import numpy as np

from .rng import GAMMA, _mix_array

SCALE = float(1 << 30)
_INV53 = 1.0 / (1 << 53)


class SamplingBudgetError(RuntimeError):
    pass


def points_in_polygon(ring, pts):
    ring = np.ascontiguousarray(ring, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 2)
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    boundary = np.zeros(len(pts), dtype=bool)
    m = len(ring)
    for i in range(m):
        xi, yi = ring[i]
        xj, yj = ring[(i + 1) % m]
        cross = (xj - xi) * (py - yi) - (yj - yi) * (px - xi)
        boundary |= (
            (cross == 0.0)
            & (px >= min(xi, xj)) & (px <= max(xi, xj))
            & (py >= min(yi, yj)) & (py <= max(yi, yj))
        )
        straddle = (yi > py) != (yj > py)
        if straddle.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = xi + (py - yi) * (xj - xi) / (yj - yi)
            inside ^= straddle & (px < xint)
    return inside | boundary


def ray_tables(ring, centers, cos_a, sin_a, r_limit):
    """Crossing-event tables for the angular edge correction.

    For every center, each ray is cast against all polygon edges. A point at
    distance ``r`` along a ray is outside the polygon iff the number of
    crossings at distance ``>= r`` is even. Returns ``(offsets, dist, inside,
    base)``: per center, the crossing distances ``<= r_limit`` sorted
    ascending, the number of inside rays just after each crossing, and the
    number of inside rays as ``r -> 0+``.
    """
    ring = np.ascontiguousarray(ring, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    cos_a = np.asarray(cos_a, dtype=np.float64)
    sin_a = np.asarray(sin_a, dtype=np.float64)
    n_rays = len(cos_a)
    ax, ay = ring[:, 0], ring[:, 1]
    bx, by = np.roll(ax, -1), np.roll(ay, -1)
    ca = cos_a[:, None]
    sa = sin_a[:, None]

    offsets = np.zeros(len(centers) + 1, dtype=np.int64)
    dists, insides = [], []
    base = np.zeros(len(centers), dtype=np.int32)
    for c, (cx, cy) in enumerate(centers):
        s_a = ca * (ay - cy) - sa * (ax - cx)
        s_b = ca * (by - cy) - sa * (bx - cx)
        hit = (s_a > 0.0) != (s_b > 0.0)
        d_a = ca * (ax - cx) + sa * (ay - cy)
        d_b = ca * (bx - cx) + sa * (by - cy)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = s_a / (s_a - s_b)
            t = d_a + s * (d_b - d_a)
        hit &= t > 0.0
        m = hit.sum(axis=1)
        base[c] = n_rays - int(np.count_nonzero(m % 2 == 0))
        ray_idx, _ = np.nonzero(hit)
        tv = t[hit]
        # rank of each crossing along its own ray (1-based)
        order = np.lexsort((tv, ray_idx))
        ray_sorted = ray_idx[order]
        t_sorted = tv[order]
        first = np.searchsorted(ray_sorted, ray_sorted, side="left")
        rank = np.arange(len(t_sorted)) - first + 1
        remaining_even = (m[ray_sorted] - rank) % 2 == 0
        d_inside = np.where(remaining_even, -1, 1).astype(np.int32)
        keep = t_sorted <= r_limit
        t_keep = t_sorted[keep]
        d_keep = d_inside[keep]
        o = np.argsort(t_keep, kind="stable")
        dists.append(t_keep[o])
        insides.append((base[c] + np.cumsum(d_keep[o])).astype(np.int32))
        offsets[c + 1] = offsets[c] + len(t_keep)
    dist = np.concatenate(dists) if dists else np.zeros(0)
    inside = np.concatenate(insides) if insides else np.zeros(0, dtype=np.int32)
    return offsets, dist.astype(np.float64), inside.astype(np.int32), base


def _inside_counts(rows, d, offsets, dist, inside, base):
    """Inside-ray counts for center ``rows[i]`` at distances ``d[i, ...]``."""
    out = np.empty(d.shape, dtype=np.int64)
    for i, row in enumerate(rows):
        lo, hi = offsets[row], offsets[row + 1]
        k = np.searchsorted(dist[lo:hi], d[i], side="left")
        vals = inside[lo:hi]
        out[i] = np.where(k == 0, base[row], vals[np.maximum(k - 1, 0)] if hi > lo else base[row])
    return out


def cross_hist(prior_xy, prior_rows, tables, new_xy, r_grid, wtab, weighted):
    """Fixed-point weighted histogram of prior->new distances per grid bin.

    ``new_xy`` has shape ``(S, n_new, 2)``; returns int64 ``(S, n_bins)``
    where bin ``g`` collects pairs with ``r[g-1] < d <= r[g]``.
    """
    prior_xy = np.asarray(prior_xy, dtype=np.float64)
    new_xy = np.asarray(new_xy, dtype=np.float64)
    r_grid = np.asarray(r_grid, dtype=np.float64)
    n_sims, n_new = new_xy.shape[0], new_xy.shape[1]
    nb = len(r_grid)
    out = np.zeros((n_sims, nb), dtype=np.int64)
    if nb == 0 or n_new == 0 or len(prior_xy) == 0:
        return out
    rmax = r_grid[-1]
    if weighted:
        offsets, dist, inside, base = tables[:4]
    unit = np.int64(SCALE)
    # chunk over sims to bound memory at ~n_prior * n_new * chunk
    chunk = max(1, int(4_000_000 // max(1, len(prior_xy) * n_new)))
    for s0 in range(0, n_sims, chunk):
        block = new_xy[s0:s0 + chunk]
        dx = block[:, None, :, 0] - prior_xy[None, :, 0, None]
        dy = block[:, None, :, 1] - prior_xy[None, :, 1, None]
        d = np.sqrt(dx * dx + dy * dy)  # (s, n_prior, n_new)
        ok = d <= rmax
        b = np.searchsorted(r_grid, d, side="left")
        if weighted:
            dd = np.moveaxis(d, 1, 0).reshape(len(prior_xy), -1)
            k = _inside_counts(prior_rows, dd, offsets, dist, inside, base)
            w = wtab[k].reshape(len(prior_xy), d.shape[0], n_new)
            w = np.moveaxis(w, 0, 1)
        else:
            w = np.full(d.shape, unit, dtype=np.int64)
        sim_idx = np.broadcast_to(np.arange(d.shape[0])[:, None, None], d.shape)
        flat = sim_idx[ok] * nb + b[ok]
        acc = np.zeros(d.shape[0] * nb, dtype=np.int64)
        np.add.at(acc, flat, w[ok])
        out[s0:s0 + d.shape[0]] = acc.reshape(d.shape[0], nb)
    return out


def forward_hist(xy, t, rows, tables, tau, r_grid, n_angles, cap, span,
                 weighted, temporal):
    """Fixed-point histogram of forward pairs ``0 < t_j - t_i <= tau``.

    The spatial weight is centered on the earlier event ``i``; the optional
    temporal weight is ``span / (span - dt)``.
    """
    xy = np.asarray(xy, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    r_grid = np.asarray(r_grid, dtype=np.float64)
    nb = len(r_grid)
    out = np.zeros(nb, dtype=np.int64)
    n = len(xy)
    if nb == 0 or n < 2:
        return out
    rmax = r_grid[-1]
    offsets, dist, inside, base = tables[:4] if tables is not None else (None,) * 4
    for i0 in range(0, n, 512):
        sl = slice(i0, min(n, i0 + 512))
        dx = xy[None, :, 0] - xy[sl, 0, None]
        dy = xy[None, :, 1] - xy[sl, 1, None]
        d = np.sqrt(dx * dx + dy * dy)
        dt = t[None, :] - t[sl, None]
        ok = (d <= rmax) & (dt > 0.0) & (dt <= tau)
        if not ok.any():
            continue
        b = np.searchsorted(r_grid, d[ok], side="left")
        if weighted or temporal:
            ws = np.ones(d.shape)
            if weighted:
                k = _inside_counts(np.asarray(rows)[sl], d, offsets, dist, inside, base)
                with np.errstate(divide="ignore"):
                    ws = np.where(k > 0, np.minimum(n_angles / np.maximum(k, 1).astype(np.float64), cap), cap)
            if temporal:
                with np.errstate(divide="ignore", invalid="ignore"):
                    ws = ws * (span / (span - dt))
            w = np.floor(ws[ok] * SCALE + 0.5).astype(np.int64)
        else:
            w = np.full(b.shape, np.int64(SCALE), dtype=np.int64)
        np.add.at(out, b, w)
    return out


def sample_uniform(ring, bbox, keys, n, budget):
    """Rejection-sample ``n`` uniform points in the polygon for each key.

    Candidate ``c`` of stream ``key`` uses draws ``2c`` and ``2c + 1``:
    ``x = xmin + u * (xmax - xmin)``. The first ``n`` accepted candidates
    are kept. Raises :class:`SamplingBudgetError` after ``budget``
    candidates without success.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    xmin, ymin, xmax, ymax = (float(v) for v in bbox)
    n_sims = len(keys)
    out = np.empty((n_sims, n, 2), dtype=np.float64)
    if n == 0:
        return out
    filled = np.zeros(n_sims, dtype=np.int64)
    drawn = 0
    block = max(16, 2 * n)
    active = np.arange(n_sims)
    while len(active):
        if drawn >= budget:
            raise SamplingBudgetError(
                f"rejection sampling exceeded {budget} candidates for {n} points"
            )
        nb = min(block, budget - drawn)
        idx = np.arange(2 * drawn + 1, 2 * (drawn + nb) + 1, dtype=np.uint64)
        z = keys[active, None] + idx[None, :] * np.uint64(GAMMA)
        u = (_mix_array(z) >> np.uint64(11)).astype(np.float64) * _INV53
        x = xmin + u[:, 0::2] * (xmax - xmin)
        y = ymin + u[:, 1::2] * (ymax - ymin)
        acc = points_in_polygon(ring, np.stack([x.ravel(), y.ravel()], axis=1))
        acc = acc.reshape(len(active), nb)
        still = []
        for row, s in enumerate(active):
            sel = np.nonzero(acc[row])[0]
            take = min(len(sel), n - filled[s])
            if take:
                sel = sel[:take]
                out[s, filled[s]:filled[s] + take, 0] = x[row, sel]
                out[s, filled[s]:filled[s] + take, 1] = y[row, sel]
                filled[s] += take
            if filled[s] < n:
                still.append(s)
        drawn += nb
        active = np.asarray(still, dtype=np.int64)
    return out
