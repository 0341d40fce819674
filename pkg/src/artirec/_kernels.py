"""Serial numba kernels for multi-level hash-grid queries.

All kernels are single-threaded and accumulate in a fixed order, so
results are bit-reproducible across runs. Coordinates are float64
(N, 3); tables are (levels, table_size) float64 with table_size a power
of two. Points outside [0,1]^3 read as background (sigmoid of the
readout bias) and receive zero gradients.

The spatial hash XORs the corner indices multiplied by fixed primes and
masks to the table size; corner (ix+dx, iy+dy, iz+dz) hashes are derived
incrementally (multiplication distributes over the +1 offsets).
"""

import numpy as np
from numba import njit

HASH_PX = np.uint32(2654435761)
HASH_PY = np.uint32(805459861)
HASH_PZ = np.uint32(3674653429)


@njit(cache=True)
def query_forward(coords, tables, res, level_weights, bias, occ):
    n = coords.shape[0]
    levels = tables.shape[0]
    mask = np.uint32(tables.shape[1] - 1)
    background = 1.0 / (1.0 + np.exp(-bias))
    for p in range(n):
        x = coords[p, 0]
        y = coords[p, 1]
        z = coords[p, 2]
        if x < 0.0 or x > 1.0 or y < 0.0 or y > 1.0 or z < 0.0 or z > 1.0:
            occ[p] = background
            continue
        acc = bias
        for l in range(levels):
            r = res[l]
            px = x * r
            py = y * r
            pz = z * r
            ix = np.int64(px)
            iy = np.int64(py)
            iz = np.int64(pz)
            fx = px - ix
            fy = py - iy
            fz = pz - iz
            gx = 1.0 - fx
            gy = 1.0 - fy
            gz = 1.0 - fz
            hx0 = np.uint32(ix) * HASH_PX
            hy0 = np.uint32(iy) * HASH_PY
            hz0 = np.uint32(iz) * HASH_PZ
            hx1 = hx0 + HASH_PX
            hy1 = hy0 + HASH_PY
            hz1 = hz0 + HASH_PZ
            v = (
                tables[l, (hx0 ^ hy0 ^ hz0) & mask] * (gx * gy * gz)
                + tables[l, (hx1 ^ hy0 ^ hz0) & mask] * (fx * gy * gz)
                + tables[l, (hx0 ^ hy1 ^ hz0) & mask] * (gx * fy * gz)
                + tables[l, (hx1 ^ hy1 ^ hz0) & mask] * (fx * fy * gz)
                + tables[l, (hx0 ^ hy0 ^ hz1) & mask] * (gx * gy * fz)
                + tables[l, (hx1 ^ hy0 ^ hz1) & mask] * (fx * gy * fz)
                + tables[l, (hx0 ^ hy1 ^ hz1) & mask] * (gx * fy * fz)
                + tables[l, (hx1 ^ hy1 ^ hz1) & mask] * (fx * fy * fz)
            )
            acc += level_weights[l] * v
        occ[p] = 1.0 / (1.0 + np.exp(-acc))


@njit(cache=True)
def query_backward(coords, tables, res, level_weights, up_sprime, grad_tables, grad_coords, with_coord_grad):
    """Accumulate table gradients and (optionally) d occ / d coords.

    `up_sprime` must hold upstream_grad * occ * (1 - occ) per point, i.e.
    the gradient at the pre-sigmoid readout. `grad_tables` accumulates
    in place.
    """
    n = coords.shape[0]
    levels = tables.shape[0]
    mask = np.uint32(tables.shape[1] - 1)
    for p in range(n):
        u = up_sprime[p]
        gcx = 0.0
        gcy = 0.0
        gcz = 0.0
        x = coords[p, 0]
        y = coords[p, 1]
        z = coords[p, 2]
        inside = not (x < 0.0 or x > 1.0 or y < 0.0 or y > 1.0 or z < 0.0 or z > 1.0)
        if u != 0.0 and inside:
            for l in range(levels):
                r = res[l]
                px = x * r
                py = y * r
                pz = z * r
                ix = np.int64(px)
                iy = np.int64(py)
                iz = np.int64(pz)
                fx = px - ix
                fy = py - iy
                fz = pz - iz
                gx = 1.0 - fx
                gy = 1.0 - fy
                gz = 1.0 - fz
                hx0 = np.uint32(ix) * HASH_PX
                hy0 = np.uint32(iy) * HASH_PY
                hz0 = np.uint32(iz) * HASH_PZ
                hx1 = hx0 + HASH_PX
                hy1 = hy0 + HASH_PY
                hz1 = hz0 + HASH_PZ
                i000 = (hx0 ^ hy0 ^ hz0) & mask
                i100 = (hx1 ^ hy0 ^ hz0) & mask
                i010 = (hx0 ^ hy1 ^ hz0) & mask
                i110 = (hx1 ^ hy1 ^ hz0) & mask
                i001 = (hx0 ^ hy0 ^ hz1) & mask
                i101 = (hx1 ^ hy0 ^ hz1) & mask
                i011 = (hx0 ^ hy1 ^ hz1) & mask
                i111 = (hx1 ^ hy1 ^ hz1) & mask
                w = u * level_weights[l]
                grad_tables[l, i000] += w * (gx * gy * gz)
                grad_tables[l, i100] += w * (fx * gy * gz)
                grad_tables[l, i010] += w * (gx * fy * gz)
                grad_tables[l, i110] += w * (fx * fy * gz)
                grad_tables[l, i001] += w * (gx * gy * fz)
                grad_tables[l, i101] += w * (fx * gy * fz)
                grad_tables[l, i011] += w * (gx * fy * fz)
                grad_tables[l, i111] += w * (fx * fy * fz)
                if with_coord_grad:
                    t000 = tables[l, i000]
                    t100 = tables[l, i100]
                    t010 = tables[l, i010]
                    t110 = tables[l, i110]
                    t001 = tables[l, i001]
                    t101 = tables[l, i101]
                    t011 = tables[l, i011]
                    t111 = tables[l, i111]
                    dx = (
                        (t100 - t000) * (gy * gz)
                        + (t110 - t010) * (fy * gz)
                        + (t101 - t001) * (gy * fz)
                        + (t111 - t011) * (fy * fz)
                    )
                    dy = (
                        (t010 - t000) * (gx * gz)
                        + (t110 - t100) * (fx * gz)
                        + (t011 - t001) * (gx * fz)
                        + (t111 - t101) * (fx * fz)
                    )
                    dz = (
                        (t001 - t000) * (gx * gy)
                        + (t101 - t100) * (fx * gy)
                        + (t011 - t010) * (gx * fy)
                        + (t111 - t110) * (fx * fy)
                    )
                    gcx += w * r * dx
                    gcy += w * r * dy
                    gcz += w * r * dz
        grad_coords[p, 0] = gcx
        grad_coords[p, 1] = gcy
        grad_coords[p, 2] = gcz


@njit(cache=True)
def build_corner_cache(coords, res, table_size, idx, w):
    """Precompute hashed (pre-masked) corner indices and trilinear weights.

    For fixed query points (voxel centers) this factors the per-call
    hashing out of `cached_forward` / `cached_backward`. `idx` is
    (n, levels, 8) int32, `w` matching float64. Points must lie inside
    [0,1]^3.
    """
    n = coords.shape[0]
    levels = res.shape[0]
    mask = np.uint32(table_size - 1)
    for p in range(n):
        x = coords[p, 0]
        y = coords[p, 1]
        z = coords[p, 2]
        for l in range(levels):
            r = res[l]
            px = x * r
            py = y * r
            pz = z * r
            ix = np.int64(px)
            iy = np.int64(py)
            iz = np.int64(pz)
            fx = px - ix
            fy = py - iy
            fz = pz - iz
            gx = 1.0 - fx
            gy = 1.0 - fy
            gz = 1.0 - fz
            hx0 = np.uint32(ix) * HASH_PX
            hy0 = np.uint32(iy) * HASH_PY
            hz0 = np.uint32(iz) * HASH_PZ
            hx1 = hx0 + HASH_PX
            hy1 = hy0 + HASH_PY
            hz1 = hz0 + HASH_PZ
            idx[p, l, 0] = np.int32((hx0 ^ hy0 ^ hz0) & mask)
            idx[p, l, 1] = np.int32((hx1 ^ hy0 ^ hz0) & mask)
            idx[p, l, 2] = np.int32((hx0 ^ hy1 ^ hz0) & mask)
            idx[p, l, 3] = np.int32((hx1 ^ hy1 ^ hz0) & mask)
            idx[p, l, 4] = np.int32((hx0 ^ hy0 ^ hz1) & mask)
            idx[p, l, 5] = np.int32((hx1 ^ hy0 ^ hz1) & mask)
            idx[p, l, 6] = np.int32((hx0 ^ hy1 ^ hz1) & mask)
            idx[p, l, 7] = np.int32((hx1 ^ hy1 ^ hz1) & mask)
            w[p, l, 0] = gx * gy * gz
            w[p, l, 1] = fx * gy * gz
            w[p, l, 2] = gx * fy * gz
            w[p, l, 3] = fx * fy * gz
            w[p, l, 4] = gx * gy * fz
            w[p, l, 5] = fx * gy * fz
            w[p, l, 6] = gx * fy * fz
            w[p, l, 7] = fx * fy * fz


@njit(cache=True)
def cached_forward(idx, w, tables, level_weights, bias, occ):
    n = idx.shape[0]
    levels = idx.shape[1]
    for p in range(n):
        acc = bias
        for l in range(levels):
            v = 0.0
            for c in range(8):
                v += tables[l, idx[p, l, c]] * w[p, l, c]
            acc += level_weights[l] * v
        occ[p] = 1.0 / (1.0 + np.exp(-acc))


@njit(cache=True)
def cached_backward(idx, w, level_weights, up_sprime, grad_tables):
    n = idx.shape[0]
    levels = idx.shape[1]
    for p in range(n):
        u = up_sprime[p]
        if u == 0.0:
            continue
        for l in range(levels):
            uw = u * level_weights[l]
            for c in range(8):
                grad_tables[l, idx[p, l, c]] += uw * w[p, l, c]


@njit(cache=True)
def regression_step(idx, w, tables, level_weights, bias, target, grad_tables):
    """One fused MSE-regression pass: forward, residual, table gradients.

    Returns the mean squared error; `grad_tables` must come in zeroed.
    Reading the corner cache once per step (instead of once for the
    forward and once for the backward) halves the memory traffic of the
    fitting loop.
    """
    n = idx.shape[0]
    levels = idx.shape[1]
    inv_n = 1.0 / n
    sse = 0.0
    for p in range(n):
        acc = bias
        for l in range(levels):
            v = 0.0
            for c in range(8):
                v += tables[l, idx[p, l, c]] * w[p, l, c]
            acc += level_weights[l] * v
        occ = 1.0 / (1.0 + np.exp(-acc))
        r = occ - target[p]
        sse += r * r
        u = (2.0 * inv_n) * r * occ * (1.0 - occ)
        for l in range(levels):
            uw = u * level_weights[l]
            for c in range(8):
                grad_tables[l, idx[p, l, c]] += uw * w[p, l, c]
    return sse * inv_n


@njit(cache=True)
def adam_update(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    """Fused in-place Adam update over a flat parameter array."""
    n = param.size
    pf = param.reshape(n)
    gf = grad.reshape(n)
    mf = m.reshape(n)
    vf = v.reshape(n)
    for i in range(n):
        g = gf[i]
        mf[i] = beta1 * mf[i] + (1.0 - beta1) * g
        vf[i] = beta2 * vf[i] + (1.0 - beta2) * g * g
        pf[i] -= lr * (mf[i] / c1) / (np.sqrt(vf[i] / c2) + eps)
