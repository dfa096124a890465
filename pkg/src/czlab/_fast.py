"""Compiled inner loops for kernel summation.

Built-in kernels are identified by an integer code so the loops stay
free of Python callbacks:

    0  s-Riesz      x / |x|^(s+1)               (d components)
    1  Cauchy       conj(z) / |z|^2             (2 components)
    2  zbar / z^2   conj(z)^3 / |z|^4           (2 components)

All loops skip exactly coincident pairs, which matches the convention
Omega(0) = 0 for the regularized kernel and the exclusion of the diagonal
for the unregularized one.
"""

import math

import numpy as np
from numba import njit, prange

RIESZ = 0
CAUCHY = 1
ZBAR_Z2 = 2


@njit(cache=True, inline="always")
def _power(rr, sp1):
    if sp1 == 2.0:
        return rr * rr
    if sp1 == 2.5:
        return rr * rr * math.sqrt(rr)
    return rr**sp1


@njit(cache=True, inline="always")
def _accumulate(code, d, dx, r2, delta, sp1, scale, q, out, t):
    """out[t, :] += q * K_delta(dx)."""
    r = math.sqrt(r2)
    rr = r if r > delta else delta
    inv = scale * q / _power(rr, sp1)
    if code == RIESZ:
        for c in range(d):
            out[t, c] += dx[c] * inv
    elif code == CAUCHY:
        out[t, 0] += dx[0] * inv
        out[t, 1] -= dx[1] * inv
    else:
        x = dx[0]
        y = dx[1]
        inv = inv / r2
        out[t, 0] += (x * x * x - 3.0 * x * y * y) * inv
        out[t, 1] += (y * y * y - 3.0 * x * x * y) * inv


@njit(cache=True, parallel=True)
def sum_kernel(code, s, scale, delta, src, q, tgt):
    """out[t] = sum_j K_delta(tgt[t] - src[j]) q[j]."""
    m = tgt.shape[0]
    n = src.shape[0]
    d = src.shape[1]
    dp = d if code == RIESZ else 2
    sp1 = s + 1.0
    out = np.zeros((m, dp))
    for t in prange(m):
        dx = np.empty(d)
        for j in range(n):
            if q[j] == 0.0:
                continue
            r2 = 0.0
            for c in range(d):
                dx[c] = tgt[t, c] - src[j, c]
                r2 += dx[c] * dx[c]
            if r2 == 0.0:
                continue
            _accumulate(code, d, dx, r2, delta, sp1, scale, q[j], out, t)
    return out


@njit(cache=True, parallel=True)
def sum_kernel_dot(code, s, scale, delta, src, qv, tgt):
    """out[t] = sum_j K_delta(tgt[t] - src[j]) . qv[j]."""
    m = tgt.shape[0]
    n = src.shape[0]
    d = src.shape[1]
    dp = qv.shape[1]
    sp1 = s + 1.0
    out = np.zeros(m)
    for t in prange(m):
        dx = np.empty(d)
        acc = np.zeros((1, dp))
        for j in range(n):
            r2 = 0.0
            for c in range(d):
                dx[c] = tgt[t, c] - src[j, c]
                r2 += dx[c] * dx[c]
            if r2 == 0.0:
                continue
            for c in range(dp):
                acc[0, c] = 0.0
            _accumulate(code, d, dx, r2, delta, sp1, scale, 1.0, acc, 0)
            v = 0.0
            for c in range(dp):
                v += acc[0, c] * qv[j, c]
            out[t] += v
    return out


@njit(cache=True)
def pair_sum(code, s, scale, delta, pts, wa, wb):
    """sum_{i != j} K_delta(y_i - y_j) wa[i] wb[j], accumulated row by row.

    Returns the signed total and the sum of absolute term magnitudes.
    """
    n = pts.shape[0]
    d = pts.shape[1]
    dp = d if code == RIESZ else 2
    sp1 = s + 1.0
    tot = np.zeros((1, dp))
    term = np.zeros((1, dp))
    dx = np.empty(d)
    absum = 0.0
    for i in range(n):
        if wa[i] == 0.0:
            continue
        for j in range(n):
            if wb[j] == 0.0:
                continue
            r2 = 0.0
            for c in range(d):
                dx[c] = pts[i, c] - pts[j, c]
                r2 += dx[c] * dx[c]
            if r2 == 0.0:
                continue
            for c in range(dp):
                term[0, c] = 0.0
            _accumulate(code, d, dx, r2, delta, sp1, scale, wa[i] * wb[j], term, 0)
            m = 0.0
            for c in range(dp):
                tot[0, c] += term[0, c]
                m += term[0, c] * term[0, c]
            absum += math.sqrt(m)
    return tot[0], absum


@njit(cache=True)
def antisym_form(code, s, scale, delta, pts, f, g, w):
    """Half the sum over i != j of K_delta(y_i - y_j) . [f_j g_i - g_j f_i] w_i w_j."""
    n = pts.shape[0]
    d = pts.shape[1]
    dp = g.shape[1]
    sp1 = s + 1.0
    acc = np.zeros((1, dp))
    dx = np.empty(d)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for c in range(d):
                dx[c] = pts[i, c] - pts[j, c]
                r2 += dx[c] * dx[c]
            if r2 == 0.0:
                continue
            for c in range(dp):
                acc[0, c] = 0.0
            _accumulate(code, d, dx, r2, delta, sp1, scale, 1.0, acc, 0)
            # the (j, i) term equals the (i, j) term by oddness of K and of H
            v = 0.0
            for c in range(dp):
                v += acc[0, c] * (f[j] * g[i, c] - g[j, c] * f[i])
            total += v * w[i] * w[j]
    return total


@njit(cache=True, parallel=True)
def tree_sum(code, s, scale, delta, theta, src, q,
             n_start, n_end, n_child0, n_nchild, children,
             ctr, rad, pxy, pq, tgt):
    """Treecode evaluation with per-node proxy charges.

    A node is accepted when rad/D <= theta and D - rad >= delta, where D is
    the distance from the target to the node centre and rad bounds the
    distance from that centre to every atom of the node.  An accepted node
    is summed through its proxies pxy[node] carrying charges pq[node]
    (signed barycentres for the monopole, interpolation nodes otherwise),
    unless it holds fewer atoms than proxies.
    """
    m = tgt.shape[0]
    d = src.shape[1]
    dp = d if code == RIESZ else 2
    sp1 = s + 1.0
    npx = pxy.shape[1]
    out = np.zeros((m, dp))
    for t in prange(m):
        stack = np.empty(512, dtype=np.int64)
        dx = np.empty(d)
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            ctr2 = 0.0
            for c in range(d):
                v = tgt[t, c] - ctr[node, c]
                ctr2 += v * v
            D = math.sqrt(ctr2)
            far = rad[node] <= theta * D and D - rad[node] >= delta
            size = n_end[node] - n_start[node]
            if far and size > npx:
                for k in range(npx):
                    if pq[node, k] == 0.0:
                        continue
                    r2 = 0.0
                    for c in range(d):
                        dx[c] = tgt[t, c] - pxy[node, k, c]
                        r2 += dx[c] * dx[c]
                    if r2 == 0.0:
                        continue
                    _accumulate(code, d, dx, r2, delta, sp1, scale, pq[node, k], out, t)
            elif far or n_nchild[node] == 0:
                for j in range(n_start[node], n_end[node]):
                    if q[j] == 0.0:
                        continue
                    r2 = 0.0
                    for c in range(d):
                        dx[c] = tgt[t, c] - src[j, c]
                        r2 += dx[c] * dx[c]
                    if r2 == 0.0:
                        continue
                    _accumulate(code, d, dx, r2, delta, sp1, scale, q[j], out, t)
            else:
                for k in range(n_nchild[node]):
                    stack[top] = children[n_child0[node] + k]
                    top += 1
    return out


@njit(cache=True, inline="always")
def _feed(i, pos, chg, order, d, npx, bw, nodes_ax, L, pxy, pq, mom, ktab):
    """Accumulate one charge at pos into node i's proxies."""
    if chg == 0.0:
        return
    if order == 0:
        k = 0 if chg > 0 else 1
        pq[i, k] += chg
        for c in range(d):
            mom[i, k, c] += chg * pos[c]
        return
    for c in range(d):
        tot = 0.0
        hit = -1
        for k in range(order):
            diff = pos[c] - nodes_ax[i, c, k]
            if diff == 0.0:
                hit = k
                break
            L[c, k] = bw[k] / diff
            tot += L[c, k]
        if hit >= 0:
            for k in range(order):
                L[c, k] = 1.0 if k == hit else 0.0
        else:
            inv = 1.0 / tot
            for k in range(order):
                L[c, k] *= inv
    if d == 2:
        p = 0
        for k0 in range(order):
            w = chg * L[0, k0]
            for k1 in range(order):
                pq[i, p] += w * L[1, k1]
                p += 1
        return
    for p in range(npx):
        val = chg
        for c in range(d):
            val *= L[c, ktab[p, c]]
        pq[i, p] += val


@njit(cache=True)
def morton_keys(cells, bits):
    n, d = cells.shape
    key = np.zeros(n, dtype=np.int64)
    for i in range(n):
        k = 0
        for b in range(bits):
            for c in range(d):
                k |= ((cells[i, c] >> b) & 1) << (b * d + c)
        key[i] = k
    return key


@njit(cache=True)
def _set_nodes(i, order, d, box, ctr, cheb, nodes_ax):
    if order == 0:
        return
    for c in range(d):
        half = 0.5 * (box[i, 1, c] - box[i, 0, c])
        if half <= 0:
            half = 1e-9 * max(1.0, abs(ctr[i, c]))
        for k in range(order):
            nodes_ax[i, c, k] = ctr[i, c] + half * cheb[k]


@njit(cache=True)
def _finish(i, order, d, npx, pxy, pq, mom, ctr, nodes_ax, ktab):
    """Proxy positions of node i once its charges are in."""
    if order == 0:
        for k in range(2):
            for c in range(d):
                pxy[i, k, c] = mom[i, k, c] / pq[i, k] if pq[i, k] != 0 else ctr[i, c]
    else:
        for p in range(npx):
            for c in range(d):
                pxy[i, p, c] = nodes_ax[i, c, ktab[p, c]]


@njit(cache=True, parallel=True)
def node_stats(src, q, n_start, n_end, n_child0, n_nchild, children, order, cheb):
    """Centre, radius and proxy charges for every node, by an upward pass.

    order 0: two proxies, the barycentres of the positive and the negative
    charges.  order n: the n^d tensor Chebyshev grid of the node bounding box,
    charges by barycentric Lagrange interpolation (cheb holds cos(pi k/(n-1))).
    Children are assumed to carry larger indices than their parents.
    """
    m = n_start.shape[0]
    d = src.shape[1]
    npx = 2 if order == 0 else order**d
    nord = order if order > 0 else 1
    ctr = np.zeros((m, d))
    rad = np.zeros(m)
    pxy = np.zeros((m, npx, d))
    pq = np.zeros((m, npx))
    mom = np.zeros((m, 2, d))
    nodes_ax = np.zeros((m, d, nord))
    bw = np.empty(nord)
    for k in range(nord):
        bw[k] = 1.0 if k % 2 == 0 else -1.0
    bw[0] *= 0.5
    bw[nord - 1] *= 0.5
    L = np.empty((d, nord))
    ktab = np.zeros((npx, d), dtype=np.int64)
    if order > 0:
        for p in range(npx):
            rem = p
            for c in range(d - 1, -1, -1):
                ktab[p, c] = rem % order
                rem //= order
    box = np.empty((m, 2, d))
    leaves = np.nonzero(n_nchild == 0)[0]
    # leaves are independent of each other
    for li in prange(leaves.shape[0]):
        i = leaves[li]
        a = n_start[i]
        b = n_end[i]
        for c in range(d):
            box[i, 0, c] = src[a, c]
            box[i, 1, c] = src[a, c]
        for j in range(a, b):
            for c in range(d):
                box[i, 0, c] = min(box[i, 0, c], src[j, c])
                box[i, 1, c] = max(box[i, 1, c], src[j, c])
        for c in range(d):
            ctr[i, c] = 0.5 * (box[i, 0, c] + box[i, 1, c])
        r2max = 0.0
        for j in range(a, b):
            r2 = 0.0
            for c in range(d):
                v = src[j, c] - ctr[i, c]
                r2 += v * v
            r2max = max(r2max, r2)
        rad[i] = math.sqrt(r2max)
        if b - a <= npx:
            continue
        _set_nodes(i, order, d, box, ctr, cheb, nodes_ax)
        Li = np.empty((d, nord))
        for j in range(a, b):
            _feed(i, src[j], q[j], order, d, npx, bw, nodes_ax, Li, pxy, pq, mom, ktab)
        _finish(i, order, d, npx, pxy, pq, mom, ctr, nodes_ax, ktab)
    for i in range(m - 1, -1, -1):
        if n_nchild[i] == 0:
            continue
        a = n_start[i]
        b = n_end[i]
        lo = box[i, 0]
        hi = box[i, 1]
        # children come later in the node order, so their boxes are ready
        ch = children[n_child0[i]]
        for c in range(d):
            lo[c] = box[ch, 0, c]
            hi[c] = box[ch, 1, c]
        for kk in range(1, n_nchild[i]):
            ch = children[n_child0[i] + kk]
            for c in range(d):
                lo[c] = min(lo[c], box[ch, 0, c])
                hi[c] = max(hi[c], box[ch, 1, c])
        for c in range(d):
            ctr[i, c] = 0.5 * (lo[c] + hi[c])
        # enclosing bound from the children, capped by the box half-diagonal
        hd = 0.0
        for c in range(d):
            hd += 0.25 * (hi[c] - lo[c]) ** 2
        rr = 0.0
        for kk in range(n_nchild[i]):
            ch = children[n_child0[i] + kk]
            v2 = 0.0
            for c in range(d):
                v2 += (ctr[ch, c] - ctr[i, c]) ** 2
            rr = max(rr, math.sqrt(v2) + rad[ch])
        rad[i] = min(rr, math.sqrt(hd))
        if b - a <= npx:
            continue
        _set_nodes(i, order, d, box, ctr, cheb, nodes_ax)
        for kk in range(n_nchild[i]):
            ch = children[n_child0[i] + kk]
            if n_end[ch] - n_start[ch] <= npx:
                for j in range(n_start[ch], n_end[ch]):
                    _feed(i, src[j], q[j], order, d, npx, bw, nodes_ax, L, pxy, pq, mom, ktab)
            elif order == 0:
                for k in range(2):
                    pq[i, k] += pq[ch, k]
                    for c in range(d):
                        mom[i, k, c] += mom[ch, k, c]
            else:
                for p in range(npx):
                    _feed(i, pxy[ch, p], pq[ch, p], order, d, npx, bw, nodes_ax, L,
                          pxy, pq, mom, ktab)
        _finish(i, order, d, npx, pxy, pq, mom, ctr, nodes_ax, ktab)
    return ctr, rad, pxy, pq


@njit(cache=True, parallel=True)
def abs_sum(s, scale, delta, src, q, tgt):
    """sum_j |x - y_j| / max(delta, |x - y_j|)^(s+1) |q_j|, the size of the
    sum without cancellation for kernels with |Omega(x)| = |x|."""
    m = tgt.shape[0]
    n = src.shape[0]
    d = src.shape[1]
    sp1 = s + 1.0
    out = np.zeros(m)
    for t in prange(m):
        acc = 0.0
        for j in range(n):
            r2 = 0.0
            for c in range(d):
                v = tgt[t, c] - src[j, c]
                r2 += v * v
            if r2 == 0.0:
                continue
            r = math.sqrt(r2)
            rr = r if r > delta else delta
            acc += r * abs(q[j]) / _power(rr, sp1)
        out[t] = scale * acc
    return out
