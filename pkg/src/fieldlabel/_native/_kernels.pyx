# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Hot-loop kernels: voxel-grid ray marching and BVH ray-triangle casting.

Every formula here mirrors the numpy fallback term by term (same operand
order, same associativity, no fused math), so both backends produce
bit-identical doubles. Keep the two in sync when touching either.
"""

from libc.math cimport floor, INFINITY


cdef inline double _trilinear(const double[:, :, ::1] grid,
                              double px, double py, double pz,
                              double lox, double loy, double loz,
                              double hix, double hiy, double hiz,
                              double cx, double cy, double cz) noexcept nogil:
    cdef double u0, u1, u2, f0, f1, f2, g0, g1, g2
    cdef Py_ssize_t i0, i1, i2, n0, n1, n2
    if px < lox or px > hix or py < loy or py > hiy or pz < loz or pz > hiz:
        return 0.0
    n0 = grid.shape[0]
    n1 = grid.shape[1]
    n2 = grid.shape[2]
    u0 = (px - lox) / cx
    u1 = (py - loy) / cy
    u2 = (pz - loz) / cz
    i0 = <Py_ssize_t>floor(u0)
    i1 = <Py_ssize_t>floor(u1)
    i2 = <Py_ssize_t>floor(u2)
    if i0 < 0:
        i0 = 0
    elif i0 > n0 - 2:
        i0 = n0 - 2
    if i1 < 0:
        i1 = 0
    elif i1 > n1 - 2:
        i1 = n1 - 2
    if i2 < 0:
        i2 = 0
    elif i2 > n2 - 2:
        i2 = n2 - 2
    f0 = u0 - i0
    f1 = u1 - i1
    f2 = u2 - i2
    g0 = 1.0 - f0
    g1 = 1.0 - f1
    g2 = 1.0 - f2
    return (grid[i0, i1, i2] * ((g0 * g1) * g2)
            + grid[i0, i1, i2 + 1] * ((g0 * g1) * f2)
            + grid[i0, i1 + 1, i2] * ((g0 * f1) * g2)
            + grid[i0, i1 + 1, i2 + 1] * ((g0 * f1) * f2)
            + grid[i0 + 1, i1, i2] * ((f0 * g1) * g2)
            + grid[i0 + 1, i1, i2 + 1] * ((f0 * g1) * f2)
            + grid[i0 + 1, i1 + 1, i2] * ((f0 * f1) * g2)
            + grid[i0 + 1, i1 + 1, i2 + 1] * ((f0 * f1) * f2))


def march_voxel_rays(const double[:, ::1] origins, const double[:, ::1] dirs,
                     const double[:, :, ::1] sigma,
                     const double[::1] lo, const double[::1] hi, const double[::1] cell,
                     double t_near, double step, Py_ssize_t n_steps, int mode,
                     double threshold, double[::1] out):
    """mode 0: first sample with sigma > threshold. mode 1: first sample where
    accumulated optical depth exceeds threshold. out[r] = -1 when no hit."""
    cdef Py_ssize_t r, i, n_rays = origins.shape[0]
    cdef double t, px, py, pz, s, tau, ox, oy, oz, dx, dy, dz
    cdef double lox = lo[0], loy = lo[1], loz = lo[2]
    cdef double hix = hi[0], hiy = hi[1], hiz = hi[2]
    cdef double cx = cell[0], cy = cell[1], cz = cell[2]
    with nogil:
        for r in range(n_rays):
            ox = origins[r, 0]
            oy = origins[r, 1]
            oz = origins[r, 2]
            dx = dirs[r, 0]
            dy = dirs[r, 1]
            dz = dirs[r, 2]
            tau = 0.0
            out[r] = -1.0
            for i in range(n_steps):
                t = t_near + i * step
                px = ox + t * dx
                py = oy + t * dy
                pz = oz + t * dz
                s = _trilinear(sigma, px, py, pz, lox, loy, loz, hix, hiy, hiz, cx, cy, cz)
                if mode == 0:
                    if s > threshold:
                        out[r] = t
                        break
                else:
                    tau = tau + s * step
                    if tau > threshold:
                        out[r] = t
                        break
    return None


def render_mesh_rays(const double[:, ::1] verts, const int[:, ::1] tris,
                     const double[:, ::1] node_bounds, const int[:, ::1] node_meta,
                     const int[::1] tri_order,
                     const double[:, ::1] dirs, double[::1] out_t):
    """Nearest-hit ray parameter per ray against one BVH-packed mesh.

    Rays start at the origin (camera frame); dirs are the unnormalized
    per-pixel directions with dz = -1, which makes the returned t the
    camera z-depth directly. out_t must be prefilled with +inf.
    """
    cdef Py_ssize_t r, n_rays = dirs.shape[0]
    cdef int stack[128]
    cdef int sp, node, left, right, start, count, k, tri
    cdef int ia, ib, ic
    cdef double dx, dy, dz, best
    cdef double ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z
    cdef double tvx, tvy, tvz, px_, py_, pz_, qx, qy, qz
    cdef double det, inv, u, v, t
    cdef double tmin, tmax, t0, t1, tmp, b_lo, b_hi, dd
    cdef int axis, hit
    with nogil:
        for r in range(n_rays):
            dx = dirs[r, 0]
            dy = dirs[r, 1]
            dz = dirs[r, 2]
            best = out_t[r]
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                # slab test, ray origin at 0
                tmin = -INFINITY
                tmax = INFINITY
                hit = 1
                for axis in range(3):
                    b_lo = node_bounds[node, axis]
                    b_hi = node_bounds[node, 3 + axis]
                    if axis == 0:
                        dd = dx
                    elif axis == 1:
                        dd = dy
                    else:
                        dd = dz
                    if dd != 0.0:
                        t0 = b_lo / dd
                        t1 = b_hi / dd
                        if t0 > t1:
                            tmp = t0
                            t0 = t1
                            t1 = tmp
                        if t0 > tmin:
                            tmin = t0
                        if t1 < tmax:
                            tmax = t1
                    else:
                        if b_lo > 0.0 or b_hi < 0.0:
                            hit = 0
                            break
                if hit == 0 or tmax < tmin or tmax < 0.0 or tmin > best:
                    continue
                left = node_meta[node, 0]
                if left < 0:
                    start = -left - 1
                    count = node_meta[node, 1]
                    for k in range(start, start + count):
                        tri = tri_order[k]
                        ia = tris[tri, 0]
                        ib = tris[tri, 1]
                        ic = tris[tri, 2]
                        ax = verts[ia, 0]
                        ay = verts[ia, 1]
                        az = verts[ia, 2]
                        e1x = verts[ib, 0] - ax
                        e1y = verts[ib, 1] - ay
                        e1z = verts[ib, 2] - az
                        e2x = verts[ic, 0] - ax
                        e2y = verts[ic, 1] - ay
                        e2z = verts[ic, 2] - az
                        # pvec = d x e2
                        px_ = dy * e2z - dz * e2y
                        py_ = dz * e2x - dx * e2z
                        pz_ = dx * e2y - dy * e2x
                        det = e1x * px_ + e1y * py_ + e1z * pz_
                        if det == 0.0:
                            continue
                        inv = 1.0 / det
                        tvx = 0.0 - ax
                        tvy = 0.0 - ay
                        tvz = 0.0 - az
                        u = (tvx * px_ + tvy * py_ + tvz * pz_) * inv
                        if u < 0.0 or u > 1.0:
                            continue
                        # qvec = tvec x e1
                        qx = tvy * e1z - tvz * e1y
                        qy = tvz * e1x - tvx * e1z
                        qz = tvx * e1y - tvy * e1x
                        v = (dx * qx + dy * qy + dz * qz) * inv
                        if v < 0.0 or u + v > 1.0:
                            continue
                        t = (e2x * qx + e2y * qy + e2z * qz) * inv
                        if t <= 0.0:
                            continue
                        if t < best:
                            best = t
                else:
                    right = node_meta[node, 1]
                    if sp < 126:
                        stack[sp] = left
                        sp += 1
                        stack[sp] = right
                        sp += 1
            out_t[r] = best
    return None
