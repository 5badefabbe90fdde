# cython: language_level=3
"""Compiled hot loops: z-buffer ray casting, grid nearest-neighbour search and
the RANSAC triangle-hypothesis loop.  ``_pure.py`` mirrors every function
operation-for-operation so both backends agree."""

from libc.math cimport sqrt, fabs, INFINITY

cdef double EPS_T = 1e-9


cdef inline double _hit_box(double ox, double oy, double oz, double dx, double dy, double dz,
                            double ax, double ay, double az) nogil:
    cdef double t0 = -INFINITY
    cdef double t1 = INFINITY
    cdef double inv, ta, tb, tmp
    if dx != 0.0:
        inv = 1.0 / dx
        ta = (-ax - ox) * inv
        tb = (ax - ox) * inv
        if ta > tb:
            tmp = ta; ta = tb; tb = tmp
        if ta > t0: t0 = ta
        if tb < t1: t1 = tb
    elif ox < -ax or ox > ax:
        return INFINITY
    if dy != 0.0:
        inv = 1.0 / dy
        ta = (-ay - oy) * inv
        tb = (ay - oy) * inv
        if ta > tb:
            tmp = ta; ta = tb; tb = tmp
        if ta > t0: t0 = ta
        if tb < t1: t1 = tb
    elif oy < -ay or oy > ay:
        return INFINITY
    if dz != 0.0:
        inv = 1.0 / dz
        ta = (-az - oz) * inv
        tb = (az - oz) * inv
        if ta > tb:
            tmp = ta; ta = tb; tb = tmp
        if ta > t0: t0 = ta
        if tb < t1: t1 = tb
    elif oz < -az or oz > az:
        return INFINITY
    if t0 > t1 or t1 <= EPS_T:
        return INFINITY
    if t0 > EPS_T:
        return t0
    return INFINITY


cdef inline double _hit_cylinder(double ox, double oy, double oz, double dx, double dy, double dz,
                                 double r, double hh) nogil:
    cdef double best = INFINITY
    cdef double a, b, c, disc, sq, t, z, x, y
    a = dx * dx + dy * dy
    if a > 0.0:
        b = ox * dx + oy * dy
        c = ox * ox + oy * oy - r * r
        disc = b * b - a * c
        if disc >= 0.0:
            sq = sqrt(disc)
            t = (-b - sq) / a
            if t > EPS_T:
                z = oz + t * dz
                if z >= -hh and z <= hh:
                    best = t
    if dz != 0.0:
        t = (hh - oz) / dz
        if t > EPS_T and t < best:
            x = ox + t * dx
            y = oy + t * dy
            if x * x + y * y <= r * r:
                best = t
        t = (-hh - oz) / dz
        if t > EPS_T and t < best:
            x = ox + t * dx
            y = oy + t * dy
            if x * x + y * y <= r * r:
                best = t
    return best


cdef inline double _hit_sphere(double ox, double oy, double oz, double dx, double dy, double dz,
                               double r) nogil:
    cdef double a = dx * dx + dy * dy + dz * dz
    cdef double b = ox * dx + oy * dy + oz * dz
    cdef double c = ox * ox + oy * oy + oz * oz - r * r
    cdef double disc = b * b - a * c
    cdef double t
    if disc < 0.0:
        return INFINITY
    t = (-b - sqrt(disc)) / a
    if t > EPS_T:
        return t
    return INFINITY


def render_depth(double[:, ::1] cam_R, double[::1] cam_t,
                 double fx, double fy, double cx, double cy,
                 long[:, ::1] rects, int[::1] part_kind, int[::1] part_object,
                 double[:, ::1] part_R, double[:, ::1] part_t, double[:, ::1] part_dims,
                 double[::1] belt, double floor_z,
                 double[:, ::1] depth_out, int[:, ::1] label_out, long[::1] silhouette_out):
    """Cast one ray per pixel centre; write z-depth, label (object index + 1) and
    per-object silhouette pixel counts (hits regardless of occlusion)."""
    cdef Py_ssize_t h = depth_out.shape[0]
    cdef Py_ssize_t w = depth_out.shape[1]
    cdef Py_ssize_t n_parts = part_kind.shape[0]
    cdef Py_ssize_t r, c, p
    cdef double xn, yn, dwx, dwy, dwz, t, best, obj_best, px, py
    cdef double ox, oy, oz, lx, ly, lz, ldx, ldy, ldz, rx, ry, rz
    cdef int best_label, cur_obj
    cdef bint cur_hit
    with nogil:
        for r in range(h):
            yn = (r + 0.5 - cy) / fy
            for c in range(w):
                xn = (c + 0.5 - cx) / fx
                dwx = cam_R[0, 0] * xn + cam_R[0, 1] * yn + cam_R[0, 2]
                dwy = cam_R[1, 0] * xn + cam_R[1, 1] * yn + cam_R[1, 2]
                dwz = cam_R[2, 0] * xn + cam_R[2, 1] * yn + cam_R[2, 2]
                best = 0.0
                best_label = 0
                if dwz < 0.0:
                    t = (belt[4] - cam_t[2]) / dwz
                    px = cam_t[0] + t * dwx
                    py = cam_t[1] + t * dwy
                    if t > EPS_T and px >= belt[0] and px <= belt[1] and py >= belt[2] and py <= belt[3]:
                        best = t
                    else:
                        t = (floor_z - cam_t[2]) / dwz
                        if t > EPS_T:
                            best = t
                cur_obj = -1
                cur_hit = False
                for p in range(n_parts):
                    if part_object[p] != cur_obj:
                        if cur_hit:
                            silhouette_out[cur_obj] += 1
                        cur_obj = part_object[p]
                        cur_hit = False
                    if r < rects[p, 0] or r >= rects[p, 1] or c < rects[p, 2] or c >= rects[p, 3]:
                        continue
                    rx = cam_t[0] - part_t[p, 0]
                    ry = cam_t[1] - part_t[p, 1]
                    rz = cam_t[2] - part_t[p, 2]
                    lx = part_R[p, 0] * rx + part_R[p, 1] * ry + part_R[p, 2] * rz
                    ly = part_R[p, 3] * rx + part_R[p, 4] * ry + part_R[p, 5] * rz
                    lz = part_R[p, 6] * rx + part_R[p, 7] * ry + part_R[p, 8] * rz
                    ldx = part_R[p, 0] * dwx + part_R[p, 1] * dwy + part_R[p, 2] * dwz
                    ldy = part_R[p, 3] * dwx + part_R[p, 4] * dwy + part_R[p, 5] * dwz
                    ldz = part_R[p, 6] * dwx + part_R[p, 7] * dwy + part_R[p, 8] * dwz
                    if part_kind[p] == 0:
                        t = _hit_box(lx, ly, lz, ldx, ldy, ldz, part_dims[p, 0], part_dims[p, 1], part_dims[p, 2])
                    elif part_kind[p] == 1:
                        t = _hit_cylinder(lx, ly, lz, ldx, ldy, ldz, part_dims[p, 0], part_dims[p, 1])
                    else:
                        t = _hit_sphere(lx, ly, lz, ldx, ldy, ldz, part_dims[p, 0])
                    if t < INFINITY:
                        cur_hit = True
                        if best == 0.0 or t < best:
                            best = t
                            best_label = part_object[p] + 1
                if cur_hit:
                    silhouette_out[cur_obj] += 1
                depth_out[r, c] = best
                label_out[r, c] = best_label


def nn_query(double[:, ::1] ref, long[::1] order, long[::1] cell_start,
             double[::1] origin, double cell, long[::1] dims,
             double[:, ::1] queries, double max_dist,
             long[::1] out_idx, double[::1] out_d2):
    """Nearest reference point per query by expanding Chebyshev shells of grid cells.
    Ties go to the smaller reference index; ``-1`` when nothing lies within max_dist."""
    cdef Py_ssize_t nq = queries.shape[0]
    cdef Py_ssize_t q, k, s, e
    cdef long nx = dims[0], ny = dims[1], nz = dims[2]
    cdef long ix, iy, iz, ring, jx, jy, jz, cid, idx, max_ring
    cdef double qx, qy, qz, dx, dy, dz, d2, best_d2, lim2, bound, b
    cdef long best_i
    max_ring = nx
    if ny > max_ring: max_ring = ny
    if nz > max_ring: max_ring = nz
    lim2 = max_dist * max_dist
    with nogil:
        for q in range(nq):
            qx = queries[q, 0]; qy = queries[q, 1]; qz = queries[q, 2]
            ix = <long>((qx - origin[0]) / cell) if qx >= origin[0] else -1
            iy = <long>((qy - origin[1]) / cell) if qy >= origin[1] else -1
            iz = <long>((qz - origin[2]) / cell) if qz >= origin[2] else -1
            if ix < 0: ix = 0
            if iy < 0: iy = 0
            if iz < 0: iz = 0
            if ix >= nx: ix = nx - 1
            if iy >= ny: iy = ny - 1
            if iz >= nz: iz = nz - 1
            best_d2 = INFINITY
            best_i = -1
            ring = 0
            while ring <= max_ring:
                for jx in range(ix - ring, ix + ring + 1):
                    if jx < 0 or jx >= nx:
                        continue
                    for jy in range(iy - ring, iy + ring + 1):
                        if jy < 0 or jy >= ny:
                            continue
                        for jz in range(iz - ring, iz + ring + 1):
                            if jz < 0 or jz >= nz:
                                continue
                            if (jx != ix - ring and jx != ix + ring and jy != iy - ring
                                    and jy != iy + ring and jz != iz - ring and jz != iz + ring):
                                continue
                            cid = (jx * ny + jy) * nz + jz
                            s = cell_start[cid]
                            e = cell_start[cid + 1]
                            for k in range(s, e):
                                idx = order[k]
                                dx = qx - ref[idx, 0]
                                dy = qy - ref[idx, 1]
                                dz = qz - ref[idx, 2]
                                d2 = dx * dx + dy * dy + dz * dz
                                if d2 < best_d2 or (d2 == best_d2 and idx < best_i):
                                    best_d2 = d2
                                    best_i = idx
                # distance from the query to the nearest unvisited cell
                bound = INFINITY
                if ix - ring > 0:
                    b = qx - (origin[0] + (ix - ring) * cell)
                    if b < bound: bound = b
                if ix + ring + 1 < nx:
                    b = origin[0] + (ix + ring + 1) * cell - qx
                    if b < bound: bound = b
                if iy - ring > 0:
                    b = qy - (origin[1] + (iy - ring) * cell)
                    if b < bound: bound = b
                if iy + ring + 1 < ny:
                    b = origin[1] + (iy + ring + 1) * cell - qy
                    if b < bound: bound = b
                if iz - ring > 0:
                    b = qz - (origin[2] + (iz - ring) * cell)
                    if b < bound: bound = b
                if iz + ring + 1 < nz:
                    b = origin[2] + (iz + ring + 1) * cell - qz
                    if b < bound: bound = b
                if bound == INFINITY:
                    break
                if bound < 0: bound = 0
                # strict: an unvisited point at exactly ``bound`` may hold a lower index
                if best_d2 < bound * bound or bound * bound > lim2:
                    break
                ring += 1
            if best_i >= 0 and best_d2 <= lim2:
                out_idx[q] = best_i
                out_d2[q] = best_d2
            else:
                out_idx[q] = -1
                out_d2[q] = INFINITY


cdef inline bint _frame(double ax, double ay, double az, double bx, double by, double bz,
                        double cx, double cy, double cz, double min_area, double* F, double* g) nogil:
    cdef double e1x = bx - ax, e1y = by - ay, e1z = bz - az
    cdef double fx = cx - ax, fy = cy - ay, fz = cz - az
    cdef double nx = e1y * fz - e1z * fy
    cdef double ny = e1z * fx - e1x * fz
    cdef double nz = e1x * fy - e1y * fx
    cdef double ln = sqrt(nx * nx + ny * ny + nz * nz)
    cdef double l1 = sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    if ln < min_area or l1 == 0.0:
        return False
    e1x /= l1; e1y /= l1; e1z /= l1
    nx /= ln; ny /= ln; nz /= ln
    # columns: e1, e2 = n x e1, n
    F[0] = e1x; F[3] = e1y; F[6] = e1z
    F[1] = ny * e1z - nz * e1y
    F[4] = nz * e1x - nx * e1z
    F[7] = nx * e1y - ny * e1x
    F[2] = nx; F[5] = ny; F[8] = nz
    g[0] = (ax + bx + cx) / 3.0
    g[1] = (ay + by + cy) / 3.0
    g[2] = (az + bz + cz) / 3.0
    return True


def ransac_triangles(double[:, ::1] scene, double[:, ::1] model, double[:, ::1] model_d,
                     double[:, ::1] verify, long[:, ::1] triples, long[::1] anchors,
                     double[:, ::1] picks, double tol, double inlier_thr, double min_side,
                     double stop_fraction, long[::1] cand_buf,
                     double[:, ::1] out_R, double[:, ::1] out_t, long[::1] out_score):
    """Distance-consistent triangle correspondences -> rigid hypotheses (model to scene).
    Keeps the ``len(out_score)`` best by verification inlier count; returns iterations run."""
    cdef Py_ssize_t n_it = triples.shape[0]
    cdef Py_ssize_t nm = model.shape[0]
    cdef Py_ssize_t nv = verify.shape[0]
    cdef Py_ssize_t keep = out_score.shape[0]
    cdef Py_ssize_t it, m, v, kk, pos, nJ, nK
    cdef long a, b, c, i, j, k, score
    cdef double dab, dac, dbc, d, ux, uy, uz, wx, wy, wz, dx, dy, dz, thr2 = inlier_thr * inlier_thr
    cdef double Fs[9]
    cdef double Fm[9]
    cdef double gs[3]
    cdef double gm[3]
    cdef double R[9]
    cdef double t[3]
    cdef double min_area = 0.5 * min_side * min_side
    cdef long stop_score = <long>(stop_fraction * nv + 0.999999)
    cdef Py_ssize_t ran = 0
    for kk in range(keep):
        out_score[kk] = -1
    with nogil:
        for it in range(n_it):
            ran = it + 1
            a = triples[it, 0]; b = triples[it, 1]; c = triples[it, 2]
            dx = scene[b, 0] - scene[a, 0]; dy = scene[b, 1] - scene[a, 1]; dz = scene[b, 2] - scene[a, 2]
            dab = sqrt(dx * dx + dy * dy + dz * dz)
            dx = scene[c, 0] - scene[a, 0]; dy = scene[c, 1] - scene[a, 1]; dz = scene[c, 2] - scene[a, 2]
            dac = sqrt(dx * dx + dy * dy + dz * dz)
            dx = scene[c, 0] - scene[b, 0]; dy = scene[c, 1] - scene[b, 1]; dz = scene[c, 2] - scene[b, 2]
            dbc = sqrt(dx * dx + dy * dy + dz * dz)
            if dab < min_side or dac < min_side or dbc < min_side:
                continue
            if not _frame(scene[a, 0], scene[a, 1], scene[a, 2], scene[b, 0], scene[b, 1], scene[b, 2],
                          scene[c, 0], scene[c, 1], scene[c, 2], min_area, Fs, gs):
                continue
            i = anchors[it]
            nJ = 0
            for m in range(nm):
                if m != i and fabs(model_d[i, m] - dab) <= tol:
                    cand_buf[nJ] = m
                    nJ += 1
            if nJ == 0:
                continue
            j = cand_buf[<Py_ssize_t>(picks[it, 0] * nJ)]
            nK = 0
            for m in range(nm):
                if m != i and m != j and fabs(model_d[i, m] - dac) <= tol and fabs(model_d[j, m] - dbc) <= tol:
                    cand_buf[nK] = m
                    nK += 1
            if nK == 0:
                continue
            k = cand_buf[<Py_ssize_t>(picks[it, 1] * nK)]
            if not _frame(model[i, 0], model[i, 1], model[i, 2], model[j, 0], model[j, 1], model[j, 2],
                          model[k, 0], model[k, 1], model[k, 2], min_area, Fm, gm):
                continue
            # R = Fs * Fm^T
            for m in range(3):
                for v in range(3):
                    R[m * 3 + v] = Fs[m * 3 + 0] * Fm[v * 3 + 0] + Fs[m * 3 + 1] * Fm[v * 3 + 1] + Fs[m * 3 + 2] * Fm[v * 3 + 2]
            for m in range(3):
                t[m] = gs[m] - (R[m * 3 + 0] * gm[0] + R[m * 3 + 1] * gm[1] + R[m * 3 + 2] * gm[2])
            score = 0
            for v in range(nv):
                # verification point into the model frame: R^T (p - t)
                wx = verify[v, 0] - t[0]; wy = verify[v, 1] - t[1]; wz = verify[v, 2] - t[2]
                ux = R[0] * wx + R[3] * wy + R[6] * wz
                uy = R[1] * wx + R[4] * wy + R[7] * wz
                uz = R[2] * wx + R[5] * wy + R[8] * wz
                for m in range(nm):
                    dx = ux - model[m, 0]; dy = uy - model[m, 1]; dz = uz - model[m, 2]
                    if dx * dx + dy * dy + dz * dz <= thr2:
                        score += 1
                        break
            if score > out_score[keep - 1]:
                pos = keep - 1
                while pos > 0 and out_score[pos - 1] < score:
                    out_score[pos] = out_score[pos - 1]
                    for m in range(3):
                        out_t[pos, m] = out_t[pos - 1, m]
                    for m in range(9):
                        out_R[pos, m] = out_R[pos - 1, m]
                    pos -= 1
                out_score[pos] = score
                for m in range(3):
                    out_t[pos, m] = t[m]
                for m in range(9):
                    out_R[pos, m] = R[m]
                if score >= stop_score:
                    break
    return ran
