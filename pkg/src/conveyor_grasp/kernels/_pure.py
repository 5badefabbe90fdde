"""NumPy fallback for the compiled kernels in ``_core.pyx``.

Signatures and results match the compiled versions; only speed differs.
"""

import numpy as np

EPS_T = 1e-9


def _hit_box(o, d, half):
    n = len(o)
    t0 = np.full(n, -np.inf)
    t1 = np.full(n, np.inf)
    miss = np.zeros(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for ax in range(3):
            dd = d[:, ax]
            oo = o[:, ax]
            nz = dd != 0.0
            inv = np.where(nz, 1.0 / np.where(nz, dd, 1.0), 0.0)
            ta = (-half[ax] - oo) * inv
            tb = (half[ax] - oo) * inv
            lo = np.minimum(ta, tb)
            hi = np.maximum(ta, tb)
            t0 = np.where(nz & (lo > t0), lo, t0)
            t1 = np.where(nz & (hi < t1), hi, t1)
            miss |= ~nz & ((oo < -half[ax]) | (oo > half[ax]))
    ok = ~miss & ~(t0 > t1) & ~(t1 <= EPS_T) & (t0 > EPS_T)
    return np.where(ok, t0, np.inf)


def _hit_cylinder(o, d, r, hh):
    ox, oy, oz = o[:, 0], o[:, 1], o[:, 2]
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    best = np.full(len(o), np.inf)
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - r * r
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (a > 0.0) & (disc >= 0.0)
        t = (-b - np.sqrt(np.where(ok, disc, 0.0))) / np.where(a > 0.0, a, 1.0)
        z = oz + t * dz
        side = ok & (t > EPS_T) & (z >= -hh) & (z <= hh)
        best = np.where(side, t, best)
        for plane in (hh, -hh):
            nz = dz != 0.0
            t = (plane - oz) / np.where(nz, dz, 1.0)
            x = ox + t * dx
            y = oy + t * dy
            cap = nz & (t > EPS_T) & (t < best) & (x * x + y * y <= r * r)
            best = np.where(cap, t, best)
    return best


def _hit_sphere(o, d, r):
    a = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1] + o[:, 2] * d[:, 2]
    c = o[:, 0] * o[:, 0] + o[:, 1] * o[:, 1] + o[:, 2] * o[:, 2] - r * r
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(np.where(disc >= 0.0, disc, 0.0))) / a
    return np.where((disc >= 0.0) & (t > EPS_T), t, np.inf)


def render_depth(cam_R, cam_t, fx, fy, cx, cy, rects, part_kind, part_object, part_R, part_t,
                 part_dims, belt, floor_z, depth_out, label_out, silhouette_out):
    h, w = depth_out.shape
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    yn = (rr + 0.5 - cy) / fy
    xn = (cc + 0.5 - cx) / fx
    dwx = cam_R[0, 0] * xn + cam_R[0, 1] * yn + cam_R[0, 2]
    dwy = cam_R[1, 0] * xn + cam_R[1, 1] * yn + cam_R[1, 2]
    dwz = cam_R[2, 0] * xn + cam_R[2, 1] * yn + cam_R[2, 2]
    best = np.zeros((h, w))
    label = np.zeros((h, w), dtype=np.int32)
    with np.errstate(divide="ignore", invalid="ignore"):
        down = dwz < 0.0
        t = (belt[4] - cam_t[2]) / dwz
        px = cam_t[0] + t * dwx
        py = cam_t[1] + t * dwy
        on_belt = down & (t > EPS_T) & (px >= belt[0]) & (px <= belt[1]) & (py >= belt[2]) & (py <= belt[3])
        tf = (floor_z - cam_t[2]) / dwz
        best = np.where(on_belt, t, np.where(down & (tf > EPS_T), tf, 0.0))

    n_obj = len(silhouette_out)
    obj_hit = np.zeros((n_obj, h, w), dtype=bool)
    for p in range(len(part_kind)):
        r0, r1, c0, c1 = (int(v) for v in rects[p])
        if r0 >= r1 or c0 >= c1:
            continue
        sl = (slice(r0, r1), slice(c0, c1))
        d = np.stack([dwx[sl].ravel(), dwy[sl].ravel(), dwz[sl].ravel()], axis=1)
        rel = np.array([cam_t[0] - part_t[p, 0], cam_t[1] - part_t[p, 1], cam_t[2] - part_t[p, 2]])
        Rp = part_R[p].reshape(3, 3)
        lo = np.array([
            Rp[0, 0] * rel[0] + Rp[0, 1] * rel[1] + Rp[0, 2] * rel[2],
            Rp[1, 0] * rel[0] + Rp[1, 1] * rel[1] + Rp[1, 2] * rel[2],
            Rp[2, 0] * rel[0] + Rp[2, 1] * rel[1] + Rp[2, 2] * rel[2],
        ])
        ld = np.stack([
            Rp[0, 0] * d[:, 0] + Rp[0, 1] * d[:, 1] + Rp[0, 2] * d[:, 2],
            Rp[1, 0] * d[:, 0] + Rp[1, 1] * d[:, 1] + Rp[1, 2] * d[:, 2],
            Rp[2, 0] * d[:, 0] + Rp[2, 1] * d[:, 1] + Rp[2, 2] * d[:, 2],
        ], axis=1)
        o = np.broadcast_to(lo, ld.shape)
        kind = int(part_kind[p])
        if kind == 0:
            t = _hit_box(o, ld, part_dims[p])
        elif kind == 1:
            t = _hit_cylinder(o, ld, part_dims[p, 0], part_dims[p, 1])
        else:
            t = _hit_sphere(o, ld, part_dims[p, 0])
        t = t.reshape(r1 - r0, c1 - c0)
        hit = np.isfinite(t)
        obj = int(part_object[p])
        obj_hit[obj][sl] |= hit
        cur = best[sl]
        take = hit & ((cur == 0.0) | (t < cur))
        best[sl] = np.where(take, t, cur)
        label[sl] = np.where(take, obj + 1, label[sl])
    depth_out[...] = best
    label_out[...] = label
    silhouette_out[...] += obj_hit.reshape(n_obj, -1).sum(axis=1)


def nn_query(ref, order, cell_start, origin, cell, dims, queries, max_dist, out_idx, out_d2):
    """Brute-force equivalent of the grid search (same tie rule: lowest index)."""
    lim2 = max_dist * max_dist
    n = len(queries)
    if len(ref) == 0:
        out_idx[:] = -1
        out_d2[:] = np.inf
        return
    chunk = max(1, 2_000_000 // max(1, len(ref)))
    for s in range(0, n, chunk):
        q = queries[s:s + chunk]
        dx = q[:, 0:1] - ref[None, :, 0]
        dy = q[:, 1:2] - ref[None, :, 1]
        dz = q[:, 2:3] - ref[None, :, 2]
        d2 = dx * dx + dy * dy + dz * dz
        idx = np.argmin(d2, axis=1)
        best = d2[np.arange(len(q)), idx]
        ok = best <= lim2
        out_idx[s:s + chunk] = np.where(ok, idx, -1)
        out_d2[s:s + chunk] = np.where(ok, best, np.inf)


def _frame(a, b, c, min_area):
    e1 = b - a
    f = c - a
    n = np.array([e1[1] * f[2] - e1[2] * f[1], e1[2] * f[0] - e1[0] * f[2], e1[0] * f[1] - e1[1] * f[0]])
    ln = np.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
    l1 = np.sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2])
    if ln < min_area or l1 == 0.0:
        return None
    e1 = e1 / l1
    n = n / ln
    e2 = np.array([n[1] * e1[2] - n[2] * e1[1], n[2] * e1[0] - n[0] * e1[2], n[0] * e1[1] - n[1] * e1[0]])
    F = np.column_stack([e1, e2, n])
    g = np.array([(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0])
    return F, g


def _dist(p, q):
    d = p - q
    return np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])


def ransac_triangles(scene, model, model_d, verify, triples, anchors, picks, tol, inlier_thr,
                     min_side, stop_fraction, cand_buf, out_R, out_t, out_score):
    keep = len(out_score)
    out_score[:] = -1
    thr2 = inlier_thr * inlier_thr
    min_area = 0.5 * min_side * min_side
    stop_score = int(stop_fraction * len(verify) + 0.999999)
    nm = len(model)
    idx_all = np.arange(nm)
    ran = 0
    for it in range(len(triples)):
        ran = it + 1
        a, b, c = (int(v) for v in triples[it])
        pa, pb, pc = scene[a], scene[b], scene[c]
        dab, dac, dbc = _dist(pb, pa), _dist(pc, pa), _dist(pc, pb)
        if dab < min_side or dac < min_side or dbc < min_side:
            continue
        fs = _frame(pa, pb, pc, min_area)
        if fs is None:
            continue
        i = int(anchors[it])
        J = idx_all[(idx_all != i) & (np.abs(model_d[i] - dab) <= tol)]
        if len(J) == 0:
            continue
        j = int(J[int(picks[it, 0] * len(J))])
        K = idx_all[(idx_all != i) & (idx_all != j) & (np.abs(model_d[i] - dac) <= tol) & (np.abs(model_d[j] - dbc) <= tol)]
        if len(K) == 0:
            continue
        k = int(K[int(picks[it, 1] * len(K))])
        fm = _frame(model[i], model[j], model[k], min_area)
        if fm is None:
            continue
        Fs, gs = fs
        Fm, gm = fm
        R = np.empty((3, 3))
        for m in range(3):
            for v in range(3):
                R[m, v] = Fs[m, 0] * Fm[v, 0] + Fs[m, 1] * Fm[v, 1] + Fs[m, 2] * Fm[v, 2]
        t = np.array([gs[m] - (R[m, 0] * gm[0] + R[m, 1] * gm[1] + R[m, 2] * gm[2]) for m in range(3)])
        w = verify - t
        u = np.stack([
            R[0, 0] * w[:, 0] + R[1, 0] * w[:, 1] + R[2, 0] * w[:, 2],
            R[0, 1] * w[:, 0] + R[1, 1] * w[:, 1] + R[2, 1] * w[:, 2],
            R[0, 2] * w[:, 0] + R[1, 2] * w[:, 1] + R[2, 2] * w[:, 2],
        ], axis=1)
        dx = u[:, 0:1] - model[None, :, 0]
        dy = u[:, 1:2] - model[None, :, 1]
        dz = u[:, 2:3] - model[None, :, 2]
        score = int(np.count_nonzero(np.any(dx * dx + dy * dy + dz * dz <= thr2, axis=1)))
        if score > out_score[keep - 1]:
            pos = keep - 1
            while pos > 0 and out_score[pos - 1] < score:
                out_score[pos] = out_score[pos - 1]
                out_t[pos] = out_t[pos - 1]
                out_R[pos] = out_R[pos - 1]
                pos -= 1
            out_score[pos] = score
            out_t[pos] = t
            out_R[pos] = R.ravel()
            if score >= stop_score:
                break
    return ran
