"""Compiled message-passing kernels shared by inference and training.

Message arrays are frame-minor: ``u[e, f]`` is the message on edge ``e`` for
frame ``f`` (marginals ``x[i, f]``), so the innermost loops run over frames
and vectorize.  Every kernel takes ``nb``, the number of leading frame
columns in use.  Inference (`decode_frames`) and the training forward pass
(`forward`) call the same layer routines, so they produce bit-identical
messages.
"""

import numpy as np
from numba import njit

MODE_MIN_SUM = 0
MODE_BP = 1


@njit(cache=True)
def variable_layer(b, c_prev, alpha, beta, var_ptr, var_edges, clip, u, nb):
    """v->c messages: ``alpha_i b_i + sum_{other edges} beta c_prev``, clipped."""
    tot = np.empty(nb)
    for i in range(var_ptr.shape[0] - 1):
        ai = alpha[i]
        bi = b[i]
        for f in range(nb):
            tot[f] = ai * bi[f]
        for k in range(var_ptr[i], var_ptr[i + 1]):
            e = var_edges[k]
            be = beta[e]
            row = c_prev[e]
            for f in range(nb):
                tot[f] += be * row[f]
        for k in range(var_ptr[i], var_ptr[i + 1]):
            e = var_edges[k]
            be = beta[e]
            row = c_prev[e]
            out = u[e]
            for f in range(nb):
                v = tot[f] - be * row[f]
                if v > clip:
                    v = clip
                if v < -clip:
                    v = -clip
                out[f] = v


@njit(cache=True)
def check_layer_ms(u, gamma, offset, check_ptr, c, idx1, idx2, par, nb):
    """Weighted (offset) min-sum c->v messages by the two-minimum trick.

    Per check and frame, ``idx1``/``idx2`` receive the edges holding the
    smallest and second-smallest magnitude (lowest edge id wins ties) and
    ``par`` the parity of negative inputs; sgn(0) = +1.  Degree-1 checks emit
    zero and record ``idx1 = idx2 = -1``.
    """
    min1 = np.empty(nb)
    min2 = np.empty(nb)
    for j in range(check_ptr.shape[0] - 1):
        lo = check_ptr[j]
        hi = check_ptr[j + 1]
        i1 = idx1[j]
        i2 = idx2[j]
        pj = par[j]
        if hi - lo < 2:
            for f in range(nb):
                i1[f] = -1
                i2[f] = -1
                pj[f] = False
            for e in range(lo, hi):
                c[e, :nb] = 0.0
            continue
        for f in range(nb):
            min1[f] = np.inf
            min2[f] = np.inf
            i1[f] = -1
            i2[f] = -1
            pj[f] = False
        for e in range(lo, hi):
            row = u[e]
            for f in range(nb):
                v = row[f]
                a = -v if v < 0.0 else v
                pj[f] ^= v < 0.0
                lt1 = a < min1[f]
                lt2 = a < min2[f]
                new_m2 = min1[f] if lt1 else (a if lt2 else min2[f])
                new_i2 = i1[f] if lt1 else (e if lt2 else i2[f])
                min2[f] = new_m2
                i2[f] = new_i2
                if lt1:
                    min1[f] = a
                    i1[f] = e
        for e in range(lo, hi):
            g = gamma[e]
            row = u[e]
            out = c[e]
            for f in range(nb):
                mag = min2[f] if i1[f] == e else min1[f]
                if offset > 0.0:
                    mag = mag - offset
                    if mag < 0.0:
                        mag = 0.0
                w = g * mag
                out[f] = -w if (pj[f] ^ (row[f] < 0.0)) else w


@njit(cache=True)
def check_layer_bp(u, check_ptr, eps, c, scratch, nb):
    """Sum-product c->v messages ``2 atanh(prod tanh(u/2))`` over the exclusion set.

    Magnitudes are multiplied as sums of ``log tanh(|u|/2)`` (prefix/suffix,
    no division) and ``1 - prod`` is formed with expm1, so messages near
    saturation keep full precision.  The product magnitude is capped at
    ``1 - eps`` before atanh.
    """
    par = np.empty(nb, dtype=np.bool_)
    acc = np.empty(nb)
    for j in range(check_ptr.shape[0] - 1):
        lo = check_ptr[j]
        hi = check_ptr[j + 1]
        if hi - lo < 2:
            for e in range(lo, hi):
                c[e, :nb] = 0.0
            continue
        acc[:] = 0.0
        par[:] = False
        for e in range(lo, hi):
            for f in range(nb):
                v = u[e, f]
                t = np.exp(-abs(v))
                lt = np.log1p(-2.0 * t / (1.0 + t))  # log tanh(|v|/2), -inf at 0
                scratch[e, f] = acc[f]
                acc[f] += lt
                c[e, f] = lt
                par[f] ^= v < 0.0
        acc[:] = 0.0
        for e in range(hi - 1, lo - 1, -1):
            for f in range(nb):
                lt = c[e, f]
                q = -np.expm1(scratch[e, f] + acc[f])  # 1 - |prod|
                acc[f] += lt
                if q < eps:
                    q = eps
                m = np.log(2.0 - q) - np.log(q)
                c[e, f] = -m if (par[f] ^ (u[e, f] < 0.0)) else m


@njit(cache=True)
def marginal_layer(b, c, var_ptr, var_edges, clip, x, nb):
    """Bit marginals ``b_i + sum of all incoming c->v``, clipped."""
    for i in range(var_ptr.shape[0] - 1):
        xi = x[i]
        bi = b[i]
        for f in range(nb):
            xi[f] = bi[f]
        for k in range(var_ptr[i], var_ptr[i + 1]):
            row = c[var_edges[k]]
            for f in range(nb):
                xi[f] += row[f]
        for f in range(nb):
            v = xi[f]
            if v > clip:
                v = clip
            if v < -clip:
                v = -clip
            xi[f] = v


@njit(cache=True)
def syndrome_zero(x, edge_var, check_ptr, ok, nb):
    """``ok[f]`` is True when the hard decision of frame ``f`` is a codeword."""
    par = np.zeros(nb, dtype=np.bool_)
    ok[:nb] = True
    for j in range(check_ptr.shape[0] - 1):
        par[:] = False
        for e in range(check_ptr[j], check_ptr[j + 1]):
            xi = x[edge_var[e]]
            for f in range(nb):
                par[f] ^= xi[f] < 0.0
        for f in range(nb):
            if par[f]:
                ok[f] = False


@njit(cache=True)
def decode_frames(llrs, edge_var, check_ptr, var_ptr, var_edges, alpha, beta, gamma,
                  offset, mode, clip, eps, t_max, early_exit, chunk,
                  soft_out, iters_out, conv_out):
    """Flooding decoder over ``llrs`` (frames x N), ``chunk`` frames at a time.

    Frames that satisfy all checks leave the working set when ``early_exit``
    is set; the rest are compacted to the front.  Returns the index of the
    first frame producing a NaN (its iteration is in ``iters_out``), or -1.
    """
    n_frames, n = llrs.shape
    e_count = edge_var.shape[0]
    m = check_ptr.shape[0] - 1
    b = np.empty((n, chunk))
    c_prev = np.empty((e_count, chunk))
    u = np.empty((e_count, chunk))
    c = np.empty((e_count, chunk))
    scratch = np.empty((e_count, chunk))
    idx1 = np.empty((m, chunk), dtype=np.int32)
    idx2 = np.empty((m, chunk), dtype=np.int32)
    par = np.empty((m, chunk), dtype=np.bool_)
    x = np.empty((n, chunk))
    ok = np.empty(chunk, dtype=np.bool_)
    frame_of = np.empty(chunk, dtype=np.int64)
    for start in range(0, n_frames, chunk):
        nb = min(chunk, n_frames - start)
        for col in range(nb):
            frame_of[col] = start + col
            for i in range(n):
                b[i, col] = llrs[start + col, i]
        c_prev[:, :nb] = 0.0
        for layer in range(t_max):
            variable_layer(b, c_prev, alpha[layer], beta[layer], var_ptr, var_edges, clip, u, nb)
            if mode == MODE_BP:
                check_layer_bp(u, check_ptr, eps, c, scratch, nb)
            else:
                check_layer_ms(u, gamma[layer], offset, check_ptr, c, idx1, idx2, par, nb)
            marginal_layer(b, c, var_ptr, var_edges, clip, x, nb)
            for col in range(nb):
                for i in range(n):
                    if x[i, col] != x[i, col]:
                        iters_out[frame_of[col]] = layer + 1
                        return frame_of[col]
            syndrome_zero(x, edge_var, check_ptr, ok, nb)
            last = layer == t_max - 1
            keep = 0
            for col in range(nb):
                if (early_exit and ok[col]) or last:
                    fr = frame_of[col]
                    for i in range(n):
                        soft_out[fr, i] = x[i, col]
                    iters_out[fr] = layer + 1
                    conv_out[fr] = ok[col]
                else:
                    if keep != col:
                        frame_of[keep] = frame_of[col]
                        for i in range(n):
                            b[i, keep] = b[i, col]
                        for e in range(e_count):
                            c[e, keep] = c[e, col]
                    keep += 1
            nb = keep
            if nb == 0:
                break
            for e in range(e_count):
                for f in range(nb):
                    c_prev[e, f] = c[e, f]
    return -1


@njit(cache=True)
def forward(b, edge_var, check_ptr, var_ptr, var_edges, alpha, beta, gamma, offset, clip,
            u_tr, c_tr, idx1_tr, idx2_tr, par_tr, x_tr):
    """Unrolled min-sum pass over all layers, keeping every activation.

    ``b`` is ``(N, nb)``; trace arrays are ``[layer, edge|check|var, frame]``.
    Returns the first layer that produced a NaN, or -1.
    """
    n, nb = b.shape
    t_max = u_tr.shape[0]
    zeros = np.zeros((edge_var.shape[0], nb))
    for layer in range(t_max):
        c_prev = zeros if layer == 0 else c_tr[layer - 1]
        variable_layer(b, c_prev, alpha[layer], beta[layer], var_ptr, var_edges, clip,
                       u_tr[layer], nb)
        check_layer_ms(u_tr[layer], gamma[layer], offset, check_ptr, c_tr[layer],
                       idx1_tr[layer], idx2_tr[layer], par_tr[layer], nb)
        marginal_layer(b, c_tr[layer], var_ptr, var_edges, clip, x_tr[layer], nb)
        for i in range(n):
            for f in range(nb):
                if x_tr[layer, i, f] != x_tr[layer, i, f]:
                    return layer
    return -1


@njit(cache=True)
def backward(b, check_ptr, var_ptr, var_edges, beta, gamma, offset, clip,
             u_tr, c_tr, idx1_tr, idx2_tr, par_tr, x_tr, gx, g_alpha, g_beta, g_gamma, want_ab):
    """Reverse-mode sweep through the unrolled min-sum graph.

    ``gx[layer, var, frame]`` is dL/d(clipped marginal).  Gradients with
    respect to the effective weights are added into ``g_alpha (T,N)``,
    ``g_beta (T,E)`` and ``g_gamma (T,E)``, summed over frames in order.
    With ``want_ab`` false the alpha and beta sums are skipped.

    Conventions: a minimum passes its gradient only to the arg-min edge, the
    sign product is held constant, and clipped values pass no gradient.
    """
    t_max, e_count, nb = u_tr.shape
    gs_next = np.zeros((e_count, nb))
    gs = np.zeros((e_count, nb))
    gc = np.zeros((e_count, nb))
    tot = np.empty(nb)
    m1 = np.empty(nb)
    m2 = np.empty(nb)
    d1 = np.empty(nb)
    d2 = np.empty(nb)
    psign = np.empty(nb)
    s_all = np.empty(nb)
    dmax = 0
    for j in range(check_ptr.shape[0] - 1):
        dmax = max(dmax, check_ptr[j + 1] - check_ptr[j])
    sg = np.empty((dmax, nb))
    for layer in range(t_max - 1, -1, -1):
        has_next = layer + 1 < t_max
        c_l = c_tr[layer]
        x_l = x_tr[layer]
        # dL/dc^(l): marginal of this layer plus v->c messages of the next
        for i in range(var_ptr.shape[0] - 1):
            gxi = gx[layer, i]
            xi = x_l[i]
            if has_next:
                tot[:] = 0.0
                for k in range(var_ptr[i], var_ptr[i + 1]):
                    row = gs_next[var_edges[k]]
                    for f in range(nb):
                        tot[f] += row[f]
            for k in range(var_ptr[i], var_ptr[i + 1]):
                e = var_edges[k]
                out = gc[e]
                for f in range(nb):
                    out[f] = gxi[f] if (xi[f] < clip and xi[f] > -clip) else 0.0
                if has_next:
                    be = beta[layer + 1, e]
                    row = gs_next[e]
                    crow = c_l[e]
                    if want_ab:
                        acc = 0.0
                        for f in range(nb):
                            others = tot[f] - row[f]
                            out[f] += be * others
                            acc += crow[f] * others
                        g_beta[layer + 1, e] += acc
                    else:
                        for f in range(nb):
                            out[f] += be * (tot[f] - row[f])
        # check update: edge idx1 reads the second minimum, all others the first.
        # Per check: first a branch-free sweep treating every edge as reading
        # the first minimum, then a per-frame fix-up at edge idx1.
        u_l = u_tr[layer]
        gs[:, :] = 0.0
        for j in range(check_ptr.shape[0] - 1):
            lo = check_ptr[j]
            hi = check_ptr[j + 1]
            if hi - lo < 2:
                continue
            i1 = idx1_tr[layer, j]
            i2 = idx2_tr[layer, j]
            pj = par_tr[layer, j]
            for f in range(nb):
                u1 = u_l[i1[f], f]
                u2 = u_l[i2[f], f]
                a1 = -u1 if u1 < 0.0 else u1
                a2 = -u2 if u2 < 0.0 else u2
                m1[f] = a1 - offset
                m2[f] = a2 - offset
                d1[f] = 1.0 if (offset <= 0.0 or m1[f] > 0.0) else 0.0
                d2[f] = 1.0 if (offset <= 0.0 or m2[f] > 0.0) else 0.0
                if m1[f] < 0.0:
                    m1[f] = 0.0
                if m2[f] < 0.0:
                    m2[f] = 0.0
                # d|u|/du with sgn(0) = +1
                d1[f] *= -1.0 if u1 < 0.0 else 1.0
                d2[f] *= -1.0 if u2 < 0.0 else 1.0
                psign[f] = -1.0 if pj[f] else 1.0
                s_all[f] = 0.0
            for e in range(lo, hi):
                g = gamma[layer, e]
                row = u_l[e]
                grow = gc[e]
                srow = sg[e - lo]
                acc = 0.0
                for f in range(nb):
                    gcf = grow[f] * psign[f] * (-1.0 if row[f] < 0.0 else 1.0)
                    srow[f] = gcf
                    acc += gcf * m1[f]
                    s_all[f] += gcf * g
                g_gamma[layer, e] += acc
            for f in range(nb):
                e1 = i1[f]
                gcf1 = sg[e1 - lo, f]
                g_gamma[layer, e1] += gcf1 * (m2[f] - m1[f])
                first = gcf1 * gamma[layer, e1]
                gs[e1, f] += (s_all[f] - first) * d1[f]
                gs[i2[f], f] += first * d2[f]
        # through the clip of the v->c messages, then onto alpha
        for e in range(e_count):
            row = u_l[e]
            grow = gs[e]
            for f in range(nb):
                if not (row[f] < clip and row[f] > -clip):
                    grow[f] = 0.0
        for i in range(var_ptr.shape[0] - 1 if want_ab else 0):
            bi = b[i]
            acc = 0.0
            for k in range(var_ptr[i], var_ptr[i + 1]):
                grow = gs[var_edges[k]]
                for f in range(nb):
                    acc += bi[f] * grow[f]
            g_alpha[layer, i] += acc
        gs_next[:, :] = gs
