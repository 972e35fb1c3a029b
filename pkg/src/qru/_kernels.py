"""Compiled per-step loops for the engine (numba).

Everything here works on plain arrays prepared by ``CompiledQRU``; see engine.py
for the meaning of the index maps. ``ut`` is U^T on the core qubits and the
cotangent convention is dL = Re <g, dz>.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _qubit_states(routed, pairs, slot_source, slot_qubit, slot_axis, n_enc):
    """Per encoded qubit: v = Ry(b) Rx(a)|0> and dv[k, axis, component]."""
    ang = np.zeros((n_enc, 2))
    for s in range(slot_source.shape[0]):
        ang[slot_qubit[s], slot_axis[s]] = routed[slot_source[s]] * pairs[s, 0] + pairs[s, 1]
    v = np.empty((n_enc, 2), dtype=np.complex128)
    dv = np.empty((n_enc, 2, 2), dtype=np.complex128)
    for k in range(n_enc):
        ca, sa = np.cos(ang[k, 0] / 2), np.sin(ang[k, 0] / 2)
        cb, sb = np.cos(ang[k, 1] / 2), np.sin(ang[k, 1] / 2)
        v[k, 0] = complex(cb * ca, sb * sa)
        v[k, 1] = complex(sb * ca, -cb * sa)
        dv[k, 0, 0] = 0.5 * complex(-cb * sa, sb * ca)
        dv[k, 0, 1] = 0.5 * complex(-sb * sa, -cb * ca)
        dv[k, 1, 0] = 0.5 * complex(-sb * ca, cb * sa)
        dv[k, 1, 1] = 0.5 * complex(cb * ca, sb * sa)
    return v, dv


@njit(cache=True, fastmath=True)
def _product(v, out):
    """Kronecker product of the rows of v (qubit 0 most significant) into ``out``."""
    n_enc = v.shape[0]
    out[0] = 1.0
    size = 1
    for k in range(n_enc):
        for e in range(size - 1, -1, -1):
            a = out[e]
            out[2 * e] = a * v[k, 0]
            out[2 * e + 1] = a * v[k, 1]
        size *= 2


@njit(cache=True, fastmath=True)
def _pack(pbuf, b, n_b, psi, br_offsets, br_e):
    """Copy one sample's product amplitudes into the per-branch blocks of ``pbuf``.

    Block s occupies pbuf[off_s * B : off_{s+1} * B] viewed as (B, n_s).
    """
    for s in range(br_offsets.shape[0] - 1):
        off = br_offsets[s]
        n = br_offsets[s + 1] - off
        base = off * n_b + b * n
        for j in range(n):
            pbuf[base + j] = psi[br_e[off + j]]


@njit(cache=True, fastmath=True)
def _block(buf, off, n, rows):
    return buf[off * rows:(off + n) * rows].reshape(rows, n)


@njit(cache=True, fastmath=True)
def sequence_forward(
    ut, pairs, slot_source, slot_qubit, slot_axis, n_enc,
    br_offsets, br_e, br_core, z_signs, x_masks, n_out, inputs, keep,
):
    """Run every sequence in ``inputs`` (B, T, d). Returns ys, final h and caches.

    Branch s only receives the product amplitudes listed in its group, so its
    output rows are (B, n_s) @ (n_s, dim) with the matching rows of U^T.
    """
    n_b, n_t, d = inputs.shape
    dim = ut.shape[0]
    n_s = br_offsets.shape[0] - 1
    n_h = x_masks.shape[0]
    n_z = z_signs.shape[1]
    n_e = 1 << n_enc
    ut_g = np.empty((n_e, dim), dtype=np.complex128)
    for j in range(n_e):
        ut_g[j] = ut[br_core[j]]
    ys = np.zeros((n_b, n_t, n_out))
    h = np.zeros((n_b, 2 * n_h))
    t_keep = n_t if keep else 0
    outs = np.zeros((t_keep, n_s, n_b, dim), dtype=np.complex128)
    vs = np.zeros((t_keep, n_b, n_enc, 2), dtype=np.complex128)
    dvs = np.zeros((t_keep, n_b, n_enc, 2, 2), dtype=np.complex128)
    routeds = np.zeros((t_keep, n_b, d + 2 * n_h))
    out = np.zeros((n_s, n_b, dim), dtype=np.complex128)
    pbuf = np.zeros(n_e * n_b, dtype=np.complex128)
    psi = np.zeros(n_e, dtype=np.complex128)
    routed = np.zeros(d + 2 * n_h)
    ez = np.zeros(n_z)
    probs = np.zeros(dim)
    z_cols = np.ascontiguousarray(z_signs.T)
    for t in range(n_t):
        for b in range(n_b):
            routed[:d] = inputs[b, t]
            routed[d:] = h[b]
            v, dv = _qubit_states(routed, pairs, slot_source, slot_qubit, slot_axis, n_enc)
            _product(v, psi)
            _pack(pbuf, b, n_b, psi, br_offsets, br_e)
            if keep:
                vs[t, b] = v
                dvs[t, b] = dv
                routeds[t, b] = routed
        for s in range(n_s):
            off = br_offsets[s]
            n = br_offsets[s + 1] - off
            if n == 0:
                out[s] = 0
            else:
                out[s] = _block(pbuf, off, n, n_b) @ ut_g[off:off + n]
        for b in range(n_b):
            probs[:] = 0
            for s in range(n_s):
                for c in range(dim):
                    probs[c] += out[s, b, c].real ** 2 + out[s, b, c].imag ** 2
            for j in range(n_z):
                acc = 0.0
                for c in range(dim):
                    acc += probs[c] * z_cols[j, c]
                ez[j] = acc
            for j in range(n_out):
                ys[b, t, j] = ez[j]
            for j in range(n_h):
                h[b, j] = ez[n_out + j]
                acc = 0.0
                m = x_masks[j]
                for s in range(n_s):
                    for hi in range(0, dim, 2 * m):
                        for c in range(hi, hi + m):
                            o1 = out[s, b, c]
                            o2 = out[s, b, c + m]
                            acc += o1.real * o2.real + o1.imag * o2.imag
                h[b, n_h + j] = 2.0 * acc
        if keep:
            outs[t] = out
    return ys, h, outs, vs, dvs, routeds


@njit(cache=True, fastmath=True)
def sequence_backward(
    ut, pairs, slot_source, slot_qubit, slot_axis, n_enc,
    br_offsets, br_e, br_core, z_signs, x_masks, n_out, d_ys, outs, vs, dvs, routeds,
):
    """Reverse sweep. Returns Gamma^T (sum over steps of phi^H g) and encoding-pair grads."""
    n_t, n_s, n_b, dim = outs.shape
    n_h = x_masks.shape[0]
    n_z = z_signs.shape[1]
    n_e = 1 << n_enc
    d = routeds.shape[2] - 2 * n_h
    # conj(U^T) restricted to each branch's rows, stored per branch as (dim, n_s) blocks
    ucbuf = np.empty(n_e * dim, dtype=np.complex128)
    for s in range(n_s):
        off = br_offsets[s]
        n = br_offsets[s + 1] - off
        for c in range(dim):
            for j in range(n):
                ucbuf[off * dim + c * n + j] = np.conj(ut[br_core[off + j], c])
    gamma_g = np.zeros((n_e, dim), dtype=np.complex128)
    grad_pairs = np.zeros(pairs.shape)
    dh = np.zeros((n_b, 2 * n_h))
    g = np.zeros((n_s, n_b, dim), dtype=np.complex128)
    pbuf = np.zeros(n_e * n_b, dtype=np.complex128)
    ptbuf = np.zeros(n_e * n_b, dtype=np.complex128)
    psi = np.zeros(n_e, dtype=np.complex128)
    chi = np.zeros((n_b, n_e), dtype=np.complex128)
    dz = np.zeros(n_z)
    weights = np.zeros(dim)
    prefix = np.zeros(n_enc + 1, dtype=np.complex128)
    suffix = np.zeros(n_enc + 1, dtype=np.complex128)
    d_ang = np.zeros((n_enc, 2))
    d_routed = np.zeros(routeds.shape[2])
    for t in range(n_t - 1, -1, -1):
        out = outs[t]
        for b in range(n_b):
            for j in range(n_out):
                dz[j] = d_ys[b, t, j]
            for j in range(n_h):
                dz[n_out + j] = dh[b, j]
            for c in range(dim):
                w = 0.0
                for j in range(n_z):
                    w += dz[j] * z_signs[c, j]
                weights[c] = 2.0 * w
            for s in range(n_s):
                for c in range(dim):
                    g[s, b, c] = weights[c] * out[s, b, c]
                for j in range(n_h):
                    m = x_masks[j]
                    coef = 2.0 * dh[b, n_h + j]
                    for c in range(dim):
                        g[s, b, c] += coef * out[s, b, c ^ m]
            _product(vs[t, b], psi)
            _pack(pbuf, b, n_b, psi, br_offsets, br_e)
        for s in range(n_s):
            off = br_offsets[s]
            n = br_offsets[s + 1] - off
            if n == 0:
                continue
            blk = _block(pbuf, off, n, n_b)
            pt = ptbuf[off * n_b:(off + n) * n_b].reshape(n, n_b)
            for b in range(n_b):
                for j in range(n):
                    pt[j, b] = np.conj(blk[b, j])
            gamma_g[off:off + n] += pt @ g[s]
            x = g[s] @ _block(ucbuf, off, n, dim)
            for b in range(n_b):
                for j in range(n):
                    chi[b, br_e[off + j]] = np.conj(x[b, j])
        for b in range(n_b):
            v = vs[t, b]
            dv = dvs[t, b]
            routed = routeds[t, b]
            d_ang[:, :] = 0
            for e in range(n_e):
                prefix[0] = 1.0
                for k in range(n_enc):
                    prefix[k + 1] = prefix[k] * v[k, (e >> (n_enc - 1 - k)) & 1]
                suffix[n_enc] = 1.0
                for k in range(n_enc - 1, -1, -1):
                    suffix[k] = suffix[k + 1] * v[k, (e >> (n_enc - 1 - k)) & 1]
                for k in range(n_enc):
                    bit = (e >> (n_enc - 1 - k)) & 1
                    env = chi[b, e] * prefix[k] * suffix[k + 1]
                    d_ang[k, 0] += (env * dv[k, 0, bit]).real
                    d_ang[k, 1] += (env * dv[k, 1, bit]).real
            d_routed[:] = 0
            for s in range(slot_source.shape[0]):
                src = slot_source[s]
                ds = d_ang[slot_qubit[s], slot_axis[s]]
                grad_pairs[s, 0] += ds * routed[src]
                grad_pairs[s, 1] += ds
                d_routed[src] += ds * pairs[s, 0]
            for j in range(2 * n_h):
                dh[b, j] = d_routed[d + j]
    gamma_t = np.zeros((dim, dim), dtype=np.complex128)
    for j in range(n_e):
        gamma_t[br_core[j]] += gamma_g[j]
    return gamma_t, grad_pairs


# ---------------------------------------------------------------------------
# Variational unitary on the core qubits
# ---------------------------------------------------------------------------

CNOT = -1
FAMILY_CODES = {"rx": 0, "ry": 1, "rz": 2, "u2": 3, "rot": 4}


@njit(cache=True, fastmath=True)
def _mm(a, b):
    out = np.empty((2, 2), dtype=np.complex128)
    for i in range(2):
        for j in range(2):
            out[i, j] = a[i, 0] * b[0, j] + a[i, 1] * b[1, j]
    return out


@njit(cache=True, fastmath=True)
def _rot_axis(axis, theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    m = np.zeros((2, 2), dtype=np.complex128)
    if axis == 0:
        m[0, 0] = c
        m[1, 1] = c
        m[0, 1] = -1j * s
        m[1, 0] = -1j * s
    elif axis == 1:
        m[0, 0] = c
        m[1, 1] = c
        m[0, 1] = -s
        m[1, 0] = s
    else:
        m[0, 0] = complex(c, -s)
        m[1, 1] = complex(c, s)
    return m


@njit(cache=True, fastmath=True)
def _half_pauli(axis):
    """-i/2 * sigma_axis."""
    m = np.zeros((2, 2), dtype=np.complex128)
    if axis == 0:
        m[0, 1] = -0.5j
        m[1, 0] = -0.5j
    elif axis == 1:
        m[0, 1] = -0.5
        m[1, 0] = 0.5
    else:
        m[0, 0] = -0.5j
        m[1, 1] = 0.5j
    return m


@njit(cache=True, fastmath=True)
def gate_tables(kinds, angles):
    """2x2 matrices (n_ops, 2, 2) and angle derivatives (n_ops, 3, 2, 2) for each op."""
    n = kinds.shape[0]
    mats = np.zeros((n, 2, 2), dtype=np.complex128)
    dmats = np.zeros((n, 3, 2, 2), dtype=np.complex128)
    for i in range(n):
        k = kinds[i]
        if k == CNOT:
            continue
        if k <= 2:
            u = _rot_axis(k, angles[i, 0])
            mats[i] = u
            dmats[i, 0] = _mm(_half_pauli(k), u)
        elif k == 3:
            a = _rot_axis(2, angles[i, 0])
            b = _rot_axis(1, np.pi / 2)
            c = _rot_axis(2, angles[i, 1])
            u = _mm(_mm(a, b), c)
            mats[i] = u
            dmats[i, 0] = _mm(_half_pauli(2), u)
            dmats[i, 1] = _mm(u, _half_pauli(2))
        else:
            # Rot(phi, theta, omega) = Rz(omega) Ry(theta) Rz(phi)
            a = _rot_axis(2, angles[i, 2])
            b = _rot_axis(1, angles[i, 1])
            c = _rot_axis(2, angles[i, 0])
            u = _mm(_mm(a, b), c)
            mats[i] = u
            dmats[i, 0] = _mm(u, _half_pauli(2))
            dmats[i, 1] = _mm(_mm(a, _mm(_half_pauli(1), b)), c)
            dmats[i, 2] = _mm(_half_pauli(2), u)
    return mats, dmats


@njit(cache=True, fastmath=True)
def _apply_mat(rows, mat, q, m):
    stride = 1 << (m - 1 - q)
    n_rows, dim = rows.shape
    m00, m01, m10, m11 = mat[0, 0], mat[0, 1], mat[1, 0], mat[1, 1]
    for r in range(n_rows):
        for hi in range(0, dim, 2 * stride):
            for i in range(hi, hi + stride):
                a = rows[r, i]
                b = rows[r, i + stride]
                rows[r, i] = m00 * a + m01 * b
                rows[r, i + stride] = m10 * a + m11 * b


@njit(cache=True, fastmath=True)
def _apply_cnot(rows, c, t, m):
    cmask = 1 << (m - 1 - c)
    tmask = 1 << (m - 1 - t)
    n_rows, dim = rows.shape
    for r in range(n_rows):
        for i in range(dim):
            if (i & cmask) and not (i & tmask):
                a = rows[r, i]
                rows[r, i] = rows[r, i | tmask]
                rows[r, i | tmask] = a


@njit(cache=True, fastmath=True)
def unitary_rows(kinds, q0, q1, mats, m):
    dim = 1 << m
    rows = np.eye(dim, dtype=np.complex128)
    for i in range(kinds.shape[0]):
        if kinds[i] == CNOT:
            _apply_cnot(rows, q0[i], q1[i], m)
        else:
            _apply_mat(rows, mats[i], q0[i], m)
    return rows


@njit(cache=True, fastmath=True)
def unitary_grad(ut, gamma_t, kinds, q0, q1, n_angles, mats, dmats, m):
    """Re <Gamma, dU/dangle> per op and angle, via one reverse sweep (n_ops, 3)."""
    w = ut.copy()
    lam = gamma_t.copy()
    n_rows, dim = w.shape
    out = np.zeros((kinds.shape[0], 3))
    red = np.zeros((2, 2), dtype=np.complex128)
    for i in range(kinds.shape[0] - 1, -1, -1):
        if kinds[i] == CNOT:
            _apply_cnot(w, q0[i], q1[i], m)
            _apply_cnot(lam, q0[i], q1[i], m)
            continue
        stride = 1 << (m - 1 - q0[i])
        r00 = r01 = r10 = r11 = 0j
        for r in range(n_rows):
            for hi in range(0, dim, 2 * stride):
                for j in range(hi, hi + stride):
                    l0 = np.conj(lam[r, j])
                    l1 = np.conj(lam[r, j + stride])
                    w0 = w[r, j]
                    w1 = w[r, j + stride]
                    r00 += l0 * w0
                    r01 += l0 * w1
                    r10 += l1 * w0
                    r11 += l1 * w1
        red[0, 0], red[0, 1], red[1, 0], red[1, 1] = r00, r01, r10, r11
        inv = np.conj(mats[i]).T.copy()
        for p in range(n_angles[i]):
            gm = _mm(dmats[i, p], inv)
            acc = 0.0
            for a in range(2):
                for b in range(2):
                    acc += (gm[a, b] * red[a, b]).real
            out[i, p] = acc
        _apply_mat(w, inv, q0[i], m)
        _apply_mat(lam, inv, q0[i], m)
    return out
