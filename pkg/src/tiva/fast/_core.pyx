# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled decode core: KV-cached multi-query transformer stack over BLAS.

Mirrors tiva.fast.numpy_core (same math, same cache semantics).  The wins:
scores for all query heads run as one sgemm against the shared K cache, the
softmax touches only the live ring segments, and the norm/rope/cache loops
are fused C with no Python dispatch.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, expf, sin, sqrtf
from libc.string cimport memset
from scipy.linalg.cython_blas cimport sgemm

cnp.import_array()

BACKEND = "compiled"

ctypedef cnp.float32_t f32
ctypedef cnp.int64_t i64


cdef void _mm_nn(float* a, float* b, float* c, int m, int k, int n) noexcept:
    # row-major C[m,n] = A[m,k] @ B[k,n]
    cdef float one = 1.0, zero = 0.0
    cdef char nt = b'N'
    sgemm(&nt, &nt, &n, &m, &k, &one, b, &n, a, &k, &zero, c, &n)


cdef void _mm_nt(float* a, float* b, float* c, int m, int k, int n) noexcept:
    # row-major C[m,n] = A[m,k] @ B[n,k]^T
    cdef float one = 1.0, zero = 0.0
    cdef char tt = b'T', nt = b'N'
    sgemm(&tt, &nt, &n, &m, &k, &one, b, &k, a, &k, &zero, c, &n)


cdef void _rmsnorm(float* x, float* w, float* out, int n, int d) noexcept:
    cdef int i, j
    cdef float ms, inv
    for i in range(n):
        ms = 0.0
        for j in range(d):
            ms += x[i * d + j] * x[i * d + j]
        inv = 1.0 / sqrtf(ms / d + 1e-5)
        for j in range(d):
            out[i * d + j] = x[i * d + j] * inv * w[j]


cdef void _add_bias(float* x, float* b, int n, int d) noexcept:
    cdef int i, j
    for i in range(n):
        for j in range(d):
            x[i * d + j] += b[j]


cdef class LayerWeights:
    cdef cnp.ndarray attn_norm, wq, bq, wk, bk, wv, bv, wo, bo, temp
    cdef cnp.ndarray ff_norm, w_up, b_up, w_down, b_down

    def __init__(self, dict lw):
        def f(name):
            return np.ascontiguousarray(lw[name], dtype=np.float32)
        self.attn_norm = f("attn_norm")
        self.wq = f("wq"); self.bq = f("bq")
        self.wk = f("wk"); self.bk = f("bk")
        self.wv = f("wv"); self.bv = f("bv")
        self.wo = f("wo"); self.bo = f("bo")
        self.temp = f("temp")
        self.ff_norm = f("ff_norm")
        self.w_up = f("w_up"); self.b_up = f("b_up")
        self.w_down = f("w_down"); self.b_down = f("b_down")


cdef class KVDecoder:
    cdef list layers
    cdef public int d, h, dh, capacity, ff
    cdef public object final_norm
    cdef cnp.ndarray k_cache, v_cache, pos_buf
    cdef public long window_start, next_pos
    cdef dict _scratch

    def __init__(self, dict weights, int capacity):
        dims = weights["dims"]
        self.d = dims["model_dim"]
        self.h = dims["heads"]
        self.dh = dims["head_dim"]
        if weights["layers"][0]["wk"].shape[1] != self.dh:
            raise ValueError("compiled core requires a single shared K/V head")
        self.layers = [LayerWeights(lw) for lw in weights["layers"]]
        self.ff = weights["layers"][0]["w_up"].shape[1]
        self.final_norm = weights.get("final_norm")
        self.capacity = capacity
        nl = len(self.layers)
        self.k_cache = np.zeros((nl, capacity, self.dh), np.float32)
        self.v_cache = np.zeros((nl, capacity, self.dh), np.float32)
        self.pos_buf = np.full(capacity, -1, np.int64)
        self.window_start = 0
        self.next_pos = 0
        self._scratch = {}

    def reset(self):
        self.pos_buf[:] = -1
        self.k_cache[:] = 0.0
        self.v_cache[:] = 0.0
        self.window_start = 0
        self.next_pos = 0

    def set_window(self, long start):
        self.window_start = start

    def decode(self, x_in, positions_in):
        cdef cnp.ndarray[f32, ndim=2] x = np.ascontiguousarray(x_in, dtype=np.float32).copy()
        cdef cnp.ndarray[i64, ndim=1] positions = np.ascontiguousarray(positions_in, dtype=np.int64)
        cdef int n = x.shape[0]
        cdef int d = self.d, h = self.h, dh = self.dh, cap = self.capacity, ff = self.ff
        cdef int half = dh // 2
        cdef int nh = n * h
        cdef int li, i, j, hh, col, row, r
        cdef long ws = self.window_start
        cdef long pos_lo, pos_hi, p
        cdef f32[:, :] xv = x
        cdef i64[:] posv = positions
        cdef i64[:] pos_buf = self.pos_buf
        cdef f32[:, :, :] kc = self.k_cache
        cdef f32[:, :, :] vc = self.v_cache

        sc = self._scratch.get(n)
        if sc is None:
            sc = {
                "xn": np.empty((n, d), np.float32),
                "q": np.empty((n, d), np.float32),
                "k": np.empty((n, dh), np.float32),
                "v": np.empty((n, dh), np.float32),
                "scores": np.zeros((nh, cap), np.float32),
                "att": np.empty((n, d), np.float32),
                "outh": np.empty((nh, dh), np.float32),
                "hid": np.empty((n, ff), np.float32),
                "cos": np.empty((n, half), np.float32),
                "sin": np.empty((n, half), np.float32),
            }
            self._scratch[n] = sc
        cdef cnp.ndarray[f32, ndim=2] xn = sc["xn"]
        cdef cnp.ndarray[f32, ndim=2] q = sc["q"]
        cdef cnp.ndarray[f32, ndim=2] k = sc["k"]
        cdef cnp.ndarray[f32, ndim=2] v = sc["v"]
        cdef cnp.ndarray[f32, ndim=2] scores = sc["scores"]
        cdef cnp.ndarray[f32, ndim=2] att = sc["att"]
        cdef cnp.ndarray[f32, ndim=2] outh = sc["outh"]
        cdef cnp.ndarray[f32, ndim=2] hid = sc["hid"]
        cdef cnp.ndarray[f32, ndim=2] cos_t = sc["cos"]
        cdef cnp.ndarray[f32, ndim=2] sin_t = sc["sin"]
        cdef f32[:, :] xnv = xn, qv = q, kv = k, vv = v
        cdef f32[:, :] scv = scores, attv = att, outv = outh, hidv = hid
        cdef f32[:, :] cosv = cos_t, sinv = sin_t

        cdef double ang, freq
        cdef float norm, mx, ssum, a1, a2, tmp
        cdef LayerWeights lw
        cdef f32[:] temp_v, norm_w, bias_v
        cdef f32[:, :] wmat

        # write positions, build rope tables (shared across layers)
        for i in range(n):
            row = <int>(posv[i] % cap)
            pos_buf[row] = posv[i]
            for j in range(half):
                freq = 10000.0 ** (-(<double>j) / half)
                ang = (<double>posv[i]) * freq
                cosv[i, j] = <float>cos(ang)
                sinv[i, j] = <float>sin(ang)

        # the visible slab: ring rows holding positions [pos_lo, pos_hi]
        pos_hi = posv[n - 1]
        pos_lo = ws
        if pos_hi - pos_lo + 1 > cap:
            pos_lo = pos_hi - cap + 1
        cdef int slab_len = <int>(pos_hi - pos_lo + 1)
        cdef int seg0_start = <int>(pos_lo % cap)
        cdef int seg0_len = min(slab_len, cap - seg0_start)
        cdef int seg1_len = slab_len - seg0_len  # wraps to rows [0, seg1_len)

        for li in range(len(self.layers)):
            lw = <LayerWeights>self.layers[li]
            norm_w = lw.attn_norm
            _rmsnorm(&xv[0, 0], &norm_w[0], &xnv[0, 0], n, d)
            wmat = lw.wq
            _mm_nn(&xnv[0, 0], &wmat[0, 0], &qv[0, 0], n, d, d)
            bias_v = lw.bq
            _add_bias(&qv[0, 0], &bias_v[0], n, d)
            wmat = lw.wk
            _mm_nn(&xnv[0, 0], &wmat[0, 0], &kv[0, 0], n, d, dh)
            bias_v = lw.bk
            _add_bias(&kv[0, 0], &bias_v[0], n, dh)
            wmat = lw.wv
            _mm_nn(&xnv[0, 0], &wmat[0, 0], &vv[0, 0], n, d, dh)
            bias_v = lw.bv
            _add_bias(&vv[0, 0], &bias_v[0], n, dh)

            temp_v = lw.temp
            for i in range(n):
                row = <int>(posv[i] % cap)
                for hh in range(h):
                    norm = 0.0
                    for j in range(dh):
                        tmp = qv[i, hh * dh + j]
                        norm += tmp * tmp
                    norm = 1.0 / sqrtf(norm + 1e-6)
                    for j in range(dh):
                        qv[i, hh * dh + j] *= norm * temp_v[hh]
                    for j in range(half):
                        a1 = qv[i, hh * dh + 2 * j]
                        a2 = qv[i, hh * dh + 2 * j + 1]
                        qv[i, hh * dh + 2 * j] = a1 * cosv[i, j] - a2 * sinv[i, j]
                        qv[i, hh * dh + 2 * j + 1] = a1 * sinv[i, j] + a2 * cosv[i, j]
                norm = 0.0
                for j in range(dh):
                    tmp = kv[i, j]
                    norm += tmp * tmp
                norm = 1.0 / sqrtf(norm + 1e-6)
                for j in range(dh):
                    kv[i, j] *= norm
                for j in range(half):
                    a1 = kv[i, 2 * j]
                    a2 = kv[i, 2 * j + 1]
                    kv[i, 2 * j] = a1 * cosv[i, j] - a2 * sinv[i, j]
                    kv[i, 2 * j + 1] = a1 * sinv[i, j] + a2 * cosv[i, j]
                for j in range(dh):
                    kc[li, row, j] = kv[i, j]
                    vc[li, row, j] = vv[i, j]

            # scores for all heads at once against the shared K cache
            _mm_nt(&qv[0, 0], &kc[li, 0, 0], &scv[0, 0], nh, dh, cap)

            # mask future positions within the slab (only this call's rows
            # can sit above a query's position)
            for i in range(n):
                for r in range(n):
                    if posv[r] > posv[i]:
                        col = <int>(posv[r] % cap)
                        for hh in range(h):
                            scv[i * h + hh, col] = -3.0e38
            # softmax over the live segments with SIMD numpy kernels; the
            # dead area is zeroed so the value product ignores it
            seg0 = scores[:, seg0_start:seg0_start + seg0_len]
            if seg1_len:
                seg1 = scores[:, :seg1_len]
                mx_r = np.maximum(seg0.max(axis=1), seg1.max(axis=1))[:, None]
                np.exp(np.subtract(seg0, mx_r, out=seg0), out=seg0)
                np.exp(np.subtract(seg1, mx_r, out=seg1), out=seg1)
                inv = 1.0 / (seg0.sum(axis=1) + seg1.sum(axis=1))
                np.multiply(seg0, inv[:, None], out=seg0)
                np.multiply(seg1, inv[:, None], out=seg1)
                scores[:, seg1_len:seg0_start] = 0.0
            else:
                mx_r = seg0.max(axis=1)[:, None]
                np.exp(np.subtract(seg0, mx_r, out=seg0), out=seg0)
                inv = 1.0 / seg0.sum(axis=1)
                np.multiply(seg0, inv[:, None], out=seg0)
                scores[:, :seg0_start] = 0.0
            scores[:, seg0_start + seg0_len:] = 0.0

            _mm_nn(&scv[0, 0], &vc[li, 0, 0], &outv[0, 0], nh, cap, dh)
            for i in range(n):
                for hh in range(h):
                    for j in range(dh):
                        attv[i, hh * dh + j] = outv[i * h + hh, j]

            wmat = lw.wo
            _mm_nn(&attv[0, 0], &wmat[0, 0], &xnv[0, 0], n, d, d)
            bias_v = lw.bo
            _add_bias(&xnv[0, 0], &bias_v[0], n, d)
            for i in range(n):
                for j in range(d):
                    xv[i, j] += xnv[i, j]

            norm_w = lw.ff_norm
            _rmsnorm(&xv[0, 0], &norm_w[0], &xnv[0, 0], n, d)
            wmat = lw.w_up
            _mm_nn(&xnv[0, 0], &wmat[0, 0], &hidv[0, 0], n, d, ff)
            bias_v = lw.b_up
            _add_bias(&hidv[0, 0], &bias_v[0], n, ff)
            for i in range(n):
                for j in range(ff):
                    tmp = hidv[i, j]
                    hidv[i, j] = tmp / (1.0 + expf(-tmp))
            wmat = lw.w_down
            _mm_nn(&hidv[0, 0], &wmat[0, 0], &xnv[0, 0], n, ff, d)
            bias_v = lw.b_down
            _add_bias(&xnv[0, 0], &bias_v[0], n, d)
            for i in range(n):
                for j in range(d):
                    xv[i, j] += xnv[i, j]

        self.next_pos = <long>(posv[n - 1]) + 1
        return x


def static_forward(dict weights, x_in, positions_in=None, bint causal=False):
    """Cache-free stack forward (bidirectional unless causal)."""
    from . import numpy_core
    return numpy_core.static_forward(weights, x_in, positions_in, causal)
