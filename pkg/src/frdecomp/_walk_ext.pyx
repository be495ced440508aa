# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled exit-walk simulator (xoshiro256** per walk, event driven)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef inline uint64_t _rotl(uint64_t x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _splitmix(uint64_t x) noexcept nogil:
    cdef uint64_t z = x
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _next(uint64_t* s) noexcept nogil:
    cdef uint64_t result = _rotl(s[1] * 5, 7) * 9
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def simulate_exits(start, long half, long n_walks, uint64_t seed, long step_cap):
    """Run ``n_walks`` walks from ``start`` until some ``|x_mu| == half``.

    Time is in site units (jump rate ``2d``).  Returns ``(exit positions,
    exit times, step counts, capped)``.
    """
    cdef cnp.int64_t[::1] st = np.ascontiguousarray(start, dtype=np.int64)
    cdef Py_ssize_t d = st.shape[0]
    cdef Py_ssize_t mu
    for mu in range(d):
        if abs(st[mu]) >= half:
            raise ValueError("start point is not inside the cube")
    pos_arr = np.empty((n_walks, d), dtype=np.int64)
    tau_arr = np.empty(n_walks, dtype=np.float64)
    steps_arr = np.empty(n_walks, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] pos_out = pos_arr
    cdef double[::1] tau_out = tau_arr
    cdef cnp.int64_t[::1] steps_out = steps_arr
    cdef uint64_t s[4]
    cdef uint64_t x, r, nd = 2 * d
    cdef int64_t pos[8]
    cdef double tau, u, rate = 2.0 * d
    cdef long steps, w
    cdef int i, j, axis
    cdef bint capped = False
    with nogil:
        for w in range(n_walks):
            x = seed * <uint64_t>0xD1B54A32D192ED03ULL + <uint64_t>w
            for i in range(4):
                x = x + <uint64_t>0x9E3779B97F4A7C15ULL
                s[i] = _splitmix(x)
            for mu in range(d):
                pos[mu] = st[mu]
            tau = 0.0
            steps = 0
            while True:
                r = _next(s)
                u = (<double>(r >> 11) + 1.0) * 1.1102230246251565e-16
                tau += -log(u) / rate
                r = _next(s)
                j = <int>(((r >> 32) * nd) >> 32)
                axis = j // 2
                if j % 2 == 0:
                    pos[axis] += 1
                else:
                    pos[axis] -= 1
                steps += 1
                if pos[axis] == half or pos[axis] == -half:
                    break
                if steps >= step_cap:
                    capped = True
                    break
            if capped:
                break
            for mu in range(d):
                pos_out[w, mu] = pos[mu]
            tau_out[w] = tau
            steps_out[w] = steps
    return pos_arr, tau_arr, steps_arr, bool(capped)
