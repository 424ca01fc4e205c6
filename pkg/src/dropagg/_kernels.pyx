# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: counter-mode keystream, modular mask accumulation,
Box-Muller Gaussian sampling.

Every function here must stay bit-identical (integer outputs) with the
numpy implementation in ``_kernels_py.py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, cos, sin
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _word(uint64_t k0, uint64_t k1, uint64_t i) nogil:
    return _mix(_mix(k0 + (i + 1) * GOLDEN) ^ k1)


def keystream(uint64_t k0, uint64_t k1, Py_ssize_t n):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] view = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            view[i] = _word(k0, k1, <uint64_t>i)
    return out


def expand_mod(uint64_t k0, uint64_t k1, Py_ssize_t n, uint64_t modulus):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] view = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            view[i] = _word(k0, k1, <uint64_t>i) % modulus
    return out


def masked_accumulate(base, keys, signs, uint64_t modulus):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.ascontiguousarray(base, dtype=np.uint64) % modulus
    cdef uint64_t[::1] acc = out
    cdef const uint64_t[:, ::1] kv = np.ascontiguousarray(keys, dtype=np.uint64).reshape(-1, 2)
    cdef const int64_t[::1] sv = np.ascontiguousarray(signs, dtype=np.int64)
    cdef Py_ssize_t n = acc.shape[0]
    cdef Py_ssize_t m = kv.shape[0]
    cdef Py_ssize_t i, j
    cdef uint64_t k0, k1, v
    cdef int64_t s
    if sv.shape[0] != m:
        raise ValueError("keys and signs differ in length")
    with nogil:
        for j in range(m):
            s = sv[j]
            if s == 0:
                continue
            k0 = kv[j, 0]
            k1 = kv[j, 1]
            if s > 0:
                for i in range(n):
                    v = _word(k0, k1, <uint64_t>i) % modulus
                    acc[i] = (acc[i] + v) % modulus
            else:
                for i in range(n):
                    v = _word(k0, k1, <uint64_t>i) % modulus
                    acc[i] = (acc[i] + modulus - v) % modulus
    return out


def gaussian(uint64_t k0, uint64_t k1, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] view = out
    cdef Py_ssize_t j, pairs = (n + 1) // 2
    cdef double u1, u2, rad, ang
    with nogil:
        for j in range(pairs):
            u1 = (<double>((_word(k0, k1, <uint64_t>(2 * j)) >> 11) + 1)) * INV_2_53
            u2 = (<double>(_word(k0, k1, <uint64_t>(2 * j + 1)) >> 11)) * INV_2_53
            rad = sqrt(-2.0 * log(u1))
            ang = TWO_PI * u2
            view[2 * j] = rad * cos(ang)
            if 2 * j + 1 < n:
                view[2 * j + 1] = rad * sin(ang)
    return out
