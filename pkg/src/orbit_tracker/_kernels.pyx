# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 kernel for the linear population tracker."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()


cdef inline void _field(const double[:, ::1] A, const double[::1] c,
                        const double[:, ::1] x, const double[::1] inp,
                        double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n_pop = x.shape[0], dim = x.shape[1]
    cdef Py_ssize_t i, j, m
    cdef double a
    for i in range(n_pop):
        a = c[i]
        for m in range(dim):
            out[i, m] = a * inp[m]
        for j in range(n_pop):
            a = A[i, j]
            for m in range(dim):
                out[i, m] = out[i, m] + a * x[j, m]


cdef inline void _record(Py_ssize_t s, const double[:, ::1] A, const double[::1] c,
                         const double[:, ::1] x, const double[::1] inp,
                         double[:, ::1] readout, double[::1] v, double[::1] e_norm,
                         double[::1] pdot) noexcept nogil:
    cdef Py_ssize_t n_pop = x.shape[0], dim = x.shape[1]
    cdef Py_ssize_t j, m
    cdef double ss = 0.0, ff = 0.0, e, f
    for m in range(dim):
        readout[s, m] = x[0, m]
        e = x[0, m] - inp[m]
        ss += e * e
        f = c[0] * inp[m]
        for j in range(n_pop):
            f = f + A[0, j] * x[j, m]
        ff += f * f
    v[s] = 0.5 * ss
    e_norm[s] = sqrt(ss)
    pdot[s] = sqrt(ff)


def integrate_linear(x0, A, c, double dt, inputs):
    """RK4 for x' = A x + c I(t) with I sampled on half steps.

    ``inputs`` has 2n+1 rows: I(0), I(dt/2), I(dt), ...  Returns
    (readout, V, E_norm, pdot_norm, final_state, blowup_step) where
    blowup_step is -1 unless a non-finite state appeared.
    """
    cdef double[:, ::1] x = np.array(x0, dtype=np.float64, order="C")
    cdef const double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] cm = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[:, ::1] inp = np.ascontiguousarray(inputs, dtype=np.float64)
    cdef Py_ssize_t n_pop = x.shape[0], dim = x.shape[1]
    cdef Py_ssize_t n = (inp.shape[0] - 1) // 2
    readout_a = np.empty((n + 1, dim))
    v_a = np.empty(n + 1)
    e_a = np.empty(n + 1)
    p_a = np.empty(n + 1)
    cdef double[:, ::1] readout = readout_a
    cdef double[::1] v = v_a, e_norm = e_a, pdot = p_a
    cdef double[:, ::1] k1 = np.empty((n_pop, dim)), k2 = np.empty((n_pop, dim))
    cdef double[:, ::1] k3 = np.empty((n_pop, dim)), k4 = np.empty((n_pop, dim))
    cdef double[:, ::1] tmp = np.empty((n_pop, dim))
    cdef double half = 0.5 * dt, sixth = dt / 6.0
    cdef Py_ssize_t s, i, m
    cdef bint bad = False
    cdef Py_ssize_t blow = -1

    with nogil:
        _record(0, Am, cm, x, inp[0], readout, v, e_norm, pdot)
        for s in range(n):
            _field(Am, cm, x, inp[2 * s], k1)
            for i in range(n_pop):
                for m in range(dim):
                    tmp[i, m] = x[i, m] + half * k1[i, m]
            _field(Am, cm, tmp, inp[2 * s + 1], k2)
            for i in range(n_pop):
                for m in range(dim):
                    tmp[i, m] = x[i, m] + half * k2[i, m]
            _field(Am, cm, tmp, inp[2 * s + 1], k3)
            for i in range(n_pop):
                for m in range(dim):
                    tmp[i, m] = x[i, m] + dt * k3[i, m]
            _field(Am, cm, tmp, inp[2 * s + 2], k4)
            for i in range(n_pop):
                for m in range(dim):
                    x[i, m] = x[i, m] + sixth * (k1[i, m] + 2.0 * k2[i, m] + 2.0 * k3[i, m] + k4[i, m])
                    if not isfinite(x[i, m]):
                        bad = True
            if bad:
                blow = s + 1
                break
            _record(s + 1, Am, cm, x, inp[2 * s + 2], readout, v, e_norm, pdot)

    final = np.asarray(x).copy()
    if blow >= 0:
        return readout_a[:blow], v_a[:blow], e_a[:blow], p_a[:blow], final, blow
    return readout_a, v_a, e_a, p_a, final, -1
