"""Pure-Python reference of the compiled integration kernel.

Same signature, same loop order and same output as ``_kernels.pyx``.
"""

import math

import numpy as np


@np.errstate(over="ignore", invalid="ignore")  # blowup is reported, not warned
def integrate_linear(x0, A, c, dt, inputs):
    """RK4 for x' = A x + c I(t) with I sampled on half steps.

    ``inputs`` has 2n+1 rows: I(0), I(dt/2), I(dt), ...  Returns
    (readout, V, E_norm, pdot_norm, final_state, blowup_step) where
    blowup_step is -1 unless a non-finite state appeared.
    """
    x = np.array(x0, dtype=float)
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    n_pop, dim = x.shape
    n = (inputs.shape[0] - 1) // 2
    readout = np.empty((n + 1, dim))
    v = np.empty(n + 1)
    e_norm = np.empty(n + 1)
    pdot = np.empty(n + 1)
    half = 0.5 * dt
    sixth = dt / 6.0

    def field(state, inp):
        out = np.empty_like(state)
        for i in range(n_pop):
            acc = c[i] * inp
            for j in range(n_pop):
                acc = acc + A[i, j] * state[j]
            out[i] = acc
        return out

    def record(s, state, inp):
        e = state[0] - inp
        ss = float(np.dot(e, e))
        readout[s] = state[0]
        v[s] = 0.5 * ss
        e_norm[s] = math.sqrt(ss)
        f0 = c[0] * inp
        for j in range(n_pop):
            f0 = f0 + A[0, j] * state[j]
        pdot[s] = math.sqrt(float(np.dot(f0, f0)))

    record(0, x, inputs[0])
    for s in range(n):
        i0, ih, i1 = inputs[2 * s], inputs[2 * s + 1], inputs[2 * s + 2]
        k1 = field(x, i0)
        k2 = field(x + half * k1, ih)
        k3 = field(x + half * k2, ih)
        k4 = field(x + dt * k3, i1)
        x = x + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return readout[: s + 1], v[: s + 1], e_norm[: s + 1], pdot[: s + 1], x, s + 1
        record(s + 1, x, i1)
    return readout, v, e_norm, pdot, x, -1
