# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled step kernel for the lazy Metropolis walk.

Mirrors engine._walk_block_python operation for operation (same uniform
consumption, same rounding guard, same NaN fault protocol) so trajectories
are bit-identical across engines.
"""

from libc.math cimport exp, isnan


def walk_block(double[::1] table, long m, long d, long[::1] strides,
               long state, long[::1] coords, double[:, ::1] U):
    """Advance through rows of U; return (state, consumed, fault_index).

    fault_index is -1 unless the block stopped early at a NaN table entry,
    in which case that row's uniforms were not consumed.
    """
    cdef long two_d = 2 * d
    cdef Py_ssize_t rows = U.shape[0]
    cdef Py_ssize_t i
    cdef long j, axis, delta, c, nb
    cdef double f
    for i in range(rows):
        if U[i, 0] < 0.5:
            continue
        j = <long>(U[i, 1] * two_d)
        if j >= two_d:
            j = two_d - 1
        axis = j >> 1
        delta = 1 if (j & 1) == 0 else -1
        c = coords[axis] + delta
        if c < 0 or c >= m:
            continue
        nb = state + delta * strides[axis]
        f = table[nb]
        if isnan(f):
            return state, i, nb
        f = table[state] - f
        if f >= 0 or U[i, 2] < exp(f):
            state = nb
            coords[axis] = c
    return state, rows, -1
