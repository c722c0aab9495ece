"""Compiled inner loops for the memory-bound parts of a Picard sweep.

Every kernel does the same floating-point operations in the same order as the
obvious numpy expression, so results do not depend on whether a kernel or the
numpy path ran.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def lmc_sweep_update(scores, base, grid, u, n_replicas, residual):
    """Overwrite ``grid[1:]`` with ``base[1:] - u * cumsum(scores)`` in place.

    Arrays are flattened to ``(rows, L)``. ``residual[m]`` is incremented by the
    squared change of row ``m`` summed over ``L`` and divided by ``n_replicas``.
    """
    M, L = scores.shape
    acc = np.zeros(L)
    for m in range(M):
        total = 0.0
        for j in range(L):
            acc[j] += scores[m, j]
            new = base[m + 1, j] - u * acc[j]
            diff = new - grid[m + 1, j]
            total += diff * diff
            grid[m + 1, j] = new
        residual[m + 1] += total / n_replicas


@njit(cache=True)
def diag_gaussian_score(x, mean, lam, out):
    n, d = x.shape
    for i in range(n):
        for j in range(d):
            out[i, j] = lam[j] * (x[i, j] - mean[j])


@njit(cache=True)
def add_hashed_perturbation(bits, seed, delta, out):
    """Add ``delta`` times a unit vector hashed from each row's bit pattern to ``out``.

    The direction is a normalized point of the cube ``[-1/2, 1/2]^d``; each
    output mix supplies two 32-bit coordinates.
    """
    n, d = bits.shape
    s0 = _mix(np.uint64(seed))
    buf = np.empty(d + 1)
    for i in range(n):
        h = s0
        for j in range(d):
            h = (h ^ bits[i, j]) * _M1
            h ^= h >> np.uint64(29)
        norm = 0.0
        for j in range(0, d, 2):
            z = _mix(h + _GOLDEN * np.uint64(j + 1))
            buf[j] = np.float64(np.int64(z >> np.uint64(32))) * 2.0**-32 - 0.5
            buf[j + 1] = np.float64(np.int64(z & np.uint64(0xFFFFFFFF))) * 2.0**-32 - 0.5
        for j in range(d):
            norm += buf[j] * buf[j]
        if norm == 0.0:
            buf[0] = 1.0
            norm = 1.0
        scale = delta / np.sqrt(norm)
        for j in range(d):
            out[i, j] += scale * buf[j]


@njit(cache=True)
def _lse(values, mask_col, states, j):
    # log-sum-exp over entries, optionally restricted to states with x_j = +1
    mx = -np.inf
    for s in range(values.shape[0]):
        if mask_col and states[s, j] < 0:
            continue
        if values[s] > mx:
            mx = values[s]
    if mx == -np.inf:
        return -np.inf
    total = 0.0
    for s in range(values.shape[0]):
        if mask_col and states[s, j] < 0:
            continue
        total += np.exp(values[s] - mx)
    return mx + np.log(total)


@njit(cache=True)
def _energies(z, states, log_w, out):
    # log_w(x) + <z, x> over the states consistent with the infinite entries of z
    S, n = states.shape
    finite = True
    for j in range(n):
        if not np.isfinite(z[j]):
            finite = False
    if finite:
        for s in range(S):
            e = log_w[s]
            for j in range(n):
                e += z[j] * states[s, j]
            out[s] = e
        return
    for s in range(S):
        e = log_w[s]
        for j in range(n):
            zj = z[j]
            x = states[s, j]
            if zj == np.inf:
                if x < 0:
                    e = -np.inf
                    break
            elif zj == -np.inf:
                if x > 0:
                    e = -np.inf
                    break
            else:
                e += zj * x
        out[s] = e


@njit(cache=True)
def enum_log_laplace(z, states, log_w, out):
    """Extended log-Laplace transform of an enumerated measure at each row of ``z``."""
    energies = np.empty(states.shape[0])
    for p in range(z.shape[0]):
        _energies(z[p], states, log_w, energies)
        out[p] = _lse(energies, False, states, 0)


@njit(cache=True)
def enum_log_laplace_flips(z, states, log_w, out0, outflip):
    """``out0[p] = L(z_p)`` and ``outflip[p, j] = L(z_p with +inf at coordinate j)``.

    The exponentials are taken once against the overall maximum; a partial
    sum that underflows is redone against its own maximum.
    """
    P, n = z.shape
    S = states.shape[0]
    energies = np.empty(S)
    weights = np.empty(S)
    partial = np.empty(n)
    row = np.empty(n)
    for p in range(P):
        _energies(z[p], states, log_w, energies)
        mx = -np.inf
        for s in range(S):
            if energies[s] > mx:
                mx = energies[s]
        if mx == -np.inf:
            out0[p] = -np.inf
            for j in range(n):
                for k in range(n):
                    row[k] = z[p, k]
                row[j] = np.inf
                _energies(row, states, log_w, weights)
                outflip[p, j] = _lse(weights, False, states, 0)
            continue
        total = 0.0
        for j in range(n):
            partial[j] = 0.0
        for s in range(S):
            e = np.exp(energies[s] - mx)
            weights[s] = e
            total += e
            for j in range(n):
                if states[s, j] > 0:
                    partial[j] += e
        out0[p] = mx + np.log(total)
        for j in range(n):
            zj = z[p, j]
            if zj == np.inf:
                outflip[p, j] = out0[p]
            elif zj == -np.inf:
                for k in range(n):
                    row[k] = z[p, k]
                row[j] = np.inf
                _energies(row, states, log_w, weights)
                outflip[p, j] = _lse(weights, False, states, 0)
            elif partial[j] > 1e-280:
                outflip[p, j] = mx + np.log(partial[j]) - zj
            else:
                outflip[p, j] = _lse(energies, True, states, j) - zj


_INF_BITS = np.uint64(0x7FF0000000000000)


@njit(cache=True)
def _row_hash(bits, i, s0, skip, skip_bits):
    h = s0
    for j in range(bits.shape[1]):
        b = skip_bits if j == skip else bits[i, j]
        h = _mix(h + b)
    return h


@njit(cache=True)
def hash_signs(bits, seed, out):
    """+1 or -1 per row, a deterministic function of the row's bit pattern."""
    s0 = _mix(np.uint64(seed))
    for i in range(bits.shape[0]):
        h = _row_hash(bits, i, s0, -1, _INF_BITS)
        out[i] = -1.0 if (h >> np.uint64(63)) == np.uint64(1) else 1.0


@njit(cache=True)
def hash_signs_flips(bits, seed, out0, outflip):
    """Signs for each row and for each row with coordinate j replaced by +inf."""
    s0 = _mix(np.uint64(seed))
    for i in range(bits.shape[0]):
        h = _row_hash(bits, i, s0, -1, _INF_BITS)
        out0[i] = -1.0 if (h >> np.uint64(63)) == np.uint64(1) else 1.0
        for j in range(bits.shape[1]):
            h = _row_hash(bits, i, s0, j, _INF_BITS)
            outflip[i, j] = -1.0 if (h >> np.uint64(63)) == np.uint64(1) else 1.0
