"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names dispatch to the numba version unless acceleration is
disabled (see :mod:`floquet_if._accel`).  Both variants are importable
under ``*_numpy`` / ``*_numba`` for parity tests and benchmarking.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit

__all__ = [
    "apply_block_channels",
    "heat_transform",
    "tcl2_propagate",
    "BACKEND",
]


# -- batched system channels --------------------------------------------------

def apply_block_channels_numpy(V, X):
    """out[b] = V[b] @ X[b] for a stack of small channels and joint blocks."""
    return np.matmul(V, X)


@njit
def apply_block_channels_numba(V, X):
    nb, n, m = X.shape
    out = np.zeros((nb, n, m), dtype=np.complex128)
    for b in range(nb):
        for i in range(n):
            for k in range(n):
                v = V[b, i, k]
                if v == 0:
                    continue
                for j in range(m):
                    out[b, i, j] += v * X[b, k, j]
    return out


# -- frequency transform of a decaying correlation -----------------------------

def heat_transform_numpy(omegas, taus, weights, c_re, c_im, occupation):
    """sum_j w_j [(1 + 2 n(w)) sin(w tau_j) Im C_j + cos(w tau_j) Re C_j]."""
    phase = np.outer(omegas, taus)
    s = np.sin(phase) @ (weights * c_im)
    c = np.cos(phase) @ (weights * c_re)
    return (1.0 + 2.0 * occupation) * s + c


@njit
def heat_transform_numba(omegas, taus, weights, c_re, c_im, occupation):
    out = np.empty(omegas.shape[0])
    for i in range(omegas.shape[0]):
        w = omegas[i]
        s = 0.0
        c = 0.0
        for j in range(taus.shape[0]):
            ph = w * taus[j]
            s += weights[j] * c_im[j] * np.sin(ph)
            c += weights[j] * c_re[j] * np.cos(ph)
        out[i] = (1.0 + 2.0 * occupation[i]) * s + c
    return out


# -- time-local second-order master equation ----------------------------------

def _tcl2_lambda_numpy(t, S, omega, amps, rates):
    # omega[i, j] = E_i - E_j; exponential kernels integrated in closed form
    z = rates[:, None, None] + 1j * omega[None, :, :]
    integ = (amps[:, None, None] * (1.0 - np.exp(-z * t)) / z).sum(axis=0)
    return S * integ


def _tcl2_rhs_numpy(rho, E, S, lam):
    comm_h = E[:, None] * rho - rho * E[None, :]
    lr = lam @ rho
    rl = rho @ lam.conj().T
    x = lr - rl
    return -1j * comm_h - (S @ x - x @ S)


def tcl2_propagate_numpy(E, S, amps, rates, rho0, h, n_steps):
    """RK4 for d rho/dt = -i[H, rho] - [S, L(t) rho - rho L(t)^+] in the H eigenbasis."""
    omega = E[:, None] - E[None, :]
    out = np.empty((n_steps + 1,) + rho0.shape, dtype=np.complex128)
    rho = rho0.astype(np.complex128).copy()
    out[0] = rho
    for n in range(n_steps):
        t = n * h
        l0 = _tcl2_lambda_numpy(t, S, omega, amps, rates)
        lh = _tcl2_lambda_numpy(t + 0.5 * h, S, omega, amps, rates)
        l1 = _tcl2_lambda_numpy(t + h, S, omega, amps, rates)
        k1 = _tcl2_rhs_numpy(rho, E, S, l0)
        k2 = _tcl2_rhs_numpy(rho + 0.5 * h * k1, E, S, lh)
        k3 = _tcl2_rhs_numpy(rho + 0.5 * h * k2, E, S, lh)
        k4 = _tcl2_rhs_numpy(rho + h * k3, E, S, l1)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[n + 1] = rho
    return out


@njit
def _tcl2_lambda_numba(t, S, E, amps, rates):
    d = E.shape[0]
    lam = np.zeros((d, d), dtype=np.complex128)
    for i in range(d):
        for j in range(d):
            if S[i, j] == 0:
                continue
            acc = 0j
            for k in range(amps.shape[0]):
                z = rates[k] + 1j * (E[i] - E[j])
                acc += amps[k] * (1.0 - np.exp(-z * t)) / z
            lam[i, j] = S[i, j] * acc
    return lam


@njit
def _tcl2_rhs_numba(rho, E, S, lam):
    d = E.shape[0]
    x = lam @ rho - rho @ lam.conj().T
    out = S @ x - x @ S
    for i in range(d):
        for j in range(d):
            out[i, j] = -1j * (E[i] - E[j]) * rho[i, j] - out[i, j]
    return out


@njit
def tcl2_propagate_numba(E, S, amps, rates, rho0, h, n_steps):
    d = E.shape[0]
    out = np.empty((n_steps + 1, d, d), dtype=np.complex128)
    rho = rho0.astype(np.complex128).copy()
    out[0] = rho
    for n in range(n_steps):
        t = n * h
        l0 = _tcl2_lambda_numba(t, S, E, amps, rates)
        lh = _tcl2_lambda_numba(t + 0.5 * h, S, E, amps, rates)
        l1 = _tcl2_lambda_numba(t + h, S, E, amps, rates)
        k1 = _tcl2_rhs_numba(rho, E, S, l0)
        k2 = _tcl2_rhs_numba(rho + 0.5 * h * k1, E, S, lh)
        k3 = _tcl2_rhs_numba(rho + 0.5 * h * k2, E, S, lh)
        k4 = _tcl2_rhs_numba(rho + h * k3, E, S, l1)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[n + 1] = rho
    return out


# Batched BLAS matmul beats the explicit loops for the small channel stacks
# (see benchmarks/bench_kernels.py), so block channels always use numpy.
_block = apply_block_channels_numpy
if HAVE_NUMBA:
    BACKEND = "numba"
    _heat, _tcl2 = heat_transform_numba, tcl2_propagate_numba
else:
    BACKEND = "numpy"
    _heat, _tcl2 = heat_transform_numpy, tcl2_propagate_numpy


def apply_block_channels(V, X):
    return _block(np.ascontiguousarray(V, dtype=np.complex128),
                  np.ascontiguousarray(X, dtype=np.complex128))


def heat_transform(omegas, taus, weights, c_re, c_im, occupation):
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    return _heat(f(omegas), f(taus), f(weights), f(c_re), f(c_im), f(occupation))


def tcl2_propagate(E, S, amps, rates, rho0, h, n_steps):
    c = lambda a: np.ascontiguousarray(a, dtype=np.complex128)
    return _tcl2(np.ascontiguousarray(E, dtype=np.float64), c(S), c(amps), c(rates),
                 c(rho0), float(h), int(n_steps))
