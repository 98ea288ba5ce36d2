"""Preset spin-boson system models."""

import numpy as np

from .engine import DriveTerm, SystemModel
from .errors import InputError

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)

DRIVE_TYPES = ("longitudinal", "transversal")


def single_spin(omega=1.0, drive="transversal", eps=0.0, omega_d=1.0, phase=0.0):
    """H = (omega/2) sx + eps cos(omega_d t + phase) P with P = sx (longitudinal) or sz
    (transversal); the bath couples through S = sz."""
    if drive not in DRIVE_TYPES:
        raise InputError(f"drive type must be one of {DRIVE_TYPES}, got {drive!r}")
    op = SX if drive == "longitudinal" else SZ
    drives = (DriveTerm(eps, omega_d, phase, op),) if eps != 0 else ()
    return SystemModel(0.5 * omega * SX, SZ, drives, name=f"single-spin/{drive}")


def singlet():
    return np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)


def triplet_isometry():
    """4x3 isometry onto the exchange-symmetric subspace: |00>, (|01>+|10>)/sqrt2, |11>."""
    B = np.zeros((4, 3), dtype=complex)
    B[0, 0] = 1
    B[1, 1] = B[2, 1] = 1 / np.sqrt(2)
    B[3, 2] = 1
    return B


def two_spin(omega=1.0, eps=0.0, omega_d=1.0, phase=0.0, sector="triplet"):
    """Two qubits with S = (sz_A + sz_B)/2 and H = ((omega + eps cos(omega_d t + phase))/2) X,
    X = sx_A + sx_B.

    ``sector="full"`` keeps the 4-dimensional space; ``"triplet"`` restricts to
    the exchange-symmetric subspace, which both H and S leave invariant, and
    lifts states back to four dimensions through ``model.lift``.
    """
    S = 0.5 * (np.kron(SZ, I2) + np.kron(I2, SZ))
    X = np.kron(SX, I2) + np.kron(I2, SX)
    if sector == "full":
        lift = None
    elif sector == "triplet":
        lift = triplet_isometry()
        S = lift.conj().T @ S @ lift
        X = lift.conj().T @ X @ lift
    else:
        raise InputError(f"sector must be 'full' or 'triplet', got {sector!r}")
    drives = (DriveTerm(0.5 * eps, omega_d, phase, X),) if eps != 0 else ()
    return SystemModel(0.5 * omega * X, S, drives, lift=lift, name=f"two-spin/{sector}")


def ket_density(*amps):
    v = np.asarray(amps, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def ground_state(H):
    w, v = np.linalg.eigh(H)
    return np.outer(v[:, 0], v[:, 0].conj())
