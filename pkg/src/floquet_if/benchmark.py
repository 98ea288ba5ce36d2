"""Redfield master equation on the first-order Magnus (period-averaged) model.

Only drives that commute with the bath coupling are handled.  In the frame
generated by the drive, K(t) = exp(-i Lambda(t) P) with
Lambda(t) = (eps / omega_d) sin(omega_d t + phase), the drive term is removed
exactly and the rotated static Hamiltonian is averaged over one period.  For
the transversal spin-boson drive this renormalises the tunnelling to
Omega J0(2 eps / omega_d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import BathSpec, ExponentialBathFit, fit_exponentials
from .engine import SystemModel, Trajectory, validate_density_matrix
from .errors import InputError, StepSizeError, UnsupportedConfigurationError
from .kernels import tcl2_propagate

SX = np.array([[0, 1], [1, 0]], dtype=complex)

TRACE_DRIFT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class EffectiveModel:
    """Period-averaged Hamiltonian plus the kick that restores micromotion.

    Attributes
    ----------
    H_eff : ndarray
        Averaged Hamiltonian in the drive frame.
    S : ndarray
        Bath coupling operator (unchanged since it commutes with the drive).
    omega_eff : float
        Tunnelling element, ``Tr(H_eff sx)`` for a qubit, else ``nan``.
    eps, omega_d, phase : float
        Drive amplitude, frequency and phase; ``eps = 0`` means no drive.
    P : ndarray
        Drive operator.
    """

    H_eff: np.ndarray
    S: np.ndarray
    omega_eff: float
    eps: float
    omega_d: float
    phase: float
    P: np.ndarray

    @property
    def d(self) -> int:
        return self.H_eff.shape[0]

    def kick_phase(self, t):
        if self.eps == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        return (self.eps / self.omega_d) * np.sin(self.omega_d * np.asarray(t, dtype=float)
                                                  + self.phase)


def _frame(P, lam):
    w, v = np.linalg.eigh(P)
    return (v * np.exp(-1j * lam * w)) @ v.conj().T


def magnus_effective_model(model: SystemModel, n_average: int = 256) -> EffectiveModel:
    """First-order Magnus model for a drive that commutes with the coupling.

    The average of ``K(t)^+ H_static K(t)`` over one period is taken with the
    trapezoid rule on ``n_average`` points, which is spectrally accurate for
    the periodic integrand.
    """
    active = [dr for dr in model.drives if dr.amplitude != 0]
    P0 = active[0].operator if active else model.S
    if not active:
        H = np.array(model.H_static)
        return EffectiveModel(H, model.S, _omega_eff(H), 0.0, 1.0, 0.0, P0)
    if len(active) > 1:
        raise UnsupportedConfigurationError("only a single drive term is supported")
    dr = active[0]
    P = dr.operator
    if np.abs(P @ model.S - model.S @ P).max() > 1e-12:
        raise UnsupportedConfigurationError(
            "drive operator does not commute with the coupling operator; "
            "the Magnus benchmark covers transversal driving only")
    theta = 2 * np.pi * np.arange(n_average) / n_average
    H = np.zeros_like(model.H_static)
    for th in theta:
        K = _frame(P, dr.amplitude / dr.frequency * np.sin(th))
        H = H + K.conj().T @ model.H_static @ K
    H = H / n_average
    H = 0.5 * (H + H.conj().T)
    return EffectiveModel(H, model.S, _omega_eff(H), float(dr.amplitude),
                          float(dr.frequency), float(dr.phase), P)


def _omega_eff(H):
    if H.shape != (2, 2):
        return float("nan")
    return float(np.trace(H @ SX).real)


def kick_operator(em: EffectiveModel, t: float) -> np.ndarray:
    """exp(-i Lambda(t) P), mapping drive-frame states to the lab frame."""
    return _frame(em.P, float(em.kick_phase(t)))


def redfield_propagate(em: EffectiveModel, bath: BathSpec, rho0, t_final: float, dt_me: float,
                       fit: ExponentialBathFit | None = None, n_terms: int = 4) -> Trajectory:
    """Time-local second-order (Redfield) dynamics of the effective model.

    The memory kernel uses the exponential fit of the bath correlation, so the
    integrals int_0^t C(s) S(-s) ds are closed form per term.  Stepping is
    classical RK4 in the eigenbasis of ``H_eff``; lab-frame states are
    recovered with :func:`kick_operator`.
    """
    if not dt_me > 0 or not t_final >= 0:
        raise InputError("dt_me must be positive and t_final non-negative")
    rho0 = validate_density_matrix(rho0, em.d)
    if fit is not None:
        amps, rates = fit.amplitudes, fit.rates
    elif getattr(bath.spectral_density, "alpha", None) == 0:
        amps = rates = np.zeros(0, dtype=complex)
    else:
        fit = fit_exponentials(bath, n_terms)
        amps, rates = fit.amplitudes, fit.rates
    n_steps = max(1, int(np.ceil(t_final / dt_me - 1e-12)))
    h = t_final / n_steps if t_final > 0 else dt_me
    E, V = np.linalg.eigh(em.H_eff)
    K0 = kick_operator(em, 0.0)
    rho_frame = K0.conj().T @ rho0 @ K0
    S_e = V.conj().T @ em.S @ V
    out = tcl2_propagate(E, S_e, amps, rates, V.conj().T @ rho_frame @ V,
                         h, n_steps if t_final > 0 else 0)
    tr = np.einsum("nii->n", out)
    if not np.all(np.isfinite(out)) or np.abs(tr - 1).max() > TRACE_DRIFT_TOL:
        raise StepSizeError(f"trace drift {np.abs(tr - 1).max():.3e} with dt_me = {h}; "
                            "reduce the step size")
    states = V @ out @ V.conj().T
    times = h * np.arange(out.shape[0])
    for n, t in enumerate(times):
        K = kick_operator(em, t)
        states[n] = K @ states[n] @ K.conj().T
    return Trajectory(times, states)


def expectations(traj: Trajectory, ops: dict) -> tuple[np.ndarray, dict]:
    """(times, {name: real expectation values}) for a trajectory."""
    return traj.times, {k: traj.expectation(op).real for k, op in ops.items()}


def compare_trajectories(a, b) -> dict:
    """Max and mean absolute deviation per shared observable.

    ``a`` and ``b`` are ``(times, {name: values})`` pairs.  The finer series
    is linearly interpolated onto the coarser grid, restricted to the common
    time range.
    """
    ta, va = np.asarray(a[0], dtype=float), a[1]
    tb, vb = np.asarray(b[0], dtype=float), b[1]
    lo, hi = max(ta[0], tb[0]), min(ta[-1], tb[-1])
    if hi < lo or (hi == lo and (len(ta) > 1 or len(tb) > 1)):
        raise InputError("trajectories cover disjoint time ranges")
    na = np.count_nonzero((ta >= lo) & (ta <= hi))
    nb = np.count_nonzero((tb >= lo) & (tb <= hi))
    if na <= nb:
        grid, base, other, to = ta[(ta >= lo) & (ta <= hi)], va, vb, tb
        sel = (ta >= lo) & (ta <= hi)
    else:
        grid, base, other, to = tb[(tb >= lo) & (tb <= hi)], vb, va, ta
        sel = (tb >= lo) & (tb <= hi)
    names = [k for k in base if k in other]
    if not names:
        raise InputError("trajectories share no observables")
    report = {}
    for k in names:
        x = np.asarray(base[k])[sel]
        y = np.interp(grid, to, np.asarray(other[k]))
        dev = np.abs(x - y)
        report[k] = {"max": float(dev.max()), "mean": float(dev.mean())}
    return report
