"""Periodic step propagators, the stroboscopic Floquet propagator and dynamics.

One step of length ``dt`` is the symmetric Trotter product

    Q_n = U_sys(t_n, t_n - dt/2) . q . U_sys(t_n - dt/2, t_{n-1})

where the system channels act on the physical leg of the joint
(system x bond) vector and ``q`` is the repeating environment tensor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigs

from .core import eig_general, leading_eigenpair, matrix_exponential, unitary_channel
from .embedding import SemiGroupIF
from .errors import (ConsistencyError, DegenerateSteadyStateError, DimensionError,
                     InputError)

HERMITIAN_TOL = 1e-12


def _hermitian(op, name, d=None):
    op = np.asarray(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1] or (d is not None and op.shape[0] != d):
        raise DimensionError(f"{name} has shape {op.shape}")
    if np.abs(op - op.conj().T).max() > HERMITIAN_TOL:
        raise InputError(f"{name} is not Hermitian")
    op = op.copy()
    op.flags.writeable = False
    return op


@dataclass(frozen=True, eq=False)
class DriveTerm:
    """amplitude * cos(frequency * t + phase) * operator"""

    amplitude: float
    frequency: float
    phase: float
    operator: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.amplitude) or not np.isfinite(self.phase):
            raise InputError("drive amplitude and phase must be finite")
        if not self.frequency > 0:
            raise InputError("drive frequency must be positive")
        object.__setattr__(self, "operator", _hermitian(self.operator, "drive operator"))


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Local Hamiltonian, periodic drives and bath coupling operator.

    ``lift`` optionally embeds the model space into a larger physical space
    (an isometry of shape (d_full, d)); it is used to map reduced states back,
    e.g. from the two-qubit triplet sector to the full two-qubit space.
    """

    H_static: np.ndarray
    S: np.ndarray
    drives: tuple = ()
    lift: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        H = _hermitian(self.H_static, "H_static")
        d = H.shape[0]
        object.__setattr__(self, "H_static", H)
        object.__setattr__(self, "S", _hermitian(self.S, "coupling operator S", d))
        drives = tuple(self.drives)
        for dr in drives:
            if dr.operator.shape != (d, d):
                raise DimensionError("drive operator dimension differs from H_static")
        object.__setattr__(self, "drives", drives)
        active = [dr for dr in drives if dr.amplitude != 0]
        if active:
            base = min(dr.frequency for dr in active)
            for dr in active:
                ratio = dr.frequency / base
                if abs(ratio - round(ratio)) > 1e-9:
                    raise InputError("drive frequencies must be integer multiples of the lowest")
        if self.lift is not None:
            lift = np.asarray(self.lift, dtype=complex)
            if lift.ndim != 2 or lift.shape[1] != d:
                raise DimensionError("lift must have shape (d_full, d)")
            if np.abs(lift.conj().T @ lift - np.eye(d)).max() > 1e-12:
                raise InputError("lift must be an isometry")
            object.__setattr__(self, "lift", lift)

    @property
    def d(self) -> int:
        return self.H_static.shape[0]

    @property
    def driven(self) -> bool:
        return any(dr.amplitude != 0 for dr in self.drives)

    @property
    def base_frequency(self) -> float | None:
        active = [dr.frequency for dr in self.drives if dr.amplitude != 0]
        return min(active) if active else None

    def hamiltonian(self, t: float) -> np.ndarray:
        H = np.array(self.H_static)
        for dr in self.drives:
            if dr.amplitude != 0:
                H = H + dr.amplitude * np.cos(dr.frequency * t + dr.phase) * dr.operator
        return H

    def lift_state(self, rho):
        """Map model-space states (..., d, d) to the physical space."""
        if self.lift is None:
            return rho
        return self.lift @ rho @ self.lift.conj().T

    def undriven(self) -> "SystemModel":
        return SystemModel(self.H_static, self.S, (), self.lift, self.name)


@dataclass(frozen=True)
class TrotterGrid:
    """Uniform time grid with M steps of length dt per drive period T = M dt."""

    dt: float
    M: int

    def __post_init__(self):
        if not self.dt > 0:
            raise InputError("dt must be positive")
        if int(self.M) != self.M or self.M < 1:
            raise InputError("M must be a positive integer")

    @classmethod
    def for_frequency(cls, omega_d: float, dt_target: float, min_steps: int = 2) -> "TrotterGrid":
        """M = round(2 pi / (omega_d dt_target)) and dt = 2 pi / (omega_d M)."""
        if not omega_d > 0 or not dt_target > 0:
            raise InputError("omega_d and target dt must be positive")
        T = 2 * np.pi / omega_d
        M = max(min_steps, int(round(T / dt_target)))
        return cls(T / M, M)

    @classmethod
    def for_model(cls, model: SystemModel, dt_target: float) -> "TrotterGrid":
        """Drive-locked grid for driven models; a single repeating step otherwise."""
        if model.driven:
            return cls.for_frequency(model.base_frequency, dt_target)
        return cls(float(dt_target), 1)

    @property
    def period(self) -> float:
        return self.M * self.dt

    def time(self, n) -> float:
        return n * self.dt


# -- system channels -----------------------------------------------------------

_GAUSS = (0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6)


def system_propagator(model: SystemModel, t_i: float, t_f: float, substeps: int = 4,
                      order: int = 4) -> np.ndarray:
    """Time-ordered U(t_f, t_i) of H_sys(t).

    ``order=4`` uses the two-point Gauss-Legendre Magnus integrator per
    sub-step; ``order=2`` the midpoint exponential.  Static Hamiltonians are
    exponentiated in one shot.
    """
    if not t_f > t_i:
        raise InputError("t_f must exceed t_i")
    if not model.driven:
        return matrix_exponential(-1j * model.H_static * (t_f - t_i))
    if order not in (2, 4):
        raise InputError("order must be 2 or 4")
    h = (t_f - t_i) / substeps
    U = np.eye(model.d, dtype=complex)
    for j in range(substeps):
        t0 = t_i + j * h
        if order == 2:
            omega = -1j * h * model.hamiltonian(t0 + 0.5 * h)
        else:
            H1 = model.hamiltonian(t0 + _GAUSS[0] * h)
            H2 = model.hamiltonian(t0 + _GAUSS[1] * h)
            omega = -0.5j * h * (H1 + H2) - (np.sqrt(3) / 12) * h * h * (H2 @ H1 - H1 @ H2)
        U = matrix_exponential(omega) @ U
    return U


def system_step_channel(model, t_i, t_f, substeps=4, order=4) -> np.ndarray:
    """Vectorised unitary channel U (x) U* over [t_i, t_f]."""
    return unitary_channel(system_propagator(model, t_i, t_f, substeps, order))


# -- Floquet propagator ------------------------------------------------------------

@dataclass(eq=False)
class FloquetPropagator:
    """Step propagators of one period in factored form.

    ``first[n]`` and ``second[n]`` are the system half-step channels of step
    ``n + 1``; the explicit matrices Q_n, Q_F and the spectrum of Q_F are
    computed on demand and cached.
    """

    sg: SemiGroupIF
    grid: TrotterGrid
    first: np.ndarray
    second: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.grid.M

    @property
    def dim(self) -> int:
        return self.sg.dim

    @property
    def n_phys(self) -> int:
        return self.sg.d * self.sg.d

    def _sys(self, V, X):
        shape = X.shape
        return (V @ X.reshape(self.n_phys, -1)).reshape(shape)

    def apply_step(self, n: int, x: np.ndarray) -> np.ndarray:
        """Apply Q_{(n mod M) + 1} to joint vector(s) ``x`` (columns for 2-d input)."""
        k = n % self.M
        x = self._sys(self.first[k], x)
        x = self.sg.q @ x
        return self._sys(self.second[k], x)

    def apply_period(self, x, start: int = 0):
        for n in range(start, start + self.M):
            x = self.apply_step(n, x)
        return x

    def step_matrix(self, n: int) -> np.ndarray:
        """Explicit Q_n for n = 1..M."""
        k = (n - 1) % self.M
        D = self.dim
        q = self._sys(self.second[k], self.sg.q)
        # right multiplication by first[k] (x) I acts on the column physical index
        q = q.reshape(D, self.n_phys, -1)
        q = np.einsum("aib,ic->acb", q, self.first[k]).reshape(D, D)
        return q

    @cached_property
    def steps(self) -> list:
        return [self.step_matrix(n) for n in range(1, self.M + 1)]

    def cyclic_product(self, k: int = 0) -> np.ndarray:
        """Q_k ... Q_1 Q_M ... Q_{k+1}; k = 0 gives Q_F."""
        X = np.eye(self.dim, dtype=complex)
        for j in range(k, k + self.M):
            X = self.apply_step(j, X)
        return X

    @cached_property
    def QF(self) -> np.ndarray:
        return self.cyclic_product(0)

    @cached_property
    def spectrum(self):
        return eig_general(self.QF)


def assemble_step_propagators(sg: SemiGroupIF, model: SystemModel, grid: TrotterGrid,
                              substeps: int = 4, order: int = 4) -> FloquetPropagator:
    if model.d != sg.d:
        raise DimensionError(f"model dimension {model.d} differs from IF dimension {sg.d}")
    if abs(sg.dt - grid.dt) > 1e-12 * grid.dt:
        raise InputError(f"IF time step {sg.dt!r} differs from grid time step {grid.dt!r}")
    if model.driven:
        T = 2 * np.pi / model.base_frequency
        if abs(grid.period - T) > 1e-12 * T:
            raise InputError("grid period does not match the drive period")
    dt = grid.dt
    if model.driven:
        first = np.array([system_step_channel(model, n * dt, (n + 0.5) * dt, substeps, order)
                          for n in range(grid.M)])
        second = np.array([system_step_channel(model, (n + 0.5) * dt, (n + 1) * dt, substeps,
                                               order) for n in range(grid.M)])
    else:
        half = system_step_channel(model, 0.0, 0.5 * dt)
        first = np.repeat(half[None], grid.M, axis=0)
        second = first.copy()
    meta = {"substeps": substeps, "magnus_order": order, "dt": dt, "M": grid.M,
            "S": model.S, "driven": model.driven}
    return FloquetPropagator(sg, grid, first, second, meta)


def assemble_floquet_propagator(fp: FloquetPropagator, spectrum: bool = True) -> FloquetPropagator:
    """Attach Q_F (and optionally its eigendecomposition)."""
    fp.QF
    if spectrum:
        fp.spectrum
    return fp


@dataclass(frozen=True)
class FloquetSpectrum:
    eigenvalues: np.ndarray
    rates: np.ndarray
    unit_index: int


def floquet_spectrum(fp: FloquetPropagator, tol: float = 1e-4) -> FloquetSpectrum:
    """Eigenvalues of Q_F and principal-branch rates log(lambda) / T."""
    lam = fp.spectrum.eigenvalues
    with np.errstate(divide="ignore"):
        rates = np.log(lam.astype(complex)) / fp.grid.period
    k = int(np.argmin(np.abs(lam - 1)))
    if abs(lam[k] - 1) > tol:
        raise ConsistencyError(
            f"no eigenvalue within {tol} of 1 (closest {lam[k]}); trace preservation broken")
    return FloquetSpectrum(lam, rates, k)


# -- steady state ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SteadyState:
    """Quasi-stationary state at stroboscopic times and its micromotion.

    ``joint[n]`` is the joint vector at t_n = n dt for n = 0..M (``joint[M]``
    returns to ``joint[0]`` up to the eigenvalue); ``micromotion[n-1]`` is the
    reduced state at t_n.
    """

    eigenvalue: complex
    w: np.ndarray
    rho: np.ndarray
    joint: np.ndarray
    micromotion: np.ndarray
    diagnostics: dict


DENSE_LIMIT = 800


def _leading_candidates(fp, method, k):
    if method == "auto":
        method = "dense" if fp.dim <= DENSE_LIMIT or "spectrum" in fp.__dict__ else "arnoldi"
    if method == "dense":
        spec = fp.spectrum
        if spec.defective:
            lam, vec, _ = leading_eigenpair(fp.QF, fp.dim)
            return np.array([lam]), vec[:, None], {"fallback": "power iteration"}
        return spec.eigenvalues, spec.right, {"condition": spec.condition}
    if method == "arnoldi":
        op = LinearOperator((fp.dim, fp.dim), matvec=fp.apply_period, dtype=complex)
        v0 = np.ones(fp.dim, dtype=complex)
        vals, vecs = eigs(op, k=min(k, fp.dim - 2), which="LM", tol=1e-13, v0=v0)
        order = np.argsort(-np.abs(vals), kind="stable")
        return vals[order], vecs[:, order], {}
    raise InputError(f"unknown steady-state method {method!r}")


def steady_state(fp: FloquetPropagator, method: str = "auto", degeneracy_tol: float = 1e-8,
                 unit_tol: float = 1e-4, n_candidates: int = 6) -> SteadyState:
    """Leading eigenvector of Q_F, normalised to unit joint trace, and its micromotion.

    ``method`` is ``"dense"`` (full eigendecomposition, power iteration when
    the eigenvector matrix is ill-conditioned), ``"arnoldi"`` (a few leading
    eigenpairs of the period map) or ``"auto"`` (dense for small problems or
    when the spectrum is already available).
    """
    vals, vecs, diag = _leading_candidates(fp, method, n_candidates)
    near = np.where(np.abs(np.abs(vals) - 1) < degeneracy_tol)[0]
    if near.size > 1:
        raise DegenerateSteadyStateError(
            f"{near.size} eigenvalues within {degeneracy_tol} of modulus 1",
            eigenvalues=vals[near], eigenvectors=vecs[:, near])
    k = int(np.argmin(np.abs(vals - 1)))
    lam = complex(vals[k])
    if abs(lam - 1) > unit_tol:
        raise ConsistencyError(f"leading eigenvalue {lam} not within {unit_tol} of 1")
    w = vecs[:, k]
    row = fp.sg.joint_trace()
    norm = row @ w
    if abs(norm) < 1e-300:
        raise ConsistencyError("leading eigenvector has zero trace")
    w = w / norm
    joint = [w]
    x = w
    for n in range(fp.M):
        x = fp.apply_step(n, x)
        joint.append(x)
    joint = np.array(joint)
    states = np.array([fp.sg.reduce(v) for v in joint[1:]])
    herm = float(np.abs(states - states.conj().transpose(0, 2, 1)).max())
    traces = np.einsum("nii->n", states)
    min_eig = float(min(np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min() for r in states))
    diag.update({"hermiticity": herm, "trace_error": float(np.abs(traces - 1).max()),
                 "min_eigenvalue": min_eig,
                 "stroboscopic_residual": float(np.abs(joint[-1] - w).max()),
                 "method": method})
    return SteadyState(lam, w, fp.sg.reduce(w), joint, states, diag)


# -- quench dynamics ------------------------------------------------------------------

def validate_density_matrix(rho, d, tol=1e-10) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (d, d):
        raise InputError(f"initial state must be {d}x{d}, got {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise InputError("initial state is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise InputError("initial state does not have unit trace")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise InputError("initial state is not positive")
    return rho


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def expectation(self, op) -> np.ndarray:
        return np.einsum("ij,nji->n", np.asarray(op), self.states)


def propagate_quench(fp: FloquetPropagator, rho0, n_steps: int, start: int = 0) -> Trajectory:
    """Reduced states at t_0 .. t_{n_steps} from the factorised state rho0 (x) v_r."""
    rho0 = validate_density_matrix(rho0, fp.sg.d)
    if n_steps < 0:
        raise InputError("n_steps must be >= 0")
    x = fp.sg.initial_joint(rho0)
    states = [rho0]
    for n in range(start, start + n_steps):
        x = fp.apply_step(n, x)
        states.append(fp.sg.reduce(x))
    times = fp.grid.dt * np.arange(start, start + n_steps + 1)
    return Trajectory(times, np.array(states))


def propagate_periods(fp: FloquetPropagator, rho0, periods: Sequence[int],
                      condition_threshold: float = 1e10) -> np.ndarray:
    """Reduced states at stroboscopic times p T via the spectrum of Q_F.

    Falls back to repeated multiplication when the eigenvector matrix is
    ill-conditioned.
    """
    rho0 = validate_density_matrix(rho0, fp.sg.d)
    x0 = fp.sg.initial_joint(rho0)
    spec = fp.spectrum
    out = []
    if spec.condition <= condition_threshold:
        coef = spec.left @ x0
        for p in periods:
            out.append(fp.sg.reduce(spec.right @ (spec.eigenvalues ** p * coef)))
        return np.array(out)
    x, cur = x0, 0
    for p in sorted(periods):
        for _ in range(p - cur):
            x = fp.QF @ x
        cur = p
        out.append(fp.sg.reduce(x))
    order = np.argsort(np.argsort(periods))
    return np.array(out)[order]


# -- multi-time correlations --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Insertion:
    """Superoperator on the d^2 physical space applied after ``step`` steps."""

    step: int
    superop: np.ndarray


def left_multiplication(op) -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    return np.kron(op, np.eye(op.shape[0]))


def right_multiplication(op) -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    return np.kron(np.eye(op.shape[0]), op.T)


def multitime_correlation(fp: FloquetPropagator, rho0, insertions: Sequence[Insertion]) -> complex:
    """Trace of the joint state after propagating with the given insertions."""
    rho0 = validate_density_matrix(rho0, fp.sg.d)
    steps = [ins.step for ins in insertions]
    if any(s < 0 for s in steps) or steps != sorted(steps):
        raise InputError("insertions must be sorted by non-negative step index")
    x = fp.sg.initial_joint(rho0)
    n = 0
    for ins in insertions:
        while n < ins.step:
            x = fp.apply_step(n, x)
            n += 1
        x = fp._sys(ins.superop, x)
    return complex(fp.sg.joint_trace() @ x)


# -- export ----------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def write_trajectory_csv(path, times, observables: dict) -> None:
    """Columns t, re_<name>, im_<name> for each observable series."""
    header = ["t"]
    cols = [np.asarray(times, dtype=float)]
    for name, vals in observables.items():
        vals = np.asarray(vals, dtype=complex)
        header += [f"re_{name}", f"im_{name}"]
        cols += [vals.real, vals.imag]
    write_csv(path, header, zip(*cols))


def write_spectrum_csv(path, spec: FloquetSpectrum) -> None:
    write_csv(path, ["re_lambda", "im_lambda", "re_rate", "im_rate"],
              zip(spec.eigenvalues.real, spec.eigenvalues.imag,
                  spec.rates.real, spec.rates.imag))
