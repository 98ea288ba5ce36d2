"""Derived physics: steady correlations, heat currents, concurrence, spectral analysis."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .bath import BathSpec, bose_occupation, evaluate_spectral_density
from .core import eig_general
from .embedding import SemiGroupIF
from .engine import (FloquetPropagator, SteadyState, SystemModel, TrotterGrid,
                     assemble_step_propagators, left_multiplication,
                     steady_state, validate_density_matrix, write_csv)
from .errors import ConsistencyError, InputError, MemoryTimeError
from .kernels import apply_block_channels, heat_transform

SY = np.array([[0, -1j], [1j, 0]])
YY = np.kron(SY, SY)


# -- steady two-time correlation ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SteadyCorrelation:
    """Period-averaged steady-state correlation <S(t' + tau) S(t')> on tau = j dt."""

    taus: np.ndarray
    full: np.ndarray
    decay: np.ndarray
    asym: np.ndarray
    signal: np.ndarray
    fourier: np.ndarray
    fourier_direct: np.ndarray
    omega_d: float | None
    dt: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def tau_max(self) -> float:
        return float(self.taus[-1])


def _fourier_from_signal(s):
    """c_0 = s_0^2, c_n = 2 |s_n|^2 (|s_n|^2 at the Nyquist index)."""
    M = s.size
    sh = np.fft.fft(s) / M
    c = np.abs(sh[: M // 2 + 1]) ** 2
    c[1:] *= 2
    if M % 2 == 0 and M > 1:
        c[-1] /= 2
    c[0] = (sh[0] ** 2).real
    return c


def _fourier_direct(asym_period):
    """Cosine projection of one period of C_asym on its own grid."""
    M = asym_period.size
    j = np.arange(M)
    out = np.empty(M // 2 + 1)
    for n in range(M // 2 + 1):
        proj = np.mean(asym_period * np.cos(2 * np.pi * n * j / M)).real
        out[n] = proj if n == 0 or (M % 2 == 0 and n == M // 2) else 2 * proj
    return out


def steady_two_time_correlation(fp: FloquetPropagator, ss: SteadyState, tau_max: float,
                                decay_threshold: float = 1e-3, max_doublings: int = 4,
                                operator=None) -> SteadyCorrelation:
    """Average over the M period start points of <S(t_n + tau) S(t_n)>.

    Every start point is one column of a joint matrix propagated in lock-step:
    the environment tensor acts on all columns at once, while each column
    receives the system channels of its own drive phase.
    """
    if tau_max <= 0:
        raise InputError("tau_max must be positive")
    sg, M = fp.sg, fp.M
    dt = fp.grid.dt
    n_tau = int(round(tau_max / dt))
    if abs(n_tau * dt - tau_max) > 1e-9 * max(tau_max, 1.0):
        raise InputError("tau_max must be a multiple of dt")
    S = np.asarray(fp.meta.get("S") if operator is None else operator)
    if S is None or S.ndim != 2:
        raise InputError("coupling operator unavailable; pass operator=")
    LS = left_multiplication(S)
    row = sg.joint_trace()
    n_phys = sg.d * sg.d
    chi = sg.chi
    row_s = (LS.T @ row.reshape(n_phys, chi)).reshape(-1)

    # s_n = <S(t_n)> for n = 0..M-1 from the stroboscopic micromotion
    W = ss.joint[:M]
    signal = (W @ row_s)
    Y = np.stack([(LS @ w.reshape(n_phys, chi)) for w in W])  # (M, n_phys, chi)
    first = np.asarray(fp.first)
    second = np.asarray(fp.second)
    q = sg.q
    starts = np.arange(M)

    vals = [Y.reshape(M, -1) @ row_s]
    limit = n_tau * 2**max_doublings
    target = n_tau
    j = 0
    while True:
        while j < target:
            k = (starts + j) % M
            Y = apply_block_channels(first[k], Y)
            Y = (q @ Y.reshape(M, -1).T).T.reshape(M, n_phys, chi)
            Y = apply_block_channels(second[k], Y)
            j += 1
            vals.append(Y.reshape(M, -1) @ row_s)
        full = np.array(vals).mean(axis=1)
        idx = (np.arange(j + 1)[:, None] + starts[None, :]) % M
        asym = (signal[idx] * signal[None, :]).mean(axis=1)
        decay = full - asym
        tail = max(1, min(M, (j + 1) // 10))
        ref = abs(decay[0]) if abs(decay[0]) > 0 else 1.0
        resid = float(np.abs(decay[-tail:]).max() / ref)
        if resid <= decay_threshold:
            break
        if target >= limit:
            raise MemoryTimeError(
                f"connected correlation still at {resid:.2e} of its initial value at "
                f"tau = {j * dt:.3f}", tau_max=j * dt, residual=resid)
        target *= 2

    period = asym[:M] if j + 1 >= M else None
    c = _fourier_from_signal(signal)
    if period is None:
        idx = (np.arange(M)[:, None] + starts[None, :]) % M
        period = (signal[idx] * signal[None, :]).mean(axis=1)
    c_direct = _fourier_direct(period)
    omega_d = 2 * np.pi / fp.grid.period if fp.meta.get("driven") else None
    taus = dt * np.arange(j + 1)
    diag = {"decay_residual": resid, "tau_max": float(taus[-1]),
            "doublings": int(np.log2(target / n_tau)), "threshold": decay_threshold,
            "signal_imag": float(np.abs(signal.imag).max())}
    return SteadyCorrelation(taus, full, decay, asym, signal, c, c_direct, omega_d, dt, diag)


def truncate_fourier(c, n_max=8, rel=1e-10):
    """Keep c_0..c_n with n <= n_max and c_n above rel * sum(c)."""
    c = np.asarray(c)
    total = np.abs(c).sum()
    keep = np.where(c > rel * total)[0]
    last = min(n_max, int(keep.max()) if keep.size else 0, c.size - 1)
    return c[: last + 1]


# -- heat current ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HeatCurrentSpectrum:
    omegas: np.ndarray
    continuous: np.ndarray
    harmonics: np.ndarray
    delta_weights: np.ndarray
    fourier: np.ndarray
    total: float
    omega_d: float | None


def _taper(n, fraction):
    w = np.ones(n)
    m = int(round(fraction * n))
    if m > 1:
        x = np.linspace(0, 1, m)
        w[-m:] = 0.5 * (1 + np.cos(np.pi * x))
    return w


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    if n:
        w[0] = w[-1] = 0.5 * h
    return w


def heat_current_density(corr: SteadyCorrelation, bath: BathSpec, omegas, n_max: int = 8,
                         taper: bool = False, taper_fraction: float = 0.1) -> HeatCurrentSpectrum:
    """Continuous part on the omega grid plus delta weights at the drive harmonics."""
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas <= 0):
        raise InputError("frequency grid must be positive")
    J = evaluate_spectral_density(bath.spectral_density, omegas)
    n_b = bose_occupation(omegas, bath.temperature)
    w = _trapezoid_weights(corr.taus.size, corr.dt)
    if taper:
        w = w * _taper(corr.taus.size, taper_fraction)
    integral = heat_transform(omegas, corr.taus, w, corr.decay.real, corr.decay.imag, n_b)
    cont = 2.0 * J * omegas * integral
    if corr.omega_d is None:
        c = corr.fourier[:1]
        harm = np.zeros(1)
    else:
        c = truncate_fourier(corr.fourier, n_max)
        harm = corr.omega_d * np.arange(c.size)
    weights = np.pi * evaluate_spectral_density(bath.spectral_density, harm) * harm * c
    total = float(np.trapezoid(cont, omegas) + weights.sum())
    return HeatCurrentSpectrum(omegas, cont, harm, weights, c, total, corr.omega_d)


def total_heat_current(hcs: HeatCurrentSpectrum) -> float:
    return float(np.trapezoid(hcs.continuous, hcs.omegas) + np.sum(hcs.delta_weights))


def _adjoint_step(fp, n, row):
    """row . Q_{(n mod M)+1} as a row vector."""
    k = n % fp.M
    R = row.reshape(fp.n_phys, -1)
    R = fp.second[k].T @ R
    r = fp.sg.q.T @ R.reshape(-1)
    return (fp.first[k].T @ r.reshape(fp.n_phys, -1)).reshape(-1)


def transient_correlation(fp: FloquetPropagator, rho0, n: int, operator):
    """<S(t_n) S(t_m)> for m = 0..n after a quench, by a backward adjoint sweep."""
    rho0 = validate_density_matrix(rho0, fp.sg.d)
    LS = left_multiplication(operator)
    n_phys = fp.n_phys
    xs = [fp.sg.initial_joint(rho0)]
    for m in range(n):
        xs.append(fp.apply_step(m, xs[-1]))
    row = (LS.T @ fp.sg.joint_trace().reshape(n_phys, -1)).reshape(-1)
    out = np.empty(n + 1, dtype=complex)
    for m in range(n, -1, -1):
        out[m] = row @ (LS @ xs[m].reshape(n_phys, -1)).reshape(-1)
        if m:
            row = _adjoint_step(fp, m - 1, row)
    return out


def transient_heat_current(fp: FloquetPropagator, rho0, t: float, omegas, bath: BathSpec,
                           operator) -> np.ndarray:
    """j(t, omega) after a quench, trapezoid over s in [0, t] on the dt grid."""
    dt = fp.grid.dt
    n = int(round(t / dt))
    if t < 0 or abs(n * dt - t) > 1e-9 * max(abs(t), 1.0):
        raise InputError("t must be a non-negative multiple of dt")
    omegas = np.asarray(omegas, dtype=float)
    if n == 0:
        return np.zeros_like(omegas)
    corr = transient_correlation(fp, rho0, n, operator)
    taus = dt * np.arange(n, -1, -1)  # t - s for s = 0..t
    w = _trapezoid_weights(n + 1, dt)
    J = evaluate_spectral_density(bath.spectral_density, omegas)
    n_b = bose_occupation(omegas, bath.temperature)
    return 2.0 * J * omegas * heat_transform(omegas, taus, w, corr.real, corr.imag, n_b)


# -- concurrence ------------------------------------------------------------------------------

def concurrence(rho, tol: float = 1e-6, herm_tol: float = 1e-8) -> float:
    """Wootters concurrence of a two-qubit density matrix."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise InputError(f"concurrence needs a 4x4 matrix, got {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > herm_tol:
        raise InputError("density matrix is not Hermitian")
    ev, vec = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if ev.min() < -tol:
        raise InputError(f"density matrix has eigenvalue {ev.min():.2e} below -{tol}")
    ev = np.clip(ev, 0.0, None)
    ev = ev / ev.sum()
    sq = (vec * np.sqrt(ev)) @ vec.conj().T
    lam = np.linalg.svd(sq @ YY @ sq.conj(), compute_uv=False)
    return float(min(1.0, max(0.0, lam[0] - lam[1] - lam[2] - lam[3])))


def period_averaged_concurrence(model: SystemModel, ss: SteadyState) -> float:
    states = model.lift_state(ss.micromotion)
    return float(np.mean([concurrence(r) for r in states]))


@dataclass(frozen=True, eq=False)
class ConcurrenceMap:
    omega_ds: np.ndarray
    eps_ds: np.ndarray
    values: np.ndarray
    flags: np.ndarray
    diagnostics: dict

    def rows(self):
        for i, wd in enumerate(self.omega_ds):
            for j, ed in enumerate(self.eps_ds):
                yield wd, ed, self.values[i, j], self.flags[i, j]


def concurrence_point(point, build_if, model_factory, dt_target, method="auto"):
    """Period-averaged steady concurrence at one (omega_d, eps_d) point.

    Returns ``(value, flag, message)``; failures are reported, not raised.
    """
    omega_d, eps = point
    try:
        model = model_factory(omega_d, eps)
        grid = TrotterGrid.for_frequency(omega_d, dt_target)
        sg = build_if(grid.dt)
        fp = assemble_step_propagators(sg, model, grid)
        ss = steady_state(fp, method=method)
        return period_averaged_concurrence(model, ss), 0, ""
    except Exception as exc:  # per-point failures are recorded, not fatal
        return float("nan"), 1, f"{type(exc).__name__}: {exc}"


def concurrence_map(omega_ds, eps_ds, build_if, model_factory, dt_target, mapper=map,
                    method="auto") -> ConcurrenceMap:
    """Grid of period-averaged steady concurrences.

    ``build_if(dt)`` returns a SemiGroupIF (callers cache by dt) and
    ``model_factory(omega_d, eps)`` a SystemModel.  ``mapper`` lets a caller
    distribute points; results are placed by index.
    """
    omega_ds = np.asarray(omega_ds, dtype=float)
    eps_ds = np.asarray(eps_ds, dtype=float)
    if omega_ds.size == 0 or eps_ds.size == 0:
        raise InputError("concurrence map grids must be non-empty")
    points = [(wd, ed) for wd in omega_ds for ed in eps_ds]
    work = partial(concurrence_point, build_if=build_if, model_factory=model_factory,
                   dt_target=dt_target, method=method)
    results = list(mapper(work, points))
    vals = np.array([r[0] for r in results]).reshape(omega_ds.size, eps_ds.size)
    flags = np.array([r[1] for r in results]).reshape(omega_ds.size, eps_ds.size)
    msgs = {f"{float(p[0])!r},{float(p[1])!r}": r[2] for p, r in zip(points, results) if r[1]}
    return ConcurrenceMap(omega_ds, eps_ds, vals, flags, {"failures": msgs})


# -- spectral analysis ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralAnalysis:
    eigenvalues: np.ndarray
    rates: np.ndarray
    modes: np.ndarray
    steady_index: int
    max_concurrence: np.ndarray
    weights: np.ndarray
    well_conditioned: np.ndarray
    dt: float
    diagnostics: dict = field(default_factory=dict)

    def reconstruct(self, n_steps) -> np.ndarray:
        """Reduced state after ``n_steps`` steps from sum_n rho_n z_n^k."""
        return np.einsum("n,nij->ij", self.eigenvalues ** n_steps, self.modes)


def _positivity_scale(base, x, tol=1e-10):
    """Largest s in [0, 1] with base + s x positive semidefinite.

    Works on the support of ``base``; a perturbation reaching outside that
    support cannot be added at any positive scale.
    """
    ev, vec = np.linalg.eigh(base)
    keep = ev > tol * max(ev.max(), 1e-300)
    if not keep.any():
        return 0.0
    P = vec[:, keep]
    out = vec[:, ~keep]
    if out.size and np.abs(out.conj().T @ x).max() > tol:
        return 0.0
    inv_sqrt = P / np.sqrt(ev[keep])
    m = inv_sqrt.conj().T @ x @ inv_sqrt
    lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()
    return 1.0 if lo >= -1.0 else float(-1.0 / lo)


def spectral_analysis(sg: SemiGroupIF, model: SystemModel, rho_ref, n_scan: int = 64,
                      condition_threshold: float = 1e10, positivity_tol: float = 1e-6,
                      substeps: int = 4) -> SpectralAnalysis:
    """Eigen-decomposition of the undriven step propagator and per-mode concurrence.

    The reduced state after a quench from ``rho_ref`` is ``sum_n rho_n z_n^k``
    with ``z_n = exp(gamma_n dt)``.  For each transient mode the state
    ``rho_1 + rho_m e^{gamma_m t} + h.c.`` (a single term for real modes) is
    scanned over one oscillation period, or a decay window for real modes;
    indefinite states are scaled toward the positivity boundary.
    """
    if model.driven:
        raise InputError("spectral analysis needs the undriven model")
    grid = TrotterGrid(sg.dt, 1)
    fp = assemble_step_propagators(sg, model, grid, substeps=substeps)
    Q1 = fp.step_matrix(1)
    dec = eig_general(Q1, condition_threshold=condition_threshold)
    z = dec.eigenvalues
    with np.errstate(divide="ignore"):
        gam = np.log(z.astype(complex)) / sg.dt
    x_ref = sg.initial_joint(validate_density_matrix(rho_ref, sg.d))
    overlap = dec.left @ x_ref
    n_phys = sg.d * sg.d
    reduced = (dec.right.T.reshape(-1, n_phys, sg.chi) @ sg.v_l).reshape(-1, sg.d, sg.d)
    modes = reduced * overlap[:, None, None]
    k1 = int(np.argmin(np.abs(z - 1)))
    if abs(z[k1] - 1) > 1e-6:
        raise ConsistencyError(f"undriven propagator has no unit eigenvalue (closest {z[k1]})")
    cond = dec.mode_condition()
    good = np.isfinite(cond) & (cond <= condition_threshold)
    rho1 = 0.5 * (modes[k1] + modes[k1].conj().T)
    lifted = model.lift is not None or sg.d == 4
    maxc = np.full(z.size, np.nan)
    weights = np.linalg.norm(modes.reshape(z.size, -1), axis=1)
    skipped = 0
    if lifted:
        base = model.lift_state(rho1)
        for m in range(z.size):
            if m == k1 or not good[m] or z[m] == 0 or weights[m] < 1e-14:
                continue
            g = gam[m]
            real_mode = abs(g.imag) < 1e-9
            if real_mode:
                ts = np.linspace(0, 3.0 / max(abs(g.real), 1e-12), n_scan)
            else:
                ts = np.linspace(0, 2 * np.pi / abs(g.imag), n_scan, endpoint=False)
            best = 0.0
            for t in ts:
                x = modes[m] * np.exp(g * t)
                if not real_mode:
                    x = x + x.conj().T
                x = model.lift_state(0.5 * (x + x.conj().T))
                s = _positivity_scale(base, x)
                rho = base + s * x
                if np.linalg.eigvalsh(rho).min() < -positivity_tol:
                    skipped += 1
                    continue
                best = max(best, concurrence(rho / np.trace(rho).real, tol=positivity_tol))
            maxc[m] = best
    diag = {"condition": dec.condition, "biorthogonality": dec.biorthogonality_residual,
            "skipped_states": skipped, "excluded_modes": int((~good).sum()),
            "protocol": "overlap-scaled modes, scan over one period, rescaled to the "
                        "positivity boundary when indefinite"}
    if (~good).any():
        warnings.warn(f"{int((~good).sum())} ill-conditioned modes excluded", RuntimeWarning,
                      stacklevel=2)
    return SpectralAnalysis(z, gam, modes, k1, maxc, weights, good, sg.dt, diag)


def write_spectral_csv(path, sa: SpectralAnalysis) -> None:
    rows = [(g.real, g.imag, c, w) for g, c, w in zip(sa.rates, sa.max_concurrence, sa.weights)
            if np.isfinite(g)]
    write_csv(path, ["re_gamma", "im_gamma", "max_concurrence", "weight"], rows)


def write_heat_csv(path_density, path_delta, hcs: HeatCurrentSpectrum) -> None:
    write_csv(path_density, ["omega", "j_cont"], zip(hcs.omegas, hcs.continuous))
    write_csv(path_delta, ["n", "n_omega_d", "w_n"],
              zip(np.arange(hcs.harmonics.size).astype(str), hcs.harmonics, hcs.delta_weights))


def write_concurrence_csv(path, cmap: ConcurrenceMap) -> None:
    write_csv(path, ["omega_d", "eps_d", "value", "flag"],
              ((wd, ed, v, str(int(f))) for wd, ed, v, f in cmap.rows()))
