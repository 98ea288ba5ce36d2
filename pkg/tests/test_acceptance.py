"""Acceptance criteria 1 to 12.

Each test records one PASS/FAIL line (collected in the terminal summary)
before asserting.  Bath temperature is zero throughout.
"""

import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.stats import unitary_group

from floquet_if.bath import fit_exponentials, ohmic_bath
from floquet_if.benchmark import (compare_trajectories, expectations, magnus_effective_model,
                                  redfield_propagate)
from floquet_if.embedding import PseudomodeSpec, build_environment_generator, build_semigroup_if
from floquet_if.engine import (SystemModel, TrotterGrid, assemble_step_propagators,
                               floquet_spectrum, propagate_quench, steady_state)
from floquet_if.models import SZ, ket_density, single_spin, two_spin
from floquet_if.observables import (concurrence, heat_current_density,
                                    period_averaged_concurrence, spectral_analysis,
                                    steady_two_time_correlation)

UP = ket_density(1, 0)
ALPHA, WC = 0.1, 2.5
DT_REF = np.pi / 60


def ohmic_J(w, alpha=ALPHA, wc=WC):
    return 0.5 * alpha * w * np.exp(-w / wc)


def build(fit, model, dt, cutoff=6, depth=3):
    pm = PseudomodeSpec.uniform(fit.n_terms, cutoff, depth)
    gen = build_environment_generator(fit, pm, model.S, model.d)
    return build_semigroup_if(gen, dt)


def driven_fp(fit, model, dt_target, cutoff=6, depth=3):
    grid = TrotterGrid.for_model(model, dt_target)
    return assemble_step_propagators(build(fit, model, grid.dt, cutoff, depth), model, grid)


@pytest.fixture(scope="module")
def fit_weak():
    return fit_exponentials(ohmic_bath(ALPHA, WC), 4)


@pytest.fixture(scope="module")
def fit_strong():
    return fit_exponentials(ohmic_bath(0.2, 5.0), 4)


@pytest.fixture(scope="module")
def undriven_two_spin(fit_strong):
    model = two_spin(1.0)
    dt = np.pi / 48
    return model, build(fit_strong, model, dt)


# -- 1 ---------------------------------------------------------------------------------

def test_c01_pure_dephasing_oracle(record):
    start = time.perf_counter()
    fit = fit_exponentials(ohmic_bath(ALPHA, WC), 4)
    fit_ok = fit.max_error <= 1e-3 * 0.5 * ALPHA * WC**2
    model = SystemModel(np.zeros((2, 2)), SZ)
    dt = 2 * np.pi / 256
    fp = assemble_step_propagators(build(fit, model, dt), model, TrotterGrid(dt, 1))
    n = int(np.floor(10 / WC / dt))
    traj = propagate_quench(fp, ket_density(1, 1), n)
    sp = np.abs(traj.expectation(np.array([[0, 1], [0, 0]])))  # <sigma_+>
    sp = sp / sp[0]
    err = np.abs(sp - (1 + WC**2 * traj.times**2) ** (-ALPHA)).max()
    elapsed = time.perf_counter() - start
    ok = err <= 1e-3 and fit_ok and elapsed <= 60
    assert record(1, ok, f"max err {err:.2e} (tol 1e-3), fit err/C(0) "
                         f"{fit.max_error / (0.5 * ALPHA * WC**2):.2e}, {elapsed:.1f} s")


# -- 2 ---------------------------------------------------------------------------------

def test_c02_unitary_limit_spectrum(record):
    model = single_spin(1.0, "transversal", eps=1.0, omega_d=5.0)
    fit = fit_exponentials(ohmic_bath(0.0, WC), 4)
    fp = driven_fp(fit, model, 0.02)
    lam_q = floquet_spectrum(fp).eigenvalues
    T = fp.grid.period

    def rhs(t, y):
        return (-1j * model.hamiltonian(t) @ y.reshape(2, 2)).reshape(-1)

    sol = solve_ivp(rhs, (0, T), np.eye(2, dtype=complex).reshape(-1), method="DOP853",
                    rtol=1e-13, atol=1e-14)
    lam = np.linalg.eigvals(sol.y[:, -1].reshape(2, 2))
    ref = np.outer(lam, lam.conj()).reshape(-1)
    nz = lam_q[np.abs(lam_q) > 1e-8]
    err = max(max(np.abs(nz - r).min() for r in ref), max(np.abs(ref - z).min() for z in nz))
    ok = err <= 1e-6 and nz.size == 4
    assert record(2, ok, f"max eigenvalue mismatch {err:.2e} (tol 1e-6), {nz.size} nonzero")


# -- 3 ---------------------------------------------------------------------------------

def test_c03_cyclic_gauge_invariance(record, fit_weak):
    start = time.perf_counter()
    fp = driven_fp(fit_weak, single_spin(1.0, "transversal", eps=1.0, omega_d=10.0), DT_REF)
    ref = np.linalg.eigvals(fp.cyclic_product(0))
    ref = ref[np.abs(ref) > 1e-3]
    worst = 0.0
    rng = np.random.default_rng(0)
    for k in rng.choice(np.arange(1, fp.M), size=5, replace=False):
        ev = np.linalg.eigvals(fp.cyclic_product(int(k)))
        ev = ev[np.abs(ev) > 1e-3]
        if ev.size != ref.size:
            worst = np.inf
            break
        worst = max(worst, max(np.abs(ev - z).min() / abs(z) for z in ref))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed <= 60
    assert record(3, ok, f"max relative deviation {worst:.2e} over 5 reorderings of M = {fp.M} "
                         f"({ref.size} eigenvalues above 1e-3), {elapsed:.1f} s")


# -- 4 ---------------------------------------------------------------------------------

def random_config(rng):
    alpha = rng.uniform(0.02, 0.3)
    wc = rng.uniform(1.0, 6.0)
    eps = rng.uniform(0.0, 2.0)
    omega_d = rng.uniform(2.0, 8.0)
    phase = rng.uniform(0, 2 * np.pi)
    if rng.random() < 0.7:
        model = single_spin(rng.uniform(0.5, 1.5), rng.choice(["transversal", "longitudinal"]),
                            eps, omega_d, phase)
    else:
        model = two_spin(rng.uniform(0.5, 1.5), eps, omega_d, phase)
    d = model.d
    # half pure initial states, which start on the positivity boundary
    A = rng.normal(size=(d, d if rng.random() < 0.5 else 1))
    A = A + 1j * rng.normal(size=A.shape)
    rho = A @ A.conj().T
    return alpha, wc, model, rho / np.trace(rho).real


def test_c04_trace_hermiticity_positivity(record):
    rng = np.random.default_rng(2024)
    worst = {"trace": 0.0, "herm": 0.0, "min_eig": np.inf}
    for _ in range(20):
        alpha, wc, model, rho0 = random_config(rng)
        fit = fit_exponentials(ohmic_bath(alpha, wc), int(rng.integers(1, 3)))
        fp = driven_fp(fit, model, 0.1, cutoff=4, depth=None)
        traj = propagate_quench(fp, rho0, 10 * fp.M)
        st = traj.states
        worst["trace"] = max(worst["trace"], np.abs(np.einsum("nii->n", st) - 1).max())
        worst["herm"] = max(worst["herm"], np.abs(st - st.conj().transpose(0, 2, 1)).max())
        herm = 0.5 * (st + st.conj().transpose(0, 2, 1))
        worst["min_eig"] = min(worst["min_eig"], np.linalg.eigvalsh(herm).min())
    ok = worst["trace"] <= 1e-8 and worst["herm"] <= 1e-8 and worst["min_eig"] >= -1e-5
    assert record(4, ok, f"trace drift {worst['trace']:.1e}, hermiticity {worst['herm']:.1e}, "
                         f"min eigenvalue {worst['min_eig']:.1e} over 20 configs x 10 periods")


# -- 5 ---------------------------------------------------------------------------------

def test_c05_trotter_order(record):
    fit = fit_exponentials(ohmic_bath(ALPHA, WC), 3)
    model = single_spin(1.0, "longitudinal", eps=1.0, omega_d=2.0)
    gen = build_environment_generator(fit, PseudomodeSpec.uniform(3, 5, 3), model.S, 2)
    vals = []
    for M in (8, 16, 32, 64):
        grid = TrotterGrid(np.pi / M, M)
        fp = assemble_step_propagators(build_semigroup_if(gen, grid.dt), model, grid)
        vals.append(propagate_quench(fp, UP, 2 * M).expectation(SZ)[-1].real)
    err = np.abs(np.array(vals[:3]) - vals[3])
    slope = np.polyfit(np.log([1.0, 0.5, 0.25]), np.log(err), 1)[0]
    ok = abs(slope - 2.0) <= 0.3
    assert record(5, ok, f"slope {slope:.2f} (errors {', '.join(f'{e:.2e}' for e in err)})")


# -- 6 ---------------------------------------------------------------------------------

def test_c06_equilibrium_null_current(record, fit_weak):
    model = single_spin(1.0, "transversal", eps=0.0)
    fp = assemble_step_propagators(build(fit_weak, model, DT_REF), model, TrotterGrid(DT_REF, 1))
    ss = steady_state(fp)
    corr = steady_two_time_correlation(fp, ss, DT_REF * round(40 / DT_REF))
    om = np.linspace(0.005, 10.0, 2000)
    hcs = heat_current_density(corr, ohmic_bath(ALPHA, WC), om)
    jmax = np.abs(hcs.continuous).max()
    w = np.linspace(1e-4, 60, 200001)
    scale = 2 * np.max(ohmic_J(w) * w) * abs(corr.decay[0]) * corr.tau_max
    ok = jmax <= 1e-3 * scale
    assert record(6, ok, f"max |j_cont| {jmax:.2e} vs bound {1e-3 * scale:.2e} "
                         f"(tau_max {corr.tau_max:.1f})")


# -- 7 ---------------------------------------------------------------------------------

def test_c07_fourier_delta_consistency(record, fit_weak):
    model = single_spin(1.0, "transversal", eps=1.0, omega_d=2.0)
    fp = driven_fp(fit_weak, model, DT_REF)
    ss = steady_state(fp)
    corr = steady_two_time_correlation(fp, ss, fp.grid.period * round(40 / fp.grid.period))
    hcs = heat_current_density(corr, ohmic_bath(ALPHA, WC), np.linspace(0.01, 10, 100))
    dft_err = np.abs(corr.fourier - corr.fourier_direct).max()
    cmin = corr.fourier.min()
    n = np.arange(hcs.fourier.size)
    w_ref = np.pi * ohmic_J(n * 2.0) * n * 2.0 * hcs.fourier
    w_err = np.abs(hcs.delta_weights - w_ref).max()
    w = hcs.delta_weights
    even = max(w[2], w[4])
    odd_ok = w[1] >= 10 * even and w[3] >= 10 * even
    ok = dft_err <= 1e-8 and cmin >= -1e-10 and w_err <= 1e-15 * max(1, w_ref.max()) and odd_ok
    assert record(7, ok, f"DFT vs projection {dft_err:.1e}, min c_n {cmin:.1e}, "
                         f"w_n formula {w_err:.1e}, w1 {w[1]:.2e} w3 {w[3]:.2e} "
                         f"max(w2, w4) {even:.1e}")


# -- 8 ---------------------------------------------------------------------------------

def test_c08_redfield_magnus_ordering(record, fit_weak):
    start = time.perf_counter()
    bath = ohmic_bath(ALPHA, WC)
    dev = {}
    for omega_d, dt_target in ((1.5, 2 * np.pi / 256), (10.0, 0.02)):
        model = single_spin(1.0, "transversal", eps=1.0, omega_d=omega_d)
        fp = driven_fp(fit_weak, model, dt_target)
        exact = propagate_quench(fp, UP, int(np.ceil(30 / fp.grid.dt)))
        red = redfield_propagate(magnus_effective_model(model), bath, UP, 30.0, 0.005,
                                 fit=fit_weak)
        rep = compare_trajectories(expectations(exact, {"sz": SZ}), expectations(red, {"sz": SZ}))
        dev[omega_d] = rep["sz"]["max"]
    elapsed = time.perf_counter() - start
    ok = dev[10.0] < dev[1.5] and dev[10.0] <= 0.1 and elapsed <= 600
    assert record(8, ok, f"max |d<sz>| {dev[1.5]:.3f} at w_d = 1.5, {dev[10.0]:.3f} at "
                         f"w_d = 10, {elapsed:.0f} s")


# -- 9 ---------------------------------------------------------------------------------

def test_c09_two_spin_concurrence(record, fit_strong, undriven_two_spin):
    start = time.perf_counter()
    model, sg = undriven_two_spin
    fp = assemble_step_propagators(sg, model, TrotterGrid(sg.dt, 1))
    traj = propagate_quench(fp, ket_density(1, 0, 0), int(round(40 / sg.dt)))
    c = np.array([concurrence(r) for r in model.lift_state(traj.states)])
    peak, late = c.max(), c[-1]
    driven = two_spin(1.0, eps=1.15, omega_d=2.15)
    ss = steady_state(driven_fp(fit_strong, driven, np.pi / 48))
    c_drive = period_averaged_concurrence(driven, ss)
    elapsed = time.perf_counter() - start
    ok = 0.3 <= peak <= 0.5 and 0.05 <= late <= 0.15 and c_drive >= 0.4 and elapsed <= 1800
    assert record(9, ok, f"undriven peak {peak:.3f} at t = {traj.times[c.argmax()]:.2f}, "
                         f"value at t = 40 {late:.3f}, driven steady average {c_drive:.3f}, "
                         f"{elapsed:.0f} s")


# -- 10 --------------------------------------------------------------------------------

def test_c10_spectral_analysis(record, undriven_two_spin):
    model, sg = undriven_two_spin
    rho0 = ket_density(1, 0, 0)
    sa = spectral_analysis(sg, model, rho0)
    fp = assemble_step_propagators(sg, model, TrotterGrid(sg.dt, 1))
    n_max = int(round(20 / sg.dt))
    traj = propagate_quench(fp, rho0, n_max)
    steps = np.linspace(0, n_max, 20).round().astype(int)
    rec_err = max(np.abs(sa.reconstruct(k) - traj.states[k]).max() for k in steps)

    mc = np.where(np.isfinite(sa.max_concurrence), sa.max_concurrence, -np.inf)
    best = int(np.argmax(mc))
    g = sa.rates[best]
    # the complex-conjugate partner describes the same physical mode
    others = [m for m in range(mc.size)
              if m not in (best, sa.steady_index) and abs(sa.rates[m] - np.conj(g)) > 1e-8
              and np.isfinite(mc[m])]
    runner_up = max(mc[m] for m in others)
    ok = 1.7 <= abs(g.imag) <= 2.5 and mc[best] > runner_up and rec_err <= 1e-6
    assert record(10, ok, f"top mode gamma = {g.real:.3f} {g.imag:+.3f}i with concurrence "
                          f"{mc[best]:.3f} (next {runner_up:.3f}), reconstruction error "
                          f"{rec_err:.1e} at 20 times")


# -- 11 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_c11_total_current_ladder(record):
    bath = ohmic_bath(ALPHA, WC)
    fit = fit_exponentials(bath, 6, window=6.0)
    om = np.linspace(0.005, 40, 8000)
    gen = build_environment_generator(fit, PseudomodeSpec.uniform(fit.n_terms, 6, 3), SZ, 2)
    totals = {}
    for drive in ("transversal", "longitudinal"):
        for omega_d in (4.0, 6.0, 10.0):
            model = single_spin(1.0, drive, eps=1.0, omega_d=omega_d)
            grid = TrotterGrid.for_frequency(omega_d, DT_REF)
            fp = assemble_step_propagators(build_semigroup_if(gen, grid.dt), model, grid)
            corr = steady_two_time_correlation(fp, steady_state(fp),
                                               grid.period * round(40 / grid.period))
            totals[drive, omega_d] = heat_current_density(corr, bath, om).total
    ok = True
    for drive in ("transversal", "longitudinal"):
        seq = [totals[drive, w] for w in (4.0, 6.0, 10.0)]
        ok &= all(x > 0 for x in seq) and seq[0] > seq[1] > seq[2]
    ok &= totals["longitudinal", 10.0] > totals["transversal", 10.0]
    fmt = ", ".join(f"{d[0]}{w:g} {totals[d, w]:.2e}" for d in ("transversal", "longitudinal")
                    for w in (4.0, 6.0, 10.0))
    assert record(11, ok, f"I: {fmt}")


# -- 12 --------------------------------------------------------------------------------

def test_c12_concurrence_oracle(record):
    bell = ket_density(1, 0, 0, 1)
    product = ket_density(1, 0, 0, 0)
    ok = abs(concurrence(bell) - 1) < 1e-12 and abs(concurrence(product)) < 1e-12
    rng = np.random.default_rng(12)
    werner = 0.0
    for p in rng.uniform(0, 1, 200):
        rho = p * bell + (1 - p) * np.eye(4) / 4
        werner = max(werner, abs(concurrence(rho) - max(0.0, (3 * p - 1) / 2)))
    inv = 0.0
    for k in range(20):
        A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = A @ A.conj().T
        rho /= np.trace(rho).real
        U = np.kron(unitary_group.rvs(2, random_state=k), unitary_group.rvs(2, random_state=99 - k))
        inv = max(inv, abs(concurrence(U @ rho @ U.conj().T) - concurrence(rho)))
    ok = ok and werner <= 1e-10 and inv <= 1e-10
    assert record(12, ok, f"Bell {concurrence(bell):.12f}, product {concurrence(product):.1e}, "
                          f"Werner max err {werner:.1e}, local-unitary max err {inv:.1e}")
