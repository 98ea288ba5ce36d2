import numpy as np
import pytest
from scipy.stats import unitary_group

from floquet_if.bath import fit_exponentials, ohmic_bath
from floquet_if.embedding import PseudomodeSpec, build_environment_generator, build_semigroup_if
from floquet_if.engine import (Insertion, TrotterGrid, assemble_step_propagators,
                               left_multiplication, multitime_correlation, propagate_quench,
                               steady_state)
from floquet_if.errors import InputError
from floquet_if.models import SZ, ket_density, single_spin, two_spin
from floquet_if.observables import (SteadyCorrelation, _fourier_from_signal, concurrence,
                                    concurrence_map, heat_current_density, spectral_analysis,
                                    steady_two_time_correlation, total_heat_current,
                                    transient_correlation, transient_heat_current,
                                    truncate_fourier, write_heat_csv)

BELL = ket_density(1, 0, 0, 1)


def fp_for(model, dt_target, alpha=0.1, wc=2.5, K=2, cutoff=4, depth=None):
    grid = TrotterGrid.for_model(model, dt_target)
    fit = fit_exponentials(ohmic_bath(alpha, wc), K)
    gen = build_environment_generator(fit, PseudomodeSpec.uniform(fit.n_terms, cutoff, depth),
                                      model.S, model.d)
    return assemble_step_propagators(build_semigroup_if(gen, grid.dt), model, grid)


@pytest.fixture(scope="module")
def driven():
    fp = fp_for(single_spin(1.0, "transversal", eps=1.0, omega_d=4.0), 0.1)
    return fp, steady_state(fp)


# -- concurrence ----------------------------------------------------------------------

def test_concurrence_bell_and_product():
    assert concurrence(BELL) == pytest.approx(1.0, abs=1e-12)
    assert concurrence(ket_density(1, 0, 0, 0)) == pytest.approx(0.0, abs=1e-12)
    assert concurrence(np.eye(4) / 4) == 0.0


def test_pure_state_concurrence_formula():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        v /= np.linalg.norm(v)
        ref = 2 * abs(v[0] * v[3] - v[1] * v[2])
        assert concurrence(np.outer(v, v.conj())) == pytest.approx(ref, abs=1e-10)


def test_concurrence_local_unitary_invariance():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = A @ A.conj().T
    rho /= np.trace(rho).real
    c0 = concurrence(rho)
    for seed in range(5):
        U = np.kron(unitary_group.rvs(2, random_state=seed),
                    unitary_group.rvs(2, random_state=100 + seed))
        assert abs(concurrence(U @ rho @ U.conj().T) - c0) < 1e-10


def test_concurrence_input_errors():
    with pytest.raises(InputError):
        concurrence(np.eye(2) / 2)
    bad = BELL.copy()
    bad[0, 1] = 0.3
    with pytest.raises(InputError):
        concurrence(bad)
    with pytest.raises(InputError):
        concurrence(np.diag([1.2, -0.2, 0, 0]))


# -- steady correlation and Fourier components -----------------------------------------

def explicit_correlation(fp, ss, n_tau):
    """Average over starts of Tr[S Q...Q (S w_n)], with explicit step matrices."""
    M = fp.M
    LS = np.kron(left_multiplication(fp.meta["S"]), np.eye(fp.sg.chi))
    row = fp.sg.joint_trace() @ LS
    out = np.zeros(n_tau + 1, complex)
    for n in range(M):
        x = LS @ ss.joint[n]
        out[0] += row @ x
        for j in range(n_tau):
            x = fp.steps[(n + j) % M] @ x
            out[j + 1] += row @ x
    return out / M


def test_steady_correlation_matches_explicit_products(driven):
    fp, ss = driven
    tau = 2 * fp.grid.period
    corr = steady_two_time_correlation(fp, ss, tau, decay_threshold=1.0)
    ref = explicit_correlation(fp, ss, corr.taus.size - 1)
    assert np.abs(corr.full - ref).max() < 1e-12
    assert corr.full[0] == pytest.approx(1.0, abs=1e-10)  # S^2 = 1


def test_fourier_components_consistent(driven):
    fp, ss = driven
    corr = steady_two_time_correlation(fp, ss, 3 * fp.grid.period, decay_threshold=1.0)
    assert np.abs(corr.fourier - corr.fourier_direct).max() < 1e-8
    assert corr.fourier.min() >= -1e-10
    # the Fourier series reproduces one period of the asymptotic part
    M = fp.M
    n = np.arange(corr.fourier.size)
    recon = np.array([np.sum(corr.fourier * np.cos(2 * np.pi * n * j / M)) for j in range(M)])
    assert np.abs(recon - corr.asym[:M].real).max() < 1e-10


def test_fourier_of_known_signal():
    M = 32
    j = np.arange(M)
    a, b, c = 0.3, -0.5, 0.2
    s = a + b * np.cos(2 * np.pi * j / M + 0.4) + c * np.sin(6 * np.pi * j / M)
    comp = _fourier_from_signal(s)
    ref = np.zeros(M // 2 + 1)
    ref[0], ref[1], ref[3] = a**2, b**2 / 2, c**2 / 2
    assert np.abs(comp - ref).max() < 1e-14


def test_truncate_fourier():
    c = np.array([1.0, 0.5, 1e-14, 0.1, 0.0, 0.0])
    assert truncate_fourier(c).tolist() == [1.0, 0.5, 1e-14, 0.1]
    assert truncate_fourier(c, n_max=1).tolist() == [1.0, 0.5]


def test_tau_max_must_be_grid_multiple(driven):
    fp, ss = driven
    with pytest.raises(InputError):
        steady_two_time_correlation(fp, ss, 1.234567 * fp.grid.dt)
    with pytest.raises(InputError):
        steady_two_time_correlation(fp, ss, -1.0)


# -- heat current ------------------------------------------------------------------------

def synthetic_correlation(gamma, b, dt, tau_max, fourier, omega_d):
    taus = dt * np.arange(int(round(tau_max / dt)) + 1)
    decay = np.exp(-(gamma - 1j * b) * taus)
    z = np.zeros_like(taus)
    return SteadyCorrelation(taus, decay, decay, z, z, np.asarray(fourier),
                             np.asarray(fourier), omega_d, dt)


def test_heat_density_of_exponential_correlation():
    bath = ohmic_bath(0.1, 2.5)
    g, b = 1.0, 0.7
    corr = synthetic_correlation(g, b, 0.005, 40.0, [0.2, 0.1, 0.05], 3.0)
    om = np.linspace(0.1, 6, 40)
    hcs = heat_current_density(corr, bath, om)
    J = bath.spectral_density(om)
    ref = 2 * J * om * g / (g**2 + (om - b) ** 2)
    assert np.abs(hcs.continuous - ref).max() < 1e-5 * np.abs(ref).max()
    # delta weights pi J(n w_d) n w_d c_n with the n = 0 term vanishing
    harm = 3.0 * np.arange(3)
    ref_w = np.pi * bath.spectral_density(harm) * harm * np.array([0.2, 0.1, 0.05])
    assert np.allclose(hcs.delta_weights, ref_w, rtol=1e-14, atol=0)
    assert hcs.delta_weights[0] == 0
    assert total_heat_current(hcs) == pytest.approx(hcs.total, rel=1e-14)


def test_undriven_heat_has_no_harmonics():
    corr = synthetic_correlation(1.0, 0.0, 0.01, 20.0, [0.5], None)
    hcs = heat_current_density(corr, ohmic_bath(0.1, 2.5), np.linspace(0.1, 5, 10))
    assert hcs.delta_weights.tolist() == [0.0]
    with pytest.raises(InputError):
        heat_current_density(corr, ohmic_bath(0.1, 2.5), [0.0, 1.0])


def test_heat_csv(tmp_path):
    corr = synthetic_correlation(1.0, 0.0, 0.01, 20.0, [0.2, 0.1], 2.0)
    hcs = heat_current_density(corr, ohmic_bath(0.1, 2.5), np.linspace(0.1, 5, 10))
    write_heat_csv(tmp_path / "d.csv", tmp_path / "w.csv", hcs)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "omega,j_cont"
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "n,n_omega_d,w_n" and lines[2].startswith("1,2.0,")


def test_transient_correlation_matches_insertions():
    fp = fp_for(single_spin(1.0, "longitudinal", eps=0.8, omega_d=3.0), 0.1)
    rho0 = ket_density(1, 0)
    n = 12
    corr = transient_correlation(fp, rho0, n, SZ)
    LS = left_multiplication(SZ)
    for m in (0, 5, 12):
        ref = multitime_correlation(fp, rho0, [Insertion(m, LS), Insertion(n, LS)])
        assert abs(corr[m] - ref) < 1e-12


def test_transient_heat_current_edges():
    fp = fp_for(single_spin(), 0.1, K=1, cutoff=3)
    om = np.linspace(0.5, 4, 5)
    bath = ohmic_bath(0.1, 2.5)
    assert np.array_equal(transient_heat_current(fp, ket_density(1, 0), 0.0, om, bath, SZ),
                          np.zeros(5))
    with pytest.raises(InputError):
        transient_heat_current(fp, ket_density(1, 0), 0.123, om, bath, SZ)
    j = transient_heat_current(fp, ket_density(1, 0), 1.0, om, bath, SZ)
    assert j.shape == (5,) and np.all(np.isfinite(j))


# -- concurrence map ---------------------------------------------------------------------

def test_concurrence_map_places_results_and_flags_failures():
    fit = fit_exponentials(ohmic_bath(0.2, 5.0), 1)
    pm = PseudomodeSpec.uniform(1, 3)
    S = two_spin().S

    def build_if(dt):
        return build_semigroup_if(build_environment_generator(fit, pm, S, 3), dt)

    def factory(wd, ed):
        if ed > 1.0:
            raise RuntimeError("boom")
        return two_spin(1.0, ed, wd)

    cmap = concurrence_map([2.0, 3.0], [0.5, 2.0], build_if, factory, 0.15)
    assert cmap.values.shape == (2, 2)
    assert cmap.flags.tolist() == [[0, 1], [0, 1]]
    assert np.all(np.isnan(cmap.values[:, 1]))
    assert "2.0,2.0" in cmap.diagnostics["failures"]
    assert np.all((cmap.values[:, 0] >= 0) & (cmap.values[:, 0] <= 1))
    # the same point evaluated on its own
    alone = concurrence_map([3.0], [0.5], build_if, factory, 0.15)
    assert alone.values[0, 0] == cmap.values[1, 0]
    with pytest.raises(InputError):
        concurrence_map([], [0.5], build_if, factory, 0.15)


# -- spectral analysis --------------------------------------------------------------------

def test_spectral_reconstruction_matches_propagation():
    model = two_spin(1.0)
    fit = fit_exponentials(ohmic_bath(0.2, 5.0), 2)
    sg = build_semigroup_if(build_environment_generator(fit, PseudomodeSpec.uniform(2, 3),
                                                        model.S, 3), 0.1)
    rho0 = ket_density(1, 0, 0)
    sa = spectral_analysis(sg, model, rho0, n_scan=16)
    fp = assemble_step_propagators(sg, model, TrotterGrid(0.1, 1))
    traj = propagate_quench(fp, rho0, 30)
    for k in (0, 1, 7, 30):
        assert np.abs(sa.reconstruct(k) - traj.states[k]).max() < 1e-8
    assert abs(sa.rates[sa.steady_index]) < 1e-6
    c = sa.max_concurrence[np.isfinite(sa.max_concurrence)]
    assert c.size and np.all((c >= 0) & (c <= 1))


def test_spectral_analysis_rejects_driven_model():
    model = two_spin(1.0, eps=0.5, omega_d=2.0)
    fit = fit_exponentials(ohmic_bath(0.2, 5.0), 1)
    sg = build_semigroup_if(build_environment_generator(fit, PseudomodeSpec.uniform(1, 3),
                                                        model.S, 3), 0.1)
    with pytest.raises(InputError):
        spectral_analysis(sg, model, ket_density(1, 0, 0))
