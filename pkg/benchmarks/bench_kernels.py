"""Time the numba kernels against their pure-numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5]

Sizes mirror production use: the steady-correlation sweep (one small system
channel per start phase), the heat-current frequency transform and the
Redfield propagation of a qubit.
"""

import argparse
import time

import numpy as np

from floquet_if import kernels


def best_of(f, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        f()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    M, n, chi = 45, 9, 165
    V = rng.normal(size=(M, n, n)) + 1j * rng.normal(size=(M, n, n))
    X = rng.normal(size=(M, n, chi)) + 1j * rng.normal(size=(M, n, chi))
    yield "apply_block_channels (45 x 9x9 @ 9x165)", kernels.apply_block_channels_numpy, \
        kernels.apply_block_channels_numba, (V, X)

    om = np.linspace(0.01, 40, 4000)
    tau = np.linspace(0, 40, 800)
    w = np.full(tau.size, tau[1])
    c = np.exp(-tau) * np.cos(2 * tau)
    yield "heat_transform (4000 freqs x 800 lags)", kernels.heat_transform_numpy, \
        kernels.heat_transform_numba, (om, tau, w, c, 0.3 * c, np.zeros(om.size))

    E = np.array([-0.5, 0.5])
    S = np.array([[0, 1], [1, 0]], dtype=complex)
    amps = np.array([0.3 + 0.1j, 0.2 - 0.05j, 0.1 + 0j, 0.05j])
    rates = np.array([2.0 + 1j, 3.0 - 0.5j, 5.0, 1.0 + 3j])
    rho = np.array([[1, 0], [0, 0]], dtype=complex)
    yield "tcl2_propagate (qubit, 6000 RK4 steps)", kernels.tcl2_propagate_numpy, \
        kernels.tcl2_propagate_numba, (E, S, amps, rates, rho, 0.005, 6000)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':45s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, f_np, f_nb, a in cases(rng):
        r_np, r_nb = f_np(*a), f_nb(*a)  # first numba call compiles
        diff = float(np.abs(np.asarray(r_np) - np.asarray(r_nb)).max())
        t_np = best_of(lambda: f_np(*a), args.repeat)
        t_nb = best_of(lambda: f_nb(*a), args.repeat)
        print(f"{name:45s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:8.1f} {diff:10.1e}")


if __name__ == "__main__":
    main()
