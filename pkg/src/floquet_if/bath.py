"""Bosonic bath: spectral densities, correlation functions and exponential fits.

All quantities are in units of the bare tunnelling frequency Omega.  The
bath correlation function is

    C(t) = int_0^inf dw J(w) [coth(w / 2T) cos(wt) - i sin(wt)]

and the fit represents it on a finite window as ``sum_k a_k exp(-nu_k t)``.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, FitQualityError, InputError, QuadratureError

DEFAULT_WINDOW_FACTOR = 10.0
DEFAULT_SAMPLES = 400


@dataclass(frozen=True)
class SpectralDensityOhmic:
    """J(w) = (alpha / 2) w exp(-w / omega_c)."""

    alpha: float
    omega_c: float

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise InputError(f"alpha must be >= 0, got {self.alpha}")
        if not np.isfinite(self.omega_c) or self.omega_c <= 0:
            raise InputError(f"omega_c must be > 0, got {self.omega_c}")

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        return 0.5 * self.alpha * omega * np.exp(-omega / self.omega_c)

    @property
    def upper_frequency(self) -> float:
        # exp(-60) is far below double precision relative to the peak
        return 60.0 * self.omega_c

    def describe(self) -> dict:
        return {"kind": "ohmic", "alpha": float(self.alpha), "omega_c": float(self.omega_c)}


@dataclass(frozen=True, eq=False)
class TabulatedSpectralDensity:
    """Piecewise-linear J(w) on a grid, zero outside it."""

    omegas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if w.ndim != 1 or w.shape != v.shape or w.size < 2:
            raise InputError("tabulated J needs matching 1-d grids with >= 2 points")
        if np.any(np.diff(w) <= 0) or w[0] < 0:
            raise InputError("tabulated frequency grid must be increasing and >= 0")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InputError("tabulated J must be finite and >= 0")
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "values", v)

    def __call__(self, omega):
        return np.interp(omega, self.omegas, self.values, left=0.0, right=0.0)

    @property
    def upper_frequency(self) -> float:
        return float(self.omegas[-1])

    def describe(self) -> dict:
        return {"kind": "tabulated", "omegas": self.omegas.tolist(),
                "values": self.values.tolist()}


@dataclass(frozen=True)
class BathSpec:
    spectral_density: SpectralDensityOhmic | TabulatedSpectralDensity
    temperature: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.temperature) or self.temperature < 0:
            raise InputError(f"temperature must be >= 0, got {self.temperature}")

    def describe(self) -> dict:
        out = dict(self.spectral_density.describe())
        out["temperature"] = float(self.temperature)
        return out


def ohmic_bath(alpha: float, omega_c: float, temperature: float = 0.0) -> BathSpec:
    return BathSpec(SpectralDensityOhmic(alpha, omega_c), temperature)


def evaluate_spectral_density(sd, omega):
    """J(omega); raises DomainError for negative frequencies."""
    arr = np.asarray(omega, dtype=float)
    if np.any(arr < 0):
        raise DomainError("spectral density is defined for omega >= 0")
    out = sd(arr)
    return float(out) if np.ndim(out) == 0 else out


def bose_occupation(omega, temperature: float):
    """n_B(omega) = 1 / (exp(omega / T) - 1), exactly zero at T = 0."""
    arr = np.asarray(omega, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("Bose occupation needs omega > 0")
    if temperature < 0:
        raise DomainError("temperature must be >= 0")
    if temperature == 0:
        out = np.zeros_like(arr)
    else:
        out = 1.0 / np.expm1(arr / temperature)
    return float(out) if np.ndim(out) == 0 else out


def ohmic_correlation_t0(t, alpha: float, omega_c: float):
    """Closed-form zero-temperature correlation of the exponential-cutoff Ohmic bath."""
    t = np.asarray(t, dtype=float)
    return 0.5 * alpha * omega_c**2 / (1.0 + 1j * omega_c * t) ** 2


def _thermal_weight(spec: BathSpec):
    sd = spec.spectral_density
    T = spec.temperature
    if T == 0:
        return sd

    def f(w):
        if w == 0:
            # J(w) coth(w/2T) -> 2T J'(0) as w -> 0
            eps = 1e-8 * max(T, 1.0)
            return float(sd(eps)) * 2.0 * T / eps
        return float(sd(w)) / np.tanh(w / (2.0 * T))

    return f


def _quad(f, a, b, rtol, atol, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, epsrel=rtol, epsabs=atol, limit=1000, **kw)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"adaptive quadrature failed: {exc}") from exc
    if not err <= max(rtol * abs(val), atol) * 10:
        raise QuadratureError(
            f"quadrature error estimate {err:.3e} above tolerance", achieved=err)
    return val


def _segment_moments(c):
    """E0 = int_0^1 e^{c u} du and E1 = int_0^1 u e^{c u} du for purely imaginary c."""
    c = np.asarray(c, dtype=complex)
    e0 = np.empty_like(c)
    e1 = np.empty_like(c)
    small = np.abs(c) < 0.5
    cs = c[small]
    # Taylor series where the closed forms cancel catastrophically
    term = np.ones_like(cs)
    s0 = np.zeros_like(cs)
    s1 = np.zeros_like(cs)
    for k in range(16):
        s0 += term / (k + 1)
        s1 += term / (k + 2)
        term = term * cs / (k + 1)
    e0[small], e1[small] = s0, s1
    cl = c[~small]
    ex = np.exp(cl)
    e0[~small] = (ex - 1) / cl
    e1[~small] = ex / cl - (ex - 1) / cl**2
    return e0, e1


def _tabulated_correlation(spec: BathSpec, ts):
    """Exact Fourier integral of the piecewise-linear density (times coth at T > 0)."""
    sd = spec.spectral_density
    w, g_im = sd.omegas, sd.values
    T = spec.temperature
    if T == 0:
        g_re = g_im
    else:
        g_re = np.empty_like(g_im)
        pos = w > 0
        g_re[pos] = g_im[pos] / np.tanh(w[pos] / (2 * T))
        if not pos[0]:
            # J(w) coth(w / 2T) -> 2T J'(0) at the origin
            g_re[0] = 2 * T * (g_im[1] - g_im[0]) / (w[1] - w[0]) if g_im[0] == 0 else np.inf
    a, h = w[:-1], np.diff(w)
    out = np.empty(ts.shape, dtype=complex)
    for i, tt in enumerate(ts):
        tau = abs(tt)
        e0, e1 = _segment_moments(-1j * tau * h)
        ph = h * np.exp(-1j * tau * a)
        lin = lambda g: np.sum(ph * (g[:-1] * (e0 - e1) + g[1:] * e1))
        re = lin(g_re).real
        im = lin(g_im).imag
        out[i] = complex(re, im if tt >= 0 else -im)
    return out


def bath_correlation(spec: BathSpec, t, rtol: float = 1e-9):
    """C(t) by adaptive oscillatory quadrature.

    ``t`` may be a scalar or array.  Negative times follow from C(-t) = C(t)*.
    Tabulated densities are integrated exactly segment by segment instead,
    since adaptive quadrature stalls on their many kinks.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    sd = spec.spectral_density
    if isinstance(sd, TabulatedSpectralDensity):
        out = _tabulated_correlation(spec, ts)
        return complex(out[0]) if np.ndim(t) == 0 else out
    wmax = sd.upper_frequency
    fth = _thermal_weight(spec)
    scale = _quad(lambda w: float(fth(w)), 0.0, wmax, rtol, 0.0)
    atol = 1e-3 * rtol * max(abs(scale), 1e-300)
    out = np.empty(ts.shape, dtype=complex)
    for i, tt in enumerate(ts):
        tau = abs(tt)
        if tau == 0:
            re, im = scale, 0.0
        else:
            re = _quad(lambda w: float(fth(w)), 0.0, wmax, rtol, atol, weight="cos", wvar=tau)
            im = -_quad(lambda w: float(sd(w)), 0.0, wmax, rtol, atol, weight="sin", wvar=tau)
        out[i] = complex(re, im if tt >= 0 else -im)
    return complex(out[0]) if np.ndim(t) == 0 else out


def correlation_samples(spec: BathSpec, t):
    """C(t) on a grid: closed form for the zero-temperature Ohmic bath, quadrature otherwise."""
    sd = spec.spectral_density
    if isinstance(sd, SpectralDensityOhmic) and spec.temperature == 0:
        return ohmic_correlation_t0(t, sd.alpha, sd.omega_c)
    return bath_correlation(spec, np.asarray(t, dtype=float))


# -- exponential fitting -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExponentialBathFit:
    """C(t) ~ sum_k a_k exp(-nu_k t) on [0, window]."""

    amplitudes: np.ndarray
    rates: np.ndarray
    max_error: float
    window: float
    sample_step: float = 0.0
    discarded: tuple = field(default_factory=tuple)
    bath: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        nu = np.asarray(self.rates, dtype=complex).reshape(-1)
        if a.shape != nu.shape:
            raise InputError("amplitudes and rates must have equal length")
        if np.any(nu.real <= 0):
            raise InputError("all rates need Re nu > 0")
        a.flags.writeable = False
        nu.flags.writeable = False
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "rates", nu)

    @property
    def n_terms(self) -> int:
        return self.amplitudes.size

    @property
    def terms(self):
        return list(zip(self.amplitudes.tolist(), self.rates.tolist()))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        vals = (self.amplitudes * np.exp(-np.multiply.outer(t, self.rates))).sum(axis=-1)
        return vals

    def to_text(self) -> str:
        lines = ["# floquet-if exponential bath fit"]
        for key, val in sorted(self.bath.items()):
            if isinstance(val, (list, tuple)):
                continue
            if isinstance(val, (float, np.floating)):
                val = float(val)
            lines.append(f"# {key} = {val!r}")
        lines.append(f"# window = {float(self.window)!r}")
        lines.append(f"# sample_step = {float(self.sample_step)!r}")
        lines.append(f"# max_error = {float(self.max_error)!r}")
        lines.append(f"# terms = {self.n_terms}")
        lines.append("# re_a im_a re_nu im_nu")
        for a, nu in zip(self.amplitudes, self.rates):
            vals = (float(a.real), float(a.imag), float(nu.real), float(nu.imag))
            lines.append(" ".join(repr(v) for v in vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExponentialBathFit":
        header = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].split("=", 1)
                    header[k.strip()] = v.strip()
                continue
            rows.append([float(x) for x in line.split()])
        try:
            arr = np.array(rows, dtype=float).reshape(-1, 4)
            window = float(header.pop("window"))
            step = float(header.pop("sample_step", "0.0"))
            err = float(header.pop("max_error"))
        except (KeyError, ValueError) as exc:
            raise InputError(f"malformed fit record: {exc}") from exc
        header.pop("terms", None)
        bath = {}
        for k, v in header.items():
            try:
                bath[k] = float(v)
            except ValueError:
                bath[k] = v.strip("'\"")
        return cls(arr[:, 0] + 1j * arr[:, 1], arr[:, 2] + 1j * arr[:, 3], err, window,
                   step, (), bath)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), newline="\n")

    @classmethod
    def load(cls, path) -> "ExponentialBathFit":
        return cls.from_text(Path(path).read_text())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def matrix_pencil(samples, step: float, n_terms: int, rank_tol: float = 1e-13):
    """ESPRIT-style extraction of (a_k, nu_k) from uniform samples.

    Returns ``(amplitudes, rates, singular_values)``.  ``n_terms`` is lowered
    (with a warning) when the Hankel matrix has smaller numerical rank.
    """
    y = np.asarray(samples, dtype=complex)
    n = y.size
    if n_terms < 1:
        raise InputError("need at least one exponential term")
    if n < 2 * n_terms + 1:
        raise InputError(f"{n} samples cannot resolve {n_terms} terms")
    L = n // 2
    hankel = np.lib.stride_tricks.sliding_window_view(y, L + 1)
    _, s, vh = np.linalg.svd(hankel, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    if rank < n_terms:
        warnings.warn(f"only {rank} exponential terms are numerically resolvable; "
                      f"requested {n_terms}", RuntimeWarning, stacklevel=2)
        n_terms = max(rank, 1)
    w = vh[:n_terms].T
    z = np.linalg.eigvals(np.linalg.pinv(w[:-1]) @ w[1:])
    rates = -np.log(z) / step
    vander = z[None, :] ** np.arange(n)[:, None]
    amps = np.linalg.lstsq(vander, y, rcond=None)[0]
    return amps, rates, s


def _max_abs_error(model, target, window, n_grid=4001):
    """Max |model - target| on [0, window], polished around grid maxima."""
    t = np.linspace(0.0, window, n_grid)
    err = np.abs(model(t) - target(t))
    best = float(err.max())
    for i in np.argsort(err)[-5:]:
        lo = t[max(i - 1, 0)]
        hi = t[min(i + 1, n_grid - 1)]
        res = optimize.minimize_scalar(lambda x: -abs(model(x) - target(x)),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12 * max(window, 1.0)})
        best = max(best, -float(res.fun))
    return best


def _pack(a, nu):
    return np.concatenate([a.real, a.imag, nu.real, nu.imag])


def _unpack(p, K):
    return p[:K] + 1j * p[K:2 * K], p[2 * K:3 * K] + 1j * p[3 * K:]


def _refine(a, nu, t, y, iterations, minimax, target, window):
    """Weighted least squares; the weights follow a Lawson update for minimax."""
    K = a.size
    basis = lambda p, tt: _unpack(p, K)[0] * np.exp(-np.outer(tt, _unpack(p, K)[1]))
    p = _pack(a, nu)
    w = np.ones_like(t)

    def err_of(p):
        aa, nn = _unpack(p, K)
        if np.any(nn.real <= 0):
            return np.inf
        return _max_abs_error(lambda x: (aa * np.exp(-np.multiply.outer(x, nn))).sum(-1),
                              target, window, n_grid=1001)

    best_p, best_e = p, err_of(p)
    n_iter = iterations if minimax else 1
    for _ in range(n_iter):
        sw = np.sqrt(w)

        def resid(q):
            r = (basis(q, t).sum(1) - y) * sw
            return np.concatenate([r.real, r.imag])

        p = optimize.least_squares(resid, p, xtol=1e-13, ftol=1e-13, max_nfev=2000).x
        e = err_of(p)
        if e < best_e:
            best_p, best_e = p, e
        r = np.abs(basis(p, t).sum(1) - y)
        if r.mean() == 0:
            break
        w = w * r / r.mean()
        w /= w.mean()
    return _unpack(best_p, K)


def fit_exponentials(spec: BathSpec, n_terms: int, window: float | None = None,
                     sample_step: float | None = None, refine: str | None = "minimax",
                     iterations: int = 40, max_error: float | None = None,
                     warm_start: bool = True) -> ExponentialBathFit:
    """Fit C(t) on [0, window] with ``n_terms`` decaying exponentials.

    Parameters
    ----------
    window : defaults to 10 / omega_c for Ohmic baths.
    sample_step : defaults to window / 399; must not exceed window / (4 n_terms).
    refine : ``"minimax"`` (iteratively reweighted least squares targeting the
        maximum error), ``"lsq"`` (plain nonlinear least squares) or ``None``.
    max_error : absolute error bound; exceeded -> FitQualityError.
    warm_start : also try the (n_terms - 1) fit padded with a weak extra term
        and keep whichever is better, so the error never grows with n_terms.
    """
    if int(n_terms) != n_terms or n_terms < 1:
        raise InputError(f"number of fit terms must be a positive integer, got {n_terms}")
    n_terms = int(n_terms)
    sd = spec.spectral_density
    if window is None:
        if not isinstance(sd, SpectralDensityOhmic):
            raise InputError("window must be given for tabulated spectral densities")
        window = DEFAULT_WINDOW_FACTOR / sd.omega_c
    if not window > 0:
        raise InputError("fit window must be positive")
    if sample_step is None:
        sample_step = window / (DEFAULT_SAMPLES - 1)
    if not 0 < sample_step <= window / (4 * n_terms):
        raise InputError(f"sample_step must lie in (0, window/(4K)] = (0, {window / (4 * n_terms)}]")
    n = int(round(window / sample_step)) + 1
    t = np.arange(n) * sample_step
    y = correlation_samples(spec, t)
    if np.allclose(y, 0):
        return ExponentialBathFit(np.zeros(0), np.zeros(0), 0.0, window, sample_step,
                                  (), spec.describe())
    target = lambda x: correlation_samples(spec, x)

    amps, rates, _ = matrix_pencil(y, sample_step, n_terms)
    discarded = [(complex(a), complex(r)) for a, r in zip(amps, rates) if r.real <= 0]
    keep = rates.real > 0
    amps, rates = amps[keep], rates[keep]
    if discarded:
        warnings.warn(f"discarded {len(discarded)} non-decaying terms", RuntimeWarning,
                      stacklevel=2)
    if refine is not None and amps.size:
        amps, rates = _refine(amps, rates, t, y, iterations, refine == "minimax", target, window)
    model = lambda x, a=amps, r=rates: (a * np.exp(-np.multiply.outer(x, r))).sum(-1)
    err = _max_abs_error(model, target, window)

    if warm_start and n_terms > 1 and refine is not None:
        prev = fit_exponentials(spec, n_terms - 1, window, sample_step, refine,
                                iterations, None, warm_start)
        if prev.max_error < err or amps.size < n_terms:
            # pad with a weak, fast term and refine from there
            fast = np.max(prev.rates.real) * 2 if prev.n_terms else 1.0 / window
            a2 = np.append(prev.amplitudes, 1e-6 * abs(y[0]))
            r2 = np.append(prev.rates, fast)
            a2, r2 = _refine(a2, r2, t, y, iterations, refine == "minimax", target, window)
            m2 = lambda x, a=a2, r=r2: (a * np.exp(-np.multiply.outer(x, r))).sum(-1)
            e2 = _max_abs_error(m2, target, window) if np.all(r2.real > 0) else np.inf
            cands = [(err, amps, rates), (e2, a2, r2), (prev.max_error, prev.amplitudes, prev.rates)]
            err, amps, rates = min(cands, key=lambda c: c[0])

    order = np.argsort(-np.abs(amps), kind="stable")
    fit = ExponentialBathFit(amps[order], rates[order], float(err), float(window),
                             float(sample_step), tuple(discarded), spec.describe())
    if max_error is not None and fit.max_error > max_error:
        raise FitQualityError(f"fit error {fit.max_error:.3e} exceeds bound {max_error:.3e}",
                              error=fit.max_error)
    return fit
