"""Markovian embedding of the bath and the repeating influence-functional tensor.

Each fit term ``a_k exp(-nu_k t)`` is carried by a pair of damped auxiliary
ladders: a "left" ladder decaying at ``nu_k`` that is raised by ``S`` acting
from the left, and a "right" ladder decaying at ``conj(nu_k)`` raised by ``S``
acting from the right.  Both lower back through the commutator with ``S``
weighted by ``a_k`` (left) or ``conj(a_k)`` (right).  The raising coupling is
1 and the lowering coupling carries the amplitude, so complex amplitudes are
represented exactly.  The auxiliary space is therefore a pair of occupation
vectors ``(n, m)`` per bond index, analogous to the ket and bra Fock labels of
a pseudomode density matrix.

Joint vectors use a system-major layout: index ``mu * chi + r`` with ``mu`` the
row-major vectorised system index and ``r`` the bond index.

A bond-space similarity transform (applied to every generator) turns the
trace functional into the vectorised identity ``v_l = sum_n e_(n, n)`` while
keeping ``v_r = e_(0, 0)``.  It does not change any reduced dynamics.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import shutil
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigs

from ._version import __version__
from .bath import ExponentialBathFit
from .core import ComplexTensor, matrix_exponential, svd, trace_vector
from .errors import InputError, ResourceError

DEFAULT_CUTOFF = 6
DEFAULT_MEMORY_BUDGET = 2 * 1024**3


@dataclass(frozen=True)
class PseudomodeSpec:
    """Truncation of the auxiliary space.

    Parameters
    ----------
    cutoffs : per fit term Fock cutoff N_k (occupations 0..N_k-1), applied to
        both the left and the right ladder of that term.
    max_excitation : optional bound on the total occupation summed over all
        ladders.  Without it the bond dimension is (prod N_k)^2.
    memory_budget : bytes allowed for one dense joint matrix.
    """

    cutoffs: tuple
    max_excitation: int | None = None
    memory_budget: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self):
        cut = tuple(int(c) for c in self.cutoffs)
        if any(c < 2 for c in cut):
            raise InputError(f"every Fock cutoff must be >= 2, got {cut}")
        if self.max_excitation is not None and self.max_excitation < 1:
            raise InputError("max_excitation must be >= 1")
        object.__setattr__(self, "cutoffs", cut)

    @classmethod
    def uniform(cls, n_terms, cutoff=DEFAULT_CUTOFF, max_excitation=None,
                memory_budget=DEFAULT_MEMORY_BUDGET):
        return cls((cutoff,) * n_terms, max_excitation, memory_budget)

    def labels(self):
        """Bond labels (n_1..n_K, m_1..m_K) in lexicographic order."""
        ranges = [range(c) for c in self.cutoffs] * 2
        lim = self.max_excitation
        if lim is None:
            return list(itertools.product(*ranges))
        return [lab for lab in _bounded_product(ranges, lim)]

    @property
    def bond_dimension(self) -> int:
        if self.max_excitation is None:
            return int(np.prod(self.cutoffs)) ** 2
        return len(self.labels())

    def raised(self, step=1) -> "PseudomodeSpec":
        """Every cutoff (and the excitation bound, if set) increased by ``step``."""
        lim = None if self.max_excitation is None else self.max_excitation + step
        return PseudomodeSpec(tuple(c + step for c in self.cutoffs), lim, self.memory_budget)

    def describe(self) -> dict:
        return {"cutoffs": list(self.cutoffs), "max_excitation": self.max_excitation,
                "coupling_split": "asymmetric (raise 1, lower a_k)"}


def _bounded_product(ranges, lim):
    def rec(i, left):
        if i == len(ranges):
            yield ()
            return
        for v in ranges[i]:
            if v > left:
                break
            for rest in rec(i + 1, left - v):
                yield (v,) + rest
    return rec(0, lim)


@dataclass(frozen=True, eq=False)
class EnvironmentGenerator:
    """Environment-only generator on the joint space, plus its boundary vectors."""

    matrix: np.ndarray
    d: int
    labels: tuple
    v_l: np.ndarray
    v_r: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def chi(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.d * self.d * self.chi


def _check_hermitian(S, d):
    S = np.asarray(S, dtype=complex)
    if S.shape != (d, d):
        raise InputError(f"coupling operator must be {d}x{d}, got {S.shape}")
    if np.abs(S - S.conj().T).max() > 1e-12:
        raise InputError("coupling operator must be Hermitian")
    return S


def _gauge(op, diag_idx, zero):
    """P op P^-1 for P = I - sum_n e_0 e_(n,n)^T on the bond space."""
    op = op.toarray()
    op[:, diag_idx] += op[:, [zero]]
    op[zero, :] -= op[diag_idx, :].sum(axis=0)
    return sp.csr_matrix(op)


def build_environment_generator(fit: ExponentialBathFit, pm: PseudomodeSpec, S, d: int,
                                gauge: bool = True) -> EnvironmentGenerator:
    """Generator of the embedded environment (system Hamiltonian not included)."""
    S = _check_hermitian(S, d)
    K = fit.n_terms
    if len(pm.cutoffs) != K:
        raise InputError(f"{len(pm.cutoffs)} cutoffs given for {K} fit terms")
    order = np.argsort(-np.abs(fit.amplitudes), kind="stable")
    a = fit.amplitudes[order]
    nu = fit.rates[order]
    cut = np.array(pm.cutoffs)[order]
    pm = PseudomodeSpec(tuple(cut), pm.max_excitation, pm.memory_budget)

    labels = pm.labels() if K else [()]
    chi = len(labels)
    dim = d * d * chi
    need = 16 * dim * dim
    if need > pm.memory_budget:
        raise ResourceError(f"joint dimension {dim} needs {need / 2**20:.0f} MiB, "
                            f"budget {pm.memory_budget / 2**20:.0f} MiB")
    index = {lab: i for i, lab in enumerate(labels)}
    I = np.eye(d)
    S_L = np.kron(S, I)
    S_R = np.kron(I, S.T)
    comm = S_L - S_R

    diag = np.zeros(chi, dtype=complex)
    rates = np.concatenate([nu, nu.conj()])
    lows = np.concatenate([a, a.conj()])
    for lab, i in index.items():
        diag[i] = -np.dot(np.array(lab, dtype=float), rates) if K else 0.0
    terms = [(np.eye(d * d), sp.diags(diag).tocsr())]
    for ladder in range(2 * K):
        up_r, up_c, up_v = [], [], []
        for lab, i in index.items():
            raised = list(lab)
            raised[ladder] += 1
            j = index.get(tuple(raised))
            if j is None:
                continue
            up_r.append(j)
            up_c.append(i)
            up_v.append(np.sqrt(lab[ladder] + 1.0))
        raise_op = sp.csr_matrix((up_v, (up_r, up_c)), shape=(chi, chi), dtype=complex)
        lower_op = raise_op.T.tocsr()
        sys_raise = -1j * S_L if ladder < K else 1j * S_R
        terms.append((sys_raise, raise_op))
        terms.append((-1j * lows[ladder] * comm, lower_op))

    zero = index[tuple([0] * (2 * K))] if K else 0
    v_r = np.zeros(chi, dtype=complex)
    v_r[zero] = 1.0
    v_l = v_r.copy()
    diag_idx = [index[lab] for lab in labels if K and lab[:K] == lab[K:] and any(lab)]
    if gauge and diag_idx:
        terms = [(A, _gauge(B, diag_idx, zero)) for A, B in terms]
        v_l = np.zeros(chi, dtype=complex)
        v_l[zero] = 1.0
        v_l[diag_idx] = 1.0

    L = np.zeros((dim, dim), dtype=complex)
    for A, B in terms:
        L += sp.kron(sp.csr_matrix(A), B, format="csr").toarray()

    meta = {"fit_hash": fit.content_hash(), "n_terms": K, "chi": chi,
            "pseudomodes": pm.describe(), "gauge": "trace-identity" if gauge else "none",
            "term_order": "descending |a_k|"}
    return EnvironmentGenerator(L, d, tuple(labels), v_l, v_r, meta)


@dataclass(frozen=True, eq=False)
class SemiGroupIF:
    """Repeating environment tensor ``q = exp(L_env dt)`` and boundary vectors.

    ``q`` is stored as a (d^2 chi) x (d^2 chi) matrix; :attr:`q_tensor` exposes
    the four-index view ``(mu, r, mu', r')``.
    """

    q: np.ndarray
    v_l: np.ndarray
    v_r: np.ndarray
    dt: float
    d: int
    chi: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.q, self.v_l, self.v_r):
            arr.flags.writeable = False

    @property
    def q_tensor(self) -> np.ndarray:
        n = self.d * self.d
        return self.q.reshape(n, self.chi, n, self.chi)

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def joint_trace(self) -> np.ndarray:
        """(system trace (x) v_l) as a row vector on the joint space."""
        return np.kron(trace_vector(self.d), self.v_l)

    def initial_joint(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        return np.kron(rho.reshape(-1), self.v_r)

    def reduce(self, x) -> np.ndarray:
        """Reduced system density matrix of a joint vector."""
        return (np.asarray(x).reshape(self.d * self.d, self.chi) @ self.v_l).reshape(self.d, self.d)


def build_semigroup_if(gen: EnvironmentGenerator, dt: float,
                       tolerance: float = 1e-12) -> SemiGroupIF:
    if not dt > 0:
        raise InputError("time step must be positive")
    q = matrix_exponential(gen.matrix * dt, tolerance)
    meta = dict(gen.meta)
    meta.update({"dt": float(dt), "d": gen.d})
    return SemiGroupIF(q, gen.v_l.copy(), gen.v_r.copy(), float(dt), gen.d, gen.chi, meta)


def identity_if(d: int, dt: float) -> SemiGroupIF:
    """Uncoupled environment: chi = 1, q = identity."""
    one = np.ones(1, dtype=complex)
    return SemiGroupIF(np.eye(d * d, dtype=complex), one, one.copy(), float(dt), d, 1,
                       {"chi": 1, "n_terms": 0})


def trace_duality_residual(sg: SemiGroupIF) -> float:
    row = sg.joint_trace()
    return float(np.abs(row @ sg.q - row).max())


def joint_hermiticity_deviation(x, d: int, labels) -> float:
    """max |X_(n,m) - X_(m,n)^dagger| over bond pairs of a joint vector.

    The conjugate partner of label (n, m) is (m, n).  Only meaningful before
    the bond gauge or for gauge-invariant combinations; the gauge maps
    diagonal labels onto diagonal labels so the test remains valid.
    """
    K = len(labels[0]) // 2
    index = {lab: i for i, lab in enumerate(labels)}
    X = np.asarray(x).reshape(d, d, len(labels))
    dev = 0.0
    for lab, i in index.items():
        j = index[lab[K:] + lab[:K]]
        dev = max(dev, float(np.abs(X[:, :, i] - X[:, :, j].conj().T).max()))
    return dev


def if_diagnostics(sg: SemiGroupIF, n_singular: int = 20) -> dict:
    """Bond dimension, spectral radius, trace-duality residual and singular values of q."""
    n = sg.d * sg.d
    if sg.dim <= 600:
        radius = float(np.abs(np.linalg.eigvals(sg.q)).max())
    else:
        vals = eigs(sg.q, k=1, which="LM", return_eigenvectors=False, tol=1e-10,
                    v0=np.ones(sg.dim, dtype=complex))
        radius = float(np.abs(vals).max())
    mat = sg.q_tensor.transpose(0, 2, 1, 3).reshape(n * n, sg.chi * sg.chi)
    sv = svd(mat).s
    return {
        "chi": sg.chi,
        "d": sg.d,
        "dt": sg.dt,
        "spectral_radius": radius,
        "trace_duality_residual": trace_duality_residual(sg),
        "boundary_overlap": complex(sg.v_l @ sg.v_r),
        "singular_values": sv[:n_singular].tolist(),
        "coupling_split": "asymmetric: raising coupling 1, lowering coupling a_k; "
                          "the extended generator need not be completely positive",
    }


# -- convergence in the truncation ---------------------------------------------

def cutoff_convergence(fit, pm, S, d, dt, observable, threshold=1e-6, max_rounds=4):
    """Raise the truncation until ``observable(if)`` changes by less than ``threshold``.

    ``observable`` maps a SemiGroupIF to an array of reduced quantities (e.g.
    single-period expectation values).  Returns ``(pm, report)``; stops early
    with ``converged=False`` when the memory budget is reached.
    """
    history = []
    cur = pm
    prev = np.asarray(observable(build_semigroup_if(
        build_environment_generator(fit, cur, S, d), dt)))
    for _ in range(max_rounds):
        nxt = cur.raised()
        try:
            gen = build_environment_generator(fit, nxt, S, d)
        except ResourceError:
            return cur, {"converged": False, "reason": "memory budget", "history": history}
        val = np.asarray(observable(build_semigroup_if(gen, dt)))
        change = float(np.abs(val - prev).max())
        history.append({"pseudomodes": nxt.describe(), "change": change})
        if change < threshold:
            return cur, {"converged": True, "change": change, "history": history}
        cur, prev = nxt, val
    warnings.warn("truncation not converged within the allowed rounds", RuntimeWarning,
                  stacklevel=2)
    return cur, {"converged": False, "reason": "rounds", "history": history}


# -- cache ------------------------------------------------------------------------

def cache_key(bath: dict, fit: ExponentialBathFit, pm: PseudomodeSpec, dt: float, S) -> dict:
    """Content that determines q; the coupling operator enters the generator too."""
    S = np.asarray(S, dtype=complex)
    return {
        "bath": bath,
        "fit_hash": fit.content_hash(),
        "pseudomodes": pm.describe(),
        "dt": float(dt).hex(),
        "coupling": [[float(v.real).hex(), float(v.imag).hex()] for v in S.ravel()],
        "version": __version__,
    }


def hash_key(key: dict) -> str:
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()


class IFCache:
    """Directory of cached SemiGroupIF tensors, one subdirectory per content hash."""

    def __init__(self, root):
        self.root = Path(root)

    def _dir(self, digest):
        return self.root / digest[:2] / digest

    def lookup(self, key: dict) -> SemiGroupIF | None:
        digest = hash_key(key)
        path = self._dir(digest)
        if not path.exists():
            return None
        try:
            meta = json.loads((path / "meta.json").read_text())
            if meta.get("key") != key:
                warnings.warn(f"cache entry {digest[:12]} has mismatched metadata; rebuilding",
                              RuntimeWarning, stacklevel=2)
                return None
            q = ComplexTensor.load(path / "q.fift").data
            v_l = ComplexTensor.load(path / "v_l.fift").data
            v_r = ComplexTensor.load(path / "v_r.fift").data
            sg = SemiGroupIF(q.copy(), v_l.copy(), v_r.copy(), float(meta["dt"]),
                             int(meta["d"]), int(meta["chi"]), meta.get("if_meta", {}))
            if sg.q.shape != (sg.d * sg.d * sg.chi,) * 2:
                raise InputError("cached tensor shape inconsistent with metadata")
            return sg
        except (OSError, ValueError, KeyError, InputError) as exc:
            warnings.warn(f"corrupt cache entry {digest[:12]} ({exc}); rebuilding",
                          RuntimeWarning, stacklevel=2)
            shutil.rmtree(path, ignore_errors=True)
            return None

    def store(self, key: dict, sg: SemiGroupIF) -> Path:
        digest = hash_key(key)
        path = self._dir(digest)
        # unique scratch name so concurrent writers of the same entry never collide
        tmp = path.with_name(f"{path.name}.{os.getpid()}.tmp")
        shutil.rmtree(tmp, ignore_errors=True)
        tmp.mkdir(parents=True)
        ComplexTensor(sg.q).save(tmp / "q.fift")
        ComplexTensor(sg.v_l).save(tmp / "v_l.fift")
        ComplexTensor(sg.v_r).save(tmp / "v_r.fift")
        meta = {"key": key, "dt": sg.dt, "d": sg.d, "chi": sg.chi,
                "fit_hash": key.get("fit_hash"), "cutoffs": key.get("pseudomodes"),
                "if_meta": _jsonable(sg.meta)}
        (tmp / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        shutil.rmtree(path, ignore_errors=True)
        try:
            tmp.rename(path)
        except OSError:
            # another process finished the same entry first; contents are identical
            shutil.rmtree(tmp, ignore_errors=True)
        return path


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))
