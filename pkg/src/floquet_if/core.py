"""Dense complex multilinear algebra shared by every other module.

Linear-algebra routines accept numpy arrays or :class:`ComplexTensor` and
return plain ``complex128`` arrays.  :class:`ComplexTensor` is the immutable
container used for caching, with the binary ``FIFT`` layout::

    b"FIFT" | u32 version | u32 ndim | u64 extents[ndim] | complex128 LE data

Vectorisation follows the row-major convention ``vec(rho)[i*d + j] = rho[i, j]``
so that ``vec(A rho B) = kron(A, B.T) @ vec(rho)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DimensionError, InputError

MAGIC = b"FIFT"
FORMAT_VERSION = 1
DEFAULT_EXPM_TOLERANCE = 1e-12
DEFAULT_CONDITION_THRESHOLD = 1e10


class ComplexTensor:
    """Immutable row-major complex tensor with explicit shape metadata."""

    __slots__ = ("_data",)

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.complex128, order="C", copy=True)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if any(s <= 0 for s in shape):
                raise DimensionError(f"extents must be positive, got {shape}")
            if int(np.prod(shape)) != arr.size:
                raise DimensionError(
                    f"shape {shape} holds {int(np.prod(shape))} entries, data has {arr.size}")
            arr = arr.reshape(shape)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr):
        obj = cls.__new__(cls)
        arr.flags.writeable = False
        obj._data = arr
        return obj

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape})"

    def reshape(self, *shape) -> "ComplexTensor":
        """Metadata-only reshape; shares the underlying buffer."""
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        if int(np.prod(shape)) != self.size:
            raise DimensionError(f"cannot reshape {self.shape} to {tuple(shape)}")
        return ComplexTensor._wrap(self._data.reshape(shape))

    def permute(self, axes: Sequence[int]) -> "ComplexTensor":
        """Index permutation, materialised back into row-major order."""
        return ComplexTensor._wrap(np.ascontiguousarray(self._data.transpose(axes)))

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self._data.ravel()))

    def identical(self, other: "ComplexTensor") -> bool:
        """Bit-for-bit equality of shape and entries."""
        return self.shape == other.shape and self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        head = MAGIC + struct.pack("<II", FORMAT_VERSION, self.ndim)
        head += struct.pack(f"<{self.ndim}Q", *self.shape)
        return head + self._data.astype("<c16", copy=False).tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ComplexTensor":
        if len(buf) < 12 or buf[:4] != MAGIC:
            raise InputError("not a FIFT tensor (bad magic bytes)")
        version, ndim = struct.unpack_from("<II", buf, 4)
        if version != FORMAT_VERSION:
            raise InputError(f"unsupported FIFT format version {version}")
        off = 12 + 8 * ndim
        if len(buf) < off:
            raise InputError("truncated FIFT header")
        shape = struct.unpack_from(f"<{ndim}Q", buf, 12)
        count = int(np.prod(shape)) if ndim else 1
        if len(buf) != off + 16 * count:
            raise InputError(
                f"FIFT payload holds {len(buf) - off} bytes, expected {16 * count}")
        data = np.frombuffer(buf, dtype="<c16", count=count, offset=off)
        return cls(data.astype(np.complex128), shape)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ComplexTensor":
        return cls.from_bytes(Path(path).read_bytes())


def as_array(a) -> np.ndarray:
    return np.asarray(a, dtype=np.complex128)


def _square(a, name="a"):
    a = as_array(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def contract(a, b, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """Sum over paired indices; free indices of ``a`` precede those of ``b``."""
    a = as_array(a)
    b = as_array(b)
    for ia, ib in pairs:
        if not (-a.ndim <= ia < a.ndim) or not (-b.ndim <= ib < b.ndim):
            raise DimensionError(f"index pair ({ia}, {ib}) out of range")
        if a.shape[ia] != b.shape[ib]:
            raise DimensionError(
                f"index pair ({ia}, {ib}): extent {a.shape[ia]} != {b.shape[ib]}")
    axes_a = [p[0] for p in pairs]
    axes_b = [p[1] for p in pairs]
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def matrix_exponential(a, tolerance: float = DEFAULT_EXPM_TOLERANCE) -> np.ndarray:
    """exp(a) by scaling and squaring with a Pade core.

    Falls back to an eigendecomposition when the rational approximant
    produces non-finite entries.
    """
    a = _square(a)
    if not tolerance > 0:
        raise InputError("tolerance must be positive")
    if not np.all(np.isfinite(a)):
        raise InputError("matrix contains NaN or Inf")
    out = scipy.linalg.expm(a)
    if not np.all(np.isfinite(out)):
        w, v = np.linalg.eig(a)
        out = (v * np.exp(w)) @ np.linalg.inv(v)
    return out


@dataclass(frozen=True)
class EigenDecomposition:
    """Biorthonormal eigensystem: ``left @ right == I`` and ``a @ right[:, i] = lam_i right[:, i]``."""

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    biorthogonality_residual: float
    reconstruction_residual: float
    condition: float
    degenerate: bool
    defective: bool

    def mode_condition(self) -> np.ndarray:
        """Per-eigenvalue condition numbers ||l_i|| ||r_i|| / |l_i r_i|."""
        num = np.linalg.norm(self.left, axis=1) * np.linalg.norm(self.right, axis=0)
        den = np.abs(np.einsum("ij,ji->i", self.left, self.right))
        return num / den


def sort_order(values: np.ndarray) -> np.ndarray:
    """Descending modulus, ties by descending real then imaginary part."""
    mod = np.round(np.abs(values), 12)
    return np.lexsort((-values.imag, -values.real, -mod))


def eig_general(a, condition_threshold: float = DEFAULT_CONDITION_THRESHOLD,
                degeneracy_tol: float = 1e-10) -> EigenDecomposition:
    a = _square(a)
    if not np.all(np.isfinite(a)):
        raise InputError("matrix contains NaN or Inf")
    n = a.shape[0]
    try:
        w, vl, vr = scipy.linalg.eig(a, left=True, right=True)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(
            f"QR iteration did not converge within {30 * n} iterations: {exc}",
            iterations=30 * n) from exc
    order = sort_order(w)
    w = w[order]
    right = vr[:, order]
    right = right / np.linalg.norm(right, axis=0)
    left = vl[:, order].conj().T
    overlap = left @ right
    try:
        left = np.linalg.solve(overlap, left)
    except np.linalg.LinAlgError:
        left = np.linalg.pinv(right)
    bi = float(np.abs(left @ right - np.eye(n)).max()) if n else 0.0
    anorm = np.linalg.norm(a)
    recon = np.linalg.norm(a - (right * w) @ left) / anorm if anorm > 0 else 0.0
    cond = float(np.linalg.cond(right)) if n else 1.0
    scale = max(np.abs(w).max(), 1.0) if n else 1.0
    gaps = np.abs(w[:, None] - w[None, :])
    np.fill_diagonal(gaps, np.inf)
    degenerate = bool(n > 1 and gaps.min() < degeneracy_tol * scale)
    return EigenDecomposition(
        eigenvalues=w, right=right, left=left,
        biorthogonality_residual=bi,
        reconstruction_residual=float(recon) if np.isfinite(recon) else np.inf,
        condition=cond, degenerate=degenerate,
        defective=bool(not np.isfinite(cond) or cond > condition_threshold))


def leading_eigenpair(apply, dim: int, x0=None, tol: float = 1e-12,
                      max_iter: int = 100000):
    """Power iteration for the dominant eigenpair of a linear map.

    ``apply`` is a matrix or a callable acting on vectors.  Returns
    ``(eigenvalue, vector, iterations)``.
    """
    if not callable(apply):
        mat = as_array(apply)
        apply = mat.__matmul__
    x = np.ones(dim, dtype=np.complex128) if x0 is None else as_array(x0).copy()
    x /= np.linalg.norm(x)
    lam = 0j
    for it in range(1, max_iter + 1):
        y = apply(x)
        lam_new = np.vdot(x, y)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0j, x, it
        y /= ny
        # fix the global phase so successive iterates are comparable
        k = np.argmax(np.abs(y))
        y *= abs(y[k]) / y[k]
        if np.linalg.norm(y - x) < tol and abs(lam_new - lam) < tol * max(1.0, abs(lam_new)):
            return lam_new, y, it
        x, lam = y, lam_new
    raise ConvergenceError("power iteration did not converge", iterations=max_iter,
                           achieved=float(np.linalg.norm(apply(x) - lam * x)))


class SVDResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    residual: float


def svd(a) -> SVDResult:
    """Thin SVD, ``a = u @ diag(s) @ v.conj().T`` with ``s`` descending."""
    a = as_array(a)
    if a.ndim != 2:
        raise DimensionError(f"svd expects a matrix view, got ndim={a.ndim}")
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    anorm = np.linalg.norm(a)
    res = np.linalg.norm(a - (u * s) @ vh) / anorm if anorm > 0 else 0.0
    return SVDResult(u, s, vh.conj().T, float(res))


# -- Liouville-space helpers --------------------------------------------------

def vec(rho) -> np.ndarray:
    return as_array(rho).reshape(-1)


def unvec(v, d: int) -> np.ndarray:
    return as_array(v).reshape(d, d)


def left_mult(a) -> np.ndarray:
    a = as_array(a)
    return np.kron(a, np.eye(a.shape[0]))


def right_mult(a) -> np.ndarray:
    a = as_array(a)
    return np.kron(np.eye(a.shape[0]), a.T)


def commutator_super(a) -> np.ndarray:
    return left_mult(a) - right_mult(a)


def unitary_channel(u) -> np.ndarray:
    """Superoperator of rho -> u rho u^dagger."""
    u = as_array(u)
    return np.kron(u, u.conj())


def trace_vector(d: int) -> np.ndarray:
    return np.eye(d, dtype=np.complex128).reshape(-1)
