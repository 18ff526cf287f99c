"""Dense state and operator primitives.

Subsystem ordering is little-endian: subsystem 0 (qubit 1) is the
least-significant position of the composite index, so a ``dims`` list
``[d0, d1, ..., dk]`` corresponds to the Kronecker product
``dk ⊗ ... ⊗ d1 ⊗ d0``. Qubit basis: ``|D>`` is index 0, ``|S>`` is index 1.
Ket labels such as ``"DSS"`` follow the ``|x_N ... x_1>`` notation, i.e. the
rightmost letter belongs to qubit 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

HERMITIAN_ATOL = 1e-10
TRACE_ATOL = 1e-10
PSD_ATOL = 1e-8
UNITARY_ATOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PROJ_D = np.array([[1, 0], [0, 0]], dtype=complex)
PROJ_S = np.array([[0, 0], [0, 1]], dtype=complex)


class FormatError(ValueError):
    """Raised when a serialized matrix cannot be parsed."""


def _check_dims(dims: Sequence[int], size: int) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise ValueError(f"invalid subsystem dims {dims}")
    if int(np.prod(dims)) != size:
        raise ValueError(f"dims {dims} do not multiply to {size}")
    return dims


@dataclass(frozen=True, eq=False)
class PureState:
    """State vector with little-endian subsystem dims."""

    amplitudes: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "dims", _check_dims(self.dims, amps.size))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_density_matrix(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(np.outer(a, a.conj()), self.dims)


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    entries: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got shape {m.shape}")
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "dims", _check_dims(self.dims, m.shape[0]))
        if self.hermiticity_error() > HERMITIAN_ATOL * max(1.0, np.abs(m).max()):
            raise ValueError("operator is not Hermitian")

    def hermiticity_error(self) -> float:
        m = self.entries
        return float(np.abs(m - m.conj().T).max()) if m.size else 0.0


@dataclass(frozen=True, eq=False)
class DensityMatrix(HermitianOperator):
    """Hermitian, unit-trace, positive semidefinite matrix.

    Construction only enforces shape and Hermiticity; call :meth:`validate`
    for the full trace and PSD contract.
    """

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    @property
    def purity(self) -> float:
        return float(np.vdot(self.entries, self.entries).real)

    @property
    def num_subsystems(self) -> int:
        return len(self.dims)

    def validate(self) -> "DensityMatrix":
        if abs(self.trace - 1.0) > TRACE_ATOL:
            raise ValueError(f"trace {self.trace!r} differs from 1")
        lowest = np.linalg.eigvalsh(self.entries)[0]
        if lowest < -PSD_ATOL:
            raise ValueError(f"matrix is not PSD (eigenvalue {lowest:.3e})")
        return self


StateOrMatrix = Union[PureState, HermitianOperator]


def basis_state(labels: str) -> PureState:
    """Computational basis ket from a ``|x_N ... x_1>`` label string.

    >>> basis_state("DS").amplitudes
    array([0.+0.j, 1.+0.j, 0.+0.j, 0.+0.j])
    """
    n = len(labels)
    index = 0
    for k, ch in enumerate(reversed(labels.upper())):
        if ch not in "DS":
            raise ValueError(f"invalid qubit label {ch!r}")
        index |= (ch == "S") << k
    amps = np.zeros(2**n, dtype=complex)
    amps[index] = 1.0
    return PureState(amps, (2,) * n)


def maximally_mixed(n: int) -> DensityMatrix:
    d = 2**n
    return DensityMatrix(np.eye(d, dtype=complex) / d, (2,) * n)


def tensor_product(a: StateOrMatrix, b: StateOrMatrix) -> StateOrMatrix:
    """Composite of ``a`` (low subsystems) and ``b`` (high subsystems).

    Result dims are ``a.dims + b.dims``; because the ordering is little-endian
    the entries are ``kron(b, a)``.
    """
    dims = a.dims + b.dims
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(np.kron(b.amplitudes, a.amplitudes), dims)
    if isinstance(a, PureState) or isinstance(b, PureState):
        raise TypeError("cannot mix a state vector and a matrix")
    cls = DensityMatrix if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix) else HermitianOperator
    return cls(np.kron(b.entries, a.entries), dims)


def _axis(dims: Sequence[int], subsystem: int) -> int:
    # numpy C-order puts the most significant subsystem on axis 0
    return len(dims) - 1 - subsystem


def _check_subsystem(dims: Sequence[int], subsystem: int) -> None:
    if not 0 <= subsystem < len(dims):
        raise IndexError(f"subsystem {subsystem} out of range for dims {tuple(dims)}")


def partial_trace(rho: HermitianOperator, keep: Iterable[int]) -> DensityMatrix:
    """Reduce ``rho`` to the subsystems in ``keep`` (original order retained)."""
    dims = rho.dims
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("cannot trace out everything")
    for k in keep:
        _check_subsystem(dims, k)
    n = len(dims)
    t = rho.entries.reshape(dims[::-1] * 2)
    # einsum labels: row index letters, column letters shared for traced axes
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    row = [letters[i] for i in range(n)]
    col = [letters[n + i] if (n - 1 - i) in keep else letters[i] for i in range(n)]
    out_axes = [i for i in range(n) if (n - 1 - i) in keep]
    out = "".join(row[i] for i in out_axes) + "".join(col[i] for i in out_axes)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    kept_dims = tuple(dims[k] for k in keep)
    d = int(np.prod(kept_dims))
    return DensityMatrix(reduced.reshape(d, d), kept_dims)


def embed_operator(op: np.ndarray, dims: Sequence[int], subsystem: int) -> np.ndarray:
    """Full-space matrix of ``op`` acting on one subsystem."""
    _check_subsystem(dims, subsystem)
    low = int(np.prod(dims[:subsystem]))
    high = int(np.prod(dims[subsystem + 1 :]))
    return np.kron(np.kron(np.eye(high), op), np.eye(low))


def _apply_left(t: np.ndarray, op: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(op, t, axes=([1], [axis])), 0, axis)


def apply_local_operator(x: StateOrMatrix, subsystem: int, op: np.ndarray) -> StateOrMatrix:
    """Apply ``op`` on one subsystem without checking unitarity (``op ρ op†``)."""
    dims = x.dims
    _check_subsystem(dims, subsystem)
    op = np.asarray(op, dtype=complex)
    if op.shape != (dims[subsystem], dims[subsystem]):
        raise ValueError(f"operator shape {op.shape} does not match subsystem dim {dims[subsystem]}")
    ax = _axis(dims, subsystem)
    if isinstance(x, PureState):
        t = _apply_left(x.amplitudes.reshape(dims[::-1]), op, ax)
        return PureState(t.reshape(-1), dims)
    n = len(dims)
    t = x.entries.reshape(dims[::-1] * 2)
    t = _apply_left(t, op, ax)
    t = _apply_left(t, op.conj(), n + ax)
    return type(x)(t.reshape(x.entries.shape), dims)


def is_unitary(u: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=atol, rtol=0)


def apply_local_unitary(x: StateOrMatrix, subsystem: int, u: np.ndarray) -> StateOrMatrix:
    if not is_unitary(u):
        raise ValueError("matrix is not unitary")
    return apply_local_operator(x, subsystem, u)


def project_and_condition(
    rho: DensityMatrix, subsystem: int, projector: np.ndarray
) -> tuple[DensityMatrix, float]:
    """Condition ``rho`` on a projective outcome of one subsystem.

    Returns the renormalized post-measurement state (same dims) and the
    outcome probability ``Tr[(P ⊗ 1) ρ]``.
    """
    p = np.asarray(getattr(projector, "entries", projector), dtype=complex)
    if not np.allclose(p @ p, p, atol=1e-10, rtol=0) or not np.allclose(p, p.conj().T, atol=1e-10, rtol=0):
        raise ValueError("projector must be Hermitian and idempotent")
    projected = apply_local_operator(rho, subsystem, p)
    prob = float(np.trace(projected.entries).real)
    if prob < 1e-12:
        raise ValueError("outcome has zero probability")
    return DensityMatrix(projected.entries / prob, rho.dims), prob


def fidelity_pure(rho: HermitianOperator, target: PureState) -> float:
    """Overlap ``<target|rho|target>``."""
    if rho.entries.shape[0] != target.amplitudes.size:
        raise ValueError("dimension mismatch between state and target")
    v = target.amplitudes
    value = np.vdot(v, rho.entries @ v)
    if abs(value.imag) > 1e-10:
        raise ValueError(f"fidelity has imaginary part {value.imag:.3e}")
    return float(value.real)


def hermitian_eigensystem(m: HermitianOperator | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order with matching eigenvector columns."""
    entries = np.asarray(getattr(m, "entries", m), dtype=complex)
    if not np.allclose(entries, entries.conj().T, atol=HERMITIAN_ATOL * max(1.0, np.abs(entries).max()), rtol=0):
        raise ValueError("matrix is not Hermitian")
    w, v = np.linalg.eigh(entries)
    return w[::-1].copy(), v[:, ::-1].copy()


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix, negative eigenvalues clipped to zero."""
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


# -- text serialization ---------------------------------------------------


def format_density_matrix(rho: HermitianOperator) -> str:
    lines = ["dims " + " ".join(str(d) for d in rho.dims)]
    for row in rho.entries:
        lines.append(" ".join(f"{z.real:.17e},{z.imag:.17e}" for z in row))
    return "\n".join(lines) + "\n"


def parse_density_matrix(text: str) -> DensityMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("dims"):
        raise FormatError("line 1: expected header 'dims d1 d2 ...'")
    try:
        dims = tuple(int(tok) for tok in lines[0].split()[1:])
    except ValueError as exc:
        raise FormatError(f"line 1: bad dims ({exc})") from None
    d = int(np.prod(dims)) if dims else 0
    if d == 0:
        raise FormatError("line 1: empty dims")
    if len(lines) != d + 1:
        raise FormatError(f"expected {d} matrix rows, found {len(lines) - 1}")
    m = np.empty((d, d), dtype=complex)
    for i, ln in enumerate(lines[1:]):
        toks = ln.split()
        if len(toks) != d:
            raise FormatError(f"line {i + 2}: expected {d} entries, found {len(toks)}")
        try:
            for j, tok in enumerate(toks):
                re, im = tok.split(",")
                m[i, j] = complex(float(re), float(im))
        except ValueError:
            raise FormatError(f"line {i + 2}: malformed entry {tok!r}") from None
    try:
        return DensityMatrix(m, dims)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_density_matrix(path: str | Path, rho: HermitianOperator) -> None:
    Path(path).write_text(format_density_matrix(rho))


def read_density_matrix(path: str | Path) -> DensityMatrix:
    return parse_density_matrix(Path(path).read_text())
