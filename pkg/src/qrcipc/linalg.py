"""Dense complex linear algebra for small qubit registers.

Density matrices and operators are plain ``numpy`` complex arrays. Tensor
products follow a fixed convention: qubit 1 is the leftmost (most
significant) factor, so ``kron(a, b)`` places ``a`` on qubit 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, DomainError, NumericalError, ValidationError

MAX_QUBITS = 12
MAX_DIM = 2 ** MAX_QUBITS

HERMITIAN_ATOL = 1e-10
TRACE_ATOL = 1e-10
PSD_ATOL = 1e-9
UNITARY_ATOL = 1e-9

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

PauliLike = Union[str, Sequence[str]]


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return m


def n_qubits_of(rho: np.ndarray) -> int:
    """Number of qubits of a square ``2^N x 2^N`` matrix."""
    dim = rho.shape[0]
    if rho.ndim != 2 or rho.shape[1] != dim or dim < 2 or dim & (dim - 1):
        raise ValidationError(f"expected a 2^N x 2^N matrix, got shape {rho.shape}")
    return dim.bit_length() - 1


def kron(a, b) -> np.ndarray:
    """Kronecker product ``a ⊗ b`` with ``a`` as the most significant factor."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if max(rows, cols) > MAX_DIM:
        raise CapacityError(
            f"kron result {rows}x{cols} exceeds the {MAX_QUBITS}-qubit limit ({MAX_DIM})"
        )
    return np.kron(a, b)


def is_hermitian(h: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    return h.shape[0] == h.shape[1] and float(np.max(np.abs(h - h.conj().T))) <= atol


def hermitian_eig(h) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition ``h = V diag(w) V†`` of a Hermitian matrix.

    Returns eigenvalues in ascending order and the unitary matrix of
    eigenvectors (columns).
    """
    h = _as_matrix(h, "h")
    if h.shape[0] != h.shape[1]:
        raise ValidationError(f"h must be square, got shape {h.shape}")
    asym = float(np.max(np.abs(h - h.conj().T)))
    if asym > HERMITIAN_ATOL:
        raise ValidationError(f"h is not Hermitian: max|h - h†| = {asym:.3e}")
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigendecomposition did not converge (||h||_F = {np.linalg.norm(h):.6e}, "
            f"max|h_ij| = {np.max(np.abs(h)):.6e})"
        ) from exc
    scale = max(1.0, float(np.max(np.abs(h))))
    err = float(np.max(np.abs((v * w) @ v.conj().T - h)))
    if err > 1e-9 * scale:
        raise NumericalError(
            f"eigendecomposition reconstruction error {err:.3e} "
            f"(||h||_F = {np.linalg.norm(h):.6e})"
        )
    return w, v


@dataclass(frozen=True)
class Propagator:
    """Unitary ``exp(-i H tau)`` for a fixed Hamiltonian and interval."""

    matrix: np.ndarray
    tau: float

    @property
    def adjoint(self) -> np.ndarray:
        return self.matrix.conj().T

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Conjugate a density matrix: ``U rho U†``."""
        return self.matrix @ rho @ self.adjoint


def propagator(
    h,
    tau: float,
    eig: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Propagator:
    """Build ``U = V diag(exp(-i w tau)) V†`` from the spectrum of ``h``.

    Pass a precomputed ``eig=(w, v)`` to reuse one decomposition for many
    intervals.
    """
    w, v = hermitian_eig(h) if eig is None else eig
    u = (v * np.exp(-1j * w * tau)) @ v.conj().T
    err = float(np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))))
    if err > UNITARY_ATOL:
        raise NumericalError(f"propagator not unitary: max|UU† - I| = {err:.3e} at tau={tau}")
    return Propagator(matrix=u, tau=float(tau))


def partial_trace_first(rho) -> np.ndarray:
    """Trace out qubit 1 (the most significant factor)."""
    rho = np.asarray(rho)
    n = n_qubits_of(rho)
    if n < 2:
        raise DomainError("partial_trace_first needs at least two qubits")
    half = rho.shape[0] // 2
    return rho[:half, :half] + rho[half:, half:]


def _pauli_factors(p: PauliLike) -> Sequence[str]:
    factors = [c.upper() for c in p]
    bad = [c for c in factors if c not in PAULI]
    if not factors or bad:
        raise ValidationError(f"invalid Pauli string {p!r}")
    if len(factors) > MAX_QUBITS:
        raise CapacityError(f"Pauli string of length {len(factors)} exceeds {MAX_QUBITS} qubits")
    return factors


def pauli_matrix(p: PauliLike) -> np.ndarray:
    """Dense matrix of a Pauli string such as ``"ZII"`` or ``["X", "X"]``."""
    out = np.ones((1, 1), dtype=complex)
    for c in _pauli_factors(p):
        out = np.kron(out, PAULI[c])
    return out


def pauli_support(p: PauliLike) -> Tuple[np.ndarray, np.ndarray]:
    """Sparse form of a Pauli string: ``B[r, cols[r]] = vals[r]``.

    Every Pauli string is a signed/phased permutation matrix, so one
    nonzero per row suffices.
    """
    factors = _pauli_factors(p)
    n = len(factors)
    rows = np.arange(2 ** n)
    cols = rows.copy()
    vals = np.ones(2 ** n, dtype=complex)
    for q, c in enumerate(factors):
        bit = (rows >> (n - 1 - q)) & 1
        if c == "X":
            cols ^= 1 << (n - 1 - q)
        elif c == "Y":
            cols ^= 1 << (n - 1 - q)
            vals *= np.where(bit == 0, -1j, 1j)
        elif c == "Z":
            vals *= np.where(bit == 0, 1.0, -1.0)
    return cols, vals


def expectation(rho, p: PauliLike) -> float:
    """Real expectation value ``Tr[B rho]`` of a Pauli string."""
    rho = np.asarray(rho)
    n = n_qubits_of(rho)
    factors = _pauli_factors(p)
    if len(factors) != n:
        raise ValidationError(f"Pauli string has {len(factors)} factors, state has {n} qubits")
    cols, vals = pauli_support(factors)
    value = np.sum(vals * rho[cols, np.arange(rho.shape[0])])
    if abs(value.imag) > 1e-9:
        raise NumericalError(f"Tr[B rho] has imaginary residue {value.imag:.3e}")
    return float(value.real)


def frobenius_distance(a, b) -> float:
    """``sqrt(Tr[(a-b)†(a-b)])``."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def check_density_matrix(rho, psd_atol: float = PSD_ATOL) -> np.ndarray:
    """Raise unless ``rho`` is Hermitian, unit-trace and positive semidefinite."""
    rho = _as_matrix(rho, "rho")
    n_qubits_of(rho)
    asym = float(np.max(np.abs(rho - rho.conj().T)))
    if asym > HERMITIAN_ATOL:
        raise NumericalError(f"density matrix not Hermitian: max|rho - rho†| = {asym:.3e}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_ATOL:
        raise NumericalError(f"density matrix trace {tr.real:.12f} deviates from 1")
    lam = float(np.linalg.eigvalsh(rho)[0])
    if lam < -psd_atol:
        raise NumericalError(f"density matrix has negative eigenvalue {lam:.3e}")
    return rho


def pure_state(amplitudes) -> np.ndarray:
    psi = np.asarray(amplitudes, dtype=complex).ravel()
    return np.outer(psi, psi.conj())


def basis_state(bits: str) -> np.ndarray:
    """Projector onto a computational basis state, e.g. ``"00000"``."""
    if not bits or set(bits) - {"0", "1"}:
        raise ValidationError(f"invalid bit string {bits!r}")
    if len(bits) > MAX_QUBITS:
        raise CapacityError(f"{len(bits)} qubits exceeds {MAX_QUBITS}")
    dim = 2 ** len(bits)
    rho = np.zeros((dim, dim), dtype=complex)
    idx = int(bits, 2)
    rho[idx, idx] = 1.0
    return rho


def maximally_mixed(n_qubits: int) -> np.ndarray:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise CapacityError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    dim = 2 ** n_qubits
    return np.eye(dim, dtype=complex) / dim
