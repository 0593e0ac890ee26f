"""Transverse-field Ising spin reservoir driven by input injection on qubit 1.

Each input ``s_k`` replaces the state of qubit 1 with the pure state
``sqrt(1-s)|0> + sqrt(s)|1>`` (the rest of the register keeps its marginal),
after which the whole register evolves unitarily for ``dt``. With ``V``
virtual nodes the observables are sampled at ``v * dt / V`` for
``v = 1..V`` after each injection.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from . import linalg
from .errors import CapacityError, ValidationError
from .linalg import Propagator

AXES = ("x", "y", "z")

# independent RNG streams keyed off a user seed
COUPLING_STREAM = 0xC0
INPUT_STREAM = 0x1A


@dataclass(frozen=True)
class ObservableSet:
    """Which expectation values are read out.

    ``singles`` are axes measured on every qubit; ``pairs`` are ordered axis
    pairs ``(a, b)`` measured as ``<sigma^a_i sigma^b_j>`` on every ordered
    qubit pair ``i != j``.
    """

    singles: Tuple[str, ...] = ("z",)
    pairs: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        singles = tuple(a.lower() for a in self.singles)
        pairs = tuple((a.lower(), b.lower()) for a, b in self.pairs)
        for a in singles + tuple(itertools.chain.from_iterable(pairs)):
            if a not in AXES:
                raise ValidationError(f"unknown axis {a!r}; expected one of x, y, z")
        if len(set(singles)) != len(singles) or len(set(pairs)) != len(pairs):
            raise ValidationError("observable set contains duplicates")
        if not singles and not pairs:
            raise ValidationError("observable set is empty")
        object.__setattr__(self, "singles", singles)
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def parse(cls, text: str) -> "ObservableSet":
        """Parse the ``singles(+pairs)*`` grammar, e.g. ``"z"``, ``"x+y"``, ``"xy+z"``."""
        singles, pairs = [], []
        for token in str(text).strip().lower().split("+"):
            token = token.strip()
            if len(token) == 1:
                singles.append(token)
            elif len(token) == 2:
                pairs.append((token[0], token[1]))
            else:
                raise ValidationError(f"cannot parse observable token {token!r} in {text!r}")
        return cls(tuple(singles), tuple(pairs))

    def __str__(self) -> str:
        return "+".join([a + b for a, b in self.pairs] + list(self.singles))

    def count(self, n_qubits: int) -> int:
        return n_qubits * len(self.singles) + n_qubits * (n_qubits - 1) * len(self.pairs)

    def terms(self, n_qubits: int) -> List[Tuple[str, str]]:
        """``(label, pauli_string)`` for every observable, qubits labelled from 1."""
        out = []
        for a in self.singles:
            for i in range(n_qubits):
                p = ["I"] * n_qubits
                p[i] = a.upper()
                out.append((f"{a}_{i + 1}", "".join(p)))
        for a, b in self.pairs:
            for i, j in itertools.permutations(range(n_qubits), 2):
                p = ["I"] * n_qubits
                p[i] = a.upper()
                p[j] = b.upper()
                out.append((f"{a}{b}_{i + 1}_{j + 1}", "".join(p)))
        if not out:
            raise ValidationError(f"observable set {self} yields no variables for N={n_qubits}")
        return out


@dataclass(frozen=True)
class ReservoirConfig:
    n_qubits: int = 5
    field_h: float = 1.0
    coupling_scale: float = 1.0
    dt: float = 10.0
    virtual_nodes: int = 1
    coupling_seed: int = 0
    observables: ObservableSet = field(default_factory=ObservableSet)

    def __post_init__(self):
        if isinstance(self.observables, str):
            object.__setattr__(self, "observables", ObservableSet.parse(self.observables))
        if int(self.n_qubits) != self.n_qubits or self.n_qubits < 1:
            raise ValidationError(f"n_qubits must be a positive integer, got {self.n_qubits}")
        if self.n_qubits > linalg.MAX_QUBITS:
            raise CapacityError(f"n_qubits={self.n_qubits} exceeds {linalg.MAX_QUBITS}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if int(self.virtual_nodes) != self.virtual_nodes or self.virtual_nodes < 1:
            raise ValidationError(f"virtual_nodes must be >= 1, got {self.virtual_nodes}")
        if not self.coupling_scale >= 0:
            raise ValidationError(f"coupling_scale must be >= 0, got {self.coupling_scale}")
        if not np.isfinite(self.field_h):
            raise ValidationError(f"field_h must be finite, got {self.field_h}")
        self.observables.count(self.n_qubits)

    @property
    def n_vars(self) -> int:
        return self.observables.count(self.n_qubits) * self.virtual_nodes

    def to_dict(self) -> dict:
        return {
            "n_qubits": int(self.n_qubits),
            "field_h": float(self.field_h),
            "coupling_scale": float(self.coupling_scale),
            "dt": float(self.dt),
            "virtual_nodes": int(self.virtual_nodes),
            "coupling_seed": int(self.coupling_seed),
            "observables": str(self.observables),
        }


@dataclass(frozen=True)
class InputSequence:
    """Input values ``s_k`` in ``[0, 1]``; ``scaled`` gives ``2 s - 1``."""

    values: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValidationError("input sequence must be a non-empty 1-D array")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValidationError("input values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def scaled(self) -> np.ndarray:
        return 2.0 * self.values - 1.0

    @classmethod
    def uniform(cls, length: int, seed: int) -> "InputSequence":
        """i.i.d. uniform inputs on ``[0, 1]`` from the seed's input stream."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), INPUT_STREAM]))
        return cls(rng.uniform(0.0, 1.0, size=int(length)), seed=int(seed))


@dataclass(frozen=True)
class DesignMatrix:
    """Harvested observables, one row per evaluation input, bias column last."""

    values: np.ndarray
    labels: Tuple[str, ...]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.labels) + 1:
            raise ValidationError("design matrix needs one label per observable column")
        self.values.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return len(self.labels)

    @property
    def observables(self) -> np.ndarray:
        return self.values[:, :-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(self.labels) + ["bias"])
            for row in self.values:
                writer.writerow([repr(float(x)) for x in row])


def draw_couplings(n_qubits: int, coupling_scale: float, seed: int) -> np.ndarray:
    """Lower-triangular ``J[i, j]`` (``i > j``) uniform on ``[-Js/2, Js/2]``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), COUPLING_STREAM]))
    J = np.zeros((n_qubits, n_qubits))
    rows, cols = np.tril_indices(n_qubits, k=-1)
    J[rows, cols] = rng.uniform(-coupling_scale / 2, coupling_scale / 2, size=rows.size)
    return J


def build_hamiltonian(config: ReservoirConfig) -> Tuple[np.ndarray, np.ndarray]:
    """``H = sum_{i>j} J_ij X_i X_j + h sum_i Z_i`` and the couplings used."""
    n = config.n_qubits
    J = draw_couplings(n, config.coupling_scale, config.coupling_seed)
    dim = 2 ** n
    # Z_i and X_i X_j are (signed) permutation matrices: fill them without dense kron
    idx = np.arange(dim)
    H = np.zeros((dim, dim), dtype=complex)
    for i in range(n):
        bit = (idx >> (n - 1 - i)) & 1
        H[idx, idx] += config.field_h * (1 - 2 * bit)
    for i in range(n):
        for j in range(i):
            flip = (1 << (n - 1 - i)) | (1 << (n - 1 - j))
            H[idx, idx ^ flip] += J[i, j]
    return H, J


def input_state(s: float) -> np.ndarray:
    """``|psi_s><psi_s|`` with ``|psi_s> = sqrt(1-s)|0> + sqrt(s)|1>``."""
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"input value must be in [0, 1], got {s}")
    a, b = np.sqrt(1.0 - s), np.sqrt(s)
    return np.array([[a * a, a * b], [a * b, b * b]], dtype=complex)


def _inject(rho: np.ndarray, rho1: np.ndarray) -> np.ndarray:
    half = rho.shape[0] // 2
    rest = rho[:half, :half] + rho[half:, half:]
    return (rho1[:, None, :, None] * rest[None, :, None, :]).reshape(rho.shape)


def inject(rho, s: float) -> np.ndarray:
    """Replace qubit 1 by ``input_state(s)``, keeping the marginal of the rest."""
    rho = np.asarray(rho, dtype=complex)
    rho1 = input_state(s)
    if linalg.n_qubits_of(rho) == 1:
        return rho1
    return _inject(rho, rho1)


def step(rho, s: float, u: Propagator) -> np.ndarray:
    """One input period: inject ``s`` then conjugate by ``u``."""
    rho = np.asarray(rho, dtype=complex)
    if u.matrix.shape != rho.shape:
        raise ValidationError(f"propagator shape {u.matrix.shape} does not match state {rho.shape}")
    return u.apply(inject(rho, s))


class Reservoir:
    """A fixed coupling realization with its propagators and readout operators."""

    def __init__(self, config: ReservoirConfig):
        self.config = config
        self.hamiltonian, self.couplings = build_hamiltonian(config)
        self.eig = linalg.hermitian_eig(self.hamiltonian)
        V = config.virtual_nodes
        self.propagators = [
            linalg.propagator(self.hamiltonian, v * config.dt / V, eig=self.eig)
            for v in range(1, V + 1)
        ]
        self.step_propagator = self.propagators[-1]
        terms = config.observables.terms(config.n_qubits)
        self.observable_labels = tuple(label for label, _ in terms)
        self.pauli_strings = tuple(p for _, p in terms)
        self._readout = self._readout_operator()

    @property
    def dim(self) -> int:
        return 2 ** self.config.n_qubits

    @property
    def labels(self) -> Tuple[str, ...]:
        V = self.config.virtual_nodes
        return tuple(
            f"{label}_v{v}" for v in range(1, V + 1) for label in self.observable_labels
        )

    def _readout_operator(self) -> sparse.csr_matrix:
        # Tr[B rho] = sum_r B[r, c_r] rho[c_r, r] = vec(rho) . M[:, j] with row-major vec
        dim = self.dim
        rows, cols, vals = [], [], []
        for j, p in enumerate(self.pauli_strings):
            c, v = linalg.pauli_support(p)
            rows.append(c * dim + np.arange(dim))
            cols.append(np.full(dim, j))
            vals.append(v)
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dim * dim, len(self.pauli_strings)),
        )

    def measure(self, states: np.ndarray) -> np.ndarray:
        """Observable values for a stack of states shaped ``(..., dim, dim)``."""
        flat = states.reshape(-1, self.dim * self.dim)
        vals = (self._readout.T @ flat.T).T
        resid = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
        if resid > 1e-9:
            raise linalg.NumericalError(f"observable imaginary residue {resid:.3e}")
        return vals.real.reshape(states.shape[:-2] + (len(self.pauli_strings),))

    def snapshots(self, rho_injected: np.ndarray) -> np.ndarray:
        """States at ``v dt / V`` for ``v = 1..V``, each from the injected state."""
        if len(self.propagators) == 1:
            return self.step_propagator.apply(rho_injected)[None]
        U = np.stack([p.matrix for p in self.propagators])
        return U @ rho_injected @ U.conj().transpose(0, 2, 1)

    def initial_state(self) -> np.ndarray:
        return linalg.maximally_mixed(self.config.n_qubits)

    def run(
        self,
        inputs: InputSequence,
        washout: int,
        initial_state: Optional[np.ndarray] = None,
        check_every: int = 0,
        chunk: int = 512,
    ) -> DesignMatrix:
        """Drive the reservoir and collect the post-washout design matrix.

        ``check_every > 0`` validates the density matrix every that many
        inputs (Hermitian, unit trace, PSD).
        """
        L_total = len(inputs)
        if washout < 0 or washout >= L_total:
            raise ValidationError(f"washout={washout} must be in [0, {L_total - 1}]")
        n = self.config.n_qubits
        V = self.config.virtual_nodes
        n_obs = len(self.pauli_strings)
        rho = self.initial_state() if initial_state is None else np.array(initial_state, dtype=complex)
        if rho.shape != (self.dim, self.dim):
            raise ValidationError(f"initial state shape {rho.shape} does not match N={n}")
        s = inputs.values
        amp0, amp1 = np.sqrt(1.0 - s), np.sqrt(s)

        L = L_total - washout
        X = np.empty((L, n_obs * V + 1))
        X[:, -1] = 1.0
        U = self.step_propagator.matrix
        Ud = U.conj().T
        multiplexed = V > 1
        if multiplexed:
            Us = np.stack([p.matrix for p in self.propagators])
            Uds = Us.conj().transpose(0, 2, 1)
        buf = np.empty((chunk, V, self.dim, self.dim), dtype=complex)
        filled, row = 0, 0
        rho1 = np.empty((2, 2), dtype=complex)
        for k in range(L_total):
            a, b = amp0[k], amp1[k]
            rho1[0, 0], rho1[0, 1], rho1[1, 0], rho1[1, 1] = a * a, a * b, a * b, b * b
            injected = rho1 if n == 1 else _inject(rho, rho1)
            if multiplexed and k >= washout:
                snaps = Us @ injected @ Uds
                rho = snaps[-1]
            else:
                rho = U @ injected @ Ud
                snaps = None
            if check_every and k % check_every == 0:
                linalg.check_density_matrix(rho)
            if k >= washout:
                if snaps is None:
                    buf[filled, 0] = rho
                else:
                    buf[filled] = snaps
                filled += 1
                if filled == chunk or k == L_total - 1:
                    obs = self.measure(buf[:filled])
                    X[row:row + filled, :-1] = obs.reshape(filled, V * n_obs)
                    row += filled
                    filled = 0
        return DesignMatrix(X, self.labels)

    def trajectory(self, rho0: np.ndarray, inputs: InputSequence) -> np.ndarray:
        """Full state after every input, shape ``(L, dim, dim)``."""
        U = self.step_propagator
        out = np.empty((len(inputs), self.dim, self.dim), dtype=complex)
        rho = np.array(rho0, dtype=complex)
        for k, s in enumerate(inputs.values):
            rho = step(rho, s, U)
            out[k] = rho
        return out


def run(
    config: ReservoirConfig,
    inputs: InputSequence,
    washout: int,
    initial_state: Optional[np.ndarray] = None,
    check_every: int = 0,
) -> DesignMatrix:
    return Reservoir(config).run(inputs, washout, initial_state=initial_state, check_every=check_every)


@dataclass(frozen=True)
class ConvergenceTrace:
    dt: float
    distances: np.ndarray

    @property
    def inputs(self) -> np.ndarray:
        return np.arange(1, self.distances.size + 1)

    @property
    def times(self) -> np.ndarray:
        return self.inputs * self.dt

    def inputs_to_reach(self, tol: float) -> Optional[int]:
        """First input count after which the distance stays below ``tol``."""
        above = np.nonzero(self.distances >= tol)[0]
        if above.size == 0:
            return 1
        last = int(above[-1])
        return last + 2 if last + 1 < self.distances.size else None


def convergence_trace(
    config: ReservoirConfig,
    rho_a,
    rho_b,
    inputs: InputSequence,
) -> ConvergenceTrace:
    """Frobenius distance between two trajectories driven by the same inputs."""
    rho_a = np.asarray(rho_a, dtype=complex)
    rho_b = np.asarray(rho_b, dtype=complex)
    dim = 2 ** config.n_qubits
    if rho_a.shape != (dim, dim) or rho_b.shape != (dim, dim):
        raise ValidationError(
            f"initial states {rho_a.shape}, {rho_b.shape} do not match N={config.n_qubits}"
        )
    res = Reservoir(config)
    U = res.step_propagator
    dist = np.empty(len(inputs))
    for k, s in enumerate(inputs.values):
        rho_a = step(rho_a, s, U)
        rho_b = step(rho_b, s, U)
        dist[k] = np.linalg.norm(rho_a - rho_b)
    return ConvergenceTrace(dt=float(config.dt), distances=dist)
