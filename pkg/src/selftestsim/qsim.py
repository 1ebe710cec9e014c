"""Small dense linear-algebra and quantum-state engine.

Everything is complex128 and value-semantic. StateVector carries an ordered
register map so measurements address registers by name; CQOperator stores a
block per classical label (operators block-diagonal over a classical register).
Sub-normalized operators are first-class; normalization is never implicit.
CQOperator blocks may be 1-D (a pure, possibly sub-normalized branch vector v
standing for the rank-one operator v v-dagger) or 2-D dense matrices.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import DomainError, ModelError, SelfTestError

ATOL = 1e-10


def hadamard_matrix(nbits: int) -> np.ndarray:
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    out = np.array([[1.0]], dtype=complex)
    for _ in range(nbits):
        out = np.kron(out, h)
    return out


def basis_vector(dim: int, index: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


class StateVector:
    """Dense pure state over named registers (ordered list of (name, dim))."""

    def __init__(self, amplitudes, registers, normalize: bool = False):
        self.registers = list(registers)
        self.amps = np.asarray(amplitudes, dtype=complex).ravel().copy()
        dim = int(np.prod([d for _, d in self.registers]))
        if self.amps.size != dim:
            raise DomainError("amplitude length does not match register map")
        norm = np.linalg.norm(self.amps)
        if normalize:
            if norm < ATOL:
                raise DomainError("cannot normalize a zero vector")
            self.amps /= norm
        elif abs(norm - 1.0) > ATOL:
            raise DomainError(f"state not normalized (|.|={norm})")

    def _axis(self, register: str) -> int:
        for i, (name, _) in enumerate(self.registers):
            if name == register:
                return i
        raise DomainError(f"unknown register {register!r}")

    def _tensor(self) -> np.ndarray:
        return self.amps.reshape([d for _, d in self.registers])

    def probabilities(self, register: str, basis: str = "computational") -> np.ndarray:
        axis = self._axis(register)
        tens = self._tensor()
        if basis == "hadamard":
            dim = self.registers[axis][1]
            nbits = dim.bit_length() - 1
            if 2**nbits != dim:
                raise DomainError("hadamard basis needs a 2^k register")
            tens = np.moveaxis(
                np.tensordot(hadamard_matrix(nbits), tens, axes=([1], [axis])), 0, axis
            )
        elif basis != "computational":
            raise DomainError(f"unknown basis {basis!r}")
        moved = np.moveaxis(tens, axis, 0).reshape(self.registers[axis][1], -1)
        return np.sum(np.abs(moved) ** 2, axis=1)

    def measure(self, register: str, basis: str, rng: np.random.Generator):
        """Born-rule measurement; returns (outcome index, collapsed StateVector)."""
        axis = self._axis(register)
        tens = self._tensor()
        if basis == "hadamard":
            dim = self.registers[axis][1]
            tens = np.moveaxis(
                np.tensordot(hadamard_matrix(dim.bit_length() - 1), tens, axes=([1], [axis])),
                0,
                axis,
            )
        probs = self.probabilities(register, basis)
        outcome = int(rng.choice(len(probs), p=probs / probs.sum()))
        sub = np.take(tens, outcome, axis=axis)
        norm = np.linalg.norm(sub)
        if norm < ATOL:
            raise SelfTestError("selected a zero-norm branch")
        registers = [r for i, r in enumerate(self.registers) if i != axis]
        if not registers:
            registers = [("scalar", 1)]
        return outcome, StateVector(sub / norm, registers)

    def apply_to_register(self, matrix: np.ndarray, register: str) -> "StateVector":
        axis = self._axis(register)
        tens = np.moveaxis(
            np.tensordot(matrix, self._tensor(), axes=([1], [axis])), 0, axis
        )
        out = StateVector.__new__(StateVector)
        out.registers = list(self.registers)
        out.amps = tens.ravel()
        return out


def controlled_z(state: StateVector, qubit_i: str, qubit_j: str) -> StateVector:
    """CZ between two dim-2 registers; symmetric in its arguments."""
    ai, aj = state._axis(qubit_i), state._axis(qubit_j)
    if ai == aj:
        raise DomainError("controlled_z needs two distinct qubits")
    for a in (ai, aj):
        if state.registers[a][1] != 2:
            raise DomainError("controlled_z targets must be qubits")
    tens = state._tensor().copy()
    idx = [slice(None)] * tens.ndim
    idx[ai] = 1
    idx[aj] = 1
    tens[tuple(idx)] *= -1
    out = StateVector.__new__(StateVector)
    out.registers = list(state.registers)
    out.amps = tens.ravel()
    return out


# ---------------------------------------------------------------------------
# Density-operator helpers (plain ndarrays)
# ---------------------------------------------------------------------------

def dm(vec: np.ndarray) -> np.ndarray:
    v = np.asarray(vec, dtype=complex).ravel()
    return np.outer(v, v.conj())


def trace_norm(a) -> float:
    """Sum of singular values; block-additive for CQOperator."""
    if isinstance(a, CQOperator):
        return sum(trace_norm(blk) for blk in a.blocks.values())
    a = _as_matrix(a)
    if np.allclose(a, a.conj().T, atol=1e-12):
        return float(np.sum(np.abs(np.linalg.eigvalsh(a))))
    return float(np.sum(np.sqrt(np.maximum(np.linalg.eigvalsh(a.conj().T @ a), 0.0))))


def state_dep_norm(a: np.ndarray, psi) -> float:
    """||A||_psi = sqrt(Tr[A-dagger A psi]); psi may be a CQOperator."""
    if isinstance(psi, CQOperator):
        return np.sqrt(max(psi.expect(a.conj().T @ a).real, 0.0))
    return float(np.sqrt(max(np.trace(a.conj().T @ a @ _as_matrix(psi)).real, 0.0)))


def vec(a: np.ndarray) -> np.ndarray:
    """Row-major vector-operator correspondence: (B (x) C) vec(A) = vec(B A C^T)."""
    return np.asarray(a, dtype=complex).reshape(-1)


def schmidt_coefficients(v: np.ndarray, cut: tuple[int, int]) -> np.ndarray:
    da, db = cut
    v = np.asarray(v, dtype=complex).ravel()
    if da * db != v.size:
        raise DomainError("cut does not factor the vector dimension")
    return np.linalg.svd(v.reshape(da, db), compute_uv=False)


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_as_matrix(a))
    vals = np.sqrt(np.maximum(vals, 0.0))
    return (vecs * vals) @ vecs.conj().T


def partial_trace(rho: np.ndarray, registers, keep) -> np.ndarray:
    """Trace out every register not in `keep`; registers is [(name, dim), ...]."""
    names = [n for n, _ in registers]
    for k in keep:
        if k not in names:
            raise DomainError(f"unknown register {k!r}")
    dims = [d for _, d in registers]
    rho = _as_matrix(rho).reshape(dims + dims)
    nreg = len(dims)
    # trace out discarded axes from the right to keep indices stable
    for i in reversed(range(nreg)):
        if names[i] not in keep:
            rho = np.trace(rho, axis1=i, axis2=i + (rho.ndim // 2))
    kept = int(np.prod([d for (n, d) in registers if n in keep])) or 1
    return rho.reshape(kept, kept)


def numerical_rank(rho: np.ndarray, rel_tol: float = 1e-8) -> int:
    vals = np.abs(np.linalg.eigvalsh(_as_matrix(rho)))
    top = vals.max(initial=0.0)
    if top == 0.0:
        return 0
    return int(np.sum(vals > rel_tol * top))


def _as_matrix(block: np.ndarray) -> np.ndarray:
    block = np.asarray(block, dtype=complex)
    if block.ndim == 1:
        return np.outer(block, block.conj())
    return block


def trace_norm_diff_rank1(u: np.ndarray, w: np.ndarray) -> float:
    """||uu+ - ww+||_1 computed in the two-dimensional span (exact)."""
    basis = []
    for v in (u, w):
        r = v.astype(complex).copy()
        for b in basis:
            r -= b * (b.conj() @ r)
        n = np.linalg.norm(r)
        if n > 1e-14:
            basis.append(r / n)
    if not basis:
        return 0.0
    bmat = np.array(basis)
    gu, gw = bmat.conj() @ u, bmat.conj() @ w
    small = np.outer(gu, gu.conj()) - np.outer(gw, gw.conj())
    return float(np.sum(np.abs(np.linalg.eigvalsh(small))))


# ---------------------------------------------------------------------------
# Binary observables
# ---------------------------------------------------------------------------

def check_binary_observable(o: np.ndarray, atol: float = 1e-9) -> None:
    o = np.asarray(o)
    if not np.allclose(o, o.conj().T, atol=atol):
        raise ModelError("observable not Hermitian")
    if not np.allclose(o @ o, np.eye(o.shape[0]), atol=atol):
        raise ModelError("observable does not square to identity")


def observable_projector(o: np.ndarray, b: int) -> np.ndarray:
    """O^{(b)} = (1 + (-1)^b O)/2."""
    return (np.eye(o.shape[0], dtype=complex) + (-1) ** b * np.asarray(o, dtype=complex)) / 2


# ---------------------------------------------------------------------------
# Classical-quantum operators
# ---------------------------------------------------------------------------

class CQOperator:
    """Operator Sum_label block (x) |label><label|, stored sparsely over labels.

    Blocks are ndarray: 1-D for pure rank-one branches (vector v means v v+),
    2-D for general blocks. Absent labels are zero blocks.
    """

    def __init__(self, block_dim: int, blocks: dict | None = None):
        self.block_dim = block_dim
        self.blocks: dict = {}
        if blocks:
            for label, blk in blocks.items():
                self.set_block(label, blk)

    def set_block(self, label, blk) -> None:
        blk = np.asarray(blk, dtype=complex)
        if blk.shape not in ((self.block_dim,), (self.block_dim, self.block_dim)):
            raise DomainError("block shape mismatch")
        self.blocks[label] = blk

    def add_block(self, label, blk) -> None:
        if label in self.blocks:
            self.blocks[label] = _as_matrix(self.blocks[label]) + _as_matrix(blk)
        else:
            self.set_block(label, blk)

    def matrix_block(self, label) -> np.ndarray:
        if label not in self.blocks:
            return np.zeros((self.block_dim, self.block_dim), dtype=complex)
        return _as_matrix(self.blocks[label])

    def trace(self) -> float:
        total = 0.0
        for blk in self.blocks.values():
            total += float(np.vdot(blk, blk).real) if blk.ndim == 1 else float(np.trace(blk).real)
        return total

    def expect(self, op: np.ndarray) -> complex:
        """Tr[(op (x) 1_labels) . self] with the same op applied to every block."""
        total = 0.0 + 0.0j
        for blk in self.blocks.values():
            if blk.ndim == 1:
                total += np.vdot(blk, op @ blk)
            else:
                total += np.trace(op @ blk)
        return total

    def conjugate(self, m: np.ndarray) -> "CQOperator":
        """Blockwise m . B . m-dagger; m may be a non-square isometry."""
        out = CQOperator(m.shape[0])
        for label, blk in self.blocks.items():
            if blk.ndim == 1:
                out.blocks[label] = m @ blk
            else:
                out.blocks[label] = m @ blk @ m.conj().T
        return out

    def sum_blocks(self) -> np.ndarray:
        """Partial trace over the classical labels."""
        out = np.zeros((self.block_dim, self.block_dim), dtype=complex)
        for blk in self.blocks.values():
            out += _as_matrix(blk)
        return out

    def scaled(self, c: float) -> "CQOperator":
        out = CQOperator(self.block_dim)
        for label, blk in self.blocks.items():
            out.blocks[label] = blk * (np.sqrt(c) if blk.ndim == 1 else c)
        return out

    def __sub__(self, other: "CQOperator") -> "CQOperator":
        out = CQOperator(self.block_dim)
        for label in set(self.blocks) | set(other.blocks):
            out.blocks[label] = self.matrix_block(label) - other.matrix_block(label)
        return out

    def __add__(self, other: "CQOperator") -> "CQOperator":
        out = CQOperator(self.block_dim)
        for label in set(self.blocks) | set(other.blocks):
            out.blocks[label] = self.matrix_block(label) + other.matrix_block(label)
        return out


def all_bitstrings(n: int):
    return itertools.product((0, 1), repeat=n)
