"""Device-side provers: the honest quantum device and scripted cheats.

The honest prover exists in two modes. "collapsed" samples the image y
classically per coordinate and tracks only the logical qubit that survives
the Hadamard d-measurement (a basis state for injective coordinates, a
phase state (|0> + (-1)^h |1>)/sqrt(2) for claw coordinates); the CZ layer
and the final question-dependent measurement are then simulated on 2-qubit
pair states. "fullsim" builds the per-coordinate superposition
sum_{b,x} |b>|x>|f_b(x)> explicitly and Born-measures every step; it is the
cross-validation oracle for the collapsed fast path and is budget-limited.

Cheat provers: ClassicalGuess holds no qubits and guesses unknown equation
bits; BitFlip(p) wraps the honest prover and flips answer bits; WrongBasis
swaps the q=0 and q=1 measurement bases.
"""
from __future__ import annotations

import numpy as np

from . import entcf, protocol, qsim
from .errors import BudgetError, ContractError, ParameterError

COLLAPSED = "collapsed"
FULLSIM = "fullsim"

_COMP = "computational"
_HAD = "hadamard"

# 2-dim qubit vectors used by the collapsed path.
_PHASE = {
    0: np.array([1.0, 1.0]) / np.sqrt(2.0),
    1: np.array([1.0, -1.0]) / np.sqrt(2.0),
}


def question_bases(kind: str, n: int, q: int, swap_01: bool = False) -> list[str]:
    """Per-qubit measurement basis for question q.

    Self-test (2n qubits): q=0 all computational, q=1 all Hadamard, q=2
    first n computational / last n Hadamard, q=3 the reverse. Dimension
    test (n qubits): q=0 computational, q=1 Hadamard. swap_01 exchanges the
    q=0 and q=1 assignments (the WrongBasis cheat).
    """
    if kind == "selftest":
        if q == 0:
            bases = [_COMP] * (2 * n)
        elif q == 1:
            bases = [_HAD] * (2 * n)
        elif q == 2:
            bases = [_COMP] * n + [_HAD] * n
        elif q == 3:
            bases = [_HAD] * n + [_COMP] * n
        else:
            raise ParameterError(f"bad question {q}")
    else:
        if q not in (0, 1):
            raise ParameterError(f"bad question {q}")
        bases = [_COMP if q == 0 else _HAD] * n
    if swap_01 and q in (0, 1):
        flip = {_COMP: _HAD, _HAD: _COMP}
        bases = [flip[b] for b in bases]
    return bases


def measure_qubit_vector(vec: np.ndarray, basis: str, rng: np.random.Generator) -> int:
    state = qsim.StateVector(vec, [("q", 2)], normalize=True)
    outcome, _ = state.measure("q", basis, rng)
    return outcome


def measure_pair(
    vec_i: np.ndarray,
    vec_j: np.ndarray,
    basis_i: str,
    basis_j: str,
    rng: np.random.Generator,
    apply_cz: bool = True,
) -> tuple[int, int]:
    """CZ (optionally) then per-qubit measurement on a 2-qubit product input."""
    amps = np.kron(vec_i, vec_j)
    state = qsim.StateVector(amps, [("i", 2), ("j", 2)], normalize=True)
    if apply_cz:
        state = qsim.controlled_z(state, "i", "j")
    out_i, state = state.measure("i", basis_i, rng)
    out_j, _ = state.measure("j", basis_j, rng)
    return out_i, out_j


class DeviceInterface:
    """Message-driven prover. handle() consumes one verifier message and
    returns the reply (None once a Verdict arrives)."""

    def __init__(self, kind: str, rng: np.random.Generator):
        if kind not in ("selftest", "dimtest"):
            raise ParameterError(f"unknown protocol kind {kind!r}")
        self.kind = kind
        self.rng = rng
        self._expect = "keys"
        self.verdict = None

    def handle(self, message):
        if isinstance(message, protocol.Keys):
            self._require("keys")
            self._expect = "round"
            return protocol.Images(y=tuple(self.on_keys(message.keys)))
        if isinstance(message, protocol.RoundType):
            self._require("round")
            if message.kind == protocol.PREIMAGE:
                self._expect = "verdict"
                b, x = self.on_preimage()
                return protocol.PreimageAnswer(b=tuple(b), x=tuple(x))
            self._expect = "question"
            return protocol.HadamardD(d=tuple(self.on_hadamard()))
        if isinstance(message, protocol.Question):
            self._require("question")
            self._expect = "verdict"
            return protocol.FinalAnswer(v=tuple(self.on_question(message.q)))
        if isinstance(message, protocol.Verdict):
            self.verdict = message
            self._expect = "done"
            return None
        raise ContractError(f"unexpected message {type(message).__name__}")

    def _require(self, phase: str):
        if self._expect != phase:
            raise ContractError(f"out-of-order message (expected {self._expect})")

    # hooks -----------------------------------------------------------------
    def on_keys(self, keys):
        raise NotImplementedError

    def on_preimage(self):
        raise NotImplementedError

    def on_hadamard(self):
        raise NotImplementedError

    def on_question(self, q: int):
        raise NotImplementedError


class HonestProver(DeviceInterface):
    def __init__(
        self,
        kind: str,
        rng: np.random.Generator,
        mode: str = COLLAPSED,
        budget: int = 2**20,
    ):
        super().__init__(kind, rng)
        if mode not in (COLLAPSED, FULLSIM):
            raise ParameterError(f"unknown prover mode {mode!r}")
        self.mode = mode
        self.budget = budget
        self.keys = None
        self.records = None  # per coordinate: list[(b, x)] preimage pairs of y
        self.y = None
        self.d = None
        self.qubits = None  # per coordinate: 2-dim vector after d-measurement
        self._full_states = None

    # -- keys round ----------------------------------------------------------
    def on_keys(self, keys):
        self.keys = list(keys)
        if self.mode == COLLAPSED:
            self.y = [self._sample_y_collapsed(k) for k in self.keys]
        else:
            self._check_fullsim_budget()
            self._full_states = []
            self.y = []
            for key in self.keys:
                y, state = self._sample_y_fullsim(key)
                self.y.append(y)
                self._full_states.append(state)
        self.records = [entcf.preimages(key, y) for key, y in zip(self.keys, self.y)]
        return self.y

    def _sample_y_collapsed(self, key):
        b = int(self.rng.integers(2))
        x = int(self.rng.integers(2 ** key.params.w))
        return entcf.forward_sample(key, b, x, self.rng)

    def _check_fullsim_budget(self):
        params = self.keys[0].params
        if params.backend == "toylwe" and len(self.keys) > 1:
            raise BudgetError("fullsim with a toylwe backend handles one coordinate only")
        for key in self.keys:
            n_images = len(self._image_labels(key))
            if 2 ** (1 + key.params.w) * n_images > self.budget:
                raise BudgetError("fullsim coordinate exceeds the simulator budget")

    @staticmethod
    def _image_labels(key) -> list:
        labels = set()
        for b in (0, 1):
            for x in range(2 ** key.params.w):
                labels.update(entcf.support(key, b, x))
        return sorted(labels)

    def _sample_y_fullsim(self, key):
        labels = self._image_labels(key)
        index = {y: i for i, y in enumerate(labels)}
        w = key.params.w
        tens = np.zeros((2, 2**w, len(labels)), dtype=complex)
        for b in (0, 1):
            for x in range(2**w):
                supp = entcf.support(key, b, x)
                amp = 1.0 / np.sqrt(2.0 * 2**w * len(supp))
                for y in supp:
                    tens[b, x, index[y]] += amp
        state = qsim.StateVector(
            tens, [("b", 2), ("x", 2**w), ("y", len(labels))], normalize=True
        )
        outcome, state = state.measure("y", _COMP, self.rng)
        return labels[outcome], state

    # -- preimage round --------------------------------------------------------
    def on_preimage(self):
        if self.records is None:
            raise ContractError("preimage answer requested before keys")
        bs, xs = [], []
        if self.mode == FULLSIM:
            for i, state in enumerate(self._full_states):
                b, state = state.measure("b", _COMP, self.rng)
                x, _ = state.measure("x", _COMP, self.rng)
                bs.append(b)
                xs.append(x)
            return bs, xs
        for pairs in self.records:
            b, x = pairs[int(self.rng.integers(len(pairs)))] if len(pairs) > 1 else pairs[0]
            bs.append(b)
            xs.append(x)
        return bs, xs

    # -- hadamard round ----------------------------------------------------------
    def on_hadamard(self):
        if self.records is None:
            raise ContractError("hadamard answer requested before keys")
        self.d = []
        self.qubits = []
        if self.mode == FULLSIM:
            for state in self._full_states:
                d, state = state.measure("x", _HAD, self.rng)
                self.d.append(d)
                self.qubits.append(state.amps.copy())
            return self.d
        for key, pairs in zip(self.keys, self.records):
            d = int(self.rng.integers(2 ** key.params.w))
            self.d.append(d)
            if len(pairs) == 1:
                b, _ = pairs[0]
                self.qubits.append(qsim.basis_vector(2, b).real)
            else:
                (_, x0), (_, x1) = sorted(pairs)
                # Post-measurement phase: (-1)^{d.x0}|0> + (-1)^{d.x1}|1>,
                # i.e. h = d.(x0 xor x1) up to a global sign.
                h = entcf.parity(d & (x0 ^ x1))
                self.qubits.append(_PHASE[h])
        return self.d

    # -- final answer ---------------------------------------------------------
    def on_question(self, q: int):
        if self.qubits is None:
            raise ContractError("question answered before the hadamard round")
        return self._measure_answer(q, swap_01=False)

    def _measure_answer(self, q: int, swap_01: bool):
        n_coords = len(self.qubits)
        bases = question_bases(self.kind, n_coords // 2 if self.kind == "selftest" else n_coords, q, swap_01)
        v = [None] * n_coords
        if self.kind == "selftest":
            n = n_coords // 2
            for i in range(n):
                v[i], v[n + i] = measure_pair(
                    self.qubits[i], self.qubits[n + i], bases[i], bases[n + i], self.rng
                )
        else:
            for i in range(n_coords):
                v[i] = measure_qubit_vector(self.qubits[i], bases[i], self.rng)
        return v


class WrongBasisProver(HonestProver):
    """Honest until the last step, then measures q=0 in the Hadamard basis and
    q=1 in the computational basis."""

    def on_question(self, q: int):
        if self.qubits is None:
            raise ContractError("question answered before the hadamard round")
        return self._measure_answer(q, swap_01=True)


class BitFlipProver(DeviceInterface):
    """Wraps an honest prover; each answer bit v_i is flipped independently
    with probability p. The flip draws happen after every honest draw, so
    p = 0 is transcript-identical to the honest prover under the same seed."""

    def __init__(self, kind: str, rng: np.random.Generator, p: float, mode: str = COLLAPSED):
        if not 0.0 <= p <= 1.0:
            raise ParameterError("flip probability must lie in [0, 1]")
        super().__init__(kind, rng)
        self.p = p
        self.inner = HonestProver(kind, rng, mode=mode)

    def on_keys(self, keys):
        return self.inner.on_keys(keys)

    def on_preimage(self):
        return self.inner.on_preimage()

    def on_hadamard(self):
        return self.inner.on_hadamard()

    def on_question(self, q: int):
        v = self.inner.on_question(q)
        flips = self.rng.random(len(v)) < self.p
        return [int(bit) ^ int(flip) for bit, flip in zip(v, flips)]


class ClassicalGuessProver(DeviceInterface):
    """Holds no quantum state: picks (b_i, x_i) itself, forwards y_i = f(b_i, x_i),
    answers the preimage round perfectly, sends a nonzero d on the Hadamard
    round, and answers v_i = b_i (so every unknown equation bit is a uniform
    guess while b-hat checks on injective coordinates always pass)."""

    def __init__(self, kind: str, rng: np.random.Generator):
        super().__init__(kind, rng)
        self.keys = None
        self.b = None
        self.x = None

    def on_keys(self, keys):
        self.keys = list(keys)
        self.b, self.x, y = [], [], []
        for key in self.keys:
            b = int(self.rng.integers(2))
            x = int(self.rng.integers(2 ** key.params.w))
            self.b.append(b)
            self.x.append(x)
            y.append(entcf.forward_sample(key, b, x, self.rng))
        return y

    def on_preimage(self):
        return list(self.b), list(self.x)

    def on_hadamard(self):
        # nonzero d keeps h-hat defined, so rejections reflect wrong guesses
        # rather than undecodable-d events.
        return [1 + int(self.rng.integers(2 ** key.params.w - 1)) for key in self.keys]

    def on_question(self, q: int):
        return list(self.b)


def adversary(kind: str, protocol_kind: str, rng: np.random.Generator, p: float = 0.0) -> DeviceInterface:
    if kind == "classical":
        return ClassicalGuessProver(protocol_kind, rng)
    if kind == "bitflip":
        return BitFlipProver(protocol_kind, rng, p)
    if kind == "wrongbasis":
        return WrongBasisProver(protocol_kind, rng)
    raise ParameterError(f"unknown adversary kind {kind!r}")


def make_prover(spec: str, protocol_kind: str, rng: np.random.Generator) -> DeviceInterface:
    """Parse a prover spec string: honest, honest-fullsim, classical,
    bitflip=P, wrongbasis."""
    if spec == "honest":
        return HonestProver(protocol_kind, rng, mode=COLLAPSED)
    if spec == "honest-fullsim":
        return HonestProver(protocol_kind, rng, mode=FULLSIM)
    if spec.startswith("bitflip"):
        p = float(spec.split("=", 1)[1]) if "=" in spec else 0.0
        return adversary("bitflip", protocol_kind, rng, p)
    if spec == "classical":
        return adversary("classical", protocol_kind, rng)
    if spec == "wrongbasis":
        return adversary("wrongbasis", protocol_kind, rng)
    raise ParameterError(f"unknown prover spec {spec!r}")
