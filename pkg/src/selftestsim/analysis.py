"""White-box device analysis.

Builds explicit device models (states, preimage measurement, d-measurement,
question measurements) as block-diagonal operators over the classical image
and equation registers, then computes the trace-based diagnostics: the gamma
quantities and failure probabilities with their inequality suite, the swap
isometry with its exact identities, soundness distances against the ideal
target states, the rank proposition, and the quantum-dimension certificate.

Conventions: a model's quantum space H_D is laid out as (logical qubits,
x registers, optional environment registers). Classical labels are (y, d)
tuples; every state block is a pure (unnormalized) vector whose squared norm
is the block's probability mass. theta uses the protocol module's encoding.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict

import numpy as np

from . import entcf, protocol, qsim
from .errors import ModelError, ParameterError
from .protocol import THETA_ALL_G, THETA_DIAMOND, partner
from .prover import question_bases

_DIM_BUDGET = 2**12
ATOL = 1e-10


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

def bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def all_bit_tuples(n: int):
    return list(itertools.product((0, 1), repeat=n))


def qubit_basis_vector(basis: str, bit: int) -> np.ndarray:
    if basis == "computational":
        return qsim.basis_vector(2, bit)
    v = np.array([1.0, -1.0 if bit else 1.0], dtype=complex) / np.sqrt(2.0)
    return v


def pattern_vector(bases: list[str], u) -> np.ndarray:
    vec = np.array([1.0], dtype=complex)
    for basis, bit in zip(bases, u):
        vec = np.kron(vec, qubit_basis_vector(basis, bit))
    return vec


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _quad(blocks: np.ndarray, op: np.ndarray) -> np.ndarray:
    """<b|op|b> for each row b of blocks."""
    return np.einsum("bd,de,be->b", blocks.conj(), op, blocks).real


# ---------------------------------------------------------------------------
# Device model
# ---------------------------------------------------------------------------

class DeviceModel:
    """Block-diagonal device description.

    psi[theta]: dict y -> pure vector on H_D (squared norm = Pr[y]).
    p_proj[q]: dict u -> projector on H_D (zero projectors omitted).
    The d-measurement comes in two flavors: a per-coordinate product form
    (coord_m(theta, i, y_i) -> dict d_i -> unit vector on the x register,
    used by the honest family) or an explicit y-independent m_proj[theta]:
    dict d -> projector. The preimage measurement is either the marker
    "computational" (product basis on qubits and x registers) or an explicit
    dict (b, x) -> projector.
    """

    def __init__(
        self,
        protocol_kind: str,
        n: int,
        w: int,
        logical: int,
        x_dim: int,
        env_dim: int,
        thetas: list,
        keys: dict,
        trapdoors: dict,
        psi: dict,
        p_proj: dict,
        coord_m=None,
        m_proj: dict | None = None,
        pi_proj="computational",
        name: str = "model",
        budget: int = _DIM_BUDGET,
    ):
        self.protocol = protocol_kind
        self.n = n
        self.w = w
        self.logical = logical
        self.x_dim = x_dim
        self.env_dim = env_dim
        self.dim = 2**logical * x_dim * env_dim
        if self.dim > budget:
            raise ModelError(f"model dimension {self.dim} exceeds budget {budget}")
        self.thetas = list(thetas)
        self.keys = keys
        self.trapdoors = trapdoors
        self.psi = psi
        self.p_proj = p_proj
        self.coord_m = coord_m
        self.m_proj = m_proj
        self.pi_proj = pi_proj
        self.name = name
        self._obs_cache: dict = {}
        self._sigma_cache: dict = {}

    # -- observables ---------------------------------------------------------
    def _observable_from(self, q: int, i: int) -> np.ndarray:
        op = np.zeros((self.dim, self.dim), dtype=complex)
        for u, proj in self.p_proj[q].items():
            op += (-1) ** u[i] * proj
        return op

    def Z(self, i: int) -> np.ndarray:
        return self._obs("Z", i, 0)

    def X(self, i: int) -> np.ndarray:
        return self._obs("X", i, 1)

    def Zt(self, i: int) -> np.ndarray:
        return self._obs("Zt", i, 2 if i < self.n else 3)

    def Xt(self, i: int) -> np.ndarray:
        return self._obs("Xt", i, 3 if i < self.n else 2)

    def _obs(self, kind: str, i: int, q: int) -> np.ndarray:
        key = (kind, i)
        if key not in self._obs_cache:
            self._obs_cache[key] = self._observable_from(q, i)
        return self._obs_cache[key]

    # -- sigma blocks ----------------------------------------------------------
    def sigma_blocks(self, theta) -> dict:
        """dict (y, d) -> pure vector, the post-d-measurement blocks."""
        if theta in self._sigma_cache:
            return self._sigma_cache[theta]
        out = {}
        if self.coord_m is not None:
            n_coords = self.logical
            for y, block in self.psi[theta].items():
                per_coord = [self.coord_m(theta, i, y[i]) for i in range(n_coords)]
                shape = (2,) * n_coords + (2**self.w,) * n_coords
                if self.env_dim > 1:
                    shape += (self.env_dim,)
                tens = block.reshape(shape)
                for combo in itertools.product(*[sorted(m.items()) for m in per_coord]):
                    d = tuple(c[0] for c in combo)
                    outs = [c[1] for c in combo]
                    t = tens
                    for o in outs:
                        t = np.tensordot(t, o.conj(), axes=([n_coords], [0]))
                    if np.vdot(t, t).real < ATOL**2:
                        continue
                    x_vec = outs[0]
                    for o in outs[1:]:
                        x_vec = np.kron(x_vec, o)
                    rest = t.reshape(2**n_coords, self.env_dim)
                    full = np.einsum("qe,x->qxe", rest, x_vec)
                    out[(y, d)] = full.ravel()
        else:
            for y, block in self.psi[theta].items():
                for d, proj in self.m_proj[theta].items():
                    vec = proj @ block
                    if np.vdot(vec, vec).real < ATOL**2:
                        continue
                    out[(y, d)] = vec
        self._sigma_cache[theta] = out
        return out

    # -- decoding ------------------------------------------------------------
    def decode_v(self, theta, y, d):
        """The unique v with (y, d) in Sigma(theta, v), or None."""
        traps = self.trapdoors[theta]
        n_coords = len(traps)
        bhat = [
            entcf.decode_b(t, yi) if t.family == entcf.FAMILY_G else None
            for t, yi in zip(traps, y)
        ]
        if theta == THETA_ALL_G:
            return None if any(b is None for b in bhat) else tuple(bhat)
        if theta == THETA_DIAMOND:
            v = [None] * n_coords
            for i in range(n_coords):
                h = entcf.decode_h(traps[i], y[i], d[i])
                if h is None:
                    return None
                v[partner(i, self.n)] = h
            return tuple(v)
        h = entcf.decode_h(traps[theta], y[theta], d[theta])
        if h is None or any(b is None for i, b in enumerate(bhat) if i != theta):
            return None
        v = list(bhat)
        if self.protocol == "selftest":
            v[theta] = h ^ bhat[partner(theta, self.n)]
        else:
            v[theta] = h
        return tuple(v)

    def grouped_sigma(self, theta):
        """(dict v -> dict (y,d) -> vector, residual trace of unassigned blocks)."""
        groups: dict = {}
        residual = 0.0
        for (y, d), vec in self.sigma_blocks(theta).items():
            v = self.decode_v(theta, y, d)
            if v is None:
                residual += np.vdot(vec, vec).real
            else:
                groups.setdefault(v, {})[(y, d)] = vec
        return groups, residual

    # -- preimage test mass ---------------------------------------------------
    def t_theta(self, theta) -> float:
        keys = self.keys[theta]
        total = 0.0
        if self.pi_proj == "computational":
            n_coords = self.logical
            for y, block in self.psi[theta].items():
                tens = block.reshape(2**n_coords, (2**self.w) ** n_coords, self.env_dim)
                for combo in itertools.product(
                    *[entcf.preimages(k, yi) for k, yi in zip(keys, y)]
                ):
                    b_flat = bits_to_int(c[0] for c in combo)
                    x_flat = 0
                    for c in combo:
                        x_flat = x_flat * 2**self.w + c[1]
                    sub = tens[b_flat, x_flat, :]
                    total += np.vdot(sub, sub).real
        else:
            for y, block in self.psi[theta].items():
                for (b, x), proj in self.pi_proj.items():
                    if entcf.chk(keys, y, b, x) == 0:
                        total += _quad(block[None, :], proj)[0]
        return total

    # -- reductions -----------------------------------------------------------
    def registers(self) -> list[tuple[str, int]]:
        regs = [(f"q{i}", 2) for i in range(self.logical)]
        regs += [(f"x{i}", 2**self.w) for i in range(self.logical)]
        if self.env_dim > 1:
            regs.append(("env", self.env_dim))
        return regs

    def logical_marginal(self, blocks: dict) -> np.ndarray:
        """Sum the blocks and trace out everything but the logical qubits."""
        total = np.zeros((self.dim, self.dim), dtype=complex)
        for vec in blocks.values():
            total += np.outer(vec, vec.conj())
        keep = [f"q{i}" for i in range(self.logical)]
        return qsim.partial_trace(total, self.registers(), keep)


# ---------------------------------------------------------------------------
# Honest model construction
# ---------------------------------------------------------------------------

def _coord_y_support(key: entcf.PublicKey, trapdoor: entcf.Trapdoor):
    """(y, weight, state array (2, 2^w)) triples for one honest coordinate."""
    w = key.params.w
    out = []
    if trapdoor.family == entcf.FAMILY_G:
        for y in entcf.image_iter(key):
            b = entcf.decode_b(trapdoor, y)
            x = entcf.decode_x(b, trapdoor, y)
            arr = np.zeros((2, 2**w), dtype=complex)
            arr[b, x] = 1.0
            out.append((y, 2.0 ** -(w + 1), arr))
    else:
        seen = set()
        for x in range(2**w):
            (y,) = entcf.support(key, 0, x)
            if y in seen:
                continue
            seen.add(y)
            x0 = entcf.decode_x(0, trapdoor, y)
            x1 = entcf.decode_x(1, trapdoor, y)
            arr = np.zeros((2, 2**w), dtype=complex)
            arr[0, x0] = arr[1, x1] = 1.0 / np.sqrt(2.0)
            out.append((y, 2.0**-w, arr))
    return out


def _claw_basis(w: int, x0: int, x1: int) -> dict:
    """d-labelled orthonormal basis of the x register for a claw coordinate.

    The claw superposition has support only on the two claw-basis vectors, so
    labelling them with the smallest d of each h-parity gives a measurement
    with zero mass on undecodable outcomes while reproducing the decoded
    h-hat statistics exactly.
    """
    delta = x0 ^ x1
    d_plus = next(d for d in range(1, 2**w) if entcf.parity(d & delta) == 0)
    d_minus = next(d for d in range(2**w) if entcf.parity(d & delta) == 1)
    out = {}
    plus = np.zeros(2**w, dtype=complex)
    plus[x0] = plus[x1] = 1.0 / np.sqrt(2.0)
    minus = np.zeros(2**w, dtype=complex)
    minus[x0], minus[x1] = 1.0 / np.sqrt(2.0), -1.0 / np.sqrt(2.0)
    out[d_plus] = plus
    out[d_minus] = minus
    rest_d = [d for d in range(2**w) if d not in (d_plus, d_minus)]
    rest_x = [x for x in range(2**w) if x not in (x0, x1)]
    for d, x in zip(rest_d, rest_x):
        e = np.zeros(2**w, dtype=complex)
        e[x] = 1.0
        out[d] = e
    return out


def _hadamard_outcomes(w: int) -> dict:
    h = qsim.hadamard_matrix(w)
    return {d: h[d].astype(complex) for d in range(2**w)}


def _cz_signs(n: int) -> np.ndarray:
    """(-1)^(sum_i q_i q_(N+i)) over the 2N-qubit computational basis."""
    signs = np.ones(2 ** (2 * n))
    for idx in range(2 ** (2 * n)):
        bits = [(idx >> (2 * n - 1 - j)) & 1 for j in range(2 * n)]
        par = sum(bits[i] & bits[n + i] for i in range(n)) % 2
        if par:
            signs[idx] = -1.0
    return signs


def model_thetas(protocol_kind: str, n: int) -> list:
    if protocol_kind == "selftest":
        return list(range(2 * n)) + [THETA_ALL_G, THETA_DIAMOND]
    return list(range(n)) + [THETA_ALL_G]


def build_honest_model(
    config: protocol.SelfTestConfig | protocol.DimTestConfig,
    protocol_kind: str,
    rng: np.random.Generator,
    budget: int = _DIM_BUDGET,
) -> DeviceModel:
    params = config.entcf
    if params.backend != "ideal":
        raise ModelError("white-box analysis supports the ideal backend only")
    n, w = config.N, params.w
    logical = 2 * n if protocol_kind == "selftest" else n
    if 2**logical * (2**w) ** logical > budget:
        raise ModelError("honest model dimension exceeds the analysis budget")
    thetas = model_thetas(protocol_kind, n)
    families = {
        theta: (
            protocol.selftest_families(theta, n)
            if protocol_kind == "selftest"
            else protocol.dimtest_families(theta, n)
        )
        for theta in thetas
    }
    keys, trapdoors, coord_support = {}, {}, {}
    for theta in thetas:
        ks, ts, sup = [], [], []
        for family in families[theta]:
            key, trap = entcf.gen_keypair(family, params, rng)
            ks.append(key)
            ts.append(trap)
            sup.append(_coord_y_support(key, trap))
        keys[theta], trapdoors[theta], coord_support[theta] = tuple(ks), tuple(ts), sup

    cz = _cz_signs(n) if protocol_kind == "selftest" else None
    x_dim = (2**w) ** logical
    psi = {}
    for theta in thetas:
        blocks = {}
        for combo in itertools.product(*coord_support[theta]):
            y = tuple(c[0] for c in combo)
            weight = np.prod([c[1] for c in combo])
            tens = combo[0][2]
            for c in combo[1:]:
                tens = np.multiply.outer(tens, c[2])
            # axes are (q0, x0, q1, x1, ...); reorder to qubits then x parts
            order = list(range(0, 2 * logical, 2)) + list(range(1, 2 * logical, 2))
            tens = np.transpose(tens, order).reshape(2**logical, x_dim)
            if cz is not None:
                tens = tens * cz[:, None]
            blocks[y] = np.sqrt(weight) * tens.ravel()
        psi[theta] = blocks

    claw_cache: dict = {}

    def coord_m(theta, i, y_i):
        trap = trapdoors[theta][i]
        if trap.family == entcf.FAMILY_G:
            return _hadamard_outcomes(w)
        cache_key = (theta, i, y_i)
        if cache_key not in claw_cache:
            x0 = entcf.decode_x(0, trap, y_i)
            x1 = entcf.decode_x(1, trap, y_i)
            claw_cache[cache_key] = _claw_basis(w, x0, x1)
        return claw_cache[cache_key]

    questions = (0, 1, 2, 3) if protocol_kind == "selftest" else (0, 1)
    eye_x = np.eye(x_dim)
    p_proj = {}
    for q in questions:
        bases = question_bases(protocol_kind, n, q)
        p_proj[q] = {}
        for u in all_bit_tuples(logical):
            vec = pattern_vector(bases, u)
            p_proj[q][u] = np.kron(np.outer(vec, vec.conj()), eye_x)

    return DeviceModel(
        protocol_kind,
        n,
        w,
        logical,
        x_dim,
        1,
        thetas,
        keys,
        trapdoors,
        psi,
        p_proj,
        coord_m=coord_m,
        name="honest",
        budget=budget,
    )


def build_bitflip_model(honest: DeviceModel, p: float, budget: int = _DIM_BUDGET) -> DeviceModel:
    """Dilate the answer-bit flips into an environment register: the flip
    pattern e lives in a product state and P_q^u reads the pattern-shifted
    honest projector on each branch."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError("flip probability must lie in [0, 1]")
    logical = honest.logical
    anc = np.array([np.sqrt(1.0 - p), np.sqrt(p)], dtype=complex)
    env = anc
    for _ in range(logical - 1):
        env = np.kron(env, anc)
    env_dim = 2**logical
    psi = {
        theta: {y: np.kron(vec, env) for y, vec in honest.psi[theta].items()}
        for theta in honest.thetas
    }
    e_tuples = all_bit_tuples(logical)
    p_proj = {}
    for q, projs in honest.p_proj.items():
        p_proj[q] = {}
        for u in projs:
            mat = np.zeros((honest.dim * env_dim,) * 2, dtype=complex)
            for e in e_tuples:
                shifted = tuple(ui ^ ei for ui, ei in zip(u, e))
                e_vec = pattern_vector(["computational"] * logical, e)
                mat += np.kron(projs[shifted], np.outer(e_vec, e_vec.conj()))
            p_proj[q][u] = mat

    def coord_m(theta, i, y_i):
        return honest.coord_m(theta, i, y_i)

    return DeviceModel(
        honest.protocol,
        honest.n,
        honest.w,
        logical,
        honest.x_dim,
        env_dim,
        honest.thetas,
        honest.keys,
        honest.trapdoors,
        psi,
        p_proj,
        coord_m=coord_m,
        name=f"bitflip({p})",
        budget=budget,
    )


def build_wrongbasis_model(honest: DeviceModel) -> DeviceModel:
    p_proj = dict(honest.p_proj)
    p_proj[0], p_proj[1] = honest.p_proj[1], honest.p_proj[0]
    return DeviceModel(
        honest.protocol,
        honest.n,
        honest.w,
        honest.logical,
        honest.x_dim,
        honest.env_dim,
        honest.thetas,
        honest.keys,
        honest.trapdoors,
        honest.psi,
        p_proj,
        coord_m=honest.coord_m,
        m_proj=honest.m_proj,
        pi_proj=honest.pi_proj,
        name="wrongbasis",
    )


def build_random_model(
    config: protocol.SelfTestConfig,
    rng: np.random.Generator,
    n_states: int = 4,
) -> DeviceModel:
    """Random projective device: Haar-random measurement bases assigned to
    random labels, random pure state blocks on a handful of valid y tuples."""
    params = config.entcf
    n, w = config.N, params.w
    logical = 2 * n
    dim = 2**logical
    thetas = model_thetas("selftest", n)
    keys, trapdoors, psi, m_proj = {}, {}, {}, {}
    for theta in thetas:
        ks, ts = [], []
        for family in protocol.selftest_families(theta, n):
            key, trap = entcf.gen_keypair(family, params, rng)
            ks.append(key)
            ts.append(trap)
        keys[theta], trapdoors[theta] = tuple(ks), tuple(ts)
        y_lists = [sorted(entcf.image_iter(k)) for k in ks]
        chosen = set()
        while len(chosen) < n_states:
            chosen.add(tuple(ys[rng.integers(len(ys))] for ys in y_lists))
        weights = rng.dirichlet(np.ones(len(chosen)))
        blocks = {}
        for y, wt in zip(sorted(chosen), weights):
            vec = rng.normal(size=dim) + 1j * rng.normal(size=dim)
            blocks[y] = np.sqrt(wt) * vec / np.linalg.norm(vec)
        psi[theta] = blocks
        basis = haar_unitary(dim, rng)
        d_labels = set()
        while len(d_labels) < dim:
            d_labels.add(tuple(int(rng.integers(2**w)) for _ in range(logical)))
        m_proj[theta] = {
            d: np.outer(basis[:, j], basis[:, j].conj())
            for j, d in enumerate(sorted(d_labels))
        }
    p_proj = {}
    for q in range(4):
        basis = haar_unitary(dim, rng)
        p_proj[q] = {
            u: np.outer(basis[:, j], basis[:, j].conj())
            for j, u in enumerate(all_bit_tuples(logical))
        }
    basis = haar_unitary(dim, rng)
    labels = set()
    while len(labels) < dim:
        b = tuple(int(rng.integers(2)) for _ in range(logical))
        x = tuple(int(rng.integers(2**w)) for _ in range(logical))
        labels.add((b, x))
    pi_proj = {
        lab: np.outer(basis[:, j], basis[:, j].conj())
        for j, lab in enumerate(sorted(labels))
    }
    return DeviceModel(
        "selftest",
        n,
        w,
        logical,
        1,
        1,
        thetas,
        keys,
        trapdoors,
        psi,
        p_proj,
        m_proj=m_proj,
        pi_proj=pi_proj,
        name="random",
    )


def build_classical_model(
    config: protocol.DimTestConfig, rng: np.random.Generator
) -> DeviceModel:
    """Deterministic-table device for the dimension test: the device picks
    preimages classically, answers with the decoded bits, and every state and
    measurement is diagonal in one fixed basis. It passes the protocol, but
    its post-measurement states are pure, so the certified dimension
    collapses."""
    params = config.entcf
    n, w = config.N, params.w
    logical = n
    dim = 2**logical
    thetas = model_thetas("dimtest", n)
    keys, trapdoors, psi, m_proj = {}, {}, {}, {}
    basis = np.eye(dim, dtype=complex)
    for theta in thetas:
        ks, ts = [], []
        for family in protocol.dimtest_families(theta, n):
            key, trap = entcf.gen_keypair(family, params, rng)
            ks.append(key)
            ts.append(trap)
        keys[theta], trapdoors[theta] = tuple(ks), tuple(ts)
        y, d, v = [], [], []
        for i, trap in enumerate(ts):
            if trap.family == entcf.FAMILY_G:
                bit = int(rng.integers(2))
                x = int(rng.integers(2**w))
                y.append(entcf.forward_sample(ks[i], bit, x, rng))
                d.append(int(rng.integers(1, 2**w)))
                v.append(bit)
            else:
                x = int(rng.integers(2**w))
                y.append(entcf.forward_sample(ks[i], 0, x, rng))
                d.append(int(rng.integers(1, 2**w)))
                v.append(entcf.decode_h(trap, y[-1], d[-1]))
        j = bits_to_int(v)
        psi[theta] = {tuple(y): basis[:, j].copy()}
        m_proj[theta] = {tuple(d): np.eye(dim, dtype=complex)}
    p_proj = {
        q: {
            u: np.outer(basis[:, j], basis[:, j].conj())
            for j, u in enumerate(all_bit_tuples(logical))
        }
        for q in (0, 1)
    }
    return DeviceModel(
        "dimtest",
        n,
        w,
        logical,
        1,
        1,
        thetas,
        keys,
        trapdoors,
        psi,
        p_proj,
        m_proj=m_proj,
        pi_proj={},
        name="classical",
    )


# ---------------------------------------------------------------------------
# sigma, gamma, failure
# ---------------------------------------------------------------------------

def sigma_theta_v(model: DeviceModel, theta) -> dict:
    """Map v -> CQOperator of post-d blocks restricted to Sigma(theta, v)."""
    groups, _ = model.grouped_sigma(theta)
    out = {}
    for v, blocks in groups.items():
        op = qsim.CQOperator(model.dim)
        for label, vec in blocks.items():
            op.set_block(label, vec)
        out[v] = op
    return out


def sigma_residual(model: DeviceModel, theta) -> float:
    """trace norm of sigma^theta minus the sum of its Sigma(theta, v) parts."""
    _, residual = model.grouped_sigma(theta)
    return residual


@dataclass
class GammaReport:
    gamma_P: float
    gamma_T0: float
    gamma_T1: float
    gamma_T0_tilde: float
    gamma_T0_tilde_prime: float
    gamma_T1_tilde: float
    gamma_T: float
    gamma_diamond_0: float
    gamma_diamond_1: float
    gamma_diamond: float
    t_table: dict = field(default_factory=dict)
    r_table: dict = field(default_factory=dict)
    s_table: dict = field(default_factory=dict)
    r_tilde_table: dict = field(default_factory=dict)
    s_tilde_table: dict = field(default_factory=dict)
    r_diamond_table: dict = field(default_factory=dict)
    s_diamond_table: dict = field(default_factory=dict)


@dataclass
class FailureReport:
    eps_P: float
    eps_H: dict
    eps: float


def _stack_groups(model: DeviceModel, theta):
    """(blocks array, v array) for the Sigma-assigned blocks of theta."""
    groups, _ = model.grouped_sigma(theta)
    vecs, vs = [], []
    for v in sorted(groups):
        for label in sorted(groups[v]):
            vecs.append(groups[v][label])
            vs.append(v)
    if not vecs:
        return np.zeros((0, model.dim), dtype=complex), np.zeros((0, model.logical), dtype=int)
    return np.array(vecs), np.array(vs)


def gamma_report(model: DeviceModel) -> GammaReport:
    if model.protocol != "selftest":
        raise ModelError("gamma quantities are defined for the self-test model")
    n = model.n
    two_n = 2 * n
    t_table = {theta: model.t_theta(theta) for theta in model.thetas}
    gamma_p = 1.0 - min(t_table.values())

    stacked = {theta: _stack_groups(model, theta) for theta in model.thetas}

    def signed_mass(theta, op: np.ndarray, bit_index: int) -> float:
        blocks, vs = stacked[theta]
        if blocks.shape[0] == 0:
            return 0.0
        n2 = np.einsum("bd,bd->b", blocks.conj(), blocks).real
        quad = _quad(blocks, op)
        signs = 1.0 - 2.0 * vs[:, bit_index]
        return float(np.sum((n2 + signs * quad) / 2.0))

    r_table, s_table, rt_table, st_table = {}, {}, {}, {}
    non_diamond = [t for t in model.thetas if t != THETA_DIAMOND]
    for theta in non_diamond:
        for i in range(two_n):
            r_table[(theta, i)] = signed_mass(theta, model.Z(i), i)
            rt_table[(theta, i)] = signed_mass(theta, model.Zt(i), i)
        if theta != THETA_ALL_G:
            s_table[(theta, theta)] = signed_mass(theta, model.X(theta), theta)
            st_table[(theta, theta)] = signed_mass(theta, model.Xt(theta), theta)

    rd_table, sd_table = {}, {}
    for i in range(n):
        zx = model.Zt(i) @ model.Xt(n + i)
        xz = model.Xt(i) @ model.Zt(n + i)
        rd_table[i] = signed_mass(THETA_DIAMOND, zx, i)
        sd_table[i] = signed_mass(THETA_DIAMOND, xz, n + i)

    coords = list(range(two_n))
    gamma_t0 = 1.0 - min(
        r_table[(t, i)] for t in non_diamond for i in coords if i != t
    )
    gamma_t1 = 1.0 - min(s_table[(t, t)] for t in coords)
    gamma_t0t = 1.0 - min(
        rt_table[(t, i)]
        for t in list(range(n)) + [THETA_ALL_G]
        for i in range(n)
        if i != t
    )
    gamma_t0tp = 1.0 - min(
        rt_table[(t, i)]
        for t in list(range(n, two_n)) + [THETA_ALL_G]
        for i in range(n, two_n)
        if i != t
    )
    gamma_t1t = 1.0 - min(st_table[(t, t)] for t in coords)
    gamma_t = max(gamma_t0, gamma_t1, gamma_t0t, gamma_t0tp, gamma_t1t)
    gd0 = 1.0 - min(rd_table.values())
    gd1 = 1.0 - min(sd_table.values())
    return GammaReport(
        gamma_P=gamma_p,
        gamma_T0=gamma_t0,
        gamma_T1=gamma_t1,
        gamma_T0_tilde=gamma_t0t,
        gamma_T0_tilde_prime=gamma_t0tp,
        gamma_T1_tilde=gamma_t1t,
        gamma_T=gamma_t,
        gamma_diamond_0=gd0,
        gamma_diamond_1=gd1,
        gamma_diamond=max(gd0, gd1),
        t_table=t_table,
        r_table=r_table,
        s_table=s_table,
        r_tilde_table=rt_table,
        s_tilde_table=st_table,
        r_diamond_table=rd_table,
        s_diamond_table=sd_table,
    )


def failure_report(model: DeviceModel) -> FailureReport:
    """Exact failure probabilities from the model's block algebra."""
    n_thetas = len(model.thetas)
    eps_p = 1.0 - sum(model.t_theta(theta) for theta in model.thetas) / n_thetas
    verdict_fn = (
        protocol.selftest_verdict if model.protocol == "selftest" else protocol.dimtest_verdict
    )
    questions = sorted(model.p_proj)
    eps_h = {}
    for q in questions:
        accept = 0.0
        for theta in model.thetas:
            traps = model.trapdoors[theta]
            blocks = model.sigma_blocks(theta)
            labels = sorted(blocks)
            vecs = np.array([blocks[lab] for lab in labels])
            quads = {
                u: _quad(vecs, proj) for u, proj in model.p_proj[q].items()
            }
            for idx, (y, d) in enumerate(labels):
                bhat = [
                    entcf.decode_b(t, yi) if t.family == entcf.FAMILY_G else None
                    for t, yi in zip(traps, y)
                ]
                hhat = [
                    entcf.decode_h(t, yi, di) if t.family == entcf.FAMILY_F else None
                    for t, yi, di in zip(traps, y, d)
                ]
                for u in quads:
                    verdict = verdict_fn(model.n, theta, q, u, bhat, hhat)
                    if verdict.accept:
                        accept += quads[u][idx]
        eps_h[q] = 1.0 - accept / n_thetas
    if model.protocol == "selftest":
        eps = eps_p / 2.0 + sum(eps_h.values()) / 8.0
    else:
        eps = eps_p / 2.0 + sum(eps_h.values()) / 4.0
    return FailureReport(eps_P=eps_p, eps_H=eps_h, eps=eps)


def zeta_chi_sums(model: DeviceModel) -> dict:
    """sum_v zeta(i, theta, v) and sum_v chi(theta, v) tables."""
    out = {"zeta": {}, "chi": {}}
    two_n = 2 * model.n
    for theta in model.thetas:
        if theta == THETA_DIAMOND:
            continue
        blocks, vs = _stack_groups(model, theta)
        if blocks.shape[0] == 0:
            for i in range(two_n):
                if i != theta:
                    out["zeta"][(theta, i)] = 0.0
            if theta != THETA_ALL_G:
                out["chi"][theta] = 0.0
            continue
        n2 = np.einsum("bd,bd->b", blocks.conj(), blocks).real
        for i in range(two_n):
            if i == theta:
                continue
            quad = _quad(blocks, model.Z(i))
            signs = 1.0 - 2.0 * vs[:, i]
            out["zeta"][(theta, i)] = float(np.sum(2.0 * n2 - 2.0 * signs * quad))
        if theta != THETA_ALL_G:
            quad = _quad(blocks, model.X(theta))
            signs = 1.0 - 2.0 * vs[:, theta]
            out["chi"][theta] = float(np.sum(2.0 * n2 - 2.0 * signs * quad))
    return out


def check_gamma_bounds(
    gammas: GammaReport, failures: FailureReport, n: int, slack: float = 1e-9
) -> list[dict]:
    """The gamma-versus-failure inequality suite; each entry reports lhs,
    rhs, and whether lhs <= rhs + slack."""
    m = 2 * n + 2
    eh = failures.eps_H
    checks = [
        ("gamma_P <= (2N+2) eps_P", gammas.gamma_P, m * failures.eps_P),
        ("gamma_T0 <= (2N+2) eps_H0", gammas.gamma_T0, m * eh[0]),
        ("gamma_T1 <= (2N+2) eps_H1", gammas.gamma_T1, m * eh[1]),
        (
            "tilde-gamma sum <= (2N+2)(eps_H2 + eps_H3)",
            gammas.gamma_T0_tilde
            + gammas.gamma_T0_tilde_prime
            + gammas.gamma_T1_tilde
            + gammas.gamma_diamond_0
            + gammas.gamma_diamond_1,
            m * (eh[2] + eh[3]),
        ),
        ("gamma_P <= 2(2N+2) eps", gammas.gamma_P, 2 * m * failures.eps),
        ("gamma_T <= 8(2N+2) eps", gammas.gamma_T, 8 * m * failures.eps),
        ("gamma_diamond <= 8(2N+2) eps", gammas.gamma_diamond, 8 * m * failures.eps),
    ]
    return [
        {"name": name, "lhs": lhs, "rhs": rhs, "ok": bool(lhs <= rhs + slack)}
        for name, lhs, rhs in checks
    ]


# ---------------------------------------------------------------------------
# Swap isometry
# ---------------------------------------------------------------------------

def swap_isometry(model: DeviceModel) -> np.ndarray:
    """V = sum_u |u> (x) prod_i X_i^{u_i} prod_j Z_j^{(u_j)}, products in
    ascending index order, as a (2^L * dim, dim) matrix."""
    L = model.logical
    dim = model.dim
    for q in (0, 1):
        for u, proj in model.p_proj[q].items():
            if np.linalg.norm(proj @ proj - proj) > 1e-8:
                raise ModelError("question measurement is not projective")
    v = np.zeros((2**L * dim, dim), dtype=complex)
    eye = np.eye(dim, dtype=complex)
    for u in all_bit_tuples(L):
        term = eye.copy()
        for i in range(L):
            if u[i]:
                term = term @ model.X(i)
        for j in range(L):
            zj = model.Z(j)
            term = term @ ((eye + (1.0 - 2.0 * u[j]) * zj) / 2.0)
        anc = pattern_vector(["computational"] * L, u)
        v += np.kron(anc[:, None], term)
    return v


def swap_circuit(model: DeviceModel) -> np.ndarray:
    """The equivalent circuit: Hadamard layer on the ancilla, controlled-Z_i
    layer, Hadamard layer, controlled-X_i layer, as a full unitary."""
    L = model.logical
    dim = model.dim
    h_layer = np.kron(qsim.hadamard_matrix(L), np.eye(dim))
    u = h_layer.copy()
    for i in range(L):
        u = _controlled_gate(L, dim, i, model.Z(i)) @ u
    u = h_layer @ u
    for i in range(L):
        u = _controlled_gate(L, dim, i, model.X(i)) @ u
    return u


def _controlled_gate(L: int, dim: int, anc_index: int, gate: np.ndarray) -> np.ndarray:
    out = np.zeros((2**L * dim, 2**L * dim), dtype=complex)
    eye = np.eye(dim, dtype=complex)
    for a in range(2**L):
        bit = (a >> (L - 1 - anc_index)) & 1
        block = gate if bit else eye
        out[a * dim : (a + 1) * dim, a * dim : (a + 1) * dim] = block
    return out


def swap_identity_checks(model: DeviceModel, rng: np.random.Generator, trials: int = 3) -> dict:
    """Deviations for V'V = 1, V'(sZ_k x 1)V = Z_k, and circuit agreement."""
    L = model.logical
    dim = model.dim
    v = swap_isometry(model)
    vtv_dev = float(np.max(np.abs(v.conj().T @ v - np.eye(dim))))
    zk_dev = 0.0
    for k in range(L):
        pauli_z = _ancilla_pauli(L, k, np.diag([1.0, -1.0]).astype(complex))
        lhs = v.conj().T @ np.kron(pauli_z, np.eye(dim)) @ v
        zk_dev = max(zk_dev, float(np.max(np.abs(lhs - model.Z(k)))))
    circuit = swap_circuit(model)
    circ_dev = 0.0
    zero = qsim.basis_vector(2**L, 0)
    for _ in range(trials):
        state = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        state /= np.linalg.norm(state)
        lhs = circuit @ np.kron(zero, state)
        circ_dev = max(circ_dev, float(np.max(np.abs(lhs - v @ state))))
    return {"vtv": vtv_dev, "zk": zk_dev, "circuit": circ_dev}


def _ancilla_pauli(L: int, k: int, op2: np.ndarray) -> np.ndarray:
    out = np.array([[1.0]], dtype=complex)
    for i in range(L):
        out = np.kron(out, op2 if i == k else np.eye(2))
    return out


# ---------------------------------------------------------------------------
# tau states and soundness distances
# ---------------------------------------------------------------------------

def tau_vector(protocol_kind: str, n: int, theta, v) -> np.ndarray:
    logical = 2 * n if protocol_kind == "selftest" else n
    if theta == THETA_DIAMOND:
        state = pattern_vector(["hadamard"] * logical, (0,) * logical)
        tens = state.reshape((2,) * logical)
        for idx in np.ndindex(*(2,) * logical):
            par = sum(idx[i] & idx[n + i] for i in range(n)) % 2
            if par:
                tens[idx] *= -1.0
        state = tens.ravel()
        x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        flip = np.array([[1.0]], dtype=complex)
        for bit in v:
            flip = np.kron(flip, x if bit else np.eye(2))
        return flip @ state
    bases = ["computational"] * logical
    if theta != THETA_ALL_G:
        bases[theta] = "hadamard"
    return pattern_vector(bases, v)


def ideal_pattern_projectors(protocol_kind: str, n: int, q: int) -> dict:
    """The ideal question-q measurement on the logical qubits alone."""
    logical = 2 * n if protocol_kind == "selftest" else n
    bases = question_bases(protocol_kind, n, q)
    return {u: pattern_vector(bases, u) for u in all_bit_tuples(logical)}


def soundness_distance(model: DeviceModel, theta) -> dict:
    """Per-v distances sum_v ||V sigma^{theta,v} V' - tau (x) alpha||_1, the
    post-measurement analogues per question, and commutator diagnostics."""
    L = model.logical
    dim = model.dim
    v_iso = swap_isometry(model)
    groups, _ = model.grouped_sigma(theta)
    per_v = {}
    post = {q: 0.0 for q in sorted(model.p_proj)}
    alphas = {}
    for v in sorted(groups):
        tau = tau_vector(model.protocol, model.n, theta, v)
        dist = 0.0
        alpha = {}
        for label, vec in sorted(groups[v].items()):
            lifted = (v_iso @ vec).reshape(2**L, dim)
            a = tau.conj() @ lifted
            alpha[label] = a
            dist += qsim.trace_norm_diff_rank1(
                lifted.ravel(), np.kron(tau, a)
            )
        per_v[v] = dist
        alphas[v] = alpha
        for q in post:
            ideal = ideal_pattern_projectors(model.protocol, model.n, q)
            for label, vec in sorted(groups[v].items()):
                a = alpha[label]
                for u, proj in model.p_proj[q].items():
                    measured = proj @ vec
                    if np.vdot(measured, measured).real < ATOL**2:
                        target_vec = np.kron(ideal[u] * np.vdot(ideal[u], tau), a)
                        # rank-1 trace norm is just the squared vector norm
                        post[q] += float(np.vdot(target_vec, target_vec).real)
                        continue
                    lifted = v_iso @ measured
                    target = np.kron(ideal[u] * np.vdot(ideal[u], tau), a)
                    post[q] += qsim.trace_norm_diff_rank1(lifted, target)
    total = float(sum(per_v.values()))
    sigma_all = qsim.CQOperator(dim)
    for label, vec in model.sigma_blocks(theta).items():
        sigma_all.set_block(label, vec)
    commutators = {}
    anticommutators = {}
    for i in range(L):
        x_i = model.X(i)
        for j in range(L):
            z_j = model.Z(j)
            comm = z_j @ x_i - x_i @ z_j
            commutators[(j, i)] = qsim.state_dep_norm(comm, sigma_all)
        anti = model.Z(i) @ x_i + x_i @ model.Z(i)
        anticommutators[i] = qsim.state_dep_norm(anti, sigma_all)
    return {
        "per_v": per_v,
        "total": total,
        "post_measurement": post,
        "alphas": alphas,
        "commutators": commutators,
        "anticommutators": anticommutators,
    }


# ---------------------------------------------------------------------------
# Rank proposition and the dimension certificate
# ---------------------------------------------------------------------------

def rank_bound_check(u: np.ndarray, rho: np.ndarray, alpha: np.ndarray, n: int):
    """epsilon, numerical rank, and whether rank >= (1 - epsilon) 2^n; also
    verifies the Schmidt-overlap inequality |<a|b>|^2 <= R b^2 on the vec
    vectors underlying the proof."""
    dim = rho.shape[0]
    if u.shape != (2**n * dim, 2**n * dim):
        raise ParameterError("unitary dimension mismatch")
    if np.linalg.norm(u.conj().T @ u - np.eye(2**n * dim)) > 1e-9 * 2**n * dim:
        raise ParameterError("U is not unitary")
    zero = np.zeros((2**n, 2**n), dtype=complex)
    zero[0, 0] = 1.0
    lhs = u @ np.kron(zero, rho) @ u.conj().T
    rhs = np.kron(np.eye(2**n) / 2**n, alpha)
    eps = qsim.trace_norm(lhs - rhs)
    rank = qsim.numerical_rank(rho)
    ok = rank >= (1.0 - eps) * 2**n - 1e-9
    a_vec = (np.kron(u, u.conj())) @ qsim.vec(qsim.sqrtm_psd(np.kron(zero, rho)))
    b_vec = qsim.vec(qsim.sqrtm_psd(rhs))
    b_max = float(np.sqrt(max(np.linalg.eigvalsh(alpha).max(), 0.0) / 2**n))
    overlap = abs(np.vdot(a_vec, b_vec)) ** 2
    schmidt_ok = overlap <= rank * b_max**2 + 1e-9
    return float(eps), int(rank), bool(ok and schmidt_ok)


def complete_isometry(v: np.ndarray) -> np.ndarray:
    """Unitary U with U(|0...0> (x) phi) = V phi for an isometry V."""
    _, cols = v.shape
    w, _, _ = np.linalg.svd(v, full_matrices=True)
    # columns of w beyond the range of v complete the basis
    return np.concatenate([v, w[:, cols:]], axis=1)


def dimension_certificate(model: DeviceModel) -> dict:
    """Certified lower bound on the dimension of the quantum register, from
    the all-injective Hadamard-question post-measurement states."""
    if model.protocol != "dimtest":
        raise ModelError("the dimension certificate runs on a dimension-test model")
    n = model.n
    L = model.logical
    dim = model.dim
    v_iso = swap_isometry(model)
    groups, _ = model.grouped_sigma(THETA_ALL_G)
    groups = {v: blk for v, blk in groups.items() if _group_trace(blk) > 1e-12}
    if not groups:
        raise ModelError("degenerate model: no Sigma-supported blocks")
    p1 = model.p_proj[1]
    best = None
    for v in sorted(groups):
        trace = _group_trace(groups[v])
        tau = tau_vector("dimtest", n, THETA_ALL_G, v)
        dist = 0.0
        rho_blocks = {}
        alpha_blocks = {}
        for label, vec in sorted(groups[v].items()):
            rho_c = np.zeros((dim, dim), dtype=complex)
            for proj in p1.values():
                m = proj @ vec
                rho_c += np.outer(m, m.conj())
            rho_blocks[label] = rho_c / trace
            a = tau.conj() @ (v_iso @ vec).reshape(2**L, dim)
            alpha_blocks[label] = np.outer(a, a.conj()) / trace
        for label in rho_blocks:
            lhs = v_iso @ rho_blocks[label] @ v_iso.conj().T
            rhs = np.kron(np.eye(2**n) / 2**n, alpha_blocks[label])
            dist += qsim.trace_norm(lhs - rhs)
        if best is None or dist < best[1] - 1e-15:
            best = (v, dist, rho_blocks, alpha_blocks)
    v_min, v_dist, rho_blocks, alpha_blocks = best
    alpha_trace = sum(np.trace(a).real for a in alpha_blocks.values())
    if alpha_trace < 1e-12:
        raise ModelError("degenerate model: extracted ancilla state vanishes")
    u = complete_isometry(v_iso)
    best_c = None
    for label in sorted(rho_blocks):
        tr_rho = np.trace(rho_blocks[label]).real
        tr_alpha = np.trace(alpha_blocks[label]).real
        if tr_rho < 1e-12 or tr_alpha < 1e-12:
            continue
        rho_hat = rho_blocks[label] / tr_rho
        alpha_hat = alpha_blocks[label] / tr_alpha
        zero = np.zeros((2**n, 2**n), dtype=complex)
        zero[0, 0] = 1.0
        eps_c = qsim.trace_norm(
            u @ np.kron(zero, rho_hat) @ u.conj().T
            - np.kron(np.eye(2**n) / 2**n, alpha_hat)
        )
        if best_c is None or eps_c < best_c[1] - 1e-15:
            best_c = (label, eps_c, rho_hat, alpha_hat)
    if best_c is None:
        raise ModelError("degenerate model: no usable classical block")
    c_star, eps_star, rho_star, alpha_star = best_c
    eps, rank, ok = rank_bound_check(u, rho_star, alpha_star, n)
    certified = max(0.0, (1.0 - eps) * 2**n)
    return {
        "v_min": v_min,
        "v_distance": float(v_dist),
        "c_star": c_star,
        "epsilon": float(eps),
        "rank": rank,
        "rank_ok": ok,
        "certified_dimension": float(certified),
    }


def _group_trace(blocks: dict) -> float:
    return float(sum(np.vdot(v, v).real for v in blocks.values()))


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

def key_averaged_gammas(
    builder, draws: int, rng: np.random.Generator
) -> dict:
    """Monte-Carlo key average of the gamma quantities; builder(rng) must
    return a fresh model per draw."""
    sums: dict = {}
    for _ in range(draws):
        rep = gamma_report(builder(rng))
        for name in (
            "gamma_P",
            "gamma_T0",
            "gamma_T1",
            "gamma_T",
            "gamma_diamond",
        ):
            sums[name] = sums.get(name, 0.0) + getattr(rep, name)
    return {name: value / draws for name, value in sums.items()}


def analysis_report(model: DeviceModel, rng: np.random.Generator) -> dict:
    """Versioned JSON-ready analysis document."""
    report = {
        "version": 1,
        "model": model.name,
        "protocol": model.protocol,
        "N": model.n,
        "w": model.w,
    }
    failures = failure_report(model)
    report["failures"] = {
        "eps_P": failures.eps_P,
        "eps_H": {str(q): e for q, e in failures.eps_H.items()},
        "eps": failures.eps,
    }
    if model.protocol == "selftest":
        gammas = gamma_report(model)
        report["gammas"] = {
            k: v for k, v in asdict(gammas).items() if not k.endswith("_table")
        }
        checks = check_gamma_bounds(gammas, failures, model.n)
        sums = zeta_chi_sums(model)
        for (theta, i), val in sums["zeta"].items():
            checks.append(
                {
                    "name": f"sum_v zeta(i={i}, theta={theta}) <= 4 gamma_T",
                    "lhs": val,
                    "rhs": 4 * gammas.gamma_T,
                    "ok": bool(val <= 4 * gammas.gamma_T + 1e-9),
                }
            )
        for theta, val in sums["chi"].items():
            checks.append(
                {
                    "name": f"sum_v chi(theta={theta}) <= 4 gamma_T",
                    "lhs": val,
                    "rhs": 4 * gammas.gamma_T,
                    "ok": bool(val <= 4 * gammas.gamma_T + 1e-9),
                }
            )
        for theta in model.thetas:
            residual = sigma_residual(model, theta)
            checks.append(
                {
                    "name": f"||sigma^theta - sum_v sigma^theta_v||_1 <= gamma_P (theta={theta})",
                    "lhs": residual,
                    "rhs": gammas.gamma_P,
                    "ok": bool(residual <= gammas.gamma_P + 1e-9),
                }
            )
        report["checks"] = checks
        report["soundness"] = {
            str(theta): {
                "total": sd["total"],
                "post_measurement": {str(q): t for q, t in sd["post_measurement"].items()},
            }
            for theta, sd in (
                (theta, soundness_distance(model, theta)) for theta in model.thetas
            )
        }
    else:
        cert = dimension_certificate(model)
        report["certificate"] = {
            "v_min": list(cert["v_min"]),
            "epsilon": cert["epsilon"],
            "rank": cert["rank"],
            "rank_ok": cert["rank_ok"],
            "certified_dimension": cert["certified_dimension"],
        }
        report["checks"] = [
            {
                "name": "rank >= (1 - eps) 2^N",
                "lhs": cert["rank"],
                "rhs": (1 - cert["epsilon"]) * 2**model.n,
                "ok": cert["rank_ok"],
            }
        ]
    report["swap"] = swap_identity_checks(model, rng)
    report["all_ok"] = all(c["ok"] for c in report.get("checks", []))
    return report
