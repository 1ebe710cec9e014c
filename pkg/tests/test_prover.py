"""Prover behavior tests: honest modes, adversaries, contracts."""
import numpy as np
import pytest

from selftestsim import entcf, protocol, prover
from selftestsim.errors import BudgetError, ContractError, ParameterError
from selftestsim.prover import (
    COLLAPSED,
    FULLSIM,
    ClassicalGuessProver,
    HonestProver,
    WrongBasisProver,
    make_prover,
    question_bases,
)


def fixed_keys(theta, n=1, w=2, seed=0):
    rng = np.random.default_rng(seed)
    params = entcf.EntcfParams.ideal(w)
    pairs = [
        entcf.gen_keypair(fam, params, rng)
        for fam in protocol.selftest_families(theta, n)
    ]
    return tuple(k for k, _ in pairs), tuple(t for _, t in pairs)


def drive_hadamard(p, keys, q):
    """Push one Hadamard round through the message interface."""
    images = p.handle(protocol.Keys(keys=keys))
    d_msg = p.handle(protocol.RoundType(kind=protocol.HADAMARD))
    v_msg = p.handle(protocol.Question(q=q))
    p.handle(protocol.Verdict(accept=1, reason="accept"))
    return images.y, d_msg.d, v_msg.v


def test_question_bases_patterns():
    assert question_bases("selftest", 2, 0) == ["computational"] * 4
    assert question_bases("selftest", 2, 1) == ["hadamard"] * 4
    assert question_bases("selftest", 2, 2) == ["computational"] * 2 + ["hadamard"] * 2
    assert question_bases("selftest", 2, 3) == ["hadamard"] * 2 + ["computational"] * 2
    assert question_bases("dimtest", 3, 1) == ["hadamard"] * 3
    # the wrong-basis flag swaps only q=0 and q=1
    assert question_bases("selftest", 1, 0, swap_01=True) == ["hadamard"] * 2
    assert question_bases("selftest", 1, 2, swap_01=True) == ["computational", "hadamard"]


def test_honest_images_are_valid(seed=0):
    keys, _ = fixed_keys(theta=0)
    p = HonestProver("selftest", np.random.default_rng(seed))
    y = p.on_keys(keys)
    for key, yi in zip(keys, y):
        assert entcf.preimages(key, yi)


def test_honest_preimage_round_accepts():
    keys, _ = fixed_keys(theta=0)
    for seed in range(20):
        p = HonestProver("selftest", np.random.default_rng(seed))
        images = p.handle(protocol.Keys(keys=keys))
        ans = p.handle(protocol.RoundType(kind=protocol.PREIMAGE))
        assert entcf.chk(keys, images.y, ans.b, ans.x) == 0


def test_honest_hadamard_round_accepts_when_h_defined():
    keys, traps = fixed_keys(theta=0)
    rejects = 0
    for seed in range(300):
        p = HonestProver("selftest", np.random.default_rng(seed))
        y, d, v = drive_hadamard(p, keys, q=1)
        bhat = [None, entcf.decode_b(traps[1], y[1])]
        hhat = [entcf.decode_h(traps[0], y[0], d[0]), None]
        verdict = protocol.selftest_verdict(1, 0, 1, v, bhat, hhat)
        if not verdict.accept:
            rejects += 1
            assert verdict.reason.endswith(".bot")  # only d=0 events reject
    assert rejects < 300 * 0.25 + 50  # d=0 has mass 1/4 at w=2


def test_honest_diamond_bell_correlations():
    keys, traps = fixed_keys(theta=protocol.THETA_DIAMOND)
    for seed in range(200):
        p = HonestProver("selftest", np.random.default_rng(seed))
        y, d, v = drive_hadamard(p, keys, q=2)
        hhat = [entcf.decode_h(t, yi, di) for t, yi, di in zip(traps, y, d)]
        verdict = protocol.selftest_verdict(1, protocol.THETA_DIAMOND, 2, v, [None, None], hhat)
        assert verdict.accept == 1 or verdict.reason.endswith(".bot")


def test_out_of_order_message_raises():
    keys, _ = fixed_keys(theta=0)
    p = HonestProver("selftest", np.random.default_rng(0))
    with pytest.raises(ContractError):
        p.handle(protocol.Question(q=0))


def test_fullsim_budget_error_toylwe():
    rng = np.random.default_rng(0)
    params = entcf.EntcfParams.toylwe(n=1, m=3, q=16, B=1)
    keys = tuple(entcf.gen_keypair("G", params, rng)[0] for _ in range(2))
    p = HonestProver("selftest", rng, mode=FULLSIM)
    with pytest.raises(BudgetError):
        p.on_keys(keys)


def test_fullsim_budget_error_small_budget():
    keys, _ = fixed_keys(theta=0)
    p = HonestProver("selftest", np.random.default_rng(0), mode=FULLSIM, budget=4)
    with pytest.raises(BudgetError):
        p.on_keys(keys)


def test_bitflip_zero_matches_honest():
    keys, _ = fixed_keys(theta=0)
    honest_v = []
    flip_v = []
    for seed in range(30):
        h = make_prover("honest", "selftest", np.random.default_rng(seed))
        f = make_prover("bitflip=0.0", "selftest", np.random.default_rng(seed))
        honest_v.append(drive_hadamard(h, keys, q=0))
        flip_v.append(drive_hadamard(f, keys, q=0))
    assert honest_v == flip_v


def test_bitflip_one_flips_everything():
    keys, _ = fixed_keys(theta=0)
    h = make_prover("honest", "selftest", np.random.default_rng(9))
    f = make_prover("bitflip=1.0", "selftest", np.random.default_rng(9))
    _, _, vh = drive_hadamard(h, keys, q=0)
    _, _, vf = drive_hadamard(f, keys, q=0)
    assert all(a != b for a, b in zip(vh, vf))


def test_classical_guess_answers_its_bits():
    keys, _ = fixed_keys(theta=0)
    p = ClassicalGuessProver("selftest", np.random.default_rng(1))
    y, d, v = drive_hadamard(p, keys, q=1)
    assert tuple(v) == tuple(p.b)
    assert all(di != 0 for di in d)
    # the preimage answer is genuine
    p2 = ClassicalGuessProver("selftest", np.random.default_rng(1))
    images = p2.handle(protocol.Keys(keys=keys))
    ans = p2.handle(protocol.RoundType(kind=protocol.PREIMAGE))
    assert entcf.chk(keys, images.y, ans.b, ans.x) == 0


def test_wrongbasis_differs_from_honest_on_q0():
    keys, _ = fixed_keys(theta=protocol.THETA_ALL_G)
    diffs = 0
    for seed in range(60):
        h = HonestProver("selftest", np.random.default_rng(seed))
        wy, wd, wv = drive_hadamard(
            WrongBasisProver("selftest", np.random.default_rng(seed)), keys, q=0
        )
        hy, hd, hv = drive_hadamard(h, keys, q=0)
        assert wy == hy and wd == hd  # only the last measurement differs
        diffs += tuple(wv) != tuple(hv)
    assert diffs > 0


def test_make_prover_unknown_spec():
    with pytest.raises(ParameterError):
        make_prover("nope", "selftest", np.random.default_rng(0))
    with pytest.raises(ParameterError):
        HonestProver("selftest", np.random.default_rng(0), mode="nope")
    with pytest.raises(ParameterError):
        prover.adversary("bitflip", "selftest", np.random.default_rng(0), p=2.0)
