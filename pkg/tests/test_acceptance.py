"""End-to-end acceptance checks: protocol statistics at scale, exhaustive
family properties, white-box analysis identities, and reproducibility."""
import collections
import json
import time

import numpy as np
import pytest

from selftestsim import analysis, cli, entcf, harness, protocol, prover, qsim
from selftestsim.protocol import DimTestConfig, SelfTestConfig


def selftest_config(n, w):
    return SelfTestConfig(N=n, entcf=entcf.EntcfParams.ideal(w))


def dimtest_config(n, w):
    return DimTestConfig(N=n, entcf=entcf.EntcfParams.ideal(w))


# ---------------------------------------------------------------------------
# Large-sample protocol statistics
# ---------------------------------------------------------------------------

def test_selftest_honest_acceptance_rate():
    n, w, sessions = 2, 4, 10_000
    start = time.monotonic()
    stats, _ = harness.run_sessions(
        "selftest", "honest", selftest_config(n, w), sessions, seed=2024
    )
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    acc = stats["acceptance_rate"]
    sigma = np.sqrt(acc * (1.0 - acc) / sessions)
    assert acc >= 1.0 - 2 * n * 2.0 ** (1 - w) - 3 * sigma
    assert acc >= 0.97


def test_dimtest_honest_acceptance_and_rejection_reasons():
    n, w, sessions = 3, 4, 10_000
    stats, transcripts = harness.run_sessions(
        "dimtest", "honest", dimtest_config(n, w), sessions, seed=77
    )
    assert stats["acceptance_rate"] >= 0.97
    rejected = [t for t in transcripts if not t["accept"]]
    assert rejected, "expected some undecodable-d rejections at this w"
    # an honest device is only ever rejected for undecodable equation bits
    assert all(t["reason"].endswith(".bot") for t in rejected)


# ---------------------------------------------------------------------------
# Collapsed simulation agrees with the full state-vector simulation
# ---------------------------------------------------------------------------

def _hadamard_samples(mode, keys, samples, seed):
    """Per-coordinate (y, d, v) counters for repeated Hadamard rounds."""
    streams = np.random.SeedSequence(seed).spawn(samples)
    counts = [collections.Counter(), collections.Counter()]
    for stream in streams:
        p = prover.HonestProver("selftest", np.random.default_rng(stream), mode=mode)
        images = p.handle(protocol.Keys(keys=keys))
        d_msg = p.handle(protocol.RoundType(kind=protocol.HADAMARD))
        v_msg = p.handle(protocol.Question(q=1))
        p.handle(protocol.Verdict(accept=1, reason="accept"))
        for i in range(2):
            counts[i][(images.y[i], d_msg.d[i], v_msg.v[i])] += 1
    return counts


def test_collapsed_matches_fullsim_distribution():
    start = time.monotonic()
    rng = np.random.default_rng(31337)
    params = entcf.EntcfParams.ideal(2)
    keys = tuple(
        entcf.gen_keypair(fam, params, rng)[0]
        for fam in protocol.selftest_families(0, 1)
    )
    samples = 20_000
    fast = _hadamard_samples(prover.COLLAPSED, keys, samples, seed=1)
    full = _hadamard_samples(prover.FULLSIM, keys, samples, seed=2)
    for i in range(2):
        assert set(fast[i]) == set(full[i])
        support = set(fast[i]) | set(full[i])
        tv = 0.5 * sum(
            abs(fast[i][k] - full[i][k]) / samples for k in support
        )
        assert tv <= 0.05
    assert time.monotonic() - start < 120.0


# ---------------------------------------------------------------------------
# Function family properties, exhaustively
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("backend,w", [("ideal", 2), ("ideal", 3), ("ideal", 4), ("toylwe", 4)])
def test_entcf_family_properties_exhaustive(backend, w):
    failures = cli.entcf_property_suite(backend, w, seed=9, n_keys=3)
    assert failures == []


# ---------------------------------------------------------------------------
# Swap isometry identities
# ---------------------------------------------------------------------------

def _random_models(count, seed):
    rng = np.random.default_rng(seed)
    cfg = selftest_config(1, 2)
    return [analysis.build_random_model(cfg, rng) for _ in range(count)]


def test_swap_isometry_identities():
    rng = np.random.default_rng(0)
    honest = analysis.build_honest_model(selftest_config(1, 2), "selftest", rng)
    models = [honest] + _random_models(20, seed=5)
    for model in models:
        checks = analysis.swap_identity_checks(model, rng)
        for value in checks.values():
            assert value <= 1e-10


# ---------------------------------------------------------------------------
# Honest device marginals and soundness distances
# ---------------------------------------------------------------------------

def test_honest_logical_marginals_are_ideal():
    rng = np.random.default_rng(1)
    n, w = 1, 2
    model = analysis.build_honest_model(selftest_config(n, w), "selftest", rng)
    for theta in model.thetas:
        groups, residual = model.grouped_sigma(theta)
        assert residual <= 1e-12
        for v, blocks in groups.items():
            tau = analysis.tau_vector("selftest", n, theta, v)
            target = np.outer(tau, tau.conj()) / 2 ** (2 * n)
            marginal = model.logical_marginal(blocks)
            assert np.abs(marginal - target).max() <= 1e-9


def test_honest_soundness_distances():
    rng = np.random.default_rng(2)
    n, w = 1, 2
    model = analysis.build_honest_model(selftest_config(n, w), "selftest", rng)
    bound = 4 * 2.0 ** (1 - w)
    for theta in model.thetas:
        sd = analysis.soundness_distance(model, theta)
        assert sd["total"] <= min(bound, 1e-8)
        for total in sd["post_measurement"].values():
            assert total <= min(bound, 1e-8)


# ---------------------------------------------------------------------------
# Gamma-versus-failure inequalities across device models
# ---------------------------------------------------------------------------

def _inequality_suite(model):
    gammas = analysis.gamma_report(model)
    failures = analysis.failure_report(model)
    checks = analysis.check_gamma_bounds(gammas, failures, model.n)
    assert all(c["ok"] for c in checks), [c for c in checks if not c["ok"]]
    sums = analysis.zeta_chi_sums(model)
    for val in sums["zeta"].values():
        assert val <= 4 * gammas.gamma_T + 1e-9
    for val in sums["chi"].values():
        assert val <= 4 * gammas.gamma_T + 1e-9
    for theta in model.thetas:
        assert analysis.sigma_residual(model, theta) <= gammas.gamma_P + 1e-9


def test_gamma_failure_inequalities_hold_for_all_models():
    rng = np.random.default_rng(3)
    cfg = selftest_config(1, 2)
    honest = analysis.build_honest_model(cfg, "selftest", rng)
    models = [honest]
    models += [analysis.build_bitflip_model(honest, p) for p in (0.05, 0.1, 0.25)]
    models.append(analysis.build_wrongbasis_model(honest))
    models += _random_models(20, seed=8)
    for model in models:
        _inequality_suite(model)


# ---------------------------------------------------------------------------
# Rank lower bound
# ---------------------------------------------------------------------------

def _swap_unitary(dim):
    u = np.zeros((dim * dim, dim * dim))
    for i in range(dim):
        for j in range(dim):
            u[i * dim + j, j * dim + i] = 1.0
    return u


@pytest.mark.parametrize("n", [1, 2])
def test_rank_bound_swap_example(n):
    dim = 2**n
    rho = np.eye(dim) / dim
    alpha = np.zeros((dim, dim))
    alpha[0, 0] = 1.0
    eps, rank, ok = analysis.rank_bound_check(_swap_unitary(dim), rho, alpha, n)
    assert eps <= 1e-10
    assert rank == dim
    assert ok


def test_rank_bound_random_instances():
    rng = np.random.default_rng(4)
    for trial in range(50):
        n = int(rng.integers(1, 3))
        d = int(rng.integers(2, 5))
        u = analysis.haar_unitary(2**n * d, rng)
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = a @ a.conj().T
        rho /= np.trace(rho).real
        zero = np.zeros((2**n, 2**n))
        zero[0, 0] = 1.0
        lhs = u @ np.kron(zero, rho) @ u.conj().T
        alpha = qsim.partial_trace(lhs, [("a", 2**n), ("b", d)], ["b"])
        _, _, ok = analysis.rank_bound_check(u, rho, alpha, n)
        assert ok


# ---------------------------------------------------------------------------
# Classical cheating rate on the dimension test
# ---------------------------------------------------------------------------

def _exhaustive_guess_failure(n, w, seed):
    """Exact q=1 failure rate of the preimage-guessing device, by enumerating
    every image and nonzero d of a claw-free key: the answer bit is a uniform
    coin, so the claw coordinate fails half the time whenever theta picks it."""
    rng = np.random.default_rng(seed)
    params = entcf.EntcfParams.ideal(w)
    key, trap = entcf.gen_keypair(entcf.FAMILY_F, params, rng)
    fails = total = 0
    for y in entcf.image_iter(key):
        for d in range(1, 2**w):
            hh = entcf.decode_h(trap, y, d)
            for b in (0, 1):
                fails += hh != b
                total += 1
    return (n / (n + 1)) * fails / total


def test_classical_guess_equation_failure_rate():
    n, w, sessions = 2, 6, 10_000
    cfg = dimtest_config(n, w)
    exact = _exhaustive_guess_failure(n, w, seed=6)
    assert exact == pytest.approx(n / (2 * (n + 1)))
    stats, _ = harness.run_sessions("dimtest", "classical", cfg, sessions, seed=404)
    cheat = stats["eps_H"]["1"]
    assert abs(cheat - exact) <= 0.02
    assert cheat >= 0.2
    honest_stats, _ = harness.run_sessions("dimtest", "honest", cfg, sessions, seed=405)
    assert honest_stats["eps_H"]["1"] <= 0.03


# ---------------------------------------------------------------------------
# Reproducibility
# ---------------------------------------------------------------------------

def test_runs_are_byte_reproducible(tmp_path):
    cfg = selftest_config(1, 3)
    for name in ("a", "b"):
        harness.run_sessions(
            "selftest", "honest", cfg, 300, seed=123, out_dir=tmp_path / name
        )
    for fname in ("stats.json", "transcripts.jsonl"):
        first = (tmp_path / "a" / fname).read_bytes()
        second = (tmp_path / "b" / fname).read_bytes()
        assert first == second
