"""White-box analysis unit tests (the heavy suites live in test_acceptance)."""
import numpy as np
import pytest

from selftestsim import analysis, entcf, protocol, qsim
from selftestsim.errors import ModelError, ParameterError
from selftestsim.protocol import THETA_ALL_G, THETA_DIAMOND, DimTestConfig, SelfTestConfig


@pytest.fixture(scope="module")
def honest():
    cfg = SelfTestConfig(N=1, entcf=entcf.EntcfParams.ideal(2))
    return analysis.build_honest_model(cfg, "selftest", np.random.default_rng(0))


@pytest.fixture(scope="module")
def honest_dim():
    cfg = DimTestConfig(N=1, entcf=entcf.EntcfParams.ideal(2))
    return analysis.build_honest_model(cfg, "dimtest", np.random.default_rng(0))


def test_psi_blocks_are_normalized(honest):
    for theta in honest.thetas:
        mass = sum(np.vdot(v, v).real for v in honest.psi[theta].values())
        assert mass == pytest.approx(1.0, abs=1e-12)


def test_m_measurement_orthonormal(honest):
    for theta in honest.thetas:
        y = sorted(honest.psi[theta])[0]
        for i in range(honest.logical):
            outcomes = honest.coord_m(theta, i, y[i])
            mat = np.array([outcomes[d] for d in sorted(outcomes)])
            assert np.allclose(mat @ mat.conj().T, np.eye(len(outcomes)), atol=1e-12)


def test_p_measurement_complete(honest):
    for q, projs in honest.p_proj.items():
        total = sum(projs.values())
        assert np.allclose(total, np.eye(honest.dim), atol=1e-12)
        for proj in projs.values():
            assert np.allclose(proj @ proj, proj, atol=1e-12)


def test_marginal_observables_commute_and_square(honest):
    for i in range(honest.logical):
        qsim.check_binary_observable(honest.Z(i))
        qsim.check_binary_observable(honest.X(i))
        for j in range(honest.logical):
            comm = honest.Z(i) @ honest.Z(j) - honest.Z(j) @ honest.Z(i)
            assert np.max(np.abs(comm)) < 1e-12  # [Z_i, Z_j] = 0 exactly


def test_sigma_mass_bounded(honest):
    for theta in honest.thetas:
        by_v = analysis.sigma_theta_v(honest, theta)
        total = sum(op.trace() for op in by_v.values())
        assert total <= 1.0 + 1e-9
        # blocks agree with the membership predicate
        for v, op in by_v.items():
            for (y, d) in list(op.blocks)[:4]:
                assert protocol.sigma_set_membership(
                    theta, v, y, d, honest.trapdoors[theta], honest.n
                )


def test_decode_v_unique(honest):
    for theta in honest.thetas:
        for (y, d) in list(honest.sigma_blocks(theta))[:16]:
            v = honest.decode_v(theta, y, d)
            assert v is not None
            others = [
                u
                for u in [(a, b) for a in (0, 1) for b in (0, 1)]
                if protocol.sigma_set_membership(theta, u, y, d, honest.trapdoors[theta], honest.n)
            ]
            assert others == [v]


def test_honest_failures_vanish(honest):
    f = analysis.failure_report(honest)
    assert f.eps_P == pytest.approx(0.0, abs=1e-12)
    assert all(e == pytest.approx(0.0, abs=1e-12) for e in f.eps_H.values())


def test_gamma_report_requires_selftest(honest_dim):
    with pytest.raises(ModelError):
        analysis.gamma_report(honest_dim)


def test_bitflip_gamma_matches_flip_rate(honest):
    p = 0.1
    bf = analysis.build_bitflip_model(honest, p)
    g = analysis.gamma_report(bf)
    # a single flipped coordinate costs exactly p of the tested mass
    assert g.gamma_T0 == pytest.approx(p, abs=1e-9)
    assert g.gamma_T1 == pytest.approx(p, abs=1e-9)
    assert g.gamma_P == pytest.approx(0.0, abs=1e-9)  # preimage round unaffected
    with pytest.raises(ParameterError):
        analysis.build_bitflip_model(honest, 1.5)


def test_wrongbasis_fails_hadamard_tests(honest):
    wb = analysis.build_wrongbasis_model(honest)
    f = analysis.failure_report(wb)
    assert f.eps_P == pytest.approx(0.0, abs=1e-12)
    assert f.eps > 0.01
    checks = analysis.check_gamma_bounds(analysis.gamma_report(wb), f, 1)
    assert all(c["ok"] for c in checks)


def test_tau_states(honest):
    # theta = diamond, v = 0: CZ|++>, the certified pair state
    tau = analysis.tau_vector("selftest", 1, THETA_DIAMOND, (0, 0))
    expect = np.array([1, 1, 1, -1], dtype=complex) / 2.0
    assert np.allclose(tau, expect)
    # X flips move within the family and preserve orthonormality
    vs = [(a, b) for a in (0, 1) for b in (0, 1)]
    taus = [analysis.tau_vector("selftest", 1, THETA_DIAMOND, v) for v in vs]
    gram = np.array([[np.vdot(a, b) for b in taus] for a in taus])
    assert np.allclose(gram, np.eye(4), atol=1e-12)
    # theta int: one hadamard coordinate
    tau = analysis.tau_vector("selftest", 1, 0, (1, 0))
    assert np.allclose(tau, np.kron([1, -1] / np.sqrt(2), [1, 0]))


def test_swap_isometry_rejects_nonprojective(honest):
    bad = analysis.DeviceModel(
        "selftest",
        1,
        2,
        2,
        1,
        1,
        [THETA_ALL_G],
        {THETA_ALL_G: honest.keys[THETA_ALL_G][:2]},
        {THETA_ALL_G: honest.trapdoors[THETA_ALL_G][:2]},
        {THETA_ALL_G: {}},
        {q: {u: np.eye(4) * 0.5 for u in [(0, 0), (0, 1), (1, 0), (1, 1)]} for q in (0, 1)},
        m_proj={THETA_ALL_G: {}},
        pi_proj={},
    )
    with pytest.raises(ModelError):
        analysis.swap_isometry(bad)


def test_rank_bound_swap_example():
    for n in (1, 2):
        dim = 2**n
        swap = np.zeros((dim * dim, dim * dim))
        for a in range(dim):
            for b in range(dim):
                swap[b * dim + a, a * dim + b] = 1.0
        rho = np.eye(dim) / dim
        alpha = np.zeros((dim, dim))
        alpha[0, 0] = 1.0
        eps, rank, ok = analysis.rank_bound_check(swap, rho, alpha, n)
        assert eps <= 1e-10 and rank == dim and ok


def test_rank_bound_rejects_nonunitary():
    with pytest.raises(ParameterError):
        analysis.rank_bound_check(np.ones((4, 4)), np.eye(2) / 2, np.eye(2) / 2, 1)
    with pytest.raises(ParameterError):
        analysis.rank_bound_check(np.eye(8), np.eye(2) / 2, np.eye(2) / 2, 1)


def test_dimension_certificate_requires_dimtest(honest):
    with pytest.raises(ModelError):
        analysis.dimension_certificate(honest)


def test_certificate_separates_honest_from_classical(honest_dim):
    cert = analysis.dimension_certificate(honest_dim)
    assert cert["certified_dimension"] == pytest.approx(2.0, abs=1e-9)
    assert cert["rank"] == 2 and cert["rank_ok"]
    classical = analysis.build_classical_model(
        DimTestConfig(N=1, entcf=entcf.EntcfParams.ideal(2)), np.random.default_rng(3)
    )
    cert_c = analysis.dimension_certificate(classical)
    assert cert_c["certified_dimension"] <= 1.0
    assert cert_c["rank"] == 1


def test_budget_guard():
    cfg = SelfTestConfig(N=2, entcf=entcf.EntcfParams.ideal(3))
    with pytest.raises(ModelError):
        analysis.build_honest_model(cfg, "selftest", np.random.default_rng(0))
    small = SelfTestConfig(N=1, entcf=entcf.EntcfParams.ideal(2))
    with pytest.raises(ModelError):
        analysis.build_honest_model(small, "selftest", np.random.default_rng(0), budget=2**5)


def test_toylwe_models_unsupported():
    cfg = SelfTestConfig(N=1, entcf=entcf.EntcfParams.toylwe(n=1, m=2, q=8, B=1))
    with pytest.raises(ModelError):
        analysis.build_honest_model(cfg, "selftest", np.random.default_rng(0))


def test_analysis_report_shape(honest):
    rng = np.random.default_rng(0)
    report = analysis.analysis_report(honest, rng)
    assert report["version"] == 1 and report["all_ok"]
    assert set(report["gammas"]) >= {"gamma_P", "gamma_T", "gamma_diamond"}
    assert all(c["lhs"] <= c["rhs"] + 1e-9 for c in report["checks"])


def test_key_averaged_gammas():
    cfg = SelfTestConfig(N=1, entcf=entcf.EntcfParams.ideal(2))

    def builder(rng):
        return analysis.build_honest_model(cfg, "selftest", rng)

    avg = analysis.key_averaged_gammas(builder, draws=2, rng=np.random.default_rng(0))
    assert avg["gamma_P"] == pytest.approx(0.0, abs=1e-9)
    assert avg["gamma_T"] == pytest.approx(0.0, abs=1e-9)
