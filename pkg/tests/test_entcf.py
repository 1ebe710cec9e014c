"""Function-family unit tests: key generation, supports, decoding, codec."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selftestsim import entcf
from selftestsim.errors import DomainError, FamilyError, ParameterError


@pytest.fixture(scope="module")
def ideal_pair():
    rng = np.random.default_rng(0)
    params = entcf.EntcfParams.ideal(3)
    f = entcf.gen_keypair(entcf.FAMILY_F, params, rng)
    g = entcf.gen_keypair(entcf.FAMILY_G, params, rng)
    return f, g


def test_params_validation():
    with pytest.raises(ParameterError):
        entcf.EntcfParams(backend="ideal", w=0, image_space_size=16)
    with pytest.raises(ParameterError):
        entcf.EntcfParams(backend="nope", w=2)
    with pytest.raises(ParameterError):
        entcf.EntcfParams.toylwe(n=1, m=4, q=8, B=1)  # 2*B*m >= q
    with pytest.raises(ParameterError):
        entcf.EntcfParams(backend="toylwe", w=3, n=1, m=2, q=6, B=1)  # q not 2^k


def test_claw_matching_ideal(ideal_pair):
    (key, trap), _ = ideal_pair
    for x0 in range(8):
        x1 = entcf.claw_partner(trap, x0)
        assert entcf.support(key, 0, x0) == entcf.support(key, 1, x1)
        assert x1 == x0 ^ trap.s
    assert trap.s != 0


def test_g_ranges_disjoint(ideal_pair):
    _, (key, _) = ideal_pair
    r0 = {next(iter(entcf.support(key, 0, x))) for x in range(8)}
    r1 = {next(iter(entcf.support(key, 1, x))) for x in range(8)}
    assert not (r0 & r1)


def test_decode_inversions(ideal_pair):
    (f_key, f_trap), (g_key, g_trap) = ideal_pair
    for x in range(8):
        for b in (0, 1):
            (y,) = entcf.support(g_key, b, x)
            assert entcf.decode_b(g_trap, y) == b
            assert entcf.decode_x(b, g_trap, y) == x
        (y,) = entcf.support(f_key, 0, x)
        assert entcf.decode_x(0, f_trap, y) == x
        assert entcf.decode_x(1, f_trap, y) == entcf.claw_partner(f_trap, x)


def test_decode_h_equation(ideal_pair):
    (f_key, f_trap), _ = ideal_pair
    for x in range(8):
        (y,) = entcf.support(f_key, 0, x)
        delta = x ^ entcf.claw_partner(f_trap, x)
        assert entcf.decode_h(f_trap, y, 0) is None
        for d in range(1, 8):
            assert entcf.decode_h(f_trap, y, d) == entcf.parity(d & delta)


def test_decode_family_errors(ideal_pair):
    (f_key, f_trap), (g_key, g_trap) = ideal_pair
    with pytest.raises(FamilyError):
        entcf.decode_b(f_trap, 0)
    with pytest.raises(FamilyError):
        entcf.decode_h(g_trap, 0, 1)
    with pytest.raises(FamilyError):
        entcf.claw_partner(g_trap, 0)


def test_invalid_y_decodes_to_none(ideal_pair):
    (f_key, f_trap), (g_key, g_trap) = ideal_pair
    used = set(f_key.table.ravel())
    spare = next(y for y in range(f_key.params.image_space_size) if y not in used)
    assert entcf.decode_x(0, f_trap, spare) is None
    assert entcf.decode_h(f_trap, spare, 3) is None
    used_g = set(g_key.table.ravel())
    spare_g = next(y for y in range(g_key.params.image_space_size) if y not in used_g)
    assert entcf.decode_b(g_trap, spare_g) is None


@given(b=st.integers(0, 1), x=st.integers(0, 7), y=st.integers(0, 17))
@settings(max_examples=200, deadline=None)
def test_chk_equals_support_membership(ideal_pair, b, x, y):
    for (key, _) in ideal_pair:
        member = entcf.support_contains(key, b, x, y)
        assert (entcf.chk((key,), (y,), (b,), (x,)) == 0) == member


def test_chk_tuple_mismatch(ideal_pair):
    (key, _), _ = ideal_pair
    from selftestsim.errors import ProtocolError

    with pytest.raises(ProtocolError):
        entcf.chk((key,), (1, 2), (0,), (0,))


def test_preimages_public_scan(ideal_pair):
    (f_key, f_trap), _ = ideal_pair
    for x in range(8):
        (y,) = entcf.support(f_key, 0, x)
        pres = entcf.preimages(f_key, y)
        assert (0, x) in pres and (1, entcf.claw_partner(f_trap, x)) in pres
        assert len(pres) == 2


def test_key_codec_family_blind(ideal_pair):
    (f_key, _), (g_key, _) = ideal_pair
    f_raw, g_raw = f_key.to_bytes(), g_key.to_bytes()
    assert len(f_raw) == len(g_raw)  # format does not leak the family
    for key, raw in ((f_key, f_raw), (g_key, g_raw)):
        back = entcf.PublicKey.from_bytes(raw)
        assert np.array_equal(back.table, key.table)
        assert back.params == key.params


def test_forward_sample_in_support(ideal_pair):
    rng = np.random.default_rng(5)
    for (key, _) in ideal_pair:
        for x in range(8):
            y = entcf.forward_sample(key, 1, x, rng)
            assert entcf.support_contains(key, 1, x, y)


def test_x_domain_check(ideal_pair):
    (key, _), _ = ideal_pair
    with pytest.raises(DomainError):
        entcf.support(key, 0, 8)


# ---------------------------------------------------------------------------
# ToyLwe backend
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def lwe_pair():
    rng = np.random.default_rng(2)
    params = entcf.EntcfParams.toylwe(n=1, m=3, q=16, B=1)
    f = entcf.gen_keypair(entcf.FAMILY_F, params, rng)
    g = entcf.gen_keypair(entcf.FAMILY_G, params, rng)
    return f, g


def test_toylwe_claw_support_equality(lwe_pair):
    (key, trap), _ = lwe_pair
    for x0 in range(2**key.params.w):
        x1 = entcf.claw_partner(trap, x0)
        assert entcf.support(key, 0, x0) == entcf.support(key, 1, x1)


def test_toylwe_same_x_disjoint_g(lwe_pair):
    _, (key, _) = lwe_pair
    for x in range(2**key.params.w):
        assert not (entcf.support(key, 0, x) & entcf.support(key, 1, x))


def test_toylwe_decodes(lwe_pair):
    (f_key, f_trap), (g_key, g_trap) = lwe_pair
    rng = np.random.default_rng(3)
    for x in range(2**f_key.params.w):
        y = entcf.forward_sample(g_key, 1, x, rng)
        assert entcf.decode_b(g_trap, y) == 1
        y = entcf.forward_sample(f_key, 0, x, rng)
        x1 = entcf.claw_partner(f_trap, x)
        delta = x ^ x1
        for d in range(1, 2**f_key.params.w):
            assert entcf.decode_h(f_trap, y, d) == entcf.parity(d & delta)


def test_toylwe_key_codec(lwe_pair):
    (key, _), _ = lwe_pair
    back = entcf.PublicKey.from_bytes(key.to_bytes())
    assert np.array_equal(back.A, key.A) and np.array_equal(back.u, key.u)
