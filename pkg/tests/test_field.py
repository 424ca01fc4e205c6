import itertools
import random

import pytest
from hypothesis import given, strategies as st

from dropagg.field import (
    DEFAULT_PRIME, FieldElement, InsufficientSharesError, SecretShare, SharingError, SharingPolicy,
    lagrange_at_zero, reconstruct, share,
)

P = DEFAULT_PRIME
elements = st.integers(min_value=0, max_value=P - 1).map(FieldElement)


def test_prime_is_mersenne_127():
    assert P == 2 ** 127 - 1
    # Miller-Rabin with fixed witnesses as an independent check
    d, s = P - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, P)
        assert x in (1, P - 1) or any(pow(x, 2 ** r, P) == P - 1 for r in range(1, s))


@given(elements, elements, elements)
def test_field_laws(a, b, c):
    assert (a + b) + c == a + (b + c)
    assert a * b == b * a
    assert a * (b + c) == a * b + a * c
    assert a - a == FieldElement(0)
    assert -a + a == FieldElement(0)


@given(elements)
def test_inverse(a):
    if a.value == 0:
        with pytest.raises(ZeroDivisionError):
            a.inverse()
    else:
        assert a * a.inverse() == FieldElement(1)
        assert (a / a).value == 1


def test_bytes_round_trip():
    for v in (0, 1, P - 1, 123456789):
        assert FieldElement.from_bytes(FieldElement(v).to_bytes()) == FieldElement(v)


def test_degree_zero_share_is_secret():
    s = FieldElement(987654321)
    (only,) = share(s, SharingPolicy(1, [1]), b"seed")
    assert only.value == s and only.holder_index == 1


def test_round_trip_random_secrets():
    r = random.Random(5)
    policy = SharingPolicy(3, range(1, 6))
    for i in range(100):
        s = FieldElement(r.randrange(P))
        shares = share(s, policy, i.to_bytes(4, "big"))
        subset = r.sample(shares, 3)
        assert reconstruct(subset, 3) == s


@pytest.mark.parametrize("n", range(1, 7))
def test_all_t_subsets_exhaustive(n):
    for t in range(1, n + 1):
        s = FieldElement(1000 * n + t)
        shares = share(s, SharingPolicy(t, range(1, n + 1)), b"x%d" % t)
        for subset in itertools.combinations(shares, t):
            assert reconstruct(subset, t) == s


def test_zero_secret():
    shares = share(FieldElement(0), SharingPolicy(2, [1, 2, 3]), b"z")
    for pair in itertools.combinations(shares, 2):
        assert reconstruct(pair, 2).value == 0


def test_non_contiguous_ids():
    ids = [3, 8, 11, 40]
    shares = share(FieldElement(77), SharingPolicy(2, ids), b"ids")
    assert [s.holder_index for s in shares] == ids
    assert reconstruct(shares[2:], 2).value == 77


def test_insufficient_and_duplicates():
    shares = share(FieldElement(5), SharingPolicy(3, range(1, 6)), b"e")
    with pytest.raises(InsufficientSharesError):
        reconstruct(shares[:2], 3)
    with pytest.raises(SharingError):
        reconstruct([shares[0], shares[0], shares[1]], 3)


@pytest.mark.parametrize("t, ids", [(0, [1, 2]), (3, [1, 2]), (1, [0, 1])])
def test_invalid_policy(t, ids):
    with pytest.raises(SharingError):
        SharingPolicy(t, ids)


def test_share_index_must_be_positive():
    with pytest.raises(SharingError):
        SecretShare(0, FieldElement(1))


def test_hiding_below_threshold():
    t = 4
    shares = share(FieldElement(31337), SharingPolicy(t, range(1, 8)), b"h")
    fixed = shares[:t - 1]
    target_index = shares[t - 1].holder_index
    for v in (0, 1, 42, P - 1):
        # value of the t-th share that makes the secret equal v
        lam = lagrange_at_zero([s.holder_index for s in fixed] + [target_index], P)
        partial = sum(l * s.value.value for l, s in zip(lam, fixed)) % P
        y = (v - partial) * pow(lam[-1], -1, P) % P
        completed = fixed + [SecretShare(target_index, FieldElement(y))]
        assert reconstruct(completed, t).value == v


def test_sharing_is_deterministic_in_seed():
    policy = SharingPolicy(3, range(1, 6))
    a = share(FieldElement(9), policy, b"s")
    assert a == share(FieldElement(9), policy, b"s")
    assert a != share(FieldElement(9), policy, b"t")
