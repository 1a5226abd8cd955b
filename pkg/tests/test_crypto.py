import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from muxchain.core import digest_int, sha256
from muxchain.crypto import (MAX_TARGET, PROPOSER, KeyPair, VrfOutput, _selection_count, all_buckets_prob,
                             bucket_coverage_prob, default_tau_proposer, merkle_root, merkle_verify, pow_digest,
                             pow_search, pow_verify, priority, scale_target, sortition, verify_sortition,
                             vrf_eval, vrf_verify)

KP = KeyPair.derive(b"crypto-tests", 0)
OTHER = KeyPair.derive(b"crypto-tests", 1)


def test_vrf_roundtrip_and_determinism():
    a = vrf_eval(KP.secret_key, b"input")
    assert vrf_verify(KP.public_key, b"input", a)
    assert vrf_eval(KP.secret_key, b"input") == a


def test_vrf_rejects_wrong_key_input_and_value():
    a = vrf_eval(KP.secret_key, b"input")
    assert not vrf_verify(OTHER.public_key, b"input", a)
    assert not vrf_verify(KP.public_key, b"other", a)
    assert not vrf_verify(KP.public_key, b"input", VrfOutput(sha256(b"x"), a.proof))


def test_vrf_proof_bit_flips_all_fail():
    a = vrf_eval(KP.secret_key, b"flip")
    rng = random.Random(3)
    for _ in range(100):
        pos = rng.randrange(len(a.proof) * 8)
        proof = bytearray(a.proof)
        proof[pos // 8] ^= 1 << (pos % 8)
        assert not vrf_verify(KP.public_key, b"flip", VrfOutput(a.value, bytes(proof)))


def test_vrf_malformed_proof_is_false():
    assert not vrf_verify(KP.public_key, b"x", VrfOutput(sha256(b"x"), b"short"))
    assert not vrf_verify(KP.public_key, b"x", VrfOutput(sha256(b"x"), None))


def test_vrf_mutation_fuzz_never_accepts():
    rng = random.Random(11)
    base = vrf_eval(KP.secret_key, b"fuzz")
    accepted = 0
    for i in range(10_000):
        proof = bytearray(base.proof)
        for _ in range(rng.randint(1, 4)):
            proof[rng.randrange(len(proof))] = rng.randrange(256)
        if bytes(proof) == base.proof:
            continue
        out = VrfOutput(sha256(b"VRFV", bytes(proof)), bytes(proof))
        accepted += vrf_verify(KP.public_key, b"fuzz", out)
    assert accepted == 0


def test_forced_selection_and_none():
    seed = sha256(b"seed")
    r = sortition(KP.secret_key, seed, PROPOSER, 10, 1, 10, 4)
    assert r.j == 1
    r0 = sortition(KP.secret_key, seed, PROPOSER, 1e-12, 1, 10, 4)
    assert r0.j == 0


def test_sortition_bucket_and_priority_rules():
    r = sortition(KP.secret_key, sha256(b"s"), PROPOSER, 5, 1, 10, 8)
    assert r.bucket == digest_int(r.vrf.value) % 8
    assert r.priority == priority(r.vrf.value, (1).to_bytes(8, "big"), r.bucket)
    assert verify_sortition(KP.public_key, sha256(b"s"), PROPOSER, 5, 1, 10, 8, r)


def test_claimed_bucket_must_match_vrf():
    r = sortition(KP.secret_key, sha256(b"s"), PROPOSER, 5, 1, 10, 8)
    forged = replace(r, bucket=(r.bucket + 1) % 8)
    assert not verify_sortition(KP.public_key, sha256(b"s"), PROPOSER, 5, 1, 10, 8, forged)
    assert not verify_sortition(OTHER.public_key, sha256(b"s"), PROPOSER, 5, 1, 10, 8, r)


def test_priority_depends_on_bucket():
    v = sha256(b"v")
    assert priority(v, b"w", 0) == priority(v, b"w", 0)
    assert priority(v, b"w", 0) != priority(v, b"w", 1)


def test_selection_mean_matches_binomial():
    # 1000 unit-weight nodes, tau=26, averaged over 10^4 rounds
    rng = random.Random(5)
    n, tau, rounds = 1000, 26, 10_000
    p = tau / n
    total = 0
    for _ in range(rounds):
        total += sum(_selection_count(rng.randbytes(32), 1, p) for _ in range(n))
    mean = total / rounds
    sigma = (n * p * (1 - p) / rounds) ** 0.5
    assert abs(mean - tau) <= 3 * sigma


def test_real_sortition_selection_rate():
    keys = [KeyPair.derive(b"sortition-rate", i) for i in range(1000)]
    hits = 0
    rounds = 10
    for r in range(rounds):
        seed = sha256(b"round", bytes([r]))
        hits += sum(sortition(k.secret_key, seed, PROPOSER, 26, 1, 1000, 8).j for k in keys)
    sigma = (rounds * 1000 * 0.026 * 0.974) ** 0.5
    assert abs(hits - rounds * 26) <= 3 * sigma


def test_coverage_formulas_small_cases():
    assert bucket_coverage_prob(1, 5) == 1.0 and all_buckets_prob(1, 5) == 1.0
    assert bucket_coverage_prob(2, 1) == 0.5 and all_buckets_prob(2, 1) == 0.0


@pytest.mark.parametrize("cl", [2, 4, 8])
@pytest.mark.parametrize("tau", [4, 16, 64])
def test_coverage_formulas_against_monte_carlo(cl, tau):
    rng = random.Random(cl * 100 + tau)
    trials = 20_000
    one = every = 0
    for _ in range(trials):
        hit = {rng.randrange(cl) for _ in range(tau)}
        one += 0 in hit
        every += len(hit) == cl
    assert abs(one / trials - bucket_coverage_prob(cl, tau)) <= 0.01
    assert abs(every / trials - all_buckets_prob(cl, tau)) <= 0.01


def test_default_tau_reaches_coverage_target():
    for cl in (1, 2, 8, 32):
        assert all_buckets_prob(cl, default_tau_proposer(cl)) >= 0.99


def test_pow_extremes():
    assert pow_search(b"h", MAX_TARGET, 17, 10) == 17
    assert pow_search(b"h", 0, 0, 1000) is None
    assert pow_search(b"h", MAX_TARGET, 0, 0) is None


def test_pow_search_returns_first_solution():
    target = MAX_TARGET >> 6
    n = pow_search(b"hdr", target, 0, 10_000)
    assert pow_verify(b"hdr", n, target)
    assert not any(pow_verify(b"hdr", k, target) for k in range(n))


def test_scale_target():
    base = MAX_TARGET >> 20
    assert scale_target(base, 1) == base
    assert scale_target(base, 2) == 2 * base
    assert scale_target(MAX_TARGET, 4) == MAX_TARGET - 1
    with pytest.raises(ValueError):
        scale_target(base, 0)


def test_doubled_target_doubles_solve_rate():
    base = MAX_TARGET >> 8
    n = 10_000
    one = sum(pow_verify(b"rate", k, base) for k in range(n))
    two = sum(pow_verify(b"rate", k, scale_target(base, 2)) for k in range(n))
    assert abs(two / one - 2) < 0.3


def test_merkle_single_leaf():
    leaf = sha256(b"only")
    c = merkle_root([leaf])
    assert c.root == sha256(b"\x00", leaf) and c.paths == ((),)


def test_merkle_empty_rejected():
    with pytest.raises(ValueError):
        merkle_root([])


@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=33), st.data())
@settings(max_examples=50)
def test_merkle_paths_verify_and_tampering_fails(leaves, data):
    c = merkle_root(leaves)
    for leaf, path in zip(leaves, c.paths):
        assert merkle_verify(leaf, path, c.root)
    i = data.draw(st.integers(0, len(leaves) - 1))
    path = list(c.paths[i])
    if path:
        k = data.draw(st.integers(0, len(path) - 1))
        sib, side = path[k]
        path[k] = (sha256(sib), side)
        assert not merkle_verify(leaves[i], path, c.root)
    assert not merkle_verify(sha256(leaves[i]), c.paths[i], c.root)
