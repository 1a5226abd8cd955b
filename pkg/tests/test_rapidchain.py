from collections import Counter

import pytest

from muxchain.core import digest_int
from muxchain.harness.audit import audit
from muxchain.harness.config import ConfigError, ScenarioConfig
from muxchain.harness.runner import run_scenario
from muxchain.rapidchain import RapidChain, elect_leaders, epoch_randomness


def cfg(**kw):
    base = dict(protocol="rapidchain", committee_size=64, cl=4, macroblock_size=400_000, rounds=5,
                rng_seed=1, ida_chunks=4)
    base.update(kw)
    return ScenarioConfig(**base)


def test_single_leader_election_is_first_pick():
    rand = epoch_randomness(3)
    for r in range(20):
        assert elect_leaders(rand, r, 1, 64) == elect_leaders(rand, r, 4, 64)[:1]


def test_leaders_are_distinct_and_deterministic():
    rand = epoch_randomness(5)
    for r in range(50):
        ls = elect_leaders(rand, r, 8, 16)
        assert ls == elect_leaders(rand, r, 8, 16)
        assert len(set(ls)) == 8 and all(0 <= i < 16 for i in ls)
    assert sorted(elect_leaders(rand, 0, 16, 16)) == list(range(16))


def test_more_buckets_than_members_rejected():
    with pytest.raises(ValueError):
        elect_leaders(epoch_randomness(1), 0, 5, 4)
    with pytest.raises(ConfigError):
        ScenarioConfig(protocol="rapidchain", committee_size=4, cl=5, macroblock_size=500)


def test_leadership_frequency_uniform():
    m, cl, rounds = 64, 4, 1000
    rand = epoch_randomness(9)
    counts = Counter(i for r in range(rounds) for i in elect_leaders(rand, r, cl, m))
    p = cl / m
    mean = rounds * p
    sigma = (rounds * p * (1 - p)) ** 0.5
    assert all(abs(counts[i] - mean) <= 3.5 * sigma for i in range(m))


def test_all_honest_committee_fills_every_slot():
    out = RapidChain(cfg()).run()
    assert out.status == "ok"
    assert out.decided_slots == 20 and out.empty_slots == 0
    assert len({tuple(c) for c in out.chains.values()}) == 1


def test_silent_members_up_to_the_bound_still_accept():
    c = cfg(byzantine_fraction=0.49, byzantine_behavior="silent", f_count=31)
    rc = RapidChain(c)
    out = rc.run()
    assert len(rc.behavior) == 31
    assert out.status == "ok"
    assert len({tuple(ch) for ch in out.chains.values()}) == 1
    ref = rc.members[rc.honest[0]].chain
    for r, m in enumerate(ref.blocks):
        for k, leader in enumerate(rc.leaders_of(r)):
            assert (m.blocks[k] is None) == (leader in rc.behavior)


def test_equivocating_leaders_leave_their_slot_empty():
    c = cfg(byzantine_fraction=0.3, byzantine_behavior="equivocate", rounds=8)
    rc = RapidChain(c)
    out = rc.run()
    assert out.status == "ok"
    assert len({tuple(ch) for ch in out.chains.values()}) == 1
    ref = rc.members[rc.honest[0]].chain
    led = 0
    for r, m in enumerate(ref.blocks):
        for k, leader in enumerate(rc.leaders_of(r)):
            if leader in rc.behavior:
                led += 1
                assert m.blocks[k] is None
            else:
                assert m.blocks[k] is not None
    assert led > 0


def test_decided_slots_hold_their_own_bucket():
    rc = RapidChain(cfg(cl=4))
    rc.run()
    for m in rc.members[rc.honest[0]].chain.blocks:
        for k, b in enumerate(m.blocks):
            assert all(digest_int(t) % 4 == k for t in b.tx_ids)


def test_accept_evidence_meets_threshold():
    c = cfg(byzantine_fraction=0.49, byzantine_behavior="mixed", f_count=31, trace=True)
    _, log, out = run_scenario(c)
    signers = [int(line.split(",")[3]) for line in log.lines if line.startswith("accept,")]
    assert signers and min(signers) >= 32
    assert audit(log.text()) == []


def test_audited_twenty_rounds_clean():
    _, log, out = run_scenario(cfg(rounds=20, rng_seed=4, trace=True))
    assert out.status == "ok" and out.rounds_done == 20
    assert audit(log.text()) == []


def test_same_seed_same_log():
    assert run_scenario(cfg(rounds=3))[1].text() == run_scenario(cfg(rounds=3))[1].text()
