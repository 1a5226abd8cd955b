import random

import pytest
from hypothesis import given, settings, strategies as st

from muxchain.core import (EMPTY, GENESIS_HASH, Block, BucketSpec, BucketViolation, ChainStore,
                           ChainingViolation, DecisionVector, MacroBlock, MissingBlocks, SizeViolation,
                           Transaction, TxPool, assemble_macroblock, disjoint_slots, macro_hash, make_block,
                           sha256, tx_bucket, validate_block)

digests = st.binary(min_size=32, max_size=32)


def txs(n, size=500, tag=b"t"):
    return [Transaction.from_payload(tag + b"%06d" % i + bytes(size - len(tag) - 6)) for i in range(n)]


def test_single_bucket_is_zero():
    assert tx_bucket(sha256(b"x"), BucketSpec(1)) == 0


def test_five_mod_three():
    assert tx_bucket((5).to_bytes(32, "big"), BucketSpec(3)) == 2


def test_bucket_spec_rejects_zero():
    with pytest.raises(ValueError):
        BucketSpec(0)


def test_transaction_needs_positive_size():
    with pytest.raises(ValueError):
        Transaction(sha256(b"x"), 0)


@given(digests, st.integers(1, 64))
def test_exactly_one_bucket(d, cl):
    b = tx_bucket(d, BucketSpec(cl))
    assert 0 <= b < cl
    assert sum(1 for k in range(cl) if int.from_bytes(d, "big") % cl == k) == 1


def test_bucket_histogram_uniform():
    rng = random.Random(7)
    cl = 8
    counts = [0] * cl
    n = 100_000
    for _ in range(n):
        counts[tx_bucket(rng.randbytes(32), BucketSpec(cl))] += 1
    mean = n / cl
    sigma = (n * (1 / cl) * (1 - 1 / cl)) ** 0.5
    assert all(abs(c - mean) <= 3 * sigma for c in counts)


def test_empty_pool_gives_empty_block():
    spec = BucketSpec(4)
    pool = [t for t in txs(50) if tx_bucket(t.id, spec) != 2]
    b = make_block(0, 0, 2, EMPTY, pool, 10_000, spec)
    assert b.txs == () and b.body_size == 0


def test_single_bucket_fills_to_cap():
    b = make_block(0, 0, 0, EMPTY, txs(100), 10_000, BucketSpec(1))
    assert b.body_size == 10_000 and len(b.txs) == 20


def test_valid_block_passes():
    spec = BucketSpec(4)
    b = make_block(1, 0, 3, GENESIS_HASH, txs(200), 20_000, spec)
    validate_block(b, spec, GENESIS_HASH, 20_000)


def test_out_of_bucket_transaction_rejected():
    spec = BucketSpec(4)
    good = make_block(1, 0, 3, GENESIS_HASH, txs(200), 20_000, spec)
    stray = next(t for t in txs(50, tag=b"s") if tx_bucket(t.id, spec) != 3)
    bad = Block(1, 0, 3, GENESIS_HASH, good.txs + (stray,), good.body_size + stray.payload_size)
    with pytest.raises(BucketViolation):
        validate_block(bad, spec, GENESIS_HASH, 40_000)


def test_stale_prev_rejected():
    spec = BucketSpec(2)
    b = make_block(1, 0, 0, sha256(b"old"), txs(20), 5_000, spec)
    with pytest.raises(ChainingViolation):
        validate_block(b, spec, GENESIS_HASH, 5_000)


def test_oversize_rejected():
    spec = BucketSpec(1)
    b = make_block(1, 0, 0, GENESIS_HASH, txs(20), 5_000, spec)
    with pytest.raises(SizeViolation):
        validate_block(b, spec, GENESIS_HASH, 4_000)


def _blocks(cl, prev=GENESIS_HASH, round=0, n=400):
    spec = BucketSpec(cl)
    pool = txs(n)
    return [make_block(k, round, k, prev, pool, 5_000, spec) for k in range(cl)]


def test_all_empty_vector_assembles_to_zero_payload():
    m = assemble_macroblock(DecisionVector(0, (EMPTY,) * 3), {})
    assert m.payload_size == 0 and m.blocks == (None, None, None)


def test_three_known_blocks_in_slot_order():
    bs = _blocks(3)
    m = assemble_macroblock(DecisionVector(0, tuple(b.digest for b in bs)), {b.digest: b for b in bs})
    assert m.blocks == tuple(bs)


def test_unknown_digest_reported_missing():
    bs = _blocks(3)
    known = {b.digest: b for b in bs[:2]}
    with pytest.raises(MissingBlocks) as exc:
        assemble_macroblock(DecisionVector(0, tuple(b.digest for b in bs)), known)
    assert exc.value.missing == {bs[2].digest}


def test_slot_must_hold_its_own_bucket():
    bs = _blocks(2)
    with pytest.raises(BucketViolation):
        assemble_macroblock(DecisionVector(0, (bs[1].digest, bs[0].digest)), {b.digest: b for b in bs})


def test_macro_hash_stable_and_order_sensitive():
    bs = _blocks(2)
    m = MacroBlock(0, tuple(bs))
    assert macro_hash(m) == macro_hash(MacroBlock(0, tuple(bs)))
    assert macro_hash(m) != macro_hash(MacroBlock(0, (bs[1], bs[0])))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_random_macroblocks_are_disjoint_and_within_capacity(cl, seed):
    spec = BucketSpec(cl)
    rng = random.Random(seed)
    pool = TxPool(b"prop/%d" % seed, 300, spec)
    bs = 3_000
    blocks = []
    for k in range(cl):
        if rng.random() < 0.8:
            blocks.append(make_block(k, 0, k, GENESIS_HASH, pool.iter_bucket(k), bs, spec))
        else:
            blocks.append(None)
    m = MacroBlock(0, tuple(blocks))
    assert disjoint_slots(m)
    sets = [set(b.tx_ids) for b in blocks if b is not None]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            assert not sets[i] & sets[j]
    assert m.payload_size <= cl * bs


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6))
def test_chain_replays_from_genesis(cl, rounds):
    spec = BucketSpec(cl)
    pool = TxPool(b"chain", 250, spec)
    chain = ChainStore()
    for r in range(rounds):
        blocks = [make_block(k, r, k, chain.tip_hash, pool.iter_bucket(k), 1_000, spec) for k in range(cl)]
        m = MacroBlock(r, tuple(blocks))
        chain.append(m)
        pool.remove(m.tx_ids())
    assert chain.replay()
    assert chain.hashes() == [m.macro_hash for m in chain.blocks]


def test_chain_rejects_wrong_prev():
    chain = ChainStore()
    chain.append(MacroBlock(0, tuple(_blocks(2))))
    with pytest.raises(ChainingViolation):
        chain.append(MacroBlock(1, tuple(_blocks(2, round=1))))


def test_pool_remove_and_restore():
    spec = BucketSpec(2)
    pool = TxPool(b"p", 100, spec)
    first = pool.take(0, 300)
    pool.remove(t.id for t in first)
    assert not set(t.id for t in first) & set(t.id for t in pool.take(0, 300))
    pool.restore(t.id for t in first)
    assert pool.take(0, 300) == first
