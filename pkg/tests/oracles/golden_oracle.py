"""Independent recomputation of pinned digests and counts.

Uses only hashlib, struct and the Ed25519 primitive, never the package itself.
Run ``python tests/oracles/golden_oracle.py`` and compare with test_golden.py.
"""

import hashlib
import json
import struct

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey


def h(*parts):
    return hashlib.sha256(b"".join(parts)).digest()


def be32(x):
    return struct.pack(">I", x)


def be64(x):
    return struct.pack(">Q", x)


def as_int(d):
    return int.from_bytes(d, "big")


out = {}

# bucket of the digest of "tx-0001" among 8 buckets
out["tx_0001_bucket_cl8"] = as_int(h(b"tx-0001")) % 8

# greedy fill: 1000 payloads of 500 bytes, bucket 1 of 4, 100000-byte cap
payloads = [b"pool-%04d" % i + bytes(500 - 9) for i in range(1000)]
ids = [h(p) for p in payloads]
picked = []
for tid in ids:
    if as_int(tid) % 4 != 1:
        continue
    if 500 * (len(picked) + 1) > 100_000:
        break
    picked.append(tid)
out["fill_count"] = len(picked)
out["fill_ids_digest"] = h(*picked).hex()

# block header layout: BLK1 | u32 proposer | u64 round | u32 bucket | prev | seed | u32 len(proof) | proof
#                      | u32 n_tx | tx ids | u64 body
prev = h(b"prev")
tx_ids = [h(b"a"), h(b"b")]
blk = h(b"BLK1", be32(3), be64(9), be32(1), prev, bytes(32), be32(0), be32(2), *tx_ids, be64(1000))
out["block_digest"] = blk.hex()

# macro hash: MAC1 | u64 round | u32 slot count | slots, empty slot = 32 zero bytes
slots = [h(b"s0"), bytes(32), h(b"s2")]
out["macro_hash"] = h(b"MAC1", be64(7), be32(3), *slots).hex()

# priority = H(vrf value | u64 weight | u32 bucket)
out["priority"] = h(h(b"vrf"), be64(1), be32(5)).hex()

# merkle root of four leaves; leaf = H(0|d), node = H(1|l|r)
leaves = [h(bytes([i])) for i in range(4)]
lv = [h(b"\x00", x) for x in leaves]
l1 = [h(b"\x01", lv[0], lv[1]), h(b"\x01", lv[2], lv[3])]
out["merkle_root4"] = h(b"\x01", l1[0], l1[1]).hex()

# pow: nonces 0..99999 on header "hdr" under target 2^248
out["pow_count_2_248"] = sum(1 for n in range(100_000) if as_int(h(b"hdr", be64(n))) < 2 ** 248)

# all_buckets_prob(2, 2) by enumeration of the 4 assignments
assign = [(a, b) for a in range(2) for b in range(2)]
out["all_buckets_2_2"] = sum(1 for a in assign if set(a) == {0, 1}) / len(assign)


# seed chain: two members each contribute VRF(member seeds | u64 r); seed = H(SEED | members)
def key(node):
    return Ed25519PrivateKey.from_private_bytes(h(b"KEY1", b"seed-chain", be32(node)))


def vrf_value(sk, data):
    return h(b"VRFV", sk.sign(b"VRF1" + data))


members = (bytes(32), bytes(32))
chain = []
for r in range(1, 6):
    data = b"".join(members) + be64(r)
    members = tuple(vrf_value(key(k), data) for k in range(2))
    chain.append(h(b"SEED", *members).hex())
out["seed_chain"] = chain

# leader election for committee 64, cl 4, round 3
rand = h(b"EPOCH", be64(1))
taken, leaders = set(), []
for k in range(4):
    i = as_int(h(b"LEAD", rand, be64(3), be32(k))) % 64
    while i in taken:
        i = (i + 1) % 64
    taken.add(i)
    leaders.append(i)
out["leaders_r3"] = leaders
out["epoch_rand_1"] = rand.hex()

print(json.dumps(out, indent=1))
