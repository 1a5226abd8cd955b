"""Leader-election primitives: VRF, sortition, coverage formulas, PoW and Merkle trees.

The VRF is built from deterministic Ed25519 signatures: the proof is the
signature over ``b"VRF1" | input`` and the value is ``sha256(b"VRFV" | proof)``.
Ed25519 signing is deterministic, so outputs are unique per (key, input), and
anyone holding the public key can check the proof.  Swapping in an ECVRF only
requires replacing :func:`vrf_eval` and :func:`vrf_verify`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .core import digest_int, sha256, u32, u64

MAX_TARGET = 2 ** 256


@dataclass(frozen=True)
class KeyPair:
    node: int
    secret_key: Ed25519PrivateKey
    public_key: bytes

    @classmethod
    def derive(cls, seed: bytes, node: int) -> "KeyPair":
        sk = Ed25519PrivateKey.from_private_bytes(sha256(b"KEY1", seed, u32(node)))
        pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(node, sk, pk)


@dataclass(frozen=True)
class VrfOutput:
    value: bytes
    proof: bytes


def vrf_eval(sk: Ed25519PrivateKey, data: bytes) -> VrfOutput:
    proof = sk.sign(b"VRF1" + data)
    return VrfOutput(sha256(b"VRFV", proof), proof)


@lru_cache(maxsize=1 << 16)
def _check(pk: bytes, data: bytes, value: bytes, proof: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(proof, b"VRF1" + data)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return sha256(b"VRFV", proof) == value


def vrf_verify(pk: bytes, data: bytes, out: VrfOutput) -> bool:
    if not isinstance(out.proof, bytes) or not isinstance(out.value, bytes):
        return False
    return _check(pk, data, out.value, out.proof)


# -- sortition -----------------------------------------------------------------

PROPOSER = b"proposer"
FINAL = b"final"


def step_tag(step: int) -> bytes:
    return b"step" + u32(step)


@dataclass(frozen=True)
class SortitionResult:
    j: int
    vrf: VrfOutput
    priority: bytes
    bucket: int

    @property
    def selected(self) -> bool:
        return self.j > 0


def priority(vrf_value: bytes, weight_evidence: bytes, bucket: int) -> bytes:
    return sha256(vrf_value, weight_evidence, u32(bucket))


def weight_evidence(weight: int) -> bytes:
    return u64(weight)


def _selection_count(value: bytes, weight: int, p: float) -> int:
    """Index of the binomial CDF interval holding the normalised vrf value."""
    if p <= 0.0:
        return 0
    if p >= 1.0:
        return weight
    x = digest_int(value) / MAX_TARGET
    q = 1.0 - p
    term = q ** weight
    cdf = term
    j = 0
    while x >= cdf and j < weight:
        term *= (weight - j) / (j + 1) * p / q
        j += 1
        cdf += term
    return j


def sortition(sk: Ed25519PrivateKey, seed: bytes, role_tag: bytes, tau: float,
              weight: int, total_weight: int, cl: int) -> SortitionResult:
    out = vrf_eval(sk, seed + role_tag)
    p = min(1.0, tau / total_weight) if tau > 0 else 0.0
    j = _selection_count(out.value, weight, p)
    bucket = digest_int(out.value) % cl
    return SortitionResult(j, out, priority(out.value, weight_evidence(weight), bucket), bucket)


def verify_sortition(pk: bytes, seed: bytes, role_tag: bytes, tau: float, weight: int,
                     total_weight: int, cl: int, res: SortitionResult) -> bool:
    """Recompute everything in ``res`` from the vrf output; the claimed fields must match."""
    if not vrf_verify(pk, seed + role_tag, res.vrf):
        return False
    p = min(1.0, tau / total_weight) if tau > 0 else 0.0
    bucket = digest_int(res.vrf.value) % cl
    return (res.j == _selection_count(res.vrf.value, weight, p) and res.bucket == bucket
            and res.priority == priority(res.vrf.value, weight_evidence(weight), bucket))


# -- coverage probabilities ------------------------------------------------------

def bucket_coverage_prob(cl: int, tau: int) -> float:
    return float(1 - (1 - Fraction(1, cl)) ** tau)


def all_buckets_prob(cl: int, tau: int) -> float:
    total = sum((-1) ** (cl - i) * math.comb(cl, i) * Fraction(i, cl) ** tau for i in range(cl + 1))
    return float(total)


def default_tau_proposer(cl: int, floor: int = 26, target: float = 0.99) -> int:
    tau = floor
    while all_buckets_prob(cl, tau) < target:
        tau += 1
    return tau


# -- proof of work -----------------------------------------------------------------

def pow_digest(header: bytes, nonce: int) -> bytes:
    return sha256(header, u64(nonce))


def pow_search(header: bytes, target: int, nonce_start: int, nonce_budget: int) -> Optional[int]:
    for nonce in range(nonce_start, nonce_start + nonce_budget):
        if digest_int(pow_digest(header, nonce)) < target:
            return nonce
    return None


def pow_verify(header: bytes, nonce: int, target: int) -> bool:
    return digest_int(pow_digest(header, nonce)) < target


def scale_target(base_target: int, cl: int) -> int:
    if cl < 1:
        raise ValueError("cl must be >= 1")
    return min(base_target * cl, MAX_TARGET - 1)


# -- merkle tree -------------------------------------------------------------------

LEFT, RIGHT = 0, 1


def _leaf(d: bytes) -> bytes:
    return sha256(b"\x00", d)


def _node(l: bytes, r: bytes) -> bytes:
    return sha256(b"\x01", l, r)


@dataclass(frozen=True)
class MerkleCommitment:
    root: bytes
    leaf_count: int
    paths: tuple[tuple[tuple[bytes, int], ...], ...]


def merkle_root(leaves: Sequence[bytes]) -> MerkleCommitment:
    """Build the tree; each path entry is (sibling digest, side the sibling sits on)."""
    if not leaves:
        raise ValueError("merkle tree needs at least one leaf")
    level = [_leaf(x) for x in leaves]
    pos = list(range(len(leaves)))
    paths: list[list[tuple[bytes, int]]] = [[] for _ in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        for k, p in enumerate(pos):
            if p % 2:
                paths[k].append((level[p - 1], LEFT))
            else:
                paths[k].append((level[p + 1], RIGHT))
            pos[k] = p // 2
        level = [_node(level[i], level[i + 1]) for i in range(0, len(level), 2)]
    return MerkleCommitment(level[0], len(leaves), tuple(tuple(p) for p in paths))


def merkle_verify(leaf: bytes, path: Sequence[tuple[bytes, int]], root: bytes) -> bool:
    h = _leaf(leaf)
    for sib, side in path:
        if side == LEFT:
            h = _node(sib, h)
        elif side == RIGHT:
            h = _node(h, sib)
        else:
            return False
    return h == root
