"""Proof-of-work chain mining macroblocks of ``cl`` blocks.

A miner commits one candidate block per bucket under a merkle root, searches a
nonce for ``prev | root``, and the solution digest mod ``cl`` decides which of
its candidates it may publish.  A height is complete once every bucket has a
candidate; the smallest block digest wins each bucket.  Same-height blocks a
miner already knew when it mined are listed in its siblings field; linked
siblings stay part of the chain.  The difficulty is divided by ``cl`` so
``cl`` solutions arrive per base interval.

The baseline is ordinary longest-chain mining at the same reduced difficulty,
one block per height.

Mining is a seeded Poisson process (one solution event at a time, miner drawn
uniformly); each event then runs a literal nonce search at the scaled target
so bucket assignment comes from a genuine solution digest.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .core import (EMPTY, GENESIS_HASH, Block, BucketSpec, TxPool, ValidationError, BucketViolation,
                   ChainingViolation, MacroBlock, digest_int, make_block, sha256, slots_macro_hash,
                   u32, validate_block)
from .crypto import (MAX_TARGET, MerkleCommitment, merkle_root, merkle_verify, pow_digest,
                     pow_search, pow_verify, scale_target)
from .harness.config import ScenarioConfig
from .harness.runlog import Outcome, RunLog, ms
from .netsim import Gossip, LinkParams, Network, Simulator, bootstrap

BLOCK_HEADER_BYTES = 256
REQUEST_BYTES = 100
NONCE_BUDGET = 1 << 22


class PowViolation(ValidationError):
    check = "pow"


class CommitmentViolation(ValidationError):
    check = "commitment"


@dataclass(frozen=True, eq=False)
class MinedBlock:
    block: Block
    prev: bytes
    root: bytes
    nonce: int
    path: tuple[tuple[bytes, int], ...]
    siblings: tuple[bytes, ...]
    # slots of the macroblock ``prev`` names, so receivers can rebuild it
    prev_slots: tuple[bytes, ...]

    @property
    def header(self) -> bytes:
        return macro_header(self.prev, self.root)

    @property
    def solution(self) -> bytes:
        return pow_digest(self.header, self.nonce)

    @property
    def digest(self) -> bytes:
        return self.block.digest

    @property
    def wire_size(self) -> int:
        extra = len(self.siblings) + len(self.path) + len(self.prev_slots)
        return self.block.body_size + BLOCK_HEADER_BYTES + 32 * extra


def macro_header(prev: bytes, root: bytes) -> bytes:
    return b"MHD1" + prev + root


def candidate_leaf(block: Block, siblings: tuple[bytes, ...]) -> bytes:
    return sha256(b"MBL1", block.digest, u32(len(siblings)), *siblings)


def verify_mined(mb: MinedBlock, spec: BucketSpec, expected_prev: bytes, target: int, bs: int) -> None:
    """Raise the first violated check; return None when the mined block is sound."""
    if not pow_verify(mb.header, mb.nonce, target):
        raise PowViolation("header digest is not below the target")
    if not merkle_verify(candidate_leaf(mb.block, mb.siblings), mb.path, mb.root):
        raise CommitmentViolation("block is not committed under the mined header")
    if digest_int(mb.solution) % spec.cl != mb.block.bucket:
        raise BucketViolation(f"solution maps to bucket {digest_int(mb.solution) % spec.cl}, "
                              f"block claims {mb.block.bucket}")
    if mb.prev != expected_prev:
        raise ChainingViolation("header does not extend the expected macroblock")
    validate_block(mb.block, spec, expected_prev, bs)


def link_sibling(row: list[bytes], digest: bytes, cap: int) -> bool:
    """Put ``digest`` in the next empty sibling slot; False when the row is full."""
    if digest in row:
        return True
    if len(row) >= cap:
        return False
    row.append(digest)
    return True


def complete_round(cands: list[MinedBlock], cl: int) -> Optional[tuple[MinedBlock, ...]]:
    """Smallest block digest per bucket, or None while some bucket has no candidate."""
    best: dict[int, MinedBlock] = {}
    for mb in cands:
        cur = best.get(mb.block.bucket)
        if cur is None or mb.digest < cur.digest:
            best[mb.block.bucket] = mb
    if len(best) < cl:
        return None
    return tuple(best[k] for k in range(cl))


def discard_ratio(mined_bytes: int, appended_bytes: int) -> Optional[float]:
    """Mined bytes that never reached the chain per appended byte; None when nothing was appended."""
    if appended_bytes <= 0:
        return None
    return (mined_bytes - appended_bytes) / appended_bytes


@dataclass
class Macro:
    hash: bytes
    prev: bytes
    height: int
    members: tuple[MinedBlock, ...]
    work: int

    @property
    def slots(self) -> tuple[bytes, ...]:
        return tuple(mb.digest for mb in self.members)


def fork_key(m: Macro, preferred: bool) -> tuple:
    """Longest chain, then most work, then the full smallest-wins composition, then smallest digest."""
    return (m.height, m.work, preferred, -digest_int(m.hash))


class Miner:
    def __init__(self, nid: int, pool: TxPool, silent: bool):
        self.id = nid
        self.pool = pool
        self.silent = silent
        self.blocks: dict[bytes, MinedBlock] = {}
        self.by_prev: dict[bytes, list[MinedBlock]] = {}
        self.macros: dict[bytes, Macro] = {}
        self.best_for: dict[bytes, bytes] = {}
        self.head = GENESIS_HASH
        self.since: dict[bytes, float] = {}
        self.own: dict[bytes, MinedBlock] = {}
        self.own_live: set[bytes] = set()
        # blocks whose parent macroblock this node cannot rebuild yet
        self.orphans: dict[bytes, MinedBlock] = {}
        self.requested: set[bytes] = set()


class Bitcoin:
    def __init__(self, cfg: ScenarioConfig, log: Optional[RunLog] = None):
        self.cfg = cfg
        self.mux = cfg.variant == "mux"
        self.cl = cfg.cl if self.mux else 1
        self.rate_mult = cfg.cl
        # a baseline height carries one block, so cl heights match one macroblock
        self.heights = cfg.rounds if self.mux else cfg.rounds * cfg.cl
        self.spec = BucketSpec(self.cl)
        self.bs = cfg.block_size
        self.n = cfg.n_nodes
        self.target = scale_target(MAX_TARGET >> cfg.pow_base_shift, cfg.cl)
        self.block_work = MAX_TARGET // self.target
        self.log = log if log is not None else RunLog(cfg)
        byz = set(cfg.byzantine_ids()) if cfg.byzantine_behavior != "none" else set()
        self.honest = [i for i in range(self.n) if i not in byz]
        self.sim = Simulator()
        peers = bootstrap(self.n, cfg.effective_fanout, cfg.sub_seed("topology"))
        self.net = Network(self.sim, peers, LinkParams(cfg.latency_ms, cfg.bandwidth_bps),
                           cfg.sub_seed("gossip"), [i not in byz for i in range(self.n)], cfg.trace)
        self.gossip = Gossip(self.net, "block", cfg.effective_fanout, self._on_block)
        self.rng = random.Random(cfg.sub_seed("mining"))
        self.nonce_rng = random.Random(cfg.sub_seed("nonce"))
        self.miners = [Miner(i, TxPool(b"pool/%d/%d" % (cfg.rng_seed, i), cfg.tx_size, self.spec), i in byz)
                       for i in range(self.n)]
        genesis = Macro(GENESIS_HASH, EMPTY, 0, (), 0)
        for v in self.miners:
            v.macros[GENESIS_HASH] = genesis
            v.since[GENESIS_HASH] = 0.0
        self.ref = self.miners[self.honest[0]]
        self.mined: dict[bytes, MinedBlock] = {}
        self.mined_at: dict[bytes, float] = {}
        self.mining = True
        self.reorgs = 0
        self.unlinked = 0
        self.log.honest(self.honest)

    # -- driver ------------------------------------------------------------------------

    def run(self) -> Outcome:
        self._schedule_mining()
        watchdog = self.cfg.watchdog_s * 1000.0
        status = self.sim.run_until(until=watchdog)
        return self._outcome(status)

    def _schedule_mining(self) -> None:
        mean_ms = self.cfg.block_interval_s * 1000.0 / self.rate_mult
        self.sim.schedule(self.rng.expovariate(1.0 / mean_ms), self._solve)

    def _solve(self) -> None:
        if not self.mining:
            return
        if self.ref.macros[self.ref.head].height >= self.heights:
            # stop mining; the queue drains and chains converge
            self.mining = False
            return
        v = self.miners[self.rng.randrange(self.n)]
        if not v.silent:
            self._mine(v)
        self._schedule_mining()

    # -- mining -----------------------------------------------------------------------

    def _mine(self, v: Miner) -> None:
        head = v.macros[v.head]
        round_ = head.height
        cands = []
        for k in range(self.cl):
            blk = make_block(v.id, round_, k, head.hash, v.pool.iter_bucket(k), self.bs, self.spec)
            cands.append(blk)
        siblings = self._sibling_field(v, head.hash) if self.mux else ()
        leaves = [candidate_leaf(b, siblings) for b in cands]
        tree: MerkleCommitment = merkle_root(leaves)
        header = macro_header(head.hash, tree.root)
        start = self.nonce_rng.getrandbits(40)
        nonce = None
        while nonce is None:
            nonce = pow_search(header, self.target, start, NONCE_BUDGET)
            start += NONCE_BUDGET
        bucket = digest_int(pow_digest(header, nonce)) % self.cl
        mb = MinedBlock(cands[bucket], head.hash, tree.root, nonce, tree.paths[bucket], siblings, head.slots)
        self.mined[mb.digest] = mb
        self.mined_at[mb.digest] = self.sim.now
        self.log.add("btc", ms(self.sim.now), "mined", bucket, mb.digest.hex()[:16], mb.block.body_size)
        v.own[mb.digest] = mb
        self._accept(v, mb)
        self.gossip.publish(v.id, mb.digest, mb, mb.wire_size)

    def _sibling_field(self, v: Miner, prev: bytes) -> tuple[bytes, ...]:
        """Link same-height blocks nobody known to this miner has linked yet."""
        known = v.by_prev.get(prev, [])
        linked = {d for mb in known for d in mb.siblings}
        row: list[bytes] = []
        for mb in known:
            if mb.digest not in linked and not link_sibling(row, mb.digest, self.cl):
                self.unlinked += 1
        return tuple(row)

    # -- receiving --------------------------------------------------------------------

    def _on_block(self, nid: int, msg_id: bytes, mb: MinedBlock) -> bool:
        v = self.miners[nid]
        if v is self.ref:
            self.log.add("btc", ms(self.sim.now), "received", mb.block.bucket, mb.digest.hex()[:16],
                         mb.block.body_size)
        return self._accept(v, mb)

    def _accept(self, v: Miner, mb: MinedBlock) -> bool:
        try:
            verify_mined(mb, self.spec, mb.block.prev_macro_hash, self.target, self.bs)
        except ValidationError:
            return False
        if mb.digest in v.blocks:
            return False
        v.blocks[mb.digest] = mb
        v.by_prev.setdefault(mb.prev, []).append(mb)
        if mb.prev not in v.macros:
            v.orphans[mb.digest] = mb
        for o in list(v.orphans.values()):
            self._learn_prev(v, o)
        self._try_complete(v, mb.prev)
        return True

    def _learn_prev(self, v: Miner, mb: MinedBlock) -> None:
        """Register the macroblock a block builds on when it is new to this node."""
        if mb.prev in v.macros:
            v.orphans.pop(mb.digest, None)
            return
        if not mb.prev_slots:
            return
        members = [v.blocks.get(d) for d in mb.prev_slots]
        if any(m is None for m in members):
            # push gossip can miss a node; ask the miner, who built on these blocks
            for d, m in zip(mb.prev_slots, members):
                if m is None and d not in v.requested and mb.block.proposer != v.id:
                    v.requested.add(d)
                    self.net.multicast(v.id, [mb.block.proposer], (v.id, d), REQUEST_BYTES, self._serve)
            return
        parent = v.macros.get(members[0].prev)
        if parent is None or any(m.prev != parent.hash for m in members):
            return
        if slots_macro_hash(parent.height, mb.prev_slots) != mb.prev:
            return
        self._register(v, parent, tuple(members))

    def _serve(self, holder: int, req) -> None:
        nid, d = req
        mb = self.miners[holder].blocks.get(d)
        if mb is None:
            self.miners[nid].requested.discard(d)
            return
        self.net.send(holder, nid, "fetch", mb, mb.wire_size, self._on_fetched)

    def _on_fetched(self, env) -> None:
        self._accept(self.miners[env.dst], env.payload)

    def _try_complete(self, v: Miner, prev: bytes) -> None:
        parent = v.macros.get(prev)
        if parent is None:
            return
        members = complete_round(v.by_prev.get(prev, []), self.cl)
        if members is None:
            return
        h = slots_macro_hash(parent.height, tuple(mb.digest for mb in members))
        old = v.best_for.get(prev)
        if old == h:
            return
        v.best_for[prev] = h
        if old == v.head:
            # the head just lost its tie-break preference
            if h not in v.macros:
                self._register(v, parent, members)
            self._choose_head(v)
        elif h not in v.macros:
            self._register(v, parent, members)
        else:
            self._choose_head(v, [v.macros[h]])

    def _register(self, v: Miner, parent: Macro, members: tuple[MinedBlock, ...]) -> None:
        slots = tuple(mb.digest for mb in members)
        h = slots_macro_hash(parent.height, slots)
        m = Macro(h, parent.hash, parent.height + 1, members, parent.work + self.block_work * len(members))
        v.macros[h] = m
        if v is self.ref:
            self.log.add("btc", ms(self.sim.now), "round_complete", -1, h.hex()[:16],
                         sum(mb.block.body_size for mb in members))
        # children may have arrived before this macroblock was known
        for mb in v.by_prev.get(h, ()):
            self._learn_prev(v, mb)
        self._try_complete(v, h)
        self._choose_head(v, [m])

    def _choose_head(self, v: Miner, cands: Optional[list[Macro]] = None) -> None:
        """Re-run fork choice over everything, or only the head against ``cands``."""
        pool = v.macros.values() if cands is None else [v.macros[v.head], *cands]
        best = max(pool, key=lambda m: fork_key(m, v.best_for.get(m.prev) == m.hash))
        if best.hash == v.head:
            return
        self._switch(v, best)

    def _chain(self, v: Miner, h: bytes) -> list[bytes]:
        out = []
        while h != GENESIS_HASH:
            out.append(h)
            h = v.macros[h].prev
        return out

    def _switch(self, v: Miner, new: Macro) -> None:
        old_chain = self._chain(v, v.head)
        new_chain = self._chain(v, new.hash)
        new_set = set(new_chain)
        if v.head not in new_set:
            if v is self.ref:
                self.log.add("btc", ms(self.sim.now), "reorg", -1, new.hash.hex()[:16], 0)
            if v.id in self.honest:
                self.reorgs += 1
        for h in old_chain:
            if h not in new_set:
                v.since.pop(h, None)
        now = self.sim.now
        for h in new_chain:
            if h in v.since:
                break
            v.since[h] = now
        v.head = new.hash
        self._sync_pool(v)

    def _sync_pool(self, v: Miner) -> None:
        """Own transactions stay out of the pool while their block is on the chain or
        still competing at the tip; orphaned blocks give them back."""
        if not v.own:
            return
        chain = set(self._chain(v, v.head))
        on_chain = set()
        for h in chain:
            on_chain.update(self._appended(v, v.macros[h]))
        for d, mb in v.own.items():
            live = d in on_chain or mb.prev == v.head
            if live and d not in v.own_live:
                v.pool.remove(mb.block.tx_ids)
                v.own_live.add(d)
            elif not live and d in v.own_live:
                v.pool.restore(mb.block.tx_ids)
                v.own_live.discard(d)

    def _appended(self, v: Miner, m: Macro) -> list[bytes]:
        """Digests a macroblock puts on the chain: its members plus every same-height
        block reachable from them through sibling links."""
        out = [mb.digest for mb in m.members]
        if self.mux:
            seen = set(out)
            stack = list(m.members)
            while stack:
                for d in stack.pop().siblings:
                    s = v.blocks.get(d)
                    if d not in seen and s is not None and s.prev == m.prev:
                        seen.add(d)
                        out.append(d)
                        stack.append(s)
        return out

    # -- results -----------------------------------------------------------------------

    def _outcome(self, status: str) -> Outcome:
        out = Outcome(self.log)
        ref = self.ref
        chain = list(reversed(self._chain(ref, ref.head)))
        out.rounds_done = len(chain)
        out.status = "ok" if len(chain) >= self.heights and status == "drained" else "stalled"
        appended = 0
        prev = GENESIS_HASH
        for h in chain:
            m = ref.macros[h]
            members = [mb.block for mb in m.members]
            mb_obj = MacroBlock(m.height - 1, tuple(members))
            self.log.macro(mb_obj, prev)
            member_set = {mb.digest for mb in m.members}
            for d in self._appended(ref, m):
                if d not in member_set:
                    b = ref.blocks[d].block
                    self.log.add("sibling", m.height - 1, d.hex(), b.bucket, b.body_size,
                                 ";".join(t.hex() for t in b.tx_ids))
            size = sum(ref.blocks[d].block.body_size for d in self._appended(ref, m))
            appended += size
            start = min(self.mined_at[mb.digest] for mb in m.members)
            seen = [self.miners[i].since.get(h) for i in self.honest]
            last = max(t for t in seen if t is not None) if all(t is not None for t in seen) else None
            if last is None:
                last = self.sim.now
            lat = last - start
            out.round_latencies.append(lat)
            out.decided_slots += len(m.members)
            out.elapsed_ms = max(out.elapsed_ms, last)
            self.log.round_line(m.height - 1, len(m.members), 0, lat)
            prev = h
        for i in self.honest:
            v = self.miners[i]
            out.chains[i] = list(reversed(self._chain(v, v.head)))
            for h in out.chains[i]:
                self.log.append(i, v.macros[h].height - 1, h, v.since[h])
        mined_bytes = sum(mb.block.body_size for mb in self.mined.values())
        out.appended_bytes = appended
        out.discard_ratio = discard_ratio(mined_bytes, appended)
        out.fork_count = self.reorgs
        self.log.add("metric", "unlinked_siblings", self.unlinked)
        if self.net.trace is not None:
            self.log.envelopes(self.net.trace)
        out.trace = self.net.trace
        return out


def run(cfg: ScenarioConfig, log: Optional[RunLog] = None) -> Outcome:
    return Bitcoin(cfg, log).run()
