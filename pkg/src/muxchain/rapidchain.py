"""Synchronous single-committee consensus with ``cl`` leaders per round.

Every round the committee deterministically elects ``cl`` leaders from the
epoch randomness.  Leader ``k`` builds a block from bucket ``k``, spreads it
with chunked gossip and sends a propose message carrying the block digest in
slot ``k``.  Members echo the vector of digests they hold, replace any slot
with two competing versions by EMPTY (announced with a pending message), and
decide once ``f+1`` echoes carry the same vector.  A decision is announced
with an accept message bundling the supporting signers; members that see a
valid accept adopt it.  Without a quorum each slot falls back on its own.

With ``cl=1`` this is the plain one-leader round.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from typing import Optional

from .core import (EMPTY, GENESIS_HASH, Block, BucketSpec, ChainStore, DecisionVector, TxPool,
                   ValidationError, assemble_macroblock, digest_int, make_block, sha256, slots_macro_hash, u32,
                   u64, validate_block)
from .harness.config import ScenarioConfig
from .harness.runlog import Outcome, RunLog
from .netsim import IdaGossip, LinkParams, Network, Simulator, bootstrap

BLOCK_HEADER_BYTES = 256
CONTROL_BYTES = 200
REQUEST_BYTES = 100


def epoch_randomness(rng_seed: int) -> bytes:
    return sha256(b"EPOCH", u64(rng_seed))


def elect_leaders(rand: bytes, round: int, cl: int, m: int) -> list[int]:
    """Leader of bucket ``k`` is ``hash(rand|round|k) mod m``, probing past taken members."""
    if m < 1:
        raise ValueError("committee is empty")
    if cl > m:
        raise ValueError(f"cl={cl} exceeds committee size {m}")
    taken: set[int] = set()
    leaders = []
    for k in range(cl):
        i = digest_int(sha256(b"LEAD", rand, u64(round), u32(k))) % m
        while i in taken:
            i = (i + 1) % m
        taken.add(i)
        leaders.append(i)
    return leaders


# -- messages: signatures are (sender id, digest) tags checked structurally ----------------

@dataclass(frozen=True)
class Propose:
    leader: int
    round: int
    slot: int
    header: bytes


@dataclass(frozen=True)
class Echo:
    sender: int
    round: int
    vector: tuple[bytes, ...]


@dataclass(frozen=True)
class Pending:
    sender: int
    round: int
    slot: int
    evidence: tuple[bytes, bytes]


@dataclass(frozen=True)
class Accept:
    sender: int
    round: int
    vector: tuple[bytes, ...]
    signers: tuple[int, ...]


class Member:
    def __init__(self, nid: int, behavior: Optional[str], pool: TxPool):
        self.id = nid
        self.behavior = behavior
        self.pool = pool
        self.chain = ChainStore(GENESIS_HASH)
        self.round = 0
        self.done = False
        self.arrived: dict[bytes, Block] = {}
        self.buffered: dict[int, list] = {}
        self.tip = GENESIS_HASH
        # decided rounds whose blocks are still being fetched, oldest first
        self.backlog: deque = deque()
        self.requested: set[bytes] = set()
        self.reset_round(0.0)

    def reset_round(self, now: float) -> None:
        self.start = now
        self.headers: dict[int, set[bytes]] = {}
        self.pending: set[int] = set()
        self.invalid: set[bytes] = set()
        self.valid: set[bytes] = set()
        self.vector: Optional[tuple[bytes, ...]] = None
        self.echo_time: Optional[float] = None
        self.echoes: dict[int, tuple[bytes, ...]] = {}
        self.decided = False
        self.propose_closed = False
        self.ida_closed = False


class RapidChain:
    def __init__(self, cfg: ScenarioConfig, log: Optional[RunLog] = None):
        self.cfg = cfg
        self.cl = cfg.cl
        self.m = cfg.committee_size
        self.f = cfg.effective_f_count
        self.quorum = self.f + 1
        self.spec = BucketSpec(cfg.cl)
        self.bs = cfg.block_size
        self.log = log if log is not None else RunLog(cfg)
        byz = cfg.byzantine_ids() if cfg.byzantine_behavior != "none" else []
        self.behavior: dict[int, str] = {}
        for k, i in enumerate(byz):
            b = cfg.byzantine_behavior
            if b == "mixed":
                b = "silent" if k % 2 == 0 else "equivocate"
            self.behavior[i] = b
        self.honest = [i for i in range(self.m) if i not in self.behavior]
        self.sim = Simulator()
        peers = bootstrap(self.m, cfg.effective_fanout, cfg.sub_seed("topology"))
        relays = [self.behavior.get(i) != "silent" for i in range(self.m)]
        self.net = Network(self.sim, peers, LinkParams(cfg.latency_ms, cfg.bandwidth_bps),
                           cfg.sub_seed("gossip"), relays, cfg.trace)
        self.ida = IdaGossip(self.net, cfg.effective_fanout, self._on_block)
        self.rand = epoch_randomness(cfg.sub_seed("epoch"))
        self.members = [
            Member(i, self.behavior.get(i), TxPool(b"pool/%d/%d" % (cfg.rng_seed, i), cfg.tx_size, self.spec))
            for i in range(self.m)
        ]
        self.leaders: dict[int, list[int]] = {}
        self.proposed_at: dict[bytes, float] = {}
        self.round_starts: dict[int, float] = {}
        self.appends: dict[int, dict[int, float]] = {}
        self.decided_at: dict[int, float] = {}
        self.blocks: dict[bytes, Block] = {}
        self.remaining = len(self.honest)
        self.log.honest(self.honest)

    def leaders_of(self, r: int) -> list[int]:
        ls = self.leaders.get(r)
        if ls is None:
            ls = self.leaders[r] = elect_leaders(self.rand, r, self.cl, self.m)
        return ls

    # -- driver ------------------------------------------------------------------------

    def run(self) -> Outcome:
        for v in self.members:
            self._start_round(v)
        status = self.sim.run_until(until=self.cfg.watchdog_s * 1000.0,
                                    condition=lambda: self.remaining == 0)
        return self._outcome(status)

    def _start_round(self, v: Member) -> None:
        v.reset_round(self.sim.now)
        r = v.round
        if v.behavior is None:
            self.round_starts.setdefault(r, self.sim.now)
        leaders = self.leaders_of(r)
        if v.id in leaders:
            self._lead(v, leaders.index(v.id))
        self.sim.schedule(self.cfg.propose_timeout_ms, self._close_proposals, v, r)
        self.sim.schedule(self.cfg.ida_timeout_s * 1000.0, self._close_ida, v, r)
        # every honest echo is out by the dissemination bound, so the fallback waits past it
        self.sim.schedule(self.cfg.ida_timeout_s * 1000.0 + 3 * self.cfg.echo_delta_ms, self._fallback, v, r)
        for fn, arg in v.buffered.pop(r, []):
            if v.round != r or v.done:
                # a buffered accept already closed this round
                break
            fn(v, arg)

    # -- leaders -----------------------------------------------------------------------

    def _build(self, v: Member, slot: int, skip: int = 0) -> Block:
        it = v.pool.iter_bucket(slot)
        for _ in range(skip):
            next(it)
        return make_block(v.id, v.round, slot, v.tip, it, self.bs, self.spec)

    def _lead(self, v: Member, slot: int) -> None:
        if v.behavior == "silent":
            return
        if v.behavior == "equivocate":
            # two versions of the slot, each shown to half of the committee
            a, b = self._build(v, slot), self._build(v, slot, skip=1)
            others = [i for i in range(self.m) if i != v.id]
            half = len(others) // 2
            for blk, targets in ((a, others[:half]), (b, others[half:])):
                self._disseminate(v, blk)
                self.net.multicast(v.id, targets, Propose(v.id, v.round, slot, blk.digest),
                                   CONTROL_BYTES, self._on_propose_direct)
            return
        blk = self._build(v, slot)
        self._disseminate(v, blk)
        self.net.broadcast(v.id, Propose(v.id, v.round, slot, blk.digest), CONTROL_BYTES,
                           self._on_proposes, batch=True)

    def _disseminate(self, v: Member, blk: Block) -> None:
        self.blocks[blk.digest] = blk
        self.proposed_at.setdefault(blk.digest, self.sim.now)
        v.arrived[blk.digest] = blk
        self.ida.disseminate(v.id, blk.digest, blk.body_size + BLOCK_HEADER_BYTES,
                             self.cfg.ida_chunks, obj=blk)

    # -- message intake ------------------------------------------------------------------

    def _route(self, nid: int, r: int, fn, arg) -> Optional[Member]:
        """Member ready to handle a round-``r`` message, or None (buffered or stale)."""
        v = self.members[nid]
        if v.done or r < v.round:
            return None
        if r > v.round:
            v.buffered.setdefault(r, []).append((fn, arg))
            return None
        return v

    def _on_propose_direct(self, nid: int, msg: Propose) -> None:
        v = self._route(nid, msg.round, self._handle_propose_direct, msg)
        if v is not None:
            self._handle_propose_direct(v, msg)

    def _handle_propose_direct(self, v: Member, msg: Propose) -> None:
        # a header that reached us point to point is flooded on, so the whole
        # committee learns every version a leader signed
        fresh = msg.header not in v.headers.get(msg.slot, ())
        self._handle_propose(v, msg)
        if fresh and v.behavior is None:
            self.net.broadcast(v.id, msg, CONTROL_BYTES, self._on_proposes, include_self=False, batch=True)

    def _on_proposes(self, ids, msg: Propose) -> None:
        for nid in ids:
            v = self._route(nid, msg.round, self._handle_propose, msg)
            if v is not None:
                self._handle_propose(v, msg)

    def _handle_propose(self, v: Member, msg: Propose) -> None:
        leaders = self.leaders_of(msg.round)
        if msg.slot >= self.cl or leaders[msg.slot] != msg.leader:
            return
        seen = v.headers.setdefault(msg.slot, set())
        if msg.header in seen:
            return
        seen.add(msg.header)
        if len(seen) > 1:
            a, b = sorted(seen)[:2]
            self._mark_pending(v, msg.slot, (a, b))
        self._maybe_echo(v)

    def _on_block(self, nid: int, digest: bytes, blk: Block) -> None:
        v = self.members[nid]
        v.arrived[digest] = blk
        if not v.done and blk.round == v.round:
            self._maybe_echo(v)
        elif v.backlog:
            self._drain(v)

    def _mark_pending(self, v: Member, slot: int, evidence: tuple[bytes, bytes]) -> None:
        if slot in v.pending:
            return
        v.pending.add(slot)
        if v.behavior is None:
            self.net.broadcast(v.id, Pending(v.id, v.round, slot, evidence), CONTROL_BYTES,
                               self._on_pendings, include_self=False, batch=True)
        if v.vector is not None and v.vector[slot] != EMPTY and not v.decided:
            # already echoed the slot: echo again with it cleared
            self._echo(v, v.vector[:slot] + (EMPTY,) + v.vector[slot + 1:])

    def _on_pendings(self, ids, msg: Pending) -> None:
        a, b = msg.evidence
        if a == b:
            return
        for nid in ids:
            v = self._route(nid, msg.round, self._handle_pending, msg)
            if v is not None:
                self._handle_pending(v, msg)

    def _handle_pending(self, v: Member, msg: Pending) -> None:
        seen = v.headers.setdefault(msg.slot, set())
        seen.update(msg.evidence)
        self._mark_pending(v, msg.slot, msg.evidence)
        self._maybe_echo(v)

    # -- echo --------------------------------------------------------------------------

    def _close_proposals(self, v: Member, r: int) -> None:
        if v.round == r and not v.done:
            v.propose_closed = True
            self._maybe_echo(v)

    def _close_ida(self, v: Member, r: int) -> None:
        if v.round == r and not v.done:
            v.ida_closed = True
            self._maybe_echo(v)

    def _block_valid(self, v: Member, slot: int, d: bytes) -> Optional[bool]:
        """True/False once the block for ``d`` arrived and was checked, None while missing."""
        if d in v.valid:
            return True
        if d in v.invalid:
            return False
        blk = v.arrived.get(d)
        if blk is None:
            return None
        try:
            if blk.round != v.round or blk.bucket != slot:
                raise ValidationError("wrong round or bucket")
            validate_block(blk, self.spec, v.tip, self.bs)
        except ValidationError:
            v.invalid.add(d)
            return False
        v.valid.add(d)
        return True

    def _slot_value(self, v: Member, slot: int):
        """Digest or EMPTY to echo for ``slot``, or None when still waiting."""
        if slot in v.pending:
            return EMPTY
        seen = v.headers.get(slot)
        if not seen:
            return EMPTY if v.propose_closed else None
        (d,) = seen
        ok = self._block_valid(v, slot, d)
        if ok is None:
            return EMPTY if v.ida_closed else None
        if not ok:
            self._mark_pending(v, slot, (d, d))
            return EMPTY
        return d

    def _maybe_echo(self, v: Member) -> None:
        """Echo once every slot is settled; echo again if a late proposal fills a slot."""
        if v.decided or not v.propose_closed:
            return
        slots = []
        for k in range(self.cl):
            s = self._slot_value(v, k)
            if s is None:
                return
            slots.append(s)
        vector = tuple(slots)
        if vector != v.vector:
            self._echo(v, vector)

    def _echo(self, v: Member, vector: tuple[bytes, ...]) -> None:
        v.vector = vector
        v.echo_time = self.sim.now
        if v.behavior is not None:
            return
        self.net.broadcast(v.id, Echo(v.id, v.round, vector), CONTROL_BYTES + 32 * self.cl,
                           self._on_echoes, batch=True)
        r = v.round
        self.sim.schedule(self.cfg.echo_delta_ms, self._try_decide, v, r)

    def _on_echoes(self, ids, msg: Echo) -> None:
        for nid in ids:
            v = self._route(nid, msg.round, self._handle_echo, msg)
            if v is not None:
                self._handle_echo(v, msg)

    def _handle_echo(self, v: Member, msg: Echo) -> None:
        v.echoes[msg.sender] = msg.vector
        leaders = self.leaders_of(v.round)
        for k, d in enumerate(msg.vector):
            if d == EMPTY:
                continue
            seen = v.headers.setdefault(k, set())
            if d not in seen:
                # an echoed header carries the leader's signature, so it counts as a proposal
                self._handle_propose(v, Propose(leaders[k], v.round, k, d))
        self._pull_echoed(v)
        self._try_decide(v, v.round)

    def _pull_echoed(self, v: Member) -> None:
        """Fetch blocks that a quorum already echoed but chunk gossip has not completed here."""
        if v.decided or v.behavior is not None:
            return
        support = Counter(d for vec in v.echoes.values() for d in vec if d != EMPTY)
        for d, c in support.items():
            if c >= self.quorum and d not in v.arrived:
                holders = [s for s, vec in v.echoes.items() if d in vec]
                self._request(v, d, holders)

    # -- decide ------------------------------------------------------------------------

    def _try_decide(self, v: Member, r: int) -> None:
        if v.round != r or v.decided or v.vector is None or v.behavior is not None:
            return
        if self.sim.now < v.echo_time + self.cfg.echo_delta_ms:
            return
        signers = tuple(sorted(s for s, vec in v.echoes.items() if vec == v.vector))
        if len(signers) < self.quorum or len(signers) < len(v.echoes):
            # a differing echo is a conflicting version: wait for an accept or the fallback
            return
        self._decide(v, v.vector, signers)

    def _fallback(self, v: Member, r: int) -> None:
        """No vector quorum: keep a slot only when a quorum echoed the same digest for it."""
        if v.round != r or v.decided or v.behavior is not None:
            return
        slots = []
        for k in range(self.cl):
            c = Counter(vec[k] for vec in v.echoes.values())
            d, n = c.most_common(1)[0] if c else (EMPTY, 0)
            slots.append(d if n >= self.quorum and k not in v.pending else EMPTY)
        self._decide(v, tuple(slots), ())

    def _decide(self, v: Member, vector: tuple[bytes, ...], signers: tuple[int, ...]) -> None:
        v.decided = True
        v.vector = vector
        if signers:
            self.log.add("accept", v.id, v.round, len(signers))
            self.net.broadcast(v.id, Accept(v.id, v.round, vector, signers),
                               CONTROL_BYTES + 32 * self.cl + 4 * len(signers),
                               self._on_accepts, include_self=False, batch=True)
        self._close_round(v, ())

    def _on_accepts(self, ids, msg: Accept) -> None:
        if len(set(msg.signers)) < self.quorum:
            return
        for nid in ids:
            v = self._route(nid, msg.round, self._handle_accept, msg)
            if v is not None:
                self._handle_accept(v, msg)

    def _handle_accept(self, v: Member, msg: Accept) -> None:
        if v.decided or v.behavior is not None:
            return
        v.decided = True
        v.vector = msg.vector
        self.log.add("accept", v.id, v.round, len(msg.signers))
        self._close_round(v, msg.signers)

    # -- commit ------------------------------------------------------------------------

    def _close_round(self, v: Member, holders) -> None:
        """Move on as soon as the vector is decided; the macroblock is appended once
        its blocks are at hand, which only needs the decided digests to chain on."""
        r = v.round
        v.backlog.append((r, v.vector, tuple(holders) or tuple(sorted(v.echoes))))
        v.tip = slots_macro_hash(r, v.vector)
        first = r not in self.decided_at
        self.decided_at.setdefault(r, self.sim.now)
        self._drain(v)
        self._next_round(v)
        if first:
            # the adversary sees everything: byzantine members follow the first honest decision
            for i in self.behavior:
                b = self.members[i]
                if b.round == r and not b.done:
                    b.tip = v.tip
                    self._next_round(b)

    def _drain(self, v: Member) -> None:
        while v.backlog:
            r, vector, holders = v.backlog[0]
            missing = [d for d in vector if d != EMPTY and d not in v.arrived]
            if missing:
                for d in missing:
                    self._request(v, d, holders)
                return
            v.backlog.popleft()
            self._append(v, r, vector)

    def _request(self, v: Member, d: bytes, holders) -> None:
        if d in v.requested:
            return
        for h in list(holders) + list(range(self.m)):
            u = self.members[h]
            if h != v.id and u.behavior is None and self._lookup(u, d) is not None:
                v.requested.add(d)
                self.net.multicast(v.id, [h], (v.id, d), REQUEST_BYTES, self._serve)
                return

    @staticmethod
    def _lookup(u: Member, d: bytes) -> Optional[Block]:
        blk = u.arrived.get(d)
        if blk is None and u.chain.blocks:
            # appended blocks leave the arrival buffer; the last macroblock still serves
            blk = next((b for b in u.chain.blocks[-1].blocks if b is not None and b.digest == d), None)
        return blk

    def _serve(self, holder: int, req) -> None:
        nid, d = req
        blk = self._lookup(self.members[holder], d)
        if blk is None:
            self.members[nid].requested.discard(d)
            return
        self.net.send(holder, nid, "fetch", blk, blk.body_size + BLOCK_HEADER_BYTES, self._on_fetched)

    def _on_fetched(self, env) -> None:
        blk = env.payload
        v = self.members[env.dst]
        v.arrived[blk.digest] = blk
        if blk.round == v.round and not v.done:
            self._maybe_echo(v)
        else:
            self._drain(v)

    def _append(self, v: Member, r: int, vector: tuple[bytes, ...]) -> None:
        m = assemble_macroblock(DecisionVector(r, vector), v.arrived)
        prev = v.chain.tip_hash
        v.chain.append(m)
        now = self.sim.now
        self.log.append(v.id, r, m.macro_hash, now)
        # pools only hold the owner's transactions
        v.pool.remove(m.tx_ids(v.id))
        if v.behavior is None:
            self.appends.setdefault(r, {})[v.id] = now
        if v.id == self.honest[0]:
            self.log.macro(m, prev)
        for d in [d for d, b in v.arrived.items() if b.round <= r]:
            del v.arrived[d]
        if len(v.chain) == self.cfg.rounds and v.behavior is None:
            self.remaining -= 1

    def _next_round(self, v: Member) -> None:
        v.round += 1
        if v.round >= self.cfg.rounds:
            v.done = True
            return
        self._start_round(v)

    # -- results -----------------------------------------------------------------------

    def _outcome(self, status: str) -> Outcome:
        out = Outcome(self.log)
        ref = self.members[self.honest[0]]
        done_rounds = min(len(self.members[i].chain) for i in self.honest)
        out.rounds_done = done_rounds
        out.status = "ok" if done_rounds >= self.cfg.rounds else "stalled"
        for r in range(done_rounds):
            m = ref.chain.blocks[r]
            times = [self.proposed_at[b.digest] for b in m.blocks if b is not None]
            start = min(times) if times else self.round_starts[r]
            last = max(self.appends[r].values())
            lat = last - start
            decided = sum(1 for b in m.blocks if b is not None)
            out.round_latencies.append(lat)
            out.decided_slots += decided
            out.empty_slots += m.cl - decided
            out.appended_bytes += m.payload_size
            out.elapsed_ms = last
            self.log.round_line(r, decided, m.cl - decided, lat)
        for i in self.honest:
            out.chains[i] = self.members[i].chain.hashes()
        if self.net.trace is not None:
            self.log.envelopes(self.net.trace)
        out.trace = self.net.trace
        return out


def run(cfg: ScenarioConfig, log: Optional[RunLog] = None) -> Outcome:
    return RapidChain(cfg, log).run()
