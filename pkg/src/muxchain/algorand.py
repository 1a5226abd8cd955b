"""Sortition committees with BA*, multiplexed over ``cl`` buckets.

With ``cl=1`` a round is a classic single-block round.  With ``cl>1`` every
selected proposer is pinned to bucket ``vrf value mod cl``, nodes keep the best
proposal per bucket, and the two reduction steps plus binary agreement run on
the digest of the resulting decision vector instead of a single block hash.

Each node runs one generator per round.  The generator yields wait objects
(:class:`Sleep`, :class:`Count`, :class:`BlocksReady`, :class:`Fetch`) and is
resumed by message deliveries or by its deadline timer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (EMPTY, GENESIS_HASH, Block, BucketSpec, ChainStore, DecisionVector,
                   MacroBlock, TxPool, ValidationError, assemble_macroblock, digest_int,
                   make_block, sha256, u32, u64, validate_block)
from .crypto import (FINAL, PROPOSER, KeyPair, SortitionResult, VrfOutput, default_tau_proposer,
                     sortition, step_tag, verify_sortition, vrf_eval, vrf_verify)
from .harness.config import ScenarioConfig
from .harness.runlog import Outcome, RunLog
from .netsim import Gossip, LinkParams, Network, Simulator, bootstrap

BLOCK_HEADER_BYTES = 256
VOTE_BYTES = 200
PRIORITY_BYTES = 200
REQUEST_BYTES = 100
FINAL_STEP = 0
FINAL_ROLE = -1
FETCH_RETRY_MS = 500.0

TIMEOUT = object()


@dataclass(frozen=True)
class AlgorandParams:
    cl: int = 1
    tau_proposer: int = 26
    tau_step: float = 80.0
    tau_final: float = 120.0
    T: float = 0.685
    lambda_priority: float = 10_000.0
    lambda_block: float = 60_000.0
    lambda_step: float = 20_000.0
    max_ba_steps: int = 15

    def __post_init__(self):
        if not 0.5 < self.T < 1:
            raise ValueError("T must lie in (0.5, 1)")
        if min(self.lambda_priority, self.lambda_block, self.lambda_step) <= 0:
            raise ValueError("waits must be positive")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "AlgorandParams":
        scale = 1000.0 * cfg.time_compression
        tau_p = cfg.tau_proposer if cfg.tau_proposer >= 0 else default_tau_proposer(cfg.cl)
        return cls(cfg.cl, tau_p, cfg.tau_step, cfg.tau_final, cfg.threshold,
                   cfg.lambda_priority_s * scale, cfg.lambda_block_s * scale,
                   cfg.lambda_step_s * scale, cfg.max_ba_steps)


# -- messages -----------------------------------------------------------------------

@dataclass(frozen=True)
class PriorityMsg:
    proposer: int
    round: int
    cred: SortitionResult


@dataclass(eq=False)
class Vote:
    voter: int
    round: int
    step: int
    value: bytes
    cred: SortitionResult
    # last (seed, verdict) pair, so nodes sharing a seed verify the credential once
    checked_seed: bytes = b""
    ok: bool = False


# -- wait objects -----------------------------------------------------------------------

@dataclass
class Sleep:
    deadline: float
    on_timeout: object = None


@dataclass
class Count:
    step: int
    deadline: float
    on_timeout: object = TIMEOUT


@dataclass
class BlocksReady:
    deadline: float
    on_timeout: object = None


@dataclass
class Fetch:
    value: bytes
    deadline: Optional[float] = None
    on_timeout: object = None


# -- pure helpers -----------------------------------------------------------------------

def next_seed(prev_member_seeds: tuple[bytes, ...], round: int, kp: KeyPair) -> VrfOutput:
    """VRF over the previous macroblock's member seeds (zero digest when empty) and the round."""
    return vrf_eval(kp.secret_key, b"".join(prev_member_seeds) + u64(round))


def operative_seed(member_seeds: tuple[bytes, ...], prev_seed: bytes, round: int) -> bytes:
    """Seed used for sortition in ``round``, derived from the macroblock decided just before it."""
    if any(s != EMPTY for s in member_seeds):
        return sha256(b"SEED", *member_seeds)
    return sha256(b"SEED", prev_seed, u64(round))


def genesis_seed(rng_seed: int) -> bytes:
    return sha256(b"SEED0", u64(rng_seed))


@dataclass
class Tally:
    threshold: float
    voters: set = field(default_factory=set)
    counts: dict = field(default_factory=dict)
    winner: Optional[bytes] = None
    min_vrf: Optional[bytes] = None

    def add(self, vote: Vote) -> None:
        if vote.voter in self.voters:
            return
        self.voters.add(vote.voter)
        c = self.counts.get(vote.value, 0) + vote.cred.j
        self.counts[vote.value] = c
        # equal-length big-endian bytes order like the integers they encode
        v = vote.cred.vrf.value
        if self.min_vrf is None or v < self.min_vrf:
            self.min_vrf = v
        if self.winner is None and c > self.threshold:
            self.winner = vote.value


def tally_votes(votes, threshold: float) -> Optional[bytes]:
    """Value that first exceeds ``threshold`` when votes are counted in order, else None."""
    t = Tally(threshold)
    for v in votes:
        t.add(v)
    return t.winner


def filter_proposals(best: dict[int, PriorityMsg], msg: PriorityMsg) -> bool:
    """Keep the smallest priority per bucket; True when ``msg`` became the best."""
    cur = best.get(msg.cred.bucket)
    if cur is None or msg.cred.priority < cur.cred.priority:
        best[msg.cred.bucket] = msg
        return True
    return False


# -- node state ---------------------------------------------------------------------------

class AlgoNode:
    def __init__(self, nid: int, kp: KeyPair, behavior: Optional[str], pool: TxPool,
                 seed: bytes, cl: int):
        self.id = nid
        self.kp = kp
        self.behavior = behavior
        self.pool = pool
        self.chain = ChainStore(GENESIS_HASH)
        self.seed = seed
        self.member_seeds: tuple[bytes, ...] = (seed,) * cl
        self.round = 0
        self.round_start = 0.0
        self.done = False
        self.proc = None
        self.wait = None
        self.token = 0
        self.blocks: dict[bytes, Block] = {}
        self.vectors: dict[bytes, DecisionVector] = {}
        self.pending_votes: dict[int, list[Vote]] = {}
        self.pending_prio: dict[int, list[PriorityMsg]] = {}
        self.deferred: dict[int, list] = {}
        self.requested: set = set()
        self.reset_round()

    def reset_round(self) -> None:
        self.best: dict[int, PriorityMsg] = {}
        self.frozen = False
        self.round_blocks: dict[tuple[int, int], bytes] = {}
        self.round_invalid: set[tuple[int, int]] = set()
        self.tallies: dict[int, Tally] = {}
        self.local_value = EMPTY
        self.step = 0
        self.received_honest: list[Block] = []


class Algorand:
    def __init__(self, cfg: ScenarioConfig, log: Optional[RunLog] = None):
        self.cfg = cfg
        self.p = AlgorandParams.from_config(cfg)
        self.spec = BucketSpec(cfg.cl)
        self.bs = cfg.block_size
        self.n = cfg.n_nodes
        self.log = log if log is not None else RunLog(cfg)
        byz = set(cfg.byzantine_ids()) if cfg.byzantine_behavior != "none" else set()
        self.byzantine = byz
        self.honest = [i for i in range(self.n) if i not in byz]
        self.sim = Simulator()
        peers = bootstrap(self.n, cfg.effective_fanout, cfg.sub_seed("topology"))
        relays = [not (i in byz and cfg.byzantine_behavior == "silent") for i in range(self.n)]
        self.net = Network(self.sim, peers, LinkParams(cfg.latency_ms, cfg.bandwidth_bps),
                           cfg.sub_seed("gossip"), relays, cfg.trace)
        self.block_gossip = Gossip(self.net, "block", cfg.effective_fanout, self._on_block)
        seed0 = genesis_seed(cfg.rng_seed)
        key_seed = u64(cfg.sub_seed("keys"))
        self.nodes = [
            AlgoNode(i, KeyPair.derive(key_seed, i), cfg.byzantine_behavior if i in byz else None,
                     TxPool(b"pool/%d/%d" % (cfg.rng_seed, i), cfg.tx_size, self.spec), seed0, cfg.cl)
            for i in range(self.n)
        ]
        self.pks = [v.kp.public_key for v in self.nodes]
        self.proposed_at: dict[bytes, float] = {}
        self.published: dict[tuple[int, int, int], bytes] = {}
        self.creds: dict[bytes, SortitionResult] = {}
        self.appends: dict[int, dict[int, float]] = {}
        self.round_starts: dict[int, float] = {}
        self.finals: dict[int, dict[int, bool]] = {}
        self.remaining = len(self.honest)
        self._verified: dict[tuple, bool] = {}
        self.log.honest(self.honest)

    # -- driver --------------------------------------------------------------------

    def run(self) -> Outcome:
        for v in self.nodes:
            self._start_round(v)
        watchdog = self.cfg.watchdog_s * 1000.0
        status = self.sim.run_until(until=watchdog, condition=lambda: self.remaining == 0)
        return self._outcome(status)

    def _advance(self, v: AlgoNode, send=None) -> None:
        while True:
            try:
                w = v.proc.send(send)
            except StopIteration:
                return
            if isinstance(w, Count):
                # once waiting on the final tally no regular step matters to this node
                v.step = w.step if w.step != FINAL_STEP else 1 << 30
            res = self._check(v, w)
            if res is _NOT_READY:
                v.wait = w
                v.token += 1
                if w.deadline is not None:
                    self.sim.at(w.deadline, self._timeout, v, v.token)
                return
            send = res

    def _poke(self, v: AlgoNode) -> None:
        w = v.wait
        if w is None:
            return
        res = self._check(v, w)
        if res is _NOT_READY:
            return
        v.wait = None
        v.token += 1
        self._advance(v, res)

    def _timeout(self, v: AlgoNode, token: int) -> None:
        if token != v.token or v.wait is None:
            return
        w = v.wait
        v.wait = None
        v.token += 1
        self._advance(v, w.on_timeout)

    def _check(self, v: AlgoNode, w):
        if isinstance(w, Count):
            t = v.tallies.get(w.step)
            return t.winner if t is not None and t.winner is not None else _NOT_READY
        if isinstance(w, Sleep):
            return None if self.sim.now >= w.deadline else _NOT_READY
        if isinstance(w, BlocksReady):
            return None if self._blocks_ready(v) else _NOT_READY
        if isinstance(w, Fetch):
            return None if self._have_all(v, w.value) else _NOT_READY
        raise TypeError(w)

    # -- round lifecycle ------------------------------------------------------------------

    def _start_round(self, v: AlgoNode) -> None:
        v.reset_round()
        v.round_start = self.sim.now
        if v.id not in self.byzantine:
            self.round_starts.setdefault(v.round, self.sim.now)
        v.proc = self._round(v)
        self._advance(v)
        for msg in v.pending_prio.pop(v.round, []):
            self._on_priority(v.id, msg)
        for vote in v.pending_votes.pop(v.round, []):
            self._on_vote(v.id, vote)
        for msg_id, payload, size, sender in v.deferred.pop(v.round, []):
            if self._on_block(v.id, msg_id, payload):
                self.block_gossip.forward(v.id, msg_id, payload, size, sender)

    def _round(self, v: AlgoNode):
        p = self.p
        r = v.round
        self._propose(v)
        yield Sleep(v.round_start + p.lambda_priority)
        yield BlocksReady(v.round_start + p.lambda_priority + p.lambda_block)
        v.frozen = True
        vec = self._local_vector(v)
        value = vec.digest if vec.non_empty() else EMPTY
        if value != EMPTY:
            v.vectors[value] = vec
        v.local_value = value
        # reduction
        self._vote(v, 1, value)
        h1 = yield Count(1, self.sim.now + p.lambda_step)
        self._vote(v, 2, EMPTY if h1 is TIMEOUT else h1)
        h2 = yield Count(2, self.sim.now + p.lambda_step)
        hblock = EMPTY if h2 is TIMEOUT else h2
        decided, at_first = yield from self._binary_ba(v, hblock)
        final = False
        if decided is None:
            decided = EMPTY
        elif at_first:
            fr = yield Count(FINAL_STEP, self.sim.now + p.lambda_step)
            final = fr == decided
        self.finals.setdefault(r, {})[v.id] = final
        if decided != EMPTY and not self._have_all(v, decided):
            yield Fetch(decided)
        self._commit(v, decided)

    def _binary_ba(self, v: AlgoNode, hblock: bytes):
        p = self.p
        step = 3
        val = hblock
        while step < 3 + p.max_ba_steps:
            self._vote(v, step, val)
            res = yield Count(step, self.sim.now + p.lambda_step)
            if res is TIMEOUT:
                val = hblock
            elif res != EMPTY:
                for s in range(step + 1, step + 4):
                    self._vote(v, s, res)
                if step == 3:
                    self._vote(v, FINAL_STEP, res)
                return res, step == 3
            step += 1
            self._vote(v, step, val)
            res = yield Count(step, self.sim.now + p.lambda_step)
            if res is TIMEOUT:
                val = EMPTY
            elif res == EMPTY:
                for s in range(step + 1, step + 4):
                    self._vote(v, s, res)
                return res, False
            step += 1
            self._vote(v, step, val)
            res = yield Count(step, self.sim.now + p.lambda_step)
            if res is TIMEOUT:
                val = hblock if self._coin(v, step) == 0 else EMPTY
            else:
                val = res
            step += 1
        return None, False

    def _coin(self, v: AlgoNode, step: int) -> int:
        t = v.tallies.get(step)
        if t is None or t.min_vrf is None:
            return 0
        return t.min_vrf[-1] & 1

    def _commit(self, v: AlgoNode, value: bytes) -> None:
        r = v.round
        if value == EMPTY:
            vec = DecisionVector(r, (EMPTY,) * self.p.cl)
        else:
            vec = v.vectors[value]
        m = assemble_macroblock(vec, v.blocks)
        prev = v.chain.tip_hash
        v.chain.append(m)
        now = self.sim.now
        self.log.append(v.id, r, m.macro_hash, now)
        # pools only hold the owner's transactions
        v.pool.remove(m.tx_ids(v.id))
        members = tuple(EMPTY if b is None else b.seed_proposal for b in m.blocks)
        v.seed = operative_seed(members, v.seed, r + 1)
        v.member_seeds = members
        if v.id not in self.byzantine:
            self.appends.setdefault(r, {})[v.id] = now
            if v.id == self.honest[0]:
                self.log.macro(m, prev)
        v.round += 1
        v.proc = None
        if v.round >= self.cfg.rounds:
            v.done = True
            if v.id not in self.byzantine:
                self.remaining -= 1
            return
        self.sim.schedule(0.0, self._start_round, v)

    # -- proposals ----------------------------------------------------------------------

    def _propose(self, v: AlgoNode) -> None:
        p = self.p
        if v.behavior == "silent":
            return
        cred = sortition(v.kp.secret_key, v.seed, PROPOSER, p.tau_proposer, 1, self.n, p.cl)
        if not cred.selected:
            return
        msg = PriorityMsg(v.id, v.round, cred)
        self.net.broadcast(v.id, msg, PRIORITY_BYTES, self._on_priorities, batch=True)
        if v.behavior == "withhold":
            return
        if v.behavior == "duplicate":
            self.sim.schedule(p.lambda_priority / 2, self._propose_duplicate, v, v.round, cred)
            return
        seed_out = next_seed(v.member_seeds, v.round, v.kp)
        b = make_block(v.id, v.round, cred.bucket, v.chain.tip_hash, v.pool.iter_bucket(cred.bucket),
                       self.bs, self.spec, seed_out.value, seed_out.proof)
        self._gossip_block(v, b, cred)

    def _propose_duplicate(self, v: AlgoNode, r: int, cred: SortitionResult) -> None:
        """Fill half the block from the own bucket, the rest with copies of honest
        transactions taken from other buckets' blocks seen this round."""
        if v.round != r:
            return
        seed_out = next_seed(v.member_seeds, r, v.kp)
        own = make_block(v.id, r, cred.bucket, v.chain.tip_hash, v.pool.iter_bucket(cred.bucket),
                         self.bs // 2, self.spec)
        txs = list(own.txs)
        size = own.body_size
        for hb in v.received_honest:
            if hb.bucket == cred.bucket:
                continue
            for t in hb.txs:
                if size + t.payload_size > self.bs:
                    break
                txs.append(t)
                size += t.payload_size
        b = Block(v.id, r, cred.bucket, v.chain.tip_hash, tuple(txs), size, seed_out.value, seed_out.proof)
        self._gossip_block(v, b, cred)

    def _gossip_block(self, v: AlgoNode, b: Block, cred: SortitionResult) -> None:
        self.proposed_at.setdefault(b.digest, self.sim.now)
        self.published[(b.round, b.bucket, b.proposer)] = b.digest
        self.creds[b.digest] = cred
        self._on_block(v.id, b.digest, (b, cred))
        self.block_gossip.publish(v.id, b.digest, (b, cred), b.body_size + BLOCK_HEADER_BYTES)

    def _on_priorities(self, ids, msg: PriorityMsg) -> None:
        for nid in ids:
            self._on_priority(nid, msg)

    def _on_priority(self, nid: int, msg: PriorityMsg) -> None:
        v = self.nodes[nid]
        if msg.round > v.round:
            v.pending_prio.setdefault(msg.round, []).append(msg)
            return
        if msg.round < v.round or v.frozen or v.done:
            return
        if not self._cred_ok(msg.proposer, v.seed, 0, msg.cred):
            return
        if filter_proposals(v.best, msg):
            self._poke(v)

    def _block_ok(self, v: AlgoNode, b: Block, cred: SortitionResult) -> bool:
        p = self.p
        if b.bucket != cred.bucket or not cred.selected:
            return False
        if not self._cred_ok(b.proposer, v.seed, 0, cred):
            return False
        try:
            validate_block(b, self.spec, v.chain.tip_hash, self.bs)
        except ValidationError:
            return False
        seed_in = b"".join(v.member_seeds) + u64(b.round)
        return vrf_verify(self.pks[b.proposer], seed_in, VrfOutput(b.seed_proposal, b.seed_proof))

    def _on_block(self, nid: int, msg_id: bytes, payload) -> bool:
        v = self.nodes[nid]
        b, cred = payload
        if v.done or b.round < v.round:
            return False
        if b.round > v.round:
            v.deferred.setdefault(b.round, []).append((msg_id, payload, b.body_size + BLOCK_HEADER_BYTES, None))
            return False
        key = (b.bucket, b.proposer)
        if not self._block_ok(v, b, cred):
            v.round_invalid.add(key)
            self._poke(v)
            return False
        v.blocks[b.digest] = b
        v.round_blocks[key] = b.digest
        if b.proposer not in self.byzantine:
            v.received_honest.append(b)
        if not v.frozen:
            filter_proposals(v.best, PriorityMsg(b.proposer, b.round, cred))
        best = v.best.get(b.bucket)
        relay = best is not None and best.proposer == b.proposer
        self._poke(v)
        return relay and v.behavior != "silent"

    def _blocks_ready(self, v: AlgoNode) -> bool:
        for bucket, msg in v.best.items():
            key = (bucket, msg.proposer)
            if key not in v.round_blocks and key not in v.round_invalid:
                return False
        return True

    def _local_vector(self, v: AlgoNode) -> DecisionVector:
        slots = [EMPTY] * self.p.cl
        for bucket, msg in v.best.items():
            d = v.round_blocks.get((bucket, msg.proposer))
            if d is not None:
                slots[bucket] = d
        return DecisionVector(v.round, tuple(slots))

    # -- votes --------------------------------------------------------------------------

    def _vote(self, v: AlgoNode, step: int, value: bytes) -> None:
        p = self.p
        if v.behavior == "silent":
            return
        if v.behavior == "contrarian":
            if value == EMPTY:
                if v.local_value == EMPTY:
                    return
                value = v.local_value
            else:
                value = EMPTY
        tau = p.tau_final if step == FINAL_STEP else p.tau_step
        tag = FINAL if step == FINAL_STEP else step_tag(step)
        cred = sortition(v.kp.secret_key, v.seed, tag, tau, 1, self.n, p.cl)
        if not cred.selected:
            return
        self.net.broadcast(v.id, Vote(v.id, v.round, step, value, cred), VOTE_BYTES, self._on_votes, batch=True)

    def _cred_ok(self, who: int, seed: bytes, role: int, cred: SortitionResult) -> bool:
        """Verify a proposer (``role=0``) or committee credential, memoised per
        credential since every node checks the same one against the same seed."""
        key = (who, seed, role, cred.vrf.proof)
        ok = self._verified.get(key)
        if ok is None:
            p = self.p
            if role == 0:
                tag, tau = PROPOSER, p.tau_proposer
            elif role == FINAL_ROLE:
                tag, tau = FINAL, p.tau_final
            else:
                tag, tau = step_tag(role), p.tau_step
            ok = cred.selected and verify_sortition(self.pks[who], seed, tag, tau, 1, self.n, p.cl, cred)
            self._verified[key] = ok
        return ok

    def _on_vote(self, nid: int, vote: Vote) -> None:
        self._on_votes((nid,), vote)

    def _on_votes(self, ids, vote: Vote) -> None:
        r, step = vote.round, vote.step
        final = step == FINAL_STEP
        role = FINAL_ROLE if final else step
        voter, value, j, vrf = vote.voter, vote.value, vote.cred.j, vote.cred.vrf.value
        for nid in ids:
            v = self.nodes[nid]
            if r != v.round:
                if r > v.round:
                    v.pending_votes.setdefault(r, []).append(vote)
                continue
            if v.done or (not final and step < v.step):
                continue
            t = v.tallies.get(step)
            if t is None:
                t = v.tallies[step] = Tally(self.p.T * (self.p.tau_final if final else self.p.tau_step))
            if voter in t.voters:
                continue
            if vote.checked_seed != v.seed:
                vote.ok = self._cred_ok(voter, v.seed, role, vote.cred)
                vote.checked_seed = v.seed
            if not vote.ok:
                continue
            # inlined Tally.add: this loop runs once per (vote, node)
            t.voters.add(voter)
            c = t.counts[value] = t.counts.get(value, 0) + j
            if t.min_vrf is None or vrf < t.min_vrf:
                t.min_vrf = vrf
            if t.winner is None and c > t.threshold:
                t.winner = value
                w = v.wait
                if isinstance(w, Count) and w.step == step:
                    self._poke(v)
                elif isinstance(w, BlocksReady) and step == 1:
                    # the committee already voted: stop waiting on gossip and pull
                    self._pull_missing(v)

    # -- fetching missing data ---------------------------------------------------------------

    def _pull_missing(self, v: AlgoNode) -> None:
        for bucket, msg in v.best.items():
            key = (bucket, msg.proposer)
            if key in v.round_blocks or key in v.round_invalid:
                continue
            d = self.published.get((v.round,) + key)
            if d is not None:
                self._request(v, ("blk", d))

    def _have_all(self, v: AlgoNode, value: bytes) -> bool:
        vec = v.vectors.get(value)
        if vec is None:
            self._request(v, ("vec", value))
            return False
        ok = True
        for d in vec.slots:
            if d != EMPTY and d not in v.blocks:
                self._request(v, ("blk", d))
                ok = False
        return ok

    def _holder(self, v: AlgoNode, key) -> Optional[int]:
        kind, d = key
        def has(u: int) -> bool:
            node = self.nodes[u]
            return d in (node.vectors if kind == "vec" else node.blocks) and node.behavior != "silent"
        for u in self.net.peers[v.id]:
            if has(u):
                return u
        for u in range(self.n):
            if u != v.id and has(u):
                return u
        return None

    def _request(self, v: AlgoNode, key) -> None:
        if key in v.requested:
            return
        holder = self._holder(v, key)
        v.requested.add(key)
        if holder is None:
            self.sim.schedule(FETCH_RETRY_MS, self._retry, v, key)
            return
        self.net.multicast(v.id, [holder], (v.id, key), REQUEST_BYTES, self._serve)

    def _retry(self, v: AlgoNode, key) -> None:
        v.requested.discard(key)
        if v.wait is not None:
            self._poke(v)

    def _serve(self, holder: int, req) -> None:
        nid, (kind, d) = req
        h = self.nodes[holder]
        if kind == "vec":
            obj, size = h.vectors[d], 64 + 32 * self.p.cl
        else:
            obj = h.blocks[d]
            size = obj.body_size + BLOCK_HEADER_BYTES
        self.net.send(holder, nid, "fetch", (kind, d, obj), size, self._on_fetched)

    def _on_fetched(self, env) -> None:
        kind, d, obj = env.payload
        v = self.nodes[env.dst]
        if kind == "vec":
            v.vectors[d] = obj
        elif obj.round == v.round and not v.frozen:
            self._on_block(v.id, d, (obj, self.creds[d]))
            return
        else:
            v.blocks[d] = obj
        self._poke(v)

    # -- results --------------------------------------------------------------------------

    def _outcome(self, status: str) -> Outcome:
        out = Outcome(self.log)
        ref = self.nodes[self.honest[0]]
        done_rounds = min(len(self.nodes[i].chain) for i in self.honest)
        out.rounds_done = done_rounds
        out.status = "ok" if done_rounds >= self.cfg.rounds else "stalled"
        for r in range(done_rounds):
            m = ref.chain.blocks[r]
            times = [self.proposed_at[b.digest] for b in m.blocks if b is not None and b.digest in self.proposed_at]
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
            out.chains[i] = self.nodes[i].chain.hashes()
        if self.net.trace is not None:
            self.log.envelopes(self.net.trace)
        out.trace = self.net.trace
        return out


_NOT_READY = object()


def run(cfg: ScenarioConfig, log: Optional[RunLog] = None) -> Outcome:
    return Algorand(cfg, log).run()
