"""Deterministic discrete-event network.

Times are milliseconds as floats.  Bandwidth is charged at the sender's egress
only: every node owns one uplink and transmissions queue on it FIFO.

Two dissemination paths exist:

* ``Network.send`` / ``Gossip`` / ``IdaGossip``: the data plane, one event
  per envelope, egress-queued and optionally traced.
* ``Network.broadcast``: small control messages (votes, priorities, echoes)
  flooded over the overlay one hop ring at a time.  Each hop costs latency plus
  serialisation of the message, but the message does not queue behind bulk
  traffic.  This keeps vote-heavy protocols tractable at desk scale.
"""

from __future__ import annotations

import gc
import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Optional, Sequence

from .core import sha256

MB = 1_000_000


class Simulator:
    """Event loop popping (time, insertion sequence) in order."""

    def __init__(self):
        self.now = 0.0
        self._heap: list[list] = []
        self._seq = 0
        self.events = 0

    def at(self, time: float, fn: Callable, *args) -> list:
        if time < self.now:
            time = self.now
        entry = [time, self._seq, fn, args]
        self._seq += 1
        heapq.heappush(self._heap, entry)
        return entry

    def schedule(self, delay: float, fn: Callable, *args) -> list:
        return self.at(self.now + delay, fn, *args)

    @staticmethod
    def cancel(entry: list) -> None:
        entry[2] = None

    def pending(self) -> int:
        return len(self._heap)

    def run_until(self, until: Optional[float] = None,
                  condition: Optional[Callable[[], bool]] = None,
                  max_events: Optional[int] = None) -> str:
        """Run until the queue drains, ``condition()`` holds, or a limit is reached.

        Returns ``"drained"``, ``"condition"``, ``"time_limit"`` or
        ``"event_limit"``; hitting a limit is reported, never raised.
        """
        # cycle collection passes over the long-lived simulation state cost ~15%
        # of run time; cycles are reclaimed once the loop returns
        paused = gc.isenabled()
        gc.disable()
        try:
            return self._loop(until, condition, max_events)
        finally:
            if paused:
                gc.enable()

    def _loop(self, until, condition, max_events) -> str:
        heap = self._heap
        budget = max_events
        while heap:
            if condition is not None and condition():
                return "condition"
            if until is not None and heap[0][0] > until:
                self.now = max(self.now, until)
                return "time_limit"
            if budget is not None:
                if budget <= 0:
                    return "event_limit"
                budget -= 1
            time, _, fn, args = heapq.heappop(heap)
            if fn is None:
                continue
            self.now = time
            self.events += 1
            fn(*args)
        if condition is not None and condition():
            return "condition"
        return "drained"


@dataclass(frozen=True)
class LinkParams:
    one_way_latency_ms: float = 50.0
    bandwidth_bps: float = 20_000_000.0

    def __post_init__(self):
        if self.one_way_latency_ms <= 0 or self.bandwidth_bps <= 0:
            raise ValueError("latency and bandwidth must be positive")

    def tx_ms(self, size: int) -> float:
        return size * 8 * 1000.0 / self.bandwidth_bps


@dataclass(slots=True)
class Envelope:
    src: int
    dst: int
    kind: str
    payload: Any
    size: int
    enqueue_time: float
    tx_start: float
    delivery_time: float


def bootstrap(n_nodes: int, fanout: int, rng_seed: int) -> list[list[int]]:
    """Sample ``fanout`` peers per node and symmetrise the result.

    Every node ends up knowing at least ``fanout`` others; lists are sorted so
    iteration order never depends on sampling order.
    """
    if fanout < 1:
        raise ValueError("fanout must be >= 1")
    if n_nodes < fanout + 1:
        raise ValueError(f"need at least fanout+1={fanout + 1} nodes, got {n_nodes}")
    rng = random.Random(rng_seed)
    sets = [set() for _ in range(n_nodes)]
    for v in range(n_nodes):
        others = [u for u in range(n_nodes) if u != v]
        for u in rng.sample(others, fanout):
            sets[v].add(u)
            sets[u].add(v)
    return [sorted(s) for s in sets]


class Network:
    def __init__(self, sim: Simulator, peers: Sequence[Sequence[int]],
                 link: LinkParams = LinkParams(), rng_seed: int = 0,
                 relays: Optional[Sequence[bool]] = None, trace: bool = False):
        self.sim = sim
        self.peers = [list(p) for p in peers]
        self.n = len(peers)
        self.link = link
        self.rng = random.Random(rng_seed)
        self.relays = list(relays) if relays is not None else [True] * self.n
        self.egress_free = [0.0] * self.n
        self.queues: list[deque] = [deque() for _ in range(self.n)]
        self.busy = [False] * self.n
        self.trace: Optional[list[Envelope]] = [] if trace else None
        self.enqueued = 0
        self.skipped = 0
        self.sent = 0
        self.arrived = 0
        self.delivered = 0
        self.dropped = 0
        self.bytes_sent = 0
        self._rings: dict[int, list[list[int]]] = {}
        self._ms_per_byte = link.tx_ms(1)
        self._latency = link.one_way_latency_ms

    # -- data plane ---------------------------------------------------------------

    def send(self, src: int, dst: int, kind: str, payload: Any, size: int,
             on_arrival: Callable[[Envelope], None],
             skip: Optional[Callable[[], bool]] = None) -> Envelope:
        """Queue a transmission on ``src``'s uplink.

        The envelope's ``tx_start`` and ``delivery_time`` are filled in when the
        uplink picks it up.  ``skip`` is evaluated at that moment; if it returns
        True the transmission is abandoned (counted in ``skipped``).
        """
        if src == dst:
            raise ValueError("cannot send to self")
        env = Envelope(src, dst, kind, payload, size, self.sim.now, -1.0, -1.0)
        self.queues[src].append((env, on_arrival, skip))
        self.enqueued += 1
        if not self.busy[src]:
            self._pump(src)
        return env

    def _pump(self, src: int) -> None:
        q = self.queues[src]
        while q:
            env, on_arrival, skip = q.popleft()
            if skip is not None and skip():
                self.skipped += 1
                continue
            sim = self.sim
            now = sim.now
            done = now + env.size * self._ms_per_byte
            env.tx_start = now
            env.delivery_time = done + self._latency
            self.busy[src] = True
            self.egress_free[src] = done
            self.sent += 1
            self.bytes_sent += env.size
            if self.trace is not None:
                self.trace.append(env)
            sim.at(done, self._pump, src)
            sim.at(env.delivery_time, self._deliver, env, on_arrival)
            return
        self.busy[src] = False

    def _deliver(self, env: Envelope, on_arrival: Callable[[Envelope], None]) -> None:
        self.arrived += 1
        on_arrival(env)

    def sample_peers(self, node: int, k: int, exclude: Optional[int] = None) -> list[int]:
        cands = [p for p in self.peers[node] if p != exclude]
        if len(cands) <= k:
            return cands
        return self.rng.sample(cands, k)

    # -- control plane --------------------------------------------------------------

    def rings(self, origin: int) -> list[list[int]]:
        """BFS hop rings from ``origin`` where only relaying nodes extend the frontier."""
        r = self._rings.get(origin)
        if r is not None:
            return r
        dist = {origin: 0}
        rings: list[list[int]] = []
        frontier = [origin]
        while frontier:
            nxt = []
            for v in frontier:
                if v != origin and not self.relays[v]:
                    continue
                for u in self.peers[v]:
                    if u not in dist:
                        dist[u] = dist[v] + 1
                        nxt.append(u)
            if nxt:
                rings.append(sorted(nxt))
            frontier = nxt
        self._rings[origin] = rings
        return rings

    def broadcast(self, origin: int, payload: Any, size: int,
                  on_deliver: Callable[[int, Any], None], include_self: bool = True,
                  batch: bool = False) -> None:
        """Flood ``payload`` over the overlay.

        With ``batch=True`` the handler is called once per hop ring as
        ``on_deliver(node_ids, payload)`` instead of once per node.
        """
        hop = self.link.one_way_latency_ms + self.link.tx_ms(size)
        fn = on_deliver if batch else self._ring
        extra = () if batch else (on_deliver,)
        if include_self:
            self.sim.schedule(0.0, fn, [origin], payload, *extra)
        for k, ring in enumerate(self.rings(origin), start=1):
            self.sim.schedule(k * hop, fn, ring, payload, *extra)

    @staticmethod
    def _ring(ring: list[int], payload: Any, on_deliver: Callable[[int, Any], None]) -> None:
        for v in ring:
            on_deliver(v, payload)

    def multicast(self, origin: int, targets: Iterable[int], payload: Any, size: int,
                  on_deliver: Callable[[int, Any], None]) -> None:
        """Single-hop control message to every target (a direct signed message)."""
        hop = self.link.one_way_latency_ms + self.link.tx_ms(size)
        targets = [t for t in targets if t != origin]
        if targets:
            self.sim.schedule(hop, self._ring, targets, payload, on_deliver)


class Gossip:
    """Push gossip with per-node dedup.

    ``handler(node, msg_id, payload)`` runs on first receipt and returns True
    when the node should forward.  A handler that wants to decide later returns
    False and calls :meth:`forward` itself.  Forwarding picks ``fanout`` random
    neighbours, never bouncing straight back to the sender.
    """

    def __init__(self, net: Network, kind: str, fanout: int,
                 handler: Callable[[int, Hashable, Any], bool]):
        self.net = net
        self.kind = kind
        self.fanout = fanout
        self.handler = handler
        self.seen: list[set] = [set() for _ in range(net.n)]
        # peers each node knows to hold a message because they sent it a copy
        self.holders: list[dict] = [{} for _ in range(net.n)]
        self.first_seen: dict[Hashable, dict[int, float]] = {}

    def publish(self, origin: int, msg_id: Hashable, payload: Any, size: int) -> int:
        """Inject a message at ``origin``; returns the number of envelopes created."""
        if msg_id in self.seen[origin]:
            return 0
        self.seen[origin].add(msg_id)
        self.first_seen.setdefault(msg_id, {})[origin] = self.net.sim.now
        return self.forward(origin, msg_id, payload, size, None)

    def publish_interleaved(self, origin: int, items: list[tuple[Hashable, Any, int]]) -> int:
        """Inject several messages at once, sending the first copy of each before any second copy."""
        plans = []
        for msg_id, payload, size in items:
            if msg_id in self.seen[origin]:
                continue
            self.seen[origin].add(msg_id)
            self.first_seen.setdefault(msg_id, {})[origin] = self.net.sim.now
            plans.append((msg_id, payload, size, self.net.sample_peers(origin, self.fanout)))
        sent = 0
        for k in range(self.fanout):
            for msg_id, payload, size, targets in plans:
                if k < len(targets):
                    self._send(origin, targets[k], msg_id, payload, size)
                    sent += 1
        return sent

    def forward(self, node: int, msg_id, payload, size, sender) -> int:
        targets = self.net.sample_peers(node, self.fanout, exclude=sender)
        for dst in targets:
            self._send(node, dst, msg_id, payload, size)
        return len(targets)

    def _send(self, node, dst, msg_id, payload, size) -> None:
        holders = self.holders[node]
        self.net.send(node, dst, self.kind, (msg_id, payload), size, self._on_arrival,
                      skip=lambda: dst in holders.get(msg_id, ()))

    def _on_arrival(self, env: Envelope) -> None:
        msg_id, payload = env.payload
        node = env.dst
        self.holders[node].setdefault(msg_id, set()).add(env.src)
        if msg_id in self.seen[node]:
            self.net.dropped += 1
            return
        self.net.delivered += 1
        self.seen[node].add(msg_id)
        self.first_seen.setdefault(msg_id, {})[node] = self.net.sim.now
        if self.handler(node, msg_id, payload) and self.net.relays[node]:
            self.forward(node, msg_id, payload, env.size, env.src)

    def coverage(self, msg_id) -> int:
        return len(self.first_seen.get(msg_id, ()))


@dataclass
class _Assembly:
    digest: bytes
    n_chunks: int
    obj: Any
    data: Optional[bytes]
    have: dict[int, set[int]] = field(default_factory=dict)


class IdaGossip:
    """Chunked block dissemination.

    The block is cut into ``n_chunks`` equal pieces and each piece is gossiped
    on its own.  When real bytes are given, recipients reassemble them and
    check the digest; otherwise the chunks only carry sizes and the object is
    handed over once every piece arrived.
    """

    def __init__(self, net: Network, fanout: int,
                 on_complete: Callable[[int, bytes, Any], None], kind: str = "chunk"):
        self.net = net
        self.on_complete = on_complete
        self.gossip = Gossip(net, kind, fanout, self._on_chunk)
        self.assemblies: dict[bytes, _Assembly] = {}
        self.received: dict[bytes, dict[int, bytes]] = {}
        self.complete: dict[bytes, dict[int, float]] = {}
        self.unavailable: dict[bytes, set[int]] = {}
        self._parts: dict[tuple[bytes, int], dict[int, bytes]] = {}

    @staticmethod
    def split(data: bytes, n_chunks: int) -> list[bytes]:
        if n_chunks < 1:
            raise ValueError("n_chunks must be >= 1")
        size = -(-len(data) // n_chunks)
        return [data[i * size:(i + 1) * size] for i in range(n_chunks)]

    def disseminate(self, origin: int, digest: bytes, size: int, n_chunks: int,
                    obj: Any = None, data: Optional[bytes] = None) -> None:
        if n_chunks < 1:
            raise ValueError("n_chunks must be >= 1")
        if digest in self.assemblies:
            return
        a = _Assembly(digest, n_chunks, obj, data)
        self.assemblies[digest] = a
        self.complete[digest] = {origin: self.net.sim.now}
        a.have[origin] = set(range(n_chunks))
        pieces = self.split(data, n_chunks) if data is not None else None
        chunk_size = -(-size // n_chunks)
        # the origin hands out one copy of every chunk before repeating any, so
        # the whole block leaves its uplink as early as possible
        self.gossip.publish_interleaved(origin, [
            ((digest, i), pieces[i] if pieces is not None else None, chunk_size) for i in range(n_chunks)])

    def _on_chunk(self, node: int, msg_id, body) -> bool:
        digest, i = msg_id
        a = self.assemblies[digest]
        have = a.have.setdefault(node, set())
        have.add(i)
        if body is not None:
            self._parts.setdefault((digest, node), {})[i] = body
        if len(have) == a.n_chunks and node not in self.complete[digest]:
            if a.data is not None:
                parts = self._parts.pop((digest, node))
                data = b"".join(parts[k] for k in range(a.n_chunks))
                if sha256(data) != digest:
                    return True
                self.received.setdefault(digest, {})[node] = data
            self.complete[digest][node] = self.net.sim.now
            self.on_complete(node, digest, a.obj)
        return True

    def has(self, node: int, digest: bytes) -> bool:
        return node in self.complete.get(digest, ())

    def expire(self, digest: bytes, nodes: Iterable[int]) -> set[int]:
        """Mark the block unavailable for every listed node still missing chunks."""
        miss = {v for v in nodes if not self.has(v, digest)}
        self.unavailable.setdefault(digest, set()).update(miss)
        return miss
