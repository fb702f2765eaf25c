"""Deterministic discrete-event simulator for a low-power lossy mesh running
rank-based tree routing.

The engine owns a single priority queue of (time, insertion-order, thunk)
events, one seeded RNG, and an append-only trace, which together make a run a
pure function of (scenario config, seed).  Topology is a disc radio model on
2-D positions; the control plane exchanges DIO / DAO / DIS records and the
data plane forwards packets hop by hop along parent chains toward the nearest
collection sink, falling back to the root.  Time unit: one tick is one
simulated millisecond (declared here so metrics carry units).
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field

from . import ids as ids_mod
from . import trust as trust_mod
from .config import ConfigError, ScenarioConfig, SimulationError
from .firewall import FirewallTable
from .ledger import TrafficRecord
from .trace import TraceLog

ROLE_NORMAL = "normal"
ROLE_SINK = "local_sink"
ROLE_ROOT = "global_root"
ROLE_ATTACKER = "attacker"

ROOT_RANK = 0

# Event-queue safety bound; trips on runaway flooding loops.
MAX_PENDING_EVENTS = 2_000_000


class NoRouteError(Exception):
    """Source has no parent chain toward any sink."""


def compute_rank(parent_rank: int, link_cost: int = 1) -> int:
    """Additive objective function (hop count when link_cost is 1)."""
    if parent_rank < ROOT_RANK:
        raise ValueError("parent_rank below root rank")
    if link_cost < 1:
        raise ValueError("link_cost must be >= 1")
    return parent_rank + link_cost


@dataclass
class ControlMessage:
    kind: str             # DIO | DAO | DIS | DATA
    sender: int           # identity claimed on the air
    claimed_origin: int   # identity named in the message body
    rank: int
    version: int
    seq: int
    payload_size: int = 0
    data_id: int = -1
    via_tunnel: bool = False


@dataclass
class Link:
    endpoints: tuple
    loss_probability: float
    latency: int


class EventQueue:
    """Priority queue popping in (time, insertion order); determinism anchor."""

    def __init__(self):
        self._heap = []
        self._counter = 0

    def push(self, time: int, fn) -> None:
        heapq.heappush(self._heap, (time, self._counter, fn))
        self._counter += 1

    def pop(self):
        time, _, fn = heapq.heappop(self._heap)
        return time, fn

    def peek_time(self):
        return self._heap[0][0] if self._heap else None

    def __len__(self):
        return len(self._heap)


class Node:
    def __init__(self, nid: int, role: str, pos: tuple):
        self.id = nid
        self.role = role
        self.pos = pos
        self.rank: int | None = ROOT_RANK if role == ROLE_ROOT else None
        self.version = 1
        self.parent: int | None = None
        self.neighbor_ids: list[int] = []
        # origin -> (advertised rank, version, heard_at); the protocol-level
        # neighbor table, distinct from the radio adjacency above.
        self.cache: dict[int, tuple] = {}
        self.trust: dict[int, trust_mod.TrustRecord] = {}
        self.firewall: FirewallTable | None = None
        self.behavior = None
        self.captures = 0
        self.sniffer_watchers: list["Node"] = []
        self.alive = True
        self.last_dis_reply = -(1 << 30)

    @property
    def is_collector(self) -> bool:
        return self.role in (ROLE_SINK, ROLE_ROOT)

    def distance(self, other: "Node") -> float:
        return math.hypot(self.pos[0] - other.pos[0], self.pos[1] - other.pos[1])


class Network:
    """Simulation state plus the event-driven protocol implementation."""

    def __init__(self, config: ScenarioConfig, seed: int):
        import random

        self.config = config
        self.thresholds = config.thresholds
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0
        self.queue = EventQueue()
        self.trace = TraceLog()
        self.nodes: dict[int, Node] = {}
        self.sink_ids: list[int] = []
        self.root_id = 0
        self.root_version = 1
        self.root_alive = True
        self.defense = config.defense
        self.defense_runtime: ids_mod.DefenseRuntime | None = None
        self.quarantined: set[int] = set()
        self.quarantine_events: list[tuple[int, int]] = []
        self.verdicts: list = []
        self.counters = Counter()
        self.parent_changes = 0
        self.block_parent_changes = Counter()
        self.last_advertised: dict[int, int] = {}
        self.data_log: dict[int, dict] = {}
        self._next_data_id = 0
        self._seq: dict[tuple, int] = {}
        self.nearest_sink: dict[int, int] = {}
        self.registered_positions: dict[int, tuple] = {}
        self.attack_assignments: list = []  # [(node_id, behavior)]
        self.rank_cap = 4 * config.node_count + 16
        self.stale_window = int(2.5 * config.dio_interval)
        self.warmup_end = (config.thresholds.anomaly_warmup_blocks
                           * config.thresholds.block_interval)

    # -- plumbing ----------------------------------------------------------

    def schedule(self, time: int, fn) -> None:
        self.queue.push(time, fn)

    def next_seq(self, phys_id: int, identity: int | None = None) -> int:
        key = (phys_id, identity if identity is not None else phys_id)
        self._seq[key] = self._seq.get(key, 0) + 1
        return self._seq[key]

    def region_of(self, node: Node) -> int:
        """First collection sink on the parent chain; root as fallback."""
        cur = node
        for _ in range(64):
            if cur.is_collector:
                return cur.id
            if cur.parent is None:
                return self.nearest_sink.get(node.id, self.root_id)
            cur = self.nodes[cur.parent]
        return self.root_id

    def _record(self, phys: Node, msg: ControlMessage, outcome: str) -> None:
        if self.defense_runtime is None:
            return
        rec = TrafficRecord(msg.sender, msg.claimed_origin, msg.kind,
                            msg.rank, msg.version, msg.seq, outcome)
        self.defense_runtime.record(self.region_of(phys), rec)

    def _sniff(self, phys: Node) -> None:
        for watcher in phys.sniffer_watchers:
            if watcher.behavior is not None and watcher.behavior.active(self):
                watcher.captures += 1

    def _trust_record(self, observer: Node, peer_id: int, success: bool) -> None:
        if not self.defense:
            return
        rec = observer.trust.get(peer_id)
        if rec is None:
            rec = trust_mod.new_record(self.thresholds)
            observer.trust[peer_id] = rec
        before = rec.classification
        trust_mod.record_exchange(rec, success, self.thresholds)
        if rec.classification == trust_mod.WORST and before != trust_mod.WORST:
            self.trace.emit(self.now, "TRUSTWORST", observer.id, peer_id)
            if observer.parent == peer_id:
                observer.parent = None
                observer.rank = None
                self._select_parent(observer)

    # -- transmission primitives -------------------------------------------

    def _broadcast(self, phys: Node, msg: ControlMessage) -> None:
        self.counters["control_sent"] += 1
        self.counters[msg.kind.lower() + "_sent"] += 1
        self.trace.emit(self.now, "SEND", msg.sender, None, kind=msg.kind,
                        origin=msg.claimed_origin, rank=msg.rank,
                        version=msg.version, seq=msg.seq)
        self._sniff(phys)
        if msg.kind == "DIO":
            self.last_advertised[msg.claimed_origin] = msg.rank
        self._record(phys, msg, "sent")
        loss = self.config.loss_probability
        latency = self.config.link_latency
        for nb in phys.neighbor_ids:
            if loss > 0.0 and self.rng.random() < loss:
                continue
            self.schedule(self.now + latency,
                          lambda nb=nb, msg=msg, src=phys.id:
                          self._control_arrival(nb, msg, src))

    def _control_hop(self, phys: Node, to_id: int, msg: ControlMessage) -> None:
        self.counters["control_sent"] += 1
        self.counters[msg.kind.lower() + "_sent"] += 1
        self.trace.emit(self.now, "SEND", msg.sender, to_id, kind=msg.kind,
                        origin=msg.claimed_origin, rank=msg.rank,
                        version=msg.version, seq=msg.seq)
        self._sniff(phys)
        self._record(phys, msg, "sent")
        if to_id not in phys.neighbor_ids:
            self.trace.emit(self.now, "DROP", phys.id, to_id, reason="no_link",
                            kind=msg.kind)
            return
        if self.config.loss_probability > 0.0 and self.rng.random() < self.config.loss_probability:
            self.trace.emit(self.now, "DROP", phys.id, to_id, reason="loss",
                            kind=msg.kind)
            return
        self.schedule(self.now + self.config.link_latency,
                      lambda: self._control_arrival(to_id, msg, phys.id))

    def _control_arrival(self, to_id: int, msg: ControlMessage, from_id: int) -> None:
        node = self.nodes[to_id]
        if not node.alive:
            return
        if node.behavior is not None and node.behavior.active(self):
            node.behavior.on_overhear(self, node, msg)
        if self.defense and node.firewall is not None:
            allowed, reason = node.firewall.admit(msg)
            if not allowed:
                self.trace.emit(self.now, "DROP", to_id, msg.sender,
                                reason="firewall:" + reason, kind=msg.kind)
                return
        if msg.kind == "DIO":
            process_dio(self, node, msg)
        elif msg.kind == "DIS":
            self._maybe_answer_dis(node, msg)
        elif msg.kind == "DAO":
            if node.is_collector:
                return
            if node.parent is not None and node.rank is not None:
                fwd = ControlMessage("DAO", node.id, msg.claimed_origin,
                                     node.rank, node.version,
                                     self.next_seq(node.id))
                self._control_hop(node, node.parent, fwd)

    def _maybe_answer_dis(self, node: Node, msg: ControlMessage) -> None:
        if node.rank is None or node.id == msg.sender:
            return
        if self.now - node.last_dis_reply < self.config.dio_interval:
            return
        node.last_dis_reply = self.now
        requester = msg.sender

        def reply():
            if node.alive and node.rank is not None:
                dio = ControlMessage("DIO", node.id, node.id, node.rank,
                                     node.version, self.next_seq(node.id))
                self._control_hop(node, requester, dio)

        self.schedule(self.now + 10, reply)

    # -- data plane ---------------------------------------------------------

    def send_data(self, src: int, payload_size: int | None = None,
                  sender_identity: int | None = None,
                  origin_identity: int | None = None) -> int:
        """Originate one data packet toward the nearest sink; returns its id."""
        node = self.nodes[src]
        if node.rank is None or node.parent is None:
            raise NoRouteError(f"node {src} has no parent chain")
        size = self.config.payload_size if payload_size is None else payload_size
        data_id = self._next_data_id
        self._next_data_id += 1
        origin = origin_identity if origin_identity is not None else src
        sender = sender_identity if sender_identity is not None else src
        self.data_log[data_id] = {"origin": origin, "sent_at": self.now,
                                  "size": size, "delivered_at": None}
        self.counters["data_sent"] += 1
        msg = ControlMessage("DATA", sender, origin, node.rank, node.version,
                             self.next_seq(src, sender), size, data_id)
        self._data_transmit(node, node.parent, msg, upstream_id=None)
        return data_id

    def _data_transmit(self, phys: Node, to_id: int, msg: ControlMessage,
                       upstream_id: int | None) -> None:
        self.trace.emit(self.now, "SEND", msg.sender, to_id, kind="DATA",
                        origin=msg.claimed_origin, seq=msg.seq,
                        id=msg.data_id, size=msg.payload_size)
        self._sniff(phys)
        if upstream_id is not None:
            # The upstream hop overhears this onward transmission: success.
            self._trust_record(self.nodes[upstream_id], phys.id, True)
        if to_id not in phys.neighbor_ids:
            self.trace.emit(self.now, "DROP", phys.id, to_id, reason="no_link",
                            kind="DATA", id=msg.data_id)
            self._record(phys, msg, "lost")
            self._trust_record(phys, to_id, False)
            return
        if self.config.loss_probability > 0.0 and self.rng.random() < self.config.loss_probability:
            self.trace.emit(self.now, "DROP", phys.id, to_id, reason="loss",
                            kind="DATA", id=msg.data_id)
            self._record(phys, msg, "lost")
            self._trust_record(phys, to_id, False)
            return
        self.schedule(self.now + self.config.link_latency,
                      lambda: self._data_arrival(to_id, msg, phys.id))

    def _data_arrival(self, to_id: int, msg: ControlMessage, from_id: int) -> None:
        node = self.nodes[to_id]
        frm = self.nodes[from_id]
        if not node.alive:
            self._record(frm, msg, "lost")
            self._trust_record(frm, to_id, False)
            return
        if node.behavior is not None and node.behavior.active(self):
            node.behavior.on_overhear(self, node, msg)
        if self.defense and node.firewall is not None:
            allowed, reason = node.firewall.admit(msg)
            if not allowed:
                self.trace.emit(self.now, "DROP", to_id, msg.sender,
                                reason="firewall:" + reason, kind="DATA",
                                id=msg.data_id)
                self._record(frm, msg, "dropped_firewall")
                self._trust_record(frm, to_id, False)
                return
        if node.is_collector:
            self._record(frm, msg, "delivered")
            self._trust_record(frm, to_id, True)
            log = self.data_log.get(msg.data_id)
            if log is not None and log["delivered_at"] is None:
                log["delivered_at"] = self.now
                self.counters["data_delivered"] += 1
                self.counters["delivered_bytes"] += msg.payload_size
            self.trace.emit(self.now, "DELIVER", to_id, msg.claimed_origin,
                            id=msg.data_id, size=msg.payload_size)
            return
        if (node.behavior is not None and node.behavior.active(self)
                and node.behavior.drops_data(self, node, msg)):
            self.trace.emit(self.now, "DROP", to_id, msg.sender,
                            reason="attacker", kind="DATA", id=msg.data_id)
            self._record(frm, msg, "dropped_attacker")
            self._trust_record(frm, to_id, False)
            return
        if node.parent is None or node.rank is None:
            self.trace.emit(self.now, "DROP", to_id, msg.sender,
                            reason="no_route", kind="DATA", id=msg.data_id)
            self._record(frm, msg, "no_route")
            self._trust_record(frm, to_id, False)
            return
        self._record(frm, msg, "forwarded")
        fwd = ControlMessage("DATA", node.id, msg.claimed_origin, node.rank,
                             node.version, self.next_seq(node.id),
                             msg.payload_size, msg.data_id)
        self._data_transmit(node, node.parent, fwd, upstream_id=from_id)

    # -- parent selection ----------------------------------------------------

    def _select_parent(self, node: Node) -> str:
        if node.role == ROLE_ROOT:
            return "no_change"
        candidates: dict[int, int] = {}
        stale_cut = self.now - self.stale_window
        for origin in sorted(node.cache):
            rank, version, heard = node.cache[origin]
            # The current parent is exempt from staleness: a parent is kept
            # until something positively disqualifies it.
            if heard < stale_cut and origin != node.parent:
                continue
            if version != node.version:
                continue
            rec = node.trust.get(origin)
            if self.defense and rec is not None and rec.classification == trust_mod.WORST:
                continue
            cand = compute_rank(rank, self.config.link_cost)
            if cand > self.rank_cap:
                continue
            candidates[origin] = cand
        old_parent, old_rank = node.parent, node.rank
        if not candidates:
            if old_parent is not None or old_rank is not None:
                node.parent = None
                node.rank = None
                self.parent_changes += 1
                self.block_parent_changes[node.id] += 1
                self.trace.emit(self.now, "PARENT", node.id, None,
                                old="-" if old_parent is None else old_parent,
                                rank=-1)
                return "detached"
            return "no_change"
        best = min(candidates, key=lambda origin: (candidates[origin], origin))
        best_rank = candidates[best]
        if old_parent is not None and old_parent in candidates:
            keep_rank = candidates[old_parent]
            # Switch only for a strictly better rank, or the lower id on ties.
            if best_rank > keep_rank or (best_rank == keep_rank and best >= old_parent):
                if keep_rank != old_rank:
                    node.rank = keep_rank
                    self.trace.emit(self.now, "RANK", node.id, None, rank=keep_rank)
                    return "rank_update"
                return "no_change"
        node.parent = best
        node.rank = best_rank
        self.parent_changes += 1
        self.block_parent_changes[node.id] += 1
        self.trace.emit(self.now, "PARENT", node.id, best,
                        old="-" if old_parent is None else old_parent,
                        rank=best_rank)
        return "adopted"

    # -- periodic processes ---------------------------------------------------

    def _dio_slot(self, nid: int) -> None:
        node = self.nodes[nid]
        if node.alive:
            if node.behavior is not None and node.behavior.active(self):
                msgs = node.behavior.dio_emissions(self, node)
            elif node.rank is not None:
                msgs = [ControlMessage("DIO", nid, nid, node.rank, node.version,
                                       self.next_seq(nid))]
            else:
                msgs = []
            for msg in msgs:
                self._broadcast(node, msg)
        self.schedule(self.now + self.config.dio_interval,
                      lambda: self._dio_slot(nid))

    def _dis_slot(self, nid: int) -> None:
        node = self.nodes[nid]
        if node.alive and node.rank is None:
            msg = ControlMessage("DIS", nid, nid, -1, -1, self.next_seq(nid))
            self._broadcast(node, msg)
        self.schedule(self.now + self.config.dis_interval,
                      lambda: self._dis_slot(nid))

    def _dao_slot(self, nid: int) -> None:
        node = self.nodes[nid]
        if (node.alive and not node.is_collector and node.parent is not None
                and node.rank is not None):
            msg = ControlMessage("DAO", nid, nid, node.rank, node.version,
                                 self.next_seq(nid))
            self._control_hop(node, node.parent, msg)
        self.schedule(self.now + self.config.dao_interval,
                      lambda: self._dao_slot(nid))

    def _data_slot(self, nid: int) -> None:
        node = self.nodes[nid]
        if node.alive and not node.is_collector:
            if node.behavior is not None and node.behavior.active(self):
                emissions = node.behavior.data_emissions(self, node)
            else:
                emissions = [(nid, nid)]
            for sender_identity, origin_identity in emissions:
                if node.parent is not None and node.rank is not None:
                    self.send_data(nid, sender_identity=sender_identity,
                                   origin_identity=origin_identity)
        self.schedule(self.now + self.config.data_interval,
                      lambda: self._data_slot(nid))

    def _mobility_step(self) -> None:
        cfg = self.config
        step = 500
        moved = False
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if node.role != ROLE_NORMAL:
                continue
            target = getattr(node, "_waypoint", None)
            if target is None:
                span = cfg.grid_spacing * math.ceil(math.sqrt(cfg.node_count))
                target = (self.rng.uniform(0, span), self.rng.uniform(0, span))
                node._waypoint = target
            dx, dy = target[0] - node.pos[0], target[1] - node.pos[1]
            dist = math.hypot(dx, dy)
            reach = cfg.mobility_speed * step
            if dist <= reach:
                node.pos = target
                node._waypoint = None
            else:
                node.pos = (node.pos[0] + dx / dist * reach,
                            node.pos[1] + dy / dist * reach)
            moved = True
        if moved:
            _rebuild_adjacency(self)
        self.schedule(self.now + step, self._mobility_step)

    # -- defense actions -------------------------------------------------------

    def announce_version(self, version: int) -> None:
        """Root-originated version change, pushed over the sink backhaul."""
        self.root_version = version
        root = self.nodes[self.root_id]
        root.version = version
        self.trace.emit(self.now, "VERSION_ANNOUNCE", self.root_id, None,
                        version=version)
        for nid in sorted(self.nodes):
            fw = self.nodes[nid].firewall
            if fw is not None:
                fw.announce_version(version)

    def quarantine(self, subject: int) -> None:
        """Remove a condemned identity from every allowlist and neighbor table."""
        if subject in self.quarantined:
            return
        self.quarantined.add(subject)
        self.quarantine_events.append((self.now, subject))
        self.trace.emit(self.now, "QUARANTINE", subject, None)
        for nid in sorted(self.nodes):
            if nid == subject:
                continue
            node = self.nodes[nid]
            if node.firewall is not None:
                node.firewall.remove(subject)
            node.cache.pop(subject, None)
            if node.parent == subject:
                node.parent = None
                node.rank = None
                self._select_parent(node)

    def _disable_root(self) -> None:
        self.root_alive = False
        self.nodes[self.root_id].alive = False
        self.trace.emit(self.now, "ROOTDOWN", self.root_id, None)

    def _boundary(self) -> None:
        if self.defense_runtime is not None:
            self.defense_runtime.on_boundary(self)
        self.schedule(self.now + self.thresholds.block_interval, self._boundary)

    def _arm_rank_checks(self) -> None:
        for nid in sorted(self.nodes):
            fw = self.nodes[nid].firewall
            if fw is not None:
                fw.rank_checks_active = True

    # -- run ---------------------------------------------------------------------

    def start_processes(self) -> None:
        cfg = self.config
        for nid in sorted(self.nodes):
            self.schedule((nid * 37) % cfg.dio_interval, lambda nid=nid: self._dio_slot(nid))
            self.schedule((nid * 53) % cfg.dis_interval, lambda nid=nid: self._dis_slot(nid))
            self.schedule((nid * 67) % cfg.dao_interval + cfg.dao_interval,
                          lambda nid=nid: self._dao_slot(nid))
            self.schedule((nid * 71) % cfg.data_interval + cfg.data_interval,
                          lambda nid=nid: self._data_slot(nid))
        if self.defense_runtime is not None:
            self.schedule(self.thresholds.block_interval, self._boundary)
            self.schedule(self.warmup_end, self._arm_rank_checks)
        if cfg.mobility:
            self.schedule(500, self._mobility_step)
        if cfg.root_disable_at is not None:
            self.schedule(cfg.root_disable_at, self._disable_root)
        if cfg.root_version_bump_at is not None:
            self.schedule(cfg.root_version_bump_at,
                          lambda: self.announce_version(self.root_version + 1))
        if cfg.tamper is not None and self.defense_runtime is not None:
            self.schedule(cfg.tamper.at,
                          lambda: self.defense_runtime.tamper(
                              self, cfg.tamper.sink_index, cfg.tamper.block))
        # Attack activations are scheduled last so that pre-onset event
        # ordering matches the benign run with the same seed.
        for nid, behavior in self.attack_assignments:
            self.schedule(behavior.onset,
                          lambda nid=nid, b=behavior: b.on_activate(self, self.nodes[nid]))


def process_dio(net: Network, node: Node, msg: ControlMessage) -> str:
    """Candidate-parent evaluation for one received routing advertisement."""
    if node.role == ROLE_ROOT or not node.alive:
        return "ignored"
    if net.defense and msg.claimed_origin != msg.sender:
        net.trace.emit(net.now, "DROP", node.id, msg.sender,
                       reason="self_info", origin=msg.claimed_origin)
        return "rejected_self_info"
    origin = msg.claimed_origin
    if origin == node.id or msg.rank < 0:
        return "ignored"
    reset = False
    if msg.version > node.version:
        node.version = msg.version
        node.parent = None
        node.rank = None
        net.trace.emit(net.now, "VERSION", node.id, msg.sender, version=msg.version)
        reset = True
    elif msg.version < node.version:
        return "stale_version"
    node.cache[origin] = (msg.rank, msg.version, net.now)
    outcome = net._select_parent(node)
    if reset:
        return "version_reset"
    return outcome


def run(network: Network, duration: int | None = None) -> TraceLog:
    """Process all events up to the duration; returns the trace."""
    duration = network.config.duration if duration is None else duration
    if duration <= 0:
        raise ValueError("duration must be positive")
    queue = network.queue
    while len(queue) and queue.peek_time() <= duration:
        time, fn = queue.pop()
        if time < network.now:
            raise SimulationError("event scheduled in the past")
        network.now = time
        fn()
        if len(queue) > MAX_PENDING_EVENTS:
            raise SimulationError("event queue exceeded safety bound")
    network.now = duration
    return network.trace


# ---------------------------------------------------------------------------
# Topology construction
# ---------------------------------------------------------------------------


def _grid_cells(n: int, spacing: float) -> tuple[list, int]:
    side = math.ceil(math.sqrt(n))
    rows = math.ceil(n / side)
    cells = [((i % side) * spacing, (i // side) * spacing) for i in range(n)]
    center = min(n - 1, (rows // 2) * side + side // 2)
    return cells, center


def _line_cells(n: int, spacing: float) -> tuple[list, int]:
    return [(i * spacing, 0.0) for i in range(n)], 0


def _strided_picks(candidates: list[int], k: int) -> list[int]:
    # Evenly strided picks; distinct whenever len(candidates) >= k.
    span = len(candidates)
    return [candidates[min(int((j + 0.5) * span / k), span - 1)] for j in range(k)]


def _rebuild_adjacency(net: Network) -> None:
    rng_sq = net.config.radio_range ** 2
    ids = sorted(net.nodes)
    for nid in ids:
        net.nodes[nid].neighbor_ids = []
    for i, a in enumerate(ids):
        na = net.nodes[a]
        for b in ids[i + 1:]:
            nb = net.nodes[b]
            dx = na.pos[0] - nb.pos[0]
            dy = na.pos[1] - nb.pos[1]
            if dx * dx + dy * dy <= rng_sq:
                na.neighbor_ids.append(b)
                nb.neighbor_ids.append(a)
    for nid in ids:
        net.nodes[nid].neighbor_ids.sort()
    for nid in ids:
        net.nodes[nid].sniffer_watchers = []
    for nid in ids:
        node = net.nodes[nid]
        if node.behavior is not None and node.behavior.kind == "sniffing":
            for nb in node.neighbor_ids:
                net.nodes[nb].sniffer_watchers.append(node)


def build_topology(config: ScenarioConfig, rng_seed: int) -> Network:
    """Place nodes, assign roles, provision firewalls and defense state."""
    net = Network(config, rng_seed)
    n = config.node_count
    k = math.ceil(config.sink_fraction * n)

    if config.topology == "grid":
        cells, center = _grid_cells(n, config.grid_spacing)
    elif config.topology == "line":
        cells, center = _line_cells(n, config.grid_spacing)
    else:
        span = config.grid_spacing * math.ceil(math.sqrt(n))
        cells = [(span / 2.0, span / 2.0)]
        cells += [(net.rng.uniform(0, span), net.rng.uniform(0, span))
                  for _ in range(n - 1)]
        center = 0

    remaining = [i for i in range(n) if i != center]
    sink_cells = _strided_picks(remaining, k) if config.topology != "random" else remaining[:k]
    normal_cells = [i for i in remaining if i not in sink_cells]

    net.nodes[0] = Node(0, ROLE_ROOT, cells[center])
    nid = 1
    for cell in sink_cells:
        role = ROLE_NORMAL if config.demote_sinks else ROLE_SINK
        net.nodes[nid] = Node(nid, role, cells[cell])
        if not config.demote_sinks:
            net.sink_ids.append(nid)
        nid += 1
    for cell in normal_cells:
        net.nodes[nid] = Node(nid, ROLE_NORMAL, cells[cell])
        nid += 1

    _rebuild_adjacency(net)

    for i in sorted(net.nodes):
        node = net.nodes[i]
        if not node.is_collector and not node.neighbor_ids:
            raise ConfigError(f"node {i} has no radio neighbor")
    seen = {0}
    frontier = [0]
    while frontier:
        cur = frontier.pop()
        for nb in net.nodes[cur].neighbor_ids:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    if len(seen) != n:
        raise ConfigError("topology is disconnected from the root")

    for i in sorted(net.nodes):
        node = net.nodes[i]
        table = FirewallTable(i, config.thresholds.rank_jump_limit)
        for nb in node.neighbor_ids:
            table.provision(nb)
        node.firewall = table

    collectors = net.sink_ids or [net.root_id]
    for i in sorted(net.nodes):
        node = net.nodes[i]
        best = min(collectors,
                   key=lambda s: (node.distance(net.nodes[s]), s))
        net.nearest_sink[i] = best
    for sid in [net.root_id] + net.sink_ids:
        net.registered_positions[sid] = net.nodes[sid].pos

    from . import attacks as attacks_mod
    attacks_mod.install_attacks(net, config)
    _rebuild_adjacency(net)  # sniffer watcher lists depend on roles

    if config.defense:
        net.defense_runtime = ids_mod.DefenseRuntime(net)

    net.start_processes()
    return net
