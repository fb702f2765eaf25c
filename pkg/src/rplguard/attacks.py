"""Behavior overrides installed on compromised nodes.

Each attack is a small object hooked into the simulator's emission and
forwarding paths.  Before its onset a behavior is inert, so the trace of an
attack run is identical to the benign run with the same seed up to the onset
tick.  Rank falsification and traffic dropping share one mechanism: a
decreased-rank attacker is a sinkhole that forwards everything.
"""

from __future__ import annotations

import math

from .config import AttackConfig, ConfigError, ScenarioConfig
from .netsim import ControlMessage, Network, Node, ROLE_ATTACKER, ROLE_NORMAL

FABRICATED_ID_BASE = 100_000
CLONE_SEQ_OFFSET = 100_000

REPLAY_DELAY = 50
DEFAULT_TUNNEL_LATENCY = 5
DEFAULT_FLOOD_RATE = 0.005  # packets per tick, ten times the default send rate


def advertised_sinkhole_rank(true_rank: int, rank_delta: int, root_rank: int = 0) -> int:
    """Falsified advertisement: the true rank lowered, floored above the root."""
    return max(root_rank + 1, true_rank - rank_delta)


class Behavior:
    kind = "benign"

    def __init__(self, node_id: int, onset: int, params: dict | None = None):
        self.node_id = node_id
        self.onset = onset
        self.params = params or {}

    def active(self, net: Network) -> bool:
        return net.now >= self.onset

    def identity_set(self) -> set[int]:
        return {self.node_id}

    def on_activate(self, net: Network, node: Node) -> None:
        net.trace.emit(net.now, "ATTACK", node.id, None, kind=self.kind)

    def _honest_dio(self, net: Network, node: Node) -> list[ControlMessage]:
        if node.rank is None:
            return []
        return [ControlMessage("DIO", node.id, node.id, node.rank, node.version,
                               net.next_seq(node.id))]

    def dio_emissions(self, net: Network, node: Node) -> list[ControlMessage]:
        return self._honest_dio(net, node)

    def data_emissions(self, net: Network, node: Node) -> list[tuple[int, int]]:
        return [(node.id, node.id)]

    def drops_data(self, net: Network, node: Node, msg) -> bool:
        return False

    def on_overhear(self, net: Network, node: Node, msg) -> None:
        pass


class SinkholeBehavior(Behavior):
    kind = "sinkhole"

    def __init__(self, node_id, onset, rank_delta: int = 100, drop_rate: float = 1.0):
        super().__init__(node_id, onset, {"rank_delta": rank_delta, "drop_rate": drop_rate})
        self.rank_delta = rank_delta
        self.drop_rate = drop_rate

    def dio_emissions(self, net, node):
        if node.rank is None:
            return []
        rank = advertised_sinkhole_rank(node.rank, self.rank_delta)
        return [ControlMessage("DIO", node.id, node.id, rank, node.version,
                               net.next_seq(node.id))]

    def drops_data(self, net, node, msg):
        if self.drop_rate >= 1.0:
            return True
        if self.drop_rate <= 0.0:
            return False
        return net.rng.random() < self.drop_rate


class DecreasedRankBehavior(SinkholeBehavior):
    """Rank falsification without data dropping."""

    kind = "decreased_rank"

    def __init__(self, node_id, onset, rank_delta: int = 100):
        super().__init__(node_id, onset, rank_delta=rank_delta, drop_rate=0.0)


class VersionBumpBehavior(Behavior):
    kind = "version_number"

    def __init__(self, node_id, onset, bump: int = 1):
        super().__init__(node_id, onset, {"bump": bump})
        self.bump = bump

    def dio_emissions(self, net, node):
        if node.rank is None:
            return []
        return [ControlMessage("DIO", node.id, node.id, node.rank,
                               net.root_version + self.bump, net.next_seq(node.id))]


class DosFloodBehavior(Behavior):
    kind = "dos_flood"

    def __init__(self, node_id, onset, flood_rate: float = DEFAULT_FLOOD_RATE):
        super().__init__(node_id, onset, {"flood_rate": flood_rate})
        self.flood_rate = flood_rate

    def on_activate(self, net, node):
        super().on_activate(net, node)
        interval = max(1, round(1.0 / self.flood_rate))

        def pump():
            if node.alive and node.parent is not None and node.rank is not None:
                net.send_data(node.id)
            net.schedule(net.now + interval, pump)

        net.schedule(net.now + interval, pump)


class NeighborReplayBehavior(Behavior):
    kind = "neighbor_replay"

    def on_overhear(self, net, node, msg):
        # Replay originals only; copies already carry sender != origin.
        if (msg.kind != "DIO" or msg.via_tunnel or msg.sender != msg.claimed_origin
                or msg.sender == node.id):
            return
        copy = ControlMessage("DIO", node.id, msg.claimed_origin, msg.rank,
                              msg.version, msg.seq)

        def rebroadcast():
            if node.alive:
                net._broadcast(node, copy)

        net.schedule(net.now + REPLAY_DELAY, rebroadcast)


class WormholeBehavior(Behavior):
    kind = "wormhole"

    def __init__(self, node_id, onset, peer_id: int,
                 tunnel_latency: int = DEFAULT_TUNNEL_LATENCY):
        super().__init__(node_id, onset, {"tunnel_latency": tunnel_latency})
        self.peer_id = peer_id
        self.tunnel_latency = tunnel_latency

    def identity_set(self):
        return {self.node_id, self.peer_id}

    def on_overhear(self, net, node, msg):
        if msg.kind != "DIO" or msg.via_tunnel:
            return
        if msg.sender in (node.id, self.peer_id):
            return
        heard_at = net.now
        copy = ControlMessage("DIO", msg.sender, msg.claimed_origin, msg.rank,
                              msg.version, msg.seq, via_tunnel=True)

        def reemit():
            peer = net.nodes[self.peer_id]
            if peer.alive:
                net.trace.emit(net.now, "TUNNEL", node.id, self.peer_id,
                               heard=heard_at, origin=msg.claimed_origin,
                               seq=msg.seq)
                net._broadcast(peer, copy)

        net.schedule(heard_at + self.tunnel_latency, reemit)


class CloneIdBehavior(Behavior):
    kind = "clone_id"

    def __init__(self, node_id, onset, victim_id: int):
        super().__init__(node_id, onset, {"victim_id": victim_id})
        self.victim_id = victim_id
        self.victim_rank: int | None = None

    def identity_set(self):
        return {self.node_id, self.victim_id}

    def on_activate(self, net, node):
        super().on_activate(net, node)
        # The clone stamps its own counter, offset as if pre-sniffed.
        net._seq[(node.id, self.victim_id)] = CLONE_SEQ_OFFSET

    def on_overhear(self, net, node, msg):
        if msg.kind == "DIO" and msg.claimed_origin == self.victim_id:
            self.victim_rank = msg.rank

    def dio_emissions(self, net, node):
        rank = self.victim_rank
        if rank is None:
            rank = node.rank if node.rank is not None else 2
        return [ControlMessage("DIO", self.victim_id, self.victim_id, rank,
                               node.version, net.next_seq(node.id, self.victim_id))]

    def data_emissions(self, net, node):
        return [(self.victim_id, self.victim_id)]


class SybilBehavior(Behavior):
    kind = "sybil"

    def __init__(self, node_id, onset, sybil_count: int = 2):
        super().__init__(node_id, onset, {"sybil_count": sybil_count})
        self.sybil_count = sybil_count
        if sybil_count >= 2:
            self.fabricated = [FABRICATED_ID_BASE + node_id * 100 + i
                               for i in range(sybil_count)]
        else:
            self.fabricated = []  # degenerate: one identity is just the node

    def identity_set(self):
        return {self.node_id, *self.fabricated}

    def dio_emissions(self, net, node):
        out = self._honest_dio(net, node)
        if node.rank is not None:
            for fid in self.fabricated:
                out.append(ControlMessage("DIO", fid, fid, node.rank, node.version,
                                          net.next_seq(node.id, fid)))
        return out

    def data_emissions(self, net, node):
        return [(node.id, node.id)] + [(fid, fid) for fid in self.fabricated]


class SniffingBehavior(Behavior):
    kind = "sniffing"

    def on_activate(self, net, node):
        # Passive: no trace line, no emission change; the engine counts
        # overheard transmissions into node.captures.
        pass


_BUILDERS = {
    "sinkhole": lambda nid, onset, p: SinkholeBehavior(
        nid, onset, p.get("rank_delta", 100), p.get("drop_rate", 1.0)),
    "decreased_rank": lambda nid, onset, p: DecreasedRankBehavior(
        nid, onset, p.get("rank_delta", 100)),
    "version_number": lambda nid, onset, p: VersionBumpBehavior(
        nid, onset, p.get("bump", 1)),
    "dos_flood": lambda nid, onset, p: DosFloodBehavior(
        nid, onset, p.get("flood_rate", DEFAULT_FLOOD_RATE)),
    "neighbor_replay": lambda nid, onset, p: NeighborReplayBehavior(nid, onset, p),
    "sniffing": lambda nid, onset, p: SniffingBehavior(nid, onset, p),
}


def _centroid(net: Network) -> tuple[float, float]:
    xs = [n.pos[0] for n in net.nodes.values()]
    ys = [n.pos[1] for n in net.nodes.values()]
    return sum(xs) / len(xs), sum(ys) / len(ys)


def _eligible(net: Network, used: set[int]) -> list[int]:
    return [nid for nid in sorted(net.nodes)
            if net.nodes[nid].role == ROLE_NORMAL and nid not in used]


def _pick_central(net: Network, used: set[int], count: int) -> list[int]:
    cx, cy = _centroid(net)
    pool = _eligible(net, used)
    if len(pool) < count:
        raise ConfigError("not enough normal nodes to host the attack")
    pool.sort(key=lambda nid: (math.hypot(net.nodes[nid].pos[0] - cx,
                                          net.nodes[nid].pos[1] - cy), nid))
    return pool[:count]


def _pick_far_pair(net: Network, used: set[int]) -> list[int]:
    pool = _eligible(net, used)
    if len(pool) < 2:
        raise ConfigError("wormhole needs two normal nodes")
    best = None
    best_d = -1.0
    for i, a in enumerate(pool):
        for b in pool[i + 1:]:
            d = net.nodes[a].distance(net.nodes[b])
            if d > best_d:
                best, best_d = (a, b), d
    return list(best)


def install_attacks(net: Network, config: ScenarioConfig) -> None:
    """Resolve attacker assignments and attach behaviors; roles flip to attacker."""
    used: set[int] = set()
    for atk in config.attacks:
        onset = atk.onset if atk.onset is not None else config.default_onset()
        if atk.ids is not None:
            ids = list(atk.ids)
            for nid in ids:
                if nid not in net.nodes:
                    raise ConfigError(f"attack:{atk.name}: unknown node id {nid}")
                if net.nodes[nid].role != ROLE_NORMAL or nid in used:
                    raise ConfigError(f"attack:{atk.name}: node {nid} not an eligible normal node")
        elif atk.kind == "wormhole":
            ids = _pick_far_pair(net, used)
        else:
            ids = _pick_central(net, used, atk.count)

        behaviors = []
        if atk.kind == "wormhole":
            if len(ids) != 2:
                raise ConfigError(f"attack:{atk.name}: wormhole needs exactly two endpoints")
            lat = atk.params.get("tunnel_latency", DEFAULT_TUNNEL_LATENCY)
            behaviors = [WormholeBehavior(ids[0], onset, ids[1], lat),
                         WormholeBehavior(ids[1], onset, ids[0], lat)]
        elif atk.kind == "clone_id":
            victim = atk.params.get("victim_id")
            if victim is None:
                pool = _eligible(net, used | set(ids))
                if not pool:
                    raise ConfigError(f"attack:{atk.name}: no victim candidate")
                attacker = net.nodes[ids[0]]
                victim = max(pool, key=lambda nid: (attacker.distance(net.nodes[nid]), -nid))
            if victim not in net.nodes or victim in ids:
                raise ConfigError(f"attack:{atk.name}: bad victim id {victim}")
            behaviors = [CloneIdBehavior(nid, onset, victim) for nid in ids]
        elif atk.kind == "sybil":
            count = atk.params.get("sybil_count", 2)
            behaviors = [SybilBehavior(nid, onset, count) for nid in ids]
        else:
            builder = _BUILDERS[atk.kind]
            behaviors = [builder(nid, onset, atk.params) for nid in ids]

        for nid, behavior in zip(ids, behaviors):
            node = net.nodes[nid]
            node.role = ROLE_ATTACKER
            node.behavior = behavior
            net.attack_assignments.append((nid, behavior))
            used.add(nid)


# Direct installers for constructed scenarios and tests.

def apply_sinkhole(node: Node, rank_delta: int, drop_rate: float = 1.0,
                   onset: int = 0) -> SinkholeBehavior:
    node.role = ROLE_ATTACKER
    node.behavior = SinkholeBehavior(node.id, onset, rank_delta, drop_rate)
    return node.behavior


def apply_version_bump(node: Node, bump: int = 1, onset: int = 0) -> VersionBumpBehavior:
    node.role = ROLE_ATTACKER
    node.behavior = VersionBumpBehavior(node.id, onset, bump)
    return node.behavior


def apply_dos_flood(node: Node, flood_rate: float, onset: int = 0) -> DosFloodBehavior:
    node.role = ROLE_ATTACKER
    node.behavior = DosFloodBehavior(node.id, onset, flood_rate)
    return node.behavior


def apply_neighbor_replay(node: Node, onset: int = 0) -> NeighborReplayBehavior:
    node.role = ROLE_ATTACKER
    node.behavior = NeighborReplayBehavior(node.id, onset)
    return node.behavior


def apply_wormhole(node_a: Node, node_b: Node, tunnel_latency: int,
                   onset: int = 0) -> tuple[WormholeBehavior, WormholeBehavior]:
    if node_a.id == node_b.id:
        raise ConfigError("wormhole endpoints must differ")
    for node, peer in ((node_a, node_b), (node_b, node_a)):
        node.role = ROLE_ATTACKER
        node.behavior = WormholeBehavior(node.id, onset, peer.id, tunnel_latency)
    return node_a.behavior, node_b.behavior


def apply_identity(node: Node, mode: str, victim: int | None = None,
                   count: int | None = None, onset: int = 0) -> Behavior:
    node.role = ROLE_ATTACKER
    if mode == "clone_id":
        if victim is None:
            raise ConfigError("clone_id needs a victim id")
        node.behavior = CloneIdBehavior(node.id, onset, victim)
    elif mode == "sybil":
        node.behavior = SybilBehavior(node.id, onset, count if count is not None else 2)
    else:
        raise ConfigError(f"unknown identity mode {mode!r}")
    return node.behavior


def apply_sniffing(node: Node, onset: int = 0) -> SniffingBehavior:
    node.role = ROLE_ATTACKER
    node.behavior = SniffingBehavior(node.id, onset)
    return node.behavior
