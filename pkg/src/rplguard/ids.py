"""Two-stage intrusion detection over the sink ledgers.

Each local sink seals a block per interval, evaluates signature rules and a
frozen-baseline anomaly profile over it, merges in the trust flags reported
by its member nodes, and escalates suspicious identities to the global root.
The root re-derives the evidence over its combined copies of every chain,
adds cross-network rules (one identity active in several regions, a
stationary sink that moved), and issues the only final verdicts.  A verdict
of malicious triggers quarantine; a failed corroboration exonerates.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

from . import trust as trust_mod
from .ledger import BackupCorrupt, Block, Ledger, TableOne

FLAG = "flag"
ESCALATE = "escalate"

SIGNATURE_RULES = [
    ("RankOrder", FLAG),
    ("VersionFromRootOnly", ESCALATE),
    ("SelfInfoRequired", ESCALATE),
    ("RankJump", FLAG),
    ("FloodThreshold", FLAG),
    ("SeqReplay", FLAG),
    ("RepeatOffender", FLAG),
]
ESCALATE_RULES = {rule for rule, sev in SIGNATURE_RULES if sev == ESCALATE}

BENIGN = "benign"
SUSPICIOUS = "suspicious"
MALICIOUS = "malicious"

PHASE_TRUST = "trust"
PHASE_LOCAL = "local_sink"
PHASE_GLOBAL = "global_root"


@dataclass
class Verdict:
    subject: int
    phase: str
    label: str
    evidence: list
    time: int


@dataclass
class SnapshotView:
    """Network state a detector may consult besides the sealed block."""

    time: int
    parents: dict
    adv_rank: dict
    prev_adv_rank: dict
    root_version: int
    warmed_up: bool
    benign_rate: float | None
    summary_flagged: set
    roster: set
    sink_positions: dict = field(default_factory=dict)
    registered_positions: dict = field(default_factory=dict)


def eval_signatures(block: Block, snapshot: SnapshotView,
                    thresholds: trust_mod.Thresholds) -> list[tuple[int, str]]:
    """Apply the rule set to one sealed block; pure in (block, snapshot)."""
    hits: list[tuple[int, str]] = []
    seen: set[tuple[int, str]] = set()

    def hit(nid: int, rule: str) -> None:
        if (nid, rule) not in seen:
            seen.add((nid, rule))
            hits.append((nid, rule))

    per_sender_seqs: dict[int, list[int]] = {}
    dio_min_rank: dict[int, int] = {}
    originated: Counter = Counter()

    for rec in block.records:
        per_sender_seqs.setdefault(rec.sender, []).append(rec.seq)
        if rec.kind == "DATA" and rec.sender == rec.claimed_origin:
            originated[rec.sender] += 1
        if rec.kind != "DIO":
            continue
        if rec.claimed_origin != rec.sender:
            hit(rec.sender, "SelfInfoRequired")
        if rec.version > snapshot.root_version:
            hit(rec.sender, "VersionFromRootOnly")
        parent = snapshot.parents.get(rec.claimed_origin)
        if parent is not None:
            parent_rank = snapshot.adv_rank.get(parent)
            if parent_rank is not None and rec.rank <= parent_rank:
                hit(rec.claimed_origin, "RankOrder")
        cur = dio_min_rank.get(rec.claimed_origin)
        if cur is None or rec.rank < cur:
            dio_min_rank[rec.claimed_origin] = rec.rank

    if snapshot.warmed_up:
        for origin in sorted(dio_min_rank):
            prev = snapshot.prev_adv_rank.get(origin)
            if prev is not None and prev - dio_min_rank[origin] > thresholds.rank_jump_limit:
                hit(origin, "RankJump")
        if snapshot.benign_rate is not None:
            limit = thresholds.flood_multiplier * snapshot.benign_rate
            for sender in sorted(originated):
                if originated[sender] > limit:
                    hit(sender, "FloodThreshold")

    for sender in sorted(per_sender_seqs):
        seqs = per_sender_seqs[sender]
        if any(b <= a for a, b in zip(seqs, seqs[1:])):
            hit(sender, "SeqReplay")

    present = {rec.sender for rec in block.records}
    for nid in sorted(present & snapshot.summary_flagged):
        hit(nid, "RepeatOffender")
    return hits


class AnomalyProfile:
    """Per-node and per-region statistics with a baseline frozen after warm-up.

    Tracked per block: per-node transmission counts, the region's distinct
    sender count, per-node parent changes, and per-node advertised-rank
    minima (the rank trajectory; recorded for the snapshot dumps but not
    z-flagged, because the RankJump signature rule already covers it).
    """

    def __init__(self, thresholds: trust_mod.Thresholds):
        self.warmup_blocks = thresholds.anomaly_warmup_blocks
        self.z_threshold = thresholds.z_threshold
        self.blocks_observed = 0
        self.frozen = False
        self._count_sum: Counter = Counter()
        self._count_sq: Counter = Counter()
        self._pc_sum: Counter = Counter()
        self._pc_sq: Counter = Counter()
        self._distinct_hist: list[int] = []
        self.warm_seen: set[int] = set()
        self.node_mean: dict[int, float] = {}
        self.node_std: dict[int, float] = {}
        self.pc_mean: dict[int, float] = {}
        self.pc_std: dict[int, float] = {}
        self.region_mean = 0.0
        self.region_std = 1.0
        self.rank_trajectory: dict[int, int] = {}

    @staticmethod
    def _counts(block: Block) -> Counter:
        counts: Counter = Counter()
        for rec in block.records:
            counts[rec.sender] += 1
        return counts

    def observe(self, block: Block, parent_changes: dict | None = None) -> None:
        counts = self._counts(block)
        for rec in block.records:
            if rec.kind == "DIO":
                cur = self.rank_trajectory.get(rec.claimed_origin)
                if cur is None or rec.rank < cur:
                    self.rank_trajectory[rec.claimed_origin] = rec.rank
        if self.frozen:
            return
        self.blocks_observed += 1
        for nid, cnt in counts.items():
            self._count_sum[nid] += cnt
            self._count_sq[nid] += cnt * cnt
        for nid, cnt in (parent_changes or {}).items():
            self._pc_sum[nid] += cnt
            self._pc_sq[nid] += cnt * cnt
        self._distinct_hist.append(len(counts))
        self.warm_seen.update(counts)
        if self.blocks_observed >= self.warmup_blocks:
            self._freeze()

    def _freeze(self) -> None:
        n = max(1, self.blocks_observed)

        def finish(sums, sqs, means, stds):
            for nid in sums:
                mean = sums[nid] / n
                var = sqs[nid] / n - mean * mean
                means[nid] = mean
                stds[nid] = max(var, 0.0) ** 0.5

        finish(self._count_sum, self._count_sq, self.node_mean, self.node_std)
        finish(self._pc_sum, self._pc_sq, self.pc_mean, self.pc_std)
        if self._distinct_hist:
            mean = sum(self._distinct_hist) / len(self._distinct_hist)
            var = (sum(d * d for d in self._distinct_hist) / len(self._distinct_hist)
                   - mean * mean)
            self.region_mean = mean
            self.region_std = max(var, 0.0) ** 0.5
        self.frozen = True

    def _z(self, value: float, mean: float, std: float) -> float:
        return (value - mean) / max(std, 1.0)


def eval_anomaly(profile: AnomalyProfile, block: Block,
                 parent_changes: dict | None = None,
                 roster: set | None = None) -> list[tuple[int, str, float]]:
    """Statistical deviations against the frozen baseline; empty during warm-up."""
    if not profile.frozen:
        return []
    roster = roster or set()
    items: list[tuple[int, str, float]] = []
    counts = profile._counts(block)
    for nid in sorted(counts):
        z = profile._z(counts[nid], profile.node_mean.get(nid, 0.0),
                       profile.node_std.get(nid, 0.0))
        if z >= profile.z_threshold:
            items.append((nid, "message_rate", round(z, 3)))
    z_region = profile._z(len(counts), profile.region_mean, profile.region_std)
    if z_region >= profile.z_threshold:
        newcomers = [nid for nid in sorted(counts)
                     if nid not in roster and nid not in profile.warm_seen]
        for nid in newcomers:
            items.append((nid, "distinct_senders", round(z_region, 3)))
    for nid in sorted(parent_changes or {}):
        z = profile._z(parent_changes[nid], profile.pc_mean.get(nid, 0.0),
                       profile.pc_std.get(nid, 0.0))
        if z >= profile.z_threshold:
            items.append((nid, "parent_churn", round(z, 3)))
    return items


def local_verdict(sink_id: int, blocks: list[Block],
                  trust_flags: list[tuple[int, str]],
                  sig_hits: list[tuple[int, str, int]],
                  anomaly_hits: list[tuple[int, str, float, int]],
                  skip_subjects: set, collectors: set,
                  time: int) -> list[Verdict]:
    """Merge the three evidence sources; escalate with one escalate-severity
    hit or at least two independent evidence labels."""
    evidence: dict[int, list] = {}
    last_index = blocks[-1].index if blocks else -1
    for peer, reason in trust_flags:
        evidence.setdefault(peer, []).append((f"trust:{reason}", last_index))
    for nid, rule, index in sig_hits:
        evidence.setdefault(nid, []).append((f"sig:{rule}", index))
    for nid, metric, z, index in anomaly_hits:
        evidence.setdefault(nid, []).append((f"anom:{metric}:z={z}", index))

    verdicts = []
    for nid in sorted(evidence):
        if nid in skip_subjects or nid in collectors or nid == sink_id:
            continue
        items = evidence[nid]
        labels = {label.split(":z=")[0] for label, _ in items}
        escalate = any(label.startswith("sig:") and label[4:] in ESCALATE_RULES
                       for label in labels)
        if escalate or len(labels) >= 2:
            verdicts.append(Verdict(nid, PHASE_LOCAL, SUSPICIOUS, items, time))
    return verdicts


class _RegionDetector:
    """Detector state for one region: anomaly profile plus last-seen ranks."""

    def __init__(self, thresholds: trust_mod.Thresholds):
        self.profile = AnomalyProfile(thresholds)
        self.prev_adv_rank: dict[int, int] = {}

    def evaluate(self, blocks: list[Block], snapshot: SnapshotView,
                 parent_changes: dict, roster: set,
                 thresholds: trust_mod.Thresholds):
        snap = SnapshotView(
            time=snapshot.time, parents=snapshot.parents,
            adv_rank=snapshot.adv_rank, prev_adv_rank=self.prev_adv_rank,
            root_version=snapshot.root_version, warmed_up=snapshot.warmed_up,
            benign_rate=snapshot.benign_rate,
            summary_flagged=snapshot.summary_flagged, roster=roster,
            sink_positions=snapshot.sink_positions,
            registered_positions=snapshot.registered_positions)
        sig = []
        anom = []
        for block in blocks:
            for nid, rule in eval_signatures(block, snap, thresholds):
                sig.append((nid, rule, block.index))
            for nid, metric, z in eval_anomaly(self.profile, block,
                                               parent_changes, roster):
                anom.append((nid, metric, z, block.index))
        return sig, anom

    def update(self, blocks: list[Block], parent_changes: dict) -> None:
        for block in blocks:
            self.profile.observe(block, parent_changes)
            for rec in block.records:
                if rec.kind == "DIO":
                    cur = self.prev_adv_rank.get(rec.claimed_origin)
                    if cur is None or rec.rank < cur:
                        self.prev_adv_rank[rec.claimed_origin] = rec.rank


@dataclass
class RootState:
    convicted: set = field(default_factory=set)
    presence_prev: dict = field(default_factory=dict)


def global_verdict(root_state: RootState, suspicious: list[Verdict],
                   sealed: dict[int, list[Block]], snapshot: SnapshotView,
                   union_hits: set, time: int) -> list[Verdict]:
    """Final arbitration over the union of all chains."""
    out: list[Verdict] = []

    for sid in sorted(snapshot.sink_positions):
        registered = snapshot.registered_positions.get(sid)
        if registered is None or sid in root_state.convicted:
            continue
        if snapshot.sink_positions[sid] != registered:
            out.append(Verdict(sid, PHASE_GLOBAL, MALICIOUS,
                               [("cross:SinkMoved", -1)], time))
            root_state.convicted.add(sid)

    presence: dict[int, set] = {}
    for sid in sorted(sealed):
        for block in sealed[sid]:
            for rec in block.records:
                presence.setdefault(rec.sender, set()).add(sid)
    if snapshot.warmed_up:
        for identity in sorted(presence):
            regions = presence[identity]
            if len(regions) < 2 or identity in root_state.convicted:
                continue
            if len(root_state.presence_prev.get(identity, ())) >= 2:
                evidence = [(f"cross:MultiRegionIdentity:sink{sid}", -1)
                            for sid in sorted(regions)]
                out.append(Verdict(identity, PHASE_GLOBAL, MALICIOUS, evidence, time))
                root_state.convicted.add(identity)
    root_state.presence_prev = {i: r for i, r in presence.items() if len(r) >= 2}

    for verdict in suspicious:
        subject = verdict.subject
        if subject in root_state.convicted:
            continue
        corroboration = [(f"root:{label}", idx) for nid, label, idx in sorted(union_hits)
                         if nid == subject]
        if corroboration:
            out.append(Verdict(subject, PHASE_GLOBAL, MALICIOUS,
                               verdict.evidence + corroboration, time))
            root_state.convicted.add(subject)
        else:
            out.append(Verdict(subject, PHASE_GLOBAL, BENIGN,
                               verdict.evidence, time))
    return out


class DefenseRuntime:
    """Wires ledgers, detectors and the arbitration root into the event loop."""

    def __init__(self, net):
        th = net.thresholds
        self.thresholds = th
        self.region_ids = sorted(net.sink_ids) + [net.root_id]
        self.pending: dict[int, list] = {sid: [] for sid in self.region_ids}
        self.ledgers: dict[int, Ledger] = {}
        self.local: dict[int, _RegionDetector] = {}
        self.root_side: dict[int, _RegionDetector] = {}
        provisioning = [f"allow radio neighbors of node {sid}" for sid in self.region_ids]
        for sid in self.region_ids:
            table_one = TableOne(signature_rules=list(SIGNATURE_RULES),
                                 firewall_rules=provisioning,
                                 thresholds=th.to_dict())
            key = hashlib.sha256(f"sink-key:{net.seed}:{sid}".encode()).digest()
            self.ledgers[sid] = Ledger(sid, key, table_one, th.block_capacity)
            self.local[sid] = _RegionDetector(th)
            self.root_side[sid] = _RegionDetector(th)
        # Unidirectional backup ring over the local sinks, ordered by id.
        self.backup_holder: dict[int, int] = {}
        self.backups: dict[int, Ledger] = {}
        ring = sorted(net.sink_ids)
        if len(ring) >= 2:
            for i, sid in enumerate(ring):
                self.backup_holder[sid] = ring[(i + 1) % len(ring)]
                self.backups[sid] = self.ledgers[sid].clone()
        # The root's combined view: one mirrored chain per local sink.
        self.root_copies: dict[int, Ledger] = {
            sid: self.ledgers[sid].clone() for sid in net.sink_ids}
        self.root_state = RootState()
        self.boundary_index = 0
        self.benign_rate: float | None = None
        self._warm_originated = 0

    # -- record intake -------------------------------------------------------

    def record(self, region: int, rec) -> None:
        self.pending.setdefault(region, []).append(rec)

    # -- helpers ---------------------------------------------------------------

    def _members(self, net) -> dict[int, list[int]]:
        members: dict[int, list[int]] = {sid: [] for sid in self.region_ids}
        for nid in sorted(net.nodes):
            region = net.region_of(net.nodes[nid])
            members.setdefault(region, []).append(nid)
        return members

    def _base_snapshot(self, net) -> SnapshotView:
        parents = {nid: node.parent for nid, node in net.nodes.items()
                   if node.parent is not None}
        positions = {sid: net.nodes[sid].pos
                     for sid in [net.root_id] + sorted(net.sink_ids)}
        return SnapshotView(
            time=net.now, parents=parents, adv_rank=dict(net.last_advertised),
            prev_adv_rank={}, root_version=net.root_version,
            warmed_up=self.boundary_index > self.thresholds.anomaly_warmup_blocks,
            benign_rate=self.benign_rate, summary_flagged=set(),
            roster=set(net.nodes), sink_positions=positions,
            registered_positions=dict(net.registered_positions))

    def tamper(self, net, sink_index: int, block_pos: int) -> None:
        """Scenario-driven corruption of one stored record (for drills)."""
        import dataclasses

        sid = self.region_ids[sink_index % len(self.region_ids)]
        ledger = self.ledgers[sid]
        if not ledger.blocks:
            return
        block = ledger.blocks[min(block_pos, len(ledger.blocks) - 1)]
        if not block.records:
            return
        old = block.records[0]
        block.records[0] = dataclasses.replace(old, rank=old.rank + 1)
        net.trace.emit(net.now, "TAMPERED", sid, None, index=block.index)

    # -- the block boundary ------------------------------------------------------

    def on_boundary(self, net) -> None:
        th = self.thresholds
        end = net.now
        start = max(0, end - th.block_interval)
        self.boundary_index += 1

        # Probation rechecks happen on the block cadence.
        for nid in sorted(net.nodes):
            node = net.nodes[nid]
            for peer in sorted(node.trust):
                rec = node.trust[peer]
                before = rec.classification
                trust_mod.reevaluate(rec, th)
                if rec.classification == trust_mod.WORST and before != trust_mod.WORST:
                    net.trace.emit(net.now, "TRUSTWORST", nid, peer)
                    if node.parent == peer:
                        node.parent = None
                        node.rank = None
                        net._select_parent(node)

        regions = [sid for sid in self.region_ids
                   if sid != net.root_id or net.root_alive]
        snapshot = self._base_snapshot(net)
        members = self._members(net)
        parent_changes = dict(net.block_parent_changes)
        net.block_parent_changes.clear()

        sealed: dict[int, list[Block]] = {}
        tampered: set[int] = set()
        for sid in regions:
            ledger = self.ledgers[sid]
            status = ledger.verify_chain()
            if not status.ok:
                tampered.add(sid)
                net.trace.emit(net.now, "TAMPER", sid, None,
                               index=status.first_bad_index)
                net.verdicts.append(Verdict(sid, PHASE_LOCAL, "tamper",
                                            [("ledger:tamper", status.first_bad_index)],
                                            net.now))
                backup = self.backups.get(sid)
                if backup is not None:
                    try:
                        ledger.restore_from_backup(backup, status.first_bad_index)
                        net.trace.emit(net.now, "RESTORE", sid, self.backup_holder[sid],
                                       index=status.first_bad_index)
                    except BackupCorrupt:
                        net.trace.emit(net.now, "BACKUPCORRUPT", sid, None)
            records = self.pending.get(sid, [])
            self.pending[sid] = []
            blocks = ledger.append_block(records, start, end)
            holder_copy = self.backups.get(sid)
            if holder_copy is not None:
                holder_copy.append_block(records, start, end)
            root_copy = self.root_copies.get(sid)
            if root_copy is not None:
                root_copy.append_block(records, start, end)
            for block in blocks:
                net.trace.emit(net.now, "BLOCK", sid, None, index=block.index,
                               records=len(block.records),
                               digest=block.self_hash.hex()[:8])
            if len(ledger.blocks) >= th.prune_every:
                summary = ledger.prune(th.prune_keep)
                if holder_copy is not None:
                    holder_copy.prune(th.prune_keep)
                if root_copy is not None:
                    root_copy.prune(th.prune_keep)
                net.trace.emit(net.now, "PRUNE", sid, None,
                               first=summary.first_index, last=summary.last_index)
            sealed[sid] = blocks

        if self.boundary_index <= th.anomaly_warmup_blocks:
            for blocks in sealed.values():
                for block in blocks:
                    self._warm_originated += sum(
                        1 for rec in block.records
                        if rec.kind == "DATA" and rec.sender == rec.claimed_origin)
            if self.boundary_index == th.anomaly_warmup_blocks:
                senders = sum(1 for node in net.nodes.values() if not node.is_collector)
                self.benign_rate = self._warm_originated / max(1, senders * th.anomaly_warmup_blocks)
                snapshot.benign_rate = self.benign_rate

        collectors = set(self.region_ids)
        skip = set(net.quarantined) | self.root_state.convicted
        suspicious_all: list[Verdict] = []
        union_hits: set = set()
        for sid in regions:
            blocks = sealed[sid]
            region_members = members.get(sid, [])
            pc_region = {nid: parent_changes[nid] for nid in region_members
                         if parent_changes.get(nid)}
            flagged = self.ledgers[sid].table_one.summaries
            summary_flagged = set()
            for summary in flagged:
                summary_flagged.update(summary.flagged)
            snapshot.summary_flagged = summary_flagged

            if sid not in tampered:
                trust_flags: list[tuple[int, str]] = []
                flagged_pairs = set()
                for nid in region_members:
                    for peer, reason in trust_mod.phase1_flags(net.nodes[nid].trust):
                        if (peer, reason) not in flagged_pairs:
                            flagged_pairs.add((peer, reason))
                            trust_flags.append((peer, reason))
                            net.trace.emit(net.now, "FLAG", nid, peer, reason=reason)
                counts = Counter(net.nodes[nid].trust[peer].classification
                                 for nid in region_members
                                 for peer in net.nodes[nid].trust)
                net.trace.emit(net.now, "TRUST", sid, None,
                               best=counts.get(trust_mod.BEST, 0),
                               probation=counts.get(trust_mod.PROBATION, 0),
                               worst=counts.get(trust_mod.WORST, 0))

                sig, anom = self.local[sid].evaluate(blocks, snapshot, pc_region,
                                                     snapshot.roster, th)
                verdicts = local_verdict(sid, blocks, trust_flags, sig,
                                         anom, skip, collectors, net.now)
                for verdict in verdicts:
                    net.trace.emit(net.now, "SUSPICIOUS", verdict.subject, sid,
                                   evidence=len(verdict.evidence))
                    net.verdicts.append(verdict)
                    self.ledgers[sid].note_flags(blocks[-1].index, [verdict.subject])
                suspicious_all.extend(verdicts)

            root_sig, root_anom = self.root_side[sid].evaluate(
                blocks, snapshot, pc_region, snapshot.roster, th)
            union_hits |= {(nid, f"sig:{rule}", idx) for nid, rule, idx in root_sig}
            union_hits |= {(nid, f"anom:{metric}", idx)
                           for nid, metric, z, idx in root_anom}

            self.local[sid].update(blocks, pc_region)
            self.root_side[sid].update(blocks, pc_region)

        if net.root_alive:
            finals = global_verdict(self.root_state, suspicious_all, sealed,
                                    snapshot, union_hits, net.now)
            for verdict in finals:
                net.verdicts.append(verdict)
                if verdict.label == MALICIOUS:
                    net.trace.emit(net.now, "MALICIOUS", verdict.subject, None,
                                   evidence=len(verdict.evidence))
                    net.quarantine(verdict.subject)
                else:
                    net.trace.emit(net.now, "EXONERATED", verdict.subject, None)
                    for nid in sorted(net.nodes):
                        rec = net.nodes[nid].trust.get(verdict.subject)
                        if rec is not None and rec.classification == trust_mod.WORST:
                            trust_mod.exonerate(rec)
