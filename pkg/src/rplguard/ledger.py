"""Per-sink tamper-evident database.

Each sink keeps a rule table (table one), a singly linked list of blocks of
traffic records where every block carries the digest of its predecessor, and
a write-protected hash table (table two) holding the per-block digests plus
the digest of table one under a keyed MAC.  Old blocks can be pruned into a
summary rule appended to table one, with an anchor digest preserving chain
verification for the retained suffix.

Serialization is canonical and byte-stable: fixed field order, fixed-width
big-endian integers.  Every digest is SHA-256; write protection is
HMAC-SHA-256 under the sink's private key.
"""

from __future__ import annotations

import copy
import hashlib
import hmac
import json
import struct
from dataclasses import dataclass, field

ZERO_DIGEST = b"\x00" * 32

KIND_CODES = {"DIO": 1, "DAO": 2, "DIS": 3, "DATA": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

OUTCOME_CODES = {
    "sent": 0,
    "forwarded": 1,
    "delivered": 2,
    "lost": 3,
    "dropped_attacker": 4,
    "dropped_firewall": 5,
    "no_route": 6,
}
OUTCOME_NAMES = {v: k for k, v in OUTCOME_CODES.items()}

_RECORD_FMT = ">qqBqqqB"
_RECORD_SIZE = struct.calcsize(_RECORD_FMT)


class MacError(Exception):
    """Table two failed its keyed-digest check."""


class BackupCorrupt(Exception):
    """The neighbor backup also fails verification; chain is unrecoverable."""


@dataclass
class TrafficRecord:
    sender: int
    claimed_origin: int
    kind: str
    rank: int
    version: int
    seq: int
    outcome: str


def encode_record(rec: TrafficRecord) -> bytes:
    return struct.pack(
        _RECORD_FMT,
        rec.sender,
        rec.claimed_origin,
        KIND_CODES[rec.kind],
        rec.rank,
        rec.version,
        rec.seq,
        OUTCOME_CODES[rec.outcome],
    )


def decode_record(buf: bytes) -> TrafficRecord:
    sender, origin, kind, rank, version, seq, outcome = struct.unpack(_RECORD_FMT, buf)
    return TrafficRecord(sender, origin, KIND_NAMES[kind], rank, version, seq,
                         OUTCOME_NAMES[outcome])


@dataclass
class Block:
    index: int
    start: int
    end: int
    records: list
    prev_hash: bytes
    self_hash: bytes = b""

    def body_bytes(self) -> bytes:
        parts = [struct.pack(">qqq", self.index, self.start, self.end),
                 self.prev_hash,
                 struct.pack(">I", len(self.records))]
        parts.extend(encode_record(r) for r in self.records)
        return b"".join(parts)


def block_digest(block: Block) -> bytes:
    return hashlib.sha256(block.body_bytes()).digest()


def decode_block(buf: bytes) -> Block:
    index, start, end = struct.unpack(">qqq", buf[:24])
    prev_hash = buf[24:56]
    (count,) = struct.unpack(">I", buf[56:60])
    records = []
    off = 60
    for _ in range(count):
        records.append(decode_record(buf[off:off + _RECORD_SIZE]))
        off += _RECORD_SIZE
    block = Block(index, start, end, records, prev_hash)
    block.self_hash = block_digest(block)
    return block


@dataclass
class SummaryRule:
    """Aggregate left behind when a span of blocks is pruned."""

    first_index: int
    last_index: int
    message_counts: dict = field(default_factory=dict)  # sender -> count
    flagged: list = field(default_factory=list)
    mean_rates: dict = field(default_factory=dict)  # sender -> msgs per block

    def to_dict(self) -> dict:
        return {
            "first_index": self.first_index,
            "last_index": self.last_index,
            "message_counts": {str(k): v for k, v in sorted(self.message_counts.items())},
            "flagged": sorted(self.flagged),
            "mean_rates": {str(k): round(v, 6) for k, v in sorted(self.mean_rates.items())},
        }


@dataclass
class TableOne:
    """Signature rules, firewall provisioning, thresholds and prune summaries."""

    signature_rules: list = field(default_factory=list)   # [(rule_id, severity)]
    firewall_rules: list = field(default_factory=list)    # provisioning description
    thresholds: dict = field(default_factory=dict)
    summaries: list = field(default_factory=list)          # [SummaryRule]

    def canonical_bytes(self) -> bytes:
        doc = {
            "signature_rules": [list(r) for r in self.signature_rules],
            "firewall_rules": self.firewall_rules,
            "thresholds": self.thresholds,
            "summaries": [s.to_dict() for s in self.summaries],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes()).digest()


@dataclass
class TableTwo:
    """Write-protected digest table: table-one hash, block hashes, anchor, MAC."""

    table_one_hash: bytes = ZERO_DIGEST
    block_hashes: dict = field(default_factory=dict)  # index -> digest
    anchor: tuple = (-1, ZERO_DIGEST)
    mac: bytes = b""

    def canonical_bytes(self) -> bytes:
        parts = [self.table_one_hash,
                 struct.pack(">q", self.anchor[0]), self.anchor[1],
                 struct.pack(">I", len(self.block_hashes))]
        for idx in sorted(self.block_hashes):
            parts.append(struct.pack(">q", idx))
            parts.append(self.block_hashes[idx])
        return b"".join(parts)

    def refresh_mac(self, key: bytes) -> None:
        self.mac = hmac.new(key, self.canonical_bytes(), hashlib.sha256).digest()

    def mac_valid(self, key: bytes) -> bool:
        expected = hmac.new(key, self.canonical_bytes(), hashlib.sha256).digest()
        return hmac.compare_digest(expected, self.mac)


@dataclass
class ChainStatus:
    ok: bool
    first_bad_index: int | None = None


class Ledger:
    """Hash-chained block list plus its two tables, owned by one sink."""

    def __init__(self, owner_id: int, key: bytes, table_one: TableOne,
                 block_capacity: int = 512):
        self.owner_id = owner_id
        self.key = key
        self.block_capacity = block_capacity
        self.table_one = table_one
        self.blocks: list[Block] = []
        self.table_two = TableTwo(table_one_hash=table_one.digest())
        self.table_two.refresh_mac(key)
        self.flags_by_block: dict[int, set] = {}

    @property
    def next_index(self) -> int:
        if self.blocks:
            return self.blocks[-1].index + 1
        return self.table_two.anchor[0] + 1

    def _check_mac(self) -> None:
        if not self.table_two.mac_valid(self.key):
            raise MacError(f"table two MAC invalid for sink {self.owner_id}")

    def append_block(self, records: list, start: int, end: int) -> list[Block]:
        """Seal one interval of records, splitting at the capacity bound."""
        self._check_mac()
        chunks = [records[i:i + self.block_capacity]
                  for i in range(0, len(records), self.block_capacity)] or [[]]
        sealed = []
        for chunk in chunks:
            prev = self.blocks[-1].self_hash if self.blocks else (
                self.table_two.anchor[1] if self.table_two.anchor[0] >= 0 else ZERO_DIGEST)
            block = Block(self.next_index, start, end, list(chunk), prev)
            block.self_hash = block_digest(block)
            self.blocks.append(block)
            self.table_two.block_hashes[block.index] = block.self_hash
            sealed.append(block)
        self.table_two.refresh_mac(self.key)
        return sealed

    def verify_chain(self) -> ChainStatus:
        """Recompute every retained digest against table two; smallest bad index wins."""
        self._check_mac()
        for i, block in enumerate(self.blocks):
            stored = self.table_two.block_hashes.get(block.index)
            if stored is None or block_digest(block) != stored:
                return ChainStatus(False, block.index)
            if i == 0:
                expected_prev = (self.table_two.anchor[1]
                                 if block.index == self.table_two.anchor[0] + 1
                                 else ZERO_DIGEST if block.index == 0 else None)
            else:
                expected_prev = self.table_two.block_hashes[self.blocks[i - 1].index]
            if expected_prev is None or block.prev_hash != expected_prev:
                return ChainStatus(False, block.index)
        return ChainStatus(True, None)

    def note_flags(self, index: int, flagged) -> None:
        if flagged:
            self.flags_by_block.setdefault(index, set()).update(flagged)

    def prune(self, keep: int) -> SummaryRule:
        """Drop the oldest blocks, leaving a summary rule and a verification anchor."""
        if keep < 1 or keep >= len(self.blocks):
            raise ValueError(f"keep must be in [1, {len(self.blocks) - 1}]")
        self._check_mac()
        removed = self.blocks[:len(self.blocks) - keep]
        self.blocks = self.blocks[len(removed):]

        counts: dict[int, int] = {}
        flagged: set = set()
        for block in removed:
            for rec in block.records:
                counts[rec.sender] = counts.get(rec.sender, 0) + 1
            flagged.update(self.flags_by_block.pop(block.index, ()))
        span = len(removed)
        summary = SummaryRule(
            first_index=removed[0].index,
            last_index=removed[-1].index,
            message_counts=counts,
            flagged=sorted(flagged),
            mean_rates={nid: c / span for nid, c in counts.items()},
        )
        self.table_one.summaries.append(summary)

        last = removed[-1]
        self.table_two.anchor = (last.index, self.table_two.block_hashes[last.index])
        for block in removed:
            del self.table_two.block_hashes[block.index]
        self.table_two.table_one_hash = self.table_one.digest()
        self.table_two.refresh_mac(self.key)
        return summary

    def clone(self) -> "Ledger":
        """Deep copy used for neighbor backups and the root's combined view."""
        other = Ledger(self.owner_id, self.key, copy.deepcopy(self.table_one),
                       self.block_capacity)
        other.blocks = copy.deepcopy(self.blocks)
        other.table_two = copy.deepcopy(self.table_two)
        other.flags_by_block = copy.deepcopy(self.flags_by_block)
        return other

    def restore_from_backup(self, backup: "Ledger", bad_index: int) -> None:
        """Replace blocks from ``bad_index`` to the tail with the backup's copies."""
        status = backup.verify_chain()
        if not status.ok:
            raise BackupCorrupt(
                f"backup of sink {self.owner_id} is bad at index {status.first_bad_index}")
        replacement = {b.index: b for b in backup.blocks}
        for pos, block in enumerate(self.blocks):
            if block.index >= bad_index:
                if block.index not in replacement:
                    raise BackupCorrupt(
                        f"backup of sink {self.owner_id} is missing block {block.index}")
                self.blocks[pos] = copy.deepcopy(replacement[block.index])


# ---------------------------------------------------------------------------
# Offline dump format: length-prefixed canonical serializations, one file per
# sink.  The sink key is embedded so a dump can be re-verified offline.
# ---------------------------------------------------------------------------

_MAGIC = b"RGLEDG1\n"


def dump_ledger(ledger: Ledger, path) -> None:
    t2 = ledger.table_two
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(">q", ledger.owner_id))
        fh.write(struct.pack(">I", ledger.block_capacity))
        fh.write(struct.pack(">H", len(ledger.key)))
        fh.write(ledger.key)
        t1 = ledger.table_one.canonical_bytes()
        fh.write(struct.pack(">I", len(t1)))
        fh.write(t1)
        fh.write(t2.table_one_hash)
        fh.write(struct.pack(">q", t2.anchor[0]))
        fh.write(t2.anchor[1])
        fh.write(struct.pack(">I", len(t2.block_hashes)))
        for idx in sorted(t2.block_hashes):
            fh.write(struct.pack(">q", idx))
            fh.write(t2.block_hashes[idx])
        fh.write(t2.mac)
        fh.write(struct.pack(">I", len(ledger.blocks)))
        for block in ledger.blocks:
            body = block.body_bytes()
            fh.write(struct.pack(">I", len(body)))
            fh.write(body)


def load_ledger(path) -> Ledger:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(_MAGIC)] != _MAGIC:
        raise ValueError(f"not a ledger dump: {path}")
    off = len(_MAGIC)

    def take(n):
        nonlocal off
        chunk = buf[off:off + n]
        off += n
        return chunk

    owner = struct.unpack(">q", take(8))[0]
    capacity = struct.unpack(">I", take(4))[0]
    keylen = struct.unpack(">H", take(2))[0]
    key = take(keylen)
    t1len = struct.unpack(">I", take(4))[0]
    t1doc = json.loads(take(t1len))
    table_one = TableOne(
        signature_rules=[tuple(r) for r in t1doc["signature_rules"]],
        firewall_rules=t1doc["firewall_rules"],
        thresholds=t1doc["thresholds"],
        summaries=[SummaryRule(
            first_index=s["first_index"], last_index=s["last_index"],
            message_counts={int(k): v for k, v in s["message_counts"].items()},
            flagged=list(s["flagged"]),
            mean_rates={int(k): v for k, v in s["mean_rates"].items()},
        ) for s in t1doc["summaries"]],
    )
    ledger = Ledger(owner, key, table_one, capacity)
    t2 = TableTwo()
    t2.table_one_hash = take(32)
    anchor_idx = struct.unpack(">q", take(8))[0]
    t2.anchor = (anchor_idx, take(32))
    n_hashes = struct.unpack(">I", take(4))[0]
    for _ in range(n_hashes):
        idx = struct.unpack(">q", take(8))[0]
        t2.block_hashes[idx] = take(32)
    t2.mac = take(32)
    ledger.table_two = t2
    n_blocks = struct.unpack(">I", take(4))[0]
    for _ in range(n_blocks):
        blen = struct.unpack(">I", take(4))[0]
        ledger.blocks.append(decode_block(take(blen)))
    return ledger


def verify_dump(path) -> tuple[str, int | None]:
    """Offline re-verification of a dump: ('ok'|'first_bad_index'|'mac_error', index)."""
    try:
        ledger = load_ledger(path)
        status = ledger.verify_chain()
    except MacError:
        return "mac_error", None
    if status.ok:
        return "ok", None
    return "first_bad_index", status.first_bad_index
