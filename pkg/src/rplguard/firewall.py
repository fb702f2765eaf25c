"""Per-node mini-firewall: a default-deny allowlist keyed on address, rank,
version and sequence number.  Traffic from peers without an entry is dropped
before any protocol processing."""

from __future__ import annotations

from dataclasses import dataclass

DROP_UNKNOWN = "unknown"
DROP_STALE_SEQ = "stale_seq"
DROP_RANK = "rank_out_of_range"
DROP_VERSION = "version_mismatch"

_RANK_UNBOUNDED = 1 << 30


@dataclass
class FirewallEntry:
    node: int
    rank_min: int = 0
    rank_max: int = _RANK_UNBOUNDED
    expected_version: int = 1
    last_seq: int = -1
    seen_rank: bool = False


class FirewallTable:
    """Allowlist of authenticated peers; absence of an entry means drop.

    Rank plausibility checks are armed only after the anomaly warm-up so the
    initial routing convergence (which legitimately moves ranks around) does
    not trip them.
    """

    def __init__(self, owner: int, rank_jump_limit: int = 2):
        self.owner = owner
        self.rank_jump_limit = rank_jump_limit
        self.entries: dict[int, FirewallEntry] = {}
        self.rank_checks_active = False

    def provision(self, peer: int, version: int = 1) -> None:
        self.entries[peer] = FirewallEntry(node=peer, expected_version=version)

    def remove(self, peer: int) -> None:
        self.entries.pop(peer, None)

    def __contains__(self, peer: int) -> bool:
        return peer in self.entries

    def admit(self, msg) -> tuple[bool, str | None]:
        """Check one message; returns (allowed, drop_reason)."""
        entry = self.entries.get(msg.sender)
        if entry is None:
            return False, DROP_UNKNOWN
        if msg.seq <= entry.last_seq:
            return False, DROP_STALE_SEQ
        if msg.kind == "DIO":
            if (self.rank_checks_active and entry.seen_rank
                    and not (entry.rank_min <= msg.rank <= entry.rank_max)):
                return False, DROP_RANK
            if msg.version != entry.expected_version:
                return False, DROP_VERSION
        entry.last_seq = msg.seq
        if msg.kind == "DIO":
            self.sync_entry(msg.sender, msg.rank)
        return True, None

    def sync_entry(self, peer: int, observed_rank: int,
                   observed_version: int | None = None) -> None:
        """Recenter the expected-rank band on the last admitted advertisement.

        ``expected_version`` deliberately does not follow the peer: version
        changes are only accepted through :meth:`announce_version`, which
        models the root-originated announcement path.
        """
        entry = self.entries.get(peer)
        if entry is None:
            return
        entry.rank_min = observed_rank - self.rank_jump_limit
        entry.rank_max = observed_rank + self.rank_jump_limit
        entry.seen_rank = True

    def announce_version(self, version: int) -> None:
        """Apply a root-originated version change to every entry."""
        for entry in self.entries.values():
            entry.expected_version = version

    def allowlist(self) -> list[int]:
        return sorted(self.entries)

    def dump(self) -> dict:
        return {
            str(peer): {
                "rank_min": e.rank_min,
                "rank_max": e.rank_max,
                "expected_version": e.expected_version,
                "last_seq": e.last_seq,
            }
            for peer, e in sorted(self.entries.items())
        }
