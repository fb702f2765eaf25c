"""Append-only run trace: one event per line, stable field order.

Line format (tab separated): time, event kind, actor, peer, then
space-separated ``key=value`` fields.  Peer is ``-`` when the event has no
counterparty.  The format is diff-stable so runs can be compared byte for
byte and digested.
"""

from __future__ import annotations

import hashlib


class TraceLog:
    def __init__(self):
        self.lines: list[str] = []

    def emit(self, time: int, kind: str, actor, peer=None, **fields) -> None:
        parts = [str(time), kind, str(actor), "-" if peer is None else str(peer)]
        if fields:
            parts.append(" ".join(f"{k}={v}" for k, v in fields.items()))
        self.lines.append("\t".join(parts))

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines:
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines:
                fh.write(line)
                fh.write("\n")

    def __len__(self) -> int:
        return len(self.lines)

    def __iter__(self):
        return iter(self.lines)


def parse_line(line: str) -> dict:
    """Split one trace line back into its parts."""
    cols = line.rstrip("\n").split("\t")
    out = {
        "time": int(cols[0]),
        "event": cols[1],
        "actor": cols[2],
        "peer": None if cols[3] == "-" else cols[3],
        "fields": {},
    }
    if len(cols) > 4 and cols[4]:
        for item in cols[4].split(" "):
            k, _, v = item.partition("=")
            out["fields"][k] = v
    return out


def read_trace(path):
    with open(path) as fh:
        return [parse_line(line) for line in fh if line.strip()]
