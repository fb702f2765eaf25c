"""Per-run metrics and seed-paired comparisons.

Every number in a report is recomputable by an independent pass over the
run's trace; the test suite carries such a re-reader.  Reports serialize as
newline-delimited JSON with sorted keys so outputs diff cleanly.
"""

from __future__ import annotations

import json

SCHEMA_VERSION = 1


class ShapeMismatch(Exception):
    pass


def _window_pdr(data_log: dict, start: int, end: int) -> float | None:
    sent = 0
    delivered = 0
    for entry in data_log.values():
        if start <= entry["sent_at"] < end:
            sent += 1
            if entry["delivered_at"] is not None:
                delivered += 1
    if sent == 0:
        return None
    return delivered / sent


def build_report(net, scenario_name: str, seed: int) -> dict:
    """Assemble the metrics record for one finished run."""
    cfg = net.config
    counters = net.counters
    sent = counters.get("data_sent", 0)
    delivered = counters.get("data_delivered", 0)
    control = counters.get("control_sent", 0)
    duration = cfg.duration

    detections = {}
    for nid, behavior in net.attack_assignments:
        identities = behavior.identity_set()
        hit_time = None
        for verdict in net.verdicts:
            if verdict.label == "malicious" and verdict.subject in identities:
                hit_time = verdict.time
                break
        detections[str(nid)] = {
            "kind": behavior.kind,
            "onset": behavior.onset,
            "detected": hit_time is not None,
            "time_to_detection": None if hit_time is None else hit_time - behavior.onset,
        }

    attack_identities = set()
    for _, behavior in net.attack_assignments:
        attack_identities |= behavior.identity_set()
    malicious = [v for v in net.verdicts if v.label == "malicious"]
    false_positives = sorted({v.subject for v in malicious
                              if v.subject not in attack_identities})

    first_quarantine = net.quarantine_events[0][0] if net.quarantine_events else None
    onset = min((b.onset for _, b in net.attack_assignments), default=0)
    pdr_pre = pdr_post = None
    if first_quarantine is not None:
        pdr_pre = _window_pdr(net.data_log, onset, first_quarantine)
        pdr_post = _window_pdr(net.data_log, first_quarantine, duration + 1)

    captures = {str(nid): net.nodes[nid].captures
                for nid, b in net.attack_assignments if b.kind == "sniffing"}

    report = {
        "schema": SCHEMA_VERSION,
        "scenario": scenario_name,
        "seed": seed,
        "node_count": cfg.node_count,
        "duration": duration,
        "defense": cfg.defense,
        "pdr": (delivered / sent) if sent else None,
        "data_sent": sent,
        "data_delivered": delivered,
        "delivered_bytes": counters.get("delivered_bytes", 0),
        "throughput_bytes_per_ktick": counters.get("delivered_bytes", 0) / (duration / 1000.0),
        "control_messages": control,
        "control_overhead": (control / delivered) if delivered else None,
        "dio_sent": counters.get("dio_sent", 0),
        "dao_sent": counters.get("dao_sent", 0),
        "dis_sent": counters.get("dis_sent", 0),
        "parent_changes": net.parent_changes,
        "blocks_sealed": sum(1 for line in net.trace.lines if "\tBLOCK\t" in line),
        "suspicious_count": sum(1 for v in net.verdicts if v.label == "suspicious"),
        "malicious_count": len(malicious),
        "false_positive_count": len(false_positives),
        "false_positive_subjects": false_positives,
        "quarantines": [[t, nid] for t, nid in net.quarantine_events],
        "detections": detections,
        "sniffer_captures": captures,
        "pdr_pre_quarantine": pdr_pre,
        "pdr_post_quarantine": pdr_post,
        "trace_digest": net.trace.digest(),
    }
    return report


def write_ndjson(reports: list[dict], path) -> None:
    with open(path, "w") as fh:
        for report in reports:
            fh.write(json.dumps(report, sort_keys=True))
            fh.write("\n")


def read_ndjson(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize(reports: list[dict]) -> dict:
    """Aggregate seed sweep results; detection rates per attacker kind."""
    numeric = ("pdr", "control_overhead", "throughput_bytes_per_ktick",
               "parent_changes", "false_positive_count", "malicious_count",
               "suspicious_count")
    summary: dict = {"runs": len(reports), "scenario": reports[0]["scenario"] if reports else None}
    for key in numeric:
        values = [r[key] for r in reports if r.get(key) is not None]
        if values:
            summary[key] = {
                "mean": sum(values) / len(values),
                "min": min(values),
                "max": max(values),
            }
    by_kind: dict = {}
    for report in reports:
        for info in report.get("detections", {}).values():
            slot = by_kind.setdefault(info["kind"], {"runs": 0, "detected": 0, "times": []})
            slot["runs"] += 1
            if info["detected"]:
                slot["detected"] += 1
                slot["times"].append(info["time_to_detection"])
    for kind, slot in by_kind.items():
        slot["rate"] = slot["detected"] / slot["runs"]
        slot["mean_time_to_detection"] = (sum(slot["times"]) / len(slot["times"])
                                          if slot["times"] else None)
        del slot["times"]
    if by_kind:
        summary["detection"] = by_kind
    return summary


_COMPARE_METRICS = ("pdr", "control_overhead", "throughput_bytes_per_ktick",
                    "parent_changes", "data_delivered", "control_messages",
                    "malicious_count", "false_positive_count")


def compare(reports_a: list[dict], reports_b: list[dict]) -> dict:
    """Seed-paired metric deltas (b minus a); shapes must agree."""
    by_seed_a = {r["seed"]: r for r in reports_a}
    by_seed_b = {r["seed"]: r for r in reports_b}
    if set(by_seed_a) != set(by_seed_b):
        raise ShapeMismatch("seed sets differ")
    shape_a = {(r["node_count"], r["duration"]) for r in reports_a}
    shape_b = {(r["node_count"], r["duration"]) for r in reports_b}
    if shape_a != shape_b:
        raise ShapeMismatch(f"scenario shapes differ: {shape_a} vs {shape_b}")

    seeds = sorted(by_seed_a)
    table: dict = {"seeds": seeds, "metrics": {}}
    for metric in _COMPARE_METRICS:
        rows = []
        for seed in seeds:
            va = by_seed_a[seed].get(metric)
            vb = by_seed_b[seed].get(metric)
            delta = None if va is None or vb is None else vb - va
            rel = None
            if delta is not None and va:
                rel = delta / va
            rows.append({"seed": seed, "a": va, "b": vb,
                         "delta": delta, "relative": rel})
        deltas = [r["delta"] for r in rows if r["delta"] is not None]
        table["metrics"][metric] = {
            "rows": rows,
            "mean_delta": sum(deltas) / len(deltas) if deltas else None,
        }
    return table


def compare_to_tsv(table: dict) -> str:
    lines = ["metric\tseed\ta\tb\tdelta\trelative"]
    for metric in sorted(table["metrics"]):
        for row in table["metrics"][metric]["rows"]:
            lines.append("\t".join([
                metric, str(row["seed"]),
                _fmt(row["a"]), _fmt(row["b"]), _fmt(row["delta"]), _fmt(row["relative"]),
            ]))
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def save_state(net, path) -> None:
    """End-of-run node state: allowlists, trust tables, positions, ranks."""
    doc = {}
    for nid in sorted(net.nodes):
        node = net.nodes[nid]
        doc[str(nid)] = {
            "role": node.role,
            "position": [round(node.pos[0], 3), round(node.pos[1], 3)],
            "rank": node.rank,
            "parent": node.parent,
            "version": node.version,
            "allowlist": node.firewall.dump() if node.firewall else {},
            "trust": {
                str(peer): {
                    "classification": rec.classification,
                    "ratio": round(rec.ratio, 4),
                    "attempts": rec.attempts,
                    "rechecks_used": rec.rechecks_used,
                }
                for peer, rec in sorted(node.trust.items())
            },
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
