"""Scenario files: INI-style ``key = value`` sections, strictly validated.

A scenario fully determines a run together with a seed.  Unknown sections or
keys are rejected by name so typos cannot silently change an experiment.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields as dc_fields

from .trust import Thresholds


class ConfigError(Exception):
    pass


class SimulationError(Exception):
    pass


TOPOLOGIES = ("grid", "random", "line")

ATTACK_KINDS = (
    "sinkhole",
    "decreased_rank",
    "version_number",
    "dos_flood",
    "neighbor_replay",
    "wormhole",
    "clone_id",
    "sybil",
    "sniffing",
)

# Parameter keys each attack section may carry besides kind/ids/count/onset.
ATTACK_PARAM_KEYS = {
    "sinkhole": {"rank_delta", "drop_rate"},
    "decreased_rank": {"rank_delta"},
    "version_number": {"bump"},
    "dos_flood": {"flood_rate"},
    "neighbor_replay": set(),
    "wormhole": {"tunnel_latency"},
    "clone_id": {"victim_id"},
    "sybil": {"sybil_count"},
    "sniffing": set(),
}


@dataclass
class AttackConfig:
    name: str
    kind: str
    ids: list[int] | None = None
    count: int = 1
    onset: int | None = None
    params: dict = field(default_factory=dict)


@dataclass
class TamperConfig:
    at: int
    sink_index: int = 0
    block: int = 1


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    node_count: int = 50
    sink_fraction: float = 0.10
    topology: str = "grid"
    radio_range: float = 15.0
    grid_spacing: float = 10.0
    loss_probability: float = 0.0
    link_latency: int = 1
    link_cost: int = 1
    duration: int = 60000
    seeds: list[int] = field(default_factory=lambda: [1])
    defense: bool = True
    mobility: bool = False
    mobility_speed: float = 0.01  # meters per tick
    dio_interval: int = 1000
    dis_interval: int = 1000
    dao_interval: int = 2000
    data_interval: int = 1000
    payload_size: int = 64
    root_disable_at: int | None = None
    root_version_bump_at: int | None = None
    demote_sinks: bool = False
    thresholds: Thresholds = field(default_factory=Thresholds)
    attacks: list[AttackConfig] = field(default_factory=list)
    tamper: TamperConfig | None = None

    def default_onset(self) -> int:
        return int(0.2 * self.duration)

    def shape(self) -> tuple:
        return (self.node_count, self.duration, tuple(sorted(self.seeds)))


_SCENARIO_KEYS = {
    "name": str,
    "node_count": int,
    "sink_fraction": float,
    "topology": str,
    "radio_range": float,
    "grid_spacing": float,
    "loss_probability": float,
    "link_latency": int,
    "link_cost": int,
    "duration": int,
    "seeds": "seeds",
    "defense": "bool",
    "mobility": "bool",
    "mobility_speed": float,
    "dio_interval": int,
    "dis_interval": int,
    "dao_interval": int,
    "data_interval": int,
    "payload_size": int,
    "root_disable_at": "optint",
    "root_version_bump_at": "optint",
    "demote_sinks": "bool",
}

_THRESHOLD_KEYS = {f.name: f.type for f in dc_fields(Thresholds)}

_ATTACK_BASE_KEYS = {"kind", "ids", "count", "onset"}

_TAMPER_KEYS = {"at": int, "sink_index": int, "block": int}


def _parse_bool(raw: str, where: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {raw!r}")


def parse_seeds(raw: str) -> list[int]:
    raw = raw.strip()
    if ".." in raw:
        lo, _, hi = raw.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in raw.split(",") if x.strip()]


def parse_id_list(raw: str) -> list[int]:
    return [int(x) for x in raw.split(",") if x.strip()]


def _convert(raw: str, typ, where: str):
    raw = raw.strip()
    try:
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        if typ is str or typ == "str":
            return raw
        if typ == "bool":
            return _parse_bool(raw, where)
        if typ == "seeds":
            return parse_seeds(raw)
        if typ == "optint":
            return None if raw == "" else int(raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unhandled type {typ}")


def _raw_sections(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                   interpolation=None)
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read scenario file: {path}")
    return {section: dict(cp.items(section)) for section in cp.sections()}


def apply_overrides(raw: dict[str, dict[str, str]], overrides) -> None:
    """Apply ``section.key=value`` strings on top of the raw scenario text."""
    for item in overrides or []:
        dotted, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        section, sep, key = dotted.partition(".")
        if not sep:
            raise ConfigError(f"override must name a section: {item!r}")
        raw.setdefault(section.strip(), {})[key.strip()] = value.strip()


def _build_attack(name: str, body: dict[str, str], duration: int) -> AttackConfig:
    where = f"attack:{name}"
    kind = body.get("kind")
    if kind not in ATTACK_KINDS:
        raise ConfigError(f"{where}: unknown attack kind {kind!r}")
    allowed = _ATTACK_BASE_KEYS | ATTACK_PARAM_KEYS[kind]
    for key in body:
        if key not in allowed:
            raise ConfigError(f"unknown key: {where}.{key}")
    atk = AttackConfig(name=name, kind=kind)
    if "ids" in body:
        atk.ids = parse_id_list(body["ids"])
        atk.count = len(atk.ids)
    if "count" in body:
        atk.count = _convert(body["count"], int, f"{where}.count")
    if "onset" in body:
        atk.onset = _convert(body["onset"], int, f"{where}.onset")
        if atk.onset > duration:
            raise ConfigError(f"{where}: onset {atk.onset} beyond duration {duration}")
    for key in ATTACK_PARAM_KEYS[kind]:
        if key in body:
            typ = int if key in ("rank_delta", "bump", "tunnel_latency",
                                 "victim_id", "sybil_count") else float
            atk.params[key] = _convert(body[key], typ, f"{where}.{key}")
    if kind == "wormhole":
        n = len(atk.ids) if atk.ids is not None else atk.count
        if n != 2:
            raise ConfigError(f"{where}: wormhole needs exactly two endpoints")
    if kind == "sybil" and atk.params.get("sybil_count", 2) < 2:
        raise ConfigError(f"{where}: sybil_count must be >= 2")
    return atk


def build_config(raw: dict[str, dict[str, str]]) -> ScenarioConfig:
    cfg = ScenarioConfig()
    for section, body in raw.items():
        if section == "scenario":
            for key, value in body.items():
                if key not in _SCENARIO_KEYS:
                    raise ConfigError(f"unknown key: scenario.{key}")
                setattr(cfg, key, _convert(value, _SCENARIO_KEYS[key], f"scenario.{key}"))
        elif section == "thresholds":
            for key, value in body.items():
                if key not in _THRESHOLD_KEYS:
                    raise ConfigError(f"unknown key: thresholds.{key}")
                typ = float if "ratio" in key or key in (
                    "flood_multiplier", "z_threshold", "sink_fraction") else int
                setattr(cfg.thresholds, key, _convert(value, typ, f"thresholds.{key}"))
        elif section.startswith("attack:"):
            pass  # handled after scenario keys are final
        elif section == "tamper":
            for key in body:
                if key not in _TAMPER_KEYS:
                    raise ConfigError(f"unknown key: tamper.{key}")
            cfg.tamper = TamperConfig(
                at=_convert(body.get("at", "0"), int, "tamper.at"),
                sink_index=_convert(body.get("sink_index", "0"), int, "tamper.sink_index"),
                block=_convert(body.get("block", "1"), int, "tamper.block"),
            )
        else:
            raise ConfigError(f"unknown section: {section}")

    for section, body in raw.items():
        if section.startswith("attack:"):
            cfg.attacks.append(_build_attack(section[len("attack:"):], body, cfg.duration))

    validate_config(cfg)
    return cfg


def validate_config(cfg: ScenarioConfig) -> None:
    if cfg.node_count < 3:
        raise ConfigError("scenario.node_count must be >= 3")
    if not 0.10 <= cfg.sink_fraction <= 0.15:
        raise ConfigError("scenario.sink_fraction must be within [0.10, 0.15]")
    if cfg.topology not in TOPOLOGIES:
        raise ConfigError(f"scenario.topology must be one of {TOPOLOGIES}")
    if cfg.duration <= 0:
        raise ConfigError("scenario.duration must be positive")
    if not 0.0 <= cfg.loss_probability <= 1.0:
        raise ConfigError("scenario.loss_probability must be within [0, 1]")
    if cfg.link_cost < 1:
        raise ConfigError("scenario.link_cost must be >= 1")
    if not cfg.seeds:
        raise ConfigError("scenario.seeds must list at least one seed")
    if cfg.tamper is not None and not cfg.defense:
        raise ConfigError("tamper section requires defense = on")
    th = cfg.thresholds
    if not 0 <= th.worst_ratio < th.best_ratio <= 1:
        raise ConfigError("thresholds: need 0 <= worst_ratio < best_ratio <= 1")
    th.sink_fraction = cfg.sink_fraction


def load_scenario(path, overrides=None) -> ScenarioConfig:
    raw = _raw_sections(path)
    apply_overrides(raw, overrides)
    return build_config(raw)
