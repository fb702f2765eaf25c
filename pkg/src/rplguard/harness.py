"""Scenario runner: seeded runs, seed sweeps, outputs and offline checks."""

from __future__ import annotations

import json
import os

from . import metrics as metrics_mod
from . import netsim
from .config import ScenarioConfig, load_scenario
from .ledger import dump_ledger, verify_dump


def run_one(config: ScenarioConfig, seed: int,
            scenario_name: str | None = None) -> tuple[dict, netsim.Network]:
    """Build and execute a single seeded run; returns (report, network)."""
    net = netsim.build_topology(config, seed)
    netsim.run(net)
    report = metrics_mod.build_report(net, scenario_name or config.name, seed)
    return report, net


def _execute(config: ScenarioConfig, seed: int, out_dir: str | None,
             dump_ledgers: bool, write_traces: bool) -> dict:
    report, net = run_one(config, seed)
    if out_dir:
        if write_traces:
            net.trace.write(os.path.join(out_dir, f"trace-{seed}.log"))
            metrics_mod.save_state(net, os.path.join(out_dir, f"state-{seed}.json"))
        if dump_ledgers and net.defense_runtime is not None:
            ledger_dir = os.path.join(out_dir, "ledgers", str(seed))
            os.makedirs(ledger_dir, exist_ok=True)
            for sid, ledger in sorted(net.defense_runtime.ledgers.items()):
                dump_ledger(ledger, os.path.join(ledger_dir, f"sink-{sid}.ldg"))
    return report


def run_scenario(path_or_config, overrides=None, seeds=None, out_dir=None,
                 parallel: int = 1, figures: bool = False,
                 dump_ledgers: bool = False, write_traces: bool = True) -> list[dict]:
    """Run every seed of a scenario; one metrics report per seed."""
    if isinstance(path_or_config, ScenarioConfig):
        config = path_or_config
    else:
        config = load_scenario(path_or_config, overrides)
    seed_list = list(seeds) if seeds else config.seeds
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    if parallel > 1 and len(seed_list) > 1:
        import multiprocessing

        with multiprocessing.Pool(parallel) as pool:
            reports = pool.starmap(
                _execute,
                [(config, seed, out_dir, dump_ledgers, write_traces)
                 for seed in seed_list])
    else:
        reports = [_execute(config, seed, out_dir, dump_ledgers, write_traces)
                   for seed in seed_list]

    if out_dir:
        metrics_mod.write_ndjson(reports, os.path.join(out_dir, "metrics.ndjson"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(metrics_mod.summarize(reports), fh, sort_keys=True, indent=1)
        if figures:
            from . import figures as figures_mod

            figures_mod.render_run_figures(reports, os.path.join(out_dir, "figures"))
    return reports


def compare(reports_a, reports_b) -> dict:
    return metrics_mod.compare(reports_a, reports_b)


def verify_ledger_cli(path) -> str:
    """Offline dump verification; returns the printable status line."""
    status, index = verify_dump(path)
    if status == "ok":
        return "Ok"
    if status == "mac_error":
        return "MacError"
    return f"FirstBadIndex {index}"
