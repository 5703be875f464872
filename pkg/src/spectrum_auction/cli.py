"""Command-line front end: batch runs over scenarios and seeds.

Outputs per (scenario, seed): a per-slot CSV log (schema in
``sim.RunLog``) and a JSON summary; per scenario: a cross-seed aggregate;
per invocation: a comparison table.  Outputs carry no timestamps, so a
repeated invocation writes byte-identical files.

Scenario files are JSON::

    {
      "base": "two_su_s4",          # optional built-in to inherit from
      "name": "my_experiment",
      "slot_len": 0.01, "horizon": 20000, "window": 1000, "seed": 0,
      "channels": [
        {"p_nf": 0.5, "p_fn": 0.5,
         "snr_levels": [18, 23, 26],
         "entry_dist": [0.4, 0.4, 0.2],
         "cond_trans": [[0.4, 0.4, 0.2], [0.4, 0.4, 0.2], [0.4, 0.4, 0.2]]}
      ],
      "sus": [
        {"policy": "myopic",
         "arrival_rate_mbps": 2.0, "packet_size_bytes": 1000,  # or "mu"
         "capacity": 10, "packets_per_slot": [4, 5, 6],
         "alpha": 0.8, "n_classes": 5,
         "fixed_bid": null, "gamma_max": null, "epsilon": 0.0}
      ]
    }

Unspecified fields take the documented defaults.  ``sus``/``channels``
replace the base's lists wholesale when present.
"""

from __future__ import annotations

import argparse
import dataclasses
import difflib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .env import ChannelModel, RateTable, TrafficModel, ValidationError
from .sim import (
    DEFAULT_CAPACITY,
    DEFAULT_CLASSES,
    DEFAULT_PACKETS_PER_SLOT,
    DEFAULT_SLOT_LEN,
    ScenarioConfig,
    SuConfig,
    builtin_scenarios,
    run_scenario,
)
from .strategies import POLICY_NAMES

OUTPUT_DIR_ENV = "SPECTRUM_AUCTION_OUTDIR"
DEFAULT_PACKET_SIZE_BYTES = 1000
DEFAULT_ARRIVAL_RATE_MBPS = 2.0

_TOP_KEYS = {"base", "name", "slot_len", "horizon", "window", "seed", "channels", "sus"}
_CHANNEL_KEYS = {"p_nf", "p_fn", "snr_levels", "entry_dist", "cond_trans"}
_SU_KEYS = {
    "policy", "mu", "arrival_rate_mbps", "packet_size_bytes", "tail_cap",
    "capacity", "packets_per_slot", "rate_per_level", "alpha", "fixed_bid",
    "n_classes", "gamma_max", "epsilon",
}

__all__ = ["RunRequest", "parse_config", "execute", "report_tables", "main"]


@dataclass
class RunRequest:
    """One batch invocation: which scenarios, which seeds, where to write."""

    scenario_names: list[str]
    config_path: Path | None
    seeds: list[int]
    output_dir: Path
    horizon: int | None = None
    window: int | None = None
    workers: int = 1
    write_logs: bool = True


def _build_channel(doc: dict, index: int, problems: list[str]) -> ChannelModel | None:
    unknown = set(doc) - _CHANNEL_KEYS
    if unknown:
        problems.append(f"channel {index + 1}: unknown fields {sorted(unknown)}")
        return None
    missing = _CHANNEL_KEYS - set(doc)
    if missing:
        problems.append(f"channel {index + 1}: missing fields {sorted(missing)}")
        return None
    try:
        return ChannelModel(
            p_nf=doc["p_nf"],
            p_fn=doc["p_fn"],
            snr_levels=tuple(doc["snr_levels"]),
            entry_dist=tuple(doc["entry_dist"]),
            cond_trans=tuple(tuple(row) for row in doc["cond_trans"]),
        )
    except (ValidationError, TypeError) as exc:
        problems.append(f"channel {index + 1}: {exc}")
        return None


def _build_su(doc: dict, index: int, slot_len: float, problems: list[str]) -> SuConfig | None:
    unknown = set(doc) - _SU_KEYS
    if unknown:
        problems.append(f"su {index + 1}: unknown fields {sorted(unknown)}")
        return None
    policy = doc.get("policy")
    if policy is None:
        problems.append(f"su {index + 1}: missing required field 'policy'")
        return None
    if policy not in POLICY_NAMES:
        hint = difflib.get_close_matches(str(policy), POLICY_NAMES, n=1)
        suggestion = f"; did you mean {hint[0]!r}?" if hint else ""
        problems.append(
            f"su {index + 1}: unknown policy {policy!r}{suggestion} "
            f"(valid: {', '.join(POLICY_NAMES)})"
        )
        return None
    try:
        if "mu" in doc:
            mu = float(doc["mu"])
        else:
            mbps = float(doc.get("arrival_rate_mbps", DEFAULT_ARRIVAL_RATE_MBPS))
            packet = float(doc.get("packet_size_bytes", DEFAULT_PACKET_SIZE_BYTES))
            if packet <= 0:
                raise ValidationError([f"packet_size_bytes must be positive, got {packet!r}"])
            mu = mbps * 1e6 / (8.0 * packet)
        traffic = TrafficModel(mu, slot_len, tail_cap=doc.get("tail_cap"))
        if "rate_per_level" in doc:
            rates = RateTable(tuple(doc["rate_per_level"]))
        else:
            per_slot = doc.get("packets_per_slot", DEFAULT_PACKETS_PER_SLOT)
            rates = RateTable.per_slot(tuple(per_slot), slot_len)
        return SuConfig(
            policy=policy,
            traffic=traffic,
            rates=rates,
            capacity=int(doc.get("capacity", DEFAULT_CAPACITY)),
            alpha=float(doc.get("alpha", SuConfig.__dataclass_fields__["alpha"].default)),
            fixed_bid=None if doc.get("fixed_bid") is None else float(doc["fixed_bid"]),
            n_classes=int(doc.get("n_classes", DEFAULT_CLASSES)),
            gamma_max=None if doc.get("gamma_max") is None else float(doc["gamma_max"]),
            epsilon=float(doc.get("epsilon", 0.0)),
        )
    except (ValidationError, TypeError, ValueError) as exc:
        problems.append(f"su {index + 1}: {exc}")
        return None


def parse_config(text: str) -> ScenarioConfig:
    """Parse and fully validate a JSON scenario description.

    Raises ValidationError listing every violated field and constraint.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError([f"config is not valid JSON: {exc}"])
    if not isinstance(doc, dict):
        raise ValidationError(["config must be a JSON object"])
    problems: list[str] = []
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        problems.append(f"unknown top-level fields {sorted(unknown)}")

    base: ScenarioConfig | None = None
    if "base" in doc:
        catalog = builtin_scenarios()
        if doc["base"] not in catalog:
            hint = difflib.get_close_matches(str(doc["base"]), catalog.keys(), n=1)
            suggestion = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ValidationError(
                [f"unknown base scenario {doc['base']!r}{suggestion}"]
            )
        base = catalog[doc["base"]]

    slot_len = float(doc.get("slot_len", base.slot_len if base else DEFAULT_SLOT_LEN))

    if "channels" in doc:
        channels = [
            _build_channel(ch, i, problems)
            for i, ch in enumerate(doc["channels"])
        ]
    elif base:
        channels = list(base.channels)
    else:
        problems.append("missing required field 'channels' (no base given)")
        channels = []

    if "sus" in doc:
        sus = [_build_su(su, i, slot_len, problems) for i, su in enumerate(doc["sus"])]
    elif base:
        sus = list(base.sus)
    else:
        problems.append("missing required field 'sus' (no base given)")
        sus = []

    if problems or any(c is None for c in channels) or any(s is None for s in sus):
        raise ValidationError(problems or ["invalid channel or user entries"])

    config = ScenarioConfig(
        name=str(doc.get("name", base.name if base else "custom")),
        channels=channels,
        sus=sus,
        slot_len=slot_len,
        horizon=int(doc.get("horizon", base.horizon if base else ScenarioConfig.__dataclass_fields__["horizon"].default)),
        window=int(doc.get("window", base.window if base else ScenarioConfig.__dataclass_fields__["window"].default)),
        seed=doc.get("seed", base.seed if base else 0),
    )
    more = config.problems()
    if more:
        raise ValidationError(more)
    return config


def _json_dump(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _run_job(args) -> tuple[str, int, list[dict]]:
    config, seed, outdir, write_logs = args
    log, stats = run_scenario(config, seed=seed)
    scen_dir = Path(outdir) / config.name
    scen_dir.mkdir(parents=True, exist_ok=True)
    if write_logs:
        with open(scen_dir / f"seed_{seed}.csv", "w") as fh:
            log.write_csv(fh)
    summary = {
        "schema": "summary/1",
        "scenario": config.name,
        "seed": seed,
        "horizon": config.horizon,
        "window": config.window,
        "per_su": [s.to_dict() for s in stats],
    }
    _json_dump(summary, scen_dir / f"seed_{seed}.summary.json")
    return config.name, seed, summary["per_su"]


def _mean_std(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def _aggregate(config: ScenarioConfig, seeds: list[int], per_seed: list[list[dict]]) -> dict:
    per_su = []
    for i in range(len(config.sus)):
        entry: dict = {"su": i}
        for key in ("loss_rate_pct", "avg_tax", "avg_cost"):
            mean, std = _mean_std([s[i][key] for s in per_seed])
            entry[f"{key}_mean"] = mean
            entry[f"{key}_std"] = std
        per_su.append(entry)
    return {
        "schema": "aggregate/1",
        "scenario": config.name,
        "seeds": list(seeds),
        "horizon": config.horizon,
        "window": config.window,
        "per_su": per_su,
    }


def report_tables(aggregates: list[dict]) -> str:
    """Comparison table across scenarios: loss rate, tax, cost per user."""
    lines = []
    header = f"{'scenario':<24} {'su':>3}  {'loss_rate_%':>18}  {'avg_tax':>18}  {'avg_cost':>18}"
    lines.append(header)
    lines.append("-" * len(header))
    for agg in aggregates:
        for entry in agg["per_su"]:
            cells = []
            for key in ("loss_rate_pct", "avg_tax", "avg_cost"):
                cells.append(
                    f"{entry[f'{key}_mean']:>10.4f} ± {entry[f'{key}_std']:<6.4f}"
                )
            lines.append(
                f"{agg['scenario']:<24} {entry['su'] + 1:>3}  " + "  ".join(cells)
            )
    return "\n".join(lines) + "\n"


def _resolve_configs(request: RunRequest) -> list[ScenarioConfig]:
    configs: list[ScenarioConfig] = []
    catalog = builtin_scenarios()
    for name in request.scenario_names:
        if name not in catalog:
            hint = difflib.get_close_matches(name, catalog.keys(), n=1)
            suggestion = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ValidationError([f"unknown scenario {name!r}{suggestion}"])
        configs.append(catalog[name])
    if request.config_path is not None:
        configs.append(parse_config(Path(request.config_path).read_text()))
    if not configs:
        raise ValidationError(["nothing to run: give --scenario and/or --config"])
    if request.horizon is not None or request.window is not None:
        overrides = {}
        if request.horizon is not None:
            overrides["horizon"] = request.horizon
        if request.window is not None:
            overrides["window"] = request.window
        configs = [dataclasses.replace(c, **overrides) for c in configs]
    for c in configs:
        c.validate()
    return configs


def execute(request: RunRequest) -> int:
    """Run the batch; returns a process exit status (0 on success)."""
    if not request.seeds:
        raise ValidationError(["at least one seed is required"])
    configs = _resolve_configs(request)
    outdir = Path(request.output_dir)
    # fail on unwritable output before any simulation starts
    outdir.mkdir(parents=True, exist_ok=True)
    probe = outdir / ".write_probe"
    probe.write_text("")
    probe.unlink()

    jobs = [
        (config, seed, str(outdir), request.write_logs)
        for config in configs
        for seed in request.seeds
    ]
    if request.workers > 1:
        with ProcessPoolExecutor(max_workers=request.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    by_scenario: dict[str, list[list[dict]]] = {}
    for name, seed, per_su in results:
        by_scenario.setdefault(name, []).append(per_su)
    aggregates = []
    for config in configs:
        agg = _aggregate(config, request.seeds, by_scenario[config.name])
        _json_dump(agg, outdir / config.name / "aggregate.json")
        aggregates.append(agg)
    table = report_tables(aggregates)
    (outdir / "report.txt").write_text(table)
    print(table, end="")
    return 0


def _parse_seeds(args) -> list[int]:
    if args.num_seeds is not None:
        if args.num_seeds < 1:
            raise ValidationError(["--num-seeds must be at least 1"])
        return list(range(args.num_seeds))
    try:
        return [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise ValidationError([f"--seeds must be a comma-separated integer list, got {args.seeds!r}"])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spectrum-auction",
        description="Batch runner for the repeated spectrum auction simulator.",
    )
    parser.add_argument(
        "--scenario", "-s", action="append", default=[], metavar="NAME",
        help="built-in scenario to run (repeatable; see --list)",
    )
    parser.add_argument(
        "--config", "-c", type=Path, default=None, metavar="FILE",
        help="JSON scenario file (may be combined with --scenario)",
    )
    parser.add_argument("--list", action="store_true", help="list built-in scenarios and exit")
    parser.add_argument(
        "--seeds", default="0", metavar="S1,S2,...",
        help="comma-separated seeds (default: 0)",
    )
    parser.add_argument(
        "--num-seeds", type=int, default=None, metavar="K",
        help="run seeds 0..K-1 (overrides --seeds)",
    )
    parser.add_argument("--horizon", type=int, default=None, help="override slots per run")
    parser.add_argument("--window", type=int, default=None, help="override summary window")
    parser.add_argument(
        "--output-dir", "-o", type=Path, default=None, metavar="DIR",
        help=f"output directory (default: ${OUTPUT_DIR_ENV} or ./runs)",
    )
    parser.add_argument(
        "--workers", type=int, default=1, help="parallel worker processes (default: 1)"
    )
    parser.add_argument(
        "--format", choices=("full", "summary"), default="full",
        help="'full' writes per-slot logs; 'summary' skips them",
    )
    args = parser.parse_args(argv)

    if args.list:
        for name, cfg in builtin_scenarios().items():
            policies = ",".join(su.policy for su in cfg.sus)
            print(
                f"{name:<24} {len(cfg.sus)} users, {len(cfg.channels)} channels, "
                f"policies: {policies}"
            )
        return 0

    outdir = args.output_dir
    if outdir is None:
        outdir = Path(os.environ.get(OUTPUT_DIR_ENV, "runs"))
    try:
        request = RunRequest(
            scenario_names=list(args.scenario),
            config_path=args.config,
            seeds=_parse_seeds(args),
            output_dir=outdir,
            horizon=args.horizon,
            window=args.window,
            workers=args.workers,
            write_logs=args.format == "full",
        )
        return execute(request)
    except ValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
