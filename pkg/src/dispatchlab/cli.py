"""Command-line front end: simulate, concordance, repeat-day, validate-config."""
from __future__ import annotations

import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Tuple

import click

from .gpi import PolicyKind, prepare_source, repeat_single_day, run_experiment
from .reporting import (
    PER_DAY_HEADER,
    REPEAT_HEADER,
    SUMMARY_HEADER,
    ConfigError,
    ExperimentConfig,
    per_day_rows,
    repeat_rows,
    summary_rows,
    write_csv,
    write_manifest,
)
from .scenario import ScenarioError
from .transfer import ConcordanceSpec, concordance_rate_report, default_pair_set
from .valuation import ValueTable

OUT_ROOT_ENV = "DISPATCHLAB_OUT"


def _resolve_out(out: Optional[str], name: str) -> str:
    if out:
        return out
    root = os.environ.get(OUT_ROOT_ENV, "out")
    return os.path.join(root, name)


def _load_config(path: str, seeds: Optional[str], policies: Tuple[str, ...]) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path)
    if seeds:
        cfg.seeds = [int(s) for s in seeds.split(",") if s.strip() != ""]
    if policies:
        cfg.policies = [PolicyKind(p) for p in policies]
    return cfg


def _run_group(args) -> Dict[Tuple[str, float, float, int], list]:
    """One worker unit: all (policy, lambda) cells for a (gamma, seed) pair."""
    manifest, gamma, seed, mode = args
    cfg = ExperimentConfig.from_dict(manifest)
    source = prepare_source(cfg.scenario, gamma, seed)
    out: Dict[Tuple[str, float, float, int], list] = {}
    for lam in cfg.lambdas:
        for kind in cfg.policies:
            if mode == "simulate":
                rows = run_experiment(
                    cfg.scenario, kind, cfg.days, gamma, seed, lam=lam, source=source
                )
            else:
                rows = repeat_single_day(
                    cfg.scenario, kind, cfg.repetitions, gamma, seed, lam=lam, source=source
                )
            out[(kind.value, gamma, lam, seed)] = rows
    return out


def _run_grid(cfg: ExperimentConfig, parallel: int, mode: str):
    units = [(cfg.manifest(), gamma, seed, mode) for gamma in cfg.gammas for seed in cfg.seeds]
    results: Dict[Tuple[str, float, float, int], list] = {}
    if parallel > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for part in pool.map(_run_group, units):
                results.update(part)
    else:
        for unit in units:
            results.update(_run_group(unit))
    return results


@click.group()
def main():
    """Order-dispatch experiment harness."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--seeds", default=None, help="Comma-separated seed override.")
@click.option("--policy", "policies", multiple=True, help="Restrict to these policies.")
@click.option("--parallel", default=1, type=int, show_default=True)
def simulate(config_path, out_dir, seeds, policies, parallel):
    """Run the policy x gamma x lambda x seed grid and write metric CSVs."""
    try:
        cfg = _load_config(config_path, seeds, policies)
    except (ConfigError, ScenarioError, FileNotFoundError) as e:
        raise click.ClickException(str(e))
    out = _resolve_out(out_dir, cfg.scenario.name)
    os.makedirs(out, exist_ok=True)
    write_manifest(os.path.join(out, "manifest.yaml"), cfg.manifest())
    results = _run_grid(cfg, parallel, "simulate")
    name = cfg.scenario.name
    write_csv(os.path.join(out, "per_day.csv"), PER_DAY_HEADER, per_day_rows(name, results))
    write_csv(os.path.join(out, "summary.csv"), SUMMARY_HEADER, summary_rows(name, results))
    click.echo(f"wrote {out}/per_day.csv ({sum(len(v) for v in results.values())} rows)")


@main.command("repeat-day")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--seeds", default=None, help="Comma-separated seed override.")
@click.option("--policy", "policies", multiple=True, help="Restrict to these policies.")
@click.option("--repetitions", default=None, type=int)
@click.option("--parallel", default=1, type=int, show_default=True)
def repeat_day(config_path, out_dir, seeds, policies, repetitions, parallel):
    """Repeat one day's demand multiple times and track per-iteration learning."""
    try:
        cfg = _load_config(config_path, seeds, policies)
    except (ConfigError, ScenarioError, FileNotFoundError) as e:
        raise click.ClickException(str(e))
    if repetitions is not None:
        cfg.repetitions = repetitions
    out = _resolve_out(out_dir, cfg.scenario.name)
    os.makedirs(out, exist_ok=True)
    write_manifest(os.path.join(out, "manifest.yaml"), cfg.manifest())
    results = _run_grid(cfg, parallel, "repeat")
    write_csv(
        os.path.join(out, "repeat_day.csv"),
        REPEAT_HEADER,
        repeat_rows(cfg.scenario.name, results),
    )
    click.echo(f"wrote {out}/repeat_day.csv")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--source-table", required=True, type=click.Path(exists=True))
@click.option("--target-table", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def concordance(config_path, source_table, target_table, out_path):
    """Report how often the two tables rank the configured cell pairs the same way."""
    try:
        cfg = ExperimentConfig.load(config_path)
    except (ConfigError, ScenarioError) as e:
        raise click.ClickException(str(e))
    gamma = cfg.gammas[0]
    v_src = ValueTable.load_csv(source_table, gamma)
    v_tgt = ValueTable.load_csv(target_table, gamma)
    if v_src.values.shape != v_tgt.values.shape:
        raise click.ClickException(
            f"table shape mismatch: {v_src.values.shape} vs {v_tgt.values.shape}"
        )
    pair_cfg = cfg.scenario.pair_config
    if isinstance(pair_cfg, dict):
        pairs = default_pair_set(v_src, pair_cfg.get("q", 0.2))
    else:
        pairs = pair_cfg
    spec = ConcordanceSpec(pairs=pairs, lam=cfg.scenario.lam, margin=cfg.scenario.margin)
    report = concordance_rate_report(v_tgt, v_src, spec)
    click.echo(f"aggregate_concordance_rate={report.aggregate!r}")
    if out_path:
        rows = [(t, float(r)) for t, r in enumerate(report.per_time)]
        rows.append(("aggregate", report.aggregate))
        write_csv(out_path, ["slice", "rate"], rows)


@main.command("validate-config")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def validate_config(config_path):
    """Check an experiment config (and its scenario) against the schema."""
    try:
        cfg = ExperimentConfig.load(config_path)
        cfg.scenario.build_world()
        cfg.scenario.build_source_model()
        cfg.scenario.build_target_model()
    except (ConfigError, ScenarioError, ValueError) as e:
        raise click.ClickException(str(e))
    click.echo(f"ok: scenario '{cfg.scenario.name}', {len(cfg.policies)} policies")


if __name__ == "__main__":
    main()
