"""Command-line pipeline: generate, sample, solve, evaluate, report.

All artifacts are versioned JSON documents (see ``files``); result documents
carry no timestamps, so a rerun with the same seeds reproduces them byte for
byte. The environment variable ``FCMURP_SEED`` overrides every ``--seed``
flag, which lets a whole pipeline be repinned without editing commands.
Exit codes: 0 success, 2 usage, 3 missing or malformed artifact,
4 infeasible.
"""

from __future__ import annotations

import functools
import os
import time
from contextlib import contextmanager
from dataclasses import replace
from datetime import datetime, timezone
from typing import Optional, Sequence

import click
import numpy as np

from . import __version__
from .detsolve import solve_deterministic_greedy
from .files import (
    FORMAT_VERSION,
    ArtifactError,
    instance_from_doc,
    instance_to_doc,
    quadrants_from_doc,
    quadrants_to_doc,
    read_document,
    render_csv,
    render_text,
    report_from_doc,
    report_to_doc,
    scenarios_from_doc,
    scenarios_to_doc,
    solution_from_doc,
    solution_to_doc,
    write_document,
    write_text,
)
from .heuristics import TabuParams, construct_detailed, neighborhood, tabu_improve
from .instgen import (
    GenConfig,
    SamplerError,
    assign_quadrants,
    generate_instance,
    sample_scenarios,
)
from .model import Instance, RouteSet, ScenarioSet
from .recourse import (
    PenaltyPolicy,
    evaluate_recourse,
    precompute_best_depot,
    recourse_oracle,
)
from .stochsolve import (
    SAA_SAMPLE_LIMIT,
    SAA_TARGET_LIMIT,
    SaaConfig,
    SaaReport,
    compute_vss,
    gamma_seed,
    lambda_seed,
    make_report,
    saa_lower_bound,
    saa_upper_bound,
    solve_evp,
)


class _ExitError(click.ClickException):
    """ClickException carrying one of the documented exit codes."""

    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.exit_code = code


def _translate_errors(fn):
    """Map library failures onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ArtifactError as exc:
            raise _ExitError(str(exc), 3) from None
        except RuntimeError as exc:
            raise _ExitError(str(exc), 4) from None

    return wrapper


def _effective_seed(seed: int) -> int:
    env = os.environ.get("FCMURP_SEED")
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError:
        raise click.UsageError(f"FCMURP_SEED must be an integer, got {env!r}")


def _read_instance(path: str) -> Instance:
    return instance_from_doc(read_document(path, kind="instance"))


def _read_quadrants(path: str):
    return quadrants_from_doc(read_document(path, kind="quadrants"))


def _instance_name(path: str, override: Optional[str]) -> str:
    if override:
        return override
    return os.path.splitext(os.path.basename(path))[0]


@contextmanager
def _timed(stages: dict, label: str):
    start = time.perf_counter()
    yield
    stages[label] = time.perf_counter() - start


def _write_manifest(
    out_dir: str,
    command: str,
    config: dict,
    seeds: dict,
    stages: dict,
    started: str,
) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "manifest",
        "tool": "fcmurp",
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "stage_seconds": stages,
    }
    write_document(doc, os.path.join(out_dir, "manifest.json"))


def _dedup_routes(route_sets: Sequence[RouteSet]) -> list[RouteSet]:
    seen = set()
    out = []
    for rs in route_sets:
        key = rs.canonical().routes
        if key not in seen:
            seen.add(key)
            out.append(rs)
    return out


def _shared_policy(
    instance: Instance, lam: ScenarioSet, candidates: Sequence[RouteSet]
) -> PenaltyPolicy:
    """One penalty over every candidate so penalized scores stay comparable."""
    tables = [precompute_best_depot(instance, s) for s in lam]
    observed = []
    for cand in candidates:
        for k, s in enumerate(lam):
            plan = evaluate_recourse(cand, s, instance, tables[k])
            if plan.feasible:
                observed.append(plan.beta)
    return PenaltyPolicy.from_betas(instance, observed)


@click.group()
@click.version_option(__version__, prog_name="fcmurp")
def main() -> None:
    """Two-stage fuel-constrained multi-vehicle routing toolkit."""


@main.command()
@click.option("--seed", type=int, default=0, show_default=True, help="Layout seed.")
@click.option("--targets", type=click.IntRange(min=1), required=True, help="Number of targets.")
@click.option("--vehicles", type=click.IntRange(min=1), default=1, show_default=True, help="Fleet size.")
@click.option("--refuel-depots", type=click.IntRange(min=1), default=4, show_default=True, help="Refuel depots besides the home depot.")
@click.option("--fuel-factor", type=float, default=2.25, show_default=True, help="Fuel capacity as a multiple of the depot-to-target radius.")
@click.option("--grid", type=float, default=100.0, show_default=True, help="Square side length for target placement.")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True, help="Output directory.")
@_translate_errors
def generate(seed, targets, vehicles, refuel_depots, fuel_factor, grid, out):
    """Generate an instance and its quadrant map."""
    seed = _effective_seed(seed)
    if vehicles > targets:
        raise click.UsageError("--vehicles cannot exceed --targets")
    config = GenConfig(
        seed=seed,
        n_targets=targets,
        vehicles=vehicles,
        n_refuel_depots=refuel_depots,
        fuel_factor=fuel_factor,
        grid=grid,
    )
    try:
        instance = generate_instance(config)
    except ValueError as exc:
        raise _ExitError(str(exc), 4) from None
    qmap = assign_quadrants(instance, seed)
    os.makedirs(out, exist_ok=True)
    instance_path = os.path.join(out, "instance.json")
    quadrants_path = os.path.join(out, "quadrants.json")
    write_document(instance_to_doc(instance), instance_path)
    write_document(quadrants_to_doc(qmap), quadrants_path)
    click.echo(f"lambda = {instance.lam!r}")
    click.echo(f"F = {instance.fuel_capacity!r}")
    click.echo(f"wrote {instance_path} and {quadrants_path}")


@main.command()
@click.option("--instance", "instance_path", type=click.Path(), required=True, help="Instance document.")
@click.option("--quadrants", "quadrants_path", type=click.Path(), required=True, help="Quadrant-map document.")
@click.option("--seed", type=int, default=0, show_default=True, help="Sampling seed.")
@click.option("--count", type=click.IntRange(min=1), required=True, help="Number of scenarios.")
@click.option("--distribution", type=click.Choice(["gamma", "point-mass"]), default="gamma", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Output scenario file.")
@_translate_errors
def scenarios(instance_path, quadrants_path, seed, count, distribution, out):
    """Sample a fuel-scenario set against an instance."""
    seed = _effective_seed(seed)
    instance = _read_instance(instance_path)
    qmap = _read_quadrants(quadrants_path)
    try:
        scen = sample_scenarios(
            instance, qmap, seed=seed, count=count, distribution=distribution
        )
    except SamplerError as exc:
        raise click.ClickException(str(exc))
    write_document(scenarios_to_doc(scen), out)
    click.echo(f"wrote {out}: {count} scenarios, label {scen.label!r}")


@main.command()
@click.option("--instance", "instance_path", type=click.Path(), required=True, help="Instance document.")
@click.option("--quadrants", "quadrants_path", type=click.Path(), required=True, help="Quadrant-map document.")
@click.option("--mode", type=click.Choice(["evp", "saa", "heuristic"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Base seed for all sampling streams.")
@click.option("--n", "replications", type=click.IntRange(min=2), default=10, show_default=True, help="Replications.")
@click.option("--m", "sample_size", type=click.IntRange(min=1), default=10, show_default=True, help="Scenarios per replication sample.")
@click.option("--lambda", "lambda_size", type=click.IntRange(min=1), default=1000, show_default=True, help="Evaluation sample size.")
@click.option("--iterations", type=click.IntRange(min=1), default=500, show_default=True, help="Tabu iterations.")
@click.option("--stall-limit", type=click.IntRange(min=1), default=100, show_default=True, help="Tabu stop after this many non-improving iterations.")
@click.option("--tenure", type=click.IntRange(min=1), default=None, help="Tabu tenure; default scales with the target count.")
@click.option("--engine", type=click.Choice(["auto", "exact", "greedy"]), default="auto", show_default=True, help="Deterministic solver engine.")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Replication workers; defaults to the logical core count.")
@click.option("--name", default=None, help="Instance name in reports; defaults to the instance file stem.")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True, help="Output directory.")
@_translate_errors
def solve(
    instance_path,
    quadrants_path,
    mode,
    seed,
    replications,
    sample_size,
    lambda_size,
    iterations,
    stall_limit,
    tenure,
    engine,
    threads,
    name,
    out,
):
    """Solve an instance and write solution, result, and manifest files."""
    seed = _effective_seed(seed)
    if threads is None:
        threads = os.cpu_count() or 1
    instance = _read_instance(instance_path)
    qmap = _read_quadrants(quadrants_path)
    name = _instance_name(instance_path, name)
    os.makedirs(out, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    stages: dict = {}
    seeds: dict = {"base": seed}
    extras: dict = {}

    if mode == "evp":
        with _timed(stages, "evp"):
            ev = solve_evp(instance, engine=engine)
        report = SaaReport(
            instance_name=name,
            ev=ev.cost,
            ev_optimal=ev.optimal,
            eev=None,
            lb=None,
            ub=None,
            h=None,
            solution=ev.routes,
            vss=None,
            vss_pct=None,
        )
        solution, meta = ev.routes, {"mode": "evp", "optimal": ev.optimal}
    elif mode == "saa":
        if instance.n_targets > SAA_TARGET_LIMIT or sample_size > SAA_SAMPLE_LIMIT:
            raise click.UsageError(
                f"--mode saa solves exactly and handles at most "
                f"{SAA_TARGET_LIMIT} targets with --m at most {SAA_SAMPLE_LIMIT}; "
                "use --mode heuristic for larger runs"
            )
        config = SaaConfig(
            replications=replications,
            sample_size=sample_size,
            lambda_size=lambda_size,
            seed=seed,
            workers=threads,
        )
        click.echo(f"lower bound: {replications} replications of {sample_size}", err=True)
        with _timed(stages, "lower_bound"):
            lb = saa_lower_bound(instance, qmap, config)
        with _timed(stages, "evaluation_sample"):
            lam = sample_scenarios(
                instance, qmap, seed=lambda_seed(seed), count=lambda_size
            )
        candidates = _dedup_routes([s.routes for s in lb.solutions])
        with _timed(stages, "evp"):
            ev = solve_evp(instance, engine=engine)
        click.echo(f"evaluating {len(candidates)} candidates on {lambda_size}", err=True)
        with _timed(stages, "upper_bound"):
            policy = _shared_policy(instance, lam, list(candidates) + [ev.routes])
            ub = saa_upper_bound(candidates, lam, instance, policy)
            eev = saa_upper_bound([ev.routes], lam, instance, policy)
        report = make_report(
            name, ev, eev.estimate, ub.routes, lb=lb.estimate, ub=ub.estimate
        )
        solution, meta = ub.routes, {"mode": "saa", "candidate_index": ub.index}
        seeds["gamma"] = list(lb.gamma_seeds)
        seeds["lambda"] = lambda_seed(seed)
        extras = {
            "penalty": policy.nu,
            "penalized_scenarios": ub.penalized_scenarios + eev.penalized_scenarios,
        }
    else:
        params = TabuParams(
            iterations=iterations, stall_limit=stall_limit, tenure=tenure
        )
        candidates = []
        gamma_seeds = []
        with _timed(stages, "search"):
            for k in range(replications):
                gseed = gamma_seed(seed, k)
                gamma_seeds.append(gseed)
                delta = sample_scenarios(instance, qmap, seed=gseed, count=sample_size)
                built = construct_detailed(instance, delta, engine=engine)
                improved = tabu_improve(built.routes, delta, params, instance)
                if improved.warning:
                    click.echo(f"replication {k}: {improved.warning}", err=True)
                if improved.feasible:
                    candidates.append(improved.routes)
                click.echo(
                    f"replication {k}: objective {improved.objective:.3f} "
                    f"after {improved.iterations} iterations",
                    err=True,
                )
        if not candidates:
            raise _ExitError("no replication produced a feasible solution", 4)
        candidates = _dedup_routes(candidates)
        with _timed(stages, "evaluation_sample"):
            lam = sample_scenarios(
                instance, qmap, seed=lambda_seed(seed), count=lambda_size
            )
        with _timed(stages, "evp"):
            ev = solve_evp(instance, engine=engine)
        click.echo(f"evaluating {len(candidates)} candidates on {lambda_size}", err=True)
        with _timed(stages, "upper_bound"):
            policy = _shared_policy(instance, lam, list(candidates) + [ev.routes])
            best = saa_upper_bound(candidates, lam, instance, policy)
            eev = saa_upper_bound([ev.routes], lam, instance, policy)
        report = make_report(name, ev, eev.estimate, best.routes, h=best.estimate)
        solution, meta = best.routes, {"mode": "heuristic", "candidate_index": best.index}
        seeds["gamma"] = gamma_seeds
        seeds["lambda"] = lambda_seed(seed)
        extras = {
            "penalty": policy.nu,
            "penalized_scenarios": best.penalized_scenarios + eev.penalized_scenarios,
        }

    solution_path = os.path.join(out, "solution.json")
    result_path = os.path.join(out, "result.json")
    write_document(solution_to_doc(solution, meta={"name": name, **meta}), solution_path)
    write_document(report_to_doc(report), result_path)
    config_echo = {
        "instance": instance_path,
        "quadrants": quadrants_path,
        "mode": mode,
        "n": replications,
        "m": sample_size,
        "lambda": lambda_size,
        "iterations": iterations,
        "stall_limit": stall_limit,
        "tenure": tenure,
        "engine": engine,
        "threads": threads,
        "name": name,
        **extras,
    }
    _write_manifest(out, "solve", config_echo, seeds, stages, started)
    click.echo(f"EV = {report.ev!r}")
    if report.eev is not None:
        click.echo(f"EEV = {report.eev.mean!r}")
    if report.lb is not None:
        click.echo(f"LB = {report.lb.mean!r}")
    if report.ub is not None:
        click.echo(f"UB = {report.ub.mean!r}")
    if report.h is not None:
        click.echo(f"H = {report.h.mean!r}")
    if report.vss is not None:
        click.echo(f"VSS = {report.vss!r} ({report.vss_pct:.3f}%)")
    click.echo(f"wrote {solution_path}, {result_path}")


@main.command()
@click.option("--instance", "instance_path", type=click.Path(), required=True, help="Instance document.")
@click.option("--solution", "solution_path", type=click.Path(), required=True, help="Solution document to score.")
@click.option("--scenarios", "scenarios_path", type=click.Path(), default=None, help="Existing scenario file; otherwise drawn from --seed.")
@click.option("--quadrants", "quadrants_path", type=click.Path(), default=None, help="Quadrant map, required when drawing scenarios.")
@click.option("--seed", type=int, default=0, show_default=True, help="Base seed; evaluation scenarios come from its evaluation substream.")
@click.option("--lambda", "lambda_size", type=click.IntRange(min=1), default=1000, show_default=True, help="Evaluation sample size.")
@click.option("--result", "result_path", type=click.Path(), default=None, help="Result document to update in place.")
@click.option("--column", type=click.Choice(["eev", "ub", "h"]), default="h", show_default=True, help="Which result column receives the estimate.")
@_translate_errors
def evaluate(
    instance_path,
    solution_path,
    scenarios_path,
    quadrants_path,
    seed,
    lambda_size,
    result_path,
    column,
):
    """Score a solution out of sample; optionally merge into a result file."""
    seed = _effective_seed(seed)
    instance = _read_instance(instance_path)
    routes, _ = solution_from_doc(read_document(solution_path, kind="solution"))
    if scenarios_path is not None:
        lam = scenarios_from_doc(read_document(scenarios_path, kind="scenario_set"))
    else:
        if quadrants_path is None:
            raise click.UsageError("provide --scenarios or --quadrants to draw them")
        qmap = _read_quadrants(quadrants_path)
        lam = sample_scenarios(
            instance, qmap, seed=lambda_seed(seed), count=lambda_size
        )
    res = saa_upper_bound([routes], lam, instance)
    est = res.estimate
    click.echo(f"mean = {est.mean!r}")
    click.echo(f"standard_error = {est.standard_error!r}")
    if res.penalized_scenarios:
        click.echo(f"penalized scenarios: {res.penalized_scenarios}", err=True)
    if result_path is not None:
        report = report_from_doc(read_document(result_path, kind="result"))
        report = replace(report, **{column: est})
        if report.eev is not None and (report.ub or report.h):
            try:
                vss, pct = compute_vss(report)
            except ValueError as exc:
                raise _ExitError(str(exc), 3) from None
            report = replace(report, vss=vss, vss_pct=pct)
        write_document(report_to_doc(report), result_path)
        click.echo(f"updated {column} in {result_path}")


@main.command()
@click.argument("results", nargs=-1, required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["text", "csv"]), default="text", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write here instead of standard output.")
@_translate_errors
def report(results, fmt, out):
    """Tabulate one result document per row."""
    rows = [report_from_doc(read_document(p, kind="result")) for p in results]
    text = render_csv(rows) if fmt == "csv" else render_text(rows)
    if out is not None:
        write_text(text, out)
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--rounds", type=click.IntRange(min=1), default=25, show_default=True, help="Instances to sweep.")
@_translate_errors
def selftest(seed, rounds):
    """Cross-check the recourse evaluator against brute-force enumeration."""
    seed = _effective_seed(seed)
    rng = np.random.default_rng(seed)
    checked = 0
    failures = 0
    for r in range(rounds):
        config = GenConfig(
            seed=seed * 1000 + r,
            n_targets=int(rng.integers(3, 7)),
            vehicles=int(rng.integers(1, 3)),
        )
        instance = generate_instance(config)
        qmap = assign_quadrants(instance, config.seed)
        scen = sample_scenarios(instance, qmap, seed=config.seed + 1, count=2)
        greedy = solve_deterministic_greedy(instance)
        if greedy is None:
            continue
        variants = [greedy.routes] + neighborhood(greedy.routes, instance)[:3]
        for rs in variants:
            for s in scen:
                fast = evaluate_recourse(rs, s, instance)
                slow = recourse_oracle(rs, s, instance)
                checked += 1
                if fast.feasible != slow.feasible or (
                    fast.feasible and fast.beta != slow.beta
                ):
                    failures += 1
                    click.echo(
                        f"mismatch: seed {config.seed} scenario {s.id} "
                        f"routes {rs.routes}: {fast.beta!r} vs {slow.beta!r}",
                        err=True,
                    )
    click.echo(f"checked {checked} recourse evaluations: {failures} mismatches")
    if failures:
        raise click.ClickException("recourse evaluator disagrees with the oracle")


if __name__ == "__main__":
    main()
