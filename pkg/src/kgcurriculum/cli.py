"""Operator command-line surface.

One JSON config file drives every command; ``--set dotted.path=value`` flags
override individual fields. All randomness flows from a single global seed
split per module, so module tests and CLI runs agree. Outputs are written
atomically and embed the config digest. Exit codes: 0 success, 2 config
error, 3 stall/unfillable strata, 4 backend failure.
"""

from __future__ import annotations

import functools
import json
import random
import sys

import click

from . import alignment as align_mod
from . import bench as bench_mod
from . import decontamination as decon
from . import evaluation as eval_mod
from . import pipeline as pipe
from .errors import (
    AuthMissing,
    BackendUnavailable,
    InvalidConfig,
    KgCurriculumError,
    ProgressStall,
    StrataUnfillable,
)
from .gateway import backend_from_config
from .graph import graph_stats, load_graph
from .util import (
    atomic_write_text,
    config_digest,
    derive_seed,
    read_json,
    read_jsonl,
    write_json,
    write_jsonl,
)

EXIT_CONFIG = 2
EXIT_STALL = 3
EXIT_BACKEND = 4


def _apply_override(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise InvalidConfig(f"override must look like dotted.path=value: "
                            f"{assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def load_config(path, overrides) -> dict:
    config = read_json(path) if path else {}
    for assignment in overrides:
        _apply_override(config, assignment)
    return config


def cli_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (InvalidConfig, click.UsageError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (ProgressStall, StrataUnfillable) as exc:
            click.echo(f"stalled: {exc}", err=True)
            sys.exit(EXIT_STALL)
        except (BackendUnavailable, AuthMissing) as exc:
            click.echo(f"backend failure: {exc}", err=True)
            sys.exit(EXIT_BACKEND)
        except KgCurriculumError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapper


@click.group()
def main():
    """Knowledge-graph grounded task synthesis and evaluation toolkit."""


def common_options(func):
    func = click.option("--config", "config_path", type=click.Path(exists=True),
                        default=None, help="JSON config file.")(func)
    func = click.option("--set", "overrides", multiple=True,
                        help="Override a config field: dotted.path=value.")(func)
    return func


def _load_graph_from_config(graph_file, config):
    excluded = set(config.get("excluded_relations", []))
    return load_graph(graph_file, excluded)


@main.command()
@click.argument("graph_file", type=click.Path(exists=True))
@common_options
@click.option("--total", type=int, default=None, help="Target dataset size.")
@click.option("--seed", type=int, default=None, help="Global seed.")
@click.option("--output", type=click.Path(), default=None)
@click.option("--workers", type=int, default=None,
              help="Worker count (>1 trades reproducibility for speed).")
@click.option("--bench", "bench_file", type=click.Path(exists=True),
              default=None, help="Protected benchmark for decontamination.")
@click.option("--resume", is_flag=True, help="Resume from a checkpoint.")
@click.option("--dry-run", is_flag=True,
              help="Validate config and graph without backend calls.")
@cli_errors
def generate(graph_file, config_path, overrides, total, seed, output,
             workers, bench_file, resume, dry_run):
    """Run the curriculum curation loop and write dataset + manifest."""
    config = load_config(config_path, overrides)
    section = dict(config.get("generate", {}))
    if total is not None:
        section["total_samples"] = total
    if seed is not None:
        section["seed"] = seed
    elif "seed" not in section and "seed" in config:
        section["seed"] = config["seed"]
    if output is not None:
        section["output_dir"] = output
    if workers is not None:
        section["workers"] = workers
    pcfg = pipe.PipelineConfig(**section)

    graph = _load_graph_from_config(graph_file, config)
    if dry_run:
        click.echo(f"config ok (digest {pcfg.digest()}); graph: "
                   f"{graph.num_entities} nodes, {graph.num_triples} edges")
        return

    protected_paths = None
    protected_index = None
    if bench_file:
        bench_records = read_jsonl(bench_file)
        protected_paths, protected_index = decon.protected_sets_from_bench(
            bench_records)

    store, manifest = pipe.run(pcfg, graph,
                               protected_paths=protected_paths,
                               protected_index=protected_index,
                               resume=resume)
    click.echo(f"accepted {manifest['item_count']} items")
    for stage in pipe.FUNNEL_STAGES:
        click.echo(f"  {stage}: {manifest['funnel'][stage]}")
    for reason, count in sorted(manifest["rejections"].items()):
        click.echo(f"  rejected[{reason}]: {count}")


@main.command()
@click.argument("dataset_file", type=click.Path(exists=True))
@click.argument("bench_file", type=click.Path(exists=True))
@click.option("--output", type=click.Path(), required=True,
              help="Retained dataset JSONL.")
@click.option("--report", "report_path", type=click.Path(), required=True,
              help="Removal report JSONL.")
@click.option("--ngram", type=int, default=decon.DEFAULT_NGRAM,
              show_default=True)
@cli_errors
def decontaminate(dataset_file, bench_file, output, report_path, ngram):
    """Remove dataset items colliding with the benchmark."""
    items = read_jsonl(dataset_file)
    bench_records = read_jsonl(bench_file)
    protected_paths, index = decon.protected_sets_from_bench(
        bench_records, n=ngram)
    retained, removals = decon.decontaminate(items, protected_paths, index)
    write_jsonl(output, retained)
    write_jsonl(report_path, [
        {"item_id": removal.item_id, "reason": removal.reason}
        for _, removal in removals
    ])
    click.echo(f"retained {len(retained)}, removed {len(removals)}")


@main.command("build-bench")
@click.argument("graph_file", type=click.Path(exists=True))
@common_options
@click.option("--output", type=click.Path(), required=True)
@click.option("--cache", "cache_path", type=click.Path(), default=None,
              help="Classifier cache JSONL.")
@click.option("--seed", type=int, default=None)
@cli_errors
def build_bench(graph_file, config_path, overrides, output, cache_path, seed):
    """Build a category- and hop-stratified benchmark."""
    config = load_config(config_path, overrides)
    section = config.get("build_bench", {})
    if "taxonomy" not in section or "strata" not in section:
        raise InvalidConfig("build_bench config needs taxonomy and strata")
    taxonomy = bench_mod.Taxonomy(tuple(section["taxonomy"]))
    strata = bench_mod.StrataSpec.from_dict(section["strata"])
    backends = section.get("backends", {})
    for name in ("classifier", "generator", "grader1", "grader2"):
        if name not in backends:
            raise InvalidConfig(f"build_bench backends missing {name!r}")
    run_seed = seed if seed is not None else section.get(
        "seed", config.get("seed", 0))

    graph = _load_graph_from_config(graph_file, config)
    classifier = backend_from_config(backends["classifier"])
    categories = bench_mod.classify_nodes(
        classifier, graph, taxonomy, cache_path=cache_path)
    graph = graph.with_categories(categories)

    generator = backend_from_config(backends["generator"])
    trace_model = (backend_from_config(backends["trace"])
                   if "trace" in backends else None)
    graders = [backend_from_config(backends["grader1"]),
               backend_from_config(backends["grader2"])]
    records = bench_mod.build_bench(
        graph, taxonomy, strata, categories,
        generator=generator, trace_model=trace_model, graders=graders,
        seed=run_seed,
        max_attempts_per_item=section.get("max_attempts_per_item", 50),
        with_traces="trace" in backends,
    )
    for rec in records:
        rec["config_digest"] = config_digest(section)
    write_jsonl(output, records)
    click.echo(f"wrote {len(records)} bench items to {output}")


def _eval_config(section: dict, seed) -> eval_mod.EvalConfig:
    return eval_mod.EvalConfig(
        streams=section.get("streams", 1),
        refinements=section.get("refinements", 0),
        temperature=section.get("temperature", 0.6),
        refinement_phrase=section.get(
            "refinement_phrase", eval_mod.DEFAULT_REFINEMENT_PHRASE),
        seed=seed,
        max_new_tokens=section.get("max_new_tokens", 8192),
        delimiter=section.get("delimiter", eval_mod.DEFAULT_DELIMITER),
    )


@main.command()
@click.argument("bench_file", type=click.Path(exists=True))
@common_options
@click.option("--output", type=click.Path(), required=True,
              help="Report JSON.")
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Accuracy-vs-tokens CSV summary.")
@click.option("--seed", type=int, default=None)
@cli_errors
def evaluate(bench_file, config_path, overrides, output, csv_path, seed):
    """Evaluate a backend on a benchmark with voting and refinement."""
    config = load_config(config_path, overrides)
    section = config.get("evaluate", {})
    if "backend" not in section:
        raise InvalidConfig("evaluate config needs a backend")
    run_seed = seed if seed is not None else section.get(
        "seed", config.get("seed", 0))
    ecfg = _eval_config(section, run_seed)
    backend = backend_from_config(section["backend"])
    report = eval_mod.evaluate(read_jsonl(bench_file), backend, ecfg)
    report["config_digest"] = config_digest(section)
    write_json(output, report)
    if csv_path:
        atomic_write_text(csv_path, eval_mod.report_csv(report))
    click.echo(f"accuracy {report['accuracy']:.4f} over "
               f"{report['n_items']} items")


@main.command()
@click.argument("bench_file", type=click.Path(exists=True))
@common_options
@click.option("--output", type=click.Path(), required=True,
              help="Difficulty JSONL.")
@click.option("--seed", type=int, default=None)
@cli_errors
def difficulty(bench_file, config_path, overrides, output, seed):
    """Estimate per-item pass@1 difficulty and bin assignments."""
    config = load_config(config_path, overrides)
    section = config.get("difficulty", {})
    if "backend" not in section:
        raise InvalidConfig("difficulty config needs a backend")
    run_seed = seed if seed is not None else section.get(
        "seed", config.get("seed", 0))
    backend = backend_from_config(section["backend"])
    records = eval_mod.estimate_difficulty(
        read_jsonl(bench_file), backend,
        samples=section.get("samples", 16),
        cutoffs=tuple(section.get("cutoffs", eval_mod.DEFAULT_BIN_CUTOFFS)),
        config=_eval_config(section, run_seed),
    )
    write_jsonl(output, [
        {"item_id": r.item_id, "pass_at_1": r.pass_at_1,
         "bin": r.bin_index, "successes": r.successes, "samples": r.samples,
         "config_digest": config_digest(section)}
        for r in records
    ])
    click.echo(f"estimated difficulty for {len(records)} items")


@main.command()
@click.argument("bench_file", type=click.Path(exists=True))
@click.argument("results_file", type=click.Path(exists=True))
@common_options
@click.option("--output", type=click.Path(), required=True,
              help="Alignment CSV.")
@cli_errors
def align(bench_file, results_file, config_path, overrides, output):
    """Judge hop-level recall of evaluation traces against their paths."""
    config = load_config(config_path, overrides)
    section = config.get("align", {})
    if "judge" not in section:
        raise InvalidConfig("align config needs a judge backend")
    judge = backend_from_config(section["judge"])
    bench_by_id = {rec["item_id"]: rec for rec in read_jsonl(bench_file)}
    report = read_json(results_file)
    records = []
    for item in report["items"]:
        bench_rec = bench_by_id.get(item["item_id"])
        if bench_rec is None or not item["traces"]:
            continue
        records.append(align_mod.align_item(
            judge, bench_rec, item["traces"][0], item["correct"]))
    rows = align_mod.alignment_report(records)
    atomic_write_text(output, align_mod.alignment_csv(rows))
    click.echo(f"aligned {len(records)} items across "
               f"{len(rows)} hop lengths")


@main.command("export-sft")
@click.argument("dataset_file", type=click.Path(exists=True))
@click.option("--output", type=click.Path(), required=True)
@cli_errors
def export_sft(dataset_file, output):
    """Export the dataset as SFT-ready chat records."""
    count = pipe.export_sft(read_jsonl(dataset_file), output)
    click.echo(f"exported {count} records to {output}")


@main.command("graph-stats")
@click.argument("graph_file", type=click.Path(exists=True))
@common_options
@click.option("--shortest-path-pairs", type=int, default=0,
              help="Sample this many node pairs for the distance histogram.")
@click.option("--seed", type=int, default=0)
@cli_errors
def graph_stats_cmd(graph_file, config_path, overrides, shortest_path_pairs,
                    seed):
    """Node/edge/degree and sampled shortest-path summary."""
    config = load_config(config_path, overrides)
    graph = _load_graph_from_config(graph_file, config)
    rng = random.Random(derive_seed(seed, "graph-stats"))
    stats = graph_stats(graph, rng=rng,
                        shortest_path_pairs=shortest_path_pairs)
    click.echo(json.dumps(stats, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
