"""Command-line front end: ``moveintent <stage> --config cfg.yaml``.

Exit codes: 0 ok, 2 config error, 3 missing or invalid data, 4 numeric
divergence, 5 interrupted (partial) write detected.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .errors import ConfigError, DataError, DivergenceError, PartialWriteError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_PARTIAL = 0, 2, 3, 4, 5


def _options(f):
    f = click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
                     help="YAML or JSON experiment config.")(f)
    f = click.option("--seed", type=int, default=None, help="Override the top-level seed.")(f)
    f = click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
                     help="Override the output directory.")(f)
    f = click.option("--variant", multiple=True, help="Restrict to these variants.")(f)
    f = click.option("--condition", multiple=True,
                     type=click.Choice(["det", "pred", "pred-b", "pred_b"]),
                     help="Restrict to these timing conditions.")(f)
    f = click.option("--jobs", type=int, default=1, show_default=True,
                     help="Worker threads for per-electrode ablation.")(f)
    return f


def _run(stage: str, config_path, seed, out_dir, variant, condition, jobs, **extra) -> None:
    try:
        cfg = pipeline.load_config(config_path, seed=seed, out_dir=out_dir,
                                   variants=list(variant) or None,
                                   conditions=list(condition) or None)
        if stage == "synth":
            for d in pipeline.run_synth(cfg):
                click.echo(str(d))
        elif stage == "events":
            manual = {}
            for item in extra.get("manual") or ():
                sid, _, path = item.partition("=")
                manual[sid] = Path(path)
            for sid, rep in pipeline.run_events(cfg, manual).items():
                click.echo(f"{sid}: recall {rep['recall']:.3f} precision {rep['precision']:.3f} "
                           f"({rep['matched']}/{rep['n_reference']})")
        elif stage == "dataset":
            for c, (tr, te) in pipeline.run_dataset(cfg).items():
                click.echo(f"{c}: train {len(tr)} test {len(te)}")
        elif stage == "train":
            for m in pipeline.run_train(cfg):
                click.echo(f"{m['variant']} {m['condition']}: test {m['test_acc']:.4f} "
                           f"valid {m['valid_acc']:.4f} train {m['train_acc']:.4f}")
        elif stage == "evaluate":
            for r in pipeline.run_evaluate(cfg):
                click.echo(f"{r['variant']} {r['condition']}: accuracy {r['accuracy']:.4f} (n={r['n']})")
        elif stage == "ablate":
            for amap in pipeline.run_ablate(cfg, jobs):
                click.echo(f"original {amap.original_accuracy:.4f} worst-case delta "
                           f"{amap.worst_case_delta:.4f} over {len(amap)} electrodes")
        elif stage == "viz":
            for res in pipeline.run_viz(cfg):
                click.echo(json.dumps({"layer": res.layer, "unit": res.unit, "dead": res.dead,
                                       "final_activation": res.trace[-1]}))
        elif stage == "report":
            click.echo(pipeline.run_report(cfg).text, nl=False)
        elif stage == "all":
            pipeline.run_all(cfg, jobs)
    except PartialWriteError as exc:
        click.echo(f"error: partial write detected: {exc}", err=True)
        sys.exit(EXIT_PARTIAL)
    except ConfigError as exc:
        click.echo(f"error: invalid config: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except DivergenceError as exc:
        click.echo(f"error: training diverged: {exc}", err=True)
        sys.exit(EXIT_DIVERGENCE)
    except (DataError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DATA)


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def main(verbose: int) -> None:
    """Movement-intent decoding experiments from ECoG and video."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _stage(name: str, help_text: str):
    @_options
    def cmd(**kw):
        _run(name, **kw)

    cmd.__doc__ = help_text
    return main.command(name)(cmd)


_stage("synth", "Generate synthetic sessions.")
_stage("dataset", "Build cached train/test sample sets for each condition.")
_stage("train", "Train each variant for each condition; write checkpoints and metrics.json.")
_stage("evaluate", "Re-evaluate saved checkpoints on the cached test sets.")
_stage("ablate", "Single- and all-electrode ablation; writes ablation.csv.")
_stage("viz", "Gradient-ascent visualisation of one convolution unit.")
_stage("report", "Variant x condition accuracy tables.")
_stage("all", "Run every stage in order.")


@main.command("events")
@_options
@click.option("--manual", multiple=True, metavar="SESSION=PATH",
              help="Manual events.jsonl to score a session against instead of its truth file.")
def events_cmd(**kw):
    """Extract movement events and report agreement with reference events."""
    _run("events", **kw)


if __name__ == "__main__":  # pragma: no cover
    main()
