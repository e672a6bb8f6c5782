"""``ensemble-forge`` command line.

Exit status: 0 on success, 1 on invalid input or arguments, 2 on I/O failure.
Diagnostics go to stderr; data goes to stdout unless ``--out`` is given.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import diversity as div
from . import experiment, fusion, lab, synthetic
from .errors import ForgeError, ManifestIncomplete
from .pool import (
    FoldManifest,
    load_manifest,
    load_prediction_table,
    save_manifest,
    save_prediction_table,
)

SEED_ENV = "ENSEMBLE_FORGE_SEED"


class ForgeGroup(click.Group):
    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
            code = rv if isinstance(rv, int) else 0
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            code = 1
        except click.ClickException as exc:
            exc.show()
            code = 1
        except ForgeError as exc:
            click.echo(f"error: {exc}", err=True)
            code = 1
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            code = 2
        if standalone_mode:
            sys.exit(code)
        return code


def _write(text: str, out: str | None) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _seed_option(f):
    return click.option("--seed", type=int, default=0, show_default=True, envvar=SEED_ENV,
                        help=f"RNG seed (default from ${SEED_ENV}).")(f)


def _umda_options(f):
    f = click.option("--no-clamp", is_flag=True, help="Disable marginal clamping to [1/n, 1-1/n].")(f)
    f = click.option("--gens", type=int, default=100, show_default=True)(f)
    f = click.option("--mu", type=int, default=10, show_default=True)(f)
    f = click.option("--lambda", "lam", type=int, default=40, show_default=True)(f)
    return f


@click.group(cls=ForgeGroup)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Classifier-pool diversity, UMDA ensemble selection and metric-learning lab."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command("diversity")
@click.argument("table")
@click.option("--out", help="Write the matrix CSV here instead of stdout.")
@click.option("--json", "json_out", help="Also write scores and degenerate pairs as JSON.")
def diversity_cmd(table, out, json_out):
    """Pairwise correlation-coefficient matrix of a prediction table."""
    matrix = div.diversity_matrix(load_prediction_table(table))
    _write(matrix.to_csv(), out)
    if json_out:
        Path(json_out).write_text(matrix.to_json(), encoding="utf-8")
    if matrix.degenerate_pairs:
        click.echo(f"{len(matrix.degenerate_pairs)} degenerate pair(s) scored 0", err=True)


def _fold_table(entries, fold, split):
    for e in entries:
        if e.fold_id == fold and e.split == split:
            return load_prediction_table(e.table_path)
    raise ManifestIncomplete(f"manifest has no {split} table for fold {fold}")


@cli.command("select")
@click.option("--manifest", required=True)
@click.option("--fold", type=int, required=True)
@_umda_options
@_seed_option
@click.option("--out", help="Write the result JSON here instead of stdout.")
@click.option("--trace", "trace_out", help="Also write the trace as JSON lines, one per generation.")
def select_cmd(manifest, fold, lam, mu, gens, no_clamp, seed, out, trace_out):
    """UMDA classifier selection on a fold's validation table."""
    val = _fold_table(load_manifest(manifest), fold, "validation")
    trace, config = experiment.select_fold(val, lam, mu, gens, seed, not no_clamp)
    mask = [int(b) for b in trace.best_mask]
    doc = {
        "fold": fold,
        "config": {"n": config.n, "lam": lam, "mu": mu, "generations": gens, "seed": seed,
                   "clamp": not no_clamp},
        "best_mask": mask,
        "selected": [n for n, b in zip(val.classifier_names, mask) if b],
        "validation_fitness": trace.best_fitness,
        "trace": [r.as_dict() for r in trace.records],
    }
    _write(json.dumps(doc, indent=2) + "\n", out)
    if trace_out:
        with open(trace_out, "w", encoding="utf-8") as fh:
            for r in trace.records:
                fh.write(json.dumps(r.as_dict()) + "\n")


@cli.command("fuse")
@click.argument("table")
@click.option("--mask", required=True, help="Bits (1,0,1 or 101) or classifier names (a,b).")
@click.option("--out", help="Predictions CSV path (default stdout).")
@click.option("--summary", help="Accuracy summary JSON path (default stderr).")
def fuse_cmd(table, mask, out, summary):
    """Majority vote of the masked classifiers."""
    t = load_prediction_table(table)
    bits = fusion.parse_mask(mask, t.classifier_names)
    fused = fusion.majority_vote(t, bits)
    lines = ["sample_id,truth,predicted"]
    lines += [f"{i},{y},{p}" for i, y, p in zip(t.sample_ids.tolist(), t.truth.tolist(), fused.tolist())]
    _write("\n".join(lines) + "\n", out)
    doc = {
        "mask": [int(b) for b in bits],
        "selected": [n for n, b in zip(t.classifier_names, bits) if b],
        "accuracy": float(np.mean(fused == t.truth)),
        "num_samples": t.num_samples,
    }
    text = json.dumps(doc, indent=2) + "\n"
    if summary:
        Path(summary).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False, err=True)


def _parse_baselines(items):
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise click.BadParameter(f"expected NAME=VALUE, got {item!r}", param_hint="--baseline")
        out[name] = float(value)
    return out


@cli.command("evaluate")
@click.option("--manifest", required=True)
@_umda_options
@_seed_option
@click.option("--baseline", multiple=True, help="Extra NAME=ACCURACY baseline (fraction).")
@click.option("--format", "fmt", type=click.Choice(["json", "csv", "markdown"]), default="json",
              show_default=True)
@click.option("--out")
def evaluate_cmd(manifest, lam, mu, gens, no_clamp, seed, baseline, fmt, out):
    """MV versus UMDA over every fold of a manifest."""
    report = experiment.run_experiment(load_manifest(manifest), lam, mu, gens, seed, not no_clamp,
                                       _parse_baselines(baseline))
    _write(experiment.emit_report(report, fmt), out)


@cli.command("report")
@click.option("--in", "src", required=True, help="Report produced by 'evaluate' (json or csv).")
@click.option("--format", "fmt", type=click.Choice(["json", "csv", "markdown"]), default="markdown",
              show_default=True)
@click.option("--out")
def report_cmd(src, fmt, out):
    """Re-render a saved report."""
    text = Path(src).read_text(encoding="utf-8")
    src_fmt = "csv" if src.endswith(".csv") else "json"
    _write(experiment.emit_report(experiment.parse_report(text, src_fmt), fmt), out)


# --- lab -----------------------------------------------------------------------

@cli.group("lab")
def lab_group():
    """Synthetic data, embedding training and pool construction."""


def _blob_options(f):
    f = click.option("--separation", type=float, default=10.0, show_default=True,
                     help="Distance between neighbouring class means.")(f)
    f = click.option("--stddev", type=float, default=1.0, show_default=True)(f)
    f = click.option("--per-class", type=int, default=50, show_default=True)(f)
    f = click.option("--dim", type=int, default=2, show_default=True)(f)
    f = click.option("--classes", type=int, default=3, show_default=True)(f)
    return f


def _blobs(classes, dim, per_class, stddev, separation, seed):
    return lab.generate_blobs(lab.BlobSpec(lab.ring_means(classes, dim, separation), stddev,
                                           per_class, seed))


@lab_group.command("gen")
@_blob_options
@_seed_option
@click.option("--out")
def lab_gen(classes, dim, per_class, stddev, separation, seed, out):
    """Gaussian blobs as a label,x0,... CSV."""
    batch = _blobs(classes, dim, per_class, stddev, separation, seed)
    _write(lab.format_embeddings(batch), out)


def _train_options(f):
    f = click.option("--margin", type=float, default=1.0, show_default=True)(f)
    f = click.option("--batch-size", type=int, default=24, show_default=True)(f)
    f = click.option("--lr", type=float, default=None, help="Learning rate (per-loss default).")(f)
    f = click.option("--steps", type=int, default=200, show_default=True)(f)
    f = click.option("--phi", type=float, default=1.0, show_default=True, help="NNGK bandwidth.")(f)
    f = click.option("--alpha", type=float, default=32.0, show_default=True)(f)
    f = click.option("--proxy-margin", type=float, default=0.1, show_default=True)(f)
    f = click.option("--temperature", type=float, default=0.1, show_default=True)(f)
    f = click.option("--st-gamma", type=float, default=0.1, show_default=True)(f)
    f = click.option("--st-lambda", type=float, default=10.0, show_default=True)(f)
    f = click.option("--st-margin", type=float, default=0.01, show_default=True)(f)
    f = click.option("--st-centers", type=int, default=2, show_default=True)(f)
    return f


def _train_config(loss, seed, **kw):
    return lab.TrainConfig(
        loss=loss, learning_rate=kw["lr"], steps=kw["steps"], batch_size=kw["batch_size"],
        seed=seed, margin=kw["margin"], phi=kw["phi"], alpha=kw["alpha"],
        proxy_margin=kw["proxy_margin"], temperature=kw["temperature"], st_gamma=kw["st_gamma"],
        st_lambda=kw["st_lambda"], st_margin=kw["st_margin"], st_centers=kw["st_centers"],
        num_centers=kw.get("centers", 30), head_phi=kw.get("head_phi", 1.0),
        head_k=kw.get("k", 5), weight_steps=kw.get("weight_steps", 0), name=kw.get("name"),
    )


@lab_group.command("train")
@click.option("--data", required=True, help="label,x0,... CSV (e.g. from 'lab gen').")
@click.option("--loss", type=click.Choice(lab.LOSSES), required=True)
@_train_options
@_seed_option
@click.option("--out", help="Trained embeddings CSV (default stdout).")
@click.option("--trace", "trace_out", help="Write the per-step loss trace as JSON.")
def lab_train(data, loss, seed, out, trace_out, **kw):
    """Train free embeddings with one of the six losses."""
    batch = lab.load_embeddings(data)
    result = lab.train_embeddings(batch, _train_config(loss, seed, **kw))
    intra, inter = lab.class_distances(result.embeddings)
    click.echo(f"loss {result.loss_trace[0]:.6g} -> {result.loss_trace[-1]:.6g}; "
               f"mean intra {intra:.4f}, inter {inter:.4f}", err=True)
    _write(lab.format_embeddings(result.embeddings), out)
    if trace_out:
        Path(trace_out).write_text(json.dumps({"loss": result.loss_trace}) + "\n", encoding="utf-8")


def _write_folds(out_dir: Path, tables_by_fold) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for fold, tables in tables_by_fold:
        for split, table in tables.items():
            path = out_dir / f"fold{fold}_{split}.csv"
            save_prediction_table(table, path)
            entries.append(FoldManifest(fold, split, str(path)))
    manifest = out_dir / "manifest.json"
    save_manifest(entries, manifest, relative_to=out_dir)
    return manifest


@lab_group.command("pool")
@click.option("--out-dir", required=True)
@_blob_options
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--losses", default=",".join(lab.LOSSES), show_default=True)
@click.option("--centers", type=int, default=30, show_default=True, help="NNGK head centers.")
@click.option("--head-phi", type=float, default=1.0, show_default=True)
@click.option("--k", type=int, default=5, show_default=True, help="NNGK head neighbours.")
@click.option("--weight-steps", type=int, default=0, show_default=True)
@_train_options
@_seed_option
def lab_pool(out_dir, classes, dim, per_class, stddev, separation, folds, losses, seed, **kw):
    """Train one classifier per loss on each fold and write tables plus a manifest."""
    names = [s.strip() for s in losses.split(",") if s.strip()]
    data = _blobs(classes, dim, per_class, stddev, separation, seed)
    results = []
    for fold, split in enumerate(lab.fold_splits(data.labels, folds, seed)):
        specs = [_train_config(name, seed + 1000 * fold + i, name=name, **kw)
                 for i, name in enumerate(names)]
        splits = {s: data.take(idx) for s, idx in split.items()}
        ids = {s: idx for s, idx in split.items()}
        results.append((fold, lab.build_pool(specs, splits, ids)))
        click.echo(f"fold {fold} done", err=True)
    click.echo(str(_write_folds(Path(out_dir), results)))


@lab_group.command("families")
@click.option("--out-dir", required=True)
@click.option("--samples", type=int, default=1500, show_default=True)
@click.option("--classes", type=int, default=30, show_default=True)
@click.option("--folds", type=int, default=5, show_default=True)
@_seed_option
def lab_families(out_dir, samples, classes, folds, seed):
    """24-classifier pool with three correlated error families, split into folds."""
    pool = synthetic.correlated_family_pool(samples, classes, seed=seed)
    results = [
        (fold, {s: pool.subset(idx) for s, idx in split.items()})
        for fold, split in enumerate(lab.fold_splits(pool.truth, folds, seed))
    ]
    click.echo(str(_write_folds(Path(out_dir), results)))


def main(argv=None):
    return cli.main(args=argv, prog_name="ensemble-forge")


if __name__ == "__main__":
    main()
