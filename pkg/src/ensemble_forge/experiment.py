"""Cross-validated comparison of MV-of-all against UMDA-selected ensembles."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import umda
from .errors import ClassifierSetMismatch, MalformedFile, ManifestIncomplete
from .fusion import ensemble_accuracy
from .pool import FoldManifest, PredictionTable, accuracies, load_prediction_table

FOLD_FIELDS = (
    "fold",
    "mv_validation_accuracy",
    "mv_test_accuracy",
    "umda_validation_fitness",
    "umda_test_accuracy",
    "umda_mask_size",
    "umda_mask",
)


def relative_gain(new: float, old: float) -> float:
    """Percentage improvement of ``new`` over ``old``."""
    return (new - old) / old * 100.0


@dataclass
class FoldRecord:
    fold: int
    mv_validation_accuracy: float
    mv_test_accuracy: float
    umda_validation_fitness: float
    umda_test_accuracy: float
    umda_mask: tuple

    @property
    def umda_mask_size(self) -> int:
        return int(sum(self.umda_mask))


@dataclass
class ExperimentReport:
    classifier_names: tuple
    folds: list
    baselines: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        """Mean and (population) standard deviation of test accuracy per strategy."""
        if not self.folds:
            raise ManifestIncomplete("report has no folds")
        out = {}
        for key, attr in (("MV", "mv_test_accuracy"), ("UMDA", "umda_test_accuracy")):
            vals = np.array([getattr(f, attr) for f in self.folds])
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
        out["MV"]["mask_size"] = float(len(self.classifier_names))
        out["UMDA"]["mask_size"] = float(np.mean([f.umda_mask_size for f in self.folds]))
        return out

    def gains(self) -> dict:
        agg = self.aggregate()
        umda_mean = agg["UMDA"]["mean"]
        refs = {"MV": agg["MV"]["mean"], **self.baselines}
        return {name: relative_gain(umda_mean, value) for name, value in refs.items()}

    def to_dict(self) -> dict:
        return {
            "classifiers": list(self.classifier_names),
            "config": dict(self.config),
            "baselines": dict(self.baselines),
            "folds": [
                {**{k: v for k, v in asdict(f).items() if k != "umda_mask"},
                 "umda_mask": [int(b) for b in f.umda_mask],
                 "umda_mask_size": f.umda_mask_size}
                for f in self.folds
            ],
            "aggregate": self.aggregate(),
            "relative_gain_umda": self.gains(),
        }


def report_from_dict(doc: dict) -> ExperimentReport:
    try:
        folds = [
            FoldRecord(
                fold=int(f["fold"]),
                mv_validation_accuracy=float(f["mv_validation_accuracy"]),
                mv_test_accuracy=float(f["mv_test_accuracy"]),
                umda_validation_fitness=float(f["umda_validation_fitness"]),
                umda_test_accuracy=float(f["umda_test_accuracy"]),
                umda_mask=tuple(int(b) for b in f["umda_mask"]),
            )
            for f in doc["folds"]
        ]
        return ExperimentReport(tuple(doc["classifiers"]), folds,
                                {k: float(v) for k, v in doc.get("baselines", {}).items()},
                                dict(doc.get("config", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"not a report document: {exc}") from None


def _fold_tables(entries, fold):
    by_split = {e.split: e.table_path for e in entries if e.fold_id == fold}
    missing = [s for s in ("validation", "test") if s not in by_split]
    if missing:
        raise ManifestIncomplete(f"fold {fold} lacks {', '.join(missing)} table(s)")
    val = load_prediction_table(by_split["validation"])
    test = load_prediction_table(by_split["test"])
    if val.classifier_names != test.classifier_names:
        raise ClassifierSetMismatch(f"fold {fold}: validation and test classifiers differ")
    return val, test


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1, dtype=np.uint64)[0])


def select_fold(validation: PredictionTable, lam=40, mu=10, generations=100, seed=0, clamp=True):
    """Run UMDA on a validation table; returns (trace, config)."""
    config = umda.UmdaConfig(validation.num_classifiers, lam, mu, generations, seed, clamp)
    return umda.run(config, umda.ensemble_fitness(validation)), config


def evaluate_fold(fold: int, validation: PredictionTable, test: PredictionTable, lam=40, mu=10,
                  generations=100, seed=0, clamp=True) -> FoldRecord:
    if validation.classifier_names != test.classifier_names:
        raise ClassifierSetMismatch(f"fold {fold}: validation and test classifiers differ")
    full = np.ones(validation.num_classifiers, dtype=np.int8)
    trace, _ = select_fold(validation, lam, mu, generations, fold_seed(seed, fold), clamp)
    mask = trace.best_mask
    return FoldRecord(
        fold=fold,
        mv_validation_accuracy=ensemble_accuracy(validation, full),
        mv_test_accuracy=ensemble_accuracy(test, full),
        umda_validation_fitness=trace.best_fitness,
        umda_test_accuracy=ensemble_accuracy(test, mask) if mask.any() else 0.0,
        umda_mask=tuple(int(b) for b in mask),
    )


def run_experiment(entries, lam=40, mu=10, generations=100, seed=0, clamp=True,
                   baselines: dict | None = None) -> ExperimentReport:
    """Evaluate every fold of a manifest.

    Besides MV and UMDA, the report carries a ``best_single`` baseline: the
    mean test accuracy of the classifier with the best mean test accuracy
    across folds. Extra named baselines can be supplied.
    """
    entries = list(entries)
    if not all(isinstance(e, FoldManifest) for e in entries):
        raise MalformedFile("run_experiment expects FoldManifest entries")
    fold_ids = sorted({e.fold_id for e in entries})
    if not fold_ids:
        raise ManifestIncomplete("manifest lists no folds")
    records, test_accs, names = [], [], None
    for fold in fold_ids:
        val, test = _fold_tables(entries, fold)
        if names is None:
            names = val.classifier_names
        elif val.classifier_names != names:
            raise ClassifierSetMismatch(f"fold {fold} has a different classifier set")
        records.append(evaluate_fold(fold, val, test, lam, mu, generations, seed, clamp))
        test_accs.append(accuracies(test))
    per_classifier = np.mean(test_accs, axis=0)
    all_baselines = {"best_single": float(per_classifier.max())}
    all_baselines.update(baselines or {})
    config = {"lam": lam, "mu": mu, "generations": generations, "seed": seed, "clamp": clamp,
              "best_single_classifier": names[int(np.argmax(per_classifier))]}
    return ExperimentReport(names, records, all_baselines, config)


# --- serialisation -----------------------------------------------------------

def _pct(x):
    return f"{100.0 * x:.2f}"


def _to_markdown(report: ExperimentReport) -> str:
    agg = report.aggregate()
    lines = ["| Strategy | Accuracy (%) |", "|---|---|"]
    for name in ("MV", "UMDA"):
        a = agg[name]
        lines.append(f"| {name} | {_pct(a['mean'])} ± {_pct(a['std'])} [{a['mask_size']:g}] |")
    lines += ["", "| Baseline | Accuracy (%) |", "|---|---|"]
    for name, value in report.baselines.items():
        lines.append(f"| {name}* | {_pct(value)} |")
    lines += ["", "| Relative gain of UMDA over | Gain (%) |", "|---|---|"]
    for name, gain in report.gains().items():
        lines.append(f"| {name} | {gain:.2f} |")
    lines += ["", "| Fold | MV val | MV test | UMDA val | UMDA test | UMDA size |",
              "|---|---|---|---|---|---|"]
    for f in report.folds:
        lines.append(f"| {f.fold} | {_pct(f.mv_validation_accuracy)} | {_pct(f.mv_test_accuracy)} | "
                     f"{_pct(f.umda_validation_fitness)} | {_pct(f.umda_test_accuracy)} | "
                     f"[{f.umda_mask_size}] |")
    return "\n".join(lines) + "\n"


def _to_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FOLD_FIELDS)
    for f in report.folds:
        w.writerow([f.fold, f"{f.mv_validation_accuracy:.6f}", f"{f.mv_test_accuracy:.6f}",
                    f"{f.umda_validation_fitness:.6f}", f"{f.umda_test_accuracy:.6f}",
                    f.umda_mask_size, "".join(str(b) for b in f.umda_mask)])
    w.writerow(["#classifiers", *report.classifier_names])
    for name, value in report.baselines.items():
        w.writerow(["#baseline", name, f"{value:.6f}"])
    for key, value in report.config.items():
        w.writerow(["#config", key, json.dumps(value)])
    return buf.getvalue()


def emit_report(report: ExperimentReport, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return _to_csv(report)
    if fmt == "markdown":
        return _to_markdown(report)
    raise MalformedFile(f"unknown report format {fmt!r}")


def parse_report(text: str, fmt: str = "json") -> ExperimentReport:
    if fmt == "json":
        try:
            return report_from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise MalformedFile(f"invalid report JSON: {exc}") from None
    if fmt != "csv":
        raise MalformedFile(f"cannot parse reports in format {fmt!r}")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != FOLD_FIELDS:
        raise MalformedFile("report CSV header not recognised")
    folds, names, baselines, config = [], (), {}, {}
    for row in rows[1:]:
        if not row:
            continue
        if row[0] == "#classifiers":
            names = tuple(row[1:])
        elif row[0] == "#baseline":
            baselines[row[1]] = float(row[2])
        elif row[0] == "#config":
            config[row[1]] = json.loads(row[2])
        else:
            folds.append({**dict(zip(FOLD_FIELDS, row)), "umda_mask": [int(c) for c in row[6]]})
    return report_from_dict({"classifiers": names, "folds": folds, "baselines": baselines,
                             "config": config})
