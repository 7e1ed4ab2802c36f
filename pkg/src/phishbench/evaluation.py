"""Experiment protocol: splits, metrics, cross-evaluation, all-vs-one,
zero-shot LLM benchmarking, external test sets, and report export.

Everything is seed-deterministic: per-class shuffles use numpy PCG64
generators seeded by SeedSequence([seed, class_index]) over id-sorted
records, and per-cell model seeds derive from a SHA-256 counter scheme, so
reruns and parallel schedules produce byte-identical reports.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace, asdict
from fractions import Fraction
from pathlib import Path

import numpy as np

from .classifiers import TrainedModel, predict, train
from .corpus import EmailRecord
from .errors import ConfigurationError, EvaluationError
from .features import TfidfConfig, TfidfModel, fit_tfidf, transform_matrix
from .llm import Gateway
from .stats import equivalence_interpretation, welch_ttest

PROTOCOL_RATIO = 0.7
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def derived_seed(*parts) -> int:
    """Stable 31-bit seed from the cell coordinates."""
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


# --------------------------------------------------------------------------
# Stratified split
# --------------------------------------------------------------------------

@dataclass
class SplitPlan:
    seed: int
    train_ids: list[str]
    test_ids: list[str]
    ratio: float
    stratified: bool = True


def _round_half_up(value: Fraction) -> int:
    return int(value + Fraction(1, 2)) if value >= 0 else -int(-value + Fraction(1, 2))


def stratified_split(records: list[EmailRecord], ratio: float = PROTOCOL_RATIO,
                     seed: int = 0) -> SplitPlan:
    """Per-class seeded shuffle; test gets round-half-up((1-ratio)*n), min 1."""
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise EvaluationError("duplicate record ids in corpus")
    by_class: dict[str, list[str]] = {"benign": [], "phishing": []}
    for record in records:
        by_class[record.label].append(record.id)
    test_frac = 1 - Fraction(str(ratio))
    train_ids: list[str] = []
    test_ids: list[str] = []
    for class_index, label in enumerate(("benign", "phishing")):
        class_ids = sorted(by_class[label])
        if len(class_ids) < 2:
            raise EvaluationError(
                f"class {label!r} has {len(class_ids)} records; need at least 2"
            )
        rng = np.random.default_rng([seed, class_index])
        shuffled = [class_ids[i] for i in rng.permutation(len(class_ids))]
        n_test = _round_half_up(test_frac * len(class_ids))
        n_test = min(max(n_test, 1), len(class_ids) - 1)
        test_ids.extend(shuffled[:n_test])
        train_ids.extend(shuffled[n_test:])
    return SplitPlan(seed=seed, train_ids=train_ids, test_ids=test_ids, ratio=ratio)


def split_records(records: list[EmailRecord], plan: SplitPlan):
    by_id = {r.id: r for r in records}
    train = [by_id[i] for i in plan.train_ids]
    test = [by_id[i] for i in plan.test_ids]
    if set(plan.train_ids) & set(plan.test_ids):
        raise EvaluationError("split leaks: train and test ids overlap")
    return train, test


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    invalid_count: int = 0
    seed: int | None = None
    model_id: str = ""
    train_source: str = ""
    test_source: str = ""


def compute_metrics(predictions, gold, *, seed=None, model_id="",
                    train_source="", test_source="") -> MetricsReport:
    """Confusion-matrix arithmetic with phishing as the positive class.

    'invalid' predictions (unparseable LLM verdicts) count as benign
    predictions and are tallied separately, keeping the matrix total.
    """
    if len(predictions) != len(gold):
        raise EvaluationError(
            f"{len(predictions)} predictions vs {len(gold)} gold labels"
        )
    if not gold:
        raise EvaluationError("cannot compute metrics on an empty test set")
    tp = fp = tn = fn = invalid = 0
    for pred, truth in zip(predictions, gold):
        if pred == "invalid":
            invalid += 1
            pred = "benign"
        if pred == "phishing" and truth == "phishing":
            tp += 1
        elif pred == "phishing" and truth == "benign":
            fp += 1
        elif pred == "benign" and truth == "benign":
            tn += 1
        elif pred == "benign" and truth == "phishing":
            fn += 1
        else:
            raise EvaluationError(f"bad label pair ({pred!r}, {truth!r})")
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        tp=tp, fp=fp, tn=tn, fn=fn,
        accuracy=(tp + tn) / total,
        precision=precision, recall=recall, f1=f1,
        invalid_count=invalid, seed=seed, model_id=model_id,
        train_source=train_source, test_source=test_source,
    )


# --------------------------------------------------------------------------
# Experiment 1: cross-evaluation
# --------------------------------------------------------------------------

@dataclass
class CrossEvalMatrix:
    model_family: str
    datasets: list[str]
    reports: dict = field(default_factory=dict)   # (train, test) -> [MetricsReport]
    holes: list = field(default_factory=list)

    def mean_f1(self, train_name: str, test_name: str) -> float:
        cell = self.reports.get((train_name, test_name))
        if not cell:
            raise EvaluationError(f"empty cell ({train_name}, {test_name})")
        return sum(r.f1 for r in cell) / len(cell)

    def avg_drop(self, train_name: str):
        """Mean over off-diagonal columns of (diagonal mean F1 - cell mean F1);
        absent for a 1x1 matrix or when holes leave a cell empty."""
        others = [d for d in self.datasets if d != train_name]
        if not others:
            return None
        try:
            diag = self.mean_f1(train_name, train_name)
            return sum(diag - self.mean_f1(train_name, other)
                       for other in others) / len(others)
        except EvaluationError:
            return None


def _train_cell(datasets, plans, train_name, seed, model_specs, tfidf_config):
    """Fit TF-IDF on one train split, train every family, test everywhere."""
    plan = plans[(train_name, seed)]
    train_records, _ = split_records(datasets[train_name], plan)
    tfidf = fit_tfidf(train_records, tfidf_config,
                      fitted_on={"datasets": [train_name], "seed": seed})
    X = transform_matrix(tfidf, train_records)
    labels = [r.label for r in train_records]
    out = {}
    for spec in model_specs:
        cell_spec = replace(spec, seed=derived_seed(spec.seed, seed, train_name, spec.family))
        model = train(cell_spec, X, labels,
                      fingerprint={"datasets": [train_name], "seed": seed,
                                   "train_ids": list(plan.train_ids)})
        for test_name in datasets:
            _, test_records = split_records(datasets[test_name], plans[(test_name, seed)])
            Xt = transform_matrix(tfidf, test_records)
            preds = predict(model, Xt)
            out[(spec.family, test_name)] = compute_metrics(
                preds, [r.label for r in test_records],
                seed=seed, model_id=spec.family,
                train_source=train_name, test_source=test_name,
            )
    return out


def run_experiment1(datasets: dict[str, list[EmailRecord]], model_specs,
                    seeds=DEFAULT_SEEDS, tfidf_config: TfidfConfig | None = None,
                    jobs: int = 1) -> dict[str, CrossEvalMatrix]:
    """Train-on-rows, test-on-columns cross-evaluation, per model family.

    Cross-dataset cells test on the foreign dataset's test split under the
    same seed, so diagonal and off-diagonal cells share test populations.
    Cell failures become holes; the matrix still completes.
    """
    if not datasets:
        raise EvaluationError("no datasets given")
    families = [spec.family for spec in model_specs]
    if len(set(families)) != len(families):
        raise EvaluationError(f"duplicate model families in {families}")
    plans = {}
    unsplittable = []
    names = []
    for name in datasets:
        try:
            for seed in seeds:
                plans[(name, seed)] = stratified_split(datasets[name], PROTOCOL_RATIO, seed)
            names.append(name)
        except EvaluationError as exc:
            unsplittable.append(f"{name}: {exc}")
    if not names:
        raise EvaluationError(f"no splittable datasets: {unsplittable}")
    matrices = {
        spec.family: CrossEvalMatrix(model_family=spec.family, datasets=names,
                                     holes=list(unsplittable))
        for spec in model_specs
    }
    units = [(train_name, seed) for train_name in names for seed in seeds]

    split_datasets = {name: datasets[name] for name in names}

    def work(unit):
        train_name, seed = unit
        try:
            return unit, _train_cell(split_datasets, plans, train_name, seed,
                                     model_specs, tfidf_config), None
        except Exception as exc:  # cell failure -> hole, matrix completes
            return unit, None, f"{train_name}/seed{seed}: {exc}"

    results = []
    interrupted = False
    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(work, unit) for unit in units]
                try:
                    for future in futures:
                        results.append(future.result())
                except KeyboardInterrupt:
                    # finish in-flight cells, drop the queued ones
                    pool.shutdown(wait=True, cancel_futures=True)
                    results.extend(f.result() for f in futures
                                   if f.done() and not f.cancelled())
                    raise
        else:
            for unit in units:
                results.append(work(unit))
    except KeyboardInterrupt:
        interrupted = True

    for (train_name, _seed), cell, error in results:
        if error is not None:
            for matrix in matrices.values():
                matrix.holes.append(error)
            continue
        for (family, test_name), report in cell.items():
            matrices[family].reports.setdefault((train_name, test_name), []).append(report)
    for matrix in matrices.values():
        if interrupted:
            done = len(results)
            matrix.holes.append(
                f"interrupted: {len(units) - done} of {len(units)} units incomplete")
        for cell in matrix.reports.values():
            cell.sort(key=lambda r: r.seed)
    return matrices


# --------------------------------------------------------------------------
# Experiment 2: all-vs-one
# --------------------------------------------------------------------------

@dataclass
class Experiment2Result:
    holdout: str
    train_datasets: list[str]
    holdout_reports: dict = field(default_factory=dict)      # family -> [reports]
    constituent_reports: dict = field(default_factory=dict)  # family -> [reports]


def run_experiment2(datasets: dict[str, list[EmailRecord]], model_specs,
                    seeds=DEFAULT_SEEDS, holdout: str = "",
                    tfidf_config: TfidfConfig | None = None) -> Experiment2Result:
    """Train on the union of train splits of every dataset except the
    holdout; test on the holdout's test split and, for the Table-3 style
    same-distribution comparison, on each constituent's own test split."""
    if holdout not in datasets:
        raise EvaluationError(f"holdout {holdout!r} not among datasets {list(datasets)}")
    if len(datasets) < 2:
        raise EvaluationError("all-vs-one needs at least 2 datasets")
    train_names = [n for n in datasets if n != holdout]
    result = Experiment2Result(holdout=holdout, train_datasets=train_names)
    for seed in seeds:
        plans = {name: stratified_split(datasets[name], PROTOCOL_RATIO, seed)
                 for name in datasets}
        union_train: list[EmailRecord] = []
        for name in train_names:
            train_records, _ = split_records(datasets[name], plans[name])
            union_train.extend(train_records)
        tfidf = fit_tfidf(union_train, tfidf_config,
                          fitted_on={"datasets": train_names, "seed": seed})
        X = transform_matrix(tfidf, union_train)
        labels = [r.label for r in union_train]
        for spec in model_specs:
            cell_spec = replace(
                spec, seed=derived_seed(spec.seed, seed, "allvsone", holdout, spec.family)
            )
            model = train(cell_spec, X, labels,
                          fingerprint={"datasets": train_names, "seed": seed,
                                       "train_ids": [r.id for r in union_train]})
            _, holdout_test = split_records(datasets[holdout], plans[holdout])
            preds = predict(model, transform_matrix(tfidf, holdout_test))
            result.holdout_reports.setdefault(spec.family, []).append(
                compute_metrics(preds, [r.label for r in holdout_test], seed=seed,
                                model_id=spec.family, train_source="all-but-" + holdout,
                                test_source=holdout)
            )
            for name in train_names:
                _, own_test = split_records(datasets[name], plans[name])
                preds = predict(model, transform_matrix(tfidf, own_test))
                result.constituent_reports.setdefault(spec.family, []).append(
                    compute_metrics(preds, [r.label for r in own_test], seed=seed,
                                    model_id=spec.family,
                                    train_source="all-but-" + holdout, test_source=name)
                )
    return result


def run_diagonal(datasets: dict[str, list[EmailRecord]], model_specs,
                 seeds=DEFAULT_SEEDS, tfidf_config: TfidfConfig | None = None
                 ) -> dict[str, list[MetricsReport]]:
    """Same-dataset protocol only: train split -> own test split, per seed."""
    diagonals: dict[str, list[MetricsReport]] = {}
    for name in datasets:
        for seed in seeds:
            plan = stratified_split(datasets[name], PROTOCOL_RATIO, seed)
            train_records, test_records = split_records(datasets[name], plan)
            tfidf = fit_tfidf(train_records, tfidf_config,
                              fitted_on={"datasets": [name], "seed": seed})
            X = transform_matrix(tfidf, train_records)
            Xt = transform_matrix(tfidf, test_records)
            labels = [r.label for r in train_records]
            for spec in model_specs:
                cell_spec = replace(spec, seed=derived_seed(spec.seed, seed, name,
                                                            spec.family))
                model = train(cell_spec, X, labels,
                              fingerprint={"datasets": [name], "seed": seed})
                diagonals.setdefault(spec.family, []).append(compute_metrics(
                    predict(model, Xt), [r.label for r in test_records],
                    seed=seed, model_id=spec.family,
                    train_source=name, test_source=name))
    return diagonals


def single_vs_allvsone(diagonals, results: list[Experiment2Result]) -> dict[str, dict]:
    """Mean diagonal F1 (Single) vs mean constituent F1 of all-but-one
    models (AllvsOne), per family. ``diagonals`` comes from run_diagonal
    or from run_experiment1 matrices."""
    table = {}
    names = sorted({f for res in results for f in res.constituent_reports})
    for family in names:
        diag_source = diagonals.get(family)
        if isinstance(diag_source, CrossEvalMatrix):
            diag = [diag_source.mean_f1(n, n) for n in diag_source.datasets]
        elif diag_source:
            diag = [r.f1 for r in diag_source]
        else:
            continue
        constituent = [
            r.f1 for res in results for r in res.constituent_reports.get(family, [])
        ]
        if not constituent:
            continue
        table[family] = {
            "single": sum(diag) / len(diag),
            "allvsone": sum(constituent) / len(constituent),
        }
    return table


# --------------------------------------------------------------------------
# Experiment 3: zero-shot LLMs
# --------------------------------------------------------------------------

@dataclass
class Experiment3Result:
    provider_id: str
    metrics: MetricsReport | None
    sample_size: int | None = None
    sample_seed: int | None = None
    skipped: str = ""


def run_experiment3(records: list[EmailRecord], providers,
                    sample: int | None = None, sample_seed: int = 0,
                    gateway_factory=None) -> list[Experiment3Result]:
    """Classify every record (or a seeded subsample) with each provider.

    ``providers`` is a list of Gateway instances or ProviderConfig objects;
    a provider that cannot even be constructed is skipped and recorded.
    """
    if not records:
        raise EvaluationError("experiment-3 needs a non-empty corpus")
    chosen = sorted(records, key=lambda r: r.id)
    if sample is not None and sample < len(chosen):
        rng = np.random.default_rng([sample_seed, len(chosen)])
        picks = rng.choice(len(chosen), size=sample, replace=False)
        chosen = [chosen[i] for i in sorted(picks)]
    results = []
    for provider in providers:
        if isinstance(provider, Gateway):
            gateway = provider
        else:
            try:
                gateway = (gateway_factory or Gateway)(provider)
            except ConfigurationError as exc:
                results.append(Experiment3Result(
                    provider_id=provider.provider_id, metrics=None,
                    skipped=str(exc)))
                continue
        verdicts = [gateway.classify_email(r).label for r in chosen]
        metrics = compute_metrics(
            verdicts, [r.label for r in chosen],
            seed=sample_seed if sample is not None else None,
            model_id=gateway.config.provider_id,
            train_source="zero-shot",
            test_source=f"corpus[n={len(chosen)}]",
        )
        results.append(Experiment3Result(
            provider_id=gateway.config.provider_id, metrics=metrics,
            sample_size=sample, sample_seed=sample_seed if sample is not None else None,
        ))
    return results


# --------------------------------------------------------------------------
# External (test-only) evaluation and the predictions-file contract
# --------------------------------------------------------------------------

def run_on_external_testset(detectors, test_records: list[EmailRecord]) -> list[MetricsReport]:
    """Test-only evaluation: no refit, no leak.

    ``detectors`` entries are (TrainedModel, TfidfModel) pairs or Gateway
    instances. A feature model whose recorded train ids overlap the test
    corpus is refused as a leak.
    """
    if not test_records:
        raise EvaluationError("external test corpus is empty")
    test_ids = {r.id for r in test_records}
    gold = [r.label for r in test_records]
    reports = []
    for detector in detectors:
        if isinstance(detector, Gateway):
            verdicts = [detector.classify_email(r).label for r in test_records]
            reports.append(compute_metrics(
                verdicts, gold, model_id=detector.config.provider_id,
                train_source="zero-shot", test_source="external"))
            continue
        model, tfidf = detector
        train_ids = set(model.training_fingerprint.get("train_ids", ()))
        overlap = train_ids & test_ids
        if overlap:
            raise EvaluationError(
                f"leak: {len(overlap)} test records were in the training split "
                f"of {model.spec.family} (e.g. {sorted(overlap)[:3]})"
            )
        preds = predict(model, transform_matrix(tfidf, test_records))
        reports.append(compute_metrics(
            preds, gold, model_id=model.spec.family,
            train_source=",".join(model.training_fingerprint.get("datasets", [])),
            test_source="external"))
    return reports


def load_predictions_file(path) -> tuple[dict, list[dict]]:
    """Validate and load a predictions file (the fine-tune bridge contract).

    JSONL; optional first-line header object {"__header__": {...}}; every
    other line needs id, label in {phishing, benign}, score in [0, 1].
    """
    header: dict = {}
    rows: list[dict] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvaluationError(f"{path}:{lineno}: not JSON: {exc}") from exc
            if lineno == 1 and isinstance(obj, dict) and "__header__" in obj:
                header = obj["__header__"]
                continue
            for key in ("id", "label", "score"):
                if key not in obj:
                    raise EvaluationError(f"{path}:{lineno}: missing {key!r}")
            if obj["label"] not in ("phishing", "benign"):
                raise EvaluationError(f"{path}:{lineno}: bad label {obj['label']!r}")
            score = obj["score"]
            if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
                raise EvaluationError(f"{path}:{lineno}: score {score!r} outside [0,1]")
            if obj["id"] in seen:
                raise EvaluationError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            rows.append({"id": obj["id"], "label": obj["label"], "score": float(score)})
    return header, rows


def evaluate_predictions_file(test_records: list[EmailRecord], path,
                              model_id: str = "") -> MetricsReport:
    """Score an externally produced predictions file against gold labels.

    The prediction ids must exactly cover the test corpus.
    """
    header, rows = load_predictions_file(path)
    want = {r.id for r in test_records}
    got = {row["id"] for row in rows}
    if got != want:
        missing = sorted(want - got)[:3]
        extra = sorted(got - want)[:3]
        raise EvaluationError(
            f"prediction ids do not cover the test corpus exactly "
            f"(missing {missing}, extra {extra})"
        )
    by_id = {row["id"]: row["label"] for row in rows}
    preds = [by_id[r.id] for r in test_records]
    return compute_metrics(
        preds, [r.label for r in test_records],
        model_id=model_id or str(header.get("model", "external")),
        train_source=str(header.get("train", "external")),
        test_source="predictions-file",
    )


# --------------------------------------------------------------------------
# Export
# --------------------------------------------------------------------------

def _report_row(kind: str, family: str, train: str, test: str, reports) -> dict:
    f1s = [r.f1 for r in reports]
    mean = sum(f1s) / len(f1s)
    std = math.sqrt(sum((v - mean) ** 2 for v in f1s) / (len(f1s) - 1)) if len(f1s) > 1 else 0.0
    return {
        "experiment": kind,
        "model": family,
        "train": train,
        "test": test,
        "seeds": [r.seed for r in reports],
        "f1": f1s,
        "f1_mean": mean,
        "f1_std": std,
        "precision_mean": sum(r.precision for r in reports) / len(reports),
        "recall_mean": sum(r.recall for r in reports) / len(reports),
        "accuracy_mean": sum(r.accuracy for r in reports) / len(reports),
        "invalid_total": sum(r.invalid_count for r in reports),
    }


def export_experiment1(matrices: dict[str, CrossEvalMatrix], out_dir) -> list[Path]:
    """Per-family CSV mirroring the cross-evaluation table layout, plus
    line-delimited full results and a top-2 equivalence t-test."""
    if not matrices:
        raise EvaluationError("nothing to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    rows_jsonl = []
    for family, matrix in sorted(matrices.items()):
        csv_path = out_dir / f"cross_eval_{family.lower()}.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trained_on"] + matrix.datasets + ["avg_drop"])
            for train_name in matrix.datasets:
                row = [train_name]
                for test_name in matrix.datasets:
                    try:
                        row.append(f"{matrix.mean_f1(train_name, test_name):.4f}")
                    except EvaluationError:
                        row.append("")       # hole
                drop = matrix.avg_drop(train_name)
                row.append("" if drop is None else f"{drop:.4f}")
                writer.writerow(row)
        written.append(csv_path)
        for (train_name, test_name), reports in sorted(matrix.reports.items()):
            rows_jsonl.append(_report_row("cross-eval", family, train_name,
                                          test_name, reports))
        if matrix.holes:
            holes_path = out_dir / f"holes_{family.lower()}.json"
            holes_path.write_text(json.dumps(sorted(set(matrix.holes)), indent=2),
                                  encoding="utf-8")
            written.append(holes_path)
    jsonl_path = out_dir / "results.jsonl"
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for row in rows_jsonl:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    written.append(jsonl_path)
    written.extend(_export_top2_equivalence(matrices, out_dir))
    return written


def _export_top2_equivalence(matrices, out_dir) -> list[Path]:
    """Welch t-test between the two families with the highest mean diagonal
    F1 (per-dataset, per-seed samples); both readings reported."""
    samples = {}
    for family, matrix in matrices.items():
        values = [r.f1 for name in matrix.datasets
                  for r in matrix.reports.get((name, name), [])]
        if len(values) >= 2:
            samples[family] = values
    if len(samples) < 2:
        return []
    ranked = sorted(samples, key=lambda f: (-(sum(samples[f]) / len(samples[f])), f))
    first, second = ranked[0], ranked[1]
    try:
        result = welch_ttest(samples[first], samples[second])
    except EvaluationError:
        return []
    payload = {
        "families": [first, second],
        "mean_f1": [sum(samples[first]) / len(samples[first]),
                    sum(samples[second]) / len(samples[second])],
        "n": [len(samples[first]), len(samples[second])],
        "t_statistic": result.t_statistic,
        "degrees_of_freedom": result.degrees_of_freedom,
        **equivalence_interpretation(result),
    }
    path = Path(out_dir) / "top2_equivalence.json"
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return [path]


def export_experiment2(results: list[Experiment2Result], out_dir,
                       single_table: dict | None = None) -> list[Path]:
    if not results:
        raise EvaluationError("nothing to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    families = sorted({f for res in results for f in res.holdout_reports})
    csv_path = out_dir / "all_vs_one.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["holdout"] + families)
        for res in results:
            row = [res.holdout]
            for family in families:
                reports = res.holdout_reports.get(family, [])
                row.append(f"{sum(r.f1 for r in reports) / len(reports):.4f}"
                           if reports else "")
            writer.writerow(row)
    jsonl_path = out_dir / "results.jsonl"
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for res in results:
            for family in sorted(res.holdout_reports):
                fh.write(json.dumps(_report_row(
                    "all-vs-one", family, "all-but-" + res.holdout, res.holdout,
                    res.holdout_reports[family]), ensure_ascii=False) + "\n")
            for family in sorted(res.constituent_reports):
                by_test: dict[str, list] = {}
                for report in res.constituent_reports[family]:
                    by_test.setdefault(report.test_source, []).append(report)
                for test_name in sorted(by_test):
                    fh.write(json.dumps(_report_row(
                        "all-vs-one-constituent", family, "all-but-" + res.holdout,
                        test_name, by_test[test_name]), ensure_ascii=False) + "\n")
    written = [csv_path, jsonl_path]
    if single_table:
        table_path = out_dir / "single_vs_allvsone.csv"
        with open(table_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "single", "allvsone"])
            for family in sorted(single_table):
                writer.writerow([
                    family,
                    f"{single_table[family]['single']:.4f}",
                    f"{single_table[family]['allvsone']:.4f}",
                ])
        written.append(table_path)
    return written


def export_experiment3(results: list[Experiment3Result], out_dir) -> list[Path]:
    if not results:
        raise EvaluationError("nothing to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "llm_eval.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["provider", "f1", "precision", "recall", "accuracy",
                         "invalid_count", "sample_size", "skipped"])
        for res in results:
            if res.metrics is None:
                writer.writerow([res.provider_id, "", "", "", "", "", "", res.skipped])
            else:
                m = res.metrics
                writer.writerow([
                    res.provider_id, f"{m.f1:.4f}", f"{m.precision:.4f}",
                    f"{m.recall:.4f}", f"{m.accuracy:.4f}", m.invalid_count,
                    res.sample_size if res.sample_size is not None else "",
                    "",
                ])
    jsonl_path = out_dir / "results.jsonl"
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for res in results:
            row = {"experiment": "llm-eval", "provider": res.provider_id,
                   "sample_size": res.sample_size, "sample_seed": res.sample_seed,
                   "skipped": res.skipped}
            if res.metrics is not None:
                row["metrics"] = asdict(res.metrics)
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return [csv_path, jsonl_path]
