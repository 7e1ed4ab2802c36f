"""Single entry point for the workbench.

Subcommands: ingest, generate, train, predict, cross-eval, all-vs-one,
llm-eval, external-test, report. Every run writes a manifest (resolved
config, seeds, prompt hashes, package version) into its output directory,
sufficient to replay the identical run. Exit codes: 0 success, 1 runtime
failure, 2 usage error, 3 validation error.

A plain-text config file (``key=value`` per line, '#' comments) can seed
defaults for registry/seeds/jobs/providers/out; explicit flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .corpus import (corpus_stats, ingest_dataset, load_canonical,
                     load_descriptors, write_canonical)
from .classifiers import FAMILIES, ModelSpec, TrainedModel, predict, predict_scores, train
from .errors import PhishbenchError, EvaluationError, ConfigurationError
from .evaluation import (export_experiment1, export_experiment2,
                         export_experiment3, evaluate_predictions_file,
                         run_diagonal, run_experiment1, run_experiment2,
                         run_experiment3, run_on_external_testset,
                         single_vs_allvsone)
from .features import TfidfConfig, TfidfModel, fit_tfidf, transform_matrix
from .generator import GenerationConfig, prompt_versions, run_pipeline
from .llm import DETECTION_PROMPT_VERSION, Gateway, ProviderConfig

SPLIT_SCHEME = (
    "stratified per class; ids sorted then shuffled by numpy PCG64 with "
    "SeedSequence([seed, class_index]); test size = round-half-up((1-ratio)*n), min 1"
)


def _read_config_file(path: str | None) -> dict:
    values = {}
    if path:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#") and "=" in line:
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    return values


def _parse_seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip() != ""]


def _parse_models(text: str) -> list[ModelSpec]:
    specs = []
    for token in text.split(","):
        family = token.strip().upper()
        if family not in FAMILIES:
            raise EvaluationError(f"unknown model family {token!r} (choose from {FAMILIES})")
        specs.append(ModelSpec(family))
    return specs


def _load_datasets(spec: str, data_dir: str) -> dict:
    """Parse 'name=path,name' into name -> records; bare names resolve to
    <data-dir>/<name>.jsonl."""
    datasets = {}
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        name, _, path = token.partition("=")
        path = path or str(Path(data_dir) / f"{name}.jsonl")
        datasets[name] = load_canonical(path)
    if not datasets:
        raise EvaluationError("no datasets given")
    return datasets


def _provider_configs(args, temperature: float) -> list[ProviderConfig]:
    registry = {}
    if getattr(args, "provider_registry", ""):
        payload = json.loads(Path(args.provider_registry).read_text(encoding="utf-8"))
        for entry in payload["providers"]:
            registry[entry["provider_id"]] = entry
    configs = []
    for provider_id in args.providers.split(","):
        provider_id = provider_id.strip()
        if not provider_id:
            continue
        entry = dict(registry.get(provider_id, {"provider_id": provider_id}))
        entry.setdefault("temperature", temperature)
        if args.mock_script:
            entry["api"] = "mock"
            entry["script_path"] = args.mock_script
        configs.append(ProviderConfig(**entry))
    if not configs:
        raise EvaluationError("no providers given")
    return configs


def _write_manifest(out_dir: Path, command: str, config: dict, extra: dict | None = None,
                    name: str = "manifest.json"):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "package_version": __version__,
        "split_scheme": SPLIT_SCHEME,
        "config": {k: v for k, v in sorted(config.items()) if k not in ("func",)},
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / name, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _file_manifest(out_file: Path, command: str, config: dict, extra: dict | None = None):
    """Manifest sibling for commands whose --out is a file, not a directory."""
    _write_manifest(out_file.parent, command, config, extra,
                    name=out_file.stem + ".manifest.json")


def _registry_hash(path: str | None) -> str:
    if path:
        blob = Path(path).read_bytes()
    else:
        from importlib import resources
        blob = resources.files("phishbench").joinpath("data/datasets.json").read_bytes()
    return hashlib.sha256(blob).hexdigest()[:12]


# --------------------------------------------------------------------------
# Subcommand implementations
# --------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    registry = load_descriptors(args.registry or None)
    if args.dataset not in registry:
        raise EvaluationError(f"unknown dataset {args.dataset!r}; registry has {sorted(registry)}")
    result = ingest_dataset(args.input, registry[args.dataset])
    write_canonical(result.records, args.out)
    _file_manifest(Path(args.out), "ingest", vars(args),
                   {"registry_sha256": _registry_hash(args.registry or None),
                    "warnings": result.warnings, "rejected": result.rejected})
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    stats = corpus_stats(result.records) if result.records else None
    print(json.dumps({
        "dataset": args.dataset,
        "written": len(result.records),
        "rejected": result.rejected,
        "per_class": stats.per_class if stats else {},
    }))
    return 0


def cmd_generate(args) -> int:
    provider = ProviderConfig(
        provider_id=args.provider,
        temperature=args.temperature,
        api="mock" if args.mock_script else "",
        script_path=args.mock_script,
    )
    config = GenerationConfig(
        country=args.country,
        companies=args.companies,
        employees_per_company=args.employees,
        emails_per_employee=args.emails,
        benign_ratio=args.benign_ratio,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_name(out.stem + ".exchanges.jsonl") if args.exchange_log else None
    if log_path is not None:
        log_path.unlink(missing_ok=True)  # the log belongs to this run
    gateway = Gateway(provider, log_path=log_path)
    report = run_pipeline(config, gateway, out, prompt_dir=args.prompt_dir or None)
    _file_manifest(out, "generate", vars(args),
                   {"prompt_versions": prompt_versions(args.prompt_dir or None)})
    print(json.dumps({"produced": report.produced,
                      "requested": report.requested,
                      "discarded": report.discarded_total()}))
    return 0


def cmd_train(args) -> int:
    records = load_canonical(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tfidf = fit_tfidf(records, TfidfConfig(),
                      fitted_on={"datasets": [args.corpus], "seed": args.seed})
    X = transform_matrix(tfidf, records)
    spec = ModelSpec(args.family.upper(), seed=args.seed)
    model = train(spec, X, [r.label for r in records],
                  fingerprint={"datasets": [args.corpus], "seed": args.seed,
                               "train_ids": [r.id for r in records]})
    tfidf.save(out_dir / "tfidf.json")
    model.save(out_dir / "model.npz")
    _write_manifest(out_dir, "train", vars(args))
    print(json.dumps({"family": spec.family, "dimension": model.feature_dimension,
                      "records": len(records)}))
    return 0


def cmd_predict(args) -> int:
    records = load_canonical(args.corpus)
    model = TrainedModel.load(args.model)
    tfidf = TfidfModel.load(args.tfidf)
    X = transform_matrix(tfidf, records)
    labels = predict(model, X)
    scores = predict_scores(model, X)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        header = {"__header__": {
            "model": model.spec.family,
            "seed": model.spec.seed,
            "train": ",".join(model.training_fingerprint.get("datasets", [])),
        }}
        fh.write(json.dumps(header) + "\n")
        for record, label, score in zip(records, labels, scores):
            fh.write(json.dumps({"id": record.id, "label": label,
                                 "score": float(score)}) + "\n")
    _file_manifest(out, "predict", vars(args))
    print(json.dumps({"predicted": len(records), "out": str(out)}))
    return 0


def cmd_cross_eval(args) -> int:
    datasets = _load_datasets(args.datasets, args.data_dir)
    specs = _parse_models(args.models)
    seeds = _parse_seeds(args.seeds)
    matrices = run_experiment1(datasets, specs, seeds, jobs=args.jobs)
    partial = any(h.startswith("interrupted") for m in matrices.values()
                  for h in m.holes)
    out_dir = Path(args.out)
    written = export_experiment1(matrices, out_dir)
    _write_manifest(out_dir, "cross-eval", vars(args),
                    {"seeds": seeds, "partial": partial,
                     "registry_sha256": _registry_hash(args.registry or None)})
    print(json.dumps({"written": [str(p) for p in written], "partial": partial}))
    return 130 if partial else 0


def cmd_all_vs_one(args) -> int:
    datasets = _load_datasets(args.datasets, args.data_dir)
    specs = _parse_models(args.models)
    seeds = _parse_seeds(args.seeds)
    holdouts = list(datasets) if args.holdout == "all" else [args.holdout]
    results = [run_experiment2(datasets, specs, seeds, holdout=h) for h in holdouts]
    table = None
    if args.single_table:
        diagonals = run_diagonal(datasets, specs, seeds)
        table = single_vs_allvsone(diagonals, results)
    out_dir = Path(args.out)
    written = export_experiment2(results, out_dir, single_table=table)
    _write_manifest(out_dir, "all-vs-one", vars(args), {"seeds": seeds})
    print(json.dumps({"written": [str(p) for p in written]}))
    return 0


def cmd_llm_eval(args) -> int:
    records = load_canonical(args.corpus)
    configs = _provider_configs(args, temperature=0.0)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gateways = []
    results_pre = []
    for config in configs:
        try:
            log = out_dir / f"exchanges_{config.provider_id}.jsonl" if args.exchange_log else None
            if log is not None:
                log.unlink(missing_ok=True)  # the log belongs to this run
            gateways.append(Gateway(config, log_path=log))
        except ConfigurationError as exc:
            from .evaluation import Experiment3Result
            results_pre.append(Experiment3Result(config.provider_id, None, skipped=str(exc)))
    results = results_pre + run_experiment3(
        records, gateways, sample=args.sample, sample_seed=args.sample_seed)
    written = export_experiment3(results, out_dir)
    _write_manifest(out_dir, "llm-eval", vars(args),
                    {"detection_prompt_version": DETECTION_PROMPT_VERSION})
    print(json.dumps({"written": [str(p) for p in written]}))
    return 0


def cmd_external_test(args) -> int:
    records = load_canonical(args.test)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.predictions:
        report = evaluate_predictions_file(records, args.predictions)
        reports = [report]
    else:
        if not (args.model and args.tfidf):
            raise EvaluationError("need --predictions or both --model and --tfidf")
        model = TrainedModel.load(args.model)
        tfidf = TfidfModel.load(args.tfidf)
        reports = run_on_external_testset([(model, tfidf)], records)
    with open(out_dir / "external_test.json", "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in reports], fh, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "external-test", vars(args))
    print(json.dumps([{"model": r.model_id, "f1": round(r.f1, 4)} for r in reports]))
    return 0


def cmd_report(args) -> int:
    """Rebuild CSV summaries from a stored results.jsonl."""
    rows = []
    with open(args.results, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    if not rows:
        raise EvaluationError("results file is empty")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_kind: dict[str, list[dict]] = {}
    for row in rows:
        by_kind.setdefault(row.get("experiment", "unknown"), []).append(row)
    written = []
    for kind, kind_rows in sorted(by_kind.items()):
        path = out_dir / f"summary_{kind.replace('-', '_')}.csv"
        import csv as _csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["model", "train", "test", "f1_mean", "f1_std"])
            for row in sorted(kind_rows, key=lambda r: (str(r.get("model")),
                                                        str(r.get("train")),
                                                        str(r.get("test")))):
                if "f1_mean" in row:
                    writer.writerow([row.get("model"), row.get("train"),
                                     row.get("test"), f"{row['f1_mean']:.4f}",
                                     f"{row['f1_std']:.4f}"])
        written.append(path)
    _write_manifest(out_dir, "report", vars(args))
    print(json.dumps({"written": [str(p) for p in written]}))
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser(defaults: dict) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phishbench",
        description="Phishing-email detection workbench",
    )
    parser.add_argument("--config", help="key=value config file", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    def common_eval(p):
        p.add_argument("--datasets", required=True,
                       help="comma list of name=path (or bare names under --data-dir)")
        p.add_argument("--data-dir", default=defaults.get("data_dir", "data/canonical"))
        p.add_argument("--models", default=defaults.get("models", "lr,nb,rf,svm,mlp"))
        p.add_argument("--seeds", default=defaults.get("seeds", "0,1,2,3,4"))
        p.add_argument("--jobs", type=int,
                       default=int(defaults.get("jobs", str(os.cpu_count() or 1))))
        p.add_argument("--registry", default=defaults.get("registry", ""))
        p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="standardize a source dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--registry", default=defaults.get("registry", ""))
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="run the email-generation pipeline")
    p.add_argument("--country", required=True)
    p.add_argument("--companies", type=int, required=True)
    p.add_argument("--employees", type=int, required=True)
    p.add_argument("--emails", type=int, required=True)
    p.add_argument("--benign-ratio", type=float, default=0.5)
    p.add_argument("--provider", default=defaults.get("provider", "gpt-4o-mini"))
    p.add_argument("--temperature", type=float, default=0.8)
    p.add_argument("--mock-script", default="")
    p.add_argument("--prompt-dir", default=defaults.get("prompt_dir", ""),
                   help="override the packaged prompt templates")
    p.add_argument("--exchange-log", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one detector on a canonical corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write a predictions file for a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--tfidf", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cross-eval", help="experiment 1: cross-dataset matrix")
    common_eval(p)
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("all-vs-one", help="experiment 2: train on all but one")
    common_eval(p)
    p.add_argument("--holdout", required=True, help="dataset name or 'all'")
    p.add_argument("--single-table", action="store_true",
                   help="also compute the single-vs-allvsone comparison")
    p.set_defaults(func=cmd_all_vs_one)

    p = sub.add_parser("llm-eval", help="experiment 3: zero-shot LLM detection")
    p.add_argument("--corpus", required=True)
    p.add_argument("--providers", required=True, help="comma list of provider ids")
    p.add_argument("--provider-registry", default=defaults.get("providers", ""))
    p.add_argument("--mock-script", default="")
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--exchange-log", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_llm_eval)

    p = sub.add_parser("external-test", help="test-only evaluation (no refit)")
    p.add_argument("--test", required=True)
    p.add_argument("--predictions", default="")
    p.add_argument("--model", default="")
    p.add_argument("--tfidf", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_external_test)

    p = sub.add_parser("report", help="rebuild CSV summaries from results.jsonl")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # peek at --config so file values can become parser defaults
    config_path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif token.startswith("--config="):
            config_path = token.split("=", 1)[1]
    try:
        defaults = _read_config_file(config_path)
    except OSError as exc:
        print(f"error: validation: cannot read config: {exc}", file=sys.stderr)
        return 3
    parser = build_parser(defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (EvaluationError, ConfigurationError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return 3
    except PhishbenchError as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
