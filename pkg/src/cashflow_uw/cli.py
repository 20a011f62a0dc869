"""``cashflow-uw`` command line: one subcommand per pipeline stage.

Stages read and write under ``--out`` (default: the current directory)::

    synth      -> data/                      synthetic statements, forms, labels
    ingest     -> store/applicants.jsonl     validated six-month applicants
    featurize  -> store/features.jsonl       feature store entries
    bin        -> store/woe_table.json, store/split.json
    train      -> registry/models/<version>.json (+ registry entry)
    evaluate   -> reports/evaluate/          results.csv, roc.svg, iv_report.csv, iv.svg
    ablate     -> reports/ablation/
    report     -> reports/summary.json
    serve      HTTP API on the configured address

Exit status: 0 ok, 2 configuration, 3 statements, 4 features, 5 binning,
6 model, 7 experiments, 8 service, 9 other.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from .config import PipelineConfig, reference_now
from .errors import ConfigError, ConvergenceWarning, UnderwritingError
from .features import FEATURE_SET_VERSION, FeatureStore, FeatureStoreEntry, build_feature_vector
from .jsonl import canonical_json, read_jsonl
from .records import ApplicantRecord, parse_month, shift_month

logger = logging.getLogger("cashflow_uw")

COMMANDS = ("synth", "ingest", "featurize", "bin", "train", "evaluate", "ablate", "report", "serve")


# ---------------------------------------------------------------- helpers

def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def _read_json(path: Path, what: str, hint: str):
    if not path.exists():
        raise ConfigError("CONFIG_INVALID", f"missing {what} input {path}; run `{hint}` first", path=str(path))
    return json.loads(path.read_text(encoding="utf-8"))


def _write_provenance(directory: Path, cfg: PipelineConfig, command: str, files) -> None:
    """Sidecar provenance for outputs that cannot embed it (CSV, SVG, JSONL)."""
    doc = dict(cfg.provenance(command), files=sorted(str(Path(f).name) for f in files))
    _write_json(directory / f"provenance.{command}.json", doc)


def as_of_time(cfg: PipelineConfig, months=()) -> str:
    """Timestamp for artifacts: SOURCE_DATE_EPOCH, then run.reference_time, then data-derived.

    Without an explicit time, artifacts are stamped with the first instant
    after the latest statement month, keeping reruns byte-identical.
    """
    ref = cfg.section("run")["reference_time"]
    if os.environ.get("SOURCE_DATE_EPOCH") or ref:
        return reference_now(ref)
    months = [m for m in months if m]
    if not months:
        return reference_now()
    last = max(months, key=parse_month)
    y, m = parse_month(shift_month(last, 1))
    return dt.datetime(y, m, 1, tzinfo=dt.timezone.utc).isoformat(timespec="seconds")


def _stamp(cfg: PipelineConfig, computed_at) -> str:
    """Explicit time if configured, else the latest feature computation time."""
    if os.environ.get("SOURCE_DATE_EPOCH") or cfg.section("run")["reference_time"]:
        return reference_now(cfg.section("run")["reference_time"])
    return max(computed_at)


def _labeled_entries(cfg: PipelineConfig):
    store = FeatureStore(cfg.path("store_dir") / "features.jsonl")
    entries = sorted(store.entries(FEATURE_SET_VERSION), key=lambda e: e.applicant_id)
    if not entries:
        raise ConfigError("CONFIG_INVALID", f"feature store {store.path} is empty; run `featurize` first")
    return [e for e in entries if e.label is not None]


def _split_rows(cfg: PipelineConfig):
    split = _read_json(cfg.path("store_dir") / "split.json", "split", "bin")
    by_id = {e.applicant_id: e for e in _labeled_entries(cfg)}
    try:
        train = [by_id[a] for a in split["train"]]
        valid = [by_id[a] for a in split["validation"]]
    except KeyError as exc:
        raise ConfigError("CONFIG_INVALID", f"split references unknown applicant {exc.args[0]}")
    return train, valid


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: PipelineConfig, args) -> dict:
    from .synth import GeneratorConfig, export_dataset, generate_portfolio

    gen = GeneratorConfig.from_mapping({**cfg.section("synth"), "seed": cfg.seed})
    if args.n is not None:
        gen.n_applicants = args.n
        gen.validate()
    portfolio = generate_portfolio(gen)
    out = export_dataset(portfolio, cfg.path("data_dir"))
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    manifest["provenance"] = cfg.provenance("synth")
    _write_json(out / "manifest.json", manifest)
    return {"data_dir": str(out), "n_applicants": len(portfolio.records), "events": sum(portfolio.labels)}


def cmd_ingest(cfg: PipelineConfig, args) -> dict:
    from .ingest import assemble_applicant, deduplicate, validate_statement
    from .synth import load_raw_dataset, parse_raw

    raw = load_raw_dataset(cfg.path("data_dir"))
    store_dir = cfg.path("store_dir")
    store_dir.mkdir(parents=True, exist_ok=True)
    lines, reports, rejected = [], [], []
    for r in raw:
        try:
            statements = sorted(deduplicate(parse_raw(r)), key=lambda s: parse_month(s.month))
            prev = None
            for s in statements:
                rep = validate_statement(s, prev)
                if rep.flags:
                    reports.append(rep.to_json())
                prev = s
            rec = assemble_applicant(statements, r.form, r.label, applicant_id=r.applicant_id)
        except UnderwritingError as exc:
            if exc.code not in ("STATEMENT_REJECTED", "WRONG_MONTH_COUNT", "NON_CONSECUTIVE_MONTHS",
                                "MIXED_ACCOUNTS"):
                raise
            rejected.append({"applicant_id": r.applicant_id, "error": exc.to_dict()})
            continue
        lines.append(canonical_json(rec.to_dict()))
    (store_dir / "applicants.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    (store_dir / "abnormalities.jsonl").write_text("".join(x + "\n" for x in reports), encoding="utf-8")
    _write_json(store_dir / "rejected.json", {"rejected": rejected, "provenance": cfg.provenance("ingest")})
    _write_provenance(store_dir, cfg, "ingest", ["applicants.jsonl", "abnormalities.jsonl"])
    return {"applicants": len(lines), "rejected": len(rejected), "flagged_statements": len(reports)}


def cmd_featurize(cfg: PipelineConfig, args) -> dict:
    path = cfg.path("store_dir") / "applicants.jsonl"
    if not path.exists():
        raise ConfigError("CONFIG_INVALID", f"missing applicants input {path}; run `ingest` first")
    records = [ApplicantRecord.from_dict(d) for d in read_jsonl(path)]
    at = as_of_time(cfg, [m for r in records for m in r.months])
    store = FeatureStore(cfg.path("store_dir") / "features.jsonl")
    written = skipped = 0
    for rec in records:
        key = (rec.applicant_id, FEATURE_SET_VERSION)
        if key in store:
            skipped += 1
            continue
        vec = build_feature_vector(rec, computed_at=at)
        store.put(FeatureStoreEntry(rec.applicant_id, FEATURE_SET_VERSION, vec, rec.label, at))
        written += 1
    _write_provenance(cfg.path("store_dir"), cfg, "featurize", ["features.jsonl"])
    return {"written": written, "skipped": skipped, "feature_set_version": FEATURE_SET_VERSION}


def cmd_bin(cfg: PipelineConfig, args) -> dict:
    from .experiments import stratified_split
    from .features import CANONICAL_FEATURES, CATEGORICAL_FEATURES
    from .woe import fit_woe_table

    entries = _labeled_entries(cfg)
    y = np.array([e.label for e in entries])
    sp = cfg.section("split")
    tr, va = stratified_split(y, sp["train_fraction"], cfg.seed, sp["stratified"])
    b = cfg.section("binning")
    table = fit_woe_table([entries[i].vector for i in tr], y[tr], CANONICAL_FEATURES, CATEGORICAL_FEATURES,
                          b["k_init"], b["min_bin_count"], b["epsilon"], "train", b["clamp"])
    store_dir = cfg.path("store_dir")
    prov = cfg.provenance("bin")
    _write_json(store_dir / "woe_table.json", {"woe_table": table.to_dict(), "provenance": prov})
    _write_json(store_dir / "split.json", {
        "train": [entries[i].applicant_id for i in tr],
        "validation": [entries[i].applicant_id for i in va],
        "provenance": prov,
    })
    return {"features": len(table.features), "n_train": len(tr), "n_validation": len(va),
            "train_events": int(y[tr].sum()), "validation_events": int(y[va].sum())}


def cmd_train(cfg: PipelineConfig, args) -> dict:
    from .scorecard import train
    from .service.registry import Registry
    from .woe import WoeTable

    doc = _read_json(cfg.path("store_dir") / "woe_table.json", "WoeTable", "bin")
    table = WoeTable.from_dict(doc["woe_table"])
    train_rows, _ = _split_rows(cfg)
    m = cfg.section("model")
    at = _stamp(cfg, [e.vector.computed_at for e in train_rows])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        model = train([e.vector for e in train_rows], [e.label for e in train_rows], table, m["lambda"],
                      m["tol"], int(m["max_iter"]), trained_at=at, thresholds=m["thresholds"],
                      provenance={**cfg.provenance("train"), "woe_table": doc["provenance"]})
    reg_dir = cfg.path("registry_dir")
    path = _write_json(reg_dir / "models" / f"{model.version}.json", model.to_document())
    _write_json(cfg.path("store_dir") / "trained_model.json",
                {"version": model.version, "artifact_hash": model.artifact_hash(),
                 "path": str(Path(cfg.data["paths"]["registry_dir"]) / "models" / f"{model.version}.json"),
                 "provenance": cfg.provenance("train")})
    registry = Registry(reg_dir)
    status = "existing"
    if registry.find_hash(model.artifact_hash()) is None:
        registry.register(model.to_document(), at)
        status = "candidate"
        if registry.champion is None:
            registry.bootstrap(model.version, at)
            status = "champion"
    return {"version": model.version, "artifact": str(path), "artifact_hash": model.artifact_hash(),
            "status": status, "converged": not caught, **{k: v for k, v in model.training_metrics.items()}}


def _trained_model(cfg: PipelineConfig):
    from .scorecard import ScorecardModel

    ptr = _read_json(cfg.path("store_dir") / "trained_model.json", "trained model", "train")
    doc = json.loads((cfg.root / ptr["path"]).read_text(encoding="utf-8"))
    return ScorecardModel.from_document(doc)


def cmd_evaluate(cfg: PipelineConfig, args) -> dict:
    from .experiments import AblationReport, AblationResult, SplitPlan, cv_auroc, iv_ranking, roc_report
    from .features import CANONICAL_FEATURES
    from .metrics import auroc, roc_curve

    model = _trained_model(cfg)
    train_rows, valid_rows = _split_rows(cfg)
    sp = cfg.section("split")
    y_tr = [e.label for e in train_rows]
    y_va = [e.label for e in valid_rows]
    aucs, params, _, _ = cv_auroc("LR", [e.vector for e in train_rows], y_tr, CANONICAL_FEATURES,
                                  sp["fold_count"], cfg.seed, params={"lam": cfg.section("model")["lambda"]})
    scores = model.log_odds_many([e.vector for e in valid_rows])
    res = AblationResult("LR", "combined", float(np.mean(aucs)), aucs, cfg.seed, params,
                         validation_auroc=auroc(y_va, scores), validation_params={"lam": model.lam},
                         curve=roc_curve(y_va, scores))
    plan = SplitPlan(cfg.seed, sp["train_fraction"], sp["stratified"], sp["fold_count"])
    report = AblationReport([res], iv_ranking(model.woe_table), plan, len(train_rows), len(valid_rows))
    out = cfg.path("reports_dir") / "evaluate"
    paths = roc_report(report, out)
    metrics = {"model_version": model.version, "cv_auroc_mean": res.auroc_mean,
               "cv_auroc_per_fold": list(aucs), "validation_auroc": res.validation_auroc,
               "n_train": len(train_rows), "n_validation": len(valid_rows)}
    _write_json(out / "metrics.json", {**metrics, "provenance": cfg.provenance("evaluate")})
    _write_provenance(out, cfg, "evaluate", paths.values())
    return {**metrics, "reports": str(out)}


def cmd_ablate(cfg: PipelineConfig, args) -> dict:
    from .experiments import SplitPlan, roc_report, run_ablation

    entries = _labeled_entries(cfg)
    ex = cfg.section("experiments")
    sp = cfg.section("split")
    trials = ex["trials"] if args.trials is None else args.trials
    kinds = args.models.split(",") if args.models else ex["kinds"]
    plan = SplitPlan(cfg.seed, sp["train_fraction"], sp["stratified"], sp["fold_count"])
    report = run_ablation([e.vector for e in entries], [e.label for e in entries], plan, kinds,
                          ex["feature_sets"], ex["spaces"], trials, ex["inner_folds"])
    out = cfg.path("reports_dir") / "ablation"
    paths = roc_report(report, out)
    summary = [{"model": r.model_kind, "feature_set": r.feature_set, "cv_auroc_mean": r.auroc_mean,
                "validation_auroc": r.validation_auroc} for r in report.results]
    _write_json(out / "summary.json", {"results": summary, "trials": trials,
                                       "provenance": cfg.provenance("ablate")})
    _write_provenance(out, cfg, "ablate", paths.values())
    return {"results": summary, "reports": str(out)}


def cmd_report(cfg: PipelineConfig, args) -> dict:
    from .service.registry import Registry

    reports = cfg.path("reports_dir")
    summary = {"provenance": cfg.provenance("report")}
    registry = Registry(cfg.path("registry_dir"))
    summary["registry"] = registry.state()
    for name in ("evaluate/metrics.json", "ablation/summary.json"):
        p = reports / name
        if p.exists():
            summary[name.split("/")[0]] = json.loads(p.read_text(encoding="utf-8"))
    wt = cfg.path("store_dir") / "woe_table.json"
    if wt.exists():
        from .experiments import iv_ranking
        from .woe import WoeTable

        table = WoeTable.from_dict(json.loads(wt.read_text(encoding="utf-8"))["woe_table"])
        summary["iv_ranking"] = [vars(e) for e in iv_ranking(table)]
    svc = cfg.service()
    log = Path(svc.decision_log)
    log = log if log.is_absolute() else cfg.path("registry_dir") / log
    decisions = read_jsonl(log)
    summary["decisions"] = len(decisions)
    if decisions and registry.champion is not None:
        from .service.monitor import drift_check

        champ = registry.load_model(registry.champion.version)
        window = [d["features"] for d in decisions if d["decision"]["model_version"] == champ.version]
        if window:
            summary["drift"] = drift_check(champ.woe_table, window[-svc.drift_window:], svc.psi_alert,
                                           svc.psi_epsilon, champ.version).to_dict()
    path = _write_json(reports / "summary.json", summary)
    return {"summary": str(path), "sections": sorted(k for k in summary if k != "provenance")}


def cmd_serve(cfg: PipelineConfig, args) -> dict:
    import uvicorn

    from .service.app import create_app

    svc = cfg.service()
    logger.info("canary_fraction=%s", svc.canary_fraction)
    uvicorn.run(create_app(svc), host=svc.host, port=args.port or svc.port, log_level="info")
    return {"stopped": True}


HANDLERS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "featurize": cmd_featurize, "bin": cmd_bin, "train": cmd_train,
    "evaluate": cmd_evaluate, "ablate": cmd_ablate, "report": cmd_report, "serve": cmd_serve,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML pipeline configuration (default: built-in)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", metavar="DIR", default=".", help="workspace root for all stage outputs")
    common.add_argument("--json", action="store_true", help="print a machine-readable JSON result")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="cashflow-uw", description="Cash-flow based MSME credit underwriting.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "synth": "generate a synthetic portfolio into data/",
        "ingest": "parse and validate statements into store/applicants.jsonl",
        "featurize": "compute feature vectors into the feature store",
        "bin": "split the data and fit WOE bins on the training split",
        "train": "fit the scorecard and register it",
        "evaluate": "CV and holdout AUROC of the trained scorecard, with reports",
        "ablate": "feature-group ablation across model kinds, with reports",
        "report": "collect registry, evaluation, IV and drift into reports/summary.json",
        "serve": "run the HTTP decision service",
    }
    cmds = {name: sub.add_parser(name, parents=[common], help=h, description=h) for name, h in helps.items()}
    cmds["synth"].add_argument("--n", type=int, help="override the number of applicants")
    cmds["ablate"].add_argument("--trials", type=int, help="random-search trials per fold (0 = defaults)")
    cmds["ablate"].add_argument("--models", help="comma-separated subset of LR,RF,GB,AB")
    cmds["serve"].add_argument("--port", type=int, help="override service.port")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config, root=args.out)
        if args.seed is not None:
            cfg.set_seed(args.seed)
        result = HANDLERS[args.command](cfg, args)
    except UnderwritingError as exc:
        if args.json:
            print(canonical_json({"ok": False, "error": exc.to_dict()}))
        else:
            print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        if args.json:
            print(canonical_json({"ok": False, "error": {"code": "IO_ERROR", "message": str(exc)}}))
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 9
    if args.json:
        print(canonical_json({"ok": True, "command": args.command, "result": result}))
    else:
        for k, v in result.items():
            print(f"{k}: {v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
