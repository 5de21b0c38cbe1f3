"""Command-line pipeline: synth, curate, anchors, train, eval, ablate,
dump-embeddings.

Runs are file-driven: a JSON pipeline config supplies every setting with
full defaulting, and each flag overrides exactly one config key. Reports
embed the resolved semantic config (never filesystem paths) so reruns with
identical inputs write identical bytes; the train log is the one exception,
since it records wall-clock timings.

Exit codes: 0 success, 1 validation/usage error (single machine-parsable
line on stderr), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .anchors import TEMPLATE_SETS, anchor_report, build_anchor_set
from .curation import (
    CuratedDataset,
    CurationConfig,
    curate,
    curation_report,
    entries_for_axis,
    load_curation_csv,
    save_curation_csv,
)
from .data import Dataset, load_archive, load_text_archive, save_archive, save_text_archive
from .errors import ConfigError, NonFiniteLossError, ToolkitError
from .evaluation import aggregate_runs, dump_embeddings, evaluate, render_table
from .loss import LossConfig
from .model import load_checkpoint
from .synth import PRESETS, SynthConfig, generate, write_truth
from .train import TrainConfig, run_multi_seed


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved settings for the whole pipeline; 1:1 with the JSON config."""

    target: str = "pneumothorax"
    templates: str = "simple"
    curation: CurationConfig = field(default_factory=lambda: CurationConfig(target="pneumothorax"))
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    target_sensitivity: float = 0.95
    score_mode: str = "difference"
    findings: tuple[str, ...] | None = None
    split: str = "test"

    def __post_init__(self):
        if self.templates not in TEMPLATE_SETS:
            raise ConfigError(f"templates must be one of {tuple(TEMPLATE_SETS)}, got {self.templates!r}")
        if self.curation.target != self.target:
            object.__setattr__(self, "curation", replace(self.curation, target=self.target))

    def to_json(self) -> dict:
        payload = {
            "target": self.target,
            "templates": self.templates,
            "curation": {
                "cap": self.curation.cap,
                "seed": self.curation.seed,
                "background": None if self.curation.background is None else list(self.curation.background),
            },
            "train": {
                "batch_size": self.train.batch_size,
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "hidden": self.train.hidden,
                "seed": self.train.seed,
                "optimizer": self.train.optimizer,
                "plateau_rel_tol": self.train.plateau_rel_tol,
            },
            "loss": {
                "temperature": self.train.loss.temperature,
                "logit_mode": self.train.loss.logit_mode,
                "distill_weight": self.train.loss.distill_weight,
            },
            "eval": {
                "target_sensitivity": self.target_sensitivity,
                "score_mode": self.score_mode,
                "findings": None if self.findings is None else list(self.findings),
                "split": self.split,
            },
            "seeds": list(self.seeds),
        }
        return payload


def pipeline_config_from_json(payload: dict) -> PipelineConfig:
    payload = dict(payload)
    unknown = set(payload) - {"target", "templates", "curation", "train", "loss", "eval", "seeds"}
    if unknown:
        raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
    target = payload.get("target", "pneumothorax")
    cur = dict(payload.get("curation", {}))
    background = cur.get("background")
    curation = CurationConfig(
        target=target,
        cap=cur.get("cap", 4000),
        seed=cur.get("seed", 0),
        background=None if background is None else tuple(background),
    )
    loss_raw = dict(payload.get("loss", {}))
    loss = LossConfig(
        temperature=loss_raw.get("temperature", 0.07),
        logit_mode=loss_raw.get("logit_mode", "scale_by_inverse_tau"),
        distill_weight=loss_raw.get("distill_weight", 1.0),
    )
    tr = dict(payload.get("train", {}))
    train = TrainConfig(
        batch_size=tr.get("batch_size", 128),
        learning_rate=tr.get("learning_rate", 1e-4),
        epochs=tr.get("epochs", 10),
        hidden=tr.get("hidden", 256),
        seed=tr.get("seed", 0),
        optimizer=tr.get("optimizer", "adam"),
        loss=loss,
        plateau_rel_tol=tr.get("plateau_rel_tol", 1e-4),
    )
    ev = dict(payload.get("eval", {}))
    findings = ev.get("findings")
    return PipelineConfig(
        target=target,
        templates=payload.get("templates", "simple"),
        curation=curation,
        train=train,
        seeds=tuple(payload.get("seeds", (1, 2, 3, 4, 5))),
        target_sensitivity=ev.get("target_sensitivity", 0.95),
        score_mode=ev.get("score_mode", "difference"),
        findings=None if findings is None else tuple(findings),
        split=ev.get("split", "test"),
    )


def benchmark_pipeline(target: str = "pneumothorax") -> PipelineConfig:
    """Pipeline settings bundled with the synthetic benchmark: defaults
    everywhere except training runs to full convergence (the loss plateau
    rule fires long before the ranking stops improving at lr 1e-4)."""
    return pipeline_config_from_json(
        {"target": target, "train": {"epochs": 80, "plateau_rel_tol": 0.0}}
    )


def write_json(payload: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_config(args) -> PipelineConfig:
    payload = {}
    if getattr(args, "config", None):
        try:
            payload = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    config = pipeline_config_from_json(payload)
    if getattr(args, "target", None):
        config = replace(config, target=args.target, curation=replace(config.curation, target=args.target))
    if getattr(args, "templates", None):
        config = replace(config, templates=args.templates)
    if getattr(args, "cap", None) is not None:
        config = replace(config, curation=replace(config.curation, cap=args.cap))
    if getattr(args, "curation_seed", None) is not None:
        config = replace(config, curation=replace(config.curation, seed=args.curation_seed))
    train = config.train
    if getattr(args, "seed", None) is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        train = replace(train, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        train = replace(train, batch_size=args.batch_size)
    if getattr(args, "learning_rate", None) is not None:
        train = replace(train, learning_rate=args.learning_rate)
    if getattr(args, "distill_weight", None) is not None:
        train = replace(train, loss=replace(train.loss, distill_weight=args.distill_weight))
    if getattr(args, "logit_mode", None):
        train = replace(train, loss=replace(train.loss, logit_mode=args.logit_mode))
    config = replace(config, train=train)
    if getattr(args, "seeds", None):
        config = replace(config, seeds=tuple(int(s) for s in args.seeds.split(",")))
    if getattr(args, "sens", None) is not None:
        config = replace(config, target_sensitivity=args.sens)
    if getattr(args, "score_mode", None):
        config = replace(config, score_mode=args.score_mode)
    if getattr(args, "findings", None):
        config = replace(config, findings=tuple(args.findings.split(",")))
    if getattr(args, "split", None):
        config = replace(config, split=args.split)
    return config


def _anchor_set(args, config: PipelineConfig, dataset: Dataset):
    text = load_text_archive(args.anchors)
    positives, negatives = TEMPLATE_SETS[config.templates]
    background = None
    if config.curation.background is not None:
        background = tuple(
            n for n in dataset.vocabulary.names if n in set(config.curation.background)
        )
    return build_anchor_set(
        text,
        dataset.vocabulary,
        config.target,
        positive_templates=positives,
        negative_templates=negatives,
        background=background,
    )


def cmd_synth(args) -> int:
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; available: {sorted(PRESETS)}")
        config = PRESETS[args.preset]()
    elif args.config:
        try:
            payload = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        config = SynthConfig.from_json(payload)
    else:
        raise ConfigError("synth needs --preset or --config")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    dataset, text, truth = generate(config)
    out = Path(args.out)
    save_archive(dataset, out / "images")
    save_text_archive(text, out / "text")
    write_truth(truth, out / "truth.json")
    print(f"wrote {len(dataset)} examples and {len(text.prompts)} prompts to {out}")
    return 0


def cmd_curate(args) -> int:
    config = _load_config(args)
    dataset = load_archive(args.archive)
    curated = curate(dataset, config.curation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_curation_csv(curated, out / "curation.csv")
    write_json(curation_report(dataset, config.curation, curated), out / "curation_report.json")
    print(f"curated {len(curated.entries)} examples into {len(curated.bucket_axis)} buckets")
    return 0


def cmd_anchors(args) -> int:
    config = _load_config(args)
    text = load_text_archive(args.anchors)
    positives, negatives = TEMPLATE_SETS[config.templates]
    anchors = build_anchor_set(
        text, text.vocabulary, config.target, positive_templates=positives, negative_templates=negatives
    )
    report = anchor_report(anchors)
    report["templates_set"] = config.templates
    write_json(report, args.out)
    print(f"built {anchors.n_classes} anchors (dim {anchors.d}) for target {anchors.target!r}")
    return 0


def _load_curated(path, anchors) -> CuratedDataset:
    pairs = load_curation_csv(path)
    entries = entries_for_axis(pairs, anchors.class_axis)
    return CuratedDataset(
        target=anchors.target,
        bucket_axis=tuple(anchors.class_axis),
        entries=entries,
        stats=(),
    )


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset = load_archive(args.archive)
    anchors = _anchor_set(args, config, dataset)
    curated = _load_curated(args.curation, anchors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = config.seeds if args.multi_seed else (config.train.seed,)
    results = run_multi_seed(dataset, curated, anchors, config.train, seeds, out)
    for seed, _, log in results:
        payload = log.to_json()
        payload["seed"] = seed
        payload["config"] = config.to_json()
        write_json(payload, out / f"train_log_seed{seed}.json")
        print(
            f"seed {seed}: {len(log.steps)} steps, "
            f"final total loss {log.steps[-1].total:.6f}, "
            f"checkpoint {Path(log.checkpoint_path).name}"
        )
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    dataset = load_archive(args.archive)
    anchors = _anchor_set(args, config, dataset)
    checkpoints = args.checkpoint or []
    if not checkpoints and not args.baseline:
        raise ConfigError("eval needs --checkpoint (repeatable) or --baseline")
    reports = []
    for ckpt in checkpoints or [None]:
        head = None if ckpt is None else load_checkpoint(ckpt)
        reports.append(
            evaluate(
                dataset,
                anchors,
                head=head,
                findings=config.findings,
                target_sensitivity=config.target_sensitivity,
                score_mode=config.score_mode,
                split=config.split,
            )
        )
    payload = reports[0] if len(reports) == 1 else {"runs": reports}
    if len(reports) > 1:
        target_aucs = []
        for report in reports:
            row = next(r for r in report["findings"] if r["finding"] == config.target)
            if row.get("auc") is not None:
                target_aucs.append(row["auc"])
        payload["aggregate"] = aggregate_runs(target_aucs).to_json()
        payload["target"] = config.target
    payload["config"] = config.to_json()
    write_json(payload, args.out)
    print(render_table(reports[0]))
    if len(reports) > 1:
        agg = payload["aggregate"]
        sd = "n/a" if agg["sd"] is None else f"{agg['sd']:.4f}"
        print(f"aggregate over {len(reports)} runs: mean {agg['mean']:.4f} sd {sd}")
    return 0


ABLATION_GRID = (
    {"distill_weight": 0.0, "batch_size": 128, "templates": "simple"},
    {"distill_weight": 1.0, "batch_size": 128, "templates": "simple"},
    {"distill_weight": 10.0, "batch_size": 128, "templates": "simple"},
    {"distill_weight": 1.0, "batch_size": 64, "templates": "simple"},
    {"distill_weight": 1.0, "batch_size": 128, "templates": "simple"},
    {"distill_weight": 1.0, "batch_size": 256, "templates": "simple"},
    {"distill_weight": 1.0, "batch_size": 128, "templates": "complex"},
)


def cmd_ablate(args) -> int:
    config = _load_config(args)
    dataset = load_archive(args.archive)
    seeds = config.seeds if args.multi_seed else (config.train.seed,)
    cache: dict[tuple, list[float]] = {}
    rows = []
    for cell in ABLATION_GRID:
        key = (cell["distill_weight"], cell["batch_size"], cell["templates"])
        if key not in cache:
            cell_config = replace(
                config,
                templates=cell["templates"],
                train=replace(
                    config.train,
                    batch_size=cell["batch_size"],
                    loss=replace(config.train.loss, distill_weight=cell["distill_weight"]),
                ),
            )
            anchors = _anchor_set(args, cell_config, dataset)
            curated = _load_curated(args.curation, anchors)
            aucs = []
            for seed, head, _ in run_multi_seed(dataset, curated, anchors, cell_config.train, seeds):
                report = evaluate(
                    dataset,
                    anchors,
                    head=head,
                    findings=(config.target,),
                    target_sensitivity=config.target_sensitivity,
                    score_mode=config.score_mode,
                    split=config.split,
                )
                row = report["findings"][0]
                if row.get("auc") is None:
                    raise ConfigError(f"target AUC unavailable in ablation cell {key}: {row.get('error')}")
                aucs.append(row["auc"])
            cache[key] = aucs
        aucs = cache[key]
        rows.append(
            {
                "distill_weight": cell["distill_weight"],
                "batch_size": cell["batch_size"],
                "templates": cell["templates"],
                "auc_per_seed": aucs,
                "auc_mean": sum(aucs) / len(aucs),
            }
        )
    payload = {
        "target": config.target,
        "seeds": list(seeds),
        "rows": rows,
        "config": config.to_json(),
    }
    write_json(payload, Path(args.out) / "ablation_report.json")
    print(f"{'weight':>7} {'batch':>6} {'templates':>10} {'mean AUC':>9}")
    for row in rows:
        print(
            f"{row['distill_weight']:>7.1f} {row['batch_size']:>6d} "
            f"{row['templates']:>10} {row['auc_mean']:>9.4f}"
        )
    return 0


def cmd_dump_embeddings(args) -> int:
    config = _load_config(args)
    dataset = load_archive(args.archive)
    head = load_checkpoint(args.checkpoint) if args.checkpoint else None
    rows = dump_embeddings(dataset, head, args.finding, split=config.split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "pc1", "pc2", *(f"e{i}" for i in range(dataset.d))])
        writer.writerows(rows)
    print(f"wrote {len(rows)} embedding rows to {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="protoalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic benchmark archive")
    p.add_argument("--preset", help="bundled benchmark name, e.g. entangled-ptx")
    p.add_argument("--config", help="synth config JSON")
    p.add_argument("--seed", type=int, help="override the generator seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("curate", help="build the curated training cohort")
    p.add_argument("--archive", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--target")
    p.add_argument("--cap", type=int, dest="cap")
    p.add_argument("--seed", type=int, dest="curation_seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("anchors", help="build and report the anchor set")
    p.add_argument("--anchors", required=True, help="text-prompt archive directory")
    p.add_argument("--config")
    p.add_argument("--target")
    p.add_argument("--templates", choices=sorted(TEMPLATE_SETS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("train", help="train the student head")
    p.add_argument("--archive", required=True)
    p.add_argument("--curation", required=True, help="curation.csv from the curate step")
    p.add_argument("--anchors", required=True, help="text-prompt archive directory")
    p.add_argument("--config")
    p.add_argument("--target")
    p.add_argument("--templates", choices=sorted(TEMPLATE_SETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seed list (with --multi-seed)")
    p.add_argument("--multi-seed", action="store_true", help="train one head per config seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--lambda", type=float, dest="distill_weight")
    p.add_argument("--logit-mode", choices=("scale_by_inverse_tau", "scale_by_tau"), dest="logit_mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot evaluation report")
    p.add_argument("--archive", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--checkpoint", action="append", help="repeat to aggregate over runs")
    p.add_argument("--baseline", action="store_true", help="evaluate the frozen teacher")
    p.add_argument("--config")
    p.add_argument("--target")
    p.add_argument("--templates", choices=sorted(TEMPLATE_SETS))
    p.add_argument("--findings", help="comma-separated findings (default: all anchored classes)")
    p.add_argument("--sens", type=float, help="target sensitivity for the operating point")
    p.add_argument("--score-mode", choices=("difference", "softmax"), dest="score_mode")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="hyperparameter grid of fit+evaluate runs")
    p.add_argument("--archive", required=True)
    p.add_argument("--curation", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--config")
    p.add_argument("--target")
    p.add_argument("--seeds")
    p.add_argument("--multi-seed", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-embeddings", help="CSV of ids, labels, 2-D PCA and embeddings")
    p.add_argument("--archive", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--finding", required=True)
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return 1
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except NonFiniteLossError as exc:
        print(f"error: NonFiniteLossError: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: RuntimeFailure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
