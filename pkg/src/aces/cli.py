"""Command-line surface: run experiments, label/validate datasets, report metrics.

Exit codes: 0 success, 2 configuration/usage error, 3 backend failure.
"""

import argparse
import dataclasses
import json
import logging
import random
import shlex
import sys
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from . import sandbox as sandbox_mod
from .archive import ArchiveError, SemanticArchive
from .backends import (
    BackendError,
    MockEmbeddingBackend,
    make_completion_backend,
    make_embedding_backend,
)
from .core import (
    CvtSettings,
    EmbeddingSpaceConfig,
    ExperimentConfig,
    LlmSettings,
    ORIGIN_GENERATED,
    SandboxConfig,
    SemanticVector,
    semantic_from_indices,
)
from .dataset import DatasetError, ingest_p3, load_records, write_records
from .experiment import (
    RunPaused,
    label_dataset,
    prepare_seed_records,
    run_experiment,
    write_metrics_csv,
)
from .metrics import MetricsReport

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config files

def _load_raw_config(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return json.loads(text)
    try:
        import tomllib  # py311+
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text)


def _hydrate(cls, data: dict, context: str):
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - field_names
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    return cls(**data)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML or JSON config file; overrides win over file values."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = _load_raw_config(path)
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        llm = _hydrate(LlmSettings, raw.pop("llm", {}), "llm")
        sandbox = _hydrate(SandboxConfig, raw.pop("sandbox", {}), "sandbox")
        cvt = _hydrate(CvtSettings, raw.pop("cvt", {}), "cvt")
        spaces = [
            _hydrate(EmbeddingSpaceConfig, s, "embedding_spaces")
            for s in raw.pop("embedding_spaces", [])
        ]
        cfg = _hydrate(ExperimentConfig, raw, "config")
    except (TypeError, ValueError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.llm = llm
    cfg.sandbox = sandbox
    cfg.cvt = cvt
    cfg.embedding_spaces = spaces
    return cfg


# ---------------------------------------------------------------------------
# subcommands

def _cmd_run(args) -> int:
    overrides = {
        "mode": args.mode,
        "budget": args.budget,
        "batch_size": args.batch_size,
        "rng_seed": args.seed,
        "train_path": args.train,
        "output_dir": args.out,
    }
    cfg = load_config(args.config, overrides)
    if args.backend:
        cfg.llm.backend = args.backend
    if args.runner:
        cfg.sandbox.runner_command = shlex.split(args.runner)

    backend = make_completion_backend(cfg.llm, cfg.rng_seed)
    embedders = [make_embedding_backend(s) for s in cfg.embedding_spaces]

    if args.resume:
        state, reports = run_experiment(
            cfg, backend=backend, embedders=embedders, resume_path=args.resume
        )
    else:
        if not cfg.train_path:
            raise ConfigError("train_path required (config file or --train)")
        raw = _read_train(cfg.train_path, cfg.max_len_tokens)
        seeds = prepare_seed_records(raw, backend, cfg)
        if not seeds:
            raise ConfigError(f"no seedable records in {cfg.train_path}")
        state, reports = run_experiment(
            cfg, backend=backend, embedders=embedders, seed_records=seeds
        )
    print(
        f"done: mode={state.mode} cycles={state.cycle} calls={state.calls} "
        f"records={len(state.archive)} cells={len(state.archive.cells)} "
        f"out={cfg.output_dir}"
    )
    return EXIT_OK


def _read_train(path, max_len: int):
    path = Path(path)
    if path.suffix == ".jsonl":
        try:
            return load_records(path)
        except (DatasetError, json.JSONDecodeError):
            pass  # fall back to raw dataset parsing
    return ingest_p3(path, max_len=max_len)


def _cmd_label(args) -> int:
    cfg = _light_config(args)
    backend = make_completion_backend(cfg.llm, cfg.rng_seed)
    records = _read_train(args.train, cfg.max_len_tokens)
    labeled = label_dataset(records, backend, cfg)
    done = [r for r in labeled if r.label is not None]
    write_records(args.out, labeled)
    print(f"labeled {len(done)}/{len(records)} records -> {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _light_config(args)
    if args.runner:
        cfg.sandbox.runner_command = shlex.split(args.runner)
    if not cfg.sandbox.runner_command:
        raise ConfigError("a runner command is required (--runner or config)")
    records = _read_train(args.train, cfg.max_len_tokens)
    verdicts = sandbox_mod.validate_batch([r.puzzle for r in records], cfg.sandbox)
    out = []
    for rec, verdict in zip(records, verdicts):
        out.append(dataclasses.replace(rec, verdict=verdict))
    write_records(args.out, out)
    passed = sum(1 for v in verdicts if v.passed)
    print(f"validated {len(records)} records ({passed} pass) -> {args.out}")
    return EXIT_OK


def _light_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig(budget=0)
    if getattr(args, "backend", None):
        cfg.llm.backend = args.backend
    if getattr(args, "seed", None) is not None:
        cfg.rng_seed = args.seed
    return cfg


def _mock_spaces(specs: list[str]) -> list[MockEmbeddingBackend]:
    out = []
    for spec in specs or []:
        name, _, dim = spec.partition(":")
        out.append(MockEmbeddingBackend(name=name, dim=int(dim or 16)))
    return out


def _cmd_metrics(args) -> int:
    archive = SemanticArchive.restore(args.snapshot)
    cells, beyond, valid, valid_beyond = metrics_mod.count_metrics(archive)
    report = MetricsReport(
        cycle=archive.cycle,
        calls=archive.calls,
        cells_discovered=cells,
        cells_beyond_train=beyond,
        valid_puzzles=valid,
        valid_beyond_train=valid_beyond,
    )
    generated = archive.generated_records()
    if generated:
        report.cell_entropy_bits = metrics_mod.cell_entropy(archive)
        for emb in _mock_spaces(args.mock_embed):
            matrix = emb.embed([r.puzzle.canonical_program() for r in generated])
            report.vendi[emb.name] = metrics_mod.vendi_score(matrix)
            if len(generated) >= 2:
                report.mean_pairwise_distance[emb.name] = (
                    metrics_mod.mean_pairwise_distance(matrix)
                )
    blob = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(blob + "\n", encoding="utf-8")
    print(blob)
    return EXIT_OK


def _parse_truth_file(path) -> dict[str, SemanticVector]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    truth = {}
    for rec_id, value in data.items():
        if isinstance(value, str):
            truth[rec_id] = SemanticVector.from_string(value)
        else:
            truth[rec_id] = semantic_from_indices(value)
    return truth


def _cmd_eval_confusion(args) -> int:
    archive = SemanticArchive.restore(args.snapshot)
    truth = _parse_truth_file(args.truth)
    pool = archive.generated_records() or archive.all_records()
    rng = random.Random(args.seed or 0)
    sample = metrics_mod.confusion_sample(pool, n=args.n, rng=rng)
    paired = [(truth[r.id], r.label) for r in sample if r.id in truth]
    if not paired:
        raise ConfigError("no sampled records have ground-truth labels")
    matrices = metrics_mod.confusion_matrices(
        [t for t, _ in paired], [p for _, p in paired]
    )
    payload = {
        "n_sampled": len(sample),
        "n_with_truth": len(paired),
        "skills": [
            {
                "skill": m.skill,
                "tp": m.tp,
                "tn": m.tn,
                "fp": m.fp,
                "fn": m.fn,
                "support_present": m.support_present,
                "support_absent": m.support_absent,
            }
            for m in matrices
        ],
    }
    blob = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(blob + "\n", encoding="utf-8")
    print(blob)
    return EXIT_OK


def _cmd_export(args) -> int:
    if args.what == "csv":
        reports = []
        with open(Path(args.run_dir) / "metrics.jsonl", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    data = json.loads(line)
                    for extra in ("fid", "pass_at_k", "timestamp"):
                        data.pop(extra, None)
                    reports.append(MetricsReport(**data))
        write_metrics_csv(args.out, reports)
        print(f"wrote {args.out} ({len(reports)} rows)")
        return EXIT_OK
    if args.what == "embeddings":
        archive = SemanticArchive.restore(args.snapshot)
        records = archive.all_records()
        embedders = _mock_spaces(args.mock_embed)
        if len(embedders) != 1:
            raise ConfigError("embeddings export needs exactly one --mock-embed space")
        matrix = embedders[0].embed([r.puzzle.canonical_program() for r in records])
        np.save(args.out, matrix)
        ids_path = str(args.out) + ".ids.json"
        Path(ids_path).write_text(json.dumps([r.id for r in records]), encoding="utf-8")
        print(f"wrote {args.out} {matrix.shape} and {ids_path}")
        return EXIT_OK
    if args.what == "finetune":
        archive = SemanticArchive.restore(args.snapshot)
        records = [r for r in archive.all_records() if r.origin == ORIGIN_GENERATED]
        with open(args.out, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps({"text": rec.puzzle.canonical_program()}) + "\n")
        print(f"wrote {args.out} ({len(records)} programs)")
        return EXIT_OK
    raise ConfigError(f"unknown export kind {args.what!r}")


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aces", description="Diversity-driven puzzle generation and evaluation."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--mode", choices=["aces", "elm-semantic", "elm", "static-gen"])
    p_run.add_argument("--budget", type=int)
    p_run.add_argument("--batch-size", type=int, dest="batch_size")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--train")
    p_run.add_argument("--out")
    p_run.add_argument("--backend", choices=["mock", "http", "replay"])
    p_run.add_argument("--runner", help="sandbox runner command (shell-quoted)")
    p_run.add_argument("--resume", help="snapshot file to continue from")
    p_run.set_defaults(func=_cmd_run)

    p_label = sub.add_parser("label", help="label a dataset with the configured backend")
    p_label.add_argument("--train", required=True)
    p_label.add_argument("--out", required=True)
    p_label.add_argument("--config")
    p_label.add_argument("--backend", choices=["mock", "http", "replay"])
    p_label.add_argument("--seed", type=int)
    p_label.set_defaults(func=_cmd_label)

    p_val = sub.add_parser("validate", help="batch-validate a dataset in the sandbox")
    p_val.add_argument("--train", required=True)
    p_val.add_argument("--out", required=True)
    p_val.add_argument("--config")
    p_val.add_argument("--runner")
    p_val.set_defaults(func=_cmd_validate)

    p_met = sub.add_parser("metrics", help="compute a metrics report over a snapshot")
    p_met.add_argument("--snapshot", required=True)
    p_met.add_argument("--out")
    p_met.add_argument("--mock-embed", action="append", metavar="NAME:DIM")
    p_met.set_defaults(func=_cmd_metrics)

    p_conf = sub.add_parser(
        "eval-confusion", help="confusion matrices against a ground-truth label file"
    )
    p_conf.add_argument("--snapshot", required=True)
    p_conf.add_argument("--truth", required=True)
    p_conf.add_argument("--n", type=int, default=60)
    p_conf.add_argument("--seed", type=int, default=0)
    p_conf.add_argument("--out")
    p_conf.set_defaults(func=_cmd_eval_confusion)

    p_exp = sub.add_parser("export", help="export run artifacts for external tooling")
    p_exp.add_argument("what", choices=["csv", "embeddings", "finetune"])
    p_exp.add_argument("--run-dir", dest="run_dir")
    p_exp.add_argument("--snapshot")
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--mock-embed", action="append", metavar="NAME:DIM")
    p_exp.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ArchiveError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, RunPaused) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
