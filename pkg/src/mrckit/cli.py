"""Command-line surface: ingest/stats/convert, LM training, weight scoring,
schedule dry-runs, training, evaluation and the mixture-ratio sweep.

Configuration is a single INI file; ``--seed`` and ``--deterministic`` flags
override the corresponding file keys. Every run writes one ``manifest.json``
into its output directory recording the command, the config snapshot, input
file digests and output paths. Exit codes: 0 success, 2 input error,
3 numeric error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, corpus, lm, weighting
from .corpus import TaskDataset, load_dataset, save_dataset, tokenize
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    ParseError,
    ScheduleError,
    ToolkitError,
    TrainingError,
)
from .model import model_from_checkpoint, save_checkpoint
from .scheduler import dump_schedules, schedule_mixture, schedule_simple
from .trainer import (
    _STREAM_DATA,
    _STREAM_SCHEDULE,
    TrainConfig,
    evaluate,
    train,
)
from .weighting import TaskModels, assign_weights, write_score_tsv

_FORMATS = (corpus.SPAN_JSON, corpus.CLOZE_JSON)


# --- config file ---


@dataclass
class AuxSpec:
    name: str
    path: str
    fmt: str
    dev: str | None = None


@dataclass
class RunConfig:
    path: str
    target: str
    target_format: str
    target_dev: str | None
    max_passage_tokens: int
    aux: list[AuxSpec]
    train: TrainConfig
    lm_order: int
    lm_add_k: float
    lm_vocab_size: int
    sweep_alphas: list[float]
    snapshot: dict = field(default_factory=dict)


def _get(cp, section, key, default, cast, path):
    if not cp.has_option(section, key):
        if default is _REQUIRED:
            raise ConfigError(f"{path}: missing required key {section}.{key}")
        return default
    raw = cp.get(section, key)
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"{path}: {section}.{key}: {exc}") from exc


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _format(raw: str) -> str:
    if raw not in _FORMATS:
        raise ValueError(f"expected one of {_FORMATS}, got {raw!r}")
    return raw


_REQUIRED = object()


def load_config(path: str) -> RunConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if not cp.has_section("data"):
        raise ConfigError(f"{path}: missing [data] section")

    aux = []
    for section in cp.sections():
        if not section.startswith("aux:"):
            continue
        aux.append(
            AuxSpec(
                name=section[len("aux:"):],
                path=_get(cp, section, "path", _REQUIRED, str, path),
                fmt=_get(cp, section, "format", corpus.SPAN_JSON, _format, path),
                dev=_get(cp, section, "dev", None, str, path),
            )
        )

    alpha = _get(cp, "train", "alpha", None, float, path) if cp.has_option("train", "alpha") else None
    train_cfg = TrainConfig(
        batch_size=_get(cp, "train", "batch_size", 32, int, path),
        lr=_get(cp, "train", "lr", 0.002, float, path),
        dropout=_get(cp, "train", "dropout", 0.3, float, path),
        epochs=_get(cp, "train", "epochs", 50, int, path),
        mode=_get(cp, "train", "mode", "none", str, path),
        alpha=alpha,
        seed=_get(cp, "train", "seed", 0, int, path),
        ema_decay=_get(cp, "train", "ema_decay", 0.995, float, path),
        emb_dim=_get(cp, "model", "emb_dim", 16, int, path),
        hidden_dim=_get(cp, "model", "hidden_dim", 16, int, path),
        steps=_get(cp, "model", "steps", 5, int, path),
        enc_layers=_get(cp, "model", "enc_layers", 1, int, path),
        vocab_size=_get(cp, "model", "vocab_size", 50000, int, path),
        max_span_len=_get(cp, "train", "max_span_len", 30, int, path),
        grad_clip=_get(cp, "train", "grad_clip", 5.0, float, path),
        deterministic=_get(cp, "train", "deterministic", False, _bool, path),
    )

    alphas_raw = _get(cp, "sweep", "alphas", "0, 0.25, 0.5, 1.0", str, path) if cp.has_section("sweep") else "0, 0.25, 0.5, 1.0"
    try:
        sweep_alphas = [float(a) for a in alphas_raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{path}: sweep.alphas: {exc}") from exc

    snapshot = {section: dict(cp.items(section)) for section in cp.sections()}
    return RunConfig(
        path=path,
        target=_get(cp, "data", "target", _REQUIRED, str, path),
        target_format=_get(cp, "data", "target_format", corpus.SPAN_JSON, _format, path),
        target_dev=_get(cp, "data", "target_dev", None, str, path),
        max_passage_tokens=_get(cp, "data", "max_passage_tokens", corpus.DEFAULT_MAX_PASSAGE_TOKENS, int, path),
        aux=aux,
        train=train_cfg,
        lm_order=_get(cp, "lm", "order", lm.DEFAULT_ORDER, int, path),
        lm_add_k=_get(cp, "lm", "add_k", lm.DEFAULT_ADD_K, float, path),
        lm_vocab_size=_get(cp, "lm", "vocab_size", lm.DEFAULT_VOCAB_SIZE, int, path),
        sweep_alphas=sweep_alphas,
        snapshot=snapshot,
    )


def _apply_overrides(run_cfg: RunConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        run_cfg.train.seed = args.seed
        run_cfg.snapshot.setdefault("train", {})["seed"] = str(args.seed)
    if getattr(args, "deterministic", False):
        run_cfg.train.deterministic = True
        run_cfg.snapshot.setdefault("train", {})["deterministic"] = "true"


# --- manifest ---


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out_dir, command, seed, config_snapshot, inputs, outputs, started):
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config_snapshot,
        "inputs": {p: _sha256(p) for p in sorted(set(inputs)) if os.path.exists(p)},
        "outputs": sorted(outputs),
        "wall_ms": (time.perf_counter() - started) * 1000.0,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _out_dir(args, command: str) -> str:
    out = args.out or os.path.join("runs", command)
    os.makedirs(out, exist_ok=True)
    return out


def _args_snapshot(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# --- dataset/model loading helpers ---


def _load_training_tasks(run_cfg: RunConfig):
    target = load_dataset(run_cfg.target, run_cfg.target_format, 1, run_cfg.max_passage_tokens)
    auxiliaries = []
    for i, spec in enumerate(run_cfg.aux, start=2):
        auxiliaries.append(load_dataset(spec.path, spec.fmt, i, run_cfg.max_passage_tokens))
    return target, auxiliaries


def _load_dev_tasks(run_cfg: RunConfig):
    if run_cfg.target_dev is None:
        raise ConfigError(f"{run_cfg.path}: data.target_dev is required for training")
    dev = load_dataset(run_cfg.target_dev, run_cfg.target_format, 1, run_cfg.max_passage_tokens)
    dev_aux = {}
    for i, spec in enumerate(run_cfg.aux, start=2):
        if spec.dev:
            dev_aux[i] = load_dataset(spec.dev, spec.fmt, i, run_cfg.max_passage_tokens)
    return dev, dev_aux


def _train_task_models(run_cfg: RunConfig, datasets) -> dict[int, TaskModels]:
    models = {}
    for ds in datasets:
        if not ds.samples:
            raise TrainingError(f"task {ds.task_id}: cannot train models on an empty dataset")
        questions = [weighting.question_words(s) for s in ds.samples]
        lengths = [weighting.answer_length(s) for s in ds.samples]
        models[ds.task_id] = TaskModels(
            question_lm=lm.train_question_lm(
                questions, run_cfg.lm_order, run_cfg.lm_vocab_size, run_cfg.lm_add_k
            ),
            answer_model=lm.train_answer_length_model(lengths),
        )
    return models


def _data_input_paths(run_cfg: RunConfig, with_dev: bool) -> list[str]:
    paths = [run_cfg.path, run_cfg.target]
    paths.extend(spec.path for spec in run_cfg.aux)
    if with_dev:
        if run_cfg.target_dev:
            paths.append(run_cfg.target_dev)
        paths.extend(spec.dev for spec in run_cfg.aux if spec.dev)
    return paths


# --- subcommands ---


def cmd_ingest(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "ingest")
    ds = load_dataset(args.input, args.format, args.task_id, args.max_passage_tokens)
    out_path = os.path.join(out, "dataset.json")
    save_dataset(ds, out_path)
    print(json.dumps({"samples": len(ds.samples), "output": out_path}))
    _write_manifest(out, "ingest", None, _args_snapshot(args) | {"out": out}, [args.input], [out_path], started)
    return 0


def cmd_stats(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "stats")
    ds = load_dataset(args.input, args.format, args.task_id, args.max_passage_tokens)
    print(json.dumps(asdict(ds.stats), sort_keys=True))
    _write_manifest(out, "stats", None, _args_snapshot(args) | {"out": out}, [args.input], [], started)
    return 0


def cmd_convert_span(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "convert-span")
    records = corpus._load_json_list(args.input)
    converted, dropped = [], 0
    for i, obj in enumerate(records):
        if not isinstance(obj, dict):
            raise ParseError(f"{args.input}: entry {i} is not an object")
        sample_id = str(obj.get("id", i))
        for key in ("question", "passage", "answer_text"):
            if not isinstance(obj.get(key), str):
                raise ParseError(f"{args.input}: sample {sample_id!r} missing field {key!r}")
        sample = corpus.Sample(
            sample_id, 1, tokenize(obj["question"]), tokenize(obj["passage"]),
            corpus.FreeText(tokenize(obj["answer_text"])),
        )
        aligned = corpus.convert_generative_to_span(sample, args.threshold)
        if aligned is None:
            dropped += 1
            continue
        converted.append(
            {
                "id": sample_id,
                "question": obj["question"],
                "passage": obj["passage"],
                "answer_begin": aligned.answer.begin,
                "answer_end": aligned.answer.end,
            }
        )
    out_path = os.path.join(out, "converted.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(converted, fh, ensure_ascii=False, indent=1)
    print(json.dumps({"kept": len(converted), "dropped": dropped, "output": out_path}))
    _write_manifest(out, "convert-span", None, _args_snapshot(args) | {"out": out}, [args.input], [out_path], started)
    return 0


def cmd_train_lm(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "train-lm")
    run_cfg = load_config(args.config)
    target, auxiliaries = _load_training_tasks(run_cfg)
    models = _train_task_models(run_cfg, [target, *auxiliaries])
    outputs = []
    for task_id, task_models in sorted(models.items()):
        lm_path = os.path.join(out, f"question_lm_task{task_id}.json")
        alm_path = os.path.join(out, f"answer_model_task{task_id}.json")
        lm.save_question_lm(task_models.question_lm, lm_path)
        lm.save_answer_length_model(task_models.answer_model, alm_path)
        outputs.extend([lm_path, alm_path])
    print(json.dumps({"tasks": sorted(models), "outputs": outputs}))
    _write_manifest(out, "train-lm", run_cfg.train.seed, run_cfg.snapshot,
                    _data_input_paths(run_cfg, False), outputs, started)
    return 0


def cmd_weights(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "weights")
    run_cfg = load_config(args.config)
    target, auxiliaries = _load_training_tasks(run_cfg)
    tsv_path = os.path.join(out, "weights.tsv")
    if not auxiliaries:
        with open(tsv_path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(weighting.TSV_HEADER) + "\n")
        print("warning: no auxiliary tasks configured; wrote an empty table", file=sys.stderr)
        _write_manifest(out, "weights", run_cfg.train.seed, run_cfg.snapshot,
                        _data_input_paths(run_cfg, False), [tsv_path], started)
        return 0
    models = _train_task_models(run_cfg, [target, *auxiliaries])
    table = assign_weights(target, auxiliaries, models)
    write_score_tsv(table, tsv_path)

    for ds in [target, *auxiliaries]:
        print(f"task {ds.task_id}: mean CED' = {table.task_mean_weight(ds.task_id):.6f} "
              f"({len(ds.samples)} samples)")
    aux_rows = sorted(table.aux_rows(), key=lambda r: (-r.ced_prime, r.task_id, r.sample_id))
    print("highest weighted auxiliary samples:")
    for r in aux_rows[:5]:
        print(f"  task {r.task_id} {r.sample_id}: CED'={r.ced_prime:.6f}")
    print("lowest weighted auxiliary samples:")
    for r in aux_rows[-5:]:
        print(f"  task {r.task_id} {r.sample_id}: CED'={r.ced_prime:.6f}")
    _write_manifest(out, "weights", run_cfg.train.seed, run_cfg.snapshot,
                    _data_input_paths(run_cfg, False), [tsv_path], started)
    return 0


def cmd_schedule(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "schedule")
    run_cfg = load_config(args.config)
    _apply_overrides(run_cfg, args)
    cfg = run_cfg.train
    cfg.validate()
    target, auxiliaries = _load_training_tasks(run_cfg)
    datasets = [target, *auxiliaries]
    out_path = os.path.join(out, "schedule.tsv")
    with open(out_path, "w", encoding="utf-8") as fh:
        for epoch in range(1, args.epochs + 1):
            counts = {}
            for ds in datasets:
                rng = np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, _STREAM_DATA, epoch, ds.task_id])
                )
                counts[ds.task_id] = len(corpus.make_minibatches(ds, cfg.batch_size, rng))
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _STREAM_SCHEDULE, epoch]))
            if cfg.mode == "mixture":
                schedule = schedule_mixture(counts, cfg.alpha, rng, epoch=epoch, seed=cfg.seed)
            else:
                schedule = schedule_simple(counts, rng, epoch=epoch, seed=cfg.seed)
            dump_schedules([schedule], fh)
    print(json.dumps({"epochs": args.epochs, "output": out_path}))
    _write_manifest(out, "schedule", cfg.seed, run_cfg.snapshot,
                    _data_input_paths(run_cfg, False), [out_path], started)
    return 0


def _run_training(run_cfg: RunConfig, cfg: TrainConfig):
    target, auxiliaries = _load_training_tasks(run_cfg)
    dev, dev_aux = _load_dev_tasks(run_cfg)
    if cfg.mode == "ced" and auxiliaries:
        models = _train_task_models(run_cfg, [target, *auxiliaries])
        assign_weights(target, auxiliaries, models)
    return train(target, auxiliaries, cfg, dev, dev_aux), target, auxiliaries, dev


def cmd_train(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "train")
    run_cfg = load_config(args.config)
    _apply_overrides(run_cfg, args)
    result, target, auxiliaries, dev = _run_training(run_cfg, run_cfg.train)

    log_path = os.path.join(out, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in result.history:
            fh.write(entry.to_json() + "\n")
    ckpt_path = os.path.join(out, "checkpoint.npz")
    meta = {
        "best_epoch": result.best_epoch,
        "best_dev": asdict(result.best_report),
        "batch_size": run_cfg.train.batch_size,
        "max_span_len": run_cfg.train.max_span_len,
        "max_passage_tokens": run_cfg.max_passage_tokens,
        "mode": run_cfg.train.mode,
        "num_params": result.model.num_params,
    }
    save_checkpoint(ckpt_path, result.model.config, result.vocab, result.params, result.ema, meta)
    print(json.dumps({
        "best_epoch": result.best_epoch,
        "best_dev": asdict(result.best_report),
        "num_params": result.model.num_params,
        "checkpoint": ckpt_path,
    }, sort_keys=True))
    _write_manifest(out, "train", run_cfg.train.seed, run_cfg.snapshot,
                    _data_input_paths(run_cfg, True), [log_path, ckpt_path], started)
    return 0


def cmd_eval(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "eval")
    model, ema, meta = model_from_checkpoint(args.checkpoint)
    ds = load_dataset(args.input, args.format, 1, meta.get("max_passage_tokens", corpus.DEFAULT_MAX_PASSAGE_TOKENS))
    report = evaluate(
        model,
        ds.samples,
        params_override=ema,
        batch_size=meta.get("batch_size", 32),
        max_span_len=meta.get("max_span_len", 30),
    )
    print(report.to_json())
    _write_manifest(out, "eval", None, {"checkpoint": args.checkpoint},
                    [args.checkpoint, args.input], [], started)
    return 0


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args, "sweep")
    run_cfg = load_config(args.config)
    _apply_overrides(run_cfg, args)
    target, auxiliaries = _load_training_tasks(run_cfg)
    dev, dev_aux = _load_dev_tasks(run_cfg)
    from .model import build_model_vocab

    vocab = build_model_vocab([target, *auxiliaries], run_cfg.train.vocab_size)
    rows, outputs = [], []
    for alpha in run_cfg.sweep_alphas:
        cfg = TrainConfig(**{**asdict(run_cfg.train), "mode": "mixture", "alpha": alpha})
        result = train(target, auxiliaries, cfg, dev, dev_aux, vocab=vocab)
        log_path = os.path.join(out, f"train_log_alpha{alpha:g}.jsonl")
        with open(log_path, "w", encoding="utf-8") as fh:
            for entry in result.history:
                fh.write(entry.to_json() + "\n")
        outputs.append(log_path)
        rows.append((alpha, result.best_report.em, result.best_report.f1))
        print(f"alpha={alpha:g}: best dev EM={result.best_report.em:.4f} "
              f"F1={result.best_report.f1:.4f} (epoch {result.best_epoch})")
    csv_path = os.path.join(out, "sweep.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "dev_em", "dev_f1"])
        for alpha, em, f1 in rows:
            writer.writerow([f"{alpha:g}", f"{em:.6f}", f"{f1:.6f}"])
    outputs.append(csv_path)
    _write_manifest(out, "sweep", run_cfg.train.seed, run_cfg.snapshot,
                    _data_input_paths(run_cfg, True), outputs, started)
    return 0


# --- parser ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrckit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False):
        p.add_argument("--out", default=None, help="output directory (default runs/<command>)")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument("--deterministic", action="store_true", help="force float64 deterministic mode")
        if config:
            p.add_argument("--config", required=True, help="INI configuration file")

    p = sub.add_parser("ingest", help="load, validate and tokenize a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=_FORMATS, default=corpus.SPAN_JSON)
    p.add_argument("--task-id", type=int, default=1)
    p.add_argument("--max-passage-tokens", type=int, default=corpus.DEFAULT_MAX_PASSAGE_TOKENS)
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=_FORMATS, default=corpus.SPAN_JSON)
    p.add_argument("--task-id", type=int, default=1)
    p.add_argument("--max-passage-tokens", type=int, default=corpus.DEFAULT_MAX_PASSAGE_TOKENS)
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("convert-span", help="align free-text answers to passage spans")
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", type=float, default=corpus.DEFAULT_ROUGE_THRESHOLD)
    common(p)
    p.set_defaults(func=cmd_convert_span)

    p = sub.add_parser("train-lm", help="train per-task question LMs and length models")
    common(p, config=True)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("weights", help="score auxiliary samples and export weights")
    common(p, config=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("schedule", help="dry-run batch schedules")
    p.add_argument("--epochs", type=int, default=1)
    common(p, config=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("train", help="train a model")
    common(p, config=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=_FORMATS, default=corpus.SPAN_JSON)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train across the mixture-ratio grid")
    common(p, config=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (ToolkitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
