"""Command-line driver: gen-data, train, predict, eval, robustness, ablate.

Every command takes ``--config`` (JSON, flags only override it), ``--seed`` and
``--out-dir``. Result files are deterministic given config and seed; wall-clock
information goes to ``run.log`` only.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("tgrounding")

TRAIN_FILE = "train.jsonl"
TEST_FILE = "test.jsonl"


def _resolve(path, default_name: str) -> Path:
    """A dataset argument may name the file itself or the directory holding it."""
    p = Path(path)
    return p / default_name if p.is_dir() else p


def _setup_logging(out_dir: Path) -> logging.Handler:
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def _write_config(cfg: RunConfig, out_dir: Path) -> None:
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(rows: list[dict], path: Path) -> None:
    names = []
    for r in rows:
        names.extend(k for k in r if k not in names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=names, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _train_test(cfg: RunConfig, data_arg):
    """Load ``train.jsonl``/``test.jsonl`` from ``data_arg`` or generate them in memory."""
    from .synthdata import generate, load_dataset, split

    if data_arg is None:
        return split(generate(cfg.data.generator()), cfg.data.train_fraction, cfg.data.seed)
    base = Path(data_arg)
    return load_dataset(base / TRAIN_FILE), load_dataset(base / TEST_FILE)


# -- commands ---------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, args, out: Path) -> None:
    from .synthdata import generate, split, write_dataset

    samples = generate(cfg.data.generator())
    train, test = split(samples, cfg.data.train_fraction, cfg.data.seed)
    write_dataset(train, out, TRAIN_FILE)
    write_dataset(test, out, TEST_FILE)
    log.info("wrote %d train / %d test samples to %s", len(train), len(test), out)


def cmd_train(cfg: RunConfig, args, out: Path) -> None:
    from .experiments import build_model
    from .model import build_vocab, prepare
    from .synthdata import load_dataset
    from .train import Trainer, save_checkpoint

    samples = load_dataset(_resolve(args.data, TRAIN_FILE))
    vocab = build_vocab(samples)
    model = build_model(cfg, vocab)
    trainer = Trainer(model, cfg)
    data = prepare(samples, vocab, cfg.model.T_m, relation_tags=cfg.ablation.relation_tags)
    with open(out / "loss.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "single_loss", "selected_loss"])

        def record(st):
            w.writerow([st.epoch, repr(st.loss), repr(st.single_loss), repr(st.selected_loss)])
            fh.flush()

        trainer.fit(data, callback=record)
    save_checkpoint(out / "checkpoint.pt", trainer)


def cmd_predict(cfg: RunConfig, args, out: Path) -> None:
    from .infer import predict, write_predictions
    from .model import prepare
    from .synthdata import load_dataset
    from .train import load_checkpoint

    trainer = load_checkpoint(args.checkpoint)
    model = trainer.model
    samples = load_dataset(_resolve(args.data, TEST_FILE))
    data = prepare(samples, model.vocab, model.cfg.T_m, relation_tags=model.ablation.relation_tags)
    preds = predict(model, data, cfg.sampler.K_infer, cfg.sampler.sigma_infer, cfg.infer.N,
                    seed=cfg.train.seed, kmeans_seed=cfg.infer.kmeans_seed)
    write_predictions(preds, out / "predictions.jsonl")


def cmd_eval(cfg: RunConfig, args, out: Path) -> None:
    from .infer import read_predictions
    from .metrics import evaluate, write_results
    from .synthdata import read_jsonl

    preds = read_predictions(args.predictions)
    rows = list(read_jsonl(_resolve(args.annotations, TEST_FILE)))
    e = cfg.eval
    results = evaluate(preds, rows, e.alpha, e.beta, e.N, e.G,
                       cfg.ablation.quality_self == "include", seed=cfg.train.seed)
    write_results(results, out / "metrics.json", out / "per_query.csv")


def cmd_robustness(cfg: RunConfig, args, out: Path) -> None:
    from .experiments import robustness_study

    train, test = _train_test(cfg, args.data)
    _write_rows(robustness_study(cfg, train, test), out / "robustness.csv")


def cmd_ablate(cfg: RunConfig, args, out: Path) -> None:
    from .experiments import ablation_study

    train, test = _train_test(cfg, args.data)
    _write_rows(ablation_study(cfg, train, test), out / "ablation.csv")


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a synthetic dataset (train/test split plus features)", ()),
    "train": (cmd_train, "fit a model; writes checkpoint.pt and loss.csv", ("data",)),
    "predict": (cmd_predict, "write ranked predictions for a dataset", ("checkpoint", "data")),
    "eval": (cmd_eval, "score predictions against annotations", ("predictions", "annotations")),
    "robustness": (cmd_robustness, "label-noise and paraphrase consistency study", ()),
    "ablate": (cmd_ablate, "named ablation variants plus the block-depth sweep", ()),
}

ARG_HELP = {
    "data": "dataset file, or a directory holding train.jsonl/test.jsonl",
    "checkpoint": "checkpoint written by 'train'",
    "predictions": "predictions file written by 'predict'",
    "annotations": "JSONL rows with query_id and spans (a dataset file works)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgrounding", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, required) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        p.add_argument("--seed", type=int, help="overrides train.seed and data.seed")
        p.add_argument("--out-dir", default=".", help="directory for all outputs (default: .)")
        for arg in ("data", "checkpoint", "predictions", "annotations"):
            if arg in required:
                p.add_argument(f"--{arg}", required=True, help=ARG_HELP[arg])
            elif arg == "data" and name in ("robustness", "ablate"):
                p.add_argument("--data", help="directory with train.jsonl/test.jsonl "
                                              "(generated from the config when omitted)")
    return parser


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.override(train__seed=args.seed, data__seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out_dir)
    handler = _setup_logging(out)
    try:
        t0 = time.perf_counter()
        log.info("command %s", args.command)
        _write_config(cfg, out)
        COMMANDS[args.command][0](cfg, args, out)
        log.info("done in %.1fs", time.perf_counter() - t0)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit code 2
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
