"""``motionkit`` command-line entry point.

Every subcommand resolves a :class:`RunConfig` (defaults, then ``--config``
JSON, then explicit flags), writes it to ``run_config.json`` in the output
directory and reports results as files. Exit codes: 0 success, 1 usage error,
2 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, MotionKitError
from .ingest import BASE_LOCATIONS, CLASS_NAMES, parse_manifest

log = logging.getLogger("motionkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


@dataclass
class RunConfig:
    seed: int = 0
    rate_hz: int = 100
    locations: list = field(default_factory=lambda: list(BASE_LOCATIONS))
    data: str = "bench/manifest.jsonl"
    out: str = "runs"
    # training, scaled for the desk benchmark
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 32
    widths: list = field(default_factory=lambda: [8, 16, 16])
    train_stride: int = 16
    eval_stride: int = 1
    include_other_in_macro: bool = False
    workers: int = 1
    # aggregation
    window_s: float = 30.0
    # synthesis
    source: str = "Wrist"
    target: str = "Ankle"
    lam: float = 0.1
    ae_epochs: int = 30
    synth_epochs: int = 30
    # benchmark generation
    users: int = 12

    def train_config(self):
        from .harness.train import TrainConfig
        return TrainConfig(epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
                           seed=self.seed, widths=tuple(self.widths),
                           include_other_in_macro=self.include_other_in_macro)

    @property
    def macro_classes(self):
        return None if self.include_other_in_macro else (0, 1, 2)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flag -> RunConfig field; every flag defaults to None so only explicit flags override
_FLAGS = {
    "--seed": ("seed", int),
    "--rate": ("rate_hz", int),
    "--data": ("data", str),
    "--out": ("out", str),
    "--epochs": ("epochs", int),
    "--lr": ("lr", float),
    "--batch-size": ("batch_size", int),
    "--train-stride": ("train_stride", int),
    "--eval-stride": ("eval_stride", int),
    "--workers": ("workers", int),
    "--window": ("window_s", float),
    "--source": ("source", str),
    "--target": ("target", str),
    "--lam": ("lam", float),
    "--ae-epochs": ("ae_epochs", int),
    "--synth-epochs": ("synth_epochs", int),
    "--users": ("users", int),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    for flag, (dest, typ) in _FLAGS.items():
        p.add_argument(flag, dest=dest, type=typ, default=None)
    p.add_argument("--locations", type=lambda s: [x for x in s.split(",") if x], default=None)
    p.add_argument("--widths", type=lambda s: [int(x) for x in s.split(",")], default=None)
    p.add_argument("--include-other-in-macro", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionkit", description="Location-invariant motion activity toolkit")
    parser.add_argument("--version", action="version", version=f"motionkit {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    cmds = {
        "gen-bench": "write the seeded synthetic benchmark",
        "ingest": "validate a manifest and summarise its sessions",
        "featurize": "compute spectrogram images for every labeled frame",
        "train": "train a motion model on the training split",
        "eval": "evaluate a saved model on the test split",
        "transfer-matrix": "single-location and all-location transfer matrix",
        "eigenlocations": "rank location subsets by transfer power",
        "spectransform": "condition spectrograms for a lower-rate model",
        "aggregate": "activity-level F1 by majority vote over windows",
        "finetune": "re-target a model to held-out pseudo-activities",
        "synth-train": "train a cross-location synthesizer",
        "synth-eval": "score a target classifier on synthesized data",
    }
    subs = {}
    for name, help_ in cmds.items():
        subs[name] = sub.add_parser(name, help=help_)
        _add_common(subs[name])
    subs["eval"].add_argument("--model", required=True)
    subs["eval"].add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    subs["eigenlocations"].add_argument("--k", type=int, choices=(1, 2, 3), required=True)
    subs["transfer-matrix"].add_argument("--svg", action="store_true")
    subs["spectransform"].add_argument("--from", dest="from_hz", type=int, required=True)
    subs["spectransform"].add_argument("--to", dest="to_hz", type=int, required=True)
    subs["spectransform"].add_argument("--input", help="features tensor written by featurize")
    subs["aggregate"].add_argument("--model", required=True)
    subs["finetune"].add_argument("--model", required=True)
    subs["finetune"].add_argument("--finetune-epochs", type=int, default=30)
    subs["synth-eval"].add_argument("--synth", required=True)
    subs["synth-eval"].add_argument("--model", required=True, help="target-location classifier")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dataclasses.asdict(RunConfig())
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = sorted(set(loaded) - set(values))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        values.update(loaded)
    for name in values:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if args.workers is None and not (args.config and "workers" in loaded):
        env = os.environ.get("MOTIONKIT_WORKERS")
        if env:
            try:
                values["workers"] = int(env)
            except ValueError:
                raise UsageError(f"MOTIONKIT_WORKERS={env!r} is not an integer") from None
    cfg = RunConfig(**values)
    if cfg.workers < 1:
        raise UsageError("--workers must be at least 1")
    return cfg


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _store(cfg: RunConfig):
    from .harness.dataset import SessionStore
    return SessionStore(parse_manifest(cfg.data))


def _split(store, cfg: RunConfig):
    from .harness.splits import split_users
    return split_users(store.users, cfg.seed)


def _datasets(store, split, cfg: RunConfig, rate_hz: int | None = None):
    """(train, val, test) for the configured locations; training frames are
    strided to keep epochs short."""
    rate = rate_hz or cfg.rate_hz
    locs = cfg.locations
    train = store.featurize(rate, split.train_users, locs, cfg.train_stride)
    val = store.featurize(rate, split.val_users, locs, max(cfg.train_stride // 2, 1))
    test = store.featurize(rate, split.test_users, locs, cfg.eval_stride)
    return train, val, test


# -- subcommands ------------------------------------------------------------


def cmd_gen_bench(cfg: RunConfig, args, out: Path) -> None:
    from .harness.bench import BenchSpec, gen_benchmark
    spec = BenchSpec(seed=cfg.seed, n_users=cfg.users, locations=tuple(cfg.locations))
    manifest = gen_benchmark(spec, out)
    log.info("benchmark written to %s", manifest)


def cmd_ingest(cfg: RunConfig, args, out: Path) -> None:
    from .ingest import load_session
    summary = []
    for session in parse_manifest(cfg.data):
        recs, labels = load_session(session)
        counts = {name: 0.0 for name in CLASS_NAMES}
        for seg in labels:
            counts[seg.activity.label] += seg.stop_unix_s - seg.start_unix_s
        summary.append({
            "session_id": session.session_id,
            "user_id": session.user_id,
            "recordings": [{"location": r.location, "rate_hz": r.rate_hz, "samples": len(r),
                            "zero_variance_axes": list(r.zero_variance_axes)} for r in recs],
            "labeled_seconds": {k: round(v, 3) for k, v in counts.items()},
        })
    _write_json(out / "ingest_summary.json", summary)


def cmd_featurize(cfg: RunConfig, args, out: Path) -> None:
    store = _store(cfg)
    split = _split(store, cfg)
    data = store.featurize(cfg.rate_hz, None, cfg.locations, cfg.eval_stride)
    data.save(out / "features.mptn")
    _write_json(out / "split.json", split.as_dict())
    log.info("%d images of shape %s", len(data), data.shape)


def _model_report(model, data, cfg: RunConfig) -> dict:
    from .harness.experiments import per_location_f1
    scores = per_location_f1(model, data, cfg.macro_classes)
    return {"per_location_f1": {k: round(v, 4) for k, v in scores.items()},
            "average_f1": round(float(np.mean(list(scores.values()))), 4)}


def cmd_train(cfg: RunConfig, args, out: Path) -> None:
    from .harness.train import save_model, train_motion_model
    store = _store(cfg)
    split = _split(store, cfg)
    train, val, test = _datasets(store, split, cfg)
    model = train_motion_model(train, val, cfg.train_config())
    save_model(model, out / "model")
    with open(out / "history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_f1,val_loss\n")
        for e, tl, vf, vl in model.history:
            fh.write(f"{e},{tl:.6f},{vf:.4f},{vl:.6f}\n")
    report = {"split": split.as_dict(), "best_epoch": model.best_epoch,
              "test": _model_report(model, test, cfg)}
    _write_json(out / "metrics.json", report)


def cmd_eval(cfg: RunConfig, args, out: Path) -> None:
    from .harness.experiments import write_confusion
    from .harness.metrics import confusion_matrix
    from .harness.train import load_model, predict
    model = load_model(args.model)
    store = _store(cfg)
    split = _split(store, cfg)
    users = {"train": split.train_users, "val": split.val_users, "test": split.test_users,
             "all": None}[args.split]
    data = store.featurize(model.rate_hz, users, cfg.locations, cfg.eval_stride)
    report = _model_report(model, data, cfg)
    cm = confusion_matrix(data.labels, predict(model, data.images), model.net.n_classes)
    write_confusion(cm, out / "confusion_all.csv")
    _write_json(out / "eval.json", report)


def cmd_transfer_matrix(cfg: RunConfig, args, out: Path) -> None:
    from .harness.experiments import REFERENCE_FIGURES, transfer_matrix
    store = _store(cfg)
    split = _split(store, cfg)
    train, val, test = _datasets(store, split, cfg)
    rows = [(loc,) for loc in cfg.locations] + [tuple(cfg.locations)]
    report = transfer_matrix(rows, train, val, test, cfg.train_config(), cfg.locations,
                             cfg.workers)
    report.write(out, svg=args.svg)
    _write_json(out / "transfer_summary.json", {
        "diagonal_dominance": report.diagonal_dominance(),
        "reference": {k: REFERENCE_FIGURES[k] for k in ("wrist_on_ankle_f1",
                                                      "all_locations_row_average_f1")},
    })


def cmd_eigenlocations(cfg: RunConfig, args, out: Path) -> None:
    from .harness.experiments import eigenlocations
    store = _store(cfg)
    split = _split(store, cfg)
    train, val, test = _datasets(store, split, cfg)
    ranking = eigenlocations(args.k, train, val, test, cfg.train_config(), cfg.locations,
                             cfg.workers)
    ranking.write(out)


def cmd_spectransform(cfg: RunConfig, args, out: Path) -> None:
    from .harness.dataset import SpecDataset
    if args.input:
        data = SpecDataset.load(args.input)
        if data.rate_hz != args.from_hz:
            raise DataError(f"{args.input} holds {data.rate_hz} Hz spectrograms, not {args.from_hz}")
        moved = data.spectransformed(args.to_hz)
    else:
        # from the recordings, so the percentile scaling sees only the kept band
        moved = _store(cfg).featurize(args.from_hz, None, cfg.locations, cfg.eval_stride,
                                      transform_to=args.to_hz)
    moved.save(out / f"features_{args.from_hz}to{args.to_hz}.mptn")
    log.info("%d images now shaped %s", len(moved), moved.shape)


def cmd_aggregate(cfg: RunConfig, args, out: Path) -> None:
    from .harness.aggregate import AggregationConfig, activity_f1, aggregation_curve, frame_f1
    from .harness.train import load_model, predict
    AggregationConfig(cfg.window_s).check()
    model = load_model(args.model)
    store = _store(cfg)
    split = _split(store, cfg)
    test = store.featurize(model.rate_hz, split.test_users, cfg.locations, 1)
    preds = predict(model, test.images)
    n = model.net.n_classes
    windows = sorted({10.0, 20.0, 30.0, 40.0, 50.0, float(cfg.window_s)})
    rows = aggregation_curve(test, preds, windows, n, cfg.macro_classes)
    keys = list(rows[0]) if rows else ["window_s"]
    with open(out / "aggregation_curve.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(f"{row[k]:.2f}" for k in keys) + "\n")
    _write_json(out / "aggregate.json", {
        "window_s": cfg.window_s,
        "frame_f1": frame_f1(test, preds, n, cfg.macro_classes),
        "activity_f1": activity_f1(test, preds, AggregationConfig(cfg.window_s), n,
                                   cfg.macro_classes),
    })


def _bench_spec(cfg: RunConfig):
    from .harness.bench import BenchSpec
    path = Path(cfg.data).parent / "bench_spec.json"
    if not path.exists():
        raise DataError(f"{path} not found; finetune needs a generated benchmark")
    d = json.loads(path.read_text(encoding="utf-8"))
    d["locations"] = tuple(d["locations"])
    d["bands"] = {k: tuple(v) for k, v in d["bands"].items()}
    return BenchSpec(**d)


def cmd_finetune(cfg: RunConfig, args, out: Path) -> None:
    from .harness.bench import EXTRA_ACTIVITIES
    from .harness.experiments import per_location_f1
    from .harness.finetune import FinetuneConfig, finetune_embeddings, pseudo_activity_dataset
    from .harness.splits import split_users
    from .harness.train import load_model, save_model
    model = load_model(args.model)
    spec = _bench_spec(cfg)
    split = split_users([f"u{i:02d}" for i in range(spec.n_users)], cfg.seed)
    names = tuple(EXTRA_ACTIVITIES)

    def part(users, stride):
        return pseudo_activity_dataset(spec, users, model.rate_hz, names, cfg.locations, stride)

    train, val, test = (part(split.train_users, cfg.train_stride),
                        part(split.val_users, cfg.train_stride),
                        part(split.test_users, cfg.eval_stride))
    tuned = finetune_embeddings(model, train, val, len(names),
                                FinetuneConfig(epochs=args.finetune_epochs, seed=cfg.seed),
                                class_names=names)
    save_model(tuned, out / "model")
    scores = per_location_f1(tuned, test, None)
    _write_json(out / "finetune.json", {
        "classes": list(names), "best_epoch": tuned.best_epoch,
        "per_location_f1": scores, "average_f1": float(np.mean(list(scores.values()))),
    })


def _pairs(store, users, cfg: RunConfig, stride: int):
    from .synthesis import align_pairs
    src = store.featurize(cfg.rate_hz, users, [cfg.source], stride)
    tgt = store.featurize(cfg.rate_hz, users, [cfg.target], stride)
    i_src, i_tgt = align_pairs(src, tgt)
    return src.select(i_src), tgt.select(i_tgt)


def cmd_synth_train(cfg: RunConfig, args, out: Path) -> None:
    from .synthesis import (SynthConfig, save_synthesizer, train_autoencoder,
                            train_synthesizer)
    store = _store(cfg)
    split = _split(store, cfg)
    tr_s, tr_t = _pairs(store, split.train_users, cfg, cfg.train_stride)
    va_s, va_t = _pairs(store, split.val_users, cfg, max(cfg.train_stride // 2, 1))
    source_ae = train_autoencoder(tr_s.images, va_s.images, epochs=cfg.ae_epochs, seed=cfg.seed)
    target_ae = (source_ae if cfg.source == cfg.target else
                 train_autoencoder(tr_t.images, va_t.images, epochs=cfg.ae_epochs,
                                   seed=cfg.seed + 1))
    scfg = SynthConfig(lam=cfg.lam, epochs=cfg.synth_epochs, seed=cfg.seed)
    history = []
    synth = train_synthesizer(source_ae, target_ae, tr_s.images, tr_t.images, va_s.images,
                              va_t.images, scfg, source_location=cfg.source,
                              target_location=cfg.target, history=history)
    save_synthesizer(synth, out / "synth", seed=cfg.seed)
    _write_json(out / "synth_history.json", [list(map(float, h)) for h in history])


def cmd_synth_eval(cfg: RunConfig, args, out: Path) -> None:
    from .harness.train import load_model, predict
    from .synthesis import evaluate_synthesis, load_synthesizer, synthesize, write_triptych
    synth = load_synthesizer(args.synth)
    model = load_model(args.model)
    cfg.source, cfg.target = synth.source_location, synth.target_location
    store = _store(cfg)
    split = _split(store, cfg)
    src, tgt = _pairs(store, split.test_users, cfg, cfg.eval_stride)
    fake = synthesize(src.images, synth)
    report = evaluate_synthesis(lambda x: predict(model, x), fake, tgt.labels, tgt.images,
                                tgt.labels, model.net.n_classes, cfg.macro_classes)
    if len(fake):
        write_triptych(out / "triptych.pgm", src.images[0], tgt.images[0], fake[0])
    _write_json(out / "synthesis_report.json", {
        "source": synth.source_location, "target": synth.target_location,
        "f1_synthetic": report.f1_synthetic, "f1_real": report.f1_real,
        "n_pairs": report.n_synthetic,
        "confusion_synthetic": report.confusion_synthetic.tolist(),
        "confusion_real": report.confusion_real.tolist(),
    })


COMMANDS = {
    "gen-bench": cmd_gen_bench,
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "transfer-matrix": cmd_transfer_matrix,
    "eigenlocations": cmd_eigenlocations,
    "spectransform": cmd_spectransform,
    "aggregate": cmd_aggregate,
    "finetune": cmd_finetune,
    "synth-train": cmd_synth_train,
    "synth-eval": cmd_synth_eval,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("missing subcommand")
        cfg = resolve_config(args)
    except UsageError as e:
        print(f"motionkit: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as e:
        print(f"motionkit: cannot read config: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        stream=sys.stderr, force=True)
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        resolved = dataclasses.asdict(cfg)
        resolved["command"] = args.command
        resolved.update({k: v for k, v in vars(args).items()
                         if k not in resolved and k not in ("config", "verbose")})
        _write_json(out / "run_config.json", resolved)
        COMMANDS[args.command](cfg, args, out)
    except UsageError as e:
        log.error("usage error: %s", e)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except MotionKitError as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
