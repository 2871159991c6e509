# src/teg/cli.py
"""
Command-line entry point: generate | train | eval | score | serve.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 file format, 5 contract/config/metric,
6 training divergence or checkpoint failure, 7 delivery configuration,
1 any other library error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .config import DEFAULT_PRESET, PRESETS, ServeConfig, preset
from .data import ANOMALY_CLASSES, SEEN_CLASSES, Dataset, SyntheticConfig, generate_synthetic_dataset, synthetic_meta
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DeliveryError,
    FormatError,
    NonFiniteLossError,
    TeGError,
    UndefinedMetricError,
)
from .granularity import DEFAULT_GRANULARITIES, GRANULARITY_NAMES
from .log import setup_logging
from .loss import LossConfig
from .metrics import DEFAULT_THRESHOLD, evaluate, score_dataset
from .model import TeGConfig
from .trainer import TrainConfig, fit
from .utils import write_json, write_jsonl

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_CONTRACT = 5
EXIT_TRAINING = 6
EXIT_DELIVERY = 7

TRAIN_SPLIT = "train"
TEST_SPLIT = "test"


def _class_list(text: str) -> tuple[str, ...]:
    classes = tuple(c.strip() for c in text.split(",") if c.strip())
    unknown = [c for c in classes if c not in ANOMALY_CLASSES]
    if unknown or not classes:
        raise argparse.ArgumentTypeError(f"unknown classes {unknown}; known: {','.join(ANOMALY_CLASSES)}")
    return classes


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="teg", description="Temporal-granularity video anomaly detection.", formatter_class=fmt)
    ap.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    ap.add_argument("--preset", default=DEFAULT_PRESET, choices=sorted(PRESETS),
                    help="scale preset; explicit flags win over it")
    sub = ap.add_subparsers(dest="command", required=True, metavar="{generate,train,eval,score,serve}")

    gen = sub.add_parser("generate", help="write a synthetic train/test dataset", formatter_class=fmt)
    gen.add_argument("--out", required=True, help="output directory (gets train/ and test/)")
    gen.add_argument("--normal", type=int, default=None, help="normal training videos (preset)")
    gen.add_argument("--abnormal", type=int, default=None, help="abnormal training videos (preset)")
    gen.add_argument("--test-normal", type=int, default=None, help="normal test videos, 0 skips the split (preset)")
    gen.add_argument("--test-abnormal", type=int, default=None, help="abnormal test videos (preset)")
    gen.add_argument("--dim", type=int, default=None, help="feature width D (preset)")
    gen.add_argument("--frames", type=int, default=None, help="frames per video (preset)")
    gen.add_argument("--granularities", type=int, nargs=3, default=list(DEFAULT_GRANULARITIES), metavar="G")
    gen.add_argument("--profile", default="mixed", choices=["short", "medium", "long", "mixed"],
                     help="anomaly duration profile")
    gen.add_argument("--train-classes", type=_class_list, default=tuple(ANOMALY_CLASSES),
                     help="comma list of anomaly classes allowed in the training split")
    gen.add_argument("--signal-scale", type=float, default=3.0)
    gen.add_argument("--noise", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="fit a model on a dataset directory", formatter_class=fmt)
    tr.add_argument("--data", required=True, help="training dataset directory")
    tr.add_argument("--out", required=True, help="final checkpoint path (.tegw)")
    tr.add_argument("--val", default=None, help="held-out dataset directory for validation AUC")
    tr.add_argument("--report", default=None, help="per-epoch JSONL report (default: <out>.report.jsonl)")
    tr.add_argument("--checkpoint-dir", default=None, help="directory for periodic checkpoints")
    tr.add_argument("--epochs", type=int, default=None, help="training epochs (preset)")
    tr.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    tr.add_argument("--weight-decay", type=float, default=5e-4)
    tr.add_argument("--decoupled-weight-decay", action="store_true")
    tr.add_argument("--margin", type=float, default=100.0, help="feature-magnitude hinge margin m")
    tr.add_argument("--k", type=int, default=3, help="top-k segments")
    tr.add_argument("--lambda-fm", type=float, default=None, help="feature-magnitude weight (preset)")
    tr.add_argument("--lambda1", type=float, default=8e-4, help="sparsity weight")
    tr.add_argument("--lambda2", type=float, default=8e-4, help="smoothness weight")
    tr.add_argument("--heads", type=int, default=4)
    tr.add_argument("--hidden", type=int, nargs=2, default=None, metavar="H", help="FCN hidden sizes (preset)")
    tr.add_argument("--dropout", type=float, default=0.0)
    tr.add_argument("--no-layer-norm", action="store_true")
    tr.add_argument("--no-attention-residual", action="store_true")
    tr.add_argument("--batch", type=int, default=64, help="videos per class per batch")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--checkpoint-every", type=int, default=0, help="0 disables")
    tr.add_argument("--eval-every", type=int, default=10, help="0 disables")
    tr.add_argument("--ablation", choices=GRANULARITY_NAMES, default=None,
                    help="train on a single granularity")

    ev = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", default="eval.json")
    ev.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    ev.add_argument("--seen-classes", type=_class_list, default=SEEN_CLASSES)
    ev.add_argument("--ablation", choices=GRANULARITY_NAMES, default=None)

    sc = sub.add_parser("score", help="score every video of a dataset", formatter_class=fmt)
    sc.add_argument("--model", required=True)
    sc.add_argument("--data", required=True)
    sc.add_argument("--out", default="scores.jsonl")
    sc.add_argument("--trace", action="store_true", help="include per-frame scores and truth")
    sc.add_argument("--ablation", choices=GRANULARITY_NAMES, default=None)

    sv = sub.add_parser("serve", help="run the streaming scorer, or replay a dataset through it", formatter_class=fmt)
    sv.add_argument("--model", default=None, help="checkpoint (default: TEG_MODEL)")
    sv.add_argument("--replay", default=None, help="dataset directory to stream instead of serving HTTP")
    sv.add_argument("--out", default="packets.jsonl", help="replay: emitted packets")
    sv.add_argument("--fps", type=float, default=30.0, help="replay: frame rate for segment timestamps")
    sv.add_argument("--start-ms", type=int, default=0, help="replay: timestamp of frame 0")
    sv.add_argument("--threshold", type=float, default=None, help="default: TEG_THRESHOLD")
    sv.add_argument("--min-run", type=int, default=None, help="default: TEG_MIN_RUN")
    sv.add_argument("--endpoint-url", default=None, help="default: TEG_ENDPOINT_URL; token only via TEG_ENDPOINT_TOKEN")
    sv.add_argument("--spool", default=None, help="default: TEG_SPOOL")
    sv.add_argument("--host", default="0.0.0.0")
    sv.add_argument("--port", type=int, default=8000)
    return ap


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse and fill preset-driven defaults; usage errors exit with code 2."""
    args = _build_parser().parse_args(argv)
    p = preset(args.preset)
    if args.command == "generate":
        for flag, key in (("normal", "normal_videos"), ("abnormal", "abnormal_videos"),
                          ("test_normal", "test_normal_videos"), ("test_abnormal", "test_abnormal_videos"),
                          ("dim", "dim"), ("frames", "frames")):
            if getattr(args, flag) is None:
                setattr(args, flag, p[key])
    elif args.command == "train":
        for flag, key in (("epochs", "epochs"), ("lambda_fm", "lambda_fm")):
            if getattr(args, flag) is None:
                setattr(args, flag, p[key])
        if args.hidden is None:
            args.hidden = list(p["fcn_hidden"])
        if args.report is None:
            args.report = str(Path(args.out).with_suffix(".report.jsonl"))
    return args


# ---------- commands ----------

def _generate(args) -> None:
    out = Path(args.out)
    common = dict(dim=args.dim, frames=args.frames, duration_profile=args.profile,
                  signal_scale=args.signal_scale, noise=args.noise, granularities=tuple(args.granularities))
    train_cfg = SyntheticConfig(normal_videos=args.normal, abnormal_videos=args.abnormal, seed=args.seed,
                                classes=args.train_classes, prefix=TRAIN_SPLIT, **common)
    generate_synthetic_dataset(train_cfg).save(out / TRAIN_SPLIT, synthetic_meta(train_cfg))
    if args.test_normal and args.test_abnormal:
        test_cfg = SyntheticConfig(normal_videos=args.test_normal, abnormal_videos=args.test_abnormal,
                                   seed=args.seed + 1, prefix=TEST_SPLIT, **common)
        generate_synthetic_dataset(test_cfg).save(out / TEST_SPLIT, synthetic_meta(test_cfg))


def _train(args) -> None:
    dataset = Dataset.load(args.data)
    validation = Dataset.load(args.val) if args.val else None
    model_cfg = TeGConfig(
        dim=dataset.dim, heads=args.heads, fcn_hidden=tuple(args.hidden), dropout_rate=args.dropout,
        use_layer_norm=not args.no_layer_norm, attention_residual=not args.no_attention_residual,
    )
    loss_cfg = LossConfig(margin=args.margin, k=args.k, lambda_fm=args.lambda_fm,
                          lambda1=args.lambda1, lambda2=args.lambda2)
    train_cfg = TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, weight_decay=args.weight_decay,
        decoupled_weight_decay=args.decoupled_weight_decay, batch_per_class=args.batch, seed=args.seed,
        checkpoint_every=args.checkpoint_every, eval_every=args.eval_every,
    )
    params, report = fit(dataset, train_cfg, loss_cfg, model_cfg, validation=validation,
                         checkpoint_dir=args.checkpoint_dir, report_path=args.report, ablation=args.ablation)
    save_checkpoint(args.out, params, model_cfg)
    logger.info("model written path=%s epochs=%d report=%s", args.out, len(report), args.report)


def _load_eval_inputs(args):
    model_cfg, params = load_checkpoint(args.model)
    dataset = Dataset.load(args.data)
    if args.ablation:
        dataset = dataset.restrict_to(args.ablation)
    return model_cfg, params, dataset


def _eval(args) -> None:
    model_cfg, params, dataset = _load_eval_inputs(args)
    report = evaluate(dataset, params, model_cfg, threshold=args.threshold, seen_classes=args.seen_classes)
    report["model"] = args.model
    report["data"] = args.data
    write_json(args.out, report)
    logger.info("evaluation written path=%s auc=%s", args.out, report["auc"])


def _score(args) -> None:
    model_cfg, params, dataset = _load_eval_inputs(args)
    traces = score_dataset(dataset, params, model_cfg)
    if args.trace:
        rows = (t.to_json() for t in traces)
    else:
        rows = ({k: v for k, v in t.to_json().items() if k in ("video_id", "segment_scores", "max_score")}
                for t in traces)
    n = write_jsonl(args.out, rows)
    logger.info("scores written path=%s videos=%d trace=%s", args.out, n, args.trace)


def _serve_config(args) -> ServeConfig:
    env = ServeConfig.from_env()
    overrides = {
        "model_path": args.model,
        "threshold": args.threshold,
        "min_run": args.min_run,
        "endpoint_url": args.endpoint_url,
        "spool_path": args.spool,
    }
    return replace(env, **{k: v for k, v in overrides.items() if v is not None})


def _serve(args) -> None:
    from .packets import PacketEmitter
    from .queue import PacketQueue
    from .service import DeliveryWorker, DetectionHub, replay_dataset

    cfg = _serve_config(args)
    if args.replay is None:
        import uvicorn

        from api.app import create_app

        uvicorn.run(create_app(cfg), host=args.host, port=args.port, log_level=args.log_level)
        return
    if not cfg.model_path:
        raise ConfigError("serve needs --model or TEG_MODEL")
    model_cfg, params = load_checkpoint(cfg.model_path)
    dataset = Dataset.load(args.replay)
    queue = PacketQueue(cfg.queue_cap)
    hub = DetectionHub(params, model_cfg, cfg, queue)
    endpoint = cfg.endpoint()
    emitter = PacketEmitter(endpoint) if endpoint is not None else None
    worker = DeliveryWorker(queue, emitter) if emitter is not None else None
    try:
        result = replay_dataset(dataset, hub, fps=args.fps, start_ms=args.start_ms, worker=worker)
    finally:
        if emitter is not None:
            emitter.close()
    write_jsonl(args.out, (p.model_dump() for p in result.packets))
    stats = hub.stats()
    if worker is not None:
        stats.update(worker.stats())
    logger.info("replay written path=%s packets=%d stats=%s", args.out, len(result.packets), stats)


COMMANDS = {
    "generate": _generate,
    "train": _train,
    "eval": _eval,
    "score": _score,
    "serve": _serve,
}


def run(args: argparse.Namespace) -> int:
    """Dispatch a parsed command; library errors become exit codes, diagnostics go to stderr."""
    try:
        COMMANDS[args.command](args)
    except (NonFiniteLossError, CheckpointError) as exc:
        logger.error("training aborted: %s", exc)
        return EXIT_TRAINING
    except FormatError as exc:
        logger.error("bad file format: %s", exc)
        return EXIT_FORMAT
    except DeliveryError as exc:
        logger.error("delivery configuration: %s", exc)
        return EXIT_DELIVERY
    except (ContractError, ConfigError, UndefinedMetricError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONTRACT
    except TeGError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    setup_logging(args.log_level)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
