"""Command-line entry point: ``biounify <subcommand> ...``.

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
any other failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..errors import ConfigError
from ..model import BiosignalModel, EncoderConfig
from ..quant import QuantSpec, apply_ptq, calibrate, qat_finetune
from ..sigproc import preprocess_record, segment_and_patch
from ..trainer import Dataset, JsonlLogger, TrainConfig, evaluate, finetune, pretrain
from .attention import dump_attention, rows_to_csv
from .cost import cost_report
from .formats import atomic_write, load_checkpoint, read_bsr, save_checkpoint, write_bsr
from .synth import generate_multimodal, generate_synthetic, make_pretrain_set, make_task

DEFAULT_LAYOUT = "EEG:2,ECG:1,PPG:1"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _load_config(path):
    """Config JSON: flat model fields, or ``{"model": {...}, "train": {...}}``."""
    if path is None:
        return {}, {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if set(raw) <= {"model", "train"} and raw:
        return dict(raw.get("model", {})), dict(raw.get("train", {}))
    return raw, {}


def _model_config(args):
    model_d, _ = _load_config(args.config)
    model_d.setdefault("seed", args.seed)
    return EncoderConfig.from_dict(model_d)


def _train_config(args, mode, **cli):
    _, train_d = _load_config(args.config)
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(train_d) - known
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    train_d.update({k: v for k, v in cli.items() if v is not None})
    train_d["mode"] = mode
    train_d["seed"] = args.seed
    return TrainConfig(**train_d)


def _layout(text):
    out = {}
    for part in text.split(","):
        try:
            mod, count = part.split(":")
            out[mod.strip().upper()] = int(count)
        except ValueError as exc:
            raise ConfigError(f"bad layout entry {part!r}; expected MOD:COUNT") from exc
    return out


def _print_json(obj):
    print(json.dumps(obj, sort_keys=True, indent=2))


def _records_to_dataset(paths, window_s, raw):
    values, meta = [], None
    for path in paths:
        rec = read_bsr(path)
        if not raw:
            rec = preprocess_record(rec)
        for grid in segment_and_patch(rec, window_s):
            if meta is not None and [m.modality for m in meta] != [m.modality for m in grid.meta]:
                raise ConfigError("all inputs must share one channel layout")
            values.append(grid.values)
            meta = grid.meta
    if not values:
        raise ConfigError("inputs hold no complete window")
    return Dataset(np.stack(values).astype(np.float32), None, meta)


def _task_split(args, num_classes):
    layout = _layout(args.layout)
    train = make_task(args.train, num_classes, layout, args.window, seed=args.seed)
    val = make_task(args.val, num_classes, layout, args.window, seed=args.seed + 1)
    return train, val


def _open_log(path):
    return JsonlLogger(path) if path else None


# -- subcommands -------------------------------------------------------------

def cmd_synth(args):
    if args.layout:
        rec = generate_multimodal(_layout(args.layout), args.seconds, args.fs, args.seed)
    else:
        rec = generate_synthetic(args.modality, args.seconds, args.fs, args.seed, args.channels)
    write_bsr(args.output, rec)
    return 0


def cmd_preprocess(args):
    rec = preprocess_record(read_bsr(args.input), notch_hz=args.notch)
    write_bsr(args.output, rec)
    return 0


def cmd_pretrain(args):
    cfg = _model_config(args)
    tcfg = _train_config(args, "pretrain", lr=args.lr, batch_size=args.batch_size)
    if args.data:
        data = _records_to_dataset(args.data, args.window, args.raw)
    else:
        data = make_pretrain_set(args.synthetic, _layout(args.layout), args.window, seed=args.seed)
    model = BiosignalModel(cfg)
    log = _open_log(args.log)
    try:
        losses = pretrain(model, data, tcfg, steps=args.steps, log=log)
    finally:
        if log:
            log.close()
    save_checkpoint(args.output, model)
    _print_json({"initial_loss": losses[0], "final_loss": losses[-1], "steps": len(losses)})
    return 0


def cmd_finetune(args):
    model = load_checkpoint(args.checkpoint) if args.checkpoint else BiosignalModel(_model_config(args))
    tcfg = _train_config(args, args.mode, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size)
    train, val = _task_split(args, model.config.num_classes)
    log = _open_log(args.log)
    try:
        model, bundle = finetune(model, args.mode, train, val, tcfg, log)
    finally:
        if log:
            log.close()
    save_checkpoint(args.output, model)
    _print_json(bundle.as_dict())
    return 0


def cmd_quantize(args):
    spec = QuantSpec(args.weights, args.acts, args.mode)
    model = load_checkpoint(args.checkpoint)
    train, val = _task_split(args, model.config.num_classes)
    stats = calibrate(model, [(train.values[i:i + 32], train.meta) for i in range(0, len(train), 32)])
    if spec.mode == "PTQ":
        qmodel = apply_ptq(model, spec, stats)
    else:
        log = _open_log(args.log)
        try:
            qmodel = qat_finetune(model, spec, train, val, stats, epochs=args.epochs or 15, lr=args.lr or 1e-4,
                                  seed=args.seed, log=log)
        finally:
            if log:
                log.close()
    save_checkpoint(args.output, qmodel)
    _print_json({"spec": spec.to_dict(), "metrics": evaluate(qmodel, val).as_dict()})
    return 0


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    data = make_task(args.n, model.config.num_classes, _layout(args.layout), args.window, seed=args.seed)
    if args.modalities:
        data = data.select_modalities([m.upper() for m in args.modalities.split(",")])
    _print_json(evaluate(model, data).as_dict())
    return 0


def cmd_attn(args):
    model = load_checkpoint(args.checkpoint)
    rows = dump_attention(model, read_bsr(args.input), window_s=args.window, preprocess=not args.raw)
    text = rows_to_csv(rows)
    if args.output:
        atomic_write(args.output, text.encode())
    else:
        sys.stdout.write(text)
    return 0


def cmd_cost(args):
    cfg = _model_config(args)
    spec = QuantSpec(args.weights, args.acts) if args.weights else None
    kwargs = {}
    if args.compute_ms is not None:
        kwargs["compute_ms"] = args.compute_ms
    if args.energy_mj is not None:
        kwargs["energy_mJ"] = args.energy_mj
    _print_json(cost_report(cfg, args.channels, args.window, spec, **kwargs).as_dict())
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding model/training defaults")
    common.add_argument("--seed", type=int, default=0)

    task = argparse.ArgumentParser(add_help=False)
    task.add_argument("--layout", default=DEFAULT_LAYOUT, help="synthetic channel layout, e.g. EEG:2,ECG:1")
    task.add_argument("--window", type=float, default=2.0, help="window length in seconds")
    task.add_argument("--train", type=int, default=64, help="synthetic training windows")
    task.add_argument("--val", type=int, default=32, help="synthetic validation windows")
    task.add_argument("--lr", type=float)
    task.add_argument("--epochs", type=int)
    task.add_argument("--batch-size", type=int)
    task.add_argument("--log", help="JSON-lines training log")

    p = _Parser(prog="biounify", description="Multimodal biosignal encoder workbench")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic BSR record")
    s.add_argument("--modality", choices=["eeg", "ecg", "ppg", "EEG", "ECG", "PPG"], default="ecg")
    s.add_argument("--layout", help="multimodal layout instead of --modality, e.g. EEG:2,ECG:1,PPG:1")
    s.add_argument("--seconds", type=float, default=10.0)
    s.add_argument("--fs", type=float, default=256.0)
    s.add_argument("--channels", type=int, default=1)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", parents=[common], help="filter, resample and z-score a BSR record")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--notch", type=float, default=50.0, help="mains frequency; 0 disables")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("pretrain", parents=[common], help="masked-reconstruction pretraining")
    s.add_argument("--data", nargs="*", help="BSR records (default: synthetic windows)")
    s.add_argument("--raw", action="store_true", help="inputs are already conditioned")
    s.add_argument("--synthetic", type=int, default=32, help="number of synthetic windows")
    s.add_argument("--layout", default=DEFAULT_LAYOUT)
    s.add_argument("--window", type=float, default=2.0)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--log")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", parents=[common, task], help="fine-tune on a synthetic task")
    s.add_argument("--checkpoint", help="start from this checkpoint")
    s.add_argument("--mode", choices=["FF", "FE", "LoRA"], default="FF")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("quantize", parents=[common, task], help="PTQ or QAT fake quantization")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--weights", type=int, choices=[2, 4, 8], default=8)
    s.add_argument("--acts", type=int, choices=[4, 8], default=8)
    s.add_argument("--mode", type=str.upper, choices=["PTQ", "QAT"], default="PTQ")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("eval", parents=[common], help="metrics on a seeded synthetic task")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--layout", default=DEFAULT_LAYOUT)
    s.add_argument("--window", type=float, default=2.0)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--modalities", help="evaluate on a modality subset, e.g. EEG,ECG")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("attn", parents=[common], help="dump channel-query attention as CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--window", type=float)
    s.add_argument("--raw", action="store_true", help="input is already conditioned at 256 Hz")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_attn)

    s = sub.add_parser("cost", parents=[common], help="params, MACs, storage, latency and battery")
    s.add_argument("--channels", type=int, required=True)
    s.add_argument("--window", type=float, required=True)
    s.add_argument("--weights", type=int, choices=[2, 4, 8])
    s.add_argument("--acts", type=int, choices=[4, 8], default=8)
    s.add_argument("--compute-ms", type=float)
    s.add_argument("--energy-mj", type=float)
    s.set_defaults(func=cmd_cost)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else 0
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
