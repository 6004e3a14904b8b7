"""Command-line entry point.

Subcommands: train, eval, label, predict, export-repr, plot. Common
flags: --data, --config, --seed, --out, --scene, --dataset. ``--config``
takes a file path or the bare name of a shipped preset (eth, hotel,
univ, zara1, zara2, sdd, kitti). INTENT_THREADS caps worker threads.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import sys
from collections import Counter
from pathlib import Path

from .autodiff import CheckpointError, NumericError
from .config import ConfigError, build_run_config, preset_path
from .datasets import DatasetError, ParseError, WindowConfig, load_dataset
from .evaluation import (
    constant_velocity_predict,
    evaluate_model,
    export_representations,
)
from .model import FrozenModel, load_checkpoint, save_checkpoint
from .trajectory import extract_observation_features
from .training import TrainingError, train
from .viz import plot_windows_svg


def _add_common(sp, data_required=False, out_required=False):
    sp.add_argument("--data", required=data_required, help="dataset root directory")
    sp.add_argument("--config", help="config file path or preset name")
    sp.add_argument("--seed", type=int, help="override the configured seed")
    sp.add_argument("--out", required=out_required, help="output path")
    sp.add_argument("--scene", help="held-out scene (leave-one-out split)")
    sp.add_argument("--dataset", choices=("ethucy", "sdd", "kitti"),
                    help="dataset kind adapter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intent",
        description="Intention-guided trajectory prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p, data_required=True, out_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or baseline)")
    _add_common(p, data_required=True)
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--baseline", choices=("const-vel",),
                   help="evaluate a baseline instead of a checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("label", help="assign intention labels to windows")
    _add_common(p, data_required=True, out_required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("predict", help="write world-frame predictions")
    _add_common(p, data_required=True, out_required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-repr", help="export learned representations")
    _add_common(p, data_required=True, out_required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_export_repr)

    p = sub.add_parser("plot", help="emit an SVG of predictions")
    _add_common(p, data_required=True, out_required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-windows", type=int, default=16)
    p.set_defaults(func=cmd_plot)
    return parser


def _resolve_config(arg):
    if arg is None:
        return None
    path = Path(arg)
    if path.exists():
        return path
    return preset_path(arg)


def _run_config(args):
    overrides = {}
    for key in ("seed", "scene", "dataset"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    return build_run_config(_resolve_config(args.config), overrides)


def _load_windows(args, run, t_obs: int, t_pred: int, want: str):
    ds = load_dataset(run.dataset, args.data,
                      WindowConfig(t_obs=t_obs, t_pred=t_pred))
    if run.scene is None:
        windows = ds.all_windows()
    else:
        train_w, test_w = ds.split(run.scene)
        windows = train_w if want == "train" else test_w
    if not windows:
        raise DatasetError("dataset produced no windows")
    return ds, windows


def cmd_train(args) -> int:
    run = _run_config(args)
    _, windows = _load_windows(args, run, run.model.t_obs, run.model.t_pred,
                               want="train")
    result = train(windows, run.model, run.training, run.thresholds,
                   log_path=str(args.out) + ".log")
    save_checkpoint(args.out, result.params, run.model)
    final = result.history[-1]
    print(f"classification={final.classification:.6f}")
    print(f"contrastive={final.contrastive:.6f}")
    print(f"prediction={final.prediction:.6f}")
    print(f"total={final.total:.6f}")
    print(f"training_seconds={result.total_seconds:.3f}")
    print(f"checkpoint={args.out}")
    return 0


def cmd_eval(args) -> int:
    run = _run_config(args)
    if args.baseline == "const-vel":
        predictor = constant_velocity_predict
        t_obs, t_pred = run.model.t_obs, run.model.t_pred
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --baseline const-vel)")
        params, mconfig = load_checkpoint(args.checkpoint)
        predictor = FrozenModel(params, mconfig)
        t_obs, t_pred = mconfig.t_obs, mconfig.t_pred
    ds, windows = _load_windows(args, run, t_obs, t_pred, want="test")
    report = evaluate_model(predictor, windows, unit=ds.unit)
    sys.stdout.write(report.summary_lines())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_tsv())
    return 0


def cmd_label(args) -> int:
    run = _run_config(args)
    _, windows = _load_windows(args, run, run.model.t_obs, run.model.t_pred,
                               want="train")
    counts = Counter()
    with open(args.out, "w", encoding="utf-8") as fh:
        for w in windows:
            _, _, label = extract_observation_features(w, run.thresholds)
            counts[label.label_name] += 1
            fh.write(f"{w.scene_id}\t{w.agent_id}\t{w.start_frame}\t{label.label_name}\n")
    for name in sorted(counts):
        print(f"{name}={counts[name]}")
    print(f"total={sum(counts.values())}")
    return 0


def cmd_predict(args) -> int:
    run = _run_config(args)
    params, mconfig = load_checkpoint(args.checkpoint)
    model = FrozenModel(params, mconfig)
    _, windows = _load_windows(args, run, mconfig.t_obs, mconfig.t_pred,
                               want="test")
    with open(args.out, "w", encoding="utf-8") as fh:
        for w in windows:
            pred = model.predict(w)
            for i, (x, y) in enumerate(pred):
                frame = w.start_frame + (w.t_obs + i) * w.frame_step
                fh.write(f"{frame} {w.agent_id} {float(x)!r} {float(y)!r} 1\n")
    print(f"predictions={len(windows) * mconfig.t_pred}")
    return 0


def cmd_export_repr(args) -> int:
    run = _run_config(args)
    params, mconfig = load_checkpoint(args.checkpoint)
    model = FrozenModel(params, mconfig)
    _, windows = _load_windows(args, run, mconfig.t_obs, mconfig.t_pred,
                               want="test")
    export_representations(model, windows, args.out)
    print(f"rows={len(windows)}")
    return 0


def cmd_plot(args) -> int:
    run = _run_config(args)
    params, mconfig = load_checkpoint(args.checkpoint)
    model = FrozenModel(params, mconfig)
    _, windows = _load_windows(args, run, mconfig.t_obs, mconfig.t_pred,
                               want="test")
    windows = windows[: args.max_windows]
    predictions = [model.predict(w) for w in windows]
    plot_windows_svg(windows, predictions, args.out)
    print(f"windows={len(windows)}")
    return 0


_RUNTIME_ERRORS = (ConfigError, DatasetError, ParseError, CheckpointError,
                   TrainingError, NumericError, ValueError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
