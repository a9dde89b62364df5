"""``birdssl`` command-line entry point.

Exit codes: 0 success, 1 validation error (bad flags, config, manifest or
input data), 2 runtime error (I/O failure, failed gradient check, diverged
training).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import objectives
from .audio import FrontendConfig, MelSpectrogram, WavError, load_wav, mel_spectrogram, prepare_clip, write_mels
from .augment import AugmentConfig, mix, spec_augment, time_shift
from .config import ConfigError, RunConfig, format_config, load_config
from .dataset import ManifestError, read_manifest, synth_dataset
from .encoder import CheckpointError, Encoder, load_checkpoint, save_checkpoint
from .fewshot import InsufficientDataError, evaluate_split, write_embeddings
from .train import TrainingError, train, write_log
from .windows import ScoreFileError, chunk

logger = logging.getLogger("birdssl")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

CHECKPOINT_NAME = "checkpoint.sslb"
LOG_NAME = "train.log"
RESULTS_NAME = "results.txt"
PREVIEW_NAMES = ("input.mels", "shift.mels", "mix.mels", "mask.mels")
GRAD_TOLERANCE = 1e-4


class ValidationError(Exception):
    pass


def _load_run_config(args) -> RunConfig:
    if args.config is None:
        raise ValidationError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load_manifest(cfg: RunConfig, need_split: str):
    try:
        manifest = read_manifest(cfg.manifest)
    except OSError as exc:
        raise ValidationError(f"cannot read manifest {cfg.manifest}: {exc}") from None
    if not manifest.split(need_split):
        raise ValidationError(f"manifest {cfg.manifest} has no {need_split!r} entries")
    return manifest


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    if min(args.n_train_classes, args.n_test_classes, args.files_per_class) < 1:
        raise ValidationError("class and file counts must be positive")
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    manifest = synth_dataset(out, args.n_train_classes, args.n_test_classes,
                             args.files_per_class, seed)
    print(f"wrote {len(manifest.entries)} files and {out / 'manifest.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if args.init_only:
        out = _out_dir(args)
        encoder = Encoder.init(cfg.encoder, cfg.train.seed)
        save_checkpoint(out / CHECKPOINT_NAME, encoder)
        print(f"wrote random-init checkpoint {out / CHECKPOINT_NAME}")
        return EXIT_OK
    manifest = _load_manifest(cfg, "train")
    if cfg.train.objective == "supcon":
        unlabeled = [e.path for e in manifest.split("train") if not e.label]
        if unlabeled:
            raise ValidationError(f"train.objective=supcon needs labels; {len(unlabeled)} train "
                                  f"entries have none (first: {unlabeled[0]})")
    out = _out_dir(args)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    encoder, log = train(manifest, cfg.train, cfg.encoder, cfg.frontend, cfg.augment)
    save_checkpoint(out / CHECKPOINT_NAME, encoder)
    write_log(out / LOG_NAME, log)
    print(f"final loss {log[-1].mean_loss:.6g}; wrote {out / CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    if args.checkpoint is None:
        raise ValidationError("--checkpoint is required")
    manifest = _load_manifest(cfg, args.split)
    encoder = load_checkpoint(args.checkpoint)
    mean, ci, groups, embed = evaluate_split(manifest, encoder, cfg.eval, cfg.frontend, args.split)
    out = _out_dir(args)
    e = cfg.eval
    fields = {
        "objective": cfg.train.objective,
        "selection": cfg.train.selection,
        "strategy": e.embedding_strategy,
        "n_way": e.n_way,
        "k_shot": e.k_shot,
        "n_query": e.n_query,
        "n_tasks": e.n_tasks,
        "seed": e.seed,
        "accuracy": f"{mean:.6f}",
        "ci95": f"{ci:.6f}",
    }
    results = "".join(f"{k}={v}\n" for k, v in fields.items())
    (out / RESULTS_NAME).write_text(results, encoding="utf-8")
    print(f"{e.n_way}-way {e.k_shot}-shot accuracy {100 * mean:.2f} +- {100 * ci:.2f} "
          f"over {e.n_tasks} tasks")
    if args.dump_embeddings:
        labels = list(groups)
        entries = [(entry, ci_) for ci_, lab in enumerate(labels) for entry in groups[lab]]
        vectors = np.stack([embed(entry) for entry, _ in entries])
        write_embeddings(args.dump_embeddings, vectors, [c for _, c in entries])
    return EXIT_OK


def _inject_fault(out: objectives.LossOutput) -> objectives.LossOutput:
    g1 = out.grad_z1.copy()
    g1.flat[0] += 1e-2 * (1.0 + abs(g1.flat[0]))
    return objectives.LossOutput(out.value, g1, out.grad_z2)


def cmd_grad_check(args) -> int:
    if args.n < 2 or args.d < 2 or not args.h > 0:
        raise ValidationError("need --n >= 2, --d >= 2 and --h > 0")
    names = objectives.OBJECTIVES if args.objective == "all" else (args.objective,)
    seed = 0 if args.seed is None else args.seed
    cfg = objectives.ObjectiveConfig()
    failed = False
    for name in names:
        rng = np.random.default_rng(seed)
        z1 = rng.standard_normal((args.n, args.d))
        z2 = rng.standard_normal((args.n, args.d))
        labels = rng.integers(0, max(2, args.n // 2), size=args.n) if name == "supcon" else None
        fn = objectives.paired_objective(name, labels)
        analytic = fn(z1, z2, cfg)
        if args.inject_fault:
            analytic = _inject_fault(analytic)
        err = objectives.finite_difference_check(fn, z1, z2, cfg, h=args.h, analytic=analytic)
        ok = err < GRAD_TOLERANCE
        failed |= not ok
        print(f"{name}\tmax_rel_error={err:.3e}\t{'ok' if ok else 'FAIL'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_augment_preview(args) -> int:
    if args.config is not None:
        cfg = load_config(args.config)
        frontend, augment = cfg.frontend, cfg.augment
    else:
        frontend, augment = FrontendConfig(), AugmentConfig()
    seed = 0 if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    clip = prepare_clip(load_wav(args.audio), frontend)
    spec = mel_spectrogram(chunk(clip, frontend.window_s)[0].extract(), frontend)
    # round through float32 first so every stage works on exactly what gets written
    spec = MelSpectrogram(spec.values.astype(np.float32), spec.hop_s)
    shifted = time_shift(spec, int(rng.integers(0, spec.n_frames)))
    mixed = mix(shifted, shifted, float(rng.uniform(augment.mix_coeff_min, augment.mix_coeff_max)))
    masked = spec_augment(mixed, augment, rng)
    out = _out_dir(args)
    for name, stage in zip(PREVIEW_NAMES, (spec, shifted, mixed, masked)):
        write_mels(out / name, stage)
    print(f"wrote {', '.join(PREVIEW_NAMES)} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--seed", type=int, default=None, help="overrides train.seed and eval.seed")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="birdssl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="generate the synthetic chirp corpus")
    p.add_argument("--n-train-classes", type=int, default=12)
    p.add_argument("--n-test-classes", type=int, default=6)
    p.add_argument("--files-per-class", type=int, default=20)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", parents=[common], help="train an encoder")
    p.add_argument("--init-only", action="store_true",
                   help="write the random-init checkpoint without training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="episodic few-shot evaluation")
    p.add_argument("--checkpoint", required=False)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--dump-embeddings", metavar="PATH", help="write an EMBD embedding dump")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient check")
    p.add_argument("--objective", default="all", choices=("all",) + objectives.OBJECTIVES)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--inject-fault", action="store_true",
                   help="corrupt the analytic gradient; the check must then fail")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("augment-preview", parents=[common],
                       help="dump the spectrogram after each augmentation stage")
    p.add_argument("audio", help="WAV file")
    p.set_defaults(func=cmd_augment_preview)
    return parser


VALIDATION_ERRORS = (ValidationError, ConfigError, ManifestError, InsufficientDataError,
                     WavError, ScoreFileError, CheckpointError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, OSError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
