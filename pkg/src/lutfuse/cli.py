"""``lutfuse`` command line: fuse, train, quantize, eval, bench.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
whose keys are the long option names (dashes or underscores). Explicit
flags override the file; unknown keys are errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .encode import SceneEncoderParams, box_scene_feature, gradient_encoding, intensity_encodings, scene_encode
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    ConfigError,
    DecodeError,
    DimensionMismatchError,
    EmptyDatasetError,
    FileMissingError,
    ImageTooSmallError,
    LutFuseError,
    ModelFormatError,
    NonFiniteError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedBitDepthError,
    UnsupportedVersionError,
)
from .imgio import IMAGE_SUFFIXES, atomic_write_bytes, load_dataset, load_image_pair, load_plane, save_png
from .lutcore import SCENE_BOX, Encodings, LutGrid4D, MmLutModel, _lookup_parallel, fuse_image
from .metrics import aggregate, evaluate
from .modelio import load_model, save_model
from .quantbuild import FROZEN_ENCODER, SceneFeature, build_quantized_lut, quantized_model
from .synthetic import synthetic_pair
from .teacher import PyramidTooDeepError
from .train import LossWeights, TrainConfig, history_csv, load_checkpoint, train_loop

log = logging.getLogger("lutfuse")

_EXIT_CODES = [
    (0, "success"),
    (1, "other error"),
    (2, "command-line usage error"),
    (FileMissingError.exit_code, "input file or directory missing"),
    (DecodeError.exit_code, "image decode failure"),
    (UnsupportedBitDepthError.exit_code, "unsupported image bit depth"),
    (DimensionMismatchError.exit_code, "IR/visible dimension mismatch"),
    (ImageTooSmallError.exit_code, "image too small"),
    (EmptyDatasetError.exit_code, "empty dataset or no matched files"),
    (ConfigError.exit_code, "invalid configuration"),
    (ModelFormatError.exit_code, "malformed model file"),
    (BadMagicError.exit_code, "bad file magic"),
    (UnsupportedVersionError.exit_code, "unsupported format version"),
    (TruncatedFileError.exit_code, "truncated file"),
    (ChecksumMismatchError.exit_code, "checksum mismatch"),
    (NonFiniteError.exit_code, "non-finite values"),
    (ShapeMismatchError.exit_code, "array shape mismatch"),
    (PyramidTooDeepError.exit_code, "pyramid too deep for image size"),
]

EXIT_CODE_HELP = "exit codes:\n" + "\n".join(f"  {c:>3}  {d}" for c, d in _EXIT_CODES)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def parse_size(text: str) -> tuple[int, int]:
    """``"640x480"`` -> ``(640, 480)`` as (width, height)."""
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"invalid size {text!r}; expected WxH, e.g. 640x480") from None
    if w < 1 or h < 1:
        raise ConfigError(f"invalid size {text!r}; both dimensions must be positive")
    return w, h


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise FileMissingError(f"config file not found: {p}")
    out = {}
    for n, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# -- argument handling ------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


class _UsageError(Exception):
    pass


def _add(p: argparse.ArgumentParser, flag: str, default=None, **kw):
    """Register an option whose parse default is None so config keys can fill it."""
    action = p.add_argument(flag, default=None, **kw)
    action.real_default = default
    return action


def _merge(parser: argparse.ArgumentParser, args: argparse.Namespace) -> argparse.Namespace:
    """Apply config file values, then defaults, to options not given as flags."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    config = read_config(args.config) if getattr(args, "config", None) else {}
    for key in config:
        if key not in actions:
            raise ConfigError(f"unknown config key {key!r}")
    for dest, action in actions.items():
        if getattr(args, dest) is not None:
            continue
        if dest in config:
            text = config[dest]
            try:
                if isinstance(action, argparse.BooleanOptionalAction):
                    value = _bool(text)
                elif action.type is not None:
                    value = action.type(text)
                else:
                    value = text
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"config key {dest!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"config key {dest!r}: {value!r} not in {sorted(action.choices)}")
            setattr(args, dest, value)
        else:
            setattr(args, dest, getattr(action, "real_default", None))
    return args


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ConfigError(f"missing required option --{n.replace('_', '-')}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="lutfuse", description=__doc__.split("\n")[0], epilog=EXIT_CODE_HELP, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=EXIT_CODE_HELP, formatter_class=fmt)
        p.add_argument("--config", help="key = value file; flags override its entries")
        return p

    p = command("fuse", "fuse one IR/visible pair with a .mmlut model")
    _add(p, "--ir", help="infrared image")
    _add(p, "--vis", help="visible RGB image")
    _add(p, "--lut", help=".mmlut model")
    _add(p, "--out", help="output PNG")
    _add(p, "--threads", 1, type=_positive_int, help="worker threads (default 1)")
    p.set_defaults(func=cmd_fuse)

    d = TrainConfig()
    p = command("train", "distill a teacher into a .mmlut model")
    _add(p, "--data-dir", help="directory with ir/ and vis/ subdirectories")
    _add(p, "--teacher", d.teacher, choices=["avg", "maxlum", "lappyr"], help="teacher fusion (default lappyr)")
    _add(p, "--out", help="final .mmlut path")
    _add(p, "--epochs", d.epochs, type=int, help=f"default {d.epochs}")
    _add(p, "--lr", d.lr, type=float, help=f"default {d.lr}")
    _add(p, "--batch", d.batch, type=int, help=f"default {d.batch}")
    _add(p, "--patch", d.patch, type=int, help=f"crop size, default {d.patch}")
    _add(p, "--crops-per-image", d.crops_per_image, type=int, help=f"crops per image per epoch, default {d.crops_per_image}")
    _add(p, "--seed", d.seed, type=int, help=f"default {d.seed}")
    _add(p, "--lambda-ssim", d.weights.ssim, type=float, help=f"default {d.weights.ssim}")
    _add(p, "--lambda-tv", d.weights.tv, type=float, help=f"default {d.weights.tv}")
    _add(p, "--lambda-m", d.weights.mono, type=float, help=f"default {d.weights.mono}")
    _add(p, "--weight-decay", d.weight_decay, type=float, help=f"encoder weight decay, default {d.weight_decay}")
    _add(p, "--downsample", d.downsample, type=int, choices=[1, 2, 4], help=f"encoder resolution factor, default {d.downsample}")
    _add(p, "--pyramid-levels", d.pyramid_levels, type=int, help=f"lappyr teacher levels, default {d.pyramid_levels}")
    _add(p, "--deterministic", d.deterministic, action=argparse.BooleanOptionalAction, help="single-threaded reproducible run (default on)")
    _add(p, "--frozen-scene-feature", False, action=argparse.BooleanOptionalAction, help="use the fixed box-mean scene code instead of the encoder")
    _add(p, "--checkpoint-every", d.checkpoint_every, type=int, help="epochs between checkpoints (0: only at the end)")
    _add(p, "--resume", help="checkpoint .mmlut to resume from")
    _add(p, "--loss-csv", help="loss history CSV (default: <out>.csv)")
    p.set_defaults(func=cmd_train)

    p = command("quantize", "build the binned quantization baseline")
    _add(p, "--data-dir", help="directory with ir/ and vis/ subdirectories")
    _add(p, "--teacher", d.teacher, choices=["avg", "maxlum", "lappyr"], help="teacher fusion (default lappyr)")
    _add(p, "--scene-feature", SCENE_BOX, choices=[SCENE_BOX, FROZEN_ENCODER], help="fourth-axis source (default box-mean)")
    _add(p, "--encoder-from", help="model whose encoder is frozen, for --scene-feature frozen-encoder")
    _add(p, "--out", help="output .mmlut path")
    p.set_defaults(func=cmd_quantize)

    p = command("eval", "compute fusion metrics over filename-matched triples")
    _add(p, "--fused-dir", help="fused images")
    _add(p, "--ir-dir", help="infrared images")
    _add(p, "--vis-dir", help="visible images")
    _add(p, "--report", help="aggregate JSON path; per-image CSV goes beside it")
    p.set_defaults(func=cmd_eval)

    p = command("bench", "time the fusion stages on a synthetic pair")
    _add(p, "--size", "640x480", help="WxH (default 640x480)")
    _add(p, "--iters", 10, type=int, help="measured iterations, at least 10 (default 10)")
    _add(p, "--warmup", 3, type=int, help="warmup iterations, at least 3 (default 3)")
    _add(p, "--threads", 1, type=_positive_int, help="worker threads (default 1)")
    _add(p, "--lut", help=".mmlut model (default: untrained average grid with a seeded encoder)")
    _add(p, "--seed", 0, type=int, help="seed for the synthetic pair")
    _add(p, "--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_bench)
    return parser


# -- subcommands ------------------------------------------------------------


def cmd_fuse(args) -> int:
    _require(args, "ir", "vis", "lut", "out")
    model = load_model(args.lut)
    pair = load_image_pair(args.ir, args.vis)
    save_png(args.out, fuse_image(model, pair, args.threads))
    log.info("wrote %s", args.out)
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(
        epochs=args.epochs,
        batch=args.batch,
        patch=args.patch,
        seed=args.seed,
        teacher=args.teacher,
        pyramid_levels=args.pyramid_levels,
        weights=LossWeights(args.lambda_ssim, args.lambda_tv, args.lambda_m),
        lr=args.lr,
        weight_decay=args.weight_decay,
        downsample=args.downsample,
        frozen_scene_feature=args.frozen_scene_feature,
        crops_per_image=args.crops_per_image,
        checkpoint_every=args.checkpoint_every,
        deterministic=args.deterministic,
    )
    cfg.validate()
    return cfg


def checkpoint_path(out: str | Path) -> Path:
    """Checkpoint container beside the final model: ``x.mmlut`` -> ``x.ckpt.mmlut``."""
    out = Path(out)
    return out.with_name(out.stem + ".ckpt" + (out.suffix or ".mmlut"))


def cmd_train(args) -> int:
    _require(args, "data_dir", "out")
    cfg = _train_config(args)
    dataset = load_dataset(args.data_dir)
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt_path = checkpoint_path(args.out)
    ckpt = train_loop(cfg, dataset, out=ckpt_path, resume=resume)
    save_model(ckpt.model, args.out)
    csv_path = Path(args.loss_csv) if args.loss_csv else Path(args.out).with_suffix(".csv")
    atomic_write_bytes(csv_path, history_csv(ckpt.history).encode())
    last = ckpt.history[-1] if ckpt.history else None
    if last:
        print(f"epoch {last[0]}  L_all {last[5]:.6f}  L_int {last[1]:.6f}  violations {last[6]}")
    print(f"model: {args.out}\ncheckpoint: {ckpt_path}\nloss csv: {csv_path}")
    return 0


def cmd_quantize(args) -> int:
    _require(args, "data_dir", "out")
    if args.scene_feature == FROZEN_ENCODER:
        _require(args, "encoder_from")
        src = load_model(args.encoder_from)
        if src.encoder is None:
            raise ConfigError(f"{args.encoder_from} has no encoder to freeze")
        feature = SceneFeature(FROZEN_ENCODER, src.encoder, src.downsample)
    else:
        feature = SceneFeature(SCENE_BOX)
    dataset = load_dataset(args.data_dir)
    result = build_quantized_lut(dataset, args.teacher, feature)
    save_model(quantized_model(result, args.teacher, feature), args.out)
    print(f"coverage {result.coverage:.6f} ({result.covered_cells}/{result.total_cells} cells)")
    return 0


def _scan(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileMissingError(f"directory not found: {d}")
    return {p.name: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def cmd_eval(args) -> int:
    _require(args, "fused_dir", "ir_dir", "vis_dir", "report")
    dirs = [_scan(Path(d)) for d in (args.fused_dir, args.ir_dir, args.vis_dir)]
    names = sorted(set(dirs[0]) & set(dirs[1]) & set(dirs[2]))
    for name in sorted(set().union(*dirs) - set(names)):
        log.warning("skipping unmatched file %s", name)
    if not names:
        raise EmptyDatasetError("no filename appears in all of --fused-dir, --ir-dir and --vis-dir")
    rows = []
    for name in names:
        f, a, b = (load_plane(d[name]) for d in dirs)
        if not f.shape == a.shape == b.shape:
            raise DimensionMismatchError(f"{name}: fused {f.shape}, ir {a.shape}, vis {b.shape}")
        rows.append((name, evaluate(f, a, b)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "mi", "en", "cc", "ssim", "qabf"])
    for name, r in rows:
        w.writerow([name, *(repr(v) for v in r.as_dict().values())])
    report = Path(args.report)
    summary = aggregate([r for _, r in rows])
    summary["count"] = len(rows)
    atomic_write_bytes(report.with_suffix(".csv"), buf.getvalue().encode())
    atomic_write_bytes(report, (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    print(json.dumps(summary, sort_keys=True))
    return 0


def _default_bench_model() -> MmLutModel:
    return MmLutModel(LutGrid4D.average(), SceneEncoderParams.init(0), metadata={"method": "untrained"})


def _stat(samples: list[float]) -> dict:
    return {"mean": statistics.fmean(samples), "std": statistics.pstdev(samples)}


def run_bench(model: MmLutModel, width: int, height: int, iters: int = 10, warmup: int = 3,
              threads: int = 1, seed: int = 0) -> dict:
    """Per-stage timings (ms) over ``iters`` runs after ``warmup`` discarded runs.

    Image decode is excluded; the pair is generated in memory beforehand.
    """
    if iters < 10 or warmup < 3:
        raise ConfigError("bench needs --iters >= 10 and --warmup >= 3")
    pair = synthetic_pair(np.random.default_rng(seed), height, width)
    stages = {"encode_lae": [], "scene_encode": [], "lookup": [], "total": []}
    clock = time.perf_counter
    with threadpool_limits(limits=threads):
        measured_start = None
        for it in range(warmup + iters):
            if it == warmup:
                measured_start = clock()
            t0 = clock()
            n_i, n_v = intensity_encodings(pair)
            g_v = gradient_encoding(n_v)
            t1 = clock()
            if model.scene_feature == SCENE_BOX:
                s_j = box_scene_feature(n_v, n_i)
            else:
                s_j, _ = scene_encode((n_v, n_i), model.encoder, model.downsample)
            t2 = clock()
            y = _lookup_parallel(model.grid, Encodings(n_i, n_v, g_v, s_j.astype(np.float32)), threads)
            np.clip(y, 0, 255, out=y)
            t3 = clock()
            if it >= warmup:
                for key, dt in zip(stages, (t1 - t0, t2 - t1, t3 - t2, t3 - t0)):
                    stages[key].append(dt * 1e3)
        measured = clock() - measured_start
    mp = width * height / 1e6
    timings = {k: _stat(v) for k, v in stages.items()}
    return {
        "resolution": {"width": width, "height": height},
        "threads": threads,
        "iters": iters,
        "warmup": warmup,
        "scene_feature": model.scene_feature,
        "downsample": model.downsample,
        "timings_ms": timings,
        "throughput_mps": {
            "lookup": mp / (timings["lookup"]["mean"] / 1e3),
            "total": mp / (timings["total"]["mean"] / 1e3),
        },
        "measured_wall_s": measured,
    }


def cmd_bench(args) -> int:
    width, height = parse_size(args.size)
    model = load_model(args.lut) if args.lut else _default_bench_model()
    report = run_bench(model, width, height, args.iters, args.warmup, args.threads, args.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        atomic_write_bytes(args.out, (text + "\n").encode())
    print(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _merge(sub, args)
        return args.func(args)
    except LutFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
