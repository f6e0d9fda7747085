"""Command-line entry point: ``lrpursuit {run,eval,bench,synth}``."""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import enum
import io
import logging
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import formats
from .bench import SyntheticSpec, iter_stream, metrics_csv, score_masks
from .model import ContractError, PursuitConfig
from .pursuit import PursuitSession

log = logging.getLogger("lrpursuit")


class SourceKind(str, enum.Enum):
    CSV_MATRIX = "csv"
    PGM_SEQUENCE = "pgm"
    SYNTHETIC = "synthetic"


@dataclass
class FrameSource:
    """Where frames come from; all frames of a source share dimensions."""

    kind: SourceKind
    path: Path | None = None
    spec: SyntheticSpec | None = None
    frame_shape: tuple[int, int] | None = None
    sensor_size: int = 1
    n_frames: int | None = None
    value_range: tuple[float, float] | None = None

    def frames(self) -> Iterator[np.ndarray]:
        if self.kind is SourceKind.SYNTHETIC:
            for fr in iter_stream(self.spec, self.n_frames or 0):
                yield fr.x
        elif self.kind is SourceKind.CSV_MATRIX:
            M = formats.read_csv_matrix(self.path)
            yield from M[: self.n_frames] if self.n_frames is not None else M
        else:
            paths = formats.list_pnm(self.path)
            for p in paths[: self.n_frames] if self.n_frames is not None else paths:
                pixels, _ = formats.read_pnm(p)
                if pixels.shape[:2] != tuple(self.frame_shape):
                    raise ContractError(f"{p}: frame is {pixels.shape[:2]}, expected {self.frame_shape}")
                yield pixels.astype(float).reshape(-1)

    @classmethod
    def open(cls, kind: str, path=None, spec: SyntheticSpec | None = None, n_frames=None,
             frame_shape=None) -> "FrameSource":
        kind = SourceKind(kind)
        if kind is SourceKind.SYNTHETIC:
            if spec is None:
                raise ContractError("synthetic source needs a SyntheticSpec")
            return cls(kind, spec=spec, frame_shape=spec.frame_shape, sensor_size=spec.sensor_size,
                       n_frames=n_frames)
        if path is None:
            raise ContractError(f"{kind.value} source needs --input")
        path = Path(path)
        if kind is SourceKind.PGM_SEQUENCE:
            files = formats.list_pnm(path)
            if not files:
                raise ContractError(f"{path}: no PGM/PPM files")
            pixels, maxval = formats.read_pnm(files[0])
            n = 3 if pixels.ndim == 3 else 1
            return cls(kind, path=path, frame_shape=pixels.shape[:2], sensor_size=n,
                       n_frames=n_frames, value_range=(0.0, float(maxval)))
        if not path.is_file():
            raise ContractError(f"{path}: no such file")
        return cls(kind, path=path, frame_shape=frame_shape, n_frames=n_frames)


# -- configuration ---------------------------------------------------------

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(PursuitConfig)]


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` and ``;`` start comments."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise ContractError(f"cannot read config file {path}: {exc}") from None
    return dict(parser["config"])


def build_config(args) -> PursuitConfig:
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _CONFIG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = str(v)
    return PursuitConfig.from_mapping(values)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pursuit configuration (overrides --config)")
    g.add_argument("--config", help="flat key=value file with PursuitConfig fields")
    for f in dataclasses.fields(PursuitConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "backtracking":
            g.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        elif f.name == "rng_seed":
            g.add_argument(flag, "--seed", dest=f.name, default=None)
        else:
            g.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def _shape(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _add_source_flags(p: argparse.ArgumentParser, default_kind: str = "synthetic") -> None:
    g = p.add_argument_group("frame source")
    g.add_argument("--source", choices=[k.value for k in SourceKind], default=default_kind)
    g.add_argument("--input", help="CSV file or directory of PGM/PPM frames")
    g.add_argument("--frames", type=int, default=None, help="number of frames (synthetic: required)")
    g.add_argument("--shape", type=_shape, default=None, help="frame shape HxW")
    _add_synth_flags(p)


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic stream")
    g.add_argument("--synth-rank", type=int, default=4)
    g.add_argument("--synth-delta", type=float, default=5.0)
    g.add_argument("--sparse-fraction", type=float, default=0.0)
    g.add_argument("--sparse-magnitude", type=float, default=None)
    g.add_argument("--drift-rate", type=float, default=0.0)
    g.add_argument("--blob-size", type=int, default=4)
    g.add_argument("--coef-jitter", type=float, default=0.5)
    g.add_argument("--signal-scale", type=float, default=50.0)
    g.add_argument("--offset", type=float, default=0.0)
    g.add_argument("--synth-seed", type=int, default=None, help="defaults to the pursuit seed")


def _synth_spec(args, seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        frame_shape=args.shape or (32, 32), rank=args.synth_rank, delta=args.synth_delta,
        sparse_fraction=args.sparse_fraction, sparse_magnitude=args.sparse_magnitude,
        drift_rate=args.drift_rate, blob_size=args.blob_size, coef_jitter=args.coef_jitter,
        signal_scale=args.signal_scale, offset=args.offset,
        seed=seed if args.synth_seed is None else args.synth_seed)


def _open_source(args, cfg: PursuitConfig) -> FrameSource:
    if args.source == SourceKind.SYNTHETIC.value:
        if args.frames is None:
            raise ContractError("synthetic source needs --frames")
        return FrameSource.open("synthetic", spec=_synth_spec(args, cfg.rng_seed), n_frames=args.frames)
    return FrameSource.open(args.source, args.input, n_frames=args.frames, frame_shape=args.shape)


# -- run ---------------------------------------------------------------------

_METRIC_COLUMNS = ["frame", "threshold", "events", "objective", "feasibility", "ms"]


def _stage(out_dir: Path) -> Path:
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))


def _publish(tmp: Path, out_dir: Path) -> None:
    if not out_dir.exists():
        tmp.rename(out_dir)
        return
    for item in sorted(tmp.iterdir()):
        item.replace(out_dir / item.name)
    tmp.rmdir()


def cmd_run(source: FrameSource, cfg: PursuitConfig, out_dir, warmup: int | None = None,
            test_mode: bool = False) -> int:
    """Process a whole source; write masks, ``metrics.csv`` and ``factors.bin``.

    Warm-up uses the first ``warmup`` frames (default: the window length),
    then every frame, warm-up ones included, is stepped and gets a mask.
    Nothing lands in ``out_dir`` unless the whole run succeeds.  In test
    mode the wall-clock column is written as 0 so reruns are byte-identical.
    """
    out_dir = Path(out_dir)
    frames = list(source.frames())
    if not frames:
        raise ContractError("source has no frames")
    if source.value_range is not None and cfg.value_range is None:
        cfg = cfg.replace(value_range=source.value_range)
    n_warm = min(cfg.window_len if warmup is None else warmup, len(frames))
    session = PursuitSession.init(cfg, frames[:max(n_warm, 1)], sensor_size=source.sensor_size,
                                  frame_shape=source.frame_shape)
    tmp = _stage(out_dir)
    try:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_METRIC_COLUMNS)
        width = max(6, len(str(len(frames))))
        for k, x in enumerate(frames, 1):
            mask = session.step(x)
            m = session.track_metrics()
            formats.write_mask(tmp / f"mask_{k:0{width}d}.pgm", mask, session.frame_shape)
            ms = 0.0 if test_mode else m.step_ms
            writer.writerow([k, "" if m.threshold is None else m.threshold, m.n_events,
                             f"{m.objective:.10g}", f"{m.feasibility:.6f}", f"{ms:.3f}"])
        (tmp / "metrics.csv").write_text(buf.getvalue())
        formats.write_factors(tmp / "factors.bin", session.factors)
        _publish(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return 0


# -- eval --------------------------------------------------------------------

def read_truth(path) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth image to ``(events, valid)``: 255 is an event, 85 and 170 are not scored.

    The gray levels follow the common change-detection convention (0 static,
    50 shadow, 85 outside the region of interest, 170 unknown, 255 motion).
    """
    pixels, _ = formats.read_pnm(path)
    if pixels.ndim == 3:
        pixels = pixels[..., 0]
    return pixels == 255, (pixels != 85) & (pixels != 170)


def cmd_eval(pred_dir, truth_dir, by_order: bool = False, category: str = "-",
             sequence: str = "-", out=None) -> int:
    pred = formats.list_pnm(pred_dir)
    truth = formats.list_pnm(truth_dir)
    if not pred or not truth:
        raise ContractError("no mask files found")
    if by_order:
        if len(pred) != len(truth):
            raise ContractError(f"{len(pred)} predicted vs {len(truth)} ground-truth files")
        pairs = list(zip(pred, truth))
    else:
        names_p = {p.name for p in pred}
        names_t = {p.name for p in truth}
        if names_p != names_t:
            missing = sorted(names_p ^ names_t)
            raise ContractError(f"file sets differ, e.g. {missing[:3]}")
        pairs = [(p, Path(truth_dir) / p.name) for p in pred]
    predicted, actual, valid = [], [], []
    for p, t in pairs:
        events = formats.read_mask(p)
        truth_events, keep = read_truth(t)
        if events.shape != truth_events.shape:
            raise ContractError(f"{p.name}: mask is {events.shape}, truth is {truth_events.shape}")
        predicted.append(~events)
        actual.append(~truth_events)
        valid.append(keep)
    metrics = score_masks(predicted, actual, valid)
    (out or sys.stdout).write(metrics_csv([(category, sequence, metrics)]))
    return 0


# -- bench -------------------------------------------------------------------

def cmd_bench(source: FrameSource, cfg: PursuitConfig, warmup: int | None = None, out=None) -> int:
    """Per-frame wall time of ``step`` after warm-up; single-threaded."""
    out = out or sys.stdout
    frames = list(source.frames())
    n_warm = min(cfg.window_len if warmup is None else warmup, len(frames))
    timed = frames[n_warm:] if len(frames) > n_warm else []
    lines = [f"frames={len(timed)}",
             f"frame_shape={'x'.join(map(str, source.frame_shape)) if source.frame_shape else '-'}",
             f"entries={frames[0].size if frames else 0}",
             f"epochs_per_update={cfg.epochs_per_update}"]
    if timed:
        if source.value_range is not None and cfg.value_range is None:
            cfg = cfg.replace(value_range=source.value_range)
        session = PursuitSession.init(cfg, frames[:n_warm], sensor_size=source.sensor_size,
                                      frame_shape=source.frame_shape)
        times = []
        for x in timed:
            t0 = time.perf_counter()
            session.step(x)
            times.append(time.perf_counter() - t0)
        t = np.array(times)
        lines += [f"mean_s={t.mean():.6f}", f"median_s={np.median(t):.6f}",
                  f"p95_s={np.percentile(t, 95):.6f}"]
    out.write("\n".join(lines) + "\n")
    return 0


# -- synth -------------------------------------------------------------------

def cmd_synth(spec: SyntheticSpec, n_frames: int, out_dir, fmt: str = "csv") -> int:
    """Write a synthetic stream: frames as ``frames.csv`` or PGM/PPM, truth masks as PGM."""
    out_dir = Path(out_dir)
    tmp = _stage(out_dir)
    try:
        stream = list(iter_stream(spec, n_frames))
        width = max(6, len(str(n_frames)))
        if fmt == "csv":
            formats.write_csv_matrix(tmp / "frames.csv", np.array([fr.x for fr in stream])
                                     if stream else np.zeros((0, spec.n_cols)))
        else:
            (tmp / "frames").mkdir()
            ext = "ppm" if spec.sensor_size == 3 else "pgm"
            clipped = sum(int(np.count_nonzero((fr.x < 0) | (fr.x > 255))) for fr in stream)
            if clipped:
                log.warning("%d entries fall outside [0, 255] and are clipped; "
                            "consider --offset and --signal-scale", clipped)
            for k, fr in enumerate(stream, 1):
                formats.write_pnm(tmp / "frames" / f"frame_{k:0{width}d}.{ext}",
                                  formats.to_pixels(fr.x, spec.frame_shape, spec.sensor_size))
        (tmp / "truth").mkdir()
        for k, fr in enumerate(stream, 1):
            events = fr.truth.events.reshape(spec.frame_shape)
            formats.write_pnm(tmp / "truth" / f"mask_{k:0{width}d}.pgm",
                              np.where(events, 255, 0).astype(np.uint8))
        _publish(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return 0


# -- entry point -----------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrpursuit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="detect events in a frame stream")
    _add_source_flags(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--warmup", type=int, default=None, help="warm-up frames (default: window_len)")
    p.add_argument("--test-mode", action="store_true",
                   help="require --seed and zero the wall-clock column")

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("truth_dir")
    p.add_argument("--by-order", action="store_true", help="pair files by sorted order, not name")
    p.add_argument("--category", default="-")
    p.add_argument("--sequence", default="-")

    p = sub.add_parser("bench", help="time per-frame processing")
    _add_source_flags(p)
    _add_config_flags(p)
    p.add_argument("--warmup", type=int, default=None)

    p = sub.add_parser("synth", help="write a synthetic stream to disk")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--shape", type=_shape, default=None)
    p.add_argument("--sensor-size", type=int, default=1, choices=(1, 3))
    p.add_argument("--format", choices=("csv", "pgm"), default="csv")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--test-mode", action="store_true", help="require --seed")
    p.add_argument("--out", required=True)
    _add_synth_flags(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "eval":
            return cmd_eval(args.pred_dir, args.truth_dir, args.by_order, args.category, args.sequence)
        if args.command == "synth":
            if args.test_mode and args.seed is None and args.synth_seed is None:
                raise ContractError("--seed is required in test mode")
            seed = args.seed if args.seed is not None else 0
            spec = _synth_spec(args, seed)
            spec = dataclasses.replace(spec, sensor_size=args.sensor_size)
            return cmd_synth(spec, args.frames, args.out, args.format)
        cfg = build_config(args)
        source = _open_source(args, cfg)
        if args.command == "run":
            if args.test_mode and args.rng_seed is None:
                raise ContractError("--seed is required in test mode")
            return cmd_run(source, cfg, args.out, args.warmup, args.test_mode)
        return cmd_bench(source, cfg, args.warmup)
    except (ContractError, OSError, ValueError) as exc:
        print(f"lrpursuit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
