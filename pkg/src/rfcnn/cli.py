"""Command-line entry point: architecture display, receptive-field tables,
preprocessing, synthetic data, training, evaluation, and grid runs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import glob
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arch import SpecError, SpecParseError, make_network, parse_spec, serialize_spec, format_layout
from .audio import PipelineSettings, fit_norm, apply_norm, load_wav, spectrogram_pipeline, WavFormatError
from .config import Config, ConfigError
from .fileio import (
    FileFormatError,
    load_checkpoint,
    load_dataset,
    load_norm_stats,
    save_checkpoint,
    save_dataset,
    save_norm_stats,
)
from .network import Network
from .receptive_field import REFERENCE_MAX_RF, max_rf, rf_table, verify_reference_table
from .synthetic import SynthTask, as_arrays, generate
from .training import average_predictions, evaluate, summarize_runs, train_loop

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class VerificationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="rfcnn", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("arch", help="show or save an architecture")
    p.add_argument("action", choices=["show", "save"])
    p.add_argument("--rho", type=int, required=True)
    p.add_argument("--variant", default="plain")
    p.add_argument("--base-width", type=int, default=128)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--in-channels", type=int, default=2)
    p.add_argument("--out", help="spec file to write (save)")

    p = sub.add_parser("rf", help="maximum receptive field")
    p.add_argument("--rho", type=int)
    p.add_argument("--variant", default="plain")
    p.add_argument("--table", action="store_true",
                   help="print the full rho 0..21 table")
    p.add_argument("--check-table", action="store_true",
                   help="verify the table against the reference values")

    p = sub.add_parser("preprocess", help="WAV directory to spectrogram dataset")
    p.add_argument("--in", dest="input_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hop", type=int)
    p.add_argument("--mels", type=int)
    p.add_argument("--labels", help="CSV of 'filename,label' pairs")
    p.add_argument("--fit-norm", action="store_true",
                   help="fit and store normalization stats on this set")
    p.add_argument("--norm", help="directory with stats to apply")
    p.add_argument("--config")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--task", default="freq-position",
                   choices=["freq-position", "pattern-only"])
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mel-bins", type=int, default=64)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--pattern-size", type=int, default=8)
    p.add_argument("--margin", type=int, default=16)
    p.add_argument("--band-spacing", type=int,
                   help="exact distance between class band starts")
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one network")
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--spec", help="architecture file (overrides --rho/--variant)")
    p.add_argument("--rho", type=int)
    p.add_argument("--variant", default="plain")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--base-width", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--mixup", choices=["on", "off"])
    p.add_argument("--roll", choices=["on", "off"])
    p.add_argument("--snapshots", type=int, default=None,
                   help="ring size of kept epoch checkpoints "
                        "(default: config snapshot_k, 25; 0 disables)")

    p = sub.add_parser("eval", help="evaluate checkpoints on a dataset")
    p.add_argument("--checkpoints", required=True, help="glob of .ckpt files")
    p.add_argument("--data", required=True)
    p.add_argument("--average", action="store_true",
                   help="also report averaged predictions")

    p = sub.add_parser("grid", help="train a (rho x variant) grid")
    p.add_argument("--rhos", required=True, help="comma-separated rho values")
    p.add_argument("--variants", required=True, help="comma-separated variants")
    p.add_argument("--runs", type=int, default=2)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--last-k", type=int, default=None,
                   help="epochs pooled into the summary (default: config last_k)")
    p.add_argument("--config")
    p.add_argument("--base-width", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--mixup", choices=["on", "off"])
    p.add_argument("--roll", choices=["on", "off"])
    return parser


def _load_config(args) -> Config:
    cfg = Config()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        cfg.update_from_file(path)
    overrides = {
        "base_width": "base_width",
        "batch_size": "batch_size",
        "lr_start": "lr_start",
        "lr_end": "lr_end",
        "epochs": "epochs",
        "hop": "hop",
        "mels": "mels",
    }
    for attr, key in overrides.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(key, value)
    for attr, key in (("mixup", "mixup.enabled"), ("roll", "roll.enabled")):
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(key, value == "on")
    return cfg


def _spec_for(args, cfg: Config, num_classes: int, in_channels: int):
    if getattr(args, "spec", None):
        path = Path(args.spec)
        if not path.exists():
            raise DataError(f"spec file not found: {path}")
        return parse_spec(path.read_text())
    if args.rho is None:
        raise UsageError("either --spec or --rho is required")
    return make_network(
        args.rho, variant=args.variant, num_classes=num_classes,
        base_width=cfg["base_width"], in_channels=in_channels,
        freq_mode=cfg["freq_mode"],
    )


def _load_split(directory):
    clips = load_dataset(directory)
    try:
        return as_arrays(clips)
    except ValueError as exc:
        raise DataError(f"{directory}: {exc}") from exc


# -- commands ------------------------------------------------------------------


def cmd_arch(args) -> int:
    spec = make_network(
        args.rho, variant=args.variant, num_classes=args.classes,
        base_width=args.base_width, in_channels=args.in_channels,
    )
    if args.action == "show":
        print(format_layout(spec, max_rf(spec)))
    else:
        if not args.out:
            raise UsageError("arch save requires --out")
        Path(args.out).write_text(serialize_spec(spec))
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_rf(args) -> int:
    if args.check_table:
        mismatches = verify_reference_table()
        for rho, (rf_f, rf_t) in rf_table(0, 21, variant=args.variant, base_width=8):
            print(f"rho={rho:<2} max_rf={rf_f}x{rf_t} reference="
                  f"{REFERENCE_MAX_RF[rho]}x{REFERENCE_MAX_RF[rho]}")
        if mismatches:
            raise VerificationError("; ".join(mismatches))
        print("all 22 entries match")
        return EXIT_OK
    if args.table:
        for rho, (rf_f, rf_t) in rf_table(0, 21, variant=args.variant, base_width=8):
            print(f"rho={rho:<2} max_rf={rf_f}x{rf_t}")
        return EXIT_OK
    if args.rho is None:
        raise UsageError("rf requires --rho, --table, or --check-table")
    spec = make_network(args.rho, variant=args.variant, base_width=8)
    rf_f, rf_t = max_rf(spec)
    print(f"rho={args.rho} max_rf={rf_f}x{rf_t}")
    return EXIT_OK


def _read_labels_csv(path) -> dict[str, int]:
    labels = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'filename,label'")
        try:
            labels[parts[0].strip()] = int(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: label must be an integer") from None
    return labels


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    input_dir = Path(args.input_dir)
    wavs = sorted(input_dir.glob("*.wav"))
    if not wavs:
        raise DataError(f"no .wav files in {input_dir}")
    labels = _read_labels_csv(args.labels) if args.labels else {}
    settings = PipelineSettings(
        sample_rate=cfg["sample_rate"], window=cfg["window"],
        hop=cfg["hop"], n_mels=cfg["mels"],
    )
    clips = []
    for path in wavs:
        try:
            audio = load_wav(path)
        except WavFormatError as exc:
            raise DataError(str(exc)) from exc
        clips.append(
            spectrogram_pipeline(
                audio, settings,
                label=labels.get(path.name), source_id=str(path),
            )
        )
    if args.norm:
        stats = load_norm_stats(args.norm)
        clips = [apply_norm(c, stats) for c in clips]
    out = Path(args.out)
    save_dataset(out, clips)
    if args.fit_norm:
        save_norm_stats(out, fit_norm(clips))
    cfg.echo(out, __version__)
    print(f"wrote {len(clips)} clips to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        task = SynthTask(
            kind=args.task, num_classes=args.classes, mel_bins=args.mel_bins,
            frames=args.frames, pattern_size=args.pattern_size,
            margin=args.margin, seed=args.seed, channels=args.channels,
            band_spacing=args.band_spacing,
        )
        clips = generate(task, args.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    save_dataset(out, clips)
    Config().echo(out, __version__, extra={
        "task.kind": task.kind, "task.classes": task.num_classes,
        "task.n": args.n, "task.mel_bins": task.mel_bins,
        "task.frames": task.frames, "task.pattern_size": task.pattern_size,
        "task.margin": task.margin, "task.seed": task.seed,
        "task.channels": task.channels,
    })
    print(f"wrote {len(clips)} clips to {out}")
    return EXIT_OK


class _SnapshotRing:
    """Keeps checkpoint files of the last K epochs."""

    def __init__(self, directory: Path, k: int):
        self.directory = directory
        self.k = k
        self.kept: list[Path] = []

    def __call__(self, epoch: int, net: Network) -> None:
        path = self.directory / f"snapshot_{epoch:04d}.ckpt"
        save_checkpoint(path, net)
        self.kept.append(path)
        while len(self.kept) > self.k:
            self.kept.pop(0).unlink()


def _train_one(spec, x_train, y_train, x_test, y_test, cfg, seed, out_dir,
               snapshots: int = 0):
    net = Network(spec, seed=seed, dtype=np.float32)
    sink = None
    if snapshots > 0:
        out_dir.mkdir(parents=True, exist_ok=True)
        sink = _SnapshotRing(out_dir, snapshots)
    report = train_loop(
        net, (x_train, y_train), (x_test, y_test),
        cfg.train_settings(seed=seed), snapshot_sink=sink,
    )
    return net, report


def _write_report(out_dir: Path, report, last_k: int):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text("\n".join(report.to_lines()) + "\n")
    k = min(last_k, len(report.test_accuracy))
    mean, std, count = summarize_runs([report], k)
    summary = (
        f"epochs = {len(report.epochs)}\n"
        f"last_k = {k}\n"
        f"values = {count}\n"
        f"test_accuracy_mean = {mean:.6f}\n"
        f"test_accuracy_std = {std:.6f}\n"
        f"final_train_accuracy = {report.train_accuracy[-1]:.6f}\n"
    )
    (out_dir / "summary.txt").write_text(summary)
    return mean, std


def cmd_train(args) -> int:
    cfg = _load_config(args)
    x_train, y_train = _load_split(args.data)
    x_test, y_test = _load_split(args.test_data)
    num_classes = max(2, int(max(y_train.max(), y_test.max())) + 1)
    spec = _spec_for(args, cfg, num_classes, x_train.shape[1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshots = cfg["snapshot_k"] if args.snapshots is None else args.snapshots
    net, report = _train_one(
        spec, x_train, y_train, x_test, y_test, cfg, args.seed, out,
        snapshots=snapshots,
    )
    save_checkpoint(out / "model.ckpt", net)
    mean, std = _write_report(out, report, cfg["last_k"])
    cfg.echo(out, __version__, extra={"seed": args.seed,
                                      "spec": serialize_spec(spec).replace("\n", "; ")})
    print(f"final test_acc={report.test_accuracy[-1]:.4f} "
          f"last_k_mean={mean:.4f} last_k_std={std:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    paths = sorted(glob.glob(args.checkpoints))
    if not paths:
        raise DataError(f"no checkpoints match {args.checkpoints!r}")
    x, y = _load_split(args.data)
    all_probs = []
    for path in paths:
        net = load_checkpoint(path)
        probs = net.predict_proba(x)
        all_probs.append(probs)
        acc = float((probs.argmax(axis=1) == y).mean())
        print(f"checkpoint={path} accuracy={acc:.4f}")
    if args.average:
        avg = average_predictions(all_probs)
        acc = float((avg.argmax(axis=1) == y).mean())
        print(f"averaged_over={len(paths)} accuracy={acc:.4f}")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _load_config(args)
    try:
        rhos = [int(tok) for tok in args.rhos.split(",") if tok.strip() != ""]
    except ValueError:
        raise UsageError(f"bad --rhos value {args.rhos!r}") from None
    variants = [tok.strip() for tok in args.variants.split(",") if tok.strip()]
    if not rhos or not variants:
        raise UsageError("empty --rhos or --variants")
    x_train, y_train = _load_split(args.data)
    x_test, y_test = _load_split(args.test_data)
    num_classes = max(2, int(max(y_train.max(), y_test.max())) + 1)
    last_k = cfg["last_k"] if args.last_k is None else args.last_k
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rho in rhos:
        for variant in variants:
            cell = f"rho{rho}_{variant}"
            cell_dir = out / cell
            try:
                spec = make_network(
                    rho, variant=variant, num_classes=num_classes,
                    base_width=cfg["base_width"], in_channels=x_train.shape[1],
                    freq_mode=cfg["freq_mode"],
                )
                reports = []
                for run in range(args.runs):
                    seed = args.seed + run
                    _, report = _train_one(
                        spec, x_train, y_train, x_test, y_test, cfg, seed,
                        cell_dir / f"run{run}",
                    )
                    _write_report(cell_dir / f"run{run}", report, last_k)
                    reports.append(report)
                k = min(last_k, len(reports[0].test_accuracy))
                mean, std, count = summarize_runs(reports, k)
                losses = np.concatenate([r.test_loss[-k:] for r in reports])
                rows.append((rho, variant, mean, std,
                             float(losses.mean()), float(losses.std()), count))
                print(f"cell {cell}: acc={mean:.4f}±{std:.4f} ({count} values)")
            except Exception as exc:  # keep the grid going, report per cell
                rows.append((rho, variant, None, None, None, None, 0))
                print(f"cell {cell}: FAILED ({exc})")
    header = "rho\tvariant\tacc_mean\tacc_std\tloss_mean\tloss_std\tvalues"
    lines = [header]
    best = None
    for row in rows:
        rho, variant, mean, std, lmean, lstd, count = row
        if mean is None:
            lines.append(f"{rho}\t{variant}\tFAILED\t\t\t\t0")
            continue
        if best is None or mean > best[2]:
            best = row
        lines.append(
            f"{rho}\t{variant}\t{mean:.6f}\t{std:.6f}\t{lmean:.6f}\t"
            f"{lstd:.6f}\t{count}"
        )
    if best is not None:
        lines.append(f"# best\t{best[0]}\t{best[1]}\t{best[2]:.6f}")
    (out / "grid.tsv").write_text("\n".join(lines) + "\n")
    cfg.echo(out, __version__, extra={
        "grid.rhos": args.rhos, "grid.variants": args.variants,
        "grid.runs": args.runs, "grid.seed": args.seed,
        "grid.last_k": last_k,
    })
    print(f"wrote {out / 'grid.tsv'}")
    return EXIT_OK


_COMMANDS = {
    "arch": cmd_arch,
    "rf": cmd_rf,
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "grid": cmd_grid,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileFormatError, WavFormatError, SpecParseError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SpecError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
