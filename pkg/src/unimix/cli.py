"""Command-line entry point: ``unimix <command> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error. The
resolved configuration and seed go to standard error before any work starts;
data goes to files, except ``eval`` and ``integrate-eq1`` which print results.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .cloud import CloudError, LabelArray, PointCloud
from .config import MIX_KINDS, WEATHER_KINDS, ConfigError, RunConfig
from .dataio import (
    DataFormatError,
    RemapTable,
    export_ply,
    read_dataset,
    read_labels,
    read_pair,
    read_scan,
    write_dataset,
    write_labels,
    write_scan,
)
from .domain import DomainDataset, DomainError
from .metrics import format_report
from .mixing import mix_bidirectional
from .model import ModelError, load_checkpoint, save_checkpoint
from .pipeline import TrainingError, evaluate, train_stage1, train_stage2, warmup
from .seeding import derive_rng
from .synth import CLASS_NAMES, SceneSpec, default_target_weather, generate_domain_pair
from .weather import PulseModel, WeatherError, WeatherParams, apply_weather, beer_lambert_power, received_power

log = logging.getLogger("unimix")

DEFAULT_SEED = 0


class UsageError(Exception):
    pass


REMAP_HELP = "identity | semantickitti | synthetic | path to an INI table (default: config paths.remap)"

# fog coefficients used when --alpha is omitted
DEFAULT_FOG_ALPHA = {"light_fog": 0.02, "dense_fog": 0.12}


class _HelpFormatter(argparse.HelpFormatter):
    """Append the default to each flag's help unless it already names one."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.default in (None, [], argparse.SUPPRESS) or not action.option_strings:
            return text
        return text + " (default: %(default)s)"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, train=False):
    p.add_argument("--config", help="run configuration file (INI)")
    p.add_argument("--seed", type=int, default=None, help=f"global seed (default: config value, else {DEFAULT_SEED})")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration key; repeatable")
    if train:
        p.add_argument("--preset", choices=("full", "desk"), default="full",
                       help="base settings before --config and --set (default: full)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unimix", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = _HelpFormatter

    p = sub.add_parser("simulate", help="corrupt one scan with simulated weather", formatter_class=fmt)
    _common(p)
    p.add_argument("--weather", required=True, choices=[k.replace("_", "-") for k in WEATHER_KINDS], help="weather kind")
    p.add_argument("--alpha", type=float, default=None, help="fog attenuation coefficient 1/m (default: 0.02 light, 0.12 dense)")
    p.add_argument("--rate", type=float, default=None, help="precipitation rate (default: config weather.precipitation_rate)")
    p.add_argument("--wet-ground", choices=("auto", "on", "off"), default="auto",
                   help="wet-ground effect; auto follows weather.wet_ground_kinds")
    p.add_argument("--in", dest="scan", required=True, help="input .bin scan")
    p.add_argument("--labels", help="input .label file")
    p.add_argument("--remap", default=None, help=REMAP_HELP)
    p.add_argument("--out-dir", required=True, help="output directory, created if missing")

    p = sub.add_parser("mix", help="universal mixing of two labelled scans", formatter_class=fmt)
    _common(p)
    p.add_argument("--method", required=True, choices=MIX_KINDS, help="mask kind")
    p.add_argument("--a", required=True, help="scan A: path to .bin or stem with .bin/.label siblings")
    p.add_argument("--b", required=True, help="scan B, as --a")
    p.add_argument("--remap", default=None, help=REMAP_HELP)
    p.add_argument("--out-dir", required=True, help="output directory, created if missing")

    for name, text in (
        ("warmup", "supervised warm-up on the source domain"),
        ("train-dg", "warm-up and source-to-bridge stage (domain generalization)"),
        ("train-uda", "warm-up, source-to-bridge and bridge-to-target stages (adaptation)"),
    ):
        p = sub.add_parser(name, help=text, formatter_class=fmt)
        _common(p, train=True)
        p.add_argument("--source", help="source dataset directory (default: config paths.source)")
        if name == "train-uda":
            p.add_argument("--target", help="target dataset directory, labels unused (default: paths.target)")
        p.add_argument("--out-dir", help="output directory (default: config paths.out_dir)")
        p.add_argument("--remap", default=None, help=REMAP_HELP)

    p = sub.add_parser("eval", help="per-class IoU of a checkpoint on a labelled dataset", formatter_class=fmt)
    _common(p)
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory with velodyne/ and labels/")
    p.add_argument("--remap", default=None, help=REMAP_HELP)
    p.add_argument("--absent", choices=("exclude", "zero"), default="exclude",
                   help="treatment of classes with no points in prediction or ground truth")

    p = sub.add_parser("synth", help="write a synthetic clear-source / foggy-target pair", formatter_class=fmt)
    _common(p)
    p.add_argument("--out-dir", required=True, help="output directory, created if missing")
    p.add_argument("--count", type=int, default=None, help="scans per domain (default: config synth.count)")
    p.add_argument("--points", type=int, default=None, help="points per scan (default: config synth.points)")
    p.add_argument("--target-alpha", type=float, default=None, help="target fog coefficient (default: config synth.target_alpha)")

    p = sub.add_parser("export-ply", help="coloured ASCII PLY of a labelled scan", formatter_class=fmt)
    _common(p)
    p.add_argument("--in", dest="scan", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--remap", default="synthetic", help="label table for class colours")
    p.add_argument("--out", required=True, help="output .ply path")

    p = sub.add_parser("integrate-eq1", help="numeric received power for a rectangular pulse", formatter_class=fmt)
    _common(p)
    p.add_argument("--range", dest="R", type=float, required=True, help="target range R")
    p.add_argument("--duration", type=float, default=0.5, help="pulse duration")
    p.add_argument("--amplitude", type=float, default=1.0, help="pulse power")
    p.add_argument("--response", choices=("constant", "linear", "beer-lambert"), default="constant")
    p.add_argument("--alpha", type=float, default=0.0, help="attenuation for the beer-lambert response")
    p.add_argument("--beta", type=float, default=1.0, help="reflectivity for the beer-lambert response")
    p.add_argument("--steps", type=int, default=10_000, help="trapezoid intervals")
    p.add_argument("--c", type=float, default=1.0, help="propagation speed")
    return parser


# -- helpers -------------------------------------------------------------------


def _resolve_config(args) -> RunConfig:
    if getattr(args, "preset", "full") == "desk":
        cfg = RunConfig.desk()
    else:
        cfg = RunConfig()
    if args.config:
        base = RunConfig.load(args.config)
        if getattr(args, "preset", "full") == "desk":
            log.debug("--config replaces the desk preset")
        cfg = base
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    if args.seed is not None:
        cfg.train.seed = args.seed
    return cfg.validate()


def _announce(cfg: RunConfig):
    sys.stderr.write(f"# seed = {cfg.train.seed}\n")
    sys.stderr.write("".join(f"# {line}\n" for line in cfg.to_ini().splitlines() if line))


def _remap(args, cfg: RunConfig) -> RemapTable:
    return RemapTable.resolve(args.remap or cfg.paths.remap, cfg.model.num_classes)


def _label_path(scan: Path) -> Path:
    # sibling file first, then the dataset layout velodyne/ -> labels/
    sibling = scan.with_suffix(".label")
    if sibling.exists() or scan.parent.name != "velodyne":
        return sibling
    return scan.parent.parent / "labels" / (scan.stem + ".label")


def _scan_pair(spec: str, remap: RemapTable):
    path = Path(spec)
    scan = path if path.suffix == ".bin" else path.with_suffix(".bin")
    label = _label_path(scan)
    if not label.exists():
        raise DataFormatError(f"{scan}: no label file {label}")
    return read_pair(scan, label, remap)


def _dataset(root, remap, tag, seed, with_labels=True) -> DomainDataset:
    if not root:
        raise UsageError(f"no {tag} dataset given (flag or paths.{tag})")
    return DomainDataset(read_dataset(root, remap, with_labels), tag, seed=seed)


def _write_pair(out: Path, stem: str, cloud: PointCloud, labels: LabelArray):
    write_scan(cloud, out / f"{stem}.bin")
    write_labels(labels, out / f"{stem}.label")


# -- commands ------------------------------------------------------------------


def cmd_simulate(args, cfg):
    kind = args.weather.replace("-", "_")
    remap = _remap(args, cfg)
    cloud = read_scan(args.scan)
    if args.labels:
        labels = read_labels(args.labels, remap)
        if len(labels) != len(cloud):
            raise DataFormatError(f"{args.scan}: {len(cloud)} points but {len(labels)} labels")
    else:
        labels = LabelArray(np.full(len(cloud), remap.ignore_id), remap.num_classes, remap.ignore_id)
    if args.rate is not None:
        cfg.weather.precipitation_rate = args.rate
    alpha = DEFAULT_FOG_ALPHA.get(kind) if args.alpha is None else args.alpha
    params = WeatherParams.from_config(kind, cfg.weather, alpha=alpha, seed=cfg.train.seed)
    if args.wet_ground != "auto":
        params = WeatherParams(**{**params.__dict__, "wet_ground": args.wet_ground == "on"})
    out = apply_weather(cloud, labels, params, derive_rng(cfg.train.seed, "simulate"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.scan).stem
    _write_pair(out_dir, stem, out.cloud, out.labels)
    out.provenance.astype(np.uint8).tofile(out_dir / f"{stem}.provenance")
    log.info("%s: %d -> %d points", stem, len(cloud), len(out.cloud))
    return 0


def cmd_mix(args, cfg):
    remap = _remap(args, cfg)
    S = _scan_pair(args.a, remap)
    T = _scan_pair(args.b, remap)
    st, ts = mix_bidirectional(S, T, args.method, cfg.mixing, derive_rng(cfg.train.seed, "mix", MIX_KINDS.index(args.method)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_pair(out, "a_to_b", *st)
    _write_pair(out, "b_to_a", *ts)
    return 0


def _save_stage(out: Path, name: str, params, report):
    save_checkpoint(params, out / f"{name}.ckpt")
    (out / f"{report.stage}.jsonl").write_text(report.to_jsonl(), encoding="utf-8")


def cmd_train(args, cfg):
    remap = _remap(args, cfg)
    seed = cfg.train.seed
    source = _dataset(args.source or cfg.paths.source, remap, "source", seed)
    target = None
    if args.command == "train-uda":
        target = _dataset(args.target or cfg.paths.target, remap, "target", seed, with_labels=False)
    out = Path(args.out_dir or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "run.cfg")

    params, rep = warmup(source, cfg)
    _save_stage(out, "warmup", params, rep)
    if args.command == "warmup":
        return 0
    if cfg.train.use_bridge:
        student, teacher, rep1 = train_stage1(source, cfg, params)
        _save_stage(out, "student1", student, rep1)
        save_checkpoint(teacher, out / "teacher1.ckpt")
        init, composition = student, None
    else:
        init, composition = params, {"clear": 1.0}
    if args.command == "train-dg":
        return 0
    student2, _, rep2 = train_stage2(source, target, cfg, init, composition)
    _save_stage(out, "student2", student2, rep2)
    return 0


def cmd_eval(args, cfg):
    model = load_checkpoint(args.model)
    remap = _remap(args, cfg)
    data = DomainDataset(read_dataset(args.data, remap), "source")
    result = evaluate(model, data, args.absent)
    names = remap.names or (CLASS_NAMES if model.num_classes == len(CLASS_NAMES) else None)
    sys.stdout.write(format_report(result.confusion, names, args.absent))
    return 0


def cmd_synth(args, cfg):
    count = cfg.synth.count if args.count is None else args.count
    points = cfg.synth.points if args.points is None else args.points
    alpha = cfg.synth.target_alpha if args.target_alpha is None else args.target_alpha
    source, target = generate_domain_pair(
        SceneSpec(points=points), target_weather=default_target_weather(alpha, cfg.weather),
        count=count, seed=cfg.train.seed,
    )
    out = Path(args.out_dir)
    write_dataset(out / "source", source.samples, source.weather)
    write_dataset(out / "target", target.samples, target.weather)
    return 0


def cmd_export_ply(args, cfg):
    remap = _remap(args, cfg)
    cloud, labels = read_pair(args.scan, args.labels, remap)
    try:
        export_ply(cloud, labels, remap.colors, args.out)
    except KeyError as exc:
        raise DataFormatError(str(exc.args[0])) from None
    return 0


def cmd_integrate(args, cfg):
    if args.response == "constant":
        response = None
    elif args.response == "linear":
        response = lambda r: r
    else:
        response = lambda r: args.beta * np.exp(-2.0 * args.alpha * r)
    model = PulseModel.rectangular(args.amplitude, args.duration, response, c=args.c)
    value = received_power(model, args.R, args.steps)
    sys.stdout.write(f"P_R = {value:.12g}\n")
    if args.response == "beer-lambert":
        exact = beer_lambert_power(args.R, args.alpha, args.amplitude, args.duration, args.beta, c=args.c)
        sys.stdout.write(f"closed form = {exact:.12g}\n")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "mix": cmd_mix,
    "warmup": cmd_train,
    "train-dg": cmd_train,
    "train-uda": cmd_train,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "export-ply": cmd_export_ply,
    "integrate-eq1": cmd_integrate,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        _announce(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        sys.stderr.write(f"unimix {args.command}: {exc}\n")
        return 1
    except (DataFormatError, CloudError, DomainError, ModelError, WeatherError, TrainingError,
            FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        sys.stderr.write(f"unimix {args.command}: {exc}\n")
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
