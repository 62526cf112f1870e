"""Command-line surface: dehaze, segment, synthesize, evaluate, train, augment.

Exit codes: 0 success, 1 usage error (bad arguments or configuration),
2 I/O error (missing or malformed files), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from . import dark_channel, dehazenet, image_core, pipeline, quality_metrics, scattering
from .image_core import DecodeError, decode_image, encode_gray, encode_image, encode_mask
from .pipeline import ConfigError, PipelineConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

IMAGE_SUFFIXES = (".png", ".ppm")

_AUGMENT_SUFFIX = re.compile(r"_r(?:0|90|180|270)_s[1-5]$")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_image(path: str) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def _write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        config = pipeline.parse_config_text(Path(args.config).read_text())
    else:
        config = PipelineConfig()
    if getattr(args, "model", None):
        from dataclasses import replace

        config = replace(config, model_path=args.model)
    return config


def _cmd_dehaze(args) -> int:
    config = _load_config(args)
    img = _read_image(args.input)
    out, report, mask = pipeline.dehaze(img, config)
    _write(args.output, encode_image(out))
    text = quality_metrics.report_to_text(report)
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    if args.dump_intermediates:
        dump = Path(args.dump_intermediates)
        dump.mkdir(parents=True, exist_ok=True)
        airlight = dark_channel.estimate_airlight(img, config.dcp.airlight_fraction)
        dark = dark_channel.dark_channel_avg(img, config.dcp.window_radius)
        t_raw = dark_channel.estimate_transmission(img, airlight, config.dcp, variant="avg")
        t_refined = np.clip(
            dark_channel.guided_filter(
                t_raw,
                image_core.to_grayscale(img),
                config.dcp.guided_radius,
                config.dcp.guided_epsilon,
            ),
            0.0,
            1.0,
        )
        _write(dump / "dark_channel.png", encode_gray(dark))
        _write(dump / "transmission_raw.png", encode_gray(t_raw))
        _write(dump / "transmission_refined.png", encode_gray(t_refined))
        _write(dump / "sky_mask.png", encode_mask(mask))
    return EXIT_OK


def _cmd_segment(args) -> int:
    from .sky_segmentation import (
        cluster_regions,
        edge_confidence_map,
        extract_sky_mask,
        mean_shift_filter,
        prune_small_regions,
    )

    img = _read_image(args.input)
    config = _load_config(args)
    params = config.meanshift
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    gray = image_core.to_grayscale(img)
    modes = mean_shift_filter(gray, params)
    labels = prune_small_regions(
        cluster_regions(modes, edge_confidence_map(gray), params), params.min_region
    )
    mask = extract_sky_mask(img, params)

    # label map rendered with a fixed random palette keyed by label
    palette = np.random.default_rng(0).integers(0, 256, size=(labels.max() + 1, 3))
    palette = palette.astype(np.float64) / 255.0
    _write(out_dir / "grayscale.png", encode_gray(gray))
    _write(out_dir / "labels.png", encode_image(palette[labels]))
    _write(out_dir / "sky_mask.png", encode_mask(mask))
    return EXIT_OK


def _cmd_synthesize(args) -> int:
    clear = _read_image(args.input)
    try:
        airlight = np.array([float(v) for v in args.airlight.split(",")])
        if airlight.size != 3:
            raise ValueError("need exactly three components")
    except ValueError as exc:
        raise ConfigError(f"bad --airlight {args.airlight!r}: {exc}") from exc
    mode = {"const": "constant", "gradient": "smooth-gradient"}[args.t]
    t = scattering.random_transmission_field(
        clear.shape[1], clear.shape[0], mode=mode, seed=args.seed
    )
    hazy = scattering.synthesize_haze(clear, scattering.HazeParams(airlight, t))
    _write(args.output, encode_image(hazy))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    before = _read_image(args.before)
    after = _read_image(args.after)
    report = quality_metrics.evaluate(before, after)
    text = quality_metrics.report_to_text(report)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_pairs(data_dir: str) -> tuple[list, list[int]]:
    root = Path(data_dir)
    hazy_dir = root / "hazy"
    clear_dir = root / "clear"
    if not hazy_dir.is_dir() or not clear_dir.is_dir():
        raise FileNotFoundError(f"{data_dir} must contain hazy/ and clear/ directories")
    pairs = []
    group_keys: list[str] = []
    for hazy_path in sorted(hazy_dir.iterdir()):
        if hazy_path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        clear_path = clear_dir / hazy_path.name
        if not clear_path.exists():
            raise FileNotFoundError(f"no clear counterpart for {hazy_path.name}")
        pairs.append((_read_image(str(hazy_path)), _read_image(str(clear_path))))
        # augmented variants of one base image stay on one side of the split
        group_keys.append(_AUGMENT_SUFFIX.sub("", hazy_path.stem))
    if not pairs:
        raise FileNotFoundError(f"no training images under {hazy_dir}")
    key_ids = {k: i for i, k in enumerate(dict.fromkeys(group_keys))}
    return pairs, [key_ids[k] for k in group_keys]


def _cmd_train(args) -> int:
    pairs, groups = _load_pairs(args.data)
    net = dehazenet.init_network(seed=args.seed)
    config = dehazenet.TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        momentum=args.momentum,
        batch_size=args.batch,
        seed=args.seed,
    )
    trained, history = dehazenet.train(net, pairs, config, groups=groups)
    dehazenet.save_checkpoint(trained, args.out)
    for row in history:
        val = "none" if row["val_mse"] is None else f"{row['val_mse']:.6f}"
        print(f"epoch {row['epoch']}: train_mse {row['train_mse']:.6f} val_mse {val}")
    return EXIT_OK


def _cmd_augment(args) -> int:
    in_dir = Path(args.input)
    paths = sorted(
        p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise FileNotFoundError(f"no images under {in_dir}")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    degrees = (0, 90, 180, 270)
    count = 0
    for path in paths:
        variants = pipeline.augment_dataset([_read_image(str(path))])
        for i, variant in enumerate(variants):
            rot = degrees[i // len(pipeline.SCALE_FACTORS)]
            scale = pipeline.SCALE_FACTORS[i % len(pipeline.SCALE_FACTORS)]
            _write(out_dir / f"{path.stem}_r{rot}_s{scale}.png", encode_image(variant))
            count += 1
    print(f"wrote {count} images to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skydehaze", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dehaze", help="restore one hazy image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--model", help="network checkpoint for the sky branch")
    p.add_argument("--report", help="write the quality report here instead of stdout")
    p.add_argument("--dump-intermediates", help="directory for debug maps")
    p.set_defaults(func=_cmd_dehaze)

    p = sub.add_parser("segment", help="write segmentation intermediates")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("synthesize", help="apply the scattering model to a clear image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--airlight", default="0.8,0.8,0.8", help="r,g,b in [0,1]")
    p.add_argument("--t", choices=("const", "gradient"), default="const")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("evaluate", help="no-reference quality report")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("train", help="train the sky network on (hazy, clear) pairs")
    p.add_argument("--data", required=True, help="directory with hazy/ and clear/")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--momentum", type=float, default=0.9)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("augment", help="rotations x scales dataset expansion")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_augment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (DecodeError, dehazenet.CheckpointError)):
            print(f"skydehaze: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"skydehaze: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"skydehaze: {exc}", file=sys.stderr)
        return EXIT_IO
    except dehazenet.NumericError as exc:
        print(f"skydehaze: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
