"""Command line: forward | train-toy | metrics | flops | ablate.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import instrument
from .analysis.ensemble import self_ensemble
from .analysis.flops import (
    FlopsReport,
    flops_global_msa,
    flops_vewin,
    group_counts,
    vewin_attention_macs,
)
from .analysis.metrics import psnr, rgb_to_y, ssim
from .config import FIELD_DOCS, MODEL_FIELDS, TRAIN_FIELDS, RunConfig, read_config_file
from .data.png import ImageRGB, PNGError, load_png, save_png
from .data.resize import bicubic_resize
from .model import ConfigError, CPATConfig, MissingParameterError, WeightStore, cpat_forward, init_weights, window_specs
from .serialize import FormatError
from .train import LossLog, NumericFailure, evaluate_psnr, heldout_set, smoothed, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TOGGLES = {"windows": "enhanced_windows", "shift": "shift", "sfim": "sfim", "freq": "freq_domain"}

log = logging.getLogger("cpat")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _settings_parent(train_flags: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--seed", type=int, help=FIELD_DOCS["seed"])
    g = p.add_argument_group("model")
    for name, f in MODEL_FIELDS.items():
        if name == "scale":
            continue
        is_bool = isinstance(f.default, bool)
        kind = str if is_bool else type(f.default)
        g.add_argument(_flag(name), dest=name, type=kind, metavar="{true,false}" if is_bool else kind.__name__.upper(),
                       help=f"{FIELD_DOCS[name]} (default {f.default})")
    g.add_argument("--scale", type=int, help=f"{FIELD_DOCS['scale']} (default 2)")
    if train_flags:
        t = p.add_argument_group("training")
        for name, f in TRAIN_FIELDS.items():
            t.add_argument(_flag(name), dest=name, type=type(f.default), metavar=type(f.default).__name__.upper(),
                           help=f"{FIELD_DOCS[name]} (default {f.default})")
        t.add_argument("--max-params", dest="max_params", type=int, help=FIELD_DOCS["max_params"])
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _settings_parent(train_flags=False)
    training = _settings_parent(train_flags=True)
    parser = _Parser(prog="cpat", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("forward", parents=[common], help="super-resolve one PNG")
    p.add_argument("--weights", type=Path, help="CPATW1 weight file (required for --model cpat)")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--ensemble", action="store_true", help="average over the 8 dihedral transforms")
    p.add_argument("--model", choices=("cpat", "bicubic"), default="cpat")

    p = sub.add_parser("train-toy", parents=[training], help="train a small model on synthetic data (toy defaults)")
    p.add_argument("--out", type=Path, required=True, help="output weight file")
    p.add_argument("--log", type=Path, help="loss CSV (default: <out>.loss.csv)")

    p = sub.add_parser("metrics", help="Y-channel PSNR/SSIM between two PNGs")
    p.add_argument("--sr", type=Path, required=True)
    p.add_argument("--hr", type=Path, required=True)
    p.add_argument("--scale", type=int, default=0, help="border crop in pixels")

    p = sub.add_parser("flops", parents=[common], help="closed-form and instrumented MAC counts")
    p.add_argument("--hw", type=int, default=256, help="feature-map side for the attention counts")
    p.add_argument("--model", action="store_true", help="also count a full model forward on an hw/scale input")

    p = sub.add_parser("ablate", parents=[training], help="train on/off arms of one toggle")
    p.add_argument("--which", required=True, choices=sorted(TOGGLES))
    p.add_argument("--out", type=Path, required=True, help="comparative CSV")
    return parser


def _run_config(args, toy: bool = False) -> RunConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    cli = {k: getattr(args, k, None) for k in list(MODEL_FIELDS) + list(TRAIN_FIELDS) + ["seed", "max_params"]}
    return RunConfig.build(file_values, cli, base=RunConfig.toy_base() if toy else None)


def _load_image(path: Path) -> ImageRGB:
    try:
        return load_png(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except PNGError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_weights(path: Path, cfg: CPATConfig) -> WeightStore:
    try:
        store = WeightStore.load(path)
    except FileNotFoundError:
        raise DataError(f"no such weight file: {path}") from None
    except FormatError as exc:
        raise DataError(f"{path}: {exc}") from None
    try:
        store.check(cfg)
    except MissingParameterError as exc:
        raise DataError(f"weights do not match config: {exc.args[0]}") from None
    return store


# ----------------------------------------------------------------- commands
def cmd_forward(args) -> int:
    run = _run_config(args)
    cfg = run.model_config()
    img = _load_image(args.input).to_chw()[None]
    if args.model == "bicubic":
        def fn(x):
            return bicubic_resize(x, x.shape[-2] * cfg.scale, x.shape[-1] * cfg.scale)
    else:
        if args.weights is None:
            raise UsageError("--weights is required with --model cpat")
        store = _load_weights(args.weights, cfg).astype(np.dtype(run.dtype))

        def fn(x):
            return cpat_forward(x.astype(store.dtype), store, cfg).data

    out = self_ensemble(fn, img) if args.ensemble else fn(img)
    if not np.isfinite(out).all():
        log.error("model produced non-finite output")
        return EXIT_NUMERIC
    save_png(ImageRGB.from_chw(out[0]), args.output)
    print(f"wrote {args.output} ({out.shape[-1]}x{out.shape[-2]})")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    run = _run_config(args, toy=True)
    cfg = run.model_config()
    settings = run.train_settings()
    n_params = init_weights(cfg, run.seed).num_parameters
    if n_params > run.max_params:
        raise UsageError(f"model has {n_params} parameters, above the desk-scale guard of {run.max_params}")
    log_path = args.log or args.out.with_name(args.out.name + ".loss.csv")
    held = heldout_set(cfg, settings, run.seed)
    psnr0 = evaluate_psnr(init_weights(cfg, run.seed).astype(np.dtype(settings.dtype)), cfg, held)
    with LossLog(log_path) as sink:
        try:
            result = train(cfg, settings, run.seed, on_step=sink)
        except NumericFailure as exc:
            ckpt = args.out.with_name(args.out.name + ".last-good")
            if exc.last_good is not None:
                exc.last_good.save(ckpt)
            log.error("%s; last good weights in %s", exc, ckpt)
            return EXIT_NUMERIC
    result.store.save(args.out)
    first, last = smoothed(result.losses)
    psnr1 = evaluate_psnr(result.store, cfg, held)
    print(f"parameters: {n_params}")
    print(f"smoothed L1: {first:.6f} -> {last:.6f} (ratio {last / first:.4f})")
    print(f"held-out PSNR: {psnr0:.2f} dB -> {psnr1:.2f} dB")
    print(f"stream sha256: {result.stream_hash}")
    print(f"wrote {args.out} and {log_path}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    sr = _load_image(args.sr).to_array().transpose(2, 0, 1).astype(np.float64)
    hr = _load_image(args.hr).to_array().transpose(2, 0, 1).astype(np.float64)
    if sr.shape != hr.shape:
        raise DataError(f"dimension mismatch: sr {sr.shape[1:]} vs hr {hr.shape[1:]}")
    ya, yb = rgb_to_y(sr)[0], rgb_to_y(hr)[0]
    try:
        p = psnr(ya, yb, crop=args.scale)
        s = ssim(ya, yb, crop=args.scale)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    print(f"PSNR: {p:.2f} dB  SSIM: {s:.4f}")
    return EXIT_OK


def flops_report(values: dict, hw: int, with_model: bool = False, seed: int = 0) -> FlopsReport:
    c, ws, heads = values["channels"], values["ws"], values["heads"]
    report = FlopsReport(meta={"H": hw, "W": hw, "C": c, "ws": ws})
    report.closed_form["global_msa"] = flops_global_msa(hw, hw, c)
    report.closed_form["vewin"] = flops_vewin(hw, hw, c, ws)
    c3 = c // 3
    if c3 >= 1 and c3 % heads == 0 and hw % ws == 0:
        report.add_section("vewin_attention", group_counts(vewin_attention_macs(hw, hw, c, ws, heads, seed), leaf=True))
    if with_model:
        cfg = CPATConfig(**values)
        store = init_weights(cfg, seed, np.float64)
        side = max(1, hw // cfg.scale)
        x = np.random.default_rng(seed).random((1, cfg.c_in, side, side))
        with instrument.counting() as counter:
            cpat_forward(x, store, cfg)
        report.add_section("model", group_counts(counter, depth=1))
        report.meta["model_input"] = f"{side}x{side}"
    return report


def cmd_flops(args) -> int:
    run = _run_config(args)
    print(flops_report(run.model_values(), args.hw, args.model, run.seed).to_table(), end="")
    return EXIT_OK


def ablation_arms(which: str, run: RunConfig) -> dict[str, CPATConfig]:
    field_name = TOGGLES[which]
    base = run.model_values()
    return {"on": CPATConfig(**{**base, field_name: True}), "off": CPATConfig(**{**base, field_name: False})}


def arm_structure(cfg: CPATConfig, store: WeightStore, side: int, seed: int) -> dict[str, int]:
    """Structural counts recorded per ablation arm."""
    specs = window_specs(cfg, side, side)
    x = np.random.default_rng(seed).random((1, cfg.c_in, side, side)).astype(store.dtype)
    with instrument.counting() as counter:
        cpat_forward(x, store, cfg)
    return {
        "sfim_params": sum(1 for n in store.names() if ".sfim." in n),
        "fft_calls": counter.calls["fft2"] + counter.calls["ifft2"],
        "branches": len(specs),
        "squared_branches": sum(1 for _, s in specs if s.kind.value == "squared"),
        "shifted_branches": sum(1 for _, s in specs if s.shifted),
    }


def cmd_ablate(args) -> int:
    run = _run_config(args, toy=True)
    settings = run.train_settings()
    arms = ablation_arms(args.which, run)
    rows = []
    for arm, cfg in arms.items():
        n_params = init_weights(cfg, run.seed).num_parameters
        if n_params > run.max_params:
            raise UsageError(f"arm {arm!r} has {n_params} parameters, above the guard of {run.max_params}")
        held = heldout_set(cfg, settings, run.seed)
        try:
            result = train(cfg, settings, run.seed)
        except NumericFailure as exc:
            log.error("arm %s: %s", arm, exc)
            return EXIT_NUMERIC
        rows.extend((arm, "loss", i, repr(v)) for i, v in enumerate(result.losses, 1))
        rows.append((arm, "final_psnr", "", f"{evaluate_psnr(result.store, cfg, held):.6f}"))
        rows.append((arm, "stream_sha256", "", result.stream_hash))
        side = held[0].shape[-1] // cfg.scale
        for k, v in arm_structure(cfg, result.store, side, run.seed).items():
            rows.append((arm, k, "", str(v)))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "metric", "iter", "value"])
        w.writerows(rows)
    print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "train-toy": cmd_train_toy,
    "metrics": cmd_metrics,
    "flops": cmd_flops,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"cpat {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"cpat {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"cpat {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
