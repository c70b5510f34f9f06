"""Run every on/off ablation with the toy settings and summarise the arms.

    python scripts/ablation_sweep.py [--iters 200] [--out-dir runs/ablation]

Each toggle writes its own long-format CSV through ``cpat ablate``; this
script then prints final loss, held-out PSNR and the structural counts.
"""
import argparse
import csv
from pathlib import Path

from cpat.cli import TOGGLES, main as cli

ROOT = Path(__file__).resolve().parent.parent


def summarise(path: Path) -> dict:
    arms = {}
    for row in csv.DictReader(path.open()):
        arm = arms.setdefault(row["arm"], {})
        if row["metric"] == "loss":
            arm["final_loss"] = float(row["value"])
        elif row["metric"] != "stream_sha256":
            arm[row["metric"]] = row["value"]
    return arms


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=Path("runs/ablation"))
    args = ap.parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for which in sorted(TOGGLES):
        out = args.out_dir / f"{which}.csv"
        code = cli(["ablate", "--which", which, "--config", str(ROOT / "configs" / "toy.cfg"),
                    "--iters", str(args.iters), "--seed", str(args.seed), "--out", str(out)])
        if code:
            return code
        for arm, vals in summarise(out).items():
            print(f"{which:>8} {arm:>3}  loss {vals['final_loss']:.4f}  PSNR {float(vals['final_psnr']):.2f} dB  "
                  f"fft {vals['fft_calls']}  sfim tensors {vals['sfim_params']}  "
                  f"squared {vals['squared_branches']}/{vals['branches']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
