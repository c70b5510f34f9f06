"""Attention cost at several feature-map sizes: global MSA vs enhanced windows.

    python scripts/flops_table.py [--channels 180] [--ws 16] [--sizes 64 128 256]

Prints closed-form counts and their ratio, plus an instrumented count of the
bare enhanced-window attention at a reduced width to show the two agree.
"""
import argparse

from cpat.analysis.flops import flops_global_msa, flops_vewin, vewin_attention_macs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", type=int, default=180)
    ap.add_argument("--ws", type=int, default=16)
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    args = ap.parse_args(argv)
    print(f"{'H=W':>6} {'global MSA':>20} {'V-EWin':>18} {'ratio':>8}")
    for s in args.sizes:
        g, v = flops_global_msa(s, s, args.channels), flops_vewin(s, s, args.channels, args.ws)
        print(f"{s:>6} {g:>20,} {v:>18,} {g / v:>8.2f}")
    c = 12
    for s in (32, 64):
        counted = vewin_attention_macs(s, s, c, 4, 1).total_macs
        print(f"instrumented C={c} ws=4 {s}x{s}: {counted:,} MACs vs closed form {flops_vewin(s, s, c, 4):,}")


if __name__ == "__main__":
    main()
