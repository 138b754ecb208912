"""Time the hash-chain kernels and the HMAC vs ECDSA signing cost.

    python3 benchmarks/bench_kernels.py [--lengths 1000,10000,100000] [--json out.json]
"""

import argparse
import json
import sys

from tbrd import bench, kernels


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", default="1000,10000,100000", help="comma-separated chain lengths")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=1000, help="iterations for the HMAC/ECDSA timing")
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    rows = [bench.compare_kernels(int(n), args.repeats) for n in args.lengths.split(",")]
    auth = bench.bench(100, args.iterations)

    print(f"selected backend: {kernels.BACKEND}")
    print(f"{'n':>8}  {'python chain':>13}  {'compiled chain':>15}  {'speedup':>8}")
    for r in rows:
        py = r["python"]["hash_chain_s"] * 1e3
        if "compiled" in r:
            cc = r["compiled"]["hash_chain_s"] * 1e3
            print(f"{r['n']:>8}  {py:>10.2f} ms  {cc:>12.2f} ms  {r['speedup_chain']:>7.1f}x")
        else:
            print(f"{r['n']:>8}  {py:>10.2f} ms  {'n/a':>15}")
    print(f"HMAC-SHA-256 {auth.hmac_mean_s * 1e6:.2f} us, ECDSA P-521 {auth.sign_mean_s * 1e6:.1f} us, "
          f"ratio {auth.ratio:.0f}x (embedded reference {bench.EMBEDDED_RATIO:.0f}x)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "auth": auth.as_dict()}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
