"""Host benchmarks: per-message MAC vs signature cost, and kernel backends."""

from __future__ import annotations

import argparse
import hashlib
import hmac
import json
import statistics
import sys
import time
from dataclasses import asdict, dataclass

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec

from . import kernels

# reference figures measured on an ESP32-S3: 10 ms HMAC vs 1.2 s ECC signature
EMBEDDED_HMAC_S = 0.010
EMBEDDED_SIGN_S = 1.2
EMBEDDED_RATIO = EMBEDDED_SIGN_S / EMBEDDED_HMAC_S
EMBEDDED_SIG_BYTES = 139


@dataclass(frozen=True)
class BenchReport:
    payload_size: int
    iterations: int
    hmac_mean_s: float
    sign_mean_s: float
    hmac_bytes: int
    signature_bytes: int
    curve: str = "secp521r1"

    @property
    def ratio(self) -> float:
        """Signature time over HMAC time."""
        return self.sign_mean_s / self.hmac_mean_s

    def as_dict(self) -> dict:
        out = asdict(self)
        out["ratio"] = self.ratio
        out["embedded_reference_ratio"] = EMBEDDED_RATIO
        return out


def _mean_time(fn, iterations: int) -> float:
    times = []
    for _ in range(iterations):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.fmean(times)


def bench(payload_size: int = 100, iterations: int = 1000, seed: int = 0) -> BenchReport:
    """Mean cost of HMAC-SHA-256 vs ECDSA over P-521 for one payload.

    P-521 is the smallest NIST curve at the 256-bit strength of HMAC-SHA-256.
    The signature size reported is the DER encoding.
    """
    if iterations < 100:
        raise ValueError("iterations must be >= 100")
    payload = bytes((seed + k) & 0xFF for k in range(payload_size))
    mac_key = hashlib.sha256(b"bench-key").digest()
    sk = ec.generate_private_key(ec.SECP521R1())
    algo = ec.ECDSA(hashes.SHA512())
    tag = hmac.new(mac_key, payload, hashlib.sha256).digest()
    sig = sk.sign(payload, algo)
    hmac_s = _mean_time(lambda: hmac.new(mac_key, payload, hashlib.sha256).digest(), iterations)
    sign_s = _mean_time(lambda: sk.sign(payload, algo), iterations)
    return BenchReport(payload_size, iterations, hmac_s, sign_s, len(tag), len(sig))


def compare_kernels(n: int = 20_000, repeats: int = 5) -> dict:
    """Best-of time for chain generation and hash-forward in each backend."""
    seed = bytes(range(32))
    out = {"n": n, "selected": kernels.BACKEND}
    impls = {"python": kernels.python_kernels}
    if kernels.compiled_kernels is not None:
        impls["compiled"] = kernels.compiled_kernels
    for name, impl in impls.items():
        chain = min(_timed(impl.hash_chain, seed, n) for _ in range(repeats))
        fwd = min(_timed(impl.hash_forward, seed, n) for _ in range(repeats))
        out[name] = {"hash_chain_s": chain, "hash_forward_s": fwd}
    if "compiled" in out:
        out["speedup_chain"] = out["python"]["hash_chain_s"] / out["compiled"]["hash_chain_s"]
        out["speedup_forward"] = out["python"]["hash_forward_s"] / out["compiled"]["hash_forward_s"]
    return out


def _timed(fn, *args) -> float:
    t = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tbrd-bench", description=__doc__)
    ap.add_argument("--payload-size", type=int, default=100)
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--chain-length", type=int, default=20_000)
    ap.add_argument("--json", action="store_true", help="print a JSON document")
    args = ap.parse_args(argv)
    report = bench(args.payload_size, args.iterations)
    kern = compare_kernels(args.chain_length)
    if args.json:
        json.dump({"auth": report.as_dict(), "kernels": kern}, sys.stdout, indent=2)
        print()
        return 0
    print(f"payload {report.payload_size} B, {report.iterations} iterations")
    print(f"  HMAC-SHA-256     {report.hmac_mean_s * 1e6:10.2f} us  ({report.hmac_bytes} B tag)")
    print(f"  ECDSA P-521 sign {report.sign_mean_s * 1e6:10.2f} us  ({report.signature_bytes} B DER)")
    print(f"  ratio sign/HMAC  {report.ratio:10.1f}x   (embedded reference {EMBEDDED_RATIO:.0f}x)")
    print(f"hash-chain kernels, n={kern['n']} (selected: {kern['selected']})")
    for name in ("python", "compiled"):
        if name in kern:
            k = kern[name]
            print(f"  {name:9s} chain {k['hash_chain_s'] * 1e3:8.2f} ms   forward {k['hash_forward_s'] * 1e3:8.2f} ms")
    if "speedup_chain" in kern:
        print(f"  speedup   chain {kern['speedup_chain']:.1f}x   forward {kern['speedup_forward']:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
