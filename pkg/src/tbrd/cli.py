"""Command-line entry points: tbrd-provision, tbrd-uss, tbrd-tx, tbrd-rx.

Config files are INI. Every key is optional and command-line flags win.

``[provision]``: uss, operator_id, uas_id, t_int_ms, d

``[tx]``: keys_file, guard_ms, fallback_intervals, intervals (stop early), udp_address, udp_port,
telemetry_csv, uss, handle, static_lat, static_lon, static_alt

``[rx]``: uss, observer_id, udp_bind, udp_port, max_skew_ms, expiry_ms,
reuse_log
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import select
import socket
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import provision
from .provision import KeysFile, MissionPlan, ProvisionError, RegistrationRequest
from .transmitter import (
    DEFAULT_STATIC,
    DEFAULT_UDP_PORT,
    ScriptSource,
    StaticSource,
    SystemClock,
    TxWindow,
    UdpChannel,
    run,
)
from .uss import DEFAULT_IP, DEFAULT_PORT, Registry, SnapshotError, UssClient, UssError, UssServer
from .verifier import Verifier, VerifierConfig, VerdictWriter

log = logging.getLogger("tbrd")


class CliError(Exception):
    pass


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _read_config(path: str | None, default: str, section: str) -> dict[str, str]:
    """Section of an INI file; a missing default file is fine, a missing explicit one is not."""
    target = path or default
    if not os.path.exists(target):
        if path:
            raise CliError(f"config file {path} not found")
        return {}
    cp = configparser.ConfigParser()
    try:
        cp.read(target)
    except configparser.Error as exc:
        raise CliError(f"cannot parse {target}: {exc}") from None
    return dict(cp[section]) if cp.has_section(section) else {}


def _pick(flag, cfg: dict, key: str, default=None, kind=str):
    if flag is not None:
        return flag
    if key in cfg:
        try:
            return kind(cfg[key])
        except ValueError:
            raise CliError(f"config key {key}={cfg[key]!r} is not a valid {kind.__name__}") from None
    return default


def _client(endpoint: str | None) -> UssClient:
    if not endpoint:
        raise CliError("no USS endpoint; pass --uss host:port or set uss in the config")
    try:
        return UssClient.from_endpoint(endpoint)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _run(fn, argv) -> int:
    try:
        return fn(argv)
    except (CliError, ProvisionError, UssError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# tbrd-provision

def provision_main(argv=None) -> int:
    return _run(_provision, argv)


def _provision(argv) -> int:
    ap = argparse.ArgumentParser(prog="tbrd-provision", description="Plan and register TBRD missions.")
    ap.add_argument("--config", help="INI file with a [provision] section")
    ap.add_argument("--uss", help="USS endpoint host:port")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("plan", help="generate the keychain, keys file and registration request")
    p.add_argument("--operator-id")
    p.add_argument("--uas-id")
    p.add_argument("--start-ms", type=int, help="mission window start, epoch ms (default: now)")
    p.add_argument("--duration-s", type=float, required=True)
    p.add_argument("--t-int-ms", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--out", required=True, help="keys file to write")
    p.add_argument("--request", help="registration request JSON to write (default: <out>.request.json)")
    p.add_argument("--seal", help="also keep the chain seed in this mode-0600 file")
    p.add_argument("--seed-hex", help="fixed 64-hex-digit chain seed; for tests only")

    r = sub.add_parser("register", help="send a registration request to the USS")
    r.add_argument("--request", required=True)

    s = sub.add_parser("start", help="report the mission start time")
    s.add_argument("--handle", required=True)
    s.add_argument("--t0-ms", type=int, required=True)

    e = sub.add_parser("end", help="report the mission end time")
    e.add_argument("--handle", required=True)
    e.add_argument("--t-end-ms", type=int, required=True)

    v = sub.add_parser("revoke", help="revoke a mission commitment")
    v.add_argument("--handle", required=True)

    args = ap.parse_args(argv)
    _setup_logging(args.verbose)
    cfg = _read_config(args.config, "provision.ini", "provision")
    uss = _pick(args.uss, cfg, "uss")

    if args.cmd == "plan":
        seed = None
        if args.seed_hex:
            print("warning: --seed-hex makes the keychain predictable; use it for tests only", file=sys.stderr)
            try:
                seed = bytes.fromhex(args.seed_hex)
            except ValueError:
                raise CliError("--seed-hex is not hex") from None
            if len(seed) != 32:
                raise CliError("--seed-hex must be 64 hex digits")
        start = args.start_ms if args.start_ms is not None else time.time_ns() // 1_000_000
        operator_id = _pick(args.operator_id, cfg, "operator_id")
        uas_id = _pick(args.uas_id, cfg, "uas_id")
        if not operator_id or not uas_id:
            raise CliError("operator_id and uas_id are required")
        plan = MissionPlan(operator_id, uas_id, start, start + int(args.duration_s * 1000),
                           _pick(args.t_int_ms, cfg, "t_int_ms", 1000, int), _pick(args.d, cfg, "d", 1, int))
        chain, keys, request = provision.plan_mission(plan, seed)
        keys.write(args.out)
        req_path = Path(args.request or f"{args.out}.request.json")
        req_path.write_text(json.dumps(request.to_dict(), indent=2) + "\n")
        if args.seal:
            provision.seal_seed(args.seal, chain.seed)
        print(json.dumps({"keys_file": args.out, "request": str(req_path), "n": keys.n,
                          "k0": keys.commitment.hex()}))
        return 0

    client = _client(uss)
    if args.cmd == "register":
        try:
            request = RegistrationRequest.from_dict(json.loads(Path(args.request).read_text()))
        except (KeyError, ValueError) as exc:
            raise CliError(f"bad registration request {args.request}: {exc}") from None
        print(json.dumps({"handle": provision.register_with_uss(request, client)}))
    elif args.cmd == "start":
        print(json.dumps(provision.report_start(client, args.handle, args.t0_ms)))
    elif args.cmd == "end":
        print(json.dumps(provision.report_end(client, args.handle, args.t_end_ms)))
    else:
        print(json.dumps(provision.revoke(client, args.handle)))
    return 0


# tbrd-uss

def uss_main(argv=None) -> int:
    return _run(_uss, argv)


def _uss(argv) -> int:
    ap = argparse.ArgumentParser(prog="tbrd-uss", description="Run the mission registry service.")
    ap.add_argument("--ip", default=DEFAULT_IP, help="address to bind (default %(default)s)")
    ap.add_argument("--port", type=int, default=DEFAULT_PORT, help="port to bind (default %(default)s)")
    ap.add_argument("--snapshot", help="persist the registry to this file and restore from it on start")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    _setup_logging(args.verbose)
    if args.snapshot and os.path.exists(args.snapshot):
        try:
            registry = Registry.restore(args.snapshot)
        except SnapshotError as exc:
            raise CliError(f"refusing to start: {exc}") from None
    else:
        registry = Registry(args.snapshot)
    server = UssServer(registry, args.ip, args.port)
    host, port = server.address
    print(f"USS listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# tbrd-tx

class StdoutChannel:
    """Writes each pack as a hex line; pipe into ``tbrd-rx`` without ``-u``."""

    def __init__(self, stream=None):
        self.stream = stream or sys.stdout

    def send(self, data: bytes) -> None:
        self.stream.write(data.hex() + "\n")
        self.stream.flush()


def tx_main(argv=None) -> int:
    return _run(_tx, argv)


def _tx(argv) -> int:
    ap = argparse.ArgumentParser(prog="tbrd-tx", description="Broadcast authenticated Remote ID.")
    ap.add_argument("-s", "--static", action="store_true", help="use static telemetry")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("-u", "--udp", action="store_true", help="broadcast over UDP instead of printing hex")
    ap.add_argument("-c", "--config", help="INI file (default tx_config.ini)")
    ap.add_argument("--keys", help="keys file (overrides keys_file)")
    args = ap.parse_args(argv)
    _setup_logging(args.verbose)
    cfg = _read_config(args.config, "tx_config.ini", "tx")
    keys_path = _pick(args.keys, cfg, "keys_file")
    if not keys_path:
        raise CliError("no keys file; pass --keys or set keys_file in the config")
    keys = KeysFile.read(keys_path)

    if args.static:
        fixed = replace(DEFAULT_STATIC, lat_deg=_pick(None, cfg, "static_lat", DEFAULT_STATIC.lat_deg, float),
                        lon_deg=_pick(None, cfg, "static_lon", DEFAULT_STATIC.lon_deg, float),
                        alt_m=_pick(None, cfg, "static_alt", DEFAULT_STATIC.alt_m, float))
        source = StaticSource(fixed)
    else:
        csv_path = _pick(None, cfg, "telemetry_csv")
        if not csv_path:
            raise CliError("no telemetry; pass --static or set telemetry_csv in the config")
        source = ScriptSource.from_csv(csv_path)

    if args.udp:
        channel = UdpChannel(_pick(None, cfg, "udp_address", "255.255.255.255"),
                             _pick(None, cfg, "udp_port", DEFAULT_UDP_PORT, int))
    else:
        channel = StdoutChannel()

    on_start = None
    uss, handle = _pick(None, cfg, "uss"), _pick(None, cfg, "handle")
    if uss and handle:
        client = _client(uss)
        on_start = lambda t0: provision.report_start(client, handle, t0)  # noqa: E731
    result = run(keys, source, channel, TxWindow(_pick(None, cfg, "guard_ms", 100, int)),
                 fallback_intervals=_pick(None, cfg, "fallback_intervals", 0, int),
                 intervals=_pick(None, cfg, "intervals", None, int), on_start=on_start)
    skipped = sum(1 for e in result.entries if e.status in ("skipped", "failed"))
    print(f"t0_ms={result.t0_ms} sent={len(result.sent())} skipped_or_failed={skipped}", file=sys.stderr)
    return 0


# tbrd-rx

def rx_main(argv=None) -> int:
    return _run(_rx, argv)


def _rx(argv) -> int:
    ap = argparse.ArgumentParser(prog="tbrd-rx", description="Verify received Remote ID packs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("-u", "--udp", action="store_true", help="listen on UDP instead of reading hex from stdin")
    ap.add_argument("-c", "--config", help="INI file (default rx_config.ini)")
    ap.add_argument("--out", help="write verdict records here instead of stdout")
    ap.add_argument("--uss", help="USS endpoint host:port (overrides uss)")
    ap.add_argument("--count", type=int, help="stop after this many packs")
    ap.add_argument("--include-pending", action="store_true", help="also emit pending verdicts")
    args = ap.parse_args(argv)
    _setup_logging(args.verbose)
    cfg = _read_config(args.config, "rx_config.ini", "rx")
    client = _client(_pick(args.uss, cfg, "uss"))
    vcfg = VerifierConfig(
        observer_id=_pick(None, cfg, "observer_id", "observer"),
        max_skew_ms=_pick(None, cfg, "max_skew_ms", VerifierConfig.max_skew_ms, int),
        expiry_ms=_pick(None, cfg, "expiry_ms", VerifierConfig.expiry_ms, int),
        reuse_log=_pick(None, cfg, "reuse_log"))
    verifier = Verifier(client, vcfg)
    clock = SystemClock()
    out = open(args.out, "a") if args.out else sys.stdout
    writer = VerdictWriter(out, include_pending=args.include_pending)
    try:
        if args.udp:
            packets = _udp_packets(_pick(None, cfg, "udp_bind", "0.0.0.0"),
                                   _pick(None, cfg, "udp_port", DEFAULT_UDP_PORT, int))
        else:
            packets = _stdin_packets()
        seen = 0
        for raw in packets:
            now = clock.now_ms()
            if raw is not None:
                writer.write(verifier.receive(raw, now))
                seen += 1
            # idle ticks and packs alike give stalled USS lookups another try
            writer.write(verifier.retry_uss(now))
            verifier.expire(now)
            if args.count is not None and seen >= args.count:
                break
    finally:
        if args.out:
            out.close()
    return 0


def _stdin_packets():
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            yield bytes.fromhex(line)
        except ValueError:
            log.warning("skipping non-hex input line")
            yield b""


def _udp_packets(bind: str, port: int, idle_s: float = 1.0):
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((bind, port))
    log.info("listening on udp %s:%d", bind, port)
    try:
        while True:
            ready, _, _ = select.select([sock], [], [], idle_s)
            yield sock.recv(4096) if ready else None
    finally:
        sock.close()

