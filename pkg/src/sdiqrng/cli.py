"""Command-line front end: ``certify``, ``sweep`` and ``optimize``.

Exit status: 0 on success, 1 for configuration errors, 2 when any point
fails numerically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import mdi, pipeline, si
from .config import FIELD_NAMES, OPTIMIZE, ConfigError, RunConfig, from_dict, load
from .finitesize import C_MODES, DELTA_MODES

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _mu_or_opt(text: str):
    return OPTIMIZE if text == OPTIMIZE else float(text)


def _loss(text: str):
    parts = text.split(":")
    if len(parts) == 1:
        return float(parts[0])
    if len(parts) == 3:
        return tuple(float(p) for p in parts)
    raise argparse.ArgumentTypeError("loss is a value or start:stop:step")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--protocol", choices=("si", "mdi"))
    common.add_argument("--n-tot", type=float, help="total number of rounds")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--p-d", type=float, help="dark-count probability per round")
    common.add_argument("--p-z", type=float)
    common.add_argument("--p-s", type=float)
    common.add_argument("--mu", type=_mu_or_opt, help="intensity or 'optimize'")
    common.add_argument("--p-sig", type=_mu_or_opt, help="signal-round probability or 'optimize'")
    common.add_argument("--loss-db", type=_loss, help="loss in dB, or start:stop:step")
    common.add_argument("--mode-c", choices=C_MODES)
    common.add_argument("--mode-delta", choices=DELTA_MODES)
    common.add_argument("--output", help="CSV output path (default: stdout)")
    common.add_argument("--dump-config", action="store_true",
                        help="print the resolved configuration and exit")

    p = argparse.ArgumentParser(prog="sdiqrng", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("certify", parents=[common], help="certify a single point")
    c.add_argument("--save-certificate", help="write the certificate used to this JSON file")
    c.add_argument("--certificate", help="saved certificate JSON (measured-counts mode)")
    c.add_argument("--counts", help="JSON file of measured test counts (with --certificate)")
    s = sub.add_parser("sweep", parents=[common], help="sweep over a loss range")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    o = sub.add_parser("optimize", parents=[common], help="optimize mu and p_sig at each loss")
    o.add_argument("--jobs", type=int, default=1, help="worker processes")
    return p


def resolve_config(args, command: str) -> RunConfig:
    base = load(args.config).to_dict() if args.config else RunConfig().to_dict()
    for name in FIELD_NAMES:
        val = getattr(args, name, None)
        if val is not None:
            base[name] = val
    if isinstance(base.get("n_tot"), float) and base["n_tot"].is_integer():
        base["n_tot"] = int(base["n_tot"])
    cfg = from_dict(base)
    if command == "certify" and OPTIMIZE in (cfg.mu, cfg.p_sig):
        raise ConfigError("certify needs fixed --mu and --p-sig")
    if command == "certify" and len(cfg.loss_points()) != 1:
        raise ConfigError("certify needs a single --loss-db value")
    if command == "optimize" and OPTIMIZE not in (cfg.mu, cfg.p_sig):
        cfg = cfg.with_updates(mu=OPTIMIZE, p_sig=OPTIMIZE)
    return cfg


def check_writable(path: str | None) -> None:
    """Fail before any computation when ``path`` cannot be written."""
    if path is None:
        return
    folder = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(folder):
        raise ConfigError(f"output directory does not exist: {folder}")
    if os.path.isdir(path):
        raise ConfigError(f"output path is a directory: {path}")
    if os.path.exists(path) and not os.access(path, os.W_OK):
        raise ConfigError(f"output path is not writable: {path}")
    if not os.path.exists(path) and not os.access(folder, os.W_OK):
        raise ConfigError(f"output directory is not writable: {folder}")


def load_certificate(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        kind = json.loads(text).get("kind")
    except (OSError, ValueError, AttributeError) as exc:
        raise ConfigError(f"cannot read certificate {path}: {exc}") from None
    if kind == "si":
        return si.SiDualCertificate.from_json(text)
    if kind == "mdi":
        return mdi.MdiDualCertificate.from_json(text)
    raise ConfigError(f"unknown certificate kind {kind!r}")


def load_counts(path: str) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            return np.asarray(json.load(fh), dtype=float)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read counts {path}: {exc}") from None


def _emit(records, output: str | None, out) -> None:
    text = pipeline.format_csv(records)
    if output is None:
        out.write(text)
    else:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def run(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args, args.command)
        if args.dump_config:
            out.write(cfg.dumps())
            return EXIT_OK
        check_writable(cfg.output)
        if args.command == "certify":
            check_writable(args.save_certificate)
            if (args.certificate is None) != (args.counts is None):
                raise ConfigError("--certificate and --counts go together")
            if args.certificate and args.save_certificate:
                raise ConfigError("--save-certificate cannot be combined with --certificate")
        jobs = getattr(args, "jobs", 1)
        if jobs < 1:
            raise ConfigError("--jobs must be at least 1")
    except ConfigError as exc:
        err.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG

    try:
        if args.command == "certify":
            if args.certificate:
                cert = load_certificate(args.certificate)
                counts = load_counts(args.counts)
                records = [pipeline.certify_counts(cfg, cert, counts)]
            else:
                rec, cert = pipeline.certify_point(cfg, cfg.mu, cfg.p_sig, cfg.loss_points()[0])
                records = [rec]
                if args.save_certificate and cert is not None:
                    with open(args.save_certificate, "w", encoding="utf-8") as fh:
                        fh.write(cert.to_json() + "\n")
        else:
            records = pipeline.sweep(cfg, jobs=jobs)
    except ConfigError as exc:
        err.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    except (pipeline.StageError, ValueError) as exc:
        err.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC

    _emit(records, cfg.output, out)
    for r in records:
        err.write(r.summary() + "\n")
    return EXIT_OK if all(r.ok for r in records) else EXIT_NUMERIC


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
