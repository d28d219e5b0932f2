"""Command-line entry point.

Every stage subcommand builds a config (from ``--config`` or from flags),
runs the stages it needs and prints the report. ``--set key=value`` edits
any config key, e.g. ``--set whitham.half_widths=[2,2]``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .config import STAGE_ORDER, apply_overrides, bundled_configs, read_config_data, validate_config
from .errors import ModwaveError
from .pipeline import OUTPUT_ENV, report, run

# stages run by each subcommand when no config is given
CHAINS = {
    "profile": ["profile"],
    "continue": ["profile", "continue"],
    "spectrum": ["profile", "spectrum"],
    "whitham": ["profile", "spectrum", "whitham"],
    "simulate": ["profile", "simulate"],
    "compare": ["profile", "spectrum", "whitham", "compare"],
    "diffwave": ["diffwave"],
}


def _parse_params(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ModwaveError("invalid-config", f"model parameter {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        out[key] = yaml.safe_load(raw)
    return out


def _config_data(cmd: str, args) -> dict:
    if args.config:
        data = read_config_data(args.config)
        if cmd != "run":
            wanted = set(CHAINS[cmd])
            kinds = [s.get("kind") for s in data.get("stages", [])]
            missing = [k for k in CHAINS[cmd] if k not in kinds]
            for kind in missing:
                data.setdefault("stages", []).append({"kind": kind})
            data["stages"] = sorted([s for s in data["stages"] if s.get("kind") in wanted or s.get("kind") == "continue"],
                                    key=lambda s: STAGE_ORDER.index(s["kind"]))
    else:
        if not args.model:
            raise ModwaveError("invalid-config", "give --config or --model")
        stages = []
        for kind in CHAINS[cmd]:
            st = {"kind": kind}
            if kind == "profile":
                if args.k is None or args.amplitude is None:
                    raise ModwaveError("invalid-config", "profile needs --k and --amplitude")
                st.update(k=args.k, amplitude=yaml.safe_load(args.amplitude))
            if kind == "continue":
                if args.k_target is None:
                    raise ModwaveError("invalid-config", "continue needs --k-target")
                st.update(k_target=args.k_target)
            stages.append(st)
        data = {"name": args.name or f"{args.model}-{cmd}",
                "model": {"name": args.model, "params": _parse_params(args.param)},
                "stages": stages}
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["output_dir"] = args.out
    return apply_overrides(data, args.set or [])


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="config file (YAML/JSON) or bundled config name")
    p.add_argument("--model", help="model name when no config is given")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="model parameter")
    p.add_argument("--k", type=float, help="wavenumber of the profile seed")
    p.add_argument("--amplitude", help="seed amplitude (number or list)")
    p.add_argument("--k-target", type=float, help="target wavenumber for continuation")
    p.add_argument("--name", help="run name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"artifact directory (default: under ${OUTPUT_ENV})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--quiet", action="store_true", help="do not print the report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modwave", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    helps = {
        "profile": "solve for a periodic profile",
        "continue": "solve and continue a profile in wavenumber",
        "spectrum": "Bloch spectrum and diffusive stability",
        "whitham": "modulation coefficients and coupling class",
        "simulate": "nonlinear run from a localized perturbation",
        "compare": "PDE run against the modulation system",
        "diffwave": "diffusion waves and approximant equivalence gaps",
    }
    for cmd, text in helps.items():
        _add_common(sub.add_parser(cmd, help=text))
    rp = sub.add_parser("report", help="summarize an artifact directory")
    rp.add_argument("artifact_dir")
    sub.add_parser("configs", help="list bundled configs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "report":
            print(report(args.artifact_dir))
            return 0
        if args.cmd == "configs":
            print("\n".join(bundled_configs()))
            return 0
        cfg = validate_config(_config_data(args.cmd, args))
        out = run(cfg)
        text = report(out)
        if not args.quiet:
            print(text)
        print(f"artifacts: {out}")
        return 0 if "overall: pass" in text else 1
    except (ModwaveError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
