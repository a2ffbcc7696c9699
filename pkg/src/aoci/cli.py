"""``aoci`` command-line entry point.

Exit codes: 0 success, 1 config error, 2 verification failure, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import TASKS, ConfigError, UnknownPreset, load_config, parse_override, preset, resolve_config, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoci", description="Age-of-changed-information update policies.")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="JSON config or manifest file")
        src.add_argument("--preset", help="figure preset (fig3 ... fig9)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config leaf, e.g. params.p_s=0.8 (repeatable)")
        p.add_argument("--out", help="output prefix for <prefix>.json/.csv/.manifest.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.preset:
            data = preset(args.preset)
            data.pop("task", None)
        elif args.config:
            data = load_config(args.config)
        else:
            data = {}
        cfg = resolve_config(data, [parse_override(o) for o in args.overrides])
        bundle = run(cfg, args.task, args.out)
    except (ConfigError, UnknownPreset, OSError) as exc:
        errors = exc.errors if isinstance(exc, ConfigError) else [str(exc)]
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 -- mapped to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if bundle.paths:
        print(json.dumps(bundle.paths))
    else:
        sys.stdout.write(bundle.csv_text)
    return 2 if bundle.failed else 0


if __name__ == "__main__":
    sys.exit(main())
