"""Command-line front end: ``run``, ``sweep`` and ``verify``.

Exit codes: 0 success, 1 runtime failure (or failed verification),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

from .errors import ConfigError, UsageError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="sellock", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train every seed of one config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides output_dir)")

    s = sub.add_parser("sweep", help="cross product of a grid with the config's seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", required=True, help="JSON object of axis -> list of values")
    s.add_argument("--out")

    v = sub.add_parser("verify", help="run an acceptance suite")
    v.add_argument("suite", choices=("core", "theory", "arew", "all"))
    v.add_argument("--report", help="also write the JSON report to this path")
    return p


def _verify(args):
    from .acceptance import report, run_suite

    results = run_suite(args.suite, echo=lambda line: print(line, file=sys.stderr, flush=True))
    rep = report(results)
    text = json.dumps(rep, indent=1)
    print(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK if rep["passed"] else EXIT_RUNTIME


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _verify(args)
        from . import experiment

        if args.command == "run":
            m = experiment.run(experiment.load_config(args.config), args.out)
        else:
            m = experiment.sweep(experiment.load_config(args.config), args.grid, args.out)
        print(json.dumps(m.to_dict(), indent=1, sort_keys=True))
        return EXIT_OK
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
