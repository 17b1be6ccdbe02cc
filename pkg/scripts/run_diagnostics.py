#!/usr/bin/env python3
"""Run the full verification suite and save the machine-readable report.

Equivalent to ``divebatch diagnose --suite all``; exists so the checks can be
launched without installing the console script.
"""

import argparse
import sys

from divebatch.cli import main as cli_main


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--suite", choices=("grad", "lemma", "bounds", "all"), default="all")
    parser.add_argument("--out", default="diagnostics_report.txt")
    args = parser.parse_args(argv)
    return cli_main(["diagnose", "--suite", args.suite, "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
