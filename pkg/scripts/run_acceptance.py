#!/usr/bin/env python3
"""Run acceptance criteria 1-10 and print one PASS/FAIL line per criterion."""
import argparse
import sys

import pytest


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("-k", help="pytest -k expression selecting criteria, e.g. 'c01 or c05'")
    args = p.parse_args()
    argv = ["-q", "-p", "no:cacheprovider", "tests/test_acceptance.py"]
    if args.k:
        argv += ["-k", args.k]
    return int(pytest.main(argv))


if __name__ == "__main__":
    sys.exit(main())
