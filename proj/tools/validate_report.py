#!/usr/bin/env python3
"""Validate report.jsonl files against docs/report.schema.json."""

import argparse
import json
import pathlib
import sys

import jsonschema

SCHEMA = pathlib.Path(__file__).resolve().parent.parent / "docs" / "report.schema.json"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("reports", nargs="+", type=pathlib.Path)
    ap.add_argument("--schema", type=pathlib.Path, default=SCHEMA)
    args = ap.parse_args()

    schema = json.loads(args.schema.read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)
    bad = 0
    for path in args.reports:
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            for err in validator.iter_errors(json.loads(line)):
                print(f"{path}:{lineno}: {err.message}", file=sys.stderr)
                bad += 1
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
