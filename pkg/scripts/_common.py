import argparse
import csv
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from preferdiff.config import parse_config  # noqa: E402


def base_parser(desc):
    ap = argparse.ArgumentParser(description=desc)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--config", help="key = value file applied under the per-arm settings")
    ap.add_argument("--csv", help="write one row per run here")
    return ap


def make_cfg(path, **overrides):
    return parse_config(path, {k: str(v) for k, v in overrides.items()}, env={})


def write_rows(path, header, rows):
    if not path:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
