"""Sweep the memory (alpha) or orthogonality (beta) coefficient across seeds."""
import csv
import sys

from _common import base_parser, config, seeds
from sorsnn.harness import sweep_rows


def main():
    p = base_parser(__doc__)
    p.add_argument("--param", choices=["alpha", "beta"], required=True)
    p.add_argument("--values", required=True, help="comma-separated coefficients")
    args = p.parse_args()
    values = sorted({float(v) for v in args.values.split(",")})
    rows = sweep_rows(args.param, values, seeds(args.seeds), config(args))
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
