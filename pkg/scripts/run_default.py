"""Train one task sequence and write a report archive."""
import numpy as np

from _common import base_parser, config
from sorsnn.harness import run_sequence
from sorsnn.report import write_archive


def main():
    p = base_parser(__doc__)
    p.add_argument("--out", default="runs/default")
    args = p.parse_args()
    cfg = config(args)
    res = run_sequence(cfg)
    out = write_archive(res, cfg, args.out)
    np.set_printoptions(precision=3, suppress=True)
    print(res.matrix)
    print(f"ACC {res.metrics['ACC']:.4f}  BWT {res.metrics['BWT']}")
    print(f"archive: {out}")


if __name__ == "__main__":
    main()
