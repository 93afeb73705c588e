"""Pathway model against naive fine-tuning on the same seeds."""
import numpy as np

from _common import base_parser, config, seeds
from sorsnn.harness import run_sequence


def main():
    args = base_parser(__doc__).parse_args()
    rows = {}
    for method, extra in (("sorsnn", []), ("naive", ['method="naive"', "loss.alpha=0", "loss.beta=0"])):
        for s in seeds(args.seeds):
            m = run_sequence(config(args, f"seed={s}", *extra)).metrics
            rows.setdefault(method, []).append((m["ACC"], m["BWT"]))
            print(f"{method:7s} seed {s}: ACC {m['ACC']:.3f}  BWT {m['BWT']:+.3f}", flush=True)
    for method, vals in rows.items():
        acc, bwt = np.array(vals).T
        print(f"{method:7s} ACC {acc.mean():.3f} ± {acc.std():.3f}   BWT {bwt.mean():+.3f} ± {bwt.std():.3f}")


if __name__ == "__main__":
    main()
