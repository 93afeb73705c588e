"""Injure part of task 1's unique synapses after a sequence and retrain task 1."""
from _common import base_parser, config, seeds
from sorsnn.harness import injury_experiment, run_sequence


def main():
    p = base_parser(__doc__)
    p.add_argument("--fraction", type=float, default=None)
    args = p.parse_args()
    for s in seeds(args.seeds):
        cfg = config(args, f"seed={s}")
        res = run_sequence(cfg)
        frac = cfg.injury_fraction if args.fraction is None else args.fraction
        inj = injury_experiment(res.model, res.seq, 1, frac, seed=s)
        same = all((a == b).all() for t in res.model.order[1:]
                   for a, b in zip(inj.masks_before[t], inj.masks_after[t]))
        fmt = lambda d: " ".join(f"{t}:{v:.3f}" for t, v in d.items())
        print(f"seed {s}  cleared {inj.cleared}\n  pre  {fmt(inj.pre)}\n  post {fmt(inj.post)}\n"
              f"  other masks unchanged: {same}", flush=True)


if __name__ == "__main__":
    main()
