"""MMD against a held-out phantom set as a function of sampling steps, per flow.

Trains one model per flow (about a minute each at the defaults), then
writes step_ablation.csv with columns flow,steps,mmd,spearman,ms_per_sample.

    python3 scripts/step_ablation.py --flows rfm,cfm,vp,trig --steps 1,2,5,10,200
"""
import argparse
import csv
import time

from wavefm.metrics import spearman, volume_mmd2
from wavefm.sampler import sample_batch
from wavefm.synthdata import condition_proxy, phantom_set
from wavefm.trainer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--flows", default="rfm,cfm,vp,trig")
    ap.add_argument("--steps", default="1,2,5,10,200")
    ap.add_argument("--solver", default="euler")
    ap.add_argument("--train-steps", type=int, default=2000)
    ap.add_argument("--n-eval", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="step_ablation.csv")
    args = ap.parse_args()

    heldout = phantom_set(args.n_eval, 16, args.seed, "heldout")
    real = [ph.volume for ph in heldout]
    conds = [{"condition": ph.condition} for ph in heldout]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flow", "steps", "mmd", "spearman", "ms_per_sample"])
        for flow in args.flows.split(","):
            model, _ = train(TrainConfig(flow=flow, steps_total=args.train_steps, seed=args.seed))
            for steps in (int(s) for s in args.steps.split(",")):
                t0 = time.perf_counter()
                gen = sample_batch(model, conds, (16, 16, 16), steps, args.solver, seed=1)
                ms = 1000 * (time.perf_counter() - t0) / len(gen)
                rho = spearman([c["condition"] for c in conds], [condition_proxy(g) for g in gen])
                row = [flow, steps, volume_mmd2(gen, real), rho, ms]
                w.writerow(row)
                print(f"{flow:5s} steps={steps:4d} mmd={row[2]:.4f} spearman={rho:.3f} {ms:.1f} ms")


if __name__ == "__main__":
    main()
