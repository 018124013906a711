"""Euler against RK4 at equal step counts, for one flow.

RK4 costs four network evaluations per step; the table reports both the
step count and the evaluation count so the comparison can be made either way.

    python3 scripts/solver_ablation.py --flow trig --steps 1,2,5,10
"""
import argparse

from wavefm.metrics import volume_mmd2
from wavefm.sampler import sample_batch
from wavefm.synthdata import phantom_set
from wavefm.trainer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--flow", default="trig")
    ap.add_argument("--steps", default="1,2,5,10")
    ap.add_argument("--train-steps", type=int, default=2000)
    ap.add_argument("--n-eval", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    heldout = phantom_set(args.n_eval, 16, args.seed, "heldout")
    real = [ph.volume for ph in heldout]
    conds = [{"condition": ph.condition} for ph in heldout]
    model, _ = train(TrainConfig(flow=args.flow, steps_total=args.train_steps, seed=args.seed))
    print(f"{'solver':6s} {'steps':>5s} {'evals':>5s} {'mmd':>8s}")
    for steps in (int(s) for s in args.steps.split(",")):
        for solver, per in (("euler", 1), ("rk4", 4)):
            gen = sample_batch(model, conds, (16, 16, 16), steps, solver, seed=1)
            print(f"{solver:6s} {steps:5d} {steps * per:5d} {volume_mmd2(gen, real):8.4f}")


if __name__ == "__main__":
    main()
