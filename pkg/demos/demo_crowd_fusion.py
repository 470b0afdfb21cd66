"""Fusing unreliable annotators beats counting their votes.

Draws a classic conditionally-independent crowd: each annotator has a
hidden per-class accuracy between 0.60 and 0.90 and emits one label per
sample.  Majority voting weighs every annotator equally; soft fusion
jointly estimates who is reliable on which class and reweights them,
which is the same machinery the pipeline uses to fuse per-layer probes.
"""

import argparse

import numpy as np

from probefuse import DSConfig, ds_aggregate, gen_crowd_instance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=2000, help="number of samples")
    ap.add_argument("--annotators", type=int, default=7)
    ap.add_argument("--classes", type=int, default=7)
    args = ap.parse_args()

    ann, truth, true_pi = gen_crowd_instance(
        args.n, args.classes, args.annotators, (0.6, 0.9), seed=args.seed)

    votes = ann.sum(axis=1)
    mv_acc = np.mean(votes.argmax(axis=1) == truth)

    res = ds_aggregate(ann, DSConfig())
    ds_acc = np.mean(res.posteriors.argmax(axis=1) == truth)

    print(f"{args.annotators} annotators x {args.n} samples, "
          f"{args.classes} classes, per-class accuracy ~ U[0.60, 0.90]")
    print(f"majority vote accuracy : {mv_acc:.4f}")
    print(f"soft fusion accuracy   : {ds_acc:.4f}   "
          f"({res.n_iters} EM iterations, converged={res.converged})")

    print("\nrecovered annotator reliability (mean confusion diagonal):")
    print("annotator   true   estimated")
    for j, (pi, cm) in enumerate(zip(true_pi, res.confusions)):
        print(f"{j:9d}  {np.diag(pi).mean():5.3f}  {np.diag(cm.values).mean():9.3f}")


if __name__ == "__main__":
    main()
