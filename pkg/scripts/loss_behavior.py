"""Train free embeddings with each loss and report how class geometry changes.

Separated blobs (10 stddev apart) mostly leave distance-hinge losses idle;
overlapping blobs (3-4 apart) show every loss pulling classes together.

    python3 scripts/loss_behavior.py --separation 4 10
"""
import argparse
import time

from ensemble_forge import lab


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--separation", type=float, nargs="+", default=[4.0, 10.0])
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--per-class", type=int, default=40)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'sep':>5} {'loss':>13} {'intra0':>8} {'intra':>8} {'ratio0':>8} {'ratio':>8} {'acc':>6} {'sec':>5}")
    for sep in args.separation:
        means = lab.ring_means(args.classes, 2, sep)
        train = lab.generate_blobs(lab.BlobSpec(means, 1.0, args.per_class, args.seed))
        held = lab.generate_blobs(lab.BlobSpec(means, 1.0, args.per_class, args.seed + 1))
        intra0, inter0 = lab.class_distances(train)
        for loss in lab.LOSSES:
            t0 = time.perf_counter()
            res = lab.train_embeddings(train, lab.TrainConfig(loss=loss, steps=args.steps, seed=args.seed))
            intra, inter = lab.class_distances(res.embeddings)
            head = lab.fit_nngk(res.embeddings, 30, phi=1.0, k=5, seed=args.seed)
            acc = lab.nngk_accuracy(head, 5, res.transform(held))
            print(f"{sep:5.1f} {loss:>13} {intra0:8.3f} {intra:8.3f} {intra0 / inter0:8.3f} "
                  f"{intra / inter:8.3f} {acc:6.3f} {time.perf_counter() - t0:5.1f}")


if __name__ == "__main__":
    main()
