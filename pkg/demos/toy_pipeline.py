"""Small end-to-end run: synthesize objects, train both networks briefly, generate and score grasps.

Run: python3 demos/toy_pipeline.py
Under a minute on one core.  The networks are far from converged at this
budget (the drop test mostly lets the object fall); the point is to show
the data flow and the metric table.
"""

import numpy as np

from graspkit import contactcvae as cv
from graspkit import data, graspnet as gn, metrics, refine
from graspkit.hand import default_model, forward


def main():
    samples, split = data.build_dataset(12, 2, seed=0, n_points=256)
    by_id = {s.sample_id: s for s in samples}
    train = [by_id[i] for i in split["train"]]
    test = [by_id[i] for i in split["test"]]
    print(f"{len(train)} train / {len(test)} held-out samples, held-out kinds {sorted({s.kind for s in test})}")

    cvae = cv.ContactCVAE({"batch_size": 8}, seed=0)
    opt = cv.make_optimizer(cvae)
    for epoch in range(15):
        stats = cv.train_epoch(cvae, train, opt)
    print(f"contact CVAE after {cvae.epoch} epochs: loss {stats['loss']:.3f}, dice term {stats['dice']:.3f}")

    net = gn.GraspNet({"batch_size": 8}, seed=0)
    opt = gn.make_optimizer(net)
    for epoch in range(5):
        stats = gn.train_epoch(net, train, opt, cvae=cvae)
    print(f"GraspNet after {net.epoch} epochs: loss {stats['loss']:.3f}")

    model = default_model()
    s = test[0]
    maps = [cvae.generate(s.cloud.points, seed=k) for k in range(4)]
    print("pairwise dice distance of sampled maps:\n", np.round(cv.dice_distance_matrix(maps), 2))

    rows = {"none": [], "partial": []}
    hands = {mode: [] for mode in rows}
    for c in maps:
        pred = net.predict(s.cloud, c)
        for mode in rows:
            rep = refine.refine(pred, s.cloud, s.object_mesh, mode, steps=50)
            hands[mode].append(forward(model, rep.final_pose))
            rows[mode].append(metrics.evaluate_grasp(hands[mode][-1], s.object_mesh))
    for mode, evals in rows.items():
        summary = metrics.summarize(evals, hands[mode])
        print(mode, {k: (round(v, 3) if isinstance(v, float) else v) for k, v in summary.items()})


if __name__ == "__main__":
    main()
