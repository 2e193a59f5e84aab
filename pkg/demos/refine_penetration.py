"""Push one finger into an object, then repair the grasp with partial and global refinement.

Run: python3 demos/refine_penetration.py
Takes about half a minute.
"""

import numpy as np

from graspkit import data, losses, metrics, refine
from graspkit.geometry import sample_surface_points
from graspkit.hand import default_model, forward


def report(label, pose, obj, model):
    hand = forward(model, pose)
    dmax, _ = metrics.penetration_depth(hand, obj)
    vol = metrics.penetration_volume(hand, obj)
    pen = losses.penetration_loss(hand.vertices, obj).item()
    print(f"{label:>8}  depth {dmax:6.3f} cm  volume {vol:6.3f} cm3  penetration loss {pen:.4f}")


def main():
    model = default_model()
    obj = data.generate_object("cylinder", {"radius": 0.03, "height": 0.08})
    pose = data.oracle_grasp(obj, [0.0, 0.0, 1.0], seed=0, model=model)
    cloud = sample_surface_points(obj, 512, seed=0)
    contact = data.derive_gt_contact(cloud, forward(model, pose))

    bad = data.penetrating_variant(obj, pose, "index", depth=0.006, model=model)
    print("parts past the 1 mm threshold:", sorted(refine.detect_penetrating_parts(forward(model, bad), obj)))
    report("oracle", pose, obj, model)
    report("pushed", bad, obj, model)
    for mode in ("partial", "global"):
        rep = refine.refine(bad, cloud, obj, mode, contact=contact)
        moved = np.flatnonzero(rep.final_pose.vector != bad.vector)
        report(mode, rep.final_pose, obj, model)
        print(f"{'':>8}  {len(rep.adjusted_param_indices)} adjustable parameters, {len(moved)} changed")


if __name__ == "__main__":
    main()
