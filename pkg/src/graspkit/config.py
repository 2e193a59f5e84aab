"""Read-only view of every fixed hyperparameter, gathered from the modules that use it."""

from __future__ import annotations

import copy

from . import contactcvae, data, graspnet, losses, metrics, refine


def hyperparameters() -> dict:
    """Nested dict of the constants the pipeline runs with.

    Values are read from the live module constants, so this reflects what
    the code does rather than a separate copy.
    """
    cv, gn = contactcvae.DEFAULT_CONFIG, graspnet.DEFAULT_CONFIG
    out = {
        "contact_loss": dict(zip(("bce", "dice", "kl"), losses.CONTACT_WEIGHTS)),
        "grasp_loss": dict(losses.GRASP_WEIGHTS),
        "refine_loss": dict(zip(("consistency", "penetration", "prior"), refine.REFINE_WEIGHTS)),
        "refine_schedule": {"optimizer": "adam", "lr": refine.REFINE_LR, "steps": refine.REFINE_STEPS,
                            "depth_threshold_m": refine.DEPTH_THRESHOLD},
        "n_points": data.N_POINTS,
        "contact_threshold_m": data.CONTACT_THRESHOLD,
        "soft_contact": {"offset_m": losses.SOFT_CONTACT_OFFSET, "scale_m": losses.SOFT_CONTACT_SCALE},
        "voxel_size_m": metrics.VOXEL_SIZE,
        "success": {"volume_cm3": metrics.SUCCESS_VOLUME_CM3,
                    "displacement_cm": metrics.SUCCESS_DISPLACEMENT_CM},
        "simulation": {"gravity": metrics.GRAVITY, "stiffness": metrics.CONTACT_STIFFNESS,
                       "damping": metrics.CONTACT_DAMPING, "dt": metrics.SIM_DT,
                       "duration": metrics.SIM_DURATION, "density": metrics.DENSITY},
        "contactcvae": {k: v for k, v in cv.items() if k != "weights"},
        "graspnet": {k: v for k, v in gn.items() if k != "weights"},
    }
    return copy.deepcopy(out)
