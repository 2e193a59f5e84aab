"""Contact-map-conditioned grasp synthesis: contact CVAE, pose regression, penetration-aware refinement."""

from .config import hyperparameters
from .contactcvae import ContactCVAE
from .geometry import ObjectCloud, TriMesh
from .graspnet import GraspNet
from .hand import HandMesh, HandModel, HandPose, default_model, forward

__all__ = ["ContactCVAE", "GraspNet", "HandMesh", "HandModel", "HandPose", "ObjectCloud", "TriMesh",
           "default_model", "forward", "hyperparameters"]
__version__ = "0.1.0"
