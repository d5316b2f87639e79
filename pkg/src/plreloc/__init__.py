"""Camera relocalization with point and line scene-coordinate regression forests."""

from .geometry import CameraIntrinsics, Gaussian3, RigidTransform

__version__ = "0.1.0"
__all__ = ["CameraIntrinsics", "Gaussian3", "RigidTransform", "__version__"]
