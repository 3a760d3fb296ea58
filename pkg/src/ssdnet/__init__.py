"""Guided depth super-resolution with spherical feature decomposition.

Subpackages and modules:

- :mod:`ssdnet.tensor`: reverse-mode autodiff over numpy arrays
- :mod:`ssdnet.sphere`: exponential/logarithmic maps and spherical distances
- :mod:`ssdnet.network`: encoders, decoders and the super-resolution model
- :mod:`ssdnet.losses`: pixel, decomposition and contrastive losses
- :mod:`ssdnet.refine`: defect synthesis, patch classifier, contrastive refinement
- :mod:`ssdnet.data`: image codecs, bicubic resampling, synthetic scenes, manifests
"""

from .network import ModelConfig, SSDNet
from .sphere import SphereConfig, exp_map, log_map, sphere_distance

__version__ = "0.1.0"

__all__ = ["ModelConfig", "SSDNet", "SphereConfig", "exp_map", "log_map", "sphere_distance", "__version__"]
