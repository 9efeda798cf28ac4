"""Egocentric action recognition from trajectory-aligned features.

Pipeline: dense optical flow -> bi-directional dense trajectories ->
HOG/HOF/MBH/kinematic descriptors -> temporal-pyramid bag of words ->
one-vs-rest chi-square SVM -> MRF smoothing by alpha-expansion.
"""

from .errors import ConfigError, EgoTrajError, InputError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "EgoTrajError", "InputError", "NumericalError", "__version__"]
