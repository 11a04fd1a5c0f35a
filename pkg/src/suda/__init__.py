"""Dual-branch speaker and utterance verification with cross-branch masking.

The main entry points are :class:`SudaVerifier` (scikit-learn style
estimator), :mod:`suda.pipeline` (file-level steps) and the ``suda`` command.
"""
from .config import RunConfig
from .estimator import SudaVerifier
from .frontend import MfccExtractor, extract_features
from .network import SudaConfig, forward, forward_mod_suv, init_params
from .scoring import compute_eer

__all__ = ["RunConfig", "SudaVerifier", "MfccExtractor", "extract_features", "SudaConfig",
           "forward", "forward_mod_suv", "init_params", "compute_eer"]
__version__ = "0.1.0"
