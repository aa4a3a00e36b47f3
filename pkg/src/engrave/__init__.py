"""Engraving extraction from photometric-stereo captures of bronze mirrors.

Pipeline: captures -> photometric stereo -> depth integration -> high-pass
preprocessing -> patch prediction -> weighted stitching -> evaluation.
"""

from .errors import ConfigError, DataError, EngraveError

__all__ = ["ConfigError", "DataError", "EngraveError"]
__version__ = "0.1.0"
