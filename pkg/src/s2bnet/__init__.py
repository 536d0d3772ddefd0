"""Binarized pan-sharpening network with spectral redistribution and Gabor-initialized binary convolutions."""

__version__ = "0.1.0"

from .network import S2BNet, S2BNetConfig, build  # noqa: E402
from .trainer import TrainConfig, train  # noqa: E402

__all__ = ["S2BNet", "S2BNetConfig", "TrainConfig", "build", "train", "__version__"]
