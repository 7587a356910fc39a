"""Speech emotion recognition with a residual CNN trained under focal loss."""

from serfocal.labels import CLASSES, N_CLASSES

__version__ = "0.1.0"

__all__ = ["CLASSES", "N_CLASSES", "__version__"]
