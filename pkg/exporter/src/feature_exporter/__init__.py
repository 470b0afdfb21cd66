"""Export per-layer features from a frozen backbone into FBNK1 banks."""

from .backbone import TAP_NAMES, load_backbone, tap_features
from .export import (ExportError, ExportSpec, export_bank, list_images,
                     load_image, write_fbnk)

__version__ = "0.1.0"
