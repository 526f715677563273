"""Synthetic fetal-brain ultrasound segmentation: volumes, metrics, networks.

Arrays are indexed (z, y, x); spacing and origin tuples are (x, y, z) in mm.
"""

from ._usbrain import (
    Error,
    Network,
    atlas_mask,
    centroid_ed,
    dsc,
    hausdorff,
    load_mask,
    load_volume,
    param_count,
    pearson_r,
    phantom,
    save_mask,
    save_volume,
    table1_specs,
    threshold,
    verify_tables,
    welch_t,
)

__all__ = [
    "Error",
    "Network",
    "atlas_mask",
    "centroid_ed",
    "dsc",
    "hausdorff",
    "load_mask",
    "load_volume",
    "param_count",
    "pearson_r",
    "phantom",
    "save_mask",
    "save_volume",
    "table1_specs",
    "threshold",
    "verify_tables",
    "welch_t",
]
