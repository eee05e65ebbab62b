"""Orthoimage annotation engine: region tools, tiled inference, datasets and analysis."""

from ._core import (
    Cancelled,
    Conflict,
    ContractViolation,
    Error,
    InvalidArgument,
    NotFound,
    OrthoMap,
    Project,
    Service,
    add_map,
    cut,
    detect_changes,
    edit_border,
    evaluate,
    export_dataset,
    extreme_click,
    freehand_close,
    infer,
    metrics,
    new_project,
    open_orthomap,
    posneg_click,
    rasterize,
    refine,
    region_stats,
    train,
    vectorize,
    coverage,
)

__all__ = [name for name in dir() if not name.startswith("_")]
