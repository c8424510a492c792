"""Elastic shape analysis of protein backbones and a geometric VAE on the
hypersphere of square-root velocity functions."""

__version__ = "0.1.0"

from .curve import (  # noqa: E402
    Curve,
    Rotation,
    Srvf,
    Warp,
    apply_rotation,
    apply_warp,
    from_srvf,
    inner,
    l2_cost,
    normalize_preshape,
    preshape_distance,
    to_srvf,
)
from .registration import (  # noqa: E402
    DpGrid,
    distance_matrix,
    dp_warp,
    geodesic_path,
    optimal_rotation,
    register,
    shape_distance,
    slerp,
)
