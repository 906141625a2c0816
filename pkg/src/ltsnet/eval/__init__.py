from .figures import interpolate_pair, latent_traversal, read_pnm, reconstruct, tile_row, traversal_grid, write_pnm
from .metrics import (
    ForgettingCurve,
    accuracy_eval,
    exact_elbo,
    exact_log_likelihood,
    forgetting_curve,
    nll_eval,
)

__all__ = [
    "ForgettingCurve",
    "accuracy_eval",
    "exact_elbo",
    "exact_log_likelihood",
    "forgetting_curve",
    "interpolate_pair",
    "latent_traversal",
    "nll_eval",
    "read_pnm",
    "reconstruct",
    "tile_row",
    "traversal_grid",
    "write_pnm",
]
