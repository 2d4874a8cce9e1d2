"""Distributed EEG/MEG inverse solutions with exact point-source localization.

The heavy lifting lives in the compiled ``_core`` extension. Arrays are
plain NumPy arrays: montages and source grids are ``(n, 3)`` in metres,
lead fields are ``(N_E, 3 * N_V)`` and average referenced.
"""

from ._core import (
    DEFAULT_CONDUCTIVITY,
    DEFAULT_HEAD_RADIUS,
    Error,
    Method,
    centering_matrix,
    fibonacci_montage,
    prepare,
    pseudo_inverse,
    regular_grid,
    sphere_leadfield,
    sym_sqrt,
    sym_sqrt_pinv,
)

__all__ = [
    "DEFAULT_CONDUCTIVITY",
    "DEFAULT_HEAD_RADIUS",
    "Error",
    "Method",
    "centering_matrix",
    "fibonacci_montage",
    "prepare",
    "pseudo_inverse",
    "regular_grid",
    "sphere_leadfield",
    "sym_sqrt",
    "sym_sqrt_pinv",
]
