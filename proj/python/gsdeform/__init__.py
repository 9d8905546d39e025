"""Rigidity-aware Gaussian deformation engine."""

from ._core import (
    Error,
    SessionManager,
    ball_query,
    default_config,
    deform,
    knn,
    load_positions,
    make_demo_scene,
    ransac_pnp,
    select_view,
)

# Errors carry (code, message); code is the stable string the CLI prints.
Error.code = property(lambda self: self.args[0])

__all__ = [
    "Error",
    "SessionManager",
    "ball_query",
    "default_config",
    "deform",
    "knn",
    "load_positions",
    "make_demo_scene",
    "ransac_pnp",
    "select_view",
]
