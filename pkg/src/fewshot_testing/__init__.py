"""Few-shot scenario testing for rare-event crash-rate estimation.

A fixed, optimized set of n test scenarios estimates a follower model's
exposure-weighted crash rate over a discrete cut-in scenario space, with a
certified error bound that holds for every model in the convex hull of a
set of surrogate vertex models.

Submodules import lazily so the CLI can pin thread-pool environment
variables before numpy loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "cli",
    "config",
    "cutin_sim",
    "errors",
    "eval_harness",
    "fst_optimizer",
    "fst_trainer",
    "model_set",
    "pipeline",
    "scenario_space",
    "seeding",
    "similarity_net",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name: str):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
