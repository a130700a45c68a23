"""Builtin benchmark models.

T0  frozen state: every coefficient zero, terminal x.
T1  pure compensated jump: h = e on a single atom.
T2  pure Brownian martingale: sigma = 1.
T3  coupled benchmark: drift -y, diffusion 1 + 0.05 z, jumps 0.1 cap1(e) x,
    driver -0.5 y + q. Designed for the small-interval contraction regime.
"""

from __future__ import annotations

import copy

from .model import CoefficientSet, model_from_dict
from .marks import MarkSpace

_SINGLE_ATOM = {"atoms": [{"e": 0.5, "w": 2.0}], "cutoff": 0.0,
                "rho_scale": 1.0, "l": "cap1(e)"}
_PAIR_ATOMS = {"atoms": [{"e": 0.5, "w": 2.0}, {"e": -0.5, "w": 2.0}],
               "cutoff": 0.0, "rho_scale": 0.1, "l": "cap1(e)"}

T0 = {
    "name": "T0",
    "n": 1, "d": 1,
    "b": ["0"], "sigma": [["0"]], "h": ["0"],
    "f": "0", "phi": "x",
    "G": [[1.0]],
    "constants": {"K": 1.0, "L": 1.0, "L_sigma": 0.0, "L_h": [0.0], "C_h": 0.0},
    "mark_space": _SINGLE_ATOM,
    "claims": ["sigma_growth_xy", "h_growth_xy"],
    "zeta": [1.5],
    "zeta_box": [[0.5, 2.5]],
}

T1 = {
    "name": "T1",
    "n": 1, "d": 1,
    "b": ["0"], "sigma": [["0"]], "h": ["e"],
    "f": "0", "phi": "x",
    "G": [[1.0]],
    "constants": {"K": 1.0, "L": 1.0, "L_sigma": 0.0, "L_h": [0.0], "C_h": 0.0},
    "mark_space": _SINGLE_ATOM,
    "claims": ["sigma_growth_xy", "h_growth_xy"],
    "zeta": [1.5],
    "zeta_box": [[0.5, 2.5]],
}

T2 = {
    "name": "T2",
    "n": 1, "d": 1,
    "b": ["0"], "sigma": [["1"]], "h": ["0"],
    "f": "0", "phi": "x",
    "G": [[1.0]],
    "constants": {"K": 1.0, "L": 1.0, "L_sigma": 0.0, "L_h": [0.0], "C_h": 0.0},
    "mark_space": _SINGLE_ATOM,
    "claims": ["sigma_growth_xy", "h_growth_xy"],
    "zeta": [1.5],
    "zeta_box": [[0.5, 2.5]],
}

T3 = {
    "name": "T3",
    "n": 1, "d": 1,
    "b": ["-y"], "sigma": [["1 + 0.05*z"]], "h": ["0.1*cap1(e)*x"],
    "f": "-0.5*y + q", "phi": "x",
    "G": [[1.0]],
    "constants": {"K": 1.0, "L": 2.0, "L_sigma": 0.05, "L_h": [0.0, 0.0], "C_h": 0.0},
    "mark_space": _PAIR_ATOMS,
    "claims": ["h_growth_xy"],
    "zeta": [1.5],
    "zeta_box": [[0.5, 2.5]],
}

REGISTRY = {"T0": T0, "T1": T1, "T2": T2, "T3": T3}


def preset_dict(alias: str) -> dict:
    """Deep copy of a builtin model document, safe to edit."""
    return copy.deepcopy(REGISTRY[alias])


def get(alias: str) -> tuple[CoefficientSet, MarkSpace]:
    if alias not in REGISTRY:
        raise KeyError(f"unknown builtin model {alias!r}; have {sorted(REGISTRY)}")
    return model_from_dict(REGISTRY[alias])
