"""Perturbative Monte Carlo solver for forward-backward SDEs."""

import json

from ._core import (
    ConfigError,
    OracleError,
    SimulationError,
    catalog_description,
    catalog_names,
    estimate,
    ode_coefficients,
    quadrature_v1,
    resolve_config,
    solve_pde,
)
from ._core import run as _run

__all__ = [
    "ConfigError",
    "OracleError",
    "SimulationError",
    "catalog",
    "catalog_description",
    "catalog_names",
    "estimate",
    "ode_coefficients",
    "quadrature_v1",
    "resolve_config",
    "run",
    "solve_pde",
]


def catalog():
    """Mapping of builtin model name to its description."""
    return {name: catalog_description(name) for name in catalog_names()}


def run(config, out_dir=""):
    """Run a configuration given as a dict or JSON text."""
    text = config if isinstance(config, str) else json.dumps(config)
    return _run(text, out_dir)
