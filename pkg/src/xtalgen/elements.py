"""Embedded element data: symbols, masses, radii, electronegativities,
oxidation states, and metal classification.

The table ships as ``data/elements.json`` inside the package (sources
recorded in the README). Setting the environment variable
``XTALGEN_DATA_DIR`` to a directory containing an ``elements.json``
overrides the embedded table.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

ENV_DATA_DIR = "XTALGEN_DATA_DIR"

# grams per (amu / cubic angstrom)
AMU_PER_A3_TO_G_PER_CM3 = 1.66053906660


class UnknownElementError(KeyError):
    """An atomic number or symbol outside the embedded data table."""


@dataclass(frozen=True)
class ElementData:
    z: int
    symbol: str
    mass: float                    # amu
    covalent_radius: float         # angstrom
    electronegativity: float | None  # Pauling scale; None where undefined
    oxidation_states: tuple[int, ...]
    is_metal: bool
    row: int
    group: int


def _load_table() -> dict:
    override = os.environ.get(ENV_DATA_DIR)
    if override:
        path = os.path.join(override, "elements.json")
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    with resources.files(__package__).joinpath("data/elements.json").open(
        "r", encoding="utf-8"
    ) as fh:
        return json.load(fh)


@lru_cache(maxsize=1)
def _by_z() -> dict[int, ElementData]:
    table = {}
    for rec in _load_table()["elements"]:
        el = ElementData(
            z=rec["z"],
            symbol=rec["symbol"],
            mass=rec["mass"],
            covalent_radius=rec["covalent_radius"],
            electronegativity=rec["electronegativity"],
            oxidation_states=tuple(rec["oxidation_states"]),
            is_metal=rec["is_metal"],
            row=rec["row"],
            group=rec["group"],
        )
        table[el.z] = el
    return table


@lru_cache(maxsize=1)
def _by_symbol() -> dict[str, ElementData]:
    return {el.symbol: el for el in _by_z().values()}


def element(z: int) -> ElementData:
    """Look up element data by atomic number."""
    try:
        return _by_z()[int(z)]
    except KeyError:
        raise UnknownElementError(f"no data for atomic number {z}") from None


def element_from_symbol(symbol: str) -> ElementData:
    try:
        return _by_symbol()[symbol]
    except KeyError:
        raise UnknownElementError(f"unknown element symbol {symbol!r}") from None


def symbol_of(z: int) -> str:
    return element(z).symbol


def atomic_mass(z: int) -> float:
    return element(z).mass


def known_z() -> tuple[int, ...]:
    return tuple(sorted(_by_z()))
