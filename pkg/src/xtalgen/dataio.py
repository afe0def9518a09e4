"""Dataset ingestion and run configuration.

Datasets are JSON-lines files, one record per line:

    {"id": "mp-1", "lattice": [[...3x3...]] or [a,b,c,alpha,beta,gamma],
     "species": ["Na", "Cl"], "frac_coords": [[...], ...],
     "properties": {"energy": -1.23}}

Serialization is canonical (sorted keys, floats quantized to 12
significant digits) so save(load(path)) reproduces the file byte for
byte. Run configuration is TOML; every CLI run writes a manifest with
the resolved-config hash, the seed, and the artifact version.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from . import __version__
from .core import Composition, Crystal, Lattice, LatticeParams, params_to_lattice
from .elements import element_from_symbol, symbol_of

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "CrystalRecord",
    "DatasetError",
    "load_dataset",
    "save_dataset",
    "RunConfig",
    "config_hash",
    "write_manifest",
    "atomic_write_text",
]


class DatasetError(ValueError):
    """Malformed dataset file; message carries line number and field."""


@dataclass(frozen=True)
class CrystalRecord:
    id: str
    crystal: Crystal
    properties: dict[str, float] | None = None


def _canonical(value):
    """Quantize floats to 12 significant digits, recursively."""
    if isinstance(value, bool):
        return value
    if isinstance(value, (float, np.floating)):
        return float(f"{float(value):.12g}")
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_canonical(v) for v in value]
    return value


def record_to_dict(record: CrystalRecord) -> dict:
    data = {
        "id": record.id,
        "lattice": record.crystal.lattice.rows.tolist(),
        "species": [symbol_of(int(z)) for z in record.crystal.types],
        "frac_coords": record.crystal.frac_coords.tolist(),
    }
    if record.properties is not None:
        data["properties"] = dict(record.properties)
    return _canonical(data)


def record_to_line(record: CrystalRecord) -> str:
    return json.dumps(record_to_dict(record), sort_keys=True, separators=(",", ":"))


def _lattice_from_field(value, lineno: int) -> Lattice:
    arr = np.asarray(value, dtype=float)
    if arr.shape == (3, 3):
        return Lattice(arr)
    if arr.shape == (6,):
        return params_to_lattice(LatticeParams(*arr))
    raise DatasetError(
        f"line {lineno}: field 'lattice' must be a 3x3 matrix or 6 parameters"
    )


def record_from_dict(data: dict, lineno: int = 0) -> CrystalRecord:
    for key in ("id", "lattice", "species", "frac_coords"):
        if key not in data:
            raise DatasetError(f"line {lineno}: missing field {key!r}")
    try:
        lattice = _lattice_from_field(data["lattice"], lineno)
    except (ValueError, TypeError) as exc:
        raise DatasetError(f"line {lineno}: field 'lattice': {exc}") from None
    try:
        types = [element_from_symbol(s).z for s in data["species"]]
    except KeyError as exc:
        raise DatasetError(
            f"line {lineno}: field 'species': {exc.args[0]}"
        ) from None
    coords = np.asarray(data["frac_coords"], dtype=float)
    if coords.ndim != 2 or coords.shape != (len(types), 3):
        raise DatasetError(
            f"line {lineno}: field 'frac_coords' must be N x 3 for N species"
        )
    if not np.all(np.isfinite(coords)):
        raise DatasetError(f"line {lineno}: field 'frac_coords' must be finite")
    if np.any(coords < 0.0) or np.any(coords >= 1.0):
        warnings.warn(
            f"record {data['id']!r} (line {lineno}): fractional coordinates "
            "outside [0, 1) were wrapped into the cell",
            stacklevel=2,
        )
    try:
        crystal = Crystal(types, coords, lattice)
    except ValueError as exc:
        raise DatasetError(f"line {lineno}: {exc}") from None
    props = data.get("properties")
    if props is not None:
        if not isinstance(props, dict):
            raise DatasetError(f"line {lineno}: field 'properties' must be a mapping")
        props = {str(k): float(v) for k, v in props.items()}
    return CrystalRecord(id=str(data["id"]), crystal=crystal, properties=props)


def load_dataset(path) -> list[CrystalRecord]:
    """Parse and validate a JSON-lines dataset; failures report the
    offending line."""
    records: list[CrystalRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON: {exc}") from None
            rec = record_from_dict(data, lineno)
            if rec.id in seen:
                raise DatasetError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-xtalgen-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(records, path) -> None:
    """Canonical JSON-lines serialization; load(save(x)) == x."""
    text = "".join(record_to_line(rec) + "\n" for rec in records)
    atomic_write_text(path, text)


# --- run configuration -------------------------------------------------------


@dataclass(frozen=True)
class ScheduleConfig:
    coord_sigma_max: float = 10.0
    coord_sigma_min: float = 0.01
    type_sigma_max: float = 5.0
    type_sigma_min: float = 0.01
    levels: int = 50


@dataclass(frozen=True)
class SamplerSection:
    step_size_eps: float = 1e-4
    steps_per_level: int = 100
    seed: int = 0
    log_trajectory: bool = False


@dataclass(frozen=True)
class FieldSection:
    kind: str = "soft_sphere"  # or "harmonic"
    stiffness: float = 1.0
    radius_scale: float = 1.0
    cutoff: float | None = None


@dataclass(frozen=True)
class GenerationSection:
    count: int = 8
    n_atoms: int | None = None
    composition: dict[str, float] | None = None
    lattice: tuple[float, ...] | None = None  # 6 params
    reference: str | None = None              # dataset path for aggregates


@dataclass(frozen=True)
class MetricsSection:
    stol: float = 0.5
    angle_tol: float = 10.0
    ltol: float = 0.3
    delta_struc: float | None = None
    delta_comp: float | None = None
    threshold_percentile: float = 5.0


@dataclass(frozen=True)
class ReconstructSection:
    sigma_x: float = 0.5
    sigma_a: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleConfig = dc_field(default_factory=ScheduleConfig)
    sampler: SamplerSection = dc_field(default_factory=SamplerSection)
    field: FieldSection = dc_field(default_factory=FieldSection)
    generation: GenerationSection = dc_field(default_factory=GenerationSection)
    metrics: MetricsSection = dc_field(default_factory=MetricsSection)
    reconstruct: ReconstructSection = dc_field(default_factory=ReconstructSection)
    output_dir: str = "."

    def __post_init__(self):
        for name in ("stol", "angle_tol", "ltol"):
            if getattr(self.metrics, name) <= 0:
                raise ValueError(f"metrics.{name} must be positive")
        for name in ("delta_struc", "delta_comp"):
            value = getattr(self.metrics, name)
            if value is not None and value <= 0:
                raise ValueError(f"metrics.{name} must be positive")
        if self.generation.reference is not None and not os.path.exists(
            self.generation.reference
        ):
            raise ValueError(
                f"generation.reference does not exist: {self.generation.reference!r}"
            )
        if self.field.kind not in ("soft_sphere", "harmonic"):
            raise ValueError(f"unknown field kind {self.field.kind!r}")

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        def section(name, klass):
            data = dict(raw.get(name, {}))
            if name == "generation" and "lattice" in data and data["lattice"] is not None:
                data["lattice"] = tuple(float(x) for x in data["lattice"])
            unknown = set(data) - set(klass.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown keys in [{name}]: {sorted(unknown)}")
            return klass(**data)

        known = {"schedule", "sampler", "field", "generation", "metrics",
                 "reconstruct", "io"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        io_sec = raw.get("io", {})
        return cls(
            schedule=section("schedule", ScheduleConfig),
            sampler=section("sampler", SamplerSection),
            field=section("field", FieldSection),
            generation=section("generation", GenerationSection),
            metrics=section("metrics", MetricsSection),
            reconstruct=section("reconstruct", ReconstructSection),
            output_dir=str(io_sec.get("output_dir", ".")),
        )

    def resolved(self) -> dict:
        return _canonical(asdict(self))


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config.resolved(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def manifest_dict(command: str, config: RunConfig, seed: int) -> dict:
    return {
        "artifact_version": __version__,
        "command": command,
        "config_sha256": config_hash(config),
        "seed": int(seed),
        "schema_version": 1,
    }


def write_manifest(path, command: str, config: RunConfig, seed: int) -> None:
    text = json.dumps(manifest_dict(command, config, seed), sort_keys=True, indent=1)
    atomic_write_text(path, text + "\n")


def composition_from_symbols(table: dict[str, float]) -> Composition:
    fractions = {element_from_symbol(sym).z: float(f) for sym, f in table.items()}
    total = sum(fractions.values())
    return Composition({z: f / total for z, f in fractions.items()})
