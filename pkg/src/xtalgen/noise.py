"""Noise model: geometric schedules, type/coordinate perturbation,
minimum-image score targets, and the Monte-Carlo denoising loss.

Coordinate noise is Gaussian in Cartesian space (then converted to
fractional and wrapped); type noise resamples each atom from a mixture
of its true type and the composition. Score targets point from the
noisy position back to the reference under the minimum-image
convention, so they are invariant to the periodic image either
structure happens to be expressed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Composition, Crystal, min_image_displacements, wrap_to_cell
from .rng import make_rng

__all__ = [
    "NoiseSchedule",
    "TypeDistribution",
    "NoisyCrystal",
    "make_schedule",
    "perturb_coords",
    "perturb_types",
    "score_target",
    "denoising_loss",
    "DenoisingLossReport",
    "schedule_to_text",
    "schedule_from_text",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Paired descending geometric sequences of coordinate noise levels
    (angstrom) and type noise levels (dimensionless)."""

    sigma_x: np.ndarray
    sigma_a: np.ndarray

    def __post_init__(self):
        sx = np.asarray(self.sigma_x, dtype=float)
        sa = np.asarray(self.sigma_a, dtype=float)
        for name, s in (("sigma_x", sx), ("sigma_a", sa)):
            if s.ndim != 1 or s.size < 2:
                raise ValueError(f"{name} must hold at least two levels")
            if not np.all(s > 0):
                raise ValueError(f"{name} must be positive")
            if not np.all(np.diff(s) < 0):
                raise ValueError(f"{name} must be strictly descending")
            ratios = s[:-1] / s[1:]
            if np.any(np.abs(ratios - ratios[0]) > 1e-9 * ratios[0]):
                raise ValueError(f"{name} is not a geometric sequence")
        if sx.size != sa.size:
            raise ValueError("sigma_x and sigma_a must have equal length")
        sx, sa = sx.copy(), sa.copy()
        sx.flags.writeable = False
        sa.flags.writeable = False
        object.__setattr__(self, "sigma_x", sx)
        object.__setattr__(self, "sigma_a", sa)

    @property
    def num_levels(self) -> int:
        return int(self.sigma_x.size)

    def level(self, j: int) -> tuple[float, float]:
        """(sigma_a, sigma_x) for 0-based level index j."""
        return float(self.sigma_a[j]), float(self.sigma_x[j])


def make_geometric(sigma_max: float, sigma_min: float, num_levels: int) -> np.ndarray:
    if not sigma_max > sigma_min > 0:
        raise ValueError("need sigma_max > sigma_min > 0")
    if num_levels < 2:
        raise ValueError("need at least two levels")
    j = np.arange(num_levels, dtype=float)
    seq = sigma_max * (sigma_min / sigma_max) ** (j / (num_levels - 1))
    seq[0], seq[-1] = sigma_max, sigma_min  # pin endpoints exactly
    return seq


def make_schedule(
    sigma_x_max: float = 10.0,
    sigma_x_min: float = 0.01,
    num_levels: int = 50,
    sigma_a_max: float = 5.0,
    sigma_a_min: float = 0.01,
) -> NoiseSchedule:
    """Geometric schedule; defaults are the usual coordinate levels
    10 -> 0.01 and type levels 5 -> 0.01 over 50 levels."""
    return NoiseSchedule(
        sigma_x=make_geometric(sigma_x_max, sigma_x_min, num_levels),
        sigma_a=make_geometric(sigma_a_max, sigma_a_min, num_levels),
    )


def schedule_to_text(schedule: NoiseSchedule) -> str:
    sx, sa = schedule.sigma_x, schedule.sigma_a
    lines = [
        f"coord_sigma_max = {sx[0]:.12g}",
        f"coord_sigma_min = {sx[-1]:.12g}",
        f"type_sigma_max = {sa[0]:.12g}",
        f"type_sigma_min = {sa[-1]:.12g}",
        f"levels = {schedule.num_levels}",
    ]
    return "\n".join(lines) + "\n"


def schedule_from_text(text: str) -> NoiseSchedule:
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"schedule config line {lineno}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        fields[key] = val
    try:
        return make_schedule(
            sigma_x_max=float(fields["coord_sigma_max"]),
            sigma_x_min=float(fields["coord_sigma_min"]),
            num_levels=int(fields["levels"]),
            sigma_a_max=float(fields["type_sigma_max"]),
            sigma_a_min=float(fields["type_sigma_min"]),
        )
    except KeyError as exc:
        raise ValueError(f"schedule config missing key {exc.args[0]!r}") from None


@dataclass(frozen=True)
class TypeDistribution:
    """Row-stochastic per-atom distribution over a species support."""

    species: np.ndarray  # (S,) atomic numbers, ascending
    probs: np.ndarray    # (N, S)

    def __post_init__(self):
        species = np.asarray(self.species, dtype=int)
        probs = np.asarray(self.probs, dtype=float)
        if species.ndim != 1 or np.any(np.diff(species) <= 0):
            raise ValueError("species must be strictly ascending atomic numbers")
        if probs.ndim != 2 or probs.shape[1] != species.size:
            raise ValueError("probs must be (n_atoms, n_species)")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("rows must be non-negative and sum to 1")
        species = species.copy()
        probs = probs.copy()
        species.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def one_hot(cls, types) -> "TypeDistribution":
        types = np.asarray(types, dtype=int)
        species = np.unique(types)
        probs = (types[:, None] == species[None, :]).astype(float)
        return cls(species, probs)

    def prob_of(self, types) -> np.ndarray:
        """Per-atom probability assigned to the given types (0 outside
        the support)."""
        types = np.asarray(types, dtype=int)
        out = np.zeros(types.size)
        pos = np.searchsorted(self.species, types)
        inside = (pos < self.species.size) & (self.species[np.minimum(pos, self.species.size - 1)] == types)
        out[inside] = self.probs[np.nonzero(inside)[0], pos[inside]]
        return out


@dataclass(frozen=True)
class NoisyCrystal:
    """A perturbed copy of a reference crystal at one noise level."""

    crystal: Crystal
    level: int
    reference: Crystal

    def __post_init__(self):
        if self.crystal.n_atoms != self.reference.n_atoms:
            raise ValueError("noisy and reference crystal must have equal N")
        if self.crystal.lattice != self.reference.lattice:
            raise ValueError("noise model keeps the lattice fixed")


def perturb_coords(
    crystal: Crystal, sigma_x: float, rng: np.random.Generator, level: int = 0
) -> NoisyCrystal:
    """Add isotropic Cartesian Gaussian noise of std sigma_x to every
    atom, wrap back into the cell."""
    if sigma_x < 0:
        raise ValueError("sigma_x must be >= 0")
    noise_cart = sigma_x * rng.standard_normal((crystal.n_atoms, 3))
    frac = wrap_to_cell(crystal.frac_coords + noise_cart @ crystal.lattice.inv)
    return NoisyCrystal(
        crystal=Crystal(crystal.types, frac, crystal.lattice),
        level=level,
        reference=crystal,
    )


def perturb_types(
    true_types,
    composition: Composition,
    sigma_a: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Resample each atom type from the mixture
    1/(1+sigma_a) * one_hot(true) + sigma_a/(1+sigma_a) * composition."""
    if sigma_a < 0:
        raise ValueError("sigma_a must be >= 0")
    true_types = np.asarray(true_types, dtype=int)
    n = true_types.size
    keep_prob = 1.0 / (1.0 + sigma_a)
    # draw both branches unconditionally so stream consumption is fixed
    keep = rng.random(n) < keep_prob
    from_comp = composition.sample(n, rng)
    return np.where(keep, true_types, from_comp)


def perturb_crystal(
    crystal: Crystal,
    composition: Composition,
    sigma_a: float,
    sigma_x: float,
    rng: np.random.Generator,
    level: int = 0,
) -> NoisyCrystal:
    """Perturb both types and coordinates of one crystal."""
    types = perturb_types(crystal.types, composition, sigma_a, rng)
    noisy = perturb_coords(crystal, sigma_x, rng, level=level)
    return NoisyCrystal(
        crystal=noisy.crystal.replace_types(types),
        level=level,
        reference=crystal,
    )


def score_target(reference: Crystal, noisy: NoisyCrystal | Crystal, sigma_x: float) -> np.ndarray:
    """Per-atom regression target: minimum-image displacement from the
    noisy position back to the reference, divided by sigma_x."""
    noisy_crystal = noisy.crystal if isinstance(noisy, NoisyCrystal) else noisy
    if noisy_crystal.n_atoms != reference.n_atoms:
        raise ValueError("reference and noisy crystal must have equal N")
    if sigma_x <= 0:
        raise ValueError("sigma_x must be > 0")
    d = min_image_displacements(
        reference.lattice, noisy_crystal.frac_coords, reference.frac_coords
    )
    return d / sigma_x


@dataclass(frozen=True)
class DenoisingLossReport:
    total: float
    coord_term: float
    type_term: float
    per_level_coord: np.ndarray
    per_level_type: np.ndarray

    def __float__(self):
        return self.total


def denoising_loss(
    score_field,
    dataset,
    schedule: NoiseSchedule,
    lambda_a: float,
    seed: int,
    samples_per_level: int = 32,
    levels=None,
) -> DenoisingLossReport:
    """Monte-Carlo estimate of the denoising loss.

    For every level j the field is queried on freshly perturbed copies
    of each dataset crystal; the coordinate residual compares the
    field's (unscaled) output against the minimum-image target
    d_min / sigma_x_j, and the type term is the cross entropy of the
    predicted type distribution against the true types, weighted by
    lambda_a / sigma_a_j. The result averages over 2L as in the
    score-matching objective and is deterministic given the seed.

    The field returns noise-conditioned scores (see ScoreField); they
    are multiplied back by sigma_x_j to recover the unscaled output the
    loss is defined on.
    """
    if lambda_a < 0:
        raise ValueError("lambda_a must be >= 0")
    if samples_per_level < 1:
        raise ValueError("samples_per_level must be >= 1")
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must be non-empty")
    level_idx = list(range(schedule.num_levels)) if levels is None else [int(j) for j in levels]

    coord_level_means = []
    type_level_means = []
    for j in level_idx:
        sigma_a, sigma_x = schedule.level(j)
        rng = make_rng(seed, stream=j + 1)
        coord_sum = 0.0
        type_sum = 0.0
        count = 0
        for crystal in dataset:
            comp = crystal.composition()
            for _ in range(samples_per_level):
                noisy = perturb_crystal(crystal, comp, sigma_a, sigma_x, rng, level=j)
                scores, type_probs = score_field.score(noisy.crystal, (sigma_a, sigma_x))
                unscaled = np.asarray(scores) * sigma_x
                target = score_target(crystal, noisy, sigma_x)
                coord_sum += float(np.sum((unscaled - target) ** 2))
                if lambda_a > 0:
                    p_true = type_probs.prob_of(crystal.types)
                    with np.errstate(divide="ignore"):
                        type_sum += float(np.sum(-np.log(p_true)))
                count += 1
        coord_level_means.append(coord_sum / count)
        type_level_means.append((lambda_a / sigma_a) * type_sum / count)

    per_coord = np.array(coord_level_means)
    per_type = np.array(type_level_means)
    norm = 2.0 * len(level_idx)
    coord_term = float(per_coord.sum() / norm)
    type_term = float(per_type.sum() / norm)
    return DenoisingLossReport(
        total=coord_term + type_term,
        coord_term=coord_term,
        type_term=type_term,
        per_level_coord=per_coord,
        per_level_type=per_type,
    )
