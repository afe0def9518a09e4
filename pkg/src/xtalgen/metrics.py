"""Evaluation suite: validity, structure matching, fingerprints,
coverage, and 1-D earth mover's distances over property distributions.

Structure fingerprints are smeared radial-distribution histograms and
composition fingerprints are element-property statistics; both are
invariant to rotation, translation, permutation, and choice of periodic
image by construction. Coverage thresholds are therefore specific to
these fingerprints and should be calibrated against a reference
dataset (see the calibrate-thresholds CLI subcommand).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (
    Composition,
    Crystal,
    LatticeParams,
    lattice_params,
    min_image_displacements,
    params_to_lattice,
    reduce_crystal,
    wrap_to_cell,
)
from .elements import AMU_PER_A3_TO_G_PER_CM3, element, known_z

__all__ = [
    "MIN_PAIR_DISTANCE",
    "ValidityReport",
    "structure_validity",
    "CompositionValidity",
    "composition_validity",
    "validity_report",
    "MatchResult",
    "structure_match",
    "fingerprint_structure",
    "fingerprint_composition",
    "structure_distance",
    "composition_distance",
    "CoverageReport",
    "coverage",
    "coverage_from_distances",
    "emd_1d",
    "density",
    "num_elements",
    "PropertyStats",
    "property_stats",
]

# a structure is valid iff its shortest interatomic distance exceeds this
MIN_PAIR_DISTANCE = 0.5  # angstrom

MAX_CHARGE_ENUMERATION = 10_000_000

RDF_CUTOFF = 8.0     # angstrom
RDF_SMEAR = 0.15     # gaussian smearing width
RDF_BIN_WIDTH = 0.1


# --- validity ----------------------------------------------------------------


@dataclass(frozen=True)
class CompositionValidity:
    """Charge-neutrality verdict; ``valid`` is None when enumeration was
    capped and the answer is indeterminate."""

    valid: bool | None
    assignment: dict[int, int] | None  # per-element oxidation state witness
    alloy: bool = False                # accepted via the all-metal rule

    def __bool__(self):
        return self.valid is True


@dataclass(frozen=True)
class ValidityReport:
    struct_valid: bool
    min_pair_distance: float
    comp_valid: bool
    comp_indeterminate: bool = False
    neutral_assignment: dict[int, int] | None = None


def min_pair_distance(crystal: Crystal) -> float:
    """Shortest interatomic distance over all atom pairs and periodic
    images; for a single atom this is the nearest self-image."""
    reduced = reduce_crystal(crystal)
    shortest_vector = float(reduced.lattice.lengths.min())
    best = shortest_vector
    frac = reduced.frac_coords
    n = reduced.n_atoms
    for i in range(n - 1):
        d = min_image_displacements(
            reduced.lattice,
            np.repeat(frac[i][None, :], n - 1 - i, axis=0),
            frac[i + 1 :],
        )
        best = min(best, float(np.linalg.norm(d, axis=1).min()))
    return best


def structure_validity(crystal: Crystal) -> tuple[bool, float]:
    """(valid, shortest pair distance); valid iff the distance is
    strictly larger than 0.5 angstrom."""
    d = min_pair_distance(crystal)
    return d > MIN_PAIR_DISTANCE, d


def composition_validity(counts: dict[int, int]) -> CompositionValidity:
    """Charge neutrality by enumerating one oxidation state per element
    from the embedded table; compositions made of metals only are always
    accepted (alloy rule). Enumeration beyond the cap yields an
    indeterminate verdict instead of a guess."""
    if not counts:
        raise ValueError("composition must contain at least one element")
    items = sorted((int(z), int(c)) for z, c in counts.items())
    if any(c < 1 for _, c in items):
        raise ValueError("element counts must be >= 1")
    elems = [element(z) for z, _ in items]

    if all(el.is_metal for el in elems):
        return CompositionValidity(valid=True, assignment=None, alloy=True)

    state_lists = [el.oxidation_states for el in elems]
    if any(len(s) == 0 for s in state_lists):
        return CompositionValidity(valid=False, assignment=None)
    total = 1
    for s in state_lists:
        total *= len(s)
        if total > MAX_CHARGE_ENUMERATION:
            return CompositionValidity(valid=None, assignment=None)
    amounts = np.array([c for _, c in items])
    for combo in itertools.product(*state_lists):
        if int(np.dot(amounts, combo)) == 0:
            assignment = {z: q for (z, _), q in zip(items, combo)}
            return CompositionValidity(valid=True, assignment=assignment)
    return CompositionValidity(valid=False, assignment=None)


def validity_report(crystal: Crystal) -> ValidityReport:
    struct_valid, dmin = structure_validity(crystal)
    z, counts = np.unique(crystal.types, return_counts=True)
    comp = composition_validity({int(a): int(b) for a, b in zip(z, counts)})
    return ValidityReport(
        struct_valid=struct_valid,
        min_pair_distance=dmin,
        comp_valid=comp.valid is True,
        comp_indeterminate=comp.valid is None,
        neutral_assignment=comp.assignment,
    )


# --- structure matching ------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    rmse_normalized: float | None = None


def _composition_counts(crystal: Crystal) -> dict[int, int]:
    z, counts = np.unique(crystal.types, return_counts=True)
    return {int(a): int(b) for a, b in zip(z, counts)}


def structure_match(
    a: Crystal,
    b: Crystal,
    stol: float = 0.5,
    angle_tol: float = 10.0,
    ltol: float = 0.3,
) -> MatchResult:
    """Invariance-aware structure comparison.

    Both crystals are Niggli-reduced; they match only if their integer
    compositions are identical, their reduced cell lengths agree within
    relative ltol and angles within angle_tol degrees, and some rigid
    fractional translation (anchored on atoms of the least frequent
    species) plus optimal per-species assignment brings every site
    within stol * cbrt(V/N) of its partner under the minimum image
    convention. The normalized RMS site displacement is reported for
    matches. Symmetric in its arguments.
    """
    ra, rb = reduce_crystal(a), reduce_crystal(b)
    counts = _composition_counts(ra)
    if counts != _composition_counts(rb):
        return MatchResult(matched=False)

    pa, pb = lattice_params(ra.lattice), lattice_params(rb.lattice)
    for la, lb in zip((pa.a, pa.b, pa.c), (pb.a, pb.b, pb.c)):
        if abs(la - lb) > ltol * 0.5 * (la + lb):
            return MatchResult(matched=False)
    for ga, gb in zip(
        (pa.alpha, pa.beta, pa.gamma), (pb.alpha, pb.beta, pb.gamma)
    ):
        if abs(ga - gb) > angle_tol:
            return MatchResult(matched=False)

    mean_params = [
        0.5 * (x + y) for x, y in zip(pa.as_tuple(), pb.as_tuple())
    ]
    avg_lattice = params_to_lattice(LatticeParams(*mean_params))
    n = ra.n_atoms
    scale = float(np.cbrt(avg_lattice.volume / n))

    anchor_species = min(counts, key=lambda z: (counts[z], z))
    anchor_a = int(np.nonzero(ra.types == anchor_species)[0][0])
    species_idx_a = {z: np.nonzero(ra.types == z)[0] for z in counts}
    species_idx_b = {z: np.nonzero(rb.types == z)[0] for z in counts}

    best: tuple[float, float] | None = None
    for idx_b in np.nonzero(rb.types == anchor_species)[0]:
        tau = rb.frac_coords[idx_b] - ra.frac_coords[anchor_a]
        shifted_b = wrap_to_cell(rb.frac_coords - tau)
        sq_disp = np.empty(n)
        pos = 0
        for z in counts:
            ia, ib = species_idx_a[z], species_idx_b[z]
            cost = np.empty((ia.size, ib.size))
            for row, i in enumerate(ia):
                d = min_image_displacements(
                    avg_lattice,
                    np.repeat(ra.frac_coords[i][None, :], ib.size, axis=0),
                    shifted_b[ib],
                )
                cost[row] = np.einsum("kj,kj->k", d, d)
            rows, cols = linear_sum_assignment(cost)
            sq_disp[pos : pos + ia.size] = cost[rows, cols]
            pos += ia.size
        cand = (float(np.sqrt(sq_disp.max())), float(np.sqrt(sq_disp.mean())))
        if best is None or cand < best:
            best = cand

    max_disp, rms = best
    if max_disp < stol * scale:
        return MatchResult(matched=True, rmse_normalized=rms / scale)
    return MatchResult(matched=False)


# --- fingerprints ------------------------------------------------------------


def _rdf_image_offsets(rows: np.ndarray, cutoff: float) -> np.ndarray:
    vol = abs(np.linalg.det(rows))
    cross = np.array(
        [
            np.cross(rows[1], rows[2]),
            np.cross(rows[2], rows[0]),
            np.cross(rows[0], rows[1]),
        ]
    )
    spacing = vol / np.linalg.norm(cross, axis=1)
    bounds = np.floor(1.0 + cutoff / spacing).astype(int)
    ranges = [range(-int(b), int(b) + 1) for b in bounds]
    return np.array(sorted(itertools.product(*ranges)), dtype=float)


def fingerprint_structure(crystal: Crystal) -> np.ndarray:
    """Smeared radial distribution histogram.

    All interatomic distances up to 8 angstrom (across periodic images)
    are accumulated into 0.1-angstrom bins with gaussian smearing of
    width 0.15, then normalized per atom and by number density so the
    vector is intensive.
    """
    rows = crystal.lattice.rows
    frac = crystal.frac_coords
    n = crystal.n_atoms
    offsets = _rdf_image_offsets(rows, RDF_CUTOFF)
    self_image = int(np.argwhere((offsets == 0).all(axis=1))[0, 0])

    dists = []
    for i in range(n):
        disp = (frac[None, :, :] + offsets[:, None, :] - frac[i][None, None, :]) @ rows
        dist = np.linalg.norm(disp, axis=-1).reshape(-1)  # index = t * n + j
        dist[self_image * n + i] = np.inf
        dists.append(dist[dist <= RDF_CUTOFF])
    all_d = np.concatenate(dists)

    centers = (np.arange(int(round(RDF_CUTOFF / RDF_BIN_WIDTH))) + 0.5) * RDF_BIN_WIDTH
    norm = RDF_BIN_WIDTH / (RDF_SMEAR * math.sqrt(2.0 * math.pi))
    hist = norm * np.exp(
        -((centers[:, None] - all_d[None, :]) ** 2) / (2.0 * RDF_SMEAR**2)
    ).sum(axis=1)
    number_density = n / crystal.volume
    return hist / (n * number_density)


@lru_cache(maxsize=1)
def _element_property_table():
    """(zs, property matrix, per-column mean/std over the whole table);
    columns: z, mass, covalent radius, electronegativity, row, group."""
    zs = known_z()
    mat = np.array(
        [
            [
                el.z,
                el.mass,
                el.covalent_radius,
                np.nan if el.electronegativity is None else el.electronegativity,
                el.row,
                el.group,
            ]
            for el in (element(z) for z in zs)
        ]
    )
    mean = np.nanmean(mat, axis=0)
    std = np.nanstd(mat, axis=0)
    # elements with undefined electronegativity sit at the table mean
    nan_rows = np.isnan(mat[:, 3])
    mat[nan_rows, 3] = mean[3]
    return dict(zip(zs, mat)), mean, std


def fingerprint_composition(composition: Composition) -> np.ndarray:
    """Fraction-weighted mean and standard deviation of standardized
    element properties (atomic number, mass, covalent radius,
    electronegativity, row, group)."""
    table, mean, std = _element_property_table()
    species = composition.species
    for z in species:
        if int(z) not in table:
            element(int(z))  # raises UnknownElementError with the culprit
    props = np.array([table[int(z)] for z in species])
    w = composition.weights
    standardized = (props - mean) / std
    mu = w @ standardized
    var = w @ (standardized - mu) ** 2
    return np.concatenate([mu, np.sqrt(np.maximum(var, 0.0))])


def structure_distance(a: Crystal, b: Crystal) -> float:
    return float(np.linalg.norm(fingerprint_structure(a) - fingerprint_structure(b)))


def composition_distance(a: Composition, b: Composition) -> float:
    return float(
        np.linalg.norm(fingerprint_composition(a) - fingerprint_composition(b))
    )


# --- coverage ----------------------------------------------------------------


@dataclass(frozen=True)
class CoverageReport:
    cov_r: float   # percent
    cov_p: float
    amsd_r: float
    amsd_p: float
    amcd_r: float
    amcd_p: float


def coverage_from_distances(
    d_struc: np.ndarray,
    d_comp: np.ndarray,
    delta_struc: float,
    delta_comp: float,
) -> CoverageReport:
    """Coverage from precomputed distance matrices with generated items
    on axis 0 and ground-truth items on axis 1."""
    d_struc = np.asarray(d_struc, dtype=float)
    d_comp = np.asarray(d_comp, dtype=float)
    if d_struc.shape != d_comp.shape or d_struc.ndim != 2 or 0 in d_struc.shape:
        raise ValueError("need matching non-empty (generated x truth) matrices")
    close = (d_struc < delta_struc) & (d_comp < delta_comp)
    return CoverageReport(
        cov_r=100.0 * float(close.any(axis=0).mean()),
        cov_p=100.0 * float(close.any(axis=1).mean()),
        amsd_r=float(d_struc.min(axis=0).mean()),
        amsd_p=float(d_struc.min(axis=1).mean()),
        amcd_r=float(d_comp.min(axis=0).mean()),
        amcd_p=float(d_comp.min(axis=1).mean()),
    )


def coverage(
    generated,
    ground_truth,
    delta_struc: float,
    delta_comp: float,
) -> CoverageReport:
    """Recall/precision coverage between two crystal sets. A ground
    truth item is covered when some generated item is within both the
    structure and the composition fingerprint thresholds; precision
    metrics swap the roles."""
    generated = list(generated)
    ground_truth = list(ground_truth)
    if not generated or not ground_truth:
        raise ValueError("both crystal sets must be non-empty")
    fs_gen = np.array([fingerprint_structure(c) for c in generated])
    fs_gt = np.array([fingerprint_structure(c) for c in ground_truth])
    fc_gen = np.array([fingerprint_composition(c.composition()) for c in generated])
    fc_gt = np.array([fingerprint_composition(c.composition()) for c in ground_truth])
    d_struc = np.linalg.norm(fs_gen[:, None, :] - fs_gt[None, :, :], axis=-1)
    d_comp = np.linalg.norm(fc_gen[:, None, :] - fc_gt[None, :, :], axis=-1)
    return coverage_from_distances(d_struc, d_comp, delta_struc, delta_comp)


def nearest_neighbor_percentile(values: np.ndarray, percentile: float) -> float:
    """Percentile of within-set nearest-neighbor fingerprint distances;
    used to calibrate coverage thresholds on a reference set."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValueError("need at least two fingerprints")
    d = np.linalg.norm(values[:, None, :] - values[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(np.percentile(d.min(axis=1), percentile))


# --- property statistics -----------------------------------------------------


def emd_1d(samples_a, samples_b) -> float:
    """Exact 1-D earth mover's (Wasserstein-1) distance between two
    empirical distributions; sizes may differ."""
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both sample sets must be non-empty")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    pooled = np.sort(np.concatenate([a, b]))
    gaps = np.diff(pooled)
    cdf_a = np.searchsorted(a, pooled[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, pooled[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * gaps))


def density(crystal: Crystal) -> float:
    """Mass density in g/cm^3 from the embedded atomic mass table."""
    total_mass = float(crystal.masses().sum())
    return total_mass / crystal.volume * AMU_PER_A3_TO_G_PER_CM3


def num_elements(crystal: Crystal) -> int:
    """Count of distinct elements present."""
    return int(np.unique(crystal.types).size)


@dataclass(frozen=True)
class PropertyStats:
    emd_density: float
    emd_num_elems: float
    emd_custom: dict[str, float] | None = None


def property_stats(
    generated,
    reference,
    custom: dict[str, tuple[np.ndarray, np.ndarray]] | None = None,
) -> PropertyStats:
    """EMDs between property distributions of two crystal sets; custom
    per-crystal scalars (e.g. a precomputed energy column) are passed as
    name -> (generated values, reference values)."""
    generated = list(generated)
    reference = list(reference)
    emd_custom = None
    if custom:
        emd_custom = {name: emd_1d(g, r) for name, (g, r) in sorted(custom.items())}
    return PropertyStats(
        emd_density=emd_1d(
            [density(c) for c in generated], [density(c) for c in reference]
        ),
        emd_num_elems=emd_1d(
            [num_elements(c) for c in generated], [num_elements(c) for c in reference]
        ),
        emd_custom=emd_custom,
    )
