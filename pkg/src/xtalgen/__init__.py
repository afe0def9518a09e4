"""xtalgen: periodic-crystal representation, noise models, annealed
Langevin generation over analytic score fields, and evaluation metrics."""

__version__ = "0.1.0"

from .core import (
    Composition,
    Crystal,
    Lattice,
    LatticeParams,
    frac_to_cart,
    lattice_params,
    min_image_displacement,
    min_image_displacements,
    niggli_reduce,
    normalized_length_scale,
    params_to_lattice,
    reduce_crystal,
    wrap_to_cell,
)
from .graph import PeriodicEdge, PeriodicGraph, graph_distance_multiset, knn_graph
from .metrics import (
    CoverageReport,
    MatchResult,
    PropertyStats,
    ValidityReport,
    composition_validity,
    coverage,
    density,
    emd_1d,
    fingerprint_composition,
    fingerprint_structure,
    num_elements,
    property_stats,
    structure_match,
    structure_validity,
    validity_report,
)
from .noise import (
    NoiseSchedule,
    NoisyCrystal,
    TypeDistribution,
    denoising_loss,
    make_schedule,
    perturb_coords,
    perturb_types,
    score_target,
)
from .rng import make_rng
from .sampler import (
    AnnealResult,
    HarmonicOracle,
    SamplerConfig,
    ScoreField,
    SoftSphereField,
    anneal_sample,
    harmonic_equivalence_check,
    init_structure,
    soft_sphere_scores,
)

__all__ = [
    "__version__",
    # core
    "Composition",
    "Crystal",
    "Lattice",
    "LatticeParams",
    "frac_to_cart",
    "lattice_params",
    "min_image_displacement",
    "min_image_displacements",
    "niggli_reduce",
    "normalized_length_scale",
    "params_to_lattice",
    "reduce_crystal",
    "wrap_to_cell",
    # graph
    "PeriodicEdge",
    "PeriodicGraph",
    "graph_distance_multiset",
    "knn_graph",
    # noise
    "NoiseSchedule",
    "NoisyCrystal",
    "TypeDistribution",
    "denoising_loss",
    "make_schedule",
    "perturb_coords",
    "perturb_types",
    "score_target",
    # sampler
    "AnnealResult",
    "HarmonicOracle",
    "SamplerConfig",
    "ScoreField",
    "SoftSphereField",
    "anneal_sample",
    "harmonic_equivalence_check",
    "init_structure",
    "soft_sphere_scores",
    # metrics
    "CoverageReport",
    "MatchResult",
    "PropertyStats",
    "ValidityReport",
    "composition_validity",
    "coverage",
    "density",
    "emd_1d",
    "fingerprint_composition",
    "fingerprint_structure",
    "num_elements",
    "property_stats",
    "structure_match",
    "structure_validity",
    "validity_report",
    # rng
    "make_rng",
]
