"""Command-line interface.

Subcommands cover the full loop: perturb a dataset, sample new
structures with annealed Langevin dynamics, reconstruct a dataset
through the harmonic oracle, evaluate generated against reference
structures, calibrate coverage thresholds, and single-structure
utilities (niggli, graph, match). Every run writes a manifest (config
hash, seed, artifact version) and fails with machine-readable JSON on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .core import (
    LatticeParams,
    lattice_params,
    niggli_reduce,
    params_to_lattice,
    reduce_crystal,
)
from .dataio import (
    CrystalRecord,
    RunConfig,
    atomic_write_text,
    composition_from_symbols,
    load_dataset,
    manifest_dict,
    save_dataset,
    write_manifest,
)
from .graph import knn_graph
from .metrics import (
    coverage_from_distances,
    density,
    emd_1d,
    fingerprint_composition,
    fingerprint_structure,
    nearest_neighbor_percentile,
    num_elements,
    structure_match,
    validity_report,
)
from .noise import make_schedule, perturb_coords, perturb_types
from .rng import make_rng
from .sampler import (
    AnnealResult,
    HarmonicOracle,
    SamplerConfig,
    SoftSphereField,
    anneal_sample,
)


def _schedule_from_config(config: RunConfig):
    s = config.schedule
    return make_schedule(
        sigma_x_max=s.coord_sigma_max,
        sigma_x_min=s.coord_sigma_min,
        num_levels=s.levels,
        sigma_a_max=s.type_sigma_max,
        sigma_a_min=s.type_sigma_min,
    )


def _sampler_config(config: RunConfig, seed: int, log_trajectory: bool) -> SamplerConfig:
    return SamplerConfig(
        schedule=_schedule_from_config(config),
        step_size_eps=config.sampler.step_size_eps,
        steps_per_level=config.sampler.steps_per_level,
        seed=seed,
        log_trajectory=log_trajectory,
    )


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _write_trajectory_csv(path, runs: list[tuple[str, AnnealResult]]) -> None:
    lines = ["id,level,step,mean_score_norm,type_changes"]
    for run_id, result in runs:
        for rec in result.steps or ():
            lines.append(
                f"{run_id},{rec.level},{rec.step},{rec.mean_score_norm:.12g},"
                f"{rec.type_changes}"
            )
    atomic_write_text(path, "\n".join(lines) + "\n")


def _record_by_selector(records, index: int | None, record_id: str | None, flag: str):
    if record_id is not None:
        for rec in records:
            if rec.id == record_id:
                return rec
        raise ValueError(f"no record with id {record_id!r} ({flag})")
    idx = 0 if index is None else index
    if not 0 <= idx < len(records):
        raise ValueError(f"record index {idx} out of range ({flag})")
    return records[idx]


# --- subcommands -------------------------------------------------------------


def cmd_perturb(args) -> int:
    config = _load_config(args.config)
    records = load_dataset(args.dataset)
    schedule = _schedule_from_config(config)
    if args.level is not None:
        if not 1 <= args.level <= schedule.num_levels:
            raise ValueError(f"level must be in 1..{schedule.num_levels}")
        sigma_a, sigma_x = schedule.level(args.level - 1)
    else:
        sigma_a, sigma_x = args.sigma_a, args.sigma_x
    seed = args.seed if args.seed is not None else config.sampler.seed

    out_records = []
    for idx, rec in enumerate(records):
        rng = make_rng(seed, stream=idx)
        noisy = perturb_coords(rec.crystal, sigma_x, rng)
        crystal = noisy.crystal
        if sigma_a > 0:
            types = perturb_types(
                rec.crystal.types, rec.crystal.composition(), sigma_a, rng
            )
            crystal = crystal.replace_types(types)
        out_records.append(
            CrystalRecord(id=rec.id, crystal=crystal, properties=rec.properties)
        )
    save_dataset(out_records, args.out)
    write_manifest(args.out + ".manifest.json", "perturb", config, seed)
    return 0


def _resolve_aggregates(config: RunConfig, rng, reference_records):
    gen = config.generation
    if reference_records is not None:
        rec = reference_records[int(rng.integers(len(reference_records)))]
        crystal = rec.crystal
        composition = crystal.composition()
        lattice = params_to_lattice(lattice_params(niggli_reduce(crystal.lattice)))
        return composition, lattice, crystal.n_atoms, rec
    if gen.composition is None or gen.lattice is None or gen.n_atoms is None:
        raise ValueError(
            "generation needs either a reference dataset or literal "
            "composition, lattice, and n_atoms"
        )
    composition = composition_from_symbols(gen.composition)
    lattice = params_to_lattice(LatticeParams(*gen.lattice))
    return composition, lattice, int(gen.n_atoms), None


def cmd_sample(args) -> int:
    config = _load_config(args.config)
    gen = config.generation
    count = args.count if args.count is not None else gen.count
    seed = args.seed if args.seed is not None else config.sampler.seed
    reference_records = (
        load_dataset(gen.reference) if gen.reference is not None else None
    )
    log_traj = bool(args.trajectory) or config.sampler.log_trajectory

    runs = []
    out_records = []
    for i in range(count):
        rng = make_rng(seed, stream=i)
        composition, lattice, n_atoms, ref_rec = _resolve_aggregates(
            config, rng, reference_records
        )
        if config.field.kind == "harmonic":
            if ref_rec is None:
                raise ValueError("harmonic field sampling needs generation.reference")
            field = HarmonicOracle(ref_rec.crystal)
            lattice = ref_rec.crystal.lattice
        else:
            field = SoftSphereField(
                radii={
                    int(z): config.field.radius_scale
                    * SoftSphereField().radius_of(int(z))
                    for z in composition.species
                },
                stiffness=config.field.stiffness,
                cutoff=config.field.cutoff,
                composition=composition,
            )
        sampler_config = _sampler_config(config, seed, log_traj)
        result = anneal_sample(
            field, composition, lattice, n_atoms, sampler_config, rng=rng
        )
        out_records.append(CrystalRecord(id=f"gen-{i:05d}", crystal=result.crystal))
        runs.append((f"gen-{i:05d}", result))

    save_dataset(out_records, args.out)
    if args.trajectory:
        _write_trajectory_csv(args.trajectory, runs)
    write_manifest(args.out + ".manifest.json", "sample", config, seed)
    return 0


def cmd_reconstruct(args) -> int:
    config = _load_config(args.config)
    records = load_dataset(args.dataset)
    seed = args.seed if args.seed is not None else config.sampler.seed
    sigma_x = args.sigma_x if args.sigma_x is not None else config.reconstruct.sigma_x
    sigma_a = config.reconstruct.sigma_a
    m = config.metrics

    per_record = []
    rmses = []
    n_matched = 0
    for idx, rec in enumerate(records):
        rng = make_rng(seed, stream=idx)
        crystal = rec.crystal
        noisy = perturb_coords(crystal, sigma_x, rng).crystal
        if sigma_a > 0:
            noisy = noisy.replace_types(
                perturb_types(crystal.types, crystal.composition(), sigma_a, rng)
            )
        sampler_config = _sampler_config(config, seed, False)
        result = anneal_sample(
            HarmonicOracle(crystal),
            crystal.composition(),
            crystal.lattice,
            crystal.n_atoms,
            sampler_config,
            init=noisy,
            rng=rng,
        )
        match = structure_match(
            crystal, result.crystal, stol=m.stol, angle_tol=m.angle_tol, ltol=m.ltol
        )
        if match.matched:
            n_matched += 1
            rmses.append(match.rmse_normalized)
        per_record.append(
            {
                "id": rec.id,
                "matched": match.matched,
                "rmse_normalized": match.rmse_normalized,
            }
        )

    report = {
        "schema_version": 1,
        "n_records": len(records),
        "match_rate_percent": 100.0 * n_matched / len(records) if records else 0.0,
        "mean_rmse_normalized": float(np.mean(rmses)) if rmses else None,
        "sigma_x": sigma_x,
        "sigma_a": sigma_a,
        "per_record": per_record,
        "manifest": manifest_dict("reconstruct", config, seed),
    }
    atomic_write_text(args.out, json.dumps(report, sort_keys=True, indent=1) + "\n")
    write_manifest(args.out + ".manifest.json", "reconstruct", config, seed)
    return 0


def _thresholds(config: RunConfig, ref_struct_fp, ref_comp_fp):
    m = config.metrics
    calibrated = False
    delta_struc, delta_comp = m.delta_struc, m.delta_comp
    if delta_struc is None or delta_comp is None:
        pct = m.threshold_percentile
        if delta_struc is None:
            delta_struc = nearest_neighbor_percentile(ref_struct_fp, pct)
            calibrated = True
        if delta_comp is None:
            delta_comp = nearest_neighbor_percentile(ref_comp_fp, pct)
            calibrated = True
    return delta_struc, delta_comp, calibrated


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    generated = load_dataset(args.generated)
    reference = load_dataset(args.reference)
    if not generated or not reference:
        raise ValueError("both datasets must be non-empty")
    seed = config.sampler.seed

    reports = [validity_report(rec.crystal) for rec in generated]
    struct_ok = np.array([r.struct_valid for r in reports])
    comp_ok = np.array([r.comp_valid for r in reports])
    both_ok = struct_ok & comp_ok

    gen_struct_fp = np.array([fingerprint_structure(r.crystal) for r in generated])
    ref_struct_fp = np.array([fingerprint_structure(r.crystal) for r in reference])
    gen_comp_fp = np.array(
        [fingerprint_composition(r.crystal.composition()) for r in generated]
    )
    ref_comp_fp = np.array(
        [fingerprint_composition(r.crystal.composition()) for r in reference]
    )
    delta_struc, delta_comp, calibrated = _thresholds(
        config, ref_struct_fp, ref_comp_fp
    )
    d_struc = np.linalg.norm(
        gen_struct_fp[:, None, :] - ref_struct_fp[None, :, :], axis=-1
    )
    d_comp = np.linalg.norm(
        gen_comp_fp[:, None, :] - ref_comp_fp[None, :, :], axis=-1
    )
    cov = coverage_from_distances(d_struc, d_comp, delta_struc, delta_comp)

    valid_gen = [rec for rec, ok in zip(generated, both_ok) if ok]
    if valid_gen:
        emd = {
            "density": emd_1d(
                [density(r.crystal) for r in valid_gen],
                [density(r.crystal) for r in reference],
            ),
            "num_elements": emd_1d(
                [num_elements(r.crystal) for r in valid_gen],
                [num_elements(r.crystal) for r in reference],
            ),
        }
        for name in args.property or []:
            gen_vals = _property_column(valid_gen, name)
            ref_vals = _property_column(reference, name)
            emd[name] = emd_1d(gen_vals, ref_vals)
    else:
        emd = None

    report = {
        "schema_version": 1,
        "n_generated": len(generated),
        "n_reference": len(reference),
        "validity_percent": {
            "structural": 100.0 * float(struct_ok.mean()),
            "composition": 100.0 * float(comp_ok.mean()),
            "overall": 100.0 * float(both_ok.mean()),
            "composition_indeterminate_count": int(
                sum(r.comp_indeterminate for r in reports)
            ),
        },
        "coverage": {
            "cov_r_percent": cov.cov_r,
            "cov_p_percent": cov.cov_p,
            "amsd_r": cov.amsd_r,
            "amsd_p": cov.amsd_p,
            "amcd_r": cov.amcd_r,
            "amcd_p": cov.amcd_p,
            "delta_struc": delta_struc,
            "delta_comp": delta_comp,
            "thresholds_calibrated": calibrated,
        },
        "property_emd": emd,
        "n_valid_generated": int(both_ok.sum()),
        "manifest": manifest_dict("evaluate", config, seed),
    }
    atomic_write_text(args.out, json.dumps(report, sort_keys=True, indent=1) + "\n")
    write_manifest(args.out + ".manifest.json", "evaluate", config, seed)
    return 0


def _property_column(records, name: str) -> list[float]:
    values = []
    for rec in records:
        if not rec.properties or name not in rec.properties:
            raise ValueError(f"record {rec.id!r} lacks property {name!r}")
        values.append(rec.properties[name])
    return values


def cmd_calibrate(args) -> int:
    config = _load_config(args.config)
    reference = load_dataset(args.reference)
    if len(reference) < 2:
        raise ValueError("need at least two reference records to calibrate")
    pct = args.percentile
    struct_fp = np.array([fingerprint_structure(r.crystal) for r in reference])
    comp_fp = np.array(
        [fingerprint_composition(r.crystal.composition()) for r in reference]
    )
    out = {
        "schema_version": 1,
        "percentile": pct,
        "n_reference": len(reference),
        "delta_struc": nearest_neighbor_percentile(struct_fp, pct),
        "delta_comp": nearest_neighbor_percentile(comp_fp, pct),
        "manifest": manifest_dict("calibrate-thresholds", config, config.sampler.seed),
    }
    atomic_write_text(args.out, json.dumps(out, sort_keys=True, indent=1) + "\n")
    write_manifest(
        args.out + ".manifest.json", "calibrate-thresholds", config, config.sampler.seed
    )
    return 0


def cmd_niggli(args) -> int:
    records = load_dataset(args.dataset)
    rec = _record_by_selector(records, args.index, args.id, "--index/--id")
    reduced = reduce_crystal(rec.crystal)
    params = lattice_params(reduced.lattice)
    out = {
        "id": rec.id,
        "reduced_lattice": reduced.lattice.rows.tolist(),
        "params": {
            "a": params.a, "b": params.b, "c": params.c,
            "alpha": params.alpha, "beta": params.beta, "gamma": params.gamma,
        },
        "volume": reduced.lattice.volume,
        "manifest": manifest_dict("niggli", RunConfig(), 0),
    }
    print(json.dumps(out, sort_keys=True, indent=1))
    return 0


def cmd_graph(args) -> int:
    records = load_dataset(args.dataset)
    rec = _record_by_selector(records, args.index, args.id, "--index/--id")
    graph = knn_graph(rec.crystal, args.k)
    graph.to_csv(args.out)
    write_manifest(args.out + ".manifest.json", "graph", RunConfig(), 0)
    return 0


def cmd_match(args) -> int:
    config = _load_config(args.config)
    m = config.metrics
    records_a = load_dataset(args.dataset_a)
    records_b = load_dataset(args.dataset_b) if args.dataset_b else records_a
    rec_a = _record_by_selector(records_a, args.index_a, args.id_a, "--index-a/--id-a")
    rec_b = _record_by_selector(records_b, args.index_b, args.id_b, "--index-b/--id-b")
    result = structure_match(
        rec_a.crystal, rec_b.crystal, stol=m.stol, angle_tol=m.angle_tol, ltol=m.ltol
    )
    print(
        json.dumps(
            {
                "id_a": rec_a.id,
                "id_b": rec_b.id,
                "matched": result.matched,
                "rmse_normalized": result.rmse_normalized,
                "manifest": manifest_dict("match", config, config.sampler.seed),
            },
            sort_keys=True,
            indent=1,
        )
    )
    return 0


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xtalgen",
        description="Periodic crystal sampling and evaluation toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="add noise to every structure in a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--sigma-x", type=float, default=0.0, dest="sigma_x")
    p.add_argument("--sigma-a", type=float, default=0.0, dest="sigma_a")
    p.add_argument("--level", type=int, help="1-based schedule level instead of sigmas")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("sample", help="generate structures with annealed Langevin dynamics")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--trajectory", help="write per-step summaries to this CSV")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser(
        "reconstruct",
        help="perturb, re-anneal with the harmonic oracle, and match each record",
    )
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--sigma-x", type=float, dest="sigma_x")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="validity, coverage, and property EMD report")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument(
        "--property",
        action="append",
        help="also EMD-compare this per-record property column (repeatable)",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "calibrate-thresholds",
        help="derive coverage thresholds from a reference dataset percentile",
    )
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--percentile", type=float, default=5.0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("niggli", help="print the Niggli-reduced cell of one record")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int)
    p.add_argument("--id")
    p.set_defaults(func=cmd_niggli)

    p = sub.add_parser("graph", help="periodic KNN edge list of one record as CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int)
    p.add_argument("--id")
    p.add_argument("--k", type=int, default=20)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("match", help="structure-match two records")
    p.add_argument("--dataset-a", required=True, dest="dataset_a")
    p.add_argument("--dataset-b", dest="dataset_b")
    p.add_argument("--index-a", type=int, dest="index_a")
    p.add_argument("--index-b", type=int, dest="index_b")
    p.add_argument("--id-a", dest="id_a")
    p.add_argument("--id-b", dest="id_b")
    p.add_argument("--config")
    p.set_defaults(func=cmd_match)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface machine-readable failures
        error = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(error, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
