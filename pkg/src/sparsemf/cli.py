"""Command-line interface for the experiment harness.

Subcommands mirror the experiment kinds::

    sparsemf single       one tuned run with a per-iteration trace
    sparsemf sweep        rho x H grid
    sparsemf sigma-sweep  noise-magnitude grid
    sparsemf fixed-k      ablation with the k update removed
    sparsemf image        dictionary extraction from a PGM image
    sparsemf report       re-aggregate stored results.json

Every subcommand accepts --spec FILE (flat key = value format); explicit
command-line flags override file values.  Exit code 0 only if every
requested cell produced a record.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, specfile
from .harness import ExperimentSpec

_KIND_BY_COMMAND = {
    "single": "single_run",
    "sweep": "rho_h_sweep",
    "sigma-sweep": "sigma_sweep",
    "fixed-k": "fixed_k_ablation",
    "image": "image_run",
}

# CLI flag -> ExperimentSpec field
_FIELD_BY_FLAG = {
    "L": "l_dim",
    "M": "m_dim",
    "H": "h_values",
    "rho": "rho_values",
    "sigma": "sigma_values",
    "k_grid": "k_values",
    "trials": "trials",
    "epsilon": "epsilon",
    "k0": "k0",
    "zb_threshold": "zb_threshold",
    "max_iters": "max_iters",
    "solver_sigma": "solver_sigma",
    "noiseless": "noiseless",
    "image": "image_path",
    "image_noise_sigma": "image_noise_sigma",
    "no_normalize": None,  # handled explicitly
    "per_column": "per_column_normalize",
    "stride": "trace_stride",
    "seed": "base_seed",
}


def _add_common(p: argparse.ArgumentParser, image: bool = False) -> None:
    p.add_argument("--spec", help="experiment spec file (key = value lines)")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel worker processes for sweep cells")
    p.add_argument("--serial", action="store_true",
                   help="force fully serial, deterministic execution")
    p.add_argument("--seed", type=int, help="base seed for all derived seeds")
    p.add_argument("--stride", type=int, help="trace subsampling stride")
    p.add_argument("--trials", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--k0", type=float)
    p.add_argument("--zb-threshold", dest="zb_threshold", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    if image:
        p.add_argument("--image", help="input PGM (P2/P5, 8-bit)")
        p.add_argument("--H", type=int, nargs="+")
        p.add_argument("--solver-sigma", dest="solver_sigma", type=float,
                       help="solver noise parameter (default 0.03 for images)")
        p.add_argument("--image-noise-sigma", dest="image_noise_sigma",
                       type=float, help="additive noise on normalized pixels")
        p.add_argument("--no-normalize", dest="no_normalize",
                       action="store_true")
        p.add_argument("--per-column", dest="per_column", action="store_true",
                       help="standardize each column instead of globally")
    else:
        p.add_argument("--L", type=int)
        p.add_argument("--M", type=int)
        p.add_argument("--H", type=int, nargs="+")
        p.add_argument("--rho", type=float, nargs="+",
                       help="slab weight(s): probability an entry of the "
                            "sparse factor is nonzero")
        p.add_argument("--sigma", type=float, nargs="+")
        p.add_argument("--noiseless", action="store_true")
        p.add_argument("--solver-sigma", dest="solver_sigma", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsemf",
        description="Sparse matrix factorization experiments with "
                    "automatic Laplace-scale tuning.")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("single", help="one traced run"))
    _add_common(sub.add_parser("sweep", help="rho x H sweep"))
    _add_common(sub.add_parser("sigma-sweep", help="noise sweep"))
    fixed = sub.add_parser("fixed-k", help="fixed-k ablation")
    _add_common(fixed)
    fixed.add_argument("--k-grid", dest="k_grid", type=float, nargs="+",
                       help="fixed k values to ablate")
    _add_common(sub.add_parser("image", help="image dictionary run"),
                image=True)

    rep = sub.add_parser("report", help="re-aggregate stored records")
    rep.add_argument("--records", required=True, help="path to results.json")
    rep.add_argument("--out", default="runs", help="output directory")
    return parser


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    values: dict = {}
    if args.spec:
        values.update(specfile.load(args.spec))
        values.pop("schema_version", None)
        # spec files may use the short CLI names
        for flag, field in _FIELD_BY_FLAG.items():
            if field and flag in values:
                values[field] = values.pop(flag)
    kind = _KIND_BY_COMMAND[args.command]
    values["kind"] = kind

    for flag, field in _FIELD_BY_FLAG.items():
        if field is None:
            continue
        if hasattr(args, flag) and getattr(args, flag) is not None:
            values[field] = getattr(args, flag)
    if getattr(args, "no_normalize", False):
        values["normalize"] = False
    if kind == "image_run":
        values.setdefault("solver_sigma", 0.03)
        values.setdefault("trials", 5)
        values.setdefault("epsilon", 1e-3)
        values.setdefault("h_values", (40,))
    return ExperimentSpec.from_dict(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "report":
        spec, records = harness.load_results_json(args.records)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        harness.write_aggregate_csv(out / "aggregate.csv", records)
        print(f"aggregated {len(records)} records -> {out / 'aggregate.csv'}")
        return 0

    spec = _spec_from_args(args)
    expected = len(spec.cells()) * spec.trials
    if spec.kind == "single_run":
        record, trace = harness.run_single(spec, args.out)
        print(f"single run: {record.termination} after {record.iterations} "
              f"iterations; rmse_v={record.rmse_v}")
        records = [record]
        expected = 1
    else:
        workers = 1 if args.serial else args.workers
        records = harness.run_sweep(spec, args.out, workers=workers,
                                    serial=args.serial)
        print(f"{len(records)} records -> {args.out}")
    produced = sum(1 for r in records if r.termination)
    return 0 if produced == expected else 1


if __name__ == "__main__":
    sys.exit(main())
