"""Command-line entry point: ``specgeo <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod


def _run_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _ids(text: str | None):
    return [s for s in text.split(",") if s] if text else None


def cmd_ingest(args) -> int:
    from .store import ingest
    store, drops = ingest(args.xyz_dir, args.spectra, args.out)
    print(f"kept {len(store)} records, dropped {len(drops)}; store hash {store.hash}")
    for d in drops:
        print(f"  dropped {d.id}: {d.reason}")
    return 0


def _train(stage: str):
    def run(args) -> int:
        from .store import DatasetStore
        from .training import replay, train_stage
        if args.manifest:
            result = replay(args.manifest, args.out, check=not args.no_check)
        else:
            if not args.store:
                raise SystemExit("--store is required unless --manifest is given")
            store = DatasetStore.open(args.store)
            progress = (lambda step, stats: print(step, json.dumps(stats), flush=True)) if args.verbose else None
            result = train_stage(stage, store, _run_config(args), args.out, init=args.checkpoint,
                                 steps=args.steps, ids=_ids(args.ids), progress=progress)
        print(f"{stage}: {result.checkpoint} sha256={result.checkpoint_hash}")
        print(json.dumps(result.metrics, sort_keys=True))
        return 0
    return run


def cmd_sample(args) -> int:
    from .sampling import replay_sampling, run_sampling
    from .store import DatasetStore
    if args.manifest:
        same = replay_sampling(args.manifest, args.out)
        print("samples identical to manifest" if same else "samples DIFFER from manifest")
        return 0 if same else 1
    if not (args.store and args.checkpoint):
        raise SystemExit("sample needs --store and --checkpoint (or --manifest)")
    store = DatasetStore.open(args.store)
    seed = args.seed if args.seed is not None else _run_config(args).seed
    k = args.samples_per_spectrum or _run_config(args).samples_per_spectrum
    entries = run_sampling(store, args.checkpoint, args.out, k, seed, _ids(args.ids))
    failed = sum(e.path is None for e in entries)
    print(f"wrote {len(entries) - failed} geometries to {args.out}; {failed} trajectories diverged")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate
    from .sampling import load_samples
    from .store import DatasetStore
    report = evaluate(load_samples(args.samples), DatasetStore.open(args.store))
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_broaden(args) -> int:
    from .spectra import DEFAULT_GRID, broaden, read_spectrum_file
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for rec in read_spectrum_file(args.spectra):
            if rec.modes is None:
                raise SystemExit(f"record {rec.id} has no modes to broaden")
            spec = broaden(rec.modes, DEFAULT_GRID, args.half_width, args.scale)
            out.write(json.dumps({"id": rec.id, "intensities": [float(v) for v in spec.intensities]}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_perceive(args) -> int:
    from .chem import check_connectivity, check_stability, check_validity, parse_xyz, perceive_bonds
    from .fingerprint import canonical_key
    rows = []
    for path in args.xyz:
        geom = parse_xyz(Path(path).read_text())
        g = perceive_bonds(geom, args.delta)
        rows.append({"file": str(path), "formula": geom.formula(), "key": canonical_key(g),
                     "resolved": g.resolved, "valid": check_validity(g), "stable": check_stability(g),
                     "connected": check_connectivity(g),
                     "bonds": [[i, j, o] for (i, j), o in sorted(g.bonds.items())],
                     "aromatic": sorted(list(p) for p in g.aromatic)})
    for r in rows:
        print(json.dumps(r))
    return 0


def cmd_fgmatch(args) -> int:
    from .chem import parse_xyz, perceive_bonds
    from .smarts import default_groups, label_functional_groups, match_pattern, parse_pattern
    groups = default_groups()
    for path in args.xyz:
        graph = perceive_bonds(parse_xyz(Path(path).read_text()))
        if args.smarts:
            hits = match_pattern(parse_pattern(args.smarts), graph)
            print(json.dumps({"file": str(path), "smarts": args.smarts, "matches": [list(h) for h in hits]}))
        else:
            labels = label_functional_groups(graph, groups)
            present = [n for n, v in zip(groups.names, labels) if v]
            print(json.dumps({"file": str(path), "labels": labels.tolist(), "groups": present}))
    return 0


def cmd_export_attention(args) -> int:
    from .attention import export_attention
    from .chem import parse_xyz
    from .store import DatasetStore
    from .training import load_model, to_example
    model, _, _ = load_model(args.checkpoint, expect_stage="ldm")
    rec = DatasetStore.open(args.store).by_id.get(args.id)
    if rec is None:
        raise SystemExit(f"spectrum {args.id} not in the store")
    geom = parse_xyz(Path(args.xyz).read_text()) if args.xyz else rec.geometry
    csv_path, svg_path = export_attention(model, to_example(rec), geom, args.out, args.t)
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specgeo", description="IR-spectrum-conditioned 3D geometry recovery")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="build a dataset store from XYZ files and a spectrum file")
    s.add_argument("--xyz-dir", required=True)
    s.add_argument("--spectra", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    for stage, name in (("classifier", "train-classifier"), ("ae", "train-ae"), ("ldm", "train-ldm")):
        s = sub.add_parser(name, help=f"run the {stage} training stage")
        s.add_argument("--store")
        s.add_argument("--config")
        s.add_argument("--seed", type=int)
        s.add_argument("--checkpoint", help="checkpoint of the previous stage")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--steps", type=int)
        s.add_argument("--ids", help="comma-separated record ids to train on")
        s.add_argument("--manifest", help="re-run from a manifest instead")
        s.add_argument("--no-check", action="store_true", help="with --manifest: skip the hash comparison")
        s.set_defaults(func=_train(stage))

    s = sub.add_parser("sample", help="draw geometries for stored spectra")
    s.add_argument("--store")
    s.add_argument("--checkpoint")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--samples-per-spectrum", type=int)
    s.add_argument("--ids")
    s.add_argument("--manifest", help="regenerate from a sampling manifest and compare")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("evaluate", help="score a sample set against the store")
    s.add_argument("--samples", required=True, help="directory written by 'sample'")
    s.add_argument("--store", required=True)
    s.add_argument("--out", help="CSV report path")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("broaden", help="Lorentzian-broaden mode lists onto the standard grid")
    s.add_argument("--spectra", required=True, help="JSON-lines file with modes")
    s.add_argument("--out")
    s.add_argument("--half-width", type=float, default=15.0)
    s.add_argument("--scale", type=float, default=0.965)
    s.set_defaults(func=cmd_broaden)

    s = sub.add_parser("perceive", help="perceive bonds from XYZ files")
    s.add_argument("xyz", nargs="+")
    s.add_argument("--delta", type=float, default=40.0, help="distance tolerance in pm")
    s.set_defaults(func=cmd_perceive)

    s = sub.add_parser("fgmatch", help="functional-group labels or matches of one pattern")
    s.add_argument("xyz", nargs="+")
    s.add_argument("--smarts")
    s.set_defaults(func=cmd_fgmatch)

    s = sub.add_parser("export-attention", help="write cross-attention maps as CSV and SVG")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--id", required=True, help="spectrum id")
    s.add_argument("--xyz", help="geometry to analyse (default: the stored one)")
    s.add_argument("--out", required=True, help="output path prefix")
    s.add_argument("--t", type=int, default=1, help="diffusion step for the denoiser pass")
    s.set_defaults(func=cmd_export_attention)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.seterr(over="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
