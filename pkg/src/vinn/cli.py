"""Command-line entry point: ``vinn <subcommand> ...``."""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("vinn")


@contextlib.contextmanager
def _thread_limit(deterministic: bool):
    """Cap BLAS threads at VINN_THREADS (or one thread in deterministic mode)."""
    from threadpoolctl import threadpool_limits

    env = os.environ.get("VINN_THREADS")
    limit = 1 if deterministic else (int(env) if env else None)
    if limit is None:
        yield
        return
    with threadpool_limits(limits=limit):
        yield


def cmd_phantom_gen(args) -> int:
    from .data.dataset import generate_dataset

    seeds = range(args.seed, args.seed + args.count)
    recs = generate_dataset(args.out_dir, seeds, args.voxel_mm, args.split)
    print(json.dumps({"written": len(recs), "manifest": str(Path(args.out_dir) / "manifest.jsonl")}))
    return 0


def cmd_train(args) -> int:
    from .data.dataset import load_samples
    from .train.config import TrainConfig, load_config, parse_config
    from .train.trainer import TrainingDiverged, train

    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg)
    train_s = load_samples(args.manifest, "train")
    val_s = load_samples(args.manifest, "val")
    if not train_s:
        print(f"error: manifest {args.manifest} has no training volumes", file=sys.stderr)
        return 2
    try:
        with _thread_limit(args.deterministic):
            results = train(cfg, train_s, val_s, args.out_dir)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc} (last good checkpoint: {exc.checkpoint})", file=sys.stderr)
        return 3
    print(json.dumps({p: r.history[-1] for p, r in results.items()}, default=float))
    return 0


def _models(args):
    from .train.infer import load_models, load_run

    return load_models(args.checkpoint) if args.checkpoint else load_run(args.run)


def cmd_infer(args) -> int:
    from .data.volume import IntensityVolume, load_volume, save_volume
    from .train.infer import infer

    vol = load_volume(args.input, IntensityVolume)
    voxel = args.voxel_mm or vol.voxel_mm
    try:
        seg = infer(_models(args), vol.data, voxel)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    save_volume(seg, args.output)
    print(json.dumps({"output": args.output, "dims": list(seg.dims), "voxel_mm": voxel}))
    return 0


EVAL_FIELDS = ("subject", "model", "structure", "dsc", "asd", "flags")


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_FIELDS)
        for r in records:
            w.writerow([r.subject, r.model, r.structure, f"{r.dsc:.6f}",
                        "" if math.isnan(r.asd) else f"{r.asd:.6f}", ";".join(r.flags)])


def read_records(path) -> list:
    from .eval.metrics import EvalRecord

    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EvalRecord(row["subject"], row["model"], int(row["structure"]), float(row["dsc"]),
                                  float(row["asd"]) if row["asd"] else float("nan"),
                                  tuple(f for f in row["flags"].split(";") if f)))
    return out


def cmd_evaluate(args) -> int:
    from .data.dataset import load_samples
    from .data.labels import DESK_TABLE
    from .eval.metrics import evaluate_segmentation
    from .train.infer import segment

    models = _models(args)
    samples = load_samples(args.manifest, args.split)
    if not samples:
        print(f"error: no {args.split} volumes in {args.manifest}", file=sys.stderr)
        return 2
    model_id = args.model_id or Path(args.run or args.checkpoint[0]).name
    records = []
    for s in samples:
        seg = segment(models, s.image, s.voxel_mm)
        records += evaluate_segmentation(s.labels, seg, s.voxel_mm, DESK_TABLE.structure_ids, s.name, model_id)
    write_records(records, args.out)
    print(json.dumps({"records": len(records), "mean_dsc": float(np.mean([r.dsc for r in records]))}))
    return 0


def cmd_stats(args) -> int:
    from .eval.stats import paired_stats

    try:
        rows = paired_stats(read_records(args.a), read_records(args.b), args.metric, args.min_pairs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("structure", "W", "p_raw", "p_bh", "n", "method"))
        for r in rows:
            w.writerow((r.structure, f"{r.w:g}", f"{r.p_raw:.6g}", f"{r.p_bh:.6g}", r.n, r.method))
    print(json.dumps({"structures": len(rows), "significant_bh_0.05": sum(r.p_bh < 0.05 for r in rows)}))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import CASES, run_suite

    ops = args.ops or list(CASES)
    unknown = set(ops) - set(CASES)
    if unknown:
        print(f"error: unknown ops {sorted(unknown)}; choose from {sorted(CASES)}", file=sys.stderr)
        return 2
    results = run_suite(args.seeds, ops, args.tol)
    failed = 0
    for op in ops:
        rs = [r for r in results if r.op == op]
        bad = [r for r in rs if not r.passed]
        failed += len(bad)
        print(f"{op:18s} {len(rs) - len(bad):4d}/{len(rs)} passed  max rel err {max(r.rel_err for r in rs):.2e}")
    return 1 if failed else 0


def write_pgm(arr: np.ndarray, path) -> None:
    """8-bit binary PGM, linearly scaled so the maximum maps to 255."""
    a = np.asarray(arr, dtype=np.float64)
    peak = a.max() if a.size else 0.0
    img = np.zeros(a.shape, np.uint8) if peak <= 0 else np.floor(a / peak * 255 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def cmd_masks(args) -> int:
    from .data.labels import DESK_TABLE
    from .data.slicing import to_plane
    from .data.volume import LabelVolume, load_volume
    from .loss import mask_radius, median_freq_weights, weight_map
    from .train.trainer import plane_labels, tissue_classes

    vol = load_volume(args.labels, LabelVolume)
    view = DESK_TABLE.view(args.plane)
    stack = to_plane(vol.data, args.plane)
    k = args.index if args.index is not None else stack.shape[0] // 2
    classes = view.encode(plane_labels(stack[k], DESK_TABLE, view))
    gm, brain = tissue_classes(DESK_TABLE, view)
    wm = weight_map(classes, median_freq_weights(classes, view.num_classes), gm, brain,
                    radius=mask_radius(vol.voxel_mm), w_hires=args.w_hires)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    terms = {"median_freq": wm.median_freq, "gradient": wm.gradient, "gm": wm.gm,
             "wm_sulci": wm.wm_sulci, "total": wm.total}
    for name, arr in terms.items():
        write_pgm(arr, out / f"{name}.pgm")
    summary = {name: float(arr.sum()) for name, arr in terms.items()}
    print(json.dumps({"slice": k, "plane": args.plane, "radius_px": mask_radius(vol.voxel_mm), "sums": summary}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vinn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("phantom-gen", help="render conformed phantom volumes and a manifest")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--voxel-mm", type=float, nargs="+", default=[1.0])
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--split", default="train", choices=("train", "val", "test"))
    g.set_defaults(func=cmd_phantom_gen)

    t = sub.add_parser("train", help="train one model per plane")
    t.add_argument("--config")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible")
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("infer", cmd_infer, "segment one volume"),
                               ("evaluate", cmd_evaluate, "DSC/ASD of a run on a manifest split")):
        s = sub.add_parser(name, help=helptext)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--run", help="training output directory")
        src.add_argument("--checkpoint", nargs="+")
        if name == "infer":
            s.add_argument("--input", required=True)
            s.add_argument("--output", required=True)
            s.add_argument("--voxel-mm", type=float)
        else:
            s.add_argument("--manifest", required=True)
            s.add_argument("--split", default="test", choices=("train", "val", "test"))
            s.add_argument("--model-id")
            s.add_argument("--out", required=True)
        s.set_defaults(func=fn)

    st = sub.add_parser("stats", help="paired Wilcoxon + BH between two evaluate CSVs")
    st.add_argument("--a", required=True)
    st.add_argument("--b", required=True)
    st.add_argument("--metric", default="dsc", choices=("dsc", "asd"))
    st.add_argument("--min-pairs", type=int, default=5)
    st.add_argument("--out", required=True)
    st.set_defaults(func=cmd_stats)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--seeds", type=int, default=100)
    gc.add_argument("--ops", nargs="+")
    gc.add_argument("--tol", type=float, default=1e-3)
    gc.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("masks", help="loss weight terms of one label slice")
    m.add_argument("--labels", required=True)
    m.add_argument("--plane", default="coronal", choices=("axial", "coronal", "sagittal"))
    m.add_argument("--index", type=int)
    m.add_argument("--w-hires", type=float, default=1.0)
    m.add_argument("--out", required=True, help="output directory for the PGM images")
    m.set_defaults(func=cmd_masks)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
