"""Command-line pipeline: gen, infer, fuse, eval, weights.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation.  A JSON config file may pre-fill any ``infer`` option; explicit
flags win.  All outputs are deterministic (no timestamps), so rerunning a
subcommand reproduces byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cloud as cloudmod
from . import imio, metrics, neural, report, scenegen
from .decision import GroundTruthOracle, NeuralOracle, ZnccOracle
from .engine import EngineConfig, run
from .errors import InvariantError
from .fusion import EntropyWeightOracle, UniformWeightOracle
from .geometry import make_interval


class UsageError(Exception):
    """Bad flag combination (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="mvsbisect", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic scene to disk")
    g.add_argument("--spec", required=True, help="scene spec JSON")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("infer", help="run iterative depth inference")
    i.add_argument("--scene", required=True, help="scene directory from gen")
    i.add_argument("--config", default=None, help="JSON config; flags override")
    i.add_argument("--out", default=None, help="output directory")
    i.add_argument("--ref", type=int, default=None, help="single reference view index")
    i.add_argument("--dmin", type=float, default=None)
    i.add_argument("--dmax", type=float, default=None)
    i.add_argument("-T", "--iterations", type=int, default=None)
    i.add_argument("-S", "--sources", type=int, default=None)
    i.add_argument("--oracle", choices=["gt", "zncc", "neural"], default=None)
    i.add_argument("--weights", default=None, help="weight file for neural oracles")
    i.add_argument("--weight-oracle", choices=["uniform", "entropy", "neural"], default=None)
    i.add_argument("--trace", action="store_true", default=None)
    i.add_argument("--workers", type=int, default=None)
    i.add_argument("--zncc-window", type=int, default=None)
    i.add_argument("--zncc-probe", type=float, default=None)
    i.add_argument("--zncc-sharpness", type=float, default=None)
    i.set_defaults(func=cmd_infer)

    f = sub.add_parser("fuse", help="fuse depth maps into a point cloud")
    f.add_argument("--scene", required=True, help="scene directory (cameras + images)")
    f.add_argument("--depths", default=None,
                   help="directory with depth_NNNN.pfm (default: the scene's own depths)")
    f.add_argument("--sg", type=int, default=3, help="required consistent views")
    f.add_argument("--g", type=float, default=0.5, help="reprojection threshold (px)")
    f.add_argument("--out", required=True, help="output PLY path")
    f.set_defaults(func=cmd_fuse)

    e = sub.add_parser("eval", help="compare point clouds")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--tau", type=float, required=True)
    e.add_argument("--mode", choices=["pct", "dist"], default="pct")
    e.add_argument("--out", default=".", help="report directory")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("weights", help="weight-file utilities")
    wsub = w.add_subparsers(dest="weights_command", required=True)
    wm = wsub.add_parser("manifest", help="dump the expected tensor list")
    wm.add_argument("--out", default=None, help="file (default stdout)")
    wm.set_defaults(func=cmd_weights_manifest)
    wr = wsub.add_parser("random", help="generate a seeded random weight file")
    wr.add_argument("--seed", type=int, default=0)
    wr.add_argument("--out", required=True)
    wr.set_defaults(func=cmd_weights_random)
    wv = wsub.add_parser("validate", help="validate a weight file against the graph")
    wv.add_argument("--weights", required=True)
    wv.set_defaults(func=cmd_weights_validate)

    return p


# ---------------------------------------------------------------------------
# scene directory helpers
# ---------------------------------------------------------------------------

def _load_manifest(scene_dir: Path) -> dict:
    path = scene_dir / "manifest.json"
    with open(path) as fh:
        return json.load(fh)


def load_scene(scene_dir) -> tuple[list, dict]:
    """Views (image, camera, depth) plus the manifest dict."""
    scene_dir = Path(scene_dir)
    man = _load_manifest(scene_dir)
    cams = imio.read_cameras_text(scene_dir / man["cameras"])
    views = []
    for idx, (img_name, dep_name) in enumerate(zip(man["images"], man["depths"])):
        image = imio.read_image(scene_dir / img_name)
        depth = None
        dep_path = scene_dir / dep_name
        if dep_path.exists():
            depth = imio.read_pfm(dep_path).astype(np.float64)
        views.append(scenegen.View(image=image, camera=cams[idx], gt_depth=depth))
    return views, man


def _nearest_sources(views: list, ref_index: int, count: int) -> list[int]:
    ref_c = views[ref_index].camera.center()
    others = [i for i in range(len(views)) if i != ref_index]
    others.sort(key=lambda i: (float(np.linalg.norm(views[i].camera.center() - ref_c)), i))
    return others[:count]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    with open(args.spec) as fh:
        spec_dict = json.load(fh)
    spec = scenegen.SceneSpec.from_dict(spec_dict)
    bundle = scenegen.render(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = []
    depths = []
    for i, view in enumerate(bundle.views):
        img_name = f"view_{i:04d}.ppm"
        dep_name = f"depth_{i:04d}.pfm"
        imio.write_ppm(out / img_name, view.image)
        imio.write_pfm(out / dep_name, view.gt_depth)
        images.append(img_name)
        depths.append(dep_name)
    imio.write_cameras_text(out / "cameras.txt", [v.camera for v in bundle.views])
    finite = np.concatenate([v.gt_depth[np.isfinite(v.gt_depth)] for v in bundle.views])
    if finite.size == 0:
        raise ValueError("scene renders no visible surface")
    manifest = {
        "width": spec.width,
        "height": spec.height,
        "views": len(bundle.views),
        "images": images,
        "depths": depths,
        "cameras": "cameras.txt",
        "ref_index": spec.ref_index,
        "seed": spec.seed,
        "d_min": float(finite.min()) * 0.8,
        "d_max": float(finite.max()) * 1.25,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"gen: wrote {len(images)} views to {out}")
    return 0


def _merged_infer_options(args) -> dict:
    defaults = {
        "out": None, "ref": None, "dmin": None, "dmax": None,
        "iterations": 8, "sources": 4, "oracle": "zncc", "weights": None,
        "weight_oracle": "entropy", "trace": False, "workers": 1,
        "zncc_window": 7, "zncc_probe": 0.5, "zncc_sharpness": 10.0,
    }
    merged = dict(defaults)
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(cfg)
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def cmd_infer(args) -> int:
    opts = _merged_infer_options(args)
    scene_dir = Path(args.scene)
    views, man = load_scene(scene_dir)
    d_min = opts["dmin"] if opts["dmin"] is not None else man.get("d_min")
    d_max = opts["dmax"] if opts["dmax"] is not None else man.get("d_max")
    if d_min is None or d_max is None:
        raise UsageError("depth range unavailable: pass --dmin/--dmax")
    interval = make_interval(float(d_min), float(d_max))

    store = None
    if opts["oracle"] == "neural" or opts["weight_oracle"] == "neural":
        if not opts["weights"]:
            raise UsageError("neural oracle selected but no --weights given")
        store = neural.load_weights(opts["weights"], neural.manifest())

    if opts["oracle"] == "gt":
        oracle = GroundTruthOracle()
    elif opts["oracle"] == "zncc":
        oracle = ZnccOracle(window=int(opts["zncc_window"]),
                            probe_factor=float(opts["zncc_probe"]),
                            sharpness=float(opts["zncc_sharpness"]))
    else:
        oracle = NeuralOracle(store)

    if opts["weight_oracle"] == "uniform":
        weight_oracle = UniformWeightOracle()
    elif opts["weight_oracle"] == "entropy":
        weight_oracle = EntropyWeightOracle()
    else:
        weight_oracle = neural.NeuralWeightOracle(store)

    out = Path(opts["out"]) if opts["out"] else scene_dir / "depths"
    out.mkdir(parents=True, exist_ok=True)
    refs = [opts["ref"]] if opts["ref"] is not None else list(range(len(views)))
    n_src = int(opts["sources"])
    for r in refs:
        if not (0 <= r < len(views)):
            raise UsageError(f"reference index {r} out of range (0..{len(views) - 1})")
        sources = _nearest_sources(views, r, n_src)
        if not sources:
            raise ValueError("scene has no source views")
        bundle = scenegen.SceneBundle(views=views, ref_index=r, source_indices=sources)
        cfg = EngineConfig(oracle=oracle, weight_oracle=weight_oracle,
                           iterations=int(opts["iterations"]),
                           record_trace=bool(opts["trace"]),
                           workers=int(opts["workers"]))
        depth, trace = run(bundle, interval, cfg)
        imio.write_pfm(out / f"depth_{r:04d}.pfm", depth)
        imio.write_raw_depth(out / f"depth_{r:04d}.ibdm", depth)
        report.save_depth_figure(depth, out / f"depth_{r:04d}.png", title=f"view {r}")
        if trace is not None:
            tdir = out / f"trace_{r:04d}"
            tdir.mkdir(exist_ok=True)
            for t, hyp in enumerate(trace.hypotheses):
                imio.write_pfm(tdir / f"hyp_t{t:02d}.pfm", hyp)
            for t, (masks, weights) in enumerate(zip(trace.masks, trace.weights)):
                for s, m in enumerate(masks):
                    imio.write_pfm(tdir / f"mask_t{t:02d}_s{s}.pfm", m)
                for s, wmap in enumerate(weights):
                    imio.write_pfm(tdir / f"weight_t{t:02d}_s{s}.pfm", wmap)
        print(f"infer: view {r} done ({opts['oracle']} oracle, T={opts['iterations']})")
    return 0


def cmd_fuse(args) -> int:
    scene_dir = Path(args.scene)
    views, man = load_scene(scene_dir)
    depth_dir = Path(args.depths) if args.depths else scene_dir
    depths = []
    for i in range(len(views)):
        path = depth_dir / f"depth_{i:04d}.pfm"
        depths.append(imio.read_pfm(path).astype(np.float64))
    params = cloudmod.FusionParams(consistent_views=args.sg, max_reproj_error=args.g)
    pc = cloudmod.fuse_cloud(depths, [v.camera for v in views],
                             [v.image for v in views], params)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    cloudmod.write_ply(pc, out)
    print(f"fuse: wrote {len(pc)} points to {out}")
    return 0


def cmd_eval(args) -> int:
    pred = cloudmod.read_ply(args.pred)
    gt = cloudmod.read_ply(args.gt)
    m = metrics.cloud_accuracy_completeness(pred, gt, tau=args.tau,
                                            percentage=(args.mode == "pct"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = dict(m.as_dict())
    data["n_pred"] = len(pred)
    data["n_gt"] = len(gt)
    report.write_metrics_text(data, out / "report.txt")
    report.write_csv([data], out / "report.csv")
    report.save_metrics_figure(
        {k: v for k, v in data.items() if k in ("accuracy", "completeness", "aggregate")},
        out / "report.png")
    print(f"eval: accuracy={m.accuracy} completeness={m.completeness} "
          f"aggregate={m.aggregate}")
    return 0


def cmd_weights_manifest(args) -> int:
    lines = [f"{name} {' '.join(str(d) for d in shape)}"
             for name, shape in neural.manifest()]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_weights_random(args) -> int:
    store = neural.random_weights(neural.manifest(), seed=args.seed)
    neural.save_weights(store, args.out)
    print(f"weights: wrote {len(store.tensors)} tensors to {args.out}")
    return 0


def cmd_weights_validate(args) -> int:
    store = neural.load_weights(args.weights, neural.manifest())
    count = neural.parameter_count([(n, t.shape) for n, t in store.tensors.items()])
    print(f"weights: OK ({len(store.tensors)} tensors, {count} parameters)")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"mvsbisect: usage error: {e}", file=sys.stderr)
        return 1
    except (InvariantError, AssertionError) as e:
        print(f"mvsbisect: internal invariant violation: {e}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError, IndexError) as e:
        print(f"mvsbisect: data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
