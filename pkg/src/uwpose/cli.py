"""Command-line front end for the toolkit.

Conventions shared by every subcommand: results are line-oriented key=value
text on stdout, progress chatter goes to stderr (silenced by --quiet), and
--report writes the same key=value block to a file with a rendered PNG
figure next to it. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import csv
import math
import pathlib
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import io, lie, metrics, pipeline, radiance, refine, sim, solver
from .errors import ToolkitError
from .solver import SolveConfig, WeightingParams


def _g17(x) -> str:
    return format(float(x), ".17g")


def _progress(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _emit(lines) -> None:
    print("\n".join(lines))


def _write_report(args, lines, figure=None) -> None:
    path = pathlib.Path(args.report)
    path.write_text("\n".join(lines) + "\n")
    if figure is not None:
        png = path.with_suffix(".png")
        figure(str(png))
        _progress(args, f"figure written to {png}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _load_graph(path):
    doc = io.parse_g2o(pathlib.Path(path).read_bytes())
    return io.to_pose_graph(doc)


def _sorted_poses(values, indices):
    return [values.poses[k] for k in sorted(indices)]


def _pose_indices(g):
    return [vid.index for vid, _ in g.variables if vid.kind != "scale"]


def _write_trajectory(path, poses):
    traj = io.TumTrajectory.from_poses([float(k) for k in range(len(poses))], poses)
    pathlib.Path(path).write_text(io.write_tum(traj))


def _xy(poses) -> np.ndarray:
    out = np.zeros((len(poses), 2))
    for k, p in enumerate(poses):
        if isinstance(p, lie.Pose2):
            out[k] = (p.x, p.y)
        else:
            out[k] = (p.t[0], p.t[1])
    return out


def _band_rows(h: int, threads: int):
    threads = max(1, min(threads, h))
    edges = np.linspace(0, h, threads + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _parallel_bands(fn, h: int, threads: int):
    """Row-band worker pool; results merge in submission order so the
    output is identical for any --threads setting."""
    bands = _band_rows(h, threads)
    if len(bands) == 1:
        return [fn(*bands[0])]
    with ThreadPoolExecutor(max_workers=len(bands)) as pool:
        futures = [pool.submit(fn, a, b) for a, b in bands]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# synth-graph
# ---------------------------------------------------------------------------


def _parse_layout(text: str):
    """grid:WxH or ring[:RADIUS]."""
    if text.startswith("grid"):
        if ":" not in text:
            return dict(layout="grid")
        dims = text.split(":", 1)[1]
        w, _, h = dims.partition("x")
        try:
            return dict(layout="grid", grid_width=int(w), grid_height=int(h))
        except ValueError:
            raise ValueError(f"bad grid layout {text!r}, expected grid:WxH") from None
    if text.startswith("ring"):
        if ":" not in text:
            return dict(layout="ring")
        try:
            return dict(layout="ring", ring_radius=float(text.split(":", 1)[1]))
        except ValueError:
            raise ValueError(f"bad ring layout {text!r}, expected ring:RADIUS") from None
    raise ValueError(f"unknown layout {text!r}")


def _parse_sigma_pair(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected TRANS,ROT sigma pair, got {text!r}")
    return float(parts[0]), float(parts[1])


def cmd_synth_graph(args) -> int:
    layout = _parse_layout(args.layout)
    dimension = "planar" if args.depth_profile == "none" else "spatial"
    fields = dict(layout)
    if args.n is not None:
        fields["n_poses"] = args.n
    elif layout["layout"] == "grid":
        fields["n_poses"] = layout.get("grid_width", 5) * layout.get("grid_height", 5)
    else:
        fields["n_poses"] = 12
    if dimension == "spatial":
        fields["depth_profile"] = args.depth_profile
    cfg = sim.SimConfig(dimension=dimension,
                        odo_sigma=_parse_sigma_pair(args.odo_sigma),
                        loop_prob=args.loop_prob, loop_radius=args.loop_radius,
                        depth_sigma=args.depth_sigma, seed=args.seed, **fields)
    out = sim.generate(cfg)
    pathlib.Path(args.out).write_text(io.write_g2o(io.from_pose_graph(out.graph)))
    _progress(args, f"graph written to {args.out}")
    lines = [f"{k}={v}" for k, v in sorted(out.metadata.items())]
    lines.append(f"out={args.out}")
    if args.gt:
        _write_trajectory(args.gt, out.ground_truth)
        _progress(args, f"ground truth written to {args.gt}")
        lines.append(f"gt={args.gt}")
    _emit(lines)
    return 0


# ---------------------------------------------------------------------------
# optimize, refine, pipeline
# ---------------------------------------------------------------------------


def cmd_optimize(args) -> int:
    g = _load_graph(args.graph)
    initial = g.initial_values()
    solve = solver.gauss_newton if args.solver == "gn" else solver.levenberg_marquardt
    values, report = solve(g, SolveConfig())
    indices = _pose_indices(g)
    lines = [
        f"solver={args.solver}",
        f"n_poses={len(indices)}",
        f"iterations={report.iterations}",
        f"converged={'true' if report.converged else 'false'}",
        f"reason={report.reason}",
        f"initial_chi2={_g17(report.initial_chi2)}",
        f"final_chi2={_g17(report.final_chi2)}",
    ]
    lines += [f"trace.{k}={_g17(v)}" for k, v in enumerate(report.chi2_trace)]
    if args.out:
        _write_trajectory(args.out, _sorted_poses(values, indices))
        _progress(args, f"trajectory written to {args.out}")
    if args.report:
        from . import plots

        def figure(png):
            plots.solve_figure(png, _xy(_sorted_poses(initial, indices)),
                               _xy(_sorted_poses(values, indices)),
                               report.chi2_trace)

        _write_report(args, lines, figure)
    _emit(lines)
    return 0


def _resolve_policy(source):
    if source == "greedy":
        return refine.GreedyPolicy()
    policy, _ = refine.load_policy(source)
    return policy


def cmd_refine(args) -> int:
    g = _load_graph(args.graph)
    if g.dimension != "planar":
        raise ValueError("refine works on planar graphs; use pipeline for spatial ones")
    policy = _resolve_policy(args.policy)
    weighting = WeightingParams(beta=args.beta)
    values, report = refine.refine(g, g.initial_values(), policy, args.budget,
                                   guard=True, weighting=weighting)
    lines = [
        f"policy={args.policy}",
        f"budget={args.budget}",
        f"beta={_g17(args.beta)}",
        f"initial_oc={_g17(report.initial_cost)}",
        f"final_oc={_g17(report.final_cost)}",
        f"steps={report.steps}",
        f"rolled_back={report.rolled_back}",
    ]
    if args.out:
        _write_trajectory(args.out, _sorted_poses(values, _pose_indices(g)))
        _progress(args, f"trajectory written to {args.out}")
    if args.report:
        from . import plots

        _write_report(args, lines, lambda png: plots.refine_figure(png, report.costs))
    _emit(lines)
    return 0


def cmd_pipeline(args) -> int:
    g = _load_graph(args.graph)
    cfg = pipeline.PipelineConfig(weighting=WeightingParams(beta=args.beta),
                                  refine_budget=args.budget, policy=args.policy)
    values, report = pipeline.run_pipeline(g, cfg)
    lines = report.lines()
    if args.out:
        _write_trajectory(args.out, _sorted_poses(values, _pose_indices(g)))
        _progress(args, f"trajectory written to {args.out}")
    if args.report:
        from . import plots

        def figure(png):
            plots.pipeline_figure(png, [s.stage for s in report.stages],
                                  [s.chi2 for s in report.stages],
                                  [s.oc_log for s in report.stages],
                                  report.refine.costs)

        _write_report(args, lines, figure)
    _emit(lines)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    est = io.parse_tum(pathlib.Path(args.est).read_bytes())
    gt = io.parse_tum(pathlib.Path(args.gt).read_bytes())
    est_poses, gt_poses = est.poses(), gt.poses()
    ate = metrics.ate_rmse(est_poses, gt_poses, align=args.align)
    rpe_trans, rpe_rot = metrics.rpe(est_poses, gt_poses)
    dpm = metrics.deg_per_meter(est_poses, gt_poses)
    drift = metrics.drift_percent(est_poses, gt_poses)
    pts_e, pts_g = est.positions, gt.positions
    if args.align != "none":
        fit = metrics.umeyama_align(pts_e, pts_g, with_scale=args.align == "sim3")
        pts_e = fit.apply(pts_e)
    ate_per_frame = np.linalg.norm(pts_e - pts_g, axis=1)
    lines = [
        f"n_poses={len(est)}",
        f"align={args.align}",
        f"ate_rmse={_g17(ate)}",
        f"rpe_trans_m={_g17(rpe_trans)}",
        f"rpe_rot_deg={_g17(rpe_rot)}",
        f"deg_per_meter={_g17(dpm)}",
        "deg_per_meter_definition=mean rotational error (deg) over mean step length (m) at delta=1",
        f"drift_percent={_g17(drift)}",
    ]
    if args.align != "none":
        lines.append(f"alignment_scale={_g17(fit.scale)}")
        lines.append(f"alignment_degenerate={'true' if fit.degenerate else 'false'}")
    pairs = metrics.pair_errors(est_poses, gt_poses)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "ate_m", "rpe_trans_m", "rpe_rot_deg"])
            for k in range(len(est)):
                row = [k, _g17(ate_per_frame[k])]
                # pair k-1 -> k sits on the later frame's row
                row += ["", ""] if k == 0 else [_g17(pairs[k - 1, 0]), _g17(pairs[k - 1, 1])]
                writer.writerow(row)
        _progress(args, f"per-frame errors written to {args.csv}")
        lines.append(f"csv={args.csv}")
    if args.report:
        from . import plots

        _write_report(args, lines, lambda png: plots.eval_figure(png, ate_per_frame, pairs))
    _emit(lines)
    return 0


# ---------------------------------------------------------------------------
# uw-synth / uw-invert
# ---------------------------------------------------------------------------

_PARAM_CHANNELS = ("r", "g", "b")


def _params_lines(p: radiance.WaterParams, water: str, seed: int):
    lines = [f"mode={p.mode}", f"water={water}", f"seed={seed}"]
    for name, vec in (("beta", p.beta), ("b_inf", p.b_inf), ("w", p.w_diffuse)):
        lines += [f"{name}_{c}={_g17(v)}" for c, v in zip(_PARAM_CHANNELS, vec)]
    if p.b_additive is not None:
        lines += [f"b_add_{c}={_g17(v)}" for c, v in zip(_PARAM_CHANNELS, p.b_additive)]
    return lines


def _params_from_text(text: str) -> radiance.WaterParams:
    table = {}
    for raw in text.split("\n"):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        table[key.strip()] = value.strip()

    def triple(name):
        try:
            return np.array([float(table[f"{name}_{c}"]) for c in _PARAM_CHANNELS])
        except KeyError as exc:
            raise ValueError(f"params file is missing {exc.args[0]}") from None

    mode = table.get("mode", "eq6")
    b_add = triple("b_add") if "b_add_r" in table else None
    if mode == "eq1" and b_add is None:
        raise ValueError("params file with mode=eq1 is missing b_add_* entries")
    return radiance.WaterParams(beta=triple("beta"), b_inf=triple("b_inf"),
                                w_diffuse=triple("w"), b_additive=b_add, mode=mode)


def _read_rgb_pfm(path):
    img, _ = io.read_pfm(pathlib.Path(path).read_bytes())
    if img.ndim != 3:
        raise ValueError(f"{path}: expected a 3-channel PFM image")
    return np.asarray(img, dtype=float)


def _read_depth_pfm(path):
    img, _ = io.read_pfm(pathlib.Path(path).read_bytes())
    if img.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel PFM range map")
    return np.asarray(img, dtype=float)


def cmd_uw_synth(args) -> int:
    rgb = _read_rgb_pfm(args.rgb)
    depth = _read_depth_pfm(args.depth)
    params = radiance.sample_params(args.seed, args.water, mode=args.mode)

    def band(a, b):
        return radiance.synthesize(radiance.ImagePlanes(rgb[a:b]),
                                   radiance.RangeMap(depth[a:b]), params).data

    parts = _parallel_bands(band, rgb.shape[0], args.threads)
    result = np.concatenate(parts, axis=0)
    pathlib.Path(args.out).write_bytes(io.write_pfm(result))
    _progress(args, f"underwater image written to {args.out}")
    lines = _params_lines(params, args.water, args.seed)
    pathlib.Path(args.params).write_text("\n".join(lines) + "\n")
    _progress(args, f"water parameters written to {args.params}")
    _emit(lines + [f"out={args.out}", f"params={args.params}"])
    return 0


def cmd_uw_invert(args) -> int:
    uw = _read_rgb_pfm(args.uw)
    depth = _read_depth_pfm(args.depth)
    params = _params_from_text(pathlib.Path(args.params).read_text())

    def band(a, b):
        res = radiance.invert(radiance.ImagePlanes(uw[a:b]),
                              radiance.RangeMap(depth[a:b]), params)
        return res.planes.data, res.clamp_count, res.unrecoverable_count

    parts = _parallel_bands(band, uw.shape[0], args.threads)
    j_hat = np.concatenate([p[0] for p in parts], axis=0)
    clamped = sum(p[1] for p in parts)
    unrecoverable = sum(p[2] for p in parts)
    pathlib.Path(args.out).write_bytes(io.write_pfm(j_hat))
    _progress(args, f"restored image written to {args.out}")
    lines = [
        f"clamp_count={clamped}",
        f"unrecoverable_count={unrecoverable}",
        f"out={args.out}",
    ]
    if args.mask:
        gamma = radiance.correction_mask(radiance.ImagePlanes(uw),
                                         radiance.ImagePlanes(j_hat))
        pathlib.Path(args.mask).write_bytes(io.write_pfm(gamma.data))
        _progress(args, f"correction mask written to {args.mask}")
        lines.append(f"mask={args.mask}")
    _emit(lines)
    return 0


# ---------------------------------------------------------------------------
# train-policy, convert
# ---------------------------------------------------------------------------


def cmd_train_policy(args) -> int:
    _progress(args, f"training method={args.method} iters={args.iters} seed={args.seed}")
    policy, report = refine.train_policy(method=args.method, iters=args.iters,
                                         seed=args.seed)
    refine.save_policy(policy, args.out, method=args.method)
    _progress(args, f"policy written to {args.out}")
    lines = [
        f"method={report.method}",
        f"iters={report.iters}",
        f"margin={_g17(report.margin)}",
        f"policy_return={_g17(report.policy_return)}",
        f"random_return={_g17(report.random_return)}",
        f"out={args.out}",
    ]
    if args.report:
        from . import plots

        _write_report(args, lines, lambda png: plots.training_figure(png, report.trace))
    _emit(lines)
    return 0


def cmd_convert(args) -> int:
    src = pathlib.Path(args.src)
    dst = pathlib.Path(args.out)
    kind = (src.suffix.lower().lstrip("."), dst.suffix.lower().lstrip("."))
    if kind == ("g2o", "g2o"):
        dst.write_text(io.write_g2o(io.parse_g2o(src.read_bytes())))
    elif kind == ("g2o", "tum"):
        g = io.to_pose_graph(io.parse_g2o(src.read_bytes()))
        values = g.initial_values()
        _write_trajectory(dst, _sorted_poses(values, _pose_indices(g)))
    elif kind == ("tum", "tum"):
        dst.write_text(io.write_tum(io.parse_tum(src.read_bytes())))
    elif kind == ("pfm", "pfm"):
        img, scale = io.read_pfm(src.read_bytes())
        dst.write_bytes(io.write_pfm(img, scale))
    elif kind == ("pfm", "ppm"):
        img, _ = io.read_pfm(src.read_bytes())
        dst.write_bytes(io.write_ppm_preview(img))
    else:
        raise ValueError(f"unsupported conversion {kind[0] or '?'} -> {kind[1] or '?'}")
    _progress(args, f"converted {src} to {dst}")
    _emit([f"in={src}", f"out={dst}", f"conversion={kind[0]}->{kind[1]}"])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="RNG seed; fixed seed means byte-identical output")
    common.add_argument("--threads", type=_positive_int, default=1,
                        help="worker threads; results are identical for any value")
    common.add_argument("--quiet", action="store_true",
                        help="suppress progress messages on stderr")

    parser = argparse.ArgumentParser(
        prog="uwpose",
        description="Pose-graph optimization toolkit for underwater surveys.",
        epilog="exit codes: 0 success, 1 domain error, 2 usage error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-graph", parents=[common],
                       help="simulate a survey and write graph + ground truth")
    p.add_argument("--layout", default="grid:5x5", help="grid:WxH or ring[:RADIUS]")
    p.add_argument("--n", type=int, default=None, help="pose count (default: fill the layout)")
    p.add_argument("--odo-sigma", default="0.05,0.01", help="odometry noise TRANS,ROT")
    p.add_argument("--loop-prob", type=float, default=0.0)
    p.add_argument("--loop-radius", type=float, default=1.5)
    p.add_argument("--depth-profile", choices=("none", "constant", "sinusoid"),
                   default="none", help="none keeps the graph planar")
    p.add_argument("--depth-sigma", type=float, default=0.02)
    p.add_argument("--out", required=True, help="output graph (.g2o)")
    p.add_argument("--gt", default=None, help="optional ground-truth trajectory (.tum)")
    p.set_defaults(func=cmd_synth_graph)

    p = sub.add_parser("optimize", parents=[common], help="solve a pose graph")
    p.add_argument("--in", dest="graph", required=True, help="input graph (.g2o)")
    p.add_argument("--solver", choices=("gn", "lm"), default="lm")
    p.add_argument("--out", default=None, help="optimized trajectory (.tum)")
    p.add_argument("--report", default=None, help="report text path; a PNG lands next to it")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("refine", parents=[common],
                       help="orientation-cost refinement on a planar graph")
    p.add_argument("--in", dest="graph", required=True, help="input graph (.g2o)")
    p.add_argument("--policy", default="greedy", help="'greedy' or a .mrvp policy file")
    p.add_argument("--budget", type=int, default=64)
    p.add_argument("--beta", type=float, default=0.0, help="translation edge-weighting strength")
    p.add_argument("--out", default=None, help="refined trajectory (.tum)")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("pipeline", parents=[common],
                       help="full solve-project-refine-lift-solve pipeline")
    p.add_argument("--in", dest="graph", required=True, help="spatial graph (.g2o)")
    p.add_argument("--policy", default="greedy", help="'greedy' or a .mrvp policy file")
    p.add_argument("--budget", type=int, default=64)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--out", default=None, help="final trajectory (.tum)")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", parents=[common], help="trajectory error metrics")
    p.add_argument("--est", required=True, help="estimated trajectory (.tum)")
    p.add_argument("--gt", required=True, help="ground-truth trajectory (.tum)")
    p.add_argument("--align", choices=("none", "se3", "sim3"), default="none")
    p.add_argument("--csv", default=None, help="optional per-frame error table")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("uw-synth", parents=[common],
                       help="render an underwater image from rgb + range")
    p.add_argument("--rgb", required=True, help="clear-water image (.pfm, 3 channel)")
    p.add_argument("--depth", required=True, help="range map (.pfm, 1 channel)")
    p.add_argument("--water", choices=("clear", "coastal", "turbid"), default="coastal")
    p.add_argument("--mode", choices=("eq1", "eq6"), default="eq6")
    p.add_argument("--out", required=True, help="underwater image (.pfm)")
    p.add_argument("--params", required=True, help="sampled water parameters (key=value)")
    p.set_defaults(func=cmd_uw_synth)

    p = sub.add_parser("uw-invert", parents=[common],
                       help="restore an underwater image given its parameters")
    p.add_argument("--uw", required=True, help="underwater image (.pfm)")
    p.add_argument("--depth", required=True, help="range map (.pfm)")
    p.add_argument("--params", required=True, help="water parameter file from uw-synth")
    p.add_argument("--out", required=True, help="restored image (.pfm)")
    p.add_argument("--mask", default=None, help="optional correction mask (.pfm)")
    p.set_defaults(func=cmd_uw_invert)

    p = sub.add_parser("train-policy", parents=[common], help="train a refinement policy")
    p.add_argument("--method", choices=("cem", "reinforce"), default="cem")
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--out", required=True, help="policy file (.mrvp)")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("convert", parents=[common],
                       help="convert between file formats by extension")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ToolkitError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
