"""Command-line front end: ``flowmesh <command> [options]``.

Exit codes: 0 on success, 2 for invalid input or flags, 3 for numerical
failures (divergence, inverted cells).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import io as fio
from .errors import FlowmeshError, NumericalError
from .fields import denormalize_fields, normalize_fields, transfer_fields
from .fitting import FitConfig, average_correspondent_meshes, fit_template
from .losses import DEFAULT_WEIGHTS, LossWeights, mesh_loss
from .metrics import (
    ERROR_CHANNELS,
    GridSpec,
    MetricsReport,
    bland_altman,
    centerline_profile,
    dice,
    frechet,
    node_errors,
    profile_curve,
    resample_centerline,
    surface_distances,
    voxelize,
)

logger = logging.getLogger("flowmesh")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INPUT)


def default_seed(value):
    if value is not None:
        return value
    env = os.environ.get("FLOWMESH_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise FlowmeshError(f"FLOWMESH_SEED must be an integer, got {env!r}") from None


def load_schema() -> dict:
    text = resources.files("flowmesh").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def validate_report(doc: dict) -> None:
    jsonschema.validate(doc, load_schema())


def _report(command: str, inputs: dict, **sections) -> dict:
    doc = {"format_version": 1, "command": command, "inputs": inputs}
    for k, v in sections.items():
        if v is not None:
            doc[k] = v
    validate_report(doc)
    return doc


def _emit(doc: dict, path) -> None:
    if path:
        fio.write_json(path, doc)
    else:
        sys.stdout.write(fio.dumps(doc, indent=2))


def _name(path) -> str | None:
    return None if path is None else Path(path).name


def _weights(values) -> LossWeights:
    return DEFAULT_WEIGHTS if values is None else LossWeights.from_sequence(values)


# ----------------------------------------------------------------------
# commands

def cmd_synth(args):
    from .synth import PhantomSpec, generate_phantom

    spec = PhantomSpec(
        kind=args.kind,
        radius=args.radius,
        length=args.length,
        branch_angle=args.branch_angle,
        target_nodes=args.target_nodes,
        inlet_velocity=args.inlet_velocity,
        cross_divisions=args.cross_divisions,
        axial_divisions=args.axial_divisions,
        seed=default_seed(args.seed),
        jitter=args.jitter,
        image_dims=0 if args.no_image else args.image_dims,
    )
    bundle = generate_phantom(spec, with_image=not args.no_image)
    fio.save_bundle(args.out, bundle)
    return EXIT_OK


def _bundle_spec(directory):
    from .synth import PhantomSpec

    manifest = fio.read_json(Path(directory) / "manifest.json")
    if manifest.get("perturbation"):
        raise FlowmeshError("perturb expects an unperturbed phantom bundle")
    return PhantomSpec(**manifest["spec"])


def cmd_perturb(args):
    from .synth import generate_phantom, perturb_phantom

    spec = _bundle_spec(args.bundle)
    with_image = spec.image_dims > 0 and not args.no_image
    base = generate_phantom(spec, with_image=False)
    out = perturb_phantom(base, args.amplitude, seed=default_seed(args.seed), with_image=with_image)
    fio.save_bundle(args.out, out)
    return EXIT_OK


def cmd_fit(args):
    template, template_fields = fio.load_mesh(args.template)
    target, target_fields = fio.load_mesh(args.target)
    stats = fio.load_stats(args.stats) if args.stats else None
    if not args.with_fields:
        target_fields = None
    cfg = FitConfig(
        max_iters=args.max_iters,
        step_size=args.step_size,
        beta_momentum=args.beta_momentum,
        beta_variance=args.beta_variance,
        eps=args.eps,
        tol=args.tol,
        window=args.window,
        weights=_weights(args.lambdas),
        seed=default_seed(args.seed),
    )
    result = fit_template(template, target, cfg, target_fields, template_fields, stats)
    fitted, trace = result[0], result[1]
    fields = None
    if trace.used_fields:
        fields = denormalize_fields(result[2], stats) if stats is not None else result[2]
    fio.save_mesh(args.out, fitted, fields)
    if args.trace:
        Path(args.trace).write_text(trace.to_csv())
    summary = {
        "iterations": len(trace.records),
        "best_iteration": trace.best_iteration,
        "reason": trace.reason,
        "final_loss": trace.final_loss,
        "used_fields": trace.used_fields,
        "nodes": fitted.n_vertices,
    }
    doc = _report("fit", {"template": _name(args.template), "target": _name(args.target)}, fit=summary)
    if args.report:
        fio.write_json(args.report, doc)
    return EXIT_OK


def cmd_average(args):
    meshes = [fio.load_mesh(p)[0] for p in args.inputs]
    fio.save_mesh(args.out, average_correspondent_meshes(meshes))
    return EXIT_OK


def cmd_loss(args):
    pred, pred_fields = fio.load_mesh(args.pred)
    truth, truth_fields = fio.load_mesh(args.truth)
    template, _ = fio.load_mesh(args.template)
    if not pred.shares_topology(template):
        raise FlowmeshError("prediction must share the template connectivity")
    pf = tf = None
    if pred_fields is not None and truth_fields is not None and len(pred_fields) == len(truth_fields):
        stats = fio.load_stats(args.stats) if args.stats else None

        def norm(f):
            if f.space == "normalized":
                return f
            if stats is None:
                raise FlowmeshError("raw fields need --stats for the CFD term")
            return normalize_fields(f, stats)

        pf, tf = norm(pred_fields), norm(truth_fields)
    w = _weights(args.lambdas)
    rep = mesh_loss(pred.vertices, truth, template, w, pred_fields=pf, truth_fields=tf, cfd_pooling=args.cfd_pooling)
    loss = {**rep.to_dict(), "weights": list(w.as_tuple())}
    inputs = {"pred": _name(args.pred), "truth": _name(args.truth), "template": _name(args.template)}
    _emit(_report("loss", inputs, loss=loss), args.report)
    return EXIT_OK


def cmd_init_weights(args):
    from .network import Architecture, init_random

    arch = Architecture.from_dict(fio.read_json(args.arch)) if args.arch else Architecture()
    init_random(arch, default_seed(args.seed)).save(args.out)
    return EXIT_OK


def cmd_infer(args):
    from .network import Architecture, WeightSet, image2flow_forward, init_random

    image = fio.load_image(args.image)
    template, template_fields = fio.load_mesh(args.template)
    stats = fio.load_stats(args.stats) if args.stats else None
    if args.init_random:
        arch = Architecture.from_dict(fio.read_json(args.arch)) if args.arch else Architecture()
        weights = init_random(arch, default_seed(args.seed))
    elif args.weights:
        weights = WeightSet.load(args.weights)
    else:
        raise FlowmeshError("infer needs --weights or --init-random")
    if template_fields is not None and template_fields.space == "raw" and stats is None:
        template_fields = None
    outputs = image2flow_forward(image, template, weights, template_fields, stats, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for b, o in enumerate(outputs, start=1):
        fields = denormalize_fields(o.fields, stats) if stats is not None else o.fields
        fio.save_mesh(out / f"branch{b}.json", o.mesh, fields)
    summary = {
        "branches": len(outputs),
        "nodes": template.n_vertices,
        "channels": int(outputs[-1].state.shape[1]),
        "weights_sha256": weights.checksum(),
        "fields_space": "raw" if stats is not None else "normalized",
    }
    doc = _report("infer", {"image": _name(args.image), "template": _name(args.template)}, infer=summary)
    fio.write_json(out / "report.json", doc)
    return EXIT_OK


def cmd_transfer(args):
    src, src_fields = fio.load_mesh(args.src)
    dst, _ = fio.load_mesh(args.dst)
    if src_fields is None:
        raise FlowmeshError(f"{args.src} carries no point_data to transfer")
    fields, rep = transfer_fields(src, src_fields, dst.vertices)
    fio.save_mesh(args.out, dst, fields)
    if rep.extrapolated:
        logger.warning("%d of %d points lie outside the source mesh", rep.extrapolated, rep.n_points)
    if args.report:
        doc = _report("transfer", {"src": _name(args.src), "dst": _name(args.dst)}, transfer=rep.to_dict())
        fio.write_json(args.report, doc)
    return EXIT_OK


def cmd_eval_seg(args):
    pred, _ = fio.load_mesh(args.pred)
    truth, _ = fio.load_mesh(args.truth)
    grid = GridSpec.covering(np.vstack([pred.vertices, truth.vertices]), args.spacing)
    mp, mt = voxelize(pred, grid), voxelize(truth, grid)
    sd = surface_distances(pred, truth, args.hd_percentile)
    seg = {
        "dice": dice(mp, mt),
        "assd": sd["assd"],
        "hd": sd["hd"],
        "hd_percentile": args.hd_percentile,
        "voxels_pred": mp.count,
        "voxels_truth": mt.count,
        "grid": {"dims": list(grid.dims), "spacing": list(grid.spacing), "origin": list(grid.origin)},
    }
    report = MetricsReport(segmentation=seg)
    inputs = {"pred": _name(args.pred), "truth": _name(args.truth)}
    _emit(_report("eval-seg", inputs, **_sections(report)), args.report)
    return EXIT_OK


def _sections(report: MetricsReport, include_node_arrays=True) -> dict:
    d = report.to_dict(include_node_arrays)
    d.pop("format_version")
    return d


def _raw_fields(path, stats_path):
    mesh, fields = fio.load_mesh(path)
    if fields is None:
        raise FlowmeshError(f"{path} carries no point_data")
    if fields.space == "normalized":
        if not stats_path:
            raise FlowmeshError(f"{path} holds normalized fields; pass --stats to denormalize")
        fields = denormalize_fields(fields, fio.load_stats(stats_path))
    return mesh, fields


def cmd_eval_cfd(args):
    _, pred = _raw_fields(args.pred, args.stats)
    _, truth = _raw_fields(args.truth, args.stats)
    err = node_errors(pred, truth, skip_constant=args.skip_constant)
    cfd = {
        "n_nodes": len(truth),
        "channels": list(err["channels"]),
        "mnae_s": err["mnae_s"],
        "rmse": err["rmse"],
        "range": err["range"],
    }
    if args.node_arrays:
        cfd["nae"] = err["nae"]
    pc = np.column_stack([pred.pressure, pred.velocity, pred.speed])
    tc = np.column_stack([truth.pressure, truth.velocity, truth.speed])
    ba = {name: bland_altman(pc[:, i], tc[:, i]) for i, name in enumerate(ERROR_CHANNELS)}
    report = MetricsReport(cfd=cfd, bland_altman=ba)
    inputs = {"pred": _name(args.pred), "truth": _name(args.truth)}
    _emit(_report("eval-cfd", inputs, **_sections(report)), args.report)
    return EXIT_OK


def _pick_centerline(path, label):
    lines = fio.load_centerlines(path)
    if label is None:
        return lines[0]
    for c in lines:
        if c.label == label:
            return c
    raise FlowmeshError(f"no centerline labeled {label!r} in {path}")


def profile_csv(prof: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "pressure", "velocity_magnitude"])
    for row in zip(prof["s"], prof["pressure"], prof["velocity_magnitude"]):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def read_profile_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FlowmeshError(f"{path} has no profile rows")
    try:
        return {k: np.array([float(r[k]) for r in rows]) for k in ("s", "pressure", "velocity_magnitude")}
    except (KeyError, ValueError) as exc:
        raise FlowmeshError(f"malformed profile CSV {path}: {exc}") from None


def cmd_profile(args):
    mesh, fields = _raw_fields(args.mesh, args.stats)
    line = _pick_centerline(args.centerline, args.label)
    line = resample_centerline(line, args.resample)
    prof = centerline_profile(mesh, fields, line, k=args.k)
    text = profile_csv(prof)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_frechet(args):
    a = read_profile_csv(args.a)
    b = read_profile_csv(args.b)
    ch = args.channel
    rng = args.normalize_range
    if args.normalize_from:
        _, truth = _raw_fields(args.normalize_from, args.stats)
        vals = truth.pressure if ch == "pressure" else truth.speed
        rng = float(vals.max() - vals.min())
    fd = frechet(profile_curve(a["s"], a[ch]), profile_curve(b["s"], b[ch]))
    fd_norm = frechet(profile_curve(a["s"], a[ch]), profile_curve(b["s"], b[ch]), rng) if rng is not None else None
    section = {
        "channel": ch,
        "fd": fd,
        "fd_norm": fd_norm,
        "normalize_range": rng,
        "points_a": len(a["s"]),
        "points_b": len(b["s"]),
    }
    report = MetricsReport(frechet=section)
    _emit(_report("frechet", {"a": _name(args.a), "b": _name(args.b)}, **_sections(report)), args.report)
    return EXIT_OK


def cmd_convert(args):
    mesh, fields = fio.read_vtk_unstructured(args.from_vtk)
    fio.save_mesh(args.out, mesh, fields)
    return EXIT_OK


# ----------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowmesh", description="Template-mesh deformation, inference and flow evaluation.")
    p.add_argument("--threads", type=int, default=None, help="worker threads; results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a phantom bundle directory")
    s.add_argument("--kind", choices=("straight", "bifurcation"), default="straight")
    s.add_argument("--radius", type=float, default=10.0)
    s.add_argument("--length", type=float, default=80.0)
    s.add_argument("--branch-angle", type=float, default=60.0)
    s.add_argument("--target-nodes", type=int, default=2000)
    s.add_argument("--inlet-velocity", type=float, default=0.2)
    s.add_argument("--cross-divisions", type=int, default=None)
    s.add_argument("--axial-divisions", type=int, default=None)
    s.add_argument("--jitter", type=float, default=0.0)
    s.add_argument("--image-dims", type=int, default=64)
    s.add_argument("--no-image", action="store_true")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("perturb", help="radially perturb a phantom bundle")
    s.add_argument("--bundle", required=True)
    s.add_argument("--amplitude", type=float, required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--no-image", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("fit", help="deform a template mesh onto a target mesh")
    s.add_argument("--template", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trace", default=None, help="per-iteration CSV")
    s.add_argument("--report", default=None)
    s.add_argument("--max-iters", type=int, default=2000)
    s.add_argument("--step-size", type=float, default=0.05)
    s.add_argument("--beta-momentum", type=float, default=0.9)
    s.add_argument("--beta-variance", type=float, default=0.999)
    s.add_argument("--eps", type=float, default=1e-8)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--window", type=int, default=50)
    s.add_argument("--lambdas", type=float, nargs=5, default=None, metavar="L")
    s.add_argument("--with-fields", action="store_true", help="fit node fields under the CFD term")
    s.add_argument("--stats", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("average", help="node-wise mean of correspondent meshes")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_average)

    s = sub.add_parser("loss", help="evaluate the weighted mesh loss")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--lambdas", type=float, nargs=5, default=None, metavar="L")
    s.add_argument("--stats", default=None)
    s.add_argument("--cfd-pooling", choices=("mean", "channel_sum"), default="mean")
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("init-weights", help="write a seeded random weight set")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--arch", default=None, help="architecture JSON (defaults to the full model)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init_weights)

    s = sub.add_parser("infer", help="run the image-to-mesh forward pass")
    s.add_argument("--image", required=True)
    s.add_argument("--template", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--weights", default=None)
    g.add_argument("--init-random", action="store_true")
    s.add_argument("--arch", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--stats", default=None)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("transfer", help="interpolate fields from one mesh onto another")
    s.add_argument("--src", required=True)
    s.add_argument("--dst", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("eval-seg", help="Dice, ASSD and HD between two meshes")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--spacing", type=float, default=1.0)
    s.add_argument("--hd-percentile", type=float, default=None)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_eval_seg)

    s = sub.add_parser("eval-cfd", help="node-wise field errors and Bland-Altman")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--stats", default=None)
    s.add_argument("--skip-constant", action="store_true")
    s.add_argument("--node-arrays", action="store_true", help="include per-node NAE")
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_eval_cfd)

    s = sub.add_parser("profile", help="k-nearest-node field profile along a centerline")
    s.add_argument("--mesh", required=True)
    s.add_argument("--centerline", required=True)
    s.add_argument("--label", default=None)
    s.add_argument("--resample", type=int, default=100)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--stats", default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("frechet", help="discrete Frechet distance between two profiles")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--channel", choices=("pressure", "velocity_magnitude"), default="pressure")
    n = s.add_mutually_exclusive_group()
    n.add_argument("--normalize-range", type=float, default=None)
    n.add_argument("--normalize-from", default=None, help="truth mesh whose field range normalizes FD")
    s.add_argument("--stats", default=None)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_frechet)

    s = sub.add_parser("convert", help="import a legacy ASCII VTK tetrahedral grid")
    s.add_argument("--from-vtk", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_convert)
    return p


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    limit = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
    try:
        with limit:
            return args.func(args)
    except NumericalError as exc:
        sys.stderr.write(f"flowmesh {args.command}: numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (FlowmeshError, OSError, KeyError, TypeError, ValueError) as exc:
        sys.stderr.write(f"flowmesh {args.command}: {type(exc).__name__}: {exc}\n")
        return EXIT_INPUT


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
