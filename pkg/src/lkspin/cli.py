"""Command line front end: closed forms, simulation, estimation, validation.

Every subcommand prints a single JSON document (default) or a CSV table to
stdout, or to --output when given.  Outputs carry no timestamps, so repeated
invocations with identical arguments are byte-identical.  Exit codes:
0 success, 1 bad configuration or a domain error, 2 a validation breach
(mc-validate only, after results are persisted).
"""

import argparse
import hashlib
import json
import math
import re
import sys

import numpy as np

from . import __version__, mc, so3geom
from .expectations import (
    Eigentriple,
    QuadratureError,
    _e_pair,
    e1_closed,
    e2_closed,
    expected_lk_euclidean,
    expected_lk_spin,
)
from .lkestim import (
    DegeneratePointError,
    UnreliableEstimateError,
    build_grid,
    extract_level_surface,
    report,
)
from .spinfield import SpectrumSpec, sample


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1 (config errors)."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # Accept range values that begin with a negative number (-1:1:0.5);
        # no option string of this CLI starts with a digit, so this is safe.
        self._negative_number_matcher = re.compile(r"^-\d")

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def parse_u_range(text):
    """'v' or 'start:stop:step' with both endpoints inclusive (tol 1e-12)."""
    parts = text.split(":")
    if len(parts) == 1:
        return [float(text)]
    if len(parts) != 3:
        raise ValueError(f"u range must be 'value' or 'start:stop:step', got {text!r}")
    a, b, c = (float(x) for x in parts)
    if not c > 0:
        raise ValueError("u range step must be positive")
    if b < a - 1e-12:
        raise ValueError("u range stop must not be below start")
    count = int(math.floor((b - a) / c + 1e-12)) + 1
    return [a + k * c for k in range(count)]


def _fmt(value):
    if value is None:
        return "nan"
    if isinstance(value, str):
        return value
    return "%.17g" % float(value)


def _json_text(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _csv_text(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[k]) for k in header))
    return "\n".join(lines) + "\n"


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _add_output_args(p):
    p.add_argument("--out", choices=("json", "csv"), default="json", help="output format")
    p.add_argument("--output", metavar="FILE", default=None, help="write to FILE instead of stdout")


def _add_spec_args(p):
    g = p.add_argument_group("spectrum (choose --spec, --two-band, or the power-law flags)")
    g.add_argument("--spec", metavar="FILE", default=None, help="load a spectrum JSON file")
    g.add_argument("--two-band", action="store_true", help="two-line spectrum hitting --xi exactly")
    g.add_argument("--xi", type=float, default=None, help="target gradient rate for --two-band")
    g.add_argument("--s", type=int, default=None, help="spin weight")
    g.add_argument("--l-min", type=int, default=None, help="lowest degree of the power-law band")
    g.add_argument("--l-max", type=int, default=None, help="highest degree of the power-law band")
    g.add_argument("--exponent", type=float, default=-2.0, help="power-law exponent (default -2)")


def _spec_from_args(args) -> SpectrumSpec:
    if args.spec is not None:
        with open(args.spec) as fh:
            return SpectrumSpec.from_json_dict(json.load(fh))
    if args.two_band:
        if args.xi is None or args.s is None:
            raise ValueError("--two-band requires --xi and --s")
        return SpectrumSpec.two_band(args.xi, args.s)
    if args.s is None or args.l_min is None or args.l_max is None:
        raise ValueError("power-law spectrum requires --s, --l-min, and --l-max")
    return SpectrumSpec.power_law(args.s, args.l_min, args.l_max, exponent=args.exponent)


def _lk_row(u, vec, regime=None):
    row = {"u": u, "L0": vec.l0, "L1": vec.l1, "L2": vec.l2, "L3": vec.l3}
    if regime is not None:
        row["regime"] = regime
    return row


def _mesh_to_off(mesh) -> str:
    """OFF dump in chart coordinates; vertices deduplicated by grid-edge key.

    Faces meeting the chart seams keep cell-local coordinates, so the file is
    combinatorially closed but geometrically cut along the periodic faces.
    """
    if not len(mesh.triangles):
        return "OFF\n0 0 0\n"
    keys = mesh.vertex_keys.reshape(-1, 2)
    pts = mesh.triangles.reshape(-1, 3)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    verts = pts[first]
    faces = inverse.reshape(-1, 3)
    lines = ["OFF", f"{len(verts)} {len(faces)} 0"]
    for v in verts:
        lines.append(" ".join("%.17g" % x for x in v))
    for f in faces:
        lines.append("3 %d %d %d" % tuple(f))
    return "\n".join(lines) + "\n"


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_expect(args):
    rows = []
    for u in parse_u_range(args.u):
        e = expected_lk_spin(args.xi, args.s, u, manifold=args.manifold)
        rows.append(_lk_row(u, e.values, e.regime))
    if args.out == "csv":
        text = _csv_text(("u", "L0", "L1", "L2", "L3", "regime"), rows)
    else:
        text = _json_text(
            {"xi": args.xi, "s": args.s, "manifold": args.manifold, "rows": rows}
        )
    _emit(text, args.output)
    return 0


def cmd_euclidean(args):
    t = Eigentriple(args.a, args.b, args.c)
    rows = []
    constants = None
    for u in parse_u_range(args.u):
        e, constants = expected_lk_euclidean(t, u, args.volume)
        rows.append(_lk_row(u, e.values, e.regime))
    if args.out == "csv":
        text = _csv_text(("u", "L0", "L1", "L2", "L3", "regime"), rows)
    else:
        text = _json_text(
            {
                "a": [t.a1, t.a2, t.a3],
                "volume": args.volume,
                "constants": constants,
                "rows": rows,
            }
        )
    _emit(text, args.output)
    return 0


def cmd_geometry(args):
    metric = so3geom.LeftInvariantMetric(args.xi, args.s)
    theta = args.theta
    doc = {
        "xi": args.xi,
        "s": args.s,
        "theta": theta,
        "gram": so3geom.gram(metric, theta).tolist(),
        "gram_inverse": so3geom.gram_inverse(metric, theta).tolist(),
        "christoffel": so3geom.christoffel(metric, theta).tolist(),
        "scalar_curvature": float(so3geom.scalar_curvature(metric)),
        "sectional": {
            "12": float(so3geom.sectional(metric, theta, (1, 2))),
            "13": float(so3geom.sectional(metric, theta, (1, 3))),
            "23": float(so3geom.sectional(metric, theta, (2, 3))),
        },
        "volume_element": float(so3geom.volume_element(metric, theta)),
        "lk_so3": [float(x) for x in so3geom.lk_so3(metric)],
    }
    if args.out == "csv":
        rows = []

        def flat(name, value):
            arr = np.asarray(value)
            if arr.ndim == 0:
                rows.append({"name": name, "value": float(arr)})
            else:
                for idx in np.ndindex(arr.shape):
                    tag = "".join(f"[{i}]" for i in idx)
                    rows.append({"name": name + tag, "value": float(arr[idx])})

        for key in ("xi", "s", "theta", "gram", "gram_inverse", "christoffel",
                    "scalar_curvature", "volume_element", "lk_so3"):
            flat(key, doc[key])
        for plane, val in doc["sectional"].items():
            rows.append({"name": f"sectional[{plane}]", "value": val})
        text = _csv_text(("name", "value"), rows)
    else:
        text = _json_text(doc)
    _emit(text, args.output)
    return 0


def cmd_e_funcs(args):
    t = Eigentriple(args.a, args.b, args.c)
    srt = sorted((t.a1, t.a2, t.a3))
    closed = any(
        abs(srt[i] - srt[i + 1]) <= 1e-12 * max(srt[i], srt[i + 1]) for i in (0, 1)
    )
    e1, e2 = _e_pair(t)
    doc = {
        "a1": t.a1,
        "a2": t.a2,
        "a3": t.a3,
        "e1": e1,
        "e2": e2,
        "method": "closed" if closed else "quadrature",
    }
    if args.out == "csv":
        text = _csv_text(("a1", "a2", "a3", "e1", "e2", "method"), [doc])
    else:
        text = _json_text(doc)
    _emit(text, args.output)
    return 0


def cmd_synth(args):
    spec = _spec_from_args(args)
    realization = sample(spec, args.seed)
    grid = build_grid(realization, args.resolution)
    saved = None
    if args.save_realization:
        with open(args.save_realization, "w") as fh:
            fh.write(realization.to_json())
        saved = args.save_realization
    doc = {
        "spec": spec.to_json_dict(),
        "seed": args.seed,
        "resolution": args.resolution,
        "xi_squared": spec.xi_squared(),
        "grad_scale": realization.grad_scale(),
        "field_mean": float(grid.f.mean()),
        "field_std": float(grid.f.std()),
        "field_min": float(grid.f.min()),
        "field_max": float(grid.f.max()),
        "realization_file": saved,
    }
    if args.out == "csv":
        keys = ("seed", "resolution", "xi_squared", "grad_scale",
                "field_mean", "field_std", "field_min", "field_max")
        rows = [{"name": k, "value": doc[k]} for k in keys]
        text = _csv_text(("name", "value"), rows)
    else:
        text = _json_text(doc)
    _emit(text, args.output)
    return 0


def cmd_estimate(args):
    spec = _spec_from_args(args)
    thresholds = parse_u_range(args.u)
    if args.save_mesh and len(thresholds) != 1:
        raise ValueError("--save-mesh needs a single threshold, not a range")
    realization = sample(spec, args.seed)
    grid = build_grid(realization, args.resolution)
    rows = [
        report(grid, u, l2_method=args.l2_method, l0_method=args.l0_method)
        for u in thresholds
    ]
    if args.save_mesh:
        mesh = extract_level_surface(grid, thresholds[0])
        with open(args.save_mesh, "w") as fh:
            fh.write(_mesh_to_off(mesh))
    header = ("u", "L0_gb", "L0_morse", "L1", "L2", "L3", "skipped_area_fraction")
    if args.out == "csv":
        text = _csv_text(header, rows)
    else:
        text = _json_text(
            {
                "spec": spec.to_json_dict(),
                "seed": args.seed,
                "resolution": args.resolution,
                "rows": rows,
                "mesh_file": args.save_mesh,
            }
        )
    _emit(text, args.output)
    return 0


def cmd_mc_validate(args):
    spec = _spec_from_args(args)
    prefix = args.output_prefix
    if args.check == "lk":
        cfg = mc.ExperimentConfig(
            spec=spec,
            resolution=args.resolution,
            thresholds=tuple(parse_u_range(args.u)),
            trials=args.trials if args.trials is not None else 100,
            seed=args.seed,
            l0_method=args.l0_method,
            l2_method=args.l2_method,
        )
        result = mc.run_experiment(cfg, n_jobs=args.threads)
        paths = mc.write_experiment(result, prefix)
        worst = result.max_abs_z()
        summary = {
            "check": "lk",
            "config_hash": result.config_hash,
            "exclusions": {str(k): v for k, v in result.exclusions.items()},
            "max_abs_z": worst,
            "z_max": args.z_max,
            "files": paths,
        }
        breach = worst > args.z_max
    else:
        trials = args.trials if args.trials is not None else 10000
        if args.check == "metric":
            rep = mc.validate_metric(spec, trials=trials, seed=args.seed, n_jobs=args.threads)
            breach = rep["max_abs_z"] > args.z_max
        else:
            rep = mc.validate_covariance(spec, trials=trials, seed=args.seed, n_jobs=args.threads)
            breach = (
                rep["max_abs_z"] > args.z_max
                or rep["spin_identity_residual"] > args.residual_max
            )
        config = {"check": args.check, "seed": args.seed, "spec": spec.to_json_dict(), "trials": trials}
        paths = {"results_json": prefix + ".json", "manifest": prefix + ".manifest.json"}
        with open(paths["results_json"], "w") as fh:
            fh.write(_json_text(rep))
        manifest = {
            "config_hash": _config_hash(config),
            "seed": args.seed,
            "code_version": __version__,
            "files": [paths["results_json"].rsplit("/", 1)[-1]],
        }
        with open(paths["manifest"], "w") as fh:
            fh.write(_json_text(manifest))
        summary = {
            "check": args.check,
            "config_hash": manifest["config_hash"],
            "max_abs_z": rep["max_abs_z"],
            "z_max": args.z_max,
            "files": paths,
        }
        if args.check == "covariance":
            summary["spin_identity_residual"] = rep["spin_identity_residual"]
            summary["residual_max"] = args.residual_max
    summary["status"] = "breach" if breach else "ok"
    _emit(_json_text(summary), args.output)
    return 2 if breach else 0


def cmd_d1_test(args):
    u_grid = parse_u_range(args.u)
    spec = SpectrumSpec.two_band(args.xi, args.s)
    verdict = mc.discriminate_d1(
        spec=spec,
        u_grid=u_grid,
        trials=args.trials,
        resolutions=(args.coarse_resolution, args.resolution),
        seed=args.seed,
        n_jobs=args.threads,
    )
    doc = verdict.to_json_dict()
    doc["xi"] = args.xi
    doc["s"] = args.s
    doc["u_grid"] = u_grid
    _emit(_json_text(doc), args.output)
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="lkspin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lkspin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("expect",
                       help="expected excursion-set curvatures of the spin field")
    p.add_argument("--xi", type=float, required=True, help="gradient rate (root of xi^2)")
    p.add_argument("--s", type=float, required=True, help="spin weight")
    p.add_argument("--u", required=True, help="threshold or start:stop:step range")
    p.add_argument("--manifold", choices=("so3", "su2"), default="so3")
    _add_output_args(p)
    p.set_defaults(func=cmd_expect)

    p = sub.add_parser("euclidean",
                       help="flat-space expected curvatures for gradient variances (a,b,c)")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--u", required=True, help="threshold or start:stop:step range")
    p.add_argument("--volume", type=float, default=1.0, help="window volume (default 1)")
    _add_output_args(p)
    p.set_defaults(func=cmd_euclidean)

    p = sub.add_parser("geometry",
                       help="left-invariant metric tensors and curvatures at a chart point")
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--theta", type=float, required=True, help="chart colatitude in (0, pi)")
    _add_output_args(p)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("e-funcs",
                       help="mean gradient functionals e1, e2 for variances (a,b,c)")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    _add_output_args(p)
    p.set_defaults(func=cmd_e_funcs)

    p = sub.add_parser("synth",
                       help="draw one field realization and summarize it on a grid")
    _add_spec_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--save-realization", metavar="FILE", default=None,
                   help="write the realization (spectrum + seed) as JSON")
    _add_output_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate",
                       help="geometric estimates of excursion-set curvatures for one realization")
    _add_spec_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--u", required=True, help="threshold or start:stop:step range")
    p.add_argument("--l2-method", choices=("mesh", "crossings"), default="mesh")
    p.add_argument("--l0-method", choices=("gb", "morse", "both"), default="both")
    p.add_argument("--save-mesh", metavar="FILE", default=None,
                   help="write the level surface as an OFF mesh (single threshold only)")
    _add_output_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mc-validate",
                       help="Monte Carlo validation; persists results, exit 2 on breach")
    p.add_argument("--check", choices=("lk", "metric", "covariance"), required=True)
    _add_spec_args(p)
    p.add_argument("--trials", type=int, default=None,
                   help="default 100 for lk, 10000 for metric/covariance")
    p.add_argument("--resolution", type=int, default=64, help="grid size for --check lk")
    p.add_argument("--u", default="-1:1:1", help="thresholds for --check lk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker count (default: LKSPIN_THREADS or all cores)")
    p.add_argument("--l2-method", choices=("mesh", "crossings"), default="mesh")
    p.add_argument("--l0-method", choices=("gb", "morse", "both"), default="both")
    p.add_argument("--output-prefix", required=True, metavar="PREFIX",
                   help="results are written to PREFIX.json/.csv/.manifest.json")
    p.add_argument("--z-max", type=float, default=4.0, help="breach threshold on |z|")
    p.add_argument("--residual-max", type=float, default=1e-10,
                   help="breach threshold on the rotation-phase identity residual")
    p.add_argument("--output", metavar="FILE", default=None,
                   help="write the summary JSON to FILE instead of stdout")
    p.set_defaults(func=cmd_mc_validate)

    p = sub.add_parser("d1-test",
                       help="empirical test separating the two candidate L1 coefficients")
    p.add_argument("--xi", type=float, default=10.0)
    p.add_argument("--s", type=int, default=2)
    p.add_argument("--u", default="1.0", help="positive threshold(s) to pair as +/-u")
    p.add_argument("--trials", type=int, default=24)
    p.add_argument("--resolution", type=int, default=96,
                   help="fine grid of the two-point extrapolation pair")
    p.add_argument("--coarse-resolution", type=int, default=64,
                   help="coarse grid of the extrapolation pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--output", metavar="FILE", default=None)
    p.set_defaults(func=cmd_d1_test)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        ValueError,
        OSError,
        RuntimeError,
        QuadratureError,
        UnreliableEstimateError,
        DegeneratePointError,
    ) as exc:
        print(f"lkspin: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
