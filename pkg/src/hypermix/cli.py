"""Batch experiment runner.

Every subcommand reads an optional JSON config, validates it against
:data:`CONFIG_SCHEMA`, and writes ``report.json`` plus CSV tables into the
output directory.  Reports depend only on the config and the seed; the wall
clock time and the command line go to the sidecar ``run.meta.json``.

Exit status: 0 on success, 2 when a decision is inconclusive, 1 on error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, HypermixError, Inconclusive

SUBCOMMANDS = ("steer", "tensor-steer", "group-build", "mix-cert", "orbit-coverage", "gallery", "lp-demo")

_decades = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}

PARAM_SCHEMAS = {
    "steer": {
        "n": {"type": "integer", "minimum": 1, "maximum": 8},
        "z_decades": _decades,
        "per_decade": {"type": "integer", "minimum": 1},
        "pairs": {"type": "integer", "minimum": 1},
    },
    "tensor-steer": {
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "pairs": {"type": "integer", "minimum": 1},
        "m_max": {"type": "integer", "minimum": 1, "maximum": 8},
        "tau": {"type": "number", "exclusiveMinimum": 0},
    },
    "group-build": {
        "k": {"type": "integer", "minimum": 1, "maximum": 4},
        "grade": {"type": "integer", "minimum": 0, "maximum": 12},
        "diagonal": {"enum": ["ones", "random"]},
        "slack": {"type": "number", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "samples": {"type": "integer", "minimum": 1},
    },
    "mix-cert": {
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "pairs": {"type": "integer", "minimum": 1},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "t_decades": _decades,
        "per_decade": {"type": "integer", "minimum": 1},
        "tau": {"type": "number", "exclusiveMinimum": 0},
    },
    "orbit-coverage": {
        "runs": {"type": "integer", "minimum": 1},
        "t_max": {"type": "number", "exclusiveMinimum": 0},
        "samples": {"type": "integer", "minimum": 2},
        "mesh": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
    },
    "gallery": {
        "samples": {"type": "integer", "minimum": 10},
        "u_shift": {"type": "number"},
    },
    "lp-demo": {
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "res": {"type": "integer", "minimum": 8},
        "t_max": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 1, "maximum": 2},
    },
}

DEFAULTS = {
    "steer": {"n": 2, "z_decades": [1, 5], "per_decade": 1, "pairs": 5},
    "tensor-steer": {"dims": [2, 2], "pairs": 20, "m_max": 5, "tau": 10.0},
    "group-build": {"k": 2, "grade": 6, "diagonal": "ones", "slack": 1, "tol": 1e-10, "samples": 50},
    "mix-cert": {"dims": [2, 2], "pairs": 20, "radius": 0.5, "t_decades": [1, 5], "per_decade": 2, "tau": 10.0},
    "orbit-coverage": {"runs": 10, "t_max": 100.0, "samples": 100000, "mesh": [64, 128]},
    "gallery": {"samples": 100000, "u_shift": 0.0},
    "lp-demo": {"eps": 1e-3, "p": 0.5, "res": 1024, "t_max": 20, "k": 1},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hypermix experiment config",
    "type": "object",
    "required": ["subcommand", "seed"],
    "additionalProperties": False,
    "properties": {
        "subcommand": {"enum": list(SUBCOMMANDS)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "arith": {"enum": ["float", "rational"]},
        "out": {"type": "string"},
        "params": {"type": "object"},
    },
    "allOf": [
        {
            "if": {"properties": {"subcommand": {"const": name}}},
            "then": {
                "properties": {
                    "params": {"type": "object", "properties": props, "additionalProperties": False}
                }
            },
        }
        for name, props in PARAM_SCHEMAS.items()
    ],
}


def validate_config(config: dict) -> dict:
    """Validate and fill defaults; raises :class:`ConfigError` naming the field path."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        parts = [str(p) for p in err.absolute_path]
        if err.validator == "required":
            parts += [r for r in err.validator_value if r not in err.instance][:1]
        path = "/".join(parts) or "<root>"
        raise ConfigError(f"{path}: {err.message}", path=tuple(parts))
    full = copy.deepcopy(config)
    params = copy.deepcopy(DEFAULTS[config["subcommand"]])
    params.update(config.get("params", {}))
    full["params"] = params
    full.setdefault("arith", "float")
    return full


def max_workers() -> int:
    env = os.environ.get("HYPERMIX_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"HYPERMIX_THREADS must be an integer, got {env!r}", path="HYPERMIX_THREADS") from exc
    return cap


def _pmap(func, items):
    """Order-preserving map over independent work items."""
    items = list(items)
    workers = min(max_workers(), max(len(items), 1))
    if workers == 1:
        return [func(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def _decade_grid(decades, per_decade):
    lo, hi = decades
    return np.logspace(lo, hi, (hi - lo) * per_decade + 1)


# --------------------------------------------------------------------------
# subcommands; each returns (report dict, {csv name: (header, rows)})


def run_steer(cfg, rng):
    from .jordan import ShiftBlock, SteeringProblem, solve_steering, verify_decay

    p = cfg["params"]
    n = p["n"]
    block = ShiftBlock(n)
    zs = _decade_grid(p["z_decades"], p["per_decade"])
    pairs = [(rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)) for _ in range(p["pairs"])]
    exact = cfg["arith"] == "rational"
    rows = []
    for pi, (u, v) in enumerate(pairs):
        for z in zs:
            zz = Fraction(int(round(z))) if exact and float(z).is_integer() else (Fraction(z) if exact else z)
            uu = np.array([Fraction(x) for x in u], dtype=object) if exact else u
            vv = np.array([Fraction(x) for x in v], dtype=object) if exact else v
            sol = solve_steering(SteeringProblem(block, zz, uu, vv), exact=exact)
            x = np.array([float(t) for t in sol.x])
            img = np.array([float(t) for t in sol.image])
            rows.append(
                (pi, float(z), float(np.max(np.abs(x - block.embed(u)))), float(np.max(np.abs(img - block.embed(v)))))
            )
    decay = verify_decay(block, pairs, 1.0, zs)
    report = {
        "n": n,
        "z": list(zs),
        "slopes_x": list(decay.slopes_u),
        "slopes_image": list(decay.slopes_v),
        "predicted_slopes": [-(j + 1) for j in range(n)],
        "constant": decay.c,
        "max_residual_at_largest_z": max(max(r[2], r[3]) for r in rows if r[1] == zs[-1]),
    }
    tables = {
        "residuals.csv": (["pair", "z_abs", "residual_x", "residual_image"], rows),
        "decay.csv": (["z_abs", "j", "sup_tail_x", "sup_tail_image"], [tuple(r.values()) for r in decay.rows()]),
    }
    return report, tables


def run_tensor_steer(cfg, rng):
    from .tensor import build_tensor_tuple, steer_tensor

    p = cfg["params"]
    tt = build_tensor_tuple(p["dims"])
    z_seq = [(10.0**m,) * tt.k for m in range(1, p["m_max"] + 1)]

    def one(i):
        u = tt.embed_e(rng_pairs[i][0])
        v = tt.embed_e(rng_pairs[i][1])
        return steer_tensor(tt, u, v, z_seq, tau=p["tau"])

    rng_pairs = [(rng.uniform(-1, 1, tt.dims), rng.uniform(-1, 1, tt.dims)) for _ in range(p["pairs"])]
    results = _pmap(one, range(p["pairs"]))
    rows = []
    for i, res in enumerate(results):
        for m, (rx, ri) in enumerate(zip(res.residual_x, res.residual_image), start=1):
            rows.append((i, m, float(rx), float(ri)))
    worst = max(max(r.residual_x[-1], r.residual_image[-1]) for r in results)
    report = {
        "dims": list(tt.dims),
        "tau": p["tau"],
        "z": [list(z) for z in z_seq],
        "worst_final_residual": float(worst),
        "decreasing_tail": [r.decreasing_tail() for r in results],
    }
    return report, {"residuals.csv": (["pair", "m", "residual_x", "residual_image"], rows)}


def run_group_build(cfg, rng):
    import scipy.linalg as sla

    from .seqspace import build_model, continuity_bound, exp_group_apply

    p = cfg["params"]
    exact = cfg["arith"] == "rational"
    from .seqspace import GradedIndex

    size = GradedIndex(p["k"]).count_up_to(p["grade"])
    if p["diagonal"] == "ones":
        diag = [1] * size
    else:
        diag = [Fraction(int(v), 4) for v in rng.integers(2, 9, size)]
    model = build_model(p["k"], p["grade"], f_values=diag, slack=Fraction(p["slack"]), exact=exact)
    ops_exact = model.operators(exact=True) if exact else None
    commute = None
    if ops_exact is not None:
        dense = [o.to_dense(exact=True) for o in ops_exact]
        commute = all(
            np.array_equal(a.dot(b), b.dot(a)) for i, a in enumerate(dense) for b in dense[i + 1 :]
        )
    ops = model.operators(exact=False)
    rows = []
    oracle = []
    for _ in range(p["samples"]):
        z = rng.normal(size=p["k"]) + 1j * rng.normal(size=p["k"])
        z *= 2 * rng.uniform() / np.sum(np.abs(z))
        x = rng.normal(size=model.size)
        res = exp_group_apply(model, z, x, tol=p["tol"], ops=ops)
        lhs = model.q(res.value - x)
        rhs = continuity_bound(model, z, x)
        lin = sum(zj * o.to_dense() for zj, o in zip(z, ops))
        if model.size <= 64:
            oracle.append(float(np.max(np.abs(res.value - sla.expm(lin) @ x))))
        rows.append((float(np.sum(np.abs(z))), res.terms, res.bound, lhs, rhs))
    report = {
        "size": model.size,
        "boundary_grade": model.boundary_grade,
        "commute_exact": commute,
        "continuity_violations": sum(1 for r in rows if r[3] > r[4]),
        "max_oracle_difference": max(oracle) if oracle else None,
        "model": json.loads(model.to_json()),
    }
    coeffs = [(j, " ".join(map(str, n)), float(c)) for j, n, c in model.coefficients()]
    return report, {
        "coefficients.csv": (["j", "n", "c"], coeffs),
        "group_samples.csv": (["z_l1", "terms", "tail_bound", "q_difference", "continuity_bound"], rows),
    }


def run_mix_cert(cfg, rng):
    from .mixing import MatrixGroup, OpenBall, ShiftTupleGroup, certify_mixing, log_grid, random_ball_pairs

    p = cfg["params"]
    group = ShiftTupleGroup(p["dims"], tau=p["tau"])
    pairs = random_ball_pairs(group, p["pairs"], p["radius"], rng)
    grid = log_grid(group.k, tuple(p["t_decades"]), p["per_decade"])
    basis = group.kernel_basis()
    certs = _pmap(lambda uv: certify_mixing(group, basis, uv[0], uv[1], grid), pairs)
    ident = MatrixGroup(np.zeros((2, 2)))
    neg_id = certify_mixing(ident, ident.kernel_basis(), OpenBall([0.0, 0.0], 0.5), OpenBall([3.0, 0.0], 0.5), [(10.0**i,) for i in range(1, 6)])
    rot = MatrixGroup(np.array([[1j]]))
    neg_rot = certify_mixing(
        rot, rot.kernel_basis(), OpenBall(np.array([1 + 0j]), 0.1), OpenBall(np.array([2 + 0j]), 0.1), [(float(t),) for t in np.linspace(1, 1000, 200)]
    )
    rows = []
    for i, c in enumerate(certs):
        for w in c.witnesses:
            rows.append((i, float(np.linalg.norm(w.t)), w.dist_u, w.dist_v))
    report = {
        "kind": "sampled evidence, not a proof",
        "dims": list(group.tuple.dims),
        "tau": group.tau,
        "radius": p["radius"],
        "r_per_pair": [c.r for c in certs],
        "failures_per_pair": [len(c.failures) for c in certs],
        "negative_controls": {"identity_empty": neg_id.empty, "rotation_empty": neg_rot.empty},
        "certificates": [c.to_dict() for c in certs],
    }
    return report, {"witnesses.csv": (["pair", "t_abs", "dist_u", "dist_v"], rows)}


def run_orbit_coverage(cfg, rng):
    from .mixing import orbit_coverage_3d

    p = cfg["params"]
    seeds = [int(s) for s in rng.integers(0, 2**32, p["runs"])]

    def one(s):
        r = np.random.default_rng(s)
        A = r.normal(size=(3, 3))
        x = r.normal(size=3)
        return orbit_coverage_3d(A, x, p["t_max"], p["samples"], tuple(p["mesh"]))

    res = _pmap(one, seeds)
    rows = [(s, r.hit, r.cells, r.fraction) for s, r in zip(seeds, res)]
    report = {"max_fraction": max(r.fraction for r in res), "runs": len(res), "mesh": p["mesh"]}
    return report, {"coverage.csv": (["seed", "hit", "cells", "fraction"], rows)}


def run_gallery(cfg, rng):
    from .gallery import b2cp_scenario

    p = cfg["params"]
    rep = b2cp_scenario(u_shift=p["u_shift"], samples=p["samples"], seed=int(rng.integers(0, 2**32)))
    rows = [(c, k, w.real, w.imag, abs(w)) for c, k, w in rep.witnesses]
    return rep.to_dict(), {"witnesses.csv": (["cell", "kind", "image_re", "image_im", "modulus"], rows)}


def run_lp_demo(cfg, rng):
    from .lpgrid import kernel_density_probe, standard_bump, translation_group_check, unit_cube_field

    p = cfg["params"]
    f = standard_bump(p["k"])
    tr = translation_group_check(f, [(float(n),) * p["k"] for n in range(1, p["t_max"] + 1)], eps=p["eps"])
    targets = [
        unit_cube_field(lambda *x: np.ones_like(x[0]), p["res"], p["k"]),
        unit_cube_field(lambda *x: 1.0 + 0.5 * np.sin(7 * sum(x)), p["res"], p["k"]),
    ]
    probe = kernel_density_probe(targets, p["eps"], p=p["p"])
    report = {
        "eps": p["eps"],
        "escape_radius": tr.escape_radius,
        "windows": tr.metric.n_max,
        "below_eps_beyond_escape": tr.below_eps_beyond_escape,
        "continuity_monotone": tr.continuity_monotone,
        "group_law_error": tr.group_law_error,
        "density_probe": [
            {"delta": r.delta, "distance": r.distance, "powers": r.annihilating_power, "in_ker": r.in_ker} for r in probe
        ],
    }
    return report, {
        "translation.csv": (["t_abs", "d0_plus", "d0_minus", "upper_plus", "upper_minus"], tr.rows),
        "continuity.csv": (["shift", "d0"], tr.continuity),
    }


RUNNERS = {
    "steer": run_steer,
    "tensor-steer": run_tensor_steer,
    "group-build": run_group_build,
    "mix-cert": run_mix_cert,
    "orbit-coverage": run_orbit_coverage,
    "gallery": run_gallery,
    "lp-demo": run_lp_demo,
}


def run(config: dict, out: Path | None = None, argv=None) -> int:
    """Run one validated experiment and write its artifacts; returns the exit status."""
    cfg = validate_config(config)
    out = Path(out or cfg.get("out") or Path("hypermix-out") / cfg["subcommand"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    status = 0
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        report, tables = RUNNERS[cfg["subcommand"]](cfg, rng)
    except Inconclusive as exc:
        report, tables, status = {"inconclusive": str(exc)}, {}, 2
    body = {"config": {k: v for k, v in cfg.items() if k != "out"}, "result": report}
    (out / "report.json").write_text(json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")
    for name, (header, rows) in tables.items():
        _write_csv(out / name, header, rows)
    meta = {
        "started": started.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "argv": list(argv) if argv is not None else None,
        "threads": max_workers(),
        "status": status,
    }
    (out / "run.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypermix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", type=Path, help="JSON config file")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--arith", choices=["float", "rational"], help="arithmetic mode")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        config = {}
        if args.config is not None:
            config = json.loads(args.config.read_text())
            if not isinstance(config, dict):
                raise ConfigError("<root>: config must be a JSON object", path="<root>")
        if config.get("subcommand", args.subcommand) != args.subcommand:
            raise ConfigError(
                f"subcommand: config is for {config['subcommand']!r}, not {args.subcommand!r}", path="subcommand"
            )
        config["subcommand"] = args.subcommand
        if args.seed is not None:
            config["seed"] = args.seed
        if args.arith is not None:
            config["arith"] = args.arith
        if args.out is not None:
            config["out"] = str(args.out)
        return run(config, argv=argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (HypermixError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
