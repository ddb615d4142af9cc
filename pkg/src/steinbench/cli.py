"""Command line entry point: ``steinbench <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 ingestion error, 3 solver
or sampler failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .core import (
    ConfigError,
    IngestionError,
    SteinbenchError,
    WeightedSample,
    format_float,
    load_sample,
    read_json,
    save_sample,
)
from .metrics import coupled_upper_bound, fit_rate, wasserstein_1d
from .operators import diffusion_from_config
from .samplers import ChainConfig, SamplerError, identity_metric, pseudo_huber_metric, run_mala, run_sgrld
from .spanner import build_greedy_spanner, load_edges, save_edges, verify_spanner
from .steinlp import BACKENDS, SolverError, default_spanner, spanner_stein_discrepancy
from .targets import target_from_config

logger = logging.getLogger("steinbench")

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_SOLVER = 0, 1, 2, 3


def _setup_logging():
    level = os.environ.get("STEINBENCH_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------
def _floats(text, what, count=None):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what}: cannot parse {text!r}") from None
    if count is not None and len(vals) != count:
        raise ConfigError(f"{what}: expected {count} comma separated values, got {len(vals)}")
    return vals


def _scales(text):
    vals = _floats(text, "--scales", 3)
    if any(not (np.isfinite(v) and v > 0) for v in vals):
        raise ConfigError("--scales must be positive")
    return tuple(vals)


def _stretch(t):
    if not (np.isfinite(t) and t >= 1):
        raise ConfigError(f"--stretch must be at least 1, got {t}")
    return t


def _config_dir(path):
    return os.path.dirname(os.path.abspath(path)) if isinstance(path, str) and os.path.exists(path) else None


def _load_target(args):
    if args.target is None:
        raise ConfigError("--target is required")
    obj = read_json(args.target)
    sec = obj.get("target", obj) if "kind" not in obj else obj
    if not isinstance(sec, dict) or not isinstance(sec.get("kind"), str):
        raise ConfigError("target configuration needs a string 'kind'")
    return target_from_config(sec, _config_dir(args.target)), sec, obj


def _load_diffusion(args, target, tsec, tobj):
    """Diffusion from --diffusion, else from the target file, else the default.

    The default is Langevin, except for the Student-t target where it is the
    pseudo-Huber diffusion matched to the SGRLD metric.
    """
    sec = None
    if getattr(args, "diffusion", None):
        obj = read_json(args.diffusion)
        sec = obj if "kind" in obj else obj.get("diffusion")
    elif isinstance(tobj.get("diffusion"), dict):
        sec = tobj["diffusion"]
    if sec is None:
        if tsec["kind"] == "studentt_pseudohuber":
            sec = {"kind": "riemannian_pseudo_huber", "delta": tsec["delta"], "scale": 2.0}
        else:
            sec = {"kind": "langevin"}
    if not isinstance(sec, dict) or not isinstance(sec.get("kind"), str):
        raise ConfigError("diffusion configuration needs a string 'kind'")
    return diffusion_from_config(sec, target.dim)


def _load_sample(args):
    if args.sample is None:
        raise ConfigError("--sample is required")
    return load_sample(args.sample, args.weights)


def _graph(args, sample):
    if getattr(args, "edges", None):
        return load_edges(args.edges, sample, args.stretch)
    return None


def _discrepancy(args):
    _stretch(args.stretch)
    target, tsec, tobj = _load_target(args)
    spec = _load_diffusion(args, target, tsec, tobj)
    sample = _load_sample(args)
    w = spanner_stein_discrepancy(
        sample, target, spec, t=args.stretch, scales=_scales(args.scales), graph=_graph(args, sample),
        threads=args.threads, backend=args.backend, pricing=args.pricing,
    )
    return sample, w


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_discrepancy(args) -> int:
    sample, w = _discrepancy(args)
    if args.out:
        w.save_json(args.out)
    if args.json:
        print(json.dumps({"value": w.value, "coord_values": [float(v) for v in w.coord_values], **w.info}))
    else:
        print(format_float(w.value))
    return EXIT_OK


def cmd_witness(args) -> int:
    sample, w = _discrepancy(args)
    cols = [f"x{k + 1}" for k in range(sample.d)] + ["weight", "h"]
    table = np.column_stack([sample.points, sample.weights, w.h_star])
    lines = ["# " + ",".join(cols)] + [",".join(format_float(v) for v in row) for row in table]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(format_float(w.value))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_spanner(args) -> int:
    sample = _load_sample(args)
    t = _stretch(args.stretch)
    graph = build_greedy_spanner(sample, t) if args.greedy else default_spanner(sample, t)
    chk = verify_spanner(graph, sample, t, threads=args.threads)
    if args.out:
        save_edges(graph, args.out)
    print(json.dumps({"n": sample.n, "n_edges": graph.n_edges, "stretch": t, "ok": chk.ok,
                      "pair": None if chk.pair is None else list(chk.pair)}))
    if not chk.ok:
        logger.error("spanner check failed at pair %s", chk.pair)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_sample(args) -> int:
    target, tsec, _ = _load_target(args)
    if args.out is None:
        raise ConfigError("--out is required")
    if args.sampler == "iid":
        if target.sampler is None:
            raise ConfigError(f"target {target.name} has no exact sampler")
        if args.n is None or args.n < 1:
            raise ConfigError("--n must be a positive integer")
        sample = target.sample(args.n, args.seed)
        meta = {"sampler": "iid", "n": args.n, "seed": args.seed}
    else:
        beta0 = None if args.beta0 is None else tuple(_floats(args.beta0, "--beta0"))
        cfg = ChainConfig(args.step_size, args.n_steps, args.thinning, args.minibatch, args.seed, beta0, args.burn_in)
        if args.sampler == "mala":
            run = run_mala(target, cfg)
        else:
            if args.metric == "pseudo_huber":
                delta = args.delta if args.delta is not None else tsec.get("delta")
                if delta is None:
                    raise ConfigError("--delta is required for the pseudo-Huber metric")
                metric = pseudo_huber_metric(float(delta))
            else:
                metric = identity_metric()
            run = run_sgrld(target, metric, cfg)
        sample, meta = run.sample, run.meta
    uniform = np.all(sample.weights == sample.weights[0])
    save_sample(sample, args.out, with_weights=not uniform)
    with open(args.out + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    print(json.dumps({"n": sample.n, "out": args.out, **{k: meta[k] for k in ("acceptance_rate",) if k in meta}}))
    return EXIT_OK


def _prefix(sample: WeightedSample, k: int) -> WeightedSample:
    w = sample.weights[:k]
    return WeightedSample(sample.points[:k], w / w.sum())


def cmd_compare(args) -> int:
    _stretch(args.stretch)
    target, tsec, tobj = _load_target(args)
    spec = _load_diffusion(args, target, tsec, tobj)
    sample = _load_sample(args)
    if args.sizes:
        sizes = [int(v) for v in _floats(args.sizes, "--sizes")]
    else:
        sizes, k = [], max(1, min(50, sample.n))
        while k < sample.n:
            sizes.append(k)
            k *= 2
        sizes.append(sample.n)
    if any(s < 1 or s > sample.n for s in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError(f"--sizes must increase strictly within [1, {sample.n}]")
    ref = None
    if args.reference:
        ref = load_sample(args.reference, args.weights)
    elif target.sampler is not None and args.reference_size > 0:
        ref = target.sample(args.reference_size, args.seed)
    scales = _scales(args.scales)
    rows = []
    for k in sizes:
        q = _prefix(sample, k)
        s = spanner_stein_discrepancy(q, target, spec, t=args.stretch, scales=scales, threads=args.threads,
                                      backend=args.backend, pricing=args.pricing).value
        w1 = wasserstein_1d(q, ref) if ref is not None and q.d == 1 else float("nan")
        bound = coupled_upper_bound(q, ref, target, spec) if ref is not None else float("nan")
        rows.append((k, s, w1, bound))
        logger.info("n=%d S=%.6g", k, s)
    lines = ["# n,S,W1,bound"] + [f"{k},{format_float(s)},{format_float(w)},{format_float(b)}" for k, s, w, b in rows]
    if len(rows) >= 3 and all(r[1] > 0 for r in rows):
        fit = fit_rate([r[0] for r in rows], [r[1] for r in rows])
        lines.append(f"# slope={format_float(fit.slope)} intercept={format_float(fit.intercept)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def _common(p, sample=True, target=True, lp=True):
    if sample:
        p.add_argument("--sample", help="sample CSV, one point per row")
        p.add_argument("--weights", default="auto", choices=("auto", "uniform", "column"),
                       help="how to read weights from the sample CSV")
    if target:
        p.add_argument("--target", help="target JSON (a section with 'kind', or an object with 'target')")
    p.add_argument("--out", help="output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--stretch", type=float, default=2.0, help="spanner stretch t >= 1")
    if lp:
        p.add_argument("--diffusion", help="diffusion JSON (defaults to Langevin)")
        p.add_argument("--scales", default="1,1,1", help="c1,c2,c3 bounds of the Stein set")
        p.add_argument("--backend", default="simplex", choices=BACKENDS)
        p.add_argument("--pricing", default="devex", choices=("devex", "dantzig"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="steinbench", description="Spanner diffusion Stein discrepancy tools.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discrepancy", help="compute the discrepancy of a sample")
    _common(p)
    p.add_argument("--edges", help="precomputed spanner edge CSV")
    p.add_argument("--json", action="store_true", help="print a JSON object instead of the bare value")
    p.set_defaults(func=cmd_discrepancy)

    p = sub.add_parser("witness", help="export h* = T g* at the sample points")
    _common(p)
    p.add_argument("--edges", help="precomputed spanner edge CSV")
    p.set_defaults(func=cmd_witness)

    p = sub.add_parser("spanner", help="build and verify a spanner, write its edges")
    _common(p, target=False, lp=False)
    p.add_argument("--greedy", action="store_true", help="use the greedy spanner also in one dimension")
    p.set_defaults(func=cmd_spanner)

    p = sub.add_parser("sample", help="draw a sample from a target")
    _common(p, sample=False, lp=False)
    p.add_argument("--sampler", default="iid", choices=("iid", "mala", "sgrld"))
    p.add_argument("--n", type=int, help="number of i.i.d. draws")
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--n-steps", type=int, default=1000)
    p.add_argument("--thinning", type=int, default=1)
    p.add_argument("--burn-in", type=float, default=0.1)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--beta0", help="initial state, comma separated")
    p.add_argument("--metric", default="pseudo_huber", choices=("pseudo_huber", "identity"))
    p.add_argument("--delta", type=float, help="pseudo-Huber metric scale (defaults to the target's delta)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("compare", help="discrepancy, W1 and coupled bound along sample prefixes")
    _common(p)
    p.add_argument("--sizes", help="comma separated prefix sizes")
    p.add_argument("--reference", help="reference sample CSV from the target")
    p.add_argument("--reference-size", type=int, default=2000,
                   help="size of the exact reference sample drawn when --reference is absent")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        return args.func(args)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SamplerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SteinbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
