"""Command-line experiment harness: ``generate | run | exact | diagnose``.

Data go to files, progress to stderr. Any subcommand accepts
``--config FILE.json``; keys in the file (named like the long flags, with
underscores) override the command line.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .dataset import (ConfigError, GenConfig, RegularityParams, estimate_src,
                      generate_synthetic, load_dataset, save_dataset)
from .diagnostics import (DEFAULT_C1, DEFAULT_C2, MATRIX_CAP, build_transition_matrix,
                          check_assumption_4_1, check_margin_condition,
                          identifiability_margin, measure_mixing, mixing_bound_theorem)
from .exp_mechanism import (DEFAULT_ENUM_CAP, EnumerationCapError, approx_dp_delta,
                            exact_distribution, exact_sample)
from .mh_sampler import ChainConfig, chain_summary, make_rng, run_parallel_chains
from .subset_score import PrivacyParams

SUMMARY_FIELDS = ["epsilon", "K", "chain", "final_fscore", "accept_rate", "steps", "seconds"]


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return int(args.threads)
    return int(os.environ.get("DPBSS_THREADS", "1") or 1)


# ---------------------------------------------------------------------------
# dataset resolution

def _add_data_args(ap: argparse.ArgumentParser) -> None:
    g = ap.add_argument_group("dataset (either --data or inline generation)")
    g.add_argument("--data", help="dataset CSV written by `generate`")
    g.add_argument("--n", type=int, default=900)
    g.add_argument("--p", type=int, default=2000)
    g.add_argument("--s", type=int, default=None,
                   help="sparsity (default: dataset metadata, else 4)")
    g.add_argument("--signal", default="strong", choices=["strong", "weak"])
    g.add_argument("--noise", type=float, default=0.1, help="noise half-width")
    g.add_argument("--data-seed", type=int, default=1, help="generator seed for inline data")


def _resolve_dataset(args):
    """Returns ``(Dataset, meta)``; meta may hold support, beta, sigma."""
    if args.data:
        ds, meta = load_dataset(args.data)
        if "s" not in meta and meta.get("support") is not None:
            meta["s"] = len(meta["support"])
        return ds, meta
    cfg = GenConfig(n=args.n, p=args.p, s=4 if args.s is None else args.s,
                    signal=args.signal, noise=args.noise, seed=args.data_seed)
    ds, support, beta = generate_synthetic(cfg)
    return ds, {"support": list(support), "beta": beta.tolist(), "sigma": cfg.sigma,
                "s": cfg.s, "seed": cfg.seed}


def _sparsity(args, meta) -> int:
    if args.s is not None:
        return int(args.s)
    return int(meta.get("s", 4))


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> int:
    cfg = GenConfig(n=args.n, p=args.p, s=args.s, signal=args.signal,
                    noise=args.noise, seed=args.seed)
    ds, support, beta = generate_synthetic(cfg)
    values = cfg.signal_values()
    extra = {"s": cfg.s, "signal": cfg.signal, "noise": cfg.noise, "sigma": cfg.sigma,
             "beta_j": float(values[0]) if len(values) else 0.0}
    path, meta_path = save_dataset(ds, args.out, seed=cfg.seed, support=support,
                                   beta=beta, extra=extra)
    _log(f"wrote {path} and {meta_path} (beta_j = {extra['beta_j']:.6g})")
    return 0


def _write_summary(out: Path, cells: list) -> None:
    (out / "summary.json").write_text(json.dumps({"cells": cells}, indent=2))
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for cell in cells:
            for i, ch in enumerate(cell.get("chains", [])):
                w.writerow({"epsilon": repr(cell["epsilon"]), "K": repr(cell["K"]), "chain": i,
                            "final_fscore": "" if ch.get("final_fscore") is None
                            else repr(ch["final_fscore"]),
                            "accept_rate": repr(ch["accept_rate"]), "steps": ch["steps"],
                            "seconds": repr(ch["seconds"])})


def read_summary_csv(path) -> List[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({"epsilon": float(r["epsilon"]), "K": float(r["K"]), "chain": int(r["chain"]),
                    "final_fscore": None if r["final_fscore"] == "" else float(r["final_fscore"]),
                    "accept_rate": float(r["accept_rate"]), "steps": int(r["steps"]),
                    "seconds": float(r["seconds"])})
    return out


def cmd_run(args) -> int:
    ds, meta = _resolve_dataset(args)
    s = _sparsity(args, meta)
    support = meta.get("support")
    if support is None:
        _log("warning: no true support in metadata; F-scores omitted (privacy-only mode)")
    steps = args.steps if args.steps is not None else 50 * ds.p
    every = args.record_every if args.record_every is not None else max(1, steps // 10000)
    out = Path(args.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    threads = _threads(args)
    cells, failed = [], False
    for eps in args.epsilon:
        for K in args.K:
            cell = {"epsilon": float(eps), "K": float(K)}
            try:
                pp = PrivacyParams.for_dataset(ds, eps, K, args.eta)
                cell.update(delta_K=pp.delta_K, eta=args.eta,
                            delta=pp.delta if args.eta is not None else None)
                cfg = ChainConfig(s=s, steps=steps, epsilon=float(eps), K=float(K),
                                  lazy=args.lazy, record_every=every)
                _log(f"cell eps={eps} K={K}: {args.chains} chains x {steps} steps")
                start = time.perf_counter()
                traces = run_parallel_chains(ds, cfg, args.chains, args.seed, threads)
                chains = []
                for i, tr in enumerate(traces):
                    tr.to_csv(out / "traces" / f"eps{eps}_K{K}_chain{i}.csv")
                    chains.append(chain_summary(tr, support))
                cell["chains"] = chains
                if support is not None:
                    cell["mean_fscore"] = float(np.mean([c["final_fscore"] for c in chains]))
                cell["seconds"] = time.perf_counter() - start
                _log(f"  done in {cell['seconds']:.1f}s"
                     + (f", mean F-score {cell['mean_fscore']:.3f}" if support is not None else ""))
            except Exception as exc:  # per-cell failure, keep going
                failed = True
                cell["error"] = f"{type(exc).__name__}: {exc}"
                _log(f"  cell failed: {cell['error']}")
            cells.append(cell)
    _write_summary(out, cells)
    return 1 if failed else 0


def cmd_exact(args) -> int:
    ds, meta = _resolve_dataset(args)
    s = _sparsity(args, meta)
    pp = PrivacyParams.for_dataset(ds, args.epsilon, args.K)
    try:
        dist = exact_distribution(ds, pp, s, cap=args.cap)
    except EnumerationCapError as exc:
        _log(f"error: {exc}. Use `dpbss run` for the MCMC sampler.")
        return 2
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dist.save(out)
    _log(f"wrote {len(dist.models)}-model distribution to {out}")
    if args.samples:
        rng = make_rng(args.seed)
        draws = [list(exact_sample(dist, rng)) for _ in range(args.samples)]
        sample_path = out.with_name(out.stem + "_samples.json")
        sample_path.write_text(json.dumps({"seed": args.seed, "samples": draws}))
        _log(f"wrote {args.samples} samples to {sample_path}")
    return 0


def cmd_diagnose(args) -> int:
    ds, meta = _resolve_dataset(args)
    s = _sparsity(args, meta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pp = PrivacyParams.for_dataset(ds, args.epsilon, args.K)
    report = {"epsilon": args.epsilon, "K": args.K, "delta_K": pp.delta_K,
              "C1": args.C1, "C2": args.C2, "delta": {}}
    for eta in args.eta:
        report["delta"][repr(eta)] = approx_dp_delta(eta, args.epsilon)
    failed = False

    support, beta = meta.get("support"), meta.get("beta")
    sigma = args.sigma if args.sigma is not None else meta.get("sigma", meta.get("noise"))
    src = estimate_src(ds, s, rng=make_rng(args.seed)) if s > 0 else None
    if src is not None:
        report["src"] = {"kappa_minus": src.kappa_minus, "kappa_plus": src.kappa_plus,
                         "exhaustive": src.exhaustive, "examined": src.n_examined}
    reg = None
    if src is not None and src.kappa_minus > 0 and beta is not None and sigma is not None:
        b_max = float(np.sum(np.abs(beta))) or 1.0
        reg = RegularityParams(src.kappa_minus, src.kappa_plus, b_max, float(sigma))
        report["regularity"] = {"kappa_minus": reg.kappa_minus, "kappa_plus": reg.kappa_plus,
                                "b_max": reg.b_max, "sigma": reg.sigma}
        psi, bound = mixing_bound_theorem(ds.n, ds.p, s, args.epsilon, reg,
                                          (ds.r, ds.x_max), min(args.eta), args.C2)
        report["mixing_bound"] = {"psi": psi, "bound": bound, "eta": min(args.eta)}

    if support is not None and beta is not None:
        try:
            margin = identifiability_margin(ds, support, beta, s, cap=args.cap)
            if sigma is not None:
                margin = check_margin_condition(
                    margin, float(sigma), ds.n, ds.p, args.epsilon, pp.delta_K, args.C1,
                    reg.kappa_minus if reg is not None else 1.0)
            report["margin"] = margin.to_dict()
        except (EnumerationCapError, ValueError) as exc:
            report["margin"] = {"skipped": str(exc)}
        if reg is not None:
            try:
                report["assumption_4_1"] = check_assumption_4_1(
                    ds, support, reg, args.C1, cap=args.cap).to_dict()
            except (EnumerationCapError, ValueError) as exc:
                report["assumption_4_1"] = {"skipped": str(exc)}
    else:
        _log("warning: no true support / beta in metadata; margin checks skipped")

    try:
        tm = build_transition_matrix(ds, pp, s, lazy=True, cap=args.matrix_cap)
        dist = exact_distribution(ds, pp, s)
        mixing = []
        for eta in args.eta:
            mr = measure_mixing(tm, dist, eta)
            mixing.append(mr.to_dict())
            mr.write_tv_csv(out / f"tv_eta{eta}.csv")
            if not mr.sandwich_holds:
                failed = True
        report["mixing"] = mixing
    except (ValueError, EnumerationCapError) as exc:
        report["mixing"] = {"skipped": str(exc)}

    (out / "diagnose.json").write_text(json.dumps(report, indent=2))
    _log(f"wrote {out / 'diagnose.json'}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpbss", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--n", type=int, default=900)
    g.add_argument("--p", type=int, default=2000)
    g.add_argument("--s", type=int, default=4)
    g.add_argument("--signal", default="strong", choices=["strong", "weak"])
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", default="dataset.csv")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="multi-chain MH runs over an (epsilon, K) grid")
    _add_data_args(r)
    r.add_argument("--epsilon", type=float, nargs="+", default=[0.5, 1, 3, 5, 10])
    r.add_argument("--K", type=float, nargs="+", default=[2.0])
    r.add_argument("--chains", type=int, default=10)
    r.add_argument("--steps", type=int, default=None, help="default 50 p")
    r.add_argument("--seed", type=int, default=0, help="base chain seed")
    r.add_argument("--record-every", type=int, default=None)
    r.add_argument("--eta", type=float, default=None, help="mixing target for delta")
    r.add_argument("--lazy", action="store_true")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--out", default="runs")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("exact", help="exact exponential mechanism (small p)")
    _add_data_args(e)
    e.add_argument("--epsilon", type=float, default=1.0)
    e.add_argument("--K", type=float, default=2.0)
    e.add_argument("--samples", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--cap", type=int, default=DEFAULT_ENUM_CAP)
    e.add_argument("--out", default="distribution.json")
    e.set_defaults(func=cmd_exact)

    d = sub.add_parser("diagnose", help="margin, correlation and mixing diagnostics")
    _add_data_args(d)
    d.add_argument("--epsilon", type=float, default=1.0)
    d.add_argument("--K", type=float, default=2.0)
    d.add_argument("--eta", type=float, nargs="+", default=[0.1, 0.01])
    d.add_argument("--sigma", type=float, default=None)
    d.add_argument("--C1", type=float, default=DEFAULT_C1)
    d.add_argument("--C2", type=float, default=DEFAULT_C2)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--cap", type=int, default=DEFAULT_ENUM_CAP)
    d.add_argument("--matrix-cap", type=int, default=MATRIX_CAP)
    d.add_argument("--out", default="diagnostics")
    d.set_defaults(func=cmd_diagnose)

    for p in (g, r, e, d):
        p.add_argument("--config", help="JSON file whose keys override flags")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        for key, value in json.loads(Path(args.config).read_text()).items():
            setattr(args, key.replace("-", "_"), value)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
