"""Command-line front end.

Subcommands: ``constants``, ``bounds``, ``simulate``, ``verify``,
``sharpness``, ``gp-sweep``.  Every run writes a ``manifest.json`` beside its
outputs.  Exit codes: 0 all checks satisfied, 1 a verification failed, 2
usage or config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import __version__
from .bounds import BoundParams, evaluate_report_table
from .coupling import simulate_coupled_batch, write_batch_summary, CoupledTrajectory
from .errors import InvalidRegimeError, NumericalFailureError
from .kernels import (
    StateFunction,
    cross_doeblin_constant,
    doeblin_constant,
    kernel_from_json,
    local_epsilon,
)
from .montecarlo import ExperimentConfig, StoppingRule, run_experiment
from .sharpness import tightness_table
from .gp_mcmc import GPConfig, config_snapshot, figure_sweep

EXIT_OK = 0
EXIT_UNSATISFIED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="chain-perturb",
        description="Coupling-based closeness certificates for finite Markov chains",
    )
    parser.add_argument("--out-dir", default="./out", help="directory for output files")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="closeness constants a, alpha, epsilon of a kernel pair")
    p.add_argument("--pair", required=True, help="JSON file with fields 'P' and 'P_eps'")

    p = sub.add_parser("bounds", help="evaluate every closed-form bound at given parameters")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p0", type=float, default=0.0)
    p.add_argument("--fstar", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--etau", type=float, default=None,
                   help="expected stopping time, enables the decoupling/path-law rows")
    p.add_argument("--format", choices=("text", "csv"), default="text")

    p = sub.add_parser("simulate", help="simulate coupled trajectories of a kernel pair")
    p.add_argument("--pair", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=int, default=0)
    p.add_argument("--x0-eps", type=int, default=0)

    p = sub.add_parser("verify", help="run empirical checks from a JSON config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("sharpness", help="certify the averaged-TV equality family")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--nmax", type=int, required=True)

    p = sub.add_parser("gp-sweep", help="closeness constants of the GP Gibbs pair vs truncation rank")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--qmax", type=int, default=None)
    p.add_argument("--eps-threshold", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full-scale", action="store_true")
    return parser


def _load_pair(path):
    with open(path) as fh:
        doc = json.load(fh)
    if "P" not in doc or "P_eps" not in doc:
        raise ValueError("pair file must contain fields 'P' and 'P_eps'")
    return kernel_from_json(doc["P_eps"]), kernel_from_json(doc["P"])


def _write_manifest(out_dir, command, snapshot, seed, outputs, started):
    for name in outputs:
        if not os.path.exists(os.path.join(out_dir, name)):
            raise NumericalFailureError(f"declared output {name} missing")
    manifest = {
        "subcommand": command,
        "config": snapshot,
        "seed": seed,
        "version": __version__,
        "duration_s": time.time() - started,
        "outputs": list(outputs),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def _cmd_constants(args, out_dir):
    p_eps, p = _load_pair(args.pair)
    a = doeblin_constant(p)
    alpha = cross_doeblin_constant(p_eps, p)
    eps = local_epsilon(p_eps, p)
    lines = ["a,alpha,epsilon", f"{_fmt(a)},{_fmt(alpha)},{_fmt(eps)}"]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    with open(os.path.join(out_dir, "constants.csv"), "w") as fh:
        fh.write(text)
    return EXIT_OK, ["constants.csv"], None


def _cmd_bounds(args, out_dir):
    params = BoundParams(
        epsilon=args.epsilon, n=args.n, alpha=args.alpha, a=args.a,
        p0=args.p0, f_star=args.fstar,
    )
    reports = evaluate_report_table(params, lam=args.lam, expected_tau=args.etau)
    header = ["name", "value", "raw", "capped", "regime_ok"]
    rows = [
        [r.name,
         "" if r.value is None else _fmt(r.value),
         "" if r.raw is None else _fmt(r.raw),
         str(r.capped).lower(),
         str(r.regime_ok).lower()]
        for r in reports
    ]
    csv_text = "\n".join([",".join(header)] + [",".join(row) for row in rows]) + "\n"
    if args.format == "csv":
        sys.stdout.write(csv_text)
    else:
        widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
        for line in [header] + rows:
            sys.stdout.write("  ".join(v.ljust(w) for v, w in zip(line, widths)).rstrip() + "\n")
    with open(os.path.join(out_dir, "bounds.csv"), "w") as fh:
        fh.write(csv_text)
    return EXIT_OK, ["bounds.csv"], None


def _cmd_simulate(args, out_dir):
    p_eps, p = _load_pair(args.pair)
    batch = simulate_coupled_batch(p_eps, p, args.x0_eps, args.x0,
                                   args.n, args.replicates, args.seed)
    if args.replicates == 1:
        traj = CoupledTrajectory(
            x_path=batch.x[0], x_eps_path=batch.x_eps[0],
            z_path=batch.z[0], y_path=batch.y[0], seed=args.seed,
        )
        traj.to_csv(os.path.join(out_dir, "trajectory.csv"))
        outputs = ["trajectory.csv"]
    else:
        write_batch_summary(batch, os.path.join(out_dir, "summary.csv"))
        outputs = ["summary.csv"]
    sys.stdout.write(
        f"simulated {args.replicates} trajectories of length {args.n + 1}; "
        f"mean disagreement fraction {_fmt(batch.z[:, :args.n].mean())}\n"
    )
    return EXIT_OK, outputs, args.seed


def _experiment_setup(path):
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    pair_doc = doc["pair"]
    if isinstance(pair_doc, str):
        with open(os.path.join(base, pair_doc)) as fh:
            pair_doc = json.load(fh)
    if "P" not in pair_doc or "P_eps" not in pair_doc:
        raise ValueError("pair must contain fields 'P' and 'P_eps'")
    stopping = None
    if "stopping" in doc:
        sd = doc["stopping"]
        stopping = StoppingRule(kind=sd["kind"], time=sd.get("time"),
                                targets=tuple(sd.get("targets", ())))
    config = ExperimentConfig(
        p_eps=kernel_from_json(pair_doc["P_eps"]),
        p=kernel_from_json(pair_doc["P"]),
        n=doc["n"],
        replicates=doc["replicates"],
        master_seed=doc.get("seed", 0),
        x0_eps=doc.get("x0_eps", 0),
        x0=doc.get("x0", 0),
        f=StateFunction(doc["f"]) if "f" in doc else None,
        stopping=stopping,
    )
    return config, doc.get("experiments", ["disagreement"]), doc.get("lambda", 1.0), doc


def _cmd_verify(args, out_dir):
    config, experiments, lam, doc = _experiment_setup(args.config)
    results = [run_experiment(name, config, lam=lam) for name in experiments]
    lines = ["name,estimate,std_error,bound,satisfied,replicates"]
    for r in results:
        lines.append(",".join([
            r.name, _fmt(r.estimate), _fmt(r.std_error), _fmt(r.bound),
            str(r.satisfied).lower(), str(r.replicates_used),
        ]))
        sys.stdout.write(
            f"{r.name}: estimate={_fmt(r.estimate)} bound={_fmt(r.bound)} "
            f"satisfied={str(r.satisfied).lower()}\n"
        )
    with open(os.path.join(out_dir, "verify.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    code = EXIT_OK if all(r.satisfied for r in results) else EXIT_UNSATISFIED
    return code, ["verify.csv"], doc.get("seed", 0)


def _cmd_sharpness(args, out_dir):
    rows = tightness_table(args.beta, args.eps, args.gamma, args.nmax)
    lines = ["n,exact_tv,bound,gap"]
    lines += [f"{n},{_fmt(e)},{_fmt(b)},{_fmt(g)}" for n, e, b, g in rows]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    with open(os.path.join(out_dir, "sharpness.csv"), "w") as fh:
        fh.write(text)
    worst = max(g for *_, g in rows)
    code = EXIT_OK if worst <= 1e-12 else EXIT_UNSATISFIED
    return code, ["sharpness.csv"], None


def _write_sweep_csv(path, rows):
    lines = ["replicate,q,epsilon,alpha,ratio"]
    lines += [f"{r.replicate},{r.q},{_fmt(r.epsilon)},{_fmt(r.alpha)},{_fmt(r.ratio)}"
              for r in rows]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_gp_sweep(args, out_dir):
    if args.full_scale:
        n = args.n if args.n is not None else 1000
        m = args.m if args.m is not None else 10
        replicates = args.replicates if args.replicates is not None else 100
    else:
        n = args.n if args.n is not None else 100
        m = args.m if args.m is not None else 5
        replicates = args.replicates if args.replicates is not None else 20
    config = GPConfig(n=n, m=m, seed=args.seed)
    partial = []
    try:
        rows = figure_sweep(config, replicates, eps_threshold=args.eps_threshold,
                            qmax=args.qmax, row_sink=partial.extend)
    except Exception:
        # flush whatever replicates completed before re-raising
        _write_sweep_csv(os.path.join(out_dir, "sweep.csv"), sorted(partial))
        raise
    _write_sweep_csv(os.path.join(out_dir, "sweep.csv"), rows)
    snap = config_snapshot(config)
    snap["replicates"] = int(replicates)
    snap["eps_threshold"] = float(args.eps_threshold)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(snap, fh, indent=2)
    sys.stdout.write(f"wrote {len(rows)} sweep rows for {replicates} replicates\n")
    return EXIT_OK, ["sweep.csv", "config.json"], args.seed


_HANDLERS = {
    "constants": _cmd_constants,
    "bounds": _cmd_bounds,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
    "sharpness": _cmd_sharpness,
    "gp-sweep": _cmd_gp_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    out_dir = os.path.abspath(args.out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
        code, outputs, seed = _HANDLERS[args.command](args, out_dir)
        snapshot = {k: v for k, v in vars(args).items() if k != "command"}
        _write_manifest(out_dir, args.command, snapshot, seed, outputs, started)
        return code
    except NumericalFailureError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (InvalidRegimeError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
