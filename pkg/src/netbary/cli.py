"""Command-line interface.

Subcommands:

* ``run`` — one experiment from a config file and/or flag overrides.
* ``sweep`` — the same base config across a grid of topology families or
  epoch lengths, runs executed concurrently.
* ``spectra`` — print the spectral bounds of a schedule.
* ``oracle-check`` — finite-difference and simplex self-test of the
  transport dual oracle on a random instance.

Every config key can be overridden by a flag of the same name. Exit code 0
on success, 1 on failure with a diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import adom, entot, harness, netgraph

__all__ = ["cli", "main"]

_FD_THRESHOLD = 1e-6


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="key = value config file")
    parser.add_argument("--dataset", choices=["gaussians", "mnist"], default=None)
    parser.add_argument("--m", type=int, default=None, help="node count")
    parser.add_argument("--d", type=int, default=None, help="support size")
    parser.add_argument("--family", choices=list(netgraph.FAMILIES), default=None)
    parser.add_argument("--p", type=float, default=None, help="edge probability")
    parser.add_argument("--epoch-len", type=str, default=None,
                        help="iterations per topology epoch, or 'static'")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--gamma", type=float, default=None)
    parser.add_argument("--r", type=float, default=None)
    parser.add_argument("--n-iters", type=int, default=None)
    parser.add_argument("--record-every", type=int, default=None)
    parser.add_argument("--delta", type=float, default=None)
    parser.add_argument("--mean-low", type=float, default=None)
    parser.add_argument("--mean-high", type=float, default=None)
    parser.add_argument("--std-low", type=float, default=None)
    parser.add_argument("--std-high", type=float, default=None)
    parser.add_argument("--mnist-images", type=str, default=None)
    parser.add_argument("--mnist-labels", type=str, default=None)
    parser.add_argument("--digit", type=int, default=None)
    parser.add_argument("--measure-walltime", action="store_const", const=True, default=None)
    parser.add_argument("--out", type=str, default=None, help="output directory")


def _config_from_args(args: argparse.Namespace) -> harness.ExperimentConfig:
    raw = {}
    if args.config is not None:
        raw.update(harness.load_config(args.config))
    for key in harness.ExperimentConfig.__dataclass_fields__:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    return harness.ExperimentConfig.from_dict(raw)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    result = harness.run_experiment(cfg)
    last = result.rows[-1] if result.rows else None
    where = result.out_dir if result.out_dir is not None else "(not persisted)"
    print(f"run complete: {len(result.rows)} recorded iterations -> {where}")
    if last is not None:
        print(
            f"final iteration {last.iteration}: objective_gap={last.objective_gap:.6g} "
            f"consensus={last.consensus:.6g}"
        )
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if cfg.out is None:
        raise ValueError("sweep needs --out (or out in the config) as the parent directory")
    variants: list[tuple[str, harness.ExperimentConfig]] = []
    if args.families:
        for family in args.families.split(","):
            family = family.strip()
            label = f"family-{family}"
            raw = dict(cfg.to_dict(), family=family, out=str(Path(cfg.out) / label))
            variants.append((label, harness.ExperimentConfig.from_dict(raw)))
    if args.epoch_lens:
        for epoch_len in args.epoch_lens.split(","):
            epoch_len = epoch_len.strip()
            label = f"epoch-{epoch_len}"
            raw = dict(cfg.to_dict(), epoch_len=epoch_len, out=str(Path(cfg.out) / label))
            variants.append((label, harness.ExperimentConfig.from_dict(raw)))
    if not variants:
        raise ValueError("sweep needs --families and/or --epoch-lens")

    def one(item):
        label, variant = item
        result = harness.run_experiment(variant)
        last = result.rows[-1]
        return label, last

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        outcomes = list(pool.map(one, variants))
    for label, last in outcomes:
        print(
            f"{label}: final objective_gap={last.objective_gap:.6g} "
            f"consensus={last.consensus:.6g}"
        )
    return 0


def _cmd_spectra(args: argparse.Namespace) -> int:
    epoch_len = None
    if args.epoch_len is not None and args.epoch_len.lower() not in ("static", "none", "inf"):
        epoch_len = int(args.epoch_len)
    schedule = netgraph.NetworkSchedule(
        family=args.family, m=args.m, epoch_len=epoch_len, seed=args.seed,
        p=args.p if args.family in ("erdos_renyi", "mst_of_er") else None,
    )
    bounds = netgraph.spectral_bounds(schedule, args.horizon)
    print(f"family = {args.family}, m = {args.m}, horizon = {args.horizon}")
    print(f"lambda_min_plus = {bounds.lambda_min_plus!r}")
    print(f"lambda_max = {bounds.lambda_max!r}")
    return 0


def _cmd_oracle_check(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    d, gamma = args.d, args.gamma
    points = np.sort(rng.random(d))
    cost = entot.cost_matrix(points, normalize=True)
    q = entot.floor_histogram(
        np.full(d, 1.0 / d) if d < 2 else _random_histogram(rng, d), 1e-4
    )
    z = 0.5 * rng.standard_normal(d)

    grad = entot.dual_grad(q, cost, gamma, z)
    fd = _fd_gradient(q, cost, gamma, z)
    rel = float(np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-300))
    simplex_dev = max(abs(float(grad.sum()) - 1.0), max(0.0, -float(grad.min())))
    shift = entot.dual_value(q, cost, gamma, z + 1.0) - (
        entot.dual_value(q, cost, gamma, z) + 1.0
    )

    print(f"d = {d}, gamma = {gamma}, seed = {args.seed}")
    print(f"max relative FD deviation: {rel:.3e}")
    print(f"simplex deviation: {simplex_dev:.3e}")
    print(f"shift-covariance deviation: {abs(shift):.3e}")
    ok = rel <= _FD_THRESHOLD and simplex_dev <= 1e-10 and abs(shift) <= 1e-9
    print(f"{'OK' if ok else 'FAIL'} (FD threshold {_FD_THRESHOLD:g})")
    return 0 if ok else 1


def _random_histogram(rng: np.random.Generator, d: int) -> np.ndarray:
    raw = rng.random(d) + 0.1
    return raw / raw.sum()


def _fd_gradient(q, cost, gamma, z, step: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(z)
    for k in range(z.shape[0]):
        up = z.copy()
        down = z.copy()
        up[k] += step
        down[k] -= step
        out[k] = (
            entot.dual_value(q, cost, gamma, up) - entot.dual_value(q, cost, gamma, down)
        ) / (2.0 * step)
    return out


def cli(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="netbary",
        description="Decentralized entropic Wasserstein barycenters over "
        "time-varying networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a grid of experiments")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--families", type=str, default=None,
                         help="comma-separated topology families")
    p_sweep.add_argument("--epoch-lens", type=str, default=None,
                         help="comma-separated epoch lengths ('static' allowed)")
    p_sweep.add_argument("--jobs", type=int, default=4)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_spec = sub.add_parser("spectra", help="print spectral bounds of a schedule")
    p_spec.add_argument("--family", choices=list(netgraph.FAMILIES), required=True)
    p_spec.add_argument("--m", type=int, required=True)
    p_spec.add_argument("--p", type=float, default=0.9)
    p_spec.add_argument("--epoch-len", type=str, default=None)
    p_spec.add_argument("--seed", type=int, default=0)
    p_spec.add_argument("--horizon", type=int, default=1000)
    p_spec.set_defaults(func=_cmd_spectra)

    p_check = sub.add_parser("oracle-check", help="self-test the transport dual oracle")
    p_check.add_argument("--d", type=int, default=5)
    p_check.add_argument("--gamma", type=float, default=0.05)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.set_defaults(func=_cmd_oracle_check)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return cli(argv)


if __name__ == "__main__":
    sys.exit(main())
