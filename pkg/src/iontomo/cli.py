"""Command-line front end: ``iontomo <command> [options]``.

Every stochastic step draws its seed from :func:`derive_seed` applied to the
single ``--seed`` value, so a run is reproducible from one integer.
"""

from __future__ import annotations

import argparse
import logging
import sys
import zlib
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import entangle, ionsim, tomo
from .hilbert import DensityMatrix, FormatError, fidelity_pure, read_density_matrix, write_density_matrix

log = logging.getLogger("iontomo")


def derive_seed(master: int, label: str) -> int:
    """64-bit seed for one pipeline component.

    SeedSequence([master, crc32(label)]) hashes the pair; the first 64-bit
    word of its state is the component seed.
    """
    ss = np.random.SeedSequence([int(master), zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def fmt(x: float) -> str:
    return f"{x:.8e}"


def _positive(name: str, minimum: int = 1) -> Callable[[str], int]:
    def parse(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < minimum:
            raise argparse.ArgumentTypeError(f"{name} must be >= {minimum}")
        return v

    return parse


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _mle_config(args) -> tomo.MLEConfig:
    return tomo.MLEConfig(max_iterations=args.mle_max_iter, loglik_tolerance=args.mle_tol)


def _qubit_count(rho: DensityMatrix) -> int:
    if any(d != 2 for d in rho.dims):
        raise FormatError("expected a qubit density matrix")
    return len(rho.dims)


# -- commands -------------------------------------------------------------------


def cmd_prepare(args) -> int:
    if args.noise:
        cfg = ionsim.load_config(args.noise)
        if args.n is not None and args.n != cfg.n:
            raise ValueError(f"--n {args.n} disagrees with n = {cfg.n} in {args.noise}")
        trials = args.trials or cfg.trials
        seed = derive_seed(args.seed if args.seed is not None else cfg.seed, "prepare")
        rho = ionsim.simulate_noisy_preparation(cfg.n, cfg.noise, trials, seed)
        n = cfg.n
    else:
        if args.n is None:
            raise ValueError("either --n or --noise is required")
        n = args.n
        rho = ionsim.trace_out_motion(ionsim.prepare_w_sequence(n, args.n_max))
    rho.validate()
    write_density_matrix(args.out, rho)
    print(f"fidelity {fmt(fidelity_pure(rho, ionsim.w_state(n)))}")
    return 0


def cmd_tomography(args) -> int:
    rho = read_density_matrix(args.inp)
    n = _qubit_count(rho)
    ds = tomo.sample_dataset(rho, args.shots, derive_seed(args.seed, "tomography"))
    dataset_path = args.dataset or str(Path(args.out).with_suffix(".dataset.txt"))
    tomo.write_dataset(dataset_path, ds)
    result = tomo.mle_reconstruct(ds, _mle_config(args))
    write_density_matrix(args.out, result.rho)
    _, fid = entangle.optimize_local_phases(result.rho)
    print(f"records {len(ds.settings)}")
    print(f"iterations {result.iterations}")
    print(f"loglik {fmt(result.loglik)}")
    print(f"fidelity {fmt(fid)}")
    return 0


def _bar_data(rho: DensityMatrix) -> str:
    mags = np.abs(rho.entries).reshape(-1)
    return "".join(f"{i} {fmt(v)}\n" for i, v in enumerate(mags))


def cmd_analyze(args) -> int:
    rho = read_density_matrix(args.inp)
    n = _qubit_count(rho)
    report = entangle.entanglement_report(rho, local_filter=args.local_filter)
    Path(args.out).write_text(entangle.format_report(report))
    plot_path = args.plot_data or str(Path(args.out).with_suffix(".bars.txt"))
    Path(plot_path).write_text(_bar_data(rho))
    print(f"fidelity {fmt(report.fidelity)}")
    print(f"distillable {str(report.distillable).lower()}")
    return 0


def report_quantities(n: int) -> dict[str, Callable[[DensityMatrix], float]]:
    """Derived quantities tracked by ``mc-errors``, all from one report."""
    last: list = [None, None]  # (state, report); holding the state keeps its identity unique

    def report(rho):
        if last[0] is not rho:
            last[:] = [rho, entangle.entanglement_report(rho)]
        return last[1]

    q = {
        "fidelity": lambda r: report(r).fidelity,
        "simple_witness": lambda r: report(r).simple_witness,
        "min_projected_concurrence": lambda r: report(r).min_projected,
        "mean_projected_concurrence": lambda r: report(r).mean_projected,
        "min_reduced_concurrence": lambda r: report(r).min_reduced,
        "mean_reduced_concurrence": lambda r: report(r).mean_reduced,
    }
    if n >= 3:
        q["advanced_witness"] = lambda r: report(r).advanced_witness
    return q


def cmd_mc_errors(args) -> int:
    rho = read_density_matrix(args.inp)
    n = _qubit_count(rho)
    dists = tomo.monte_carlo_resample(
        rho, args.shots, args.trials, derive_seed(args.seed, "mc-errors"), report_quantities(n), _mle_config(args)
    )
    lines = [f"# n = {n} shots = {args.shots} trials = {args.trials}"]
    lines += [f"{name} = {fmt(d.mean)} +- {fmt(d.std)}" for name, d in dists.items()]
    text = "\n".join(lines) + "\n"
    Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_witness_gamma(args) -> int:
    print(f"{'n':>2} {'alpha':>8} {'beta':>8} {'gamma':>12} {'published':>10} {'deviation':>12}")
    failed = False
    for n, (alpha, beta, published) in sorted(entangle.PUBLISHED_WITNESS_PARAMETERS.items()):
        try:
            gamma = entangle.gamma_biseparable(n, alpha, beta)
        except entangle.OptimizationError as exc:
            failed = True
            print(f"{n:>2} {alpha:>8g} {beta:>8g} {'failed':>12} {published:>10.4f}   ({exc}; partial {exc.partial:.6f})")
            continue
        print(f"{n:>2} {alpha:>8g} {beta:>8g} {gamma:>12.8f} {published:>10.4f} {gamma - published:>12.2e}")
    return 1 if failed else 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iontomo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def mle_flags(p):
        p.add_argument("--mle-max-iter", type=_positive("--mle-max-iter"), default=5000)
        p.add_argument("--mle-tol", type=float, default=1e-10)

    p = sub.add_parser("prepare", help="simulate the W-state preparation sequence")
    p.add_argument("--n", type=_positive("--n", 2))
    p.add_argument("--n-max", type=_positive("--n-max"), default=ionsim.DEFAULT_N_MAX)
    p.add_argument("--noise", help="key = value noise configuration file")
    p.add_argument("--trials", type=_positive("--trials"))
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("tomography", help="sample a Pauli dataset and reconstruct by maximum likelihood")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", help="dataset output path (default: <out>.dataset.txt)")
    p.add_argument("--shots", type=_positive("--shots"), default=100)
    p.add_argument("--seed", type=_seed, default=0)
    mle_flags(p)
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("analyze", help="entanglement report for a density matrix")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot-data", help="|rho| bar data path (default: <out>.bars.txt)")
    p.add_argument("--local-filter", action="store_true", help="also optimize local filters on the witness")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mc-errors", help="Monte Carlo projection-noise uncertainties")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shots", type=_positive("--shots"), default=100)
    p.add_argument("--trials", type=_positive("--trials", 2), default=100)
    p.add_argument("--seed", type=_seed, default=0)
    mle_flags(p)
    p.set_defaults(func=cmd_mc_errors)

    p = sub.add_parser("witness-gamma", help="recompute the biseparable bound for n = 3..8")
    p.set_defaults(func=cmd_witness_gamma)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"iontomo {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
