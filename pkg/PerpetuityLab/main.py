"""
PerpetuityLab toolkit: tails and envelopes of random affine recursions.

Main entry point for PerpetuityLab, which simulates perpetuities
X_n = A_n X_{n-1} + B_n, evaluates the transform phi of a local dependence
measure and its fixed point lambda*, and runs the two-particle Fleming-Viot
chain.

The script offers these subcommands:

1. **run**:
   Run an experiment from a JSON config file.

2. **transform**:
   Evaluate phi on a lambda grid, lambda* and the fixed-point iteration for
   a local dependence measure.

3. **simulate**:
   Simulate the perpetuity chain (and optionally the series S_N).

4. **tail**:
   Estimate the left-tail exponent and the right-tail slope of X_n from
   independent replicas.

5. **envelope**:
   Compute the lower-envelope statistic of long single trajectories.

6. **schedule**:
   Build and verify the index schedule behind the lower-envelope bound.

7. **fv**:
   Run the embedded Fleming-Viot chain and its iterated-logarithm statistics.

8. **dependence**:
   Estimate trajectories of the local dependence measure g(y) by Monte Carlo.

9. **laws**:
   Print the built-in coefficient laws.

10. **runs**:
   List stored run records.

Global flags ``--seed``, ``--out``, ``--threads`` and ``--format`` may be
given before or after the subcommand.

Exit Codes
----------
0 success; 2 a property check failed (argparse also uses 2 for usage
errors); 1 any other error.

Examples
--------
To evaluate the transform of the Fleming-Viot dependence measure:
    $ PerpetuityLab transform --law fleming-viot --lambda_grid 0 1 0.1

To run a config with a different seed:
    $ PerpetuityLab run --config configs/fv_lil.json --seed 7 --out results/fv7

To list the built-in laws:
    $ PerpetuityLab laws
"""

import sys
import argparse
from DB.runs_db import create_database
from PerpetuityLab.settings import DEFAULT_THREADS, DATABASE_URL, VERSION
from PerpetuityLab.accessories.config import add_law_arguments, law_spec_from_args, scale_spec_from_args
from .run_experiment import main as run_experiment_main
from .transform import main as transform_main
from .transform import add_arguments as add_transform_arguments, ldm_spec_from_args
from .perpetuity import simulate_main, tail_main, envelope_main
from .perpetuity import add_simulate_arguments, add_tail_arguments, add_envelope_arguments
from .envelope_schedule import main as schedule_main
from .envelope_schedule import add_arguments as add_schedule_arguments
from .flemingviot import main as fv_main
from .flemingviot import add_arguments as add_fv_arguments
from .dependence import main as dependence_main
from .dependence import add_arguments as add_dependence_arguments
from .list_laws import main as list_laws_main
from .list_runs import main as list_runs_main


def print_help():
    """Print custom help message for PerpetuityLab."""
    help_message = f"""
PerpetuityLab: tails and envelopes of random affine recursions
version: {VERSION}

Available Commands:
    run             Run an experiment from a JSON config.
                    Example: PerpetuityLab run --config configs/transform_fv.json

    transform       phi on a lambda grid, lambda* and the fixed-point trace.
                    Example: PerpetuityLab transform --law pqd --gamma 1 --a 0.25 --lambda_grid 0 8 0.5

    simulate        Simulate X_n = A_n X_(n-1) + B_n.
                    Example: PerpetuityLab simulate --law fleming-viot --n_steps 200 --replicas 10000 --series

    tail            Left-tail exponent and right-tail slope of X_n.
                    Example: PerpetuityLab tail --law fleming-viot --n_steps 500 --replicas 1000000

    envelope        Running infimum of X_n / H^-1(log n) along single trajectories.
                    Example: PerpetuityLab --seed 3 envelope --law fleming-viot --n_steps 1000000 --band 0.25 1.0

    schedule        Build and verify the lower-envelope index schedule.
                    Example: PerpetuityLab schedule --eps_tilde 1 --lambda_star 0.5 --epsilon 0.1 --y_star 2 --c 0.25

    fv              Embedded two-particle Fleming-Viot chain.
                    Example: PerpetuityLab fv --n_steps 1000000 --lil_band 0.5 1.4

    dependence      Monte Carlo trajectories of g(y) next to the exact values.
                    Example: PerpetuityLab dependence --law discontinuous-ldm --lambda1 2 --lambda2 1 --y 0 0.01 --eps_grid 0.4 0.3 0.2

    laws            Print the built-in coefficient laws.

    runs            List stored run records, optionally for one config hash.
                    Example: PerpetuityLab runs --config_hash 3fa1c2

Global flags: --seed N, --out DIR, --threads N, --format csv|jsonl
    --help, -h      Prints this help message
    """
    print(help_message)


def add_global_arguments(parser, suppress=False):
    """Register --seed, --out, --threads and --format; suppressed defaults on subparsers."""
    default = (lambda value: argparse.SUPPRESS) if suppress else (lambda value: value)
    parser.add_argument("--seed", type=int, default=default(None), help="Root seed.")
    parser.add_argument("--out", type=str, default=default(None), help="Output directory.")
    parser.add_argument("--threads", type=int, default=default(DEFAULT_THREADS),
                        help="Worker threads.")
    parser.add_argument("--format", choices=["csv", "jsonl"], default=default("csv"),
                        help="Table format.")


def build_parser():
    """The top-level parser with one subparser per command."""
    parser = argparse.ArgumentParser(
        description="PerpetuityLab: tails and envelopes of random affine recursions",
        epilog="Run 'PerpetuityLab <command> --help' for the options of a command.",
    )
    add_global_arguments(parser)
    common = argparse.ArgumentParser(add_help=False)
    add_global_arguments(common, suppress=True)

    subparsers = parser.add_subparsers(dest="command", title="Available Commands")

    # Subcommand: run
    parser_run = subparsers.add_parser("run", parents=[common],
                                       help="Run an experiment from a JSON config.")
    parser_run.add_argument("--config", type=str, required=True, help="Path to the JSON config.")

    # Subcommand: transform
    parser_transform = subparsers.add_parser(
        "transform", parents=[common],
        help="phi on a lambda grid, lambda* and the fixed-point trace.")
    add_transform_arguments(parser_transform)

    # Subcommands: simulate, tail, envelope
    for name, adder, text in (
        ("simulate", add_simulate_arguments, "Simulate the perpetuity chain."),
        ("tail", add_tail_arguments, "Left- and right-tail statistics of X_n."),
        ("envelope", add_envelope_arguments, "Lower-envelope statistic of single trajectories."),
    ):
        parser_chain = subparsers.add_parser(name, parents=[common], help=text)
        add_law_arguments(parser_chain)
        parser_chain.add_argument("--n_steps", type=int, required=True, help="Chain length.")
        adder(parser_chain)

    # Subcommand: schedule
    parser_schedule = subparsers.add_parser(
        "schedule", parents=[common], help="Build and verify the lower-envelope index schedule.")
    add_schedule_arguments(parser_schedule)

    # Subcommand: fv
    parser_fv = subparsers.add_parser("fv", parents=[common],
                                      help="Embedded two-particle Fleming-Viot chain.")
    add_fv_arguments(parser_fv)

    # Subcommand: dependence
    parser_dependence = subparsers.add_parser(
        "dependence", parents=[common], help="Monte Carlo trajectories of g(y).")
    add_law_arguments(parser_dependence)
    add_dependence_arguments(parser_dependence)

    # Subcommands: laws, runs
    subparsers.add_parser("laws", parents=[common], help="Print the built-in coefficient laws.")
    parser_runs = subparsers.add_parser("runs", parents=[common], help="List stored run records.")
    parser_runs.add_argument("--config_hash", "--config-hash", type=str, default=None,
                             help="Only list runs of this config hash (prefix allowed).")
    return parser


def run_command(args):
    """
    Dispatch parsed arguments to the command ``main`` functions.

    Returns
    -------
    int
        The command's exit code.
    """
    seeds = [args.seed] if args.seed is not None else None
    common = {"out_dir": args.out, "fmt": args.format}

    if args.command == "run":
        return run_experiment_main(config=args.config, seed=args.seed, out_dir=args.out,
                                   threads=args.threads, fmt=args.format)
    if args.command == "transform":
        return transform_main(ldm_spec=ldm_spec_from_args(args), rho=args.rho,
                              lambda_grid=args.lambda_grid, lambda1=args.lambda1,
                              max_steps=args.max_steps, **common)
    if args.command in ("simulate", "tail", "envelope"):
        chain = {"law_spec": law_spec_from_args(args), "scale_spec": scale_spec_from_args(args),
                 "n_steps": args.n_steps, "seeds": seeds, **common}
        if args.command == "simulate":
            return simulate_main(replicas=args.replicas, x0=args.x0, checkpoints=args.checkpoints,
                                 series=args.series, threads=args.threads, **chain)
        if args.command == "tail":
            return tail_main(replicas=args.replicas, eps_grid=args.eps_grid, x_grid=args.x_grid,
                             monotonicity_checkpoints=args.monotonicity_checkpoints,
                             confidence=args.confidence, threads=args.threads, **chain)
        return envelope_main(band=args.band, min_fraction=args.min_fraction, **chain)
    if args.command == "schedule":
        return schedule_main(eps_tilde=args.eps_tilde, lambda_star=args.lambda_star,
                             epsilon=args.epsilon, y_star=args.y_star, c=args.c,
                             n_max=args.n_max, gamma=args.gamma, horizon=args.horizon,
                             scale_spec={"rho": args.rho, "beta": args.beta, "scale": 1.0},
                             seeds=seeds, **common)
    if args.command == "fv":
        return fv_main(n_steps=args.n_steps, n_min=args.n_min, thin_points=args.thin_points,
                       lil_band=args.lil_band, min_fraction=args.min_fraction, seeds=seeds,
                       **common)
    if args.command == "dependence":
        return dependence_main(law_spec=law_spec_from_args(args),
                               scale_spec=scale_spec_from_args(args), y=args.y,
                               eps_grid=args.eps_grid, samples=args.samples,
                               confidence=args.confidence, min_separation=args.min_separation,
                               seeds=seeds, threads=args.threads, **common)
    if args.command == "laws":
        return list_laws_main()
    return list_runs_main(config_hash=args.config_hash)


def main():
    """Main function which gathers arguments and passes them to the relevant PerpetuityLab command."""

    if DATABASE_URL.lower() != "none":
        try:
            create_database()
        except Exception as e:
            print(f"Error: Could not initialize the database. {e}", file=sys.stderr)
            sys.exit(1)

    parser = build_parser()

    # Parse the arguments
    args = parser.parse_args()

    if not args.command:
        print_help()
        sys.exit(1)

    try:
        exit_code = run_command(args)
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
