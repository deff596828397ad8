"""Command-line entry points.

Subcommands:

* ``run``                 train/evaluate over a (method, holdout, seed,
                          sweep) grid and write CSV results
* ``theory memorization`` Monte-Carlo estimates of the all-environments
                          epsilon-goodness probability vs. environment count
* ``theory quantile``     quantile-estimation error vs. sample count
* ``synth-data``          generate the synthetic digit corpus as IDX files
* ``bench``               compare the compiled and NumPy kernel backends

Settings for ``run`` merge in increasing precedence: built-in defaults,
``--config`` file, ``QREPLAY_*`` environment variables, CLI flags.
"""

import argparse
import sys

from . import __version__


def _run_parser(sub):
    p = sub.add_parser("run", help="execute an experiment spec")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--method", help="comma list of methods (pdg, er)")
    p.add_argument("--holdout", help="comma list of held-out rotations")
    p.add_argument("--seeds", help="comma list of integer seeds")
    p.add_argument("--alpha", help="quantile level in (0,1)")
    p.add_argument("--rho", help="quantile-term balance coefficient")
    p.add_argument("--lr", help="SGD learning rate")
    p.add_argument("--memory", help="replay memory capacity")
    p.add_argument("--scale-mode", choices=("paper", "std"),
                   help="quantile spread scaling")
    p.add_argument("--steps-per-env", help="training steps per rotation")
    p.add_argument("--train-cap", help="cap on base training images")
    p.add_argument("--test-cap", help="cap on test images per rotation")
    p.add_argument("--sweep", choices=("none", "alpha", "memory_capacity"))
    p.add_argument("--sweep-values", help="comma list of sweep values")
    p.add_argument("--data-dir", help="directory with the IDX data files")
    p.add_argument("--out", help="output directory")
    p.add_argument("--svg", action="store_true",
                   help="also render SVG charts for swept runs")
    return p


def _theory_parsers(sub):
    t = sub.add_parser("theory", help="tradeoff-theory Monte Carlo checks")
    tsub = t.add_subparsers(dest="theory_cmd", required=True)

    m = tsub.add_parser("memorization",
                        help="P[all m environments epsilon-good] vs m")
    m.add_argument("--m", default="1,2,4,8,16", help="comma list of env counts")
    m.add_argument("--epsilon", type=float, default=0.05)
    m.add_argument("--noise", type=float, default=0.15,
                   help="distance scale of the candidate from the joint optimum")
    m.add_argument("--trials", type=int, default=4000)
    m.add_argument("--dim", type=int, default=2)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", help="also write the CSV here")

    q = tsub.add_parser("quantile", help="quantile estimation error vs m")
    q.add_argument("--m", default="10,1000", help="comma list of sample counts")
    q.add_argument("--alpha", type=float, default=0.9)
    q.add_argument("--trials", type=int, default=1000)
    q.add_argument("--mean", type=float, default=0.0)
    q.add_argument("--std", type=float, default=1.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", help="also write the CSV here")


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _emit(lines, out_path):
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out_path:
        from .harness import _atomic_write

        _atomic_write(out_path, text)


def _cmd_run(args):
    from . import harness

    file_values = harness.parse_config_file(args.config) if args.config else {}
    cli_values = {
        "methods": args.method,
        "holdouts": args.holdout,
        "seeds": args.seeds,
        "alpha": args.alpha,
        "rho": args.rho,
        "lr": args.lr,
        "memory_capacity": args.memory,
        "scale_mode": args.scale_mode,
        "steps_per_env": args.steps_per_env,
        "train_cap": args.train_cap,
        "test_cap": args.test_cap,
        "sweep": args.sweep,
        "sweep_values": args.sweep_values,
        "data_dir": args.data_dir,
        "out_dir": args.out,
    }
    spec = harness.build_spec(file_values, harness.env_overrides(), cli_values)
    table = harness.run(spec)
    if spec.sweep != "none":
        harness.emit_plot_data(table, spec.sweep, svg=args.svg)
    sys.stdout.write(harness.summary_csv(table))
    print(f"results under {spec.out_dir}", file=sys.stderr)
    return 0


def _cmd_theory(args):
    from . import theory

    if args.theory_cmd == "memorization":
        lines = ["m,probability,stderr"]
        for m in _int_list(args.m):
            est = theory.memorization_probability(
                m, args.epsilon, args.trials, args.noise,
                seed=[args.seed, m], dim=args.dim,
            )
            lines.append(f"{m},{est.value!r},{est.std_error!r}")
        _emit(lines, args.out)
    else:
        lines = ["m,empirical_error,gaussian_error"]
        for m in _int_list(args.m):
            est = theory.quantile_estimation_error(
                m, args.alpha, args.trials, seed=[args.seed, m],
                dist_mean=args.mean, dist_std=args.std,
            )
            lines.append(f"{m},{est.empirical_error!r},{est.gaussian_error!r}")
        _emit(lines, args.out)
    return 0


def _cmd_synth(args):
    from . import synth

    out = synth.ensure_dataset(
        args.out, n_train=args.train_n, n_test=args.test_n, seed=args.seed
    )
    print(f"synthetic corpus ready under {out}")
    return 0


def _cmd_bench(args):
    from . import bench

    print(bench.format_report(batch=args.batch, repeat=args.repeat))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="qreplay",
        description="quantile-risk experience replay benchmark harness",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    _run_parser(sub)
    _theory_parsers(sub)

    s = sub.add_parser("synth-data", help="generate the synthetic digit corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--train-n", type=int, default=10000)
    s.add_argument("--test-n", type=int, default=2000)
    s.add_argument("--seed", type=int, default=2026)

    b = sub.add_parser("bench", help="compare kernel backends")
    b.add_argument("--batch", type=int, default=512)
    b.add_argument("--repeat", type=int, default=30)

    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "theory": _cmd_theory,
        "synth-data": _cmd_synth,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.cmd](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
