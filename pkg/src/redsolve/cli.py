"""Experiment command line: simulate data, run solvers, sweep, evaluate.

Every artifact is reproducible bit-for-bit from the persisted config
sidecar plus the input files: solver runs are seeded, sweep cells get
their seeds from the explicit seed list, and wall-clock timings are
written as zeros unless --timings is passed.

Exit codes: 0 success, 2 configuration error, 3 numerical abort (NaN),
4 I/O error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

import numpy as np

from .core import Algorithm, Rng, SolverConfig, default_step_size
from .denoisers import DenoiserKind, DenoiserSpec
from .forward import estimate_lipschitz, load_measurements, save_measurements, simulate_cdp
from .images import make_phantom, read_pgm, write_pgm
from .metrics import (
    aggregate_sweep,
    reconstruction_snr_db,
    snr_db,
    sweep_summary_csv,
    trace_from_csv,
    trace_to_csv,
)
from .red import NumericalDivergenceError, run_solver

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_X0_SEED_SALT = 0x5DEECE66D  # decouples the start-image stream from the run stream

RUN_DEFAULTS = {
    "alg": "on-red",
    "B": 1,
    "tau": 0.2,
    "sigma": 0.5,
    "gamma": "auto",
    "iters": 100,
    "seed": 0,
    "denoiser": "tv",
    "tv_iters": 50,
    "tv_weight": None,
    "kernel_alpha": 0.5,
    "subset": None,
    "x0": "flat",
    "log_stride": 1,
    "timings": False,
    "truth": None,
    "out_trace": "trace.csv",
    "out_image": "recon.pgm",
    "out_config": None,
}


class ConfigError(ValueError):
    pass


def _parse_gamma(text):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"gamma must be a positive number or 'auto', got {text!r}")
    if value <= 0:
        raise ConfigError("gamma must be positive")
    return value


def _parse_snr(text: str) -> float:
    if text.lower() in ("inf", "+inf", "infinity"):
        return float("inf")
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--snr must be a number in dB or 'inf', got {text!r}")


def _parse_seed_list(text: str) -> list[int]:
    """Seed specs: '0..4' (inclusive range) or '0,3,7'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ConfigError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s]


def _parse_float_list(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s]


def _parse_int_list(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s]


def _merge_options(defaults: dict, config_path, cli_values: dict) -> dict:
    """Apply precedence: defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config file {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(loaded)
    resolved.update({k: v for k, v in cli_values.items() if v is not None})
    return resolved


def _build_denoiser(opts: dict) -> DenoiserSpec:
    kind = {
        "identity": DenoiserKind.IDENTITY,
        "tv": DenoiserKind.TV_PROX,
        "box": DenoiserKind.AVERAGED_KERNEL,
    }.get(opts["denoiser"])
    if kind is None:
        raise ConfigError(f"unknown denoiser {opts['denoiser']!r}")
    return DenoiserSpec(
        kind=kind,
        sigma=float(opts["sigma"]),
        tv_inner_iters=int(opts["tv_iters"]),
        tv_weight=None if opts["tv_weight"] is None else float(opts["tv_weight"]),
        kernel_alpha=float(opts["kernel_alpha"]),
    )


def _initial_image(mode: str, shape: tuple[int, int], seed: int) -> np.ndarray:
    if mode == "zeros":
        return np.zeros(shape)
    if mode == "flat":
        return np.full(shape, 0.5)
    if mode == "rand":
        rng = Rng(seed ^ _X0_SEED_SALT)
        return rng.uniform(shape[0] * shape[1]).reshape(shape)
    raise ConfigError(f"unknown x0 mode {mode!r}; expected zeros, flat or rand")


def _resolve_run(opts: dict, mset) -> tuple[SolverConfig, float, np.ndarray]:
    try:
        algorithm = Algorithm(opts["alg"])
    except ValueError:
        raise ConfigError(f"unknown algorithm {opts['alg']!r}")
    tau = float(opts["tau"])
    if algorithm is Algorithm.SGM:
        if tau != 0.0:
            print("warning: sgm ignores tau (no denoiser term)", file=sys.stderr)
        tau = 0.0
    if algorithm is not Algorithm.GM_RED and opts["subset"] is not None:
        raise ConfigError("--subset applies to gm-red only")

    lipschitz = estimate_lipschitz(mset)
    gamma = opts["gamma"]
    if isinstance(gamma, str):
        gamma = _parse_gamma(gamma)
    if gamma == "auto":
        gamma = default_step_size(lipschitz, tau)

    try:
        config = SolverConfig(
            algorithm=algorithm,
            gamma=float(gamma),
            tau=tau,
            iterations=int(opts["iters"]),
            seed=int(opts["seed"]),
            denoiser=_build_denoiser(opts),
            minibatch_b=int(opts["B"]),
            total_i=len(mset),
            subset=None if opts["subset"] is None else int(opts["subset"]),
            log_stride=int(opts["log_stride"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    config.check_step_size(lipschitz)
    x0 = _initial_image(opts["x0"], mset.shape, config.seed)
    return config, lipschitz, x0


def _resolved_config_json(opts: dict, extra: dict) -> str:
    payload = {k: opts.get(k) for k in sorted(opts)}
    payload.update(extra)
    payload = {k: payload[k] for k in sorted(payload)}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def cmd_simulate(args: argparse.Namespace) -> int:
    if (args.phantom is None) == (args.image is None):
        raise ConfigError("pass exactly one of --phantom or --image")
    if args.image is not None:
        truth = read_pgm(args.image)
    else:
        try:
            truth = make_phantom(args.phantom)
        except ValueError as exc:
            raise ConfigError(str(exc))
    if args.I < 1:
        raise ConfigError("--I must be positive")
    snr = _parse_snr(args.snr)
    mset = simulate_cdp(truth, args.I, snr, Rng(args.seed))
    save_measurements(mset, args.out)

    truth_out = args.truth_out
    if truth_out is None:
        stem = args.out.rsplit(".", 1)[0] if "." in os.path.basename(args.out) else args.out
        truth_out = stem + "_truth.pgm"
    write_pgm(truth_out, truth)

    from .forward import cdp_forward

    realized = []
    for m in mset:
        clean = cdp_forward(truth, m.mask)
        if np.array_equal(m.magnitudes, clean):
            realized.append(float("inf"))
        else:
            realized.append(snr_db(m.magnitudes, clean))
    mean_snr = float(np.mean(realized))
    print(f"measurements={len(mset)}")
    print(f"out={args.out}")
    print(f"truth={truth_out}")
    print(f"realized_input_snr_db={'inf' if np.isinf(mean_snr) else f'{mean_snr:.6f}'}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cli_values = {
        "alg": args.alg,
        "B": args.B,
        "tau": args.tau,
        "sigma": args.sigma,
        "gamma": args.gamma,
        "iters": args.iters,
        "seed": args.seed,
        "denoiser": args.denoiser,
        "tv_iters": args.tv_iters,
        "tv_weight": args.tv_weight,
        "kernel_alpha": args.kernel_alpha,
        "subset": args.subset,
        "x0": args.x0,
        "log_stride": args.log_stride,
        "timings": args.timings,
        "truth": args.truth,
        "out_trace": args.out_trace,
        "out_image": args.out_image,
        "out_config": args.out_config,
    }
    opts = _merge_options(RUN_DEFAULTS, args.config, cli_values)
    mset = load_measurements(args.measurements)
    truth = read_pgm(opts["truth"]) if opts["truth"] else None
    config, lipschitz, x0 = _resolve_run(opts, mset)

    recon, trace = run_solver(mset, x0, config, truth)

    out_trace = opts["out_trace"]
    out_image = opts["out_image"]
    out_config = opts["out_config"] or (out_trace.rsplit(".", 1)[0] + "_config.json")
    with open(out_trace, "w", encoding="utf-8", newline="") as fh:
        fh.write(trace_to_csv(trace, include_timing=bool(opts["timings"])))
    write_pgm(out_image, recon)
    resolved = dict(opts)
    resolved["gamma"] = config.gamma  # derived value when 'auto' was requested
    with open(out_config, "w", encoding="utf-8") as fh:
        fh.write(
            _resolved_config_json(
                resolved,
                {
                    "measurements": args.measurements,
                    "lipschitz": lipschitz,
                    "format_version": 1,
                },
            )
        )

    final = trace.rows[-1]
    print(f"trace={out_trace}")
    print(f"image={out_image}")
    print(f"config={out_config}")
    print(f"final_norm_acc={final.norm_acc:.6e}")
    if final.snr_db is not None:
        print(f"final_snr_db={'inf' if np.isinf(final.snr_db) else f'{final.snr_db:.4f}'}")
    if trace.started_at_fixed_point:
        print("note: run started at a fixed point (zero initial residual)")
    return EXIT_OK


def _sweep_cell_job(payload: dict):
    """Worker entry: run one sweep cell and return its artifacts as text."""
    mset = load_measurements(payload["measurements"])
    truth = read_pgm(payload["truth"]) if payload["truth"] else None
    opts = payload["opts"]
    config, _, x0 = _resolve_run(opts, mset)
    recon, trace = run_solver(mset, x0, config, truth)
    return {
        "key": payload["key"],
        "gamma": config.gamma,
        "trace_csv": trace_to_csv(trace, include_timing=bool(opts["timings"])),
        "recon": recon,
    }


def cmd_sweep(args: argparse.Namespace) -> int:
    cli_values = {
        "alg": args.alg,
        "B": None,
        "tau": args.tau,
        "sigma": args.sigma,
        "gamma": None,
        "iters": args.iters,
        "seed": None,
        "denoiser": args.denoiser,
        "tv_iters": args.tv_iters,
        "tv_weight": args.tv_weight,
        "kernel_alpha": args.kernel_alpha,
        "subset": None,
        "x0": args.x0,
        "log_stride": args.log_stride,
        "timings": args.timings,
        "truth": args.truth,
        "out_trace": "",
        "out_image": "",
        "out_config": "",
    }
    base_opts = _merge_options(RUN_DEFAULTS, args.config, cli_values)
    if base_opts["alg"] == "gm-red":
        raise ConfigError("sweep varies the minibatch size; use on-red or sgm")

    multipliers = _parse_float_list(args.gammas)
    batches = _parse_int_list(args.Bs)
    seeds = _parse_seed_list(args.seeds)
    if not multipliers or not batches or not seeds:
        raise ConfigError("--gammas, --Bs and --seeds must be non-empty")

    mset = load_measurements(args.measurements)
    tau = float(base_opts["tau"])
    gamma0 = default_step_size(estimate_lipschitz(mset), tau)

    os.makedirs(args.out_dir, exist_ok=True)
    gamma_text = [s.strip() for s in args.gammas.split(",") if s.strip()]

    jobs = []
    for gi, mult in enumerate(multipliers):
        for b in batches:
            for seed in seeds:
                opts = dict(base_opts)
                opts["gamma"] = gamma0 * mult
                opts["B"] = b
                opts["seed"] = seed
                stem = f"g{gamma_text[gi]}_B{b}_s{seed}"
                jobs.append(
                    {
                        "key": (gamma0 * mult, b, seed, stem),
                        "measurements": args.measurements,
                        "truth": base_opts["truth"],
                        "opts": opts,
                    }
                )

    workers = args.workers or min(len(jobs), os.cpu_count() or 1)
    results = []
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_cell_job, j) for j in jobs]
            results = [f.result() for f in futures]  # submission order, deterministic
    else:
        results = [_sweep_cell_job(j) for j in jobs]

    traces = {}
    for res in results:
        gamma, b, seed, stem = res["key"]
        trace_path = os.path.join(args.out_dir, f"trace_{stem}.csv")
        with open(trace_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(res["trace_csv"])
        write_pgm(os.path.join(args.out_dir, f"recon_{stem}.pgm"), res["recon"])
        traces[(gamma, b, seed)] = trace_from_csv(res["trace_csv"])

    summary = aggregate_sweep(traces)
    summary_path = os.path.join(args.out_dir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(sweep_summary_csv(summary))

    config_path = os.path.join(args.out_dir, "sweep_config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(
            _resolved_config_json(
                base_opts,
                {
                    "measurements": args.measurements,
                    "gamma0": gamma0,
                    "gamma_multipliers": multipliers,
                    "batches": batches,
                    "seeds": seeds,
                    "format_version": 1,
                },
            )
        )
    print(f"cells={len(multipliers) * len(batches)}")
    print(f"runs={len(jobs)}")
    print(f"summary={summary_path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if args.recon is None and args.trace is None:
        raise ConfigError("pass --recon/--truth files or --trace, or both")
    if (args.recon is None) != (args.truth is None):
        raise ConfigError("--recon and --truth go together")
    if args.recon is not None:
        recon = read_pgm(args.recon)
        truth = read_pgm(args.truth)
        value = reconstruction_snr_db(recon, truth)
        print(f"snr_db={'inf' if np.isinf(value) else f'{value:.6f}'}")
    if args.trace is not None:
        with open(args.trace, "r", encoding="utf-8") as fh:
            trace = trace_from_csv(fh.read())
        if trace.started_at_fixed_point:
            print("final_norm_acc=0.0 (started at a fixed point)")
        else:
            print(f"final_norm_acc={trace.final_norm_acc():.6e}")
            print(f"min_norm_acc={trace.min_norm_acc():.6e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redsolve",
        description="Batch/online regularization-by-denoising solvers for "
        "coded-diffraction phase retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate coded diffraction measurements")
    p_sim.add_argument("--phantom", help="built-in image, e.g. shepp32 or checker32")
    p_sim.add_argument("--image", help="ground-truth PGM (P5) file")
    p_sim.add_argument("--I", type=int, default=6, help="number of measurements")
    p_sim.add_argument("--snr", default="25", help="input SNR in dB, or 'inf'")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="measurement container path")
    p_sim.add_argument("--truth-out", dest="truth_out", help="ground-truth PGM output")
    p_sim.set_defaults(func=cmd_simulate)

    p_run = sub.add_parser("run", help="run one solver configuration")
    p_run.add_argument("measurements", help="measurement container from 'simulate'")
    p_run.add_argument("--config", help="JSON file with option defaults")
    p_run.add_argument("--alg", choices=["gm-red", "on-red", "sgm"])
    p_run.add_argument("--B", type=int, help="minibatch size (online solvers)")
    p_run.add_argument("--tau", type=float, help="regularization strength")
    p_run.add_argument("--sigma", type=float, help="denoiser strength")
    p_run.add_argument("--gamma", help="step size, or 'auto' for 1/(L+2*tau)")
    p_run.add_argument("--iters", type=int, help="iteration budget")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--denoiser", choices=["identity", "tv", "box"])
    p_run.add_argument("--tv-iters", dest="tv_iters", type=int)
    p_run.add_argument("--tv-weight", dest="tv_weight", type=float)
    p_run.add_argument("--kernel-alpha", dest="kernel_alpha", type=float)
    p_run.add_argument("--subset", type=int, help="gm-red: use only the first N measurements")
    p_run.add_argument("--x0", choices=["zeros", "flat", "rand"])
    p_run.add_argument("--log-stride", dest="log_stride", type=int)
    p_run.add_argument("--truth", help="ground-truth PGM for SNR logging")
    p_run.add_argument("--timings", action=argparse.BooleanOptionalAction)
    p_run.add_argument("--out-trace", dest="out_trace")
    p_run.add_argument("--out-image", dest="out_image")
    p_run.add_argument("--out-config", dest="out_config")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid of step-size multipliers x batch sizes")
    p_sweep.add_argument("measurements")
    p_sweep.add_argument("--config", help="JSON file with option defaults")
    p_sweep.add_argument("--gammas", required=True, help="step multipliers, e.g. 1,0.333,0.111")
    p_sweep.add_argument("--Bs", required=True, help="batch sizes, e.g. 10,20,30")
    p_sweep.add_argument("--seeds", required=True, help="e.g. 0..4 or 0,1,2")
    p_sweep.add_argument("--alg", choices=["on-red", "sgm"])
    p_sweep.add_argument("--tau", type=float)
    p_sweep.add_argument("--sigma", type=float)
    p_sweep.add_argument("--iters", type=int)
    p_sweep.add_argument("--denoiser", choices=["identity", "tv", "box"])
    p_sweep.add_argument("--tv-iters", dest="tv_iters", type=int)
    p_sweep.add_argument("--tv-weight", dest="tv_weight", type=float)
    p_sweep.add_argument("--kernel-alpha", dest="kernel_alpha", type=float)
    p_sweep.add_argument("--x0", choices=["zeros", "flat", "rand"])
    p_sweep.add_argument("--log-stride", dest="log_stride", type=int)
    p_sweep.add_argument("--truth")
    p_sweep.add_argument("--timings", action=argparse.BooleanOptionalAction)
    p_sweep.add_argument("--workers", type=int)
    p_sweep.add_argument("--out-dir", dest="out_dir", required=True)
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("eval", help="score a reconstruction and/or a trace")
    p_eval.add_argument("--recon", help="reconstruction PGM")
    p_eval.add_argument("--truth", help="ground-truth PGM")
    p_eval.add_argument("--trace", help="trace CSV")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
