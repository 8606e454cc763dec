import argparse
from os import path
from typing import List, Optional

import numpy as np

from config.logging import cli_logger as logger
from config.settings import BURN_IN_FACTOR, DEFAULT_SEED
from efmsig.core.expectation import (expected_signature_stationary,
                                     expected_signature_transient, predict)
from efmsig.core.persistence import (load_path, load_tensor, save_path,
                                     save_rates, save_tensor)
from efmsig.core.rates import Rates
from efmsig.core.riccati import solve_charfunc
from efmsig.core.signature import (PiecewisePath, bv_bound_check,
                                   fading_memory_gap, signature_of_path)
from efmsig.core.tensor import words
from efmsig.lab import experiments
from efmsig.lab.simulation import (SimConfig, simulate_bm, simulate_langevin,
                                   simulate_ou)
from efmsig.learning.regression import (HyperGrid, fit_signal_model,
                                        run_regression_experiment)
from efmsig.manager import BatchManager
from shared.errors import DomainError, UsageError
from shared.flags import (CMD_CHARFUNC, CMD_EXPECTED, CMD_LAB, CMD_PREDICT,
                          CMD_REGRESS, CMD_SIG, CMD_SIMULATE, DRIVER_BM,
                          DRIVER_OU, DRIVERS, EXPERIMENTS, LAB_ERGODIC,
                          LAB_IDENTITY, LAB_ITO, LAB_L2BOUND, LAB_MOMENTS,
                          LAB_OU_REPR, LAB_PREDICTION, LAB_STATIONARITY,
                          MODELS, ORIGIN_FLAT_PAST, ORIGIN_START, ORIGINS)
from shared.protocol import (build_report, format_word, read_path_csv,
                             to_jsonable, write_table)
from utils.helpers import parse_float_list, parse_lambda, save_json

MODEL_ALL = "all"

# path counts used by `lab` when --paths is not given
LAB_DEFAULT_PATHS = {
    LAB_MOMENTS: 10_000,
    LAB_ERGODIC: 2000,
    LAB_STATIONARITY: 2000,
    LAB_L2BOUND: 2000,
    LAB_IDENTITY: 1,
    LAB_OU_REPR: 1000,
    LAB_PREDICTION: 2000,
    LAB_ITO: 16,
}


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so the application picks the exit code."""

    def error(self, message: str):
        raise UsageError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _order(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an order >= 0, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _int_list(text: str) -> List[int]:
    values = parse_float_list(text)
    if any(v != int(v) or v < 0 for v in values):
        raise DomainError(f"Expected non-negative integers, got '{text}'")
    return [int(v) for v in values]


class Commands:
    """
    Handles the command-line actions: sig, expected, simulate, lab, regress,
    predict and charfunc. The application owns parsing and the output directory;
    every action writes its files into `out` and returns the JSON report.
    """

    def __init__(self):
        self.commands = {
            CMD_SIG: "Signature of a path CSV. Usage: sig --input path.csv --lambda 1,2 --order 3 [--time-augment]",
            CMD_EXPECTED: "Expected signature of time-augmented BM. Usage: expected --lambda 1,0.5 --dim 1 --order 4 --stationary",
            CMD_SIMULATE: "Simulate a driver. Usage: simulate {bm|ou|langevin} --seed 1 --dt 1e-3 --t1 4 --paths 10",
            CMD_LAB: "Run a Monte Carlo experiment. Usage: lab {moments|ergodic|...} --lambda 1,0.5 --order 3",
            CMD_REGRESS: "Elastic-net fit on signature features. Usage: regress --model efm_sig --order 6 --split 1,2,4",
            CMD_PREDICT: "Conditional mean and variance. Usage: predict --input path.csv --ell ell.csv --lambda 1,1 --order 4 --horizon 1",
            CMD_CHARFUNC: "Characteristic function via the Riccati system. Usage: charfunc --ell ell.csv --lambda 1,1 --order 6 --T 8",
        }
        self.action_map = {
            CMD_SIG: self.action_sig,
            CMD_EXPECTED: self.action_expected,
            CMD_SIMULATE: self.action_simulate,
            CMD_LAB: self.action_lab,
            CMD_REGRESS: self.action_regress,
            CMD_PREDICT: self.action_predict,
            CMD_CHARFUNC: self.action_charfunc,
        }
        self.lab_map = {
            LAB_MOMENTS: self.lab_moments,
            LAB_ERGODIC: self.lab_ergodic,
            LAB_STATIONARITY: self.lab_stationarity,
            LAB_L2BOUND: self.lab_l2bound,
            LAB_IDENTITY: self.lab_identity,
            LAB_OU_REPR: self.lab_ourepr,
            LAB_PREDICTION: self.lab_prediction,
            LAB_ITO: self.lab_ito,
        }

    # parser

    def build_parser(self) -> CommandParser:
        parser = CommandParser(prog="efmsig", description="Exponentially fading memory signatures.")
        subparsers = parser.add_subparsers(dest="command", required=True)

        sub = {name: subparsers.add_parser(name, help=text) for name, text in self.commands.items()}
        for command in sub.values():
            command.add_argument("--out", default=None, help="Output directory (default OUTPUT_DIR/<command>).")
            command.add_argument("--threads", type=_positive_int, default=None, help="Worker threads.")

        p = sub[CMD_SIG]
        p.add_argument("--input", required=True)
        p.add_argument("--lambda", dest="rates", required=True)
        p.add_argument("--order", type=_order, required=True)
        p.add_argument("--time-augment", action="store_true")
        p.add_argument("--origin", choices=ORIGINS, default=ORIGIN_START)
        p.add_argument("--bv-check", action="store_true")
        p.add_argument("--compare", default=None, help="Second path for the fading-memory gap.")
        p.add_argument("--split", type=float, default=None)

        p = sub[CMD_EXPECTED]
        p.add_argument("--lambda", dest="rates", required=True)
        p.add_argument("--dim", type=_positive_int, required=True)
        p.add_argument("--order", type=_order, required=True)
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--horizon", type=float)
        group.add_argument("--stationary", action="store_true")

        p = sub[CMD_SIMULATE]
        p.add_argument("driver", choices=DRIVERS)
        self._add_simulation(p, burn_in=0.0)
        p.add_argument("--paths", type=_positive_int, default=1)
        p.add_argument("--mu", type=_positive_float, default=1.0)
        p.add_argument("--p", type=_positive_int, default=5)
        p.add_argument("--cold", action="store_true", help="Start the OU process at 0.")

        p = sub[CMD_LAB]
        p.add_argument("experiment", choices=EXPERIMENTS)
        p.add_argument("--lambda", dest="rates", required=True)
        p.add_argument("--order", type=_order, default=3)
        self._add_simulation(p)
        p.add_argument("--paths", type=_positive_int, default=None)
        p.add_argument("--horizon", type=_positive_float, default=None)
        p.add_argument("--every", type=_positive_int, default=None)
        p.add_argument("--fit-from", type=float, default=None)
        p.add_argument("--t-a", type=float, default=None)
        p.add_argument("--t-b", type=float, default=None)
        p.add_argument("--k", default="1,2,3")
        p.add_argument("--mu", type=_positive_float, default=5.0)
        p.add_argument("--orders", default="2,4,6,8,10")
        p.add_argument("--ell", default=None)
        p.add_argument("--t", type=float, default=None)
        p.add_argument("--dts", default="0.04,0.02,0.01,0.005")

        p = sub[CMD_REGRESS]
        p.add_argument("--signal", default=None)
        p.add_argument("--driver", default=None)
        p.add_argument("--model", choices=MODELS + [MODEL_ALL], default=MODEL_ALL)
        p.add_argument("--order", type=_order, default=6)
        p.add_argument("--lambda", dest="rates", default="1,3,10", help="Rate grid.")
        p.add_argument("--alpha-grid", default="1e-6,1e-5,1e-4,1e-3,1e-2,1e-1")
        p.add_argument("--omega-grid", default="0,0.5,1")
        p.add_argument("--split", default="1,2,4")
        self._add_simulation(p, dt=1.0 / 3650)
        p.add_argument("--mu", type=_positive_float, default=10.0)
        p.add_argument("--p", type=_positive_int, default=5)

        p = sub[CMD_PREDICT]
        p.add_argument("--input", required=True)
        p.add_argument("--ell", required=True)
        p.add_argument("--lambda", dest="rates", required=True)
        p.add_argument("--order", type=_order, required=True)
        p.add_argument("--horizon", type=float, required=True)
        p.add_argument("--time-augment", action="store_true")
        p.add_argument("--origin", choices=ORIGINS, default=ORIGIN_FLAT_PAST)
        p.add_argument("--no-variance", action="store_true")

        p = sub[CMD_CHARFUNC]
        p.add_argument("--ell", required=True)
        p.add_argument("--lambda", dest="rates", required=True)
        p.add_argument("--order", type=_order, required=True)
        p.add_argument("--T", dest="horizon", type=float, required=True)
        p.add_argument("--dt", type=_positive_float, default=1e-3)
        p.add_argument("--trajectory", default=None, help="CSV file for t, Re phi, Im phi.")
        p.add_argument("--mc-paths", type=_positive_int, default=None)
        p.add_argument("--mc-dt", type=_positive_float, default=1e-3)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)

        return parser

    @staticmethod
    def _add_simulation(p: argparse.ArgumentParser, dt: float = 1e-3, burn_in: Optional[float] = None):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--dt", type=_positive_float, default=dt)
        p.add_argument("--t0", type=float, default=0.0)
        p.add_argument("--t1", type=float, default=1.0)
        p.add_argument("--dim", type=_positive_int, default=1)
        p.add_argument("--burn-in", type=float, default=burn_in,
                       help=f"Time units before t0 (default {BURN_IN_FACTOR:g} / min lambda).")

    def handle(self, args: argparse.Namespace, out: str, manager: BatchManager) -> dict:
        """Dispatches to the action for args.command."""
        logger.info(f"Running '{args.command}' into {out}")
        return self.action_map[args.command](args, out, manager)

    # actions

    def action_sig(self, args, out: str, _):
        """Signature of one path, with the optional BV and fading-memory checks."""
        if args.compare and args.split is None:
            raise UsageError("--compare needs --split")

        piecewise = load_path(args.input, args.time_augment)
        rates = Rates(parse_lambda(args.rates, piecewise.width))
        other = load_path(args.compare, args.time_augment) if args.compare else None

        state = signature_of_path(rates, piecewise, args.order, args.origin)
        save_tensor(path.join(out, "signature.csv"), state.sig)
        save_json(
            path.join(out, "signature.json"),
            {"lambda": rates.rates.tolist(), "order": args.order, "t_final": state.t},
        )

        report = build_report(CMD_SIG, rates=rates.rates, order=args.order, origin=args.origin, t_final=state.t)
        if args.bv_check:
            report["bv"] = to_jsonable(bv_bound_check(rates, piecewise, args.order))
        if other is not None:
            gap = fading_memory_gap(rates, piecewise, other, args.split, args.order)
            report["fading_memory"] = to_jsonable(gap)
        return report

    def action_expected(self, args, out: str, _):
        rates = Rates(parse_lambda(args.rates, args.dim + 1))
        if args.stationary:
            expected = expected_signature_stationary(rates, args.dim, args.order)
        else:
            expected = expected_signature_transient(rates, args.dim, args.order, args.horizon)

        save_tensor(path.join(out, "expected.csv"), expected.value)
        horizon = "inf" if expected.stationary else expected.horizon
        return build_report(CMD_EXPECTED, rates=rates.rates, dim=args.dim, order=args.order, horizon=horizon)

    def action_simulate(self, args, out: str, manager: BatchManager):
        cfg = self._config(args, burn_in=args.burn_in or 0.0)
        n_paths = None if args.paths == 1 else args.paths

        if args.driver == DRIVER_BM:
            driver = simulate_bm(cfg, n_paths, manager)
        elif args.driver == DRIVER_OU:
            driver = simulate_ou(cfg, args.mu, not args.cold, n_paths, manager)
        else:
            driver = simulate_langevin(cfg, args.mu, args.p, n_paths, manager)

        if n_paths is None:
            save_path(path.join(out, "path.csv"), driver)
        else:
            for i in range(n_paths):
                save_path(path.join(out, f"path_{i:05d}.csv"), PiecewisePath(driver.times, driver.values[i]))

        increments = np.diff(driver.values, axis=-2)
        return build_report(
            CMD_SIMULATE,
            driver=args.driver,
            seed=cfg.seed,
            paths=args.paths,
            samples=driver.times.size,
            t_start=driver.times[0],
            t_end=driver.times[-1],
            increment_variance_per_dt=float(np.var(increments) / cfg.dt),
            final_mean=float(np.mean(driver.values[..., -1, :])),
        )

    def action_lab(self, args, out: str, manager: BatchManager):
        rates = Rates(parse_lambda(args.rates, args.dim + 1))
        burn_in = BURN_IN_FACTOR / rates.min_rate if args.burn_in is None else args.burn_in
        cfg = self._config(args, burn_in=burn_in)
        n_paths = args.paths or LAB_DEFAULT_PATHS[args.experiment]

        payload = self.lab_map[args.experiment](args, cfg, rates, n_paths, out, manager)
        return build_report(args.experiment, rates=rates.rates, seed=cfg.seed, paths=n_paths, **payload)

    def lab_moments(self, args, cfg, rates, n_paths, out, manager):
        horizon = args.horizon or BURN_IN_FACTOR / rates.min_rate
        expected = expected_signature_transient(rates, args.dim, args.order, horizon).value
        mean, stderr = experiments.mc_signature_moments(cfg, rates, args.order, n_paths, horizon, manager)

        save_tensor(path.join(out, "mean.csv"), mean)
        save_tensor(path.join(out, "stderr.csv"), stderr)
        save_tensor(path.join(out, "expected.csv"), expected)

        gap = np.abs(mean.to_flat() - expected.to_flat())
        se = stderr.to_flat()
        random = se > 0
        z = gap[random] / se[random]
        worst = int(np.argmax(z)) if z.size else None
        names = [format_word(word) for word, keep in zip(words(rates.width, args.order), random) if keep]
        return {
            "horizon": horizon,
            "max_z": float(z.max()) if z.size else 0.0,
            "worst_word": None if worst is None else names[worst],
            "deterministic_gap": float(gap[~random].max()),
        }

    def lab_ergodic(self, args, cfg, rates, n_paths, out, manager):
        report = experiments.ergodic_decay_experiment(
            cfg, rates, args.order, n_paths, args.fit_from, args.every, manager
        )
        write_table(path.join(out, "decay.csv"), ["t", "mean_square_gap"], [report.times, report.mean_square_gap])
        return {"result": report}

    def lab_stationarity(self, args, cfg, rates, n_paths, out, manager):
        if args.t_a is None or args.t_b is None:
            raise UsageError("stationarity needs --t-a and --t-b")
        report = experiments.stationarity_check(cfg, rates, args.order, n_paths, args.t_a, args.t_b, manager)
        return {"result": report, "rejected": report.rejected, "passed": report.passed}

    def lab_l2bound(self, args, cfg, rates, n_paths, out, manager):
        report = experiments.l2_bound_check(cfg, rates, args.order, n_paths, args.every, manager)
        write_table(
            path.join(out, "l2norm.csv"),
            ["t", "mean_square_norm", "stderr"],
            [report.times, report.mean_square_norm, report.stderr],
        )
        return {"result": report}

    def lab_identity(self, args, cfg, rates, n_paths, out, manager):
        results = [experiments.exp_integral_identity_check(cfg, rates, k) for k in _int_list(args.k)]
        return {"results": results, "max_residual": max(abs(result.residual) for result in results)}

    def lab_ourepr(self, args, cfg, rates, n_paths, out, manager):
        orders = _int_list(args.orders)
        report = experiments.ou_representation_experiment(cfg, rates, args.mu, orders, n_paths, manager)
        return {"mu": args.mu, "result": report, "decreasing": report.decreasing}

    def lab_prediction(self, args, cfg, rates, n_paths, out, manager):
        if args.ell is None or args.t is None or args.horizon is None:
            raise UsageError("prediction needs --ell, --t and --horizon")
        ell = load_tensor(args.ell, rates.width)
        report = experiments.conditional_mean_check(
            cfg, rates, ell, args.order, n_paths, args.t, args.horizon, manager
        )
        return {"result": report}

    def lab_ito(self, args, cfg, rates, n_paths, out, manager):
        if args.ell is None:
            raise UsageError("ito needs --ell")
        ell = load_tensor(args.ell, rates.width)
        report = experiments.ito_residual_check(cfg, rates, ell, args.order, parse_float_list(args.dts), n_paths)
        return {"result": report}

    def action_regress(self, args, out: str, manager: BatchManager):
        """Fits one or all feature models; files when given, else a simulated Langevin signal."""
        split = tuple(parse_float_list(args.split))
        if len(split) != 3:
            raise UsageError(f"--split needs three numbers, got '{args.split}'")
        if (args.signal is None) != (args.driver is None):
            raise UsageError("--signal and --driver go together")

        hyper = HyperGrid(
            alphas=tuple(parse_float_list(args.alpha_grid)),
            omegas=tuple(parse_float_list(args.omega_grid)),
            rate_values=tuple(parse_lambda(args.rates)),
        )
        models = MODELS if args.model == MODEL_ALL else [args.model]

        if args.signal is not None:
            times, signal = read_path_csv(args.signal)
            driver_times, driver = read_path_csv(args.driver)
            if not np.array_equal(times, driver_times):
                raise DomainError("Signal and driver must share their time grid")
            fits = [
                fit_signal_model(times, signal[:, 0], driver, model, hyper, split, args.order, manager)
                for model in models
            ]
        else:
            cfg = self._config(args, burn_in=args.burn_in or 0.0)
            fits = [
                run_regression_experiment(cfg, model, hyper, args.order, args.mu, args.p, split, manager)
                for model in models
            ]

        for fit in fits:
            save_tensor(path.join(out, f"ell_{fit.model}.csv"), fit.ell)
            write_table(path.join(out, f"prediction_{fit.model}.csv"), ["t", "prediction"], [fit.times, fit.prediction])

        ranking = [fit.model for fit in sorted(fits, key=lambda fit: fit.test_mse)]
        report = build_report(CMD_REGRESS, split=split, order=args.order, models=fits, ranking=ranking)
        save_json(path.join(out, "metrics.json"), report)
        return report

    def action_predict(self, args, out: str, _):
        piecewise = load_path(args.input, args.time_augment)
        rates = Rates(parse_lambda(args.rates, piecewise.width))
        ell = load_tensor(args.ell, rates.width)

        state = signature_of_path(rates, piecewise, args.order, args.origin)
        mean, variance = predict(rates, ell, state, args.horizon, with_variance=not args.no_variance)
        return build_report(
            CMD_PREDICT, rates=rates.rates, t=state.t, horizon=args.horizon, mean=mean, variance=variance
        )

    def action_charfunc(self, args, out: str, manager: BatchManager):
        rates = Rates(parse_lambda(args.rates))
        ell = load_tensor(args.ell, rates.width)
        cfg = None
        if args.mc_paths:
            cfg = SimConfig(seed=args.seed, dt=args.mc_dt, t0=0.0, t1=args.horizon, d=rates.width - 1)

        result = solve_charfunc(rates, ell, args.horizon, args.dt, args.order)
        save_rates(path.join(out, "rates.json"), rates)
        if args.trajectory:
            phi = result.phi_trajectory
            write_table(args.trajectory, ["t", "phi_re", "phi_im"], [result.times, phi.real, phi.imag])

        report = build_report(
            CMD_CHARFUNC,
            rates=rates.rates,
            order=args.order,
            T=args.horizon,
            dt=args.dt,
            phi_re=result.phi.real,
            phi_im=result.phi.imag,
            stationary=result.stationary,
        )
        if cfg is not None:
            estimates = experiments.mc_charfunc(cfg, rates, ell, args.order, args.mc_paths, [args.horizon], manager)
            report["monte_carlo"] = to_jsonable(estimates)
        return report

    @staticmethod
    def _config(args, burn_in: float) -> SimConfig:
        return SimConfig(
            seed=args.seed,
            dt=args.dt,
            t0=args.t0,
            t1=args.t1,
            d=args.dim,
            burn_in=burn_in,
        )
