"""
Elastic-net regression of a signal on signature features, and the three-model
comparison on a stationary Langevin signal: plain signature of (t, W), plain
signature of (t, U) with U an OU process driven by W, and the EFM-signature of
(t, W) observed since the distant past.
"""

import itertools
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.logging import core_logger as logger
from config.settings import (BURN_IN_FACTOR, ELASTIC_NET_MAX_SWEEPS,
                             ELASTIC_NET_TOL)
from efmsig.core.rates import Rates
from efmsig.core.signature import (PiecewisePath, ou_from_driver,
                                   signature_stream)
from efmsig.core.tensor import TensorSeq, storage_size
from efmsig.lab.simulation import SimConfig, simulate_bm, simulate_langevin
from efmsig.manager import BatchManager, run_ordered
from shared.errors import DomainError
from shared.flags import (MODEL_EFM_SIG, MODEL_SIG_OU, MODELS,
                          ORIGIN_FLAT_PAST, ORIGIN_START)

DEFAULT_SPLIT = (1.0, 2.0, 4.0)


def _soft_threshold(value: float, level: float) -> float:
    if value > level:
        return value - level
    if value < -level:
        return value + level
    return 0.0


def _coordinate_descent(gram: np.ndarray, corr: np.ndarray, alpha: float, omega: float,
                        beta: np.ndarray, free: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Cyclic coordinate descent on 1/2 b'Gb - c'b + alpha omega |b|_1 + alpha (1 - omega) |b|_2^2 / 2
    over the penalised coordinates; coordinates flagged in `free` carry no penalty.
    Returns the coefficients and the number of sweeps.
    """
    l1, l2 = alpha * omega, alpha * (1.0 - omega)
    fitted = gram @ beta

    for sweep in range(1, ELASTIC_NET_MAX_SWEEPS + 1):
        largest = 0.0
        for j in range(beta.size):
            diagonal = gram[j, j]
            if diagonal <= 0.0:
                continue

            rho = corr[j] - fitted[j] + diagonal * beta[j]
            if free[j]:
                new = rho / diagonal
            else:
                new = _soft_threshold(rho, l1) / (diagonal + l2)

            change = new - beta[j]
            if change != 0.0:
                fitted += gram[:, j] * change
                beta[j] = new
                largest = max(largest, abs(change))

        if largest < ELASTIC_NET_TOL:
            return beta, sweep

    logger.warning(f"Elastic net stopped after {ELASTIC_NET_MAX_SWEEPS} sweeps without converging")
    return beta, ELASTIC_NET_MAX_SWEEPS


def _check_features(features: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)

    if features.ndim != 2 or targets.shape != features.shape[:1]:
        raise DomainError(f"Feature matrix {features.shape} does not match targets {targets.shape}")
    if not (np.all(np.isfinite(features)) and np.all(np.isfinite(targets))):
        raise DomainError("Features and targets must be finite")
    return features, targets


def elastic_net_path(features, targets, alphas: Sequence[float], omega: float,
                     unpenalized: Sequence[int] = (0,)) -> List[np.ndarray]:
    """
    Minimises (1 / 2n) |y - X b|^2 + alpha omega |b|_1 + alpha (1 - omega) |b|_2^2 / 2
    for every alpha, warm-starting along decreasing alpha. Column 0 (the empty
    word) is left unpenalised by default. Results follow the order of `alphas`.
    """
    features, targets = _check_features(features, targets)
    if not 0.0 <= omega <= 1.0:
        raise DomainError(f"omega must lie in [0, 1], got {omega}")
    if any(alpha < 0 for alpha in alphas):
        raise DomainError(f"alpha must be >= 0, got {list(alphas)}")

    n = features.shape[0]
    gram = features.T @ features / n
    corr = features.T @ targets / n

    free = np.zeros(features.shape[1], dtype=bool)
    free[list(unpenalized)] = True

    beta = np.zeros(features.shape[1])
    solutions = {}
    for alpha in sorted(set(alphas), reverse=True):
        beta, sweeps = _coordinate_descent(gram, corr, alpha, omega, beta.copy(), free)
        solutions[alpha] = beta.copy()
        logger.debug(f"Elastic net alpha={alpha:g} omega={omega:g}: {sweeps} sweeps")

    return [solutions[alpha] for alpha in alphas]


def fit_elastic_net(features, targets, alpha: float, omega: float, width: int, order: int) -> TensorSeq:
    """Elastic-net fit returned as a functional ell with columns in word index order."""
    if np.shape(features)[-1] != storage_size(width, order):
        raise DomainError(
            f"{np.shape(features)[-1]} feature columns, order {order} over {width} letters "
            f"has {storage_size(width, order)}"
        )
    beta = elastic_net_path(features, targets, [alpha], omega)[0]
    return TensorSeq.from_flat(width, order, beta)


def kkt_violation(features, targets, beta, alpha: float, omega: float,
                  unpenalized: Sequence[int] = (0,)) -> float:
    """
    Largest violation of the optimality conditions: |grad_j| <= alpha omega on
    zero coefficients, grad_j + alpha omega sign(b_j) + alpha (1 - omega) b_j = 0
    on the others, grad_j = 0 on unpenalised ones.
    """
    features, targets = _check_features(features, targets)
    beta = np.asarray(beta, dtype=float)
    n = features.shape[0]
    gradient = -features.T @ (targets - features @ beta) / n

    l1, l2 = alpha * omega, alpha * (1.0 - omega)
    violations = np.empty(beta.size)
    for j in range(beta.size):
        if j in unpenalized:
            violations[j] = abs(gradient[j])
        elif beta[j] == 0.0:
            violations[j] = max(0.0, abs(gradient[j]) - l1)
        else:
            violations[j] = abs(gradient[j] + l1 * np.sign(beta[j]) + l2 * beta[j])
    return float(violations.max())


# Three-model comparison


@dataclass(frozen=True)
class HyperGrid:
    """Penalties, mixing weights and, per model, the rate choices to search."""

    alphas: Tuple[float, ...] = tuple(np.logspace(-6, -1, 6).tolist())
    omegas: Tuple[float, ...] = (0.0, 0.5, 1.0)
    rate_values: Tuple[float, ...] = (1.0, 3.0, 10.0)

    def candidates(self, model: str, width: int = 2) -> List[Tuple[float, ...]]:
        """EFM rates per component for efm_sig, the OU rate for sig_ou, nothing for sig_bm."""
        if model == MODEL_EFM_SIG:
            return list(itertools.product(self.rate_values, repeat=width))
        if model == MODEL_SIG_OU:
            return [(value,) for value in self.rate_values]
        return [()]


@dataclass
class RegressionMetrics:
    model: str
    rates: Tuple[float, ...]
    alpha: float
    omega: float
    train_mse: float
    select_mse: float
    test_mse: float
    ell: TensorSeq = field(repr=False)
    prediction: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)


def _features(model: str, rates: Tuple[float, ...], times: np.ndarray, driver: np.ndarray,
              order: int, start: int) -> np.ndarray:
    """
    Flattened signatures at times[start:], one row per time. sig_bm and sig_ou
    use the plain signature from times[start]; efm_sig runs from the first sample
    with a flat past before it.
    """
    driver = np.asarray(driver, dtype=float).reshape(times.size, -1)

    if model == MODEL_EFM_SIG:
        path = PiecewisePath(times, driver, time_augmented=True)
        states = signature_stream(Rates(rates), path, order, ORIGIN_FLAT_PAST)
        rows = [state.sig.to_flat() for k, state in enumerate(states) if k >= start]
        return np.array(rows)

    if model == MODEL_SIG_OU:
        driver = ou_from_driver(PiecewisePath(times, driver), rates[0]).values

    path = PiecewisePath(times[start:], driver[start:], time_augmented=True)
    plain = Rates.plain(path.width)
    return np.array([state.sig.to_flat() for state in signature_stream(plain, path, order, ORIGIN_START)])


def fit_signal_model(times, signal, driver, model: str, hyper: Optional[HyperGrid] = None,
                     split: Tuple[float, float, float] = DEFAULT_SPLIT, order: int = 6,
                     manager: Optional[BatchManager] = None) -> RegressionMetrics:
    """
    Fits `signal` on signature features of `driver` over [0, split[0]], picks
    (rates, alpha, omega) by MSE on [0, split[1]] and reports the MSE on
    (split[1], split[2]]. Samples before 0 only feed the EFM burn-in and the OU start.
    """
    if model not in MODELS:
        raise DomainError(f"Unknown model '{model}', expected one of {MODELS}")
    train_end, select_end, test_end = split
    if not 0.0 < train_end <= select_end < test_end:
        raise DomainError(f"Split must satisfy 0 < train <= select < test, got {split}")

    hyper = hyper or HyperGrid()
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float).reshape(-1)
    if signal.size != times.size:
        raise DomainError(f"{times.size} times but {signal.size} signal samples")

    start = int(np.searchsorted(times, 0.0 - 1e-12))
    if start >= times.size or times[-1] < test_end - 1e-9:
        raise DomainError(f"Samples must cover [0, {test_end}]")

    local = times[start:]
    target = signal[start:]
    train = local <= train_end + 1e-12
    select = local <= select_end + 1e-12
    test = (local > select_end + 1e-12) & (local <= test_end + 1e-12)

    def evaluate(rates):
        features = _features(model, rates, times, driver, order, start)
        best = None
        for omega in hyper.omegas:
            betas = elastic_net_path(features[train], target[train], hyper.alphas, omega)
            for alpha, beta in zip(hyper.alphas, betas):
                prediction = features @ beta
                score = float(np.mean((prediction[select] - target[select]) ** 2))
                if best is None or score < best[0]:
                    best = (score, alpha, omega, beta, prediction)
        return best

    width = np.asarray(driver).reshape(times.size, -1).shape[1] + 1
    candidates = hyper.candidates(model, width)
    results = run_ordered(evaluate, candidates, manager)
    index = min(range(len(results)), key=lambda i: results[i][0])
    score, alpha, omega, beta, prediction = results[index]
    rates = candidates[index]

    metrics = RegressionMetrics(
        model=model,
        rates=rates,
        alpha=alpha,
        omega=omega,
        train_mse=float(np.mean((prediction[train] - target[train]) ** 2)),
        select_mse=score,
        test_mse=float(np.mean((prediction[test] - target[test]) ** 2)),
        ell=TensorSeq.from_flat(width, order, beta),
        prediction=prediction,
        times=local,
    )
    logger.info(
        f"{model}: rates {rates}, alpha {alpha:g}, omega {omega:g}, "
        f"train {metrics.train_mse:.4g}, select {score:.4g}, test {metrics.test_mse:.4g}"
    )
    return metrics


def run_regression_experiment(cfg: SimConfig, model: str, hyper: Optional[HyperGrid] = None,
                              order: int = 6, mu: float = 10.0, p: int = 5,
                              split: Tuple[float, float, float] = DEFAULT_SPLIT,
                              manager: Optional[BatchManager] = None) -> RegressionMetrics:
    """
    Simulates W and the Langevin signal dY = -mu Y^p dt + dW on [-burn_in, split[2]]
    from the same increments and fits `model`. A zero burn_in in cfg is replaced
    by BURN_IN_FACTOR over the smallest rate of the grid.
    """
    hyper = hyper or HyperGrid()
    burn_in = cfg.burn_in or BURN_IN_FACTOR / min(hyper.rate_values)
    cfg = replace(cfg, t0=0.0, t1=split[2], d=1, burn_in=burn_in)

    driver = simulate_bm(cfg)
    signal = simulate_langevin(cfg, mu, p)
    return fit_signal_model(driver.times, signal.values[:, 0], driver.values, model, hyper, split, order, manager)
