"""Instance generators, file I/O, and the price-of-anarchy experiment driver.

Named constructions reproduce the worked examples; gen_random provides a
seeded stress family with the perfect-competition property enforced.
Experiments emit one CSV row per instance (the spec header plus a trailing
failure tag so failed runs never abort a batch).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (CES, LEONTIEF, LINEAR, DEFAULT_TOL, Instance, make_instance,
                   nsw, poa_ratio, proportionality_check)
from .eq_solvers import solve_eg, verify_eps_market_eq
from .fisher_game import fisher_ne_falsify, uniform_leontief_ne
from .trading_post import br_dynamics

CSV_HEADER = ("instance_id", "mechanism", "delta", "nsw_opt", "nsw_eq", "ratio",
              "eps_br", "eps_market", "proportional", "seconds", "failure")


# ---------------------------------------------------------------------------
# Generators


def gen_identity_leontief(n: int) -> Instance:
    """n agents, n goods; agent i requires only good i."""
    return make_instance(LEONTIEF, np.eye(n))


def gen_example_3_1() -> Instance:
    """Two linear agents: (1, 0) and (0.5, 0.5), unit budgets."""
    return make_instance(LINEAR, [[1.0, 0.0], [0.5, 0.5]])


def gen_tp_nonexistence() -> Instance:
    """The Leontief pair (0.5, 0.5) / (0.9, 0.1) with no pure equilibrium
    at zero entrance fee."""
    return make_instance(LEONTIEF, [[0.5, 0.5], [0.9, 0.1]])


def gen_example_lin_family(eps: float = 0.3):
    """Four linear buyers, two goods, and the documented bid family
    ((1,0), (0,1), (1-eps,eps), (eps,1-eps))."""
    instance = make_instance(LINEAR, [[1.0, 0.0], [0.0, 1.0],
                                      [0.5, 0.5], [0.5, 0.5]])
    bids = np.array([[1.0, 0.0], [0.0, 1.0],
                     [1.0 - eps, eps], [eps, 1.0 - eps]])
    return instance, bids


def gen_example_leo_family(a: float = 0.5):
    """Two identical Leontief agents and the equilibrium family where both
    bid (a, 1-a); every a in (0, 1) is a pure equilibrium."""
    if not 0 < a < 1:
        raise ValueError("a must lie strictly between 0 and 1")
    instance = make_instance(LEONTIEF, np.ones((2, 2)))
    bids = np.array([[a, 1.0 - a], [a, 1.0 - a]])
    return instance, bids


def gen_positive_leontief(n: int, m: int | None = None, seed: int = 0):
    """A Leontief instance whose market equilibrium has all-positive prices.

    Built inversely: draw a strictly positive column-stochastic allocation x
    and positive prices p, set the requirement rows to x and budgets to the
    induced spending x @ p.  Then (x, p) is the market equilibrium (each
    agent consumes at equal ratio 1 relative to its requirements and all
    money is spent), so trading-post equilibria exist at zero entrance fee.
    Returns (instance, allocation, prices).
    """
    m = n if m is None else m
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.2, 1.0, size=(n, m))
    x /= x.sum(axis=0, keepdims=True)
    p = rng.uniform(0.5, 1.5, size=m)
    budgets = x @ p
    mat = x / x.max(axis=1, keepdims=True)
    return make_instance(LEONTIEF, mat, budgets), x, p


def gen_random(n: int, m: int, kind: str, rho: float | None = None,
               seed: int = 0, sparsity: float = 0.0) -> Instance:
    """Seeded random instance: uniform(0,1) values, optional sparsification.

    Columns are resampled until every good is demanded by at least two
    agents (perfect competition), rows until every agent demands something.
    Leontief rows are rescaled to max entry 1 for conditioning.
    """
    if not 0 <= sparsity < 1:
        raise ValueError("sparsity must lie in [0, 1)")
    if n < 2:
        raise ValueError("perfect competition needs at least two agents")
    rng = np.random.default_rng(seed)

    def draw_column():
        col = rng.uniform(0.05, 1.0, size=n)
        if sparsity > 0:
            col = np.where(rng.uniform(size=n) < sparsity, 0.0, col)
        return col

    mat = np.empty((n, m))
    for j in range(m):
        col = draw_column()
        for _ in range(1000):
            if (col > 0).sum() >= 2:
                break
            col = draw_column()
        mat[:, j] = col
    for i in range(n):
        if not (mat[i] > 0).any():
            mat[i, int(rng.integers(0, m))] = rng.uniform(0.05, 1.0)
    if kind == LEONTIEF:
        mat = mat / mat.max(axis=1, keepdims=True)
    return make_instance(kind, mat, rho=rho if kind == CES else None)


# ---------------------------------------------------------------------------
# File I/O


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(instance.to_json() + "\n")


def load_instance(path) -> Instance:
    return Instance.from_json(Path(path).read_text())


def format_value(x) -> str:
    """Fixed 12-significant-digit decimal formatting for reports."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    if isinstance(x, np.ndarray):
        return " ".join(format_value(v) for v in x.ravel())
    if isinstance(x, (list, tuple)):
        return " ".join(format_value(v) for v in x)
    return str(x)


def write_report(path, items: dict) -> None:
    """Write a flat key-value report document, one `key = value` per line."""
    lines = [f"{key} = {format_value(val)}" for key, val in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class ExperimentConfig:
    """One experiment batch: where instances come from and what to run.

    source is a named construction ("identity-leontief", "example-3.1",
    "tp-nonexistence"), a file path, or "random" (with n, m, kind, rho,
    seed, sparsity, count).  For Leontief trading-post runs delta must be
    positive: exact equilibria need not exist at delta = 0.
    """

    source: str
    mechanism: str = "trading_post"
    delta: float = 0.0
    n: int = 4
    m: int = 3
    kind: str = LINEAR
    rho: float | None = None
    seed: int = 0
    sparsity: float = 0.0
    count: int = 1
    tol: float = DEFAULT_TOL
    max_rounds: int = 2000
    certify_trials: int = 0
    out_path: str | None = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.mechanism not in ("fisher", "trading_post"):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")


@dataclass
class PoARecord:
    instance_id: str
    mechanism: str
    delta: float
    nsw_opt: float
    nsw_eq: float
    ratio: float
    eps_br: float
    eps_market: float
    proportional: bool
    seconds: float
    failure: str = ""


def _resolve_instances(config: ExperimentConfig):
    src = config.source
    if src == "identity-leontief":
        return [(f"identity-leontief-n{config.n}", gen_identity_leontief(config.n))]
    if src == "example-3.1":
        return [("example-3.1", gen_example_3_1())]
    if src == "tp-nonexistence":
        return [("tp-nonexistence", gen_tp_nonexistence())]
    if src == "random":
        out = []
        for t in range(config.count):
            seed = config.seed + t
            name = f"random-{config.kind}-n{config.n}-m{config.m}-seed{seed}"
            out.append((name, gen_random(config.n, config.m, config.kind,
                                         config.rho, seed, config.sparsity)))
        return out
    return [(Path(src).stem, load_instance(src))]


def run_experiment(config: ExperimentConfig) -> list[PoARecord]:
    """Solve the optimum, find/verify the mechanism equilibrium, and emit
    one PoARecord per instance.  Per-instance failures are recorded and the
    batch continues."""
    records = []
    for instance_id, instance in _resolve_instances(config):
        t0 = time.perf_counter()
        try:
            records.append(_run_single(config, instance_id, instance, t0))
        except Exception as exc:  # failure tag, never abort the batch
            records.append(PoARecord(instance_id, config.mechanism, config.delta,
                                     float("nan"), float("nan"), float("nan"),
                                     float("nan"), float("nan"), False,
                                     time.perf_counter() - t0, str(exc)))
    if config.out_path:
        records_to_csv(records, config.out_path)
    return records


def _run_single(config: ExperimentConfig, instance_id: str, instance: Instance,
                t0: float) -> PoARecord:
    opt = solve_eg(instance, config.tol)
    nsw_opt = nsw(opt.utilities, instance.budgets)
    eps_market = float("nan")

    if config.mechanism == "fisher":
        if instance.kind != LEONTIEF:
            raise ValueError("fisher experiments use the uniform Leontief equilibrium; "
                             "linear/CES Fisher equilibria are not constructed here")
        reports, outcome = uniform_leontief_ne(instance, config.tol)
        nsw_eq = outcome.nsw
        eps_br = float("nan")
        if config.certify_trials > 0:
            rep = fisher_ne_falsify(instance, reports, config.certify_trials,
                                    seed=config.seed, tol=config.tol)
            eps_br = rep.max_gain
        allocation = outcome.equilibrium.allocation
        slack = np.zeros(instance.n)
    else:
        if instance.kind == LEONTIEF and config.delta <= 0:
            raise ValueError("Leontief trading post needs delta > 0: exact "
                             "equilibria may not exist at delta = 0")
        report = br_dynamics(instance, config.delta, max_rounds=config.max_rounds,
                             tol=min(config.tol, 1e-9))
        if not report.converged:
            raise ValueError(f"dynamics did not converge: {report.note}")
        nsw_eq = nsw(report.utilities, instance.budgets)
        eps_br = report.max_gain
        allocation = report.allocation
        if instance.kind == LEONTIEF:
            eps = instance.m ** 2 * config.delta
            eps_rep = verify_eps_market_eq(instance, report.allocation,
                                           report.prices, eps, config.tol)
            eps_market = eps_rep.eps_required
        slack = np.minimum(config.delta * (instance.m - 1) / instance.budgets, 1.0)

    prop = proportionality_check(instance, allocation, slack, tol=1e-7)
    return PoARecord(instance_id, config.mechanism, config.delta, nsw_opt, nsw_eq,
                     poa_ratio(nsw_opt, nsw_eq), eps_br, eps_market,
                     prop.all_pass, time.perf_counter() - t0)


def records_to_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([r.instance_id, r.mechanism, format_value(r.delta),
                             format_value(r.nsw_opt), format_value(r.nsw_eq),
                             format_value(r.ratio), format_value(r.eps_br),
                             format_value(r.eps_market),
                             format_value(r.proportional),
                             format_value(r.seconds), r.failure])
