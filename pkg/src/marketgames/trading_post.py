"""The Trading Post game and its entrance-fee variant.

Agents split budgets as monetary bids over goods; each good is divided in
proportion to the bids on it, and bids below the entrance fee delta are
voided.  This module holds the allocation rule, analytic and numeric
best-response oracles, a brute-force grid oracle, round-robin best-response
dynamics, Nash-equilibrium verification, and the bid-profile <-> market
outcome mapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (LEONTIEF, LINEAR, DEFAULT_TOL, Instance,
                   ValuationProfile, eval_valuation_matrix, _ces_eval, _readonly)
from ._simplex import project_simplex_lb

#: Consecutive strict decreases below the per-agent floor that mark a bid as
#: collapsing toward the boundary (no-equilibrium escape) in br_dynamics.
COLLAPSE_STREAK = 8
COLLAPSE_FLOOR_FRACTION = 1e-7


@dataclass(frozen=True)
class BRResult:
    """A best response: bids summing to the budget and the utility achieved."""

    bids: np.ndarray
    utility: float
    iterations: int
    method: str
    converged: bool = True


@dataclass(frozen=True)
class NEReport:
    """Equilibrium certificate: per-agent best-response gains at fixed opponents."""

    bids: np.ndarray
    gains: np.ndarray
    max_gain: float
    converged: bool
    prices: np.ndarray
    allocation: np.ndarray
    utilities: np.ndarray
    rounds: int = 0
    max_change: float = 0.0
    note: str = ""
    trajectory_tail: tuple = ()


def delta_for_eps(eps: float, m: int, safety: float = 0.5) -> float:
    """An entrance fee guaranteeing price of anarchy at most 1 + eps.

    The statements of the fee/accuracy relation disagree between eps/m^2 and
    eps^2/m; this takes the conservative minimum of both (and 1/m), scaled
    strictly inside by ``safety``.  The achieved eps should still be
    certified empirically with verify_eps_market_eq.
    """
    if not 0 < eps:
        raise ValueError("eps must be positive")
    if m < 1:
        raise ValueError("need at least one good")
    if not 0 < safety < 1:
        raise ValueError("safety must lie strictly between 0 and 1")
    return safety * min(eps / m ** 2, eps ** 2 / m, 1.0 / m)


def tp_allocate(bids, delta: float = 0.0) -> np.ndarray:
    """Proportional allocation of each good after voiding bids below delta.

    Goods with zero total effective bid stay unallocated (all-zero column).
    """
    b = np.asarray(bids, dtype=float)
    if (b < 0).any():
        raise ValueError("bids must be non-negative")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    eff = np.where(b >= delta, b, 0.0) if delta > 0 else b
    totals = eff.sum(axis=0)
    x = np.zeros_like(eff)
    live = totals > 0
    x[:, live] = eff[:, live] / totals[live]
    return x


def effective_bids(bids, delta: float = 0.0) -> np.ndarray:
    b = np.asarray(bids, dtype=float)
    return np.where(b >= delta, b, 0.0) if delta > 0 else b.copy()


def ne_to_market(bids, delta: float = 0.0):
    """Map a bid profile to (prices, allocation): prices are the per-good
    sums of effective bids, the allocation is the proportional split."""
    eff = effective_bids(bids, delta)
    return eff.sum(axis=0), tp_allocate(bids, delta)


def check_bid_profile(bids, budgets, tol: float = 1e-6) -> np.ndarray:
    """Validate a bid profile (non-negative, row sums equal budgets)."""
    b = np.asarray(bids, dtype=float)
    budgets = np.asarray(budgets, dtype=float)
    if b.ndim != 2 or b.shape[0] != budgets.size:
        raise ValueError("bid matrix must have one row per agent")
    if (b < 0).any():
        raise ValueError("bids must be non-negative")
    err = np.abs(b.sum(axis=1) - budgets).max()
    if err > tol * max(1.0, float(budgets.max())):
        raise ValueError(f"bid rows must sum to budgets (max deviation {err:.3g})")
    return b


def _fractions(bids_row, opp):
    """Fraction of each good won by bidding bids_row against opponent totals."""
    f = np.zeros_like(bids_row)
    pos = bids_row > 0
    f[pos] = bids_row[pos] / (bids_row[pos] + opp[pos])
    return f


# ---------------------------------------------------------------------------
# Linear best response (water-filling)


def _waterfill(values, opp, budget, floor):
    """Exhaust budget over a fixed support: b_j = max(floor, sqrt(v_j D_j/lam) - D_j).

    The spending total is monotone decreasing in lam, so lam is bisected and
    then recomputed exactly for the identified active set.  Requires
    floor * len(values) <= budget and opp > 0 everywhere.
    """
    s = np.sqrt(values * opp)
    lam_hi = float((values / opp).max()) * 1.0000001
    lam_lo = min((s.sum() / (budget + opp.sum())) ** 2, lam_hi * 0.5)

    def total(lam):
        return np.maximum(s / math.sqrt(lam) - opp, floor).sum()

    iters = 0
    for _ in range(120):
        iters += 1
        lam_mid = 0.5 * (lam_lo + lam_hi)
        if total(lam_mid) > budget:
            lam_lo = lam_mid
        else:
            lam_hi = lam_mid
        if lam_hi - lam_lo <= 1e-16 * lam_hi:
            break
    root = math.sqrt(0.5 * (lam_lo + lam_hi))
    active = s / root - opp > floor
    if active.any():
        spendable = budget - floor * float((~active).sum())
        root = s[active].sum() / (spendable + opp[active].sum())
        bids = np.maximum(s / root - opp, floor)
        bids[~active] = floor
    else:
        bids = np.full_like(values, max(floor, budget / values.size))
    bids[np.argmax(bids)] += budget - bids.sum()
    return bids, iters


def br_linear(values, budget: float, opp_spend, delta: float = 0.0,
              tol: float = 1e-12) -> BRResult:
    """Unique best response of a linear bidder via water-filling.

    The payoff sum_j v_j b_j/(b_j + D_j) is strictly concave when every
    demanded good carries opposing spend, and the KKT point is
    b_j = max(0, sqrt(v_j D_j / lam) - D_j) with lam fixed by budget
    exhaustion.  For delta > 0, monopolized goods are claimed at the floor,
    floors are enforced on the active set, and a deterministic toggle search
    refines which goods are worth the entrance fee.  With delta = 0 a
    demanded good without opposing spend has no attainable optimum.
    """
    v = np.asarray(values, dtype=float)
    d = np.asarray(opp_spend, dtype=float)
    if v.shape != d.shape:
        raise ValueError("values and opp_spend must have the same length")
    if budget <= 0:
        raise ValueError("budget must be positive")
    demanded = v > 0
    if not demanded.any():
        raise ValueError("agent demands no goods")
    monop = demanded & (d <= 0)
    comp = demanded & (d > 0)
    if delta == 0 and monop.any():
        raise ValueError("supremum not attained: demanded good has no opposing spend")

    iters = 0
    if delta == 0:
        wb, iters = _waterfill(v[comp], d[comp], budget, 0.0)
        bids = np.zeros_like(v)
        bids[comp] = wb
        utility = float(v[comp] @ _fractions(wb, d[comp]))
        return BRResult(_readonly(bids), utility, iters, "waterfill")

    def config(claims, support):
        nonlocal iters
        k_floors = float(claims.sum() + support.sum())
        if not (claims.any() or support.any()) or delta * k_floors > budget * (1 + 1e-12):
            return None
        bids = np.zeros_like(v)
        bids[claims] = delta
        rest = budget - delta * float(claims.sum())
        if support.any():
            wb, it = _waterfill(v[support], d[support], rest, delta)
            iters += it
            bids[support] = wb
            util = float(v[support] @ _fractions(wb, d[support]))
        else:
            bids[claims] += rest / float(claims.sum())
            util = 0.0
        util += float(v[claims].sum())
        return bids, util

    claims = monop.copy()
    support = comp.copy()
    if comp.any():
        wb, it = _waterfill(v[comp], d[comp], max(budget - delta * float(claims.sum()),
                                                  budget * 1e-12), 0.0)
        iters += it
        support[comp] = wb > delta * 0.5
    best = config(claims, support)
    if best is None:
        best = config(claims, comp.copy())
    if best is None:
        # fees unaffordable for the full demand set: keep the best-value goods
        claims = np.zeros_like(monop)
        support = np.zeros_like(comp)
        budget_left = budget
        for j in np.argsort(-v):
            if demanded[j] and budget_left >= delta:
                (claims if monop[j] else support)[j] = True
                budget_left -= delta
        best = config(claims, support)
        if best is None:
            raise ValueError("budget cannot cover any entrance fee")

    for _ in range(2 * v.size + 2):
        improved = False
        for j in np.nonzero(demanded)[0]:
            cl, su = claims.copy(), support.copy()
            if monop[j]:
                cl[j] = ~cl[j]
            else:
                su[j] = ~su[j]
            cand = config(cl, su)
            if cand is not None and cand[1] > best[1] + 1e-15:
                claims, support, best = cl, su, cand
                improved = True
        if not improved:
            break
    bids, utility = best
    return BRResult(_readonly(bids), utility, iters, "waterfill")


# ---------------------------------------------------------------------------
# Leontief best response (bisection on the common consumption ratio)


def br_leontief(values, budget: float, opp_spend, delta: float = 0.0,
                tol: float = 1e-14) -> BRResult:
    """Unique best response of a Leontief bidder.

    Non-floored demanded goods are bought at a common consumption ratio
    t = fraction_j / v_j; t is the largest value whose bids
    max(delta, t v_j D_j / (1 - t v_j)) fit the budget, found by bisection.
    Goods the agent does not demand get bid zero, never the floor.
    """
    v = np.asarray(values, dtype=float)
    d = np.asarray(opp_spend, dtype=float)
    if v.shape != d.shape:
        raise ValueError("values and opp_spend must have the same length")
    if budget <= 0:
        raise ValueError("budget must be positive")
    demanded = v > 0
    if not demanded.any():
        raise ValueError("agent demands no goods")
    nd = int(demanded.sum())
    if delta > 0 and budget < delta * nd * (1 - 1e-12):
        raise ValueError("infeasible floors: budget below delta times demanded goods")
    monop = demanded & (d <= 0)
    comp = demanded & (d > 0)
    if delta == 0 and monop.any():
        raise ValueError("supremum not attained: demanded good has no opposing spend")

    bids = np.zeros_like(v)
    bids[monop] = delta
    if not comp.any():
        bids[demanded] += (budget - bids.sum()) / nd
        fr = _fractions(bids, d)
        utility = float((fr[demanded] / v[demanded]).min())
        return BRResult(_readonly(bids), utility, 0, "bisect")

    vc, dc = v[comp], d[comp]
    base = delta * float(monop.sum())

    def comp_bids(t):
        with np.errstate(over="ignore"):
            raw = t * vc * dc / np.maximum(1.0 - t * vc, 1e-300)
        return np.maximum(raw, delta)

    t_lo, t_hi = 0.0, float((1.0 / vc).min()) * (1.0 - 1e-14)
    iters = 0
    for _ in range(200):
        iters += 1
        t_mid = 0.5 * (t_lo + t_hi)
        if base + comp_bids(t_mid).sum() > budget:
            t_hi = t_mid
        else:
            t_lo = t_mid
        if t_hi - t_lo <= tol * max(t_hi, 1e-30):
            break
    cb = comp_bids(t_lo)
    bids[comp] = cb
    resid = budget - bids.sum()
    if resid > 0:
        free = np.nonzero(comp)[0][int(np.argmax(cb - delta))]
        bids[free] += resid
    fr = _fractions(bids, d)
    utility = float((fr[demanded] / v[demanded]).min())
    return BRResult(_readonly(bids), utility, iters, "bisect")


# ---------------------------------------------------------------------------
# Numeric best response for any concave kind


def _leveling_leontief(v, budget, d, lb, tol, init, max_iter):
    """Max-min leveling for the Leontief payoff: repeatedly move mass from
    the richest transferable good onto the good pinning the minimum
    consumption ratio, equalizing the pair by scalar bisection.  Kept
    independent of the analytic global bisection so the two can
    cross-validate."""
    demanded = v > 0
    surplus = budget - lb.sum()
    if init is None:
        b = lb.copy()
        b[demanded] += surplus / demanded.sum()
    else:
        w = np.where(demanded, np.maximum(np.asarray(init, dtype=float) - lb, 0.0), 0.0)
        b = lb.copy()
        if w.sum() > 0:
            b += w * (surplus / w.sum())
        else:
            b[demanded] += surplus / demanded.sum()

    def ratio(j, bj):
        f = 1.0 if d[j] <= 0 else (bj / (bj + d[j]) if bj > 0 else 0.0)
        return f / v[j]

    idx = np.nonzero(demanded)[0]
    steps = 0
    for steps in range(1, max_iter + 1):
        r = np.array([ratio(j, b[j]) for j in idx])
        kmin = int(np.argmin(r))
        jmin = int(idx[kmin])
        if d[jmin] <= 0:
            break
        movable = [(r[k], int(idx[k])) for k in range(len(idx))
                   if idx[k] != jmin and b[idx[k]] > lb[idx[k]] + 1e-300
                   and r[k] > r[kmin] + tol * (1.0 + r[kmin])]
        if not movable:
            break
        _, jdon = max(movable)
        dmax = b[jdon] - lb[jdon]

        def gap(t):
            return ratio(jmin, b[jmin] + t) - ratio(jdon, b[jdon] - t)

        if gap(dmax) <= 0:
            t_star = dmax
        else:
            lo, hi = 0.0, dmax
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if gap(mid) < 0:
                    lo = mid
                else:
                    hi = mid
            t_star = 0.5 * (lo + hi)
        b[jmin] += t_star
        b[jdon] -= t_star
    util = min(ratio(j, b[j]) for j in idx)
    return b, util, steps


def br_concave_numeric(profile: ValuationProfile, agent: int, budget: float,
                       opp_spend, delta: float = 0.0, tol: float = 1e-8,
                       init=None, max_iter: int = 50000) -> BRResult:
    """Numeric best response over the (floored) budget simplex.

    Linear and CES payoffs are smooth in own bids and solved by projected
    gradient ascent with backtracking; the Leontief min is handled by the
    leveling scheme.  Stops on an init-independent criterion (the unit-step
    gradient mapping), so independent restarts land on the same bids; agrees
    with the analytic oracles on linear/Leontief inputs.
    """
    v = profile.matrix[agent]
    d = np.asarray(opp_spend, dtype=float)
    if budget <= 0:
        raise ValueError("budget must be positive")
    demanded = v > 0
    if not demanded.any():
        raise ValueError("agent demands no goods")
    if delta == 0 and (d[demanded] <= 0).any():
        raise ValueError("supremum not attained: demanded good has no opposing spend")
    lb = np.where(demanded, delta, 0.0)
    if lb.sum() > budget * (1 + 1e-12):
        raise ValueError("infeasible floors: budget below delta times demanded goods")

    if profile.kind == LEONTIEF:
        cap = 400 * v.size
        bids, util, steps = _leveling_leontief(v, budget, d, lb, tol, init, cap)
        return BRResult(_readonly(bids), util, steps, "gradient", steps < cap)

    rho = profile.rho

    def payoff_and_grad(b):
        f = _fractions(np.where(b >= delta, b, 0.0) if delta > 0 else b, d)
        if profile.kind == LINEAR:
            util = float(v @ f)
            dudf = v.astype(float)
        else:
            x = np.zeros_like(profile.matrix)
            x[agent] = f
            util = float(eval_valuation_matrix(profile, x)[agent])
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                dudf = np.where((v > 0) & (f > 0),
                                util ** (1.0 - rho) * v
                                * np.where(f > 0, f, 1.0) ** (rho - 1.0), 0.0)
            dudf = np.nan_to_num(np.clip(dudf, 0.0, 1e100), nan=0.0, posinf=1e100)
        with np.errstate(divide="ignore", invalid="ignore"):
            dfdb = np.where(demanded & (b + d > 0), d / (b + d) ** 2, 0.0)
        return util, dudf * dfdb

    # function-value comparisons cannot certify stationarity much below the
    # square root of machine precision; accept a stalled iterate at this level
    gtol = tol * max(1.0, budget)
    stall_tol = 1e-6 * max(1.0, budget)

    def solve_on_support(mask, start):
        floors = np.where(mask, delta, 0.0)
        if floors.sum() > budget * (1 + 1e-12):
            return None

        def proj(b):
            out = np.zeros_like(b)
            out[mask] = project_simplex_lb(b[mask], budget, floors[mask])
            return out

        b = proj(np.where(mask, budget / mask.sum(), 0.0) if start is None
                 else np.asarray(start, dtype=float))
        util, grad = payoff_and_grad(b)
        eta = max(1.0, budget)
        it = 0
        stalled = 0
        converged = False
        for it in range(1, max_iter + 1):
            probe = float(np.abs(proj(b + grad) - b).max())
            if probe <= gtol:
                converged = True
                break
            moved = False
            for _ in range(60):
                cand = proj(b + eta * grad)
                uc, gc = payoff_and_grad(cand)
                if uc >= util + 1e-4 * float(grad @ (cand - b)):
                    step = float(np.abs(cand - b).max())
                    b, util, grad = cand, uc, gc
                    eta = min(eta * 1.4, 1e9)
                    moved = True
                    break
                eta *= 0.5
            stalled = stalled + 1 if (not moved
                                      or step <= 1e-14 * max(1.0, budget)) else 0
            if not moved or stalled >= 30:
                converged = probe <= max(gtol, stall_tol)
                break
        return b, util, it, converged

    best = solve_on_support(demanded, init)
    iters = best[2]
    # with an entrance fee, dropping a good entirely can beat paying its
    # floor; search single-good support toggles (Leontief never drops --
    # every demanded good is needed -- and neither does CES with rho < 0)
    droppable = delta > 0 and (profile.kind == LINEAR or (rho is not None and rho > 0))
    if droppable:
        support = demanded.copy()
        for _ in range(2 * int(demanded.sum()) + 2):
            improved = False
            for j in np.nonzero(demanded)[0]:
                cand_mask = support.copy()
                cand_mask[j] = ~cand_mask[j]
                if not cand_mask.any():
                    continue
                cand = solve_on_support(cand_mask, None)
                if cand is None:
                    continue
                iters += cand[2]
                if cand[1] > best[1] + 1e-12:
                    support, best, improved = cand_mask, cand, True
            if not improved:
                break
    bids, util, _, converged = best
    return BRResult(_readonly(bids), util, iters, "gradient", converged)


# ---------------------------------------------------------------------------
# Grid oracle


def br_grid_oracle(profile: ValuationProfile, agent: int, budget: float,
                   opp_spend, delta: float = 0.0,
                   grid_step: float = 1e-3) -> BRResult:
    """Exhaustive search over the budget simplex discretized at grid_step.

    Validation oracle only: combinatorial in the number of goods (m <= 4).
    Evaluates the true entrance-fee payoff, voided bids included.
    """
    v = profile.matrix[agent]
    d = np.asarray(opp_spend, dtype=float)
    m = d.size
    if m > 4:
        raise ValueError("grid oracle supports at most 4 goods")
    k = max(int(round(budget / grid_step)), 1)
    est = math.comb(k + m - 1, m - 1)
    if (k + 1) ** max(m - 1, 1) > 2.2e7:
        raise ValueError(f"grid too large: about {est:.3g} points at this step")

    if m == 1:
        counts = np.array([[k]])
    elif m == 2:
        a = np.arange(k + 1)
        counts = np.stack([a, k - a], axis=1)
    else:
        axes = np.meshgrid(*[np.arange(k + 1)] * (m - 1), indexing="ij")
        flat = np.stack([ax.ravel() for ax in axes], axis=1)
        flat = flat[flat.sum(axis=1) <= k]
        counts = np.concatenate([flat, (k - flat.sum(axis=1))[:, None]], axis=1)

    bids = counts * (budget / k)
    eff = np.where(bids >= delta, bids, 0.0) if delta > 0 else bids
    denom = eff + d[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(eff > 0, eff / np.where(denom > 0, denom, 1.0), 0.0)
    if profile.kind == LINEAR:
        utils = f @ v
    elif profile.kind == LEONTIEF:
        with np.errstate(divide="ignore"):
            ratios = np.where(v > 0, f / np.where(v > 0, v, 1.0), np.inf)
        utils = ratios.min(axis=1)
    else:
        utils = _ces_eval(np.broadcast_to(v, f.shape), f, profile.rho)
    best = int(np.argmax(utils))
    return BRResult(_readonly(bids[best]), float(utils[best]), len(bids), "grid")


# ---------------------------------------------------------------------------
# Dynamics and equilibrium verification


def _best_response(instance: Instance, agent: int, opp, delta, tol) -> BRResult:
    values = instance.matrix[agent]
    budget = float(instance.budgets[agent])
    if instance.kind == LINEAR:
        return br_linear(values, budget, opp, delta)
    if instance.kind == LEONTIEF:
        return br_leontief(values, budget, opp, delta)
    return br_concave_numeric(instance.valuations, agent, budget, opp, delta, tol)


def br_dynamics(instance: Instance, delta: float = 0.0, init=None,
                max_rounds: int = 1000, tol: float = 1e-9,
                record_trajectory: bool = False) -> NEReport:
    """Round-robin best-response dynamics for the entrance-fee game.

    Agents update in index order, each replacing its bids by a best response
    to the current profile.  Convergence means the largest bid change over a
    full round fell below tol while no demanded bid is collapsing
    geometrically toward zero (the signature of the no-equilibrium boundary
    escape); converged profiles are certified with verify_tp_ne.
    Non-convergence, including best-response breakdown when a bid hits zero
    at delta = 0, is a reported outcome, not an error.
    """
    n, m = instance.n, instance.m
    support = instance.matrix > 0
    if delta == 0 and instance.kind == LINEAR and not instance.perfect_competition():
        raise ValueError("delta=0 linear dynamics require perfect competition")
    if delta > 0:
        need = delta * support.sum(axis=1)
        if (instance.budgets < need * (1 - 1e-12)).any():
            raise ValueError("some budget cannot cover the entrance fees")

    if init is None:
        b = instance.budgets[:, None] * support / support.sum(axis=1)[:, None]
    else:
        b = check_bid_profile(init, instance.budgets).copy()

    streak = np.zeros((n, m), dtype=int)
    collapse_floor = COLLAPSE_FLOOR_FRACTION * instance.budgets[:, None]
    trajectory: list = []
    tail: list = []
    best_change = math.inf
    stall = 0
    note = ""
    converged = False
    max_change = math.inf
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        prev = b.copy()
        failed = ""
        for i in range(n):
            eff = effective_bids(b, delta)
            opp = eff.sum(axis=0) - eff[i]
            try:
                b[i] = _best_response(instance, i, opp, delta, min(tol, 1e-10)).bids
            except ValueError as exc:
                failed = f"best response broke down for agent {i}: {exc}"
                break
        if failed:
            note = failed
            break
        max_change = float(np.abs(b - prev).max())
        dec = support & (b < prev) & (b > 0)
        streak = np.where(dec, streak + 1, 0)
        collapsing = bool(((streak >= COLLAPSE_STREAK) & (b < collapse_floor)).any())
        if record_trajectory:
            trajectory.append((rounds, max_change,
                               tuple(instance.utilities(tp_allocate(b, delta)))))
        tail.append((rounds, max_change))
        if len(tail) > 10:
            tail.pop(0)
        if max_change < best_change:
            best_change = max_change
            stall = 0
        else:
            stall += 1
        if max_change < tol and not collapsing:
            converged = True
            break
        if stall >= 50:
            note = "oscillation detected: no new best profile in 50 rounds"
            break

    if converged:
        rep = verify_tp_ne(instance, b, delta, tol)
        return NEReport(rep.bids, rep.gains, rep.max_gain, True, rep.prices,
                        rep.allocation, rep.utilities, rounds, max_change,
                        rep.note, tuple(trajectory if record_trajectory else tail))
    prices, allocation = ne_to_market(b, delta)
    return NEReport(_readonly(b), _readonly(np.full(n, np.nan)), math.nan, False,
                    _readonly(prices), _readonly(allocation),
                    _readonly(instance.utilities(allocation)), rounds, max_change,
                    note or "did not converge",
                    tuple(trajectory if record_trajectory else tail))


def verify_tp_ne(instance: Instance, bids, delta: float = 0.0,
                 tol: float = DEFAULT_TOL) -> NEReport:
    """Certify a bid profile: per-agent best-response utility gains.

    The profile is an eps-Nash equilibrium for eps equal to the reported
    max_gain; `converged` records whether max_gain <= tol.  When delta = 0
    and an agent monopolizes a demanded good, the unattained supremum is
    approximated through a vanishing entrance fee and noted.
    """
    b = check_bid_profile(bids, instance.budgets)
    eff = effective_bids(b, delta)
    allocation = tp_allocate(b, delta)
    utilities = instance.utilities(allocation)
    gains = np.zeros(instance.n)
    note = ""
    for i in range(instance.n):
        opp = eff.sum(axis=0) - eff[i]
        try:
            br = _best_response(instance, i, opp, delta, min(tol, 1e-10))
        except ValueError:
            if delta > 0:
                raise
            br = _best_response(instance, i, opp, 1e-12, min(tol, 1e-10))
            note = "some best responses are unattained suprema (delta=0 monopoly)"
        gains[i] = br.utility - utilities[i]
    prices = eff.sum(axis=0)
    max_gain = float(gains.max())
    return NEReport(_readonly(b), _readonly(gains), max_gain, max_gain <= tol,
                    _readonly(prices), _readonly(allocation), _readonly(utilities),
                    note=note)


def safe_strategy(budget: float, opp_spend, delta: float = 0.0) -> np.ndarray:
    """The proportional safe bid y_j = B D_j / sum(D), floored for delta > 0.

    Against true opponent totals D the plain bid wins exactly the share
    B / (B + sum D) of every good; the floored variant concedes at most a
    delta*(m-1)/B relative loss on that guaranteed share.
    """
    d = np.asarray(opp_spend, dtype=float)
    sd = float(d.sum())
    if sd <= 0:
        raise ValueError("opponents must spend a positive total")
    if budget <= 0:
        raise ValueError("budget must be positive")
    y = budget * d / sd
    m = d.size
    if delta <= 0 or not (y < delta).any() or budget <= delta * m:
        return y
    low = y < delta
    b_eff = budget - delta * float(low.sum())
    total = budget + sd
    z = np.where(low, delta, b_eff * d / (total - b_eff))
    leftover = budget - z.sum()
    if leftover > 0:
        if (~low).any():
            z[~low] += leftover * d[~low] / d[~low].sum()
        else:
            z += leftover / m
    return z
