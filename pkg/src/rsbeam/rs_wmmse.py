"""Rate-splitting WMMSE alternating optimisation of the sum MMF-rate.

Each inner iteration refreshes the SIC equalizers and MMSE weights for the
current precoders and then solves the convex precoder subproblem. The outer
loop re-enters the inner loop until the total rate stops moving.
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import channel_hash, complex_normal, rng_for
from .model import (
    STATUS_CONVERGED,
    STATUS_MAX_ITERS,
    STATUS_SOLVER_FAILURE,
    CommonRateSplit,
    PrecoderSet,
    realized_total_power,
)
from .rates import ao_update, rates_from_precoders

log = logging.getLogger(__name__)

INIT_POWER_FRACTION = 0.9
ASCENT_SLACK = 1e-6


@dataclass
class RsConfig:
    eps_inner: float = 1e-4
    eps_outer: float = 1e-4
    max_inner: int = 100
    max_outer: int = 20
    init_scheme: str = "matched_filter"
    restarts: int = 2
    # also climb from the non-RS solution when one is supplied to optimize()
    warm_start_from_no_rs: bool = True

    def __post_init__(self):
        if self.eps_inner <= 0 or self.eps_outer <= 0:
            raise ValueError("tolerances must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.init_scheme not in ("matched_filter", "random"):
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")


@dataclass
class RsTrace:
    r_tot_per_outer: list = field(default_factory=list)
    r_n_per_inner: list = field(default_factory=list)
    solver_statuses: list = field(default_factory=list)
    # true sum-MMF rate of the iterate after each inner iteration
    objective_per_inner: list = field(default_factory=list)
    solver_objective_per_inner: list = field(default_factory=list)
    init: str = ""

    def ascent_violation(self) -> float:
        """Largest drop of the per-iteration objective (0 when monotone)."""
        obj = np.asarray(self.objective_per_inner, dtype=float)
        if obj.size < 2:
            return 0.0
        return float(max(0.0, np.max(obj[:-1] - obj[1:])))

    def to_dict(self) -> dict:
        return {
            "init": self.init,
            "r_tot_per_outer": [float(x) for x in self.r_tot_per_outer],
            "objective_per_inner": [float(x) for x in self.objective_per_inner],
            "solver_objective_per_inner": [float(x) for x in self.solver_objective_per_inner],
            "r_n_per_inner": [[float(v) for v in r] for r in self.r_n_per_inner],
            "solver_statuses": list(self.solver_statuses),
        }


def initialize_precoders(ch, dims, budget, scheme="matched_filter", seed=0, broadcast=True) -> PrecoderSet:
    """Starting point holding 0.9 P, split equally over the active precoders."""
    K, N, Nt = ch.h.shape
    M = dims.n_groups
    if scheme == "matched_filter":
        h_conj = np.conj(ch.h)
        p = np.stack([h_conj[dims.members(m)].sum(axis=0) for m in range(M)])  # (M, N, Nt)
        p_bc = h_conj.sum(axis=0)
    elif scheme == "random":
        rng = rng_for(seed, 1)
        p = complex_normal(rng, (M, N, Nt))
        p_bc = complex_normal(rng, (N, Nt))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    if not broadcast:
        p_bc = np.zeros_like(p_bc)
    n_active = N * (M + 1) if broadcast else N * M
    per_precoder = INIT_POWER_FRACTION * budget.total_power / n_active

    def _scale(v):
        norm = np.linalg.norm(v)
        if norm == 0:
            # matched filter can vanish (e.g. channels summing to zero); fall back to e_1
            v = np.zeros_like(v)
            v[0] = 1.0
            norm = 1.0
        return v * np.sqrt(per_precoder) / norm

    p = np.stack([[_scale(p[m, n]) for n in range(N)] for m in range(M)])
    if broadcast:
        p_bc = np.stack([_scale(p_bc[n]) for n in range(N)])
    return PrecoderSet(p_bc, p)


_TEMPLATES: OrderedDict = OrderedDict()
_TEMPLATE_CACHE_SIZE = 8


def _template(ch, dims, budget, mode):
    """Compiled RS subproblem shared across SNR points of one channel realisation."""
    key = (channel_hash(ch), dims, mode)
    prob = _TEMPLATES.get(key)
    if prob is None:
        prob = conic.build_rs_subproblem(ch, dims, budget, mode=mode)
        # the first solve canonicalises from scratch and differs from later
        # parameter-refresh solves in the last bits; burn it so results do not
        # depend on cache history
        conic.solve(prob)
        _TEMPLATES[key] = prob
        while len(_TEMPLATES) > _TEMPLATE_CACHE_SIZE:
            _TEMPLATES.popitem(last=False)
    else:
        _TEMPLATES.move_to_end(key)
    return prob


def _enforce_budget(pset: PrecoderSet, budget) -> PrecoderSet:
    power = realized_total_power(pset)
    if power > budget.total_power:
        return pset.scaled(np.sqrt(budget.total_power / power))
    return pset


def run_single(ch, budget, dims, cfg: RsConfig, init: PrecoderSet, mode="rs", label=""):
    """Algorithm 1 from one starting point. Returns (pset, report, trace, status, iterations)."""
    prob = _template(ch, dims, budget, mode)
    trace = RsTrace(init=label)
    pset = init
    report = rates_from_precoders(pset, ch, dims)
    best_pset, best_report = pset, report
    r_tot_prev = 0.0
    r_n_prev = np.zeros(dims.n_subcarriers)
    iterations = 0
    status = STATUS_MAX_ITERS
    failed = False
    for _outer in range(cfg.max_outer):
        for _inner in range(cfg.max_inner):
            iterations += 1
            conic.set_ao_state(prob, ao_update(pset, ch, dims.group_of), budget)
            sol = conic.solve(prob)
            trace.solver_statuses.append(sol.status)
            if sol.status != conic.OPTIMAL:
                log.warning("RS subproblem returned %s at iteration %d", sol.status, iterations)
                failed = True
                break
            p_bc, p = conic.rs_precoders_from_solution(sol, dims)
            if mode == "no_rs":
                p_bc = np.zeros_like(p_bc)
            pset = _enforce_budget(PrecoderSet(p_bc, p), budget)
            report = rates_from_precoders(pset, ch, dims)
            trace.objective_per_inner.append(report.sum_mmf)
            trace.solver_objective_per_inner.append(sol.objective_value)
            trace.r_n_per_inner.append(report.subcarrier_mmf.copy())
            if report.sum_mmf >= best_report.sum_mmf:
                best_pset, best_report = pset, report
            done = np.all(np.abs(report.subcarrier_mmf - r_n_prev) <= cfg.eps_inner)
            r_n_prev = report.subcarrier_mmf.copy()
            if done:
                break
        if failed:
            status = STATUS_SOLVER_FAILURE
            break
        r_tot = report.sum_mmf
        trace.r_tot_per_outer.append(r_tot)
        if abs(r_tot - r_tot_prev) <= cfg.eps_outer:
            status = STATUS_CONVERGED
            break
        r_tot_prev = r_tot
    return best_pset, best_report, trace, status, iterations


def _perturbed_warm_start(warm: PrecoderSet, ch, dims, budget) -> PrecoderSet:
    """Non-RS solution with 10% of its power moved onto a matched-filter broadcast stream."""
    mf = initialize_precoders(ch, dims, budget, "matched_filter")
    power = realized_total_power(warm)
    if power <= 0:
        return mf
    share = 0.1
    p = warm.p * np.sqrt(1 - share)
    bc_dir = mf.p_bc / np.sqrt(max(realized_total_power(PrecoderSet(mf.p_bc, np.zeros_like(mf.p))), 1e-300))
    p_bc = bc_dir * np.sqrt(share * power)
    return PrecoderSet(p_bc, p)


def optimize(ch, budget, dims, cfg: RsConfig = None, mode: str = "rs", seed: int = 0, warm_start: PrecoderSet = None):
    """Best-of-restarts RS (or non-RS) WMMSE optimisation.

    Returns (PrecoderSet, CommonRateSplit, RateReport, RsTrace). The report is
    recomputed from the returned precoders; the common-rate split is the
    water-filled optimum for those precoders. ``report.extras["runs"]`` holds
    every run's trace.
    """
    cfg = cfg or RsConfig()
    if mode not in ("rs", "no_rs"):
        raise ValueError(f"unknown mode {mode!r}")
    broadcast = mode == "rs"
    starts = []
    for i in range(cfg.restarts):
        scheme = cfg.init_scheme if i == 0 else "random"
        init = initialize_precoders(ch, dims, budget, scheme, seed=seed * 1000 + i, broadcast=broadcast)
        starts.append((f"{scheme}#{i}", init))
    if warm_start is not None and mode == "rs" and cfg.warm_start_from_no_rs:
        starts.append(("warm_no_rs", _perturbed_warm_start(warm_start, ch, dims, budget)))

    candidates = []
    for label, init in starts:
        pset, report, trace, status, iters = run_single(ch, budget, dims, cfg, init, mode, label)
        candidates.append((pset, report, trace, status, iters))
    if warm_start is not None and mode == "rs" and cfg.warm_start_from_no_rs:
        # the non-RS point itself is RS-feasible (zero broadcast stream)
        ws = _enforce_budget(PrecoderSet(np.zeros_like(warm_start.p_bc), warm_start.p), budget)
        candidates.append((ws, rates_from_precoders(ws, ch, dims), RsTrace(init="no_rs_point"), STATUS_CONVERGED, 0))

    ok = [c for c in candidates if c[3] != STATUS_SOLVER_FAILURE] or candidates
    best = max(ok, key=lambda c: (round(c[1].sum_mmf, 9), -c[4]))
    pset, _, trace, status, _ = best
    report = rates_from_precoders(pset, ch, dims)
    report.iterations = int(sum(c[4] for c in candidates))
    report.status = status
    report.extras["runs"] = [c[2] for c in candidates]
    report.extras["run_status"] = [c[3] for c in candidates]
    csplit = CommonRateSplit(report.extras["common_split"])
    return pset, csplit, report, trace
