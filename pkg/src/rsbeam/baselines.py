"""Classic SDR max-min-fair multicast beamforming and the TDM reference scheme."""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import channel_hash, complex_normal, rng_for
from .model import STATUS_CONVERGED, CommonRateSplit, PrecoderSet, RateReport
from .rates import rates_from_precoders

log = logging.getLogger(__name__)


@dataclass
class SdrConfig:
    bisection_tol: float = 1e-3  # bits
    n_randomizations: int = 1000
    power_split: str = "equal"
    seed: int = 0

    def __post_init__(self):
        if self.bisection_tol <= 0:
            raise ValueError("bisection_tol must be positive")
        if self.n_randomizations < 1:
            raise ValueError("n_randomizations must be >= 1")
        if self.power_split not in ("equal", "grid_refined"):
            raise ValueError(f"unknown power split {self.power_split!r}")


@dataclass
class BisectionResult:
    gamma_lo: float
    gamma_hi: float
    X: dict  # group -> lifted matrix at gamma_lo (None if only gamma=0 was feasible)
    trace: list = field(default_factory=list)  # (gamma, feasible, status)
    failures: int = 0

    @property
    def bound(self) -> float:
        """Certified upper bound on the subcarrier MMF rate of the relaxation."""
        return float(np.log2(1.0 + self.gamma_hi))

    def is_monotone(self) -> bool:
        feas = [g for g, ok, _ in self.trace if ok]
        infeas = [g for g, ok, _ in self.trace if not ok]
        return not feas or not infeas or max(feas) < min(infeas)


_SDP_CACHE: OrderedDict = OrderedDict()
_SDP_CACHE_SIZE = 64


def _feasibility_problem(ch, n, group_of, users):
    key = (channel_hash(ch), n, tuple(group_of), tuple(users))
    prob = _SDP_CACHE.get(key)
    if prob is None:
        prob = conic.build_sdr_feasibility(ch, n, 0.0, 1.0, group_of, users)
        conic.solve(prob)  # see rs_wmmse._template: keep every real solve on the same code path
        _SDP_CACHE[key] = prob
        while len(_SDP_CACHE) > _SDP_CACHE_SIZE:
            _SDP_CACHE.popitem(last=False)
    else:
        _SDP_CACHE.move_to_end(key)
    return prob


def bisect_sinr(ch, n, power_cap, group_of, users=None, tol=1e-3) -> BisectionResult:
    """Largest common SINR target whose relaxed problem is feasible, bisected in rate."""
    users = list(range(ch.h.shape[0])) if users is None else list(users)
    prob = _feasibility_problem(ch, n, group_of, users)
    gain = max(float(np.sum(np.abs(ch.h[k, n]) ** 2)) for k in users)
    gamma_max = power_cap * gain / ch.noise_var
    res = BisectionResult(0.0, gamma_max, None)

    def test(gamma):
        conic.set_sdr_target(prob, gamma, power_cap)
        sol = conic.solve(prob)
        ok = sol.status == conic.OPTIMAL
        if sol.status == conic.NUMERICAL_FAILURE:
            res.failures += 1
        res.trace.append((float(gamma), ok, sol.status))
        return ok, sol

    ok, sol = test(gamma_max)
    if ok:
        res.gamma_lo = gamma_max
        res.X = conic.sdr_matrices(prob, sol)
        return res
    lo, hi = 0.0, float(np.log2(1.0 + gamma_max))
    hi_cert = hi  # only a certified infeasible target may tighten the bound
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok, sol = test(2.0 ** mid - 1.0)
        if ok:
            lo = mid
            res.X = conic.sdr_matrices(prob, sol)
        else:
            hi = mid
            if sol.status == conic.INFEASIBLE:
                hi_cert = mid
    res.gamma_lo = 2.0 ** lo - 1.0
    res.gamma_hi = 2.0 ** hi_cert - 1.0
    return res


def randomize(X: dict, ch, n, power_cap, group_of, users, n_candidates, rng):
    """Gaussian randomisation: draw rank-one precoders from each X_m, rescale to the cap,
    keep the candidate with the best minimum rate. Returns ({group: p}, min_rate)."""
    groups = sorted(X)
    Nt = ch.h.shape[2]
    factors = []
    for m in groups:
        w, U = np.linalg.eigh(0.5 * (X[m] + X[m].conj().T))
        factors.append(U * np.sqrt(np.clip(w, 0.0, None)))
    # principal eigenvectors as candidate 0, then random draws
    z = complex_normal(rng, (n_candidates, len(groups), Nt))
    cand = np.einsum("gij,cgj->cgi", np.stack(factors), z)
    principal = np.stack([f[:, -1] for f in factors])
    cand = np.concatenate([principal[None], cand], axis=0)
    power = np.sum(np.abs(cand) ** 2, axis=(1, 2))
    power[power == 0] = np.inf
    cand = cand * np.sqrt(power_cap / power)[:, None, None]

    H = ch.h[np.asarray(users), n, :]  # (U, Nt)
    gains = np.abs(np.einsum("ui,cgi->cgu", H, cand)) ** 2  # (C, G, U)
    own_idx = np.array([groups.index(group_of[k]) for k in users])
    own = gains[:, own_idx, np.arange(len(users))]
    sinr = own / (gains.sum(axis=1) - own + ch.noise_var)
    min_rate = np.log2(1.0 + sinr).min(axis=1)
    best = int(np.argmax(min_rate))
    return {m: cand[best, i] for i, m in enumerate(groups)}, float(min_rate[best])


def _subcarrier(ch, n, cap, group_of, users, cfg, rng):
    """Bisection + randomisation on one subcarrier."""
    groups = sorted({group_of[k] for k in users})
    Nt = ch.h.shape[2]
    if cap <= 0:
        return {m: np.zeros(Nt, complex) for m in groups}, 0.0, BisectionResult(0.0, 0.0, None)
    res = bisect_sinr(ch, n, cap, group_of, users, cfg.bisection_tol)
    if res.X is None:
        return {m: np.zeros(Nt, complex) for m in groups}, 0.0, res
    prec, rate = randomize(res.X, ch, n, cap, group_of, users, cfg.n_randomizations, rng)
    return prec, rate, res


def _caps(budget, dims, cfg):
    N = dims.n_subcarriers
    P = budget.total_power
    if cfg.power_split == "grid_refined" and N == 2:
        return [(f * P, (1 - f) * P) for f in np.linspace(0.0, 1.0, 11)]
    return [tuple([P / N] * N)]


def sdr_mmf(ch, budget, dims, cfg: SdrConfig = None):
    """Per-subcarrier SDR max-min-fair beamforming. Returns (PrecoderSet, RateReport, bound)."""
    cfg = cfg or SdrConfig()
    N, M, Nt = dims.n_subcarriers, dims.n_groups, dims.n_tx_antennas
    users = list(range(dims.n_users))
    best = None
    max_bound = 0.0
    for caps in _caps(budget, dims, cfg):
        p = np.zeros((M, N, Nt), complex)
        bound = 0.0
        traces, failures = [], 0
        for n in range(N):
            rng = rng_for(cfg.seed, 2, n, 0)
            prec, _, res = _subcarrier(ch, n, caps[n], dims.group_of, users, cfg, rng)
            for m, v in prec.items():
                p[m, n] = v
            bound += res.bound
            traces.append(res)
            failures += res.failures
        pset = PrecoderSet(np.zeros((N, Nt), complex), p)
        report = rates_from_precoders(pset, ch, dims, CommonRateSplit.zeros(dims))
        # the relaxation bound for the whole split search is the best bound over all splits
        max_bound = max(max_bound, bound)
        if best is None or report.sum_mmf > best[1].sum_mmf:
            best = (pset, report, traces, failures, caps)
    pset, report, traces, failures, caps = best
    bound = max_bound
    report.iterations = int(sum(len(t.trace) for t in traces))
    report.status = STATUS_CONVERGED
    report.extras.update(
        bisection=traces,
        failures=failures,
        power_split=cfg.power_split,
        caps=list(caps),
        relaxation_bound=bound,
    )
    return pset, report, bound


def tdm_mmf(ch, budget, dims, cfg: SdrConfig = None) -> RateReport:
    """One time slot per group; each slot is an interference-free single-group multicast."""
    cfg = cfg or SdrConfig()
    N, M = dims.n_subcarriers, dims.n_groups
    caps = [budget.total_power / N] * N
    slot_rate = np.zeros((M, N))
    user_rate = np.zeros((dims.n_users, N))
    traces, failures, power = [], 0, 0.0
    for m in range(M):
        users = dims.members(m)
        for n in range(N):
            rng = rng_for(cfg.seed, 2, n, m)
            prec, _, res = _subcarrier(ch, n, caps[n], dims.group_of, users, cfg, rng)
            v = prec[m]
            rates_m = np.log2(1.0 + np.abs(ch.h[users, n, :] @ v) ** 2 / ch.noise_var)
            user_rate[users, n] = rates_m / M
            slot_rate[m, n] = float(rates_m.min())
            power += float(np.sum(np.abs(v) ** 2))
            traces.append(res)
            failures += res.failures
    sub = slot_rate.min(axis=0) / M
    report = RateReport(
        user_rate=user_rate,
        bc_user_rate=np.zeros_like(user_rate),
        group_rate=slot_rate / M,
        subcarrier_mmf=sub,
        sum_mmf=float(sub.sum()),
        r_tot=float(sub.sum()),
        iterations=int(sum(len(t.trace) for t in traces)),
        status=STATUS_CONVERGED,
        extras={"slot_rate": slot_rate, "bisection": traces, "failures": failures,
                "power_per_slot": power / M},
    )
    return report
