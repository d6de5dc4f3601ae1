"""Convex subproblems: the RS-WMMSE precoder step (SOCP) and SDR feasibility (SDP).

Problems are assembled with cvxpy and solved with Clarabel. Every constraint
carries a provenance tag so a problem can be dumped and audited line by line.
The RS step is built once per (channel, dims, mode) with cvxpy parameters for
the equalizers/weights and the power budget, so successive WMMSE iterations
reuse the same compiled problem.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .rates import G_CONST, AoState

SOLVER_TOL = 1e-7
SOLVER_MAX_ITERS = 200
# accepted absolute constraint residual, relative to max(1, |rhs|)
FEAS_CHECK_TOL = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"

TAG_EPIGRAPH_GROUP = "rs:epigraph x_n <= C_mn + r_mn (min over groups)"
TAG_EPIGRAPH_SUM = "rs:sum_n x_n >= r_tot"
TAG_COMMON_NONNEG = "rs:C_mn >= 0"
TAG_BROADCAST_WMSE = "rs:G - WMSE_bc,kn >= sum_m C_mn"
TAG_PRIVATE_WMSE = "rs:G - WMSE_kn >= r_m(k),n"
TAG_TOTAL_POWER = "rs:total power sum_n(|p_bc,n|^2 + sum_m |p_mn|^2) <= P"
TAG_NO_RS_PIN = "no_rs:p_bc = 0, C = 0"
TAG_SDR_SINR = "sdr:tr(H_k X_m) - gamma sum_{j!=m} tr(H_k X_j) >= gamma sigma^2"
TAG_SDR_POWER = "sdr:sum_m tr(X_m) <= power_cap"
TAG_SDR_PSD = "sdr:X_m PSD"


@dataclass
class TaggedConstraint:
    tag: str
    constraint: cp.Constraint
    label: str = ""


@dataclass
class ConicProblem:
    variables: dict
    objective: cp.Objective
    constraints: list
    parameters: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    _cvx: cp.Problem = field(default=None, repr=False)

    @property
    def cvx(self) -> cp.Problem:
        if self._cvx is None:
            self._cvx = cp.Problem(self.objective, [tc.constraint for tc in self.constraints])
        return self._cvx

    @property
    def n_variables(self) -> int:
        """Number of real scalar variables (complex entries count twice)."""
        total = 0
        for var in self.variables.values():
            size = int(np.prod(var.shape)) if var.shape else 1
            total += 2 * size if var.is_complex() else size
        return total

    def tags(self) -> list:
        return [tc.tag for tc in self.constraints]

    def dump(self) -> str:
        """Text dump: header lines, then one constraint per line as ``[tag] label :: expr``."""
        sense = "maximize" if isinstance(self.objective, cp.Maximize) else "minimize"
        lines = [f"# variables {self.n_variables}"]
        for name, var in self.variables.items():
            lines.append(f"# var {name} shape={var.shape} complex={var.is_complex()}")
        lines.append(f"{sense} {self.objective.args[0]}")
        for tc in self.constraints:
            lines.append(f"[{tc.tag}] {tc.label} :: {tc.constraint}")
        return "\n".join(lines) + "\n"


@dataclass
class ConicSolution:
    status: str
    values: dict
    objective_value: float
    solve_time: float
    max_violation: float = float("nan")


_SOLVERS = (
    (cp.CLARABEL, dict(tol_gap_abs=SOLVER_TOL, tol_gap_rel=SOLVER_TOL, tol_feas=SOLVER_TOL, max_iter=SOLVER_MAX_ITERS)),
    # fallback: Clarabel can stall on infeasible SDPs close to the feasibility boundary
    (cp.CVXOPT, dict(abstol=SOLVER_TOL, reltol=SOLVER_TOL, feastol=SOLVER_TOL, max_iters=SOLVER_MAX_ITERS)),
)
# Near gamma* the relaxed feasible set collapses and both tight-tolerance runs can
# stop early. CVXOPT at default tolerances, then SCS with a tight eps, usually still
# land on a point that passes the violation check.
_SDP_SOLVERS = _SOLVERS + (
    (cp.CVXOPT, dict(max_iters=SOLVER_MAX_ITERS)),
    (cp.SCS, dict(eps=1e-9, max_iters=100_000)),
)


def _max_violation(prob: ConicProblem) -> float:
    """Largest constraint residual, relative to the magnitude of the constraint's sides."""
    worst = 0.0
    for tc in prob.constraints:
        viol = tc.constraint.violation()
        viol = float(np.max(viol)) if np.size(viol) else 0.0
        if not np.isfinite(viol):
            return np.inf
        scale = 1.0
        if isinstance(tc.constraint, cp.constraints.Inequality):
            for side in tc.constraint.args:
                if side.value is not None:
                    scale = max(scale, float(np.max(np.abs(side.value))))
        worst = max(worst, viol / scale)
    return worst


def solve(prob: ConicProblem) -> ConicSolution:
    """Solve with Clarabel, falling back to CVXOPT; never reports an unchecked point as optimal."""
    t0 = time.perf_counter()
    problem = prob.cvx
    outcome = ConicSolution(NUMERICAL_FAILURE, {}, float("nan"), 0.0)
    chain = _SDP_SOLVERS if prob.meta.get("kind") == "sdr" else _SOLVERS
    for solver, opts in chain:
        try:
            with warnings.catch_warnings():
                # inaccurate solutions are screened by the violation check below
                warnings.simplefilter("ignore", UserWarning)
                problem.solve(solver=solver, **opts)
        except cp.error.SolverError:
            continue
        status = problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            outcome = ConicSolution(INFEASIBLE, {}, float("nan"), 0.0)
            break
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            continue
        worst = _max_violation(prob)
        values = {name: np.array(var.value) for name, var in prob.variables.items()}
        if worst <= FEAS_CHECK_TOL:
            outcome = ConicSolution(OPTIMAL, values, float(problem.value), 0.0, worst)
            break
        outcome = ConicSolution(NUMERICAL_FAILURE, values, float(problem.value), 0.0, worst)
    outcome.solve_time = time.perf_counter() - t0
    return outcome


# ------------------------------------------------------------ real embedding

def embed_row(h: np.ndarray) -> np.ndarray:
    """2 x 2Nt real matrix A with A @ [Re p; Im p] = [Re h^T p; Im h^T p]."""
    hr, hi = h.real, h.imag
    return np.block([[hr[None, :], -hi[None, :]], [hi[None, :], hr[None, :]]])


def embed_vec(p: np.ndarray) -> np.ndarray:
    return np.concatenate([p.real, p.imag], axis=-1)


def unembed_vec(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    nt = x.shape[-1] // 2
    return x[..., :nt] + 1j * x[..., nt:]


def linear_coeff(w: np.ndarray) -> np.ndarray:
    """Real vector b with b @ [Re p; Im p] = Re(w^T p)."""
    return np.concatenate([w.real, -w.imag], axis=-1)


# ------------------------------------------------------------ RS precoder step

def rs_variable_count(n_subcarriers: int, n_groups: int, n_tx: int) -> int:
    N, M, Nt = n_subcarriers, n_groups, n_tx
    return 2 * N * (M + 1) * Nt + 2 * N * M + N + 1


def build_rs_subproblem(ch, dims, budget, ao: AoState = None, mode: str = "rs", pset_prev=None) -> ConicProblem:
    """Epigraph form of the WMMSE-reformulated RS sum-MMF problem with fixed (g, v).

    ``mode="no_rs"`` pins every broadcast precoder and common-rate share to zero.
    ``pset_prev`` is only checked for shape; the new precoders do not depend on it
    beyond what ``ao`` already encodes.
    """
    K, N, Nt = ch.h.shape
    M = dims.n_groups
    if (K, N, Nt) != (dims.n_users, dims.n_subcarriers, dims.n_tx_antennas):
        raise ValueError("channel dimensions do not match SystemDims")
    if pset_prev is not None and pset_prev.p.shape != (M, N, Nt):
        raise ValueError("previous precoders do not match SystemDims")
    if mode not in ("rs", "no_rs"):
        raise ValueError(f"unknown mode {mode!r}")
    group_of = dims.group_of
    two = 2 * Nt

    p_bc = [cp.Variable(two, name=f"p_bc[{n}]") for n in range(N)]
    p = [[cp.Variable(two, name=f"p[{m}][{n}]") for n in range(N)] for m in range(M)]
    C = cp.Variable((M, N), name="C")
    r = cp.Variable((M, N), name="r")
    x = cp.Variable(N, name="x")
    r_tot = cp.Variable(name="r_tot")
    variables = {"C": C, "r": r, "x": x, "r_tot": r_tot}
    for n in range(N):
        variables[f"p_bc[{n}]"] = p_bc[n]
    for m in range(M):
        for n in range(N):
            variables[f"p[{m}][{n}]"] = p[m][n]

    params = {
        "P": cp.Parameter(nonneg=True, name="P"),
        # sqrt(v) * embed(g h): own-stream residual sqrt(v) (g h^T p - 1)
        "own_bc": [[cp.Parameter((2, two), name=f"own_bc[{k},{n}]") for n in range(N)] for k in range(K)],
        "sv_bc": cp.Parameter((K, N), nonneg=True, name="sv_bc"),
        "quad_bc": cp.Parameter((K, N), nonneg=True, name="quad_bc"),
        "const_bc": cp.Parameter((K, N), name="const_bc"),
        "own": [[cp.Parameter((2, two), name=f"own[{k},{n}]") for n in range(N)] for k in range(K)],
        "sv": cp.Parameter((K, N), nonneg=True, name="sv"),
        "quad": cp.Parameter((K, N), nonneg=True, name="quad"),
        "const": cp.Parameter((K, N), name="const"),
    }

    cons = []
    for n in range(N):
        for m in range(M):
            cons.append(TaggedConstraint(TAG_EPIGRAPH_GROUP, x[n] <= C[m, n] + r[m, n], f"m={m},n={n}"))
    cons.append(TaggedConstraint(TAG_EPIGRAPH_SUM, cp.sum(x) >= r_tot))
    cons.append(TaggedConstraint(TAG_COMMON_NONNEG, C >= 0))

    unit = np.array([1.0, 0.0])
    for n in range(N):
        private_stack = cp.vstack([p[m][n] for m in range(M)])  # (M, 2Nt)
        for k in range(K):
            A = embed_row(ch.h[k, n])  # (2, 2Nt)
            m_k = group_of[k]
            # v*MSE - log2 v written as |sqrt(v)(g h^T p_own - 1)|^2 + v|g|^2 (interference + noise) - log2 v,
            # a sum of squares without the large cancelling terms of the expanded form
            res_bc = params["own_bc"][k][n] @ p_bc[n] - params["sv_bc"][k, n] * unit
            wmse_bc = (cp.sum_squares(res_bc) + cp.sum_squares(params["quad_bc"][k, n] * (private_stack @ A.T))
                       + params["const_bc"][k, n])
            cons.append(TaggedConstraint(TAG_BROADCAST_WMSE, wmse_bc + cp.sum(C[:, n]) <= G_CONST, f"k={k},n={n}"))
            res_p = params["own"][k][n] @ p[m_k][n] - params["sv"][k, n] * unit
            wmse_p = cp.sum_squares(res_p) + params["const"][k, n]
            if M > 1:
                other_stack = cp.vstack([p[j][n] for j in range(M) if j != m_k])
                wmse_p = wmse_p + cp.sum_squares(params["quad"][k, n] * (other_stack @ A.T))
            cons.append(TaggedConstraint(TAG_PRIVATE_WMSE, wmse_p + r[m_k, n] <= G_CONST, f"k={k},n={n}"))

    power = cp.sum([cp.sum_squares(v) for v in p_bc] + [cp.sum_squares(p[m][n]) for m in range(M) for n in range(N)])
    cons.append(TaggedConstraint(TAG_TOTAL_POWER, power <= params["P"]))
    if mode == "no_rs":
        for n in range(N):
            cons.append(TaggedConstraint(TAG_NO_RS_PIN, p_bc[n] == 0, f"p_bc n={n}"))
        cons.append(TaggedConstraint(TAG_NO_RS_PIN, C == 0, "C"))

    prob = ConicProblem(
        variables=variables,
        objective=cp.Maximize(r_tot),
        constraints=cons,
        parameters=params,
        meta={"kind": "rs", "mode": mode, "dims": (N, M, K, Nt), "noise_var": ch.noise_var, "h": ch.h},
    )
    prob.parameters["P"].value = float(budget.total_power)
    if ao is not None:
        set_ao_state(prob, ao)
    else:
        # weights of the all-zero precoder point: g = 0, MSE = 1, v = 1/ln2
        zero = np.zeros((K, N))
        set_ao_state(prob, AoState(zero.astype(complex), zero.astype(complex),
                                   np.full((K, N), 1 / np.log(2)), np.full((K, N), 1 / np.log(2))))
    return prob


def set_ao_state(prob: ConicProblem, ao: AoState, budget=None) -> ConicProblem:
    """Load fixed equalizers/weights (and optionally a new budget) into an RS subproblem."""
    h = prob.meta["h"]
    sigma2 = prob.meta["noise_var"]
    K, N, _ = h.shape
    pr = prob.parameters
    sv_bc, sv = np.sqrt(ao.v_bc), np.sqrt(ao.v)
    pr["sv_bc"].value = np.asarray(sv_bc, dtype=float)
    pr["quad_bc"].value = np.asarray(sv_bc * np.abs(ao.g_bc), dtype=float)
    pr["const_bc"].value = np.asarray(ao.v_bc * np.abs(ao.g_bc) ** 2 * sigma2 - np.log2(ao.v_bc), dtype=float)
    pr["sv"].value = np.asarray(sv, dtype=float)
    pr["quad"].value = np.asarray(sv * np.abs(ao.g), dtype=float)
    pr["const"].value = np.asarray(ao.v * np.abs(ao.g) ** 2 * sigma2 - np.log2(ao.v), dtype=float)
    for k in range(K):
        for n in range(N):
            pr["own_bc"][k][n].value = sv_bc[k, n] * embed_row(ao.g_bc[k, n] * h[k, n])
            pr["own"][k][n].value = sv[k, n] * embed_row(ao.g[k, n] * h[k, n])
    if budget is not None:
        pr["P"].value = float(budget.total_power)
    return prob


def rs_precoders_from_solution(sol: ConicSolution, dims):
    """Complex (p_bc, p) arrays from an RS solution."""
    N, M, Nt = dims.n_subcarriers, dims.n_groups, dims.n_tx_antennas
    p_bc = np.stack([unembed_vec(sol.values[f"p_bc[{n}]"]) for n in range(N)])
    p = np.stack([np.stack([unembed_vec(sol.values[f"p[{m}][{n}]"]) for n in range(N)]) for m in range(M)])
    return p_bc.reshape(N, Nt), p.reshape(M, N, Nt)


# ------------------------------------------------------------ SDR feasibility

def build_sdr_feasibility(ch, n: int, gamma: float, power_cap: float, group_of, users=None) -> ConicProblem:
    """Rank-relaxed SINR-target feasibility problem on subcarrier ``n``.

    ``users`` restricts the problem to a subset of users (e.g. one group for a
    TDM slot); ``group_of`` indexes into the full user set. The variables are
    the lifted matrices normalised by the power cap, and every SINR row is
    divided by 1 + gamma, which keeps the data O(1) at high SNR. Use
    set_sdr_target to change gamma or the cap and sdr_matrices to read X_m.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    users = list(range(ch.h.shape[0])) if users is None else list(users)
    groups = sorted({group_of[k] for k in users})
    Nt = ch.h.shape[2]
    Y = {m: cp.Variable((Nt, Nt), hermitian=True, name=f"X[{m}]") for m in groups}
    w_sig = cp.Parameter(nonneg=True, name="w_sig")  # 1 / (1 + gamma)
    w_int = cp.Parameter(nonneg=True, name="w_int")  # gamma / (1 + gamma)
    floor = cp.Parameter(nonneg=True, name="floor")  # gamma sigma^2 / ((1 + gamma) cap)
    cons = [TaggedConstraint(TAG_SDR_PSD, Y[m] >> 0, f"m={m}") for m in groups]
    for k in users:
        h = ch.h[k, n]
        H = np.outer(np.conj(h), h)  # |h^T p|^2 = p^H H p
        m = group_of[k]
        sig = cp.real(cp.trace(H @ Y[m]))
        others = [cp.real(cp.trace(H @ Y[j])) for j in groups if j != m]
        interf = cp.sum(others) if others else 0.0
        cons.append(TaggedConstraint(TAG_SDR_SINR, w_sig * sig - w_int * interf >= floor, f"k={k}"))
    power = cp.sum([cp.real(cp.trace(Y[m])) for m in groups])
    cons.append(TaggedConstraint(TAG_SDR_POWER, power <= 1.0))
    prob = ConicProblem(
        variables={f"X[{m}]": Y[m] for m in groups},
        objective=cp.Minimize(power),
        constraints=cons,
        parameters={"w_sig": w_sig, "w_int": w_int, "floor": floor},
        meta={"kind": "sdr", "n": n, "groups": groups, "users": users, "noise_var": ch.noise_var},
    )
    return set_sdr_target(prob, gamma, power_cap)


def set_sdr_target(prob: ConicProblem, gamma: float, power_cap: float) -> ConicProblem:
    gamma, power_cap = float(gamma), float(power_cap)
    if gamma < 0 or power_cap <= 0:
        raise ValueError("need gamma >= 0 and power_cap > 0")
    prob.parameters["w_sig"].value = 1.0 / (1.0 + gamma)
    prob.parameters["w_int"].value = gamma / (1.0 + gamma)
    prob.parameters["floor"].value = gamma * prob.meta["noise_var"] / ((1.0 + gamma) * power_cap)
    prob.meta["gamma"], prob.meta["power_cap"] = gamma, power_cap
    return prob


def sdr_matrices(prob: ConicProblem, sol: ConicSolution) -> dict:
    """Lifted matrices X_m (group -> Nt x Nt) in power units."""
    cap = prob.meta["power_cap"]
    return {m: cap * sol.values[f"X[{m}]"] for m in prob.meta["groups"]}
