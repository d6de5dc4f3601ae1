"""Closed-form SINR, rate, MSE, equalizer and WMMSE-weight computations.

All rates are in bits/s/Hz (log base 2). The natural log only enters via the
weight update ``v = 1 / (ln2 * MSE)`` and the constant ``G``.
"""
from dataclasses import dataclass

import numpy as np

from .model import CommonRateSplit, PrecoderSet, RateReport

LN2 = np.log(2.0)
# W_MSE = G - R at the optimal equalizer / weight pair.
G_CONST = 1.0 / LN2 + np.log2(LN2)
MSE_FLOOR = 1e-12
COMMON_RATE_SLACK = 1e-6


@dataclass(frozen=True)
class PowerTerms:
    t_kn: float
    e_kn: float
    q_kn: float


@dataclass(frozen=True, eq=False)
class AoState:
    """Equalizers and weights held fixed while the precoder subproblem is solved."""

    g_bc: np.ndarray  # (K, N) complex
    g: np.ndarray  # (K, N) complex
    v_bc: np.ndarray  # (K, N) > 0
    v: np.ndarray  # (K, N) > 0


def received_gains(pset: PrecoderSet, ch, group_of):
    """Return (h^T p_bc, h^T p_own, h^T p_j for all j) with shapes (K,N), (K,N), (M,K,N)."""
    a_bc = np.einsum("kni,ni->kn", ch.h, pset.p_bc)
    a_all = np.einsum("kni,mni->mkn", ch.h, pset.p)
    own = a_all[np.asarray(group_of), np.arange(ch.h.shape[0]), :]
    return a_bc, own, a_all


def power_terms_all(pset: PrecoderSet, ch, group_of):
    """Arrays (T, E, Q), each (K, N)."""
    a_bc, own, a_all = received_gains(pset, ch, group_of)
    e = np.sum(np.abs(a_all) ** 2, axis=0) + ch.noise_var
    t = e + np.abs(a_bc) ** 2
    q = e - np.abs(own) ** 2
    return t, e, q


def power_terms(k: int, n: int, pset: PrecoderSet, ch, group_of) -> PowerTerms:
    h = ch.h[k, n]
    a_bc = abs(h @ pset.p_bc[n]) ** 2
    a = np.abs(pset.p[:, n, :] @ h) ** 2
    e = float(np.sum(a) + ch.noise_var)
    return PowerTerms(e + a_bc, e, e - a[group_of[k]])


def sinr_multicast_all(pset, ch, group_of) -> np.ndarray:
    _, own, a_all = received_gains(pset, ch, group_of)
    own_pow = np.abs(own) ** 2
    interference = np.sum(np.abs(a_all) ** 2, axis=0) - own_pow
    return own_pow / (interference + ch.noise_var)


def sinr_broadcast_all(pset, ch, group_of) -> np.ndarray:
    a_bc, _, a_all = received_gains(pset, ch, group_of)
    return np.abs(a_bc) ** 2 / (np.sum(np.abs(a_all) ** 2, axis=0) + ch.noise_var)


def sinr_multicast(k, n, pset, ch, group_of) -> float:
    h = ch.h[k, n]
    a = np.abs(pset.p[:, n, :] @ h) ** 2
    own = a[group_of[k]]
    return float(own / (np.sum(a) - own + ch.noise_var))


def sinr_broadcast(k, n, pset, ch, group_of) -> float:
    h = ch.h[k, n]
    a = np.abs(pset.p[:, n, :] @ h) ** 2
    return float(abs(h @ pset.p_bc[n]) ** 2 / (np.sum(a) + ch.noise_var))


def group_min(values: np.ndarray, group_of, n_groups: int) -> np.ndarray:
    """Per-group minimum over users: (K, N) -> (M, N)."""
    group_of = np.asarray(group_of)
    return np.stack([values[group_of == m].min(axis=0) for m in range(n_groups)])


def optimal_common_split(bc_rate: np.ndarray, private_group_rate: np.ndarray) -> np.ndarray:
    """Water-fill the broadcast rate across groups to maximise the per-subcarrier minimum.

    bc_rate: (N,) decodable broadcast rate per subcarrier.
    private_group_rate: (M, N) worst private rate of each group.
    Returns C with shape (M, N), C >= 0 and sum_m C[:, n] == bc_rate[n].
    """
    M, N = private_group_rate.shape
    c = np.zeros((M, N))
    for n in range(N):
        budget = max(float(bc_rate[n]), 0.0)
        if budget <= 0:
            continue
        a = np.sort(private_group_rate[:, n])
        level = a[0] + budget
        # raise the water level over the i+1 lowest groups until it stops below the next one
        for i in range(M):
            level = (budget + a[: i + 1].sum()) / (i + 1)
            if i + 1 == M or level <= a[i + 1]:
                break
        c[:, n] = np.maximum(0.0, level - private_group_rate[:, n])
        # remove rounding drift so the split never exceeds the decodable rate
        total = c[:, n].sum()
        if total > budget:
            c[:, n] *= budget / total
    return c


def rates_from_precoders(pset: PrecoderSet, ch, dims, csplit: CommonRateSplit = None) -> RateReport:
    """Evaluate every rate of a precoder set.

    ``csplit=None`` picks the best common-rate split for the given precoders
    (all zeros when there is no broadcast stream).
    """
    group_of = dims.group_of
    user_rate = np.log2(1.0 + sinr_multicast_all(pset, ch, group_of))
    bc_user_rate = np.log2(1.0 + sinr_broadcast_all(pset, ch, group_of))
    bc_rate = bc_user_rate.min(axis=0)
    private = group_min(user_rate, group_of, dims.n_groups)
    if csplit is None:
        c = optimal_common_split(bc_rate, private)
    else:
        c = np.asarray(csplit.c, dtype=float)
    infeasible = bool(np.any(c.sum(axis=0) > bc_rate + COMMON_RATE_SLACK)) or bool(np.any(c < -COMMON_RATE_SLACK))
    group_rate = c + private
    sub = group_rate.min(axis=0)
    total = float(sub.sum())
    return RateReport(
        user_rate=user_rate,
        bc_user_rate=bc_user_rate,
        group_rate=group_rate,
        subcarrier_mmf=sub,
        sum_mmf=total,
        r_tot=total,
        common_rate_infeasible=infeasible,
        extras={"common_split": c, "bc_rate": bc_rate},
    )


def update_equalizers(pset: PrecoderSet, ch, group_of):
    """MMSE equalizers g_bc = conj(h^T p_bc) / T and g = conj(h^T p_own) / E, shapes (K, N).

    The conjugate makes g * h^T p real, which is what minimises the MSE below.
    """
    a_bc, own, a_all = received_gains(pset, ch, group_of)
    e = np.sum(np.abs(a_all) ** 2, axis=0) + ch.noise_var
    t = e + np.abs(a_bc) ** 2
    return np.conj(a_bc) / t, np.conj(own) / e


def mse(pset: PrecoderSet, ch, group_of, g_bc, g):
    """MSE of the broadcast and private streams for arbitrary equalizers."""
    a_bc, own, a_all = received_gains(pset, ch, group_of)
    e = np.sum(np.abs(a_all) ** 2, axis=0) + ch.noise_var
    t = e + np.abs(a_bc) ** 2
    mse_bc = np.abs(g_bc) ** 2 * t - 2.0 * np.real(g_bc * a_bc) + 1.0
    mse_p = np.abs(g) ** 2 * e - 2.0 * np.real(g * own) + 1.0
    return mse_bc, mse_p


def update_weights(mse_bc, mse_p):
    mse_bc = np.maximum(np.asarray(mse_bc, dtype=float), MSE_FLOOR)
    mse_p = np.maximum(np.asarray(mse_p, dtype=float), MSE_FLOOR)
    return 1.0 / (LN2 * mse_bc), 1.0 / (LN2 * mse_p)


def weighted_mse(v, mse_value):
    return v * mse_value - np.log2(v)


def ao_update(pset: PrecoderSet, ch, group_of) -> AoState:
    """One equalizer update followed by one weight update."""
    g_bc, g = update_equalizers(pset, ch, group_of)
    mse_bc, mse_p = mse(pset, ch, group_of, g_bc, g)
    v_bc, v = update_weights(mse_bc, mse_p)
    return AoState(g_bc, g, v_bc, v)
