"""Analytic and empirical degrees of freedom."""
import math

import numpy as np


class InsufficientPoints(ValueError):
    pass


def dof_classic(dims) -> int:
    """1 when inter-group interference can be nulled (or there is one group), else 0."""
    M, K, Nt = dims.n_groups, dims.n_users, dims.n_tx_antennas
    if M == 1 or Nt >= 1 + (M - 1) * (K // M):
        return 1
    return 0


def rs_power_exponent(m_degraded: int) -> float:
    """beta balancing degraded and designated groups: (1 - beta) / M_deg = beta."""
    return 1.0 / (1.0 + m_degraded)


def dof_rs(m_degraded: int) -> float:
    if m_degraded < 0:
        raise ValueError("m_degraded must be >= 0")
    if m_degraded == 0:
        return 1.0
    beta = rs_power_exponent(m_degraded)
    return min((1.0 - beta) / m_degraded, beta)


def log2_power(snr_db, noise_var=1.0):
    return np.log2(noise_var * 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0))


def empirical_dof(curve, n_subcarriers: int = 1, noise_var: float = 1.0, min_points: int = 3) -> float:
    """Least-squares slope of rate against log2(P), per subcarrier.

    ``curve`` is a sequence of (snr_db, rate) pairs already restricted to the
    fitting window.
    """
    pts = np.asarray(list(curve), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < min_points:
        raise InsufficientPoints(f"need at least {min_points} points, got {len(pts)}")
    x = log2_power(pts[:, 0], noise_var)
    slope = np.polyfit(x, pts[:, 1], 1)[0]
    return float(slope) / n_subcarriers


def high_snr_window(snr_grid, width_db: float = 10.0) -> list:
    """SNR points in the top ``width_db`` of the grid (inclusive)."""
    top = max(snr_grid)
    return [s for s in snr_grid if s >= top - width_db - 1e-9]


def fit_high_snr(curve, n_subcarriers, width_db=10.0, noise_var=1.0):
    """empirical_dof over the top ``width_db`` of a curve. Returns (dof, window)."""
    curve = sorted(curve)
    window = high_snr_window([s for s, _ in curve], width_db)
    pts = [(s, r) for s, r in curve if s in window]
    if any(math.isnan(r) for _, r in pts):
        return float("nan"), window
    return empirical_dof(pts, n_subcarriers, noise_var), window
