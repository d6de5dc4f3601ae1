"""Core domain types, validation, power accounting and instance persistence.

Array conventions used across the package:

* channels ``h`` have shape ``(K, N, Nt)`` (user, subcarrier, antenna)
* broadcast precoders ``p_bc`` have shape ``(N, Nt)``
* group precoders ``p`` have shape ``(M, N, Nt)``
* common-rate split ``c`` has shape ``(M, N)``
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# SNR <-> power mapping used by every experiment: sigma^2 = 1, P = 10^(snr_db/10) total.
CONVENTION_TAG = "total_snr:P=10^(snr_db/10);sigma2=1"

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iters"
STATUS_SOLVER_FAILURE = "solver_failure"


class ValidationError(ValueError):
    """Raised when a problem instance violates one or more invariants."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class SystemDims:
    n_subcarriers: int
    n_tx_antennas: int
    n_groups: int
    n_users: int
    group_of: tuple = None

    def __post_init__(self):
        if self.group_of is None and self.n_groups >= 1 and self.n_users % max(self.n_groups, 1) == 0:
            size = self.n_users // self.n_groups
            object.__setattr__(self, "group_of", tuple(k // size for k in range(self.n_users)))
        elif self.group_of is not None:
            object.__setattr__(self, "group_of", tuple(int(g) for g in self.group_of))

    @classmethod
    def from_label(cls, label: str) -> "SystemDims":
        """Parse an ``N-Nt-M-users_per_group`` label such as ``2-4-3-3``."""
        n, nt, m, per_group = (int(x) for x in label.split("-"))
        return cls(n, nt, m, m * per_group)

    @property
    def label(self) -> str:
        return f"{self.n_subcarriers}-{self.n_tx_antennas}-{self.n_groups}-{self.users_per_group}"

    @property
    def users_per_group(self) -> int:
        return self.n_users // self.n_groups

    def members(self, m: int) -> list[int]:
        return [k for k, g in enumerate(self.group_of) if g == m]

    def errors(self) -> list[str]:
        errs = []
        for name in ("n_subcarriers", "n_tx_antennas", "n_groups", "n_users"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        if errs:
            return errs
        if self.n_users % self.n_groups != 0:
            errs.append("K mod M != 0 (unequal grouping)")
            return errs
        if self.group_of is None or len(self.group_of) != self.n_users:
            errs.append("group_of must assign every user to a group")
            return errs
        if any(g < 0 or g >= self.n_groups for g in self.group_of):
            errs.append("group_of has out-of-range group index")
            return errs
        counts = np.bincount(np.asarray(self.group_of), minlength=self.n_groups)
        if np.any(counts != self.users_per_group):
            errs.append("unequal grouping: every group needs exactly K/M members")
        return errs


@dataclass(frozen=True, eq=False)
class ChannelSet:
    h: np.ndarray  # (K, N, Nt) complex
    noise_var: float = 1.0

    def __post_init__(self):
        h = np.array(self.h, dtype=complex)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def shape(self):
        return self.h.shape

    def errors(self, dims: SystemDims) -> list[str]:
        errs = []
        want = (dims.n_users, dims.n_subcarriers, dims.n_tx_antennas)
        if self.h.shape != want:
            errs.append(f"channel shape {self.h.shape} does not match dims {want}")
        if not np.all(np.isfinite(self.h)):
            errs.append("non-finite channel entry")
        if not (math.isfinite(self.noise_var) and self.noise_var > 0):
            errs.append("noise variance must be positive")
        return errs


@dataclass(frozen=True)
class PowerBudget:
    total_power: float

    @classmethod
    def from_snr_db(cls, snr_db: float, noise_var: float = 1.0) -> "PowerBudget":
        return cls(noise_var * 10.0 ** (snr_db / 10.0))

    def snr_db(self, noise_var: float = 1.0) -> float:
        return 10.0 * math.log10(self.total_power / noise_var)

    def errors(self) -> list[str]:
        if not (math.isfinite(self.total_power) and self.total_power > 0):
            return ["total power P must be positive"]
        return []


@dataclass(frozen=True, eq=False)
class PrecoderSet:
    p_bc: np.ndarray  # (N, Nt)
    p: np.ndarray  # (M, N, Nt)

    def __post_init__(self):
        for name in ("p_bc", "p"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, dims: SystemDims) -> "PrecoderSet":
        n, nt, m = dims.n_subcarriers, dims.n_tx_antennas, dims.n_groups
        return cls(np.zeros((n, nt), complex), np.zeros((m, n, nt), complex))

    def scaled(self, factor: float) -> "PrecoderSet":
        return PrecoderSet(self.p_bc * factor, self.p * factor)

    @property
    def is_rs(self) -> bool:
        return bool(np.any(self.p_bc != 0))


@dataclass(frozen=True, eq=False)
class CommonRateSplit:
    c: np.ndarray  # (M, N) bits/s/Hz

    def __post_init__(self):
        arr = np.array(self.c, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "c", arr)

    @classmethod
    def zeros(cls, dims: SystemDims) -> "CommonRateSplit":
        return cls(np.zeros((dims.n_groups, dims.n_subcarriers)))


@dataclass
class RateReport:
    user_rate: np.ndarray  # (K, N)
    bc_user_rate: np.ndarray  # (K, N)
    group_rate: np.ndarray  # (M, N)
    subcarrier_mmf: np.ndarray  # (N,)
    sum_mmf: float
    r_tot: float
    iterations: int = 0
    status: str = STATUS_CONVERGED
    common_rate_infeasible: bool = False
    extras: dict = field(default_factory=dict)


def validate(dims: SystemDims, ch: ChannelSet, budget: PowerBudget) -> list[str]:
    """Return every violated invariant; an empty list means the instance is ok."""
    errs = dims.errors()
    if not errs:
        errs += ch.errors(dims)
    else:
        if not np.all(np.isfinite(ch.h)):
            errs.append("non-finite channel entry")
    errs += budget.errors()
    return errs


def check(dims: SystemDims, ch: ChannelSet, budget: PowerBudget) -> None:
    errs = validate(dims, ch, budget)
    if errs:
        raise ValidationError(errs)


def realized_total_power(pset: PrecoderSet) -> float:
    return float(np.sum(np.abs(pset.p_bc) ** 2) + np.sum(np.abs(pset.p) ** 2))


def subcarrier_power(pset: PrecoderSet) -> np.ndarray:
    """Power spent on each subcarrier, shape (N,)."""
    return np.sum(np.abs(pset.p_bc) ** 2, axis=-1) + np.sum(np.abs(pset.p) ** 2, axis=(0, 2))


# ---------------------------------------------------------------- persistence

def _pairs(arr: np.ndarray) -> list:
    flat = np.asarray(arr, dtype=complex).ravel()
    return [[float(z.real), float(z.imag)] for z in flat]


def _unpairs(pairs, shape) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(shape)


def dims_to_dict(dims: SystemDims) -> dict:
    return {
        "n_subcarriers": dims.n_subcarriers,
        "n_tx_antennas": dims.n_tx_antennas,
        "n_groups": dims.n_groups,
        "n_users": dims.n_users,
        "group_of": list(dims.group_of),
    }


def dims_from_dict(d: dict) -> SystemDims:
    return SystemDims(
        int(d["n_subcarriers"]),
        int(d["n_tx_antennas"]),
        int(d["n_groups"]),
        int(d["n_users"]),
        tuple(d["group_of"]) if d.get("group_of") is not None else None,
    )


def dump_channels(path, dims: SystemDims, ch: ChannelSet) -> Path:
    """Write the channel CSV plus a ``<path>.meta.json`` sibling holding dims and noise_var."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["user", "subcarrier", "antenna", "re", "im"])
        K, N, Nt = ch.h.shape
        for k in range(K):
            for n in range(N):
                for a in range(Nt):
                    z = ch.h[k, n, a]
                    w.writerow([k, n, a, repr(float(z.real)), repr(float(z.imag))])
    meta = {"dims": dims_to_dict(dims), "noise_var": float(ch.noise_var)}
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    return path


def load_channels(path) -> tuple[SystemDims, ChannelSet]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".meta.json").read_text())
    dims = dims_from_dict(meta["dims"])
    h = np.zeros((dims.n_users, dims.n_subcarriers, dims.n_tx_antennas), complex)
    seen = 0
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            h[int(row["user"]), int(row["subcarrier"]), int(row["antenna"])] = complex(
                float(row["re"]), float(row["im"])
            )
            seen += 1
    if seen != h.size:
        raise ValidationError([f"channel file has {seen} entries, expected {h.size}"])
    return dims, ChannelSet(h, float(meta["noise_var"]))


def instance_to_dict(dims, ch, budget, pset=None) -> dict:
    d = {
        "dims": dims_to_dict(dims),
        "noise_var": float(ch.noise_var),
        "total_power": float(budget.total_power),
        "h": _pairs(ch.h),
    }
    if pset is not None:
        d["p_bc"] = _pairs(pset.p_bc)
        d["p"] = _pairs(pset.p)
    return d


def instance_from_dict(d: dict):
    dims = dims_from_dict(d["dims"])
    K, N, Nt, M = dims.n_users, dims.n_subcarriers, dims.n_tx_antennas, dims.n_groups
    ch = ChannelSet(_unpairs(d["h"], (K, N, Nt)), float(d["noise_var"]))
    budget = PowerBudget(float(d["total_power"]))
    pset = None
    if "p_bc" in d:
        pset = PrecoderSet(_unpairs(d["p_bc"], (N, Nt)), _unpairs(d["p"], (M, N, Nt)))
    return dims, ch, budget, pset


def dump_instance(path, dims, ch, budget, pset=None) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(dims, ch, budget, pset)))


def load_instance(path):
    return instance_from_dict(json.loads(Path(path).read_text()))
