"""Seeded i.i.d. CN(0, 1) channel generation."""
import hashlib

import numpy as np

from .model import ChannelSet, SystemDims


def derived_seed(master_seed: int, *keys: int) -> np.random.SeedSequence:
    """Counter-based seed: the same (master_seed, keys) always maps to the same stream."""
    return np.random.SeedSequence([int(master_seed), *(int(k) for k in keys)])


def rng_for(master_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derived_seed(master_seed, *keys))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian entries with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_channels(dims: SystemDims, seed: int, noise_var: float = 1.0) -> ChannelSet:
    rng = np.random.default_rng(derived_seed(seed))
    h = complex_normal(rng, (dims.n_users, dims.n_subcarriers, dims.n_tx_antennas))
    return ChannelSet(h, noise_var)


def trial_channels(dims: SystemDims, master_seed: int, trial: int, noise_var: float = 1.0) -> ChannelSet:
    rng = rng_for(master_seed, 0, trial)
    h = complex_normal(rng, (dims.n_users, dims.n_subcarriers, dims.n_tx_antennas))
    return ChannelSet(h, noise_var)


def channel_hash(ch: ChannelSet) -> str:
    digest = hashlib.sha256(np.ascontiguousarray(ch.h).tobytes())
    digest.update(repr(float(ch.noise_var)).encode())
    return digest.hexdigest()[:16]
