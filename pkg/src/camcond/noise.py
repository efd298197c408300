"""Sensor noise synthesis and staged image corruption.

Three noise sources are modelled, each amplified to a requested output
level in digital numbers:

* photon shot noise: Poisson arrival statistics per pixel, variance equal
  to the signal, so the noise deviation scales with sqrt(intensity)
* dark-current shot noise: zero-mean Gaussian whose variance grows
  linearly with exposure time and exponentially with temperature
  (thermal generation follows an activation-energy law)
* readout noise: sum of two independent zero-mean Gaussians, the kTC
  reset noise of the pixel capacitance and the source-follower noise,
  both mildly temperature dependent

Amplification to a target level rescales the raw noise deviation by a
single scalar, which keeps the signal dependence of photon noise intact.
Corruption pipelines apply stages in their physical order: photon noise
arises at light capture and therefore precedes blur, while dark-current
and readout noise act on the integrated signal after it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from camcond.blur import Kernel, MtfSamples, convolve, kernel_mtf
from camcond.image import GrayImage

NOISE_SOURCES = ("photon", "dcsn", "readout")

# --- sensor constants (placeholder magnitudes, relations are what matter) ---
_BOLTZMANN_EV = 8.617333262e-5   # eV/K
_DARK_ACTIVATION_EV = 0.62       # eV, silicon generation-current activation
_DARK_VAR_300K = 12.0            # DN^2 per second of exposure at 300 K
_RESET_SIGMA_300K = 2.0          # DN, kTC reset noise at 300 K
_FOLLOWER_SIGMA_300K = 1.5       # DN, source-follower noise at 300 K

# per-pixel rates above this are treated as Gaussian; indistinguishable
# from Poisson there and much faster to draw
_POISSON_GAUSSIAN_SWITCH = 1000.0


@dataclass(frozen=True)
class NoiseConfig:
    """One noise stage: which sources, how strong, under what conditions."""

    sources: tuple[str, ...]
    target_sigma: float              # DN; realized noise std lands within 0.5%
    temperature_k: float = 330.0
    exposure_time_s: float = 0.1

    def __post_init__(self):
        srcs = tuple(self.sources)
        if not srcs or len(set(srcs)) != len(srcs):
            raise ValueError(f"sources must be non-empty and unique, got {srcs!r}")
        unknown = [s for s in srcs if s not in NOISE_SOURCES]
        if unknown:
            raise ValueError(f"unknown noise sources {unknown}; valid: {NOISE_SOURCES}")
        if self.target_sigma < 0 or not math.isfinite(self.target_sigma):
            raise ValueError(f"target_sigma must be >= 0, got {self.target_sigma}")
        if self.temperature_k <= 0 or self.exposure_time_s <= 0:
            raise ValueError("temperature and exposure time must be positive")
        object.__setattr__(self, "sources", srcs)

    @classmethod
    def isolated(cls, source: str, target_sigma: float) -> "NoiseConfig":
        """Single-source stage at the fixed study conditions (330 K, 0.1 s)."""
        return cls(sources=(source,), target_sigma=target_sigma,
                   temperature_k=330.0, exposure_time_s=0.1)

    @classmethod
    def combined(cls, target_sigma: float, seed: int) -> "NoiseConfig":
        """All sources together; temperature and exposure drawn from the seed."""
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
        return cls(sources=NOISE_SOURCES, target_sigma=target_sigma,
                   temperature_k=float(rng.uniform(300.0, 330.0)),
                   exposure_time_s=float(rng.uniform(0.002, 1.0)))


@dataclass(frozen=True)
class NoiseRealization:
    """What a noise stage actually did to an image."""

    sigma: float                     # realized std of the added field, DN
    target_sigma: float
    sources: tuple[str, ...]
    temperature_k: float
    exposure_time_s: float
    position: str = "pre_blur"       # relative to the blur stages applied so far
    stage_index: int = 0

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma, "target_sigma": self.target_sigma,
            "sources": list(self.sources), "temperature_k": self.temperature_k,
            "exposure_time_s": self.exposure_time_s, "position": self.position,
            "stage_index": self.stage_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseRealization":
        return cls(sigma=d["sigma"], target_sigma=d["target_sigma"],
                   sources=tuple(d["sources"]), temperature_k=d["temperature_k"],
                   exposure_time_s=d["exposure_time_s"], position=d["position"],
                   stage_index=d["stage_index"])


def dark_current_variance(temperature_k: float, exposure_time_s: float) -> float:
    """Dark-noise variance in DN^2: linear in exposure, Arrhenius in temperature."""
    boost = math.exp((_DARK_ACTIVATION_EV / _BOLTZMANN_EV)
                     * (1.0 / 300.0 - 1.0 / temperature_k))
    return _DARK_VAR_300K * exposure_time_s * boost


def readout_variances(temperature_k: float) -> tuple[float, float]:
    """(reset, source-follower) variances in DN^2; both scale with T."""
    scale = temperature_k / 300.0
    return _RESET_SIGMA_300K ** 2 * scale, _FOLLOWER_SIGMA_300K ** 2 * scale


def photon_shot_field(img: GrayImage, rng: np.random.Generator) -> np.ndarray:
    """Raw photon-noise deviation: Poisson(I) - I per pixel."""
    lam = img.data
    if np.any(lam < 0):
        raise ValueError("photon noise needs non-negative intensities")
    noisy = np.empty_like(lam)
    small = lam <= _POISSON_GAUSSIAN_SWITCH
    noisy[small] = rng.poisson(lam[small])
    if not small.all():
        big = ~small
        noisy[big] = rng.normal(lam[big], np.sqrt(lam[big]))
    return noisy - lam


def dark_current_field(shape: tuple[int, int], temperature_k: float,
                       exposure_time_s: float, rng: np.random.Generator) -> np.ndarray:
    """Raw dark-current shot-noise field (zero-mean, signal independent)."""
    sigma = math.sqrt(dark_current_variance(temperature_k, exposure_time_s))
    return rng.normal(0.0, sigma, size=shape)


def readout_field(shape: tuple[int, int], temperature_k: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Raw readout field: independent reset and source-follower draws, added."""
    var_reset, var_follower = readout_variances(temperature_k)
    return (rng.normal(0.0, math.sqrt(var_reset), size=shape)
            + rng.normal(0.0, math.sqrt(var_follower), size=shape))


def scale_to_sigma(noise_field: np.ndarray, target_sigma: float) -> np.ndarray:
    """Rescale a zero-mean noise field so its std equals target_sigma."""
    if target_sigma < 0:
        raise ValueError("target_sigma must be >= 0")
    if target_sigma == 0:
        return np.zeros_like(noise_field)
    raw = float(noise_field.std())
    if raw == 0.0:
        raise ValueError("cannot amplify an identically zero noise field")
    return noise_field * (target_sigma / raw)


def apply_noise(img: GrayImage, config: NoiseConfig, seed: int) -> tuple[GrayImage, NoiseRealization]:
    """Add one noise stage, amplified to the configured level.

    Sub-seeds for the individual sources are split off the stage seed by
    fixed counters, so adding or removing a source never shifts the draws
    of the others.
    """
    streams = {name: np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
               for i, name in enumerate(NOISE_SOURCES)}
    total = np.zeros_like(img.data)
    for name in config.sources:
        if name == "photon":
            total += photon_shot_field(img, streams[name])
        elif name == "dcsn":
            total += dark_current_field(img.data.shape, config.temperature_k,
                                        config.exposure_time_s, streams[name])
        else:
            total += readout_field(img.data.shape, config.temperature_k, streams[name])
    scaled = scale_to_sigma(total, config.target_sigma)
    realized = float(scaled.std())
    noisy = GrayImage(img.data + scaled)
    return noisy, NoiseRealization(sigma=realized, target_sigma=config.target_sigma,
                                   sources=config.sources, temperature_k=config.temperature_k,
                                   exposure_time_s=config.exposure_time_s)


# --- staged pipelines -------------------------------------------------------


@dataclass(frozen=True)
class BlurStage:
    kernel: Kernel


@dataclass(frozen=True)
class NoiseStage:
    config: NoiseConfig


Stage = Union[BlurStage, NoiseStage]


@dataclass(frozen=True)
class GroundTruthBundle:
    """Everything a corruption run knows about itself.

    Kernels and their contrast samples appear in application order; noise
    records carry the realized level and where in the blur sequence the
    stage sat.
    """

    kernels: tuple[Kernel, ...]
    kernel_mtfs: tuple[MtfSamples, ...]
    noises: tuple[NoiseRealization, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "kernels": [
                {"kind": k.kind, "size": k.size, "length_px": k.length_px,
                 "orientation_deg": k.orientation_deg, "seed": k.seed,
                 "mtf": m.to_dict()}
                for k, m in zip(self.kernels, self.kernel_mtfs)
            ],
            "noises": [n.to_dict() for n in self.noises],
        }


def corrupt_pipeline(img: GrayImage, stages: list[Stage] | tuple[Stage, ...],
                     seed: int) -> tuple[GrayImage, GroundTruthBundle]:
    """Apply blur and noise stages in order, tracking ground truth.

    Stage sub-seeds split off the root seed by stage position. A stage
    containing photon noise must come first: photon noise exists before
    any optical blur or downstream electronics can act.
    """
    stages = tuple(stages)
    if not stages:
        raise ValueError("pipeline needs at least one stage")
    for i, stage in enumerate(stages):
        if isinstance(stage, NoiseStage) and "photon" in stage.config.sources and i != 0:
            raise ValueError(
                f"photon noise at stage {i} breaks physical order; it precedes all other stages")

    current = img
    kernels: list[Kernel] = []
    mtfs: list[MtfSamples] = []
    noises: list[NoiseRealization] = []
    for i, stage in enumerate(stages):
        if isinstance(stage, BlurStage):
            current = convolve(current, stage.kernel)
            kernels.append(stage.kernel)
            mtfs.append(kernel_mtf(stage.kernel))
        elif isinstance(stage, NoiseStage):
            stage_seed = np.random.SeedSequence(entropy=seed, spawn_key=(i,)).generate_state(1)[0]
            current, record = apply_noise(current, stage.config, int(stage_seed))
            position = "post_blur" if kernels else "pre_blur"
            noises.append(replace(record, position=position, stage_index=i))
        else:
            raise TypeError(f"unknown stage type {type(stage).__name__}")
    bundle = GroundTruthBundle(kernels=tuple(kernels), kernel_mtfs=tuple(mtfs),
                               noises=tuple(noises), seed=seed)
    return current, bundle
