"""Texton dictionaries and occurrence histograms.

A dictionary holds the centroids of small color patches, trained with
winner-take-all Kohonen updates. Any image is then summarized by the
normalized histogram of nearest-texton assignments over randomly sampled
patches. Patches are flattened channel-major: index = c*w*w + row*w + col.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PatchConfig:
    patch_width: int = 5
    channels: int = 3
    samples_per_image: int = 25

    def __post_init__(self):
        if self.patch_width < 2:
            raise ValueError("patch_width must be >= 2")
        if self.samples_per_image < 1:
            raise ValueError("samples_per_image must be >= 1")

    @property
    def dim(self) -> int:
        return self.patch_width * self.patch_width * self.channels


# patch budget for sliding-window segmentation histograms
SEGMENT_SAMPLES = 50


@dataclass(frozen=True)
class TextonDictionary:
    textons: np.ndarray  # (m, w*w*channels)
    patch_width: int
    channels: int = 3
    epochs: int = 10
    eta_start: float = 0.1
    eta_end: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "textons", np.asarray(self.textons, dtype=float))
        if self.textons.ndim != 2 or self.textons.shape[0] < 2:
            raise ValueError("dictionary needs at least 2 textons")
        if self.textons.shape[1] != self.patch_width ** 2 * self.channels:
            raise ValueError("texton length does not match patch geometry")

    @property
    def m(self) -> int:
        return self.textons.shape[0]


def sample_patches(image: np.ndarray, count: int, patch_config: PatchConfig, rng_seed) -> np.ndarray:
    """Extract ``count`` patches at uniform random top-left positions.

    Returns an array of shape (count, w*w*channels), channel-major flattened.
    """
    w = patch_config.patch_width
    H, W = image.shape[0], image.shape[1]
    if H < w or W < w:
        raise ValueError(f"image {H}x{W} smaller than patch width {w}")
    rng = np.random.default_rng(rng_seed)
    tops = rng.integers(0, H - w + 1, size=count)
    lefts = rng.integers(0, W - w + 1, size=count)
    windows = np.lib.stride_tricks.sliding_window_view(image, (w, w), axis=(0, 1))
    # windows[r, c] has shape (channels, w, w) -> already channel-major
    patches = windows[tops, lefts].reshape(count, -1)
    return np.ascontiguousarray(patches, dtype=float)


def train_dictionary(
    patches: np.ndarray,
    m: int = 30,
    epochs: int = 10,
    learning_rate_schedule: tuple[float, float] = (0.1, 0.01),
    rng_seed: int = 0,
) -> TextonDictionary:
    """Winner-take-all Kohonen clustering of patch vectors.

    Textons start as m distinct random training patches. Each presentation
    moves only the nearest texton toward the sample by the current learning
    rate, which decays linearly per epoch from eta_start to eta_end.
    Presentation order is reshuffled every epoch from the seed.
    """
    patches = np.asarray(patches, dtype=float)
    n = len(patches)
    if n < m:
        raise ValueError(f"need at least m={m} patches, got {n}")
    eta0, eta1 = learning_rate_schedule
    rng = np.random.default_rng(rng_seed)

    textons = patches[rng.choice(n, size=m, replace=False)].copy()
    for epoch in range(epochs):
        eta = eta0 if epochs == 1 else eta0 + (eta1 - eta0) * epoch / (epochs - 1)
        for i in rng.permutation(n):
            sample = patches[i]
            diff = textons - sample
            winner = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
            textons[winner] += eta * (sample - textons[winner])

    side = int(np.sqrt(patches.shape[1] // 3)) if patches.shape[1] % 3 == 0 else None
    if side is None or side * side * 3 != patches.shape[1]:
        raise ValueError("patch vectors must be w*w*3 long")
    return TextonDictionary(
        textons=textons,
        patch_width=side,
        epochs=epochs,
        eta_start=eta0,
        eta_end=eta1,
        rng_seed=rng_seed if isinstance(rng_seed, int) else 0,
    )


def assign_textons(patches: np.ndarray, dictionary: TextonDictionary) -> np.ndarray:
    """Index of the nearest texton for each patch row (ties -> lowest index)."""
    patches = np.asarray(patches, dtype=float)
    d2 = (
        np.einsum("ij,ij->i", patches, patches)[:, None]
        - 2.0 * patches @ dictionary.textons.T
        + np.einsum("ij,ij->i", dictionary.textons, dictionary.textons)[None, :]
    )
    return np.argmin(d2, axis=1)


def nearest_texton(patch: np.ndarray, dictionary: TextonDictionary) -> int:
    """Nearest texton by Euclidean distance; ties break to the lowest index."""
    diff = dictionary.textons - np.asarray(patch, dtype=float)
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def histogram_from_patches(patches: np.ndarray, dictionary: TextonDictionary) -> np.ndarray:
    counts = np.bincount(assign_textons(patches, dictionary), minlength=dictionary.m)
    return counts / len(patches)


def extract_histogram(
    image: np.ndarray,
    dictionary: TextonDictionary,
    patch_config: PatchConfig,
    rng_seed,
) -> np.ndarray:
    """Normalized texton occurrence distribution of an image.

    Samples ``patch_config.samples_per_image`` patches, assigns each to its
    nearest texton, and normalizes the bin counts to sum to 1.
    """
    patches = sample_patches(image, patch_config.samples_per_image, patch_config, rng_seed)
    return histogram_from_patches(patches, dictionary)
