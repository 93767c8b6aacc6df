"""Synthetic model profiles: payload size, chunk count, and per-device batch.

A profile describes the communication-relevant footprint of a network without
carrying its weights: total gradient size in MB (1 MB = 2^20 bytes), the number
of gradient chunks transferred during aggregation, and the largest per-device
mini-batch the reference device memory allows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

MB = 2 ** 20
FLOAT_BYTES = 4

# name -> (size_mb, num_chunks, batch_per_device)
_REGISTRY: dict[str, tuple[float, int, int]] = {
    "AlexNet": (232.56, 16, 32),
    "GoogleNet": (26.70, 116, 16),
    "Inception-v3": (91.05, 556, 4),
    "Mobilenet-v1": (16.23, 164, 8),
    "Mobilenet-v2": (13.51, 320, 8),
    "ResNet-50": (97.70, 321, 4),
    "ResNet-101": (170.34, 626, 2),
    "ResNet-152": (230.20, 932, 2),
    # The reference table spells these with the extra 'e'; both spellings resolve.
    "SequeezeNet-v1.0": (4.76, 52, 16),
    "SequeezeNet-v1.1": (4.71, 52, 32),
}

_ALIASES = {
    "SqueezeNet-v1.0": "SequeezeNet-v1.0",
    "SqueezeNet-v1.1": "SequeezeNet-v1.1",
}

PROFILE_NAMES: tuple[str, ...] = tuple(_REGISTRY)


@dataclass(frozen=True)
class ModelProfile:
    """Communication footprint of one evaluation network.

    ``chunk_elems`` holds the per-chunk float32 element counts; their sum times
    four bytes reproduces ``size_mb`` to within one element of rounding.
    """

    name: str
    size_mb: float
    num_chunks: int
    batch_per_device: int
    chunk_elems: tuple[int, ...] = field(repr=False)

    @property
    def total_elems(self) -> int:
        return sum(self.chunk_elems)

    @property
    def total_bytes(self) -> int:
        return self.total_elems * FLOAT_BYTES


def split_elements(total: int, chunks: int) -> tuple[int, ...]:
    """Split ``total`` elements into ``chunks`` near-equal parts.

    The remainder is spread one element at a time over the lowest-indexed
    chunks, so the split is deterministic and reproducible.
    """
    if chunks < 1:
        raise ValueError(f"chunk count must be >= 1, got {chunks}")
    base, rem = divmod(total, chunks)
    return tuple(base + 1 if i < rem else base for i in range(chunks))


def build_profile(name: str) -> ModelProfile:
    """Construct a registered profile by name (canonical aliases accepted)."""
    key = _ALIASES.get(name, name)
    try:
        size_mb, num_chunks, batch = _REGISTRY[key]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY) + sorted(_ALIASES))
        raise KeyError(f"unknown model profile {name!r}; known names: {known}") from None
    total = round(size_mb * MB / FLOAT_BYTES)
    return ModelProfile(
        name=key,
        size_mb=size_mb,
        num_chunks=num_chunks,
        batch_per_device=batch,
        chunk_elems=split_elements(total, num_chunks),
    )


def all_profiles() -> list[ModelProfile]:
    """All registered profiles, in registry order."""
    return [build_profile(name) for name in PROFILE_NAMES]
