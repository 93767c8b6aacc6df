"""Analytic timing of collective message schedules.

These functions walk the exact message schedule a collective would execute and
sum simulated transfer times, without moving any payload. The ring cost
follows rank 0's 2(K-1) receives with the real uneven segment sizes; the tree
baseline models a segmented, pipelined binomial reduce+broadcast, which is how
production libraries keep large-message allreduce time nearly independent of
the participant count.
"""

from __future__ import annotations

import math

import numpy as np

from ..collectives import segment_bounds
from ..profiles import FLOAT_BYTES, ModelProfile
from ..transport.net import NetProfile, sim_transfer_time
from .compute import ComputeProfile


def ring_comm_time(n_elems: int, k: int, net: NetProfile,
                   rng: np.random.Generator | None = None,
                   k_active: int | None = None) -> float:
    """Rank-0 time for one ring allreduce of ``n_elems`` float32 elements."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return 0.0
    k_active = k if k_active is None else k_active
    bounds = segment_bounds(n_elems, k)
    seg_bytes = [(hi - lo) * FLOAT_BYTES for lo, hi in bounds]
    total = 0.0
    for step in range(k - 1):          # scatter-reduce receives
        seg = (-step - 1) % k
        total += sim_transfer_time(seg_bytes[seg], k_active, net, rng)
    for step in range(k - 1):          # allgather receives
        seg = (-step) % k
        total += sim_transfer_time(seg_bytes[seg], k_active, net, rng)
    return total


def tree_comm_time(n_bytes: int, k: int, net: NetProfile, segment_bytes: int,
                   rng: np.random.Generator | None = None,
                   k_active: int | None = None) -> float:
    """Critical-path time of a pipelined binomial reduce + broadcast.

    A message of m segments crosses a depth-d tree in (d - 1 + m) segment
    slots per direction; both directions are charged.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return 0.0
    k_active = k if k_active is None else k_active
    depth = max(1, math.ceil(math.log2(k)))
    full, last = divmod(n_bytes, segment_bytes)
    # a zero-byte collective still crosses every hop once per direction
    segments = [segment_bytes] * full + ([last] if last else ([0] if n_bytes == 0 else []))
    fill_bytes = min(segment_bytes, n_bytes)
    total = 0.0
    for _direction in range(2):
        for seg in segments:
            total += sim_transfer_time(seg, k_active, net, rng)
        for _ in range(depth - 1):     # pipeline fill slots
            total += sim_transfer_time(fill_bytes, k_active, net, rng)
    return total


def aggregation_comm_time(profile: ModelProfile, k: int, net: NetProfile,
                          compute: ComputeProfile, alg: str,
                          rng: np.random.Generator | None = None) -> float:
    """Communication-phase time for one iteration's gradient aggregation.

    Packed modes pay one invocation overhead plus the pack/unpack memory
    copies; the chunk-wise mode pays the invocation overhead once per chunk
    and never copies.
    """
    if k == 1:
        return 0.0
    ovh = compute.invocation_overhead
    if alg == "ring_packed":
        copies = 2 * profile.total_bytes / compute.pack_bandwidth
        return ovh + copies + ring_comm_time(profile.total_elems, k, net, rng)
    if alg == "tree_packed":
        copies = 2 * profile.total_bytes / compute.pack_bandwidth
        return ovh + copies + tree_comm_time(profile.total_bytes, k, net,
                                             compute.tree_segment_bytes, rng)
    if alg == "ring_chunkwise":
        total = 0.0
        for elems in profile.chunk_elems:
            total += ovh + ring_comm_time(elems, k, net, rng)
        return total
    raise ValueError(f"unknown aggregation {alg!r}")


def collective_time(n_bytes: int, k: int, net: NetProfile, compute: ComputeProfile,
                    alg: str, rng: np.random.Generator | None = None) -> float:
    """Bare allreduce benchmark time for a buffer of ``n_bytes``."""
    if k == 1:
        return 0.0
    ovh = compute.invocation_overhead
    if alg == "ring":
        return ovh + ring_comm_time(n_bytes // FLOAT_BYTES, k, net, rng)
    if alg == "tree":
        return ovh + tree_comm_time(n_bytes, k, net, compute.tree_segment_bytes, rng)
    raise ValueError(f"unknown collective {alg!r}")
