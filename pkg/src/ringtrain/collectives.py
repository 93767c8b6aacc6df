"""Allreduce collectives over an abstract transport.

Two algorithms with the same contract (every rank ends with the elementwise
SUM over all ranks' buffers):

* ``ring_allreduce``: K-1 scatter-reduce steps then K-1 allgather steps
  around a logical ring; each rank sends exactly 2(K-1) messages of roughly
  n/K elements. Rank r always sends to (r+1) mod K and receives from
  (r-1) mod K.
* ``tree_allreduce``: binomial-tree reduce to rank 0 followed by a
  binomial-tree broadcast; the stand-in for a generic library allreduce.

Averaging is deliberately not done here; callers divide by K themselves.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import LayoutError, ProtocolError
from .model import GradientSet

# Each collective invocation claims a block of tags so that concurrent or
# back-to-back calls can never match each other's messages.
_TAG_BLOCK = 1 << 12


class _DoneHandle:
    def wait(self):
        pass


_DONE = _DoneHandle()


class _ThreadHandle:
    """Async send fallback for endpoints with blocking sends."""

    def __init__(self, fn, args):
        self._exc = None

        def run():
            try:
                fn(*args)
            except BaseException as exc:  # noqa: BLE001 - re-raised in wait()
                self._exc = exc

        self._thread = threading.Thread(target=run, daemon=True)
        self._thread.start()

    def wait(self):
        self._thread.join()
        if self._exc is not None:
            raise self._exc


def _isend(endpoint, dst: int, tag: int, payload: np.ndarray):
    """Start a send that must not block the matching receive."""
    if getattr(endpoint, "nonblocking_send", False):
        endpoint.send(dst, tag, payload)
        return _DONE
    return _ThreadHandle(endpoint.send, (dst, tag, payload))


@dataclass
class CommGroup:
    """A rank's membership in a collective group, bound to a transport endpoint."""

    endpoint: object
    _invocations: int = field(default=0, init=False)

    @property
    def rank(self) -> int:
        return self.endpoint.rank

    @property
    def size(self) -> int:
        return self.endpoint.size

    @property
    def invocations(self) -> int:
        """How many collective calls this group has issued."""
        return self._invocations

    def next_tag_block(self) -> int:
        base = (self._invocations % (2 ** 18)) * _TAG_BLOCK
        self._invocations += 1
        return base


@dataclass
class FlatBuffer:
    """All gradient chunks packed into one contiguous float32 array.

    ``layout`` lists (chunk_index, offset, length) spans that partition the
    data in chunk order; ``shapes`` preserves the original chunk shapes so a
    round trip is exact.
    """

    data: np.ndarray
    layout: list[tuple[int, int, int]]
    shapes: list[tuple[int, ...]] | None = None

    def validate(self) -> None:
        expect = 0
        for i, (idx, offset, length) in enumerate(self.layout):
            if idx != i or offset != expect or length < 0:
                raise LayoutError(f"corrupt layout entry {i}: {(idx, offset, length)}")
            expect = offset + length
        if expect != self.data.size:
            raise LayoutError(
                f"layout covers {expect} elements but buffer holds {self.data.size}")


def pack(grads: GradientSet) -> FlatBuffer:
    """Concatenate all chunks into a single buffer, recording each span."""
    if len(grads) == 0:
        raise ValueError("cannot pack an empty gradient set")
    layout = []
    offset = 0
    flats = []
    shapes = []
    for i, chunk in enumerate(grads):
        flat = np.ascontiguousarray(chunk, dtype=np.float32).reshape(-1)
        layout.append((i, offset, flat.size))
        offset += flat.size
        flats.append(flat)
        shapes.append(chunk.shape)
    return FlatBuffer(np.concatenate(flats), layout, shapes)


def unpack(buf: FlatBuffer) -> GradientSet:
    """Inverse of pack(); bit-exact round trip."""
    buf.validate()
    chunks = []
    for i, (_, offset, length) in enumerate(buf.layout):
        chunk = buf.data[offset:offset + length].copy()
        if buf.shapes is not None:
            chunk = chunk.reshape(buf.shapes[i])
        chunks.append(chunk)
    return GradientSet(chunks)


def segment_bounds(n: int, k: int) -> list[tuple[int, int]]:
    """Split n elements into k ring segments.

    Segment s gets ceil(n/k) elements when s < n mod k, floor(n/k) otherwise;
    zero-length segments are legal when n < k. No padding, so byte counts on
    the wire stay faithful.
    """
    base, rem = divmod(n, k)
    bounds = []
    start = 0
    for s in range(k):
        size = base + (1 if s < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def _ring_sum(data: np.ndarray, group: CommGroup) -> np.ndarray:
    k = group.size
    out = data.astype(np.float32, copy=True)
    if k == 1:
        return out
    ep = group.endpoint
    rank = group.rank
    tag0 = group.next_tag_block()
    right = (rank + 1) % k
    left = (rank - 1) % k
    bounds = segment_bounds(out.size, k)

    def expect_len(seg: int) -> int:
        lo, hi = bounds[seg]
        return hi - lo

    # scatter-reduce: after K-1 steps rank r owns the completed segment (r+1) mod K
    for step in range(k - 1):
        send_seg = (rank - step) % k
        recv_seg = (rank - step - 1) % k
        lo, hi = bounds[send_seg]
        handle = _isend(ep, right, tag0 + step, out[lo:hi])
        incoming = ep.recv(left, tag0 + step)
        handle.wait()
        if incoming.size != expect_len(recv_seg):
            raise ProtocolError(
                f"rank {rank}: segment {recv_seg} arrived with {incoming.size} "
                f"elements, expected {expect_len(recv_seg)}")
        lo, hi = bounds[recv_seg]
        out[lo:hi] += incoming
    # allgather: circulate the completed segments
    for step in range(k - 1):
        send_seg = (rank + 1 - step) % k
        recv_seg = (rank - step) % k
        lo, hi = bounds[send_seg]
        handle = _isend(ep, right, tag0 + (k - 1) + step, out[lo:hi])
        incoming = ep.recv(left, tag0 + (k - 1) + step)
        handle.wait()
        if incoming.size != expect_len(recv_seg):
            raise ProtocolError(
                f"rank {rank}: segment {recv_seg} arrived with {incoming.size} "
                f"elements, expected {expect_len(recv_seg)}")
        lo, hi = bounds[recv_seg]
        out[lo:hi] = incoming
    return out


def _tree_sum(data: np.ndarray, group: CommGroup) -> np.ndarray:
    k = group.size
    out = data.astype(np.float32, copy=True)
    if k == 1:
        return out
    ep = group.endpoint
    rank = group.rank
    tag0 = group.next_tag_block()
    n = out.size
    masks = []
    mask = 1
    while mask < k:
        masks.append(mask)
        mask <<= 1
    levels = len(masks)

    # binomial reduce to rank 0; tags are keyed to the round so every rank agrees
    for rnd, mask in enumerate(masks):
        if rank % (2 * mask) == mask:
            ep.send(rank - mask, tag0 + rnd, out)
            break
        partner = rank + mask
        if rank % (2 * mask) == 0 and partner < k:
            incoming = ep.recv(partner, tag0 + rnd)
            if incoming.size != n:
                raise ProtocolError(
                    f"rank {rank}: reduce payload of {incoming.size} elements, "
                    f"expected {n}")
            out += incoming

    # binomial broadcast from rank 0, mirroring the reduce rounds
    for rnd, mask in enumerate(reversed(masks)):
        tag = tag0 + levels + rnd
        if rank % (2 * mask) == 0:
            partner = rank + mask
            if partner < k:
                ep.send(partner, tag, out)
        elif rank % (2 * mask) == mask:
            out = ep.recv(rank - mask, tag)
            if out.size != n:
                raise ProtocolError(
                    f"rank {rank}: broadcast payload of {out.size} elements, "
                    f"expected {n}")
    return out


def ring_allreduce(buf: FlatBuffer, group: CommGroup) -> FlatBuffer:
    """Elementwise sum of equal-length buffers across all ranks (ring)."""
    return FlatBuffer(_ring_sum(buf.data, group), list(buf.layout), buf.shapes)


def tree_allreduce(buf: FlatBuffer, group: CommGroup) -> FlatBuffer:
    """Elementwise sum across all ranks via binomial reduce + broadcast."""
    return FlatBuffer(_tree_sum(buf.data, group), list(buf.layout), buf.shapes)


def allreduce_chunkwise(grads: GradientSet, group: CommGroup,
                        alg=ring_allreduce) -> GradientSet:
    """One allreduce invocation per chunk, in chunk order."""
    summed = []
    for chunk in grads:
        flat = np.ascontiguousarray(chunk, dtype=np.float32).reshape(-1)
        buf = FlatBuffer(flat, [(0, 0, flat.size)], [chunk.shape])
        summed.append(unpack(alg(buf, group)).chunks[0])
    return GradientSet(summed)
