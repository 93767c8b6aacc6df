"""Real framed-TCP transport and worker rendezvous.

Every worker opens a listening socket, registers (rank, address) with a
coordinator, receives the full address table back, then builds a full mesh:
rank r dials every lower rank and accepts connections from higher ranks.
All traffic uses the frame format from :mod:`.frame`.
"""

from __future__ import annotations

import json
import socket
import threading
import time

import numpy as np

from ..errors import PeerDisconnected, RecvTimeout, TagMismatch, WireProtocolError
from .frame import HEADER_SIZE, decode_header, encode_frame, floats_to_wire, wire_to_floats

DEFAULT_TIMEOUT = 30.0

# control tags live at the top of the u32 space, clear of collective tags
TAG_REGISTER = 0xFFFF0001
TAG_TABLE = 0xFFFF0002
TAG_HELLO = 0xFFFF0003
TAG_PROBE_DATA = 0xFFFF0010
TAG_PROBE_END = 0xFFFF0011
TAG_PROBE_ACK = 0xFFFF0012


class FramedSocket:
    """Blocking framed message stream over one TCP connection."""

    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self.dead = False

    def close(self) -> None:
        self.dead = True
        try:
            self.sock.close()
        except OSError:
            pass

    def _recv_exact(self, n: int, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(min(n - len(buf), 1 << 20))
            except socket.timeout:
                raise RecvTimeout(f"recv timed out after {timeout}s") from None
            except OSError as exc:
                self.dead = True
                raise PeerDisconnected(f"connection failed: {exc}") from None
            if not chunk:
                self.dead = True
                raise PeerDisconnected("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def send_frame(self, tag: int, payload: bytes) -> None:
        if self.dead:
            raise PeerDisconnected("connection already marked dead")
        try:
            self.sock.sendall(encode_frame(tag, payload))
        except OSError as exc:
            self.dead = True
            raise PeerDisconnected(f"send failed: {exc}") from None

    def recv_frame(self, timeout: float = DEFAULT_TIMEOUT) -> tuple[int, bytes]:
        if self.dead:
            raise PeerDisconnected("connection already marked dead")
        header = self._recv_exact(HEADER_SIZE, timeout)
        try:
            tag, length = decode_header(header)
        except WireProtocolError:
            self.dead = True
            raise
        payload = self._recv_exact(length, timeout) if length else b""
        return tag, payload


class TcpEndpoint:
    """Full-mesh peer handle with the same surface as SimEndpoint."""

    def __init__(self, rank: int, size: int, conns: dict[int, FramedSocket]):
        self.rank = rank
        self.size = size
        self.conns = conns
        self.timeout = DEFAULT_TIMEOUT
        self.n_sends = 0
        self.n_recvs = 0
        self.bytes_sent = 0
        self.bytes_received = 0

    def send(self, dst: int, tag: int, payload: np.ndarray) -> None:
        try:
            conn = self.conns[dst]
        except KeyError:
            raise ValueError(f"no connection to rank {dst}") from None
        data = floats_to_wire(payload)
        try:
            conn.send_frame(tag, data)
        except PeerDisconnected as exc:
            raise PeerDisconnected(str(exc), rank=dst) from None
        self.n_sends += 1
        self.bytes_sent += len(data)

    def recv(self, src: int, tag: int, timeout: float | None = None) -> np.ndarray:
        try:
            conn = self.conns[src]
        except KeyError:
            raise ValueError(f"no connection to rank {src}") from None
        try:
            got_tag, payload = conn.recv_frame(timeout or self.timeout)
        except (PeerDisconnected, RecvTimeout) as exc:
            exc.rank = src
            raise
        if got_tag != tag:
            raise TagMismatch(
                f"rank {self.rank}: expected tag {tag} from rank {src}, got {got_tag}",
                rank=src)
        self.n_recvs += 1
        self.bytes_received += len(payload)
        return wire_to_floats(payload)

    def close(self) -> None:
        for conn in self.conns.values():
            conn.close()


class Coordinator:
    """Collects worker registrations and broadcasts the address table."""

    def __init__(self, host: str, port: int, size: int, timeout: float = DEFAULT_TIMEOUT):
        self.size = size
        self.timeout = timeout
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((host, port))
        self._server.listen(size)
        self.address = self._server.getsockname()
        self._thread: threading.Thread | None = None
        self.error: BaseException | None = None

    def serve(self) -> None:
        """Accept all workers, then send everyone the rank -> address table."""
        conns: dict[int, FramedSocket] = {}
        table: dict[str, tuple[str, int]] = {}
        try:
            self._server.settimeout(self.timeout)
            deadline = time.monotonic() + self.timeout
            while len(conns) < self.size:
                if time.monotonic() > deadline:
                    raise RecvTimeout(
                        f"rendezvous timed out with {len(conns)}/{self.size} workers")
                try:
                    sock, _ = self._server.accept()
                except socket.timeout:
                    raise RecvTimeout(
                        f"rendezvous timed out with {len(conns)}/{self.size} workers"
                    ) from None
                fs = FramedSocket(sock)
                tag, payload = fs.recv_frame(self.timeout)
                if tag != TAG_REGISTER:
                    raise TagMismatch(f"coordinator expected registration, got tag {tag}")
                reg = json.loads(payload.decode())
                if not 0 <= int(reg["rank"]) < self.size:
                    raise ValueError(f"registration for out-of-range rank {reg['rank']}")
                conns[int(reg["rank"])] = fs
                table[str(reg["rank"])] = (reg["host"], int(reg["port"]))
            payload = json.dumps(table).encode()
            for fs in conns.values():
                fs.send_frame(TAG_TABLE, payload)
        except BaseException as exc:  # noqa: BLE001 - surfaced to the launcher
            self.error = exc
            raise
        finally:
            for fs in conns.values():
                fs.close()
            self._server.close()

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        try:
            self.serve()
        except BaseException as exc:  # noqa: BLE001
            self.error = exc

    def join(self) -> None:
        if self._thread is not None:
            self._thread.join()


def _connect(address: tuple[str, int], timeout: float, what: str) -> socket.socket:
    try:
        return socket.create_connection(address, timeout=timeout)
    except socket.timeout:
        raise RecvTimeout(f"connecting to {what} at {address[0]}:{address[1]} "
                          f"timed out") from None
    except OSError as exc:
        raise PeerDisconnected(f"cannot reach {what} at "
                               f"{address[0]}:{address[1]}: {exc}") from None


def rendezvous(coordinator: tuple[str, int], rank: int, size: int,
               listen_host: str = "127.0.0.1",
               timeout: float = DEFAULT_TIMEOUT) -> TcpEndpoint:
    """Join the group and build the full mesh; returns a ready endpoint."""
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((listen_host, 0))
    listener.listen(size)
    listen_addr = listener.getsockname()

    coord = FramedSocket(_connect(coordinator, timeout, "coordinator"))
    coord.send_frame(TAG_REGISTER, json.dumps(
        {"rank": rank, "host": listen_addr[0], "port": listen_addr[1]}).encode())
    tag, payload = coord.recv_frame(timeout)
    if tag != TAG_TABLE:
        raise TagMismatch(f"expected address table, got tag {tag}")
    table = {int(r): (h, p) for r, (h, p) in json.loads(payload.decode()).items()}
    coord.close()

    conns: dict[int, FramedSocket] = {}
    # dial lower ranks, announce who we are
    for peer in range(rank):
        host, port = table[peer]
        fs = FramedSocket(_connect((host, port), timeout, f"rank {peer}"))
        fs.send_frame(TAG_HELLO, json.dumps({"rank": rank}).encode())
        conns[peer] = fs
    # accept higher ranks
    listener.settimeout(timeout)
    try:
        for _ in range(size - 1 - rank):
            try:
                peer_sock, _ = listener.accept()
            except socket.timeout:
                raise RecvTimeout(f"rank {rank}: timed out waiting for peers") from None
            fs = FramedSocket(peer_sock)
            hello_tag, hello = fs.recv_frame(timeout)
            if hello_tag != TAG_HELLO:
                raise TagMismatch(f"expected hello, got tag {hello_tag}")
            conns[int(json.loads(hello.decode())["rank"])] = fs
    finally:
        listener.close()
    return TcpEndpoint(rank, size, conns)


def tcp_probe_server(host: str, port: int, sessions: int = 1,
                     timeout: float = DEFAULT_TIMEOUT
                     ) -> tuple[tuple[str, int], threading.Thread]:
    """Serve throughput-probe sessions on a background thread.

    Counts payload bytes until the END frame, then acknowledges the total.
    Returns the bound address and the serving thread (join it to block until
    all sessions finish).
    """
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(1)
    addr = server.getsockname()

    def run():
        try:
            for _ in range(sessions):
                server.settimeout(timeout)
                sock, _ = server.accept()
                fs = FramedSocket(sock)
                done = False
                while not done:
                    received = 0
                    while True:
                        tag, payload = fs.recv_frame(timeout)
                        if tag == TAG_PROBE_END:
                            done = payload == b"done"
                            break
                        if tag != TAG_PROBE_DATA:
                            raise TagMismatch(f"probe server got tag {tag}")
                        received += len(payload)
                    fs.send_frame(TAG_PROBE_ACK, str(received).encode())
                fs.close()
        except (PeerDisconnected, RecvTimeout, TagMismatch, OSError):
            pass
        finally:
            server.close()

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return addr, thread


def tcp_probe_client(server: tuple[str, int], seconds: float, repeat: int = 10,
                     chunk_bytes: int = 1 << 20,
                     timeout: float = DEFAULT_TIMEOUT) -> list[float]:
    """Stream data to a probe server; returns Mbps per repeat."""
    fs = FramedSocket(_connect(server, timeout, "probe server"))
    chunk = b"\x00" * chunk_bytes
    rates = []
    try:
        for i in range(repeat):
            t0 = time.perf_counter()
            deadline = t0 + seconds
            while time.perf_counter() < deadline:
                fs.send_frame(TAG_PROBE_DATA, chunk)
            last = i == repeat - 1
            fs.send_frame(TAG_PROBE_END, b"done" if last else b"more")
            tag, payload = fs.recv_frame(timeout)
            elapsed = time.perf_counter() - t0
            if tag != TAG_PROBE_ACK:
                raise TagMismatch(f"probe client got tag {tag}")
            acked = int(payload.decode())
            rates.append(acked * 8.0 / (1e6 * elapsed))
    finally:
        fs.close()
    return rates
