"""Two interchangeable ways of wiring the master to its workers.

Both carry the same encoded byte payloads, so swapping one for the other cannot
change what a worker sees. The master side is a :class:`Hub`: ``send`` to a
worker id, ``recv`` from a shared inbox fed by one reader thread per worker.
"""

from __future__ import annotations

import logging
import os
import queue
import socket
import subprocess
import sys
import threading

from .messages import Hello, ProtocolError, Shutdown, decode, encode, frame, read_frame
from .worker import Worker, worker_loop

log = logging.getLogger(__name__)

_CLOSED = object()


class QueueConnection:
    """One end of an in-process channel; payloads are bytes, as on a socket."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self.inbox = inbox
        self.outbox = outbox

    def send(self, msg) -> None:
        self.outbox.put(encode(msg))

    def send_raw(self, payload: bytes) -> None:
        self.outbox.put(payload)

    def recv(self, timeout: float | None = None):
        item = self.inbox.get(timeout=timeout)
        if item is _CLOSED:
            return None
        return decode(item)

    def close(self) -> None:
        self.outbox.put(_CLOSED)


def queue_pair() -> tuple[QueueConnection, QueueConnection]:
    a, b = queue.Queue(), queue.Queue()
    return QueueConnection(a, b), QueueConnection(b, a)


class SocketConnection:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._lock = threading.Lock()

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "SocketConnection":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    def send(self, msg) -> None:
        self.send_raw(encode(msg))

    def send_raw(self, payload: bytes) -> None:
        with self._lock:
            self.sock.sendall(frame(payload))

    def recv(self):
        payload = read_frame(self.sock)
        return None if payload is None else decode(payload)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class Hub:
    """Master-side view of a set of worker connections."""

    def __init__(self):
        self.conns: dict[int, object] = {}
        self.inbox: queue.Queue = queue.Queue()
        self._threads: list[threading.Thread] = []
        self._procs: list[subprocess.Popen] = []
        self._closed = False

    @property
    def worker_ids(self) -> list[int]:
        return sorted(self.conns)

    def attach(self, worker_id: int, conn) -> None:
        if worker_id in self.conns:
            raise ValueError(f"worker id {worker_id} registered twice")
        self.conns[worker_id] = conn
        t = threading.Thread(target=self._pump, args=(worker_id, conn), name=f"hub-reader-{worker_id}", daemon=True)
        t.start()

    def _pump(self, worker_id: int, conn) -> None:
        while True:
            try:
                msg = conn.recv()
            except ProtocolError:
                log.exception("malformed message from worker %d skipped", worker_id)
                continue
            except (ConnectionError, OSError):
                msg = None
            if msg is None:
                if not self._closed:
                    log.warning("worker %d disconnected", worker_id)
                return
            self.inbox.put(msg)

    def send(self, worker_id: int, msg) -> None:
        self.conns[worker_id].send(msg)

    def recv(self, timeout: float | None = None):
        """Next message from any worker, or None once ``timeout`` elapses."""
        try:
            return self.inbox.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self, join_timeout: float = 10.0) -> None:
        self._closed = True
        for wid, conn in self.conns.items():
            try:
                conn.send(Shutdown(worker_id=wid))
            except OSError:
                pass
        for t in self._threads:
            t.join(join_timeout)
        for p in self._procs:
            try:
                p.wait(join_timeout)
            except subprocess.TimeoutExpired:
                p.kill()
        for conn in self.conns.values():
            if isinstance(conn, SocketConnection):
                conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def inprocess_hub(num_workers: int, store_root=None) -> Hub:
    """Workers run as threads in this process, talking over byte queues."""
    hub = Hub()
    for wid in range(num_workers):
        master_end, worker_end = queue_pair()
        t = threading.Thread(target=worker_loop, args=(worker_end, Worker(wid, store_root)),
                             name=f"worker-{wid}", daemon=True)
        t.start()
        hub._threads.append(t)
        hub.attach(wid, master_end)
    return hub


def serve_socket_worker(host: str, port: int, worker_id: int, store_root=None, env_name=None) -> None:
    """Connect to a master, announce ourselves and serve until told to stop."""
    conn = SocketConnection.connect(host, port)
    conn.send(Hello(worker_id=worker_id))
    worker_loop(conn, Worker(worker_id, store_root, env_name))


def socket_hub(num_workers: int, store_root=None, spawn: str = "thread", host: str = "127.0.0.1",
               port: int = 0, accept_timeout: float = 60.0) -> Hub:
    """Listen on TCP and wait for ``num_workers`` workers to say hello.

    ``spawn`` is ``"thread"`` (workers in this process), ``"process"``
    (``python -m shaped_es.cli worker`` subprocesses) or ``"none"`` (workers
    are started externally against ``host:port``).
    """
    server = socket.create_server((host, port))
    server.settimeout(accept_timeout)
    bound_port = server.getsockname()[1]
    hub = Hub()
    hub.address = (host, bound_port)
    procs = []
    for wid in range(num_workers):
        if spawn == "thread":
            t = threading.Thread(target=serve_socket_worker, args=(host, bound_port, wid, store_root),
                                 name=f"socket-worker-{wid}", daemon=True)
            t.start()
            hub._threads.append(t)
        elif spawn == "process":
            cmd = [sys.executable, "-m", "shaped_es.cli", "worker", "--connect", f"{host}:{bound_port}",
                   "--worker-id", str(wid)]
            if store_root is not None:
                cmd += ["--store", str(store_root)]
            procs.append(subprocess.Popen(cmd, env=dict(os.environ)))
        elif spawn != "none":
            raise ValueError(f"unknown spawn mode {spawn!r}")
    try:
        pending = set(range(num_workers))
        while pending:
            sock, _ = server.accept()
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = SocketConnection(sock)
            hello = conn.recv()
            if not isinstance(hello, Hello) or hello.worker_id not in pending:
                log.warning("rejecting connection with unexpected greeting %r", hello)
                conn.close()
                continue
            pending.discard(hello.worker_id)
            hub.attach(hello.worker_id, conn)
    except socket.timeout as exc:
        for p in procs:
            p.kill()
        raise TimeoutError(f"only {num_workers - len(pending)} of {num_workers} workers connected") from exc
    finally:
        server.close()
    hub._procs = procs
    return hub
