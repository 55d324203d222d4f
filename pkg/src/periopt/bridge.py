"""Client for external energy/force servers over newline-delimited JSON.

The server is a child process. It must emit one handshake line
`{"protocol": "periopt-calc", "version": 1}` on startup; afterwards the
client writes one request line per evaluation and reads exactly one
response line. Units are eV and angstroms throughout.
"""

from __future__ import annotations

import json
import os
import selectors
import subprocess

import numpy as np

from .crystal import Structure
from .potential import CalcResult, Calculator

__all__ = [
    "PROTOCOL_NAME",
    "PROTOCOL_VERSION",
    "BridgeError",
    "HandshakeError",
    "ProtocolError",
    "BridgeHandle",
    "BridgeCalculator",
    "spawn_bridge",
]

PROTOCOL_NAME = "periopt-calc"
PROTOCOL_VERSION = 1


class BridgeError(RuntimeError):
    pass


class HandshakeError(BridgeError):
    pass


class ProtocolError(BridgeError):
    pass


class _LineReader:
    """Byte-level line reader with a deadline, for a child's stdout pipe."""

    def __init__(self, fileobj):
        self._file = fileobj
        self._buf = b""
        self._sel = selectors.DefaultSelector()
        self._sel.register(fileobj, selectors.EVENT_READ)

    def readline(self, timeout: float) -> str:
        import time

        deadline = time.monotonic() + timeout
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BridgeError(f"timed out after {timeout} s waiting for server")
            if not self._sel.select(remaining):
                continue
            chunk = os.read(self._file.fileno(), 65536)
            if not chunk:
                raise BridgeError("server closed the stream")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode()

    def close(self):
        self._sel.close()


class BridgeHandle:
    """One child process serving evaluations, one request in flight at a time."""

    def __init__(self, command: list, timeout: float = 30.0):
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise BridgeError(f"failed to spawn {command!r}: {exc}") from exc
        self._reader = _LineReader(self._proc.stdout)
        self._next_id = 1
        try:
            line = self._reader.readline(timeout)
            hello = json.loads(line)
        except BridgeError as exc:
            self.close()
            raise HandshakeError(f"no handshake from server: {exc}") from exc
        except json.JSONDecodeError as exc:
            self.close()
            raise HandshakeError(f"malformed handshake line: {line!r}") from exc
        if hello.get("protocol") != PROTOCOL_NAME:
            self.close()
            raise HandshakeError(f"unexpected protocol {hello.get('protocol')!r}")
        if hello.get("version") != PROTOCOL_VERSION:
            self.close()
            raise HandshakeError(
                f"protocol version mismatch: server {hello.get('version')}, "
                f"client {PROTOCOL_VERSION}"
            )

    def evaluate(self, s: Structure) -> tuple:
        """Returns (energy, forces) for the structure, via one request line."""
        req_id = self._next_id
        self._next_id += 1
        request = {
            "id": req_id,
            "lattice": s.lattice.matrix.ravel().tolist(),
            "symbols": s.symbols,
            "positions": s.positions.ravel().tolist(),
        }
        try:
            self._proc.stdin.write((json.dumps(request) + "\n").encode())
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"broken pipe writing to server: {exc}") from exc
        line = self._reader.readline(self.timeout)
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line: {line!r}") from exc
        if response.get("id") != req_id:
            raise ProtocolError(
                f"response id {response.get('id')} does not match request id {req_id}"
            )
        if "error" in response:
            raise BridgeError(f"server error: {response['error']}")
        if "energy" not in response or "forces" not in response:
            raise ProtocolError(f"response missing energy/forces: {line!r}")
        forces = np.asarray(response["forces"], dtype=float)
        if forces.size != 3 * len(s):
            raise ProtocolError(
                f"expected {3 * len(s)} force components, got {forces.size}"
            )
        return float(response["energy"]), forces.reshape(-1, 3)

    def close(self):
        self._reader.close()
        if self._proc.stdin:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def spawn_bridge(command: list, timeout: float = 30.0) -> BridgeHandle:
    return BridgeHandle(command, timeout=timeout)


class BridgeCalculator(Calculator):
    """Calculator backed by a bridge handle; counts calls like any calculator."""

    def __init__(self, handle: BridgeHandle):
        super().__init__()
        self.handle = handle

    def evaluate(self, s: Structure) -> CalcResult:
        energy, forces = self.handle.evaluate(s)
        self.stats.bump(1)
        return CalcResult(energy=energy, forces=forces, call_count_delta=1)

    def close(self):
        self.handle.close()
