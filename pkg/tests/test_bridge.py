import sys
from pathlib import Path

import numpy as np
import pytest

from periopt.bridge import (
    BridgeCalculator,
    BridgeError,
    HandshakeError,
    ProtocolError,
    spawn_bridge,
)
from periopt.crystal import random_structure
from periopt.potential import LennardJonesCalculator

SERVER = [sys.executable, str(Path(__file__).parent / "lj_server.py")]


def test_handshake_ok():
    with spawn_bridge(SERVER, timeout=20) as handle:
        assert handle is not None


def test_spawn_failure():
    with pytest.raises(BridgeError):
        spawn_bridge(["/nonexistent/binary-xyz"])


def test_version_mismatch():
    with pytest.raises(HandshakeError, match="version"):
        spawn_bridge(SERVER + ["wrong-version"], timeout=20)


def test_wrong_id_is_protocol_error():
    with spawn_bridge(SERVER + ["wrong-id"], timeout=20) as handle:
        s = random_structure({"Ar": 2}, 500.0, 2.0, 0)
        with pytest.raises(ProtocolError, match="id"):
            handle.evaluate(s)


def test_closed_stream_is_bridge_error():
    with spawn_bridge(SERVER + ["close-early"], timeout=20) as handle:
        s = random_structure({"Ar": 2}, 500.0, 2.0, 0)
        with pytest.raises(BridgeError):
            handle.evaluate(s)


def test_remote_matches_in_process():
    local = LennardJonesCalculator()
    with spawn_bridge(SERVER, timeout=20) as handle:
        remote = BridgeCalculator(handle)
        for seed in range(20):
            s = random_structure({"Ar": 4}, 400.0, 1.5, seed)
            a = local.evaluate(s)
            b = remote.evaluate(s)
            assert b.energy == pytest.approx(a.energy, abs=1e-12)
            np.testing.assert_allclose(b.forces, a.forces, atol=1e-12)
        assert remote.stats.total_calls == 20


def test_server_error_propagates():
    with spawn_bridge(SERVER, timeout=20) as handle:
        s = random_structure({"Ar": 2}, 500.0, 2.0, 1)
        bad = s.with_positions(np.array([[0.0, 0, 0], [1e-9, 0, 0]]))
        with pytest.raises(BridgeError, match="overlap"):
            handle.evaluate(bad)
