import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from periopt_calc_server.server import (
    LjBackend,
    PROTOCOL_NAME,
    PROTOCOL_VERSION,
    handle_line,
    serve,
)

FIXTURES = sorted((Path(__file__).parent / "fixtures").glob("*.json"))


def run_requests(lines):
    out = io.StringIO()
    serve(LjBackend(), io.StringIO("".join(lines)), out)
    return out.getvalue().splitlines()


def request_line(req_id, case):
    return json.dumps({
        "id": req_id,
        "lattice": case["lattice"],
        "symbols": case["symbols"],
        "positions": case["positions"],
    }) + "\n"


def load(path):
    with open(path) as fh:
        return json.load(fh)


class TestHandshake:
    def test_exact_constant(self):
        lines = run_requests([])
        assert json.loads(lines[0]) == {"protocol": PROTOCOL_NAME,
                                        "version": PROTOCOL_VERSION}
        assert PROTOCOL_NAME == "periopt-calc" and PROTOCOL_VERSION == 1

    def test_eof_exits_cleanly(self):
        assert len(run_requests([])) == 1


class TestRequestHandling:
    def test_id_echo_three_sequential(self):
        case = load(FIXTURES[0])
        lines = run_requests([request_line(i, case) for i in (5, 6, 7)])
        ids = [json.loads(x)["id"] for x in lines[1:]]
        assert ids == [5, 6, 7]

    def test_energy_matches_fixture(self):
        case = load(FIXTURES[1])
        lines = run_requests([request_line(1, case)])
        response = json.loads(lines[1])
        assert response["energy"] == pytest.approx(case["energy"], abs=1e-6)
        assert len(response["forces"]) == len(case["forces"])

    def test_numeric_roundtrip_is_exact(self):
        # json repr of float64 is shortest-round-trip: parsing it back
        # reproduces the bit pattern
        case = load(FIXTURES[2])
        lines = run_requests([request_line(1, case)])
        response = json.loads(lines[1])
        again = json.loads(json.dumps(response))
        assert again["energy"] == response["energy"]
        assert again["forces"] == response["forces"]

    def test_malformed_json_gets_id_minus_one(self):
        lines = run_requests(["this is { not json\n"])
        response = json.loads(lines[1])
        assert response["id"] == -1
        assert "malformed" in response["error"]

    def test_missing_id_gets_id_minus_one(self):
        lines = run_requests([json.dumps({"lattice": []}) + "\n"])
        assert json.loads(lines[1])["id"] == -1

    def test_evaluation_error_keeps_id_and_continues(self):
        bad = {
            "id": 3,
            "lattice": [20.0, 0, 0, 0, 20.0, 0, 0, 0, 20.0],
            "symbols": ["Ar", "Ar"],
            "positions": [0, 0, 0, 1e-9, 0, 0],
        }
        good = load(FIXTURES[0])
        lines = run_requests([json.dumps(bad) + "\n", request_line(4, good)])
        first = json.loads(lines[1])
        second = json.loads(lines[2])
        assert first["id"] == 3 and "overlap" in first["error"]
        assert second["id"] == 4 and "energy" in second

    def test_blank_lines_skipped(self):
        case = load(FIXTURES[0])
        lines = run_requests(["\n", request_line(1, case), "  \n"])
        assert len(lines) == 2


class TestHandleLine:
    def test_non_object_request(self):
        response = handle_line(LjBackend(), "[1,2,3]")
        assert response["id"] == -1


class TestSubprocess:
    def test_end_to_end_over_pipes(self):
        case = load(FIXTURES[0])
        proc = subprocess.Popen(
            [sys.executable, "-m", "periopt_calc_server.server",
             "--backend", "lj"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
        )
        try:
            handshake = json.loads(proc.stdout.readline())
            assert handshake["protocol"] == "periopt-calc"
            proc.stdin.write(request_line(42, case))
            proc.stdin.flush()
            response = json.loads(proc.stdout.readline())
            assert response["id"] == 42
            assert response["energy"] == pytest.approx(case["energy"],
                                                       abs=1e-6)
            proc.stdin.close()
            assert proc.wait(timeout=10) == 0
        finally:
            proc.kill()
