"""Newline-JSON calculator server over stdio.

Protocol: one handshake line `{"protocol": "periopt-calc", "version": 1}`,
then one JSON response per JSON request line. Requests carry an integer id,
a 9-number row-major lattice, a symbol list, and 3N positions; responses
echo the id with either energy/forces or an error string. A malformed line
yields an error response with id -1; EOF ends the process cleanly.
"""

import argparse
import json
import sys

from . import lj

PROTOCOL_NAME = "periopt-calc"
PROTOCOL_VERSION = 1


class LjBackend:
    def evaluate(self, lattice, symbols, positions):
        return lj.evaluate(lattice, symbols, positions)


class ChgnetBackend:
    """Bridges CHGNet; import kept lazy so `--backend lj` has no ML deps."""

    def __init__(self):
        from chgnet.model import CHGNet
        from pymatgen.core import Lattice, Structure

        self._Lattice = Lattice
        self._Structure = Structure
        self._model = CHGNet.load()

    def evaluate(self, lattice, symbols, positions):
        rows = [lattice[0:3], lattice[3:6], lattice[6:9]]
        coords = [positions[3 * i:3 * i + 3] for i in range(len(symbols))]
        structure = self._Structure(
            self._Lattice(rows), symbols, coords,
            coords_are_cartesian=True,
        )
        out = self._model.predict_structure(structure)
        energy = float(out["e"]) * len(symbols)  # model returns eV/atom
        forces = [float(c) for row in out["f"] for c in row]
        return energy, forces


def make_backend(name):
    if name == "lj":
        return LjBackend()
    if name == "chgnet":
        try:
            return ChgnetBackend()
        except ImportError as exc:
            print(f"chgnet backend unavailable: {exc}", file=sys.stderr)
            raise SystemExit(2)
    raise SystemExit(f"unknown backend {name!r}")


def handle_line(backend, line):
    """One request line -> one response dict."""
    try:
        request = json.loads(line)
        if not isinstance(request, dict):
            raise ValueError("request must be a JSON object")
        req_id = request["id"]
    except (ValueError, KeyError) as exc:
        return {"id": -1, "error": f"malformed request: {exc}"}
    try:
        energy, forces = backend.evaluate(
            request["lattice"], request["symbols"], request["positions"]
        )
        return {"id": req_id, "energy": energy, "forces": forces}
    except Exception as exc:
        return {"id": req_id, "error": str(exc)}


def serve(backend, infile, outfile):
    outfile.write(json.dumps(
        {"protocol": PROTOCOL_NAME, "version": PROTOCOL_VERSION}
    ) + "\n")
    outfile.flush()
    for line in infile:
        if not line.strip():
            continue
        outfile.write(json.dumps(handle_line(backend, line)) + "\n")
        outfile.flush()


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Energy/force calculator server (periopt-calc protocol)."
    )
    parser.add_argument("--backend", choices=("lj", "chgnet"), default="lj")
    args = parser.parse_args(argv)
    backend = make_backend(args.backend)
    serve(backend, sys.stdin, sys.stdout)


if __name__ == "__main__":
    main()
