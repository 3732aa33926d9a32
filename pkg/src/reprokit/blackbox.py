"""Black-box model access over a child process's standard streams.

Protocol (text, one frame per request):

    server greeting   READY <d_S> <K_S>
    query             Q <n> <d_S>      followed by n lines of d_S decimals
    query reply       n lines of K_S probabilities
    stats             S                -> "SERVED <requests> <samples>"
    quit              X                (or EOF)
    server error      E <message>

Floats are written with ``repr`` so values survive the round trip exactly.
"""

from __future__ import annotations

import argparse
import subprocess
import sys

import numpy as np

from .errors import ProtocolError, ShapeError, TransportError
from .model_core import forward, load_checkpoint

PROB_TOL = 1e-6


def _fmt_row(row) -> str:
    return " ".join(repr(v) for v in row)


def serve(model, stdin=None, stdout=None) -> int:
    """Answer queries for ``model`` until EOF or ``X``. Returns the number of requests served."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    requests = samples = 0
    stdout.write(f"READY {model.input_dim} {model.num_classes}\n")
    stdout.flush()
    while True:
        line = stdin.readline()
        if not line or line.strip() == "X":
            break
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "S":
            stdout.write(f"SERVED {requests} {samples}\n")
        elif parts[0] == "Q" and len(parts) == 3:
            n, d = int(parts[1]), int(parts[2])
            rows = [stdin.readline() for _ in range(n)]
            try:
                x = np.array([[float(v) for v in r.split()] for r in rows]).reshape(n, d)
                probs = forward(model, x)
            except Exception as exc:  # reported to the client, never fatal to the server
                stdout.write(f"E {type(exc).__name__}: {exc}\n")
            else:
                stdout.write("".join(_fmt_row(r) + "\n" for r in probs.tolist()))
                requests += 1
                samples += n
        else:
            stdout.write(f"E unknown request {line.strip()[:40]!r}\n")
        stdout.flush()
    return requests


class BlackboxEndpoint:
    """Client for a model served by a child process.

    The instance is a probability oracle: calling it with a batch returns the
    model outputs and updates ``calls`` (requests) and ``queries`` (samples).
    """

    def __init__(self, command, input_dim: int, num_classes: int):
        self.command = list(command)
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.calls = 0
        self.queries = 0
        self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                      text=True, bufsize=1)
        greeting = self._readline()
        parts = greeting.split()
        if len(parts) != 3 or parts[0] != "READY":
            raise ProtocolError(f"unexpected greeting {greeting.strip()!r}")
        if (int(parts[1]), int(parts[2])) != (self.input_dim, self.num_classes):
            raise ProtocolError(
                f"endpoint serves d_S={parts[1]}, K_S={parts[2]}; declared {self.input_dim}, {self.num_classes}")

    @classmethod
    def for_checkpoint(cls, path, input_dim: int, num_classes: int, python=sys.executable):
        return cls([python, "-m", "reprokit.blackbox", str(path)], input_dim, num_classes)

    def _readline(self) -> str:
        line = self._proc.stdout.readline()
        if not line:
            code = self._proc.poll()
            raise TransportError(f"endpoint closed its output (exit code {code})")
        return line

    def _send(self, text: str):
        try:
            self._proc.stdin.write(text)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"endpoint pipe closed: {exc}") from exc

    def __call__(self, batch) -> np.ndarray:
        return self.query(batch)

    def query(self, batch) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected batch of shape (n, {self.input_dim}), got {x.shape}")
        n = x.shape[0]
        if n == 0:
            return np.zeros((0, self.num_classes))
        self._send(f"Q {n} {self.input_dim}\n" + "".join(_fmt_row(r) + "\n" for r in x.tolist()))
        out = np.empty((n, self.num_classes))
        for i in range(n):
            try:
                line = self._readline()
            except TransportError as exc:
                raise TransportError(f"{exc}; {i} of {n} rows answered", samples_sent=n,
                                     samples_answered=i) from None
            if line.startswith("E "):
                raise ProtocolError(f"endpoint error on response line {i + 1}: {line[2:].strip()}")
            try:
                row = [float(v) for v in line.split()]
            except ValueError:
                raise ProtocolError(f"malformed response line {i + 1}: {line.strip()[:60]!r}") from None
            if len(row) != self.num_classes:
                raise ProtocolError(
                    f"response line {i + 1} has {len(row)} values, expected {self.num_classes}")
            row = np.array(row)
            if (not np.all(np.isfinite(row)) or np.any(row < 0) or np.any(row > 1)
                    or abs(row.sum() - 1.0) > PROB_TOL):
                raise ProtocolError(f"response line {i + 1} is not a probability vector")
            out[i] = row
        self.calls += 1
        self.queries += n
        return out

    def served(self) -> tuple:
        """``(requests, samples)`` as counted by the endpoint itself."""
        self._send("S\n")
        parts = self._readline().split()
        if len(parts) != 3 or parts[0] != "SERVED":
            raise ProtocolError(f"bad stats reply {' '.join(parts)!r}")
        return int(parts[1]), int(parts[2])

    def close(self):
        if self._proc.poll() is None:
            try:
                self._send("X\n")
                self._proc.stdin.close()
            except TransportError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def blackbox_query(ep: BlackboxEndpoint, batch) -> np.ndarray:
    return ep.query(batch)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Serve a checkpoint as a black-box probability oracle.")
    parser.add_argument("checkpoint")
    args = parser.parse_args(argv)
    serve(load_checkpoint(args.checkpoint))


if __name__ == "__main__":
    main()
