import io
import sys
import textwrap

import numpy as np
import pytest

from reprokit.blackbox import BlackboxEndpoint, blackbox_query, serve
from reprokit.errors import ProtocolError, ShapeError, TransportError
from reprokit.model_core import forward, save_checkpoint


def fake_server(tmp_path, body, d=3, k=2):
    """Child process that greets, reads one query and then runs ``body``."""
    script = tmp_path / "server.py"
    script.write_text(textwrap.dedent(f"""
        import sys
        print("READY {d} {k}", flush=True)
        head = sys.stdin.readline().split()
        rows = [sys.stdin.readline() for _ in range(int(head[1]))]
    """) + textwrap.dedent(body))
    return [sys.executable, str(script)]


@pytest.fixture
def endpoint(small_model, tmp_path):
    path = tmp_path / "m.rpk"
    save_checkpoint(small_model, path)
    with BlackboxEndpoint.for_checkpoint(path, 8, 5) as ep:
        yield ep


class TestServe:
    def test_in_memory_session(self, small_model):
        stdin = io.StringIO("Q 2 8\n" + "0 " * 8 + "\n" + "0.5 " * 8 + "\nS\nX\n")
        stdout = io.StringIO()
        assert serve(small_model, stdin, stdout) == 1
        lines = stdout.getvalue().splitlines()
        assert lines[0] == "READY 8 5"
        got = np.array([[float(v) for v in line.split()] for line in lines[1:3]])
        np.testing.assert_array_equal(got, forward(small_model, np.array([[0.0] * 8, [0.5] * 8])))
        assert lines[3] == "SERVED 1 2"

    def test_bad_request_reports_error(self, small_model):
        stdout = io.StringIO()
        serve(small_model, io.StringIO("Q 1 3\n1 2 3\nHELLO\n"), stdout)
        lines = stdout.getvalue().splitlines()
        assert lines[1].startswith("E ") and lines[2].startswith("E unknown")


class TestEndpoint:
    def test_transparency(self, endpoint, small_model, rng):
        x = rng.uniform(-1, 1, size=(50, 8))
        np.testing.assert_allclose(blackbox_query(endpoint, x), forward(small_model, x), rtol=0, atol=1e-9)

    def test_exact_float_round_trip(self, endpoint, small_model, rng):
        x = rng.normal(size=(20, 8)) * 3
        assert endpoint(x).tobytes() == forward(small_model, x).tobytes()

    def test_accounting(self, endpoint, rng):
        for n in (3, 1, 7):
            endpoint(rng.normal(size=(n, 8)))
        assert (endpoint.calls, endpoint.queries) == (3, 11)
        assert endpoint.served() == (3, 11)

    def test_empty_batch(self, endpoint):
        out = endpoint(np.zeros((0, 8)))
        assert out.shape == (0, 5)
        assert (endpoint.calls, endpoint.queries) == (0, 0)
        assert endpoint.served() == (0, 0)

    def test_wrong_width(self, endpoint):
        with pytest.raises(ShapeError):
            endpoint(np.zeros((2, 7)))

    def test_declared_dims_checked(self, small_model, tmp_path):
        path = tmp_path / "m.rpk"
        save_checkpoint(small_model, path)
        with pytest.raises(ProtocolError, match="declared"):
            BlackboxEndpoint.for_checkpoint(path, 8, 4)

    def test_malformed_line(self, tmp_path):
        cmd = fake_server(tmp_path, 'print("0.5 0.5"); print("0.5 oops", flush=True)\n')
        with BlackboxEndpoint(cmd, 3, 2) as ep:
            with pytest.raises(ProtocolError, match="line 2"):
                ep(np.zeros((2, 3)))
            assert ep.queries == 0

    def test_not_a_probability_vector(self, tmp_path):
        cmd = fake_server(tmp_path, 'print("0.7 0.7", flush=True)\n')
        with BlackboxEndpoint(cmd, 3, 2) as ep:
            with pytest.raises(ProtocolError, match="probability"):
                ep(np.zeros((1, 3)))

    def test_wrong_arity(self, tmp_path):
        cmd = fake_server(tmp_path, 'print("0.2 0.3 0.5", flush=True)\n')
        with BlackboxEndpoint(cmd, 3, 2) as ep:
            with pytest.raises(ProtocolError, match="3 values"):
                ep(np.zeros((1, 3)))

    def test_crash_mid_batch(self, tmp_path):
        cmd = fake_server(tmp_path, 'print("0.5 0.5", flush=True)\nsys.exit(1)\n')
        with BlackboxEndpoint(cmd, 3, 2) as ep:
            with pytest.raises(TransportError) as err:
                ep(np.zeros((4, 3)))
        assert (err.value.samples_sent, err.value.samples_answered) == (4, 1)
        assert ep.queries == 0

    def test_bad_greeting(self, tmp_path):
        script = tmp_path / "s.py"
        script.write_text('print("HELLO", flush=True)\n')
        with pytest.raises(ProtocolError, match="greeting"):
            BlackboxEndpoint([sys.executable, str(script)], 3, 2)
