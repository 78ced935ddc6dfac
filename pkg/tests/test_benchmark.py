import runpy
from pathlib import Path

import pytest

pytest.importorskip("d2ibc._core")


def test_benchmark_runs(capsys):
    mod = runpy.run_path(str(Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"))
    assert mod["main"](["--repeat", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("True") == 3 and "closed loop" in out
