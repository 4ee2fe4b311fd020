import importlib.util
from pathlib import Path

import pytest

from dialsum.autodiff import kernels

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_gru.py"


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernel not built")
def test_benchmark_runs(capsys):
    spec = importlib.util.spec_from_file_location("bench_gru", BENCH)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    assert bench.main(["--repeat", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 + len(bench.SIZES)
    assert all(float(line.split()[-1]) < 1e-12 for line in lines[1:])
