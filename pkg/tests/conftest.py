import pytest

from ppelm.datasets import BENCHMARK_SHAPES, generate_synthetic


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    """Benchmark-shaped synthetic datasets, generated once per session."""
    out = tmp_path_factory.mktemp("data")
    for name in BENCHMARK_SHAPES:
        generate_synthetic(name, out / f"{name}.libsvm")
    return out
