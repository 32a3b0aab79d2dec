import numpy as np
import pytest

from cpwlsa.fabric import SystolicConfig
from cpwlsa.report import csv_text, fmt_value, metadata_line, read_csv, write_csv
from cpwlsa.rng import make_rng


def test_streams_are_reproducible_and_independent():
    a = make_rng(7, "x").integers(0, 1 << 30, size=5)
    assert np.array_equal(a, make_rng(7, "x").integers(0, 1 << 30, size=5))
    assert not np.array_equal(a, make_rng(7, "y").integers(0, 1 << 30, size=5))
    assert not np.array_equal(a, make_rng(8, "x").integers(0, 1 << 30, size=5))
    with pytest.raises(ValueError):
        make_rng(-1)


def test_philox_stream_is_pinned():
    # guards against generator changes that would silently alter every dataset
    assert make_rng(0, 0).integers(0, 1000, size=4).tolist() == [34, 11, 611, 241]


def test_float_formatting():
    assert fmt_value(0.1 + 0.2) == "0.3"
    assert fmt_value(1.0) == "1"
    assert fmt_value(7) == "7"
    assert fmt_value("GEMM") == "GEMM"


def test_csv_layout(tmp_path):
    cfg = SystolicConfig()
    meta = metadata_line(cfg, seed=3)
    assert meta.startswith("# tool=cpwlsa version=")
    assert f"config_hash={cfg.config_hash()}" in meta and "output_bus_width=1" in meta and meta.endswith("seed=3")
    text = csv_text(["a", "b"], [[1, 0.5]], meta)
    assert text.splitlines() == [meta, "a,b", "1,0.5"]
    write_csv(tmp_path / "r.csv", ["a", "b"], [[1, 0.5]], meta)
    assert read_csv(tmp_path / "r.csv") == (meta, [{"a": "1", "b": "0.5"}])
