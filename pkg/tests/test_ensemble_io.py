from __future__ import annotations

import numpy as np
import pytest

from gcb_lab.engine import Ensemble
from gcb_lab.ensemble_io import (EnsembleFormatError, read_binary, read_csv, read_ensemble,
                                 write_binary, write_csv, write_ensemble)
from gcb_lab.laws import SampleFile, build_law


def _ens():
    rng = np.random.default_rng(0)
    return Ensemble(rng.normal(size=(25, 3)) * 1e3, 1.25, 99, 1e-3, 25)


def test_binary_round_trip(tmp_path):
    e = _ens()
    p = tmp_path / "e.bin"
    write_binary(e, p)
    r = read_binary(p)
    assert np.array_equal(r.states, e.states)
    assert (r.time, r.dt, r.seed, r.n_paths) == (1.25, 1e-3, 99, 25)
    assert p.stat().st_size == 48 + 25 * 3 * 8


def test_csv_round_trip(tmp_path):
    e = _ens()
    p = tmp_path / "e.csv"
    write_csv(e, p)
    r = read_csv(p)
    assert np.array_equal(r.states, e.states) and r.time == 1.25
    assert p.read_text().splitlines()[0] == "path_id,t,x1,x2,x3"


def test_sniffing_and_dispatch(tmp_path):
    e = _ens()
    for name in ("a.csv", "a.bin"):
        write_ensemble(e, tmp_path / name)
        assert np.array_equal(read_ensemble(tmp_path / name).states, e.states)


def test_corrupt_files(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"GCBENS\x00\x01" + b"\x00" * 10)
    with pytest.raises(EnsembleFormatError):
        read_binary(p)
    write_binary(_ens(), p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(EnsembleFormatError, match="payload"):
        read_binary(p)
    q = tmp_path / "bad.csv"
    q.write_text("a,b\n1,2\n")
    with pytest.raises(EnsembleFormatError):
        read_csv(q)


def test_sample_file_law(tmp_path):
    e = _ens()
    write_binary(e, tmp_path / "init.bin")
    law = build_law({"law": "file", "path": str(tmp_path / "init.bin")}, 3)
    assert isinstance(law, SampleFile)
    s = law.sample(0, np.array([0, 26], dtype=np.uint64))
    assert np.array_equal(s, e.states[[0, 1]])
