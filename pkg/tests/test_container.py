import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uno3d.container import (
    MAGIC,
    ContainerError,
    Dataset,
    DatasetWriter,
    derive_seed,
    read_header,
    read_tensor,
    write_tensor,
)


def test_hundred_random_tensors_roundtrip_bitwise(tmp_path, rng):
    for i in range(100):
        shape = tuple(rng.integers(0, 6, size=rng.integers(0, 5)))
        dtype = "f32" if i % 2 else "f64"
        a = rng.normal(size=shape).astype(np.float32 if dtype == "f32" else np.float64)
        if a.size:
            a.flat[0] = [np.inf, -0.0, np.nan, 1e-310][i % 4] if dtype == "f64" else a.flat[0]
        p = write_tensor(tmp_path / f"t{i}.nopd", a, dtype)
        b = read_tensor(p)
        assert b.dtype == a.dtype and b.shape == a.shape
        assert a.tobytes() == b.tobytes()


@given(st.lists(st.floats(allow_nan=False, width=32), max_size=40))
def test_f32_roundtrip_property(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("h") / "x.nopd"
    a = np.array(values, dtype=np.float32)
    write_tensor(p, a, "f32")
    assert read_tensor(p).tobytes() == a.tobytes()


def test_header_layout(tmp_path):
    p = write_tensor(tmp_path / "x.nopd", np.zeros((2, 3)), "f64")
    raw = p.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack("<HBB", raw[4:8]) == (1, 2, 2)
    assert struct.unpack("<2Q", raw[8:24]) == (2, 3)
    assert len(raw) == 24 + 6 * 8
    assert read_header(p) == {"dtype": "f64", "shape": [2, 3], "version": 1}


def test_corrupt_files_are_rejected(tmp_path):
    p = write_tensor(tmp_path / "x.nopd", np.ones(4), "f32")
    raw = p.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "version").write_bytes(raw[:4] + struct.pack("<H", 9) + raw[6:])
    (tmp_path / "short").write_bytes(raw[:-2])
    (tmp_path / "head").write_bytes(raw[:5])
    for name, msg in [("magic", "magic"), ("version", "version"), ("short", "bytes"), ("head", "truncated")]:
        with pytest.raises(ContainerError, match=msg):
            read_tensor(tmp_path / name)


def test_bad_dtype_and_complex(tmp_path):
    with pytest.raises(ContainerError):
        write_tensor(tmp_path / "x", np.ones(2), "i32")
    with pytest.raises(ContainerError):
        write_tensor(tmp_path / "x", np.ones(2, complex))


def test_dataset_manifest_and_verify(tmp_path):
    w = DatasetWriter(tmp_path / "ds", kind="geology", root_seed=5, configs={"a": 1}, units={"vs": "m/s"})
    for i in (1, 0):
        w.add_sample(i, {"vs": w.write(f"s{i}.nopd", np.full((2, 2), float(i)))}, seed=derive_seed(5, i))
    w.add_failure(3, "boom")
    w.close()
    ds = Dataset(tmp_path / "ds")
    assert ds.kind == "geology" and len(ds) == 2 and ds.configs == {"a": 1}
    assert [s["index"] for s in ds.samples] == [0, 1]
    np.testing.assert_array_equal(ds.stack("vs")[:, 0, 0], [0.0, 1.0])
    assert ds.manifest["failures"][0]["reason"] == "boom"

    (tmp_path / "ds" / "s1.nopd").unlink()
    with pytest.raises(ContainerError, match="missing"):
        Dataset(tmp_path / "ds")
    man = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    write_tensor(tmp_path / "ds" / "s1.nopd", np.zeros(3))
    with pytest.raises(ContainerError, match="disagrees"):
        Dataset(tmp_path / "ds")
    man["count"] = 7
    (tmp_path / "ds" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ContainerError, match="count"):
        Dataset(tmp_path / "ds", verify=True)


def test_missing_dataset(tmp_path):
    with pytest.raises(ContainerError):
        Dataset(tmp_path / "nope")
    (tmp_path / "empty").mkdir()
    with pytest.raises(ContainerError, match="manifest"):
        Dataset(tmp_path / "empty")


def test_derive_seed():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    seeds = {derive_seed(42, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(1, 0) != derive_seed(2, 0)
    assert 0 <= derive_seed(2 ** 64 - 1, 3) < 2 ** 64
