import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from codemae.container import (
    ContainerError,
    FeatureFile,
    MissingSampleError,
    index_path,
    read_checkpoint,
    write_checkpoint,
    write_features,
)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_features_roundtrip(tmp_path, dtype):
    r = np.random.default_rng(0)
    feats = {f"s{i}": r.standard_normal((4, 6)).astype(dtype) for i in range(5)}
    write_features(tmp_path / "t.cdmf", feats, dtype=dtype)
    ff = FeatureFile.open(tmp_path / "t.cdmf")
    assert (ff.count, ff.num_patches, ff.width) == (5, 4, 6)
    for sid, block in feats.items():
        out = ff.read(sid)
        assert out.dtype == dtype
        np.testing.assert_array_equal(out, block)
    with pytest.raises(MissingSampleError):
        ff.read("nope")


def test_feature_file_corruption(tmp_path):
    path = tmp_path / "t.cdmf"
    write_features(path, {"a": np.zeros((2, 2)), "b": np.ones((2, 2))})
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(ContainerError):
        FeatureFile.open(path).read("b")
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ContainerError):
        FeatureFile.open(path)
    path.write_bytes(raw)
    index_path(path).write_text("a\t28\n")
    with pytest.raises(ContainerError):
        FeatureFile.open(path)


def test_feature_shapes_must_agree(tmp_path):
    with pytest.raises(ContainerError):
        write_features(tmp_path / "x", {"a": np.zeros((2, 2)), "b": np.zeros((3, 2))})


@given(st.dictionaries(st.text("abcxyz._", min_size=1, max_size=8),
                       hnp.arrays(st.sampled_from([np.float32, np.float64]), hnp.array_shapes(min_dims=0, max_dims=3),
                                  elements=st.floats(-1e6, 1e6, width=32)), max_size=4),
       st.dictionaries(st.text("abc_", min_size=1, max_size=5), st.text("xyz 01{}", max_size=10), max_size=3))
@settings(max_examples=25)
def test_checkpoint_roundtrip(tmp_path_factory, tensors, meta):
    path = tmp_path_factory.mktemp("ck") / "c.cdmf"
    write_checkpoint(path, tensors, meta)
    out, m = read_checkpoint(path)
    assert m == meta and list(out) == list(tensors)
    for k, v in tensors.items():
        assert out[k].dtype == v.dtype and out[k].shape == v.shape
        np.testing.assert_array_equal(out[k], v)


def test_checkpoint_truncation(tmp_path):
    path = tmp_path / "c.cdmf"
    write_checkpoint(path, {"w": np.ones((3, 3), np.float32)}, {"step": "1"})
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ContainerError):
        read_checkpoint(path)


def test_unsupported_dtype(tmp_path):
    with pytest.raises(ContainerError):
        write_checkpoint(tmp_path / "c", {"w": np.ones(2, np.int32)})
