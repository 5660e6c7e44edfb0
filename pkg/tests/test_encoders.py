import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from realdiff.autodiff import Tensor, grad_check_params, ops
from realdiff.encoders import (EncoderParams, ImageRef, encode_image, encode_images, encode_static,
                               load_precomputed_features, write_precomputed_features)
from realdiff.errors import DimensionError, FormatError
from realdiff.gradcheck_suite import EPS


def zeroed(params):
    for t in params.tensors().values():
        t.data[...] = 0.0
    return params


def test_zero_image_zero_biases_gives_zero_embedding():
    p = EncoderParams.init(3, rng=np.random.default_rng(0))
    emb = encode_image(ImageRef(pixels=np.zeros((32, 32))), p)
    assert np.array_equal(emb.data, np.zeros(16))


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_image_embedding_length(seed):
    rng = np.random.default_rng(seed)
    p = EncoderParams.init(3, rng=rng)
    assert encode_image(ImageRef(pixels=rng.random((32, 32))), p).shape == (16,)


def test_different_seeds_give_different_embeddings():
    img = ImageRef(pixels=np.random.default_rng(9).random((32, 32)))
    a = encode_image(img, EncoderParams.init(3, rng=np.random.default_rng(1))).data
    b = encode_image(img, EncoderParams.init(3, rng=np.random.default_rng(2))).data
    assert not np.array_equal(a, b)


def test_wrong_image_size():
    p = EncoderParams.init(3)
    with pytest.raises(DimensionError):
        encode_image(ImageRef(pixels=np.zeros((16, 16))), p)


def test_image_ref_validation():
    with pytest.raises(ValueError):
        ImageRef()
    with pytest.raises(ValueError):
        ImageRef(pixels=np.zeros((2, 2)), features=np.zeros(3))
    with pytest.raises(ValueError):
        ImageRef(pixels=np.full((2, 2), 1.5))


def test_precomputed_features_bypass_conv():
    p = EncoderParams.init(3, precomputed_dim=5, rng=np.random.default_rng(3))
    feats = np.arange(5.0)
    emb = encode_image(ImageRef(features=feats), p)
    assert np.allclose(emb.data, feats @ p.feat_w.data + p.feat_b.data, atol=1e-15)
    with pytest.raises(DimensionError):
        encode_image(ImageRef(features=np.ones(4)), p)
    with pytest.raises(DimensionError):
        encode_image(ImageRef(features=np.ones(5)), EncoderParams.init(3))


def test_batched_images_match_single():
    rng = np.random.default_rng(4)
    p = EncoderParams.init(3, rng=rng)
    imgs = [ImageRef(pixels=rng.random((32, 32))) for _ in range(3)]
    batch = encode_images(imgs, p).data
    for i, img in enumerate(imgs):
        assert np.max(np.abs(batch[i] - encode_image(img, p).data)) < 1e-14
    with pytest.raises(DimensionError):
        encode_images([imgs[0], ImageRef(features=np.ones(2))], p)


def test_static_zero_params_and_shape():
    p = EncoderParams.init(3, rng=np.random.default_rng(5))
    assert encode_static(np.array([0.2, 1.0, 2.0]), p).shape == (8,)
    assert np.array_equal(encode_static(np.array([0.2, 1.0, 2.0]), zeroed(p)).data, np.zeros(8))


def test_static_feature_count_mismatch():
    with pytest.raises(DimensionError):
        encode_static(np.ones(4), EncoderParams.init(3))


def test_static_gradient():
    rng = np.random.default_rng(6)
    p = EncoderParams.init(3, rng=rng)
    for _, b in p.static:
        b.data[...] = rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=(4, 3))
    target = rng.normal(size=(4, 8))
    params = [t for k, t in p.tensors().items() if ".static." in k]
    assert grad_check_params(lambda: ops.mse(encode_static(x, p), target), params, EPS) < 1e-5


def test_image_gradient_through_conv_stack():
    rng = np.random.default_rng(7)
    p = EncoderParams.init(3, image_size=8, rng=rng)
    for _, b in p.conv:
        b.data[...] = rng.normal(scale=0.1, size=b.shape)
    img = ImageRef(pixels=rng.random((8, 8)))
    target = rng.normal(size=16)
    params = [t for k, t in p.tensors().items() if ".static." not in k]
    assert grad_check_params(lambda: ops.mse(encode_image(img, p), target), params, EPS) < 1e-5


def test_embeddings_are_deterministic():
    rng = np.random.default_rng(8)
    p = EncoderParams.init(3, rng=rng)
    img = ImageRef(pixels=rng.random((32, 32)))
    assert np.array_equal(encode_image(img, p).data, encode_image(img, p).data)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_static_permutation_changes_embedding(seed):
    rng = np.random.default_rng(seed)
    p = EncoderParams.init(3, rng=rng)
    for _, b in p.static:
        b.data[...] = rng.normal(size=b.shape)
    x = np.array([0.5, -1.0, 2.0]) + rng.normal(scale=0.1, size=3)
    assert not np.array_equal(encode_static(x, p).data, encode_static(x[[2, 0, 1]], p).data)


# --------------------------------------------------------- feature files

def test_empty_feature_file(tmp_path):
    f = tmp_path / "feat.csv"
    f.write_text("")
    assert load_precomputed_features(f) == {}


def test_three_rows_of_sixteen(tmp_path):
    rng = np.random.default_rng(10)
    feats = {f"P{i}": rng.normal(size=16) for i in range(3)}
    write_precomputed_features(tmp_path / "f.csv", feats)
    back = load_precomputed_features(tmp_path / "f.csv")
    assert len(back) == 3 and all(v.shape == (16,) for v in back.values())


@given(st.dictionaries(st.text("ABCDEFG0123456789", min_size=1, max_size=6),
                       st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=3, max_size=3),
                       max_size=5))
@settings(max_examples=50, deadline=None)
def test_feature_round_trip(tmp_path_factory, feats):
    path = tmp_path_factory.mktemp("f") / "f.csv"
    arrays = {k: np.array(v) for k, v in feats.items()}
    write_precomputed_features(path, arrays)
    back = load_precomputed_features(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])


def test_feature_file_errors(tmp_path):
    f = tmp_path / "f.csv"
    f.write_text("patient_id,f0,f1\nA,1,2\nB,1\n")
    with pytest.raises(FormatError, match="row 3"):
        load_precomputed_features(f)
    f.write_text("patient_id,f0\nA,1\nA,2\n")
    with pytest.raises(FormatError, match="duplicate"):
        load_precomputed_features(f)
    f.write_text("id,f0\nA,1\n")
    with pytest.raises(FormatError):
        load_precomputed_features(f)
    with pytest.raises(FormatError):
        write_precomputed_features(f, {"A": np.ones(2), "B": np.ones(3)})


def test_image_tensor_input_accepted_by_static():
    p = EncoderParams.init(3)
    assert encode_static(Tensor(np.ones((2, 3))), p).shape == (2, 8)
