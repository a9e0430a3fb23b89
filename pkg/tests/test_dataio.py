"""Container formats, patch extraction, splits and the scene generator."""

import numpy as np
import pytest

from hdcaps import dataio
from hdcaps.errors import FormatError

HOUSTON_CLASS_SIZES = [1251, 1254, 697, 1244, 1242, 325, 1268, 1244,
                       1252, 1227, 1235, 1233, 469, 428, 660]


def test_dten_round_trip_f32(tmp_path):
    path = str(tmp_path / "a.dten")
    arr = np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32)
    dataio.write_dten(path, arr)
    np.testing.assert_array_equal(dataio.read_dten(path), arr)


def test_dten_round_trip_i32(tmp_path):
    path = str(tmp_path / "a.dten")
    arr = np.arange(-5, 7, dtype=np.int32).reshape(4, 3)
    dataio.write_dten(path, arr)
    out = dataio.read_dten(path)
    assert out.dtype == np.dtype("<i4")
    np.testing.assert_array_equal(out, arr)


def test_dten_float64_saves_as_f32(tmp_path):
    path = str(tmp_path / "a.dten")
    arr = np.array([1.0, np.pi])
    dataio.write_dten(path, arr)
    np.testing.assert_array_equal(dataio.read_dten(path),
                                  arr.astype(np.float32))


def test_dten_2x2_fixture_is_32_bytes(tmp_path):
    path = str(tmp_path / "a.dten")
    dataio.write_dten(path, np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
    blob = open(path, "rb").read()
    # 4 magic + 2 version + 1 dtype + 1 ndim + 2*4 dims + 4*4 payload
    assert len(blob) == 32
    assert blob[:4] == b"DTEN"


def test_dten_bad_magic(tmp_path):
    path = str(tmp_path / "a.dten")
    dataio.write_dten(path, np.zeros(2, dtype=np.float32))
    blob = bytearray(open(path, "rb").read())
    blob[:4] = b"XXXX"
    open(path, "wb").write(bytes(blob))
    with pytest.raises(FormatError) as exc:
        dataio.read_dten(path)
    assert exc.value.offset == 0


def test_dten_bad_version(tmp_path):
    path = str(tmp_path / "a.dten")
    dataio.write_dten(path, np.zeros(2, dtype=np.float32))
    blob = bytearray(open(path, "rb").read())
    blob[4] = 9
    open(path, "wb").write(bytes(blob))
    with pytest.raises(FormatError) as exc:
        dataio.read_dten(path)
    assert exc.value.offset == 4


def test_dten_bad_dtype_code(tmp_path):
    path = str(tmp_path / "a.dten")
    dataio.write_dten(path, np.zeros(2, dtype=np.float32))
    blob = bytearray(open(path, "rb").read())
    blob[6] = 77
    open(path, "wb").write(bytes(blob))
    with pytest.raises(FormatError) as exc:
        dataio.read_dten(path)
    assert exc.value.offset == 6


def test_dten_truncations_and_trailing(tmp_path):
    path = str(tmp_path / "a.dten")
    dataio.write_dten(path, np.zeros((2, 3), dtype=np.float32))
    blob = open(path, "rb").read()
    for cut in (5, 10, len(blob) - 4):
        open(path, "wb").write(blob[:cut])
        with pytest.raises(FormatError) as exc:
            dataio.read_dten(path)
        assert exc.value.offset == cut
    open(path, "wb").write(blob + b"zz")
    with pytest.raises(FormatError) as exc:
        dataio.read_dten(path)
    assert exc.value.offset == len(blob)


def test_features_round_trip(tmp_path):
    path = str(tmp_path / "f.hdcf")
    rng = np.random.default_rng(1)
    rows = rng.integers(0, 100, size=7).astype(np.uint32)
    cols = rng.integers(0, 100, size=7).astype(np.uint32)
    labels = rng.integers(1, 5, size=7).astype(np.int32)
    feats = rng.normal(size=(7, 6)).astype(np.float32)
    dataio.write_features(path, rows, cols, labels, feats)
    r, c, l, f = dataio.read_features(path)
    np.testing.assert_array_equal(r, rows)
    np.testing.assert_array_equal(c, cols)
    np.testing.assert_array_equal(l, labels)
    np.testing.assert_array_equal(f, feats)


def test_features_bad_magic_and_trailing(tmp_path):
    path = str(tmp_path / "f.hdcf")
    dataio.write_features(path, [0], [0], [1], np.zeros((1, 2), np.float32))
    blob = open(path, "rb").read()
    open(path, "wb").write(b"NOPE" + blob[4:])
    with pytest.raises(FormatError) as exc:
        dataio.read_features(path)
    assert exc.value.offset == 0
    open(path, "wb").write(blob + b"x")
    with pytest.raises(FormatError):
        dataio.read_features(path)


def test_scene_round_trip(tmp_path):
    d = str(tmp_path / "scene")
    rng = np.random.default_rng(2)
    hsi = rng.normal(size=(6, 7, 3)).astype(np.float32)
    elev = rng.normal(size=(6, 7)).astype(np.float32)
    labels = rng.integers(0, 3, size=(6, 7)).astype(np.int32)
    dataio.write_scene(d, hsi, elev, labels)
    h2, e2, l2 = dataio.read_scene(d)
    np.testing.assert_array_equal(h2, hsi.astype(np.float64))
    np.testing.assert_array_equal(e2, elev.astype(np.float64))
    np.testing.assert_array_equal(l2, labels)


def test_extract_constant_cube_and_grid():
    hsi = np.full((8, 9, 2), 3.5)
    hsi[:, :, 1] = -1.0
    elev = np.full((8, 9), 2.0)
    labels = np.zeros((8, 9), dtype=np.int32)
    labels[4, 4] = 1
    ps = dataio.extract_patches(hsi, elev, labels, b=5)
    assert len(ps) == 1 and ps.b == 5 and ps.c_spec == 2
    # constant bands standardize to 0 (std floor keeps it finite)
    np.testing.assert_allclose(ps.hsi[0], 0.0, atol=1e-7)
    axis = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    np.testing.assert_allclose(ps.lidar[0, :, 0], np.tile(axis, 5), atol=1e-7)
    np.testing.assert_allclose(ps.lidar[0, :, 1], np.repeat(axis, 5), atol=1e-7)
    center = 25 // 2
    np.testing.assert_allclose(ps.lidar[0, center, :2], 0.0, atol=0)


def test_extract_corner_mirror_reflection():
    # raster value 10*i + j identifies the source pixel of every patch cell
    vals = (10 * np.arange(4)[:, None] + np.arange(4)[None, :]).astype(float)
    hsi = vals[..., None]
    labels = np.zeros((4, 4), dtype=np.int32)
    labels[0, 0] = 1
    ps = dataio.extract_patches(hsi, vals, labels, b=3)
    # standardization over the single labeled pixel subtracts vals[0, 0] = 0
    # and divides by the std floor fallback 1
    rows = [1, 0, 1]
    cols = [1, 0, 1]
    want = np.array([[vals[i, j] for j in cols] for i in rows])
    np.testing.assert_allclose(ps.hsi[0, :, :, 0], want, atol=1e-6)
    # elevation standardizes over the whole scene, not the labeled pixels
    want_z = (want - vals.mean()) / vals.std()
    np.testing.assert_allclose(ps.lidar[0, :, 2].reshape(3, 3), want_z, atol=1e-6)


def test_extract_point_pixel_alignment():
    rng = np.random.default_rng(3)
    hsi = rng.normal(size=(10, 11, 4))
    elev = rng.normal(size=(10, 11))
    labels = (rng.uniform(size=(10, 11)) < 0.4).astype(np.int32)
    labels[5, 5] = 1
    b = 5
    ps = dataio.extract_patches(hsi, elev, labels, b=b)
    axis = np.linspace(-1, 1, b)
    for p in range(b * b):
        np.testing.assert_allclose(ps.lidar[:, p, 0], axis[p % b], atol=1e-7)
        np.testing.assert_allclose(ps.lidar[:, p, 1], axis[p // b], atol=1e-7)


def test_extract_standardization_moments():
    rng = np.random.default_rng(4)
    hsi = rng.normal(2.0, 5.0, size=(20, 21, 3))
    elev = rng.normal(size=(20, 21))
    labels = (rng.uniform(size=(20, 21)) < 0.6).astype(np.int32)
    ps = dataio.extract_patches(hsi, elev, labels, b=3)
    center = (3 * 3) // 2
    spectra = ps.hsi.reshape(len(ps), 9, 3)[:, center, :].astype(np.float64)
    np.testing.assert_allclose(spectra.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(spectra.std(axis=0), 1.0, atol=1e-6)


def test_extract_muufl_shaped_count():
    rng = np.random.default_rng(5)
    labels = np.zeros(325 * 220, dtype=np.int32)
    pick = rng.choice(labels.size, size=53687, replace=False)
    labels[pick] = rng.integers(1, 12, size=53687)
    labels = labels.reshape(325, 220)
    hsi = rng.normal(size=(325, 220, 3)).astype(np.float32)
    elev = rng.normal(size=(325, 220)).astype(np.float32)
    ps = dataio.extract_patches(hsi, elev, labels, b=5)
    assert len(ps) == 53687


def test_extract_rejections():
    hsi = np.zeros((5, 5, 2))
    elev = np.zeros((5, 5))
    labels = np.ones((5, 5), dtype=np.int32)
    with pytest.raises(ValueError):
        dataio.extract_patches(hsi, elev, labels, b=4)
    with pytest.raises(ValueError):
        dataio.extract_patches(hsi, np.zeros((4, 5)), labels, b=3)
    with pytest.raises(ValueError):
        dataio.extract_patches(hsi, elev, np.zeros((5, 5), np.int32), b=3)


def test_split_water_row_fixture():
    labels = np.ones(466, dtype=np.int32)
    train, test = dataio.stratified_split(labels, 0.05,
                                          np.random.default_rng(0))
    assert train.shape[0] == 23 and test.shape[0] == 443


def test_split_houston_totals_fixture():
    labels = np.concatenate([
        np.full(n, cls + 1, dtype=np.int32)
        for cls, n in enumerate(HOUSTON_CLASS_SIZES)
    ])
    assert labels.shape[0] == 15029
    train, test = dataio.stratified_split(labels, 0.05,
                                          np.random.default_rng(0))
    assert train.shape[0] == 745 and test.shape[0] == 14284
    # disjoint cover
    assert np.intersect1d(train, test).size == 0
    assert np.union1d(train, test).size == 15029


def test_split_floor_with_minimum_one():
    labels = np.array([1, 1, 2] * 1, dtype=np.int32)
    train, test = dataio.stratified_split(np.array([1, 1]), 0.5,
                                          np.random.default_rng(1))
    assert train.shape[0] == 1 and test.shape[0] == 1
    # 19 samples at 5% floors to 0 but is clamped to 1
    train, test = dataio.stratified_split(np.full(19, 3), 0.05,
                                          np.random.default_rng(1))
    assert train.shape[0] == 1 and test.shape[0] == 18


def test_split_deterministic_and_stratified():
    rng = np.random.default_rng(6)
    labels = rng.integers(1, 5, size=400).astype(np.int32)
    a = dataio.stratified_split(labels, 0.1, np.random.default_rng(7))
    b = dataio.stratified_split(labels, 0.1, np.random.default_rng(7))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    for cls in np.unique(labels):
        n_cls = (labels == cls).sum()
        got = (labels[a[0]] == cls).sum()
        assert got == max(1, int(np.floor(0.1 * n_cls)))


def test_split_rejects_bad_fraction():
    with pytest.raises(ValueError):
        dataio.stratified_split(np.ones(5, np.int32), 0.0,
                                np.random.default_rng(0))
    with pytest.raises(ValueError):
        dataio.stratified_split(np.ones(5, np.int32), 1.0,
                                np.random.default_rng(0))


def test_gen_synthetic_deterministic():
    a = dataio.gen_synthetic(16, 12, 3, 8, np.random.default_rng(5))
    b = dataio.gen_synthetic(16, 12, 3, 8, np.random.default_rng(5))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_gen_synthetic_single_class():
    _, _, labels = dataio.gen_synthetic(9, 7, 1, 4, np.random.default_rng(6))
    assert np.all(labels == 1)


def test_gen_synthetic_shapes_and_labels():
    hsi, elev, labels = dataio.gen_synthetic(64, 64, 4, 16,
                                             np.random.default_rng(0))
    assert hsi.shape == (64, 64, 16)
    assert elev.shape == (64, 64) and labels.shape == (64, 64)
    assert set(np.unique(labels)) == {1, 2, 3, 4}


def test_gen_synthetic_noiseless_nearest_mean_100pct():
    hsi, _, labels, truth = dataio.gen_synthetic(
        64, 64, 4, 16, np.random.default_rng(1), noise_spec=0.0,
        noise_elev=0.0, return_truth=True)
    sig = truth["signatures"]
    d = ((hsi[..., None, :] - sig[None, None]) ** 2).sum(axis=-1)
    pred = d.argmin(axis=-1) + 1
    assert (pred == labels).mean() == 1.0


def test_gen_synthetic_rejects_bad_dims():
    with pytest.raises(ValueError):
        dataio.gen_synthetic(0, 4, 2, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        dataio.gen_synthetic(4, 4, 0, 4, np.random.default_rng(0))
