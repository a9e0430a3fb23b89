"""Scene and tensor I/O, patch extraction, splits, synthetic scenes.

Two small binary containers are used on disk, both little-endian:

DTEN (dense tensor):
    bytes 0-3   magic "DTEN"
    bytes 4-5   u16 version, currently 1
    byte  6     u8 dtype code: 1 = float32, 2 = int32
    byte  7     u8 ndim
    next 4*ndim u32 dimensions
    rest        row-major payload

HDCF (feature table):
    bytes 0-3   magic "HDCF"
    bytes 4-7   u32 record count n
    bytes 8-11  u32 feature dimension d
    then n records of (u32 row, u32 col, i32 label, d * f32 features)

Malformed files raise FormatError with the byte offset where parsing
failed. Writers go through a temp file and os.replace so readers never
observe a half-written file.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError

__all__ = [
    "write_dten",
    "read_dten",
    "write_features",
    "read_features",
    "write_scene",
    "read_scene",
    "PatchSet",
    "extract_patches",
    "stratified_split",
    "gen_synthetic",
]

DTEN_MAGIC = b"DTEN"
HDCF_MAGIC = b"HDCF"
DTEN_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<i4")}
_STD_FLOOR = 1e-12


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_dten(path: str, array: np.ndarray) -> None:
    """Serialize an array as DTEN. Floats store as f32, ints as i32."""
    array = np.asarray(array)
    if array.dtype.kind == "f":
        code, data = 1, array.astype("<f4")
    elif array.dtype.kind in ("i", "u"):
        code, data = 2, array.astype("<i4")
    else:
        raise ValueError(f"cannot serialize dtype {array.dtype}")
    if array.ndim > 255:
        raise ValueError("too many dimensions for the container")
    for dim in array.shape:
        if dim >= 2 ** 32:
            raise ValueError("dimension too large for the container")
    header = DTEN_MAGIC + struct.pack("<HBB", DTEN_VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    _atomic_write(path, header + np.ascontiguousarray(data).tobytes())


def read_dten(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError(path, len(blob), "truncated header")
    if blob[:4] != DTEN_MAGIC:
        raise FormatError(path, 0, f"bad magic {blob[:4]!r}, expected {DTEN_MAGIC!r}")
    version, code, ndim = struct.unpack_from("<HBB", blob, 4)
    if version != DTEN_VERSION:
        raise FormatError(path, 4, f"unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(path, 6, f"unknown dtype code {code}")
    dims_end = 8 + 4 * ndim
    if len(blob) < dims_end:
        raise FormatError(path, len(blob), "truncated dimension list")
    shape = struct.unpack_from(f"<{ndim}I", blob, 8)
    dtype = _DTYPE_CODES[code]
    count = 1
    for dim in shape:
        count *= dim
    expected_end = dims_end + count * dtype.itemsize
    if len(blob) < expected_end:
        raise FormatError(
            path, len(blob),
            f"truncated payload: expected {expected_end} bytes total",
        )
    if len(blob) > expected_end:
        raise FormatError(path, expected_end, "trailing bytes after payload")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=dims_end)
    return data.reshape(shape).copy()


def write_features(path: str, rows: np.ndarray, cols: np.ndarray,
                   labels: np.ndarray, feats: np.ndarray) -> None:
    """Serialize per-pixel feature vectors with their scene location and label."""
    feats = np.asarray(feats)
    n, dim = feats.shape
    if not (len(rows) == len(cols) == len(labels) == n):
        raise ValueError("rows, cols, labels and feats must have equal length")
    rec = np.zeros(n, dtype=[("row", "<u4"), ("col", "<u4"),
                             ("label", "<i4"), ("feat", "<f4", (dim,))])
    rec["row"] = rows
    rec["col"] = cols
    rec["label"] = labels
    rec["feat"] = feats
    header = HDCF_MAGIC + struct.pack("<II", n, dim)
    _atomic_write(path, header + rec.tobytes())


def read_features(path: str):
    """Returns (rows u32, cols u32, labels i32, feats f32 (n, d))."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise FormatError(path, len(blob), "truncated header")
    if blob[:4] != HDCF_MAGIC:
        raise FormatError(path, 0, f"bad magic {blob[:4]!r}, expected {HDCF_MAGIC!r}")
    n, dim = struct.unpack_from("<II", blob, 4)
    rec_dtype = np.dtype([("row", "<u4"), ("col", "<u4"),
                          ("label", "<i4"), ("feat", "<f4", (dim,))])
    expected_end = 12 + n * rec_dtype.itemsize
    if len(blob) < expected_end:
        raise FormatError(
            path, len(blob),
            f"truncated records: expected {expected_end} bytes total",
        )
    if len(blob) > expected_end:
        raise FormatError(path, expected_end, "trailing bytes after records")
    rec = np.frombuffer(blob, dtype=rec_dtype, count=n, offset=12)
    return (rec["row"].copy(), rec["col"].copy(),
            rec["label"].copy(), rec["feat"].copy())


def write_scene(directory: str, hsi: np.ndarray, elevation: np.ndarray,
                labels: np.ndarray) -> None:
    """Store a scene directory: hsi.dten (H,W,C f32), lidar.dten (H,W f32
    elevation raster), labels.dten (H,W i32, 0 = unlabeled)."""
    os.makedirs(directory, exist_ok=True)
    write_dten(os.path.join(directory, "hsi.dten"), np.asarray(hsi, dtype=np.float32))
    write_dten(os.path.join(directory, "lidar.dten"),
               np.asarray(elevation, dtype=np.float32))
    write_dten(os.path.join(directory, "labels.dten"),
               np.asarray(labels, dtype=np.int32))


def read_scene(directory: str):
    """Load (hsi, elevation, labels) written by write_scene."""
    hsi = read_dten(os.path.join(directory, "hsi.dten")).astype(np.float64)
    elevation = read_dten(os.path.join(directory, "lidar.dten")).astype(np.float64)
    labels = read_dten(os.path.join(directory, "labels.dten"))
    if hsi.ndim != 3:
        raise ValueError("hsi.dten must hold a (H, W, C) tensor")
    if elevation.shape != hsi.shape[:2] or labels.shape != hsi.shape[:2]:
        raise ValueError("lidar/labels extents do not match hsi")
    return hsi, elevation, labels


@dataclass
class PatchSet:
    """Extracted patches for every labeled pixel of a scene.

    hsi: (N, b, b, C) standardized spectra; lidar: (N, b*b, 3) point sets
    with grid x, grid y in [-1, 1] and standardized elevation z; labels,
    rows, cols: (N,) int32. Patch points are ordered row-major, so the
    center pixel is index (b*b) // 2.
    """

    hsi: np.ndarray
    lidar: np.ndarray
    labels: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    b: int
    c_spec: int

    def __len__(self) -> int:
        return self.labels.shape[0]


def _grid_axis(b: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, b) if b > 1 else np.zeros(1)


def extract_patches(hsi: np.ndarray, elevation: np.ndarray,
                    labels: np.ndarray, b: int) -> PatchSet:
    """Cut one b x b patch around every labeled pixel (label > 0).

    Borders are mirror-padded. Spectra are z-scored per band with moments
    computed over labeled pixels only; elevation is z-scored over the
    whole scene. Near-constant bands divide by 1 instead of ~0.
    """
    hsi = np.asarray(hsi, dtype=np.float64)
    elevation = np.asarray(elevation, dtype=np.float64)
    labels = np.asarray(labels)
    if hsi.ndim != 3:
        raise ValueError("hsi must have shape (H, W, C)")
    if elevation.shape != hsi.shape[:2] or labels.shape != hsi.shape[:2]:
        raise ValueError("elevation and labels must match the scene extent")
    if b < 1 or b % 2 == 0:
        raise ValueError("patch size b must be odd and positive")
    mask = labels > 0
    n = int(mask.sum())
    if n == 0:
        raise ValueError("scene has no labeled pixels")

    band_mean = hsi[mask].mean(axis=0)
    band_std = hsi[mask].std(axis=0)
    band_std = np.where(band_std < _STD_FLOOR, 1.0, band_std)
    hsi_n = (hsi - band_mean) / band_std
    el_std = elevation.std()
    el_n = (elevation - elevation.mean()) / (el_std if el_std >= _STD_FLOOR else 1.0)

    r = b // 2
    if r > 0:
        if min(hsi.shape[:2]) < r + 1:
            raise ValueError("scene too small for the requested patch size")
        hsi_n = np.pad(hsi_n, ((r, r), (r, r), (0, 0)), mode="reflect")
        el_n = np.pad(el_n, r, mode="reflect")
    rows, cols = np.nonzero(mask)

    win_h = sliding_window_view(hsi_n, (b, b), axis=(0, 1))
    patches = win_h[rows, cols]  # (N, C, b, b)
    patches = np.transpose(patches, (0, 2, 3, 1)).astype(np.float32)

    win_e = sliding_window_view(el_n, (b, b))
    heights = win_e[rows, cols].reshape(n, b * b)

    axis = _grid_axis(b)
    gy, gx = np.meshgrid(axis, axis, indexing="ij")
    lidar = np.empty((n, b * b, 3), dtype=np.float32)
    lidar[:, :, 0] = gx.reshape(-1)
    lidar[:, :, 1] = gy.reshape(-1)
    lidar[:, :, 2] = heights

    return PatchSet(
        hsi=patches, lidar=lidar,
        labels=labels[mask].astype(np.int32),
        rows=rows.astype(np.int32), cols=cols.astype(np.int32),
        b=b, c_spec=hsi.shape[2],
    )


def stratified_split(labels: np.ndarray, train_fraction: float,
                     rng: np.random.Generator):
    """Per-class random split; floor(fraction * n) train samples per
    class, at least 1. Returns sorted (train_idx, test_idx)."""
    labels = np.asarray(labels)
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    train, test = [], []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        idx = idx[rng.permutation(idx.shape[0])]
        n_train = max(1, int(np.floor(train_fraction * idx.shape[0])))
        train.append(idx[:n_train])
        test.append(idx[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _fourier_mixture(rng: np.random.Generator, count: int, n_bands: int,
                     n_waves: int) -> np.ndarray:
    """`count` smooth random curves over the band index, each a sum of
    `n_waves` sinusoids with random amplitude, frequency and phase."""
    t = np.arange(n_bands) / max(1, n_bands)
    amp = rng.uniform(0.5, 1.5, size=(count, n_waves))
    freq = rng.uniform(0.5, 3.0, size=(count, n_waves))
    phase = rng.uniform(0, 2 * np.pi, size=(count, n_waves))
    out = np.zeros((count, n_bands))
    for j in range(n_waves):
        out += amp[:, j, None] * np.sin(
            2 * np.pi * freq[:, j, None] * t[None, :] + phase[:, j, None]
        )
    return out


def gen_synthetic(height: int, width: int, n_classes: int, n_bands: int,
                  rng: np.random.Generator, noise_spec: float = 0.1,
                  noise_elev: float = 0.1, class_sep: float = 1.2,
                  return_truth: bool = False):
    """Random scene with paired spectra, elevation and dense labels.

    Classes form Voronoi cells around random sites. Spectral signatures
    are random Fourier mixtures sharing a base continuum, separated
    mainly in overall brightness (per-class gains exp(class_sep * rank)
    with ranks centered on zero, so gains stay positive and distinct at
    any separation) and mildly in shape (per-class deviations of RMS
    size 0.1 * class_sep), so signatures are distinct by construction
    but class difficulty is one tunable knob; per-pixel Gaussian noise
    has sigma = noise_spec times the signature's own range. Elevation gives
    each class a plateau offset, riding on smooth terrain plus Gaussian
    noise of scale noise_elev. Consecutive offsets are spaced by
    (c + 1) * 2 * noise_elev rather than evenly: with growing gaps no
    two classes sit at mirrored heights around the scene mean, so class
    identity survives even in features that only see the magnitude of
    the standardized elevation.

    Returns (hsi, elevation, labels) and, with return_truth, a dict of
    the generating parameters.
    """
    if n_classes < 1 or n_bands < 1 or height < 1 or width < 1:
        raise ValueError("scene dimensions, bands and classes must be positive")
    sites = rng.uniform(0, 1, size=(n_classes, 2)) * np.array([height, width])
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    class_map = np.argmin(d2, axis=-1)
    labels = (class_map + 1).astype(np.int32)

    base = _fourier_mixture(rng, 1, n_bands, n_waves=4)
    deltas = _fourier_mixture(rng, n_classes, n_bands, n_waves=3)
    rms = np.sqrt(np.mean(deltas * deltas, axis=1, keepdims=True))
    rms = np.where(rms < _STD_FLOOR, 1.0, rms)
    spread = np.arange(n_classes) - (n_classes - 1) / 2.0
    spread /= max(1, n_classes - 1)
    gains = np.exp(class_sep * rng.permutation(spread))
    signatures = gains[:, None] * base + 0.1 * class_sep * deltas / rms

    clean = signatures[class_map]  # (H, W, B)
    ranges = signatures.max(axis=1) - signatures.min(axis=1)
    ranges = np.where(ranges < _STD_FLOOR, 1.0, ranges)
    sigma_map = noise_spec * ranges[class_map]
    hsi = clean + rng.normal(size=clean.shape) * sigma_map[..., None]

    spacing = 2.0 * noise_elev if noise_elev > 0 else 1.0
    fy = rng.uniform(0.5, 2.0, size=3)
    fx = rng.uniform(0.5, 2.0, size=3)
    ph = rng.uniform(0, 2 * np.pi, size=(3, 2))
    terrain = np.zeros((height, width))
    for j in range(3):
        terrain += 0.25 * spacing * (
            np.sin(2 * np.pi * fy[j] * yy / height + ph[j, 0])
            + np.sin(2 * np.pi * fx[j] * xx / width + ph[j, 1])
        ) / 3.0
    steps = np.arange(n_classes, dtype=np.float64)
    offsets = spacing * steps * (steps + 1) / 2.0
    elevation = offsets[class_map] + terrain + rng.normal(
        0.0, noise_elev, size=(height, width)
    )

    if return_truth:
        truth = {"sites": sites, "signatures": signatures, "gains": gains,
                 "offsets": offsets, "class_map": class_map}
        return hsi, elevation, labels, truth
    return hsi, elevation, labels
