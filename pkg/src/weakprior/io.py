"""File formats: a small binary tensor container, binary PPM/PGM, tag files.

Tensor layout (all integers little-endian)::

    b"TSR1" | dtype u8 (1 = float32, 2 = float64) | rank u8 (1..3)
    | rank x u32 dims | row-major payload

Payloads are always returned as float64.
"""

import os
import struct

import numpy as np

from .losses import TagSet

MAGIC = b"TSR1"
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_MAX_ELEMENTS = 2**32


class FormatError(ValueError):
    """A file does not follow its declared format."""


# -- tensors ----------------------------------------------------------------


def encode_tensor(arr, dtype_code=2):
    arr = np.asarray(arr)
    if dtype_code not in DTYPES:
        raise ValueError(f"unknown dtype code {dtype_code}")
    if not 1 <= arr.ndim <= 3:
        raise ValueError(f"rank must be 1..3, got {arr.ndim}")
    header = MAGIC + struct.pack("<BB", dtype_code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPES[dtype_code]).tobytes()


def decode_tensor(buf, source="<bytes>"):
    buf = bytes(buf)
    if len(buf) < 6:
        raise FormatError(f"{source}: header needs 6 bytes, got {len(buf)}")
    if buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    code, rank = buf[4], buf[5]
    if code not in DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}")
    if not 1 <= rank <= 3:
        raise FormatError(f"{source}: rank {rank} outside 1..3")
    dims_end = 6 + 4 * rank
    if len(buf) < dims_end:
        raise FormatError(f"{source}: dims need {dims_end - 6} bytes, missing {dims_end - len(buf)}")
    dims = struct.unpack(f"<{rank}I", buf[6:dims_end])
    count = 1
    for d in dims:
        count *= d
    if count == 0:
        raise FormatError(f"{source}: zero-sized dimension in {dims}")
    if count > _MAX_ELEMENTS:
        raise FormatError(f"{source}: dims {dims} hold {count} elements, more than 2^32")
    need = count * DTYPES[code].itemsize
    have = len(buf) - dims_end
    if have < need:
        raise FormatError(f"{source}: payload needs {need} bytes, got {have} (missing {need - have})")
    if have > need:
        raise FormatError(f"{source}: {have - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype=DTYPES[code], count=count, offset=dims_end)
    return data.astype(np.float64).reshape(dims)


def write_tensor(path, arr, dtype_code=2):
    with open(path, "wb") as f:
        f.write(encode_tensor(arr, dtype_code))


def read_tensor(path):
    with open(path, "rb") as f:
        return decode_tensor(f.read(), os.fspath(path))


# -- netpbm -------------------------------------------------------------------


def _header_tokens(buf, count, source):
    """Read ``count`` whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last one.
    """
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError(f"{source}: truncated header")
        tokens.append(buf[start:i])
    if i >= n or not buf[i : i + 1].isspace():
        raise FormatError(f"{source}: header must end with one whitespace byte")
    return tokens, i + 1


def decode_pnm(buf, source="<bytes>"):
    """Decode binary P5/P6 data to (H, W) or (3, H, W) integer arrays."""
    buf = bytes(buf)
    if buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{source}: not a binary PGM/PPM (magic {buf[:2]!r})")
    tokens, offset = _header_tokens(buf, 4, source)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{source}: non-numeric header field") from exc
    if width < 1 or height < 1:
        raise FormatError(f"{source}: empty image {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"{source}: maxval {maxval} outside 1..65535")
    channels = 3 if tokens[0] == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    have = len(buf) - offset
    if have < need:
        raise FormatError(f"{source}: raster needs {need} bytes, got {have} (missing {need - have})")
    data = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=offset).astype(np.int64)
    if data.max(initial=0) > maxval:
        raise FormatError(f"{source}: sample exceeds maxval {maxval}")
    if channels == 3:
        return data.reshape(height, width, 3).transpose(2, 0, 1)
    return data.reshape(height, width)


def encode_pnm(arr, maxval=None):
    """Encode a (H, W) gray or (3, H, W) color integer array as P5/P6.

    ``maxval`` defaults to 255; values above 255 need ``maxval=65535``,
    which stores two big-endian bytes per sample.
    """
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[0] == 3:
        magic, raster = b"P6", arr.transpose(1, 2, 0)
    elif arr.ndim == 2:
        magic, raster = b"P5", arr
    else:
        raise ValueError(f"expected (H, W) or (3, H, W), got {arr.shape}")
    if raster.size == 0:
        raise ValueError("empty image")
    if not np.all(np.mod(raster, 1) == 0):
        raise ValueError("image samples must be integers")
    maxval = 255 if maxval is None else int(maxval)
    if raster.min() < 0 or raster.max() > maxval:
        raise ValueError(f"samples must lie in [0, {maxval}]")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    h, w = raster.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + np.ascontiguousarray(raster, dtype=dtype).tobytes()


def read_image(path):
    with open(path, "rb") as f:
        return decode_pnm(f.read(), os.fspath(path))


def write_image(path, arr, maxval=None):
    with open(path, "wb") as f:
        f.write(encode_pnm(arr, maxval))


def write_regions(path, ids):
    """Region ids always go to 16-bit PGM."""
    write_image(path, ids, maxval=65535)


# -- tags -------------------------------------------------------------------


def parse_tags(text, n_labels, source="<text>"):
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or key.strip() != "present":
            continue
        labels = []
        for tok in value.split(","):
            tok = tok.strip()
            if not tok:
                continue
            try:
                labels.append(int(tok))
            except ValueError as exc:
                raise FormatError(f"{source}: bad label {tok!r}") from exc
        if len(set(labels)) != len(labels):
            raise FormatError(f"{source}: duplicate labels in {labels}")
        if any(k < 0 or k >= n_labels for k in labels):
            raise FormatError(f"{source}: labels {labels} outside [0, {n_labels})")
        return TagSet(frozenset(labels), n_labels)
    raise FormatError(f"{source}: no 'present=' line")


def format_tags(tags):
    return "present=" + ",".join(str(k) for k in sorted(tags.present)) + "\n"


def read_tags(path, n_labels):
    with open(path, encoding="utf-8") as f:
        return parse_tags(f.read(), n_labels, os.fspath(path))


def write_tags(path, tags):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_tags(tags))


# -- scene directories --------------------------------------------------------

SCENE_FILES = {
    "image": "image.ppm",
    "gt": "gt.pgm",
    "tags": "tags.txt",
    "conv4": "conv4.tsr",
    "conv5": "conv5.tsr",
    "cam_features": "cam_features.tsr",
    "cam_weights": "cam_weights.tsr",
    "regions": "regions.pgm",
}


def save_scene(directory, scene):
    os.makedirs(directory, exist_ok=True)
    p = lambda key: os.path.join(directory, SCENE_FILES[key])  # noqa: E731
    write_image(p("image"), scene.image.astype(np.int64))
    write_image(p("gt"), scene.gt)
    write_tags(p("tags"), scene.tags)
    write_tensor(p("conv4"), scene.conv4)
    write_tensor(p("conv5"), scene.conv5)
    write_tensor(p("cam_features"), scene.cam_features)
    write_tensor(p("cam_weights"), scene.cam_weights)
    write_regions(p("regions"), scene.regions.ids)


def load_scene(directory):
    """Inverse of :func:`save_scene`; the class count comes from the CAM weights."""
    from .crf import RegionPartition
    from .synth import SynthScene

    p = lambda key: os.path.join(directory, SCENE_FILES[key])  # noqa: E731
    cam_weights = read_tensor(p("cam_weights"))
    if cam_weights.ndim != 2:
        raise FormatError(f"{p('cam_weights')}: expected a rank-2 tensor")
    n_labels = cam_weights.shape[0] + 1
    image = read_image(p("image"))
    if image.ndim != 3:
        raise FormatError(f"{p('image')}: expected a color (P6) image")
    gt = read_image(p("gt"))
    if gt.ndim != 2 or gt.shape != image.shape[1:]:
        raise FormatError(f"{p('gt')}: label map must match the image size")
    regions = read_image(p("regions"))
    if regions.ndim != 2 or regions.shape != gt.shape:
        raise FormatError(f"{p('regions')}: region map must match the image size")
    return SynthScene(
        image=image.astype(np.float64),
        gt=gt,
        tags=read_tags(p("tags"), n_labels),
        conv4=read_tensor(p("conv4")),
        conv5=read_tensor(p("conv5")),
        cam_features=read_tensor(p("cam_features")),
        cam_weights=cam_weights,
        regions=RegionPartition.from_labels(regions),
    )


def scene_dirs(root):
    """Sorted subdirectories of ``root`` that hold a scene."""
    names = sorted(
        d for d in os.listdir(root) if os.path.isfile(os.path.join(root, d, SCENE_FILES["tags"]))
    )
    return [os.path.join(root, d) for d in names]
