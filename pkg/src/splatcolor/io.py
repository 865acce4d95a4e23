"""File ingestion and export: splat PLY, images, and camera manifests.

PLY scene schema (binary little-endian, element "vertex", float32):

    x, y, z                      splat means
    f_dc_0 .. f_dc_{K-1}         band-0 SH coefficient per channel
    f_rest_{k*(M-1) + (m-1)}     higher-band coefficients, channel-major
    opacity                      logit-transformed
    scale_0 .. scale_2           log-transformed
    rot_0 .. rot_3               quaternion (w, x, y, z)

with K the channel count and M = (sh_order+1)^2. Opacity and scale transforms
are applied on read and inverted on write so in-memory values are the ones
the renderer consumes directly. Unknown scalar float properties (e.g. normals
written by other tools) are tolerated and ignored. All failure modes raise
structured errors carrying a byte offset where one is meaningful; a partial
scene is never returned.

Images: 8- and 16-bit PNG map linearly to [0, 1]; arbitrary-channel float
data uses a raw container (magic "RFI1\\n", three little-endian uint32 dims
height/width/channels, float64 payload). Images are treated as linear
intensity; any sRGB decoding is the caller's preprocessing responsibility.

Camera manifests are JSON: a list of records with a unique id, pinhole
intrinsics, a 4x4 world-to-camera matrix (row-major), image dimensions, and
an optional image filename.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import CameraView, ChannelImage, GaussianScene
from .sh import basis_size

_PLY_MAGIC = b"ply"
_RFI_MAGIC = b"RFI1\n"

_PLY_DTYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8"}


class PlyError(ValueError):
    """Malformed or inconsistent PLY data; offset points at the problem byte."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class ImageError(ValueError):
    pass


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _logit(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


def _parse_ply_header(data: bytes):
    """Returns (property names, numpy dtype, vertex count, payload offset)."""
    pos = 0

    def next_line():
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise PlyError("unterminated header line", offset=pos)
        line, start = data[pos:end], pos
        pos = end + 1
        return line.strip(), start

    line, start = next_line()
    if line != _PLY_MAGIC:
        raise PlyError("not a PLY file (missing 'ply' magic)", offset=start)
    line, start = next_line()
    if line != b"format binary_little_endian 1.0":
        raise PlyError(f"unsupported format line {line!r}", offset=start)

    names: list[str] = []
    dtypes: list[str] = []
    count = None
    in_vertex = False
    while True:
        line, start = next_line()
        if line == b"end_header":
            break
        parts = line.decode("ascii", errors="replace").split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "element":
            if count is not None:
                raise PlyError(f"unsupported extra element '{parts[1]}'", offset=start)
            if len(parts) != 3 or parts[1] != "vertex":
                raise PlyError(f"expected 'element vertex N', got {line!r}", offset=start)
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyError(f"bad vertex count {parts[2]!r}", offset=start) from None
            in_vertex = True
        elif parts[0] == "property":
            if not in_vertex:
                raise PlyError("property before any element", offset=start)
            if parts[1] == "list":
                raise PlyError(f"list property '{parts[-1]}' not supported", offset=start)
            if len(parts) != 3:
                raise PlyError(f"malformed property line {line!r}", offset=start)
            if parts[1] not in _PLY_DTYPES:
                raise PlyError(
                    f"property '{parts[2]}' has unsupported type '{parts[1]}'", offset=start
                )
            names.append(parts[2])
            dtypes.append(_PLY_DTYPES[parts[1]])
        else:
            raise PlyError(f"unexpected header line {line!r}", offset=start)

    if count is None:
        raise PlyError("header declares no vertex element", offset=pos)
    if not names:
        raise PlyError("vertex element has no properties", offset=pos)
    return names, np.dtype(list(zip(names, dtypes))), count, pos


def _indexed_props(names: list[str], prefix: str) -> list[str]:
    found = sorted(
        (n for n in names if n.startswith(prefix) and n[len(prefix):].isdigit()),
        key=lambda n: int(n[len(prefix):]),
    )
    for i, name in enumerate(found):
        if int(name[len(prefix):]) != i:
            raise PlyError(f"non-contiguous {prefix}* properties (missing {prefix}{i})")
    return found


def read_ply(path) -> GaussianScene:
    """Load a Gaussian scene, inferring channel count and SH order from the
    f_dc_*/f_rest_* property counts."""
    data = Path(path).read_bytes()
    names, dtype, count, payload_off = _parse_ply_header(data)

    expected = payload_off + count * dtype.itemsize
    if len(data) < expected:
        raise PlyError(
            f"truncated payload: need {expected - payload_off} bytes for "
            f"{count} vertices, have {len(data) - payload_off}",
            offset=len(data),
        )
    if len(data) > expected:
        raise PlyError(f"{len(data) - expected} trailing bytes after payload", offset=expected)
    rows = np.frombuffer(data[payload_off:expected], dtype=dtype)

    for req in ("x", "y", "z", "opacity"):
        if req not in names:
            raise PlyError(f"missing required property '{req}'")
    scale_names = _indexed_props(names, "scale_")
    if len(scale_names) != 3:
        raise PlyError(f"expected 3 scale_* properties, found {len(scale_names)}")
    rot_names = _indexed_props(names, "rot_")
    if len(rot_names) != 4:
        raise PlyError(f"expected 4 rot_* properties, found {len(rot_names)}")
    dc_names = _indexed_props(names, "f_dc_")
    if not dc_names:
        raise PlyError("no f_dc_* properties; scene has no color channels")
    rest_names = _indexed_props(names, "f_rest_")

    channels = len(dc_names)
    if len(rest_names) % channels != 0:
        raise PlyError(
            f"{len(rest_names)} f_rest_* properties not divisible by {channels} channels"
        )
    per_channel = len(rest_names) // channels
    order = int(round(np.sqrt(per_channel + 1))) - 1
    if basis_size(order) != per_channel + 1:
        raise PlyError(f"{per_channel} f_rest_* per channel is not (L+1)^2 - 1 for integer L")

    def col(name: str) -> np.ndarray:
        return rows[name].astype(np.float64)

    n_basis = per_channel + 1
    coeffs = np.empty((count, channels, n_basis), dtype=np.float64)
    for k, name in enumerate(dc_names):
        coeffs[:, k, 0] = col(name)
    for j, name in enumerate(rest_names):
        k, m = divmod(j, per_channel)
        coeffs[:, k, m + 1] = col(name)

    return GaussianScene(
        means=np.stack([col("x"), col("y"), col("z")], axis=1),
        scales=np.exp(np.stack([col(n) for n in scale_names], axis=1)),
        rotations=np.stack([col(n) for n in rot_names], axis=1),
        opacities=_sigmoid(col("opacity")),
        sh_coeffs=coeffs,
        sh_order=order,
    )


def write_ply(scene: GaussianScene, path) -> None:
    """Write a scene to the schema above (float32, binary little-endian)."""
    n = scene.n_gaussians
    channels = scene.channels
    n_basis = basis_size(scene.sh_order)
    names = ["x", "y", "z"]
    names += [f"f_dc_{k}" for k in range(channels)]
    names += [f"f_rest_{j}" for j in range(channels * (n_basis - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]

    out = np.empty(n, dtype=np.dtype([(name, "<f4") for name in names]))
    out["x"], out["y"], out["z"] = scene.means[:, 0], scene.means[:, 1], scene.means[:, 2]
    for k in range(channels):
        out[f"f_dc_{k}"] = scene.sh_coeffs[:, k, 0]
    for j in range(channels * (n_basis - 1)):
        k, m = divmod(j, n_basis - 1)
        out[f"f_rest_{j}"] = scene.sh_coeffs[:, k, m + 1]
    out["opacity"] = _logit(scene.opacities)
    for a in range(3):
        out[f"scale_{a}"] = np.log(scene.scales[:, a])
    for a in range(4):
        out[f"rot_{a}"] = scene.rotations[:, a]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header += ["end_header", ""]
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(out.tobytes())


def read_image(path) -> ChannelImage:
    """Load a PNG (linear [0, 1]) or raw float container image."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".png":
        with Image.open(p) as img:
            arr = np.asarray(img)
        if arr.dtype == np.uint8:
            data = arr.astype(np.float64) / 255.0
        elif arr.dtype == np.uint16:
            data = arr.astype(np.float64) / 65535.0
        elif arr.dtype == np.int32:  # PIL mode "I" for 16-bit grayscale
            data = arr.astype(np.float64) / 65535.0
        else:
            raise ImageError(f"unsupported PNG sample type {arr.dtype} in {p}")
        return ChannelImage(data=data)
    if suffix == ".rfi":
        return _read_rfi(p)
    raise ImageError(f"unsupported image format '{suffix}' ({p})")


def write_image(image: ChannelImage, path, clamp: bool = False, bit_depth: int = 8) -> None:
    """Write a PNG (quantized; requires values in [0, 1] unless clamp) or a
    raw float container (lossless)."""
    p = Path(path)
    suffix = p.suffix.lower()
    data = image.data
    if clamp:
        data = np.clip(data, 0.0, 1.0)
    if suffix == ".rfi":
        _write_rfi(data, p)
        return
    if suffix != ".png":
        raise ImageError(f"unsupported image format '{suffix}' ({p})")
    if data.min() < 0.0 or data.max() > 1.0:
        raise ImageError("PNG values outside [0, 1]; pass clamp=True to clip for display")
    if bit_depth == 8:
        quant = np.round(data * 255.0).astype(np.uint8)
    elif bit_depth == 16:
        quant = np.round(data * 65535.0).astype(np.uint16)
    else:
        raise ImageError(f"unsupported PNG bit depth {bit_depth}")
    if image.channels == 1:
        pil = Image.fromarray(quant[:, :, 0])
    elif image.channels == 3 and bit_depth == 8:
        pil = Image.fromarray(quant, mode="RGB")
    else:
        raise ImageError(
            f"PNG supports 1 channel (8/16-bit) or 3 channels (8-bit), "
            f"got {image.channels} channels at {bit_depth}-bit"
        )
    pil.save(p)


def _read_rfi(p: Path) -> ChannelImage:
    data = p.read_bytes()
    if not data.startswith(_RFI_MAGIC):
        raise ImageError(f"bad raw-image magic in {p}")
    if len(data) < len(_RFI_MAGIC) + 12:
        raise ImageError(f"raw image {p} truncated inside the header")
    h, w, c = struct.unpack_from("<III", data, len(_RFI_MAGIC))
    offset = len(_RFI_MAGIC) + 12
    expected = offset + h * w * c * 8
    if len(data) != expected:
        raise ImageError(
            f"raw image {p} has {len(data)} bytes, expected {expected} for {w}x{h}x{c}"
        )
    arr = np.frombuffer(data, dtype="<f8", count=h * w * c, offset=offset)
    return ChannelImage(data=arr.reshape(h, w, c).copy())


def _write_rfi(data: np.ndarray, p: Path) -> None:
    h, w, c = data.shape
    with open(p, "wb") as fh:
        fh.write(_RFI_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


@dataclass
class CameraRecord:
    """One manifest entry: a named camera plus its optional target image file."""

    id: str
    camera: CameraView
    image: str | None = None


@dataclass
class CameraSet:
    records: list[CameraRecord]

    def __post_init__(self) -> None:
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValueError(f"duplicate camera id '{rec.id}'")
            seen.add(rec.id)

    def cameras(self) -> list[CameraView]:
        return [rec.camera for rec in self.records]

    def resolve_images(self, directory) -> list[Path]:
        """Paths of every record's image under `directory`; errors name the id."""
        base = Path(directory)
        paths = []
        for rec in self.records:
            if rec.image is None:
                raise FileNotFoundError(f"view '{rec.id}' has no image filename in the manifest")
            p = base / rec.image
            if not p.exists():
                raise FileNotFoundError(f"view '{rec.id}': missing target file {p}")
            paths.append(p)
        return paths


def read_cameras(path) -> CameraSet:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "cameras" not in doc:
        raise ValueError(f"camera manifest {path} has no 'cameras' list")
    records = []
    for entry in doc["cameras"]:
        records.append(
            CameraRecord(
                id=str(entry["id"]),
                camera=CameraView(
                    world_to_camera=np.asarray(entry["world_to_camera"], dtype=np.float64),
                    fx=float(entry["fx"]),
                    fy=float(entry["fy"]),
                    cx=float(entry["cx"]),
                    cy=float(entry["cy"]),
                    width=int(entry["width"]),
                    height=int(entry["height"]),
                ),
                image=entry.get("image"),
            )
        )
    return CameraSet(records=records)


def write_cameras(cams: CameraSet, path) -> None:
    doc = {
        "cameras": [
            {
                "id": rec.id,
                "width": rec.camera.width,
                "height": rec.camera.height,
                "fx": rec.camera.fx,
                "fy": rec.camera.fy,
                "cx": rec.camera.cx,
                "cy": rec.camera.cy,
                "world_to_camera": rec.camera.world_to_camera.tolist(),
                "image": rec.image,
            }
            for rec in cams.records
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
