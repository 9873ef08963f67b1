"""Versioned JSON documents for cameras, scenes and bundles; binary weights.

Floats are written with Python's shortest round-trip repr, so every finite
double survives ``write -> read`` bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError, VersionMismatch
from .rays import FULL_CROP, PinholeCamera, PixelGrid, RayBundle, pixel_grid
from .scenes import SyntheticScene

CAMERAS_VERSION = "raybundle.cameras/1"
SCENE_VERSION = "raybundle.scene/1"
BUNDLE_VERSION = "raybundle.bundle/1"
BUNDLES_VERSION = "raybundle.bundles/1"
NDC_TAG = "ndc:x-right,y-down,z-forward"

WEIGHTS_MAGIC = b"RAYBWTS1"


def _dump(doc: dict, path) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def _load(path) -> dict:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return doc


def _check_doc(doc: dict, version: str, allowed: set, where: str, strict: bool) -> None:
    got = doc.get("version")
    if got != version:
        raise VersionMismatch(f"{where}: expected version {version!r}, found {got!r}")
    if strict:
        unknown = set(doc) - allowed - {"version"}
        if unknown:
            raise ParseError(f"{where}: unknown fields {sorted(unknown)}")


def _floats(value, n: int, where: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: expected {n} numbers") from None
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise ParseError(f"{where}: expected {n} finite numbers, got {np.size(value)}")
    return arr


def _required(doc: dict, key: str, where: str):
    if key not in doc:
        raise ParseError(f"{where}: missing field {key!r}")
    return doc[key]


def camera_to_dict(cam: PinholeCamera, crop=None) -> dict:
    out = {
        "rotation": cam.rotation.reshape(-1).tolist(),
        "translation": cam.translation.tolist(),
        "intrinsics": cam.intrinsics.reshape(-1).tolist(),
    }
    if crop is not None:
        out["crop"] = [float(c) for c in crop]
    return out


def camera_from_dict(d: dict, where: str, strict: bool = True) -> tuple[PinholeCamera, tuple]:
    if not isinstance(d, dict):
        raise ParseError(f"{where}: expected an object")
    if strict:
        unknown = set(d) - {"rotation", "translation", "intrinsics", "crop"}
        if unknown:
            raise ParseError(f"{where}: unknown fields {sorted(unknown)}")
    R = _floats(_required(d, "rotation", where), 9, f"{where}.rotation").reshape(3, 3)
    t = _floats(_required(d, "translation", where), 3, f"{where}.translation")
    K = _floats(_required(d, "intrinsics", where), 9, f"{where}.intrinsics").reshape(3, 3)
    crop = tuple(_floats(d["crop"], 3, f"{where}.crop")) if "crop" in d else FULL_CROP
    return PinholeCamera(R, t, K), crop


def write_cameras(path, cameras, crops=None) -> None:
    crops = crops if crops is not None else [None] * len(cameras)
    _dump({"version": CAMERAS_VERSION,
           "cameras": [camera_to_dict(c, k) for c, k in zip(cameras, crops)]}, path)


def read_cameras(path, strict: bool = True) -> tuple[list, list]:
    """Cameras and crops from a camera file or a scene file."""
    doc = _load(path)
    if doc.get("version") == SCENE_VERSION:
        scene = _scene_from_doc(doc, str(path), strict)
        return list(scene.cameras), list(scene.crops)
    _check_doc(doc, CAMERAS_VERSION, {"cameras"}, str(path), strict)
    items = _required(doc, "cameras", str(path))
    if not isinstance(items, list):
        raise ParseError(f"{path}: 'cameras' must be a list")
    parsed = [camera_from_dict(c, f"{path}: cameras[{i}]", strict) for i, c in enumerate(items)]
    return [c for c, _ in parsed], [k for _, k in parsed]


def write_scene(path, scene: SyntheticScene) -> None:
    _dump({"version": SCENE_VERSION,
           "seed": int(scene.seed),
           "landmarks": scene.landmarks.tolist(),
           "cameras": [camera_to_dict(c, k) for c, k in zip(scene.cameras, scene.crops)]}, path)


def _scene_from_doc(doc: dict, where: str, strict: bool) -> SyntheticScene:
    _check_doc(doc, SCENE_VERSION, {"seed", "landmarks", "cameras"}, where, strict)
    seed = _required(doc, "seed", where)
    if not isinstance(seed, int):
        raise ParseError(f"{where}: 'seed' must be an integer")
    lms = _required(doc, "landmarks", where)
    if not isinstance(lms, list) or not lms:
        raise ParseError(f"{where}: 'landmarks' must be a nonempty list")
    landmarks = np.stack([_floats(x, 3, f"{where}: landmarks[{i}]") for i, x in enumerate(lms)])
    items = _required(doc, "cameras", where)
    if not isinstance(items, list):
        raise ParseError(f"{where}: 'cameras' must be a list")
    parsed = [camera_from_dict(c, f"{where}: cameras[{i}]", strict) for i, c in enumerate(items)]
    return SyntheticScene(landmarks, [c for c, _ in parsed], seed, [k for _, k in parsed])


def read_scene(path, strict: bool = True) -> SyntheticScene:
    return _scene_from_doc(_load(path), str(path), strict)


def bundle_to_dict(bundle: RayBundle) -> dict:
    return {"version": BUNDLE_VERSION, "p": bundle.grid.p, "convention": NDC_TAG,
            "crop": [float(c) for c in bundle.grid.crop], "rays": bundle.rays.tolist()}


def bundle_from_dict(doc: dict, where: str, strict: bool = True) -> RayBundle:
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    _check_doc(doc, BUNDLE_VERSION, {"p", "convention", "crop", "rays"}, where, strict)
    p = _required(doc, "p", where)
    if not isinstance(p, int) or p < 1:
        raise ParseError(f"{where}: 'p' must be a positive integer")
    conv = doc.get("convention", NDC_TAG)
    if conv != NDC_TAG:
        raise ParseError(f"{where}: unsupported convention {conv!r}")
    crop = tuple(_floats(doc.get("crop", FULL_CROP), 3, f"{where}.crop"))
    rays = _required(doc, "rays", where)
    if not isinstance(rays, list) or len(rays) != p * p:
        raise ParseError(f"{where}: expected {p * p} rays")
    arr = np.stack([_floats(r, 6, f"{where}: rays[{i}]") for i, r in enumerate(rays)])
    return RayBundle(pixel_grid(p, crop), arr)


def write_bundles(path, bundles) -> None:
    """Write one bundle as a bundle document, several as a bundle set."""
    bundles = list(bundles)
    if len(bundles) == 1:
        _dump(bundle_to_dict(bundles[0]), path)
    else:
        _dump({"version": BUNDLES_VERSION, "bundles": [bundle_to_dict(b) for b in bundles]}, path)


def read_bundles(path, strict: bool = True) -> list[RayBundle]:
    doc = _load(path)
    where = str(path)
    if doc.get("version") == BUNDLE_VERSION:
        return [bundle_from_dict(doc, where, strict)]
    _check_doc(doc, BUNDLES_VERSION, {"bundles"}, where, strict)
    items = _required(doc, "bundles", where)
    if not isinstance(items, list) or not items:
        raise ParseError(f"{where}: 'bundles' must be a nonempty list")
    return [bundle_from_dict(b, f"{where}: bundles[{i}]", strict) for i, b in enumerate(items)]


def bundles_from_array(rays: np.ndarray, grids: list[PixelGrid]) -> list[RayBundle]:
    return [RayBundle(g, r) for r, g in zip(rays, grids)]


def write_weights(path, state: dict, meta: dict) -> None:
    """Little-endian float32 tensors behind a JSON shape manifest.

    Layout: 8-byte magic, uint32 manifest length, UTF-8 JSON manifest, then
    each tensor's data in manifest order.
    """
    names = list(state)
    manifest = {"meta": meta,
                "tensors": [{"name": n, "shape": list(np.shape(state[n]))} for n in names]}
    head = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for n in names:
            fh.write(np.ascontiguousarray(state[n], dtype="<f4").tobytes())


def read_weights(path) -> tuple[dict, dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != WEIGHTS_MAGIC:
        raise ParseError(f"{path}: not a weights file")
    if len(blob) < 12:
        raise ParseError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", blob[8:12])
    try:
        manifest = json.loads(blob[12:12 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad manifest: {exc}") from None
    state, offset = {}, 12 + n
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + 4 * count
        if end > len(blob):
            raise ParseError(f"{path}: truncated data for {entry['name']}")
        state[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(entry["shape"]).copy()
        offset = end
    if offset != len(blob):
        raise ParseError(f"{path}: {len(blob) - offset} trailing bytes")
    return state, manifest["meta"]
