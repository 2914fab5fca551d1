"""Gaussian primitive store, pinhole camera, EWA projection and persistence."""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import sh as shmod

# raw parameter arrays, in serialisation order
PARAM_FIELDS = (
    "positions", "rotations", "log_scales", "opacity_logits", "sh",
    "structure_logits", "illum", "depth_logits", "noise",
)

# per-primitive trailing shapes; sh depends on the max degree
_TRAILING = {
    "positions": (3,), "rotations": (4,), "log_scales": (3,), "opacity_logits": (1,),
    "structure_logits": (1,), "illum": (3,), "depth_logits": (1,), "noise": (3,),
}

# feature layout used by the rasterizer: colour, structure, depth, illumination, noise
CHANNEL_SLICES = {
    "color": slice(0, 3), "structure": slice(3, 4), "depth": slice(4, 5),
    "illum": slice(5, 8), "noise": slice(8, 11),
}
NUM_FEATURES = 11


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianCloud:
    """Columnar store of N primitives.

    Raw (optimised) parameters are stored; the ``*_decoded`` helpers apply
    the activations: sigmoid for opacity/structure/depth, exp for scales and
    illumination, identity for noise.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    structure_logits: np.ndarray
    illum: np.ndarray
    depth_logits: np.ndarray
    noise: np.ndarray
    active_sh_degree: int = 0

    def __post_init__(self):
        n = np.asarray(self.positions).shape[0]
        for name in PARAM_FIELDS:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape[0] != n:
                raise ValueError(f"{name}: expected {n} rows, got {arr.shape[0]}")
            if name != "sh" and arr.shape[1:] != _TRAILING[name]:
                raise ValueError(f"{name}: bad trailing shape {arr.shape[1:]}")
            setattr(self, name, arr)
        if self.sh.ndim != 3 or self.sh.shape[2] != 3:
            raise ValueError("sh must have shape (N, B, 3)")
        deg = int(round(math.sqrt(self.sh.shape[1]))) - 1
        if shmod.num_bases(deg) != self.sh.shape[1]:
            raise ValueError("sh basis count must be a perfect square")
        if not 0 <= self.active_sh_degree <= deg:
            raise ValueError("active_sh_degree exceeds stored SH degree")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def max_sh_degree(self) -> int:
        return int(round(math.sqrt(self.sh.shape[1]))) - 1

    @classmethod
    def empty(cls, max_sh_degree: int = 3) -> "GaussianCloud":
        return cls.zeros(0, max_sh_degree)

    @classmethod
    def zeros(cls, n: int, max_sh_degree: int = 3) -> "GaussianCloud":
        kw = {name: np.zeros((n,) + shape) for name, shape in _TRAILING.items()}
        kw["rotations"][:, 0] = 1.0
        kw["sh"] = np.zeros((n, shmod.num_bases(max_sh_degree), 3))
        return cls(**kw)

    def copy(self) -> "GaussianCloud":
        return replace(self, **{k: getattr(self, k).copy() for k in PARAM_FIELDS})

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_FIELDS}

    def select(self, index) -> "GaussianCloud":
        return replace(self, **{k: getattr(self, k)[index] for k in PARAM_FIELDS})

    @staticmethod
    def concat(a: "GaussianCloud", b: "GaussianCloud") -> "GaussianCloud":
        return replace(a, **{k: np.concatenate([getattr(a, k), getattr(b, k)]) for k in PARAM_FIELDS})

    # decoded attributes
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logits[:, 0])

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def structure(self) -> np.ndarray:
        return sigmoid(self.structure_logits[:, 0])

    def depth_attr(self) -> np.ndarray:
        return sigmoid(self.depth_logits[:, 0])

    def illumination(self) -> np.ndarray:
        return np.exp(self.illum)

    def normalize_rotations(self) -> None:
        norm = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        self.rotations = self.rotations / np.maximum(norm, 1e-12)


@dataclass
class GradientBundle:
    """Gradient arrays mirroring :class:`GaussianCloud`'s raw parameters."""

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    structure_logits: np.ndarray
    illum: np.ndarray
    depth_logits: np.ndarray
    noise: np.ndarray
    # screen-space mean gradient, kept for density control
    means2d: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "GradientBundle":
        return cls(**{k: np.zeros_like(getattr(cloud, k)) for k in PARAM_FIELDS},
                   means2d=np.zeros((len(cloud), 2)))

    def items(self):
        return ((k, getattr(self, k)) for k in PARAM_FIELDS)

    def __add__(self, other: "GradientBundle") -> "GradientBundle":
        m2 = None
        if self.means2d is not None and other.means2d is not None:
            m2 = self.means2d + other.means2d
        return GradientBundle(**{k: getattr(self, k) + getattr(other, k) for k in PARAM_FIELDS}, means2d=m2)


# ---------------------------------------------------------------------------
# camera
# ---------------------------------------------------------------------------

@dataclass
class Camera:
    """Pinhole camera with a world-to-camera pose ``x_cam = R @ x_world + t``."""

    R: np.ndarray
    t: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")
        if not (self.near > 0 and self.far > self.near):
            raise ValueError("require 0 < near < far")
        self.width, self.height = int(self.width), int(self.height)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def world_to_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    @classmethod
    def look_at(cls, eye, target, up, fov_x_deg: float, width: int, height: int, **kw) -> "Camera":
        """Camera at ``eye`` looking at ``target`` (+z forward, +y down in image)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        fx = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2)
        return cls(R, -R @ eye, fx, fx, (width - 1) / 2, (height - 1) / 2, width, height, **kw)

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "near": self.near, "far": self.far,
            "world_to_camera": self.world_to_camera().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        m = np.asarray(d["world_to_camera"], dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3], float(d["fx"]), float(d["fy"]), float(d["cx"]),
                   float(d["cy"]), int(d["width"]), int(d["height"]),
                   float(d.get("near", 0.01)), float(d.get("far", 100.0)))


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternions ``(w, x, y, z)`` -> rotation matrices ``(N, 3, 3)``."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_grad_to_quat(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Pull ``dL/dR`` back to ``dL/dq`` for unit ``q`` (before normalisation)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2]
              - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
              - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    dy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
              + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    dz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
              - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([dw, dx, dy, dz], axis=1)


def covariance_3d(cloud: GaussianCloud) -> np.ndarray:
    """World-space covariances ``R S S^T R^T`` with normalised rotations."""
    q = cloud.rotations / np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    M = quat_to_rotmat(q) * cloud.scales()[:, None, :]
    return M @ np.transpose(M, (0, 2, 1))


LOWPASS = 0.3


@dataclass
class Projection:
    """Screen-space footprint of every primitive plus cached intermediates."""

    means2d: np.ndarray      # (N, 2) pixel coordinates (x, y)
    depths: np.ndarray       # (N,) camera-space z
    cov2d: np.ndarray        # (N, 2, 2), includes the low-pass dilation
    conic: np.ndarray        # (N, 3) inverse covariance (a, b, c)
    culled: np.ndarray       # (N,) outside [near, far]
    degenerate: np.ndarray   # (N,) determinant below threshold
    t_cam: np.ndarray = field(repr=False)
    J: np.ndarray = field(repr=False)
    cov_cam: np.ndarray = field(repr=False)
    qnorm: np.ndarray = field(repr=False)
    rotmat: np.ndarray = field(repr=False)
    scales: np.ndarray = field(repr=False)

    @property
    def valid(self) -> np.ndarray:
        return ~(self.culled | self.degenerate)


DET_EPS = 1e-12


def project(cloud: GaussianCloud, cam: Camera) -> Projection:
    """EWA projection ``Sigma2D = J W Sigma W^T J^T + 0.3 I``."""
    n = len(cloud)
    t_cam = cloud.positions @ cam.R.T + cam.t
    z = t_cam[:, 2]
    culled = (z < cam.near) | (z > cam.far)
    zs = np.where(culled, 1.0, z)
    x, y = t_cam[:, 0], t_cam[:, 1]
    means2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x / zs ** 2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * y / zs ** 2

    norm = np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    qn = cloud.rotations / np.maximum(norm, 1e-12)
    Rm = quat_to_rotmat(qn)
    s = cloud.scales()
    M = Rm * s[:, None, :]
    cov3 = M @ np.transpose(M, (0, 2, 1))
    cov_cam = cam.R @ cov3 @ cam.R.T
    cov2d = J @ cov_cam @ np.transpose(J, (0, 2, 1))
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    degenerate = ~culled & ~(det >= DET_EPS)
    safe = np.where(det >= DET_EPS, det, 1.0)
    conic = np.stack([c / safe, -b / safe, a / safe], axis=1)
    return Projection(means2d, z, cov2d, conic, culled, degenerate,
                      t_cam, J, cov_cam, qn, Rm, s)


def view_colors(cloud: GaussianCloud, cam: Camera, degree: int | None = None):
    """Clamped SH colours along camera-to-centre rays.

    Returns ``(rgb, basis, basis_grad, dirs, dist, clamp_mask)``; the extras
    feed the backward pass.
    """
    deg = cloud.active_sh_degree if degree is None else degree
    v = cloud.positions - cam.center
    dist = np.linalg.norm(v, axis=1)
    dirs = v / np.maximum(dist, 1e-12)[:, None]
    basis, bgrad = shmod.sh_basis(dirs, deg)
    nb = basis.shape[1]
    raw = np.einsum("nb,nbc->nc", basis, cloud.sh[:, :nb, :]) + 0.5
    positive = raw > 0
    return np.where(positive, raw, 0.0), basis, bgrad, dirs, dist, positive


def features(cloud: GaussianCloud, cam: Camera) -> np.ndarray:
    """Per-primitive ``(N, 11)`` feature rows composited by the rasterizer."""
    rgb = view_colors(cloud, cam)[0]
    f = np.empty((len(cloud), NUM_FEATURES))
    f[:, CHANNEL_SLICES["color"]] = rgb
    f[:, 3] = cloud.structure()
    f[:, 4] = cloud.depth_attr()
    f[:, CHANNEL_SLICES["illum"]] = cloud.illumination()
    f[:, CHANNEL_SLICES["noise"]] = cloud.noise
    return f


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

SINGLE_POINT_SCALE = 0.1


def init_cloud(points, colors, max_sh_degree: int = 3) -> GaussianCloud:
    """Seed one primitive per input point.

    Isotropic scale is the mean distance to the (up to) three nearest
    neighbours; a lone point gets ``SINGLE_POINT_SCALE``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    m = pts.shape[0]
    if m == 0:
        raise ValueError("cannot initialise from an empty point set")
    if cols.shape[0] != m:
        raise ValueError("points and colors differ in length")
    if m == 1:
        scale = np.full(1, SINGLE_POINT_SCALE)
    else:
        k = min(3, m - 1)
        dist, _ = cKDTree(pts).query(pts, k=k + 1)
        scale = np.maximum(dist[:, 1:].mean(axis=1), 1e-7)
    cloud = GaussianCloud.zeros(m, max_sh_degree)
    cloud.positions = pts.copy()
    cloud.log_scales = np.repeat(np.log(scale)[:, None], 3, axis=1)
    cloud.opacity_logits[:] = logit(0.1)
    cloud.sh[:, 0, :] = shmod.rgb_to_sh0(cols)
    cloud.structure_logits[:] = logit(0.5)
    cloud.illum[:] = math.log(1.0)
    cloud.depth_logits[:] = logit(0.5)
    return cloud


def scene_extent(cameras) -> float:
    """Radius of the camera-centre cloud (3DGS ``cameras_extent`` convention)."""
    centers = np.stack([c.center for c in cameras])
    diag = np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()
    return float(diag * 1.1) if diag > 0 else 1.0


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"SPLTCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, cloud: GaussianCloud, pdm_weights, step: int) -> None:
    """Write a versioned, CRC-protected binary checkpoint.

    ``pdm_weights`` is a :class:`splatlight.pdm.PdmWeights` (or ``None``).
    The byte stream is a pure function of the inputs.
    """
    arrays = [(f"cloud.{k}", getattr(cloud, k)) for k in PARAM_FIELDS]
    if pdm_weights is not None:
        arrays += [(f"pdm.{k}", v) for k, v in pdm_weights.named_arrays()]
    meta = {
        "step": int(step),
        "active_sh_degree": int(cloud.active_sh_degree),
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    body = bytearray()
    body += CKPT_MAGIC
    body += struct.pack("<II", CKPT_VERSION, len(header))
    body += header
    for _, a in arrays:
        body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(cloud, pdm_weights, step)``."""
    from .pdm import PdmWeights

    blob = Path(path).read_bytes()
    if len(blob) < len(CKPT_MAGIC) + 12 or blob[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    off = len(CKPT_MAGIC)
    version, hlen = struct.unpack("<II", blob[off:off + 8])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    meta = json.loads(blob[off:off + hlen])
    off += hlen
    arrays = {}
    for name, shape in meta["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(blob) - 4:
            raise CheckpointError(f"{path}: truncated payload")
        arrays[name] = np.frombuffer(blob[off:off + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(blob) - 4:
        raise CheckpointError(f"{path}: trailing bytes after payload")
    cloud = GaussianCloud(active_sh_degree=meta["active_sh_degree"],
                          **{k: arrays[f"cloud.{k}"] for k in PARAM_FIELDS})
    pdm_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("pdm.")}
    weights = PdmWeights.from_named_arrays(pdm_arrays) if pdm_arrays else None
    return cloud, weights, meta["step"]


# ---------------------------------------------------------------------------
# point clouds and scene manifests
# ---------------------------------------------------------------------------

def write_ply(path, points, colors) -> None:
    """ASCII PLY with float xyz and uchar rgb (colours given in [0, 1])."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rgb = np.rint(np.clip(np.asarray(colors, dtype=np.float64), 0, 1) * 255).astype(int)
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(pts)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    lines += [f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}" for p, c in zip(pts, rgb)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an ASCII PLY vertex list; returns ``(points, colors in [0,1])``."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    props, count, i = [], None, 1
    while i < len(text):
        line = text[i].strip()
        i += 1
        if line.startswith("format") and "ascii" not in line:
            raise ValueError(f"{path}: only ASCII PLY is supported")
        if line.startswith("element vertex"):
            count = int(line.split()[2])
        elif line.startswith("property") and count is not None:
            props.append(line.split()[-1])
        elif line == "end_header":
            break
    if count is None:
        raise ValueError(f"{path}: missing vertex element")
    rows = np.array([[float(v) for v in ln.split()] for ln in text[i:i + count]]).reshape(count, len(props))
    col = {name: rows[:, j] for j, name in enumerate(props)}
    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    if all(k in col for k in ("red", "green", "blue")):
        rgb = np.stack([col["red"], col["green"], col["blue"]], axis=1) / 255.0
    else:
        rgb = np.full_like(pts, 0.5)
    return pts, rgb


@dataclass
class SceneDataset:
    """Everything a training run needs, resolved from a JSON manifest."""

    cameras: list
    images: list
    priors: list
    depths: list
    points_path: Path
    references: list = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        n = len(self.cameras)
        if n < 2:
            raise ValueError("a scene needs at least two views")
        for name in ("images", "priors", "depths"):
            lst = getattr(self, name)
            if lst and len(lst) != n:
                raise ValueError(f"manifest lists {len(lst)} {name} for {n} cameras")
        if len(self.images) != n:
            raise ValueError("every camera needs an input image")

    def missing_files(self) -> list[Path]:
        paths = list(self.images) + list(self.priors) + list(self.depths) + [self.points_path]
        return [p for p in paths if not Path(p).is_file()]

    def load_points(self):
        return read_ply(self.points_path)


def load_manifest(path) -> SceneDataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scene manifest not found: {path}")
    root = path.parent
    doc = json.loads(path.read_text())

    def resolve(lst):
        return [root / p for p in lst or []]

    ds = SceneDataset(
        cameras=[Camera.from_dict(c) for c in doc["cameras"]],
        images=resolve(doc["images"]),
        priors=resolve(doc.get("priors")),
        depths=resolve(doc.get("depths")),
        points_path=root / doc["points"],
        references=resolve(doc.get("references")),
        root=root,
    )
    missing = ds.missing_files()
    if missing:
        raise FileNotFoundError(f"manifest references missing files: {', '.join(map(str, missing))}")
    return ds


def write_manifest(path, cameras, images, priors, depths, points, references=()) -> None:
    doc = {
        "cameras": [c.to_dict() for c in cameras],
        "images": list(map(str, images)),
        "priors": list(map(str, priors)),
        "depths": list(map(str, depths)),
        "points": str(points),
    }
    if references:
        doc["references"] = list(map(str, references))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
