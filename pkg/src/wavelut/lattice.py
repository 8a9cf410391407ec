"""3D/4D lookup-table lattices, interpolation, and basis fusion.

Conventions:
    * Lattice values are stored ``values[r, g, b(, e), ch]`` with ``ch``
      the output RGB channel. Sampling axes are float32 and strictly
      increasing from 0 to 1.
    * The serialized order (and the layout fed to the kernels) is
      R-fastest: ``flat = ((e*n + b)*n + g)*n + r``.
    * Interpolation loads float32 storage, blends in float64, and writes
      float32 results, so a query exactly on a grid point reproduces the
      stored value bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import FormatError, InvalidArgumentError, ShapeError

WLUT4D_MAGIC = b"WLUT4D\x00"
WLUT4D_VERSION = 1
AXIS_UNIFORM = 0
AXIS_EXPLICIT = 1

DEFAULT_LATTICE_SIZE = 17
DEFAULT_BASIS_COUNT = 3


# ---------------------------------------------------------------------------
# Coordinate axes and lookup
# ---------------------------------------------------------------------------

def uniform_axis(n: int) -> np.ndarray:
    """Uniform sampling coordinates 0..1 with n points (float32)."""
    if n < 2:
        raise InvalidArgumentError(f"axis needs at least 2 points, got {n}")
    return np.linspace(0.0, 1.0, n, dtype=np.float32)


def as_axis(coords) -> np.ndarray:
    """Validate sampling coordinates: float32, strictly increasing, 0..1."""
    axis = np.asarray(coords, dtype=np.float32)
    if axis.ndim != 1 or axis.shape[0] < 2:
        raise InvalidArgumentError("axis must be 1-D with at least 2 points")
    if not np.all(np.isfinite(axis)):
        raise InvalidArgumentError("axis coordinates must be finite")
    if axis[0] != 0.0 or axis[-1] != 1.0:
        raise InvalidArgumentError("axis must start at 0 and end at 1")
    if not np.all(np.diff(axis) > 0):
        raise InvalidArgumentError("axis must be strictly increasing")
    axis.flags.writeable = False
    return axis


@dataclass
class ApplyStats:
    """Per-call record of inputs that had to be clamped into [0, 1]."""

    clamped: int = 0

    def add(self, count: int) -> None:
        self.clamped += int(count)


def locate_index(axis: np.ndarray, v: float, stats: ApplyStats | None = None):
    """Find the lattice cell containing v by binary search.

    Returns ``(index, offset)`` with ``coords[index] <= v <= coords[index+1]``
    and ``offset = (v - coords[index]) / (coords[index+1] - coords[index])``.
    A value exactly on an interior grid coordinate resolves to that cell
    with offset 0; v = 1 resolves to index n-2 with offset 1. Out-of-range
    values are clamped and flagged on ``stats``.
    """
    if v < 0.0 or v > 1.0:
        if stats is not None:
            stats.add(1)
        v = min(max(v, 0.0), 1.0)
    i = int(np.searchsorted(axis, v, side="right")) - 1
    i = min(max(i, 0), axis.shape[0] - 2)
    lo = float(axis[i])
    hi = float(axis[i + 1])
    return i, (v - lo) / (hi - lo)


def _locate_grid(axis: np.ndarray, v: np.ndarray):
    """Vectorized cell lookup (float64 offsets) for an array of values."""
    v = np.clip(v, 0.0, 1.0)
    idx = np.searchsorted(axis, v, side="right") - 1
    np.clip(idx, 0, axis.shape[0] - 2, out=idx)
    lo = axis[idx].astype(np.float64)
    hi = axis[idx + 1].astype(np.float64)
    off = (v.astype(np.float64) - lo) / (hi - lo)
    return idx, off


# ---------------------------------------------------------------------------
# Lattice containers
# ---------------------------------------------------------------------------

def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Lattice3D:
    """n³ grid of output RGB triples indexed by (R, G, B)."""

    values: np.ndarray  # (n, n, n, 3) float32 or float64
    axes: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        v = self.values
        if v.ndim != 4 or v.shape[-1] != 3 or len(set(v.shape[:3])) != 1:
            raise ShapeError(f"expected (n, n, n, 3) values, got {v.shape}")
        if v.shape[0] < 2:
            raise InvalidArgumentError("lattice needs n >= 2")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("lattice values must be finite")
        axes = tuple(as_axis(a) for a in self.axes)
        for a in axes:
            if a.shape[0] != v.shape[0]:
                raise ShapeError("axis length must equal lattice size")
        object.__setattr__(self, "values", _freeze(v))
        object.__setattr__(self, "axes", axes)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @cached_property
    def _kernel_values(self) -> np.ndarray:
        # flat file order ((b*n + g)*n + r)*3 + ch, float32
        return np.ascontiguousarray(
            self.values.transpose(2, 1, 0, 3), dtype=np.float32
        ).reshape(-1)

    @cached_property
    def _inv_deltas(self) -> tuple[np.ndarray, ...]:
        return tuple(1.0 / np.diff(a.astype(np.float64)) for a in self.axes)

    @cached_property
    def _uniform(self) -> bool:
        u = uniform_axis(self.n)
        return all(np.array_equal(a, u) for a in self.axes)


@dataclass(frozen=True)
class Lattice4D:
    """n⁴ grid of output RGB triples indexed by (R, G, B, E)."""

    values: np.ndarray  # (n, n, n, n, 3) float32 or float64
    axes: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        v = self.values
        if v.ndim != 5 or v.shape[-1] != 3 or len(set(v.shape[:4])) != 1:
            raise ShapeError(f"expected (n, n, n, n, 3) values, got {v.shape}")
        if v.shape[0] < 2:
            raise InvalidArgumentError("lattice needs n >= 2")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("lattice values must be finite")
        axes = tuple(as_axis(a) for a in self.axes)
        for a in axes:
            if a.shape[0] != v.shape[0]:
                raise ShapeError("axis length must equal lattice size")
        object.__setattr__(self, "values", _freeze(v))
        object.__setattr__(self, "axes", axes)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @cached_property
    def _kernel_values(self) -> np.ndarray:
        # flat file order (((e*n + b)*n + g)*n + r)*3 + ch, float32
        return np.ascontiguousarray(
            self.values.transpose(3, 2, 1, 0, 4), dtype=np.float32
        ).reshape(-1)

    @cached_property
    def _inv_deltas(self) -> tuple[np.ndarray, ...]:
        return tuple(1.0 / np.diff(a.astype(np.float64)) for a in self.axes)

    @cached_property
    def _uniform(self) -> bool:
        u = uniform_axis(self.n)
        return all(np.array_equal(a, u) for a in self.axes)

    def has_uniform_axes(self) -> bool:
        return self._uniform


def identity_lattice3d(n: int) -> Lattice3D:
    """Identity 3D LUT: every grid point maps to its own coordinates."""
    if n < 2:
        raise InvalidArgumentError(f"lattice needs n >= 2, got {n}")
    c = uniform_axis(n)
    r, g, b = np.meshgrid(c, c, c, indexing="ij")
    values = np.stack([r, g, b], axis=-1).astype(np.float32)
    return Lattice3D(values=values, axes=(c, c, c))


def identity_lattice4d(n: int) -> Lattice4D:
    """Identity 4D LUT: output equals the (R, G, B) coordinates, E inert."""
    if n < 2:
        raise InvalidArgumentError(f"lattice needs n >= 2, got {n}")
    c = uniform_axis(n)
    r, g, b, _ = np.meshgrid(c, c, c, c, indexing="ij")
    values = np.stack([r, g, b], axis=-1).astype(np.float32)
    return Lattice4D(values=values, axes=(c, c, c, c))


# ---------------------------------------------------------------------------
# Applying lattices to frames
# ---------------------------------------------------------------------------

def _check_frame(frame: np.ndarray) -> np.ndarray:
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) frame, got {frame.shape}")
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise ShapeError("frame must be non-empty")
    return np.ascontiguousarray(frame, dtype=np.float32)


def trilinear_apply(
    lut: Lattice3D, frame: np.ndarray, stats: ApplyStats | None = None
) -> np.ndarray:
    """Map a frame through a 3D LUT with trilinear interpolation.

    Out-of-range inputs are clamped to [0, 1] and counted on ``stats``.
    """
    frame = _check_frame(frame)
    out = np.empty_like(frame)
    inv = lut._inv_deltas
    clamped = _kernels.tri_apply_kernel(
        lut._kernel_values,
        lut.axes[0],
        lut.axes[1],
        lut.axes[2],
        inv[0],
        inv[1],
        inv[2],
        lut._uniform,
        frame,
        out,
    )
    if stats is not None:
        stats.add(clamped)
    return out


def quadrilinear_apply(
    lut: Lattice4D,
    frame: np.ndarray,
    prior: np.ndarray,
    stats: ApplyStats | None = None,
) -> np.ndarray:
    """Map a frame through a 4D LUT indexed by (R, G, B, prior).

    Each pixel blends the 16 lattice entries around its (R, G, B, E)
    query with weights that are products of per-axis offsets; the 16
    weights sum to 1.
    """
    frame = _check_frame(frame)
    prior = np.ascontiguousarray(prior, dtype=np.float32)
    if prior.shape != frame.shape[:2]:
        raise ShapeError(
            f"prior shape {prior.shape} does not match frame {frame.shape[:2]}"
        )
    out = np.empty_like(frame)
    inv = lut._inv_deltas
    clamped = _kernels.quad_apply_kernel(
        lut._kernel_values,
        lut.axes[0],
        lut.axes[1],
        lut.axes[2],
        lut.axes[3],
        inv[0],
        inv[1],
        inv[2],
        inv[3],
        lut._uniform,
        frame,
        prior,
        out,
    )
    if stats is not None:
        stats.add(clamped)
    return out


def quad_corner_weights(lut: Lattice4D, points: np.ndarray):
    """Corner indices and blend weights for a batch of (R, G, B, E) points.

    Returns ``(indices, weights)`` of shape (M, 16): flat indices into the
    ``values.reshape(-1, 3)`` array (r, g, b, e layout) and float64 weights.
    Used by the fitting loop, where the interpolation geometry is fixed
    while the lattice values change.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ShapeError(f"expected (M, 4) points, got {pts.shape}")
    n = lut.n
    m = pts.shape[0]
    idx4 = np.empty((m, 4), dtype=np.int64)
    off4 = np.empty((m, 4), dtype=np.float64)
    for d in range(4):
        idx4[:, d], off4[:, d] = _locate_grid(lut.axes[d], pts[:, d])

    indices = np.empty((m, 16), dtype=np.int64)
    weights = np.empty((m, 16), dtype=np.float64)
    k = 0
    for dr in (0, 1):
        wr = off4[:, 0] if dr else 1.0 - off4[:, 0]
        for dg in (0, 1):
            wg = off4[:, 1] if dg else 1.0 - off4[:, 1]
            for db in (0, 1):
                wb = off4[:, 2] if db else 1.0 - off4[:, 2]
                for de in (0, 1):
                    we = off4[:, 3] if de else 1.0 - off4[:, 3]
                    flat = (
                        ((idx4[:, 0] + dr) * n + (idx4[:, 1] + dg)) * n
                        + (idx4[:, 2] + db)
                    ) * n + (idx4[:, 3] + de)
                    indices[:, k] = flat
                    weights[:, k] = wr * wg * wb * we
                    k += 1
    return indices, weights


def apply_points(lut: Lattice4D, points: np.ndarray) -> np.ndarray:
    """Evaluate the lattice at (M, 4) query points in float64."""
    indices, weights = quad_corner_weights(lut, points)
    flat = lut.values.reshape(-1, 3).astype(np.float64)
    return np.einsum("mk,mkc->mc", weights, flat[indices])


# ---------------------------------------------------------------------------
# Basis fusion
# ---------------------------------------------------------------------------

def merge_weights(a: np.ndarray, b: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Merge the video weights A and the wavelet weights B."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"weight shapes differ: {a.shape} vs {b.shape}")
    if mode == "mean":
        return (a + b) / 2.0
    if mode == "sum":
        return a + b
    raise InvalidArgumentError(f"unknown merge mode {mode!r}")


@dataclass(frozen=True)
class FusionWeights:
    """Predicted basis-LUT weights: video path, wavelet path, and merged."""

    a: np.ndarray
    b: np.ndarray
    merged: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "merged"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1:
                raise ShapeError(f"{name} must be a 1-D weight vector")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name} weights must be finite")
            object.__setattr__(self, name, _freeze(arr))

    @classmethod
    def from_merged(cls, merged) -> "FusionWeights":
        """Build weights with an explicitly chosen merged vector."""
        m = np.asarray(merged, dtype=np.float64)
        return cls(a=m, b=m, merged=m)


def make_fusion_weights(a, b, mode: str = "mean") -> FusionWeights:
    return FusionWeights(a=a, b=b, merged=merge_weights(a, b, mode))


def fuse_basis_luts(bases: list[Lattice4D], weights: FusionWeights) -> Lattice4D:
    """Blend basis lattices element-wise with the merged weights."""
    if not bases:
        raise InvalidArgumentError("need at least one basis lattice")
    if weights.merged.shape[0] != len(bases):
        raise InvalidArgumentError(
            f"{len(bases)} bases but {weights.merged.shape[0]} merged weights"
        )
    n = bases[0].n
    for k, basis in enumerate(bases[1:], start=1):
        if basis.n != n:
            raise ShapeError(f"basis {k} has n={basis.n}, expected {n}")
        for d in range(4):
            if not np.array_equal(basis.axes[d], bases[0].axes[d]):
                raise ShapeError(f"basis {k} axes differ from basis 0")

    acc = np.zeros(bases[0].values.shape, dtype=np.float64)
    for k, basis in enumerate(bases):
        acc += weights.merged[k] * basis.values.astype(np.float64)
    dtype = np.result_type(*(b.values.dtype for b in bases))
    return Lattice4D(values=acc.astype(dtype), axes=bases[0].axes)


# ---------------------------------------------------------------------------
# WLUT4D file format
# ---------------------------------------------------------------------------

def save_lattice4d(lut: Lattice4D, path) -> None:
    """Write a lattice in the WLUT4D binary format.

    Layout: magic ``WLUT4D\\0``, version u16 LE, n u16 LE, axis-mode u8
    (0 = uniform, 1 = explicit), then for explicit mode 4*n axis float32
    LE (R, G, B, E order), then n⁴*3 float32 LE values with R fastest:
    ``flat = ((e*n + b)*n + g)*n + r``. Round-trips are bit-exact.
    """
    mode = AXIS_UNIFORM if lut.has_uniform_axes() else AXIS_EXPLICIT
    file_values = np.ascontiguousarray(
        lut.values.transpose(3, 2, 1, 0, 4), dtype="<f4"
    )
    with open(path, "wb") as fh:
        fh.write(WLUT4D_MAGIC)
        fh.write(struct.pack("<HHB", WLUT4D_VERSION, lut.n, mode))
        if mode == AXIS_EXPLICIT:
            for axis in lut.axes:
                fh.write(axis.astype("<f4").tobytes())
        fh.write(file_values.tobytes())


def load_lattice4d(path) -> Lattice4D:
    """Read a WLUT4D file back into a lattice."""
    raw = Path(path).read_bytes()
    if len(raw) < len(WLUT4D_MAGIC) + 5:
        raise FormatError(f"{path}: truncated WLUT4D header")
    if raw[: len(WLUT4D_MAGIC)] != WLUT4D_MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    version, n, mode = struct.unpack_from("<HHB", raw, len(WLUT4D_MAGIC))
    if version != WLUT4D_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = len(WLUT4D_MAGIC) + 5
    if mode == AXIS_EXPLICIT:
        axes = []
        for _ in range(4):
            axes.append(np.frombuffer(raw, dtype="<f4", count=n, offset=pos))
            pos += 4 * n
        axes = tuple(axes)
    elif mode == AXIS_UNIFORM:
        c = uniform_axis(n)
        axes = (c, c, c, c)
    else:
        raise FormatError(f"{path}: unknown axis mode {mode}")
    count = n**4 * 3
    if len(raw) - pos != count * 4:
        raise FormatError(
            f"{path}: expected {count * 4} value bytes, found {len(raw) - pos}"
        )
    file_values = np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
    values = file_values.reshape(n, n, n, n, 3).transpose(3, 2, 1, 0, 4)
    return Lattice4D(values=values, axes=axes)


def resample_lattice4d(lut: Lattice4D, n_new: int) -> Lattice4D:
    """Resample a lattice onto a uniform grid of a different size."""
    if n_new < 2:
        raise InvalidArgumentError(f"lattice needs n >= 2, got {n_new}")
    c = uniform_axis(n_new)
    grid = np.stack(
        [g.ravel() for g in np.meshgrid(c, c, c, c, indexing="ij")], axis=-1
    )
    values = apply_points(lut, grid).reshape(n_new, n_new, n_new, n_new, 3)
    return Lattice4D(values=values.astype(np.float32), axes=(c, c, c, c))
