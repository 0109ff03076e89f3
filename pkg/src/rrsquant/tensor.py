"""Dense matrix carrier, synthetic outlier workloads and the RRST tensor file."""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numpy as np

from .errors import (
    BadMagicError,
    RankError,
    TensorFormatError,
    TrailingDataError,
    TruncatedError,
    UnsupportedDTypeError,
    UnsupportedVersionError,
    ValidationError,
)

PathLike = Union[str, os.PathLike]

MAGIC = b"RRST"
FORMAT_VERSION = 1
# element type code -> little-endian numpy dtype
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sIII")  # magic, version, dtype code, rank


class Role(str, Enum):
    ACTIVATION = "activation"
    WEIGHT = "weight"
    OUTPUT = "output"


@dataclass(frozen=True, eq=False)
class Matrix:
    """Immutable 2-D float64 matrix with a semantic role tag.

    Equality is bitwise on the payload and ignores ``role``, which the file
    format does not carry.
    """

    data: np.ndarray
    role: Role = Role.ACTIVATION

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2:
            raise ValidationError(f"Matrix must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("Matrix entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "role", Role(self.role))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Matrix(rows={self.rows}, cols={self.cols}, role={self.role.value})"


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

OUTLIER_KINDS = ("none", "channel", "spike", "mixed")
BASE_KINDS = ("gaussian", "constant")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded activation-like matrix.

    ``base="gaussian"`` draws ``sigma * N(0, 1)``; ``base="constant"`` fills
    every entry with ``epsilon``. Channel outliers live in ``channels``
    (column indices), spikes at ``spikes`` ((row, col) pairs).

    By default outlier cells are the base value times ``magnitude``. With
    ``coherent=True`` on a gaussian base each outlier column instead carries a
    fixed sign and a near-constant magnitude ``magnitude * sigma * (1 + jitter*z)``
    for every token, the way massive channels look in real activations; spike
    cells get a random sign and the same magnitude law.

    ``spike_magnitude`` (default: ``magnitude``) sets the spike multiplier
    separately, so a mixed matrix can pair mild channels with huge spikes.
    """

    rows: int
    cols: int
    outlier: str = "none"
    channels: tuple[int, ...] = ()
    spikes: tuple[tuple[int, int], ...] = ()
    magnitude: float = 1.0
    sigma: float = 1.0
    base: str = "gaussian"
    epsilon: float = 1.0
    coherent: bool = False
    jitter: float = 0.0
    spike_magnitude: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(
            self, "spikes", tuple((int(i), int(j)) for i, j in self.spikes)
        )
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("rows and cols must be >= 1")
        if self.outlier not in OUTLIER_KINDS:
            raise ValidationError(f"outlier kind must be one of {OUTLIER_KINDS}")
        if self.base not in BASE_KINDS:
            raise ValidationError(f"base must be one of {BASE_KINDS}")
        if not self.magnitude >= 1.0:
            raise ValidationError("magnitude multiplier must be >= 1")
        if self.spike_magnitude is not None and not self.spike_magnitude >= 1.0:
            raise ValidationError("spike magnitude multiplier must be >= 1")
        if self.sigma < 0 or self.jitter < 0:
            raise ValidationError("sigma and jitter must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")
        for c in self.channels:
            if not 0 <= c < self.cols:
                raise ValidationError(f"outlier channel {c} outside [0, {self.cols})")
        if len(set(self.channels)) != len(self.channels):
            raise ValidationError("outlier channels must be distinct")
        for i, j in self.spikes:
            if not (0 <= i < self.rows and 0 <= j < self.cols):
                raise ValidationError(
                    f"spike ({i}, {j}) outside {self.rows}x{self.cols}"
                )
        if self.outlier in ("channel", "mixed") and not self.channels:
            raise ValidationError(f"outlier={self.outlier!r} needs channels")
        if self.outlier in ("spike", "mixed") and not self.spikes:
            raise ValidationError(f"outlier={self.outlier!r} needs spikes")


def generate(spec: SyntheticSpec) -> Matrix:
    """Materialise ``spec``; a pure function of the spec (seed included)."""
    rng = np.random.default_rng(spec.seed)
    if spec.base == "constant":
        x = np.full((spec.rows, spec.cols), float(spec.epsilon))
    else:
        x = spec.sigma * rng.standard_normal((spec.rows, spec.cols))

    # the gaussian base is drawn first so that the same seed shares it
    # across outlier kinds
    coherent = spec.coherent and spec.base == "gaussian"
    if spec.outlier in ("channel", "mixed"):
        cols = np.asarray(spec.channels)
        if coherent:
            signs = rng.choice([-1.0, 1.0], size=cols.size)
            z = rng.standard_normal((spec.rows, cols.size))
            x[:, cols] = spec.magnitude * spec.sigma * signs * (1.0 + spec.jitter * z)
        else:
            x[:, cols] *= spec.magnitude
    if spec.outlier in ("spike", "mixed"):
        rows, cols = np.asarray(spec.spikes).T
        mag = spec.magnitude if spec.spike_magnitude is None else spec.spike_magnitude
        if coherent:
            signs = rng.choice([-1.0, 1.0], size=rows.size)
            z = rng.standard_normal(rows.size)
            x[rows, cols] = mag * spec.sigma * signs * (1.0 + spec.jitter * z)
        else:
            x[rows, cols] *= mag
    return Matrix(x, Role.ACTIVATION)


def random_layout(
    rows: int,
    cols: int,
    n_channels: int = 0,
    n_spikes: int = 0,
    seed: int = 0,
    spike_tokens: int | None = None,
) -> tuple[tuple[int, ...], tuple[tuple[int, int], ...]]:
    """Pick ``n_channels`` distinct columns and ``n_spikes`` distinct cells.

    With ``spike_tokens`` the spikes are confined to that many random rows,
    spread as evenly as possible (so a token can carry several spikes).
    Uses its own stream derived from ``seed`` so it never perturbs the draws
    made by :func:`generate`.
    """
    if not 0 <= n_channels <= cols:
        raise ValidationError(f"cannot pick {n_channels} channels from {cols}")
    rng = np.random.default_rng([seed, 0x5EED])
    channels = np.sort(rng.choice(cols, size=n_channels, replace=False))
    if spike_tokens is None:
        if not 0 <= n_spikes <= rows * cols:
            raise ValidationError(f"cannot place {n_spikes} spikes in {rows}x{cols}")
        flat = np.sort(rng.choice(rows * cols, size=n_spikes, replace=False))
        spikes = tuple((int(f // cols), int(f % cols)) for f in flat)
    else:
        if not 1 <= spike_tokens <= rows:
            raise ValidationError(f"spike_tokens must be in [1, {rows}]")
        per_row = -(-n_spikes // spike_tokens)
        if per_row > cols:
            raise ValidationError(f"{per_row} spikes do not fit in a {cols}-wide token")
        token_ids = np.sort(rng.choice(rows, size=spike_tokens, replace=False))
        cells = []
        for r, row in enumerate(token_ids):
            count = n_spikes // spike_tokens + (r < n_spikes % spike_tokens)
            for c in np.sort(rng.choice(cols, size=count, replace=False)):
                cells.append((int(row), int(c)))
        spikes = tuple(cells)
    return tuple(int(c) for c in channels), spikes


# ---------------------------------------------------------------------------
# RRST binary format
# ---------------------------------------------------------------------------
#   magic "RRST" | u32 version | u32 dtype code | u32 rank | u64 dims[rank] | payload
# all little-endian, payload row-major


def _encode(m: Matrix, dtype_code: int) -> bytes:
    if dtype_code not in DTYPE_CODES:
        raise ValidationError(f"unknown element type code {dtype_code}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, dtype_code, 2)
    dims = struct.pack("<2Q", m.rows, m.cols)
    payload = np.ascontiguousarray(m.data, dtype=DTYPE_CODES[dtype_code]).tobytes()
    return header + dims + payload


def write_tensor(
    m: Matrix | np.ndarray,
    destination: PathLike | BinaryIO,
    dtype_code: int = 1,
) -> None:
    """Serialise ``m``. Paths are written atomically (temp file + rename)."""
    if not isinstance(m, Matrix):
        m = Matrix(m)
    blob = _encode(m, dtype_code)
    if hasattr(destination, "write"):
        destination.write(blob)  # type: ignore[union-attr]
        return
    path = Path(destination)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensor(source: PathLike | BinaryIO | bytes, role: Role = Role.ACTIVATION) -> Matrix:
    if isinstance(source, (bytes, bytearray, memoryview)):
        blob = bytes(source)
    elif hasattr(source, "read"):
        blob = source.read()  # type: ignore[union-attr]
    else:
        blob = Path(source).read_bytes()
    return _decode(blob, role)


def _decode(blob: bytes, role: Role) -> Matrix:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < _HEADER.size:
        raise TruncatedError("file ends inside the header")
    _, version, code, rank = _HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} not supported")
    if code not in DTYPE_CODES:
        raise UnsupportedDTypeError(f"element type code {code} not supported")
    if rank != 2:
        raise RankError(f"rank {rank} not supported (must be 2)")
    off = _HEADER.size
    if len(blob) < off + 16:
        raise TruncatedError("file ends inside the dimension table")
    rows, cols = struct.unpack_from("<2Q", blob, off)
    off += 16
    dtype = DTYPE_CODES[code]
    expected = rows * cols * dtype.itemsize
    available = len(blob) - off
    if available < expected:
        raise TruncatedError(
            f"payload has {available // dtype.itemsize} elements, "
            f"header declares {rows}x{cols}={rows * cols}"
        )
    if available > expected:
        raise TrailingDataError(f"{available - expected} bytes after payload")
    data = np.frombuffer(blob, dtype=dtype, count=rows * cols, offset=off)
    data = data.reshape(rows, cols)
    try:
        return Matrix(data, role)
    except ValidationError as exc:
        raise TensorFormatError(str(exc)) from exc


def encode_tensor(m: Matrix | np.ndarray, dtype_code: int = 1) -> bytes:
    buf = io.BytesIO()
    write_tensor(m, buf, dtype_code)
    return buf.getvalue()


def as_array(x: Matrix | np.ndarray | Sequence) -> np.ndarray:
    """Coerce to a 2-D float64 ndarray (no copy when already one)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr
