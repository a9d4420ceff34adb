"""Grid-partitioned images, the tile distance and the similarity tensor.

Cells are addressed with 1-based ``(t, u)`` pairs (row, column).  Internally a
cell maps to the flat bit index ``(t - 1) * N + (u - 1)``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import BoundsError, ShapeError

Cell = tuple[int, int]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.uint8, copy=True, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GridImage:
    """An RGB8 raster of size ``N*M`` square split into ``N x N`` cells."""

    pixels: np.ndarray
    grid_n: int
    cell_m: int

    def __post_init__(self):
        if self.grid_n < 1 or self.cell_m < 1:
            raise ShapeError(f"grid_n and cell_m must be >= 1, got {self.grid_n}, {self.cell_m}")
        px = np.asarray(self.pixels)
        side = self.grid_n * self.cell_m
        if px.shape != (side, side, 3):
            raise ShapeError(
                f"expected raster {side}x{side}x3 for N={self.grid_n}, M={self.cell_m}, got {px.shape}"
            )
        object.__setattr__(self, "pixels", _frozen(px))

    @classmethod
    def filled(cls, grid_n: int, cell_m: int, color: Sequence[int]) -> "GridImage":
        side = grid_n * cell_m
        px = np.empty((side, side, 3), dtype=np.uint8)
        px[...] = np.asarray(color, dtype=np.uint8)
        return cls(px, grid_n, cell_m)

    @property
    def side(self) -> int:
        return self.grid_n * self.cell_m

    def cells(self) -> Iterator[Cell]:
        for t in range(1, self.grid_n + 1):
            for u in range(1, self.grid_n + 1):
                yield (t, u)

    def check_cell(self, cell: Cell) -> None:
        t, u = cell
        if not (1 <= t <= self.grid_n and 1 <= u <= self.grid_n):
            raise BoundsError(f"cell {cell} outside [1, {self.grid_n}]^2")

    def block(self, cell: Cell) -> np.ndarray:
        """Read-only view of the M x M x 3 pixel block of ``cell``."""
        self.check_cell(cell)
        t, u = cell
        m = self.cell_m
        return self.pixels[(t - 1) * m : t * m, (u - 1) * m : u * m]

    def with_cells(self, writes: Iterable[tuple[Cell, np.ndarray]]) -> "GridImage":
        """Return a copy with the given cell blocks replaced."""
        px = np.array(self.pixels)
        m = self.cell_m
        for (t, u), tile in writes:
            self.check_cell((t, u))
            px[(t - 1) * m : t * m, (u - 1) * m : u * m] = tile
        return GridImage(px, self.grid_n, self.cell_m)

    def __eq__(self, other):
        if not isinstance(other, GridImage):
            return NotImplemented
        return (
            self.grid_n == other.grid_n
            and self.cell_m == other.cell_m
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SubImage:
    pixels: np.ndarray
    origin: Cell | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[0] != px.shape[1] or px.shape[2] != 3:
            raise ShapeError(f"sub-image must be M x M x 3, got {px.shape}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def subimage(img: GridImage, cell: Cell) -> SubImage:
    return SubImage(img.block(cell), origin=tuple(cell))


def load_png(path: str | os.PathLike, grid_n: int, cell_m: int) -> GridImage:
    """Load an 8-bit PNG as a GridImage, discarding alpha.

    The raster must be exactly ``grid_n * cell_m`` pixels on each side.
    """
    with Image.open(path) as im:
        im.load()
        width, height = im.size
        side = grid_n * cell_m
        if (width, height) != (side, side):
            raise ShapeError(
                f"{path}: image is {width}x{height}, expected {side}x{side} for N={grid_n}, M={cell_m}"
            )
        rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return GridImage(rgb, grid_n, cell_m)


def save_png(img: GridImage, path: str | os.PathLike) -> None:
    # Fixed encoder settings keep the output byte-stable.
    Image.fromarray(np.asarray(img.pixels), mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)


# --------------------------------------------------------------------------
# distance


@dataclass(frozen=True, eq=False)
class TileFeatures:
    """Per-tile quantities reused across every pair the tile takes part in."""

    cum_hist: np.ndarray  # (3, bins) normalized cumulative histograms
    gray: np.ndarray  # flattened grayscale in [0, 1], mean-centered
    gray_mean: float
    gray_ss: float  # sum of squared deviations


def tile_features(pixels: np.ndarray, hist_bins: int) -> TileFeatures:
    px = np.asarray(pixels, dtype=np.uint8)
    npix = px.shape[0] * px.shape[1]
    idx = (px.reshape(-1, 3).astype(np.int64) * hist_bins) // 256
    cum = np.empty((3, hist_bins), dtype=np.float64)
    for ch in range(3):
        hist = np.bincount(idx[:, ch], minlength=hist_bins).astype(np.float64) / npix
        cum[ch] = np.cumsum(hist)
    rgb = px.reshape(-1, 3).astype(np.float64)
    gray = (0.299 * rgb[:, 0] + 0.587 * rgb[:, 1] + 0.114 * rgb[:, 2]) / 255.0
    mean = float(gray.mean())
    centered = gray - mean
    return TileFeatures(cum, centered, mean, float(np.sum(centered * centered)))


def emd_term(fa: TileFeatures, fb: TileFeatures) -> float:
    """Mean over channels of the 1D earthmover distance, scaled to [0, 1]."""
    bins = fa.cum_hist.shape[1]
    per_channel = np.sum(np.abs(fa.cum_hist - fb.cum_hist), axis=1) / (bins - 1)
    return float(per_channel.sum() / 3.0)


def ncc(fa: TileFeatures, fb: TileFeatures) -> float:
    """Normalized cross-correlation of the grayscale tiles.

    Flat tiles have no defined correlation; they count as fully correlated
    when the mean intensities agree to within one gray level.
    """
    if fa.gray_ss == 0.0 or fb.gray_ss == 0.0:
        return 1.0 if abs(fa.gray_mean - fb.gray_mean) < 1.0 / 255.0 else 0.0
    if fa.gray_ss == fb.gray_ss and np.array_equal(fa.gray, fb.gray):
        return 1.0  # exact, where the quotient below may round to 1 - ulp
    value = float(np.sum(fa.gray * fb.gray) / np.sqrt(fa.gray_ss * fb.gray_ss))
    return min(1.0, max(-1.0, value))


def ncc_struct_term(fa: TileFeatures, fb: TileFeatures) -> float:
    return min(1.0, max(0.0, 1.0 - ncc(fa, fb)))


StructTerm = Callable[[TileFeatures, TileFeatures], float]


@dataclass(frozen=True)
class DistanceConfig:
    hist_bins: int = 16
    w_emd: float = 0.5
    w_struct: float = 0.5
    struct_term: StructTerm = field(default=ncc_struct_term, compare=False, repr=False)

    def __post_init__(self):
        if self.hist_bins < 2:
            raise ValueError(f"hist_bins must be >= 2, got {self.hist_bins}")
        if self.w_emd < 0 or self.w_struct < 0:
            raise ValueError("distance weights must be nonnegative")
        if self.w_emd + self.w_struct <= 0:
            raise ValueError("w_emd + w_struct must be positive")


def feature_distance(fa: TileFeatures, fb: TileFeatures, cfg: DistanceConfig) -> float:
    total = 0.0
    if cfg.w_emd:
        total += cfg.w_emd * emd_term(fa, fb)
    if cfg.w_struct:
        total += cfg.w_struct * cfg.struct_term(fa, fb)
    return total


def distance(a: SubImage | np.ndarray, b: SubImage | np.ndarray, cfg: DistanceConfig = DistanceConfig()) -> float:
    pa = a.pixels if isinstance(a, SubImage) else np.asarray(a)
    pb = b.pixels if isinstance(b, SubImage) else np.asarray(b)
    if pa.shape != pb.shape:
        raise ShapeError(f"sub-image shapes differ: {pa.shape} vs {pb.shape}")
    # canonical argument order makes the result exactly symmetric
    if pb.tobytes() < pa.tobytes():
        pa, pb = pb, pa
    return feature_distance(tile_features(pa, cfg.hist_bins), tile_features(pb, cfg.hist_bins), cfg)


# --------------------------------------------------------------------------
# boolean N^4 tensors as packed bitsets


class SimilarityTensor:
    """Boolean tensor over cell pairs, one N^2-bit row mask per cell.

    ``rows[i]`` has bit ``j`` set iff entry ``(cell_i, cell_j)`` is 1, with
    cells flattened row-major.  Python ints serve as arbitrary-width bitsets.
    """

    __slots__ = ("n", "rows")

    def __init__(self, n: int, rows: Sequence[int]):
        if len(rows) != n * n:
            raise ShapeError(f"expected {n * n} rows, got {len(rows)}")
        self.n = n
        self.rows = tuple(int(r) for r in rows)

    @classmethod
    def zeros(cls, n: int) -> "SimilarityTensor":
        return cls(n, [0] * (n * n))

    @classmethod
    def ones(cls, n: int) -> "SimilarityTensor":
        full = (1 << (n * n)) - 1
        return cls(n, [full] * (n * n))

    @classmethod
    def from_numpy(cls, arr: np.ndarray) -> "SimilarityTensor":
        arr = np.asarray(arr, dtype=bool)
        n = arr.shape[0]
        if arr.shape != (n, n, n, n):
            raise ShapeError(f"expected an N^4 boolean array, got {arr.shape}")
        flat = arr.reshape(n * n, n * n)
        rows = [sum(1 << j for j in np.flatnonzero(flat[i])) for i in range(n * n)]
        return cls(n, rows)

    def to_numpy(self) -> np.ndarray:
        nn = self.n * self.n
        out = np.zeros((nn, nn), dtype=bool)
        for i, r in enumerate(self.rows):
            for j in range(nn):
                if r >> j & 1:
                    out[i, j] = True
        return out.reshape(self.n, self.n, self.n, self.n)

    def index(self, cell: Cell) -> int:
        t, u = cell
        if not (1 <= t <= self.n and 1 <= u <= self.n):
            raise BoundsError(f"cell {cell} outside [1, {self.n}]^2")
        return (t - 1) * self.n + (u - 1)

    def __getitem__(self, key: tuple[int, int, int, int]) -> bool:
        t, u, t2, u2 = key
        return bool(self.rows[self.index((t, u))] >> self.index((t2, u2)) & 1)

    def popcount(self) -> int:
        return sum(r.bit_count() for r in self.rows)

    def _check(self, other: "SimilarityTensor") -> None:
        if other.n != self.n:
            raise ShapeError(f"tensor sizes differ: N={self.n} vs N={other.n}")

    def __or__(self, other: "SimilarityTensor") -> "SimilarityTensor":
        self._check(other)
        return SimilarityTensor(self.n, [a | b for a, b in zip(self.rows, other.rows)])

    def __and__(self, other: "SimilarityTensor") -> "SimilarityTensor":
        self._check(other)
        return SimilarityTensor(self.n, [a & b for a, b in zip(self.rows, other.rows)])

    def __invert__(self) -> "SimilarityTensor":
        full = (1 << (self.n * self.n)) - 1
        return SimilarityTensor(self.n, [full & ~r for r in self.rows])

    def __eq__(self, other):
        if not isinstance(other, SimilarityTensor):
            return NotImplemented
        return self.n == other.n and self.rows == other.rows

    def __hash__(self):
        return hash((self.n, self.rows))

    def __repr__(self):
        return f"SimilarityTensor(n={self.n}, popcount={self.popcount()})"

    def is_symmetric(self) -> bool:
        nn = self.n * self.n
        return all(
            (self.rows[i] >> j & 1) == (self.rows[j] >> i & 1) for i in range(nn) for j in range(i + 1, nn)
        )

    def is_reflexive(self) -> bool:
        return all(r >> i & 1 for i, r in enumerate(self.rows))


def build_similarity_tensor(
    img: GridImage,
    eps: float,
    cfg: DistanceConfig = DistanceConfig(),
    threads: int = 1,
) -> SimilarityTensor:
    """Threshold pairwise cell distances at ``eps``.

    Each unordered pair is evaluated once, in canonical (lower index first)
    order, so the result does not depend on ``threads``.
    """
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    cells = list(img.cells())
    feats = [tile_features(img.block(c), cfg.hist_bins) for c in cells]
    nn = len(cells)

    def row_bits(i: int) -> list[int]:
        fi = feats[i]
        return [j for j in range(i + 1, nn) if feature_distance(fi, feats[j], cfg) <= eps]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            upper = list(pool.map(row_bits, range(nn)))
    else:
        upper = [row_bits(i) for i in range(nn)]

    rows = [1 << i for i in range(nn)]
    for i, js in enumerate(upper):
        for j in js:
            rows[i] |= 1 << j
            rows[j] |= 1 << i
    return SimilarityTensor(img.grid_n, rows)


def pairwise_distances(img: GridImage, cfg: DistanceConfig = DistanceConfig()) -> np.ndarray:
    """Full (N^2, N^2) matrix of cell distances; used for eps calibration."""
    cells = list(img.cells())
    feats = [tile_features(img.block(c), cfg.hist_bins) for c in cells]
    nn = len(cells)
    out = np.zeros((nn, nn))
    for i in range(nn):
        for j in range(i + 1, nn):
            out[i, j] = out[j, i] = feature_distance(feats[i], feats[j], cfg)
    return out
