"""The loop DSL: sketches, components, programs, execution and text format.

A sketch is the doubly nested loop::

    for (i, j) in [1..n] x [1..n2]:
        draw(a*i + b, a2*j + b2, ??)

and a program is an ordered list of (sketch, component) pairs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import BoundsError, ParseError, ResolutionError, ShapeError
from .grid import Cell, GridImage, SimilarityTensor

HEADER = "gridsynth-program v1"


@dataclass(frozen=True, order=True)
class Sketch:
    n: int
    a: int
    b: int
    n2: int
    a2: int
    b2: int

    def as_tuple(self) -> tuple[int, int, int, int, int, int]:
        return (self.n, self.a, self.b, self.n2, self.a2, self.b2)

    def validate(self, grid_n: int) -> None:
        if self.n < 1 or self.n2 < 1:
            raise BoundsError(f"{self}: loop counts must be >= 1")
        if self.a < 1 or self.a2 < 1:
            raise BoundsError(f"{self}: strides must be >= 1")
        if self.b < 0 or self.b2 < 0:
            raise BoundsError(f"{self}: offsets must be >= 0")
        if self.a * self.n + self.b > grid_n:
            raise BoundsError(f"{self}: a*n+b = {self.a * self.n + self.b} exceeds N={grid_n}")
        if self.a2 * self.n2 + self.b2 > grid_n:
            raise BoundsError(f"{self}: a2*n2+b2 = {self.a2 * self.n2 + self.b2} exceeds N={grid_n}")

    def is_valid(self, grid_n: int) -> bool:
        try:
            self.validate(grid_n)
        except BoundsError:
            return False
        return True

    def rows(self) -> list[int]:
        return [self.a * i + self.b for i in range(1, self.n + 1)]

    def cols(self) -> list[int]:
        return [self.a2 * j + self.b2 for j in range(1, self.n2 + 1)]

    def cells(self) -> list[Cell]:
        """Cells in loop execution order (i outer, j inner)."""
        cols = self.cols()
        return [(t, u) for t in self.rows() for u in cols]


def cover(s: Sketch) -> frozenset[Cell]:
    return frozenset(s.cells())


def cover_mask(s: Sketch, grid_n: int) -> int:
    """Cover as an N^2-bit mask (bit ``(t-1)*N + (u-1)``)."""
    mask = 0
    cols = s.cols()
    for t in s.rows():
        base = (t - 1) * grid_n - 1
        for u in cols:
            mask |= 1 << (base + u)
    return mask


def mask_cells(mask: int, grid_n: int) -> list[Cell]:
    out = []
    while mask:
        low = mask & -mask
        i = low.bit_length() - 1
        out.append((i // grid_n + 1, i % grid_n + 1))
        mask ^= low
    return out


def cells_mask(cells: Iterable[Cell], grid_n: int) -> int:
    mask = 0
    for t, u in cells:
        mask |= 1 << ((t - 1) * grid_n + (u - 1))
    return mask


@dataclass(frozen=True)
class Component:
    """Either a reference to a source-image cell or embedded RGB8 pixels."""

    cell: Cell | None = None
    raw: bytes | None = None

    def __post_init__(self):
        if (self.cell is None) == (self.raw is None):
            raise ValueError("a component is exactly one of cell or raw")
        if self.cell is not None:
            object.__setattr__(self, "cell", (int(self.cell[0]), int(self.cell[1])))

    @classmethod
    def from_pixels(cls, pixels: np.ndarray) -> "Component":
        px = np.ascontiguousarray(pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[0] != px.shape[1] or px.shape[2] != 3:
            raise ShapeError(f"component pixels must be M x M x 3, got {px.shape}")
        return cls(raw=px.tobytes())

    def resolve(self, cell_m: int, source: GridImage | None = None) -> np.ndarray:
        if self.raw is not None:
            if len(self.raw) != cell_m * cell_m * 3:
                raise ShapeError(f"embedded component has {len(self.raw)} bytes, expected {cell_m * cell_m * 3}")
            return np.frombuffer(self.raw, dtype=np.uint8).reshape(cell_m, cell_m, 3)
        if source is None:
            raise ResolutionError(f"component cell:{self.cell[0]},{self.cell[1]} needs a source image")
        if source.cell_m != cell_m:
            raise ShapeError(f"source image has M={source.cell_m}, program has M={cell_m}")
        try:
            return source.block(self.cell)
        except BoundsError as exc:
            raise ResolutionError(str(exc)) from exc


Pair = tuple[Sketch, Component]


@dataclass(frozen=True)
class Program:
    pairs: tuple[Pair, ...]
    grid_n: int
    cell_m: int

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((s, c) for s, c in self.pairs))
        if self.grid_n < 1 or self.cell_m < 1:
            raise ShapeError("grid_n and cell_m must be >= 1")
        for s, c in self.pairs:
            s.validate(self.grid_n)
            if c.raw is not None and len(c.raw) != self.cell_m * self.cell_m * 3:
                raise ShapeError(
                    f"embedded component has {len(c.raw)} bytes, expected {self.cell_m * self.cell_m * 3}"
                )

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sketches(self) -> list[Sketch]:
        return [s for s, _ in self.pairs]

    def cover_union(self) -> frozenset[Cell]:
        out: set[Cell] = set()
        for s, _ in self.pairs:
            out.update(s.cells())
        return frozenset(out)

    def append(self, sketch: Sketch, component: Component) -> "Program":
        return Program(self.pairs + ((sketch, component),), self.grid_n, self.cell_m)


def sketch_tensor(s: Sketch, grid_n: int) -> SimilarityTensor:
    s.validate(grid_n)
    mask = cover_mask(s, grid_n)
    rows = [mask if mask >> i & 1 else 0 for i in range(grid_n * grid_n)]
    return SimilarityTensor(grid_n, rows)


def program_tensor(p: Program) -> SimilarityTensor:
    nn = p.grid_n * p.grid_n
    rows = [0] * nn
    for s, _ in p.pairs:
        mask = cover_mask(s, p.grid_n)
        m = mask
        while m:
            low = m & -m
            rows[low.bit_length() - 1] |= mask
            m ^= low
    return SimilarityTensor(p.grid_n, rows)


# --------------------------------------------------------------------------
# execution


@dataclass(frozen=True, eq=False)
class StructureRendering:
    image: GridImage
    covered: np.ndarray  # (N, N) bool, [t-1, u-1]

    def __post_init__(self):
        cov = np.array(self.covered, dtype=bool)
        cov.setflags(write=False)
        object.__setattr__(self, "covered", cov)


def _background(p: Program, background) -> GridImage:
    if isinstance(background, GridImage):
        if background.grid_n != p.grid_n or background.cell_m != p.cell_m:
            raise ShapeError(
                f"background grid N={background.grid_n}, M={background.cell_m} "
                f"does not match program N={p.grid_n}, M={p.cell_m}"
            )
        return background
    return GridImage.filled(p.grid_n, p.cell_m, background)


def _render(p: Program, base: GridImage, source: GridImage | None, writable: np.ndarray | None) -> StructureRendering:
    px = np.array(base.pixels)
    m = p.cell_m
    covered = np.zeros((p.grid_n, p.grid_n), dtype=bool)
    for s, c in p.pairs:
        tile = c.resolve(m, source)
        for t, u in s.cells():
            if writable is not None and not writable[t - 1, u - 1]:
                continue
            px[(t - 1) * m : t * m, (u - 1) * m : u * m] = tile
            covered[t - 1, u - 1] = True
    return StructureRendering(GridImage(px, p.grid_n, p.cell_m), covered)


def execute(p: Program, background=(0, 0, 0), source: GridImage | None = None) -> StructureRendering:
    """Run the program over ``background`` (a GridImage or an RGB color).

    Pairs run in list order and loop iterations row-major, so later writes win
    where covers overlap.  ``cell:`` components are looked up in ``source``.
    """
    return _render(p, _background(p, background), source, None)


def execute_onto(
    p: Program,
    partial: GridImage,
    known_mask: np.ndarray,
    source: GridImage | None = None,
) -> StructureRendering:
    """Render onto a partial image without touching known cells.

    The covered mask records only cells the program actually wrote.
    """
    known = np.asarray(known_mask, dtype=bool)
    if known.shape != (p.grid_n, p.grid_n):
        raise ShapeError(f"known mask is {known.shape}, expected ({p.grid_n}, {p.grid_n})")
    base = _background(p, partial)
    return _render(p, base, partial if source is None else source, ~known)


# --------------------------------------------------------------------------
# text format

_KEYS = ("n", "a", "b", "n2", "a2", "b2", "comp")
_HEADER_RE = re.compile(r"^gridsynth-program v1 N=(\S+) M=(\S+)$")
_INT_RE = re.compile(r"^(0|[1-9][0-9]*)$")


def serialize(p: Program) -> str:
    lines = [f"{HEADER} N={p.grid_n} M={p.cell_m}"]
    for s, c in p.pairs:
        if c.cell is not None:
            comp = f"cell:{c.cell[0]},{c.cell[1]}"
        else:
            comp = "raw:" + c.raw.hex()
        lines.append(f"loop n={s.n} a={s.a} b={s.b} n2={s.n2} a2={s.a2} b2={s.b2} comp={comp}")
    return "\n".join(lines) + "\n"


def _parse_int(text: str, field: str, lineno: int) -> int:
    if not _INT_RE.match(text):
        raise ParseError(f"field {field}: expected a nonnegative integer, got {text!r}", lineno)
    return int(text)


def _parse_component(spec: str, cell_m: int, grid_n: int, lineno: int) -> Component:
    if spec.startswith("cell:"):
        parts = spec[5:].split(",")
        if len(parts) != 2:
            raise ParseError(f"field comp: malformed cell reference {spec!r}", lineno)
        t = _parse_int(parts[0], "comp", lineno)
        u = _parse_int(parts[1], "comp", lineno)
        if not (1 <= t <= grid_n and 1 <= u <= grid_n):
            raise ParseError(f"field comp: cell ({t},{u}) outside [1,{grid_n}]^2", lineno)
        return Component(cell=(t, u))
    if spec.startswith("raw:"):
        payload = spec[4:]
        expected = 2 * 3 * cell_m * cell_m
        if len(payload) != expected:
            raise ParseError(f"field comp: raw payload has {len(payload)} hex digits, expected {expected} for M={cell_m}", lineno)
        try:
            raw = bytes.fromhex(payload)
        except ValueError:
            raise ParseError("field comp: raw payload is not hexadecimal", lineno) from None
        return Component(raw=raw)
    raise ParseError(f"field comp: unknown component kind {spec!r}", lineno)


def parse(text: str) -> Program:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty program text", 1)
    m = _HEADER_RE.match(lines[0])
    if not m:
        raise ParseError(f"bad header {lines[0]!r}, expected '{HEADER} N=<int> M=<int>'", 1)
    grid_n = _parse_int(m.group(1), "N", 1)
    cell_m = _parse_int(m.group(2), "M", 1)
    if grid_n < 1:
        raise ParseError("field N: must be >= 1", 1)
    if cell_m < 1:
        raise ParseError("field M: must be >= 1", 1)

    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split(" ")
        if tokens[0] != "loop":
            raise ParseError(f"expected 'loop', got {tokens[0]!r}", lineno)
        fields: dict[str, str] = {}
        for tok in tokens[1:]:
            key, sep, value = tok.partition("=")
            if not sep:
                raise ParseError(f"malformed token {tok!r}", lineno)
            if key not in _KEYS:
                raise ParseError(f"unknown key {key!r}", lineno)
            if key in fields:
                raise ParseError(f"duplicate key {key!r}", lineno)
            fields[key] = value
        missing = [k for k in _KEYS if k not in fields]
        if missing:
            raise ParseError(f"missing keys {', '.join(missing)}", lineno)
        nums = {k: _parse_int(fields[k], k, lineno) for k in _KEYS[:-1]}
        sketch = Sketch(**nums)
        try:
            sketch.validate(grid_n)
        except BoundsError as exc:
            raise ParseError(str(exc), lineno) from None
        pairs.append((sketch, _parse_component(fields["comp"], cell_m, grid_n, lineno)))
    return Program(tuple(pairs), grid_n, cell_m)


def read_program(path) -> Program:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def write_program(p: Program, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize(p))


def embed_components(p: Program, source: GridImage) -> Program:
    """Replace cell references with the referenced pixels."""
    pairs = []
    for s, c in p.pairs:
        if c.cell is not None:
            c = Component.from_pixels(c.resolve(p.cell_m, source))
        pairs.append((s, c))
    return Program(tuple(pairs), p.grid_n, p.cell_m)
