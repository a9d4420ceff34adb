"""Completion of partial images: synthesize on the known cells, extend, render."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParseError, ShapeError
from .grid import GridImage, load_png
from .program import Program, Sketch, StructureRendering, execute_onto
from .synthesis import ScoredProgram, SynthesisConfig, greedy_synthesize

SENTINEL = (255, 0, 255)
MASK_HEADER = "gridsynth-mask v1"


@dataclass(frozen=True, eq=False)
class PartialImage:
    """A grid image plus the N x N mask of cells that are known.

    Unknown cells hold the sentinel color.
    """

    image: GridImage
    known_mask: np.ndarray

    def __post_init__(self):
        known = np.array(self.known_mask, dtype=bool)
        n = self.image.grid_n
        if known.shape != (n, n):
            raise ShapeError(f"mask is {known.shape[0]}x{known.shape[1] if known.ndim > 1 else 0}, image grid is {n}x{n}")
        if not known.any():
            raise InputError("partial image has no known cells")
        known.setflags(write=False)
        object.__setattr__(self, "known_mask", known)

    @classmethod
    def from_full(cls, image: GridImage, known_mask: np.ndarray) -> "PartialImage":
        """Blank the unknown cells of ``image`` with the sentinel color."""
        known = np.asarray(known_mask, dtype=bool)
        sentinel = np.empty((image.cell_m, image.cell_m, 3), dtype=np.uint8)
        sentinel[...] = SENTINEL
        blank = [((t, u), sentinel) for t, u in image.cells() if not known[t - 1, u - 1]]
        return cls(image.with_cells(blank), known)


def bottom_occlusion_mask(grid_n: int, fraction: float) -> np.ndarray:
    """Known-cell mask with the bottom ``fraction`` of rows hidden."""
    if not 0 <= fraction < 1:
        raise ValueError(f"occlusion fraction must be in [0, 1), got {fraction}")
    hidden = int(round(grid_n * fraction))
    mask = np.ones((grid_n, grid_n), dtype=bool)
    if hidden:
        mask[grid_n - hidden :, :] = False
    return mask


def format_mask(mask: np.ndarray) -> str:
    mask = np.asarray(mask, dtype=bool)
    lines = [f"{MASK_HEADER} N={mask.shape[0]}"]
    lines += ["".join("1" if v else "0" for v in row) for row in mask]
    return "\n".join(lines) + "\n"


def parse_mask(text: str) -> np.ndarray:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty mask file", 1)
    head = lines[0].split(" ")
    if len(head) != 3 or " ".join(head[:2]) != MASK_HEADER or not head[2].startswith("N="):
        raise ParseError(f"bad header {lines[0]!r}, expected '{MASK_HEADER} N=<int>'", 1)
    try:
        n = int(head[2][2:])
    except ValueError:
        raise ParseError(f"field N: not an integer: {head[2][2:]!r}", 1) from None
    if n < 1:
        raise ParseError("field N: must be >= 1", 1)
    if len(lines) - 1 != n:
        raise ParseError(f"expected {n} mask rows, found {len(lines) - 1}", len(lines))
    mask = np.zeros((n, n), dtype=bool)
    for r, line in enumerate(lines[1:]):
        if len(line) != n or set(line) - {"0", "1"}:
            raise ParseError(f"mask row must be {n} characters from {{0,1}}, got {line!r}", r + 2)
        mask[r] = [ch == "1" for ch in line]
    return mask


def read_mask(path: str | os.PathLike) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return parse_mask(fh.read())


def write_mask(mask: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_mask(mask))


def load_partial(png_path, mask_path, grid_n: int, cell_m: int) -> PartialImage:
    mask = read_mask(mask_path)
    if mask.shape[0] != grid_n:
        raise ShapeError(f"mask has N={mask.shape[0]}, expected N={grid_n}")
    return PartialImage.from_full(load_png(png_path, grid_n, cell_m), mask)


def synthesize_partial(p: PartialImage, cfg: SynthesisConfig = SynthesisConfig(), progress=None) -> ScoredProgram:
    """Greedy synthesis that only sees the known cells.

    Tensor entries touching an unknown cell are dropped from both objective
    terms, components come from known cells, and every cover stays inside
    the known region.
    """
    if not p.known_mask.any():
        raise InputError("partial image has no known cells")
    return greedy_synthesize(p.image, cfg, known=p.known_mask, progress=progress)


def _extend_axis(count: int, stride: int, offset: int, grid_n: int, backward: bool, singletons: bool):
    if count == 1 and not singletons:
        return count, offset
    if backward:
        offset %= stride
    return (grid_n - offset) // stride, offset


def extend_sketch(s: Sketch, grid_n: int, backward: bool = False, singletons: bool = False) -> Sketch:
    n, b = _extend_axis(s.n, s.a, s.b, grid_n, backward, singletons)
    n2, b2 = _extend_axis(s.n2, s.a2, s.b2, grid_n, backward, singletons)
    return Sketch(n, s.a, b, n2, s.a2, b2)


def extrapolate(
    p_part: Program,
    grid_n: int | None = None,
    backward: bool = False,
    singletons: bool = False,
) -> Program:
    """Grow every loop to the largest count the grid allows.

    Strides, components and pair order are kept.  Offsets are kept too unless
    ``backward`` is set, in which case loops also extend toward index 1.  An
    axis that runs once has no observed period and stays as is unless
    ``singletons`` is set.
    """
    n = p_part.grid_n if grid_n is None else grid_n
    for s, _ in p_part.pairs:
        s.validate(n)
    pairs = tuple((extend_sketch(s, n, backward, singletons), c) for s, c in p_part.pairs)
    return Program(pairs, n, p_part.cell_m)


@dataclass(frozen=True, eq=False)
class Completion:
    partial_program: ScoredProgram
    program: Program
    structure: StructureRendering
    image: GridImage
    filled: np.ndarray  # cells written by the nearest-cell fallback


def _nearest_fill(img: GridImage, sources: np.ndarray) -> tuple[GridImage, np.ndarray]:
    n = img.grid_n
    src_cells = [(t, u) for t in range(1, n + 1) for u in range(1, n + 1) if sources[t - 1, u - 1]]
    writes = []
    filled = np.zeros((n, n), dtype=bool)
    for t in range(1, n + 1):
        for u in range(1, n + 1):
            if sources[t - 1, u - 1]:
                continue
            # src_cells is sorted, so min() keeps the smallest cell among ties
            best = min(src_cells, key=lambda c: abs(c[0] - t) + abs(c[1] - u))
            writes.append(((t, u), img.block(best)))
            filled[t - 1, u - 1] = True
    return img.with_cells(writes), filled


def complete(
    p: PartialImage,
    cfg: SynthesisConfig = SynthesisConfig(),
    backward: bool = False,
    singletons: bool = False,
    progress=None,
) -> Completion:
    """Synthesize on the known cells, extrapolate, render, then fill the rest."""
    scored = synthesize_partial(p, cfg, progress=progress)
    full = extrapolate(scored.program, p.image.grid_n, backward=backward, singletons=singletons)
    structure = execute_onto(full, p.image, p.known_mask, source=p.image)
    sources = p.known_mask | structure.covered
    image, filled = _nearest_fill(structure.image, sources)
    return Completion(scored, full, structure, image, filled)


def complete_baseline(
    p: PartialImage,
    cfg: SynthesisConfig = SynthesisConfig(),
    backward: bool = False,
    singletons: bool = False,
) -> GridImage:
    return complete(p, cfg, backward=backward, singletons=singletons).image
