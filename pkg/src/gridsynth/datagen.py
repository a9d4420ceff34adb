"""Seeded generator for the correlated repeating-glyph dataset.

Each image is an N x N grid over a flat background.  A program of k loops is
sampled so that each loop's glyph label and color (its latent property)
depend on the previous loop's, and loop parameters depend on the property.
With noise on, every loop iteration draws a different glyph of the same label
in the same color.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ResolutionError
from .extrapolation import PartialImage, bottom_occlusion_mask, write_mask
from .grid import GridImage, save_png
from .program import Component, Program, Sketch, write_program

LABELS = (0, 1, 2, 3, 4)
COLOR_NAMES = ("red", "blue", "orange", "green", "yellow")
COLORS = {
    "red": (220, 40, 40),
    "blue": (40, 90, 230),
    "orange": (245, 150, 30),
    "green": (40, 180, 70),
    "yellow": (240, 225, 40),
}
N_PROPERTIES = len(LABELS) * len(COLOR_NAMES)
PARAM_NAMES = ("n", "a", "b", "n2", "a2", "b2")


@dataclass(frozen=True)
class LatentProperty:
    label: int
    color: str

    @property
    def index(self) -> int:
        return self.label * len(COLOR_NAMES) + COLOR_NAMES.index(self.color)

    @classmethod
    def from_index(cls, i: int) -> "LatentProperty":
        label, c = divmod(int(i), len(COLOR_NAMES))
        return cls(LABELS[label], COLOR_NAMES[c])


def all_properties() -> list[LatentProperty]:
    return [LatentProperty.from_index(i) for i in range(N_PROPERTIES)]


def default_transition() -> np.ndarray:
    """Stay with probability 0.6, else move to one of three fixed successors."""
    mat = np.zeros((N_PROPERTIES, N_PROPERTIES))
    for p in range(N_PROPERTIES):
        mat[p, p] += 0.6
        for step in (1, 6, 12):
            mat[p, (p + step) % N_PROPERTIES] += 0.4 / 3
    return mat


def default_sketch_stats() -> np.ndarray:
    """(25, 6, 2) array of (mean, std) per property and sketch parameter."""
    stats = np.zeros((N_PROPERTIES, len(PARAM_NAMES), 2))
    stats[:, :, 0] = (3, 2, 1, 3, 2, 1)
    stats[:, :, 1] = 1.0
    return stats


def _as_tuple(arr) -> tuple:
    return tuple(_as_tuple(x) for x in arr) if np.ndim(arr) else float(arr)


@dataclass(frozen=True)
class GeneratorSpec:
    grid_n: int = 9
    cell_m: int = 16
    k: int = 12
    transition: tuple = field(default_factory=lambda: _as_tuple(default_transition()))
    sketch_stats: tuple = field(default_factory=lambda: _as_tuple(default_sketch_stats()))
    noise: bool = True
    seed: int = 0
    tile_source: str = "procedural"
    tiles_per_label: int = 8
    background: tuple[int, int, int] = (40, 40, 40)
    axis_maximal: bool = False

    def __post_init__(self):
        trans = np.asarray(self.transition, dtype=float)
        if trans.shape != (N_PROPERTIES, N_PROPERTIES):
            raise ValueError(f"transition must be {N_PROPERTIES}x{N_PROPERTIES}, got {trans.shape}")
        if np.any(trans < 0) or np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        stats = np.asarray(self.sketch_stats, dtype=float)
        if stats.shape != (N_PROPERTIES, len(PARAM_NAMES), 2):
            raise ValueError(f"sketch_stats must have shape (25, 6, 2), got {stats.shape}")
        if np.any(stats[:, :, 1] < 0):
            raise ValueError("sketch parameter standard deviations must be >= 0")
        if self.grid_n < 1 or self.cell_m < 1 or self.k < 1:
            raise ValueError("grid_n, cell_m and k must be >= 1")
        if self.tiles_per_label < 2:
            raise ValueError("tiles_per_label must be >= 2")
        object.__setattr__(self, "transition", _as_tuple(trans))
        object.__setattr__(self, "sketch_stats", _as_tuple(stats))
        object.__setattr__(self, "background", tuple(int(c) for c in self.background))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "GeneratorSpec":
        data = dict(data)
        data["background"] = tuple(data["background"])
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def instance_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------------
# glyphs

# Stroke skeletons in unit coordinates (x right, y down).
_STROKES = {
    0: [("ellipse", (0.25, 0.15, 0.75, 0.85))],
    1: [("line", (0.5, 0.12, 0.5, 0.88)), ("line", (0.5, 0.12, 0.35, 0.3))],
    2: [
        ("arc", (0.25, 0.12, 0.75, 0.52, 180, 360)),
        ("line", (0.75, 0.32, 0.25, 0.86)),
        ("line", (0.25, 0.86, 0.78, 0.86)),
    ],
    3: [
        ("arc", (0.25, 0.12, 0.72, 0.5, 250, 450)),
        ("arc", (0.25, 0.5, 0.75, 0.88, 270, 470)),
    ],
    4: [
        ("line", (0.28, 0.12, 0.22, 0.6)),
        ("line", (0.22, 0.6, 0.8, 0.6)),
        ("line", (0.66, 0.2, 0.66, 0.88)),
    ],
}


def draw_glyph(label: int, cell_m: int, rng: np.random.Generator, jitter: float = 0.06) -> np.ndarray:
    """One M x M grayscale glyph (0 = background, 255 = ink) with per-instance jitter."""
    scale = 4
    size = cell_m * scale
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    width = max(1, int(round(size * rng.uniform(0.08, 0.13))))
    dx, dy = rng.uniform(-jitter, jitter, 2)

    def pt(x, y):
        jx, jy = rng.uniform(-jitter, jitter, 2)
        return ((x + dx + jx) * size, (y + dy + jy) * size)

    for kind, args in _STROKES[label]:
        if kind == "line":
            draw.line([pt(*args[:2]), pt(*args[2:4])], fill=255, width=width)
        else:
            x0, y0 = pt(*args[:2])
            x1, y1 = pt(*args[2:4])
            box = [min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)]
            if kind == "ellipse":
                draw.ellipse(box, outline=255, width=width)
            else:
                draw.arc(box, args[4], args[5], fill=255, width=width)
    small = canvas.resize((cell_m, cell_m), Image.Resampling.BOX)
    return np.asarray(small, dtype=np.uint8)


def recolor(glyph: np.ndarray, color, background) -> np.ndarray:
    alpha = glyph.astype(np.float64)[..., None] / 255.0
    bg = np.asarray(background, dtype=np.float64)
    fg = np.asarray(color, dtype=np.float64)
    return np.floor(bg + (fg - bg) * alpha + 0.5).astype(np.uint8)


class TileBank:
    """Grayscale glyphs grouped by label."""

    def __init__(self, tiles: dict[int, list[np.ndarray]]):
        self.tiles = {int(k): [np.asarray(t, dtype=np.uint8) for t in v] for k, v in tiles.items()}
        for label in LABELS:
            group = self.tiles.get(label, [])
            if len({t.tobytes() for t in group}) < 2:
                raise ResolutionError(f"tile bank needs >= 2 distinct tiles for label {label}")

    @classmethod
    def procedural(cls, cell_m: int, per_label: int, seed: int) -> "TileBank":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x711E]))
        tiles = {}
        for label in LABELS:
            group, seen = [], set()
            attempts = 0
            while len(group) < per_label:
                g = draw_glyph(label, cell_m, rng)
                attempts += 1
                if g.tobytes() in seen and attempts < per_label * 50:
                    continue
                seen.add(g.tobytes())
                group.append(g)
            tiles[label] = group
        return cls(tiles)

    @classmethod
    def from_directory(cls, path: str | os.PathLike, cell_m: int) -> "TileBank":
        """Load ``<path>/<label>/*.png`` as grayscale glyphs resized to M x M."""
        root = Path(path)
        tiles = {}
        for label in LABELS:
            files = sorted((root / str(label)).glob("*.png"))
            group = []
            for f in files:
                with Image.open(f) as im:
                    g = im.convert("L").resize((cell_m, cell_m), Image.Resampling.BOX)
                    group.append(np.asarray(g, dtype=np.uint8))
            tiles[label] = group
        return cls(tiles)

    def count(self, label: int) -> int:
        return len(self.tiles.get(label, []))

    def tile(self, label: int, index: int, color: str, background) -> np.ndarray:
        if label not in self.tiles:
            raise ResolutionError(f"no tiles for label {label}")
        return recolor(self.tiles[label][index], COLORS[color], background)


def make_bank(spec: GeneratorSpec) -> TileBank:
    if spec.tile_source == "procedural":
        return TileBank.procedural(spec.cell_m, spec.tiles_per_label, spec.seed)
    return TileBank.from_directory(spec.tile_source, spec.cell_m)


# --------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class AnnotatedProgram:
    program: Program
    properties: tuple[LatentProperty, ...]
    tile_indices: tuple[int, ...]


def _round(x: float) -> int:
    return int(np.floor(x + 0.5))


def repair_axis(n: int, a: int, b: int, grid_n: int) -> tuple[int, int, int]:
    """Clamp to valid ranges, then shrink the count and then the offset until a*n+b <= N."""
    a = min(max(a, 1), grid_n)
    n = max(n, 1)
    b = max(b, 0)
    if a * n + b > grid_n:
        n = max(1, (grid_n - b) // a)
    if a * n + b > grid_n:
        b = grid_n - a * n
    return n, a, b


def sample_sketch(prop: LatentProperty, spec: GeneratorSpec, rng: np.random.Generator) -> Sketch:
    stats = np.asarray(spec.sketch_stats)[prop.index]
    raw = [_round(rng.normal(mean, std)) if std > 0 else _round(mean) for mean, std in stats]
    n, a, b = repair_axis(raw[0], raw[1], raw[2], spec.grid_n)
    n2, a2, b2 = repair_axis(raw[3], raw[4], raw[5], spec.grid_n)
    if spec.axis_maximal:
        n = (spec.grid_n - b) // a
        n2 = (spec.grid_n - b2) // a2
    return Sketch(n, a, b, n2, a2, b2)


def sample_program(spec: GeneratorSpec, rng: np.random.Generator, bank: TileBank) -> AnnotatedProgram:
    trans = np.asarray(spec.transition)
    props, indices, pairs = [], [], []
    current = int(rng.integers(N_PROPERTIES))
    for h in range(spec.k):
        if h:
            current = int(rng.choice(N_PROPERTIES, p=trans[current]))
        prop = LatentProperty.from_index(current)
        sketch = sample_sketch(prop, spec, rng)
        idx = int(rng.integers(bank.count(prop.label)))
        tile = bank.tile(prop.label, idx, prop.color, spec.background)
        props.append(prop)
        indices.append(idx)
        pairs.append((sketch, Component.from_pixels(tile)))
    program = Program(tuple(pairs), spec.grid_n, spec.cell_m)
    return AnnotatedProgram(program, tuple(props), tuple(indices))


def render_noisy(ap: AnnotatedProgram, spec: GeneratorSpec, rng: np.random.Generator, bank: TileBank) -> GridImage:
    """Execute the program, redrawing the glyph on every loop iteration when noisy."""
    img = GridImage.filled(spec.grid_n, spec.cell_m, spec.background)
    px = np.array(img.pixels)
    m = spec.cell_m
    for (sketch, comp), prop, idx in zip(ap.program.pairs, ap.properties, ap.tile_indices):
        count = bank.count(prop.label)
        if spec.noise and count < 2:
            raise ResolutionError(f"label {prop.label} needs >= 2 tiles for noisy rendering")
        base = comp.resolve(m)
        for t, u in sketch.cells():
            if spec.noise:
                other = int(rng.integers(count - 1))
                other += other >= idx
                tile = bank.tile(prop.label, other, prop.color, spec.background)
            else:
                tile = base
            px[(t - 1) * m : t * m, (u - 1) * m : u * m] = tile
    return GridImage(px, spec.grid_n, spec.cell_m)


@dataclass(frozen=True, eq=False)
class Instance:
    seed: int
    annotated: AnnotatedProgram
    full: GridImage
    partial: PartialImage


def make_instance(spec: GeneratorSpec, seed: int, occlusion: float = 0.0, bank: TileBank | None = None) -> Instance:
    bank = make_bank(spec) if bank is None else bank
    rng = np.random.default_rng(seed)
    ap = sample_program(spec, rng, bank)
    full = render_noisy(ap, spec, rng, bank)
    mask = bottom_occlusion_mask(spec.grid_n, occlusion)
    return Instance(seed, ap, full, PartialImage.from_full(full, mask))


def write_instance(inst: Instance, out_dir: Path, index: int) -> dict:
    names = {
        "full": f"{index}_full.png",
        "partial": f"{index}_partial.png",
        "mask": f"{index}.mask",
        "program": f"{index}.prog",
    }
    save_png(inst.full, out_dir / names["full"])
    save_png(inst.partial.image, out_dir / names["partial"])
    write_mask(inst.partial.known_mask, out_dir / names["mask"])
    write_program(inst.annotated.program, out_dir / names["program"])
    return names


def generate_corpus(
    spec: GeneratorSpec,
    count: int,
    occlusion: float,
    out_dir: str | os.PathLike,
    threads: int = 1,
    config: dict | None = None,
) -> list[dict]:
    """Write ``count`` instances plus ``manifest.jsonl`` and ``spec.json``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0 <= occlusion < 1:
        raise ValueError("occlusion must be in [0, 1)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bank = make_bank(spec)
    digest = spec.digest()

    def one(index: int) -> dict:
        seed = instance_seed(spec.seed, index)
        inst = make_instance(spec, seed, occlusion, bank)
        names = write_instance(inst, out, index)
        return {
            "index": index,
            "seed": seed,
            "spec_hash": digest,
            **names,
            "occlusion": occlusion,
            "properties": [[p.label, p.color] for p in inst.annotated.properties],
            "placeholder_stats": True,
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(count)))
    else:
        records = [one(i) for i in range(count)]

    with open(out / "manifest.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    meta = {"spec": spec.to_json(), "spec_hash": digest, "count": count, "occlusion": occlusion}
    if config is not None:
        meta["config"] = config
    with open(out / "spec.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return records


def read_manifest(corpus_dir: str | os.PathLike) -> list[dict]:
    with open(Path(corpus_dir) / "manifest.jsonl", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_corpus_spec(corpus_dir: str | os.PathLike) -> GeneratorSpec | None:
    path = Path(corpus_dir) / "spec.json"
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        return GeneratorSpec.from_json(json.load(fh)["spec"])
