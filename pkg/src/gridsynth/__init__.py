"""Synthesize, run and extrapolate loop programs over grid-partitioned images."""

from .errors import (
    BoundsError,
    BudgetError,
    GridsynthError,
    InputError,
    ParseError,
    ResolutionError,
    ShapeError,
)
from .grid import (
    DistanceConfig,
    GridImage,
    SimilarityTensor,
    SubImage,
    build_similarity_tensor,
    distance,
    load_png,
    save_png,
    subimage,
)
from .program import (
    Component,
    Program,
    Sketch,
    StructureRendering,
    cover,
    execute,
    execute_onto,
    parse,
    program_tensor,
    serialize,
    sketch_tensor,
)
from .synthesis import (
    ScoredProgram,
    SynthesisConfig,
    enumerate_sketches,
    greedy_synthesize,
    objective,
    oracle_synthesize,
)

__version__ = "0.1.0"
