"""Program synthesis: the coverage objective, greedy search and an exact oracle.

The objective of a program ``P`` against an image tensor ``Bx`` is::

    |Bx & BP| + lam * |~Bx & ~BP|

counted over every entry of the N^4 tensor (or over the entries between
eligible cells when part of the grid is excluded).  It depends on the program
only through the union of its sketch covers, never on the components.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BudgetError, ShapeError
from .grid import Cell, DistanceConfig, GridImage, SimilarityTensor, build_similarity_tensor
from .program import Component, Program, Sketch, cover_mask, mask_cells, program_tensor


@dataclass(frozen=True)
class SynthesisConfig:
    k: int = 12
    eps: float = 0.15
    lam: float = 0.01
    distance: DistanceConfig = field(default_factory=DistanceConfig)
    min_cover: int = 1
    early_stop: bool = True
    threads: int = 1
    # Cells that are entirely this RGB color are left out of the search.
    background: tuple[int, int, int] | None = None
    oracle_budget: int = 5_000_000
    # "consistent" reorders pairs so that, on overlapping cells, a pair whose
    # component matches the cell paints after one whose component does not;
    # "selection" keeps the greedy order.
    paint_order: str = "consistent"
    # Spend unused pair budget on sketches that repaint cells whose final
    # component is dissimilar to them.  Repairs never lower the objective.
    repair: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.min_cover < 1:
            raise ValueError(f"min_cover must be >= 1, got {self.min_cover}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.paint_order not in ("consistent", "selection"):
            raise ValueError(f"paint_order must be 'consistent' or 'selection', got {self.paint_order!r}")


@dataclass(frozen=True)
class ScoredProgram:
    program: Program
    objective: float
    per_step_gains: tuple[float, ...]
    true_positives: int = 0
    agreeing_zeros: int = 0
    repairs: int = 0  # trailing pairs added after the greedy steps


# --------------------------------------------------------------------------
# objective


def _full_mask(n: int) -> int:
    return (1 << (n * n)) - 1


def objective_counts(bp_rows, bx: SimilarityTensor, eligible: int | None = None) -> tuple[int, int]:
    """(true positives, agreeing zeros) restricted to eligible x eligible."""
    nn = bx.n * bx.n
    elig = _full_mask(bx.n) if eligible is None else eligible
    tp = tn = 0
    for i in range(nn):
        if not elig >> i & 1:
            continue
        x, p = bx.rows[i], bp_rows[i]
        tp += (x & p & elig).bit_count()
        tn += (~x & ~p & elig).bit_count()
    return tp, tn


def objective(p: Program, bx: SimilarityTensor, lam: float, eligible: int | None = None) -> float:
    if p.grid_n != bx.n:
        raise ShapeError(f"program grid N={p.grid_n} does not match tensor N={bx.n}")
    tp, tn = objective_counts(program_tensor(p).rows, bx, eligible)
    return tp + lam * tn


def objective_bruteforce(p: Program, bx: SimilarityTensor, lam: float) -> float:
    """Entry-by-entry evaluation over all N^4 positions, independent of bitsets."""
    if p.grid_n != bx.n:
        raise ShapeError(f"program grid N={p.grid_n} does not match tensor N={bx.n}")
    covers = [set(s.cells()) for s, _ in p.pairs]
    x = bx.to_numpy()
    n = bx.n
    tp = tn = 0
    for t, u, t2, u2 in itertools.product(range(1, n + 1), repeat=4):
        in_p = any((t, u) in c and (t2, u2) in c for c in covers)
        in_x = bool(x[t - 1, u - 1, t2 - 1, u2 - 1])
        if in_x and in_p:
            tp += 1
        elif not in_x and not in_p:
            tn += 1
    return tp + lam * tn


# --------------------------------------------------------------------------
# search space


@lru_cache(maxsize=None)
def axis_options(grid_n: int) -> tuple[tuple[int, int, int], ...]:
    """All (count, stride, offset) with stride*count + offset <= N, sorted."""
    out = []
    for n in range(1, grid_n + 1):
        for a in range(1, grid_n // n + 1):
            for b in range(0, grid_n - a * n + 1):
                out.append((n, a, b))
    return tuple(out)


def enumerate_sketches(grid_n: int, min_cover: int = 1) -> list[Sketch]:
    if grid_n < 1:
        raise ValueError("grid size must be >= 1")
    axis = axis_options(grid_n)
    return [
        Sketch(n, a, b, n2, a2, b2)
        for (n, a, b) in axis
        for (n2, a2, b2) in axis
        if n * n2 >= min_cover
    ]


@lru_cache(maxsize=64)
def _candidates(grid_n: int, min_cover: int) -> tuple[tuple[Sketch, int, tuple[int, ...]], ...]:
    out = []
    for s in enumerate_sketches(grid_n, min_cover):
        mask = cover_mask(s, grid_n)
        idx = tuple((t - 1) * grid_n + (u - 1) for t, u in s.cells())
        out.append((s, mask, idx))
    return tuple(out)


def eligible_cells(img: GridImage, known: np.ndarray | None = None, background=None) -> int:
    """Bitmask of cells that take part in synthesis."""
    n = img.grid_n
    mask = 0
    bg = None if background is None else np.asarray(background, dtype=np.uint8)
    for t, u in img.cells():
        if known is not None and not known[t - 1, u - 1]:
            continue
        if bg is not None and np.all(img.block((t, u)) == bg):
            continue
        mask |= 1 << ((t - 1) * n + (u - 1))
    return mask


def choose_component(bx: SimilarityTensor, cover: int, pool: int) -> Cell:
    """Pool cell similar to the most cells of ``cover``; ties go to the smallest cell."""
    best_i, best_score = -1, -1
    m = pool
    while m:
        low = m & -m
        i = low.bit_length() - 1
        score = (bx.rows[i] & cover).bit_count()
        if score > best_score:
            best_i, best_score = i, score
        m ^= low
    return (best_i // bx.n + 1, best_i % bx.n + 1)


def paint_order(chosen: list[tuple[Sketch, Cell]], bx: SimilarityTensor) -> list[tuple[Sketch, Cell]]:
    """Order pairs so matching components are painted last on shared cells.

    Pair ``j`` must precede pair ``i`` when some cell covered by both is
    similar to ``i``'s component but not to ``j``'s.  Among unconstrained
    pairs the later-selected one goes first; cycles are broken at the pair
    with the fewest pending predecessors.
    """
    n = bx.n
    m = len(chosen)
    if m < 2:
        return list(chosen)
    masks = [cover_mask(s, n) for s, _ in chosen]
    similar = [bx.rows[(c[0] - 1) * n + (c[1] - 1)] for _, c in chosen]
    preds = [set() for _ in range(m)]
    for i in range(m):
        for j in range(m):
            if i != j and masks[i] & masks[j] & similar[i] & ~similar[j]:
                preds[i].add(j)
    order, placed = [], set()
    while len(order) < m:
        free = [i for i in range(m) if i not in placed and not (preds[i] - placed)]
        if free:
            pick = max(free)
        else:
            rest = [i for i in range(m) if i not in placed]
            pick = min(rest, key=lambda i: (len(preds[i] - placed), -i))
        order.append(pick)
        placed.add(pick)
    return [chosen[i] for i in order]


def mismatched_cells(chosen: list[tuple[Sketch, Cell]], bx: SimilarityTensor) -> int:
    """Mask of covered cells whose last-painted component is not similar to them."""
    n = bx.n
    painted: dict[int, int] = {}
    for s, c in chosen:
        ci = (c[0] - 1) * n + (c[1] - 1)
        for t, u in s.cells():
            painted[(t - 1) * n + (u - 1)] = ci
    bad = 0
    for i, ci in painted.items():
        if not bx.rows[ci] >> i & 1:
            bad |= 1 << i
    return bad


def repair_pairs(
    chosen: list[tuple[Sketch, Cell]],
    bx: SimilarityTensor,
    eligible: int,
    budget: int,
    min_cover: int = 1,
) -> list[tuple[Sketch, Cell]]:
    """Sketches to paint after ``chosen`` so fewer cells show a wrong component.

    A repair sketch needs a component similar to every cell it covers and may
    not add any dissimilar cell pair to the program tensor, so the objective
    cannot drop.  Each step takes the sketch covering the most mismatched
    cells; ties go to the first sketch in enumeration order.
    """
    n = bx.n
    cands = [c for c in _candidates(n, min_cover) if c[1] & ~eligible == 0]
    state = _GreedyState(tuple(r & eligible for r in bx.rows), [0] * (n * n), 0.0)
    for s, _ in chosen:
        mask = cover_mask(s, n)
        state.apply(mask, [i for i in range(n * n) if mask >> i & 1])
    out: list[tuple[Sketch, Cell]] = []
    while len(out) < budget:
        bad = mismatched_cells(chosen + out, bx)
        if not bad:
            break
        best = None
        for s, mask, idx in cands:
            hit = (mask & bad).bit_count()
            if not hit or (best is not None and hit <= best[0]):
                continue
            common = eligible
            for i in idx:
                common &= bx.rows[i]
                if not common:
                    break
            if common and state.gain_counts(mask, idx)[1] == 0:
                best = (hit, s, mask, idx, common)
        if best is None:
            break
        _, s, mask, idx, common = best
        state.apply(mask, idx)
        out.append((s, choose_component(bx, mask, common)))
    return out


# --------------------------------------------------------------------------
# greedy


@dataclass
class _GreedyState:
    bx: tuple[int, ...]
    bp: list[int]
    lam: float

    def gain_counts(self, mask: int, idx: tuple[int, ...]) -> tuple[int, int]:
        bx, bp = self.bx, self.bp
        tp = new = 0
        for i in idx:
            fresh = mask & ~bp[i]
            if fresh:
                new += fresh.bit_count()
                tp += (bx[i] & fresh).bit_count()
        return tp, new - tp

    def apply(self, mask: int, idx: tuple[int, ...]) -> None:
        for i in idx:
            self.bp[i] |= mask


def _best_in_range(state: _GreedyState, cands, lo: int, hi: int):
    lam = state.lam
    best = None
    for pos in range(lo, hi):
        _, mask, idx = cands[pos]
        tp, lost = state.gain_counts(mask, idx)
        gain = tp - lam * lost
        if best is None or gain > best[0]:
            best = (gain, pos, tp, lost)
    return best


def _best_naive(bx: SimilarityTensor, bp: list[int], lam: float, eligible: int, cands, base: float):
    """Reference scoring that recomputes the whole objective per candidate."""
    best = None
    for pos, (_, mask, idx) in enumerate(cands):
        trial = list(bp)
        for i in idx:
            trial[i] |= mask
        tp, tn = objective_counts(trial, bx, eligible)
        gain = (tp + lam * tn) - base
        if best is None or gain > best[0]:
            best = (gain, pos)
    return best


def greedy_on_tensor(
    bx: SimilarityTensor,
    cfg: SynthesisConfig,
    eligible: int | None = None,
    incremental: bool = True,
    progress=None,
) -> tuple[list[tuple[Sketch, Cell]], list[float], tuple[int, int]]:
    """Greedy cover selection on a precomputed similarity tensor.

    Returns the chosen (sketch, component cell) list, the per-step gains and
    the final (true positive, agreeing zero) counts.
    """
    n = bx.n
    elig = _full_mask(n) if eligible is None else eligible
    cands = [c for c in _candidates(n, cfg.min_cover) if c[1] & ~elig == 0]
    bx_rows = tuple(r & elig for r in bx.rows)
    state = _GreedyState(bx_rows, [0] * (n * n), cfg.lam)
    tp_total, tn_total = objective_counts(state.bp, bx, elig)

    chosen: list[tuple[Sketch, Cell]] = []
    gains: list[float] = []
    if not cands or not elig:
        return chosen, gains, (tp_total, tn_total)

    chunks = []
    if cfg.threads > 1 and incremental:
        step = math.ceil(len(cands) / cfg.threads)
        chunks = [(lo, min(lo + step, len(cands))) for lo in range(0, len(cands), step)]

    for h in range(cfg.k):
        if not incremental:
            base = tp_total + cfg.lam * tn_total
            gain, pos = _best_naive(bx, state.bp, cfg.lam, elig, cands, base)
            _, mask, idx = cands[pos]
            tp, lost = state.gain_counts(mask, idx)
        elif chunks:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                parts = list(pool.map(lambda r: _best_in_range(state, cands, *r), chunks))
            # first maximum in enumeration order, whatever the chunking
            gain, pos, tp, lost = max(parts, key=lambda b: (b[0], -b[1]))
        else:
            gain, pos, tp, lost = _best_in_range(state, cands, 0, len(cands))
        if cfg.early_stop and gain <= 0:
            break
        sketch, mask, idx = cands[pos]
        state.apply(mask, idx)
        tp_total += tp
        tn_total -= lost
        comp = choose_component(bx, mask, elig)
        chosen.append((sketch, comp))
        gains.append(gain)
        if progress is not None:
            progress(
                {
                    "iteration": h + 1,
                    "sketch": list(sketch.as_tuple()),
                    "component": list(comp),
                    "gain": gain,
                    "objective": tp_total + cfg.lam * tn_total,
                }
            )
    return chosen, gains, (tp_total, tn_total)


def greedy_synthesize(
    img: GridImage,
    cfg: SynthesisConfig = SynthesisConfig(),
    known: np.ndarray | None = None,
    bx: SimilarityTensor | None = None,
    incremental: bool = True,
    progress=None,
) -> ScoredProgram:
    """Greedy synthesis over all sketches and the image's own cells.

    ``known`` restricts both the tensor universe and the component pool to
    the known cells.  Candidate covers must lie inside the eligible cells.
    """
    if bx is None:
        bx = build_similarity_tensor(img, cfg.eps, cfg.distance, threads=cfg.threads)
    elif bx.n != img.grid_n:
        raise ShapeError(f"tensor N={bx.n} does not match image N={img.grid_n}")
    elig = eligible_cells(img, known, cfg.background)
    chosen, gains, (tp, tn) = greedy_on_tensor(bx, cfg, elig, incremental=incremental, progress=progress)
    program = Program(tuple((s, Component(cell=c)) for s, c in chosen), img.grid_n, img.cell_m)
    check = objective_counts(program_tensor(program).rows, bx, elig)
    assert check == (tp, tn), "incremental objective drifted"
    if cfg.paint_order == "consistent":
        chosen = paint_order(chosen, bx)
    repairs = []
    if cfg.repair and len(chosen) < cfg.k:
        repairs = repair_pairs(chosen, bx, elig, cfg.k - len(chosen), cfg.min_cover)
    program = Program(tuple((s, Component(cell=c)) for s, c in chosen + repairs), img.grid_n, img.cell_m)
    if repairs:
        tp, tn = objective_counts(program_tensor(program).rows, bx, elig)
    return ScoredProgram(program, tp + cfg.lam * tn, tuple(gains), tp, tn, len(repairs))


# --------------------------------------------------------------------------
# exhaustive oracle


def distinct_covers(grid_n: int, min_cover: int = 1, eligible: int | None = None) -> list[tuple[Sketch, int]]:
    """One representative (lexicographically smallest) sketch per distinct cover."""
    elig = _full_mask(grid_n) if eligible is None else eligible
    seen: dict[int, Sketch] = {}
    for s, mask, _ in _candidates(grid_n, min_cover):
        if mask & ~elig == 0 and mask not in seen:
            seen[mask] = s
    return [(s, m) for m, s in seen.items()]


def oracle_count(n_covers: int, k: int) -> int:
    return sum(math.comb(n_covers, j) for j in range(0, k + 1))


def _pack(rows_bits: list[int], nn: int, words: int) -> np.ndarray:
    big = 0
    for i, r in enumerate(rows_bits):
        big |= r << (i * nn)
    return np.array([(big >> (64 * w)) & 0xFFFFFFFFFFFFFFFF for w in range(words)], dtype=np.uint64)


def oracle_on_tensor(
    bx: SimilarityTensor,
    cfg: SynthesisConfig,
    eligible: int | None = None,
) -> tuple[list[tuple[Sketch, Cell]], tuple[int, int]]:
    """Exact maximizer of the objective over programs with at most k pairs.

    Programs with the same cover set score the same, and repeating a cover
    changes nothing, so it suffices to search subsets of distinct covers.
    Among optimal subsets the smallest one, then the lexicographically
    smallest in sketch order, is returned.
    """
    n = bx.n
    nn = n * n
    elig = _full_mask(n) if eligible is None else eligible
    covers = distinct_covers(n, cfg.min_cover, elig)
    covers.sort(key=lambda c: c[0].as_tuple())
    k = min(cfg.k, len(covers))
    count = oracle_count(len(covers), k)
    if count > cfg.oracle_budget:
        raise BudgetError(
            f"oracle would evaluate {count} programs (budget {cfg.oracle_budget})",
            count,
        )

    words = (nn * nn + 63) // 64
    universe_rows = [elig if elig >> i & 1 else 0 for i in range(nn)]
    universe = _pack(universe_rows, nn, words)
    x = _pack([r & elig for r in bx.rows], nn, words) & universe
    not_x = ~x & universe
    tensors = np.stack(
        [_pack([m if m >> i & 1 else 0 for i in range(nn)], nn, words) for _, m in covers]
    ) if covers else np.zeros((0, words), dtype=np.uint64)

    def score(t: np.ndarray) -> np.ndarray:
        tp = np.bitwise_count(t & x).sum(axis=-1, dtype=np.int64)
        tn = np.bitwise_count(~t & not_x).sum(axis=-1, dtype=np.int64)
        return tp, tn

    lam = cfg.lam
    zero = np.zeros(words, dtype=np.uint64)
    tp0, tn0 = score(zero[None, :])
    best = (float(tp0[0] + lam * tn0[0]), (), int(tp0[0]), int(tn0[0]))

    def consider(values, tps, tns, combo_of):
        nonlocal best
        if len(values) == 0:
            return
        pos = int(np.argmax(values))
        if values[pos] > best[0]:
            best = (float(values[pos]), combo_of(pos), int(tps[pos]), int(tns[pos]))

    m = len(covers)
    if k >= 1:
        tp, tn = score(tensors)
        consider(tp + lam * tn, tp, tn, lambda p: (p,))
    if k >= 2:
        ii, jj = np.triu_indices(m, 1)
        pair_t = tensors[ii] | tensors[jj]
    if k >= 2:
        tp, tn = score(pair_t)
        consider(tp + lam * tn, tp, tn, lambda p: (int(ii[p]), int(jj[p])))
    for size in range(3, k + 1):
        if size == 3:
            # pairs come out of triu_indices sorted by (j, l), so a scan over i
            # visits triples in lexicographic order
            for i in range(m):
                start = np.searchsorted(ii, i + 1)
                sub = pair_t[start:]
                if not len(sub):
                    continue
                t = sub | tensors[i]
                tp, tn = score(t)
                consider(
                    tp + lam * tn, tp, tn,
                    lambda p, i=i, start=start: (i, int(ii[start + p]), int(jj[start + p])),
                )
        else:
            for combo in itertools.combinations(range(m), size):
                t = np.bitwise_or.reduce(tensors[list(combo)], axis=0)
                tp, tn = score(t[None, :])
                consider(tp + lam * tn, tp, tn, lambda p, combo=combo: combo)

    _, combo, tp_best, tn_best = best
    chosen = []
    for c in combo:
        s, mask = covers[c]
        chosen.append((s, choose_component(bx, mask, elig)))
    return chosen, (tp_best, tn_best)


def oracle_synthesize(
    img: GridImage,
    cfg: SynthesisConfig = SynthesisConfig(),
    known: np.ndarray | None = None,
    bx: SimilarityTensor | None = None,
) -> ScoredProgram:
    if bx is None:
        bx = build_similarity_tensor(img, cfg.eps, cfg.distance, threads=cfg.threads)
    elig = eligible_cells(img, known, cfg.background)
    chosen, (tp, tn) = oracle_on_tensor(bx, cfg, elig)
    program = Program(tuple((s, Component(cell=c)) for s, c in chosen), img.grid_n, img.cell_m)
    return ScoredProgram(program, tp + cfg.lam * tn, (), tp, tn)


def oracle_candidate_count(img: GridImage, cfg: SynthesisConfig, known: np.ndarray | None = None) -> int:
    elig = eligible_cells(img, known, cfg.background)
    covers = distinct_covers(img.grid_n, cfg.min_cover, elig)
    return oracle_count(len(covers), min(cfg.k, len(covers)))
