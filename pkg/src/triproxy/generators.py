"""Seeded random structural models for every builtin figure graph.

Two construction routes:

* generic nodes get a random noise pmf (Dirichlet weights) and a random
  *onto* structural table per parent configuration, which induces generic
  strictly-random conditional kernels with a compact noise space;
* nodes whose conditional law must hit exact targets (unbiased proxy
  means, designed outcome means) are built from an explicit kernel via an
  inverse-CDF encoding whose noise levels refine every parent
  configuration's CDF breakpoints, so the encoded model reproduces the
  kernel exactly.

Draws failing the rank / distinguishability / stratum-mass diagnostics of
the intended design are discarded and redrawn (bounded retry loop), so
every fixture this module hands out is numerically well-posed for its
pipeline.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDistribution
from .graphs import FIGURES, Dag
from .prob import ProbTensor, VarSpace, condition, marginalize, restrict
from .scm import NodeSpec, Npsem, arm_label, counterfactual_joint, observable_joint

MAX_TRIES = 100


def _derive(*parts) -> list[int]:
    """Deterministic seed material from mixed str/int parts."""
    return [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) & 0xFFFFFFFF
            for p in parts]


# ---------------------------------------------------------------------------
# structural-table construction


def random_onto_table(rng: np.random.Generator, shape: tuple[int, ...],
                      card: int, noise_card: int) -> np.ndarray:
    """Random table whose every parent-config row covers all node values."""
    rows = int(np.prod(shape, dtype=int)) if shape else 1
    table = np.empty((rows, noise_card), dtype=np.int64)
    for r in range(rows):
        row = np.concatenate([np.arange(card),
                              rng.integers(0, card, size=noise_card - card)])
        rng.shuffle(row)
        table[r] = row
    return table.reshape(shape + (noise_card,))


def encode_kernel(kernel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact (table, noise pmf) realization of a conditional kernel.

    ``kernel`` has shape ``(card, *parent_cards)``; the shared noise's level
    boundaries are the union of every parent configuration's CDF
    breakpoints, so each conditional law is reproduced exactly and the
    coupling across parent configurations is comonotone.
    """
    card = kernel.shape[0]
    cols = kernel.reshape(card, -1)
    if np.any(cols < 0) or np.any(np.abs(cols.sum(axis=0) - 1.0) > 1e-10):
        raise InvalidDistribution("kernel columns must be pmfs")
    cums = np.cumsum(cols, axis=0)
    cums[-1, :] = 1.0
    breaks = np.unique(np.concatenate([[0.0, 1.0], cums[:-1].ravel()]))
    breaks = breaks[(breaks > 1e-15) & (breaks < 1.0 - 1e-15)]
    edges = np.concatenate([[0.0], breaks, [1.0]])
    pmf = np.diff(edges)
    mids = (edges[:-1] + edges[1:]) / 2.0
    table = np.empty((cols.shape[1], pmf.size), dtype=np.int64)
    for j in range(cols.shape[1]):
        table[j] = np.searchsorted(cums[:, j], mids, side="left")
    table = np.clip(table, 0, card - 1)
    return table.reshape(kernel.shape[1:] + (pmf.size,)), pmf


def node_from_kernel(space: VarSpace, parents, kernel: np.ndarray) -> NodeSpec:
    table, pmf = encode_kernel(kernel)
    return NodeSpec(space, tuple(parents), table, pmf)


def random_npsem(dag: Dag, spaces: dict[str, VarSpace], seed: int,
                 latent=(), kernels: dict[str, np.ndarray] | None = None,
                 noise_cards: dict[str, int] | None = None) -> Npsem:
    """Random model on ``dag``; nodes listed in ``kernels`` are encoded exactly."""
    rng = np.random.default_rng(seed)
    kernels = kernels or {}
    noise_cards = noise_cards or {}
    specs = []
    for name in dag.topological_order():
        space = spaces[name]
        parents = dag.parents(name)
        parent_cards = tuple(spaces[p].cardinality for p in parents)
        if name in kernels:
            kern = np.asarray(kernels[name], dtype=float)
            if kern.shape != (space.cardinality,) + parent_cards:
                raise InvalidDistribution(f"kernel for {name} has shape {kern.shape}")
            specs.append(node_from_kernel(space, parents, kern))
        elif not parents:
            pmf = rng.dirichlet(np.ones(space.cardinality))
            specs.append(NodeSpec(space, (), np.arange(space.cardinality, dtype=np.int64),
                                  pmf))
        else:
            nc = noise_cards.get(name, max(4, 2 * space.cardinality))
            pmf = rng.dirichlet(np.ones(nc))
            table = random_onto_table(rng, parent_cards, space.cardinality, nc)
            specs.append(NodeSpec(space, parents, table, pmf))
    return Npsem(tuple(specs), tuple(latent))


# ---------------------------------------------------------------------------
# spaces and figure designs


def standard_spaces(K: int, y_card: int = 3, proxy_card: int | None = None,
                    c_card: int = 3) -> dict[str, VarSpace]:
    proxy_card = proxy_card or K + 1
    return {
        "W": VarSpace("W", K, tuple(float(i) for i in range(K))),
        "X": VarSpace("X", 2, (0.0, 1.0)),
        "Y": VarSpace("Y", y_card, tuple(float(i) for i in range(y_card))),
        "Z": VarSpace("Z", proxy_card, tuple(float(i) for i in range(proxy_card))),
        "V": VarSpace("V", proxy_card, tuple(float(i) for i in range(proxy_card))),
        "C": VarSpace("C", c_card, tuple(float(i) for i in range(c_card))),
    }


# ---------------------------------------------------------------------------
# well-separated kernels for figure models

def separated_kernel(rng: np.random.Generator, card: int,
                     parent_cards: tuple[int, ...], sep_axis: int,
                     grains: int) -> np.ndarray:
    """Grid-quantized conditional kernel with strongly distinct columns
    along ``sep_axis``.

    Each column concentrates a large block of probability on a level that
    cycles with the separated parent (binary nodes use distinct block
    heights instead), plus a small random remainder; every level keeps at
    least one grain, so no conditional cell is empty.  Quantizing to a
    shared ``1/grains`` grid keeps the exact noise encoding small: the CDF
    breakpoints of all parent configurations land on the same grid.
    """
    shape = (card,) + tuple(parent_cards)
    out = np.empty(shape)
    k_sep = parent_cards[sep_axis]
    other_axes = [i for i in range(len(parent_cards)) if i != sep_axis]
    for other in itertools.product(*[range(parent_cards[i]) for i in other_axes]):
        if card == 2:
            heights = rng.choice(np.arange(1, grains), size=k_sep, replace=False)
        else:
            start = int(rng.integers(card))
        for w in range(k_sep):
            idx = [0] * len(parent_cards)
            for ax, val in zip(other_axes, other):
                idx[ax] = val
            idx[sep_axis] = w
            if card == 2:
                col = np.array([grains - heights[w], heights[w]], dtype=float)
            else:
                col = np.ones(card)
                spare = grains - card
                sprinkle = int(rng.integers(0, min(3, max(spare - 2, 0)) + 1))
                col[(start + w) % card] += spare - sprinkle
                for _ in range(sprinkle):
                    col[int(rng.integers(card))] += 1
            out[(slice(None),) + tuple(idx)] = col / grains
    return out


def _mean_spread_kernel(rng: np.random.Generator, levels: np.ndarray,
                        parent_cards: tuple[int, ...],
                        sep_axis: int) -> np.ndarray:
    """Continuous outcome kernel whose conditional means are stratified
    across the separated parent, so latent-state effects never tie."""
    shape = (levels.size,) + tuple(parent_cards)
    out = np.empty(shape)
    k_sep = parent_cards[sep_axis]
    other_axes = [i for i in range(len(parent_cards)) if i != sep_axis]
    lo, hi = levels.min() + 0.25, levels.max() - 0.25
    for other in itertools.product(*[range(parent_cards[i]) for i in other_axes]):
        offsets = rng.permutation(k_sep)
        for w in range(k_sep):
            mean = lo + (offsets[w] + rng.uniform(0.15, 0.85)) * (hi - lo) / k_sep
            idx = [0] * len(parent_cards)
            for ax, val in zip(other_axes, other):
                idx[ax] = val
            idx[sep_axis] = w
            out[(slice(None),) + tuple(idx)] = _pmf_with_mean(levels, mean, rng)
    return out


def designed_npsem(dag: Dag, spaces: dict[str, VarSpace], seed: int,
                   latent=("W",),
                   kernels: dict[str, np.ndarray] | None = None) -> Npsem:
    """Random model whose kernels are built for well-posed identification.

    Every non-root node separates strongly across its latent-side parent,
    keeping proxy kernels complete and signal columns distinct with high
    probability; nodes listed in ``kernels`` are encoded exactly instead.
    """
    rng = np.random.default_rng(seed)
    kernels = kernels or {}
    specs = []
    for name in dag.topological_order():
        space = spaces[name]
        parents = dag.parents(name)
        parent_cards = tuple(spaces[p].cardinality for p in parents)
        if name in kernels:
            kern = np.asarray(kernels[name], dtype=float)
            if kern.shape != (space.cardinality,) + parent_cards:
                raise InvalidDistribution(f"kernel for {name} has shape {kern.shape}")
            specs.append(node_from_kernel(space, parents, kern))
            continue
        if not parents:
            pmf = rng.dirichlet(np.full(space.cardinality, 4.0))
            specs.append(NodeSpec(space, (), np.arange(space.cardinality,
                                                       dtype=np.int64), pmf))
            continue
        sep_axis = parents.index("W") if "W" in parents else 0
        if name == "Y" and set(parents) == {"X", "W"}:
            kern = _mean_spread_kernel(rng, np.asarray(space.levels),
                                       parent_cards, sep_axis)
        elif name == "Y":
            kern = separated_kernel(rng, space.cardinality, parent_cards,
                                    sep_axis, grains=12)
        else:
            grains = 8 if space.cardinality >= 4 else max(6, parent_cards[sep_axis] + 2)
            kern = separated_kernel(rng, space.cardinality, parent_cards,
                                    sep_axis, grains)
        specs.append(node_from_kernel(space, parents, kern))
    return Npsem(tuple(specs), tuple(latent))


FIGURE_DESIGNS: dict[str, str] = {
    "fig1a": "outcome", "fig1c": "cond-treatment", "fig1d": "auxiliary",
    "fig2a": "outcome", "fig2b": "outcome", "fig2c": "outcome",
    "fig3a": "treatment", "fig3b": "treatment", "fig3c": "treatment",
    "fig4a": "cond-treatment", "fig4b": "cond-treatment",
    "fig5a": "auxiliary", "fig5b": "auxiliary", "fig5c": "auxiliary",
    "fig6a": "bounds-outcome", "fig6b": "bounds-outcome", "fig6c": "bounds-outcome",
    "fig7a": "bounds-auxiliary", "fig7b": "bounds-auxiliary",
}

PIPELINE_FIGURES = ("fig2a", "fig2b", "fig2c", "fig3a", "fig3b", "fig3c",
                    "fig4a", "fig4b", "fig5a", "fig5b", "fig5c")


def _kernel(joint: ProbTensor, target: str, given: tuple[str, ...],
            fix: dict | None = None) -> np.ndarray:
    t = restrict(joint, fix) if fix else joint
    t = marginalize(t, set(t.names) - {target} - set(given))
    return condition(t, set(given)).values if given else \
        marginalize(t, set(t.names) - {target}).values


def _sv_ratio(mat: np.ndarray, k: int) -> float:
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size < k or sv[0] <= 0:
        return 0.0
    return float(sv[k - 1] / sv[0])


def _col_gap(mat: np.ndarray) -> float:
    k = mat.shape[1]
    if k < 2:
        return np.inf
    gaps = [np.abs(mat[:, i] - mat[:, j]).max()
            for i in range(k) for j in range(i + 1, k)]
    return float(min(gaps))


@dataclass(frozen=True)
class FixtureDiagnostics:
    sv_ratio: float
    column_gap: float
    stratum_mass: float
    cate_gap: float

    def passes(self, sv_min=0.06, gap_min=0.08, mass_min=0.04, cate_min=1e-3) -> bool:
        return (self.sv_ratio >= sv_min and self.column_gap >= gap_min
                and self.stratum_mass >= mass_min and self.cate_gap >= cate_min)


def oracle_cate(m: Npsem, treatment: str = "X", outcome: str = "Y") -> np.ndarray:
    """Exact E[Y(1) - Y(0) | W = w] per latent state."""
    joint = counterfactual_joint(m, (treatment,), outcome=outcome, keep=("W",))
    y_levels = m[outcome].space.level_values()
    w_card = m["W"].space.cardinality
    means = np.empty((2, w_card))
    for x in (0, 1):
        name = arm_label(outcome, (x,))
        pair = marginalize(joint, set(joint.names) - {name, "W"}).reorder((name, "W"))
        cond = pair.values / pair.values.sum(axis=0)
        means[x] = y_levels @ cond
    return means[1] - means[0]


def figure_diagnostics(m: Npsem, figure: str, K: int,
                       with_cate: bool = True) -> FixtureDiagnostics:
    design = FIGURE_DESIGNS[figure]
    joint = observable_joint(m)
    sv, gap, mass = np.inf, np.inf, np.inf

    def wv_matrix(fix):
        t = restrict(joint, fix) if fix else joint
        return marginalize(t, set(t.names) - {"W", "V"}).reorder(("W", "V")).values

    if design in ("outcome", "bounds-outcome"):
        fx = marginalize(joint, set(joint.names) - {"X"}).values
        mass = min(mass, float(fx.min()))
        for x in range(2):
            sv = min(sv, _sv_ratio(_kernel(joint, "Z", ("W",), {"X": x}), K),
                     _sv_ratio(wv_matrix({"X": x}), K))
            gap = min(gap, _col_gap(_kernel(joint, "Y", ("W",), {"X": x})))
            fw = restrict(joint, {"X": x})
            fw = marginalize(fw, set(fw.names) - {"W"}).values
            mass = min(mass, float(fw.min()))
    elif design == "treatment":
        sv = min(_sv_ratio(_kernel(joint, "Z", ("W",)), K), _sv_ratio(wv_matrix(None), K))
        gap = _col_gap(_kernel(joint, "X", ("W",)))
        mass = float(marginalize(joint, set(joint.names) - {"W"}).values.min())
    elif design == "cond-treatment":
        fy = marginalize(joint, set(joint.names) - {"Y"}).values
        mass = min(mass, float(fy.min()))
        for y in range(m["Y"].space.cardinality):
            sv = min(sv, _sv_ratio(_kernel(joint, "Z", ("W",), {"Y": y}), K),
                     _sv_ratio(wv_matrix({"Y": y}), K))
            gap = min(gap, _col_gap(_kernel(joint, "X", ("W",), {"Y": y})))
            fw = restrict(joint, {"Y": y})
            fw = marginalize(fw, set(fw.names) - {"W"}).values
            mass = min(mass, float(fw.min()))
    elif design in ("auxiliary", "bounds-auxiliary"):
        fx = marginalize(joint, set(joint.names) - {"X"}).values
        mass = min(mass, float(fx.min()))
        for x in range(2):
            sv = min(sv, _sv_ratio(_kernel(joint, "Z", ("W",), {"X": x}), K),
                     _sv_ratio(wv_matrix({"X": x}), K))
            gap = min(gap, _col_gap(_kernel(joint, "C", ("W",), {"X": x})))
            fvx = restrict(joint, {"X": x})
            fvx = marginalize(fvx, set(fvx.names) - {"V"}).values
            mass = min(mass, float(fvx.min()))
            fw = restrict(joint, {"X": x})
            fw = marginalize(fw, set(fw.names) - {"W"}).values
            mass = min(mass, float(fw.min()))
    else:
        raise InvalidDistribution(f"no diagnostics for design {design!r}")

    cate = oracle_cate(m) if with_cate else None
    cate_gap = np.inf
    if cate is not None and cate.size > 1:
        cate_gap = float(min(abs(a - b) for i, a in enumerate(cate)
                             for b in cate[i + 1:]))
    return FixtureDiagnostics(sv, gap, mass, cate_gap)


def figure_model(figure: str, K: int, seed: int, with_cate_gap: bool = True,
                 max_tries: int = MAX_TRIES) -> Npsem:
    """Seeded random model on a builtin figure graph, redrawn until the
    intended design's diagnostics pass."""
    if figure not in FIGURE_DESIGNS:
        raise InvalidDistribution(f"no generator for figure {figure!r}")
    dag = FIGURES[figure]
    spaces = standard_spaces(K)
    for attempt in range(max_tries):
        m = designed_npsem(dag, spaces, seed=_derive(figure, K, seed, attempt),
                           latent=("W",))
        if figure_diagnostics(m, figure, K, with_cate=with_cate_gap).passes(
                cate_min=1e-3 if with_cate_gap else 0.0):
            return m
    raise InvalidDistribution(f"no well-posed draw for {figure} K={K} seed={seed} "
                              f"in {max_tries} tries")


# ---------------------------------------------------------------------------
# designed kernels (exact means)


def _pmf_with_mean(levels: np.ndarray, mean: float, rng: np.random.Generator,
                   floor: float = 0.05) -> np.ndarray:
    """Random pmf over ``levels`` with the exact requested mean."""
    lo, hi = levels.min(), levels.max()
    if not lo + 1e-9 < mean < hi - 1e-9:
        raise InvalidDistribution(f"mean {mean} outside ({lo}, {hi})")
    q = rng.dirichlet(np.ones(levels.size))
    mq = float(q @ levels)
    # mix q with a two-point law at the extreme levels; the mixture weight is
    # chosen so the two-point mean stays feasible and the result is exact
    slack = min(mean - lo, hi - mean)
    lam = min(0.95, max(0.35, abs(mean - mq) / (abs(mean - mq) + slack) + 0.05))
    m2 = (mean - (1 - lam) * mq) / lam
    p = (1 - lam) * q
    w_hi = (m2 - lo) / (hi - lo)
    p[np.argmax(levels)] += lam * w_hi
    p[np.argmin(levels)] += lam * (1 - w_hi)
    if p.min() < -1e-12:
        raise InvalidDistribution("could not realize requested mean")
    return np.clip(p, 0, None) / p.sum()


def proxy_kernel_with_means(z_levels: np.ndarray, targets: np.ndarray,
                            rng: np.random.Generator) -> np.ndarray:
    """Columns are pmfs over ``z_levels`` whose means equal ``targets`` exactly."""
    cols = [ _pmf_with_mean(z_levels, t, rng) for t in targets ]
    return np.stack(cols, axis=1)


def unbiased_proxy_model(K: int, seed: int, figure: str = "fig2a",
                         monotone_map=None, max_tries: int = MAX_TRIES) -> Npsem:
    """Figure model whose Z proxy is conditionally mean-unbiased for W.

    ``monotone_map`` (per-state target means) switches to the strictly
    monotone-garbling construction; default targets are W's own levels.
    """
    dag = FIGURES[figure]
    spaces = dict(standard_spaces(K))
    z_levels = np.arange(-1.0, K + 1.0)  # wide enough to realize every mean
    spaces["Z"] = VarSpace("Z", z_levels.size, tuple(z_levels))
    w_levels = spaces["W"].level_values()
    targets = np.asarray(monotone_map, dtype=float) if monotone_map is not None \
        else w_levels
    if targets.min() <= z_levels.min() or targets.max() >= z_levels.max():
        raise InvalidDistribution("target means must lie inside the Z level range")
    for attempt in range(max_tries):
        rng = np.random.default_rng(_derive(figure, K, seed, attempt, "ub"))
        z_kernel = proxy_kernel_with_means(z_levels, targets, rng)
        m = designed_npsem(dag, spaces,
                           seed=_derive(figure, K, seed, attempt, "rest"),
                           latent=("W",), kernels={"Z": z_kernel})
        if figure_diagnostics(m, figure, K).passes():
            return m
    raise InvalidDistribution(f"no well-posed unbiased-proxy draw in {max_tries} tries")


def rank_invariant_bounds_model(K: int, seed: int, figure: str = "fig6a",
                                constant_cate: bool = False,
                                cate_values=None,
                                max_tries: int = MAX_TRIES) -> Npsem:
    """Bounds-design model with monotone (or constant) CATE built in.

    The outcome table is driven by per-(w, x) target means with
    E[Y(0)|W=w] increasing in w and the CATE weakly increasing (rank
    invariance); for fig7* the targets vary per v and the outcome ignores
    C so the per-v CATE structure is explicit.
    """
    dag = FIGURES[figure]
    spaces = standard_spaces(K)
    y_levels = spaces["Y"].level_values()
    auxiliary = figure.startswith("fig7")
    for attempt in range(max_tries):
        rng = np.random.default_rng(_derive(figure, K, seed, attempt, "ri"))
        lo, hi = y_levels.min() + 0.15, y_levels.max() - 0.15

        def monotone_targets():
            base = np.sort(rng.uniform(lo, lo + 0.45 * (hi - lo), size=K))
            if cate_values is not None:
                cate = np.asarray(cate_values, dtype=float)
            elif constant_cate:
                cate = np.full(K, rng.uniform(0.1, 0.3))
            else:
                cate = np.sort(rng.uniform(0.05, 0.45 * (hi - lo), size=K))
            return base, cate

        if auxiliary:
            v_card = spaces["V"].cardinality
            kern = np.empty((y_levels.size, K, v_card, 2))
            for v in range(v_card):
                base, cate = monotone_targets()
                for w in range(K):
                    kern[:, w, v, 0] = _pmf_with_mean(y_levels, base[w], rng)
                    kern[:, w, v, 1] = _pmf_with_mean(y_levels, base[w] + cate[w], rng)
            y_parents, y_kernel = ("W", "V", "X"), kern
        else:
            base, cate = monotone_targets()
            kern = np.empty((y_levels.size, K, 2))
            for w in range(K):
                kern[:, w, 0] = _pmf_with_mean(y_levels, base[w], rng)
                kern[:, w, 1] = _pmf_with_mean(y_levels, base[w] + cate[w], rng)
            y_parents, y_kernel = ("W", "X"), kern

        dag_mod = _with_outcome_parents(dag, y_parents)
        actual = dag_mod.parents("Y")
        perm = tuple(y_parents.index(p) + 1 for p in actual)
        y_kernel = np.transpose(y_kernel, (0,) + perm)
        m = designed_npsem(dag_mod, spaces,
                           seed=_derive(figure, K, seed, attempt, "rest"),
                           latent=("W",), kernels={"Y": y_kernel})
        if figure_diagnostics(m, figure, K, with_cate=False).passes(cate_min=0.0):
            return m
    raise InvalidDistribution(f"no well-posed rank-invariant draw in {max_tries} tries")


def _with_outcome_parents(dag: Dag, parents: tuple[str, ...]) -> Dag:
    """Restrict Y's incoming edges to ``parents`` (dropping edges is always
    a valid exclusion under the same graph)."""
    edges = tuple((a, b) for a, b in dag.edges if b != "Y" or a in parents)
    return Dag(dag.nodes, edges)
