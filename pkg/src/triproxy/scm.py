"""Discrete structural equations models with explicit exogenous noise.

This is the ground-truth oracle: every node is a deterministic function of
its parents and one private categorical noise term, so all observable,
interventional, and cross-world joints are computable *exactly* by
enumerating noise configurations.  Cross-world joints share the same noise
draw across intervention arms, which is what the counterfactual
independence statements in the proposition battery are about.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EnumerationTooLarge,
    InvalidDistribution,
    UnknownNode,
)
from .graphs import Dag
from .prob import ProbTensor, VarSpace, marginalize

ENUMERATION_GUARD = 10 ** 7


@dataclass(frozen=True)
class NodeSpec:
    """One structural equation: value = table[parent levels..., noise level]."""

    space: VarSpace
    parents: tuple[str, ...]
    table: np.ndarray = field(repr=False)     # int indices into the node's levels
    noise_pmf: np.ndarray = field(repr=False)

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.int64)
        pmf = np.asarray(self.noise_pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size < 1:
            raise InvalidDistribution(f"{self.space.name}: bad noise pmf")
        if abs(pmf.sum() - 1.0) > 1e-10 or pmf.min() < 0:
            raise InvalidDistribution(f"{self.space.name}: noise pmf not a distribution")
        if table.shape[-1] != pmf.size:
            raise InvalidDistribution(f"{self.space.name}: table/noise shape mismatch")
        if table.min() < 0 or table.max() >= self.space.cardinality:
            raise InvalidDistribution(f"{self.space.name}: table values out of range")
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "noise_pmf", pmf)
        self.table.setflags(write=False)
        self.noise_pmf.setflags(write=False)

    @property
    def noise_card(self) -> int:
        return self.noise_pmf.size


@dataclass(frozen=True)
class Npsem:
    """Nodes in an order consistent with the graph; all noises independent."""

    nodes: tuple[NodeSpec, ...]
    latent: tuple[str, ...] = ()

    def __post_init__(self):
        nodes = tuple(self.nodes)
        names = [n.space.name for n in nodes]
        if len(set(names)) != len(names):
            raise InvalidDistribution("duplicate node names")
        seen: set[str] = set()
        for n in nodes:
            for p in n.parents:
                if p not in seen:
                    raise InvalidDistribution(
                        f"{n.space.name}: parent {p!r} not defined earlier (or cycle)")
            expected = tuple(s.cardinality for s in
                             (self.node(p, nodes).space for p in n.parents)) + (n.noise_card,)
            if n.table.shape != expected:
                raise InvalidDistribution(
                    f"{n.space.name}: table shape {n.table.shape}, expected {expected}")
            seen.add(n.space.name)
        for l in self.latent:
            if l not in names:
                raise UnknownNode(f"latent {l!r} not a node")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "latent", tuple(self.latent))

    @staticmethod
    def node(name: str, nodes) -> NodeSpec:
        for n in nodes:
            if n.space.name == name:
                return n
        raise UnknownNode(f"unknown node {name!r}")

    def __getitem__(self, name: str) -> NodeSpec:
        return self.node(name, self.nodes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.space.name for n in self.nodes)

    def graph(self) -> Dag:
        edges = [(p, n.space.name) for n in self.nodes for p in n.parents]
        return Dag(self.names, tuple(edges))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out = {"nodes": []}
        for n in self.nodes:
            d = n.space.to_dict()
            d["parents"] = list(n.parents)
            d["noise_card"] = n.noise_card
            d["table"] = n.table.ravel(order="C").tolist()
            d["noise_pmf"] = n.noise_pmf.tolist()
            out["nodes"].append(d)
        if self.latent:
            out["latent"] = list(self.latent)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Npsem":
        specs = []
        spaces = {}
        for nd in d["nodes"]:
            space = VarSpace.from_dict(nd)
            spaces[space.name] = space
            shape = tuple(spaces[p].cardinality for p in nd["parents"]) + (int(nd["noise_card"]),)
            table = np.asarray(nd["table"], dtype=np.int64).reshape(shape, order="C")
            specs.append(NodeSpec(space, tuple(nd["parents"]), table,
                                  np.asarray(nd["noise_pmf"], dtype=float)))
        return cls(tuple(specs), tuple(d.get("latent", ())))

    @classmethod
    def from_json(cls, s: str) -> "Npsem":
        return cls.from_dict(json.loads(s))


# ---------------------------------------------------------------------------
# exact enumeration


def _noise_grid(m: Npsem) -> tuple[np.ndarray, np.ndarray]:
    """All noise configurations: (per-node index arrays, per-config weights)."""
    cards = [n.noise_card for n in m.nodes]
    total = int(np.prod(cards, dtype=np.int64))
    if total > ENUMERATION_GUARD:
        raise EnumerationTooLarge(
            f"{total} noise configurations exceed the {ENUMERATION_GUARD} guard")
    grid = np.indices(cards).reshape(len(cards), total)
    weights = np.ones(total)
    for i, n in enumerate(m.nodes):
        weights *= n.noise_pmf[grid[i]]
    return grid, weights


def _evaluate(m: Npsem, grid: np.ndarray, clamp: dict | None = None) -> dict:
    """Node values for every noise configuration, with optional clamping."""
    clamp = clamp or {}
    vals: dict[str, np.ndarray] = {}
    for i, n in enumerate(m.nodes):
        name = n.space.name
        if name in clamp:
            vals[name] = np.full(grid.shape[1], clamp[name], dtype=np.int64)
            continue
        idx = tuple(vals[p] for p in n.parents) + (grid[i],)
        vals[name] = n.table[idx]
    return vals


def _accumulate(value_arrays, spaces, weights) -> ProbTensor:
    cards = tuple(s.cardinality for s in spaces)
    flat = np.ravel_multi_index(tuple(value_arrays), cards)
    dense = np.bincount(flat, weights=weights, minlength=int(np.prod(cards)))
    return ProbTensor.build(tuple(spaces), dense.reshape(cards))


def observable_joint(m: Npsem) -> ProbTensor:
    """Exact joint over every node (latent included), mass one."""
    grid, weights = _noise_grid(m)
    vals = _evaluate(m, grid)
    spaces = [n.space for n in m.nodes]
    return _accumulate([vals[s.name] for s in spaces], spaces, weights)


def observed_joint(m: Npsem) -> ProbTensor:
    """Joint over the non-latent nodes only (the estimation input)."""
    return marginalize(observable_joint(m), set(m.latent))


def arm_label(outcome: str, levels: tuple[int, ...]) -> str:
    return f"{outcome}({','.join(str(v) for v in levels)})"


def counterfactual_joint(m: Npsem, intervene_on, outcome: str = "Y",
                         keep=None) -> ProbTensor:
    """Cross-world joint of every potential outcome arm plus the factual nodes.

    One axis per intervention arm, named e.g. ``Y(0)`` or ``Y(1,2)``,
    carrying the outcome's numeric levels; noise is shared across arms, so
    consistency ``Y(X) = Y`` holds exactly.  ``keep`` restricts the factual
    axes retained (default: all nodes).
    """
    intervene_on = tuple(intervene_on)
    for n in intervene_on:
        m[n]
    m[outcome]
    grid, weights = _noise_grid(m)
    vals = _evaluate(m, grid)

    arms = list(itertools.product(*[range(m[n].space.cardinality) for n in intervene_on]))
    arm_spaces, arm_values = [], []
    y_space = m[outcome].space
    for arm in arms:
        clamp = dict(zip(intervene_on, arm))
        cf_vals = _evaluate(m, grid, clamp=clamp)
        arm_spaces.append(VarSpace(arm_label(outcome, arm), y_space.cardinality,
                                   y_space.levels))
        arm_values.append(cf_vals[outcome])

    keep = tuple(keep) if keep is not None else m.names
    spaces = arm_spaces + [m[n].space for n in keep]
    values = arm_values + [vals[n] for n in keep]
    total_cells = int(np.prod([s.cardinality for s in spaces], dtype=np.int64))
    if total_cells > ENUMERATION_GUARD:
        raise EnumerationTooLarge(f"cross-world tensor would hold {total_cells} cells")
    return ProbTensor.build(tuple(spaces), _accumulate(values, spaces, weights).values)


_CF_NAME = re.compile(r"^([A-Za-z_]\w*)\(([\w,]+)\)$")


def _independent(t: ProbTensor, left, right, given, tol: float) -> bool:
    """Exact factorization test: f(l,r,g)·f(g) == f(l,g)·f(r,g) cellwise."""
    keep = tuple(left) + tuple(right) + tuple(given)
    j = marginalize(t, set(t.names) - set(keep)).reorder(keep)
    nl, nr, ng = len(left), len(right), len(given)
    shape = j.values.shape
    a = j.values.reshape(int(np.prod(shape[:nl], dtype=int)),
                         int(np.prod(shape[nl:nl + nr], dtype=int)),
                         int(np.prod(shape[nl + nr:], dtype=int)) if ng else 1)
    fg = a.sum(axis=(0, 1))
    flg = a.sum(axis=1)
    frg = a.sum(axis=0)
    lhs = a * fg[np.newaxis, np.newaxis, :]
    rhs = flg[:, np.newaxis, :] * frg[np.newaxis, :, :]
    return bool(np.max(np.abs(lhs - rhs)) <= tol)


def check_counterfactual_ci(m: Npsem, left_template: str, right, given=(),
                            tol: float = 1e-10) -> bool:
    """Check a counterfactual independence like ``Y(x) ⊥ (X,V) | W``.

    ``left_template`` uses lower-case letters for the intervened nodes,
    e.g. ``"Y(x)"`` or ``"Y(x,w)"``; the statement is verified for every
    intervention arm on the exact cross-world joint.
    """
    match = _CF_NAME.match(left_template.replace(" ", ""))
    if not match:
        raise InvalidDistribution(f"bad counterfactual template {left_template!r}")
    outcome = match.group(1)
    intervene_on = tuple(s.upper() for s in match.group(2).split(","))
    right, given = tuple(right), tuple(given)
    keep = tuple(dict.fromkeys(right + given))
    joint = counterfactual_joint(m, intervene_on, outcome=outcome, keep=keep)
    arms = itertools.product(*[range(m[n].space.cardinality) for n in intervene_on])
    for arm in arms:
        name = arm_label(outcome, arm)
        if not _independent(joint, (name,), right, given, tol):
            return False
    return True


def consistency_residual(m: Npsem, treatment: str = "X", outcome: str = "Y") -> float:
    """Max-abs gap between the row-selected cross-world joint and the factual law."""
    x_card = m[treatment].space.cardinality
    rest = tuple(n for n in m.names if n not in (outcome, treatment))
    fact = observable_joint(m).reorder((outcome, treatment) + rest)
    joint = counterfactual_joint(m, (treatment,), outcome=outcome)
    worst = 0.0
    for x in range(x_card):
        name = arm_label(outcome, (x,))
        drop = {arm_label(outcome, (k,)) for k in range(x_card) if k != x} | {outcome}
        j = marginalize(joint, drop).reorder((name, treatment) + rest)
        # on the event treatment == x the arm coincides with the factual outcome
        diff = j.values[:, x, ...] - fact.values[:, x, ...]
        worst = max(worst, float(np.abs(diff).max()))
    return worst


# ---------------------------------------------------------------------------
# sampling


def sample(m: Npsem, n: int, seed: int) -> dict[str, np.ndarray]:
    """IID ancestral draws; deterministic under a fixed seed."""
    if n < 1:
        raise InvalidDistribution("need n >= 1 draws")
    rng = np.random.default_rng(seed)
    noise = {node.space.name: rng.choice(node.noise_card, size=n, p=node.noise_pmf)
             for node in m.nodes}
    vals: dict[str, np.ndarray] = {}
    for node in m.nodes:
        idx = tuple(vals[p] for p in node.parents) + (noise[node.space.name],)
        vals[node.space.name] = node.table[idx]
    return vals


def empirical_tensor(dataset: dict[str, np.ndarray], spaces) -> ProbTensor:
    spaces = tuple(spaces)
    arrays = [np.asarray(dataset[s.name], dtype=np.int64) for s in spaces]
    n = arrays[0].size
    return _accumulate(arrays, spaces, np.full(n, 1.0 / n))
