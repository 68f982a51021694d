"""Shared test fixtures: random tree construction and reference oracles.

Oracles here are written independently of the engine code paths they
check (plain loops, no shared helpers) so a bug cannot hide on both
sides of a comparison.
"""

from __future__ import annotations

import numpy as np

from ideatree.tree import (
    IdeationTree,
    MetricDirection,
    MetricSpec,
    NodeLevel,
    NodeStatus,
    Provenance,
)

HIGHER = MetricSpec(name="score", direction=MetricDirection.HIGHER_BETTER)
LOWER = MetricSpec(name="loss", direction=MetricDirection.LOWER_BETTER)


def build_random_tree(rng: np.random.Generator, max_nodes: int = 100) -> IdeationTree:
    """Grow a legal tree by random spawn operations.

    Roughly a third of MT nodes are left unevaluated or failed so that
    aggregation code sees every status mix.
    """
    tree = IdeationTree.create("root analysis")
    n_fe = int(rng.integers(1, 8))
    fe_ids = []
    for i in range(n_fe):
        fe = tree.spawn(tree.root.id, NodeLevel.FE, f"fe idea {i}")
        fe.status = NodeStatus.IMPLEMENTED
        fe_ids.append(fe.id)
    budget = max_nodes - len(tree.nodes)
    while budget > 0 and rng.random() < 0.95:
        fe_id = int(rng.choice(fe_ids))
        mt = tree.spawn(fe_id, NodeLevel.MT, f"mt idea {len(tree.nodes)}")
        roll = rng.random()
        if roll < 0.66:
            tree.mark_evaluated(mt.id, float(rng.normal(0.0, 10.0)))
        elif roll < 0.8:
            tree.mark_failed(mt.id)
        budget -= 1
    return tree


def oracle_aggregates(tree: IdeationTree) -> dict[int, float | None]:
    """Brute-force recomputation of every aggregate from raw leaf scores."""
    expected: dict[int, float | None] = {}
    fe_values = []
    for node in tree.nodes.values():
        if node.level is not NodeLevel.FE:
            continue
        scores = []
        for child in tree.nodes.values():
            if child.parent_id == node.id and child.status is NodeStatus.EVALUATED:
                scores.append(child.raw_score)
        if scores:
            mean = sum(scores) / len(scores)
            expected[node.id] = mean
            fe_values.append(mean)
        else:
            expected[node.id] = None
    root = tree.root
    expected[root.id] = sum(fe_values) / len(fe_values) if fe_values else None
    return expected


def make_world(
    seed: int = 0,
    dim: int = 2,
    n_fe: int = 3,
    m_mt: int = 2,
    noise: float = 0.0,
    merge_bonus: float = 0.0,
    budget: float = 1e9,
    metric: MetricSpec = HIGHER,
    mt_jitter: float = 0.05,
):
    """A small ready-to-search world: seeded synthetic generator, a
    simulated landscape evaluator on one clock, and a tree preloaded
    with ``n_fe`` FE nodes carrying ``m_mt`` evaluated children each."""
    from types import SimpleNamespace

    from ideatree.clock import SimulatedClock
    from ideatree.evaluation import EvalMode, LandscapeConfig, SimulatedEvaluator
    from ideatree.generation import ContextState, SpaceConfig, SyntheticGenerator
    from ideatree.tree import backpropagate

    space = SpaceConfig(dimension=dim, mt_jitter=mt_jitter)
    gen = SyntheticGenerator(space, seed)
    landscape = LandscapeConfig(
        dimension=dim, noise_sigma=noise, full_cost=1.0, debug_cost=0.1,
        merge_bonus=merge_bonus,
    )
    clock = SimulatedClock(budget)
    evaluator = SimulatedEvaluator(landscape, metric, seed=seed, clock=clock)
    tree = IdeationTree.create("root analysis")
    ctx = ContextState()
    for text in gen.propose_fe(ctx, n_fe):
        fe = tree.spawn(tree.root.id, NodeLevel.FE, text)
        fe.status = NodeStatus.IMPLEMENTED
        for t in gen.propose_mt(fe, ctx, m_mt):
            mt = tree.spawn(fe.id, NodeLevel.MT, t)
            tree.mark_evaluated(mt.id, evaluator.evaluate(mt, EvalMode.FULL))
    backpropagate(tree)
    return SimpleNamespace(
        tree=tree, ctx=ctx, gen=gen, evaluator=evaluator, metric=metric,
        clock=clock, landscape=landscape, space=space,
        rng=np.random.default_rng(seed),
    )


def attach_evaluated_fe(
    tree: IdeationTree, scores: list[float], idea: str = "fe", vector: str | None = None
) -> int:
    """Spawn one FE node with the given evaluated MT children, return its id."""
    fe = tree.spawn(tree.root.id, NodeLevel.FE, vector or idea)
    fe.status = NodeStatus.IMPLEMENTED
    for k, s in enumerate(scores):
        mt = tree.spawn(fe.id, NodeLevel.MT, vector or f"{idea} mt {k}")
        tree.mark_evaluated(mt.id, s)
    return fe.id
