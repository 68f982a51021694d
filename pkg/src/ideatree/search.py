"""Tree search operators: staged expansion, score-guided merging,
softmax selection, and the short/long-term merge memories.

A main-loop pass runs ``adding_stage`` then ``merging_stage``. Both
mutate the tree in place, emit structured events when given a log, and
stop early (committing partial work) when the clock runs out.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    BudgetExhausted,
    EmptyInput,
    EvaluationFailure,
    GeneratorFailure,
    InsufficientParents,
    InvalidParams,
    NoEvaluatedChildren,
    NonFiniteScore,
    UnknownParent,
)
from .events import EventKind, RunLog
from .generation import ContextState, ExternalQueryPolicy, SegmentTag, gate_external_query
from .tree import (
    IdeationTree,
    MetricSpec,
    Node,
    NodeLevel,
    NodeStatus,
    Provenance,
    backpropagate,
)

logger = logging.getLogger(__name__)

MergePairKey = tuple[int, int]


def pair_key(a: int, b: int) -> MergePairKey:
    """Canonical unordered key for an FE pair."""
    if a == b:
        raise InvalidParams(f"a pair needs two distinct nodes, got {a} twice")
    return (a, b) if a < b else (b, a)


# =====================================================================
# Selection primitives
# =====================================================================

def orient_scores(scores: Sequence[float], metric: MetricSpec) -> list[float]:
    """Map raw metric values onto a higher-is-better axis."""
    out = []
    for s in scores:
        if s is None or not math.isfinite(s):
            raise NonFiniteScore(f"cannot orient score {s!r}")
        out.append(metric.orient(float(s)))
    return out


@dataclass(frozen=True)
class SelectionDistribution:
    """Aligned ids and probabilities; checked on construction."""

    node_ids: tuple[int, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.node_ids) != len(self.probabilities):
            raise InvalidParams("ids and probabilities differ in length")
        if any(p < 0 for p in self.probabilities):
            raise InvalidParams("negative probability")
        total = sum(self.probabilities)
        if abs(total - 1.0) > 1e-9:
            raise InvalidParams(f"probabilities sum to {total}, not 1")

    def sample_without_replacement(self, k: int, rng: np.random.Generator) -> list[int]:
        """Draw up to k distinct ids, renormalizing after each draw."""
        ids = list(self.node_ids)
        probs = np.asarray(self.probabilities, dtype=float)
        picked: list[int] = []
        for _ in range(min(k, len(ids))):
            p = probs / probs.sum()
            idx = int(rng.choice(len(ids), p=p))
            picked.append(ids.pop(idx))
            probs = np.delete(probs, idx)
        return picked


def softmax_select(
    oriented: Sequence[float],
    temperature: float = 1.0,
    node_ids: Optional[Sequence[int]] = None,
) -> SelectionDistribution:
    """Softmax over oriented scores, computed with max subtraction so
    large magnitudes cannot overflow."""
    if len(oriented) == 0:
        raise EmptyInput("softmax over an empty score list")
    if temperature <= 0:
        raise InvalidParams(f"temperature must be positive, got {temperature}")
    arr = np.asarray(oriented, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteScore("non-finite value in oriented scores")
    z = (arr - arr.max()) / temperature
    e = np.exp(z)
    p = e / e.sum()
    ids = tuple(node_ids) if node_ids is not None else tuple(range(len(arr)))
    return SelectionDistribution(node_ids=ids, probabilities=tuple(float(x) for x in p))


def sample_top(
    tree: IdeationTree,
    fe_node_id: int,
    k: int,
    rng: np.random.Generator,
    *,
    metric: Optional[MetricSpec] = None,
    temperature: float = 1.0,
    proportional: bool = False,
) -> list[Node]:
    """Sample up to k distinct evaluated MT children of an FE node,
    weighted towards high oriented scores.

    Weights come from a softmax over oriented child scores by default.
    ``proportional`` switches to probabilities directly proportional to
    the oriented scores, which requires them all to be positive. With no
    metric given, raw scores are treated as higher-is-better.
    """
    if fe_node_id not in tree.nodes:
        raise UnknownParent(f"node {fe_node_id} not in tree")
    if k < 0:
        raise InvalidParams(f"k must be non-negative, got {k}")
    children = sorted(tree.evaluated_mt_children(fe_node_id), key=lambda n: n.id)
    if not children:
        raise NoEvaluatedChildren(f"node {fe_node_id} has no evaluated children")
    if k == 0:
        return []
    raw = [c.raw_score for c in children]
    oriented = orient_scores(raw, metric) if metric is not None else [float(s) for s in raw]
    if proportional:
        if any(s <= 0 for s in oriented):
            raise InvalidParams(
                "proportional sampling needs strictly positive oriented scores"
            )
        total = sum(oriented)
        dist = SelectionDistribution(
            node_ids=tuple(c.id for c in children),
            probabilities=tuple(s / total for s in oriented),
        )
    else:
        dist = softmax_select(oriented, temperature, [c.id for c in children])
    picked = dist.sample_without_replacement(k, rng)
    by_id = {c.id: c for c in children}
    return [by_id[i] for i in picked]


# =====================================================================
# Merge memory
# =====================================================================

@dataclass
class MergeMemory:
    """Short-term failure counts and the long-term exclusion set.

    A pair lives in at most one buffer. Failures accumulate in
    ``short_term`` until they reach ``theta_fail``, at which point the
    pair is promoted to ``long_term`` and never re-attempted. A
    successful merge also parks its pair in ``long_term`` so the same
    combination is not redone.
    """

    theta_fail: int = 2
    short_term: dict[MergePairKey, int] = field(default_factory=dict)
    long_term: set[MergePairKey] = field(default_factory=set)

    def __post_init__(self):
        if self.theta_fail < 1:
            raise InvalidParams(f"theta_fail must be >= 1, got {self.theta_fail}")

    def excluded(self, key: MergePairKey) -> bool:
        return key in self.long_term

    def record_failure(self, key: MergePairKey) -> bool:
        """Count one failure; returns True when this promoted the pair."""
        if key in self.long_term:
            return False
        count = self.short_term.get(key, 0) + 1
        if count >= self.theta_fail:
            self.short_term.pop(key, None)
            self.long_term.add(key)
            return True
        self.short_term[key] = count
        return False

    def record_success(self, key: MergePairKey) -> None:
        self.short_term.pop(key, None)
        self.long_term.add(key)

    def failures(self, key: MergePairKey) -> int:
        return self.short_term.get(key, 0)

    def to_dict(self) -> dict:
        return {
            "theta_fail": self.theta_fail,
            "short_term": [[list(k), v] for k, v in sorted(self.short_term.items())],
            "long_term": [list(k) for k in sorted(self.long_term)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MergeMemory":
        mem = cls(theta_fail=int(d["theta_fail"]))
        mem.short_term = {(int(k[0]), int(k[1])): int(v) for k, v in d["short_term"]}
        mem.long_term = {(int(k[0]), int(k[1])) for k in d["long_term"]}
        return mem


# =====================================================================
# Stage parameters and evaluation policy
# =====================================================================

class SelectionMode(str, Enum):
    # expansion targets chosen over FE nodes by aggregated score (default),
    # or over the freshly scored MT nodes themselves
    FE_AGGREGATE = "fe_aggregate"
    MT_LITERAL = "mt_literal"


@dataclass(frozen=True)
class StageParams:
    """Counts and knobs shared by both stages.

    n_fe: new FE ideas per adding stage / FE pairs per merging stage.
    m_mt: MT children attached per expanded or merged node.
    n_selected: size of the post-expansion / merge-target subset.
    """

    n_fe: int
    m_mt: int
    n_selected: int
    softmax_temperature: float = 1.0
    merge_epsilon: float = 0.0

    def __post_init__(self):
        for name in ("n_fe", "m_mt", "n_selected"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.softmax_temperature <= 0:
            raise InvalidParams(
                f"softmax_temperature must be positive, got {self.softmax_temperature}"
            )
        if not math.isfinite(self.merge_epsilon):
            raise InvalidParams("merge_epsilon must be finite")


@dataclass
class EvalPolicy:
    """How fresh candidates get scored.

    ``validation_attempts`` models the shake-out runs a new candidate
    needs before its metric run: charged at debug cost when
    ``accelerated_debug`` is on, at full cost otherwise.

    ``predict_fn`` enables predict-then-evaluate pruning: candidates are
    ranked by predicted score and only the top ``predict_fraction`` get
    the real evaluation; the rest keep just their prediction. Prediction
    failures fall back to a real evaluation.
    """

    validation_attempts: int = 0
    accelerated_debug: bool = True
    predict_fn: Optional[Callable[[str], float]] = None
    predict_fraction: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.validation_attempts < 0:
            raise InvalidParams("validation_attempts must be >= 0")
        if not 0.0 < self.predict_fraction <= 1.0:
            raise InvalidParams("predict_fraction must be in (0, 1]")
        if self.workers < 1:
            raise InvalidParams("workers must be >= 1")


class _BudgetStop(Exception):
    """Internal: the clock ran out mid-stage."""


def _check_budget(clock) -> None:
    if clock is not None and clock.exhausted():
        raise _BudgetStop()


def _emit(log: Optional[RunLog], kind: EventKind, **payload):
    if log is not None:
        log.append(kind, **payload)


# =====================================================================
# Candidate scoring
# =====================================================================

def _run_one_evaluation(node: Node, evaluator, policy: EvalPolicy):
    """Validation cycles then the metric run; returns the raw score.
    Raises EvaluationFailure. May run on a worker thread."""
    from .evaluation import EvalMode  # local import avoids a cycle at module load

    shakeout_mode = EvalMode.DEBUG if policy.accelerated_debug else EvalMode.FULL
    for _ in range(policy.validation_attempts):
        evaluator.evaluate(node, shakeout_mode)
    return evaluator.evaluate(node, EvalMode.FULL)


def _evaluate_batch(
    tree: IdeationTree,
    nodes: list[Node],
    evaluator,
    metric: MetricSpec,
    policy: EvalPolicy,
    clock,
    log: Optional[RunLog],
) -> None:
    """Evaluate ``nodes``, committing results in ascending node-id order.

    The budget is checked before each dispatch; on exhaustion whatever
    already ran is committed and the stage unwinds via _BudgetStop.
    """
    ordered = sorted(nodes, key=lambda n: n.id)
    results: dict[int, tuple[Optional[float], Optional[str]]] = {}

    def commit():
        for node in ordered:
            if node.id not in results:
                continue
            score, error = results[node.id]
            if error is None:
                tree.mark_evaluated(node.id, score)
                _emit(log, EventKind.NODE_EVALUATED, node_id=node.id,
                      raw_score=node.raw_score, status=node.status.value)
            else:
                tree.mark_failed(node.id)
                _emit(log, EventKind.NODE_EVALUATED, node_id=node.id,
                      raw_score=None, status=node.status.value, error=error)

    try:
        if policy.workers <= 1:
            for node in ordered:
                _check_budget(clock)
                try:
                    results[node.id] = (float(_run_one_evaluation(node, evaluator, policy)), None)
                except EvaluationFailure as exc:
                    results[node.id] = (None, str(exc) or "evaluation failed")
        else:
            with ThreadPoolExecutor(max_workers=policy.workers) as pool:
                futures = []
                for node in ordered:
                    _check_budget(clock)
                    futures.append((node, pool.submit(_run_one_evaluation, node, evaluator, policy)))
                for node, fut in futures:
                    try:
                        results[node.id] = (float(fut.result()), None)
                    except EvaluationFailure as exc:
                        results[node.id] = (None, str(exc) or "evaluation failed")
    finally:
        commit()


def _propose_and_score_mt(
    tree: IdeationTree,
    fe_node: Node,
    ctx: Optional[ContextState],
    gen,
    evaluator,
    m: int,
    metric: MetricSpec,
    policy: EvalPolicy,
    clock,
    log: Optional[RunLog],
) -> list[Node]:
    """Attach m fresh MT children under ``fe_node`` and score them,
    applying predict-then-evaluate pruning when the policy carries a
    predictor. Returns the new nodes."""
    texts = gen.propose_mt(fe_node, ctx, m)
    spawned = []
    for text in texts:
        node = tree.spawn(fe_node.id, NodeLevel.MT, text)
        _emit(log, EventKind.NODE_PROPOSED, node=node.to_dict())
        spawned.append(node)

    to_evaluate = spawned
    if policy.predict_fn is not None and len(spawned) > 1:
        predicted_ok: list[Node] = []
        fallback: list[Node] = []
        for node in spawned:
            try:
                value = float(policy.predict_fn(node.idea_text))
            except Exception as exc:
                logger.debug("prediction failed for node %s: %s", node.id, exc)
                fallback.append(node)
                continue
            node.predicted_score = value
            _emit(log, EventKind.PREDICTION_MADE, node_id=node.id, predicted=value)
            predicted_ok.append(node)
        keep_n = max(1, math.ceil(policy.predict_fraction * len(predicted_ok))) if predicted_ok else 0
        ranked = sorted(
            predicted_ok,
            key=lambda n: (-metric.orient(n.predicted_score), n.id),
        )
        to_evaluate = sorted(fallback + ranked[:keep_n], key=lambda n: n.id)

    _evaluate_batch(tree, to_evaluate, evaluator, metric, policy, clock, log)
    return spawned


# =====================================================================
# Merge outcome
# =====================================================================

def merge_delta(
    tree: IdeationTree,
    merged_id: int,
    parent_a: int,
    parent_b: int,
    metric: MetricSpec,
) -> float:
    """Oriented improvement of the merged node's best MT child over the
    better of its parents' best children."""
    for nid in (merged_id, parent_a, parent_b):
        if nid not in tree.nodes:
            raise UnknownParent(f"node {nid} not in tree")

    def best(fe_id: int) -> float:
        kids = tree.evaluated_mt_children(fe_id)
        if not kids:
            raise NoEvaluatedChildren(f"node {fe_id} has no evaluated children")
        return max(metric.orient(c.raw_score) for c in kids)

    return best(merged_id) - max(best(parent_a), best(parent_b))


def is_merge_failure(
    tree: IdeationTree,
    merged_id: int,
    parent_a: int,
    parent_b: int,
    metric: MetricSpec,
    epsilon: float = 0.0,
) -> bool:
    """A merge fails when its best child does not beat both parents'
    bests by more than epsilon. Ties are failures."""
    return merge_delta(tree, merged_id, parent_a, parent_b, metric) <= epsilon


# =====================================================================
# Adding stage
# =====================================================================

def adding_stage(
    tree: IdeationTree,
    ctx: ContextState,
    gen,
    evaluator,
    params: StageParams,
    metric: MetricSpec,
    rng: np.random.Generator,
    *,
    log: Optional[RunLog] = None,
    clock=None,
    policy: Optional[EvalPolicy] = None,
    external_policy: ExternalQueryPolicy = ExternalQueryPolicy.ALWAYS,
    external_cap: Optional[int] = None,
    max_add: Optional[int] = None,
    parent_window: Optional[int] = None,
    selection_mode: SelectionMode = SelectionMode.FE_AGGREGATE,
) -> IdeationTree:
    """One expansion pass.

    Enriches the context, proposes ``n_fe`` new FE ideas with ``m_mt``
    scored MT children each, then softmax-selects ``n_selected`` FE
    nodes by aggregated score and gives each of those up to ``m_mt``
    more children (capped by ``max_add`` when set). ``parent_window``
    restricts selection to FE nodes created within that many recent
    iterations. ``selection_mode=MT_LITERAL`` instead samples the subset
    over the freshly scored MT nodes and expands their parents.

    Raises GeneratorFailure (stage aborted, committed nodes stay) and
    BudgetExhausted (partial results committed).
    """
    policy = policy or EvalPolicy()
    _emit(log, EventKind.STAGE_STARTED, stage="adding", iteration=tree.iteration)
    try:
        _check_budget(clock)
        segment = gen.enrich_eda(tree, ctx)
        if segment:
            ctx.append(SegmentTag.EDA, segment)
        gate_external_query(ctx, external_policy, gen, cap=external_cap)

        fe_texts = gen.propose_fe(ctx, params.n_fe)
        new_fe: list[Node] = []
        for text in fe_texts:
            node = tree.spawn(tree.root.id, NodeLevel.FE, text, status=NodeStatus.IMPLEMENTED)
            _emit(log, EventKind.NODE_PROPOSED, node=node.to_dict())
            new_fe.append(node)

        fresh_mt: list[Node] = []
        for fe in new_fe:
            fresh_mt.extend(
                _propose_and_score_mt(tree, fe, ctx, gen, evaluator, params.m_mt,
                                      metric, policy, clock, log)
            )
        backpropagate(tree)

        targets = _select_expansion_targets(
            tree, fresh_mt, params, metric, rng, parent_window, selection_mode
        )
        per_target = params.m_mt if max_add is None else min(params.m_mt, max_add)
        for fe_id in targets:
            _propose_and_score_mt(tree, tree.nodes[fe_id], ctx, gen, evaluator,
                                  per_target, metric, policy, clock, log)
        backpropagate(tree)
    except _BudgetStop:
        backpropagate(tree)
        _emit(log, EventKind.STAGE_FINISHED, stage="adding", iteration=tree.iteration,
              outcome="budget_exhausted")
        raise BudgetExhausted("adding stage stopped by the clock")
    except GeneratorFailure as exc:
        backpropagate(tree)
        _emit(log, EventKind.STAGE_FINISHED, stage="adding", iteration=tree.iteration,
              outcome="generator_failure", error=str(exc))
        raise
    _emit(log, EventKind.STAGE_FINISHED, stage="adding", iteration=tree.iteration, outcome="ok")
    return tree


def _select_expansion_targets(
    tree: IdeationTree,
    fresh_mt: list[Node],
    params: StageParams,
    metric: MetricSpec,
    rng: np.random.Generator,
    parent_window: Optional[int],
    selection_mode: SelectionMode,
) -> list[int]:
    """FE ids receiving extra children, chosen without replacement from
    a softmax over oriented scores."""
    if selection_mode is SelectionMode.MT_LITERAL:
        cands = sorted((n for n in fresh_mt if n.status is NodeStatus.EVALUATED),
                       key=lambda n: n.id)
        if not cands:
            return []
        oriented = [metric.orient(n.raw_score) for n in cands]
        dist = softmax_select(oriented, params.softmax_temperature, [n.id for n in cands])
        picked = dist.sample_without_replacement(params.n_selected, rng)
        return [tree.nodes[mt_id].parent_id for mt_id in picked]

    cands = []
    for fe in sorted(tree.fe_nodes(), key=lambda n: n.id):
        if fe.aggregated_score is None:
            continue
        if parent_window is not None and (tree.iteration - fe.created_iteration) >= parent_window:
            continue
        cands.append(fe)
    if not cands:
        return []
    oriented = [metric.orient(fe.aggregated_score) for fe in cands]
    dist = softmax_select(oriented, params.softmax_temperature, [fe.id for fe in cands])
    return dist.sample_without_replacement(params.n_selected, rng)


# =====================================================================
# Merging stage
# =====================================================================

def merging_stage(
    tree: IdeationTree,
    mem: MergeMemory,
    gen,
    evaluator,
    params: StageParams,
    metric: MetricSpec,
    rng: np.random.Generator,
    *,
    ctx: Optional[ContextState] = None,
    log: Optional[RunLog] = None,
    clock=None,
    policy: Optional[EvalPolicy] = None,
    resample_k: int = 1,
    proportional_resample: bool = False,
) -> tuple[IdeationTree, MergeMemory]:
    """One recombination pass.

    Samples ``n_fe`` FE pairs uniformly from the eligible set (both
    members have evaluated children, pair not in long-term memory),
    merges each into a new FE node that gets ``m_mt`` fresh scored MT
    children plus ``resample_k`` score-carrying copies sampled from each
    parent, and books the outcome into the merge memory. Then
    ``n_selected`` FE nodes are softmax-selected and each has its two
    best MT children merged into one new scored child.

    Raises InsufficientParents when fewer than two FE nodes are
    eligible, GeneratorFailure, and BudgetExhausted.
    """
    policy = policy or EvalPolicy()
    if resample_k < 0:
        raise InvalidParams(f"resample_k must be >= 0, got {resample_k}")
    eligible = sorted(
        fe.id for fe in tree.fe_nodes() if tree.evaluated_mt_children(fe.id)
    )
    if len(eligible) < 2:
        raise InsufficientParents(
            f"merging needs >= 2 FE nodes with evaluated children, found {len(eligible)}"
        )
    _emit(log, EventKind.STAGE_STARTED, stage="merging", iteration=tree.iteration)
    try:
        candidates = [k for k in combinations(eligible, 2) if not mem.excluded(k)]
        n_pairs = min(params.n_fe, len(candidates))
        idx = rng.choice(len(candidates), size=n_pairs, replace=False) if candidates else []
        chosen = [candidates[int(i)] for i in idx]

        for a_id, b_id in chosen:
            _check_budget(clock)
            _merge_one_pair(tree, mem, gen, evaluator, params, metric, rng,
                            a_id, b_id, ctx, log, clock, policy,
                            resample_k, proportional_resample)
        backpropagate(tree)

        _merge_best_children(tree, gen, evaluator, params, metric, rng,
                             ctx, log, clock, policy)
        backpropagate(tree)
    except _BudgetStop:
        backpropagate(tree)
        _emit(log, EventKind.STAGE_FINISHED, stage="merging", iteration=tree.iteration,
              outcome="budget_exhausted")
        raise BudgetExhausted("merging stage stopped by the clock")
    except GeneratorFailure as exc:
        backpropagate(tree)
        _emit(log, EventKind.STAGE_FINISHED, stage="merging", iteration=tree.iteration,
              outcome="generator_failure", error=str(exc))
        raise
    _emit(log, EventKind.STAGE_FINISHED, stage="merging", iteration=tree.iteration, outcome="ok")
    return tree, mem


def _merge_one_pair(
    tree, mem, gen, evaluator, params, metric, rng,
    a_id, b_id, ctx, log, clock, policy, resample_k, proportional_resample,
):
    key = pair_key(a_id, b_id)
    node_a, node_b = tree.nodes[a_id], tree.nodes[b_id]
    merged_text = gen.merge_fe(node_a, node_b, ctx)
    merged = tree.spawn(
        tree.root.id, NodeLevel.FE, merged_text,
        provenance=Provenance.merged(a_id, b_id), status=NodeStatus.IMPLEMENTED,
    )
    _emit(log, EventKind.NODE_PROPOSED, node=merged.to_dict())

    # fresh children are scored; pruning never applies here, the merge
    # verdict needs real numbers
    fresh_policy = EvalPolicy(
        validation_attempts=policy.validation_attempts,
        accelerated_debug=policy.accelerated_debug,
        predict_fn=None,
        workers=policy.workers,
    )
    _propose_and_score_mt(tree, merged, ctx, gen, evaluator, params.m_mt,
                          metric, fresh_policy, clock, log)

    if resample_k > 0:
        for parent_id in (a_id, b_id):
            picks = sample_top(tree, parent_id, resample_k, rng,
                               metric=metric,
                               temperature=params.softmax_temperature,
                               proportional=proportional_resample)
            for origin in picks:
                copy = tree.spawn(
                    merged.id, NodeLevel.MT, origin.idea_text,
                    provenance=Provenance.resampled(origin.id),
                    status=NodeStatus.EVALUATED,
                    raw_score=origin.raw_score,
                    code_artifact=origin.code_artifact,
                )
                _emit(log, EventKind.NODE_PROPOSED, node=copy.to_dict())

    if tree.evaluated_mt_children(merged.id):
        delta = merge_delta(tree, merged.id, a_id, b_id, metric)
        failed = delta <= params.merge_epsilon
    else:
        # every fresh child failed and nothing was resampled
        delta = None
        failed = True

    if failed:
        promoted = mem.record_failure(key)
        _emit(log, EventKind.MERGE_ATTEMPTED, pair=list(key), merged_id=merged.id,
              outcome="failure", delta=delta)
        if promoted:
            _emit(log, EventKind.MEMORY_PROMOTED, pair=list(key), failures=mem.theta_fail)
    else:
        mem.record_success(key)
        _emit(log, EventKind.MERGE_ATTEMPTED, pair=list(key), merged_id=merged.id,
              outcome="success", delta=delta)


def _merge_best_children(tree, gen, evaluator, params, metric, rng, ctx, log, clock, policy):
    """Within each softmax-selected FE node, merge its two best MT
    children into one new scored child."""
    cands = sorted((fe for fe in tree.fe_nodes() if fe.aggregated_score is not None),
                   key=lambda n: n.id)
    if not cands:
        return
    oriented = [metric.orient(fe.aggregated_score) for fe in cands]
    dist = softmax_select(oriented, params.softmax_temperature, [fe.id for fe in cands])
    selected = dist.sample_without_replacement(params.n_selected, rng)
    child_policy = EvalPolicy(
        validation_attempts=policy.validation_attempts,
        accelerated_debug=policy.accelerated_debug,
        predict_fn=None,
        workers=policy.workers,
    )
    for fe_id in selected:
        kids = sorted(
            tree.evaluated_mt_children(fe_id),
            key=lambda n: (-metric.orient(n.raw_score), n.id),
        )
        if len(kids) < 2:
            continue
        u, v = kids[0], kids[1]
        _check_budget(clock)
        text = gen.merge_mt(u, v, ctx)
        node = tree.spawn(fe_id, NodeLevel.MT, text, provenance=Provenance.merged(u.id, v.id))
        _emit(log, EventKind.NODE_PROPOSED, node=node.to_dict())
        _evaluate_batch(tree, [node], evaluator, metric, child_policy, clock, log)
