"""Predictive scoring of model-training candidates from anchor examples.

Cheap score estimates let the engine rank fresh candidates and spend
full evaluations only on the promising half. Anchors are real evaluated
nodes gathered in two sweeps: several architectures under the strongest
feature idea, then the winning architecture under each remaining feature
idea. Predictors consume (description, score) pairs; the baseline one is
a pure similarity-weighted mean used to verify the plumbing without an
endpoint.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional, Protocol

import requests

from .errors import (
    AnchorConstructionFailed,
    EmptyAnchorSet,
    EvaluationFailure,
    InvalidParams,
    MalformedResponse,
    NoFeNodes,
    RetriesExhausted,
    TransportFailure,
)
from .evaluation import EvalMode, EvaluationPort
from .events import EventKind, RunLog
from .generation import EndpointConfig, _load_template, request_completion
from .search import softmax_select
from .tree import IdeationTree, MetricSpec, Node, NodeLevel, backpropagate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Anchor:
    """One evaluated reference point: what was tried and what it scored.

    ``mt_node_id`` ties the anchor back to the tree node whose full
    evaluation produced ``true_score``; it is also the canonical sort
    key wherever anchor order must not matter.
    """

    description: str
    true_score: float
    fe_node_id: int
    architecture_tag: str
    mt_node_id: int


@dataclass(frozen=True)
class AnchorSet:
    anchors: tuple[Anchor, ...]
    phase1_fe: int
    phase2_arch: str

    def __post_init__(self):
        if not self.anchors:
            raise EmptyAnchorSet("anchor set cannot be empty")

    def sorted_anchors(self) -> list[Anchor]:
        return sorted(self.anchors, key=lambda a: a.mt_node_id)

    def score_bounds(self) -> tuple[float, float]:
        scores = [a.true_score for a in self.anchors]
        return min(scores), max(scores)


class Predictor(Protocol):
    """Estimates the raw metric value a candidate would achieve."""

    def predict(self, candidate_description: str, anchor_set: AnchorSet,
                dataset_description: str) -> float: ...


def build_anchor_set(
    tree: IdeationTree,
    evaluator: EvaluationPort,
    architectures: list[str],
    metric: MetricSpec,
    *,
    min_anchors: int = 2,
    max_anchors: int = 5,
    log: Optional[RunLog] = None,
) -> AnchorSet:
    """Gather anchors in two sweeps of real evaluations.

    Sweep one runs each architecture (up to ``max_anchors``) under the
    feature node with the best oriented aggregate, ties to the lowest
    id. Sweep two takes the architecture that scored best in sweep one
    and runs it under the remaining feature nodes, best aggregates
    first, until ``max_anchors`` is reached. Every evaluation lands in
    the tree as an ordinary node; failures are marked and omitted. If
    fewer than ``min_anchors`` survive the whole procedure, nothing
    usable came back and AnchorConstructionFailed is raised.
    """
    if min_anchors < 1 or max_anchors < min_anchors:
        raise InvalidParams(
            f"need 1 <= min_anchors <= max_anchors, got {min_anchors}..{max_anchors}"
        )
    fe_nodes = tree.fe_nodes()
    if not fe_nodes:
        raise NoFeNodes("anchor construction needs at least one feature node")
    if not architectures:
        raise InvalidParams("architectures must be non-empty")

    def fe_rank(node: Node) -> tuple[float, int]:
        oriented = (
            metric.orient(node.aggregated_score)
            if node.aggregated_score is not None
            else float("-inf")
        )
        return (-oriented, node.id)

    ranked_fe = sorted(fe_nodes, key=fe_rank)
    phase1_fe = ranked_fe[0]

    anchors: list[Anchor] = []

    def evaluate_anchor(fe: Node, arch: str) -> Optional[Anchor]:
        node = tree.spawn(fe.id, NodeLevel.MT, arch)
        if log is not None:
            log.append(EventKind.NODE_PROPOSED, node=node.to_dict())
        try:
            raw = evaluator.evaluate(node, EvalMode.FULL)
        except EvaluationFailure as exc:
            tree.mark_failed(node.id)
            if log is not None:
                log.append(EventKind.NODE_EVALUATED, node_id=node.id, raw_score=None,
                           status=node.status.value, error=str(exc))
            logger.warning("anchor evaluation failed for %r under fe %d: %s", arch, fe.id, exc)
            return None
        tree.mark_evaluated(node.id, raw)
        if log is not None:
            log.append(EventKind.NODE_EVALUATED, node_id=node.id, raw_score=raw,
                       status=node.status.value)
        return Anchor(
            description=arch, true_score=raw, fe_node_id=fe.id,
            architecture_tag=arch, mt_node_id=node.id,
        )

    for arch in architectures[:max_anchors]:
        anchor = evaluate_anchor(phase1_fe, arch)
        if anchor is not None:
            anchors.append(anchor)

    if not anchors:
        backpropagate(tree)
        raise AnchorConstructionFailed("every architecture sweep evaluation failed")

    phase2_arch = min(
        anchors, key=lambda a: (-metric.orient(a.true_score), a.mt_node_id)
    ).architecture_tag

    slots = max_anchors - len(anchors)
    for fe in ranked_fe[1:]:
        if slots <= 0:
            break
        anchor = evaluate_anchor(fe, phase2_arch)
        if anchor is not None:
            anchors.append(anchor)
            slots -= 1

    backpropagate(tree)
    if len(anchors) < min_anchors:
        raise AnchorConstructionFailed(
            f"only {len(anchors)} anchors survived, need at least {min_anchors}"
        )
    return AnchorSet(anchors=tuple(anchors), phase1_fe=phase1_fe.id, phase2_arch=phase2_arch)


# =====================================================================
# Prompt assembly and the baseline predictor
# =====================================================================

def assemble_prediction_prompt(
    candidate: str,
    anchor_set: AnchorSet,
    dataset_description: str,
    *,
    metric_name: str = "metric",
) -> str:
    """Render the prediction prompt. Anchors are sorted by node id so
    the text is identical no matter how the set was assembled."""
    if not anchor_set.anchors:
        raise EmptyAnchorSet("cannot assemble a prompt from zero anchors")
    blocks = [
        f"- idea: {anchor.description}\n  {metric_name}: {anchor.true_score!r}"
        for anchor in anchor_set.sorted_anchors()
    ]
    template = _load_template("score_prediction.txt")
    return template.format(
        dataset=dataset_description,
        anchors="\n".join(blocks),
        candidate=candidate,
        metric_name=metric_name,
    )


def baseline_predict(
    candidate: str,
    anchor_set: AnchorSet,
    embedder,
    *,
    temperature: float = 1.0,
) -> float:
    """Similarity-weighted mean of anchor scores.

    Weights are a softmax over cosine similarities between the candidate
    embedding and each anchor description embedding; lower temperatures
    concentrate mass on the nearest anchors. Being a convex combination,
    the output always lies inside the anchor score range.
    """
    anchors = anchor_set.sorted_anchors()
    candidate_vec = embedder.embed(candidate)
    sims = [
        _cosine(candidate_vec, embedder.embed(anchor.description)) for anchor in anchors
    ]
    weights = softmax_select(sims, temperature).probabilities
    return float(sum(w * a.true_score for w, a in zip(weights, anchors)))


def _cosine(a, b) -> float:
    from .embedding import cosine_similarity

    return cosine_similarity(a, b)


@dataclass
class BaselinePredictor:
    """Predictor port backed by baseline_predict. Pure in its inputs;
    the dataset description is accepted for port compatibility and
    ignored."""

    embedder: object
    temperature: float = 1.0

    def predict(self, candidate_description: str, anchor_set: AnchorSet,
                dataset_description: str = "") -> float:
        return baseline_predict(
            candidate_description, anchor_set, self.embedder,
            temperature=self.temperature,
        )


_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def parse_predicted_value(reply: str) -> float:
    """Pull the single number out of a predictor reply. Tolerates
    surrounding whitespace or a trailing period, nothing more."""
    text = reply.strip().rstrip(".")
    match = _NUMBER.fullmatch(text)
    if match is None:
        raise MalformedResponse(f"expected one number, got {reply[:80]!r}")
    return float(text)


class LlmPredictor:
    """Predictor that asks a chat-completion endpoint for the number."""

    def __init__(self, endpoint: EndpointConfig, metric_name: str = "metric",
                 session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self.metric_name = metric_name
        self._session = session or requests.Session()

    def predict(self, candidate_description: str, anchor_set: AnchorSet,
                dataset_description: str = "") -> float:
        prompt = assemble_prediction_prompt(
            candidate_description, anchor_set, dataset_description,
            metric_name=self.metric_name,
        )
        attempts = self.endpoint.max_retries + 1
        last: Optional[Exception] = None
        for attempt in range(attempts):
            try:
                reply = request_completion(
                    self._session, self.endpoint,
                    "You estimate evaluation scores from reference examples.",
                    prompt,
                )
                return parse_predicted_value(reply)
            except (TransportFailure, MalformedResponse) as exc:
                last = exc
                logger.warning("prediction attempt %d/%d failed: %s", attempt + 1, attempts, exc)
        raise RetriesExhausted(f"gave up after {attempts} attempts: {last}")
