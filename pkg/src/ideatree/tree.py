"""Three-level ideation tree with score backpropagation and snapshots.

The tree always has exactly one root at the analysis (EDA) level. Its
children hold feature-engineering ideas (FE) and the leaves hold model
training ideas (MT). Raw metric values live only on evaluated MT nodes;
FE and root aggregates are recomputed from them by ``backpropagate``.

Layout::

    EDA root
    ├── FE idea
    │   ├── MT idea   (raw_score)
    │   └── MT idea   (raw_score)
    └── FE idea
        └── MT idea   (raw_score)

Scores are stored in native metric units; orientation (higher or lower
is better) is applied at comparison time via :class:`MetricSpec`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .errors import (
    DuplicateId,
    InvariantViolation,
    LevelMismatch,
    MalformedDocument,
    NonFiniteScore,
    UnknownParent,
)

TREE_SCHEMA_VERSION = 1


class NodeLevel(str, Enum):
    EDA = "eda"
    FE = "fe"
    MT = "mt"


# required child level for each parent level
CHILD_LEVEL = {NodeLevel.EDA: NodeLevel.FE, NodeLevel.FE: NodeLevel.MT}


class NodeStatus(str, Enum):
    PROPOSED = "proposed"
    IMPLEMENTED = "implemented"
    EVALUATED = "evaluated"
    FAILED = "failed"


class ProvenanceKind(str, Enum):
    GENERATED = "generated"
    MERGED = "merged"
    RESAMPLED = "resampled"


class MetricDirection(str, Enum):
    HIGHER_BETTER = "higher_better"
    LOWER_BETTER = "lower_better"


@dataclass(frozen=True)
class MetricSpec:
    """Name and direction of the competition metric, fixed for a run."""

    name: str
    direction: MetricDirection

    def orient(self, raw: float) -> float:
        """Map a raw metric value onto a higher-is-better axis."""
        if self.direction is MetricDirection.HIGHER_BETTER:
            return raw
        return -raw

    def to_dict(self) -> dict:
        return {"name": self.name, "direction": self.direction.value}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSpec":
        return cls(name=d["name"], direction=MetricDirection(d["direction"]))


@dataclass(frozen=True)
class Provenance:
    """How a node came to exist.

    ``generated`` nodes have no sources, ``merged`` nodes record exactly
    two distinct source ids at the same level, ``resampled`` nodes record
    the single origin node they were copied from.
    """

    kind: ProvenanceKind = ProvenanceKind.GENERATED
    sources: tuple[int, ...] = ()

    @classmethod
    def generated(cls) -> "Provenance":
        return cls(ProvenanceKind.GENERATED, ())

    @classmethod
    def merged(cls, a: int, b: int) -> "Provenance":
        return cls(ProvenanceKind.MERGED, (int(a), int(b)))

    @classmethod
    def resampled(cls, origin: int) -> "Provenance":
        return cls(ProvenanceKind.RESAMPLED, (int(origin),))

    def validate(self) -> None:
        if self.kind is ProvenanceKind.GENERATED and self.sources:
            raise InvariantViolation("generated nodes carry no sources")
        if self.kind is ProvenanceKind.MERGED:
            if len(self.sources) != 2 or self.sources[0] == self.sources[1]:
                raise InvariantViolation(
                    f"merged provenance needs two distinct sources, got {self.sources}"
                )
        if self.kind is ProvenanceKind.RESAMPLED and len(self.sources) != 1:
            raise InvariantViolation(
                f"resampled provenance needs one origin, got {self.sources}"
            )

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "sources": list(self.sources)}

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(kind=ProvenanceKind(d["kind"]), sources=tuple(int(s) for s in d["sources"]))


@dataclass
class Node:
    """A single idea in the tree.

    ``raw_score`` is set exactly when ``status`` is EVALUATED and only on
    MT nodes. ``aggregated_score`` is maintained by ``backpropagate`` on
    FE nodes and the root. ``predicted_score`` never overwrites either.
    """

    id: int
    level: NodeLevel
    parent_id: Optional[int]
    idea_text: str
    code_artifact: Optional[str] = None
    raw_score: Optional[float] = None
    predicted_score: Optional[float] = None
    aggregated_score: Optional[float] = None
    status: NodeStatus = NodeStatus.PROPOSED
    provenance: Provenance = field(default_factory=Provenance.generated)
    created_iteration: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level.value,
            "parent_id": self.parent_id,
            "idea_text": self.idea_text,
            "code_artifact": self.code_artifact,
            "raw_score": self.raw_score,
            "predicted_score": self.predicted_score,
            "aggregated_score": self.aggregated_score,
            "status": self.status.value,
            "provenance": self.provenance.to_dict(),
            "created_iteration": self.created_iteration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        try:
            return cls(
                id=int(d["id"]),
                level=NodeLevel(d["level"]),
                parent_id=None if d["parent_id"] is None else int(d["parent_id"]),
                idea_text=d["idea_text"],
                code_artifact=d.get("code_artifact"),
                raw_score=d.get("raw_score"),
                predicted_score=d.get("predicted_score"),
                aggregated_score=d.get("aggregated_score"),
                status=NodeStatus(d["status"]),
                provenance=Provenance.from_dict(d["provenance"]),
                created_iteration=int(d.get("created_iteration", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedDocument(f"bad node record: {exc}") from exc


class IdeationTree:
    """Mutable in-memory tree. Node ids are assigned monotonically and
    never reused within a run, including across snapshot round-trips."""

    def __init__(self) -> None:
        self.nodes: dict[int, Node] = {}
        self.iteration: int = 0
        self._children: dict[int, list[int]] = {}
        self._root_id: Optional[int] = None
        self._next_id: int = 0

    # ---- construction ----

    @classmethod
    def create(cls, root_idea: str, created_iteration: int = 0) -> "IdeationTree":
        """Make a tree holding just the EDA root."""
        tree = cls()
        root = Node(
            id=tree.allocate_id(),
            level=NodeLevel.EDA,
            parent_id=None,
            idea_text=root_idea,
            status=NodeStatus.IMPLEMENTED,
            created_iteration=created_iteration,
        )
        tree._attach(root)
        return tree

    def allocate_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def add_node(self, parent_id: Optional[int], node: Node) -> Node:
        """Attach ``node`` under ``parent_id`` after validating structure.

        The root is added with ``parent_id=None`` exactly once. Raises
        UnknownParent, LevelMismatch, DuplicateId or InvariantViolation.
        """
        if node.id in self.nodes:
            raise DuplicateId(f"node id {node.id} already in tree")
        node.provenance.validate()
        _check_score_consistency(node)
        if parent_id is None:
            if self._root_id is not None:
                raise InvariantViolation("tree already has a root")
            if node.level is not NodeLevel.EDA:
                raise LevelMismatch(f"root must be {NodeLevel.EDA.value}, got {node.level.value}")
        else:
            parent = self.nodes.get(parent_id)
            if parent is None:
                raise UnknownParent(f"parent id {parent_id} not in tree")
            required = CHILD_LEVEL.get(parent.level)
            if required is None:
                raise LevelMismatch("mt nodes cannot have children")
            if node.level is not required:
                raise LevelMismatch(
                    f"child of {parent.level.value} must be {required.value}, got {node.level.value}"
                )
        if node.provenance.kind is not ProvenanceKind.GENERATED:
            for src in node.provenance.sources:
                source = self.nodes.get(src)
                if source is None:
                    raise InvariantViolation(f"provenance source {src} not in tree")
                if source.level is not node.level:
                    raise InvariantViolation(
                        f"provenance source {src} is {source.level.value}, node is {node.level.value}"
                    )
        node.parent_id = parent_id
        self._attach(node)
        if node.id >= self._next_id:
            self._next_id = node.id + 1
        return node

    def spawn(
        self,
        parent_id: Optional[int],
        level: NodeLevel,
        idea_text: str,
        *,
        provenance: Optional[Provenance] = None,
        status: NodeStatus = NodeStatus.PROPOSED,
        code_artifact: Optional[str] = None,
        raw_score: Optional[float] = None,
    ) -> Node:
        """Allocate an id and attach a new node in one step."""
        node = Node(
            id=self.allocate_id(),
            level=level,
            parent_id=parent_id,
            idea_text=idea_text,
            code_artifact=code_artifact,
            raw_score=raw_score,
            status=status,
            provenance=provenance or Provenance.generated(),
            created_iteration=self.iteration,
        )
        return self.add_node(parent_id, node)

    def _attach(self, node: Node) -> None:
        self.nodes[node.id] = node
        self._children[node.id] = []
        if node.parent_id is None:
            self._root_id = node.id
        else:
            self._children[node.parent_id].append(node.id)

    # ---- access ----

    @property
    def root(self) -> Node:
        if self._root_id is None:
            raise InvariantViolation("tree has no root")
        return self.nodes[self._root_id]

    def children(self, node_id: int) -> list[Node]:
        return [self.nodes[c] for c in self._children.get(node_id, [])]

    def nodes_at_level(self, level: NodeLevel) -> list[Node]:
        return [n for n in self.nodes.values() if n.level is level]

    def fe_nodes(self) -> list[Node]:
        return self.nodes_at_level(NodeLevel.FE)

    def evaluated_mt_children(self, fe_id: int) -> list[Node]:
        return [c for c in self.children(fe_id) if c.status is NodeStatus.EVALUATED]

    def mark_evaluated(self, node_id: int, raw_score: float) -> None:
        if not math.isfinite(raw_score):
            raise NonFiniteScore(f"raw score for node {node_id} is {raw_score}")
        node = self.nodes[node_id]
        node.raw_score = float(raw_score)
        node.status = NodeStatus.EVALUATED

    def mark_failed(self, node_id: int) -> None:
        node = self.nodes[node_id]
        node.raw_score = None
        node.status = NodeStatus.FAILED

    def best_evaluated_mt(self, metric: MetricSpec) -> Optional[Node]:
        """Evaluated MT node with the maximal oriented raw score; ties go
        to the lowest node id. None when nothing has been evaluated."""
        best: Optional[Node] = None
        for node in self.nodes.values():
            if node.level is not NodeLevel.MT or node.status is not NodeStatus.EVALUATED:
                continue
            if best is None:
                best = node
                continue
            a = metric.orient(node.raw_score)
            b = metric.orient(best.raw_score)
            if a > b or (a == b and node.id < best.id):
                best = node
        return best

    # ---- serialization ----

    def snapshot(self) -> str:
        """Canonical self-describing document; stable byte-for-byte for
        equal trees (nodes sorted by id, keys sorted)."""
        doc = {
            "tree_schema": TREE_SCHEMA_VERSION,
            "iteration": self.iteration,
            "next_id": self._next_id,
            "nodes": [self.nodes[i].to_dict() for i in sorted(self.nodes)],
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def restore(cls, document: str) -> "IdeationTree":
        """Rebuild a tree from a snapshot, re-validating every invariant."""
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"snapshot is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or "nodes" not in doc:
            raise MalformedDocument("snapshot lacks a nodes list")
        if doc.get("tree_schema") != TREE_SCHEMA_VERSION:
            raise MalformedDocument(
                f"unsupported tree_schema {doc.get('tree_schema')!r}"
            )
        records = [Node.from_dict(d) for d in doc["nodes"]]
        seen: dict[int, Node] = {}
        for rec in records:
            if rec.id in seen:
                raise InvariantViolation(f"node id {rec.id} appears more than once")
            seen[rec.id] = rec
        roots = [r for r in records if r.parent_id is None]
        if len(roots) != 1:
            raise InvariantViolation(f"snapshot has {len(roots)} roots, expected 1")
        tree = cls()
        tree.iteration = int(doc.get("iteration", 0))
        # parents must be attached before children; ids are assigned in
        # creation order so sorting by id gives a valid insertion order
        for rec in sorted(records, key=lambda r: r.id):
            _check_score_consistency(rec)
            tree.add_node(rec.parent_id, rec)
        stored_next = doc.get("next_id")
        if stored_next is not None:
            tree._next_id = max(tree._next_id, int(stored_next))
        return tree


def _check_score_consistency(node: Node) -> None:
    if node.status is NodeStatus.EVALUATED:
        if node.raw_score is None:
            raise InvariantViolation(f"evaluated node {node.id} has no raw score")
        if not math.isfinite(node.raw_score):
            raise NonFiniteScore(f"node {node.id} raw score is {node.raw_score}")
    elif node.raw_score is not None:
        raise InvariantViolation(
            f"node {node.id} has a raw score but status {node.status.value}"
        )


def backpropagate(tree: IdeationTree) -> IdeationTree:
    """Recompute aggregated scores bottom-up and return the same tree.

    An FE node's aggregate is the arithmetic mean of its evaluated MT
    children's raw scores, unset when it has none. The root aggregate is
    the mean of the set FE aggregates and is reporting-only: it never
    feeds selection. Idempotent, and independent of insertion order.
    """
    root_parts: list[float] = []
    for fe in tree.fe_nodes():
        scores = [c.raw_score for c in tree.evaluated_mt_children(fe.id)]
        if scores:
            fe.aggregated_score = float(sum(scores) / len(scores))
            root_parts.append(fe.aggregated_score)
        else:
            fe.aggregated_score = None
    root = tree.root
    root.aggregated_score = float(sum(root_parts) / len(root_parts)) if root_parts else None
    return tree
