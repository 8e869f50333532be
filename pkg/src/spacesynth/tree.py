"""Space-partitioning tree: domain types, pure tree algebra, JSON persistence.

The tree recursively splits a task's data space into mutually exclusive,
complementary subspaces. Every node is a subspace; an internal node carries
the dimension it was split on, and each child inherits exactly one attribute
value of that dimension. Leaves are the atomic subspaces that data is later
synthesized from.

Nothing in this module talks to a provider. Splits are handed in as
:class:`DimensionSpec` values and attached with :func:`attach_split`; the
build loop that produces them lives in :mod:`spacesynth.partition`.
"""

from __future__ import annotations

import hashlib
import json
import os
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator

from .errors import (
    AlreadyExpandedError,
    CorruptCheckpointError,
    DepthExceededError,
    InvalidDimensionError,
    TreeIncompleteError,
    UnknownNodeError,
)

ROOT_ID = "r"

# Rendered in a node description for a dimension whose concrete value is only
# drawn while synthesizing records, not while building the tree.
DEFERRED_VALUE_TEXT = "<to be drawn at synthesis time>"


def normalize_label(text: str) -> str:
    """Canonical form used for every label comparison.

    Unicode case-fold, trim, collapse internal whitespace. Providers emit
    cosmetic variants of the same category ("Integer", " integer ") and those
    must not count as distinct attribute values.
    """
    folded = unicodedata.normalize("NFKC", text).casefold()
    return " ".join(folded.split())


@dataclass(frozen=True)
class AttributeValue:
    """One attribute value of a splitting dimension."""

    label: str
    description: str | None = None

    def __post_init__(self):
        if not normalize_label(self.label):
            raise InvalidDimensionError("attribute value label is empty")


@dataclass(frozen=True)
class DimensionSpec:
    """A splitting dimension with observed and completed value sets.

    ``observed_values`` are the values exposed by classifying pivot samples;
    ``full_values`` is the completed candidate set after coverage. ``unbounded``
    is true when the value set cannot be exhaustively enumerated (the provider
    declared it open-ended).
    """

    name: str
    rationale: str = ""
    observed_values: tuple[AttributeValue, ...] = ()
    full_values: tuple[AttributeValue, ...] = ()
    unbounded: bool = False

    def validate(self) -> None:
        if not normalize_label(self.name):
            raise InvalidDimensionError("dimension name is empty")
        if not self.full_values:
            raise InvalidDimensionError(f"dimension {self.name!r} has no values")
        labels = [normalize_label(v.label) for v in self.full_values]
        if len(set(labels)) != len(labels):
            dupes = sorted({l for l in labels if labels.count(l) > 1})
            raise InvalidDimensionError(
                f"dimension {self.name!r} repeats value labels: {dupes}"
            )
        full = set(labels)
        missing = [
            v.label for v in self.observed_values if normalize_label(v.label) not in full
        ]
        if missing:
            raise InvalidDimensionError(
                f"dimension {self.name!r} lost observed values: {missing}"
            )
        if not self.unbounded and len(self.full_values) < 2:
            raise InvalidDimensionError(
                f"dimension {self.name!r} has a single value; a 1-way split partitions nothing"
            )


@dataclass(frozen=True)
class PartitionConfig:
    """Build hyperparameters plus engine knobs.

    ``max_depth``/``pivot_count``/``max_attribute_values``/``samples_per_leaf``
    control the tree and synthesis volume; the rest tune the provider engine.
    """

    max_depth: int = 4
    pivot_count: int = 10
    max_attribute_values: int = 10
    samples_per_leaf: int = 10
    rng_seed: int = 0
    dedup_threshold: float = 0.7
    retry_limit: int = 2
    max_inflight_requests: int = 8

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.pivot_count < 2:
            raise ValueError("pivot_count must be >= 2; a single pivot exposes no dimension")
        if self.max_attribute_values < 2:
            raise ValueError("max_attribute_values must be >= 2")
        if self.samples_per_leaf < 1:
            raise ValueError("samples_per_leaf must be >= 1")
        if not 0.0 <= self.dedup_threshold <= 1.0:
            raise ValueError("dedup_threshold must be in [0, 1]")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.max_inflight_requests < 1:
            raise ValueError("max_inflight_requests must be >= 1")
        if not -(2**63) <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in 64 bits")


class NodeKind(str, Enum):
    INTERNAL = "internal"
    LEAF = "leaf"
    UNBOUNDED = "unbounded"
    # Only present in in-progress checkpoints: queued for expansion, not final.
    PENDING = "pending"


@dataclass(frozen=True)
class PathStep:
    """One constraint on a root-to-node path. ``value`` is None for a
    dimension whose concrete value is deferred to synthesis time."""

    dimension: str
    value: AttributeValue | None


@dataclass
class SpaceNode:
    id: str
    depth: int
    inherited_attribute: PathStep | None = None
    dimension: DimensionSpec | None = None
    kind: NodeKind = NodeKind.PENDING
    children: list[str] = field(default_factory=list)


@dataclass
class SpaceTree:
    """The partitioning tree plus its build state.

    ``frontier`` is the BFS queue of pending node ids; ``complete`` flips once
    the queue drains. A tree is safe to share read-only once complete; during
    a build all mutation goes through one owner (see the partitioner).
    """

    root_description: str
    config: PartitionConfig
    nodes: dict[str, SpaceNode] = field(default_factory=dict)
    frontier: list[str] = field(default_factory=list)
    complete: bool = False

    @classmethod
    def new(cls, root_description: str, config: PartitionConfig) -> "SpaceTree":
        tree = cls(root_description=root_description, config=config)
        tree.nodes[ROOT_ID] = SpaceNode(id=ROOT_ID, depth=0)
        tree.frontier.append(ROOT_ID)
        return tree

    # -- lookups ------------------------------------------------------------

    def node(self, node_id: str) -> SpaceNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"no node {node_id!r} in tree") from None

    def parent_id(self, node_id: str) -> str | None:
        """Ids encode their path ("r.0.2" is child 2 of "r.0"), so the parent
        is derivable without back-pointers."""
        if node_id == ROOT_ID:
            return None
        return node_id.rsplit(".", 1)[0]

    def node_path(self, node_id: str) -> tuple[PathStep, ...]:
        """Inherited (dimension, value) constraints from the root down to the node."""
        steps: list[PathStep] = []
        node = self.node(node_id)
        while node.inherited_attribute is not None:
            steps.append(node.inherited_attribute)
            node = self.node(self.parent_id(node.id))
        return tuple(reversed(steps))

    # -- operations ----------------------------------------------------------

    def node_description(
        self, node_id: str, resolved: dict[str, str] | None = None
    ) -> str:
        """Deterministic text for the subspace a node stands for.

        The root description plus every constraint on the node's path, in
        root-to-node order. A deferred (unbounded) dimension renders as
        ``<to be drawn at synthesis time>`` unless ``resolved`` maps its name
        to a concrete drawn label.
        """
        steps = self.node_path(node_id)
        if not steps:
            return self.root_description
        parts = []
        for step in steps:
            if step.value is not None:
                parts.append(f"{step.dimension} = {step.value.label}")
            elif resolved and step.dimension in resolved:
                parts.append(f"{step.dimension} = {resolved[step.dimension]}")
            else:
                parts.append(f"{step.dimension} = {DEFERRED_VALUE_TEXT}")
        return f"{self.root_description}; constrained by: " + "; ".join(parts)

    def leaf_nodes(self) -> list[str]:
        """All leaf ids in depth-first left-to-right order. Requires a
        finished build so the set of leaves is final."""
        if not self.complete:
            raise TreeIncompleteError("leaf enumeration requires a completed build")
        leaves = [nid for nid in self._walk_preorder(ROOT_ID)
                  if self.nodes[nid].kind is NodeKind.LEAF]
        return leaves

    def _walk_preorder(self, node_id: str) -> Iterator[str]:
        yield node_id
        for child in self.node(node_id).children:
            yield from self._walk_preorder(child)

    def attach_split(self, node_id: str, dimension: DimensionSpec) -> None:
        """Expand a pending node with the given dimension.

        A bounded dimension within the value budget produces one child per
        value. A dimension that is unbounded, or enumerates more values than
        ``max_attribute_values``, turns the node into an unbounded node with a
        single structural child: the candidate pool stays on this node's
        dimension and one value is drawn per record at synthesis time. New
        children are appended to the frontier in emission order, which fixes
        child ordering and ids for good.
        """
        node = self.node(node_id)
        if node.kind is not NodeKind.PENDING or node.children:
            raise AlreadyExpandedError(f"node {node_id!r} is already expanded")
        if node.depth >= self.config.max_depth:
            raise DepthExceededError(
                f"node {node_id!r} is at max depth {self.config.max_depth}"
            )
        dimension.validate()

        overflow = len(dimension.full_values) > self.config.max_attribute_values
        if dimension.unbounded or overflow:
            node.kind = NodeKind.UNBOUNDED
            node.dimension = dimension
            child = SpaceNode(
                id=f"{node_id}.0",
                depth=node.depth + 1,
                inherited_attribute=PathStep(dimension.name, None),
            )
            new_children = [child]
        else:
            node.kind = NodeKind.INTERNAL
            node.dimension = dimension
            new_children = [
                SpaceNode(
                    id=f"{node_id}.{i}",
                    depth=node.depth + 1,
                    inherited_attribute=PathStep(dimension.name, value),
                )
                for i, value in enumerate(dimension.full_values)
            ]

        node.children = [c.id for c in new_children]
        for child in new_children:
            self.nodes[child.id] = child
        if node_id in self.frontier:
            self.frontier.remove(node_id)
        self.frontier.extend(c.id for c in new_children)

    def mark_leaf(self, node_id: str) -> None:
        """Finalize a pending node as a leaf (max depth reached, or the build
        gave up on splitting it)."""
        node = self.node(node_id)
        if node.kind is not NodeKind.PENDING or node.children:
            raise AlreadyExpandedError(f"node {node_id!r} is already expanded")
        node.kind = NodeKind.LEAF
        if node_id in self.frontier:
            self.frontier.remove(node_id)

    def path_dimensions(self, node_id: str) -> list[str]:
        """Dimension names already fixed on the node's path (normalized)."""
        return [normalize_label(step.dimension) for step in self.node_path(node_id)]

    # -- validation ----------------------------------------------------------

    def validate_structure(self) -> None:
        """Check every structural invariant; raises on the first violation."""
        if ROOT_ID not in self.nodes:
            raise CorruptCheckpointError("tree has no root node")
        seen: set[str] = set()
        for nid in self._walk_preorder(ROOT_ID):
            if nid in seen:
                raise CorruptCheckpointError(f"node {nid!r} reachable twice")
            seen.add(nid)
        if seen != set(self.nodes):
            orphans = sorted(set(self.nodes) - seen)
            raise CorruptCheckpointError(f"unreachable nodes: {orphans}")

        for node in self.nodes.values():
            if node.depth > self.config.max_depth:
                raise CorruptCheckpointError(
                    f"node {node.id!r} exceeds max depth {self.config.max_depth}"
                )
            for i, child_id in enumerate(node.children):
                if child_id != f"{node.id}.{i}":
                    raise CorruptCheckpointError(
                        f"child id {child_id!r} does not encode its position under {node.id!r}"
                    )
                child = self.node(child_id)
                if child.depth != node.depth + 1:
                    raise CorruptCheckpointError(f"bad depth at {child_id!r}")

            if node.kind is NodeKind.INTERNAL:
                dim = node.dimension
                if dim is None or len(node.children) != len(dim.full_values):
                    raise CorruptCheckpointError(
                        f"internal node {node.id!r} does not cover its dimension"
                    )
                labels = []
                for child_id, value in zip(node.children, dim.full_values):
                    step = self.node(child_id).inherited_attribute
                    if (
                        step is None
                        or step.value is None
                        or normalize_label(step.dimension) != normalize_label(dim.name)
                        or normalize_label(step.value.label) != normalize_label(value.label)
                    ):
                        raise CorruptCheckpointError(
                            f"child {child_id!r} does not inherit its split value"
                        )
                    labels.append(normalize_label(step.value.label))
                if len(set(labels)) != len(labels):
                    raise CorruptCheckpointError(
                        f"children of {node.id!r} repeat attribute values"
                    )
            elif node.kind is NodeKind.UNBOUNDED:
                dim = node.dimension
                if dim is None or len(node.children) != 1:
                    raise CorruptCheckpointError(
                        f"unbounded node {node.id!r} must have exactly one child"
                    )
                if not dim.unbounded and len(dim.full_values) <= self.config.max_attribute_values:
                    raise CorruptCheckpointError(
                        f"node {node.id!r} is unbounded without cause"
                    )
            elif node.kind is NodeKind.LEAF:
                if node.children:
                    raise CorruptCheckpointError(f"leaf {node.id!r} has children")
            elif node.kind is NodeKind.PENDING:
                if self.complete:
                    raise CorruptCheckpointError(
                        f"completed tree still holds pending node {node.id!r}"
                    )
                if node.children:
                    raise CorruptCheckpointError(f"pending node {node.id!r} has children")

            dims = self.path_dimensions(node.id)
            if len(set(dims)) != len(dims):
                raise CorruptCheckpointError(
                    f"path to {node.id!r} reuses a dimension: {dims}"
                )

        pending = {n.id for n in self.nodes.values() if n.kind is NodeKind.PENDING}
        if set(self.frontier) != pending:
            raise CorruptCheckpointError("frontier does not match pending nodes")
        if len(set(self.frontier)) != len(self.frontier):
            raise CorruptCheckpointError("frontier repeats a node id")


# -- serialization ------------------------------------------------------------

def _value_to_json(value: AttributeValue) -> dict:
    return {"label": value.label, "description": value.description}


def _value_from_json(obj: dict) -> AttributeValue:
    return AttributeValue(label=obj["label"], description=obj.get("description"))


def _dimension_to_json(dim: DimensionSpec | None) -> dict | None:
    if dim is None:
        return None
    return {
        "name": dim.name,
        "rationale": dim.rationale,
        "observed_values": [_value_to_json(v) for v in dim.observed_values],
        "full_values": [_value_to_json(v) for v in dim.full_values],
        "unbounded": dim.unbounded,
    }


def _dimension_from_json(obj: dict | None) -> DimensionSpec | None:
    if obj is None:
        return None
    return DimensionSpec(
        name=obj["name"],
        rationale=obj.get("rationale", ""),
        observed_values=tuple(_value_from_json(v) for v in obj["observed_values"]),
        full_values=tuple(_value_from_json(v) for v in obj["full_values"]),
        unbounded=bool(obj["unbounded"]),
    )


def _step_to_json(step: PathStep | None) -> dict | None:
    if step is None:
        return None
    return {
        "dimension": step.dimension,
        "value": _value_to_json(step.value) if step.value is not None else None,
    }


def _step_from_json(obj: dict | None) -> PathStep | None:
    if obj is None:
        return None
    value = obj.get("value")
    return PathStep(
        dimension=obj["dimension"],
        value=_value_from_json(value) if value is not None else None,
    )


def to_json(tree: SpaceTree) -> str:
    """Serialize to a single stable-key-order JSON document (diffable,
    byte-identical for equal trees)."""
    if tree.complete:
        build_state = {"status": "complete"}
    else:
        build_state = {"status": "in_progress", "frontier": list(tree.frontier)}
    doc = {
        "root_description": tree.root_description,
        "config": {
            "max_depth": tree.config.max_depth,
            "pivot_count": tree.config.pivot_count,
            "max_attribute_values": tree.config.max_attribute_values,
            "samples_per_leaf": tree.config.samples_per_leaf,
            "rng_seed": tree.config.rng_seed,
            "dedup_threshold": tree.config.dedup_threshold,
            "retry_limit": tree.config.retry_limit,
            "max_inflight_requests": tree.config.max_inflight_requests,
        },
        "build_state": build_state,
        "nodes": [
            {
                "id": node.id,
                "depth": node.depth,
                "inherited_attribute": _step_to_json(node.inherited_attribute),
                "dimension": _dimension_to_json(node.dimension),
                "kind": node.kind.value,
                "children": list(node.children),
            }
            for node in tree.nodes.values()
        ],
    }
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def from_json(text: str) -> SpaceTree:
    """Parse and structurally validate a serialized tree."""
    try:
        doc = json.loads(text)
        config = PartitionConfig(**doc["config"])
        tree = SpaceTree(root_description=doc["root_description"], config=config)
        for obj in doc["nodes"]:
            node = SpaceNode(
                id=obj["id"],
                depth=obj["depth"],
                inherited_attribute=_step_from_json(obj.get("inherited_attribute")),
                dimension=_dimension_from_json(obj.get("dimension")),
                kind=NodeKind(obj["kind"]),
                children=list(obj["children"]),
            )
            tree.nodes[node.id] = node
        state = doc["build_state"]
        if state["status"] == "complete":
            tree.complete = True
        elif state["status"] == "in_progress":
            tree.complete = False
            tree.frontier = list(state["frontier"])
        else:
            raise ValueError(f"unknown build state {state['status']!r}")
    except CorruptCheckpointError:
        raise
    except Exception as exc:
        raise CorruptCheckpointError(f"cannot parse tree document: {exc}") from exc
    tree.validate_structure()
    return tree


def save(tree: SpaceTree, path: str) -> None:
    """Atomic write: the file on disk is always one complete document."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(to_json(tree))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load(path: str) -> SpaceTree:
    with open(path, encoding="utf-8") as fh:
        return from_json(fh.read())


def fingerprint(tree: SpaceTree) -> str:
    """Content hash of the serialized tree, used to chain artifacts."""
    digest = hashlib.sha256(to_json(tree).encode("utf-8")).hexdigest()
    return f"sha256:{digest}"


__all__ = [
    "ROOT_ID",
    "DEFERRED_VALUE_TEXT",
    "normalize_label",
    "AttributeValue",
    "DimensionSpec",
    "PartitionConfig",
    "NodeKind",
    "PathStep",
    "SpaceNode",
    "SpaceTree",
    "to_json",
    "from_json",
    "save",
    "load",
    "fingerprint",
]
