"""Category hierarchy: loading, cycle repair, ancestor sets and ancestor weights.

Edges are stored child -> parents.  "Down" means parent -> child, towards the
entities.  An entity's ancestor set is its direct categories plus everything
reachable by repeatedly stepping to parents.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import deque
from dataclasses import dataclass
from graphlib import TopologicalSorter
from typing import Iterable, Mapping

from .errors import MissingInputError, ParseError, StructureError
from .textio import iter_lines, split_fields

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AncestorWeights:
    """Weighted ancestor set of one entity.

    ``entries`` holds ``(category, l, w)`` triples sorted by ``l`` then id,
    where ``l`` is the average downward distance (direct categories have
    ``l == 1``) and the ``w`` are proportional to ``1 / l`` and sum to one.
    """

    entity: str
    entries: tuple[tuple[str, float, float], ...]

    @property
    def categories(self) -> list[str]:
        return [c for c, _, _ in self.entries]

    @property
    def weights(self) -> list[float]:
        return [w for _, _, w in self.entries]

    def as_dict(self) -> dict[str, float]:
        return {c: w for c, _, w in self.entries}


def break_cycles(
    child_to_parents: Mapping[str, Iterable[str]],
    nodes: Iterable[str] = (),
) -> tuple[dict[str, set[str]], list[tuple[str, str]]]:
    """Remove the edges that close a cycle during a top-down DFS.

    The DFS starts from every parentless category in lexicographic order,
    then from any category still unvisited (members of rootless cycles), and
    visits children in lexicographic order.  An edge into a category that is
    still on the DFS stack is a bottom-up edge and is dropped.

    Returns the repaired ``child -> parents`` map (covering every node) and
    the removed edges as ``(child, parent)`` pairs.  No node is removed.
    """
    all_nodes = set(nodes)
    graph: dict[str, set[str]] = {}
    for child, parents in child_to_parents.items():
        graph.setdefault(child, set()).update(parents)
        all_nodes.add(child)
        all_nodes.update(parents)
    for n in all_nodes:
        graph.setdefault(n, set())

    children: dict[str, list[str]] = {n: [] for n in all_nodes}
    for child, parents in graph.items():
        for p in parents:
            children[p].append(child)
    for lst in children.values():
        lst.sort()

    WHITE, GRAY, BLACK = 0, 1, 2
    color = dict.fromkeys(all_nodes, WHITE)
    removed: list[tuple[str, str]] = []

    roots = sorted(n for n in all_nodes if not graph[n])
    rest = sorted(all_nodes)
    for start in roots + rest:
        if color[start] != WHITE:
            continue
        color[start] = GRAY
        stack = [(start, iter(children[start]))]
        while stack:
            node, it = stack[-1]
            for child in it:
                state = color[child]
                if state == GRAY:
                    removed.append((child, node))
                elif state == WHITE:
                    color[child] = GRAY
                    stack.append((child, iter(children[child])))
                    break
            else:
                color[node] = BLACK
                stack.pop()

    for child, parent in removed:
        graph[child].discard(parent)
    return graph, removed


class CategoryDag:
    """Immutable category DAG plus entity -> direct category labels.

    Build instances with :func:`load_hierarchy`; the constructor assumes its
    inputs are already validated and acyclic.
    """

    def __init__(
        self,
        child_to_parents: Mapping[str, Iterable[str]],
        entity_labels: Mapping[str, Iterable[str]],
        removed_edges: Iterable[tuple[str, str]] = (),
        pruned: Iterable[str] = (),
        rejected_entities: Iterable[str] = (),
    ):
        self.child_to_parents = {c: frozenset(ps) for c, ps in child_to_parents.items()}
        self.category_ids = frozenset(self.child_to_parents)
        self.entity_labels = {e: frozenset(cs) for e, cs in entity_labels.items()}
        self.entity_ids = frozenset(self.entity_labels)
        self.root_ids = frozenset(c for c, ps in self.child_to_parents.items() if not ps)
        kids: dict[str, set[str]] = {c: set() for c in self.category_ids}
        for c, ps in self.child_to_parents.items():
            for p in ps:
                kids[p].add(c)
        self.parent_to_children = {c: frozenset(ks) for c, ks in kids.items()}
        self.removed_edges = tuple(removed_edges)
        self.pruned = tuple(sorted(pruned))
        self.rejected_entities = tuple(sorted(rejected_entities))
        self._weights_cache: dict[tuple[str, int | None], AncestorWeights] = {}

    def __repr__(self):
        return (
            f"CategoryDag({len(self.category_ids)} categories, "
            f"{len(self.entity_ids)} entities, {len(self.root_ids)} roots)"
        )

    @property
    def edge_count(self) -> int:
        return sum(len(ps) for ps in self.child_to_parents.values())

    def edges(self) -> list[tuple[str, str]]:
        return sorted((c, p) for c, ps in self.child_to_parents.items() for p in ps)

    def labels(self, entity: str) -> frozenset[str]:
        try:
            return self.entity_labels[entity]
        except KeyError:
            raise KeyError(f"unknown entity: {entity!r}") from None

    def topological_order(self) -> list[str]:
        """Categories ordered children first."""
        ts = TopologicalSorter({c: self.parent_to_children[c] for c in sorted(self.category_ids)})
        return list(ts.static_order())

    def ancestor_depths(self, entity: str) -> dict[str, int]:
        """Shortest number of upward steps from the direct categories (direct = 0)."""
        direct = self.labels(entity)
        depth = {c: 0 for c in direct}
        queue = deque(sorted(direct))
        while queue:
            c = queue.popleft()
            for p in sorted(self.child_to_parents[c]):
                if p not in depth:
                    depth[p] = depth[c] + 1
                    queue.append(p)
        return depth

    def ancestors(self, entity: str) -> set[str]:
        return set(self.ancestor_depths(entity))

    def ancestor_weights(self, entity: str, max_depth: int | None = None) -> AncestorWeights:
        key = (entity, max_depth)
        cached = self._weights_cache.get(key)
        if cached is None:
            cached = self._compute_weights(entity, max_depth)
            self._weights_cache[key] = cached
        return cached

    def _compute_weights(self, entity: str, max_depth: int | None) -> AncestorWeights:
        depth = self.ancestor_depths(entity)
        direct = self.entity_labels[entity]
        # children inside the ancestor set; only these lie on paths to a label
        below = {c: [k for k in self.parent_to_children[c] if k in depth] for c in depth}
        order = TopologicalSorter({c: below[c] for c in sorted(depth)}).static_order()

        count: dict[str, float] = {}
        length: dict[str, float] = {}
        dist: dict[str, float] = {}
        for c in order:
            n = 1.0 if c in direct else 0.0
            s = 0.0
            for k in below[c]:
                n += count[k]
                s += length[k] + count[k]
            count[c] = n
            length[c] = s
            dist[c] = 0.0 if c in direct else 1.0 + min(dist[k] for k in below[c])

        entries = []
        for c, d in depth.items():
            if max_depth is not None and d > max_depth:
                continue
            if c in direct:
                ell = 1.0
            else:
                ell = 1.0 + length[c] / count[c]
                if not math.isfinite(ell):
                    log.warning(
                        "path statistics overflow for %s above %s; using shortest distance",
                        c, entity,
                    )
                    ell = 1.0 + dist[c]
            entries.append((c, ell))
        total = sum(1.0 / ell for _, ell in entries)
        entries.sort(key=lambda t: (t[1], t[0]))
        return AncestorWeights(
            entity, tuple((c, ell, (1.0 / ell) / total) for c, ell in entries)
        )

    def to_dict(self) -> dict:
        return {
            "categories": sorted(self.category_ids),
            "edges": [list(e) for e in self.edges()],
            "labels": {e: sorted(cs) for e, cs in sorted(self.entity_labels.items())},
            "removed_edges": [list(e) for e in self.removed_edges],
            "pruned": list(self.pruned),
            "rejected_entities": list(self.rejected_entities),
        }

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "CategoryDag":
        try:
            graph = {c: set() for c in data["categories"]}
            for child, parent in data["edges"]:
                graph[child].add(parent)
            labels = {e: set(cs) for e, cs in data["labels"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise StructureError(f"malformed hierarchy artifact: {exc}") from exc
        _, cyc = break_cycles(graph)
        if cyc:
            raise StructureError(f"hierarchy artifact contains cycles: {cyc[:3]}")
        for e, cs in labels.items():
            if not cs or not cs <= graph.keys():
                raise StructureError(f"entity {e!r} has missing or undeclared labels")
        return cls(
            graph,
            labels,
            removed_edges=[tuple(e) for e in data.get("removed_edges", [])],
            pruned=data.get("pruned", []),
            rejected_entities=data.get("rejected_entities", []),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CategoryDag":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise MissingInputError(f"no such file: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, path, exc.lineno) from exc
        return cls.from_dict(data)


def load_hierarchy(
    edge_records: Iterable[tuple[str, str]],
    label_records: Iterable[tuple[str, str]],
    prune: Iterable[str] = (),
    categories: Iterable[str] = (),
) -> CategoryDag:
    """Build a :class:`CategoryDag` from ``(child, parent)`` and ``(entity, category)`` records.

    Duplicates are merged and every referenced id is registered.  Categories
    listed in ``prune`` are dropped together with their edges and labels
    before cycle repair.  Entities left without any label are rejected.
    """
    pruned = set(prune)
    graph: dict[str, set[str]] = {c: set() for c in categories if c not in pruned}
    hit: set[str] = set()
    for child, parent in edge_records:
        if child in pruned or parent in pruned:
            hit.update({child, parent} & pruned)
            continue
        if child == parent:
            graph.setdefault(child, set())
            continue
        graph.setdefault(child, set()).add(parent)
        graph.setdefault(parent, set())

    labels: dict[str, set[str]] = {}
    for entity, cat in label_records:
        cs = labels.setdefault(entity, set())
        if cat in pruned:
            hit.add(cat)
            continue
        cs.add(cat)
        graph.setdefault(cat, set())

    rejected = sorted(e for e, cs in labels.items() if not cs)
    if rejected:
        log.warning("rejected %d entities left without labels", len(rejected))
    for e in rejected:
        del labels[e]

    repaired, removed = break_cycles(graph)
    if removed:
        log.info("removed %d cycle edges", len(removed))
    return CategoryDag(
        repaired,
        labels,
        removed_edges=removed,
        pruned=hit,
        rejected_entities=rejected,
    )


def read_edge_file(path) -> list[tuple[str, str]]:
    return [tuple(split_fields(t, 2, path, n)) for n, t in iter_lines(path)]


def read_label_file(path) -> list[tuple[str, str]]:
    return [tuple(split_fields(t, 2, path, n)) for n, t in iter_lines(path)]


def read_prune_file(path) -> list[str]:
    out = []
    for n, t in iter_lines(path):
        if len(t.split()) != 1:
            raise ParseError("expected one category id per line", path, n)
        out.append(t.strip())
    return out


def read_hierarchy(edge_file, label_file, prune_file=None) -> CategoryDag:
    prune = read_prune_file(prune_file) if prune_file else ()
    return load_hierarchy(read_edge_file(edge_file), read_label_file(label_file), prune)
