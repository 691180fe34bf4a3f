"""Per-target conversation graphs: trimming, edge construction, receptive fields, DOT export."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import ArgumentError, ConfigError, FormatError
from .thread import ConversationThread

REPLY = "reply"
POST_LINK = "post_link"
TEMPORAL = "temporal"
REVERSE = "reverse"
EDGE_KINDS = (REPLY, POST_LINK, TEMPORAL, REVERSE)

EDGE_MODES = ("directed", "undirected", "directed_temporal", "undirected_temporal")


@dataclass(frozen=True)
class TrimConfig:
    strategy: str = "affordance"
    top_k: int = 5
    post_edges: str = "all_nodes"
    recent_budget: int = 25
    edge_mode: str = "directed"
    exclude_after_target: bool = True

    def __post_init__(self):
        if self.strategy not in ("affordance", "recent"):
            raise ConfigError(f"unknown trimming strategy {self.strategy!r}")
        if self.post_edges not in ("all_nodes", "target_only"):
            raise ConfigError(f"unknown post_edges option {self.post_edges!r}")
        if self.edge_mode not in EDGE_MODES:
            raise ConfigError(f"unknown edge mode {self.edge_mode!r}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.recent_budget < 2:
            raise ConfigError("recent_budget must be >= 2")


@dataclass(frozen=True)
class ConversationGraph:
    """Trimmed subgraph around one target comment.

    Node 0 is always the root post. Edges are ``(src, dst, kind)`` index
    triples; self-loops are never stored.
    """

    thread_id: str
    target_id: str
    nodes: tuple
    edges: tuple
    label: Optional[str] = None
    context_sensitive: Optional[bool] = None
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((int(s), int(d), k) for s, d, k in self.edges))
        index = {node: i for i, node in enumerate(self.nodes)}
        if len(index) != len(self.nodes):
            raise FormatError(f"graph {self.target_id!r}: duplicate nodes")
        if self.target_id not in index:
            raise FormatError(f"graph {self.target_id!r}: target missing from nodes")
        n = len(self.nodes)
        if len(set(self.edges)) != len(self.edges):
            raise FormatError(f"graph {self.target_id!r}: duplicate edges")
        for s, d, k in self.edges:
            if k not in EDGE_KINDS:
                raise FormatError(f"graph {self.target_id!r}: unknown edge kind {k!r}")
            if not (0 <= s < n and 0 <= d < n) or s == d:
                raise FormatError(f"graph {self.target_id!r}: bad edge {(s, d, k)}")
        object.__setattr__(self, "_index", index)

    @property
    def target_index(self) -> int:
        return self._index[self.target_id]

    @property
    def y(self) -> Optional[int]:
        if self.label is None:
            return None
        return 1 if self.label == "abusive" else 0

    def index_of(self, comment_id: str) -> int:
        return self._index[comment_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def edge_pairs(self) -> set:
        return {(s, d) for s, d, _ in self.edges}

    def in_neighbors(self) -> list:
        """Unique in-neighbor indices per node, ignoring edge kind."""
        result = [set() for _ in self.nodes]
        for s, d, _ in self.edges:
            result[d].add(s)
        return [sorted(r) for r in result]

    def to_dict(self) -> dict:
        return {
            "thread_id": self.thread_id,
            "target_id": self.target_id,
            "label": self.label,
            "context_sensitive": self.context_sensitive,
            "nodes": list(self.nodes),
            "edges": [[s, d, k] for s, d, k in self.edges],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ConversationGraph":
        try:
            return cls(
                thread_id=obj["thread_id"],
                target_id=obj["target_id"],
                nodes=obj["nodes"],
                edges=[tuple(e) for e in obj["edges"]],
                label=obj.get("label"),
                context_sensitive=obj.get("context_sensitive"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed graph object: {exc}") from None


def _assemble(thread, target_id, keep, post_edges) -> ConversationGraph:
    root = thread.root.id
    rest = sorted((i for i in keep if i != root), key=lambda i: (thread.get(i).created_at, i))
    nodes = [root] + rest
    index = {n: i for i, n in enumerate(nodes)}
    edges = []
    for n in rest:
        parent = thread.get(n).parent_id
        if parent in index:
            edges.append((index[parent], index[n], REPLY))
    if post_edges == "all_nodes":
        edges.extend((0, index[n], POST_LINK) for n in rest)
    elif target_id != root:
        edges.append((0, index[target_id], POST_LINK))
    target = thread.get(target_id)
    return ConversationGraph(
        thread.thread_id, target_id, nodes, edges, label=target.label, context_sensitive=target.context_sensitive
    )


def _rank_key(thread):
    # highest score first; ties go to the older comment, then the smaller id
    def key(i):
        c = thread.get(i)
        return (-c.score, c.created_at, i)

    return key


def affordance_trim(thread: ConversationThread, target_id: str, cfg: TrimConfig = TrimConfig()) -> ConversationGraph:
    """Keep what a default-sorted thread view shows someone replying to ``target_id``.

    That is the post, its ``top_k`` best-scored replies, the best-scored reply
    under each of those, and the complete reply path down to the target.
    """
    target = thread.get(target_id)
    root = thread.root.id

    def eligible(i):
        return not cfg.exclude_after_target or thread.get(i).created_at < target.created_at

    key = _rank_key(thread)
    top = sorted((i for i in thread.children_of(root) if eligible(i)), key=key)[: cfg.top_k]
    keep = {root, *top}
    for reply in top:
        kids = sorted((i for i in thread.children_of(reply) if eligible(i)), key=key)
        if kids:
            keep.add(kids[0])
    keep.update(thread.path_to_root(target_id))
    return _assemble(thread, target_id, keep, cfg.post_edges)


def recent_trim(thread: ConversationThread, target_id: str, cfg: TrimConfig = TrimConfig(strategy="recent")) -> ConversationGraph:
    """Keep the root, the target and the most recent earlier comments, ``recent_budget`` nodes in total."""
    target = thread.get(target_id)
    root = thread.root.id
    earlier = [
        c for c in thread.comments if c.id not in (root, target_id) and c.created_at < target.created_at
    ]
    earlier.sort(key=lambda c: (c.created_at, c.id), reverse=True)
    room = cfg.recent_budget - (1 if target_id == root else 2)
    keep = {root, target_id, *(c.id for c in earlier[:room])}
    return _assemble(thread, target_id, keep, cfg.post_edges)


def apply_edge_mode(graph: ConversationGraph, mode: str, thread: ConversationThread) -> ConversationGraph:
    """Add temporal sibling chains and/or reverse edges.

    Reverse edges are stored once per reversed ``(src, dst)`` pair, so a pair
    carried by both a reply and a post_link edge yields one reverse edge.
    """
    if mode not in EDGE_MODES:
        raise ConfigError(f"unknown edge mode {mode!r}")
    edges = list(graph.edges)
    if mode.endswith("temporal"):
        groups = {}
        for i, node in enumerate(graph.nodes):
            parent = thread.get(node).parent_id
            if parent is not None and parent in graph._index:
                groups.setdefault(parent, []).append(i)
        for parent in sorted(groups, key=graph.index_of):
            siblings = sorted(groups[parent], key=lambda i: (thread.get(graph.nodes[i]).created_at, graph.nodes[i]))
            edges.extend((a, b, TEMPORAL) for a, b in zip(siblings, siblings[1:]))
    if mode.startswith("undirected"):
        seen = set()
        for s, d, _ in list(edges):
            if (d, s) not in seen:
                seen.add((d, s))
                edges.append((d, s, REVERSE))
    return ConversationGraph(
        graph.thread_id, graph.target_id, graph.nodes, edges, graph.label, graph.context_sensitive
    )


def build_graph(thread: ConversationThread, target_id: str, cfg: TrimConfig = TrimConfig()) -> ConversationGraph:
    trim = affordance_trim if cfg.strategy == "affordance" else recent_trim
    graph = trim(thread, target_id, cfg)
    if cfg.edge_mode == "directed":
        return graph
    return apply_edge_mode(graph, cfg.edge_mode, thread)


def k_hop_nodes(graph: ConversationGraph, k: int) -> set:
    """Nodes with a directed path of at most ``k`` edges ending at the target."""
    if k < 0:
        raise ArgumentError("k must be >= 0")
    sources = graph.in_neighbors()
    start = graph.target_index
    dist = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if dist[node] == k:
            continue
        for src in sources[node]:
            if src not in dist:
                dist[src] = dist[node] + 1
                queue.append(src)
    return set(dist)


def receptive_field_stats(graphs: list, k: int) -> tuple:
    """(max, lower median) of k-hop receptive-field sizes over ``graphs``."""
    if not graphs:
        raise ArgumentError("receptive_field_stats needs at least one graph")
    sizes = sorted(len(k_hop_nodes(g, k)) for g in graphs)
    return sizes[-1], sizes[(len(sizes) - 1) // 2]


def read_graphs(path) -> list:
    graphs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                graphs.append(ConversationGraph.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: malformed JSON: {exc.msg}", lineno) from None
            except FormatError as exc:
                raise FormatError(f"{path}: {exc}", lineno) from None
    return graphs


def write_graphs(graphs: Iterable[ConversationGraph], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_dict(), ensure_ascii=False) + "\n")


_EDGE_STYLE = {REPLY: "solid", POST_LINK: "dashed", TEMPORAL: "dotted", REVERSE: "dotted"}


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def export_dot(graph: ConversationGraph, attention: Optional[dict] = None, texts: Optional[dict] = None) -> str:
    """Render ``graph`` as a DOT digraph.

    ``attention`` maps ``(src, dst)`` index pairs, including ``(i, i)``
    self-loops, to weights. Self-loops are not drawn: a node's self weight is
    one minus the labels on its incoming edges.
    """
    pairs = {}
    for s, d, k in graph.edges:
        pairs.setdefault((s, d), []).append(k)
    if attention:
        for key in attention:
            s, d = key
            if key not in pairs and s != d:
                raise ArgumentError(f"attention weight for {key} which is not an edge of the graph")
            if not (0 <= s < len(graph) and 0 <= d < len(graph)):
                raise ArgumentError(f"attention weight for {key} outside the graph")

    lines = [f"digraph {_dot_quote(graph.target_id)} {{", "  rankdir=TB;", "  node [shape=box, style=rounded];"]
    for i, node in enumerate(graph.nodes):
        label = node
        if texts and texts.get(node):
            snippet = texts[node]
            label = f"{node}\n{snippet[:40] + '...' if len(snippet) > 40 else snippet}"
        attrs = [f"label={_dot_quote(label)}"]
        if i == graph.target_index:
            attrs.append('style="rounded,filled", fillcolor=orange, penwidth=2')
        elif i == 0:
            attrs.append('style="rounded,filled", fillcolor=lightblue')
        if attention and (i, i) in attention:
            attrs.append(f"xlabel={_dot_quote(f'self {attention[(i, i)]:.4f}')}")
        lines.append(f"  n{i} [{', '.join(attrs)}];")
    for (s, d), kinds in sorted(pairs.items(), key=lambda item: (item[0][1], item[0][0])):
        attrs = [f"style={_EDGE_STYLE[kinds[0]]}", f"tooltip={_dot_quote('+'.join(kinds))}"]
        if attention and (s, d) in attention:
            attrs.append(f"label={_dot_quote(f'{attention[(s, d)]:.4f}')}")
        lines.append(f"  n{s} -> n{d} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
