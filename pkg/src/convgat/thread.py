"""Conversation threads as validated reply trees.

A thread arrives as one JSON object (one line of a JSONL corpus)::

    {"thread_id": "t1",
     "comments": [{"id": "p", "parent_id": null, "text": "...", "score": 12,
                   "created_at": 1600000000, "label": null,
                   "context_sensitive": null}, ...]}
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .errors import IdLookupError, ParseError, StructureError

logger = logging.getLogger(__name__)

ABUSIVE = "abusive"
NON_ABUSIVE = "non_abusive"
LABELS = (ABUSIVE, NON_ABUSIVE)

_COMMENT_FIELDS = ("id", "parent_id", "text", "score", "created_at", "label", "context_sensitive")


@dataclass(frozen=True)
class CommentNode:
    id: str
    parent_id: Optional[str]
    text: Optional[str]
    score: int
    created_at: int
    label: Optional[str] = None
    context_sensitive: Optional[bool] = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise StructureError("comment id must be a non-empty string")
        if self.label is not None and self.label not in LABELS:
            raise StructureError(f"comment {self.id!r}: unknown label {self.label!r}")
        if self.context_sensitive is not None and self.label is None:
            raise StructureError(f"comment {self.id!r}: context_sensitive set without a label")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in _COMMENT_FIELDS}


@dataclass(frozen=True)
class ConversationThread:
    """An immutable reply tree.

    Construction validates the tree invariants; timestamp inversions (a reply
    older than its parent) are kept and listed in ``warnings``.
    """

    thread_id: str
    comments: tuple
    warnings: tuple = field(default=(), compare=False)
    _by_id: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _children: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        comments = tuple(self.comments)
        object.__setattr__(self, "comments", comments)
        by_id = {}
        for c in comments:
            if c.id in by_id:
                raise StructureError(f"duplicate comment id {c.id!r}")
            by_id[c.id] = c
        roots = [c.id for c in comments if c.parent_id is None]
        if len(roots) != 1:
            raise StructureError(f"thread {self.thread_id!r} must have exactly one root, found {len(roots)}")
        children = {c.id: [] for c in comments}
        for c in comments:
            if c.parent_id is None:
                continue
            if c.parent_id not in by_id:
                raise StructureError(f"comment {c.id!r} has dangling parent_id {c.parent_id!r}")
            children[c.parent_id].append(c.id)
        for kids in children.values():
            kids.sort(key=lambda i: (by_id[i].created_at, i))
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})

        reached = {node for node, _ in self._bfs_depths()}
        if len(reached) != len(comments):
            start = next(c.id for c in comments if c.id not in reached)
            raise StructureError(f"reply cycle involving comment {_cycle_member(by_id, start)!r}")

        notes = list(self.warnings)
        for c in comments:
            if c.parent_id is not None and c.created_at < by_id[c.parent_id].created_at:
                notes.append(f"comment {c.id!r} created before its parent {c.parent_id!r}")
        object.__setattr__(self, "warnings", tuple(notes))

    @property
    def root(self) -> CommentNode:
        return next(c for c in self.comments if c.parent_id is None)

    def __contains__(self, comment_id) -> bool:
        return comment_id in self._by_id

    def __len__(self) -> int:
        return len(self.comments)

    def get(self, comment_id: str) -> CommentNode:
        try:
            return self._by_id[comment_id]
        except KeyError:
            raise IdLookupError(f"unknown comment id {comment_id!r} in thread {self.thread_id!r}", comment_id) from None

    def children_of(self, comment_id: str) -> list:
        """Reply ids sorted by (created_at, id)."""
        self.get(comment_id)
        return list(self._children[comment_id])

    def path_to_root(self, comment_id: str) -> list:
        """Ids from the root down to ``comment_id`` inclusive."""
        path = [self.get(comment_id).id]
        while (parent := self._by_id[path[-1]].parent_id) is not None:
            path.append(parent)
        path.reverse()
        return path

    def depths(self) -> dict:
        return dict(self._bfs_depths())

    def _bfs_depths(self) -> Iterator:
        root = self.root.id
        queue = deque([(root, 0)])
        while queue:
            node, depth = queue.popleft()
            yield node, depth
            for child in self._children[node]:
                queue.append((child, depth + 1))

    def labeled(self) -> list:
        return [c for c in self.comments if c.label is not None]

    def to_dict(self) -> dict:
        return {"thread_id": self.thread_id, "comments": [c.to_dict() for c in self.comments]}


def _cycle_member(by_id, start):
    seen = set()
    node = start
    while node not in seen:
        seen.add(node)
        node = by_id[node].parent_id
    return node


def children_of(thread: ConversationThread, comment_id: str) -> list:
    return thread.children_of(comment_id)


def path_to_root(thread: ConversationThread, comment_id: str) -> list:
    return thread.path_to_root(comment_id)


def _expect(value, kinds, what, allow_none=False):
    if value is None and allow_none:
        return value
    # bool is an int subclass; reject it where an integer is expected
    if isinstance(value, bool) and bool not in kinds:
        raise ParseError(f"{what}: expected {kinds[0].__name__}, got bool")
    if not isinstance(value, kinds):
        raise ParseError(f"{what}: expected {kinds[0].__name__}, got {type(value).__name__}")
    return value


def thread_from_dict(obj) -> ConversationThread:
    if not isinstance(obj, dict):
        raise ParseError("thread must be a JSON object")
    notes = []
    for key in obj:
        if key not in ("thread_id", "comments"):
            notes.append(f"ignored unknown thread field {key!r}")
    thread_id = _expect(obj.get("thread_id"), (str,), "thread_id")
    raw_comments = _expect(obj.get("comments"), (list,), "comments")
    comments = []
    for pos, raw in enumerate(raw_comments):
        where = f"comments[{pos}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{where}: expected object")
        for key in raw:
            if key not in _COMMENT_FIELDS:
                notes.append(f"{where}: ignored unknown field {key!r}")
        if "id" not in raw:
            raise ParseError(f"{where}: missing 'id'")
        comments.append(
            CommentNode(
                id=_expect(raw["id"], (str,), f"{where}.id"),
                parent_id=_expect(raw.get("parent_id"), (str,), f"{where}.parent_id", allow_none=True),
                text=_expect(raw.get("text"), (str,), f"{where}.text", allow_none=True),
                score=_expect(raw.get("score", 0), (int,), f"{where}.score"),
                created_at=_expect(raw.get("created_at"), (int,), f"{where}.created_at"),
                label=_expect(raw.get("label"), (str,), f"{where}.label", allow_none=True),
                context_sensitive=_expect(
                    raw.get("context_sensitive"), (bool,), f"{where}.context_sensitive", allow_none=True
                ),
            )
        )
    for note in notes:
        logger.warning("thread %s: %s", thread_id, note)
    return ConversationThread(thread_id, tuple(comments), warnings=tuple(notes))


def parse_thread(raw) -> ConversationThread:
    """Parse and validate one thread from bytes or str."""
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed thread JSON: {exc.msg}", offset) from None
    return thread_from_dict(obj)


def serialize_thread(thread: ConversationThread) -> str:
    return json.dumps(thread.to_dict(), ensure_ascii=False)


def read_threads(path) -> list:
    """Load a JSONL corpus; errors are re-raised with the line number."""
    threads = []
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                threads.append(parse_thread(line))
            except (ParseError, StructureError) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return threads


def write_threads(threads: Iterable[ConversationThread], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for thread in threads:
            fh.write(serialize_thread(thread) + "\n")
