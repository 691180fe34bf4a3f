import numpy as np
import pytest

from convgat.graph import ConversationGraph
from convgat.thread import ABUSIVE, CommentNode, ConversationThread


def make_thread(rows, thread_id="t0"):
    """rows: (id, parent, score, created_at[, label[, context_sensitive]])"""
    comments = []
    for row in rows:
        cid, parent, score, ts, *rest = row
        label = rest[0] if rest else None
        flag = rest[1] if len(rest) > 1 else None
        comments.append(CommentNode(cid, parent, f"text of {cid}", score, ts, label, flag))
    return ConversationThread(thread_id, tuple(comments))


FIXTURE_ROWS = [
    ("p", None, 0, 0),
    ("r1", "p", 10, 1),
    ("r2", "p", 8, 2),
    ("r3", "p", 6, 3),
    ("r4", "p", 4, 4),
    ("r5", "p", 2, 5),
    ("r6", "p", 1, 6),
    ("r1a", "r1", 5, 7),
    ("r1b", "r1", 3, 8),
    ("t", "r6", 0, 9, ABUSIVE, True),
]


@pytest.fixture
def fixture_thread():
    """Post, six scored depth-1 replies, two children under r1 and the target under r6."""
    return make_thread(FIXTURE_ROWS, "fixture")


@pytest.fixture
def chain30():
    """A 30-comment reply chain with created_at 1..30; comment ``c28`` is labeled."""
    rows = [("c1", None, 0, 1)]
    for i in range(2, 31):
        rows.append((f"c{i}", f"c{i - 1}", 0, i, ABUSIVE if i == 28 else None))
    return make_thread(rows, "chain30")


def random_thread(rng, n, thread_id="rand", monotone=True):
    """Random reply tree with ``n`` comments, small score range (ties) and optional timestamp noise."""
    rows = [("n0", None, int(rng.integers(-3, 4)), 0)]
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        ts = i if monotone else int(rng.integers(0, n))
        rows.append((f"n{i}", f"n{parent}", int(rng.integers(-3, 4)), ts))
    return make_thread(rows, thread_id)


def random_graph(rng, n, extra_edges=0):
    """Random DAG-ish graph: reply tree plus post links plus optional random extra edges."""
    parents = [None] + [int(rng.integers(0, i)) for i in range(1, n)]
    edges = {(parents[i], i, "reply") for i in range(1, n)}
    edges |= {(0, i, "post_link") for i in range(1, n) if rng.random() < 0.5}
    for _ in range(extra_edges):
        s, d = (int(v) for v in rng.integers(0, n, 2))
        if s != d:
            edges.add((s, d, "temporal"))
    target = int(rng.integers(0, n))
    return ConversationGraph("rg", f"v{target}", [f"v{i}" for i in range(n)], sorted(edges), label=ABUSIVE)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
