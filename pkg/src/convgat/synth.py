"""Synthetic threads whose label is decided by a cue placed a fixed number of hops above the target.

Every thread has the same shape in both classes: a post, a handful of
scored top-level replies (some with children), and a reply chain ending in
the labeled target. The comment exactly ``depth`` reply hops above the
target carries the cue phrase when the target is abusive and ordinary
filler text otherwise; nothing else differs between the classes.
"""

from __future__ import annotations

import numpy as np

from .thread import ABUSIVE, NON_ABUSIVE, CommentNode, ConversationThread

# filler is a shared base sentence plus a few random words, so filler
# embeddings form a tight cluster and the cue is the only strong signal
BASE = "the weather by the river was calm and the market sold coffee".split()
FILLER = (
    "bread garden music train bike paint recipe mountain window book soup bus table "
    "park road lake field cloud song movie game card chair door lamp shoe coat"
).split()

CUE_TEXT = "slur vermin trash"


def _filler(rng, lo=1, hi=2) -> str:
    extra = rng.choice(FILLER, size=int(rng.integers(lo, hi + 1)))
    return " ".join(BASE * 2) + " " + " ".join(extra)


def snowball_thread(index: int, depth: int, abusive: bool, rng: np.random.Generator) -> tuple:
    """Build one thread; returns ``(thread, cue_id)``."""
    if depth < 1:
        raise ValueError("cue depth must be >= 1")
    prefix = f"s{index}"
    clock = iter(range(1, 10_000))
    comments = [CommentNode(f"{prefix}_p", None, _filler(rng), int(rng.integers(5, 200)), 0)]

    for j in range(int(rng.integers(3, 8))):
        rid = f"{prefix}_r{j}"
        comments.append(CommentNode(rid, f"{prefix}_p", _filler(rng), int(rng.integers(-5, 60)), next(clock)))
        for k in range(int(rng.integers(0, 3))):
            comments.append(CommentNode(f"{rid}_{k}", rid, _filler(rng), int(rng.integers(-5, 30)), next(clock)))

    chain_len = depth + int(rng.integers(0, 2))
    parent = f"{prefix}_p"
    chain = []
    for j in range(chain_len):
        cid = f"{prefix}_c{j}"
        chain.append(cid)
        comments.append(CommentNode(cid, parent, _filler(rng), int(rng.integers(-5, 60)), next(clock)))
        parent = cid
    # chain[-1] is the target's parent, one hop away
    cue_id = chain[-depth]
    comments = [
        CommentNode(c.id, c.parent_id, CUE_TEXT, c.score, c.created_at) if abusive and c.id == cue_id else c
        for c in comments
    ]
    target_id = f"{prefix}_t"
    comments.append(
        CommentNode(
            target_id,
            chain[-1],
            "no u " + _filler(rng, 1, 3),
            int(rng.integers(-5, 30)),
            next(clock),
            label=ABUSIVE if abusive else NON_ABUSIVE,
            context_sensitive=True if abusive else None,
        )
    )
    return ConversationThread(f"synth{index}", tuple(comments)), cue_id


def snowball_corpus(n_threads: int, depth: int, seed: int) -> tuple:
    """``n_threads`` threads with alternating labels; returns ``(threads, cue_ids)``."""
    rng = np.random.default_rng(seed)
    threads, cues = [], {}
    for i in range(n_threads):
        thread, cue = snowball_thread(i, depth, abusive=(i % 2 == 0), rng=rng)
        threads.append(thread)
        cues[thread.thread_id] = cue
    return threads, cues


def separable_samples(n: int, d: int, seed: int, margin: float = 0.5) -> list:
    """Single-node graphs whose features are linearly separable by construction."""
    from .graph import ConversationGraph
    from .train import Sample

    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    samples = []
    for i in range(n):
        y = i % 2
        x = rng.standard_normal(d)
        x -= (x @ direction) * direction
        x += (margin + rng.random()) * (1 if y else -1) * direction
        label = ABUSIVE if y else NON_ABUSIVE
        graph = ConversationGraph(f"sep{i}", f"sep{i}_t", (f"sep{i}_t",), (), label=label)
        samples.append(Sample(graph, x[None, :], y))
    return samples
