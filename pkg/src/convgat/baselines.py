"""Reference classifiers that ignore or flatten the conversation structure."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, ShapeError, StateError
from .gat import GatConfig, GatModel, ModelOutput, init_head
from .graph import ConversationGraph
from .nn import ParamStore, bce_with_logits, dropout, glorot_uniform, sigmoid

MODEL_KINDS = ("gat", "no-context", "embed-concat")


def _features(graph, features, d, dtype):
    x = np.asarray(getattr(features, "data", features), dtype=dtype)
    if x.shape != (len(graph.nodes), d):
        raise ShapeError(f"features {x.shape} do not match graph ({len(graph.nodes)} nodes, dim {d})")
    return x


def _check_label(label):
    if label not in (0, 1):
        raise ArgumentError(f"label must be 0 or 1, got {label!r}")


class NoContextModel:
    """Logistic regression on the target embedding alone."""

    kind = "no-context"

    def __init__(self, cfg: GatConfig):
        self.cfg = cfg

    def init_params(self, seed: int) -> ParamStore:
        rng = np.random.default_rng(seed)
        params = ParamStore(seed)
        d = self.cfg.dim
        params.add("head.W_c", glorot_uniform(rng, (1, d), d, 1))
        params.add("head.b_c", np.zeros(1))
        return params

    def forward_vector(self, x_target, params, training=False, rng=None) -> ModelOutput:
        x_target = np.asarray(x_target, dtype=params["head.W_c"].dtype)
        if x_target.shape != (params["head.W_c"].shape[1],):
            raise ShapeError(f"target vector {x_target.shape} does not match W_c {params['head.W_c'].shape}")
        x, mask = dropout(x_target, self.cfg.input_dropout, training, rng)
        logit = params["head.W_c"][0] @ x + params["head.b_c"][0]
        return ModelOutput(prob=sigmoid(logit), logit=logit, cache=dict(x=x))

    def forward(self, graph: ConversationGraph, features, params, training=False, rng=None) -> ModelOutput:
        x = _features(graph, features, self.cfg.dim, params["head.W_c"].dtype)
        out = self.forward_vector(x[graph.target_index], params, training, rng)
        out.graph = graph
        return out

    def backward(self, output: ModelOutput, label: int, params: ParamStore) -> None:
        if output.cache is None:
            raise StateError("forward cache is missing; run forward before backward")
        _check_label(label)
        dlogit = output.prob - label
        params.accumulate("head.W_c", dlogit * output.cache["x"][None, :])
        params.accumulate("head.b_c", np.array([dlogit]))

    def loss(self, output, label):
        return bce_with_logits(output.logit, label)


class EmbedConcatModel:
    """Left fold of context embeddings through a shared tanh layer, plus the target embedding.

    ``c = e_1``; for each later context vector ``c = tanh(W_p [c | e_j] + b_p)``;
    the classifier sees ``c + x_target``. Context order is graph node order,
    which is chronological after the root.
    """

    kind = "embed-concat"

    def __init__(self, cfg: GatConfig):
        self.cfg = cfg

    def init_params(self, seed: int) -> ParamStore:
        rng = np.random.default_rng(seed)
        params = ParamStore(seed)
        d = self.cfg.dim
        params.add("pair.W_p", glorot_uniform(rng, (d, 2 * d), 2 * d, d))
        params.add("pair.b_p", np.zeros(d))
        params.add("head.W_c", glorot_uniform(rng, (1, d), d, 1))
        params.add("head.b_c", np.zeros(1))
        return params

    def forward_vectors(self, context, x_target, params, training=False, rng=None) -> ModelOutput:
        dtype = params["head.W_c"].dtype
        d = params["head.W_c"].shape[1]
        x_target = np.asarray(x_target, dtype=dtype)
        context = [np.asarray(e, dtype=dtype) for e in context]
        if x_target.shape != (d,) or any(e.shape != (d,) for e in context):
            raise ShapeError(f"embed-concat inputs must all have shape ({d},)")
        p = self.cfg.input_dropout
        x_t, _ = dropout(x_target, p, training, rng)
        ctx = [dropout(e, p, training, rng)[0] for e in context]
        states = []
        c = ctx[0] if ctx else np.zeros(d, dtype=dtype)
        for e in ctx[1:]:
            pair = np.concatenate([c, e])
            c = np.tanh(params["pair.W_p"] @ pair + params["pair.b_p"])
            states.append((pair, c))
        z = c + x_t
        logit = params["head.W_c"][0] @ z + params["head.b_c"][0]
        return ModelOutput(prob=sigmoid(logit), logit=logit, target_repr_z=z, cache=dict(states=states, z=z))

    def forward(self, graph: ConversationGraph, features, params, training=False, rng=None) -> ModelOutput:
        x = _features(graph, features, self.cfg.dim, params["head.W_c"].dtype)
        t = graph.target_index
        context = [x[i] for i in range(len(graph.nodes)) if i != t]
        out = self.forward_vectors(context, x[t], params, training, rng)
        out.graph = graph
        return out

    def backward(self, output: ModelOutput, label: int, params: ParamStore) -> None:
        if output.cache is None:
            raise StateError("forward cache is missing; run forward before backward")
        _check_label(label)
        dlogit = output.prob - label
        params.accumulate("head.W_c", dlogit * output.cache["z"][None, :])
        params.accumulate("head.b_c", np.array([dlogit]))
        dc = dlogit * params["head.W_c"][0]
        d = dc.shape[0]
        for pair, c in reversed(output.cache["states"]):
            dpre = dc * (1.0 - c * c)
            params.accumulate("pair.W_p", np.outer(dpre, pair))
            params.accumulate("pair.b_p", dpre)
            dc = (params["pair.W_p"].T @ dpre)[:d]

    def loss(self, output, label):
        return bce_with_logits(output.logit, label)


def make_model(kind: str, cfg: GatConfig):
    if kind == "gat":
        return GatModel(cfg)
    if kind == "no-context":
        return NoContextModel(cfg)
    if kind == "embed-concat":
        return EmbedConcatModel(cfg)
    raise ArgumentError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
