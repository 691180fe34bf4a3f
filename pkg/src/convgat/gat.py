"""Stacked graph attention layers over a conversation graph, with a target-node head.

Per layer and head ``h``::

    g_n      = W_h x_n
    e_mn     = LeakyReLU(a_h[:d] . g_m + a_h[d:] . g_n)      n in N(m)
    alpha_mn = softmax over N(m) of e_mn
    x'_m     = ELU(mean_h sum_n alpha_mn g_n)

``N(m)`` holds the unique sources of edges into ``m`` plus ``m`` itself.
The head concatenates the target's final state with its raw embedding,
projects back to ``d`` and applies a logistic classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConfigError, ShapeError, StateError
from .graph import ConversationGraph
from .nn import (
    LEAKY_SLOPE,
    ParamStore,
    bce_with_logits,
    dropout,
    elu,
    elu_grad,
    glorot_uniform,
    leaky_relu,
    leaky_relu_grad,
    sigmoid,
)

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class GatConfig:
    num_layers: int = 3
    heads: int = 8
    dim: int = 768
    input_dropout: float = 0.3
    layer_dropout: float = 0.4
    leaky_slope: float = LEAKY_SLOPE
    drop_layer_input: bool = True
    drop_attention: bool = True
    head_combine: str = "average"

    def __post_init__(self):
        if not 1 <= self.num_layers <= 8:
            raise ConfigError("num_layers must be in 1..8")
        if self.heads < 1 or self.dim < 1:
            raise ConfigError("heads and dim must be positive")
        for name in ("input_dropout", "layer_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.head_combine != "average":
            raise ConfigError("only head_combine='average' is supported")

    def without_dropout(self) -> "GatConfig":
        return GatConfig(**{**self.__dict__, "input_dropout": 0.0, "layer_dropout": 0.0})


@dataclass
class ModelOutput:
    prob: float
    logit: float
    target_repr_z: Optional[np.ndarray] = None
    hidden_h: Optional[np.ndarray] = None
    # per layer: (heads, n, n) array, entry [h, dst, src]
    attention: list = field(default_factory=list)
    graph: Optional[ConversationGraph] = None
    cache: Optional[dict] = None


@dataclass(frozen=True)
class AttentionMap:
    """Head-averaged attention for one layer, keyed by node indices."""

    layer: int
    edges: dict
    self_loops: dict

    def as_edge_map(self) -> dict:
        merged = dict(self.edges)
        merged.update({(i, i): w for i, w in self.self_loops.items()})
        return merged

    def to_json(self, graph: ConversationGraph) -> dict:
        return {
            "layer": self.layer,
            "edges": [
                {"src": graph.nodes[s], "dst": graph.nodes[d], "weight": w}
                for (s, d), w in sorted(self.edges.items(), key=lambda kv: (kv[0][1], kv[0][0]))
            ],
            "self_loops": [{"node": graph.nodes[i], "weight": w} for i, w in sorted(self.self_loops.items())],
        }


@lru_cache(maxsize=8192)
def neighbor_mask(graph: ConversationGraph) -> np.ndarray:
    """Boolean (n, n) matrix with ``mask[dst, src]`` true for in-edges and self-loops."""
    n = len(graph.nodes)
    mask = np.eye(n, dtype=bool)
    for s, d, _ in graph.edges:
        mask[d, s] = True
    mask.setflags(write=False)
    return mask


def bce_loss(prob: float, label: int) -> float:
    if label not in (0, 1):
        raise ArgumentError(f"label must be 0 or 1, got {label!r}")
    p = min(max(float(prob), PROB_CLAMP), 1.0 - PROB_CLAMP)
    return -(label * np.log(p) + (1 - label) * np.log1p(-p))


def batch_loss(outputs, labels) -> float:
    if len(outputs) != len(labels) or not outputs:
        raise ArgumentError("outputs and labels must be non-empty and of equal length")
    probs = [o.prob if isinstance(o, ModelOutput) else o for o in outputs]
    return float(np.mean([bce_loss(p, y) for p, y in zip(probs, labels)]))


def init_head(params: ParamStore, rng: np.random.Generator, d: int, in_dim: int) -> None:
    params.add("head.W_f", glorot_uniform(rng, (d, in_dim), in_dim, d))
    params.add("head.b_f", np.zeros(d))
    params.add("head.W_c", glorot_uniform(rng, (1, d), d, 1))
    params.add("head.b_c", np.zeros(1))


class GatModel:
    kind = "gat"

    def __init__(self, cfg: GatConfig):
        self.cfg = cfg

    def init_params(self, seed: int) -> ParamStore:
        cfg, d = self.cfg, self.cfg.dim
        rng = np.random.default_rng(seed)
        params = ParamStore(seed)
        for layer in range(cfg.num_layers):
            params.add(f"layer{layer}.W", glorot_uniform(rng, (cfg.heads, d, d), d, d))
            params.add(f"layer{layer}.a", glorot_uniform(rng, (cfg.heads, 2 * d), 2 * d, 1))
        init_head(params, rng, d, 2 * d)
        return params

    def _require(self, params: ParamStore) -> None:
        needed = [f"layer{i}.{p}" for i in range(self.cfg.num_layers) for p in ("W", "a")]
        needed += ["head.W_f", "head.b_f", "head.W_c", "head.b_c"]
        missing = [n for n in needed if n not in params]
        if missing:
            raise ConfigError(f"missing parameters: {', '.join(missing)}")

    def layer_forward(self, x, mask, W, a, training, rng):
        """One attention layer. Returns ``(x_next, alpha, cache)``."""
        cfg = self.cfg
        d = W.shape[-1]
        if x.shape[1] != d or mask.shape != (x.shape[0], x.shape[0]):
            raise ShapeError(f"layer input {x.shape} does not match weights {W.shape} / mask {mask.shape}")
        x_in, x_mask = dropout(x, cfg.layer_dropout if cfg.drop_layer_input else 0.0, training, rng)
        g = np.einsum("nd,hed->hne", x_in, W)
        dst_score = np.einsum("hnd,hd->hn", g, a[:, :d])
        src_score = np.einsum("hnd,hd->hn", g, a[:, d:])
        s = dst_score[:, :, None] + src_score[:, None, :]
        alpha = self._attention(s, src_score, mask)
        alpha_used, a_mask = dropout(alpha, cfg.layer_dropout if cfg.drop_attention else 0.0, training, rng)
        o = (alpha_used @ g).mean(axis=0)
        cache = dict(x_in=x_in, x_mask=x_mask, g=g, s=s, alpha=alpha, alpha_used=alpha_used, a_mask=a_mask, o=o)
        return elu(o), alpha, cache

    def _attention(self, s, src_score, mask):
        """Masked softmax of LeakyReLU(s) along the source axis.

        Scores are shifted by the row maximum. Where a score lies on the same
        side of the kink as the row maximum the difference is formed from the
        source terms alone, so the destination term cancels exactly.
        """
        slope = self.cfg.leaky_slope
        e = np.where(mask, leaky_relu(s, slope), -np.inf)
        best = e.argmax(axis=-1)[..., None]
        s_best = np.take_along_axis(s, best, -1)
        e_best = np.take_along_axis(e, best, -1)
        src_best = np.take_along_axis(np.broadcast_to(src_score[:, None, :], s.shape), best, -1)
        same_side = (s >= 0) == (s_best >= 0)
        scale = np.where(s_best >= 0, 1.0, slope)
        shifted = np.where(same_side, scale * (src_score[:, None, :] - src_best), e - e_best)
        ex = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
        return ex / ex.sum(axis=-1, keepdims=True)

    def layer_backward(self, dx_next, cache, W, a):
        """Gradients ``(dx, dW, da)`` of one layer given the gradient of its output."""
        cfg = self.cfg
        d = W.shape[-1]
        heads = W.shape[0]
        g, alpha = cache["g"], cache["alpha"]
        do = dx_next * elu_grad(cache["o"]) / heads
        d_alpha = np.einsum("md,hnd->hmn", do, g)
        dg = np.einsum("hmn,md->hnd", cache["alpha_used"], do)
        if cache["a_mask"] is not None:
            d_alpha = d_alpha * cache["a_mask"]
        de = alpha * (d_alpha - (alpha * d_alpha).sum(axis=-1, keepdims=True))
        ds = de * leaky_relu_grad(cache["s"], cfg.leaky_slope)
        row, col = ds.sum(axis=2), ds.sum(axis=1)
        a_dst, a_src = a[:, :d], a[:, d:]
        da = np.concatenate([np.einsum("hm,hmd->hd", row, g), np.einsum("hn,hnd->hd", col, g)], axis=1)
        dg += row[:, :, None] * a_dst[:, None, :] + col[:, :, None] * a_src[:, None, :]
        dW = np.einsum("hne,nd->hed", dg, cache["x_in"])
        dx = np.einsum("hne,hed->nd", dg, W)
        if cache["x_mask"] is not None:
            dx = dx * cache["x_mask"]
        return dx, dW, da

    def forward(self, graph: ConversationGraph, features, params: ParamStore, training: bool = False, rng=None) -> ModelOutput:
        self._require(params)
        dtype = params["head.W_c"].dtype
        x0 = np.asarray(getattr(features, "data", features), dtype=dtype)
        if x0.shape != (len(graph.nodes), self.cfg.dim):
            raise ShapeError(f"features {x0.shape} do not match graph ({len(graph.nodes)} nodes, dim {self.cfg.dim})")
        if training and rng is None:
            raise ArgumentError("training mode needs an rng")
        mask = neighbor_mask(graph)
        x, in_mask = dropout(x0, self.cfg.input_dropout, training, rng)
        layers, attention = [], []
        for layer in range(self.cfg.num_layers):
            x, alpha, cache = self.layer_forward(x, mask, params[f"layer{layer}.W"], params[f"layer{layer}.a"], training, rng)
            layers.append(cache)
            attention.append(alpha)
        t = graph.target_index
        z = np.concatenate([x[t], x0[t]])
        h = params["head.W_f"] @ z + params["head.b_f"]
        logit = params["head.W_c"][0] @ h + params["head.b_c"][0]
        return ModelOutput(
            prob=sigmoid(logit),
            logit=logit,
            target_repr_z=z,
            hidden_h=h,
            attention=attention,
            graph=graph,
            cache=dict(layers=layers, x_final=x, target=t),
        )

    def backward(self, output: ModelOutput, label: int, params: ParamStore) -> None:
        """Accumulate d(BCE)/d(params) into ``params.grads``."""
        if output.cache is None:
            raise StateError("forward cache is missing; run forward before backward")
        if label not in (0, 1):
            raise ArgumentError(f"label must be 0 or 1, got {label!r}")
        d = self.cfg.dim
        dlogit = output.prob - label
        h, z = output.hidden_h, output.target_repr_z
        params.accumulate("head.W_c", dlogit * h[None, :])
        params.accumulate("head.b_c", np.array([dlogit]))
        dh = dlogit * params["head.W_c"][0]
        params.accumulate("head.W_f", np.outer(dh, z))
        params.accumulate("head.b_f", dh)
        dz = params["head.W_f"].T @ dh
        dx = np.zeros_like(output.cache["x_final"])
        dx[output.cache["target"]] = dz[:d]
        for layer in reversed(range(self.cfg.num_layers)):
            W, a = params[f"layer{layer}.W"], params[f"layer{layer}.a"]
            dx, dW, da = self.layer_backward(dx, output.cache["layers"][layer], W, a)
            params.accumulate(f"layer{layer}.W", dW)
            params.accumulate(f"layer{layer}.a", da)

    def loss(self, output: ModelOutput, label: int):
        return bce_with_logits(output.logit, label)


def extract_attention(output: ModelOutput, layer: int) -> AttentionMap:
    """Head-averaged weights of layer ``layer`` (1-based) over stored edges, self-loops separate."""
    if not 1 <= layer <= len(output.attention):
        raise ArgumentError(f"layer must be in 1..{len(output.attention)}, got {layer}")
    alpha = output.attention[layer - 1].mean(axis=0)
    graph = output.graph
    edges = {(s, d): float(alpha[d, s]) for s, d in sorted(graph.edge_pairs())}
    loops = {i: float(alpha[i, i]) for i in range(len(graph.nodes))}
    return AttentionMap(layer, edges, loops)
