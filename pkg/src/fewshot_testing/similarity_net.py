"""Learned similarity between scenarios, with exact reverse-mode gradients.

A small tanh MLP embeds normalized scenario coordinates into a feature
space. Similarity between a query scenario and every grid cell is the
reciprocal of embedded distance pushed through a softmax **over queries**
(each grid cell distributes one unit of attention across the query set), so
the similarity matrix is column-stochastic and the fusion weights
``w = S @ values`` sum to ``sum(values)``.

The backward pass is hand-written reverse mode through the whole chain
(fusion -> softmax -> distances -> embeddings) and returns gradients for
the MLP parameters (query and key paths), the temperature, the distance
epsilon, and the query coordinates. It is validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArtifactError, ConfigError, NumericalError

__all__ = [
    "NetConfig",
    "NetParams",
    "FuseTape",
    "init_params",
    "encode",
    "fuse",
    "fuse_backward",
    "fused_mean",
    "save_net",
    "load_net",
]

# Embedded distances below this are treated as zero in the distance
# backward (the direction is undefined there).
_DIST_FLOOR = 1e-12


@dataclass(frozen=True)
class NetConfig:
    """Architecture and similarity hyperparameters."""

    layer_sizes: tuple[int, ...] = (2, 64, 64, 16)
    temperature: float = 1.0
    distance_epsilon: float = 1e-3

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ConfigError("need at least input and output layer sizes")
        if self.layer_sizes[0] != 2:
            raise ConfigError("input layer must have size 2 (normalized coords)")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError("layer sizes must be positive")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")
        if self.distance_epsilon <= 0.0:
            raise ConfigError("distance_epsilon must be positive")


@dataclass
class NetParams:
    """MLP weights/biases plus the similarity hyperparameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    temperature: float = 1.0
    distance_epsilon: float = 1e-3
    seed_lineage: dict = field(default_factory=dict)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[0]] + [W.shape[1] for W in self.weights])


def init_params(config: NetConfig, seed: int, seed_lineage: dict | None = None) -> NetParams:
    """Xavier-uniform weights drawn layer by layer from one stream; zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    lineage = dict(seed_lineage or {})
    lineage["init_seed"] = int(seed)
    return NetParams(
        weights=weights,
        biases=biases,
        temperature=config.temperature,
        distance_epsilon=config.distance_epsilon,
        seed_lineage=lineage,
    )


def encode(params: NetParams, coords: np.ndarray, with_tape: bool = False):
    """Embed normalized coordinates; tanh hidden layers, linear output.

    With ``with_tape`` also returns the per-layer activation inputs needed
    by the parameter backward pass.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if coords.shape[1] != params.weights[0].shape[0]:
        raise ConfigError("coordinate dimension does not match the input layer")
    h = coords
    acts = [h]
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ W + b)
        acts.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    acts.append(out)
    if with_tape:
        return out, acts
    return out


@dataclass
class FuseTape:
    """Intermediates of one fusion forward pass, consumed by the backward."""

    query_coords: np.ndarray
    query_features: np.ndarray
    query_acts: list[np.ndarray]
    key_features: np.ndarray
    distances: np.ndarray
    raw_similarity: np.ndarray
    similarity: np.ndarray
    values: np.ndarray
    weights: np.ndarray


def fuse(
    params: NetParams,
    query_coords: np.ndarray,
    key_features: np.ndarray,
    values: np.ndarray,
) -> FuseTape:
    """Column-stochastic similarity between queries and keys, fused over values.

    ``query_coords`` are normalized scenario coordinates (one row per test
    scenario); ``key_features`` are precomputed embeddings of every grid
    cell; ``values`` is one number per cell (typically exposure mass).
    Returns the full tape; the fusion weights are ``tape.weights``.
    """
    query_coords = np.atleast_2d(np.asarray(query_coords, dtype=float))
    values = np.asarray(values, dtype=float)
    if key_features.shape[0] != values.shape[0]:
        raise ConfigError("key features and values disagree on cell count")
    if query_coords.shape[0] < 1:
        raise ConfigError("need at least one query scenario")
    Q, q_acts = encode(params, query_coords, with_tape=True)
    if Q.shape[1] != key_features.shape[1]:
        raise ConfigError("query and key feature dimensions differ")
    K = key_features
    d2 = (Q * Q).sum(axis=1)[:, None] + (K * K).sum(axis=1)[None, :] - 2.0 * Q @ K.T
    D = np.sqrt(np.maximum(d2, 0.0))
    raw = 1.0 / (params.distance_epsilon + D)
    Z = raw / params.temperature
    Z = Z - Z.max(axis=0, keepdims=True)
    E = np.exp(Z)
    S = E / E.sum(axis=0, keepdims=True)
    w = S @ values
    if not np.all(np.isfinite(w)):
        raise NumericalError("fuse produced non-finite fusion weights")
    return FuseTape(
        query_coords=query_coords,
        query_features=Q,
        query_acts=q_acts,
        key_features=K,
        distances=D,
        raw_similarity=raw,
        similarity=S,
        values=values,
        weights=w,
    )


def fused_mean(outcomes: np.ndarray, weights: np.ndarray):
    """Weighted outcome mean(s); rows of a 2-D ``outcomes`` are separate models."""
    return np.asarray(outcomes, dtype=float) @ weights


def _mlp_param_backward(params: NetParams, acts: list[np.ndarray], g_out: np.ndarray,
                        dWs: list[np.ndarray], dbs: list[np.ndarray]) -> np.ndarray:
    """Accumulate parameter grads for one encode path; returns input grads."""
    g = g_out
    for li in range(len(params.weights) - 1, -1, -1):
        dWs[li] += acts[li].T @ g
        dbs[li] += g.sum(axis=0)
        g = g @ params.weights[li].T
        if li > 0:
            g = g * (1.0 - acts[li] ** 2)
    return g


def fuse_backward(
    params: NetParams,
    tape: FuseTape,
    d_similarity: np.ndarray,
    want_param_grads: bool = False,
    key_acts: list[np.ndarray] | None = None,
) -> dict:
    """Reverse-mode gradients from an upstream ``dL/dS``.

    Always returns ``d_query_coords`` (per query, in normalized space),
    ``d_temperature`` and ``d_epsilon``. With ``want_param_grads`` also
    returns ``d_weights``/``d_biases``; pass ``key_acts`` (the tape from
    ``encode(params, all_cells, with_tape=True)``) to include the key-path
    contribution, which training needs because the same MLP embeds both
    sides.
    """
    S = tape.similarity
    D = tape.distances
    raw = tape.raw_similarity
    Q = tape.query_features
    K = tape.key_features
    T = params.temperature

    # softmax over queries, per key column
    dZ = S * (d_similarity - (d_similarity * S).sum(axis=0, keepdims=True))
    d_raw = dZ / T
    d_temperature = float((dZ * (-raw / (T * T))).sum())
    dD = -d_raw * raw * raw
    d_epsilon = float(dD.sum())
    if not (np.isfinite(d_temperature) and np.isfinite(d_epsilon)):
        raise NumericalError("fuse_backward produced non-finite scalar gradients")

    safe = np.where(D > _DIST_FLOOR, D, 1.0)
    coef = np.where(D > _DIST_FLOOR, dD / safe, 0.0)
    dQ = coef.sum(axis=1)[:, None] * Q - coef @ K

    grads: dict = {"d_temperature": d_temperature, "d_epsilon": d_epsilon}
    if want_param_grads:
        dWs = [np.zeros_like(W) for W in params.weights]
        dbs = [np.zeros_like(b) for b in params.biases]
        d_query_coords = _mlp_param_backward(params, tape.query_acts, dQ, dWs, dbs)
        if key_acts is not None:
            dK = coef.sum(axis=0)[:, None] * K - coef.T @ Q
            _mlp_param_backward(params, key_acts, dK, dWs, dbs)
        grads["d_weights"] = dWs
        grads["d_biases"] = dbs
    else:
        g = dQ
        for li in range(len(params.weights) - 1, -1, -1):
            g = g @ params.weights[li].T
            if li > 0:
                g = g * (1.0 - tape.query_acts[li] ** 2)
        d_query_coords = g
    if not np.all(np.isfinite(d_query_coords)):
        raise NumericalError("fuse_backward produced non-finite coordinate gradients")
    grads["d_query_coords"] = d_query_coords
    return grads


def save_net(params: NetParams, path) -> None:
    """Serialize to JSON: architecture descriptor plus flat arrays."""
    doc = {
        "architecture": {
            "layer_sizes": list(params.layer_sizes),
            "hidden_activation": "tanh",
            "output_activation": "linear",
        },
        "temperature": params.temperature,
        "distance_epsilon": params.distance_epsilon,
        "seed_lineage": params.seed_lineage,
        "weights": [W.ravel().tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_net(path) -> NetParams:
    """Load params written by :func:`save_net`; validates shapes."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ArtifactError(f"network artifact missing: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"network artifact unreadable: {path}: {exc}") from exc
    try:
        sizes = [int(s) for s in doc["architecture"]["layer_sizes"]]
        weights = []
        biases = []
        for li, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            W = np.asarray(doc["weights"][li], dtype=float).reshape(fan_in, fan_out)
            b = np.asarray(doc["biases"][li], dtype=float)
            if b.shape != (fan_out,):
                raise ValueError(f"bias {li} has shape {b.shape}")
            weights.append(W)
            biases.append(b)
        return NetParams(
            weights=weights,
            biases=biases,
            temperature=float(doc["temperature"]),
            distance_epsilon=float(doc["distance_epsilon"]),
            seed_lineage=dict(doc.get("seed_lineage", {})),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ArtifactError(f"network artifact inconsistent: {path}: {exc}") from exc
