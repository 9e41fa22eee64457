"""Training the similarity network against the surrogate vertex models.

Grid cells are clustered by normalized coordinates plus per-vertex crash
outcomes, so clusters separate behaviorally distinct regions. Each training
batch samples one candidate test set from the clusters, fuses it over the
exposure, and takes a subgradient step on the worst vertex's fused-estimate
error (ties pick the lowest vertex index). The certified loss this package
reports everywhere is exactly this worst-vertex error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .scenario_space import ScenarioGrid, normalize_coords
from .seeding import child_seed, make_rng
from .similarity_net import NetConfig, NetParams, encode, fuse, fuse_backward, init_params

__all__ = [
    "TrainConfig",
    "TrainResult",
    "cluster_features",
    "kmeans",
    "sample_fst_set",
    "certified_loss",
    "train",
    "write_loss_csv",
    "write_clusters_csv",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the critical sampler and the training loop."""

    n_train: int = 10
    k_clusters: int | None = None  # None means n_train
    epochs: int = 200
    batches_per_epoch: int = 10
    learning_rate: float = 0.05
    momentum: float = 0.9
    outcome_feature_scale: float = 1.0
    kmeans_max_iters: int = 100

    def __post_init__(self) -> None:
        if self.n_train < 1:
            raise ConfigError("n_train must be at least 1")
        if self.k_clusters is not None and self.k_clusters < 1:
            raise ConfigError("k_clusters must be at least 1")
        if self.epochs < 1 or self.batches_per_epoch < 1:
            raise ConfigError("epochs and batches_per_epoch must be at least 1")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.outcome_feature_scale <= 0.0:
            raise ConfigError("outcome_feature_scale must be positive")
        if self.kmeans_max_iters < 1:
            raise ConfigError("kmeans_max_iters must be at least 1")

    @property
    def k(self) -> int:
        return self.n_train if self.k_clusters is None else self.k_clusters


@dataclass
class TrainResult:
    """Trained network plus the clustering it samples from."""

    params: NetParams
    assignments: np.ndarray
    centers: np.ndarray
    loss_history: list[float] = field(default_factory=list)


def cluster_features(
    grid: ScenarioGrid, vertex_outcomes: np.ndarray, outcome_scale: float = 1.0
) -> np.ndarray:
    """Per-cell feature rows: normalized coords then scaled vertex outcomes."""
    vertex_outcomes = np.atleast_2d(np.asarray(vertex_outcomes, dtype=float))
    if vertex_outcomes.shape[1] != grid.size:
        raise ConfigError("vertex outcomes do not match the grid")
    u_r, u_rdot = normalize_coords(grid.r, grid.rdot)
    return np.column_stack([u_r, u_rdot, outcome_scale * vertex_outcomes.T])


def kmeans(
    X: np.ndarray, k: int, rng: np.random.Generator, max_iters: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is repaired by reseeding it at the farthest member of
    the currently largest cluster. Iteration stops when assignments stop
    changing or after ``max_iters`` rounds.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all points coincide with picked centers; any point works
            centers[j] = X[rng.integers(n)]
            continue
        centers[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    assign = None
    for _ in range(max_iters):
        dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        for j in range(k):
            if not (new_assign == j).any():
                sizes = np.bincount(new_assign, minlength=k)
                big = int(sizes.argmax())
                members = np.where(new_assign == big)[0]
                far = members[dist[members, big].argmax()]
                new_assign[far] = j
                centers[j] = X[far]
        if assign is not None and (new_assign == assign).all():
            break
        assign = new_assign
        for j in range(k):
            centers[j] = X[assign == j].mean(axis=0)
    return assign, centers


def sample_fst_set(
    assignments: np.ndarray, k: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Sample ``n`` cell indices, one uniform member per chosen cluster.

    With ``n <= k`` the clusters are distinct (uniform without replacement);
    otherwise cluster ``i % k`` hosts the ``i``-th pick.
    """
    if n < 1:
        raise ConfigError("set size must be at least 1")
    if n <= k:
        chosen = rng.choice(k, size=n, replace=False)
    else:
        chosen = np.arange(n) % k
    cells = np.empty(n, dtype=int)
    for i, c in enumerate(chosen):
        members = np.where(assignments == c)[0]
        cells[i] = members[rng.integers(members.size)]
    return cells


def certified_loss(fused_estimates: np.ndarray, vertex_rates: np.ndarray) -> tuple[float, int]:
    """Worst-vertex absolute error and its argmax index (ties -> lowest)."""
    errors = np.abs(np.asarray(fused_estimates) - np.asarray(vertex_rates))
    a = int(errors.argmax())
    return float(errors[a]), a


def train(
    grid: ScenarioGrid,
    vertex_outcomes: np.ndarray,
    vertex_rates: np.ndarray,
    net_config: NetConfig,
    train_config: TrainConfig,
    master_seed: int,
) -> TrainResult:
    """Cluster the grid, then fit the network by momentum subgradient descent.

    Per batch: sample a candidate set of ``n_train`` cells, fuse exposure
    over the learned similarity, and descend the worst vertex's absolute
    fused-rate error. Keys are re-embedded every batch because the same
    network encodes both sides. Loss history records per-epoch batch means.
    """
    vertex_outcomes = np.atleast_2d(np.asarray(vertex_outcomes, dtype=float))
    vertex_rates = np.asarray(vertex_rates, dtype=float)
    if vertex_outcomes.shape[0] != vertex_rates.shape[0]:
        raise ConfigError("vertex outcomes and rates disagree on vertex count")
    if vertex_outcomes.shape[1] != grid.size:
        raise ConfigError("vertex outcomes do not match the grid")

    X = cluster_features(grid, vertex_outcomes, train_config.outcome_feature_scale)
    assignments, centers = kmeans(
        X, train_config.k, make_rng(master_seed, "train/cluster"),
        max_iters=train_config.kmeans_max_iters,
    )

    init_seed = child_seed(master_seed, "train/init")
    params = init_params(
        NetConfig(
            layer_sizes=net_config.layer_sizes,
            temperature=net_config.temperature,
            distance_epsilon=net_config.distance_epsilon,
        ),
        seed=init_seed,
        seed_lineage={"master_seed": int(master_seed), "init_label": "train/init"},
    )
    vel_W = [np.zeros_like(W) for W in params.weights]
    vel_b = [np.zeros_like(b) for b in params.biases]
    batch_rng = make_rng(master_seed, "train/batches")

    u_r, u_rdot = normalize_coords(grid.r, grid.rdot)
    all_coords = np.column_stack([u_r, u_rdot])
    p = grid.exposure
    lr = train_config.learning_rate
    mom = train_config.momentum

    history = []
    for _ in range(train_config.epochs):
        batch_losses = []
        for _ in range(train_config.batches_per_epoch):
            cells = sample_fst_set(
                assignments, train_config.k, train_config.n_train, batch_rng
            )
            key_features, key_acts = encode(params, all_coords, with_tape=True)
            tape = fuse(params, all_coords[cells], key_features, p)
            outcomes = vertex_outcomes[:, cells]
            fused = outcomes @ tape.weights
            loss, a = certified_loss(fused, vertex_rates)
            if not np.isfinite(loss):
                raise NumericalError("training loss is not finite")
            batch_losses.append(loss)
            sign = np.sign(fused[a] - vertex_rates[a])
            dS = sign * outcomes[a][:, None] * p[None, :]
            grads = fuse_backward(params, tape, dS, want_param_grads=True, key_acts=key_acts)
            for li in range(len(params.weights)):
                vel_W[li] = mom * vel_W[li] - lr * grads["d_weights"][li]
                vel_b[li] = mom * vel_b[li] - lr * grads["d_biases"][li]
                params.weights[li] = params.weights[li] + vel_W[li]
                params.biases[li] = params.biases[li] + vel_b[li]
        history.append(float(np.mean(batch_losses)))
    return TrainResult(
        params=params, assignments=assignments, centers=centers, loss_history=history
    )


def write_loss_csv(history: list[float], path) -> None:
    """Per-epoch mean batch loss as ``epoch,mean_loss`` rows."""
    lines = ["epoch,mean_loss"]
    for ep, loss in enumerate(history):
        lines.append(f"{ep},{float(loss)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_clusters_csv(grid: ScenarioGrid, assignments: np.ndarray, path) -> None:
    """Per-cell cluster labels as ``r,rdot,cluster`` rows in flat order."""
    lines = ["r,rdot,cluster"]
    for a, b, c in zip(grid.r, grid.rdot, assignments):
        lines.append(f"{float(a)!r},{float(b)!r},{int(c)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
