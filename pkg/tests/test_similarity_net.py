"""Similarity network: initialization, fusion invariants, exact gradients,
attainability of any bracketed target, and JSON round trips."""

import numpy as np
import pytest

from fewshot_testing.errors import ArtifactError, ConfigError, NumericalError
from fewshot_testing.similarity_net import (
    NetConfig,
    NetParams,
    encode,
    fuse,
    fuse_backward,
    fused_mean,
    init_params,
    load_net,
    save_net,
)


def _small_problem(seed=0, n=3, cells=16, temperature=1.3, epsilon=2e-3):
    """A tiny fusion instance with non-default hyperparameters (gradient
    checks at temperature 1 would miss a missing 1/T factor)."""
    rng = np.random.default_rng(seed)
    config = NetConfig(layer_sizes=(2, 8, 6), temperature=temperature,
                       distance_epsilon=epsilon)
    params = init_params(config, seed=seed + 1000)
    queries = rng.uniform(0.05, 0.95, size=(n, 2))
    keys_coords = rng.uniform(0.0, 1.0, size=(cells, 2))
    values = rng.dirichlet(np.ones(cells))
    return params, queries, keys_coords, values


def test_net_config_validation():
    with pytest.raises(ConfigError):
        NetConfig(layer_sizes=(2,))
    with pytest.raises(ConfigError):
        NetConfig(layer_sizes=(3, 8, 4))
    with pytest.raises(ConfigError):
        NetConfig(temperature=0.0)
    with pytest.raises(ConfigError):
        NetConfig(distance_epsilon=-1e-3)


def test_init_is_seeded_and_shaped():
    config = NetConfig()
    a = init_params(config, seed=5)
    b = init_params(config, seed=5)
    c = init_params(config, seed=6)
    assert a.layer_sizes == (2, 64, 64, 16)
    for Wa, Wb, Wc, bias in zip(a.weights, b.weights, c.weights, a.biases):
        np.testing.assert_array_equal(Wa, Wb)
        assert not np.array_equal(Wa, Wc)
        assert np.all(bias == 0.0)
    assert a.seed_lineage["init_seed"] == 5
    # Xavier-uniform bound per layer
    for W, fan_in, fan_out in zip(a.weights, (2, 64, 64), (64, 64, 16)):
        assert np.abs(W).max() <= np.sqrt(6.0 / (fan_in + fan_out))


def test_similarity_is_column_stochastic():
    params, queries, key_coords, values = _small_problem()
    tape = fuse(params, queries, encode(params, key_coords), values)
    np.testing.assert_allclose(tape.similarity.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(tape.similarity > 0.0)
    # weights inherit the total mass of the values
    assert float(tape.weights.sum()) == pytest.approx(float(values.sum()), abs=1e-12)


def test_fused_mean_stays_in_outcome_hull():
    params, queries, key_coords, values = _small_problem(seed=3)
    tape = fuse(params, queries, encode(params, key_coords), values)
    rng = np.random.default_rng(9)
    outcomes = rng.random(queries.shape[0])
    mu = float(fused_mean(outcomes, tape.weights))
    assert outcomes.min() - 1e-12 <= mu <= outcomes.max() + 1e-12


def test_query_permutation_equivariance():
    params, queries, key_coords, values = _small_problem(seed=4, n=5)
    keys = encode(params, key_coords)
    perm = np.array([3, 0, 4, 1, 2])
    tape = fuse(params, queries, keys, values)
    tape_p = fuse(params, queries[perm], keys, values)
    np.testing.assert_allclose(tape_p.similarity, tape.similarity[perm], atol=1e-14)
    np.testing.assert_allclose(tape_p.weights, tape.weights[perm], atol=1e-14)


def test_two_point_weights_attain_any_bracketed_target():
    """Constructive attainability: with scenarios at the min and max
    outcome, the two-point weights (1-a, a) hit any target between them."""
    rng = np.random.default_rng(123)
    for _ in range(100):
        outcomes = rng.random(6)
        lo, hi = float(outcomes.min()), float(outcomes.max())
        target = rng.uniform(lo, hi)
        if hi == lo:
            continue
        a = (target - lo) / (hi - lo)
        w = np.zeros(6)
        w[int(np.argmin(outcomes))] += 1.0 - a
        w[int(np.argmax(outcomes))] += a
        assert abs(float(outcomes @ w) - target) <= 1e-12


def _fd_check(params, queries, key_coords, values, upstream, step=1e-5):
    """Central finite differences against the analytic backward."""
    keys, key_acts = encode(params, key_coords, with_tape=True)
    tape = fuse(params, queries, keys, values)
    grads = fuse_backward(params, tape, upstream, want_param_grads=True,
                          key_acts=key_acts)

    def loss_with(p, q=queries):
        t = fuse(p, q, encode(p, key_coords), values)
        return float((upstream * t.similarity).sum())

    def rel_err(analytic, numeric):
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)

    worst = 0.0
    # temperature and epsilon
    for attr, got in (("temperature", grads["d_temperature"]),
                      ("distance_epsilon", grads["d_epsilon"])):
        base = getattr(params, attr)
        hi = NetParams([W.copy() for W in params.weights],
                       [b.copy() for b in params.biases],
                       params.temperature, params.distance_epsilon)
        lo = NetParams([W.copy() for W in params.weights],
                       [b.copy() for b in params.biases],
                       params.temperature, params.distance_epsilon)
        setattr(hi, attr, base + step)
        setattr(lo, attr, base - step)
        fd = (loss_with(hi) - loss_with(lo)) / (2 * step)
        worst = max(worst, rel_err(got, fd))
    # a sample of weight entries from each layer (full sweep is slow)
    rng = np.random.default_rng(0)
    for li, W in enumerate(params.weights):
        for _ in range(4):
            i = rng.integers(W.shape[0])
            j = rng.integers(W.shape[1])
            pert = [w.copy() for w in params.weights]
            pert[li][i, j] += step
            hi_p = NetParams(pert, params.biases, params.temperature,
                             params.distance_epsilon)
            pert2 = [w.copy() for w in params.weights]
            pert2[li][i, j] -= step
            lo_p = NetParams(pert2, params.biases, params.temperature,
                             params.distance_epsilon)
            fd = (loss_with(hi_p) - loss_with(lo_p)) / (2 * step)
            worst = max(worst, rel_err(grads["d_weights"][li][i, j], fd))
    # biases
    for li, b in enumerate(params.biases):
        j = rng.integers(b.shape[0])
        pert = [x.copy() for x in params.biases]
        pert[li][j] += step
        hi_p = NetParams(params.weights, pert, params.temperature,
                         params.distance_epsilon)
        pert2 = [x.copy() for x in params.biases]
        pert2[li][j] -= step
        lo_p = NetParams(params.weights, pert2, params.temperature,
                         params.distance_epsilon)
        fd = (loss_with(hi_p) - loss_with(lo_p)) / (2 * step)
        worst = max(worst, rel_err(grads["d_biases"][li][j], fd))
    # query coordinates
    for qi in range(queries.shape[0]):
        for d in range(2):
            hi_q = queries.copy()
            hi_q[qi, d] += step
            lo_q = queries.copy()
            lo_q[qi, d] -= step
            fd = (loss_with(params, hi_q) - loss_with(params, lo_q)) / (2 * step)
            worst = max(worst, rel_err(grads["d_query_coords"][qi, d], fd))
    return worst


def test_gradients_match_finite_differences():
    """20 random instances across temperatures and epsilons; every gradient
    block within 1e-4 relative error of central differences."""
    rng = np.random.default_rng(2024)
    for trial in range(20):
        temperature = float(rng.uniform(0.5, 2.5))
        epsilon = float(rng.uniform(5e-4, 5e-3))
        params, queries, key_coords, values = _small_problem(
            seed=trial, temperature=temperature, epsilon=epsilon
        )
        upstream = rng.standard_normal((queries.shape[0], key_coords.shape[0]))
        worst = _fd_check(params, queries, key_coords, values, upstream)
        assert worst < 1e-4, (trial, worst)


def test_zero_upstream_gives_zero_gradients():
    params, queries, key_coords, values = _small_problem(seed=11)
    keys, key_acts = encode(params, key_coords, with_tape=True)
    tape = fuse(params, queries, keys, values)
    grads = fuse_backward(params, tape, np.zeros_like(tape.similarity),
                          want_param_grads=True, key_acts=key_acts)
    assert grads["d_temperature"] == 0.0
    assert grads["d_epsilon"] == 0.0
    assert np.all(grads["d_query_coords"] == 0.0)
    for W in grads["d_weights"]:
        assert np.all(W == 0.0)


def test_coincident_query_and_key_is_finite():
    """A query exactly on a key makes the embedded distance 0; the forward
    stays finite (epsilon floors the reciprocal) and the backward zeroes
    the undefined direction instead of dividing by zero."""
    params, queries, key_coords, values = _small_problem(seed=12)
    key_coords[0] = queries[0]
    keys = encode(params, key_coords)
    tape = fuse(params, queries, keys, values)
    assert tape.distances[0, 0] <= 1e-12
    assert np.isfinite(tape.similarity).all()
    grads = fuse_backward(params, tape, np.ones_like(tape.similarity))
    assert np.isfinite(grads["d_query_coords"]).all()


def test_save_load_roundtrip(tmp_path):
    config = NetConfig(temperature=1.7, distance_epsilon=3e-3)
    params = init_params(config, seed=42, seed_lineage={"note": "roundtrip"})
    path = tmp_path / "net.json"
    save_net(params, path)
    again = load_net(path)
    assert again.layer_sizes == params.layer_sizes
    assert again.temperature == params.temperature
    assert again.distance_epsilon == params.distance_epsilon
    assert again.seed_lineage["note"] == "roundtrip"
    for Wa, Wb in zip(again.weights, params.weights):
        np.testing.assert_array_equal(Wa, Wb)
    # byte-identical rewrite
    path2 = tmp_path / "net2.json"
    save_net(again, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_net_error_paths(tmp_path):
    with pytest.raises(ArtifactError):
        load_net(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ArtifactError):
        load_net(bad)
    # inconsistent: weight payload shorter than the architecture demands
    params = init_params(NetConfig(), seed=1)
    path = tmp_path / "net.json"
    save_net(params, path)
    import json

    doc = json.loads(path.read_text())
    doc["weights"][0] = doc["weights"][0][:-5]
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError):
        load_net(path)


def test_fuse_shape_validation():
    params, queries, key_coords, values = _small_problem()
    keys = encode(params, key_coords)
    with pytest.raises(ConfigError):
        fuse(params, queries, keys, values[:-1])
    with pytest.raises(ConfigError):
        encode(params, np.ones((3, 5)))
