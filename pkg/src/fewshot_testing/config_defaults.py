"""Default configuration tree. Import-light so the CLI can load it before
numpy; keep this module free of third-party imports."""

DEFAULT_CONFIG = {
    "seed": 42,
    "space": {
        "r_steps": 91,
        "rdot_steps": 61,
        "exposure": {
            "components": [
                {"weight": 0.7, "mean_r": 40.0, "mean_rdot": 0.0, "std_r": 12.0, "std_rdot": 3.0},
                {"weight": 0.3, "mean_r": 25.0, "mean_rdot": -2.0, "std_r": 8.0, "std_rdot": 3.0},
            ]
        },
    },
    "sim": {
        "av_initial_speed_mps": 20.0,
        "bv_speed_policy": "hold",
        "horizon_s": 10.0,
        "dt_s": 0.1,
    },
    "models": {
        "shared": {
            "desired_speed": 25.0,
            "max_accel": 2.0,
            "min_gap": 2.0,
            "accel_exponent": 4.0,
        },
        "surrogates": [
            {"name": "SM-1", "time_headway": 0.6, "comfortable_decel": 3.5},
            {"name": "SM-2", "time_headway": 1.0, "comfortable_decel": 3.0},
            {"name": "SM-3", "time_headway": 1.5, "comfortable_decel": 2.5},
            {"name": "SM-4", "time_headway": 2.0, "comfortable_decel": 2.0},
        ],
        "subjects": [
            {"name": "AV-1", "time_headway": 0.8, "comfortable_decel": 3.25},
            {"name": "AV-2", "time_headway": 1.2, "comfortable_decel": 2.75},
            {"name": "AV-3", "time_headway": 1.7, "comfortable_decel": 2.3},
        ],
    },
    "net": {
        "layer_sizes": [2, 64, 64, 16],
        "temperature": 1.0,
        "distance_epsilon": 1e-3,
    },
    "train": {
        "n_train": 10,
        "k_clusters": None,
        "epochs": 200,
        "batches_per_epoch": 10,
        "learning_rate": 0.05,
        "momentum": 0.9,
        "outcome_feature_scale": 1.0,
    },
    "optimize": {
        "n": 10,
        "steps": 300,
        "learning_rate": 0.02,
        "restarts": 8,
        "mismatch_weight": 1.0,
    },
    "evaluate": {
        "trials": 1000,
        "n_values": [5, 10, 20],
        "methods": ["NDE", "uniform", "FST-with-restarts"],
        "fst_restarts": 4,
        "fst_steps": 300,
        "fst_learning_rate": 0.02,
        "fst_mismatch_weight": 1.0,
        "bound": {"enabled": True, "n": 10, "members": 1000, "restarts": 8},
        "ablation": {"enabled": True, "n": 10, "trials": 100},
        "cross_n": {
            "enabled": True,
            "train_ns": [5, 10, 20],
            "test_ns": [5, 10, 20],
            "trials": 100,
        },
    },
}
