"""Config schema: file loading, validation, and builders."""

import json

import numpy as np
import pytest

from gflownets import (
    BitSequence,
    ConfigError,
    EdgeFlowPolicy,
    ExperimentConfig,
    HyperGrid,
    MlpPolicy,
    TabularPolicy,
    build_env,
    build_policy,
    config_from_dict,
    config_to_dict,
    load_config,
)


def test_defaults_validate_and_roundtrip():
    config = ExperimentConfig().validate()
    data = config_to_dict(config)
    again = config_from_dict(data)
    assert again == config
    assert isinstance(data["params"]["hidden"], list)  # file-friendly form
    assert again.params.hidden == (256, 256)


def test_toml_loading(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        """
        seed = 7
        out_dir = "runs/demo"

        [env]
        kind = "hypergrid"
        height = 16
        r0 = 1e-4
        r1 = 1.0
        r2 = 3.0

        [objective]
        kind = "subtb"
        lam = 0.99

        [optimizer]
        learning_rate = 0.005
        batch_size = 16
        total_trajectories = 1600

        [params]
        hidden = [64, 64]
        """
    )
    config = load_config(path)
    assert config.seed == 7
    assert config.out_dir == "runs/demo"
    assert config.env.height == 16
    assert config.env.r2 == 3.0
    assert config.objective.lam == 0.99
    assert config.params.hidden == (64, 64)
    assert config.optimizer.total_trajectories == 1600


def test_json_loading(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "seed": 3,
        "env": {"kind": "bitseq", "n_bits": 16, "token_bits": 4},
        "params": {"kind": "mlp", "hidden": [32]},
        "objective": {"kind": "tb"},
    }))
    config = load_config(path)
    assert config.env.kind == "bitseq"
    assert config.env.token_bits == 4
    assert config.params.hidden == (32,)
    assert config.objective.kind == "tb"


def test_unsupported_or_missing_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    path = tmp_path / "run.yaml"
    path.write_text("seed: 1")
    with pytest.raises(ConfigError):
        load_config(path)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="top-level"):
        config_from_dict({"sed": 3})
    with pytest.raises(ConfigError, match="env"):
        config_from_dict({"env": {"heigth": 8}})
    with pytest.raises(ConfigError, match="table"):
        config_from_dict({"env": 5})


@pytest.mark.parametrize("data", [
    {"env": {"kind": "maze"}},
    {"params": {"kind": "transformer"}},
    {"params": {"backward_policy": "frozen"}},
    {"params": {"hidden": [0]}},
    {"objective": {"kind": "vi"}},
    {"objective": {"lam": 0.0}},
    {"objective": {"l_max": 0}},
    {"objective": {"scope": "global"}},
    {"objective": {"fm_epsilon": -1.0}},
    {"exploration": {"epsilon": 1.5}},
    {"exploration": {"temperature": 0.0}},
    {"optimizer": {"learning_rate": 0.0}},
    {"optimizer": {"z_lr_multiplier": 0.0}},
    {"optimizer": {"batch_size": 0}},
    {"optimizer": {"total_trajectories": -1}},
    {"optimizer": {"batch_size": 7, "total_trajectories": 100}},
    {"eval": {"window": 0}},
    {"eval": {"interval": 0}},
    {"eval": {"checkpoint_interval": -1}},
    {"eval": {"test_set_size": 1}},
    {"diagnostics": {"interval": 0}},
    {"diagnostics": {"batch": 48}},
    {"diagnostics": {"flow_sources": ["learned", "psychic"]}},
])
def test_invalid_blocks_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_objective_parameterization_cross_checks():
    with pytest.raises(ConfigError, match="edge"):
        config_from_dict({"objective": {"kind": "fm"}, "params": {"kind": "tabular"}})
    with pytest.raises(ConfigError, match="fm"):
        config_from_dict({"objective": {"kind": "tb"}, "params": {"kind": "edge"}})
    ok = config_from_dict({"objective": {"kind": "fm"}, "params": {"kind": "edge"}})
    assert ok.objective.kind == "fm"


def test_build_env_dispatch():
    grid = build_env(config_from_dict({"env": {
        "kind": "hypergrid", "height": 16, "r0": 1e-4, "r1": 1.0, "r2": 3.0,
    }}).env)
    assert grid == HyperGrid(16, 2, 1e-4, 1.0, 3.0)
    seq = build_env(config_from_dict({"env": {
        "kind": "bitseq", "n_bits": 12, "token_bits": 3, "n_modes": 2,
    }}).env)
    assert seq == BitSequence(n_bits=12, token_bits=3, n_modes=2)


def test_build_policy_dispatch():
    config = config_from_dict({"env": {"height": 4}})
    env = build_env(config.env)
    assert isinstance(build_policy(config, env), TabularPolicy)

    mlp_config = config_from_dict({
        "env": {"height": 4},
        "params": {"kind": "mlp", "hidden": [8], "backward_policy": "uniform"},
    })
    mlp = build_policy(mlp_config, env)
    assert isinstance(mlp, MlpPolicy)
    assert mlp.uniform_pb

    edge_config = config_from_dict({
        "env": {"height": 4},
        "params": {"kind": "edge"}, "objective": {"kind": "fm"},
    })
    assert isinstance(build_policy(edge_config, env), EdgeFlowPolicy)


def test_mlp_policy_initialization_is_seeded():
    config = config_from_dict({
        "seed": 11,
        "env": {"height": 4},
        "params": {"kind": "mlp", "hidden": [8]},
    })
    env = build_env(config.env)
    a = build_policy(config, env)
    b = build_policy(config, env)
    for (name, pa), pb in zip(a.parameters().items(), b.parameters().values()):
        np.testing.assert_array_equal(pa.data, pb.data, err_msg=name)
