"""
Tests for run configuration parsing and validation
"""
import copy
import json

import pytest

from config import Config
from models.run_config import parse_config, config_schema, canonical_config, ConfigError
from storage.repositories import config_hash

BASE = {
    "experiment": "simulate",
    "seed": 7,
    "model": {
        "activation": "tanh",
        "data_atoms": [{"z": [1.0], "y": 1.0, "p": 0.5}, {"z": [-1.0], "y": -1.0, "p": 0.5}],
        "weight_atoms": [{"c": 0.5, "w": [0.5], "p": 0.7}, {"c": -0.2, "w": [0.1], "p": 0.3}],
    },
    "sim": {"n": 64, "T": 1.0},
}


def document(**changes):
    doc = copy.deepcopy(BASE)
    for path, value in changes.items():
        node = doc
        keys = path.split("__")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value
    return json.dumps(doc)


class TestParsing:

    def test_minimal_config(self):
        cfg = parse_config(document())
        assert cfg.seed == 7
        assert cfg.d_in == 1
        assert cfg.meanfield.dt == Config.DEFAULT_DT
        assert cfg.lab.method == "tilted"

    def test_missing_seed_defaults_to_zero(self):
        doc = copy.deepcopy(BASE)
        del doc["seed"]
        assert parse_config(json.dumps(doc)).seed == 0

    def test_domain_values(self):
        cfg = parse_config(document())
        sim = cfg.sim_config()
        assert sim.n_prime == 64 and sim.eps == 1.0 / 64
        assert cfg.sim_config(n=8).n == 8
        act = cfg.activation()
        assert act.kind == "tanh" and act.c_sigma == 1.0 and act.l_sigma > 1.0
        nu = cfg.weight_atom_set()
        assert nu.atoms.tolist() == [[0.5, 0.5], [-0.2, 0.1]]
        assert cfg.data_atom_set().size == 2

    def test_functional_defaults_to_horizon(self):
        cfg = parse_config(document(sim__T=0.75))
        f = cfg.functional_spec()
        assert f.kind == "tanh_marginal" and f.t == 0.75

    def test_event_threshold_from_reference(self):
        cfg = parse_config(document())
        assert cfg.event_spec(0.3).threshold == pytest.approx(0.4)
        below = parse_config(document(event__direction="leq"))
        assert below.event_spec(0.3).threshold == pytest.approx(0.2)
        with pytest.raises(ValueError):
            cfg.event_spec()

    def test_explicit_threshold(self):
        cfg = parse_config(document(event__threshold=0.9))
        assert cfg.event_spec(0.1).threshold == 0.9

    def test_optimizer_follows_solver_settings(self):
        cfg = parse_config(document(tilt__blocks=4, meanfield__dt=0.0625))
        opt = cfg.optimizer_config()
        assert opt.blocks == 4 and opt.dt == 0.0625


class TestValidationErrors:

    def test_malformed_json(self):
        with pytest.raises(ConfigError, match="<root>"):
            parse_config("{not json")

    def test_unbounded_activation(self):
        with pytest.raises(ConfigError, match=r"model\.activation.*\(CONT\)"):
            parse_config(document(model__activation="relu"))

    def test_unnormalized_atoms(self):
        doc = copy.deepcopy(BASE)
        doc["model"]["data_atoms"][0]["p"] = 0.6
        with pytest.raises(ConfigError, match=r"model\.data_atoms.*normalization"):
            parse_config(json.dumps(doc))

    def test_dimension_mismatch(self):
        doc = copy.deepcopy(BASE)
        doc["model"]["weight_atoms"][0]["w"] = [0.5, 0.1]
        with pytest.raises(ConfigError, match="dimension"):
            parse_config(json.dumps(doc))

    def test_step_above_maximum(self):
        with pytest.raises(ConfigError, match=r"meanfield\.dt"):
            parse_config(document(meanfield__dt=0.5))

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="experiment"):
            parse_config(document(experiment="optimize"))

    def test_decreasing_n_list(self):
        with pytest.raises(ConfigError, match=r"lab\.n_list"):
            parse_config(document(lab__n_list=[256, 64]))

    def test_functional_time_outside_horizon(self):
        with pytest.raises(ConfigError, match="outside"):
            parse_config(document(functional__t=2.0))

    def test_all_errors_reported(self):
        with pytest.raises(ConfigError) as err:
            parse_config(document(sim__n=0, meanfield__dt=0.5))
        assert "sim.n" in str(err.value) and "meanfield.dt" in str(err.value)


class TestCanonicalForm:

    def test_schema_is_json(self):
        schema = json.loads(config_schema())
        assert "properties" in schema and "model" in schema["properties"]

    def test_hash_ignores_output_dir(self):
        a = parse_config(document(output_dir="out/a"))
        b = parse_config(document(output_dir="out/b"))
        assert config_hash(canonical_config(a)) == config_hash(canonical_config(b))

    def test_hash_tracks_seed(self):
        a = parse_config(document())
        b = parse_config(document(seed=8))
        assert config_hash(canonical_config(a)) != config_hash(canonical_config(b))
        assert len(config_hash(canonical_config(a))) == 64
