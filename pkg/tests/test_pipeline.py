"""Experiment orchestration: split carving, full runs, report contents."""

from __future__ import annotations

import json

import numpy as np
import pytest

from tabpoison.attack import AttackConfig
from tabpoison.data import SplitSpec, round_half_up, split
from tabpoison.datagen import gaussian_blob_dataset
from tabpoison.errors import ConfigError
from tabpoison.models import Forest, Mlp
from tabpoison.pipeline import (
    ExperimentSpec,
    MlpParams,
    carve_defense_split,
    config_digest,
    run_blackbox_transfer,
    run_experiment,
)


def small_run(seed=0, n=600, deterministic=True, victim_kind="mlp", frac=1.0):
    ds = gaussian_blob_dataset(n, seed=seed)
    train, test = split(ds, SplitSpec(test_fraction=0.25, seed=seed))
    spec = ExperimentSpec(
        attack=AttackConfig(target_label=1, epsilon=0.05, mu=1.0, seed=seed,
                            max_iters=200, attacker_data_fraction=frac),
        surrogate=MlpParams(hidden=(16,), epochs=8),
        victim_kind=victim_kind,
        victim_mlp=MlpParams(hidden=(16,), epochs=8),
        deterministic=deterministic,
    )
    return train, test, spec


class TestCarveDefenseSplit:
    def test_partition_of_test_set(self):
        ds = gaussian_blob_dataset(400, seed=0)
        _, test = split(ds, SplitSpec(test_fraction=0.5, seed=0))
        val, ev = carve_defense_split(test, attack_seed=0, defense_val_fraction=0.25)
        assert val.n_rows + ev.n_rows == test.n_rows
        assert val.n_rows == round_half_up(0.25 * test.n_rows)

    def test_slices_are_disjoint_rows_of_test(self):
        ds = gaussian_blob_dataset(400, seed=1)
        _, test = split(ds, SplitSpec(test_fraction=0.5, seed=1))
        val, ev = carve_defense_split(test, attack_seed=3, defense_val_fraction=0.25)
        # every (num_0, num_1) pair appears in the union with its multiplicity
        def rows(d):
            return sorted(zip(d.columns[0].tolist(), d.columns[1].tolist(), d.labels.tolist()))
        assert sorted(rows(val) + rows(ev)) == rows(test)

    def test_deterministic_in_attack_seed(self):
        ds = gaussian_blob_dataset(300, seed=2)
        _, test = split(ds, SplitSpec(test_fraction=0.5, seed=2))
        a = carve_defense_split(test, attack_seed=5, defense_val_fraction=0.25)
        b = carve_defense_split(test, attack_seed=5, defense_val_fraction=0.25)
        c = carve_defense_split(test, attack_seed=6, defense_val_fraction=0.25)
        assert a[0].fingerprint() == b[0].fingerprint()
        assert a[0].fingerprint() != c[0].fingerprint()

    def test_stratified(self):
        ds = gaussian_blob_dataset(1000, seed=0)
        _, test = split(ds, SplitSpec(test_fraction=0.5, seed=0))
        val, _ = carve_defense_split(test, attack_seed=0, defense_val_fraction=0.3)
        rate_test = test.labels.mean()
        rate_val = val.labels.mean()
        assert abs(rate_test - rate_val) < 0.02


class TestRunExperiment:
    def test_counts_and_artifacts(self):
        train, test, spec = small_run()
        res = run_experiment(train, test, spec)
        assert res.n_train == train.n_rows
        assert res.n_test == test.n_rows
        assert len(res.plan.indices) == round_half_up(0.05 * train.n_rows)
        assert res.released.n_rows == train.n_rows
        assert not res.released.encoded
        assert res.trigger.delta.shape == (4,)
        assert res.n_eval == len(res.y_eval)
        assert res.X_eval.shape == res.X_eval_triggered.shape

    def test_poisoned_rows_carry_target_label(self):
        train, test, spec = small_run()
        res = run_experiment(train, test, spec)
        assert (res.released.labels[res.plan.indices] == 1).all()

    def test_rates_are_consistent(self):
        train, test, spec = small_run()
        res = run_experiment(train, test, spec)
        for rate in (res.ba, res.cda, res.asr, res.asr_all):
            assert 0.0 <= rate.value <= 1.0
        assert res.ba.denominator == res.n_eval
        assert res.asr.denominator == int((res.y_eval != 1).sum())
        assert res.asr_all.denominator == res.n_eval

    def test_report_dict_is_json_ready(self):
        train, test, spec = small_run()
        res = run_experiment(train, test, spec)
        report = res.report_dict()
        text = json.dumps(report, sort_keys=True)
        parsed = json.loads(text)
        assert parsed["victim_kind"] == "mlp"
        assert parsed["epsilon"] == 0.05
        assert parsed["counts"]["n_poisoned"] == len(res.plan.indices)
        assert parsed["timings"] is None

    def test_deterministic_reruns_match(self):
        train, test, spec = small_run()
        a = run_experiment(train, test, spec)
        b = run_experiment(train, test, spec)
        assert a.report_dict() == b.report_dict()
        assert np.array_equal(a.trigger.delta, b.trigger.delta)
        assert a.released.fingerprint() == b.released.fingerprint()

    def test_timings_present_when_not_deterministic(self):
        train, test, spec = small_run(deterministic=False)
        res = run_experiment(train, test, spec)
        assert set(res.timings) == {"surrogate_fit", "trigger_opt",
                                    "poison_release", "victim_fit", "evaluation"}
        assert all(t >= 0.0 for t in res.timings.values())

    def test_forest_victim(self):
        train, test, spec = small_run(victim_kind="forest")
        res = run_experiment(train, test, spec)
        assert isinstance(res.victim, Forest)
        assert isinstance(res.surrogate, Mlp)
        assert res.report_dict()["victim_kind"] == "forest"

    def test_blackbox_transfer_forces_forest(self):
        train, test, spec = small_run()
        res = run_blackbox_transfer(train, test, spec)
        assert isinstance(res.victim, Forest)

    def test_partial_view_still_runs(self):
        train, test, spec = small_run(frac=0.3)
        res = run_experiment(train, test, spec)
        # the plan still covers the full training set
        assert len(res.plan.indices) == round_half_up(0.05 * train.n_rows)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            ExperimentSpec(attack=AttackConfig(target_label=0), victim_kind="svm")
        with pytest.raises(ConfigError):
            ExperimentSpec(attack=AttackConfig(target_label=0), defense_val_fraction=0.0)


class TestConfigDigest:
    def test_stable_under_key_order(self):
        assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})

    def test_sensitive_to_values(self):
        assert config_digest({"a": 1}) != config_digest({"a": 2})

    def test_hex_sha256(self):
        digest = config_digest({})
        assert len(digest) == 64
        int(digest, 16)
