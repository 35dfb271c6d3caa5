from dataclasses import replace

import numpy as np
import pytest

from sgnet.encoder import ModelConfig
from sgnet.synthetic import CLS, collate, example_mask, gen_synthetic, split_subwords
from sgnet.training import (
    Adam,
    RunConfig,
    build_model,
    degrade_sweep,
    final_accuracy,
    split_config,
    train,
)
from sgnet.trees import validate_tree

CFG = ModelConfig(seed=0)


class TestGenSynthetic:
    def test_empty(self):
        assert gen_synthetic("head-predict", 0, (2, 12), 0) == []

    def test_trees_validate_and_sizes(self):
        for ex in gen_synthetic("classify", 300, (2, 12), 1):
            assert validate_tree(ex.tree) is None
            assert 2 <= len(ex.tree.tokens) <= 12
            assert len(ex.token_ids) == len(ex.tree.tokens) + 1 and ex.token_ids[0] == CLS

    def test_head_labels_match_tree(self):
        for ex in gen_synthetic("head-predict", 10_000, (1, 12), 2):
            assert ex.target[0] == -1
            assert ex.target[1:].tolist() == ex.tree.heads

    def test_deterministic(self):
        a = gen_synthetic("span", 50, (2, 12), 3)
        b = gen_synthetic("span", 50, (2, 12), 3)
        assert [x.tree for x in a] == [x.tree for x in b]
        assert all(np.array_equal(x.token_ids, y.token_ids) for x, y in zip(a, b))

    def test_span_targets_are_deep_tokens(self):
        for ex in gen_synthetic("span", 200, (2, 12), 4):
            if ex.target is not None:
                k, l = ex.target
                assert k == l and 1 <= k <= len(ex.tree.tokens)

    def test_size_checks(self):
        with pytest.raises(ValueError):
            gen_synthetic("head-predict", 1, (2, 80), 0, max_len=64)
        with pytest.raises(ValueError):
            gen_synthetic("parse", 1, (2, 5), 0)


class TestCollate:
    def test_padding_rows_are_unit_rows(self):
        exs = gen_synthetic("head-predict", 2, (2, 6), 5)
        batch = collate(exs, [example_mask(e.tree) for e in exs], "head-predict")
        n = batch.ids.shape[1]
        for b, ex in enumerate(exs):
            m = len(ex.token_ids)
            assert np.array_equal(batch.sdoi[b, :m, :m], example_mask(ex.tree).bits)
            assert np.array_equal(batch.sdoi[b, m:, m:], np.eye(n - m, dtype=bool))
            assert not batch.sdoi[b, m:, :m].any() and not batch.sdoi[b, :m, m:].any()

    def test_split_subwords(self):
        assert split_subwords("credit") == ["cred", "##it"]
        assert split_subwords("It") == ["It"]


class TestConfig:
    def test_split(self):
        model, run = split_config({"seed": 4, "d_model": 16, "steps": 3})
        assert model.seed == 4 and model.d_model == 16 and run.steps == 3

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            split_config({"seed": 0, "bogus": 1})


class TestAdam:
    def test_minimizes_quadratic(self):
        from sgnet import numerics as nx
        from sgnet.numerics import Parameter
        p = {"x": Parameter(np.array([3.0, -2.0]), "x")}
        opt = Adam(p, lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            nx.tsum(nx.mul(p["x"], p["x"])).backward()
            opt.step()
        assert np.abs(p["x"].data).max() < 1e-2

    def test_first_step_moves_by_lr(self):
        from sgnet import numerics as nx
        from sgnet.numerics import Parameter
        p = {"x": Parameter(np.array([1.0, -1.0]), "x")}
        opt = Adam(p, lr=0.01)
        nx.tsum(nx.mul(p["x"], np.array([5.0, 0.5]))).backward()
        opt.step()
        np.testing.assert_allclose(p["x"].data, [0.99, -1.01], rtol=0, atol=1e-9)


class TestTrain:
    def test_zero_steps_keeps_initialization(self):
        run = RunConfig(steps=0, n_eval=16)
        params, records = train(CFG, run)
        init = build_model(CFG, run.task)
        assert all(np.array_equal(params[k].data, init[k].data) for k in init)
        assert [set(r) for r in records] == [{"step", "eval_accuracy"}]

    def test_repeat_runs_are_bit_identical(self):
        run = RunConfig(steps=15, n_eval=32, eval_every=5)
        a, b = [], []
        train(CFG, run, log=a.append)
        train(CFG, run, log=b.append)
        assert a == b and len(a) == 15 + 3

    @pytest.mark.parametrize("task", ["span", "classify"])
    def test_other_tasks_run(self, task):
        _, records = train(CFG, RunConfig(task=task, steps=3, n_eval=16))
        assert 0.0 <= final_accuracy(records) <= 1.0

    def test_loss_drops_by_step_200(self):
        drops = []
        for seed in range(5):
            run = RunConfig(seed=seed, steps=201, n_eval=16, eval_every=0)
            _, records = train(replace(CFG, seed=seed), run)
            losses = [r["loss"] for r in records if "loss" in r]
            drops.append(losses[200] < losses[0])
        assert sorted(drops)[2]

    def test_sweep_level_zero_matches_train(self):
        run = RunConfig(steps=10, n_eval=32, levels=(0.0, 1.0), n_seeds=1)
        rows = degrade_sweep(CFG, run)
        _, records = train(CFG, run)
        assert [r["level"] for r in rows] == [0.0, 1.0]
        assert rows[0]["accuracies"] == [final_accuracy(records)]

    def test_bad_level(self):
        with pytest.raises(ValueError):
            degrade_sweep(CFG, RunConfig(steps=1, levels=(1.5,)))
