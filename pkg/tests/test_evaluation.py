import numpy as np
import pytest

from boxzoom import env
from boxzoom.data import SceneSpec, generate
from boxzoom.evaluation import (
    EvalRecord,
    Outcome,
    aggregate_runs,
    classify,
    evaluate,
    evaluate_policy,
    random_baseline,
    random_policy,
    read_curves,
    rollout,
    run_episode_eval,
    write_aggregate,
    write_curves,
)
from boxzoom.features import PatchGridExtractor
from boxzoom.geometry import BoundingBox, ModelVariant
from boxzoom.learning import QNetwork


def fixed_policy(zoom_index, refine_index=4):
    def choose(stage, vec, n_actions):
        return zoom_index(n_actions) if stage == "zoom" else refine_index

    return choose


def biased_nets(variant, extractor, zoom_bias, refine_bias=None):
    n = len(variant.zoom_actions)
    zoom = QNetwork(env.state_dim(extractor, n), n, hidden=(4,), seed=0)
    zoom.params["W2"][...] = 0.0
    zoom.params["b2"] = np.asarray(zoom_bias, dtype=float)
    refine = None
    if variant.two_stage:
        refine = QNetwork(env.state_dim(extractor, 5), 5, hidden=(4,), seed=1)
        refine.params["W2"][...] = 0.0
        refine.params["b2"] = np.asarray(refine_bias, dtype=float)
    return zoom, refine


@pytest.fixture(scope="module")
def dataset():
    return generate(SceneSpec(width=32, height=32, seed=11), 12)


class TestClassify:
    g = BoundingBox(0, 0, 10, 10)

    def test_tp(self):
        assert classify(BoundingBox(0, 0, 10, 9), True, self.g).outcome is Outcome.TP

    def test_tp_needs_strict_threshold(self):
        assert classify(BoundingBox(0, 0, 10, 5), True, self.g).outcome is Outcome.FP

    def test_tp_without_terminal(self):
        assert classify(self.g, False, self.g).outcome is Outcome.TP

    def test_fp(self):
        assert classify(BoundingBox(20, 20, 30, 30), True, self.g).outcome is Outcome.FP

    def test_fn(self):
        assert classify(BoundingBox(20, 20, 30, 30), False, self.g).outcome is Outcome.FN


class TestRollout:
    def test_terminal_first_returns_full_image(self, dataset):
        ep = rollout(dataset[0].image, ModelVariant.ONE_STAGE, fixed_policy(lambda n: n - 1), None)
        assert ep.terminated and ep.zoom_count == 0
        assert ep.box == BoundingBox(0, 0, 32, 32)

    def test_never_terminal_runs_to_the_cap(self, dataset):
        ep = rollout(dataset[0].image, ModelVariant.ONE_STAGE, fixed_policy(lambda n: 4), None)
        # a center zoom on 32 px shrinks below the 3 px floor after 9 steps
        assert not ep.terminated
        assert 1 <= ep.zoom_count <= 10

    def test_never_terminal_large_image_takes_ten_zooms(self):
        image = np.zeros((400, 400))
        ep = rollout(image, ModelVariant.ONE_STAGE, fixed_policy(lambda n: 4), None)
        assert ep.zoom_count == 10 and not ep.terminated

    def test_two_stage_interleaves_five_refinements(self):
        image = np.zeros((400, 400))
        ep = rollout(image, ModelVariant.TWO_STAGE, fixed_policy(lambda n: 0, 1), None)
        kinds = "".join(t.kind for t in ep.transitions)
        assert kinds == "ZRRRRR" * 10

    def test_random_policy_respects_cap(self, dataset):
        ep = rollout(dataset[1].image, ModelVariant.TWO_STAGE_AR, random_policy(np.random.default_rng(0)), None)
        assert ep.zoom_count <= 10


class TestEvaluate:
    @pytest.mark.parametrize("variant", list(ModelVariant))
    def test_counts_sum_to_dataset_size(self, dataset, variant):
        policy = random_policy(np.random.default_rng(3))
        record = evaluate_policy(dataset, variant, policy, None)
        assert record.total == len(dataset)

    def test_zero_network_is_deterministic(self, dataset):
        extractor = PatchGridExtractor(4)
        nets = biased_nets(ModelVariant.TWO_STAGE, extractor, np.zeros(6), np.zeros(5))
        a = evaluate(dataset, nets, ModelVariant.TWO_STAGE, extractor)
        b = evaluate(dataset, nets, ModelVariant.TWO_STAGE, extractor)
        assert a == b and a.total == len(dataset)

    def test_weights_untouched(self, dataset):
        extractor = PatchGridExtractor(4)
        variant = ModelVariant.ONE_STAGE_AR
        net = QNetwork(env.state_dim(extractor, 8), 8, hidden=(8,), seed=5)
        before = {k: v.copy() for k, v in net.params.items()}
        evaluate(dataset, (net, None), variant, extractor)
        assert all(np.array_equal(before[k], net.params[k]) for k in before)

    def test_two_stage_needs_refine_net(self, dataset):
        extractor = PatchGridExtractor(4)
        zoom, _ = biased_nets(ModelVariant.ONE_STAGE, extractor, np.zeros(6))
        with pytest.raises(ValueError):
            run_episode_eval(dataset[0].image, (zoom, None), ModelVariant.TWO_STAGE, extractor)

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            evaluate_policy([], ModelVariant.ONE_STAGE, random_policy(np.random.default_rng()), None)

    def test_outcome_log(self, dataset, tmp_path):
        import json

        path = tmp_path / "log.jsonl"
        record = evaluate_policy(dataset, ModelVariant.ONE_STAGE, random_policy(np.random.default_rng(1)), None,
                                 outcome_log=path)
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(rows) == len(dataset)
        assert sum(r["outcome"] == "TP" for r in rows) == record.tp

    def test_random_baseline_in_unit_interval(self, dataset):
        rate = random_baseline(dataset, ModelVariant.ONE_STAGE, seed=0, repeats=3)
        assert 0.0 <= rate <= 1.0
        assert rate == random_baseline(dataset, ModelVariant.ONE_STAGE, seed=0, repeats=3)


class TestCurves:
    def test_round_trip(self, tmp_path):
        records = [EvalRecord(10, 1, 2, 3), EvalRecord(20, 4, 1, 1)]
        write_curves(records, tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "epoch,tp,fp,fn"
        assert read_curves(tmp_path / "c.csv") == records

    def test_bad_header(self, tmp_path):
        (tmp_path / "c.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_curves(tmp_path / "c.csv")

    def test_aggregate_bounds(self, rng, tmp_path):
        runs = [[EvalRecord(e, *rng.integers(0, 50, 3)) for e in (10, 20, 30)] for _ in range(4)]
        rows = aggregate_runs(runs)
        assert [r["epoch"] for r in rows] == [10, 20, 30]
        for row in rows:
            for key in ("tp", "fp", "fn"):
                assert row[f"{key}_min"] <= row[f"{key}_mean"] <= row[f"{key}_max"]
        write_aggregate(rows, tmp_path / "agg.csv")
        assert (tmp_path / "agg.csv").read_text().startswith("epoch,tp_mean,tp_min,tp_max")

    def test_aggregate_uses_common_epochs(self):
        rows = aggregate_runs([[EvalRecord(10, 1, 0, 0), EvalRecord(20, 2, 0, 0)], [EvalRecord(10, 3, 0, 0)]])
        assert [r["epoch"] for r in rows] == [10]
        assert rows[0]["tp_mean"] == 2.0
