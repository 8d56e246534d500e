import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajfuse import numeric as nx
from trajfuse.baselines import LinearRegressionPredictor, linear_regression_baseline, lstm_ae_baseline, lstm_ae_config
from trajfuse.experiments import (
    ABLATION_ROWS,
    FULL_MODEL,
    Corpus,
    RunResult,
    horizon_label,
    results_csv,
)
from trajfuse.metrics import MetricsReport, ade, all_metrics, fde, mde
from trajfuse.model import ModelConfig, TrajectoryModel
from trajfuse.scene import AgentClass, PredictionInstance, build_batch, extract_instances
from trajfuse.synth import SynthConfig, generate_synthetic_scene
from trajfuse.training import (
    LOG_COLUMNS,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    measure_throughput,
    train_instances,
)


@pytest.fixture(scope="module")
def instances():
    scene = generate_synthetic_scene(SynthConfig(seed=3, density="medium"), 30, "te")
    return extract_instances(scene, 5, 5, stride=2)


class GroundTruthStub:
    """Predictor that looks up the stored ground truth of each requested instance."""

    def __init__(self, instances):
        self.truth = {i.instance_id: i.ground_truth for i in instances}

    def predict(self, batch):
        return np.stack([self.truth[i] for i in batch.instance_ids])


class TestMetrics:
    def test_two_step_oracle(self):
        gt = np.zeros((1, 2, 3))
        pred = np.array([[[3.0, 0, 0], [0, 4.0, 0]]])
        assert ade(pred, gt) == 3.5
        assert mde(pred, gt) == 4.0
        assert fde(pred, gt) == 4.0

    def test_perfect_prediction(self):
        x = np.random.default_rng(0).normal(size=(4, 5, 3))
        assert all_metrics(x, x) == {"ADE": 0.0, "MDE": 0.0, "FDE": 0.0}

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_ade_bounded_by_mde(self, t_f, seed):
        rng = np.random.default_rng(seed)
        p, g = rng.normal(size=(2, 3, t_f, 3))
        m = all_metrics(p, g)
        assert m["ADE"] <= m["MDE"] + 1e-12
        assert m["FDE"] <= m["MDE"] + 1e-12

    def test_single_step_fde_equals_ade(self):
        rng = np.random.default_rng(1)
        p, g = rng.normal(size=(2, 1000, 1, 3))
        assert fde(p, g) == ade(p, g)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            ade(np.zeros((2, 5, 3)), np.zeros((2, 4, 3)))

    def test_report_absent_class_is_null(self):
        p = np.zeros((2, 3, 3))
        g = np.ones((2, 3, 3))
        rep = MetricsReport.from_predictions(p, g, [AgentClass.VEHICLE, AgentClass.VEHICLE])
        assert rep.metrics["pedestrian"] is None and rep.counts["pedestrian"] == 0
        assert rep.table()["rider"] == {"ADE": None, "MDE": None, "FDE": None}
        assert rep.table()["vehicle"]["ADE"] == pytest.approx(np.sqrt(3))

    def test_report_table_keys(self):
        rep = MetricsReport.from_predictions(np.zeros((1, 2, 3)), np.zeros((1, 2, 3)), [AgentClass.RIDER])
        table = rep.table()
        assert set(table) == {"all", "pedestrian", "vehicle", "rider"}
        assert all(set(v) == {"ADE", "MDE", "FDE"} for v in table.values())


class TestLinearRegression:
    def test_straight_line_is_extrapolated_exactly(self):
        hist = np.outer(np.arange(5), [1.0, -0.5, 0.1]) + [2.0, 3.0, 0.0]
        out = linear_regression_baseline(hist, 3)
        expected = np.outer(np.arange(5, 8), [1.0, -0.5, 0.1]) + [2.0, 3.0, 0.0]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            hist = rng.normal(size=(6, 3))
            t = np.arange(1, 7.0)
            A = np.stack([np.ones_like(t), t], axis=1)
            coef = np.linalg.solve(A.T @ A, A.T @ hist)
            tf = np.arange(7, 11.0)
            ref = np.stack([np.ones_like(tf), tf], axis=1) @ coef
            np.testing.assert_allclose(linear_regression_baseline(hist, 4), ref, atol=1e-10)

    def test_batched(self):
        rng = np.random.default_rng(1)
        h = rng.normal(size=(4, 5, 3))
        batched = linear_regression_baseline(h, 2)
        for i in range(4):
            np.testing.assert_allclose(batched[i], linear_regression_baseline(h[i], 2))

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            linear_regression_baseline(np.zeros((1, 3)), 2)

    def test_predictor_interface(self, instances):
        pred = LinearRegressionPredictor(5).predict(build_batch(instances[:3]))
        assert pred.shape == (3, 5, 3)


class TestLstmAE:
    def test_config_only_drops_the_social_branch(self):
        base = ModelConfig(head="gauss", fusion="scnn")
        ae = lstm_ae_config(base)
        assert ae.fusion == "none" and ae.head == "l2"
        assert replace(ae, fusion="scnn", head="gauss") == base

    def test_ignores_neighbours(self, instances):
        model = TrajectoryModel(lstm_ae_config(ModelConfig()), seed=0)
        inst = next(i for i in instances if i.neighbors)
        alone = replace(inst, neighbors=())
        a = model.predict(build_batch([inst]))
        b = model.predict(build_batch([alone]))
        assert a.tobytes() == b.tobytes()
        np.testing.assert_array_equal(lstm_ae_baseline(inst.history, 5, model, inst.cls), b[0])


class TestTrainConfig:
    def test_staircase(self):
        cfg = TrainConfig(lr=1e-3, lr_decay_every=10)
        assert cfg.lr_at(0) == cfg.lr_at(9) == 1e-3
        assert cfg.lr_at(10) == pytest.approx(1e-4)
        assert cfg.lr_at(25) == pytest.approx(1e-5)

    @pytest.mark.parametrize("bad", [dict(lr=0), dict(batch_size=0), dict(head="mdn"), dict(fusion="gnn"),
                                     dict(frame="polar"), dict(input_scale=-1.0)])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_from_dict_unknown_key(self):
        with pytest.raises(ValueError, match="learning_rate"):
            TrainConfig.from_dict({"learning_rate": 0.1})


class TestTraining:
    def test_reproducible(self, instances):
        cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=2, seed=4)
        a = train_instances(cfg, instances[:16])
        b = train_instances(cfg, instances[:16])
        assert a.model.to_bytes() == b.model.to_bytes()
        assert a.log == b.log

    def test_seed_changes_result(self, instances):
        cfg = TrainConfig(lr=0.01, batch_size=8, max_epochs=1)
        a = train_instances(cfg, instances[:16])
        b = train_instances(replace(cfg, seed=1), instances[:16])
        assert a.model.to_bytes() != b.model.to_bytes()

    def test_loss_decreases(self, instances):
        cfg = TrainConfig(lr=0.005, batch_size=4, max_epochs=15, lr_decay_every=100, patience=100)
        res = train_instances(cfg, instances[:16])
        assert res.log[-1]["train_loss"] < 0.5 * res.log[0]["train_loss"]
        assert res.best_val_ade == min(r["val_ade"] for r in res.log)

    def test_early_stopping(self, instances):
        cfg = TrainConfig(lr=1e-9, batch_size=8, max_epochs=50, patience=3)
        res = train_instances(cfg, instances[:8])
        assert len(res.log) == 4

    def test_divergence_reports_location(self, instances):
        bad = [replace(instances[0], ground_truth=np.full((5, 3), np.nan))]
        with pytest.raises(TrainingDiverged, match="epoch 0, batch 0"):
            train_instances(TrainConfig(max_epochs=1), bad)

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            train_instances(TrainConfig(), [])

    def test_log_csv(self, tmp_path, instances):
        res = train_instances(TrainConfig(max_epochs=2, batch_size=8), instances[:8])
        path = tmp_path / "log.csv"
        res.write_log(path)
        rows = list(csv.DictReader(path.open()))
        assert tuple(rows[0]) == LOG_COLUMNS and len(rows) == 2
        assert float(rows[1]["train_loss"]) == res.log[1]["train_loss"]


class TestEvaluate:
    def test_ground_truth_stub_scores_zero(self, instances):
        rep = evaluate(GroundTruthStub(instances), instances, throughput_calls=0)
        assert rep.metrics["all"] == {"ADE": 0.0, "MDE": 0.0, "FDE": 0.0}
        assert rep.throughput is None
        assert sum(rep.counts[c] for c in ("pedestrian", "vehicle", "rider")) == rep.counts["all"] == len(instances)

    def test_throughput(self, instances):
        model = TrajectoryModel(ModelConfig(), 0)
        rate = measure_throughput(model, instances, calls=20)
        assert np.isfinite(rate) and rate > 0
        assert evaluate(model, instances[:4], throughput_calls=5).throughput > 0

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(GroundTruthStub([]), [])


def _pad(batch, extra_nbrs=2, extra_steps=3):
    """Append empty neighbour slots and padded time steps to a packed batch."""
    b, n, t, _ = batch.nbr_pos.shape
    pos = np.zeros((b, n + extra_nbrs, t + extra_steps, 3), dtype=batch.nbr_pos.dtype)
    pos[:, :n, :t] = batch.nbr_pos
    grow = lambda a: np.concatenate([a, np.zeros((b, extra_nbrs) + a.shape[2:], dtype=a.dtype)], axis=1)
    length = grow(batch.nbr_len)
    return replace(batch, nbr_pos=pos, nbr_len=length, nbr_class=grow(batch.nbr_class),
                   nbr_cell=grow(batch.nbr_cell), nbr_dist=grow(batch.nbr_dist), nbr_valid=length > 0)


class TestFullModel:
    @pytest.mark.parametrize("fusion", ["scnn", "sp", "con"])
    @pytest.mark.parametrize("head", ["l2", "gauss"])
    def test_padding_neutral(self, instances, fusion, head):
        model = TrajectoryModel(ModelConfig(fusion=fusion, head=head), seed=1)
        batch = build_batch(instances[:6])
        assert model.predict(batch).tobytes() == model.predict(_pad(batch)).tobytes()

    def test_mask_is_distribution(self, instances):
        model = TrajectoryModel(ModelConfig(), seed=2)
        _, mask = model.predict_full(build_batch(instances[:5]))
        assert mask.shape == (5, 11, 11)
        np.testing.assert_allclose(mask.sum(axis=(1, 2)), 1.0, atol=1e-5)

    def test_checkpoint_round_trip(self, tmp_path, instances):
        model = TrajectoryModel(ModelConfig(head="gauss"), seed=3)
        path = tmp_path / "m.ckpt"
        model.save(path)
        back = TrajectoryModel.load(path)
        assert back.config == model.config
        for name, t in model.params.items():
            assert back.params[name].data.tobytes() == t.data.tobytes()
        batch = build_batch(instances[:4])
        assert back.predict(batch).tobytes() == model.predict(batch).tobytes()

    def test_load_with_mismatched_config(self, tmp_path):
        path = tmp_path / "m.ckpt"
        TrajectoryModel(ModelConfig(fusion="sp"), 0).save(path)
        with pytest.raises(nx.CheckpointError, match="fusion"):
            TrajectoryModel.load(path, expect=ModelConfig(fusion="scnn"))

    def test_batch_horizon_mismatch(self, instances):
        model = TrajectoryModel(ModelConfig(t_h=4), 0)
        with pytest.raises(ValueError, match="history"):
            model.predict(build_batch(instances[:2]))

    @pytest.mark.parametrize("frame", ["target", "longitudinal", "ego"])
    def test_frames_run(self, instances, frame):
        model = TrajectoryModel(ModelConfig(frame=frame), 0)
        out = model.predict(build_batch(instances[:3]))
        assert out.shape == (3, 5, 3) and np.isfinite(out).all()

    def test_target_frame_is_translation_equivariant(self, instances):
        model = TrajectoryModel(ModelConfig(), 0)
        shift = np.array([8.0, -4.0, 0.0])
        moved = [replace(i, history=i.history + shift, ground_truth=i.ground_truth + shift,
                         neighbors=tuple(replace(n, positions=n.positions + shift) for n in i.neighbors))
                 for i in instances[:4]]
        a = model.predict(build_batch(instances[:4]))
        b = model.predict(build_batch(moved))
        np.testing.assert_allclose(a + shift, b, atol=1e-4)


class TestAblationStructure:
    def test_rows_differ_in_one_factor_from_neighbour(self):
        full = ABLATION_ROWS[FULL_MODEL]
        assert ABLATION_ROWS["LSTM+Attention+SCNN"] == {**full, "encoder": "lstm"}
        assert ABLATION_ROWS["VLSTM + SCNN"] == {**full, "attention": False}
        assert ABLATION_ROWS["VLSTM + SP"] == {**full, "attention": False, "fusion": "sp"}
        assert ABLATION_ROWS["VLSTM + CON"] == {**full, "attention": False, "fusion": "con"}

    def test_parameter_sets(self):
        names = lambda row: set(TrajectoryModel.init_params(ModelConfig(**ABLATION_ROWS[row]), 0).names())
        full, uniform = names(FULL_MODEL), names("VLSTM + SCNN")
        assert full - uniform == {"fusion.mask_fc.weight", "fusion.mask_fc.bias"}
        assert names("LSTM+Attention+SCNN") == full

    def test_results_csv(self):
        rep = lambda a: MetricsReport({"all": {"ADE": a, "MDE": 2 * a, "FDE": 3 * a}}, {"all": 1})
        cfg = TrainConfig()
        runs = [RunResult("x", s, cfg, rep(float(s + 1)), 0) for s in range(2)]
        rows = list(csv.reader(results_csv({"ablation": {"x": runs}}).splitlines()))
        assert rows[0] == ["table", "row", "seed", "t_f", "ADE", "MDE", "FDE"]
        assert rows[-1][:4] == ["ablation", "x", "mean", "5"] and float(rows[-1][4]) == 1.5
        assert horizon_label(7) == "7 frame"

    def test_corpus_split_is_by_scene(self):
        scenes = [generate_synthetic_scene(SynthConfig(seed=s, density="low"), 20, f"c{s}") for s in range(8)]
        corpus = Corpus.from_scenes(scenes, seed=0, n_instances=None, stride=4)
        ids = [set(x) for x in (corpus.train_ids, corpus.val_ids, corpus.test_ids)]
        assert sum(map(len, ids)) == 8 and not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
        split = corpus.split()
        assert {i.scene_id for i in split.test} <= ids[2]
        assert Corpus.from_scenes(scenes, seed=0).test_ids == corpus.test_ids
