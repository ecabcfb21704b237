import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chantwin.errors import DimensionError, ParseError, ValidationError
from chantwin.nn import dumps as model_bytes
from chantwin.ray.scene import Scene, box_surfaces, load_demo_scene
from chantwin.ray.tracer import TraceConfig
from chantwin.twin.corrector import (CorrectorConfig, build_model, evaluate_cases, nmse, predict,
                                     train_corrector)
from chantwin.twin.dataset import (Dataset, DatasetMeta, build_dataset, dumps, load, loads, save,
                                   scale_dataset, split_mask, to_features)

FAST = TraceConfig(ray_count=2000, scatter_rays=500)


def random_dataset(s=30, a=2, p=16, seed=0, split=0.7, noise=0.3):
    rng = np.random.default_rng(seed)
    h_real = rng.normal(size=(s * a, p)) + 1j * rng.normal(size=(s * a, p))
    h_rt = h_real + noise * (rng.normal(size=(s * a, p)) + 1j * rng.normal(size=(s * a, p)))
    return Dataset(DatasetMeta(s, a, p, s * a, 30.72e6, split=split, seed=seed), h_rt, h_real)


# --------------------------------------------------------------------------
# dataset


def test_meta_validation():
    with pytest.raises(ValidationError):
        DatasetMeta(10, 4, 16, 39, 30.72e6)
    with pytest.raises(ValidationError):
        DatasetMeta(10, 4, 16, 40, 30.72e6, split=1.0)


def test_file_round_trip_bit_exact(tmp_path):
    ds = random_dataset()
    blob = dumps(ds)
    assert blob[:4] == b"CTWD"
    assert dumps(loads(blob)) == blob
    save(ds, tmp_path / "d.ctwd")
    assert (tmp_path / "d.ctwd").read_bytes() == blob
    back = load(tmp_path / "d.ctwd")
    np.testing.assert_array_equal(back.h_rt, ds.h_rt)
    assert back.meta == ds.meta


def test_file_errors():
    blob = dumps(random_dataset())
    with pytest.raises(ParseError, match="magic"):
        loads(b"XXXX" + blob[4:])
    with pytest.raises(ParseError):
        loads(blob[:-8])


def test_split_is_pure_function_of_seed_and_index():
    a = split_mask(7, 1000, 0.7)
    np.testing.assert_array_equal(split_mask(7, 300, 0.7), a[:300])
    assert 0.65 < a.mean() < 0.75
    assert not np.array_equal(a, split_mask(8, 1000, 0.7))


def test_split_by_position_keeps_antennas_together():
    ds = random_dataset(s=50, a=4)
    m = ds.train_mask().reshape(50, 4)
    assert np.all(m == m[:, :1])


def test_scale_factor_five():
    ds = random_dataset()
    ds.h_rt[:] *= 0
    ds.h_real[:] = 0
    ds.h_real[3, 2] = -5.0 + 1j
    scaled, f = scale_dataset(ds)
    assert f == 5.0 and np.abs(to_features(scaled.h_real)).max() == 1.0
    assert scaled.meta.scale_factor == 5.0


def test_scaling_idempotent_and_nmse_invariant():
    ds = random_dataset()
    once, f1 = scale_dataset(ds)
    twice, f2 = scale_dataset(once)
    assert f2 == 1.0 and twice.meta.scale_factor == once.meta.scale_factor == f1
    np.testing.assert_allclose(nmse(once.h_real, once.h_rt), nmse(ds.h_real, ds.h_rt), atol=1e-12)


def test_scale_all_zero_rejected():
    ds = random_dataset()
    ds.h_rt[:] = 0
    ds.h_real[:] = 0
    with pytest.raises(ValidationError):
        scale_dataset(ds)


def test_identical_pipelines_give_identical_pairs():
    sc = load_demo_scene()
    r = build_dataset(sc, sc, sc.route_points(12), FAST, FAST)
    assert len(r.dataset) == 48
    np.testing.assert_array_equal(r.dataset.h_rt, r.dataset.h_real)


def test_realization_count_and_determinism():
    sc = load_demo_scene()
    pos = sc.route_points(100)
    a = build_dataset(sc, sc, pos, FAST, TraceConfig(ray_count=4000, seed=2), seed=3)
    b = build_dataset(sc, sc, pos, FAST, TraceConfig(ray_count=4000, seed=2), seed=3)
    assert a.dataset.meta.realizations == 400 and a.dataset.meta.samples == 100
    assert dumps(a.dataset) == dumps(b.dataset)
    # each position is normalized to unit RMS twin gain
    g = np.mean(np.sum(np.abs(a.dataset.h_rt.reshape(100, 4, 16)) ** 2, axis=2), axis=1)
    np.testing.assert_allclose(g, 1.0)


def test_enclosed_position_skipped(caplog):
    sc = load_demo_scene()
    walls = box_surfaces("cage", 95, -5, 105, 5, 4, "itu_concrete", "itu_concrete", "wall", "roof")
    caged = Scene(sc.surfaces + walls, sc.tx, sc.rx, sc.ground, sc.frequency, sc.tx_azimuth, sc.materials,
                  sc.routes)
    pos = np.array([[100.0, 0.0, 1.5], [0.0, 40.0, 1.5]])
    r = build_dataset(caged, caged, pos, FAST, FAST)
    assert list(r.kept) == [1] and r.dataset.meta.samples == 1
    assert "skipping position 0" in caplog.text


def test_build_rejects_mismatched_transmitters():
    sc = load_demo_scene()
    other = Scene(sc.surfaces, (0.0, 0.0, 30.0), sc.rx, sc.ground, sc.frequency, 0.0, sc.materials)
    with pytest.raises(ValidationError):
        build_dataset(sc, other, sc.route_points(2), FAST, FAST)
    with pytest.raises(ValidationError):
        build_dataset(sc, sc, np.zeros((0, 3)), FAST, FAST)


# --------------------------------------------------------------------------
# nmse


def test_nmse_examples():
    h = np.array([1 + 1j, 2.0, -0.5j])
    assert nmse(h, h)[0] == -100.0
    assert nmse(h, 0 * h)[0] == 0.0
    assert nmse(h, 2 * h)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValidationError):
        nmse(0 * h, h)


@given(st.floats(1e-3, 1e3))
def test_nmse_scale_invariant(c):
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
    np.testing.assert_allclose(nmse(c * a, c * b), nmse(a, b), atol=1e-9)


# --------------------------------------------------------------------------
# corrector


def toy_dataset():
    rng = np.random.default_rng(5)
    h_real = 0.5 * (rng.normal(size=(10, 16)) + 1j * rng.normal(size=(10, 16)))
    h_rt = 0.8 * h_real + 0.1 * rng.normal(size=(10, 16))
    ds = Dataset(DatasetMeta(10, 1, 16, 10, 30.72e6, split=0.999, seed=0), h_rt, h_real)
    assert ds.train_mask().all()
    return scale_dataset(ds)[0]


@pytest.mark.parametrize("kind", ["encoder_decoder", "mlp"])
def test_toy_overfit(kind):
    ds = toy_dataset()
    cfg = CorrectorConfig(epochs=500, patience=500, validation_fraction=0.0, seed=1)
    res = train_corrector(ds, cfg, kind)
    assert res.history[-1].train_mse < 1e-3
    assert np.all(nmse(ds.h_real, predict(res.model, ds.h_rt)) < -30.0)


def test_zero_learning_rate_keeps_parameters():
    ds = random_dataset()
    cfg = CorrectorConfig(epochs=3, learning_rate=0.0, seed=4)
    res = train_corrector(ds, cfg)
    fresh = build_model("encoder_decoder", 16, cfg, seed=4)
    for (_, _, p), (_, _, q) in zip(res.model.parameters(), fresh.parameters()):
        np.testing.assert_array_equal(p, q)


def test_training_deterministic():
    ds = random_dataset(s=40)
    cfg = CorrectorConfig(epochs=4, batch_size=32, seed=2)
    a, b = train_corrector(ds, cfg), train_corrector(ds, cfg)
    assert a.history == b.history
    assert model_bytes(a.model) == model_bytes(b.model)


def test_training_trend_decreases():
    ds = scale_dataset(random_dataset(s=120, a=2, noise=0.2))[0]
    res = train_corrector(ds, CorrectorConfig(epochs=30, batch_size=32, patience=30, seed=0), "mlp")
    mse = np.array([h.train_mse for h in res.history])
    smooth = np.convolve(mse, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth) < 0)
    assert np.all(mse <= 1.05 * np.minimum.accumulate(mse))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_keeps_finite_parameters():
    ds = random_dataset()
    ds.h_real[:] *= 1e200
    res = train_corrector(ds, CorrectorConfig(epochs=5, seed=0), "mlp")
    assert res.stopped == "diverged"
    assert all(np.all(np.isfinite(p)) for _, _, p in res.model.parameters())


def test_zero_model_predicts_zero_and_case2_is_zero_db():
    ds = random_dataset()
    zero = build_model("encoder_decoder", 16, CorrectorConfig(), seed=None)
    assert not predict(zero, ds.h_rt).any()
    rep = evaluate_cases(ds, zero)
    assert rep.case2 == 0.0


def test_identical_dataset_case1_clamped():
    ds = random_dataset(noise=0.0)
    rep = evaluate_cases(ds, build_model("mlp", 16, CorrectorConfig(), seed=None))
    assert rep.case1 == -100.0


def test_predict_pure_and_shape_checked():
    model = build_model("encoder_decoder", 16, CorrectorConfig(), seed=3)
    h = random_dataset().h_rt[:5]
    np.testing.assert_array_equal(predict(model, h), predict(model, h))
    assert predict(model, h[0]).shape == (16,)
    with pytest.raises(DimensionError):
        predict(model, np.zeros((2, 15)))


def test_descaling_matches_unit_scale_pipeline():
    model = build_model("mlp", 16, CorrectorConfig(), seed=3)
    h = random_dataset().h_rt[:5]
    c = 7.25
    np.testing.assert_allclose(predict(model, c * h, scale_factor=c), c * predict(model, h), atol=1e-9)


def test_empty_eval_split_rejected():
    ds = random_dataset()
    with pytest.raises(ValidationError):
        evaluate_cases(ds, build_model("mlp", 16, CorrectorConfig()), mask=np.zeros(len(ds), bool))


def test_config_validation():
    with pytest.raises(ValidationError):
        CorrectorConfig(encoder_blocks=1)
    with pytest.raises(ValidationError):
        build_model("resnet", 16, CorrectorConfig())
