import json

import numpy as np
import pytest

from handrift import tensor as tz
from handrift.config import config_hash, hand_config_from, load_config
from handrift.datagen import generate_sequence, sample_script
from handrift.errors import ConfigError, TrainingDivergedError
from handrift.hand import build_hand_model
from handrift.motion import FRAME_DIM, Normalizer
from handrift.pipeline import load_bundle, make_bundle, refine_sequence, save_bundle
from handrift.rng import RandomStream
from handrift.tensor import Tensor
from handrift.trainer import (CorpusItem, TrainConfig, _ema, total_loss, train,
                              train_config_from, training_loss_ema)


@pytest.fixture(scope="module")
def tiny_cfg():
    return load_config(None, {
        "frames": 14,
        "train": {"epochs": 2, "batch_size": 2, "eval_subset": 0},
        "schedule": {"steps": 3, "eta1": 0.01, "kappa": 0.3, "power": 1.0},
        "denoiser": {"layers": 1, "heads": 2, "width": 16, "mesh_widths": [4, 6],
                     "step_features": 8, "ffn_multiplier": 2},
    })


@pytest.fixture(scope="module")
def tiny_corpus(tiny_cfg):
    model = build_hand_model(hand_config_from(tiny_cfg))
    items = []
    for i in range(4):
        script = sample_script(RandomStream(21, f"tiny-{i}"), 14)
        motion, obj, track = generate_sequence(script, model)
        items.append(CorpusItem(motion=motion, object_center=obj.center,
                                contact_threshold=obj.contact_threshold))
    return items


def _fresh_items(items):
    return [CorpusItem(motion=i.motion.copy(), object_center=i.object_center.copy(),
                       contact_threshold=i.contact_threshold) for i in items]


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(constant_accel_baseline=True).validate()
    cfg = TrainConfig(constant_accel_baseline=True, use_state=False, use_kin=False, use_sta=False)
    cfg.validate()
    with pytest.raises(ConfigError):
        TrainConfig(lambda_state=-1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(mode="weird").validate()


def test_total_loss_oracle_denoiser_is_zero(tiny_cfg, tiny_corpus):
    model = build_hand_model(hand_config_from(tiny_cfg))
    motions = [c.motion for c in tiny_corpus]
    normalizer = Normalizer.fit(motions)
    bundle = make_bundle(tiny_cfg, normalizer, hand_model=model)
    tcfg = train_config_from(tiny_cfg)

    from handrift.physics import ObjectTrack, annotate_states
    item = tiny_corpus[0]
    labels = annotate_states(item.motion, ObjectTrack(item.object_center, item.contact_threshold),
                             model).labels
    x_norm = normalizer.normalize(item.motion)[None]
    S = tiny_cfg["denoiser"]["state_classes"]
    perfect_logits = np.full((1, labels.size, S), -30.0)
    perfect_logits[0, np.arange(labels.size), labels] = 30.0

    def oracle(cond, teacher, lab):
        return Tensor(x_norm.copy()), Tensor(perfect_logits.copy())

    bundle.denoiser.decode_teacher = oracle
    loss, comps = total_loss(bundle, x_norm, x_norm.copy(), np.array([1]), labels[None],
                             tcfg, RandomStream(0, "noise"))
    assert loss.item() <= 1e-5
    assert comps["data"] == 0.0
    assert comps["kinetics"] == 0.0 and comps["stability"] == 0.0 and comps["geo"] <= 1e-12


def test_total_loss_lambdas_zero_reduces_to_data_term(tiny_cfg, tiny_corpus):
    model = build_hand_model(hand_config_from(tiny_cfg))
    normalizer = Normalizer.fit([c.motion for c in tiny_corpus])
    bundle = make_bundle(tiny_cfg, normalizer, hand_model=model)
    tcfg = train_config_from(tiny_cfg)
    tcfg.use_state = tcfg.use_kin = tcfg.use_sta = False
    tcfg.lambda_geo = 0.0

    item = tiny_corpus[0]
    x_norm = normalizer.normalize(item.motion)[None]
    y_norm = x_norm + 0.1
    labels = np.zeros((1, item.motion.shape[0]), dtype=np.int64)
    loss, comps = total_loss(bundle, x_norm, y_norm, np.array([2]), labels, tcfg,
                             RandomStream(1, "noise"))
    assert loss.item() == pytest.approx(comps["data"], rel=1e-15)
    for key in ("state", "kinetics", "stability", "geo", "const_accel"):
        assert comps[key] == 0.0


def test_total_loss_breakdown_sums_to_total(tiny_cfg, tiny_corpus):
    model = build_hand_model(hand_config_from(tiny_cfg))
    normalizer = Normalizer.fit([c.motion for c in tiny_corpus])
    bundle = make_bundle(tiny_cfg, normalizer, hand_model=model)
    tcfg = train_config_from(tiny_cfg)

    from handrift.physics import ObjectTrack, annotate_states
    item = tiny_corpus[1]
    labels = annotate_states(item.motion, ObjectTrack(item.object_center, item.contact_threshold),
                             model).labels[None]
    x_norm = normalizer.normalize(item.motion)[None]
    y_norm = x_norm + RandomStream(2, "y").normal(x_norm.shape) * 0.3
    loss, comps = total_loss(bundle, x_norm, y_norm, np.array([1]), labels, tcfg,
                             RandomStream(3, "noise"))
    parts = sum(v for k, v in comps.items() if k != "total")
    assert comps["total"] == pytest.approx(parts, abs=1e-12)
    assert loss.item() == comps["total"]


def test_train_bitwise_reproducible_checkpoint(tiny_cfg, tiny_corpus, tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    train(_fresh_items(tiny_corpus), tiny_cfg, out_ckpt=p1, log_path=tmp_path / "a.log")
    train(_fresh_items(tiny_corpus), tiny_cfg, out_ckpt=p2, log_path=tmp_path / "b.log")
    assert p1.read_bytes() == p2.read_bytes()
    assert (tmp_path / "a.log").read_bytes() == (tmp_path / "b.log").read_bytes()


def test_train_log_rows_structure(tiny_cfg, tiny_corpus, tmp_path):
    log = tmp_path / "run.log"
    bundle, rows = train(_fresh_items(tiny_corpus), tiny_cfg, log_path=log,
                         eval_corpus=_fresh_items(tiny_corpus)[:1])
    assert len(rows) == tiny_cfg["train"]["epochs"]
    for row in rows:
        assert {"epoch", "lr", "loss"} <= set(row)
        assert {"data", "state", "kinetics", "stability", "geo", "total"} <= set(row["loss"])
    parsed = [json.loads(line) for line in log.read_text().splitlines()]
    assert parsed == rows or len(parsed) == len(rows)


def test_train_divergence_aborts_with_checkpoint(tiny_cfg, tiny_corpus, tmp_path):
    cfg = load_config(None, {**{k: tiny_cfg[k] for k in ("frames", "schedule", "denoiser")},
                             "train": {**tiny_cfg["train"], "divergence_threshold": 1e-9}})
    ckpt = tmp_path / "diverged.ckpt"
    with pytest.raises(TrainingDivergedError):
        train(_fresh_items(tiny_corpus), cfg, out_ckpt=ckpt)
    assert ckpt.exists()
    bundle = load_bundle(ckpt)  # still loadable
    assert bundle.denoiser.parameter_count() > 0


def test_checkpoint_stores_normalization_and_config_hash(tiny_cfg, tiny_corpus, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    bundle, _ = train(_fresh_items(tiny_corpus), tiny_cfg, out_ckpt=ckpt)
    loaded = load_bundle(ckpt)
    assert loaded.config_hash == config_hash(tiny_cfg)
    np.testing.assert_array_equal(loaded.normalizer.mean, bundle.normalizer.mean)
    np.testing.assert_array_equal(loaded.normalizer.std, bundle.normalizer.std)
    out1, _ = refine_sequence(bundle, tiny_corpus[0].motion)
    out2, _ = refine_sequence(loaded, tiny_corpus[0].motion)
    np.testing.assert_array_equal(out1, out2)


def test_deterministic_baseline_reuses_pipeline(tiny_cfg, tiny_corpus):
    cfg = json.loads(json.dumps(tiny_cfg))
    cfg["train"].update({"probabilistic": False, "use_state": False, "use_kin": False,
                         "use_sta": False})
    bundle, rows = train(_fresh_items(tiny_corpus), cfg)
    assert not bundle.probabilistic
    refined, track = refine_sequence(bundle, tiny_corpus[0].motion)
    assert refined.shape == tiny_corpus[0].motion.shape
    assert track.labels.shape == (tiny_corpus[0].motion.shape[0],)


def test_paired_mode_requires_estimates(tiny_cfg, tiny_corpus):
    cfg = json.loads(json.dumps(tiny_cfg))
    cfg["train"]["mode"] = "paired"
    with pytest.raises(ConfigError):
        train(_fresh_items(tiny_corpus), cfg)


def test_paired_mode_trains_on_external_estimates(tiny_cfg, tiny_corpus):
    cfg = json.loads(json.dumps(tiny_cfg))
    cfg["train"]["mode"] = "paired"
    items = _fresh_items(tiny_corpus)
    rng = np.random.default_rng(0)
    for it in items:
        it.paired_estimate = it.motion + rng.normal(size=it.motion.shape) * 0.05
    bundle, rows = train(items, cfg)
    assert len(rows) == cfg["train"]["epochs"]


def test_ema_definition():
    vals = [10.0, 10.0, 10.0]
    out = _ema(vals, window=10)
    assert out == [10.0, 10.0, 10.0]
    rows = [{"loss": {"total": v}} for v in [5.0, 4.0, 3.0, 2.5]]
    ema = training_loss_ema(rows)
    assert all(b <= a for a, b in zip(ema, ema[1:]))


def test_sequence_constant_beta_flag(tiny_cfg, tiny_corpus):
    cfg = json.loads(json.dumps(tiny_cfg))
    cfg["sequence_constant_beta"] = True
    bundle, _ = train(_fresh_items(tiny_corpus), cfg)
    refined, _ = refine_sequence(bundle, tiny_corpus[0].motion)
    spread = np.abs(refined[:, 48:58] - refined[0, 48:58]).max()
    assert spread == 0.0
