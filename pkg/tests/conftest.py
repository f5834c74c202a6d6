"""Shared fixtures: the desk corpus and the trained model variants.

The five acceptance training runs (full model, three ablations, the
constant-acceleration baseline) are cached on disk under tests/.cache keyed
by config hash, so a fully green suite fresh from checkout trains them once
(~20 min) and later runs reuse the artifacts. Delete tests/.cache to force
retraining.
"""

import json
from pathlib import Path

import pytest

from handrift.config import config_hash, hand_config_from, load_config
from handrift.datagen import generate_sequence, sample_script
from handrift.hand import build_hand_model
from handrift.pipeline import load_bundle
from handrift.rng import RandomStream
from handrift.trainer import CorpusItem, train

CACHE = Path(__file__).parent / ".cache"

CORPUS_SEED = 7
TRAIN_COUNT = 200
TEST_COUNT = 50

# Desk-scale training campaign: lr and lambda_stability recalibrated for the
# short from-scratch run and normalized coordinates (see decisions ledger);
# package defaults keep the published values.
DESK_TRAIN = {
    "epochs": 60,
    "lr": 2e-3,
    "lr_decay_epochs": 10,
    "lambda_stability": 1e4,
    "eval_subset": 4,
}

VARIANTS = {
    "full": {},
    "deterministic": {"probabilistic": False, "use_state": False, "use_kin": False, "use_sta": False},
    "diffusion_only": {"use_state": False, "use_kin": False, "use_sta": False},
    "diffusion_state": {"use_kin": False, "use_sta": False},
    "const_accel": {"probabilistic": True, "use_state": False, "use_kin": False, "use_sta": False,
                    "constant_accel_baseline": True},
}


def desk_config(variant: str = "full") -> dict:
    return load_config(None, {"train": {**DESK_TRAIN, **VARIANTS[variant]}})


def build_corpus(model, count, offset=0):
    items, tracks = [], []
    for i in range(count):
        stream = RandomStream(CORPUS_SEED, f"script-{offset + i}")
        motion, obj, track = generate_sequence(sample_script(stream, 16), model)
        items.append(CorpusItem(motion=motion, object_center=obj.center,
                                contact_threshold=obj.contact_threshold))
        tracks.append(track)
    return items, tracks


@pytest.fixture(scope="session")
def desk_model():
    return build_hand_model(hand_config_from(load_config(None)))


@pytest.fixture(scope="session")
def desk_corpus(desk_model):
    train_items, train_tracks = build_corpus(desk_model, TRAIN_COUNT, offset=0)
    test_items, test_tracks = build_corpus(desk_model, TEST_COUNT, offset=TRAIN_COUNT)
    return {
        "train": train_items,
        "train_tracks": train_tracks,
        "test": test_items,
        "test_tracks": test_tracks,
    }


def train_cached(variant: str, corpus):
    cfg = desk_config(variant)
    CACHE.mkdir(exist_ok=True)
    tag = f"{variant}-{config_hash(cfg)[:16]}"
    ckpt = CACHE / f"{tag}.ckpt"
    log = CACHE / f"{tag}.log"
    if ckpt.exists() and log.exists():
        rows = [json.loads(line) for line in log.read_text().splitlines()]
        return load_bundle(ckpt), rows
    fresh = [CorpusItem(motion=i.motion.copy(), object_center=i.object_center.copy(),
                        contact_threshold=i.contact_threshold) for i in corpus["train"]]
    eval_items = [CorpusItem(motion=i.motion.copy(), object_center=i.object_center.copy(),
                             contact_threshold=i.contact_threshold) for i in corpus["test"]]
    bundle, rows = train(fresh, cfg, out_ckpt=ckpt, log_path=log, eval_corpus=eval_items)
    return bundle, rows


@pytest.fixture(scope="session")
def trained_full(desk_corpus):
    return train_cached("full", desk_corpus)


@pytest.fixture(scope="session")
def trained_variants(desk_corpus):
    return {name: train_cached(name, desk_corpus) for name in VARIANTS}
