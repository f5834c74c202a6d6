"""Configuration: nested dict with presets, deep-merge of user files, hashing.

The full key set is documented in the README. ``desk`` is the small CPU
preset every default test runs on; ``paper`` mirrors the published model
scale (4 layers, 8 heads, 512-wide, mesh widths [32,64,64,64]).
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .denoiser import DenoiserConfig
from .errors import ConfigError
from .hand import HandModelConfig
from .physics import AnnotatorConfig

DEFAULTS: dict = {
    "preset": "desk",
    "seed": 0,
    "frames": 16,
    "hand": {
        "seed": 2024,
        "ring_verts": 2,
        "ring_fractions": [0.0, 0.5],
        "wrist_ring_verts": 8,
        "wrist_radius": 16.0,
        "bone_radii": [9.0, 7.0, 6.0, 5.0],
        "tip_radius": 2.5,
        "shape_entry_range": 0.05,
        "shape_scale_floor": 0.05,
    },
    "denoiser": {
        "layers": 2,
        "heads": 4,
        "width": 64,
        "mesh_widths": [8, 16, 16, 16],
        "state_classes": 5,
        "gumbel_tau": 1.0,
        "ffn_multiplier": 4,
        "step_features": 16,
        "mesh_scale": 0.01,
        "max_frames": 256,
    },
    "schedule": {"steps": 8, "eta1": 0.01, "kappa": 0.3, "power": 1.0},
    "annotator": {
        "distance_rate_mm": 1.0,
        "stable_speed_deg": 0.5,
        "contact_threshold_mm": 10.0,
        "use_palm_center": False,
    },
    "sequence_constant_beta": False,
    "train": {
        "lambda_state": 50.0,
        "lambda_kinetics": 5e2,
        "lambda_stability": 1e3,
        "lambda_geo": 1.0,
        "lambda_const_accel": 5e2,
        "epochs": 30,
        "batch_size": 8,
        "lr": 1e-4,
        "weight_decay": 1e-2,
        "lr_decay_factor": 0.8,
        "lr_decay_epochs": 5,
        "teacher_noise_std": 0.0,
        "state_flip_prob": 0.0,
        "self_condition": True,
        "self_condition_start_epoch": 8,
        "probabilistic": True,
        "use_state": True,
        "use_kin": True,
        "use_sta": True,
        "constant_accel_baseline": False,
        "finetune_pred_states": False,
        "finetune_start_epoch": 20,
        "divergence_threshold": 1e6,
        "eval_subset": 6,
        "mode": "model_agnostic",  # or "paired": read external noisy estimates
        "perturb": {
            "noise_std": 0.06,
            "mask_prob": 0.35,
            "burst_mean": 3.0,
            "mask_noise_std": 1.8,
            "high_freq_jitter": False,
        },
    },
    "smoothfilter_sigma": 1.0,
}

PRESET_OVERRIDES: dict = {
    "desk": {},
    "paper": {
        "denoiser": {"layers": 4, "heads": 8, "width": 512, "mesh_widths": [32, 64, 64, 64]},
    },
}


def _deep_merge(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(preset: str = "desk") -> dict:
    if preset not in PRESET_OVERRIDES:
        raise ConfigError(f"unknown preset '{preset}' (have: {sorted(PRESET_OVERRIDES)})")
    cfg = _deep_merge(DEFAULTS, PRESET_OVERRIDES[preset])
    cfg["preset"] = preset
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults <- preset <- user file <- explicit overrides, deep-merged."""
    user: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config not found: {path}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    preset = (overrides or {}).get("preset") or user.get("preset", "desk")
    cfg = default_config(preset)
    cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def hand_config_from(cfg: dict) -> HandModelConfig:
    h = cfg["hand"]
    return HandModelConfig(
        seed=h["seed"],
        ring_verts=h["ring_verts"],
        ring_fractions=tuple(h["ring_fractions"]),
        wrist_ring_verts=h["wrist_ring_verts"],
        wrist_radius=h["wrist_radius"],
        bone_radii=tuple(h["bone_radii"]),
        tip_radius=h["tip_radius"],
        shape_entry_range=h["shape_entry_range"],
        shape_scale_floor=h["shape_scale_floor"],
    )


def denoiser_config_from(cfg: dict) -> DenoiserConfig:
    d = cfg["denoiser"]
    return DenoiserConfig(
        layers=d["layers"],
        heads=d["heads"],
        width=d["width"],
        mesh_widths=tuple(d["mesh_widths"]),
        state_classes=d["state_classes"],
        gumbel_tau=d["gumbel_tau"],
        ffn_multiplier=d["ffn_multiplier"],
        step_features=d["step_features"],
        mesh_scale=d["mesh_scale"],
        max_frames=d["max_frames"],
    )


def annotator_config_from(cfg: dict) -> AnnotatorConfig:
    a = cfg["annotator"]
    return AnnotatorConfig(
        distance_rate_mm=a["distance_rate_mm"],
        stable_speed_deg=a["stable_speed_deg"],
        contact_threshold_mm=a["contact_threshold_mm"],
        use_palm_center=a["use_palm_center"],
    )
