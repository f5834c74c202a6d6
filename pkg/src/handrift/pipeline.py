"""End-to-end plumbing: checkpoint bundles, sequence refinement, evaluation.

A bundle is everything needed to refine: denoiser weights, normalization
statistics, diffusion schedule, hand model and the full config they came
from. Long inputs are refined with 50%-overlap sliding windows of the
trained length, cross-faded linearly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .checkpoint import load_checkpoint, save_checkpoint
from .config import config_hash, denoiser_config_from, hand_config_from
from .denoiser import Denoiser
from .diffusion import DiffusionSchedule, make_schedule, refine
from .errors import CheckpointError, InputError
from .hand import HandModel, build_hand_model, skin_mesh_batch, fk_transforms
from .metrics import accl_error, kin_metric, mje, p_mje, p_mve_and_fscores, sta_metric
from .motion import FRAME_DIM, Normalizer
from .physics import STATE_COUNT, StateTrack
from .rng import RandomStream
from .tensor import Tensor


@dataclass
class RefineBundle:
    denoiser: Denoiser
    schedule: DiffusionSchedule
    normalizer: Normalizer
    hand_model: HandModel
    config: dict
    config_hash: str

    @property
    def frames(self) -> int:
        return int(self.config["frames"])

    @property
    def probabilistic(self) -> bool:
        return bool(self.config["train"]["probabilistic"])


def make_bundle(cfg: dict, normalizer: Normalizer, params=None, hand_model=None) -> RefineBundle:
    model = hand_model if hand_model is not None else build_hand_model(hand_config_from(cfg))
    sch = cfg["schedule"]
    schedule = make_schedule(sch["steps"], sch["eta1"], sch["kappa"], sch["power"])
    den = Denoiser(denoiser_config_from(cfg), model, normalizer, params=params,
                   seed=cfg["seed"], total_steps=schedule.steps,
                   state_feedback=bool(cfg["train"]["use_state"]))
    return RefineBundle(den, schedule, normalizer, model, cfg, config_hash(cfg))


def save_bundle(path, bundle: RefineBundle, extra: dict | None = None):
    tensors = {f"param/{k}": v.data for k, v in bundle.denoiser.params.items()}
    tensors["norm/mean"] = bundle.normalizer.mean
    tensors["norm/std"] = bundle.normalizer.std
    meta = {"config": bundle.config}
    if extra:
        meta.update(extra)
    save_checkpoint(path, tensors, seed=bundle.config["seed"],
                    config_hash=bundle.config_hash, extra=meta)


def load_bundle(path) -> RefineBundle:
    manifest, tensors = load_checkpoint(path)
    cfg = manifest["extra"]["config"]
    normalizer = Normalizer(tensors["norm/mean"], tensors["norm/std"])
    params = {
        k[len("param/"):]: Tensor(v, requires_grad=True, name=k[len("param/"):])
        for k, v in tensors.items() if k.startswith("param/")
    }
    bundle = make_bundle(cfg, normalizer, params=params)
    if bundle.config_hash != manifest["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its stored config")
    return bundle


# ---------------------------------------------------------------------------
# refinement


def _refine_window(bundle: RefineBundle, y_raw: np.ndarray, deterministic: bool,
                   rng: RandomStream | None, steps: int | None):
    """Refine one window of raw motion; returns (raw refined, state logits (T,S))."""
    y_norm = bundle.normalizer.normalize(y_raw)[None]  # (1,T,61)
    den = bundle.denoiser
    with tz.no_grad():
        if not bundle.probabilistic:
            x_hat, logits = den.forward_free(y_norm, y_norm, den.total_steps, rng=rng)
            out, lg = x_hat.data[0], logits.data[0]
        else:
            schedule = bundle.schedule
            if steps is not None and steps != schedule.steps:
                sch = bundle.config["schedule"]
                schedule = make_schedule(steps, sch["eta1"], sch["kappa"], sch["power"])
                den.total_steps = schedule.steps

            def denoise_fn(x_n, y, n):
                xh, lgt = den.forward_free(x_n[None], y[None], n, rng=rng)
                return xh.data[0], lgt.data[0]

            out, lg = refine(y_norm[0], denoise_fn, schedule,
                             rng=rng, deterministic=deterministic)
            den.total_steps = bundle.schedule.steps
    return bundle.normalizer.denormalize(out), lg


def refine_sequence(bundle: RefineBundle, y_raw: np.ndarray, deterministic: bool = True,
                    rng: RandomStream | None = None, steps: int | None = None):
    """Refine a raw (T,61) sequence of any length; returns (refined, StateTrack).

    Inputs longer than the trained window are processed in 50%-overlap
    windows blended with linear (triangular) cross-fade weights; predicted
    states vote with the same weights.
    """
    y_raw = np.asarray(y_raw, dtype=np.float64)
    if y_raw.ndim != 2 or y_raw.shape[1] != FRAME_DIM:
        raise InputError(f"refine expects (T,{FRAME_DIM}), got {y_raw.shape}")
    T = y_raw.shape[0]
    win = bundle.frames
    if T <= win:
        refined, logits = _refine_window(bundle, y_raw, deterministic, rng, steps)
        labels = np.argmax(logits, axis=-1)
        return _finalize_shape(bundle, refined), StateTrack(labels=labels)

    stride = max(win // 2, 1)
    starts = list(range(0, T - win + 1, stride))
    if starts[-1] != T - win:
        starts.append(T - win)
    acc = np.zeros((T, FRAME_DIM))
    votes = np.zeros((T, STATE_COUNT))
    weight = np.zeros(T)
    tri = np.minimum(np.arange(1, win + 1), np.arange(win, 0, -1)).astype(np.float64)
    for s in starts:
        refined, logits = _refine_window(bundle, y_raw[s : s + win], deterministic, rng, steps)
        acc[s : s + win] += tri[:, None] * refined
        labels = np.argmax(logits, axis=-1)
        votes[s : s + win, :] += tri[:, None] * np.eye(STATE_COUNT)[labels]
        weight[s : s + win] += tri
    refined_full = acc / weight[:, None]
    return _finalize_shape(bundle, refined_full), StateTrack(labels=np.argmax(votes, axis=-1))


def _finalize_shape(bundle: RefineBundle, refined: np.ndarray) -> np.ndarray:
    """Collapse shape channels to their sequence mean when configured so."""
    if bundle.config.get("sequence_constant_beta", False):
        refined = refined.copy()
        refined[:, 48:58] = refined[:, 48:58].mean(axis=0)
    return refined


# ---------------------------------------------------------------------------
# sequence geometry + evaluation helpers


def motion_to_joints(motion: np.ndarray, model: HandModel) -> np.ndarray:
    motion = np.asarray(motion, dtype=np.float64)
    with tz.no_grad():
        joints, _ = fk_transforms(motion[:, 0:3], motion[:, 3:48].reshape(-1, 15, 3),
                                  motion[:, 48:58], motion[:, 58:61], model)
    return joints.data


def motion_to_verts(motion: np.ndarray, model: HandModel) -> np.ndarray:
    motion = np.asarray(motion, dtype=np.float64)
    return skin_mesh_batch(motion[:, 0:3], motion[:, 3:48].reshape(-1, 15, 3),
                           motion[:, 48:58], motion[:, 58:61], model)


def evaluate_pair(pred_motion: np.ndarray, gt_motion: np.ndarray, gt_labels,
                  model: HandModel, with_meshes: bool = True) -> dict:
    """All §-style metrics for one prediction/ground-truth pair."""
    pj = motion_to_joints(pred_motion, model)
    gj = motion_to_joints(gt_motion, model)
    row = {
        "mje": mje(pj, gj),
        "p_mje": p_mje(pj, gj),
        "accl": accl_error(pj, gj),
        "kin": kin_metric(np.asarray(pred_motion)[:, 0:48], gt_labels),
        "sta": sta_metric(np.asarray(pred_motion)[:, 3:48], gt_labels),
    }
    if with_meshes:
        pv = motion_to_verts(pred_motion, model)
        gv = motion_to_verts(gt_motion, model)
        mve, (f5, f15) = p_mve_and_fscores(pv, gv)
        row.update({"p_mve": mve, "f5": f5, "f15": f15})
    else:
        row.update({"p_mve": 0.0, "f5": 1.0, "f15": 1.0})
    return row
