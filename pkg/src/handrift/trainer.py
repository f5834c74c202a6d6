"""Training: loss assembly over diffused samples and the epoch loop.

Each step draws clean sequences, fabricates noisy estimates (or reads paired
external ones), samples a diffusion step, forms x^n, and takes an AdamW step
on the total objective: the squared data term on the denoiser output plus
weighted state / kinetics / stability losses and a joint-position auxiliary
term. Ablation flags zero out individual terms; the deterministic baseline
reuses the identical code path with x^n fixed to y and a single step index.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .config import annotator_config_from, hand_config_from
from .datagen import PerturbSpec, constant_accel_penalty, perturb
from .errors import ConfigError, OptimizerError, TrainingDivergedError
from .hand import build_hand_model, fk_transforms
from .metrics import accl_error, mje
from .motion import FRAME_DIM, Normalizer
from .optim import AdamW
from .physics import ObjectTrack, annotate_states, kinetics_loss, stability_loss, state_loss
from .pipeline import RefineBundle, make_bundle, motion_to_joints, refine_sequence, save_bundle
from .rng import RandomStream
from .tensor import Tensor, backward


@dataclass
class TrainConfig:
    lambda_state: float = 50.0
    lambda_kinetics: float = 5e2
    lambda_stability: float = 1e3
    lambda_geo: float = 1.0
    lambda_const_accel: float = 5e2
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-2
    lr_decay_factor: float = 0.8
    lr_decay_epochs: int = 5
    teacher_noise_std: float = 0.0  # corruption of the decoder's pose feedback
    state_flip_prob: float = 0.0    # corruption of the decoder's state feedback
    self_condition: bool = True     # second decode pass fed by own predictions
    self_condition_start_epoch: int = 8
    probabilistic: bool = True
    use_state: bool = True
    use_kin: bool = True
    use_sta: bool = True
    constant_accel_baseline: bool = False
    finetune_pred_states: bool = False
    finetune_start_epoch: int = 20
    divergence_threshold: float = 1e6
    eval_subset: int = 6
    mode: str = "model_agnostic"
    perturb: PerturbSpec = None

    def validate(self):
        for name in ("lambda_state", "lambda_kinetics", "lambda_stability", "lambda_geo",
                     "lambda_const_accel"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.constant_accel_baseline and (self.use_state or self.use_kin or self.use_sta):
            raise ConfigError("constant_accel_baseline replaces the physics losses; "
                              "disable use_state/use_kin/use_sta")
        if self.mode not in ("model_agnostic", "paired"):
            raise ConfigError(f"unknown training mode '{self.mode}'")


def train_config_from(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    pspec = PerturbSpec(
        noise_std=t["perturb"]["noise_std"],
        mask_prob=t["perturb"]["mask_prob"],
        burst_mean=t["perturb"]["burst_mean"],
        mask_noise_std=t["perturb"]["mask_noise_std"],
        high_freq_jitter=t["perturb"]["high_freq_jitter"],
    )
    fields = {k: t[k] for k in TrainConfig.__dataclass_fields__ if k != "perturb" and k in t}
    tc = TrainConfig(perturb=pspec, **fields)
    tc.validate()
    return tc


def _fk_joints_tensor(frames_2d, model):
    """Differentiable joints (M,21,3) from a flat (M,61) pose tensor."""
    ro = frames_2d[:, 0:3]
    th = tz.reshape(frames_2d[:, 3:48], (frames_2d.shape[0], 15, 3))
    be = frames_2d[:, 48:58]
    tr = frames_2d[:, 58:61]
    joints, _ = fk_transforms(ro, th, be, tr, model)
    return joints


def total_loss(bundle: RefineBundle, x_norm: np.ndarray, y_norm: np.ndarray, n_arr,
               labels: np.ndarray, tcfg: TrainConfig, rng: RandomStream | None,
               gt_joints: np.ndarray | None = None, predicted_physics_labels: bool = False,
               self_condition: bool = False):
    """Assemble the training objective for one batch.

    Returns (total scalar tensor, {component: float}). Disabled terms
    contribute exactly zero and are reported as 0.0 in the breakdown. With
    ``predicted_physics_labels`` the kinetics/stability terms segment frames
    by the model's own state predictions instead of the annotations
    (late-training fine-tune mode). With ``self_condition`` the decoder's
    pose-feedback inputs come from a gradient-free first pass instead of the
    ground truth, matching the feedback distribution inference will see.
    """
    den = bundle.denoiser
    schedule = bundle.schedule
    B, T, D = x_norm.shape

    if tcfg.probabilistic:
        eta = schedule.eta[np.asarray(n_arr) - 1][:, None, None]
        eps = rng.normal((B, T, D))
        x_n = x_norm + eta * (y_norm - x_norm) + schedule.kappa * np.sqrt(eta) * eps
    else:
        n_arr = np.full(B, schedule.steps)
        x_n = y_norm.copy()

    teacher = x_norm
    if tcfg.teacher_noise_std > 0:
        # corrupt the autoregressive feedback channel so free-running inference,
        # which feeds back imperfect predictions, stays in-distribution
        teacher = x_norm + tcfg.teacher_noise_std * rng.normal((B, T, D))

    teacher_states = None
    if tcfg.use_state:
        teacher_states = labels
        if tcfg.state_flip_prob > 0:
            # random label flips teach the decoder to tolerate the state
            # flicker its own predictions produce at inference
            flips = rng.uniform(shape=(B, T)) < tcfg.state_flip_prob
            rand = rng.integers(0, den.cfg.state_classes - 1, (B, T))
            teacher_states = np.where(flips, rand, labels)

    cond = den.encode(x_n, y_norm, n_arr)
    if self_condition:
        with tz.no_grad():
            first_pass, _ = den.decode_teacher(cond, teacher, teacher_states)
        teacher = first_pass.data
    x_hat, logits = den.decode_teacher(cond, teacher, teacher_states)
    phys_labels = np.argmax(logits.data, axis=-1) if predicted_physics_labels else labels

    diff = x_hat - Tensor(x_norm)
    total = tz.tmean(diff * diff)
    comps = {"data": total.item()}

    std_t = Tensor(bundle.normalizer.std)
    mean_t = Tensor(bundle.normalizer.mean)
    x_hat_raw = x_hat * std_t + mean_t

    if tcfg.use_state:
        ls = state_loss(logits, labels)
        total = total + tcfg.lambda_state * ls
        comps["state"] = tcfg.lambda_state * ls.item()
    else:
        comps["state"] = 0.0
    if tcfg.use_kin:
        lk = kinetics_loss(x_hat_raw[:, :, 0:48], phys_labels)
        total = total + tcfg.lambda_kinetics * lk
        comps["kinetics"] = tcfg.lambda_kinetics * lk.item()
    else:
        comps["kinetics"] = 0.0
    if tcfg.use_sta:
        lst = stability_loss(x_hat_raw[:, :, 3:48], phys_labels)
        total = total + tcfg.lambda_stability * lst
        comps["stability"] = tcfg.lambda_stability * lst.item()
    else:
        comps["stability"] = 0.0
    if tcfg.constant_accel_baseline:
        lca = constant_accel_penalty(x_hat)
        total = total + tcfg.lambda_const_accel * lca
        comps["const_accel"] = tcfg.lambda_const_accel * lca.item()
    else:
        comps["const_accel"] = 0.0

    if tcfg.lambda_geo > 0:
        flat = tz.reshape(x_hat_raw, (B * T, FRAME_DIM))
        joints_hat = _fk_joints_tensor(flat, bundle.hand_model)
        if gt_joints is None:
            x_raw = bundle.normalizer.denormalize(x_norm).reshape(B * T, FRAME_DIM)
            gt_joints = motion_to_joints(x_raw, bundle.hand_model)
        jdiff = joints_hat - Tensor(gt_joints.reshape(B * T, 21, 3))
        lg = tz.tmean(jdiff * jdiff)
        total = total + tcfg.lambda_geo * lg
        comps["geo"] = tcfg.lambda_geo * lg.item()
    else:
        comps["geo"] = 0.0

    comps["total"] = total.item()
    return total, comps


@dataclass
class CorpusItem:
    motion: np.ndarray                      # (T,61) clean
    object_center: np.ndarray | None = None
    contact_threshold: float | None = None
    labels: np.ndarray | None = None        # annotator labels, filled by train()
    paired_estimate: np.ndarray | None = None  # external noisy estimate ("paired" mode)


def _ema(values, window=10):
    alpha = 2.0 / (window + 1.0)
    out = []
    acc = None
    for v in values:
        acc = v if acc is None else alpha * v + (1 - alpha) * acc
        out.append(acc)
    return out


def train(corpus: list, cfg: dict, out_ckpt=None, log_path=None, eval_corpus: list | None = None):
    """Run the full loop; returns (bundle, log rows). Writes checkpoint + log.

    On divergence the last end-of-epoch parameters are saved before
    TrainingDivergedError propagates.
    """
    tcfg = train_config_from(cfg)
    hand_model = build_hand_model(hand_config_from(cfg))
    normalizer = Normalizer.fit([item.motion for item in corpus])
    bundle = make_bundle(cfg, normalizer, hand_model=hand_model)
    den = bundle.denoiser
    schedule = bundle.schedule

    ann_cfg = annotator_config_from(cfg)
    for item in corpus:
        if item.labels is None:
            if item.object_center is None:
                raise ConfigError("corpus item lacks both labels and an object track")
            obj = ObjectTrack(item.object_center, item.contact_threshold or ann_cfg.contact_threshold_mm)
            item.labels = annotate_states(item.motion, obj, hand_model, ann_cfg).labels
        if tcfg.mode == "paired" and item.paired_estimate is None:
            raise ConfigError("paired training mode needs paired_estimate on every corpus item")

    root = RandomStream(cfg["seed"], "train")
    opt = AdamW(den.params, lr=tcfg.lr, weight_decay=tcfg.weight_decay,
                lr_decay_factor=tcfg.lr_decay_factor, lr_decay_epochs=tcfg.lr_decay_epochs)

    gt_joints_cache = [motion_to_joints(item.motion, hand_model) for item in corpus]

    eval_items = (eval_corpus or [])[: tcfg.eval_subset]
    eval_noisy = [
        perturb(it.motion, tcfg.perturb, RandomStream(cfg["seed"], f"train-eval-perturb-{i}"),
                channel_scale=normalizer.std)
        for i, it in enumerate(eval_items)
    ]

    log_rows = []
    last_good = {k: p.data.copy() for k, p in den.params.items()}
    n_seq = len(corpus)
    steps_per_epoch = max(n_seq // tcfg.batch_size, 1)

    def save_now(params_data):
        if out_ckpt is not None:
            saved = {k: p.data for k, p in den.params.items()}
            for k in saved:
                den.params[k].data = params_data[k]
            save_bundle(out_ckpt, bundle, extra={"epochs_completed": len(log_rows)})
            for k in saved:
                den.params[k].data = saved[k]

    try:
        for epoch in range(tcfg.epochs):
            opt.set_epoch(epoch)
            perm = root.split(f"shuffle-{epoch}").permutation(n_seq)
            comp_sums: dict = {}
            for step in range(steps_per_epoch):
                idx = perm[step * tcfg.batch_size : (step + 1) * tcfg.batch_size]
                if len(idx) == 0:
                    continue
                x_raw = np.stack([corpus[i].motion for i in idx])
                labels = np.stack([corpus[i].labels for i in idx])
                gt_j = np.stack([gt_joints_cache[i] for i in idx])
                if tcfg.mode == "paired":
                    y_raw = np.stack([corpus[i].paired_estimate for i in idx])
                else:
                    y_raw = np.stack([
                        perturb(corpus[i].motion, tcfg.perturb,
                                root.split(f"perturb-{epoch}-{step}-{j}"), channel_scale=normalizer.std)
                        for j, i in enumerate(idx)
                    ])
                x_norm = normalizer.normalize(x_raw.reshape(-1, FRAME_DIM)).reshape(x_raw.shape)
                y_norm = normalizer.normalize(y_raw.reshape(-1, FRAME_DIM)).reshape(y_raw.shape)

                n_arr = root.split(f"steps-{epoch}-{step}").integers(1, schedule.steps, (len(idx),))
                noise_rng = root.split(f"noise-{epoch}-{step}")
                use_pred = tcfg.finetune_pred_states and epoch >= tcfg.finetune_start_epoch
                self_cond = tcfg.self_condition and epoch >= tcfg.self_condition_start_epoch
                loss, comps = total_loss(bundle, x_norm, y_norm, n_arr, labels, tcfg,
                                         noise_rng, gt_joints=gt_j,
                                         predicted_physics_labels=use_pred,
                                         self_condition=self_cond)
                if not np.isfinite(comps["total"]) or comps["total"] > tcfg.divergence_threshold:
                    save_now(last_good)
                    raise TrainingDivergedError(
                        f"loss {comps['total']:.3e} at epoch {epoch} step {step}; "
                        f"kept checkpoint from epoch {epoch - 1}"
                    )
                opt.zero_grad()
                backward(loss)
                try:
                    opt.step()
                except OptimizerError:
                    save_now(last_good)
                    raise
                for k, v in comps.items():
                    comp_sums[k] = comp_sums.get(k, 0.0) + v

            row = {
                "epoch": epoch,
                "lr": opt.lr,
                "loss": {k: v / steps_per_epoch for k, v in sorted(comp_sums.items())},
            }
            if eval_items:
                row["eval"] = _quick_eval(bundle, eval_items, eval_noisy)
            log_rows.append(row)
            last_good = {k: p.data.copy() for k, p in den.params.items()}
    finally:
        if log_path is not None:
            with open(log_path, "w") as f:
                for row in log_rows:
                    f.write(json.dumps(row, sort_keys=True) + "\n")

    if out_ckpt is not None:
        save_bundle(out_ckpt, bundle, extra={"epochs_completed": tcfg.epochs})
    return bundle, log_rows


def _quick_eval(bundle: RefineBundle, eval_items, eval_noisy) -> dict:
    model = bundle.hand_model
    rows = {"mje": [], "accl": [], "input_mje": [], "input_accl": []}
    for item, noisy in zip(eval_items, eval_noisy):
        gt_j = motion_to_joints(item.motion, model)
        in_j = motion_to_joints(noisy, model)
        refined, _ = refine_sequence(bundle, noisy, deterministic=True)
        out_j = motion_to_joints(refined, model)
        rows["mje"].append(mje(out_j, gt_j))
        rows["accl"].append(accl_error(out_j, gt_j))
        rows["input_mje"].append(mje(in_j, gt_j))
        rows["input_accl"].append(accl_error(in_j, gt_j))
    return {k: float(np.mean(v)) for k, v in rows.items()}


def training_loss_ema(log_rows, window: int = 10):
    """Smoothed per-epoch total loss; the smoke test checks it never rises."""
    totals = [row["loss"]["total"] for row in log_rows]
    return _ema(totals, window)
