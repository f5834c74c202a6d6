"""Learned clean-motion estimator f(x^n, y, n) -> (x_hat, state logits).

Per frame, the meshes of the noisy sample and the conditioning estimate are
encoded by a shared graph-convolution stack over the fixed template
adjacency and mean-pooled; together with a sinusoidal step embedding and
temporal positional encoding they feed a causal transformer encoder. A
causal decoder predicts each frame's pose and state logits autoregressively,
conditioned on the previous frame's pose and a (Gumbel-)sampled state
embedding: teacher-forced in training, fed back on itself at inference.

Everything, encoder self-attention included, is causally masked, so decoded
frame t never depends on inputs after t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .errors import ConfigError, NumericalError, ShapeError
from .hand import HandModel, skin_mesh_batch
from .motion import FRAME_DIM, Normalizer
from .rng import RandomStream
from .tensor import Tensor

NEG_INF = -np.inf


@dataclass(frozen=True)
class DenoiserConfig:
    layers: int = 2
    heads: int = 4
    width: int = 64
    mesh_widths: tuple = (8, 16, 16, 16)
    state_classes: int = 5
    gumbel_tau: float = 1.0
    ffn_multiplier: int = 4
    step_features: int = 16
    mesh_scale: float = 0.01       # mm -> network input units
    max_frames: int = 256

    def validate(self):
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.state_classes < 2:
            raise ConfigError("need at least 2 state classes")
        if self.step_features % 2 != 0:
            raise ConfigError("step_features must be even (sin/cos pairs)")


PRESETS = {
    "desk": DenoiserConfig(),
    "paper": DenoiserConfig(layers=4, heads=8, width=512, mesh_widths=(32, 64, 64, 64)),
}


def positional_encoding(max_t: int, width: int) -> np.ndarray:
    pos = np.arange(max_t)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


def sample_state(logits, tau: float, rng: RandomStream | None, hard: bool = False):
    """Gumbel-softmax over the last axis; straight-through one-hot when hard.

    With rng=None no noise is injected (argmax limit), keeping deterministic
    inference a pure function of its inputs.
    """
    if tau <= 0:
        raise ConfigError(f"gumbel temperature must be > 0, got {tau}")
    logits = tz.as_tensor(logits)
    z = logits if rng is None else logits + Tensor(rng.gumbel(logits.shape))
    soft = tz.softmax(z, temperature=tau, axis=-1)
    if not hard:
        return soft
    idx = np.argmax(soft.data, axis=-1)
    onehot = np.eye(logits.shape[-1])[idx]
    return soft + Tensor(onehot - soft.data)


class Denoiser:
    """Holds the parameter set and runs teacher-forced / free-running passes."""

    def __init__(self, config: DenoiserConfig, hand_model: HandModel, normalizer: Normalizer,
                 params: dict[str, Tensor] | None = None, seed: int = 0, total_steps: int = 1,
                 state_feedback: bool = True):
        config.validate()
        self.cfg = config
        self.hand_model = hand_model
        self.normalizer = normalizer
        self.total_steps = total_steps
        self.state_feedback = state_feedback  # False: condition on a neutral state
        self.pe = positional_encoding(config.max_frames, config.width)
        self.adjacency = Tensor(hand_model.adjacency_norm)
        self.params = params if params is not None else self.init_params(seed)

    # -- parameters ------------------------------------------------------

    def init_params(self, seed: int) -> dict[str, Tensor]:
        cfg = self.cfg
        stream = RandomStream(seed, "denoiser-init")
        p: dict[str, Tensor] = {}

        def linear(name, fan_in, fan_out, gain=1.0):
            w = stream.normal((fan_in, fan_out)) * gain / np.sqrt(fan_in)
            p[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
            p[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")

        def norm(name):
            p[f"{name}.g"] = Tensor(np.ones(cfg.width), requires_grad=True, name=f"{name}.g")
            p[f"{name}.b"] = Tensor(np.zeros(cfg.width), requires_grad=True, name=f"{name}.b")

        widths = (3,) + tuple(cfg.mesh_widths)
        for i in range(len(cfg.mesh_widths)):
            linear(f"mesh.{i}", widths[i], widths[i + 1])
        linear("frame_proj", 2 * cfg.mesh_widths[-1], cfg.width)
        linear("step.0", cfg.step_features, cfg.width)
        linear("step.1", cfg.width, cfg.width)

        def attention(name):
            for part in ("q", "k", "v", "o"):
                linear(f"{name}.{part}", cfg.width, cfg.width)

        hidden = cfg.ffn_multiplier * cfg.width
        for i in range(cfg.layers):
            norm(f"enc.{i}.ln1")
            attention(f"enc.{i}.attn")
            norm(f"enc.{i}.ln2")
            linear(f"enc.{i}.ffn.0", cfg.width, hidden)
            linear(f"enc.{i}.ffn.1", hidden, cfg.width)
        norm("enc_ln")
        for i in range(cfg.layers):
            norm(f"dec.{i}.ln1")
            attention(f"dec.{i}.self")
            norm(f"dec.{i}.ln2")
            attention(f"dec.{i}.cross")
            norm(f"dec.{i}.ln3")
            linear(f"dec.{i}.ffn.0", cfg.width, hidden)
            linear(f"dec.{i}.ffn.1", hidden, cfg.width)
        norm("dec_ln")

        linear("dec_in", FRAME_DIM, cfg.width)
        linear("dec_obs", 2 * FRAME_DIM, cfg.width)
        p["state_emb"] = Tensor(stream.normal((cfg.state_classes, cfg.width)) * 0.02,
                                requires_grad=True, name="state_emb")
        p["start"] = Tensor(stream.normal((cfg.width,)) * 0.02, requires_grad=True, name="start")
        linear("head_pose", cfg.width, FRAME_DIM, gain=0.02)
        linear("head_state", cfg.width, cfg.state_classes, gain=0.02)
        return p

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())

    # -- building blocks ---------------------------------------------------

    def _lin(self, name, x):
        return tz.matmul(x, self.params[f"{name}.w"]) + self.params[f"{name}.b"]

    def _ln(self, name, x):
        return tz.layer_norm(x) * self.params[f"{name}.g"] + self.params[f"{name}.b"]

    @staticmethod
    def _check(t: Tensor, layer: str):
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"non-finite activations in {layer}")
        return t

    def encode_meshes(self, meshes: np.ndarray) -> Tensor:
        """Graph convolutions over template adjacency, mean-pooled: (M,V,3) -> (M,C)."""
        if meshes.shape[-2] != self.hand_model.vertex_count:
            raise ShapeError(
                f"mesh has {meshes.shape[-2]} vertices, template has {self.hand_model.vertex_count}"
            )
        h = Tensor(np.asarray(meshes, dtype=np.float64) * self.cfg.mesh_scale)
        for i in range(len(self.cfg.mesh_widths)):
            h = tz.tanh(self._lin(f"mesh.{i}", tz.matmul(self.adjacency, h)))
            self._check(h, f"mesh encoder layer {i}")
        return tz.tmean(h, axis=-2)

    def encode_frame(self, mesh_y: np.ndarray, mesh_n: np.ndarray) -> Tensor:
        """Concatenated pooled codes of the two meshes for one frame."""
        both = np.stack([np.asarray(mesh_y, dtype=np.float64), np.asarray(mesh_n, dtype=np.float64)])
        pooled = self.encode_meshes(both)
        return tz.reshape(pooled, (2 * self.cfg.mesh_widths[-1],))

    def embed_step(self, n, total_steps: int) -> Tensor:
        """Sinusoidal features of n/N through a 2-layer perceptron; n may be (B,)."""
        n_arr = np.atleast_1d(np.asarray(n, dtype=np.float64))
        if np.any(n_arr < 1) or np.any(n_arr > total_steps):
            raise ConfigError(f"step index outside [1, {total_steps}]")
        u = n_arr / float(total_steps)
        half = self.cfg.step_features // 2
        freqs = np.pi * 2.0 ** np.arange(half)
        feats = np.concatenate([np.sin(u[:, None] * freqs), np.cos(u[:, None] * freqs)], axis=1)
        h = tz.tanh(self._lin("step.0", Tensor(feats)))
        return self._lin("step.1", h)  # (B, width)

    def _attend(self, name, q_in, kv_in, mask: np.ndarray, layer: str):
        cfg = self.cfg
        B, Tq = q_in.shape[0], q_in.shape[1]
        Tk = kv_in.shape[1]
        hd = cfg.width // cfg.heads

        def split(t, T):
            t = tz.reshape(t, (B, T, cfg.heads, hd))
            return tz.transpose(t, (0, 2, 1, 3))

        q = split(self._lin(f"{name}.q", q_in), Tq)
        k = split(self._lin(f"{name}.k", kv_in), Tk)
        v = split(self._lin(f"{name}.v", kv_in), Tk)
        scores = tz.matmul(q, tz.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
        scores = scores + Tensor(mask)  # (Tq,Tk) additive causal mask, -inf blocked
        attn = tz.softmax(scores, axis=-1)
        out = tz.matmul(attn, v)
        out = tz.reshape(tz.transpose(out, (0, 2, 1, 3)), (B, Tq, cfg.width))
        return self._check(self._lin(f"{name}.o", out), layer)

    def _ffn(self, name, x):
        return self._lin(f"{name}.1", tz.tanh(self._lin(f"{name}.0", x)))

    @staticmethod
    def _causal_mask(tq: int, tk: int) -> np.ndarray:
        return np.where(np.arange(tk)[None, :] <= np.arange(tq)[:, None], 0.0, NEG_INF)

    def _encode_sequence(self, x_n_norm: np.ndarray, y_norm: np.ndarray, n_arr: np.ndarray) -> Tensor:
        """Causal encoder over per-frame mesh tokens: returns memory (B,T,W)."""
        cfg = self.cfg
        B, T, _ = x_n_norm.shape
        x_raw = self.normalizer.denormalize(x_n_norm)
        y_raw = self.normalizer.denormalize(y_norm)

        def meshes(raw):
            flat = raw.reshape(B * T, FRAME_DIM)
            return skin_mesh_batch(flat[:, 0:3], flat[:, 3:48].reshape(-1, 15, 3),
                                   flat[:, 48:58], flat[:, 58:61], self.hand_model)

        both = np.concatenate([meshes(y_raw), meshes(x_raw)], axis=0)  # (2BT, V, 3)
        pooled = self.encode_meshes(both)
        y_code = pooled[0 : B * T]
        x_code = pooled[B * T : 2 * B * T]
        frame = tz.concatenate([y_code, x_code], axis=-1)
        tokens = tz.reshape(self._lin("frame_proj", frame), (B, T, cfg.width))

        step = tz.reshape(self.embed_step(n_arr, self.total_steps), (B, 1, cfg.width))
        tokens = tokens + step + Tensor(self.pe[:T])
        mask = self._causal_mask(T, T)
        h = tokens
        for i in range(cfg.layers):
            hn = self._ln(f"enc.{i}.ln1", h)
            h = h + self._attend(f"enc.{i}.attn", hn, hn, mask, f"encoder layer {i}")
            h = h + self._ffn(f"enc.{i}.ffn", self._ln(f"enc.{i}.ln2", h))
            self._check(h, f"encoder layer {i}")
        return self._ln("enc_ln", h)

    def _decode(self, u: Tensor, memory: Tensor) -> Tensor:
        cfg = self.cfg
        Tq, Tk = u.shape[1], memory.shape[1]
        self_mask = self._causal_mask(Tq, Tq)
        cross_mask = self._causal_mask(Tq, Tk)
        h = u
        for i in range(cfg.layers):
            hn = self._ln(f"dec.{i}.ln1", h)
            h = h + self._attend(f"dec.{i}.self", hn, hn, self_mask, f"decoder layer {i} self")
            h = h + self._attend(f"dec.{i}.cross", self._ln(f"dec.{i}.ln2", h), memory,
                                 cross_mask, f"decoder layer {i} cross")
            h = h + self._ffn(f"dec.{i}.ffn", self._ln(f"dec.{i}.ln3", h))
            self._check(h, f"decoder layer {i}")
        return self._ln("dec_ln", h)

    def _decoder_inputs(self, prev_pose: Tensor | None, prev_onehot: Tensor | None,
                        B: int, upto: int, step_emb: Tensor, obs_tokens: Tensor) -> Tensor:
        cfg = self.cfg
        start = tz.reshape(self.params["start"], (1, 1, cfg.width)) + Tensor(np.zeros((B, 1, cfg.width)))
        if upto == 1:
            u = start
        else:
            body = self._lin("dec_in", prev_pose) + tz.matmul(prev_onehot, self.params["state_emb"])
            u = tz.concatenate([start, body], axis=1)
        u = u + obs_tokens[:, :upto]
        return u + Tensor(self.pe[:upto]) + tz.reshape(step_emb, (B, 1, cfg.width))

    # -- public passes ----------------------------------------------------

    def encode(self, x_n_norm, y_norm, n):
        """Shared conditioning: (memory (B,T,W), step emb (B,W), obs tokens (B,T,W)).

        The observation tokens project each frame's raw normalized (y_t, x^n_t)
        pair so the decoder conditions on the input data directly, not only
        through the pooled mesh codes.
        """
        x_n_norm = np.asarray(x_n_norm, dtype=np.float64)
        y_norm = np.asarray(y_norm, dtype=np.float64)
        B = x_n_norm.shape[0]
        n_arr = np.broadcast_to(np.asarray(n), (B,)).astype(np.int64)
        memory = self._encode_sequence(x_n_norm, y_norm, n_arr)
        step_emb = self.embed_step(n_arr, self.total_steps)
        obs = Tensor(np.concatenate([y_norm, x_n_norm], axis=-1))
        obs_tokens = self._lin("dec_obs", obs)
        return memory, step_emb, obs_tokens

    def decode_teacher(self, cond, teacher_pose_norm, teacher_labels):
        """Parallel decode with forced previous-frame pose/state inputs.

        ``teacher_labels=None`` (or state feedback disabled) conditions every
        position on the neutral zero state instead.
        """
        memory, step_emb, obs_tokens = cond
        B, T = memory.shape[0], memory.shape[1]
        if teacher_labels is None or not self.state_feedback:
            onehot = np.zeros((B, T - 1, self.cfg.state_classes))
        else:
            labels = np.asarray(teacher_labels, dtype=np.int64)
            onehot = np.eye(self.cfg.state_classes)[labels[:, : T - 1]]
        prev_pose = Tensor(np.asarray(teacher_pose_norm, dtype=np.float64)[:, : T - 1])
        u = self._decoder_inputs(prev_pose, Tensor(onehot), B, T, step_emb, obs_tokens)
        h = self._decode(u, memory)
        x_hat = self._lin("head_pose", h)
        logits = self._lin("head_state", h)
        self._check(x_hat, "pose head")
        self._check(logits, "state head")
        return x_hat, logits

    def forward_teacher(self, x_n_norm, y_norm, n, teacher_pose_norm, teacher_labels):
        """Teacher-forced pass for training.

        ``teacher_pose_norm`` (B,T,D) is the clean motion in normalized
        coordinates; ``teacher_labels`` (B,T) int states. Returns
        (x_hat (B,T,D), state_logits (B,T,S)) tensors with graph.
        """
        cond = self.encode(x_n_norm, y_norm, n)
        return self.decode_teacher(cond, teacher_pose_norm, teacher_labels)

    def forward_free(self, x_n_norm, y_norm, n, rng: RandomStream | None = None):
        """Sequential inference pass feeding back its own pose/state predictions.

        With rng=None state feedback uses the argmax one-hot (deterministic);
        otherwise hard Gumbel-Softmax samples. Returns (x_hat, state_logits).
        """
        x_n_norm = np.asarray(x_n_norm, dtype=np.float64)
        B, T, _ = x_n_norm.shape
        memory, step_emb, obs_tokens = self.encode(x_n_norm, y_norm, n)

        poses: list[Tensor] = []
        states: list[Tensor] = []
        logits_seq: list[Tensor] = []
        for t in range(1, T + 1):
            if t == 1:
                prev_pose = prev_onehot = None
            else:
                prev_pose = tz.stack(poses, axis=1)
                prev_onehot = tz.stack(states, axis=1)
            u = self._decoder_inputs(prev_pose, prev_onehot, B, t, step_emb, obs_tokens)
            h = self._decode(u, memory[:, :t])
            h_t = h[:, t - 1]
            pose_t = self._lin("head_pose", h_t)
            logit_t = self._lin("head_state", h_t)
            poses.append(pose_t)
            logits_seq.append(logit_t)
            if self.state_feedback:
                states.append(sample_state(logit_t, self.cfg.gumbel_tau, rng, hard=True))
            else:
                states.append(Tensor(np.zeros((B, self.cfg.state_classes))))
        x_hat = tz.stack(poses, axis=1)
        logits = tz.stack(logits_seq, axis=1)
        self._check(x_hat, "pose head")
        return x_hat, logits

    def predict_clean(self, x_n_norm, y_norm, n, *, teacher_pose_norm=None,
                      teacher_labels=None, rng: RandomStream | None = None):
        """Dispatch to the teacher-forced or free-running pass."""
        if teacher_pose_norm is not None:
            return self.forward_teacher(x_n_norm, y_norm, n, teacher_pose_norm, teacher_labels)
        return self.forward_free(x_n_norm, y_norm, n, rng=rng)
