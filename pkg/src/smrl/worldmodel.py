"""Compact learned world model: encoder, latent dynamics, reward head.

The three components are small dense networks over float64 numpy arrays:

* encoder — a linear map from the stacked observation history to the
  latent state (history stacking stands in for recurrence under partial
  observability),
* dynamics — an MLP predicting the next latent from (latent, action),
* reward head — an MLP predicting the scalar reward from the latent.

Training minimizes ``dyn_mse + rew_mse`` by gradient descent with
momentum. Reverse-mode differentiation is hand-derived in
`_loss_and_grads` (layer-by-layer backward passes) and is validated
against central finite differences in the test suite. Dynamics targets
are treated as constants (no gradient flows through the target branch),
which is also the objective the finite-difference check differentiates.

The reward head is a plain MSE regressor and its training targets are the
smoothed rewards carried by `SequenceBatch`; raw rewards are not part of
any batch, so no training code path can read them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, TrainingDivergedError

CHECKPOINT_MAGIC = b"SMRL1"


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 16
    hidden_layers: int = 2
    hidden_units: int = 64
    history_stack: int = 4
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch: int = 16
    seq_len: int = 16
    grad_clip: float = 100.0
    # reward targets are divided by this during training and predictions are
    # multiplied back, so callers always see raw units; keeps large sparse
    # magnitudes from saturating the tanh features (planner argmax and the
    # MSE-omission failure mode are both invariant to this scaling)
    reward_scale: float = 1.0
    # decoupled L2 on dynamics/reward weight matrices; pulls predictions
    # toward zero wherever data gives no support, which keeps the planner
    # from chasing hallucinated reward in unvisited regions
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.hidden_layers < 1:
            raise InvalidParameterError("hidden_layers must be >= 1")
        if self.history_stack < 1:
            raise InvalidParameterError("history_stack must be >= 1")
        if self.learning_rate <= 0 or self.grad_clip <= 0:
            raise InvalidParameterError("learning_rate and grad_clip must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidParameterError("momentum must be in [0, 1)")
        if self.reward_scale <= 0:
            raise InvalidParameterError("reward_scale must be positive")
        if self.weight_decay < 0:
            raise InvalidParameterError("weight_decay must be nonnegative")


@dataclass
class ImaginedRollout:
    latents: np.ndarray  # [H, latent_dim]
    rewards: np.ndarray  # [H]
    horizon: int


def _mlp_shapes(n_in, n_out, cfg):
    dims = [n_in] + [cfg.hidden_units] * cfg.hidden_layers + [n_out]
    return list(zip(dims[:-1], dims[1:]))


class WorldModel:
    """Learned model P(z'|z,a), R(r|z) with explicit parameter arrays."""

    def __init__(self, config: ModelConfig, obs_dim: int, action_dim: int,
                 seed: int = 0, identity_encoder: bool = False):
        self.config = config
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.rng = np.random.default_rng(seed)
        enc_in = self.obs_dim * config.history_stack

        if identity_encoder:
            if config.latent_dim != enc_in:
                raise InvalidParameterError(
                    "identity encoder needs latent_dim == obs_dim * history_stack"
                )
            enc_w = np.eye(enc_in)
        else:
            enc_w = self.rng.normal(0.0, enc_in**-0.5, (enc_in, config.latent_dim))

        self.params: dict[str, np.ndarray] = {"enc_w": enc_w, "enc_b": np.zeros(config.latent_dim)}
        self._add_mlp("dyn", config.latent_dim + self.action_dim, config.latent_dim)
        self._add_mlp("rew", config.latent_dim, 1)
        self.velocity = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.train_steps = 0

    def _add_mlp(self, prefix, n_in, n_out):
        shapes = _mlp_shapes(n_in, n_out, self.config)
        last = len(shapes) - 1
        for idx, (a, b) in enumerate(shapes):
            if idx == last:
                w = np.zeros((a, b))  # zero-initialized output layer
            else:
                w = self.rng.normal(0.0, a**-0.5, (a, b))
            self.params[f"{prefix}_w{idx}"] = w
            self.params[f"{prefix}_b{idx}"] = np.zeros(b)

    @property
    def n_layers(self) -> int:
        return self.config.hidden_layers + 1

    # ---------------------------------------------------------------- forward

    def encode(self, obs_history: np.ndarray) -> np.ndarray:
        """Latent state from the stacked observation history."""
        h = np.asarray(obs_history, dtype=np.float64)
        single = h.ndim == 1
        h = np.atleast_2d(h)
        if h.shape[1] != self.obs_dim * self.config.history_stack:
            raise InvalidInputError(
                f"history width {h.shape[1]} != obs_dim*stack "
                f"{self.obs_dim * self.config.history_stack}"
            )
        z = h @ self.params["enc_w"] + self.params["enc_b"]
        return z[0] if single else z

    def _mlp_forward(self, prefix, x, keep=False):
        acts = [x]
        for idx in range(self.n_layers):
            x = x @ self.params[f"{prefix}_w{idx}"] + self.params[f"{prefix}_b{idx}"]
            if idx < self.n_layers - 1:
                x = np.tanh(x)
            if keep:
                acts.append(x)
        return (x, acts) if keep else x

    def predict_dynamics(self, z: np.ndarray, action: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        a = np.asarray(action, dtype=np.float64)
        single = z.ndim == 1
        z, a = np.atleast_2d(z), np.atleast_2d(a)
        if z.shape[1] != self.config.latent_dim or a.shape[1] != self.action_dim:
            raise InvalidInputError(
                f"dynamics input shapes {z.shape}/{a.shape} do not match config"
            )
        out = self._mlp_forward("dyn", np.concatenate([z, a], axis=1))
        return out[0] if single else out

    def predict_reward(self, z: np.ndarray) -> np.ndarray | float:
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        if z.shape[1] != self.config.latent_dim:
            raise InvalidInputError(f"latent width {z.shape[1]} != {self.config.latent_dim}")
        out = self._mlp_forward("rew", z)[:, 0] * self.config.reward_scale
        return float(out[0]) if single else out

    def imagine(self, z0: np.ndarray, actions: np.ndarray) -> ImaginedRollout:
        """Iterate dynamics+reward from z0 along an action sequence."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.ndim != 2 or actions.shape[0] < 1:
            raise InvalidInputError("actions must be a [H, action_dim] sequence with H >= 1")
        H = actions.shape[0]
        latents = np.empty((H, self.config.latent_dim))
        rewards = np.empty(H)
        z = np.asarray(z0, dtype=np.float64)
        for h in range(H):
            z = self.predict_dynamics(z, actions[h])
            latents[h] = z
            rewards[h] = self.predict_reward(z)
        return ImaginedRollout(latents=latents, rewards=rewards, horizon=H)

    def imagine_batch(self, z0: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Predicted rewards [P, H] for a population of action sequences."""
        P, H, _ = actions.shape
        rewards = np.empty((P, H))
        z = np.asarray(z0, dtype=np.float64)
        if z.ndim == 1:
            z = np.broadcast_to(z, (P, z.size)).copy()
        for h in range(H):
            z = self._mlp_forward("dyn", np.concatenate([z, actions[:, h]], axis=1))
            rewards[:, h] = self._mlp_forward("rew", z)[:, 0] * self.config.reward_scale
        return rewards

    def score_actions(self, z0: np.ndarray, actions: np.ndarray, gamma: float) -> np.ndarray:
        """Discounted predicted returns [P] — the planner's hot loop.

        Matches ``imagine_batch(z0, actions) @ gamma**arange(H)`` up to fp
        rounding; the default two-hidden-layer architecture runs a fused,
        buffer-reusing path (the reward head's first linear layer is folded
        into the dynamics output layer).
        """
        actions = np.asarray(actions, dtype=np.float64)
        P, H, _ = actions.shape
        if self.config.hidden_layers != 2:
            return self.imagine_batch(z0, actions) @ gamma ** np.arange(H)

        p = self.params
        latent = self.config.latent_dim
        # z = h2 @ dyn_w2 + dyn_b2; rew layer 0 consumes z, so fold the two
        # linear maps: rew_h0 = h2 @ (dyn_w2 @ rew_w0) + (dyn_b2 @ rew_w0 + rew_b0)
        fused_w = p["dyn_w2"] @ p["rew_w0"]
        fused_b = p["dyn_b2"] @ p["rew_w0"] + p["rew_b0"]

        z = np.empty((P, latent))
        z[:] = np.asarray(z0, dtype=np.float64)
        x = np.empty((P, latent + self.action_dim))
        scores = np.zeros(P)
        g = 1.0
        for h in range(H):
            x[:, :latent] = z
            x[:, latent:] = actions[:, h]
            h1 = np.tanh(x @ p["dyn_w0"] + p["dyn_b0"])
            h2 = np.tanh(h1 @ p["dyn_w1"] + p["dyn_b1"])
            z = h2 @ p["dyn_w2"]
            z += p["dyn_b2"]
            r1 = np.tanh(h2 @ fused_w + fused_b)
            r2 = np.tanh(r1 @ p["rew_w1"] + p["rew_b1"])
            scores += (g * (r2 @ p["rew_w2"] + p["rew_b2"]))[:, 0]
            g *= gamma
        return scores * self.config.reward_scale

    # --------------------------------------------------------------- training

    def _mlp_backward(self, prefix, acts, dout, grads):
        """Backprop through one MLP; returns gradient w.r.t. its input."""
        for idx in range(self.n_layers - 1, -1, -1):
            if idx < self.n_layers - 1:
                dout = dout * (1.0 - acts[idx + 1] ** 2)  # tanh'
            grads[f"{prefix}_w{idx}"] += acts[idx].T @ dout
            grads[f"{prefix}_b{idx}"] += dout.sum(axis=0)
            dout = dout @ self.params[f"{prefix}_w{idx}"].T
        return dout

    def _loss_and_grads(self, hist, actions, rewards, dyn_targets):
        """Forward + hand-derived reverse pass.

        ``hist``: [B, S, enc_in]; ``dyn_targets``: [B, S-1, latent] constants.
        Returns (dyn_mse, rew_mse, grads) where grads maps parameter names
        to arrays of matching shape.
        """
        B, S, enc_in = hist.shape
        latent = self.config.latent_dim
        flat_hist = hist.reshape(B * S, enc_in)
        z = flat_hist @ self.params["enc_w"] + self.params["enc_b"]

        z_seq = z.reshape(B, S, latent)
        z_in = z_seq[:, :-1].reshape(B * (S - 1), latent)
        a_in = actions[:, :-1].reshape(B * (S - 1), -1)
        x_dyn = np.concatenate([z_in, a_in], axis=1)
        dyn_pred, dyn_acts = self._mlp_forward("dyn", x_dyn, keep=True)
        dyn_diff = dyn_pred - dyn_targets.reshape(B * (S - 1), latent)
        dyn_mse = float(np.mean(dyn_diff**2))

        rew_pred, rew_acts = self._mlp_forward("rew", z, keep=True)
        rew_diff = rew_pred[:, 0] - rewards.reshape(B * S)
        rew_mse = float(np.mean(rew_diff**2))

        grads = {k: np.zeros_like(v) for k, v in self.params.items()}

        d_dyn_out = (2.0 / dyn_diff.size) * dyn_diff
        d_x_dyn = self._mlp_backward("dyn", dyn_acts, d_dyn_out, grads)

        d_rew_out = ((2.0 / rew_diff.size) * rew_diff)[:, None]
        d_z = self._mlp_backward("rew", rew_acts, d_rew_out, grads)

        # latent gradient: reward head touches every step, dynamics input
        # touches steps 0..S-2; the (constant) dynamics target contributes none
        d_z_seq = d_z.reshape(B, S, latent)
        d_z_seq[:, :-1] += d_x_dyn[:, :latent].reshape(B, S - 1, latent)
        d_z_flat = d_z_seq.reshape(B * S, latent)

        grads["enc_w"] += flat_hist.T @ d_z_flat
        grads["enc_b"] += d_z_flat.sum(axis=0)
        return dyn_mse, rew_mse, grads

    def train_step(self, batch) -> dict:
        """One clipped momentum-SGD step on dyn_mse + rew_mse.

        Returns the pre-step losses; rew_mse is measured in reward_scale
        units (the scale the optimizer sees).
        """
        hist = np.asarray(batch.obs_hist, dtype=np.float64)
        actions = np.asarray(batch.actions, dtype=np.float64)
        rewards = np.asarray(batch.reward_smoothed, dtype=np.float64) / self.config.reward_scale
        if hist.ndim != 3 or hist.shape[1] < 2:
            raise InvalidInputError("batch needs [B, S>=2, enc_in] observation histories")

        B, S, enc_in = hist.shape
        z_seq = (hist.reshape(B * S, enc_in) @ self.params["enc_w"]
                 + self.params["enc_b"]).reshape(B, S, -1)
        dyn_targets = z_seq[:, 1:].copy()

        dyn_mse, rew_mse, grads = self._loss_and_grads(hist, actions, rewards, dyn_targets)
        if not (np.isfinite(dyn_mse) and np.isfinite(rew_mse)):
            raise TrainingDivergedError(
                f"non-finite loss on batch {getattr(batch, 'batch_id', '?')}: "
                f"dyn={dyn_mse} rew={rew_mse}"
            )

        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        scale = self.config.grad_clip / norm if norm > self.config.grad_clip else 1.0
        lr, mom = self.config.learning_rate, self.config.momentum
        decay = 1.0 - lr * self.config.weight_decay
        for name, g in grads.items():
            v = self.velocity[name]
            v *= mom
            v += g * scale
            self.params[name] -= lr * v
            if decay < 1.0 and "_w" in name and not name.startswith("enc"):
                self.params[name] *= decay  # dyn_w*/rew_w* matrices only

        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise TrainingDivergedError(
                    f"non-finite parameter {name} after batch "
                    f"{getattr(batch, 'batch_id', '?')}"
                )
        self.train_steps += 1
        return {"dyn_mse": dyn_mse, "rew_mse": rew_mse}

    # ------------------------------------------------------------ persistence

    def save_bytes(self) -> bytes:
        """Versioned checkpoint blob: magic, JSON header, little-endian float64 data."""
        names = sorted(self.params)
        header = {
            "version": 1,
            "config": asdict(self.config),
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "params": [[n, list(self.params[n].shape)] for n in names],
            "train_steps": self.train_steps,
            "rng_state": self.rng.bit_generator.state,
        }
        payload = json.dumps(header, sort_keys=True).encode()
        chunks = [CHECKPOINT_MAGIC, struct.pack("<Q", len(payload)), payload]
        for n in names:
            chunks.append(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes())
        for n in names:
            chunks.append(np.ascontiguousarray(self.velocity[n], dtype="<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def load_bytes(cls, blob: bytes) -> "WorldModel":
        if blob[:5] != CHECKPOINT_MAGIC:
            raise InvalidInputError("not a model checkpoint (bad magic)")
        (hlen,) = struct.unpack("<Q", blob[5:13])
        header = json.loads(blob[13:13 + hlen])
        if header["version"] != 1:
            raise InvalidInputError(f"unsupported checkpoint version {header['version']}")
        cfg = ModelConfig(**header["config"])
        model = cls(cfg, header["obs_dim"], header["action_dim"])
        offset = 13 + hlen
        for n, shape in header["params"]:
            size = int(np.prod(shape)) * 8
            model.params[n] = np.frombuffer(
                blob[offset:offset + size], dtype="<f8"
            ).reshape(shape).copy()
            offset += size
        for n, shape in header["params"]:
            size = int(np.prod(shape)) * 8
            model.velocity[n] = np.frombuffer(
                blob[offset:offset + size], dtype="<f8"
            ).reshape(shape).copy()
            offset += size
        model.train_steps = int(header["train_steps"])
        model.rng.bit_generator.state = header["rng_state"]
        return model

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.save_bytes())

    @classmethod
    def load(cls, path) -> "WorldModel":
        with open(path, "rb") as fh:
            return cls.load_bytes(fh.read())

    def clone(self) -> "WorldModel":
        """Read-only usable snapshot for planners (copy-on-publish)."""
        return WorldModel.load_bytes(self.save_bytes())
