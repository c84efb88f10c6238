"""Per-image pixel-wise actor-critic deraining.

One shared fully-convolutional network drives an agent at every pixel.
During a rollout the agents pick filtering actions, masked pixels take the
chosen action's output, unmasked pixels are pinned to the input, and each
step is rewarded by (a) the per-pixel squared-error drop against a freshly
sampled pseudo-derained reference and (b) a no-reference quality-score
drop shared across pixels. Episodic n-step returns feed a squared value
loss and an advantage-weighted policy-gradient loss; Adam with global
gradient clipping updates the shared weights. Inference runs the greedy
policy for a fixed number of steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .brisque import ScorerModel, brisque_score
from .filters import N_ACTIONS, masked_action_values
from .image import new_image
from .nn import (
    AdamState,
    NetworkParams,
    adam_update,
    backward_full,
    forward_full,
    init_networks,
    log_softmax,
    softmax,
)
from .pseudoref import SamplerConfig, sample_pseudo_reference


@dataclass(frozen=True)
class TrainConfig:
    """Per-image training hyperparameters.

    The learning rate decays as lr0 * (1 - episode / max_episode) ** 0.9.
    `lambda_brisque` weights the quality-score reward against the
    squared-error reward. `brisque_every` evaluates the quality score only
    every k-th step (1 = every step); `trunk_channels` / `head_channels`
    size the network, and the gradient checks run it in float64 via
    `dtype`.
    """

    t_max: int = 15
    episodes: int = 100
    max_episode: int = 150
    lr0: float = 1e-3
    gamma: float = 0.95
    lambda_brisque: float = 0.025
    seed: int = 0
    entropy_weight: float = 0.0
    ref_radius: int = 5
    image_channels: int = 3
    trunk_channels: int = 32
    head_channels: int = 32
    n_actions: int = N_ACTIONS
    brisque_every: int = 1
    log_brisque_every: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.episodes > self.max_episode:
            raise ValueError(
                f"episodes ({self.episodes}) must not exceed max_episode ({self.max_episode})"
            )
        if self.t_max < 1 or self.max_episode < 1:
            raise ValueError("t_max and max_episode must be >= 1")
        if self.episodes < 0 or self.lr0 <= 0 or self.lambda_brisque < 0:
            raise ValueError("episodes >= 0, lr0 > 0, lambda_brisque >= 0 required")
        if self.ref_radius < 1 or self.brisque_every < 1 or self.log_brisque_every < 1:
            raise ValueError("ref_radius, brisque_every, log_brisque_every must be >= 1")
        if self.trunk_channels < 1 or self.head_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if np.dtype(self.dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")


@dataclass
class StepRecord:
    """One time step of a rollout (state before acting, per-pixel data)."""

    state: np.ndarray          # (H, W, C)
    actions: np.ndarray        # (H, W) in 1..n_actions
    reward: np.ndarray         # (H, W)
    value: np.ndarray          # (H, W)
    policy_logits: np.ndarray  # (H, W, A)


@dataclass
class Trajectory:
    steps: list[StepRecord]
    bootstrap_value: np.ndarray  # (H, W), value of the state after the last step
    mask: np.ndarray             # (H, W) bool, fixed for the whole episode
    # Per-step forward activations, retained only when the rollout was asked
    # to keep them (training fast path; numerically identical to recomputing).
    caches: list | None = None


def build_input(state: np.ndarray, mask: np.ndarray, dtype) -> np.ndarray:
    """(C+1, H, W) network input: color planes plus the binary mask plane."""
    h, w, c = state.shape
    x = np.empty((c + 1, h, w), dtype=dtype)
    x[:c] = state.transpose(2, 0, 1)
    x[c] = mask
    return x


def forward(state: np.ndarray, mask: np.ndarray, params: NetworkParams):
    """Per-pixel action distribution (H, W, A) and value map (H, W)."""
    state = np.asarray(state)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != state.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match state {state.shape[:2]}")
    x = build_input(state, mask, params.dtype)
    if x.shape[0] != params.in_channels:
        raise ValueError(
            f"network expects {params.in_channels} input channels, state+mask give {x.shape[0]}"
        )
    cache = forward_full(params, x, want_value=True)
    return softmax(cache.logits).transpose(1, 2, 0), cache.value


def select_actions(policy: np.ndarray, mode: str, seed: int = 0, draw: int = 0) -> np.ndarray:
    """Action map from per-pixel distributions.

    "greedy" takes the argmax (ties to the lowest index); "sample" draws
    per pixel from a counter-based stream keyed by (seed, draw).
    """
    policy = np.asarray(policy)
    if mode == "greedy":
        return np.argmax(policy, axis=-1).astype(np.int64) + 1
    if mode != "sample":
        raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    h, w, _a = policy.shape
    u = rng.stream_rng(seed, rng.STREAM_ACTIONS, draw).random((h, w))
    cum = np.cumsum(policy.astype(np.float64), axis=-1)
    idx = np.sum(cum < u[:, :, None], axis=-1)
    return np.minimum(idx, policy.shape[-1] - 1).astype(np.int64) + 1


def step_state(
    state: np.ndarray, actions: np.ndarray, mask: np.ndarray, original: np.ndarray
) -> np.ndarray:
    """Advance the image one step.

    Masked pixels take their chosen action's output (filters see the full
    current state); unmasked pixels are reset to the original input, so
    off-mask values never drift.
    """
    state = np.asarray(state)
    actions = np.asarray(actions)
    mask = np.asarray(mask, dtype=bool)
    out = np.array(original, copy=True)
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return out
    candidates = masked_action_values(state, ys, xs)  # (A, n, C)
    picked = candidates[actions[ys, xs] - 1, np.arange(len(ys))]
    out[ys, xs] = picked
    return out


def mse_reward(y_pr: np.ndarray, s_t: np.ndarray, s_next: np.ndarray) -> np.ndarray:
    """Per-pixel squared-error drop toward the reference, summed over channels."""
    if y_pr.shape != s_t.shape or s_t.shape != s_next.shape:
        raise ValueError(
            f"shape mismatch: reference {y_pr.shape}, state {s_t.shape}, next {s_next.shape}"
        )
    d0 = y_pr - s_t
    d1 = y_pr - s_next
    return (d0 * d0).sum(axis=-1) - (d1 * d1).sum(axis=-1)


def brisque_reward(s_t: np.ndarray, s_next: np.ndarray, model: ScorerModel) -> float:
    """Quality-score drop; positive when the step improved the image."""
    return brisque_score(new_image(s_t), model) - brisque_score(new_image(s_next), model)


def total_reward(mse: np.ndarray, brisque: float, lam: float) -> np.ndarray:
    """Combined per-pixel reward: mse + lam * brisque (scalar broadcast)."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return mse + np.asarray(lam * brisque, dtype=mse.dtype)


def rollout(
    img: np.ndarray,
    mask: np.ndarray,
    params: NetworkParams,
    cfg: TrainConfig,
    scorer: ScorerModel | None,
    episode_draw: int,
    collect_caches: bool = False,
) -> Trajectory:
    """Collect one episode of t_max steps with per-step reference resampling."""
    dtype = params.dtype
    original = np.ascontiguousarray(img, dtype=dtype)
    mask = np.asarray(mask, dtype=bool)
    state = original.copy()
    mask_plane = mask.astype(dtype)
    sampler = SamplerConfig(radius=cfg.ref_radius, seed=cfg.seed)

    use_brisque = cfg.lambda_brisque > 0 and scorer is not None
    score_prev = brisque_score(new_image(state), scorer) if use_brisque else 0.0

    steps: list[StepRecord] = []
    caches = [] if collect_caches else None
    for t in range(cfg.t_max):
        reference = sample_pseudo_reference(original, mask, sampler, episode_draw * cfg.t_max + t)
        cache = forward_full(params, build_input(state, mask_plane, dtype), want_value=True)
        probs = softmax(cache.logits).transpose(1, 2, 0)
        actions = select_actions(probs, "sample", cfg.seed, episode_draw * cfg.t_max + t)
        next_state = step_state(state, actions, mask, original)

        reward = mse_reward(reference, state, next_state)
        rb = 0.0
        if use_brisque and (t + 1) % cfg.brisque_every == 0:
            score_next = brisque_score(new_image(next_state), scorer)
            rb = score_prev - score_next
            score_prev = score_next
        reward = total_reward(reward, rb, cfg.lambda_brisque)

        steps.append(
            StepRecord(
                state=state,
                actions=actions,
                reward=reward,
                value=cache.value,
                policy_logits=cache.logits.transpose(1, 2, 0),
            )
        )
        if collect_caches:
            caches.append(cache)
        state = next_state

    bootstrap = forward_full(params, build_input(state, mask_plane, dtype), want_value=True).value
    return Trajectory(steps=steps, bootstrap_value=bootstrap, mask=mask, caches=caches)


def n_step_returns(traj: Trajectory, gamma: float) -> np.ndarray:
    """(T, H, W) discounted returns, bootstrapped from the terminal value."""
    t_max = len(traj.steps)
    out = np.empty((t_max,) + traj.bootstrap_value.shape, dtype=traj.bootstrap_value.dtype)
    tail = traj.bootstrap_value
    for t in range(t_max - 1, -1, -1):
        tail = traj.steps[t].reward + gamma * tail
        out[t] = tail
    return out


def losses(traj: Trajectory, returns: np.ndarray, entropy_weight: float = 0.0):
    """(value_loss, policy_loss) of a recorded trajectory.

    Value loss averages the squared return error over pixels and sums over
    steps; the policy loss sums -log pi(a) * advantage over pixels and
    steps, with the advantage treated as a constant. A positive
    entropy_weight subtracts the summed policy entropy from the policy
    loss.
    """
    value_loss = 0.0
    policy_loss = 0.0
    for t, step in enumerate(traj.steps):
        adv = returns[t].astype(np.float64) - step.value.astype(np.float64)
        value_loss += float(np.mean(adv * adv))
        logits = step.policy_logits.transpose(2, 0, 1)
        logp = log_softmax(logits.astype(np.float64))
        h, w = step.actions.shape
        taken = logp[step.actions - 1, np.arange(h)[:, None], np.arange(w)[None, :]]
        policy_loss -= float(np.sum(taken * adv))
        if entropy_weight > 0:
            p = softmax(logits.astype(np.float64))
            entropy = -np.sum(p * np.log(np.maximum(p, 1e-300)), axis=0)
            policy_loss -= entropy_weight * float(np.sum(entropy))
    return value_loss, policy_loss


def backprop_and_update(
    params: NetworkParams,
    traj: Trajectory,
    returns: np.ndarray,
    opt_state: AdamState,
    lr: float,
    entropy_weight: float = 0.0,
) -> None:
    """One Adam step on the summed value and policy losses of an episode.

    Per-step activations come from the rollout when the trajectory kept
    them; otherwise they are recomputed from the recorded states, which is
    bitwise identical to the rollout's forward passes. Gradients are
    accumulated across steps, clipped at global norm 40, and applied in
    place.
    """
    dtype = params.dtype
    mask_plane = traj.mask.astype(dtype)
    grads: dict[str, np.ndarray] = {}
    n_pixels = float(traj.mask.size)

    for t, step in enumerate(traj.steps):
        if traj.caches is not None:
            cache = traj.caches[t]
        else:
            x = build_input(step.state, mask_plane, dtype)
            cache = forward_full(params, x, want_value=True)
        probs = softmax(cache.logits)
        adv = (returns[t] - cache.value).astype(dtype)

        # d(-log pi(a) * A)/dlogits = A * (pi - onehot(a))
        dlogits = probs * adv[None]
        h, w = step.actions.shape
        rows = np.arange(h)[:, None]
        cols = np.arange(w)[None, :]
        dlogits[step.actions - 1, rows, cols] -= adv
        if entropy_weight > 0:
            logp = log_softmax(cache.logits)
            entropy = -np.sum(probs * logp, axis=0)
            dlogits += entropy_weight * probs * (logp + entropy[None])
        dvalue = ((2.0 / n_pixels) * (cache.value - returns[t])).astype(dtype)

        for name, g in backward_full(params, cache, dlogits, dvalue).items():
            if name in grads:
                grads[name] += g
            else:
                grads[name] = g

    adam_update(params, grads, opt_state, lr)


def learning_rate(cfg: TrainConfig, episode: int) -> float:
    """Polynomial decay: lr0 * (1 - episode / max_episode) ** 0.9."""
    return cfg.lr0 * (1.0 - episode / cfg.max_episode) ** 0.9


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    lr: float
    value_loss: float
    policy_loss: float
    mean_reward: float
    brisque: float


@dataclass
class TrainLog:
    rows: list[EpisodeLog] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("episode,lr,value_loss,policy_loss,mean_reward,brisque\n")
            for r in self.rows:
                fh.write(
                    f"{r.episode},{r.lr!r},{r.value_loss!r},{r.policy_loss!r},"
                    f"{r.mean_reward!r},{r.brisque!r}\n"
                )


def train(
    img: np.ndarray,
    mask: np.ndarray,
    cfg: TrainConfig,
    scorer: ScorerModel | None = None,
) -> tuple[NetworkParams, TrainLog]:
    """Train per-image agents; deterministic given cfg.seed.

    Episode e runs at learning rate lr0 * (1 - e / max_episode) ** 0.9.
    The log records losses, mean reward, and the quality score of the
    current greedy output (refreshed every log_brisque_every episodes).
    """
    img = new_image(img)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    params = init_networks(cfg, in_channels=img.shape[2] + 1)
    opt_state = AdamState()
    log = TrainLog()
    last_brisque = math.nan

    # Keeping rollout activations for the update saves one forward pass per
    # step; fall back to recomputation (numerically identical) when the
    # retained activations would not fit comfortably in memory.
    cache_bytes = cfg.t_max * 12 * cfg.trunk_channels * img.shape[0] * img.shape[1]
    cache_bytes *= np.dtype(cfg.dtype).itemsize
    collect = cache_bytes < 2 * 1024**3

    for e in range(cfg.episodes):
        lr = learning_rate(cfg, e)
        traj = rollout(img, mask, params, cfg, scorer, episode_draw=e, collect_caches=collect)
        returns = n_step_returns(traj, cfg.gamma)
        value_loss, policy_loss = losses(traj, returns, cfg.entropy_weight)
        backprop_and_update(params, traj, returns, opt_state, lr, cfg.entropy_weight)
        traj.caches = None  # retained activations are dead after the update

        if scorer is not None and (e % cfg.log_brisque_every == 0 or e == cfg.episodes - 1):
            last_brisque = brisque_score(derain(img, mask, params, cfg.t_max), scorer)
        mean_reward = float(np.mean([np.mean(s.reward) for s in traj.steps]))
        log.rows.append(
            EpisodeLog(
                episode=e,
                lr=lr,
                value_loss=value_loss,
                policy_loss=policy_loss,
                mean_reward=mean_reward,
                brisque=last_brisque,
            )
        )
    return params, log


def derain(img: np.ndarray, mask: np.ndarray, params: NetworkParams, t_max: int = 15) -> np.ndarray:
    """Greedy inference: t_max argmax steps; off-mask pixels equal the input."""
    img = new_image(img)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if t_max == 0:
        return img.copy()
    dtype = params.dtype
    original = np.ascontiguousarray(img, dtype=dtype)
    state = original.copy()
    mask_plane = mask.astype(dtype)
    for _ in range(t_max):
        cache = forward_full(params, build_input(state, mask_plane, dtype), want_value=False)
        actions = np.argmax(cache.logits, axis=0).astype(np.int64) + 1
        state = step_state(state, actions, mask, original)
    out = img.copy()
    out[mask] = np.clip(state[mask].astype(np.float64), 0.0, 1.0)
    return out
