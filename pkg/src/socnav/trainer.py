"""Training pipeline: offline pre-training, online fine-tuning, evaluation.

Offline phase: alternating minibatch updates of the policy (conditioned on
stored Monte-Carlo return labels) and the return predictor (regressed onto
the same labels), with early stopping on a loss plateau. The environment
is never touched.

Online phase, per episode: roll out the current policy with live return
conditioning, insert the finished trajectory into the hybrid buffer,
sample trajectories by priority, update the return predictor once per
sampled trajectory (fast timescale, transition minibatches), then update
the policy once (slow timescale, context windows re-conditioned with
fresh return predictions).

Evaluation runs greedy rollouts on a disjoint seed range and reports the
standard metrics plus sampling efficiency: mean return divided by the
number of environment transitions consumed during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .core import Status
from .dataset import Trajectory, compute_rtg, dumps_lossless
from .env import CrowdEnv
from .features import clip_action_norm
from .nn import ParamStore, lamb_step
from .policy import Actor, DtPolicy, stack_sequences, tokenize
from .replay import HybridBuffer, TimescaleSchedule
from .rtgp import RtgPredictor

REPORT_SCHEMA = 1
ITERS_PER_EPOCH = 50

# stage seed offsets (one global seed reproduces each stage independently)
SEED_DATA = 1_000_000
SEED_MODEL_INIT = 2_000_000
SEED_PRETRAIN = 3_000_000
SEED_FINETUNE = 4_000_000
SEED_EVAL = 9_000_000


class TrainingAborted(RuntimeError):
    """Loss went non-finite; carries the last finite parameter stores."""

    def __init__(self, message, policy_store, rtgp_store):
        super().__init__(message)
        self.policy_store = policy_store
        self.rtgp_store = rtgp_store


def build_models(cfg: Config) -> tuple[DtPolicy, RtgPredictor]:
    net, sim = cfg.net, cfg.sim
    policy = DtPolicy(num_peds=sim.num_peds, context=net.policy_context,
                      hidden_dim=net.hidden_dim, num_heads=net.num_heads,
                      ffn_dim=net.ffn_dim, num_blocks=net.policy_blocks,
                      v_max=sim.v_max)
    rtgp = RtgPredictor(num_peds=sim.num_peds, window=net.rtgp_window,
                        hidden_dim=net.hidden_dim, num_heads=net.num_heads,
                        ffn_dim=net.ffn_dim, head_hidden=net.head_hidden)
    return policy, rtgp


# -- batch assembly ---------------------------------------------------------


def policy_batch_from(trajs_ends, policy: DtPolicy, conditioning: str,
                      rtg_sequences=None):
    """Stack context windows for a policy update.

    conditioning "labels" copies stored returns; "sequence" uses the
    supplied per-trajectory conditioning arrays (predictor outputs or
    ablation values), indexed like trajs_ends.
    """
    seqs, targets = [], []
    for i, (traj, end) in enumerate(trajs_ends):
        rtg_seq = traj.rtg if conditioning == "labels" else rtg_sequences[i]
        seq = tokenize(traj.states, traj.actions, traj.rewards, end=end,
                       context=policy.context, num_peds=policy.num_peds,
                       rtg_source="labels", rtg_labels=traj.rtg,
                       rtg_sequence=rtg_seq)
        seqs.append(seq)
        lo = max(0, end - policy.context + 1)
        pad = policy.context - (end - lo + 1)
        tgt = np.zeros((policy.context, 2))
        tgt[pad:] = clip_action_norm(traj.actions[lo:end + 1], policy.v_max)
        targets.append(tgt)
    return stack_sequences(seqs), np.stack(targets)


def rtgp_batch_from(trajs_ends, rtgp: RtgPredictor):
    episodes = [(t.states, t.actions, t.rewards) for t, _ in trajs_ends]
    ends = [e for _, e in trajs_ends]
    targets = np.array([t.rtg[e] for t, e in trajs_ends])
    return rtgp.window_batch(episodes, ends), targets


# -- offline pre-training ---------------------------------------------------


@dataclass
class PretrainResult:
    policy_store: ParamStore
    rtgp_store: ParamStore
    policy_losses: list
    rtgp_losses: list
    iterations: int
    env_transitions: int = 0   # offline phase never touches the environment


def _plateaued(epoch_losses, patience: int, delta: float) -> bool:
    if len(epoch_losses) < patience + 1:
        return False
    recent_best = min(epoch_losses[-patience:])
    earlier_best = min(epoch_losses[:-patience])
    return earlier_best - recent_best < delta


def pretrain_offline(trajectories: list[Trajectory], cfg: Config,
                     seed: int | None = None) -> PretrainResult:
    """Alternating policy / return-predictor updates on the offline data."""
    if not trajectories:
        raise ValueError("pretraining needs a non-empty dataset")
    train = cfg.train
    seed = cfg.seed if seed is None else seed
    policy, rtgp = build_models(cfg)
    policy_store = policy.init_store(seed + SEED_MODEL_INIT)
    rtgp_store = rtgp.init_store(seed + SEED_MODEL_INIT + 1)
    rng = np.random.default_rng(seed + SEED_PRETRAIN)

    n = len(trajectories)
    policy_losses, rtgp_losses = [], []
    epoch_pol, epoch_rtg = [], []
    last_good = None
    iters = 0
    for it in range(train.pretrain_iters):
        picks = rng.integers(0, n, size=train.policy_batch)
        ends = [int(rng.integers(0, trajectories[int(i)].num_steps)) for i in picks]
        trajs_ends = [(trajectories[int(i)], e) for i, e in zip(picks, ends)]
        batch, targets = policy_batch_from(trajs_ends, policy, "labels")
        pol_loss, _ = policy.loss_and_grad(policy_store, batch, targets)

        picks = rng.integers(0, n, size=train.rtgp_fast_batch)
        ends = [int(rng.integers(0, trajectories[int(i)].num_steps)) for i in picks]
        trajs_ends = [(trajectories[int(i)], e) for i, e in zip(picks, ends)]
        rbatch, rtargets = rtgp_batch_from(trajs_ends, rtgp)
        rtg_loss, _ = rtgp.loss_and_grad(rtgp_store, rbatch, rtargets)

        if not (math.isfinite(pol_loss) and math.isfinite(rtg_loss)):
            ps, rs = last_good if last_good else (policy_store, rtgp_store)
            raise TrainingAborted(f"non-finite loss at iteration {it}", ps, rs)
        lamb_step(policy_store, train.learning_rate)
        lamb_step(rtgp_store, train.learning_rate)
        policy_losses.append(pol_loss)
        rtgp_losses.append(rtg_loss)
        iters = it + 1

        if iters % ITERS_PER_EPOCH == 0:
            epoch_pol.append(float(np.mean(policy_losses[-ITERS_PER_EPOCH:])))
            epoch_rtg.append(float(np.mean(rtgp_losses[-ITERS_PER_EPOCH:])))
            last_good = (policy_store.copy(), rtgp_store.copy())
            if (_plateaued(epoch_pol, train.pretrain_patience, train.plateau_delta)
                    and _plateaued(epoch_rtg, train.pretrain_patience,
                                   train.plateau_delta)):
                break

    return PretrainResult(policy_store=policy_store, rtgp_store=rtgp_store,
                          policy_losses=policy_losses, rtgp_losses=rtgp_losses,
                          iterations=iters)


# -- online fine-tuning ------------------------------------------------------


@dataclass
class EpisodeLog:
    seed: int
    outcome: str
    steps: int
    duration: float
    episode_return: float
    sampled: int
    fast_updates: int
    slow_updates: int


@dataclass
class FinetuneResult:
    policy_store: ParamStore
    rtgp_store: ParamStore
    episodes: list
    env_transitions: int
    rtg_mode: str

    def returns(self):
        return [e.episode_return for e in self.episodes]

    def success_window(self, width: int = 100):
        """Moving success rate over trailing `width` episodes."""
        flags = [1.0 if e.outcome == "success" else 0.0 for e in self.episodes]
        out = []
        for i in range(len(flags)):
            lo = max(0, i - width + 1)
            out.append(sum(flags[lo:i + 1]) / (i - lo + 1))
        return out


def run_policy_episode(env: CrowdEnv, actor: Actor, seed: int, gamma: float,
                       record_world: bool = False):
    """One greedy rollout of the conditioned policy; returns a labelled
    trajectory (plus the world-coordinate log when requested)."""
    obs = env.reset(seed)
    actor.begin_episode()
    states, actions, rewards = [], [], []
    world = [env.world_positions()] if record_world else []
    while env.status is Status.RUNNING:
        joint = obs.joint
        action = actor.act(joint)
        out = env.step(action)
        actor.observe(action, out.reward)
        states.append(joint)
        actions.append(action)
        rewards.append(out.reward)
        obs = out.observation
        if record_world:
            world.append(env.world_positions())
    rewards = np.asarray(rewards)
    traj = Trajectory(states=np.asarray(states), actions=np.asarray(actions),
                      rewards=rewards, rtg=compute_rtg(rewards, gamma),
                      outcome={Status.GOAL: "success", Status.COLLISION: "collision",
                               Status.TIMEOUT: "timeout"}[env.status],
                      duration=env.time, seed=seed)
    return (traj, world) if record_world else (traj, None)


def finetune_online(policy_store: ParamStore, rtgp_store: ParamStore,
                    offline: list[Trajectory], cfg: Config,
                    seed: int | None = None, episodes: int | None = None,
                    rtg_mode: str | None = None) -> FinetuneResult:
    """Hybrid-replay fine-tuning with dual-timescale updates.

    rtg_mode "rtgp" is the full method; "fixed" is the fixed-target
    conditioning ablation (the return predictor is neither queried nor
    updated, and policy updates condition on stored return labels, which
    is how a fixed-target method trains online).
    """
    train, sim = cfg.train, cfg.sim
    seed = cfg.seed if seed is None else seed
    episodes = train.finetune_episodes if episodes is None else episodes
    episodes = min(episodes, train.max_episodes)
    rtg_mode = train.rtg_mode if rtg_mode is None else rtg_mode

    policy, rtgp = build_models(cfg)
    env = CrowdEnv(sim)
    buffer = HybridBuffer(offline, capacity=train.buffer_capacity)
    schedule = TimescaleSchedule(fast_per_episode=train.sampled_trajs)
    rng = np.random.default_rng(seed + SEED_FINETUNE)
    actor = Actor(policy, policy_store, rtg_source=rtg_mode,
                  rtgp=rtgp if rtg_mode == "rtgp" else None,
                  rtgp_store=rtgp_store if rtg_mode == "rtgp" else None,
                  fixed_target=train.fixed_rtg_target)

    logs = []
    env_transitions = 0
    for e in range(episodes):
        ep_seed = seed + SEED_FINETUNE + 1 + e
        try:
            traj, _ = run_policy_episode(env, actor, ep_seed, train.gamma)
        except (RuntimeError, ValueError):
            logs.append(EpisodeLog(seed=ep_seed, outcome="discarded", steps=0,
                                   duration=0.0, episode_return=0.0, sampled=0,
                                   fast_updates=0, slow_updates=0))
            continue
        env_transitions += traj.num_steps
        buffer.insert(traj)

        sampled = buffer.sample_trajectories(train.sampled_trajs, rng)
        num_fast, num_slow = schedule.tick(e)
        assert num_fast == len(sampled)

        fast_done = 0
        if rtg_mode == "rtgp":
            for tau in sampled:
                ends = rng.integers(0, tau.num_steps, size=train.rtgp_fast_batch)
                trajs_ends = [(tau, int(u)) for u in ends]
                rbatch, rtargets = rtgp_batch_from(trajs_ends, rtgp)
                rtgp.loss_and_grad(rtgp_store, rbatch, rtargets)
                lamb_step(rtgp_store, train.learning_rate)
                fast_done += 1
        else:
            fast_done = len(sampled)  # schedule slots consumed, no predictor to train

        # slow policy update on windows from the sampled trajectories,
        # conditioned on fresh return predictions (post fast updates)
        if rtg_mode == "rtgp":
            sequences = [rtgp.predict_sequence(rtgp_store, t.states, t.actions,
                                               t.rewards) for t in sampled]
            conditioning = "sequence"
        else:
            sequences = [t.rtg for t in sampled]
            conditioning = "labels"
        picks = rng.integers(0, len(sampled), size=train.policy_batch)
        ends = [int(rng.integers(0, sampled[int(i)].num_steps)) for i in picks]
        trajs_ends = [(sampled[int(i)], u) for i, u in zip(picks, ends)]
        seq_for = [sequences[int(i)] for i in picks]
        batch, targets = policy_batch_from(trajs_ends, policy, "sequence",
                                           rtg_sequences=seq_for)
        pol_loss, _ = policy.loss_and_grad(policy_store, batch, targets)
        if not math.isfinite(pol_loss):
            raise TrainingAborted(f"non-finite policy loss at episode {e}",
                                  policy_store, rtgp_store)
        lamb_step(policy_store, train.learning_rate)

        logs.append(EpisodeLog(seed=ep_seed, outcome=traj.outcome,
                               steps=traj.num_steps, duration=traj.duration,
                               episode_return=traj.episode_return,
                               sampled=len(sampled), fast_updates=fast_done,
                               slow_updates=num_slow))
    return FinetuneResult(policy_store=policy_store, rtgp_store=rtgp_store,
                          episodes=logs, env_transitions=env_transitions,
                          rtg_mode=rtg_mode)


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalReport:
    """Evaluation metrics over a seeded episode batch."""

    success_rate: float
    collision_rate: float
    timeout_rate: float
    mean_nav_time: float | None
    mean_return: float
    sampling_efficiency: float | None   # mean_return / train_transitions
    train_transitions: int
    num_episodes: int
    rtg_mode: str
    per_episode: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA,
                "success_rate": self.success_rate,
                "collision_rate": self.collision_rate,
                "timeout_rate": self.timeout_rate,
                "mean_nav_time": self.mean_nav_time,
                "mean_return": self.mean_return,
                "sampling_efficiency": self.sampling_efficiency,
                "train_transitions": self.train_transitions,
                "num_episodes": self.num_episodes,
                "rtg_mode": self.rtg_mode,
                "per_episode": self.per_episode}

    def to_json(self) -> str:
        return dumps_lossless(self.to_dict()) + "\n"


def sampling_efficiency(mean_return: float, train_transitions: int) -> float | None:
    """Mean evaluation return per environment transition consumed in training."""
    if train_transitions <= 0:
        return None
    return mean_return / train_transitions


# -- checkpoint bundle (policy + return predictor in one file) ---------------

BUNDLE_MAGIC = b"SOCNAV-BUNDLE-1\n"


def save_bundle(path, policy_store: ParamStore, rtgp_store: ParamStore,
                meta: dict | None = None):
    """One file holding both parameter stores plus run metadata; the bytes
    are a pure function of the contents."""
    import json as _json
    import struct as _struct
    p = policy_store.to_bytes(extra={"role": "policy"})
    r = rtgp_store.to_bytes(extra={"role": "rtgp"})
    header = _json.dumps({"format": 1, "meta": meta or {},
                          "policy_len": len(p), "rtgp_len": len(r)},
                         sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(_struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(p)
        fh.write(r)


def load_bundle(path):
    import json as _json
    import struct as _struct
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(BUNDLE_MAGIC)] != BUNDLE_MAGIC:
        raise ValueError(f"{path}: not a checkpoint bundle")
    off = len(BUNDLE_MAGIC)
    (hlen,) = _struct.unpack("<Q", data[off:off + 8])
    off += 8
    header = _json.loads(data[off:off + hlen].decode())
    off += hlen
    policy_store, _, _ = ParamStore.from_bytes(data[off:off + header["policy_len"]])
    off += header["policy_len"]
    rtgp_store, _, _ = ParamStore.from_bytes(data[off:off + header["rtgp_len"]])
    return policy_store, rtgp_store, header["meta"]


def evaluate(policy_store: ParamStore, rtgp_store: ParamStore | None, cfg: Config,
             num_episodes: int, seed: int | None = None,
             rtg_mode: str | None = None, train_transitions: int = 0,
             record_world: bool = False) -> tuple[EvalReport, list]:
    """Greedy seeded rollouts on the evaluation seed range (disjoint from
    training seeds by construction)."""
    train = cfg.train
    seed = cfg.seed if seed is None else seed
    rtg_mode = train.rtg_mode if rtg_mode is None else rtg_mode
    policy, rtgp = build_models(cfg)
    env = CrowdEnv(cfg.sim)
    actor = Actor(policy, policy_store, rtg_source=rtg_mode,
                  rtgp=rtgp if rtg_mode == "rtgp" else None,
                  rtgp_store=rtgp_store if rtg_mode == "rtgp" else None,
                  fixed_target=train.fixed_rtg_target)

    per_episode, worlds = [], []
    returns, times = [], []
    counts = {"success": 0, "collision": 0, "timeout": 0}
    for e in range(num_episodes):
        ep_seed = seed + SEED_EVAL + e
        traj, world = run_policy_episode(env, actor, ep_seed, train.gamma,
                                         record_world=record_world)
        counts[traj.outcome] += 1
        returns.append(traj.episode_return)
        if traj.outcome == "success":
            times.append(traj.duration)
        per_episode.append({"seed": ep_seed, "outcome": traj.outcome,
                            "steps": traj.num_steps, "duration": traj.duration,
                            "return": traj.episode_return})
        if record_world:
            worlds.append(world)

    mean_return = float(np.mean(returns)) if returns else 0.0
    report = EvalReport(
        success_rate=counts["success"] / num_episodes,
        collision_rate=counts["collision"] / num_episodes,
        timeout_rate=counts["timeout"] / num_episodes,
        mean_nav_time=float(np.mean(times)) if times else None,
        mean_return=mean_return,
        sampling_efficiency=sampling_efficiency(mean_return, train_transitions),
        train_transitions=train_transitions,
        num_episodes=num_episodes, rtg_mode=rtg_mode, per_episode=per_episode)
    return report, worlds
