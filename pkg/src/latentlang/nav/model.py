"""Instruction-conditioned navigation policy and its training loops.

The policy scores each action with a bilinear form between the encoded
instruction and a conv-net encoding of the egocentric observation:
f(a | x; w) proportional to enc(w)^T W_a rep(x). Pretraining imitates
per-task experts with DAgger; the description prior is an unconditional
language model over pretraining instructions. New tasks are solved by
sampling instructions from the prior, scoring each by Monte Carlo
reward, keeping the best, and optionally fine-tuning with REINFORCE.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError
from ..optim import AdamState, adam_step
from ..params import ParameterStore
from ..protocol import (DomainAdapter, ModelBundle, TaskDataset, concept_learn)
from ..seeding import derive_rng
from ..seq import (EOS, decode_logprob, decode_sample, decoder_view, gru_view,
                   init_decoder, init_gru, pad_batch, rnn_encode)
from .world import (ACTIONS, DIG, OBS_CHANNELS, OBS_WINDOW, MapSampler,
                    NavEnv, expert_action, nav_vocab, run_episode,
                    sample_start)

__all__ = [
    "NavAdapter", "NavTrainConfig", "FinetuneConfig", "nav_pretrain",
    "dagger_pretrain", "fit_prior", "expert_agreement", "estimate_reward",
    "finetune_policy_gradient", "refit_embedding_rl", "nav_run_task",
    "rl_multitask_run_task", "rl_scratch_run_task", "CurvePoint",
]

KERNEL = 3
N_ACTIONS = len(ACTIONS)


@dataclass
class NavTrainConfig:
    """DAgger + prior-LM pretraining knobs."""
    epochs: int = 10
    episodes_per_task: int = 4
    steps_per_epoch: int = 120
    batch_rows: int = 512
    step_size: float = 0.001
    expert_decay: float = 0.95
    prior_steps: int = 400
    prior_step_size: float = 0.005
    prior_batch: int = 32


@dataclass
class FinetuneConfig:
    """REINFORCE knobs; budgets are counted in episodes."""
    batches: int = 10
    batch_episodes: int = 100
    step_size: float = 0.001
    gamma: float = 0.9


@dataclass
class CurvePoint:
    """One reward-curve row; the phase column marks the selection boundary."""
    phase: str  # "concept-learning" or "fine-tuning"
    batch: int
    episodes_consumed: int
    mean_reward: float
    ci95_low: float
    ci95_high: float


def _ci95(rewards: np.ndarray) -> tuple[float, float]:
    m = float(rewards.mean())
    if len(rewards) < 2:
        return m, m
    half = 1.96 * rewards.std(ddof=1) / np.sqrt(len(rewards))
    return m - half, m + half


class NavAdapter(DomainAdapter):
    """Navigation instantiation of the protocol's concept phase.

    Pretraining does not flow through the generic language_learn (the
    interpretation model learns from environment interaction, not a
    fixed batch stream), so the supervised-batch hooks raise; concept
    learning and evaluation reuse the shared protocol unchanged, with
    hypothesis "loss" equal to negative estimated reward.
    """

    name = "nav"

    def __init__(self, hidden: int = 64, emb: int = 16, conv: int = 16,
                 fc: int = 64, max_desc_len: int = 12,
                 episode_budget: int = 1000, metric_episodes: int = 40):
        self.hidden = hidden
        self.emb = emb
        self.conv = conv
        self.fc = fc
        self.max_desc_len = max_desc_len
        self.episode_budget = episode_budget
        self.metric_episodes = metric_episodes
        self.vocab = nav_vocab()
        self.flat = (OBS_WINDOW - KERNEL + 1) ** 2 * conv
        self.last_estimates: list[dict] = []  # inspection hook for curves

    # --- architecture -----------------------------------------------------
    def init_rep(self, store: ParameterStore) -> None:
        store.add("conv_w", (KERNEL, KERNEL, OBS_CHANNELS, self.conv),
                  fan_in=KERNEL * KERNEL * OBS_CHANNELS)
        store.add("conv_b", (self.conv,), zero=True)
        store.add("fc1_w", (self.flat, self.fc))
        store.add("fc1_b", (self.fc,), zero=True)
        store.add("fc2_w", (self.fc, self.hidden))
        store.add("fc2_b", (self.hidden,), zero=True)
        for a in range(N_ACTIONS):
            store.add(f"act{a}_w", (self.hidden, self.hidden))

    def init_desc_encoder(self, store: ParameterStore) -> None:
        init_gru(store, "wenc", len(self.vocab), self.emb, self.hidden)

    def init_proposal(self, store: ParameterStore) -> None:
        # unconditional prior: the decoder conditions on a zero scalar
        init_decoder(store, "qdec", len(self.vocab), self.emb, self.hidden,
                     ctx_dim=1)

    def encode_annotation(self, annotation) -> tuple[int, ...]:
        return tuple(self.vocab.encode(list(annotation)))

    # --- recorded forward passes -------------------------------------------
    def _rep(self, tensors: dict[str, Tensor], obs: np.ndarray) -> Tensor:
        h = ad.tanh(ad.conv2d(ad.constant(obs), tensors["conv_w"],
                              tensors["conv_b"]))
        h = ad.reshape(h, (obs.shape[0], self.flat))
        h = ad.tanh(ad.add(ad.matmul(h, tensors["fc1_w"]), tensors["fc1_b"]))
        return ad.add(ad.matmul(h, tensors["fc2_w"]), tensors["fc2_b"])

    def _logits(self, tensors: dict[str, Tensor], rep: Tensor,
                ctx: Tensor) -> Tensor:
        cols = [ad.tsum(ad.mul(ctx, ad.matmul(rep, tensors[f"act{a}_w"])),
                        axis=1, keepdims=True) for a in range(N_ACTIONS)]
        return ad.concat(cols, axis=1)

    def action_nll(self, tensors: dict[str, Tensor], ctx: Tensor,
                   batch: dict) -> Tensor:
        """Per-row -log pi(action | obs, ctx); shared by DAgger and REINFORCE."""
        rep = self._rep(tensors, batch["obs"])
        return ad.softmax_xent(self._logits(tensors, rep, ctx),
                               batch["actions"])

    def desc_context(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        return rnn_encode(batch["instr"], gru_view(tensors, "wenc"))

    def interp_loss_ctx(self, tensors: dict[str, Tensor], ctx: Tensor,
                        batch: dict) -> Tensor:
        return ad.tmean(self.action_nll(tensors, ctx, batch))

    def proposal_loss(self, tensors: dict[str, Tensor], batch: dict) -> Tensor:
        rows = batch["instr_dec"]
        ctx = ad.constant(np.zeros((rows.shape[0], 1)))
        lp = decode_logprob(rows, ctx, decoder_view(tensors, "qdec"))
        return ad.tmean(ad.neg(lp))

    def meta_context(self, tensors, batch):
        raise NotImplementedError("nav has no meta baseline")

    def interp_batches(self, tasks, store, rng, cfg):
        raise NotImplementedError("nav pretrains with DAgger, not batches")

    def proposal_batches(self, tasks, rng, cfg):
        raise NotImplementedError("nav fits its prior with fit_prior")

    # --- frozen-parameter policy ---------------------------------------------
    def encode_instruction_np(self, store: ParameterStore,
                              tokens) -> np.ndarray:
        ids = pad_batch([list(tokens)])
        return rnn_encode(ids, gru_view(store.tensors(), "wenc")).data[0]

    def _action_scorer(self, arrays: dict[str, np.ndarray],
                       ctx: np.ndarray):
        """ctx (hidden,) -> fast per-observation action-logit closure.

        Must equal the recorded _logits: logit_a = rep^T W_a ctx, so the
        per-action vector is W_a @ ctx, not ctx @ W_a."""
        v = np.stack([arrays[f"act{a}_w"] @ ctx for a in range(N_ACTIONS)])
        w1 = arrays["conv_w"].reshape(-1, self.conv)
        b1, fc1w = arrays["conv_b"], arrays["fc1_w"]
        fc1b, fc2w, fc2b = arrays["fc1_b"], arrays["fc2_w"], arrays["fc2_b"]
        span = OBS_WINDOW - KERNEL + 1

        def logits(obs: np.ndarray) -> np.ndarray:
            cols = np.stack([obs[i:i + KERNEL, j:j + KERNEL].ravel()
                             for i in range(span) for j in range(span)])
            h = np.tanh(cols @ w1 + b1).ravel()
            h = np.tanh(h @ fc1w + fc1b)
            return v @ (h @ fc2w + fc2b)

        return logits

    def policy(self, arrays: dict[str, np.ndarray], ctx: np.ndarray,
               rng: np.random.Generator, greedy: bool = False):
        """Policy callable for run_episode, sampling from softmax logits."""
        scorer = self._action_scorer(arrays, ctx)

        def act(env: NavEnv) -> int:
            z = scorer(env.observe())
            if greedy:
                return int(np.argmax(z))
            p = np.exp(z - z.max())
            p /= p.sum()
            return int(np.searchsorted(np.cumsum(p), rng.random(),
                                       side="right").clip(max=N_ACTIONS - 1))

        return act

    def policy_dist(self, arrays: dict[str, np.ndarray], ctx: np.ndarray,
                    obs: np.ndarray) -> np.ndarray:
        """Action distribution for one observation."""
        z = self._action_scorer(arrays, ctx)(obs)
        p = np.exp(z - z.max())
        return p / p.sum()

    # --- concept phase ---------------------------------------------------------
    def proposal_context_np(self, bundle: ModelBundle, examples) -> np.ndarray:
        return np.zeros(1)

    def propose_one(self, bundle: ModelBundle, context: np.ndarray,
                    rng: np.random.Generator, temperature: float) -> list[int]:
        dec = decoder_view(bundle.proposal.tensors(), "qdec")
        return decode_sample(context, dec, rng, temperature, self.max_desc_len)

    def proposal_logprobs(self, bundle: ModelBundle, context: np.ndarray,
                          candidates) -> np.ndarray:
        rows = pad_batch([list(c) + [EOS] for c in candidates])
        ctx = ad.constant(np.zeros((rows.shape[0], 1)))
        dec = decoder_view(bundle.proposal.tensors(), "qdec")
        return decode_logprob(rows, ctx, dec).data

    def hypothesis_losses(self, interp: ParameterStore, candidates,
                          examples, rng: np.random.Generator) -> np.ndarray:
        """Negative Monte Carlo mean reward, the budget split evenly."""
        if not isinstance(examples, MapSampler):
            raise ContractError("nav concept examples must be a MapSampler")
        per = max(1, self.episode_budget // len(candidates))
        self.last_estimates = []
        out = np.zeros(len(candidates))
        for i, toks in enumerate(candidates):
            rewards = rollout_rewards(interp.arrays, self,
                                      self.encode_instruction_np(interp, toks),
                                      examples, per, rng)
            self.last_estimates.append({"tokens": tuple(toks),
                                        "rewards": rewards})
            out[i] = -rewards.mean()
        return out

    # --- evaluation --------------------------------------------------------------
    def predict(self, interp: ParameterStore, tokens, x) -> float:
        """Greedy-policy episode reward on one (map, start) pair."""
        grid, start = x
        ctx = self.encode_instruction_np(interp, tokens)
        act = self.policy(interp.arrays, ctx, derive_rng(0, "greedy"),
                          greedy=True)
        return run_episode(grid, start, act).total_reward

    def task_metric(self, interp: ParameterStore, task: TaskDataset, tokens,
                    rng: np.random.Generator) -> float:
        return estimate_reward(interp.arrays, self,
                               self.encode_instruction_np(interp, tokens),
                               task.examples, self.metric_episodes, rng)


# ---------------------------------------------------------------------------
# reward estimation


def rollout_rewards(arrays: dict[str, np.ndarray], adapter: NavAdapter,
                    ctx: np.ndarray, sampler: MapSampler, episodes: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Undiscounted episode returns of the stochastic policy on fresh maps."""
    act = adapter.policy(arrays, ctx, rng)
    out = np.zeros(episodes)
    for e in range(episodes):
        grid = sampler.sample(rng)
        start = sample_start(grid, rng)
        out[e] = run_episode(grid, start, act, sampler.step_cap).total_reward
    return out


def estimate_reward(arrays: dict[str, np.ndarray], adapter: NavAdapter,
                    ctx: np.ndarray, sampler: MapSampler, episodes: int,
                    rng: np.random.Generator) -> float:
    if episodes < 1:
        raise ContractError("reward estimation needs at least one episode")
    return float(rollout_rewards(arrays, adapter, ctx, sampler, episodes,
                                 rng).mean())


# ---------------------------------------------------------------------------
# pretraining


def _instruction_ids(adapter: NavAdapter, tasks: list[TaskDataset]) -> list[list[int]]:
    return [adapter.vocab.encode(t.annotation) for t in tasks]


def dagger_pretrain(tasks: list[TaskDataset], adapter: NavAdapter,
                    cfg: NavTrainConfig, seed: int,
                    use_embeddings: bool = False) -> ParameterStore:
    """Imitate per-task experts, mixing in the learner as epochs advance.

    Epoch t rolls each action from the expert with probability
    expert_decay^t, otherwise from the current policy; every visited
    state is labeled with the expert action and kept in the aggregate
    dataset. With use_embeddings the instruction encoder is replaced by
    a trainable per-task embedding table (the rl-multitask baseline).
    """
    store = ParameterStore(derive_rng(seed, "dagger-init"))
    adapter.init_rep(store)
    instr_ids = _instruction_ids(adapter, tasks)
    if use_embeddings:
        store.add("task_emb", (len(tasks), adapter.hidden),
                  fan_in=adapter.hidden)
    else:
        adapter.init_desc_encoder(store)

    tensors = store.tensors()
    names = list(store.arrays)
    state = AdamState(step_size=cfg.step_size)
    roll_rng = derive_rng(seed, "dagger-roll")
    batch_rng = derive_rng(seed, "dagger-batch")

    all_obs: list[np.ndarray] = []
    all_act: list[int] = []
    all_task: list[int] = []

    for epoch in range(cfg.epochs):
        beta = cfg.expert_decay ** epoch
        if use_embeddings:
            ctx_rows = store.arrays["task_emb"]
        else:
            ctx_rows = rnn_encode(pad_batch(instr_ids),
                                  gru_view(tensors, "wenc")).data
        scorers = {}
        for i, task in enumerate(tasks):
            scorers[i] = adapter._action_scorer(store.arrays, ctx_rows[i])
            sampler: MapSampler = task.examples
            for _ in range(cfg.episodes_per_task):
                grid = sampler.sample(roll_rng)
                env = NavEnv(grid, sample_start(grid, roll_rng),
                             sampler.step_cap)
                while not env.done:
                    obs = env.observe()
                    a_star = expert_action(grid, env.pos)
                    all_obs.append(obs)
                    all_act.append(a_star)
                    all_task.append(i)
                    if roll_rng.random() < beta:
                        env.step(a_star)
                    else:
                        z = scorers[i](obs)
                        p = np.exp(z - z.max())
                        p /= p.sum()
                        env.step(int(np.searchsorted(
                            np.cumsum(p), roll_rng.random(),
                            side="right").clip(max=N_ACTIONS - 1)))

        obs_arr = np.stack(all_obs)
        act_arr = np.asarray(all_act, dtype=np.intp)
        task_arr = np.asarray(all_task, dtype=np.intp)
        for _ in range(cfg.steps_per_epoch):
            pick = batch_rng.choice(len(act_arr),
                                    size=min(cfg.batch_rows, len(act_arr)),
                                    replace=False)
            batch = {"obs": obs_arr[pick], "actions": act_arr[pick]}
            with ad.recording() as tape:
                if use_embeddings:
                    ctx = ad.gather_rows(tensors["task_emb"], task_arr[pick])
                else:
                    batch["instr"] = pad_batch([instr_ids[t]
                                                for t in task_arr[pick]])
                    ctx = adapter.desc_context(tensors, batch)
                loss = adapter.interp_loss_ctx(tensors, ctx, batch)
                grads = ad.grad(loss, [tensors[n] for n in names], tape)
            if not np.isfinite(loss.data):
                raise ContractError("dagger: non-finite loss")
            adam_step(store.arrays, dict(zip(names, grads)), state)
    return store


def expert_agreement(store: ParameterStore, adapter: NavAdapter,
                     tasks: list[TaskDataset], episodes_per_task: int,
                     seed: int) -> float:
    """Greedy-policy agreement with the expert on fresh expert rollouts."""
    rng = derive_rng(seed, "agreement")
    agree = total = 0
    for task in tasks:
        sampler: MapSampler = task.examples
        ctx = adapter.encode_instruction_np(
            store, adapter.vocab.encode(task.oracle_annotation()))
        scorer = adapter._action_scorer(store.arrays, ctx)
        for _ in range(episodes_per_task):
            grid = sampler.sample(rng)
            env = NavEnv(grid, sample_start(grid, rng), sampler.step_cap)
            while not env.done:
                a_star = expert_action(grid, env.pos)
                agree += int(np.argmax(scorer(env.observe())) == a_star)
                total += 1
                env.step(a_star)
    return agree / total


def fit_prior(tasks: list[TaskDataset], adapter: NavAdapter,
              cfg: NavTrainConfig, seed: int) -> ParameterStore:
    """Language model over pretraining instructions (the proposal q(w))."""
    store = ParameterStore(derive_rng(seed, "prior-init"))
    adapter.init_proposal(store)
    rows_all = [adapter.vocab.encode(t.annotation) + [EOS] for t in tasks]
    tensors = store.tensors()
    names = list(store.arrays)
    state = AdamState(step_size=cfg.prior_step_size)
    rng = derive_rng(seed, "prior-batches")
    for step in range(cfg.prior_steps):
        pick = rng.choice(len(rows_all), size=min(cfg.prior_batch,
                                                  len(rows_all)),
                          replace=False)
        batch = {"instr_dec": pad_batch([rows_all[i] for i in pick])}
        with ad.recording() as tape:
            loss = adapter.proposal_loss(tensors, batch)
            grads = ad.grad(loss, [tensors[n] for n in names], tape)
        if not np.isfinite(loss.data):
            raise ContractError("prior: non-finite loss")
        adam_step(store.arrays, dict(zip(names, grads)), state)
    return store


def nav_pretrain(tasks: list[TaskDataset], adapter: NavAdapter,
                 cfg: NavTrainConfig, seed: int) -> ModelBundle:
    """DAgger policy + instruction prior, packaged for the shared protocol."""
    interp = dagger_pretrain(tasks, adapter, cfg, seed)
    proposal = fit_prior(tasks, adapter, cfg, seed)
    return ModelBundle(f"nav-l3-{seed}", interp, proposal)


# ---------------------------------------------------------------------------
# policy-gradient fine-tuning


def _discounted_returns(rewards: list[float], gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def _collect_batch(arrays: dict[str, np.ndarray], adapter: NavAdapter,
                   ctx: np.ndarray, sampler: MapSampler, episodes: int,
                   gamma: float, rng: np.random.Generator):
    act = adapter.policy(arrays, ctx, rng)
    obs_rows, act_rows, ret_rows, totals = [], [], [], []
    for _ in range(episodes):
        grid = sampler.sample(rng)
        roll = run_episode(grid, sample_start(grid, rng), act,
                           sampler.step_cap)
        obs_rows.extend(roll.observations)
        act_rows.extend(roll.actions)
        ret_rows.append(_discounted_returns(roll.rewards, gamma))
        totals.append(roll.total_reward)
    return (np.stack(obs_rows), np.asarray(act_rows, dtype=np.intp),
            np.concatenate(ret_rows), np.asarray(totals))


def reinforce_loss(adapter: NavAdapter, tensors: dict[str, Tensor],
                   ctx_rows: Tensor, batch: dict,
                   advantages: np.ndarray) -> Tensor:
    """Mean advantage-weighted action NLL; zero advantages -> zero gradient."""
    nll = adapter.action_nll(tensors, ctx_rows, batch)
    return ad.tmean(ad.mul(ad.constant(advantages), nll))


def finetune_policy_gradient(store: ParameterStore, adapter: NavAdapter,
                             tokens, sampler: MapSampler, cfg: FinetuneConfig,
                             rng: np.random.Generator,
                             episodes_offset: int = 0
                             ) -> tuple[ParameterStore, list[CurvePoint]]:
    """REINFORCE on all policy parameters, instruction fixed to `tokens`.

    Discounted returns (gamma 0.9) with a mean-return baseline; the
    undiscounted per-batch reward is reported for the curve.
    """
    tuned = store.clone()
    tensors = tuned.tensors()
    names = list(tuned.arrays)
    state = AdamState(step_size=cfg.step_size)
    ids = list(tokens)
    curve: list[CurvePoint] = []
    consumed = episodes_offset
    for b in range(cfg.batches):
        ctx_np = adapter.encode_instruction_np(tuned, ids)
        obs, acts, rets, totals = _collect_batch(
            tuned.arrays, adapter, ctx_np, sampler, cfg.batch_episodes,
            cfg.gamma, rng)
        adv = rets - rets.mean()
        batch = {"obs": obs, "actions": acts, "instr": pad_batch([ids])}
        with ad.recording() as tape:
            enc = adapter.desc_context(tensors, batch)
            ctx_rows = ad.gather_rows(enc, np.zeros(len(acts), dtype=np.intp))
            loss = reinforce_loss(adapter, tensors, ctx_rows, batch, adv)
            grads = ad.grad(loss, [tensors[n] for n in names], tape)
        adam_step(tuned.arrays, dict(zip(names, grads)), state)
        consumed += len(totals)
        lo, hi = _ci95(totals)
        curve.append(CurvePoint("fine-tuning", b, consumed,
                                float(totals.mean()), lo, hi))
    return tuned, curve


def refit_embedding_rl(store: ParameterStore, adapter: NavAdapter,
                       sampler: MapSampler, cfg: FinetuneConfig,
                       rng: np.random.Generator, phase: str = "fine-tuning",
                       theta_init: np.ndarray | None = None,
                       episodes_offset: int = 0
                       ) -> tuple[np.ndarray, list[CurvePoint]]:
    """REINFORCE on a task embedding alone, shared parameters frozen.

    Starts from zeros unless theta_init carries over an earlier refit.
    """
    frozen = {n: ad.constant(a) for n, a in store.arrays.items()}
    theta = ParameterStore(derive_rng(0, "theta"))
    theta.add("theta_c", (1, adapter.hidden), zero=True)
    if theta_init is not None:
        theta.arrays["theta_c"][0] = theta_init
    tensors = theta.tensors()
    state = AdamState(step_size=cfg.step_size)
    curve: list[CurvePoint] = []
    consumed = episodes_offset
    for b in range(cfg.batches):
        obs, acts, rets, totals = _collect_batch(
            store.arrays, adapter, theta.arrays["theta_c"][0], sampler,
            cfg.batch_episodes, cfg.gamma, rng)
        adv = rets - rets.mean()
        batch = {"obs": obs, "actions": acts}
        with ad.recording() as tape:
            ctx_rows = ad.gather_rows(tensors["theta_c"],
                                      np.zeros(len(acts), dtype=np.intp))
            loss = reinforce_loss(adapter, frozen, ctx_rows, batch, adv)
            (g,) = ad.grad(loss, [tensors["theta_c"]], tape)
        adam_step(theta.arrays, {"theta_c": g}, state)
        consumed += len(totals)
        lo, hi = _ci95(totals)
        curve.append(CurvePoint(phase, b, consumed, float(totals.mean()),
                                lo, hi))
    return theta.arrays["theta_c"][0], curve


# ---------------------------------------------------------------------------
# per-task experiment drivers (Fig. 7-style runs)


@dataclass
class NavRunRecord:
    task_id: str
    method: str
    selected_tokens: tuple[int, ...]
    selection_reward: float       # metric right after the concept phase
    final_reward: float           # metric after fine-tuning
    curve: list[CurvePoint] = field(default_factory=list)


def nav_run_task(bundle: ModelBundle, adapter: NavAdapter,
                 task: TaskDataset, k: int, seed: int, task_index: int,
                 ft_cfg: FinetuneConfig | None = None,
                 temperature: float = 1.0) -> NavRunRecord:
    """Concept phase (sample, estimate, select), then optional fine-tuning."""
    rng = derive_rng(seed, "concept", task_index)
    hyp = concept_learn(task.examples, bundle, adapter, k, rng, temperature)
    curve: list[CurvePoint] = []
    consumed = 0
    for b, est in enumerate(adapter.last_estimates):
        consumed += len(est["rewards"])
        lo, hi = _ci95(est["rewards"])
        curve.append(CurvePoint("concept-learning", b, consumed,
                                float(est["rewards"].mean()), lo, hi))
    selection_reward = adapter.task_metric(
        bundle.interp, task, hyp.tokens, derive_rng(seed, "metric", task_index))
    final_reward = selection_reward
    store = bundle.interp
    if ft_cfg is not None and ft_cfg.batches > 0:
        store, ft_curve = finetune_policy_gradient(
            bundle.interp, adapter, hyp.tokens, task.examples, ft_cfg,
            derive_rng(seed, "finetune", task_index), episodes_offset=consumed)
        curve.extend(ft_curve)
        final_reward = estimate_reward(
            store.arrays, adapter,
            adapter.encode_instruction_np(store, hyp.tokens), task.examples,
            adapter.metric_episodes, derive_rng(seed, "metric-ft", task_index))
    return NavRunRecord(task.task_id, "l3", tuple(hyp.tokens),
                        selection_reward, final_reward, curve)


def rl_multitask_run_task(store: ParameterStore, adapter: NavAdapter,
                          task: TaskDataset, seed: int, task_index: int,
                          concept_cfg: FinetuneConfig,
                          ft_cfg: FinetuneConfig | None = None) -> NavRunRecord:
    """Fresh-embedding RL with the same episode budget as L3's selection.

    The concept-phase budget goes to REINFORCE on the new task's
    embedding (shared parameters frozen); the boundary metric is the
    embedding policy's mean reward after that budget.
    """
    rng = derive_rng(seed, "concept", task_index)
    theta, curve = refit_embedding_rl(store, adapter, task.examples,
                                      concept_cfg, rng,
                                      phase="concept-learning")
    selection_reward = estimate_reward(
        store.arrays, adapter, theta, task.examples, adapter.metric_episodes,
        derive_rng(seed, "metric", task_index))
    final_reward = selection_reward
    if ft_cfg is not None and ft_cfg.batches > 0:
        # keep refining the same embedding across the boundary
        theta2, ft_curve = refit_embedding_rl(
            store, adapter, task.examples, ft_cfg,
            derive_rng(seed, "finetune", task_index), theta_init=theta,
            episodes_offset=curve[-1].episodes_consumed if curve else 0)
        curve.extend(ft_curve)
        final_reward = estimate_reward(
            store.arrays, adapter, theta2, task.examples,
            adapter.metric_episodes, derive_rng(seed, "metric-ft", task_index))
    return NavRunRecord(task.task_id, "rl-multitask", (), selection_reward,
                        final_reward, curve)


def rl_scratch_run_task(adapter: NavAdapter, task: TaskDataset, seed: int,
                        task_index: int, cfg: FinetuneConfig) -> NavRunRecord:
    """No pretraining: random policy parameters, REINFORCE on this task only."""
    store = ParameterStore(derive_rng(seed, "scratch-init", task_index))
    adapter.init_rep(store)
    adapter.init_desc_encoder(store)
    tokens: tuple[int, ...] = ()
    tuned, curve = finetune_policy_gradient(
        store, adapter, tokens, task.examples, cfg,
        derive_rng(seed, "finetune", task_index))
    final_reward = estimate_reward(
        tuned.arrays, adapter, adapter.encode_instruction_np(tuned, tokens),
        task.examples, adapter.metric_episodes,
        derive_rng(seed, "metric-ft", task_index))
    for p in curve:
        p.phase = "fine-tuning"
    return NavRunRecord(task.task_id, "rl-scratch", tokens,
                        curve[0].mean_reward if curve else 0.0, final_reward,
                        curve)
