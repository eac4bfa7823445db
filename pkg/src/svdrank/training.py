"""Trainers: MSE regression on absolute ratings, RankNet on pairwise choices.

Both trainers run mini-batch Adam with per-epoch evaluation hooks and are
deterministic functions of (data, seed, hyperparameters). The experiment
driver sweeps training-set sizes and label modalities over several seeds and
reports the best-epoch pairwise precision per run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import AcrLabel, CcrLabel, Corpus, SplitPlan, Svd, ccr_choice_to_target, \
    make_split, subsample_training
from .metrics import PrefPrediction, ppref
from .scorer import ScorerParameters, forward_batch, gradients_batch, init_conv_pool, \
    init_pooled_fc, score_inputs

PROB_CLAMP = 1e-12
STRONG_CHOICES = ("i_more", "j_more")

EvalHook = Callable[[ScorerParameters], tuple[float, float]]


@dataclass
class Hyperparams:
    learning_rate: float = 1e-4
    batch_size: int = 6
    epochs: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.3
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self) -> None:
        for name in ("learning_rate", "batch_size", "epochs", "adam_beta1",
                     "adam_beta2", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    ppref_strong: float | None = None
    ppref_weak: float | None = None


def adam_init(params: ScorerParameters) -> AdamState:
    return AdamState(m={k: np.zeros_like(v) for k, v in params.tensors.items()},
                     v={k: np.zeros_like(v) for k, v in params.tensors.items()})


def adam_update(params: ScorerParameters, grads: Mapping[str, np.ndarray],
                state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> tuple[ScorerParameters, AdamState]:
    """One bias-corrected Adam step; returns fresh parameters and state."""
    t = state.t + 1
    new_tensors, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient for tensor {name!r} at Adam step {t}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_tensors[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return ScorerParameters(params.arch, new_tensors), AdamState(new_m, new_v, t)


def mse_loss(score: float, m: float) -> tuple[float, float]:
    """Squared error against an absolute rating, with d(loss)/d(score)."""
    diff = score - m
    return diff * diff, 2.0 * diff


def ranknet_probability(score_i: float, score_j: float) -> float:
    """Sigmoid of the score difference: the modeled probability that the
    second item ranks above the first."""
    d = score_j - score_i
    if d >= 0:
        return 1.0 / (1.0 + math.exp(-d))
    e = math.exp(d)
    return e / (1.0 + e)


def ranknet_loss(p_target: float, p_hat: float) -> tuple[float, float]:
    """Binary cross-entropy against a soft pairwise target, with d(loss)/d(p_hat).

    p_hat is clamped away from {0, 1} before the logs.
    """
    p_hat_c = min(max(p_hat, PROB_CLAMP), 1.0 - PROB_CLAMP)
    loss = -(p_target * math.log(p_hat_c) + (1.0 - p_target) * math.log1p(-p_hat_c))
    d_p_hat = -p_target / p_hat_c + (1.0 - p_target) / (1.0 - p_hat_c)
    return loss, d_p_hat


def _stable_sigmoid(d: np.ndarray) -> np.ndarray:
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_features(utt_ids: Iterable[str], features: Mapping[str, np.ndarray]) -> None:
    missing = sorted({u for u in utt_ids if u not in features})
    if missing:
        raise ValueError(f"missing features for {len(missing)} utterance(s), "
                         f"e.g. {missing[:3]}")


def _grouped_forward(params: ScorerParameters, inputs: list[np.ndarray],
                     rng: np.random.Generator, dropout: float):
    """Train-mode forward over possibly ragged inputs, batched per shape.

    Returns (scores, groups) where groups pair item indices with the cache
    needed to backpropagate their adjoints.
    """
    shape_groups: dict[tuple, list[int]] = {}
    for idx, x in enumerate(inputs):
        shape_groups.setdefault(np.shape(x), []).append(idx)
    scores = np.empty(len(inputs))
    groups = []
    for idxs in shape_groups.values():
        batch = np.stack([np.asarray(inputs[i], dtype=np.float64) for i in idxs])
        got, cache = forward_batch(params, batch, mode="train", dropout_rng=rng,
                                   dropout=dropout)
        scores[idxs] = got
        groups.append((idxs, cache))
    return scores, groups


def _grouped_gradients(params: ScorerParameters, adjoints: np.ndarray, groups) -> dict:
    total: dict[str, np.ndarray] = {}
    for idxs, cache in groups:
        grads = gradients_batch(params, adjoints[idxs], cache)
        for name, g in grads.items():
            total[name] = total.get(name, 0.0) + g
    return total


def _batches(order: np.ndarray, batch_size: int) -> Iterable[np.ndarray]:
    # The final short batch is trained on rather than dropped; small-label
    # regimes cannot afford to lose records.
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def train_acr(model: ScorerParameters, labels: Sequence[AcrLabel],
              features: Mapping[str, np.ndarray], hp: Hyperparams,
              eval_hook: EvalHook | None = None, seed: int = 0,
              ) -> tuple[ScorerParameters, list[EpochReport]]:
    """Fit the scorer to absolute ratings by mini-batch MSE descent."""
    if not labels:
        raise ValueError("ACR training requires a non-empty label set")
    _check_features((l.utterance_id for l in labels), features)
    inputs = [features[l.utterance_id] for l in labels]
    targets = np.array([float(l.rating) for l in labels])

    rng = np.random.default_rng(seed)
    params, state = model, adam_init(model)
    reports = []
    for epoch in range(hp.epochs):
        order = rng.permutation(len(labels))
        loss_sum = 0.0
        for batch in _batches(order, hp.batch_size):
            xs = [inputs[i] for i in batch]
            scores, groups = _grouped_forward(params, xs, rng, hp.dropout)
            diffs = scores - targets[batch]
            loss_sum += float(np.sum(diffs * diffs))
            adjoints = 2.0 * diffs / len(batch)
            grads = _grouped_gradients(params, adjoints, groups)
            params, state = adam_update(params, grads, state, hp.learning_rate,
                                        hp.adam_beta1, hp.adam_beta2, hp.adam_eps)
        strong, weak = eval_hook(params) if eval_hook else (None, None)
        reports.append(EpochReport(epoch, loss_sum / len(labels), strong, weak))
    return params, reports


def train_ccr(model: ScorerParameters, labels: Sequence[CcrLabel],
              features: Mapping[str, np.ndarray], hp: Hyperparams,
              eval_hook: EvalHook | None = None, seed: int = 0,
              ) -> tuple[ScorerParameters, list[EpochReport]]:
    """Fit the scorer to pairwise choices: both pair members pass through the
    shared parameters, the sigmoid of the score difference is matched to the
    soft target, and gradients flow through both branches."""
    if not labels:
        raise ValueError("CCR training requires a non-empty label set")
    _check_features((u for l in labels for u in (l.utt_i, l.utt_j)), features)
    inputs_i = [features[l.utt_i] for l in labels]
    inputs_j = [features[l.utt_j] for l in labels]
    targets = np.array([ccr_choice_to_target(l.choice) for l in labels])

    rng = np.random.default_rng(seed)
    params, state = model, adam_init(model)
    reports = []
    for epoch in range(hp.epochs):
        order = rng.permutation(len(labels))
        loss_sum = 0.0
        for batch in _batches(order, hp.batch_size):
            b = len(batch)
            xs = [inputs_i[i] for i in batch] + [inputs_j[i] for i in batch]
            scores, groups = _grouped_forward(params, xs, rng, hp.dropout)
            s_i, s_j = scores[:b], scores[b:]
            p_hat = _stable_sigmoid(s_j - s_i)
            p = targets[batch]
            p_c = np.clip(p_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
            loss_sum += float(np.sum(-(p * np.log(p_c) + (1.0 - p) * np.log(1.0 - p_c))))
            d_p_hat = (-p / p_c + (1.0 - p) / (1.0 - p_c)) / b
            d_s_j = d_p_hat * p_hat * (1.0 - p_hat)
            adjoints = np.concatenate([-d_s_j, d_s_j])
            grads = _grouped_gradients(params, adjoints, groups)
            params, state = adam_update(params, grads, state, hp.learning_rate,
                                        hp.adam_beta1, hp.adam_beta2, hp.adam_eps)
        strong, weak = eval_hook(params) if eval_hook else (None, None)
        reports.append(EpochReport(epoch, loss_sum / len(labels), strong, weak))
    return params, reports


def make_eval_hook(test_labels: Sequence[CcrLabel],
                   features: Mapping[str, np.ndarray]) -> EvalHook:
    """Evaluation hook scoring the fixed test comparisons in eval mode."""
    _check_features((u for l in test_labels for u in (l.utt_i, l.utt_j)), features)
    inputs = [features[u] for l in test_labels for u in (l.utt_i, l.utt_j)]

    def hook(params: ScorerParameters) -> tuple[float, float]:
        scores = score_inputs(params, inputs)
        preds = [PrefPrediction(l.utt_i, l.utt_j, scores[2 * k], scores[2 * k + 1], l.choice)
                 for k, l in enumerate(test_labels)]
        return ppref(preds, "strong"), ppref(preds, "weak")

    return hook


@dataclass
class ExperimentRow:
    svd_id: str
    mode: str
    arch: str
    n_train: int
    seed: int
    best_epoch: int
    ppref_strong: float
    ppref_weak: float


@dataclass
class ExperimentResult:
    rows: list[ExperimentRow] = field(default_factory=list)

    def aggregate(self) -> list[dict]:
        """Mean/stddev over seeds for each (mode, n_train) cell."""
        cells: dict[tuple, list[ExperimentRow]] = {}
        for row in self.rows:
            cells.setdefault((row.svd_id, row.mode, row.arch, row.n_train), []).append(row)
        out = []
        for (svd_id, mode, arch, n_train), rows in sorted(cells.items()):
            strong = np.array([r.ppref_strong for r in rows])
            weak = np.array([r.ppref_weak for r in rows])
            out.append({"svd": svd_id, "mode": mode, "arch": arch, "n_train": n_train,
                        "n_seeds": len(rows),
                        "ppref_strong_mean": float(strong.mean()),
                        "ppref_strong_std": float(strong.std()),
                        "ppref_weak_mean": float(weak.mean()),
                        "ppref_weak_std": float(weak.std())})
        return out


def _derived_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _init_model(arch: str, input_dim: int, seed: int) -> ScorerParameters:
    if arch == "pooled_fc":
        return init_pooled_fc(input_dim=input_dim, rng_seed=seed)
    if arch == "conv_pool":
        return init_conv_pool(rng_seed=seed, n_bins=input_dim)
    raise ValueError(f"unknown architecture {arch!r}")


def select_test_labels(plan: SplitPlan, count_per_variant: int | None,
                       rng_seed: int = 0) -> list[CcrLabel]:
    """Fixed test comparisons for an experiment: all held-out labels, or a
    per-variant (strong/weak) random subset of the requested size."""
    strong = [l for l in plan.test_ccr if l.choice in STRONG_CHOICES]
    weak = [l for l in plan.test_ccr if l.choice not in STRONG_CHOICES]
    if count_per_variant is None:
        return list(plan.test_ccr)
    rng = np.random.default_rng(rng_seed)
    picked = []
    for pool, name in ((strong, "strong"), (weak, "weak")):
        if len(pool) < count_per_variant:
            raise ValueError(f"test pool holds {len(pool)} {name} labels, "
                             f"fewer than the requested {count_per_variant}")
        idx = sorted(rng.choice(len(pool), size=count_per_variant, replace=False))
        picked.extend(pool[i] for i in idx)
    return picked


def run_experiment(corpus: Corpus, acr_labels: Sequence[AcrLabel],
                   ccr_labels: Sequence[CcrLabel], svd: Svd,
                   sizes: Sequence[int], modes: Sequence[str], arch: str,
                   hp: Hyperparams, features: Mapping[str, np.ndarray], *,
                   train_speaker_count: int, split_seed: int = 0,
                   test_count_per_variant: int | None = None,
                   progress: Callable[[str], None] | None = None) -> ExperimentResult:
    """Label-efficiency sweep: for every (size, mode, seed), subsample the
    training labels, train, track test precision per epoch, and keep the
    max over epochs of each precision variant."""
    for mode in modes:
        if mode not in ("acr", "ccr"):
            raise ValueError(f"mode must be 'acr' or 'ccr', got {mode!r}")
    plan = make_split(corpus, list(acr_labels), list(ccr_labels), svd,
                      train_speaker_count, split_seed)
    test_labels = select_test_labels(plan, test_count_per_variant,
                                     rng_seed=_derived_seed(split_seed, 0x7E57))
    if not any(l.choice in STRONG_CHOICES for l in test_labels) \
            or not any(l.choice not in STRONG_CHOICES for l in test_labels):
        raise ValueError("held-out comparisons must include both strong and weak labels")
    hook = make_eval_hook(test_labels, features)
    input_dim = np.shape(features[test_labels[0].utt_i])[-1]

    result = ExperimentResult()
    for size in sizes:
        sub = subsample_training(plan, size, rng_seed=_derived_seed(split_seed, size, 0x5AB))
        for mode in modes:
            for seed in hp.seeds:
                mode_code = 1 if mode == "acr" else 2
                key = np.random.SeedSequence([split_seed, size, mode_code, seed])
                init_seed, train_seed = (int(s) for s in key.generate_state(2))
                model = _init_model(arch, input_dim, init_seed)
                if mode == "acr":
                    _, reports = train_acr(model, sub.train_acr, features, hp,
                                           eval_hook=hook, seed=train_seed)
                else:
                    _, reports = train_ccr(model, sub.train_ccr, features, hp,
                                           eval_hook=hook, seed=train_seed)
                strongs = [r.ppref_strong for r in reports]
                weaks = [r.ppref_weak for r in reports]
                best = int(np.argmax(strongs))
                result.rows.append(ExperimentRow(
                    svd_id=svd.id, mode=mode, arch=arch, n_train=size, seed=seed,
                    best_epoch=best, ppref_strong=max(strongs), ppref_weak=max(weaks)))
                if progress:
                    progress(f"{svd.id} {mode} n={size} seed={seed}: "
                             f"ppref_strong={max(strongs):.4f} ppref_weak={max(weaks):.4f}")
    return result


def results_to_csv(result: ExperimentResult, timestamp: str | None = None) -> str:
    """Render per-run rows plus mean/std aggregate rows. The first line is a
    timestamp comment when one is supplied; everything else is deterministic."""
    lines = []
    if timestamp is not None:
        lines.append(f"# generated {timestamp}")
    lines.append("svd,mode,arch,n_train,seed,best_epoch,ppref_strong,ppref_weak")
    for r in result.rows:
        lines.append(f"{r.svd_id},{r.mode},{r.arch},{r.n_train},{r.seed},"
                     f"{r.best_epoch},{r.ppref_strong:.6f},{r.ppref_weak:.6f}")
    for agg in result.aggregate():
        base = f"{agg['svd']},{agg['mode']},{agg['arch']},{agg['n_train']}"
        lines.append(f"{base},mean,,{agg['ppref_strong_mean']:.6f},{agg['ppref_weak_mean']:.6f}")
        lines.append(f"{base},std,,{agg['ppref_strong_std']:.6f},{agg['ppref_weak_std']:.6f}")
    return "\n".join(lines) + "\n"
