"""Synthetic corpora with known latent scores, plus simulated raters.

Stands in for a real labeled speech corpus at desk scale: every utterance
gets a latent score z (speaker base plus utterance jitter), features are a
fixed random linear map of z plus isotropic noise, and simulated annotators
rate through the same noise model that the closed-form oracles integrate
over. Everything is deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binom, norm

from .corpus import AcrLabel, CcrLabel, Corpus, Svd, Utterance, save_corpus, save_labels
from .features import Waveform, write_feature_file, write_spectrogram_file, write_wav
from .metrics import ResponseTally

DEFAULT_SVD = Svd(id="synth", description="synthetic latent descriptor", gender_scope="any")

# Default world: agreement upper bounds land in the high-0.8s/low-0.9s for
# the strong subset while a full training run stays in the seconds range.
DEFAULTS = dict(n_speakers=200, utts_per_speaker=3, feature_dim=32,
                sigma_jitter=0.2, sigma_label=0.4, sigma_feature=0.1, tau=0.5)

SPECTROGRAM_FRAMES = 6
N_BINS = 257


@dataclass
class LatentWorld:
    """Ground truth behind a synthetic corpus."""

    seed: int
    sigma_jitter: float
    sigma_label: float
    sigma_feature: float
    tau: float
    speaker_base: dict[str, float]
    utterance_z: dict[str, float]
    z_lo: float  # calibration anchors mapping the z range onto the 1..5 scale
    z_hi: float
    embed: np.ndarray  # (D,) linear map from z to the pooled feature
    spec_base: np.ndarray  # (257,) positive background for synthetic spectrograms
    spec_direction: np.ndarray  # (257,) per-bin loading of z
    features: dict[str, np.ndarray] = field(default_factory=dict)
    spectrograms: dict[str, np.ndarray] = field(default_factory=dict)

    def to_acr_scale(self, z: float) -> float:
        return 1.0 + 4.0 * (z - self.z_lo) / (self.z_hi - self.z_lo)


def generate_corpus(n_speakers: int = DEFAULTS["n_speakers"],
                    utts_per_speaker: int = DEFAULTS["utts_per_speaker"],
                    feature_dim: int = DEFAULTS["feature_dim"],
                    seed: int = 0, *,
                    sigma_jitter: float = DEFAULTS["sigma_jitter"],
                    sigma_label: float = DEFAULTS["sigma_label"],
                    sigma_feature: float = DEFAULTS["sigma_feature"],
                    tau: float = DEFAULTS["tau"],
                    spectrogram_frames: int = SPECTROGRAM_FRAMES,
                    embed: np.ndarray | None = None,
                    ) -> tuple[Corpus, LatentWorld]:
    """Build a corpus whose genders and sentences alternate round-robin, so
    same-sentence same-gender comparison pairs always exist.

    ``embed`` overrides the random linear feature map (oracle tests use the
    identity map on one dimension).
    """
    if n_speakers < 1 or utts_per_speaker < 1 or feature_dim < 1:
        raise ValueError("all corpus counts must be >= 1")
    rng = np.random.default_rng(seed)
    if embed is None:
        embed = rng.normal(0.0, 1.0, feature_dim)
    else:
        embed = np.asarray(embed, dtype=np.float64)
        rng.normal(0.0, 1.0, feature_dim)  # keep the stream position fixed
        if embed.shape != (feature_dim,):
            raise ValueError(f"embed must have shape ({feature_dim},)")
    spec_base = rng.uniform(1.0, 2.0, N_BINS)
    spec_direction = rng.normal(0.0, 0.1, N_BINS)

    speaker_base: dict[str, float] = {}
    utterance_z: dict[str, float] = {}
    utterances: list[Utterance] = []
    for s in range(n_speakers):
        speaker_id = f"spk{s:04d}"
        speaker_base[speaker_id] = float(rng.normal(0.0, 1.0))
        gender = "M" if s % 2 == 0 else "F"
        for k in range(utts_per_speaker):
            utt_id = f"{speaker_id}_s{k:02d}"
            z = speaker_base[speaker_id] + float(rng.normal(0.0, sigma_jitter))
            utterance_z[utt_id] = z
            utterances.append(Utterance(
                id=utt_id, speaker_id=speaker_id, gender=gender,
                sentence_id=f"s{k:02d}", duration_s=float(rng.uniform(3.0, 6.0)),
                feature_path=f"features/{utt_id}.svdf"))

    z_values = np.array(list(utterance_z.values()))
    world = LatentWorld(
        seed=seed, sigma_jitter=sigma_jitter, sigma_label=sigma_label,
        sigma_feature=sigma_feature, tau=tau,
        speaker_base=speaker_base, utterance_z=utterance_z,
        z_lo=float(z_values.min()), z_hi=float(z_values.max()),
        embed=embed, spec_base=spec_base, spec_direction=spec_direction)
    if world.z_hi == world.z_lo:
        world.z_hi = world.z_lo + 1.0  # single-utterance corners still calibrate

    for utt in utterances:
        z = utterance_z[utt.id]
        world.features[utt.id] = embed * z + rng.normal(0.0, sigma_feature, feature_dim)
        frames = (spec_base + z * spec_direction
                  + rng.normal(0.0, sigma_feature, (spectrogram_frames, N_BINS)))
        world.spectrograms[utt.id] = np.clip(frames, 0.0, None)
    return Corpus(utterances), world


def _choice_from_diff(d: float, tau: float) -> str:
    # Boundary ties fall toward the weaker i-side choice: d == 0 gives
    # "i_little", d == -tau gives "i_more".
    if d > tau:
        return "j_more"
    if d > 0.0:
        return "j_little"
    if d > -tau:
        return "i_little"
    return "i_more"


def generate_acr(world: LatentWorld, utterances: list[Utterance], n_labels: int,
                 seed: int, svd_id: str = DEFAULT_SVD.id,
                 n_annotators: int = 50) -> list[AcrLabel]:
    """Simulated absolute ratings: the calibrated latent plus rating noise,
    rounded and clamped onto the 5-point scale."""
    if n_labels < 1:
        raise ValueError("n_labels must be >= 1")
    rng = np.random.default_rng(seed)
    labels = []
    for _ in range(n_labels):
        utt = utterances[rng.integers(len(utterances))]
        noisy = world.to_acr_scale(world.utterance_z[utt.id]) \
            + rng.normal(0.0, world.sigma_label)
        rating = int(np.clip(np.rint(noisy), 1, 5))
        labels.append(AcrLabel(svd_id=svd_id, annotator_id=f"ann{rng.integers(n_annotators):02d}",
                               utterance_id=utt.id, rating=rating))
    return labels


def generate_ccr(world: LatentWorld, pairs: list[tuple[str, str]], n_labels: int,
                 seed: int, svd_id: str = DEFAULT_SVD.id,
                 n_annotators: int = 50) -> list[CcrLabel]:
    """Simulated forced-choice comparisons: both latents get independent
    noise, the difference is thresholded at 0 and +-tau."""
    if not pairs:
        raise ValueError("no eligible pairs to label")
    if n_labels < 1:
        raise ValueError("n_labels must be >= 1")
    rng = np.random.default_rng(seed)
    labels = []
    for _ in range(n_labels):
        utt_i, utt_j = pairs[rng.integers(len(pairs))]
        if rng.integers(2) == 1:
            utt_i, utt_j = utt_j, utt_i
        d = (world.utterance_z[utt_j] + rng.normal(0.0, world.sigma_label)) \
            - (world.utterance_z[utt_i] + rng.normal(0.0, world.sigma_label))
        labels.append(CcrLabel(svd_id=svd_id, annotator_id=f"ann{rng.integers(n_annotators):02d}",
                               utt_i=utt_i, utt_j=utt_j,
                               choice=_choice_from_diff(d, world.tau)))
    return labels


def simulate_panel(world: LatentWorld, questions: list[tuple[str, str]],
                   n_annotators: int, seed: int) -> list[ResponseTally]:
    """Every annotator answers every common question with independent noise."""
    if n_annotators < 1:
        raise ValueError("n_annotators must be >= 1")
    rng = np.random.default_rng(seed)
    tallies = []
    for utt_i, utt_j in questions:
        counts = [0, 0, 0, 0]
        slot = {"i_more": 0, "i_little": 1, "j_little": 2, "j_more": 3}
        for _ in range(n_annotators):
            d = (world.utterance_z[utt_j] + rng.normal(0.0, world.sigma_label)) \
                - (world.utterance_z[utt_i] + rng.normal(0.0, world.sigma_label))
            counts[slot[_choice_from_diff(d, world.tau)]] += 1
        tallies.append(ResponseTally(*counts))
    return tallies


def choice_probabilities(world: LatentWorld, utt_i: str, utt_j: str,
                         ) -> tuple[float, float, float, float]:
    """Exact per-choice probabilities under the noise model: the noisy
    difference is Gaussian with mean z_j - z_i and variance 2 sigma^2."""
    delta = world.utterance_z[utt_j] - world.utterance_z[utt_i]
    tau = world.tau
    if world.sigma_label == 0.0:
        choice = _choice_from_diff(delta, tau)
        return tuple(1.0 if c == choice else 0.0
                     for c in ("i_more", "i_little", "j_little", "j_more"))
    s = world.sigma_label * np.sqrt(2.0)
    cdf = lambda x: float(norm.cdf((x - delta) / s))
    p1 = cdf(-tau)
    p2 = cdf(0.0) - cdf(-tau)
    p3 = cdf(tau) - cdf(0.0)
    p4 = 1.0 - cdf(tau)
    return p1, p2, p3, p4


def _expected_agreement(p_lo: float, p_hi: float, n: int) -> tuple[float, float]:
    """E[max(a, m - a) / m | m >= 1] and P(m >= 1) for a panel of n answers
    landing in this variant with probability p_lo + p_hi."""
    p_variant = p_lo + p_hi
    if p_variant == 0.0:
        return 0.0, 0.0
    q = p_hi / p_variant
    m_dist = binom(n, p_variant)
    p_any = 1.0 - m_dist.pmf(0)
    if p_any == 0.0:
        return 0.0, 0.0
    total = 0.0
    for m in range(1, n + 1):
        pm = m_dist.pmf(m)
        if pm == 0.0:
            continue
        a = np.arange(m + 1)
        total += pm * float(np.sum(binom(m, q).pmf(a) * np.maximum(a, m - a) / m))
    return total / p_any, p_any


def expected_panel_agreement(world: LatentWorld, questions: list[tuple[str, str]],
                             n_annotators: int) -> tuple[float, float]:
    """Closed-form expectation of the agreement-based upper-bound estimator
    for a finite panel, averaged over the given questions."""
    strong_vals, strong_w, weak_vals, weak_w = [], [], [], []
    for utt_i, utt_j in questions:
        p1, p2, p3, p4 = choice_probabilities(world, utt_i, utt_j)
        e_s, w_s = _expected_agreement(p1, p4, n_annotators)
        e_w, w_w = _expected_agreement(p2, p3, n_annotators)
        strong_vals.append(e_s * w_s)
        strong_w.append(w_s)
        weak_vals.append(e_w * w_w)
        weak_w.append(w_w)
    # Questions enter the estimator only when they draw >= 1 response of the
    # variant; weight the conditional expectations accordingly.
    ub_strong = sum(strong_vals) / sum(strong_w) if sum(strong_w) else float("nan")
    ub_weak = sum(weak_vals) / sum(weak_w) if sum(weak_w) else float("nan")
    return ub_strong, ub_weak


def asymptotic_panel_agreement(world: LatentWorld, questions: list[tuple[str, str]],
                               ) -> tuple[float, float]:
    """Large-panel limit of the agreement estimator: max(p1,p4)/(p1+p4) and
    max(p2,p3)/(p2+p3) averaged over questions with positive denominators."""
    strong, weak = [], []
    for utt_i, utt_j in questions:
        p1, p2, p3, p4 = choice_probabilities(world, utt_i, utt_j)
        if p1 + p4 > 0:
            strong.append(max(p1, p4) / (p1 + p4))
        if p2 + p3 > 0:
            weak.append(max(p2, p3) / (p2 + p3))
    return (sum(strong) / len(strong) if strong else float("nan"),
            sum(weak) / len(weak) if weak else float("nan"))


def sample_questions(corpus: Corpus, svd: Svd, n_questions: int,
                     seed: int) -> list[tuple[str, str]]:
    """Common panel questions: distinct eligible pairs in random orientation."""
    pairs = corpus.eligible_pairs(svd)
    if len(pairs) < n_questions:
        raise ValueError(f"only {len(pairs)} eligible pairs, need {n_questions}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pairs), size=n_questions, replace=False)
    questions = []
    for i in idx:
        utt_i, utt_j = pairs[i]
        if rng.integers(2) == 1:
            utt_i, utt_j = utt_j, utt_i
        questions.append((utt_i, utt_j))
    return questions


def synthesize_tone(world: LatentWorld, utt_id: str, duration_s: float = 0.4,
                    sample_rate: int = 16000) -> Waveform:
    """A clean tone whose pitch tracks the latent score; enough for listening
    checks and end-to-end annotation tests."""
    level = world.to_acr_scale(world.utterance_z[utt_id])
    freq = 180.0 + 50.0 * level
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    taper = np.hanning(len(t))
    return Waveform(0.3 * np.sin(2.0 * np.pi * freq * t) * taper, sample_rate)


def write_synthetic_dataset(out_dir: str | Path, corpus: Corpus, world: LatentWorld,
                            labels: list, svd: Svd = DEFAULT_SVD,
                            panel_labels: list | None = None,
                            with_audio: bool = False) -> dict[str, Path]:
    """Emit the standard on-disk layout: feature and spectrogram manifests,
    binary feature files, labels, descriptor registry, and ground truth."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "spectrograms").mkdir(exist_ok=True)
    paths: dict[str, Path] = {}

    spec_utts = []
    for utt in corpus.utterances:
        write_feature_file(out / "features" / f"{utt.id}.svdf", world.features[utt.id])
        write_spectrogram_file(out / "spectrograms" / f"{utt.id}.svds",
                               world.spectrograms[utt.id])
        spec_utts.append(Utterance(
            id=utt.id, speaker_id=utt.speaker_id, gender=utt.gender,
            sentence_id=utt.sentence_id, duration_s=utt.duration_s,
            feature_path=f"spectrograms/{utt.id}.svds"))
    paths["manifest"] = out / "manifest.jsonl"
    save_corpus(corpus, paths["manifest"])
    paths["manifest_spectrograms"] = out / "manifest_spectrograms.jsonl"
    save_corpus(Corpus(spec_utts), paths["manifest_spectrograms"])

    if with_audio:
        (out / "audio").mkdir(exist_ok=True)
        audio_utts = []
        for utt in corpus.utterances:
            wav_rel = f"audio/{utt.id}.wav"
            write_wav(out / wav_rel, synthesize_tone(world, utt.id))
            audio_utts.append(Utterance(
                id=utt.id, speaker_id=utt.speaker_id, gender=utt.gender,
                sentence_id=utt.sentence_id, duration_s=utt.duration_s,
                audio_path=wav_rel))
        paths["manifest_audio"] = out / "manifest_audio.jsonl"
        save_corpus(Corpus(audio_utts), paths["manifest_audio"])

    paths["labels"] = out / "labels.jsonl"
    save_labels(labels, paths["labels"])
    if panel_labels is not None:
        paths["panel_labels"] = out / "labels_panel.jsonl"
        save_labels(panel_labels, paths["panel_labels"])

    paths["svds"] = out / "svds.json"
    with open(paths["svds"], "w", encoding="utf-8") as fh:
        json.dump([{"id": svd.id, "description": svd.description,
                    "gender_scope": svd.gender_scope}], fh, indent=2)

    paths["world"] = out / "world.json"
    with open(paths["world"], "w", encoding="utf-8") as fh:
        json.dump({"seed": world.seed, "sigma_jitter": world.sigma_jitter,
                   "sigma_label": world.sigma_label, "sigma_feature": world.sigma_feature,
                   "tau": world.tau, "z_lo": world.z_lo, "z_hi": world.z_hi,
                   "speaker_base": world.speaker_base,
                   "utterance_z": world.utterance_z}, fh, indent=2)
        fh.write("\n")
    return paths
