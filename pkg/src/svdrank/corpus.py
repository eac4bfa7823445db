"""Domain model: utterances, descriptor labels, speaker-disjoint splits, samplers."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

GENDERS = ("M", "F")
GENDER_SCOPES = ("M", "F", "any")

# Forced 4-choice comparison outcomes, in presentation order: the first two
# favour the first clip of the pair, the last two favour the second.
CCR_CHOICES = ("i_more", "i_little", "j_little", "j_more")

_CHOICE_TARGET = {"i_more": 0.0, "i_little": 0.25, "j_little": 0.75, "j_more": 1.0}
_CHOICE_MIRROR = {"i_more": "j_more", "i_little": "j_little",
                  "j_little": "i_little", "j_more": "i_more"}


class ManifestError(ValueError):
    """Raised for malformed or inconsistent corpus manifests."""


class LabelError(ValueError):
    """Raised for malformed label records or records violating pair constraints."""


class SplitConfigError(ValueError):
    """Raised when a requested split cannot be constructed."""


@dataclass(frozen=True)
class Utterance:
    """One speech item; carries exactly one source (audio file or feature file)."""

    id: str
    speaker_id: str
    gender: str
    sentence_id: str
    duration_s: float
    audio_path: str | None = None
    feature_path: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("utterance id must be non-empty")
        if self.gender not in GENDERS:
            raise ManifestError(f"utterance {self.id!r}: gender must be one of {GENDERS}")
        if not self.duration_s > 0:
            raise ManifestError(f"utterance {self.id!r}: duration_s must be > 0")
        if (self.audio_path is None) == (self.feature_path is None):
            raise ManifestError(
                f"utterance {self.id!r}: exactly one of audio_path/feature_path required"
            )


@dataclass(frozen=True)
class Svd:
    """A subjective voice descriptor, e.g. a youthful-sounding female voice."""

    id: str
    description: str = ""
    gender_scope: str = "any"

    def __post_init__(self) -> None:
        if self.gender_scope not in GENDER_SCOPES:
            raise ValueError(f"gender_scope must be one of {GENDER_SCOPES}")

    def admits(self, gender: str) -> bool:
        return self.gender_scope == "any" or self.gender_scope == gender


@dataclass(frozen=True)
class AcrLabel:
    """Absolute 1-5 rating of a single utterance on one descriptor."""

    svd_id: str
    annotator_id: str
    utterance_id: str
    rating: int
    index: int | None = None  # ordinal in the source label file, for split replay

    def __post_init__(self) -> None:
        if not isinstance(self.rating, int) or not 1 <= self.rating <= 5:
            raise LabelError(f"rating must be an integer in [1,5], got {self.rating!r}")


@dataclass(frozen=True)
class CcrLabel:
    """Forced 4-choice comparison of an ordered utterance pair on one descriptor."""

    svd_id: str
    annotator_id: str
    utt_i: str
    utt_j: str
    choice: str
    index: int | None = None

    def __post_init__(self) -> None:
        if self.utt_i == self.utt_j:
            raise LabelError(f"comparison pair must be two distinct utterances, got {self.utt_i!r} twice")
        if self.choice not in CCR_CHOICES:
            raise LabelError(f"choice must be one of {CCR_CHOICES}, got {self.choice!r}")


def ccr_choice_to_target(choice: str) -> float:
    """Map a comparison choice to the pairwise target probability that j wins."""
    try:
        return _CHOICE_TARGET[choice]
    except KeyError:
        raise LabelError(f"choice must be one of {CCR_CHOICES}, got {choice!r}") from None


def mirror_choice(choice: str) -> str:
    """The choice an annotator would give with the pair presented in swapped order."""
    try:
        return _CHOICE_MIRROR[choice]
    except KeyError:
        raise LabelError(f"choice must be one of {CCR_CHOICES}, got {choice!r}") from None


class Corpus:
    """Immutable utterance collection with speaker/sentence/gender indexes."""

    def __init__(self, utterances: list[Utterance]):
        self.utterances = list(utterances)
        self.by_id: dict[str, Utterance] = {}
        for utt in self.utterances:
            if utt.id in self.by_id:
                raise ManifestError(f"duplicate utterance id {utt.id!r}")
            self.by_id[utt.id] = utt
        self.by_speaker: dict[str, list[Utterance]] = {}
        self.by_group: dict[tuple[str, str], list[Utterance]] = {}
        for utt in self.utterances:
            self.by_speaker.setdefault(utt.speaker_id, []).append(utt)
            self.by_group.setdefault((utt.sentence_id, utt.gender), []).append(utt)

    def __len__(self) -> int:
        return len(self.utterances)

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self.by_id

    def speakers(self, gender_scope: str = "any") -> list[str]:
        """Speaker ids in scope, sorted for deterministic sampling."""
        ids = {u.speaker_id for u in self.utterances
               if gender_scope == "any" or u.gender == gender_scope}
        return sorted(ids)

    def scoped(self, svd: Svd) -> list[Utterance]:
        return [u for u in self.utterances if svd.admits(u.gender)]

    def eligible_groups(self, svd: Svd) -> list[list[Utterance]]:
        """Same-sentence same-gender groups of size >= 2 within the descriptor scope."""
        groups = []
        for (_, gender), utts in sorted(self.by_group.items()):
            if svd.admits(gender) and len(utts) >= 2:
                groups.append(utts)
        return groups

    def eligible_pairs(self, svd: Svd) -> list[tuple[str, str]]:
        """All unordered comparison-eligible pairs, as (id, id) with ids in group order."""
        pairs = []
        for utts in self.eligible_groups(svd):
            for a in range(len(utts)):
                for b in range(a + 1, len(utts)):
                    pairs.append((utts[a].id, utts[b].id))
        return pairs


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Load a JSON-lines utterance manifest.

    Each line is an object with keys id, speaker_id, gender ("M"/"F"),
    sentence_id, duration_s and exactly one of audio_path / feature_path.
    """
    utterances = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{manifest_path}:{lineno}: invalid JSON: {exc}") from None
            try:
                utterances.append(Utterance(
                    id=rec["id"],
                    speaker_id=rec["speaker_id"],
                    gender=rec["gender"],
                    sentence_id=rec["sentence_id"],
                    duration_s=float(rec["duration_s"]),
                    audio_path=rec.get("audio_path"),
                    feature_path=rec.get("feature_path"),
                ))
            except KeyError as exc:
                raise ManifestError(f"{manifest_path}:{lineno}: missing key {exc}") from None
            except ManifestError as exc:
                raise ManifestError(f"{manifest_path}:{lineno}: {exc}") from None
    return Corpus(utterances)


def utterance_to_record(utt: Utterance) -> dict:
    rec = {"id": utt.id, "speaker_id": utt.speaker_id, "gender": utt.gender,
           "sentence_id": utt.sentence_id, "duration_s": utt.duration_s}
    if utt.audio_path is not None:
        rec["audio_path"] = utt.audio_path
    else:
        rec["feature_path"] = utt.feature_path
    return rec


def save_corpus(corpus: Corpus, manifest_path: str | Path) -> None:
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for utt in corpus.utterances:
            fh.write(json.dumps(utterance_to_record(utt)) + "\n")


def _label_from_record(rec: dict, index: int) -> AcrLabel | CcrLabel:
    if "rating" in rec:
        return AcrLabel(svd_id=rec["svd"], annotator_id=rec["annotator"],
                        utterance_id=rec["utt"], rating=rec["rating"], index=index)
    return CcrLabel(svd_id=rec["svd"], annotator_id=rec["annotator"],
                    utt_i=rec["utt_i"], utt_j=rec["utt_j"], choice=rec["choice"],
                    index=index)


def label_to_record(label: AcrLabel | CcrLabel) -> dict:
    if isinstance(label, AcrLabel):
        return {"svd": label.svd_id, "annotator": label.annotator_id,
                "utt": label.utterance_id, "rating": label.rating}
    return {"svd": label.svd_id, "annotator": label.annotator_id,
            "utt_i": label.utt_i, "utt_j": label.utt_j, "choice": label.choice}


def load_labels(labels_path: str | Path,
                corpus: Corpus | None = None) -> tuple[list[AcrLabel], list[CcrLabel]]:
    """Load a mixed JSON-lines label file into (acr, ccr) lists.

    With a corpus given, labels referencing unknown utterances are rejected
    (manifest drift should surface, not be dropped), and comparison pairs are
    checked for the same-sentence same-gender constraint.
    """
    acr: list[AcrLabel] = []
    ccr: list[CcrLabel] = []
    with open(labels_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                label = _label_from_record(rec, index=lineno - 1)
            except (json.JSONDecodeError, KeyError) as exc:
                raise LabelError(f"{labels_path}:{lineno}: malformed record: {exc}") from None
            except LabelError as exc:
                raise LabelError(f"{labels_path}:{lineno}: {exc}") from None
            if corpus is not None:
                try:
                    _check_label_against_corpus(label, corpus)
                except LabelError as exc:
                    raise LabelError(f"{labels_path}:{lineno}: {exc}") from None
            if isinstance(label, AcrLabel):
                acr.append(label)
            else:
                ccr.append(label)
    return acr, ccr


def _check_label_against_corpus(label: AcrLabel | CcrLabel, corpus: Corpus) -> None:
    if isinstance(label, AcrLabel):
        if label.utterance_id not in corpus:
            raise LabelError(f"label references unknown utterance {label.utterance_id!r}")
        return
    for utt_id in (label.utt_i, label.utt_j):
        if utt_id not in corpus:
            raise LabelError(f"label references unknown utterance {utt_id!r}")
    ui, uj = corpus.by_id[label.utt_i], corpus.by_id[label.utt_j]
    if ui.sentence_id != uj.sentence_id:
        raise LabelError(f"pair ({ui.id!r}, {uj.id!r}) mixes sentences "
                         f"{ui.sentence_id!r} and {uj.sentence_id!r}")
    if ui.gender != uj.gender:
        raise LabelError(f"pair ({ui.id!r}, {uj.id!r}) mixes genders")


def save_labels(labels: list[AcrLabel | CcrLabel], labels_path: str | Path) -> None:
    with open(labels_path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(json.dumps(label_to_record(label)) + "\n")


@dataclass(frozen=True)
class SplitPlan:
    """Train-speaker set plus the label subsets induced by the disjointness rule.

    Train labels touch only speakers in train_speakers; every test comparison
    involves at least one speaker outside train_speakers.
    """

    svd_id: str
    train_speakers: frozenset[str]
    train_acr: tuple[AcrLabel, ...]
    train_ccr: tuple[CcrLabel, ...]
    test_ccr: tuple[CcrLabel, ...]
    train_speaker_seed: int | None = None


def _speaker(corpus: Corpus, utterance_id: str) -> str:
    try:
        return corpus.by_id[utterance_id].speaker_id
    except KeyError:
        raise LabelError(f"label references unknown utterance {utterance_id!r}") from None


def make_split(corpus: Corpus, acr_labels: list[AcrLabel], ccr_labels: list[CcrLabel],
               svd: Svd, train_speaker_count: int, rng_seed: int) -> SplitPlan:
    """Draw a random train-speaker set and partition the descriptor's labels.

    Train ACR labels rate a train speaker; train CCR labels have both speakers
    in the train set; test CCR labels have at least one speaker held out.
    """
    eligible = corpus.speakers(svd.gender_scope)
    if train_speaker_count > len(eligible):
        raise SplitConfigError(
            f"requested {train_speaker_count} train speakers but only "
            f"{len(eligible)} are eligible for scope {svd.gender_scope!r}"
        )
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(len(eligible), size=train_speaker_count, replace=False)
    train_speakers = frozenset(eligible[i] for i in chosen)

    train_acr = tuple(
        l for l in acr_labels
        if l.svd_id == svd.id and _speaker(corpus, l.utterance_id) in train_speakers
    )
    train_ccr, test_ccr = [], []
    for l in ccr_labels:
        if l.svd_id != svd.id:
            continue
        in_i = _speaker(corpus, l.utt_i) in train_speakers
        in_j = _speaker(corpus, l.utt_j) in train_speakers
        if in_i and in_j:
            train_ccr.append(l)
        else:
            test_ccr.append(l)
    return SplitPlan(svd_id=svd.id, train_speakers=train_speakers,
                     train_acr=train_acr, train_ccr=tuple(train_ccr),
                     test_ccr=tuple(test_ccr), train_speaker_seed=rng_seed)


def subsample_training(plan: SplitPlan, n: int, rng_seed: int) -> SplitPlan:
    """Keep a uniform random subset of exactly n train labels per used modality."""
    rng = np.random.default_rng(rng_seed)

    def pick(labels: tuple, what: str) -> tuple:
        if not labels:
            return labels
        if n > len(labels):
            raise SplitConfigError(f"cannot subsample {n} {what} labels from {len(labels)}")
        idx = sorted(rng.choice(len(labels), size=n, replace=False))
        return tuple(labels[i] for i in idx)

    return replace(plan, train_acr=pick(plan.train_acr, "ACR"),
                   train_ccr=pick(plan.train_ccr, "CCR"))


def sample_ccr_pair(corpus: Corpus, svd: Svd, rng: np.random.Generator) -> tuple[str, str]:
    """Draw a comparison pair uniformly over all eligible same-sentence
    same-gender pairs, with uniformly random presentation order."""
    groups = corpus.eligible_groups(svd)
    if not groups:
        raise SplitConfigError(
            f"no same-sentence same-gender pair exists for scope {svd.gender_scope!r}"
        )
    # Choosing a group weighted by its pair count, then a pair inside it,
    # is uniform over pairs without enumerating them.
    counts = np.array([len(g) * (len(g) - 1) // 2 for g in groups], dtype=float)
    group = groups[rng.choice(len(groups), p=counts / counts.sum())]
    a, b = rng.choice(len(group), size=2, replace=False)
    utt_i, utt_j = group[a].id, group[b].id
    if rng.integers(2) == 1:
        utt_i, utt_j = utt_j, utt_i
    return utt_i, utt_j


def save_split_plan(plan: SplitPlan, path: str | Path) -> None:
    """Persist a split as speaker ids plus label-file record indices."""
    for group, name in ((plan.train_acr, "train_acr"), (plan.train_ccr, "train_ccr"),
                        (plan.test_ccr, "test_ccr")):
        if any(l.index is None for l in group):
            raise ValueError(f"{name} contains labels without source indices; "
                             "load labels from a file to serialize a split")
    doc = {
        "svd": plan.svd_id,
        "train_speakers": sorted(plan.train_speakers),
        "train_speaker_seed": plan.train_speaker_seed,
        "train_acr": [l.index for l in plan.train_acr],
        "train_ccr": [l.index for l in plan.train_ccr],
        "test_ccr": [l.index for l in plan.test_ccr],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_split_plan(path: str | Path, acr_labels: list[AcrLabel],
                    ccr_labels: list[CcrLabel]) -> SplitPlan:
    """Rebuild a split against the same label files it was created from."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    acr_by_index = {l.index: l for l in acr_labels}
    ccr_by_index = {l.index: l for l in ccr_labels}

    def gather(table: dict, indices: list[int], what: str) -> tuple:
        try:
            return tuple(table[i] for i in indices)
        except KeyError as exc:
            raise LabelError(f"split references missing {what} record {exc}") from None

    return SplitPlan(
        svd_id=doc["svd"],
        train_speakers=frozenset(doc["train_speakers"]),
        train_acr=gather(acr_by_index, doc["train_acr"], "ACR"),
        train_ccr=gather(ccr_by_index, doc["train_ccr"], "CCR"),
        test_ccr=gather(ccr_by_index, doc["test_ccr"], "CCR"),
        train_speaker_seed=doc.get("train_speaker_seed"),
    )
