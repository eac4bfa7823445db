import json

import numpy as np
import pytest

from svdrank.corpus import (CCR_CHOICES, AcrLabel, CcrLabel, Corpus, LabelError,
                            ManifestError, SplitConfigError, Svd, Utterance,
                            ccr_choice_to_target, load_corpus, load_labels,
                            load_split_plan, make_split, mirror_choice,
                            sample_ccr_pair, save_labels, save_split_plan,
                            subsample_training)


def utt(uid, spk, gender="M", sent="s00"):
    return Utterance(id=uid, speaker_id=spk, gender=gender, sentence_id=sent,
                     duration_s=3.0, feature_path=f"{uid}.svdf")


def write_manifest(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def manifest_row(uid, spk="sp1", gender="M", sent="s00", **extra):
    row = {"id": uid, "speaker_id": spk, "gender": gender, "sentence_id": sent,
           "duration_s": 2.5, "feature_path": f"{uid}.svdf"}
    row.update(extra)
    return row


class TestManifest:
    def test_load_three_rows(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [manifest_row(f"u{i}") for i in range(3)])
        corpus = load_corpus(path)
        assert len(corpus) == 3
        assert "u1" in corpus

    def test_duplicate_id_names_offender(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [manifest_row("u1"), manifest_row("u1")])
        with pytest.raises(ManifestError, match="u1"):
            load_corpus(path)

    def test_empty_manifest_is_valid(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        assert len(load_corpus(path)) == 0

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(manifest_row("u1")) + "\n{not json\n")
        with pytest.raises(ManifestError, match=":2"):
            load_corpus(path)

    def test_both_sources_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [manifest_row("u1", audio_path="u1.wav")])
        with pytest.raises(ManifestError, match="exactly one"):
            load_corpus(path)

    def test_no_source_rejected(self):
        with pytest.raises(ManifestError):
            Utterance(id="u", speaker_id="s", gender="M", sentence_id="x",
                      duration_s=1.0)

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ManifestError):
            Utterance(id="u1", speaker_id="s1", gender="M", sentence_id="s00",
                      duration_s=0.0, feature_path="u1.svdf")


class TestChoiceMapping:
    def test_paper_targets(self):
        assert ccr_choice_to_target("i_more") == 0.0
        assert ccr_choice_to_target("i_little") == 0.25
        assert ccr_choice_to_target("j_little") == 0.75
        assert ccr_choice_to_target("j_more") == 1.0

    def test_bijection_onto_four_values(self):
        targets = {ccr_choice_to_target(c) for c in CCR_CHOICES}
        assert targets == {0.0, 0.25, 0.75, 1.0}

    def test_swap_identity(self):
        for choice in CCR_CHOICES:
            assert ccr_choice_to_target(mirror_choice(choice)) == \
                1.0 - ccr_choice_to_target(choice)

    def test_unknown_choice_rejected(self):
        with pytest.raises(LabelError):
            ccr_choice_to_target("no_difference")


class TestLabels:
    def test_rating_bounds(self):
        with pytest.raises(LabelError):
            AcrLabel(svd_id="s", annotator_id="a", utterance_id="u", rating=6)
        with pytest.raises(LabelError):
            AcrLabel(svd_id="s", annotator_id="a", utterance_id="u", rating=0)

    def test_self_pair_rejected(self):
        with pytest.raises(LabelError):
            CcrLabel(svd_id="s", annotator_id="a", utt_i="u1", utt_j="u1",
                     choice="i_more")

    def test_roundtrip_and_validation(self, tmp_path):
        corpus = Corpus([utt("u1", "sp1"), utt("u2", "sp2")])
        labels = [AcrLabel("svdA", "ann0", "u1", 4),
                  CcrLabel("svdA", "ann0", "u1", "u2", "j_more")]
        path = tmp_path / "labels.jsonl"
        save_labels(labels, path)
        acr, ccr = load_labels(path, corpus)
        assert len(acr) == 1 and len(ccr) == 1
        assert acr[0].rating == 4 and ccr[0].choice == "j_more"
        assert acr[0].index == 0 and ccr[0].index == 1

    def test_unknown_utterance_rejected_at_load(self, tmp_path):
        corpus = Corpus([utt("u1", "sp1")])
        path = tmp_path / "labels.jsonl"
        save_labels([AcrLabel("svdA", "ann0", "zz", 3)], path)
        with pytest.raises(LabelError, match="zz"):
            load_labels(path, corpus)

    def test_cross_sentence_pair_rejected(self, tmp_path):
        corpus = Corpus([utt("u1", "sp1", sent="s00"), utt("u2", "sp2", sent="s01")])
        path = tmp_path / "labels.jsonl"
        save_labels([CcrLabel("svdA", "ann0", "u1", "u2", "i_more")], path)
        with pytest.raises(LabelError, match="mixes sentences"):
            load_labels(path, corpus)

    def test_cross_gender_pair_rejected(self, tmp_path):
        corpus = Corpus([utt("u1", "sp1", gender="M"), utt("u2", "sp2", gender="F")])
        path = tmp_path / "labels.jsonl"
        save_labels([CcrLabel("svdA", "ann0", "u1", "u2", "i_more")], path)
        with pytest.raises(LabelError, match="gender"):
            load_labels(path, corpus)


def four_speaker_corpus():
    utts = []
    for k, spk in enumerate(["s1", "s2", "s3", "s4"]):
        utts.append(utt(f"u{k}", spk))
    return Corpus(utts)


class TestSplit:
    svd = Svd(id="svdA", gender_scope="any")

    def ccr(self, a, b, choice="j_more"):
        return CcrLabel("svdA", "ann0", a, b, choice)

    def test_rule_application(self):
        corpus = four_speaker_corpus()
        labels = [self.ccr("u0", "u2"), self.ccr("u0", "u1")]
        # force S_train = {s1, s2} by trying seeds
        for seed in range(50):
            plan = make_split(corpus, [], labels, self.svd, 2, rng_seed=seed)
            if plan.train_speakers == frozenset({"s1", "s2"}):
                break
        else:
            pytest.fail("no seed produced the target speaker set")
        assert labels[0] in plan.test_ccr   # (s1, s3): s3 held out
        assert labels[1] in plan.train_ccr  # (s1, s2): both in

    def test_all_speakers_in_train_empties_test(self):
        corpus = four_speaker_corpus()
        labels = [self.ccr("u0", "u1"), self.ccr("u2", "u3")]
        plan = make_split(corpus, [], labels, self.svd, 4, rng_seed=0)
        assert plan.test_ccr == ()
        assert set(plan.train_ccr) == set(labels)

    def test_too_few_speakers(self):
        corpus = four_speaker_corpus()
        with pytest.raises(SplitConfigError):
            make_split(corpus, [], [], self.svd, 5, rng_seed=0)

    def test_same_seed_same_plan(self):
        corpus = four_speaker_corpus()
        labels = [self.ccr("u0", "u2"), self.ccr("u0", "u1"), self.ccr("u1", "u3")]
        a = make_split(corpus, [], labels, self.svd, 2, rng_seed=7)
        b = make_split(corpus, [], labels, self.svd, 2, rng_seed=7)
        assert a == b

    def test_acr_filtered_to_train_speakers(self):
        corpus = four_speaker_corpus()
        acr = [AcrLabel("svdA", "ann0", f"u{k}", 3) for k in range(4)]
        plan = make_split(corpus, acr, [], self.svd, 2, rng_seed=3)
        for label in plan.train_acr:
            assert corpus.by_id[label.utterance_id].speaker_id in plan.train_speakers

    def test_paper_scale_gendered_scopes(self):
        # 1351 female and 786 male speakers, one utterance each; the
        # female-scoped split draws 870 and the male-scoped 500.
        utts = [utt(f"f{k}", f"fs{k}", gender="F") for k in range(1351)]
        utts += [utt(f"m{k}", f"ms{k}", gender="M") for k in range(786)]
        corpus = Corpus(utts)
        plan_f = make_split(corpus, [], [], Svd(id="youthF", gender_scope="F"),
                            870, rng_seed=0)
        assert len(plan_f.train_speakers) == 870
        assert all(s.startswith("fs") for s in plan_f.train_speakers)
        plan_m = make_split(corpus, [], [], Svd(id="resonM", gender_scope="M"),
                            500, rng_seed=0)
        assert len(plan_m.train_speakers) == 500
        assert all(s.startswith("ms") for s in plan_m.train_speakers)

    def test_audit_over_random_corpora(self):
        # Spot audit of the invariants on several random corpora and seeds.
        rng = np.random.default_rng(0)
        for trial in range(10):
            n_spk = int(rng.integers(4, 12))
            utts = [utt(f"u{s}_{k}", f"sp{s}") for s in range(n_spk) for k in range(2)]
            corpus = Corpus(utts)
            ids = [u.id for u in corpus.utterances]
            labels = []
            for _ in range(30):
                a, b = rng.choice(len(ids), size=2, replace=False)
                labels.append(self.ccr(ids[a], ids[b]))
            plan = make_split(corpus, [], labels, self.svd,
                              int(rng.integers(1, n_spk + 1)), rng_seed=trial)
            for l in plan.train_ccr:
                assert corpus.by_id[l.utt_i].speaker_id in plan.train_speakers
                assert corpus.by_id[l.utt_j].speaker_id in plan.train_speakers
            for l in plan.test_ccr:
                outside = (corpus.by_id[l.utt_i].speaker_id not in plan.train_speakers
                           or corpus.by_id[l.utt_j].speaker_id not in plan.train_speakers)
                assert outside
            assert set(plan.train_ccr).isdisjoint(plan.test_ccr)


class TestSubsample:
    svd = Svd(id="svdA", gender_scope="any")

    def make_plan(self, n_labels=40):
        corpus = four_speaker_corpus()
        labels = [CcrLabel("svdA", "ann0", "u0", "u1", "j_more") for _ in range(n_labels)]
        acr = [AcrLabel("svdA", "ann0", "u0", 3) for _ in range(n_labels)]
        return make_split(corpus, acr, labels, self.svd, 4, rng_seed=0)

    def test_identity_at_full_size(self):
        plan = self.make_plan(12)
        sub = subsample_training(plan, 12, rng_seed=5)
        assert sorted(id(l) for l in sub.train_ccr) == \
            sorted(id(l) for l in plan.train_ccr)

    def test_exact_count_and_speakers(self):
        plan = self.make_plan(40)
        sub = subsample_training(plan, 7, rng_seed=5)
        assert len(sub.train_ccr) == 7
        assert len(sub.train_acr) == 7

    def test_deterministic(self):
        plan = self.make_plan(40)
        assert subsample_training(plan, 9, 3) == subsample_training(plan, 9, 3)

    def test_too_large_errors(self):
        plan = self.make_plan(5)
        with pytest.raises(SplitConfigError):
            subsample_training(plan, 6, rng_seed=0)


class TestPairSampling:
    def test_forced_pair(self):
        corpus = Corpus([utt("a", "s1"), utt("b", "s2")])
        svd = Svd(id="x", gender_scope="M")
        pair = sample_ccr_pair(corpus, svd, np.random.default_rng(0))
        assert set(pair) == {"a", "b"}

    def test_unsatisfiable_constraint(self):
        corpus = Corpus([utt("a", "s1", sent="s00"), utt("b", "s2", sent="s01")])
        with pytest.raises(SplitConfigError):
            sample_ccr_pair(corpus, Svd(id="x"), np.random.default_rng(0))

    def test_pair_shares_sentence_and_gender(self):
        utts = [utt(f"u{k}", f"sp{k}", gender="MF"[k % 2], sent=f"s{k % 3}")
                for k in range(24)]
        corpus = Corpus(utts)
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = sample_ccr_pair(corpus, Svd(id="x"), rng)
            ua, ub = corpus.by_id[a], corpus.by_id[b]
            assert a != b
            assert ua.sentence_id == ub.sentence_id
            assert ua.gender == ub.gender

    def test_uniform_over_pairs_within_3_sigma(self):
        # 3 utterances in one group -> 3 unordered pairs. For 1000 multinomial
        # draws at p = 1/3, sigma = sqrt(1000 * (1/3) * (2/3)) = 14.907, so
        # every count must sit within 3 sigma = 44.7 of 333.3.
        corpus = Corpus([utt("a", "s1"), utt("b", "s2"), utt("c", "s3")])
        rng = np.random.default_rng(42)
        counts: dict[frozenset, int] = {}
        orient_first = 0
        for _ in range(1000):
            i, j = sample_ccr_pair(corpus, Svd(id="x"), rng)
            counts[frozenset((i, j))] = counts.get(frozenset((i, j)), 0) + 1
            if i < j:
                orient_first += 1
        assert len(counts) == 3
        for count in counts.values():
            assert abs(count - 1000 / 3) <= 3 * 14.907
        # orientation is a fair coin: 3 sigma = 3 * sqrt(1000 * 0.25) = 47.4
        assert abs(orient_first - 500) <= 47.5


class TestSplitPlanSerialization:
    def test_roundtrip_via_record_indices(self, tmp_path):
        corpus = four_speaker_corpus()
        labels = [CcrLabel("svdA", "ann0", "u0", "u1", "j_more"),
                  CcrLabel("svdA", "ann0", "u0", "u2", "i_more"),
                  AcrLabel("svdA", "ann0", "u1", 2)]
        labels_path = tmp_path / "labels.jsonl"
        save_labels(labels, labels_path)
        acr, ccr = load_labels(labels_path)
        plan = make_split(corpus, acr, ccr, Svd(id="svdA"), 2, rng_seed=1)
        plan_path = tmp_path / "plan.json"
        save_split_plan(plan, plan_path)
        again = load_split_plan(plan_path, acr, ccr)
        assert again == plan

    def test_unserializable_without_indices(self, tmp_path):
        corpus = four_speaker_corpus()
        labels = [CcrLabel("svdA", "ann0", "u0", "u1", "j_more")]
        plan = make_split(corpus, [], labels, Svd(id="svdA"), 4, rng_seed=0)
        with pytest.raises(ValueError, match="indices"):
            save_split_plan(plan, tmp_path / "plan.json")
