import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qari import corpus as ck
from qari.errors import (
    BadCommandIdError,
    BadExtensionError,
    DuplicateFileIdError,
    DuplicatePhoneError,
    DuplicateVariantError,
    EmptyPronunciationError,
    EmptyTranscriptError,
    NoHyphenError,
    UnknownPhoneError,
    UnknownSpeakerError,
    UnknownWordIdError,
    VariantWithoutBaseError,
)
from qari.frontend import encode_wav

VOCAB = ck.default_vocabulary()


class TestFileId:
    def test_examples(self):
        assert ck.parse_file_id("yacine-001.wav") == ("yacine", "001")
        assert ck.parse_file_id("a-b-133.wav") == ("a-b", "133")
        assert ck.parse_file_id("corpus/wav/yacine-142.wav") == ("yacine", "142")

    @pytest.mark.parametrize("name", ["yacine-999.wav", "yacine-000.wav", "yacine-01.wav",
                                      "yacine-abc.wav"])
    def test_bad_command_id(self, name):
        with pytest.raises(BadCommandIdError):
            ck.parse_file_id(name)

    def test_no_hyphen(self):
        with pytest.raises(NoHyphenError):
            ck.parse_file_id("yacine001.wav")

    def test_bad_extension(self):
        with pytest.raises(BadExtensionError):
            ck.parse_file_id("yacine-001.mp3")


class TestPhoneList:
    def test_examples(self):
        assert list(ck.parse_phone_list("B\nT\nSIL")) == ["B", "T", "SIL"]
        assert list(ck.parse_phone_list("")) == ["SIL"]
        assert list(ck.parse_phone_list("B\n\nT\n")) == ["B", "T", "SIL"]

    def test_duplicate_reports_line(self):
        with pytest.raises(DuplicatePhoneError) as info:
            ck.parse_phone_list("B\nB")
        assert info.value.line == 2

    def test_default_inventory(self):
        phones = ck.default_phone_set()
        assert len([p for p in phones if p != ck.SIL]) == 34
        vowels = {"a", "i", "u", "aa", "ii", "uu"}
        assert vowels <= set(phones)

    @settings(max_examples=50)
    @given(st.lists(st.text("abcdefghEHST", min_size=1, max_size=3), unique=True))
    def test_round_trip(self, phones):
        ps = ck.parse_phone_list("\n".join(phones))
        assert ck.parse_phone_list(ck.format_phone_list(ps)) == ps


AB = ck.parse_phone_list("A\nB")


class TestDictionary:
    def test_variants(self):
        d = ck.parse_dictionary("X A B\nX(2) A B B", AB)
        assert d.variants("X") == [("A", "B"), ("A", "B", "B")]

    def test_unknown_phone(self):
        with pytest.raises(UnknownPhoneError) as info:
            ck.parse_dictionary("X A Q", AB)
        assert info.value.phone == "Q"

    def test_empty(self):
        assert len(ck.parse_dictionary("", AB)) == 0

    def test_errors(self):
        with pytest.raises(DuplicateVariantError):
            ck.parse_dictionary("X A\nX B", AB)
        with pytest.raises(EmptyPronunciationError):
            ck.parse_dictionary("X", AB)
        with pytest.raises(VariantWithoutBaseError):
            ck.parse_dictionary("X(2) A", AB)

    def test_variants_ordered_numerically(self):
        d = ck.parse_dictionary("X(3) B\nX A\nX(2) A A", AB)
        assert d.variants("X") == [("A",), ("A", "A"), ("B",)]

    def test_default_dictionary_covers_vocabulary(self):
        d = ck.default_dictionary()
        phones = ck.default_phone_set()
        assert set(d.words()) == set(VOCAB.ids())
        assert d.phones() <= set(phones)
        prons = [v for w in d for v in d.variants(w)]
        assert len(prons) == len(set(prons))

    @settings(max_examples=50)
    @given(st.dictionaries(st.from_regex(r"[0-9]{3}", fullmatch=True),
                           st.lists(st.lists(st.sampled_from(["A", "B"]), min_size=1,
                                             max_size=4).map(tuple), min_size=1, max_size=3,
                                    unique=True)))
    def test_round_trip(self, entries):
        d = ck.PronunciationDictionary(entries)
        assert ck.parse_dictionary(ck.format_dictionary(d), AB) == d


class TestTranscripts:
    def test_examples(self):
        assert ck.parse_transcripts("yacine-001\t001", VOCAB) == [("yacine-001", ["001"])]
        assert ck.parse_transcripts("s-126\t126 128 134", VOCAB) == [("s-126", ["126", "128", "134"])]
        assert ck.parse_transcripts("s-121\tSIL 121 SIL", VOCAB) == [("s-121", ["SIL", "121", "SIL"])]

    def test_errors(self):
        with pytest.raises(UnknownWordIdError):
            ck.parse_transcripts("x-001\t999", VOCAB)
        with pytest.raises(EmptyTranscriptError):
            ck.parse_transcripts("x-001\t", VOCAB)
        with pytest.raises(EmptyTranscriptError):
            ck.parse_transcripts("x-001\tSIL", VOCAB)
        with pytest.raises(DuplicateFileIdError):
            ck.parse_transcripts("x-001\t001\nx-001\t002", VOCAB)

    @settings(max_examples=50)
    @given(st.lists(st.lists(st.sampled_from(["001", "119", "142", "SIL"]), min_size=1, max_size=4)
                    .filter(lambda ids: any(i != "SIL" for i in ids)), max_size=6))
    def test_round_trip(self, transcripts):
        pairs = [(f"spk-{i:03d}", ids) for i, ids in enumerate(transcripts, 1)]
        assert ck.parse_transcripts(ck.format_transcripts(pairs), VOCAB) == pairs


class TestVocabulary:
    def test_category_ranges(self):
        assert len(VOCAB) == 142
        for wid in VOCAB:
            n = int(wid)
            want = ("sura" if n <= 114 else "reciter" if n <= 118
                    else "control" if n <= 132 else "digit")
            assert VOCAB[wid].category == want
        assert VOCAB.word("001") == "الفاتحة"
        assert VOCAB.word("121") == "توقف"
        assert VOCAB.word("134") == "واحد"

    def test_round_trip(self):
        assert ck.parse_vocabulary(ck.format_vocabulary(VOCAB)).entries == VOCAB.entries

    def test_words_unique(self):
        words = [VOCAB.word(w) for w in VOCAB]
        assert len(words) == len(set(words))


def records_for(speakers, words=("119",)):
    return [ck.UtteranceRecord(f"{s}-{w}", s, [w], f"/nowhere/{s}-{w}.wav")
            for s in speakers for w in words]


class TestSplit:
    def test_fifty_speakers(self):
        roster = [f"s{i}" for i in range(50)]
        split = ck.split_by_speaker(records_for(roster, ("119", "120")), set(roster[:35]))
        assert len(split.speakers("train")) == 35 and len(split.speakers("test")) == 15
        assert len(split.train) == 70 and len(split.test) == 30

    def test_all_train(self):
        split = ck.split_by_speaker(records_for(["a", "b"]), {"a", "b"})
        assert split.test == [] and len(split.train) == 2

    def test_unknown_speaker(self):
        with pytest.raises(UnknownSpeakerError):
            ck.split_by_speaker(records_for(["a"]), {"a", "zed"})

    @settings(max_examples=50)
    @given(st.sets(st.integers(0, 30), min_size=1), st.data())
    def test_partition(self, ids, data):
        roster = sorted(f"s{i}" for i in ids)
        train = set(data.draw(st.lists(st.sampled_from(roster), unique=True)))
        records = records_for(roster)
        split = ck.split_by_speaker(records, train)
        assert not split.speakers("train") & split.speakers("test")
        assert sorted(r.file_id for r in split.train + split.test) == sorted(
            r.file_id for r in records)


class TestValidation:
    @pytest.fixture
    def toy(self, tmp_path):
        vocab = VOCAB.subset(["119", "120"])
        d = ck.parse_dictionary("119 A B\n120 B A")
        recs = records_for(["a"], ("119", "120"))
        for r in recs:
            r.audio_path = str(tmp_path / f"{r.file_id}.wav")
            (tmp_path / f"{r.file_id}.wav").write_bytes(encode_wav([0.0] * 500))
        return recs, vocab, d

    def test_consistent(self, toy):
        recs, vocab, d = toy
        report = ck.validate_corpus(recs, vocab, d, AB)
        assert report.trainable and len(report) == 0

    def test_missing_pronunciation(self, toy):
        recs, vocab, _ = toy
        report = ck.validate_corpus(recs, vocab, ck.parse_dictionary("119 A B"), AB)
        assert [f.subject for f in report.of_kind(ck.MISSING_PRONUNCIATION)] == ["120"]
        assert not report.trainable

    def test_unknown_phone(self, toy):
        recs, vocab, _ = toy
        d = ck.parse_dictionary("119 A B\n120 B Q")
        assert [f.subject for f in ck.validate_corpus(recs, vocab, d, AB)
                .of_kind(ck.UNKNOWN_PHONE)] == ["Q"]

    def test_unreadable_audio(self, toy):
        recs, vocab, d = toy
        recs[0].audio_path += ".missing"
        found = ck.validate_corpus(recs, vocab, d, AB).of_kind(ck.UNREADABLE_AUDIO)
        assert [f.subject for f in found] == [recs[0].file_id]

    def test_unobserved_word(self, toy):
        recs, _, d = toy
        vocab = VOCAB.subset(["119", "120", "121"])
        d = ck.parse_dictionary("119 A B\n120 B A\n121 A")
        found = ck.validate_corpus(recs, vocab, d, AB).of_kind(ck.UNOBSERVED_WORD)
        assert [f.subject for f in found] == ["121"]
