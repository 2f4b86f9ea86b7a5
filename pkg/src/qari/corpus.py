"""Lexical and corpus resources: vocabulary, phone list, dictionary, transcripts.

A corpus directory looks like::

    corpus/
      transcripts.txt   file_id<TAB>id id ...
      speakers.txt      speaker<TAB>gender<TAB>train|test   (optional)
      vocabulary.tsv    id<TAB>word<TAB>category             (optional)
      dictionary.txt    WORD PH PH ... / WORD(2) PH ...      (optional)
      phones.txt        one phone per line                   (optional)
      wav/<file_id>.wav

Missing optional resources fall back to the packaged defaults. File ids may
carry a sub-directory (``take2/yacine-119``); the basename always follows the
``speakername-commandID`` convention.
"""

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from qari.errors import (
    BadCommandIdError,
    BadExtensionError,
    DuplicateFileIdError,
    DuplicatePhoneError,
    DuplicateVariantError,
    EmptyPronunciationError,
    EmptyTranscriptError,
    NoHyphenError,
    QariError,
    UnknownPhoneError,
    UnknownSpeakerError,
    UnknownWordIdError,
    VariantWithoutBaseError,
    VocabularyError,
)

SIL = "SIL"
N_WORDS = 142

CATEGORY_RANGES = {
    "sura": (1, 114),
    "reciter": (115, 118),
    "control": (119, 132),
    "digit": (133, 142),
}

TRANSCRIPTS_FILE = "transcripts.txt"
SPEAKERS_FILE = "speakers.txt"
VOCABULARY_FILE = "vocabulary.tsv"
DICTIONARY_FILE = "dictionary.txt"
PHONES_FILE = "phones.txt"
SEGMENTS_FILE = "segments.txt"
WAV_DIR = "wav"


def category_for_id(word_id):
    n = int(word_id)
    for category, (lo, hi) in CATEGORY_RANGES.items():
        if lo <= n <= hi:
            return category
    raise BadCommandIdError(f"word id {word_id!r} outside 001-{N_WORDS:03d}")


# ---------------------------------------------------------------------------
# vocabulary

@dataclass(frozen=True)
class VocabEntry:
    word: str
    category: str


class Vocabulary:
    """Table of word ids ("001".."142") to Arabic word and category."""

    def __init__(self, entries):
        self.entries = dict(sorted(entries.items()))
        words = [e.word for e in self.entries.values()]
        if len(set(words)) != len(words):
            raise VocabularyError("duplicate word in vocabulary")
        for wid, entry in self.entries.items():
            if not re.fullmatch(r"\d{3}", wid):
                raise VocabularyError(f"malformed word id {wid!r}")
            if category_for_id(wid) != entry.category:
                raise VocabularyError(
                    f"id {wid} is category {category_for_id(wid)}, table says {entry.category}")

    def __contains__(self, word_id):
        return word_id in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, word_id):
        return self.entries[word_id]

    def word(self, word_id):
        return self.entries[word_id].word

    def ids(self, category=None):
        return [wid for wid, e in self.entries.items() if category is None or e.category == category]

    def subset(self, ids):
        return Vocabulary({wid: self.entries[wid] for wid in ids})

    def render(self, ids):
        """Arabic form of a word-id sequence, for display."""
        return " ".join(self.word(i) if i in self else i for i in ids)


def parse_vocabulary(text):
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            raise VocabularyError(f"line {lineno}: expected id<TAB>word<TAB>category")
        wid, word, category = (p.strip() for p in parts)
        if wid in entries:
            raise VocabularyError(f"line {lineno}: duplicate id {wid}")
        if category not in CATEGORY_RANGES:
            raise VocabularyError(f"line {lineno}: unknown category {category!r}")
        entries[wid] = VocabEntry(word, category)
    return Vocabulary(entries)


def format_vocabulary(vocab):
    return "".join(f"{wid}\t{e.word}\t{e.category}\n" for wid, e in vocab.entries.items())


# ---------------------------------------------------------------------------
# phone set

class PhoneSet:
    """Ordered, duplicate-free phone inventory that always contains SIL."""

    def __init__(self, phones):
        phones = list(phones)
        if len(set(phones)) != len(phones):
            raise DuplicatePhoneError(next(p for p in phones if phones.count(p) > 1), None)
        if SIL not in phones:
            phones.append(SIL)
        self.phones = tuple(phones)
        self._index = {p: i for i, p in enumerate(self.phones)}

    def __contains__(self, phone):
        return phone in self._index

    def __iter__(self):
        return iter(self.phones)

    def __len__(self):
        return len(self.phones)

    def __eq__(self, other):
        return isinstance(other, PhoneSet) and self.phones == other.phones

    def __repr__(self):
        return f"PhoneSet({list(self.phones)!r})"

    def index(self, phone):
        return self._index[phone]


def parse_phone_list(text):
    phones = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        sym = line.strip()
        if not sym:
            continue
        if len(sym.split()) != 1:
            raise ValueError(f"line {lineno}: one phone per line, got {sym!r}")
        if sym in seen:
            raise DuplicatePhoneError(sym, lineno)
        seen.add(sym)
        phones.append(sym)
    return PhoneSet(phones)


def format_phone_list(phone_set):
    return "".join(p + "\n" for p in phone_set)


# ---------------------------------------------------------------------------
# pronunciation dictionary

_HEAD = re.compile(r"^(.+?)\((\d+)\)$")


class PronunciationDictionary:
    """Word -> ordered list of pronunciation variants (tuples of phones)."""

    def __init__(self, entries=None):
        self.entries = {w: [tuple(v) for v in vs] for w, vs in (entries or {}).items()}

    def __contains__(self, word):
        return word in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, PronunciationDictionary) and self.entries == other.entries

    def __repr__(self):
        return f"PronunciationDictionary({len(self.entries)} words)"

    def variants(self, word):
        return self.entries[word]

    def words(self):
        return list(self.entries)

    def phones(self):
        return {p for vs in self.entries.values() for v in vs for p in v}

    def subset(self, words):
        return PronunciationDictionary({w: self.entries[w] for w in words})


def parse_dictionary(text, phone_set=None):
    """Parse `WORD PH PH ...` lines; `WORD(n)` lines add the n-th variant.

    With a phone set given, every phone must belong to it.
    """
    numbered = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        tokens = line.split()
        if not tokens:
            continue
        head, phones = tokens[0], tokens[1:]
        m = _HEAD.match(head)
        word, n = (m.group(1), int(m.group(2))) if m else (head, 1)
        if not phones:
            raise EmptyPronunciationError(f"line {lineno}: {head!r} has no phones")
        if phone_set is not None:
            for p in phones:
                if p not in phone_set:
                    raise UnknownPhoneError(p, word)
        variants = numbered.setdefault(word, {})
        if n in variants:
            raise DuplicateVariantError(f"line {lineno}: variant {n} of {word!r} repeated")
        variants[n] = tuple(phones)
    for word, variants in numbered.items():
        if 1 not in variants:
            raise VariantWithoutBaseError(f"{word!r} has numbered variants but no base form")
    return PronunciationDictionary(
        {w: [vs[n] for n in sorted(vs)] for w, vs in numbered.items()})


def format_dictionary(dictionary):
    lines = []
    for word, variants in dictionary.entries.items():
        for k, v in enumerate(variants):
            head = word if k == 0 else f"{word}({k + 1})"
            lines.append(f"{head} {' '.join(v)}\n")
    return "".join(lines)


# ---------------------------------------------------------------------------
# transcripts and file naming

def parse_file_id(name):
    """Split ``speakername-commandID.wav`` on its last hyphen."""
    base = Path(name).name
    if not base.endswith(".wav"):
        raise BadExtensionError(f"{name!r} does not end in .wav")
    stem = base[:-4]
    if "-" not in stem:
        raise NoHyphenError(f"{name!r} has no speaker/command hyphen")
    speaker, command_id = stem.rsplit("-", 1)
    if not speaker:
        raise NoHyphenError(f"{name!r} has an empty speaker name")
    if not re.fullmatch(r"\d{3}", command_id) or not 1 <= int(command_id) <= N_WORDS:
        raise BadCommandIdError(f"{command_id!r} is not a command id in 001-{N_WORDS:03d}")
    return speaker, command_id


def parse_transcripts(text, vocabulary):
    """Parse `file_id<TAB>id id ...` lines. SIL tokens may mark silence/noise."""
    out = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ValueError(f"line {lineno}: expected file_id<TAB>ids")
        file_id, rest = line.split("\t", 1)
        file_id = file_id.strip()
        if file_id in seen:
            raise DuplicateFileIdError(f"line {lineno}: {file_id!r} transcribed twice")
        seen.add(file_id)
        tokens = rest.split()
        for tok in tokens:
            if tok != SIL and tok not in vocabulary:
                raise UnknownWordIdError(tok, f"line {lineno}")
        if not any(tok != SIL for tok in tokens):
            raise EmptyTranscriptError(f"line {lineno}: {file_id!r} has no words")
        out.append((file_id, tokens))
    return out


def format_transcripts(transcripts):
    return "".join(f"{fid}\t{' '.join(ids)}\n" for fid, ids in transcripts)


@dataclass
class UtteranceRecord:
    file_id: str
    speaker: str
    transcript: list
    audio_path: str
    gender: str = None

    @property
    def words(self):
        return [w for w in self.transcript if w != SIL]


@dataclass
class CorpusSplit:
    train: list
    test: list

    def speakers(self, part):
        return {r.speaker for r in getattr(self, part)}


def split_by_speaker(records, train_speakers):
    present = {r.speaker for r in records}
    unknown = set(train_speakers) - present
    if unknown:
        raise UnknownSpeakerError(f"not in corpus: {', '.join(sorted(unknown))}")
    train = [r for r in records if r.speaker in train_speakers]
    test = [r for r in records if r.speaker not in train_speakers]
    return CorpusSplit(train, test)


# ---------------------------------------------------------------------------
# validation

MISSING_PRONUNCIATION = "missing_pronunciation"
UNKNOWN_PHONE = "unknown_phone"
UNREADABLE_AUDIO = "unreadable_audio"
UNOBSERVED_WORD = "unobserved_word"


@dataclass(frozen=True)
class Finding:
    kind: str
    subject: str
    detail: str = ""

    def __str__(self):
        return f"{self.kind}\t{self.subject}\t{self.detail}".rstrip()


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    def __len__(self):
        return len(self.findings)

    def __iter__(self):
        return iter(self.findings)

    @property
    def trainable(self):
        return not self.findings

    def of_kind(self, kind):
        return [f for f in self.findings if f.kind == kind]


def validate_corpus(records, vocabulary, dictionary, phone_set, check_audio=True):
    """Cross-check the four training resources against one another."""
    from qari.frontend import read_wav

    findings = []
    observed = set()
    missing = set()
    for rec in records:
        for w in rec.words:
            observed.add(w)
            if w not in dictionary and w not in missing:
                missing.add(w)
                findings.append(Finding(MISSING_PRONUNCIATION, w, f"first used by {rec.file_id}"))
    for word in dictionary:
        for variant in dictionary.variants(word):
            for p in variant:
                if p not in phone_set:
                    findings.append(Finding(UNKNOWN_PHONE, p, f"in pronunciation of {word}"))
    if check_audio:
        for rec in records:
            try:
                read_wav(rec.audio_path)
            except (OSError, QariError) as exc:
                findings.append(Finding(UNREADABLE_AUDIO, rec.file_id, str(exc)))
    for wid in vocabulary:
        if wid not in observed:
            findings.append(Finding(UNOBSERVED_WORD, wid))
    return ValidationReport(findings)


# ---------------------------------------------------------------------------
# packaged defaults and corpus directories

def _data_text(name):
    return resources.files("qari").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def default_vocabulary():
    return parse_vocabulary(_data_text(VOCABULARY_FILE))


def default_phone_set():
    return parse_phone_list(_data_text(PHONES_FILE))


def default_dictionary():
    return parse_dictionary(_data_text(DICTIONARY_FILE), default_phone_set())


def read_text(path):
    return Path(path).read_text(encoding="utf-8")


def load_phone_set(path):
    return parse_phone_list(read_text(path))


def load_dictionary(path, phone_set=None):
    return parse_dictionary(read_text(path), phone_set)


def load_vocabulary(path):
    return parse_vocabulary(read_text(path))


def parse_speakers(text):
    """`speaker<TAB>gender<TAB>split` lines -> {speaker: (gender, split)}."""
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        speaker = parts[0].strip()
        gender = parts[1].strip() if len(parts) > 1 and parts[1].strip() else None
        part = parts[2].strip() if len(parts) > 2 and parts[2].strip() else "train"
        out[speaker] = (gender, part)
    return out


@dataclass
class Corpus:
    root: Path
    records: list
    vocabulary: Vocabulary
    dictionary: PronunciationDictionary
    phone_set: PhoneSet
    speakers: dict

    def split(self):
        """Train/test split from speakers.txt; unlisted speakers train."""
        train = {s for s in {r.speaker for r in self.records}
                 if self.speakers.get(s, (None, "train"))[1] == "train"}
        return split_by_speaker(self.records, train)

    def records_for(self, part):
        if part == "all":
            return list(self.records)
        return getattr(self.split(), part)

    def validate(self, check_audio=True):
        return validate_corpus(self.records, self.vocabulary, self.dictionary,
                               self.phone_set, check_audio)


def load_corpus(root, dictionary_path=None, phones_path=None):
    root = Path(root)
    vocab_path = root / VOCABULARY_FILE
    vocabulary = load_vocabulary(vocab_path) if vocab_path.exists() else default_vocabulary()
    phones_path = Path(phones_path) if phones_path else root / PHONES_FILE
    phone_set = load_phone_set(phones_path) if phones_path.exists() else default_phone_set()
    dictionary_path = Path(dictionary_path) if dictionary_path else root / DICTIONARY_FILE
    # unknown phones are reported by validation rather than raised here
    dictionary = (load_dictionary(dictionary_path) if dictionary_path.exists()
                  else default_dictionary())
    speakers_path = root / SPEAKERS_FILE
    speakers = parse_speakers(read_text(speakers_path)) if speakers_path.exists() else {}

    records = []
    for file_id, ids in parse_transcripts(read_text(root / TRANSCRIPTS_FILE), vocabulary):
        speaker, _ = parse_file_id(Path(file_id).name + ".wav")
        gender = speakers.get(speaker, (None, None))[0]
        records.append(UtteranceRecord(file_id, speaker, ids,
                                       str(root / WAV_DIR / f"{file_id}.wav"), gender))
    return Corpus(root, records, vocabulary, dictionary, phone_set, speakers)
