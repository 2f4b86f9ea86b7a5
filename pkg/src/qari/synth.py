"""Deterministic synthetic corpus, a desk-scale stand-in for recorded speakers.

Every phone gets a fixed pair of "formant" tones. An utterance is SIL, the
phones of each word's first pronunciation, then SIL; each phone becomes an
80-120 ms segment of its two tones (shifted by a per-speaker offset) plus
Gaussian noise at about 20 dB SNR. SIL is low-level noise.
"""

from pathlib import Path

import numpy as np

from qari import corpus as ck
from qari.errors import IoFailureError, MissingPronunciationError
from qari.frontend import SAMPLE_RATE, encode_wav

F1_GRID = np.arange(300.0, 1201.0, 150.0)
F2_GRID = np.arange(1350.0, 3451.0, 150.0)
MIN_SEGMENT = int(0.080 * SAMPLE_RATE)
MAX_SEGMENT = int(0.120 * SAMPLE_RATE)
TONE_AMPLITUDE = 0.25
SNR_DB = 20.0
SIL_NOISE_STD = 0.0025
MAX_SPEAKER_OFFSET_HZ = 50.0


def phone_formants(phone_set, seed):
    """Injective phone -> (f1, f2) map over a 150 Hz grid in 300-3450 Hz.

    Pairs are picked by farthest-point selection in mel space, starting from a
    seed-chosen grid point, so distinct phones differ by >= 150 Hz in at least
    one tone.
    """
    phones = [p for p in phone_set if p != ck.SIL]
    candidates = np.array([(f1, f2) for f1 in F1_GRID for f2 in F2_GRID])
    if len(phones) > len(candidates):
        raise ValueError(f"only {len(candidates)} formant pairs for {len(phones)} phones")
    mel = 2595.0 * np.log10(1.0 + candidates / 700.0)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(candidates)))]
    dist = np.linalg.norm(mel - mel[chosen[0]], axis=1)
    while len(chosen) < len(phones):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(mel - mel[nxt], axis=1))
    return {p: (float(candidates[i][0]), float(candidates[i][1]))
            for p, i in zip(phones, chosen)}


def render_segment(phone, n_samples, formants, offset_hz, rng):
    if phone == ck.SIL:
        return rng.normal(0.0, SIL_NOISE_STD, n_samples)
    f1, f2 = formants[phone]
    t = np.arange(n_samples) / SAMPLE_RATE
    phase = rng.uniform(0.0, 2 * np.pi, 2)
    tone = TONE_AMPLITUDE * (np.sin(2 * np.pi * (f1 + offset_hz) * t + phase[0])
                             + np.sin(2 * np.pi * (f2 + offset_hz) * t + phase[1]))
    signal_power = 2 * TONE_AMPLITUDE ** 2 / 2
    noise_std = np.sqrt(signal_power / 10 ** (SNR_DB / 10))
    return tone + rng.normal(0.0, noise_std, n_samples)


def render_utterance(phones, formants, offset_hz, rng):
    """Returns (samples, [(phone, n_samples), ...])."""
    pieces, log = [], []
    for phone in phones:
        n = int(rng.integers(MIN_SEGMENT, MAX_SEGMENT + 1))
        pieces.append(render_segment(phone, n, formants, offset_hz, rng))
        log.append((phone, n))
    return np.concatenate(pieces), log


def utterance_phones(word_ids, dictionary):
    phones = [ck.SIL]
    for w in word_ids:
        if w not in dictionary:
            raise MissingPronunciationError(f"no pronunciation for word {w}")
        phones.extend(dictionary.variants(w)[0])
    phones.append(ck.SIL)
    return phones


def speaker_names(n_speakers):
    width = max(2, len(str(n_speakers)))
    return [f"spk{i + 1:0{width}d}" for i in range(n_speakers)]


def file_id_for(speaker, word_id, take):
    stem = f"{speaker}-{word_id}"
    return stem if take == 1 else f"take{take}/{stem}"


def synthesize_corpus(seed, vocab_subset, dictionary, phone_set, n_speakers, out_dir,
                      takes=1, n_test_speakers=0, vocabulary=None):
    """Write a synthetic corpus directory and return its UtteranceRecords.

    One utterance per (speaker, word, take). The last `n_test_speakers`
    speakers are marked `test` in speakers.txt.
    """
    vocab_subset = list(vocab_subset)
    for w in vocab_subset:
        if w not in dictionary:
            raise MissingPronunciationError(f"no pronunciation for word {w}")
    if not 0 <= n_test_speakers <= n_speakers:
        raise ValueError("n_test_speakers must lie in [0, n_speakers]")
    vocabulary = vocabulary or ck.default_vocabulary()

    sub_dict = dictionary.subset(vocab_subset)
    used = sub_dict.phones()
    sub_phones = ck.PhoneSet([p for p in phone_set if p in used])
    formants = phone_formants(phone_set, seed)

    master = np.random.default_rng(seed)
    speakers = speaker_names(n_speakers)
    offsets = master.uniform(-MAX_SPEAKER_OFFSET_HZ, MAX_SPEAKER_OFFSET_HZ, n_speakers)
    genders = master.choice(["male", "female"], n_speakers)

    out = Path(out_dir)
    records, transcripts, segment_lines = [], [], []
    try:
        (out / ck.WAV_DIR).mkdir(parents=True, exist_ok=True)
        for s_idx, speaker in enumerate(speakers):
            for take in range(1, takes + 1):
                for word in vocab_subset:
                    rng = np.random.default_rng([seed, s_idx, int(word), take])
                    samples, log = render_utterance(
                        utterance_phones([word], sub_dict), formants, offsets[s_idx], rng)
                    file_id = file_id_for(speaker, word, take)
                    path = out / ck.WAV_DIR / f"{file_id}.wav"
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_bytes(encode_wav(samples))
                    records.append(ck.UtteranceRecord(file_id, speaker, [word], str(path),
                                                      str(genders[s_idx])))
                    transcripts.append((file_id, [word]))
                    segment_lines.append(
                        f"{file_id}\t" + " ".join(f"{p}:{n}" for p, n in log) + "\n")

        n_train = n_speakers - n_test_speakers
        (out / ck.TRANSCRIPTS_FILE).write_text(ck.format_transcripts(transcripts), encoding="utf-8")
        (out / ck.SPEAKERS_FILE).write_text(
            "".join(f"{s}\t{g}\t{'train' if i < n_train else 'test'}\n"
                    for i, (s, g) in enumerate(zip(speakers, genders))), encoding="utf-8")
        (out / ck.SEGMENTS_FILE).write_text("".join(segment_lines), encoding="utf-8")
        (out / ck.DICTIONARY_FILE).write_text(ck.format_dictionary(sub_dict), encoding="utf-8")
        (out / ck.PHONES_FILE).write_text(ck.format_phone_list(sub_phones), encoding="utf-8")
        (out / ck.VOCABULARY_FILE).write_text(
            ck.format_vocabulary(vocabulary.subset(vocab_subset)), encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"writing synthetic corpus to {out}: {exc}") from exc
    return records


def read_segments(path):
    """segments.txt -> {file_id: [(phone, n_samples), ...]}."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        file_id, rest = line.split("\t", 1)
        out[file_id] = [(p, int(n)) for p, n in (tok.rsplit(":", 1) for tok in rest.split())]
    return out
