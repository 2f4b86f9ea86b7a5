"""Quran-reader command interpretation and state machine.

Recognized word ids become ReaderCommands; `apply` is a total function from
(state, command) to the next state. Out-of-context commands are logged no-ops
so that a misrecognition never crashes the reader.
"""

import enum
from dataclasses import dataclass, replace

from qari.errors import MalformedCommandError, NumberOutOfRangeError, UnknownIdError

N_SURAS = 114
N_AJZA = 30
N_AHZAB = 60
RUB_PER_HIZB = 4
MAX_AYA = 286
DEFAULT_RECITER = 115

CONTROL_WORDS = {
    "119": "recite",
    "120": "end",
    "121": "pause",
    "122": "resume",
    "123": "repeat",
    "124": "memorize",
    "125": "tafsir",
    "127": "search",
}
CONTROL_IDS = {kind: wid for wid, kind in CONTROL_WORDS.items()}
GOTO_WORD = "126"
UNIT_WORDS = {"128": "sura", "129": "aya", "130": "hizb", "131": "juz"}
UNIT_IDS = {unit: wid for wid, unit in UNIT_WORDS.items()}
UNIT_BOUNDS = {"sura": N_SURAS, "aya": MAX_AYA, "hizb": N_AHZAB, "juz": N_AJZA}
DIGIT_VALUES = {str(133 + d): d for d in range(10)}
DIGIT_IDS = {d: wid for wid, d in DIGIT_VALUES.items()}
RECITER_IDS = range(115, 119)

# (sura, aya) where each hizb starts in the standard Hafs division; juz k
# starts at hizb 2k - 1.
HIZB_START = [
    (1, 1), (2, 75), (2, 142), (2, 203), (2, 253), (3, 15), (3, 93), (3, 171),
    (4, 24), (4, 88), (4, 148), (5, 27), (5, 82), (6, 36), (6, 111), (7, 1),
    (7, 88), (7, 171), (8, 41), (9, 34), (9, 93), (10, 26), (11, 6), (11, 84),
    (12, 53), (13, 19), (15, 1), (16, 51), (17, 1), (17, 99), (18, 75), (20, 1),
    (21, 1), (22, 1), (23, 1), (24, 21), (25, 21), (26, 111), (27, 56), (28, 51),
    (29, 46), (31, 22), (33, 31), (34, 24), (36, 28), (37, 145), (39, 32), (40, 41),
    (41, 47), (43, 24), (46, 1), (48, 18), (51, 31), (55, 1), (58, 1), (62, 1),
    (67, 1), (72, 1), (78, 1), (87, 1),
]
JUZ_START = HIZB_START[::2]


@dataclass(frozen=True)
class QuranMeta:
    n_suras: int = N_SURAS
    n_ajza: int = N_AJZA
    n_ahzab: int = N_AHZAB
    rub_per_hizb: int = RUB_PER_HIZB

    @staticmethod
    def sura_names(vocabulary):
        return {int(w): vocabulary.word(w) for w in vocabulary.ids("sura")}

    @staticmethod
    def reciters(vocabulary):
        return {int(w): vocabulary.word(w) for w in vocabulary.ids("reciter")}


class Mode(enum.Enum):
    IDLE = "Idle"
    RECITING = "Reciting"
    PAUSED = "Paused"
    MEMORIZE = "Memorize"
    TAFSIR = "Tafsir"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ReaderCommand:
    kind: str
    unit: str = None
    number: int = None

    def __str__(self):
        if self.kind == "goto":
            return f"goto {self.unit} {self.number}"
        if self.number is not None:
            return f"{self.kind} {self.number}"
        return self.kind


COMMAND_KINDS = ("recite", "end", "pause", "resume", "repeat", "memorize", "tafsir",
                 "search", "goto", "select_sura", "select_reciter")


def _check_bounds(unit, number):
    if not 1 <= number <= UNIT_BOUNDS[unit]:
        raise NumberOutOfRangeError(f"{unit} {number} outside 1-{UNIT_BOUNDS[unit]}")


def goto(unit, number):
    _check_bounds(unit, number)
    return ReaderCommand("goto", unit, number)


def interpret(ids, vocabulary=None):
    """Map a recognized word-id sequence to a ReaderCommand."""
    ids = [i for i in ids if i != "SIL"]
    if not ids:
        raise MalformedCommandError("no words to interpret")
    for wid in ids:
        if not (wid.isdigit() and len(wid) == 3 and 1 <= int(wid) <= 142) or (
                vocabulary is not None and wid not in vocabulary):
            raise UnknownIdError(f"unknown word id {wid!r}")
    head = ids[0]
    if head == GOTO_WORD:
        if len(ids) < 3 or ids[1] not in UNIT_WORDS:
            raise MalformedCommandError("goto needs a unit word and at least one digit")
        digits = ids[2:]
        if len(digits) > 3 or any(d not in DIGIT_VALUES for d in digits):
            raise MalformedCommandError("goto number must be one to three digit words")
        number = 0
        for d in digits:
            number = 10 * number + DIGIT_VALUES[d]
        return goto(UNIT_WORDS[ids[1]], number)
    if len(ids) != 1:
        raise MalformedCommandError(f"unexpected word sequence {' '.join(ids)}")
    n = int(head)
    if head in CONTROL_WORDS:
        return ReaderCommand(CONTROL_WORDS[head])
    if 1 <= n <= N_SURAS:
        return ReaderCommand("select_sura", number=n)
    if n in RECITER_IDS:
        return ReaderCommand("select_reciter", number=n)
    # unit words, bare digits and 132 carry no stand-alone reader action
    raise MalformedCommandError(f"word {head} is not a command on its own")


def render(cmd):
    """Canonical word-id sequence for a command; inverse of interpret."""
    if cmd.kind in CONTROL_IDS:
        return [CONTROL_IDS[cmd.kind]]
    if cmd.kind == "goto":
        return [GOTO_WORD, UNIT_IDS[cmd.unit]] + [DIGIT_IDS[int(c)] for c in str(cmd.number)]
    if cmd.kind in ("select_sura", "select_reciter"):
        return [f"{cmd.number:03d}"]
    raise MalformedCommandError(f"cannot render {cmd}")


@dataclass(frozen=True)
class ReaderState:
    mode: Mode = Mode.IDLE
    sura: int = 1
    aya: int = 1
    reciter: int = DEFAULT_RECITER
    last_event: str = "ready"

    def __post_init__(self):
        if not 1 <= self.sura <= N_SURAS:
            raise ValueError(f"sura {self.sura} outside 1-{N_SURAS}")
        if self.aya < 1:
            raise ValueError("aya must be >= 1")
        if self.reciter not in RECITER_IDS:
            raise ValueError(f"reciter {self.reciter} outside 115-118")

    @property
    def position(self):
        return (self.sura, self.aya)

    def describe(self):
        return f"{self.mode} at {self.sura}:{self.aya} reciter {self.reciter}"


# mode transitions: command kind -> {from mode: to mode}
MODE_TABLE = {
    "recite": {Mode.IDLE: Mode.RECITING, Mode.PAUSED: Mode.RECITING},
    "pause": {Mode.RECITING: Mode.PAUSED},
    "resume": {Mode.PAUSED: Mode.RECITING},
    "end": {m: Mode.IDLE for m in Mode},
    "memorize": {Mode.IDLE: Mode.MEMORIZE, Mode.RECITING: Mode.MEMORIZE},
    "tafsir": {Mode.IDLE: Mode.TAFSIR, Mode.RECITING: Mode.TAFSIR},
}


def apply(state, cmd):
    """Next reader state. Never raises for a well-formed command."""
    if cmd.kind in MODE_TABLE:
        target = MODE_TABLE[cmd.kind].get(state.mode)
        if target is None:
            return replace(state, last_event=f"warning: {cmd.kind} ignored in {state.mode}")
        return replace(state, mode=target,
                       last_event=f"{state.mode} -> {target} at {state.sura}:{state.aya}")
    if cmd.kind == "repeat":
        return replace(state, last_event=f"repeat {state.sura}:{state.aya} ({state.mode})")
    if cmd.kind == "search":
        return replace(state, last_event="search is not implemented")
    if cmd.kind == "select_sura":
        return replace(state, sura=cmd.number, aya=1,
                       last_event=f"sura {cmd.number} selected ({state.mode})")
    if cmd.kind == "select_reciter":
        return replace(state, reciter=cmd.number, last_event=f"reciter {cmd.number} selected")
    if cmd.kind == "goto":
        try:
            _check_bounds(cmd.unit, cmd.number)
        except NumberOutOfRangeError as exc:
            return replace(state, last_event=f"warning: {exc}")
        if cmd.unit == "sura":
            sura, aya = cmd.number, 1
        elif cmd.unit == "aya":
            sura, aya = state.sura, cmd.number
        elif cmd.unit == "juz":
            sura, aya = JUZ_START[cmd.number - 1]
        else:
            sura, aya = HIZB_START[cmd.number - 1]
        return replace(state, sura=sura, aya=aya,
                       last_event=f"goto {cmd.unit} {cmd.number} -> {sura}:{aya} ({state.mode})")
    return replace(state, last_event=f"warning: unknown command {cmd.kind}")


def run_repl(lines, out, recognizer=None, vocabulary=None, state=None):
    """Drive the reader from text lines; returns the exit status.

    Commands: `wav <path>`, `ids <id ...>`, `state`, `quit`.
    """
    state = state or ReaderState()
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        verb, _, rest = line.partition(" ")
        try:
            if verb == "quit":
                return 0
            if verb == "state":
                print(state.describe(), file=out)
                continue
            if verb == "wav":
                if recognizer is None:
                    raise ValueError("no acoustic model loaded")
                hyp = recognizer.recognize_file(rest.strip())
                shown = " ".join(hyp.words)
                if vocabulary is not None:
                    shown += f" ({vocabulary.render(hyp.words)})"
                print(f"decoded: {shown}", file=out)
                ids = hyp.words
            elif verb == "ids":
                ids = rest.split()
            else:
                raise ValueError(f"unknown command {verb!r}")
            cmd = interpret(ids, vocabulary)
            state = apply(state, cmd)
            print(f"{cmd}: {state.last_event} | {state.describe()}", file=out)
        except Exception as exc:  # per-line errors keep the REPL alive
            print(f"error: {exc}", file=out)
    return 0
