"""Left-to-right phone HMMs with diagonal Gaussian outputs, and their composition.

A phone HMM with k emitting states has a (k+2) x (k+2) log-transition matrix
indexed entry=0, emitting states 1..k, exit=k+1. The only arcs are entry->1,
i->i, i->i+1 (so k->exit). Entry and exit emit nothing; they exist so phone
models can be chained exit-to-entry into word and utterance HMMs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from qari.corpus import SIL
from qari.errors import (
    BadDimensionError,
    CorruptModelFileError,
    DimensionMismatchError,
    EmptyUtteranceError,
    MissingPhoneError,
    MissingVariantError,
    MissingWordError,
    VarianceBelowFloorError,
    VersionMismatchError,
)
from qari.logmath import LOG_ZERO, logsumexp, safe_log

N_STATES = 3
LOG_2PI = math.log(2 * math.pi)
MODEL_MAGIC = "QARI-AM"
MODEL_VERSION = "v1"

SIL_POLICIES = ("none", "boundary", "all")


@dataclass
class GaussianState:
    mean: np.ndarray
    variance: np.ndarray
    log_norm_const: float = field(init=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).copy()
        self.variance = np.asarray(self.variance, dtype=float).copy()
        if self.mean.shape != self.variance.shape or self.mean.ndim != 1:
            raise BadDimensionError("mean and variance must be equal-length vectors")
        if np.any(~(self.variance > 0)):
            raise VarianceBelowFloorError("variances must be positive")
        self.log_norm_const = -0.5 * float(np.sum(LOG_2PI + np.log(self.variance)))

    @property
    def dim(self):
        return self.mean.shape[0]


def log_output_density(state, x):
    """log N(x; mean, diag(variance))."""
    x = np.asarray(x, dtype=float)
    if x.shape != state.mean.shape:
        raise DimensionMismatchError(f"vector of dim {x.shape} vs state dim {state.dim}")
    return state.log_norm_const - 0.5 * float(np.sum((x - state.mean) ** 2 / state.variance))


def gaussian_loglik(frames, means, variances):
    """(L, S) matrix of log densities of each frame under each diagonal Gaussian."""
    frames = np.asarray(frames, dtype=float)
    log_norm = -0.5 * np.sum(LOG_2PI + np.log(variances), axis=1)
    n_frames, n_states = frames.shape[0], means.shape[0]
    out = np.empty((n_frames, n_states))
    # chunk over frames to bound the (chunk, S, d) temporary
    chunk = max(1, 2_000_000 // max(1, n_states * means.shape[1]))
    for t0 in range(0, n_frames, chunk):
        diff = frames[t0:t0 + chunk, None, :] - means[None, :, :]
        out[t0:t0 + chunk] = log_norm - 0.5 * np.sum(diff * diff / variances, axis=2)
    return out


def topology_mask(n_states):
    k = n_states
    mask = np.zeros((k + 2, k + 2), dtype=bool)
    mask[0, 1] = True
    for i in range(1, k + 1):
        mask[i, i] = True
        mask[i, i + 1] = True
    return mask


def default_log_trans(n_states, self_loop=0.5):
    trans = np.zeros((n_states + 2, n_states + 2))
    trans[0, 1] = 1.0
    for i in range(1, n_states + 1):
        trans[i, i] = self_loop
        trans[i, i + 1] = 1.0 - self_loop
    return safe_log(trans)


@dataclass
class PhoneHmm:
    phone: str
    states: list
    log_trans: np.ndarray

    def __post_init__(self):
        self.log_trans = np.asarray(self.log_trans, dtype=float)
        k = len(self.states)
        if self.log_trans.shape != (k + 2, k + 2):
            raise BadDimensionError(
                f"{self.phone}: transition matrix {self.log_trans.shape} for {k} states")
        outside = ~topology_mask(k) & np.isfinite(self.log_trans)
        if outside.any():
            raise ValueError(f"{self.phone}: arcs outside the left-to-right topology")

    @property
    def n_states(self):
        return len(self.states)

    def row_sums(self):
        """Linear-domain sums of the outgoing arcs of entry and every emitting state."""
        return np.exp(self.log_trans[:-1]).sum(axis=1)

    def copy(self):
        return PhoneHmm(self.phone,
                        [GaussianState(s.mean, s.variance) for s in self.states],
                        self.log_trans.copy())


@dataclass
class AcousticModel:
    phones: dict
    feature_dim: int
    frontend_fingerprint: str = ""

    def __post_init__(self):
        for hmm in self.phones.values():
            for s in hmm.states:
                if s.dim != self.feature_dim:
                    raise BadDimensionError(
                        f"{hmm.phone}: state dim {s.dim} != model dim {self.feature_dim}")

    def __contains__(self, phone):
        return phone in self.phones

    def __getitem__(self, phone):
        return self.phones[phone]

    def phone_list(self):
        return list(self.phones)

    def copy(self):
        return AcousticModel({p: h.copy() for p, h in self.phones.items()},
                             self.feature_dim, self.frontend_fingerprint)

    def covers(self, phone_set):
        return all(p in self.phones for p in phone_set)


def flat_start(phone_set, feature_dim, global_mean, global_variance, variance_floor=None,
               n_states=N_STATES, frontend_fingerprint=""):
    """Every state of every phone starts from the global mean and variance."""
    mean = np.asarray(global_mean, dtype=float)
    var = np.asarray(global_variance, dtype=float)
    if feature_dim < 1 or mean.shape != (feature_dim,) or var.shape != (feature_dim,):
        raise BadDimensionError(f"global statistics do not have dimension {feature_dim}")
    if variance_floor is not None:
        var = np.maximum(var, variance_floor)
    if np.any(~(var > 0)):
        raise VarianceBelowFloorError("global variance is not positive; supply a floor")
    phones = {}
    for p in phone_set:
        states = [GaussianState(mean, var) for _ in range(n_states)]
        phones[p] = PhoneHmm(p, states, default_log_trans(n_states))
    return AcousticModel(phones, feature_dim, frontend_fingerprint)


# ---------------------------------------------------------------------------
# composite HMMs

@dataclass
class CompositeHmm:
    """Emitting states in topological order plus log-weighted arcs.

    `arc_keys[a]` and `final_keys[j]` name the phone-level arc that each
    composite arc instantiates, as (phone, from_state, to_state) in the
    phone's (k+2)-node indexing; the trainer pools counts through them.
    """

    means: np.ndarray
    variances: np.ndarray
    log_init: np.ndarray
    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_logp: np.ndarray
    log_final: np.ndarray
    state_phone: list
    state_index: list
    word_tags: list
    arc_keys: list = None
    final_keys: list = None

    @property
    def n_states(self):
        return len(self.log_init)

    @property
    def n_arcs(self):
        return len(self.arc_src)

    def log_trans(self):
        dense = np.full((self.n_states, self.n_states), LOG_ZERO)
        for s, d, lp in zip(self.arc_src, self.arc_dst, self.arc_logp):
            dense[s, d] = np.logaddexp(dense[s, d], lp)
        return dense

    def emission_loglik(self, frames):
        frames = np.asarray(frames, dtype=float)
        if frames.ndim != 2 or frames.shape[1] != self.means.shape[1]:
            raise DimensionMismatchError(
                f"features of shape {frames.shape} vs model dim {self.means.shape[1]}")
        return gaussian_loglik(frames, self.means, self.variances)

    def min_frames(self):
        """Length of the shortest complete path, in frames (inf if none)."""
        best = np.where(np.isfinite(self.log_init), 1.0, np.inf)
        for _ in range(self.n_states):
            nxt = best.copy()
            for s, d, lp in zip(self.arc_src, self.arc_dst, self.arc_logp):
                if np.isfinite(lp) and s != d:
                    nxt[d] = min(nxt[d], best[s] + 1)
            if np.array_equal(nxt, best):
                break
            best = nxt
        finals = best[np.isfinite(self.log_final)]
        return float(finals.min()) if finals.size else math.inf

    def signature(self):
        """Hashable description used to compare composites up to arc order."""
        states = tuple(zip(self.state_phone, self.state_index, self.word_tags,
                           map(tuple, self.means), map(tuple, self.variances),
                           self.log_init, self.log_final))
        arcs = tuple(sorted(zip(self.arc_src.tolist(), self.arc_dst.tolist(),
                                self.arc_logp.tolist())))
        return states, arcs

    @classmethod
    def from_dense(cls, log_init, log_trans, log_final, means, variances):
        """Free-form composite, used for randomized tests."""
        log_trans = np.asarray(log_trans, dtype=float)
        src, dst = np.nonzero(np.isfinite(log_trans))
        n = len(log_init)
        return cls(np.atleast_2d(np.asarray(means, float).reshape(n, -1)),
                   np.atleast_2d(np.asarray(variances, float).reshape(n, -1)),
                   np.asarray(log_init, float), src, dst, log_trans[src, dst],
                   np.asarray(log_final, float), ["?"] * n, list(range(n)), [None] * n,
                   [("?", int(s), int(d)) for s, d in zip(src, dst)],
                   [("?", j, -1) for j in range(n)])


def _phone_sequence(word_ids, dictionary, variant_choice, sil_policy):
    """[(phone, word_id or None, ends_word)] for an utterance."""
    if sil_policy not in SIL_POLICIES:
        raise ValueError(f"sil_policy must be one of {SIL_POLICIES}")
    tokens = list(word_ids)
    if not [t for t in tokens if t != SIL]:
        raise EmptyUtteranceError("utterance has no words")
    if variant_choice is None:
        variant_choice = [0] * len(tokens)
    if len(variant_choice) != len(tokens):
        raise MissingVariantError("one variant index per token is required")

    seq = []
    for n, (tok, v) in enumerate(zip(tokens, variant_choice)):
        if tok == SIL:
            if not seq or seq[-1][0] != SIL:
                seq.append((SIL, None, False))
            continue
        if tok not in dictionary:
            raise MissingWordError(f"word {tok!r} not in dictionary")
        variants = dictionary.variants(tok)
        if not 0 <= v < len(variants):
            raise MissingVariantError(f"word {tok!r} has no variant {v + 1}")
        if sil_policy == "all" and seq and seq[-1][0] != SIL:
            seq.append((SIL, None, False))
        pron = variants[v]
        for i, p in enumerate(pron):
            seq.append((p, tok, i == len(pron) - 1))
    if sil_policy in ("boundary", "all"):
        if seq[0][0] != SIL:
            seq.insert(0, (SIL, None, False))
        if seq[-1][0] != SIL:
            seq.append((SIL, None, False))
    return seq


def compose_utterance(word_ids, dictionary, model, variant_choice=None, sil_policy="boundary"):
    """Chain phone HMMs for a word sequence into one left-to-right composite.

    `word_ids` may contain SIL tokens. `variant_choice` gives a 0-based
    pronunciation index per token (default: first variant everywhere).
    """
    seq = _phone_sequence(word_ids, dictionary, variant_choice, sil_policy)
    means, variances, phones, index, tags = [], [], [], [], []
    src, dst, logp, keys = [], [], [], []
    prev_exit = None  # (state, log prob of last->exit, key) of the previous phone
    log_init = None
    for phone, word, ends_word in seq:
        if phone not in model:
            raise MissingPhoneError(f"phone {phone!r} not in acoustic model")
        hmm = model[phone]
        k = hmm.n_states
        first = len(means)
        for j, st in enumerate(hmm.states, 1):
            means.append(st.mean)
            variances.append(st.variance)
            phones.append(phone)
            index.append(j)
            tags.append(word if ends_word and j == k else None)
        enter = hmm.log_trans[0, 1]
        if prev_exit is None:
            log_init = (first, enter)
        else:
            s, lp, key = prev_exit
            src.append(s)
            dst.append(first)
            logp.append(lp + enter)
            keys.append(key)
        for j in range(1, k + 1):
            g = first + j - 1
            src.append(g)
            dst.append(g)
            logp.append(hmm.log_trans[j, j])
            keys.append((phone, j, j))
            if j < k:
                src.append(g)
                dst.append(g + 1)
                logp.append(hmm.log_trans[j, j + 1])
                keys.append((phone, j, j + 1))
        prev_exit = (first + k - 1, hmm.log_trans[k, k + 1], (phone, k, k + 1))

    n = len(means)
    init = np.full(n, LOG_ZERO)
    init[log_init[0]] = log_init[1]
    final = np.full(n, LOG_ZERO)
    final[prev_exit[0]] = prev_exit[1]
    final_keys = [None] * n
    final_keys[prev_exit[0]] = prev_exit[2]
    return CompositeHmm(np.array(means), np.array(variances), init,
                        np.array(src, dtype=int), np.array(dst, dtype=int), np.array(logp),
                        final, phones, index, tags, keys, final_keys)


def concatenate(a, b):
    """Composite for `a` followed by `b`: every final arc of `a` feeds every entry of `b`."""
    off = a.n_states
    src, dst, logp = list(a.arc_src), list(a.arc_dst), list(a.arc_logp)
    keys = list(a.arc_keys)
    for i in np.nonzero(np.isfinite(a.log_final))[0]:
        for j in np.nonzero(np.isfinite(b.log_init))[0]:
            src.append(int(i))
            dst.append(int(j) + off)
            logp.append(a.log_final[i] + b.log_init[j])
            keys.append(a.final_keys[i])
    src += list(b.arc_src + off)
    dst += list(b.arc_dst + off)
    logp += list(b.arc_logp)
    keys += list(b.arc_keys)
    return CompositeHmm(np.vstack([a.means, b.means]), np.vstack([a.variances, b.variances]),
                        np.concatenate([a.log_init, np.full(b.n_states, LOG_ZERO)]),
                        np.array(src, dtype=int), np.array(dst, dtype=int), np.array(logp),
                        np.concatenate([np.full(off, LOG_ZERO), b.log_final]),
                        a.state_phone + b.state_phone, a.state_index + b.state_index,
                        a.word_tags + b.word_tags, keys, [None] * off + list(b.final_keys))


# ---------------------------------------------------------------------------
# model file

def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


def format_model(model):
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION} dim={model.feature_dim} phones={len(model.phones)}"]
    if model.frontend_fingerprint:
        lines.append(f"FRONTEND {model.frontend_fingerprint}")
    for phone, hmm in model.phones.items():
        lines.append(f"PHONE {phone} states={hmm.n_states}")
        for st in hmm.states:
            lines.append(f"MEAN {_fmt(st.mean)}")
            lines.append(f"VAR {_fmt(st.variance)}")
        lines.append("TRANS")
        lines.extend(_fmt(row) for row in hmm.log_trans)
    lines.append("END")
    return "\n".join(lines) + "\n"


def save_model(model, sink):
    """Write to a path or a text stream. TRANS rows hold log probabilities."""
    text = format_model(model)
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="utf-8") as f:
            f.write(text)


def _floats(line, tag, dim):
    parts = line.split()
    if not parts or parts[0] != tag or len(parts) != dim + 1:
        raise CorruptModelFileError(f"expected {tag} line with {dim} values")
    try:
        return np.array([float(v) for v in parts[1:]])
    except ValueError as exc:
        raise CorruptModelFileError(str(exc)) from exc


def parse_model(text):
    lines = text.splitlines()
    if not lines:
        raise CorruptModelFileError("empty model file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != MODEL_MAGIC:
        raise CorruptModelFileError(f"bad header {lines[0]!r}")
    if header[1] != MODEL_VERSION:
        raise VersionMismatchError(f"model version {header[1]}, expected {MODEL_VERSION}")
    try:
        dim = int(header[2].removeprefix("dim="))
        n_phones = int(header[3].removeprefix("phones="))
    except ValueError as exc:
        raise CorruptModelFileError(f"bad header {lines[0]!r}") from exc

    pos = 1
    fingerprint = ""
    if pos < len(lines) and lines[pos].startswith("FRONTEND "):
        fingerprint = lines[pos][len("FRONTEND "):]
        pos += 1

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise CorruptModelFileError("model file ends early")
        pos += 1
        return lines[pos - 1]

    phones = {}
    try:
        for _ in range(n_phones):
            parts = take().split()
            if len(parts) != 3 or parts[0] != "PHONE" or not parts[2].startswith("states="):
                raise CorruptModelFileError("expected PHONE line")
            phone, k = parts[1], int(parts[2].removeprefix("states="))
            states = []
            for _ in range(k):
                mean = _floats(take(), "MEAN", dim)
                var = _floats(take(), "VAR", dim)
                states.append(GaussianState(mean, var))
            if take().strip() != "TRANS":
                raise CorruptModelFileError("expected TRANS line")
            rows = []
            for _ in range(k + 2):
                rows.append([float(v) for v in take().split()])
            trans = np.array(rows)
            if trans.shape != (k + 2, k + 2):
                raise CorruptModelFileError(f"{phone}: bad transition matrix shape")
            phones[phone] = PhoneHmm(phone, states, trans)
        if take().strip() != "END":
            raise CorruptModelFileError("missing END marker")
    except CorruptModelFileError:
        raise
    except (ValueError, BadDimensionError, VarianceBelowFloorError) as exc:
        raise CorruptModelFileError(str(exc)) from exc
    return AcousticModel(phones, dim, fingerprint)


def load_model(source):
    if hasattr(source, "read"):
        return parse_model(source.read())
    with open(source, encoding="utf-8") as f:
        return parse_model(f.read())


def max_relative_difference(a, b):
    """Largest |x - y| / max(|x|, tiny) over every parameter of two models."""
    worst = 0.0
    if set(a.phones) != set(b.phones):
        return math.inf
    for p in a.phones:
        ha, hb = a[p], b[p]
        if ha.n_states != hb.n_states:
            return math.inf
        pairs = [(sa.mean, sb.mean) for sa, sb in zip(ha.states, hb.states)]
        pairs += [(sa.variance, sb.variance) for sa, sb in zip(ha.states, hb.states)]
        fin = np.isfinite(ha.log_trans)
        if not np.array_equal(fin, np.isfinite(hb.log_trans)):
            return math.inf
        pairs.append((ha.log_trans[fin], hb.log_trans[fin]))
        for x, y in pairs:
            scale = np.maximum(np.abs(x), np.finfo(float).tiny)
            worst = max(worst, float(np.max(np.abs(x - y) / scale, initial=0.0)))
    return worst
