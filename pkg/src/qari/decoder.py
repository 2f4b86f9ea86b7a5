"""Grammar compilation, Viterbi search and recognition metrics.

The recognizer picks the word sequence with the highest acoustic
log-likelihood plus grammar log prior, scored along the single best state
path.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from qari.acoustic import gaussian_loglik
from qari.corpus import SIL
from qari.errors import (
    EmptyFeaturesError,
    EmptyGrammarError,
    EmptyReferenceError,
    EmptyTestSetError,
    MissingPhoneError,
    MissingWordError,
    NoCompletePathError,
    TooLargeForOracleError,
)
from qari.logmath import LOG_ZERO

GOTO = "126"
UNIT_WORDS = ("128", "129", "130", "131")
DIGIT_WORDS = tuple(str(n) for n in range(133, 143))
MAX_TIED_PATHS = 1000
ORACLE_MAX_STATES = 12
ORACLE_MAX_FRAMES = 8
ORACLE_MAX_PATHS = 2_000_000


def word_sort_key(word):
    return (0, int(word), "") if word.isdigit() else (1, 0, word)


# ---------------------------------------------------------------------------
# grammars

@dataclass(frozen=True)
class GrammarArc:
    src: int
    dst: int
    label: str      # word id, SIL, or None for epsilon
    log_prior: float


@dataclass
class Grammar:
    n_nodes: int
    start: int
    final: int
    arcs: list = field(default_factory=list)

    def words(self):
        return sorted({a.label for a in self.arcs if a.label not in (None, SIL)},
                      key=word_sort_key)

    def outgoing(self, node):
        return [a for a in self.arcs if a.src == node]

    def check(self):
        if not self.arcs:
            raise EmptyGrammarError("grammar has no arcs")
        for node in range(self.n_nodes):
            out = self.outgoing(node)
            if out and abs(sum(math.exp(a.log_prior) for a in out) - 1.0) > 1e-9:
                raise ValueError(f"priors out of grammar node {node} do not sum to 1")
        seen, todo = {self.start}, [self.start]
        while todo:
            n = todo.pop()
            for a in self.outgoing(n):
                if a.dst not in seen:
                    seen.add(a.dst)
                    todo.append(a.dst)
        if self.final not in seen:
            raise EmptyGrammarError("final node unreachable from start")


def uniform_grammar(n_nodes, start, final, edges):
    """Grammar from (src, dst, label) edges, priors uniform per source node."""
    fanout = Counter(src for src, _, _ in edges)
    arcs = [GrammarArc(s, d, lab, -math.log(fanout[s])) for s, d, lab in edges]
    return Grammar(n_nodes, start, final, arcs)


def command_grammar(words):
    """Exactly one word from `words` (optional SIL is added at compile time)."""
    words = sorted(set(words), key=word_sort_key)
    if not words:
        raise EmptyGrammarError("command grammar needs at least one word")
    return uniform_grammar(2, 0, 1, [(0, 1, w) for w in words])


def navigation_grammar(units=UNIT_WORDS, digits=DIGIT_WORDS, max_digits=3):
    """GoTo word, one unit word, then 1..max_digits digit words."""
    # nodes: 0 -126-> 1 -unit-> 2 -digit-> 3 ... ; final is the last node
    edges = [(0, 1, GOTO)] + [(1, 2, u) for u in units]
    final = 3 + max_digits
    for k in range(max_digits):
        node = 2 + k
        edges += [(node, node + 1, d) for d in digits]
        if k > 0:
            edges.append((node, final, None))
    edges.append((2 + max_digits, final, None))
    return uniform_grammar(final + 1, 0, final, edges)


def reader_grammar(words):
    """Union of the command grammar over `words` and, when possible, navigation."""
    cmd = command_grammar([w for w in words if w != GOTO] or words)
    needed = {GOTO, *UNIT_WORDS, *DIGIT_WORDS}
    if not needed <= set(words):
        return cmd
    nav = navigation_grammar()
    # node 0 = start, 1 = final, command nodes 2..3, navigation nodes 4..
    off = 4
    edges = [(0, 2, None), (0, off + nav.start, None),
             (3, 1, None), (off + nav.final, 1, None)]
    edges += [(a.src + 2, a.dst + 2, a.label) for a in cmd.arcs]
    edges += [(a.src + off, a.dst + off, a.label) for a in nav.arcs]
    return uniform_grammar(off + nav.n_nodes, 0, 1, edges)


def with_optional_silence(grammar):
    """Wrap a grammar so that SIL may precede and follow it.

    The grammar's final node must have no outgoing arcs.
    """
    if grammar.outgoing(grammar.final):
        raise ValueError("final grammar node has outgoing arcs")
    n = grammar.n_nodes
    start, final = n, n + 1
    arcs = [GrammarArc(a.src, a.dst, a.label, a.log_prior) for a in grammar.arcs]
    half = math.log(0.5)
    arcs += [GrammarArc(start, grammar.start, SIL, half),
             GrammarArc(start, grammar.start, None, half)]
    arcs += [GrammarArc(grammar.final, final, SIL, half),
             GrammarArc(grammar.final, final, None, half)]
    return Grammar(n + 2, start, final, arcs)


# ---------------------------------------------------------------------------
# search graph

@dataclass
class SearchGraph:
    """Emitting states and scored arcs; all non-emitting nodes compiled away.

    `arc_label[a]` / `final_label[j]` hold the word (or SIL) completed when
    the arc is taken, i.e. on arcs leaving a word's last emitting state.
    """

    means: np.ndarray
    variances: np.ndarray
    log_init: np.ndarray
    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_logp: np.ndarray
    arc_label: list
    log_final: np.ndarray
    final_label: list
    state_phone: list
    state_word: list

    def __post_init__(self):
        self.arc_src = np.asarray(self.arc_src, dtype=int)
        self.arc_dst = np.asarray(self.arc_dst, dtype=int)
        self.arc_logp = np.asarray(self.arc_logp, dtype=float)
        order = np.lexsort((self.arc_src, self.arc_dst))
        self.arc_src = self.arc_src[order]
        self.arc_dst = self.arc_dst[order]
        self.arc_logp = self.arc_logp[order]
        self.arc_label = [self.arc_label[i] for i in order]
        self._outgoing = None

    @property
    def n_states(self):
        return len(self.log_init)

    def emission_loglik(self, frames):
        return gaussian_loglik(frames, self.means, self.variances)

    def outgoing(self, state):
        if self._outgoing is None:
            self._outgoing = [[] for _ in range(self.n_states)]
            for a, s in enumerate(self.arc_src):
                self._outgoing[s].append(a)
        return self._outgoing[state]

    def words_per_state_count(self):
        return Counter(w for w in self.state_word)


@dataclass
class _Instance:
    label: str
    first: int
    last: int
    exit_logp: float
    src_node: int
    dst_node: int
    entry_logp: float


def _closure(grammar):
    """Best (max) log weight of epsilon-only paths between every node pair."""
    n = grammar.n_nodes
    best = np.full((n, n), LOG_ZERO)
    np.fill_diagonal(best, 0.0)
    for a in grammar.arcs:
        if a.label is None:
            best[a.src, a.dst] = max(best[a.src, a.dst], a.log_prior)
    for k in range(n):
        best = np.maximum(best, best[:, k:k + 1] + best[k:k + 1, :])
    return best


def compile_graph(grammar, dictionary, model, sil_policy="boundary", validate=True):
    """Expand grammar words into variant/phone/state chains and stitch them.

    Each word arc splits its prior evenly over the word's pronunciation
    variants. sil_policy "boundary" allows optional SIL around the grammar;
    "none" compiles the grammar as given. `validate=False` skips the prior
    normalization check, for hand-weighted grammars.
    """
    if sil_policy not in ("none", "boundary"):
        raise ValueError("sil_policy must be 'none' or 'boundary'")
    if validate:
        grammar.check()
    elif not grammar.arcs:
        raise EmptyGrammarError("grammar has no arcs")
    if sil_policy == "boundary":
        grammar = with_optional_silence(grammar)
    for word in grammar.words():
        if word not in dictionary:
            raise MissingWordError(f"grammar word {word!r} not in dictionary")

    means, variances, phones, words = [], [], [], []
    src, dst, logp, label = [], [], [], []
    instances = []
    word_arcs = sorted((a for a in grammar.arcs if a.label is not None),
                       key=lambda a: (a.src, word_sort_key(a.label) if a.label != SIL
                                      else (-1, 0, ""), a.dst))
    for arc in word_arcs:
        variants = [(SIL,)] if arc.label == SIL else dictionary.variants(arc.label)
        split = arc.log_prior - math.log(len(variants))
        for pron in variants:
            first = len(means)
            prev_exit = None
            entry = 0.0
            for p in pron:
                if p not in model:
                    raise MissingPhoneError(f"phone {p!r} not in acoustic model")
                hmm = model[p]
                k = hmm.n_states
                start = len(means)
                for st in hmm.states:
                    means.append(st.mean)
                    variances.append(st.variance)
                    phones.append(p)
                    words.append(arc.label)
                if prev_exit is None:
                    entry = hmm.log_trans[0, 1]
                else:
                    src.append(prev_exit[0])
                    dst.append(start)
                    logp.append(prev_exit[1] + hmm.log_trans[0, 1])
                    label.append(None)
                for j in range(1, k + 1):
                    g = start + j - 1
                    src.append(g)
                    dst.append(g)
                    logp.append(hmm.log_trans[j, j])
                    label.append(None)
                    if j < k:
                        src.append(g)
                        dst.append(g + 1)
                        logp.append(hmm.log_trans[j, j + 1])
                        label.append(None)
                prev_exit = (start + k - 1, hmm.log_trans[k, k + 1])
            instances.append(_Instance(arc.label, first, prev_exit[0], prev_exit[1],
                                       arc.src, arc.dst, split + entry))

    n = len(means)
    if n == 0:
        raise EmptyGrammarError("grammar expands to no emitting states")
    closure = _closure(grammar)
    by_start = {}
    for inst in instances:
        by_start.setdefault(inst.src_node, []).append(inst)

    log_init = np.full(n, LOG_ZERO)
    for node, insts in by_start.items():
        w = closure[grammar.start, node]
        if np.isfinite(w):
            for v in insts:
                log_init[v.first] = max(log_init[v.first], w + v.entry_logp)

    log_final = np.full(n, LOG_ZERO)
    final_label = [None] * n
    for u in instances:
        reach = closure[u.dst_node]
        for node, insts in by_start.items():
            if np.isfinite(reach[node]):
                for v in insts:
                    src.append(u.last)
                    dst.append(v.first)
                    logp.append(u.exit_logp + reach[node] + v.entry_logp)
                    label.append(u.label)
        if np.isfinite(reach[grammar.final]):
            log_final[u.last] = u.exit_logp + reach[grammar.final]
            final_label[u.last] = u.label

    graph = SearchGraph(np.array(means), np.array(variances), log_init, src, dst, logp,
                        label, log_final, final_label, phones, words)
    return _prune_dead_states(graph)


def _reachable(n, starts, edges):
    seen = set(starts)
    todo = list(starts)
    adj = [[] for _ in range(n)]
    for s, d in edges:
        adj[s].append(d)
    while todo:
        x = todo.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                todo.append(y)
    return seen


def _prune_dead_states(graph):
    """Drop emitting states that lie on no start->final path."""
    live_arcs = np.isfinite(graph.arc_logp)
    pairs = list(zip(graph.arc_src[live_arcs], graph.arc_dst[live_arcs]))
    fwd = _reachable(graph.n_states, np.nonzero(np.isfinite(graph.log_init))[0], pairs)
    bwd = _reachable(graph.n_states, np.nonzero(np.isfinite(graph.log_final))[0],
                     [(d, s) for s, d in pairs])
    keep = sorted(fwd & bwd)
    if not keep:
        raise EmptyGrammarError("no complete path through the compiled graph")
    if len(keep) == graph.n_states:
        return graph
    remap = np.full(graph.n_states, -1)
    remap[keep] = np.arange(len(keep))
    arcs = [a for a in range(len(graph.arc_src))
            if live_arcs[a] and remap[graph.arc_src[a]] >= 0 and remap[graph.arc_dst[a]] >= 0]
    return SearchGraph(graph.means[keep], graph.variances[keep], graph.log_init[keep],
                       remap[graph.arc_src[arcs]], remap[graph.arc_dst[arcs]],
                       graph.arc_logp[arcs], [graph.arc_label[a] for a in arcs],
                       graph.log_final[keep], [graph.final_label[j] for j in keep],
                       [graph.state_phone[j] for j in keep],
                       [graph.state_word[j] for j in keep])


# ---------------------------------------------------------------------------
# Viterbi

@dataclass
class Hypothesis:
    words: list
    log_score: float
    alignment: list             # per frame (state, phone, word)
    state_path: list
    arc_path: list              # arc index entering frames 1..L-1
    boundaries: list            # frame index at which each non-SIL word ends
    labels: list = field(default_factory=list)   # every completed label incl. SIL


def _frames(feats):
    frames = np.asarray(getattr(feats, "frames", feats), dtype=float)
    if frames.ndim == 1:
        frames = frames[:, None]
    return frames


def _path_labels(graph, states, arcs):
    labels = []
    for t, a in enumerate(arcs):
        if graph.arc_label[a] is not None:
            labels.append((graph.arc_label[a], t))
    last = graph.final_label[states[-1]]
    if last is not None:
        labels.append((last, len(states) - 1))
    return labels


def _tie_key(graph, states, arcs):
    labels = _path_labels(graph, states, arcs)
    words = [(w, t) for w, t in labels if w != SIL]
    return (tuple(word_sort_key(w) for w, _ in words), tuple(t for _, t in words),
            tuple(t for _, t in labels), tuple(states))


def _make_hypothesis(graph, states, arcs, score):
    labels = _path_labels(graph, states, arcs)
    words = [(w, t) for w, t in labels if w != SIL]
    alignment = [(int(s), graph.state_phone[s], graph.state_word[s]) for s in states]
    return Hypothesis([w for w, _ in words], float(score), alignment,
                      [int(s) for s in states], [int(a) for a in arcs],
                      [t for _, t in words], labels)


def path_score(graph, feats, states, arcs=None):
    """Re-score a state path; summation order matches viterbi exactly."""
    frames = _frames(feats)
    log_b = graph.emission_loglik(frames)
    if arcs is None:
        arcs = []
        for s, d in zip(states[:-1], states[1:]):
            cands = [a for a in graph.outgoing(s) if graph.arc_dst[a] == d]
            if not cands:
                return LOG_ZERO
            arcs.append(max(cands, key=lambda a: graph.arc_logp[a]))
    score = graph.log_init[states[0]] + log_b[0, states[0]]
    for t, a in enumerate(arcs, 1):
        score = score + graph.arc_logp[a] + log_b[t, states[t]]
    return score + graph.log_final[states[-1]]


def viterbi(feats, graph, beam=None):
    """Exact best state path (or beam-pruned when `beam` is a positive log width).

    Exact score ties are resolved toward the lowest word-id sequence, then the
    earliest word-boundary frames.
    """
    frames = _frames(feats)
    n_frames = frames.shape[0]
    if n_frames == 0:
        raise EmptyFeaturesError("no feature frames")
    if beam is not None and not beam > 0:
        raise ValueError("beam must be positive")
    log_b = graph.emission_loglik(frames)
    S = graph.n_states
    src, dst, logp = graph.arc_src, graph.arc_dst, graph.arc_logp

    delta = graph.log_init + log_b[0]
    if beam is not None:
        delta = np.where(delta >= delta.max() - beam, delta, LOG_ZERO)
    back = np.full((n_frames, S), -1, dtype=int)
    ties = {}
    for t in range(1, n_frames):
        cand = delta[src] + logp
        best = np.full(S, LOG_ZERO)
        np.maximum.at(best, dst, cand)
        hit = (cand == best[dst]) & np.isfinite(cand)
        hit_idx = np.nonzero(hit)[0]
        if hit_idx.size:
            winners, first, counts = np.unique(dst[hit_idx], return_index=True,
                                               return_counts=True)
            back[t, winners] = hit_idx[first]
            for j in winners[counts > 1]:
                ties[(t, int(j))] = hit_idx[dst[hit_idx] == j].tolist()
        delta = best + log_b[t]
        if beam is not None and np.isfinite(delta).any():
            delta = np.where(delta >= delta.max() - beam, delta, LOG_ZERO)

    final = delta + graph.log_final
    score = final.max()
    if not np.isfinite(score):
        raise NoCompletePathError(f"no complete path in {n_frames} frames")
    enders = np.nonzero(final == score)[0]

    paths = []
    for j in enders:
        paths += _expand_iter(n_frames - 1, int(j), ties, back, src)
    states, arcs = min(paths, key=lambda p: _tie_key(graph, p[0], p[1]))
    return _make_hypothesis(graph, states, arcs, score)


def _expand_iter(t_end, j_end, ties, back, src):
    """All tied best paths ending in state j_end (bounded by MAX_TIED_PATHS)."""
    out = []
    stack = [(t_end, j_end, [j_end], [])]
    while stack and len(out) < MAX_TIED_PATHS:
        t, j, states, arcs = stack.pop()
        if t == 0:
            out.append((states[::-1], arcs[::-1]))
            continue
        for a in ties.get((t, j), [back[t, j]]):
            i = int(src[a])
            stack.append((t - 1, i, states + [i], arcs + [int(a)]))
    return out


def brute_force_decode(feats, graph):
    """Exhaustive search over every complete state path; test oracle for viterbi."""
    frames = _frames(feats)
    n_frames = frames.shape[0]
    if n_frames == 0:
        raise EmptyFeaturesError("no feature frames")
    if graph.n_states > ORACLE_MAX_STATES or n_frames > ORACLE_MAX_FRAMES:
        raise TooLargeForOracleError(
            f"oracle limited to {ORACLE_MAX_STATES} states and {ORACLE_MAX_FRAMES} frames")
    counts = np.isfinite(graph.log_init).astype(float)
    for _ in range(n_frames - 1):
        nxt = np.zeros_like(counts)
        np.add.at(nxt, graph.arc_dst, counts[graph.arc_src])
        counts = nxt
    if counts.sum() > ORACLE_MAX_PATHS:
        raise TooLargeForOracleError(f"{counts.sum():.0f} paths to enumerate")

    log_b = graph.emission_loglik(frames)
    best_score, best = LOG_ZERO, []

    def extend(states, arcs, score):
        nonlocal best_score, best
        t = len(states) - 1
        if t == n_frames - 1:
            total = score + graph.log_final[states[-1]]
            if not np.isfinite(total):
                return
            if total > best_score:
                best_score, best = total, [(states, arcs)]
            elif total == best_score:
                best.append((states, arcs))
            return
        for a in graph.outgoing(states[-1]):
            d = int(graph.arc_dst[a])
            nxt = score + graph.arc_logp[a] + log_b[t + 1, d]
            if np.isfinite(nxt):
                extend(states + [d], arcs + [a], nxt)

    for j in range(graph.n_states):
        s0 = graph.log_init[j] + log_b[0, j]
        if np.isfinite(s0):
            extend([j], [], s0)
    if not best:
        raise NoCompletePathError(f"no complete path in {n_frames} frames")
    states, arcs = min(best, key=lambda p: _tie_key(graph, p[0], p[1]))
    return _make_hypothesis(graph, states, arcs, best_score)


# ---------------------------------------------------------------------------
# metrics

def align_words(reference, hypothesis):
    """Minimum edit-distance alignment as a list of (op, ref_word, hyp_word).

    op is one of "ok", "sub", "del", "ins". Among equal-cost alignments the
    backtrace prefers match/substitution, then deletion, then insertion.
    """
    ref, hyp = list(reference), list(hypothesis)
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=int)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(diag, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    ops = []
    i, j = n, m
    while i or j:
        if i and j and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(("ok" if ref[i - 1] == hyp[j - 1] else "sub", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and cost[i, j] == cost[i - 1, j] + 1:
            ops.append(("del", ref[i - 1], None))
            i -= 1
        else:
            ops.append(("ins", None, hyp[j - 1]))
            j -= 1
    return ops[::-1]


def word_error_rate(reference, hypothesis):
    """Returns (substitutions, deletions, insertions, WER)."""
    if not reference:
        raise EmptyReferenceError("WER is undefined for an empty reference")
    ops = Counter(op for op, _, _ in align_words(reference, hypothesis))
    s, d, i = ops["sub"], ops["del"], ops["ins"]
    return s, d, i, (s + d + i) / len(reference)


@dataclass
class EvalReport:
    n_utterances: int = 0
    n_correct: int = 0
    n_ref_words: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    confusion: Counter = field(default_factory=Counter)
    failures: list = field(default_factory=list)

    @property
    def wer(self):
        return (self.substitutions + self.deletions + self.insertions) / self.n_ref_words

    @property
    def accuracy(self):
        return self.n_correct / self.n_utterances

    def format_table(self, vocabulary=None):
        lines = [
            f"utterances      {self.n_utterances}",
            f"command acc     {self.accuracy:.4f} ({self.n_correct}/{self.n_utterances})",
            f"reference words {self.n_ref_words}",
            f"S / D / I       {self.substitutions} / {self.deletions} / {self.insertions}",
            f"WER             {self.wer:.4f}",
        ]
        errors = sorted((k, v) for k, v in self.confusion.items() if k[0] != k[1])
        if errors:
            lines.append("confusions (ref -> hyp: count)")
            for (r, h), c in errors:
                lines.append(f"  {r or '<ins>'} -> {h or '<del>'}: {c}")
        return "\n".join(lines)


def evaluate(graph, testset, beam=None):
    """Decode every (features, reference word ids) pair and score the results."""
    testset = list(testset)
    if not testset:
        raise EmptyTestSetError("nothing to evaluate")
    report = EvalReport()
    for item in testset:
        feats, reference = item[0], [w for w in item[1] if w != SIL]
        hyp = viterbi(feats, graph, beam)
        s, d, i, _ = word_error_rate(reference, hyp.words)
        report.n_utterances += 1
        report.n_ref_words += len(reference)
        report.substitutions += s
        report.deletions += d
        report.insertions += i
        if hyp.words == reference:
            report.n_correct += 1
        else:
            report.failures.append((getattr(feats, "source_id", ""), reference, hyp.words))
        for _, r, h in align_words(reference, hyp.words):
            report.confusion[(r, h)] += 1
    return report
