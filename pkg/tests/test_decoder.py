import math

import numpy as np
import pytest

from conftest import load_features
from oracles import random_search_graph
from qari import corpus as ck
from qari.acoustic import GaussianState, flat_start
from qari.decoder import (
    Grammar,
    GrammarArc,
    brute_force_decode,
    command_grammar,
    compile_graph,
    evaluate,
    navigation_grammar,
    path_score,
    reader_grammar,
    uniform_grammar,
    viterbi,
    word_error_rate,
)
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

PHONES = ck.parse_phone_list("A\nB\nC\nD")
DICT = ck.parse_dictionary("101 A B\n102 C D\n103 B A\n103(2) D\n104 A")


def toy_model(dim=2, seed=0):
    rng = np.random.default_rng(seed)
    m = flat_start(PHONES, dim, np.zeros(dim), np.ones(dim))
    for hmm in m.phones.values():
        hmm.states = [GaussianState(rng.normal(0, 3, dim), rng.uniform(0.5, 1.5, dim))
                      for _ in hmm.states]
    return m


def sample_word(model, word, rng, frames_per_state=2):
    """Frames drawn from each state mean of a word's first pronunciation."""
    rows = [st.mean + 0.1 * rng.normal(size=st.mean.shape)
            for p in DICT.variants(word)[0] for st in model[p].states
            for _ in range(frames_per_state)]
    return np.array(rows)


class TestCompile:
    def test_state_count(self):
        graph = compile_graph(command_grammar(["101", "102"]), DICT, toy_model(), sil_policy="none")
        assert graph.n_states == 12
        assert graph.words_per_state_count() == {"101": 6, "102": 6}

    def test_boundary_sil_adds_states(self):
        graph = compile_graph(command_grammar(["101", "102"]), DICT, toy_model())
        assert graph.n_states == 12 + 2 * 3

    def test_variant_prior_split(self):
        graph = compile_graph(command_grammar(["101", "103"]), DICT, toy_model(), sil_policy="none")
        firsts = np.nonzero(np.isfinite(graph.log_init))[0]
        by_word = {}
        for j in firsts:
            by_word.setdefault(graph.state_word[j], []).append(graph.log_init[j])
        assert by_word["101"] == [pytest.approx(math.log(0.5), abs=1e-15)]
        assert sorted(by_word["103"]) == [pytest.approx(math.log(0.25), abs=1e-15)] * 2
        assert graph.n_states == 6 + 6 + 3

    def test_errors(self):
        with pytest.raises(MissingWordError):
            compile_graph(command_grammar(["101", "999"]), DICT, toy_model())
        with pytest.raises(MissingPhoneError):
            compile_graph(command_grammar(["101"]), ck.parse_dictionary("101 Z"), toy_model())
        with pytest.raises(EmptyGrammarError):
            command_grammar([])
        with pytest.raises(EmptyGrammarError):
            compile_graph(Grammar(2, 0, 1, []), DICT, toy_model())

    def test_unnormalized_priors_rejected(self):
        g = Grammar(2, 0, 1, [GrammarArc(0, 1, "101", 0.0), GrammarArc(0, 1, "102", 0.0)])
        with pytest.raises(ValueError):
            compile_graph(g, DICT, toy_model())

    def test_every_state_on_a_path(self):
        graph = compile_graph(reader_grammar(["101", "102", "104"]), DICT, toy_model())
        reach = set(np.nonzero(np.isfinite(graph.log_init))[0])
        for _ in range(graph.n_states):
            reach |= {int(d) for s, d in zip(graph.arc_src, graph.arc_dst) if s in reach}
        coreach = set(np.nonzero(np.isfinite(graph.log_final))[0])
        for _ in range(graph.n_states):
            coreach |= {int(s) for s, d in zip(graph.arc_src, graph.arc_dst) if d in coreach}
        assert reach == coreach == set(range(graph.n_states))

    def test_navigation_grammar(self):
        g = navigation_grammar()
        g.check()
        assert g.words() == ["126", "128", "129", "130", "131"] + [str(i) for i in range(133, 143)]
        dictionary = ck.default_dictionary()
        model = flat_start(ck.default_phone_set(), 1, [0.0], [1.0])
        graph = compile_graph(g, dictionary, model)
        hyp = viterbi(np.zeros((150, 1)), graph)
        assert hyp.words[0] == "126" and hyp.words[1] in ("128", "129", "130", "131")
        assert 1 <= len(hyp.words) - 2 <= 3


class TestViterbi:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        graph, _ = random_search_graph(rng, int(rng.integers(1, 5)))
        x = rng.normal(0, 2, (int(rng.integers(1, 7)), 1))
        try:
            exact = brute_force_decode(x, graph)
        except NoCompletePathError:
            with pytest.raises(NoCompletePathError):
                viterbi(x, graph)
            return
        hyp = viterbi(x, graph)
        assert abs(hyp.log_score - exact.log_score) < 1e-9
        assert hyp.state_path == exact.state_path and hyp.words == exact.words

    def test_single_word_grammar(self):
        graph = compile_graph(command_grammar(["102"]), DICT, toy_model())
        rng = np.random.default_rng(1)
        for n in (12, 20, 40):
            assert viterbi(rng.normal(0, 5, (n, 2)), graph).words == ["102"]

    def test_recognizes_sampled_words(self):
        model = toy_model()
        graph = compile_graph(command_grammar(["101", "102", "103", "104"]), DICT, model)
        rng = np.random.default_rng(2)
        for w in ("101", "102", "103", "104"):
            assert viterbi(sample_word(model, w, rng), graph).words == [w]

    def test_score_replay(self):
        model = toy_model()
        graph = compile_graph(reader_grammar(["101", "102", "104"]), DICT, model)
        x = np.random.default_rng(3).normal(0, 3, (25, 2))
        hyp = viterbi(x, graph)
        assert len(hyp.alignment) == 25 and len(hyp.arc_path) == 24
        replay = path_score(graph, x, hyp.state_path, hyp.arc_path)
        assert abs(replay - hyp.log_score) < 1e-9
        # independent re-sum: arcs + emissions along the alignment
        b = graph.emission_loglik(x)
        s = graph.log_init[hyp.state_path[0]] + math.fsum(
            b[t, j] for t, j in enumerate(hyp.state_path))
        s += math.fsum(graph.arc_logp[a] for a in hyp.arc_path)
        s += graph.log_final[hyp.state_path[-1]]
        assert abs(s - hyp.log_score) < 1e-9
        for a, (s0, s1) in zip(hyp.arc_path, zip(hyp.state_path, hyp.state_path[1:])):
            assert (graph.arc_src[a], graph.arc_dst[a]) == (s0, s1)

    def test_ties_go_to_lowest_word_id(self):
        d = ck.parse_dictionary("105 A\n102 A\n107 A")
        graph = compile_graph(command_grammar(["105", "102", "107"]), d, toy_model(),
                              sil_policy="none")
        hyp = viterbi(np.random.default_rng(4).normal(size=(6, 2)), graph)
        assert hyp.words == ["102"]

    def test_tie_earliest_boundary(self):
        # two copies of a one-state word: the first boundary should come as early as possible
        one = flat_start(ck.parse_phone_list("A"), 1, [0.0], [1.0], n_states=1)
        g = uniform_grammar(3, 0, 2, [(0, 1, "101"), (1, 2, "101")])
        graph = compile_graph(g, ck.parse_dictionary("101 A"), one, sil_policy="none")
        hyp = viterbi(np.zeros((5, 1)), graph)
        assert hyp.words == ["101", "101"] and hyp.boundaries == [0, 4]

    def test_prior_scaling_invariance(self):
        model = toy_model(seed=5)
        base = navigation_grammar(units=("101", "102"), digits=("103", "104"), max_digits=2)
        k = 3.7
        scaled = Grammar(base.n_nodes, base.start, base.final,
                         [GrammarArc(a.src, a.dst, a.label,
                                     a.log_prior + (math.log(k) if a.label else 0.0))
                          for a in base.arcs])
        d = ck.parse_dictionary("126 A\n101 A B\n102 C D\n103 B A\n103(2) D\n104 A")
        g0 = compile_graph(base, d, model, sil_policy="none")
        g1 = compile_graph(scaled, d, model, sil_policy="none", validate=False)
        rng = np.random.default_rng(6)
        for _ in range(5):
            x = rng.normal(0, 3, (int(rng.integers(14, 30)), 2))
            h0, h1 = viterbi(x, g0), viterbi(x, g1)
            assert h0.words == h1.words
            assert h1.log_score - h0.log_score == pytest.approx(len(h0.words) * math.log(k),
                                                                abs=1e-9)

    def test_beam(self):
        model = toy_model()
        graph = compile_graph(reader_grammar(["101", "102", "103", "104"]), DICT, model)
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = rng.normal(0, 3, (30, 2))
            exact = viterbi(x, graph)
            wide = viterbi(x, graph, beam=math.inf)
            assert wide.log_score == exact.log_score and wide.words == exact.words
            try:
                narrow = viterbi(x, graph, beam=2.0)
            except NoCompletePathError:
                continue
            assert narrow.log_score <= exact.log_score
        with pytest.raises(ValueError):
            viterbi(x, graph, beam=0.0)

    def test_errors(self):
        graph = compile_graph(command_grammar(["101"]), DICT, toy_model(), sil_policy="none")
        with pytest.raises(EmptyFeaturesError):
            viterbi(np.zeros((0, 2)), graph)
        with pytest.raises(NoCompletePathError):
            viterbi(np.zeros((5, 2)), graph)
        with pytest.raises(NoCompletePathError):
            brute_force_decode(np.zeros((5, 2)), graph)

    def test_oracle_limits(self):
        graph = compile_graph(command_grammar(["101", "102", "103"]), DICT, toy_model(),
                              sil_policy="none")
        assert graph.n_states > 12
        with pytest.raises(TooLargeForOracleError):
            brute_force_decode(np.zeros((6, 2)), graph)
        small = compile_graph(command_grammar(["104"]), DICT, toy_model(), sil_policy="none")
        with pytest.raises(TooLargeForOracleError):
            brute_force_decode(np.zeros((9, 2)), small)

    def test_end_to_end_word_134(self, heldout_corpus, heldout_model):
        model = heldout_model[0]
        graph = compile_graph(command_grammar(heldout_corpus.dictionary.words()),
                              heldout_corpus.dictionary, model)
        recs = [r for r in heldout_corpus.split().test if r.words == ["134"]]
        assert recs
        for feats, _ in load_features(recs):
            assert viterbi(feats, graph).words == ["134"]


class TestMetrics:
    def test_examples(self):
        assert word_error_rate(["001", "119"], ["001", "119"]) == (0, 0, 0, 0.0)
        s, d, i, wer = word_error_rate(["126", "128", "134"], ["126", "134"])
        assert (s, d, i) == (0, 1, 0) and wer == pytest.approx(1 / 3)
        assert word_error_rate(["119"], []) == (0, 1, 0, 1.0)

    def test_prefers_substitution(self):
        assert word_error_rate(["119"], ["120"]) == (1, 0, 0, 1.0)
        assert word_error_rate(["119", "120"], ["121"]) == (1, 1, 0, 1.0)

    def test_insertions(self):
        assert word_error_rate(["119"], ["119", "120", "121"]) == (0, 0, 2, 2.0)

    def test_empty_reference(self):
        with pytest.raises(EmptyReferenceError):
            word_error_rate([], ["119"])

    def test_evaluate(self):
        model = toy_model()
        graph = compile_graph(command_grammar(["101", "102", "104"]), DICT, model)
        rng = np.random.default_rng(8)
        words = ["101", "102", "104", "101", "102", "104", "101", "102", "104", "101"]
        testset = [(sample_word(model, w, rng), [w]) for w in words]
        report = evaluate(graph, testset)
        assert report.accuracy == 1.0 and report.wer == 0.0
        testset[3] = (testset[3][0], ["102"])
        report = evaluate(graph, testset)
        assert report.accuracy == pytest.approx(0.9)
        assert report.substitutions == 1 and report.wer == pytest.approx(0.1)
        assert report.confusion[("102", "101")] == 1
        assert "WER" in report.format_table()
        with pytest.raises(EmptyTestSetError):
            evaluate(graph, [])
