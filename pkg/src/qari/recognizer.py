"""Model + dictionary + grammar bundled into a ready-to-use recognizer."""

from pathlib import Path

from qari.decoder import (
    command_grammar,
    compile_graph,
    navigation_grammar,
    reader_grammar,
    viterbi,
)
from qari.frontend import FrontendConfig, extract_features, read_wav

GRAMMARS = ("command", "navigate", "reader")


def build_grammar(kind, words):
    if kind == "command":
        return command_grammar(words)
    if kind == "navigate":
        return navigation_grammar()
    if kind == "reader":
        return reader_grammar(words)
    raise ValueError(f"grammar must be one of {GRAMMARS}")


class Recognizer:
    def __init__(self, model, dictionary, grammar="command", words=None, beam=None):
        self.model = model
        self.dictionary = dictionary
        self.frontend = (FrontendConfig.from_fingerprint(model.frontend_fingerprint)
                         if model.frontend_fingerprint else FrontendConfig())
        if isinstance(grammar, str):
            grammar = build_grammar(grammar, words or dictionary.words())
        self.graph = compile_graph(grammar, dictionary, model)
        self.beam = beam

    def features(self, audio, source_id=""):
        return extract_features(audio, self.frontend, source_id)

    def recognize(self, audio, source_id=""):
        return viterbi(self.features(audio, source_id), self.graph, self.beam)

    def recognize_file(self, path):
        return self.recognize(read_wav(path), Path(path).stem)
