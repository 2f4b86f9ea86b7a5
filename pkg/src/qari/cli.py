"""`qari` command line: features, synth, validate, train, decode, eval, reader."""

import argparse
import logging
import sys
from pathlib import Path

from qari import corpus as ck
from qari.acoustic import load_model, save_model
from qari.errors import QariError
from qari.frontend import FrontendConfig, features_from_wav, format_features


def _words_arg(text):
    return [w.strip() for w in text.split(",") if w.strip()]


def cmd_features(args):
    seq = features_from_wav(args.wav, FrontendConfig(cmn_enabled=not args.no_cmn),
                            Path(args.wav).stem)
    text = format_features(seq)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args):
    from qari.synth import synthesize_corpus

    records = synthesize_corpus(args.seed, args.words, ck.default_dictionary(),
                                ck.default_phone_set(), args.speakers, args.out,
                                takes=args.takes, n_test_speakers=args.test_speakers)
    print(f"wrote {len(records)} utterances to {args.out}")
    return 0


def cmd_validate(args):
    corpus = ck.load_corpus(args.corpus, args.dict, args.phones)
    report = corpus.validate(check_audio=not args.skip_audio)
    for finding in report:
        print(finding)
    print(f"{len(corpus.records)} records, {len(report)} findings")
    return 0 if report.trainable else 1


def _load_features(records, cfg):
    return [(features_from_wav(r.audio_path, cfg, r.file_id), r.transcript) for r in records]


def cmd_train(args):
    from qari.trainer import TrainConfig, train

    corpus = ck.load_corpus(args.corpus, args.dict, args.phones)
    report = corpus.validate(check_audio=False)
    blocking = [f for f in report if f.kind != ck.UNOBSERVED_WORD]
    if blocking:
        for finding in blocking:
            print(finding, file=sys.stderr)
        return 1
    fe = FrontendConfig()
    data = _load_features(corpus.records_for(args.split), fe)
    cfg = TrainConfig(max_iters=args.iters, jobs=args.jobs, deterministic=args.deterministic)
    model, train_report = train(data, corpus.dictionary, corpus.phone_set, cfg,
                                frontend_fingerprint=fe.fingerprint())
    save_model(model, args.out)
    print(train_report.format_table())
    return 0


def cmd_decode(args):
    from qari.recognizer import Recognizer

    model = load_model(args.model)
    dictionary = ck.load_dictionary(args.dict)
    rec = Recognizer(model, dictionary, args.grammar, beam=args.beam)
    status = 0
    for path in args.wav:
        try:
            hyp = rec.recognize_file(path)
            print(f"{Path(path).stem}\t{' '.join(hyp.words)}\t{hyp.log_score:.4f}")
        except QariError as exc:
            print(f"{Path(path).stem}\terror: {exc}", file=sys.stderr)
            status = 1
    return status


def cmd_eval(args):
    from qari.decoder import evaluate
    from qari.recognizer import Recognizer

    corpus = ck.load_corpus(args.corpus, args.dict)
    model = load_model(args.model)
    words = [w for w in corpus.vocabulary if w in corpus.dictionary]
    rec = Recognizer(model, corpus.dictionary, args.grammar, words=words, beam=args.beam)
    data = _load_features(corpus.records_for(args.split), rec.frontend)
    print(evaluate(rec.graph, data, args.beam).format_table())
    return 0


def cmd_reader(args):
    from qari.reader import run_repl
    from qari.recognizer import Recognizer

    vocabulary = ck.default_vocabulary()
    rec = None
    if args.model:
        dictionary = ck.load_dictionary(args.dict) if args.dict else ck.default_dictionary()
        rec = Recognizer(load_model(args.model), dictionary, args.grammar)
    return run_repl(sys.stdin, sys.stdout, rec, vocabulary)


def build_parser():
    p = argparse.ArgumentParser(prog="qari", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", help="write MFCC features of a WAV file")
    s.add_argument("wav")
    s.add_argument("--out")
    s.add_argument("--no-cmn", action="store_true")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--speakers", type=int, required=True)
    s.add_argument("--words", type=_words_arg, required=True, help="comma-separated word ids")
    s.add_argument("--out", required=True)
    s.add_argument("--takes", type=int, default=1)
    s.add_argument("--test-speakers", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("validate", help="cross-check corpus resources")
    s.add_argument("--corpus", required=True)
    s.add_argument("--dict")
    s.add_argument("--phones")
    s.add_argument("--skip-audio", action="store_true")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("train", help="Baum-Welch training")
    s.add_argument("--corpus", required=True)
    s.add_argument("--dict")
    s.add_argument("--phones")
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int, default=20)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--deterministic", action="store_true")
    s.add_argument("--split", choices=("train", "test", "all"), default="train")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("decode", help="recognize WAV files")
    s.add_argument("--model", required=True)
    s.add_argument("--dict", required=True)
    s.add_argument("--grammar", choices=("command", "navigate", "reader"), default="command")
    s.add_argument("--beam", type=float)
    s.add_argument("--wav", nargs="+", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", help="decode a corpus split and report WER")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--dict")
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.add_argument("--grammar", choices=("command", "navigate", "reader"), default="command")
    s.add_argument("--beam", type=float)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("reader", help="interactive reader driven by WAV files or word ids")
    s.add_argument("--model")
    s.add_argument("--dict")
    s.add_argument("--grammar", choices=("command", "navigate", "reader"), default="reader")
    s.set_defaults(func=cmd_reader)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (QariError, OSError) as exc:
        print(f"qari: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
