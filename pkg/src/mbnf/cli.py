"""Command-line entry point.

Subcommands mirror the pipeline stages and can be run individually against
the same run directory, plus ``pipeline`` to run everything and ``score``
which also works standalone on arbitrary manifest/hypothesis files.

Exit codes: 0 success, 2 configuration error, 3 missing/bad data,
4 would overwrite, 5 archive integrity, 64 usage.
"""

import argparse
import logging
import sys

from . import config as configmod
from . import metrics, pipeline
from .corpus import load_manifest
from .errors import MbnfError

USAGE_EXIT = 64

_STAGE_COMMANDS = {
    "synth": pipeline.stage_synth,
    "ubm": pipeline.stage_ubm,
    "ivector": pipeline.stage_ivector,
    "align": pipeline.stage_align,
    "mbnf-train": pipeline.stage_train,
    "mbnf-extract": pipeline.stage_bnf,
    "combine": pipeline.stage_combine,
    "probe": pipeline.stage_probe,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("--config", help="INI config file (flags win over file values)")
    sub.add_argument("--preset", choices=configmod.PRESETS, help="base preset")
    sub.add_argument("--seed", type=int, help="master seed override")
    sub.add_argument("--out", required=True, help="run directory")
    sub.add_argument("--force", action="store_true", help="overwrite existing outputs")
    sub.add_argument("--jobs", type=int, default=1, help="worker threads for extraction")


def build_parser():
    parser = _Parser(prog="mbnf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    for name in ("synth", "ubm", "ivector", "align", "mbnf-train", "mbnf-extract",
                 "combine", "probe", "pipeline"):
        sub = subs.add_parser(name, parents=[], help=f"run the {name} stage")
        _add_common(sub)

    extract = subs.add_parser("extract", help="extract acoustic features")
    _add_common(extract)
    extract.add_argument(
        "--features",
        default=",".join(pipeline.EXTRACT_KINDS),
        help="comma-separated subset of mfcc13dd,mfcc40,pitch3",
    )

    score = subs.add_parser("score", help="score hypotheses against references")
    _add_common(score)
    score.add_argument("--refs", help="reference manifest (defaults to the run's cs_refs)")
    score.add_argument("--hyp", help="hypothesis file utt_id<TAB>words (defaults to synthetic)")
    score.add_argument(
        "--strict-bigram",
        action="store_true",
        help="switch-point tokens only count when their predecessor also matches",
    )
    return parser


def _score_files(args, cfg):
    refs = load_manifest(args.refs)
    hyps = metrics.load_hypotheses(args.hyp)
    report = metrics.score_corpus(refs, hyps, strict_bigram=args.strict_bigram)
    print(report.render_table())
    print(report.to_json())
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = configmod.resolve(args.config, args.preset, args.seed)
        if args.command == "pipeline":
            summary = pipeline.run_pipeline(cfg, args.out, force=args.force, jobs=args.jobs)
            if "probe" in summary:
                probe = summary["probe"]
                print(
                    "probe accuracy: mfcc40 %.4f  combined %.4f  (improvement %+.4f)"
                    % (
                        probe["mfcc40"]["overall"],
                        probe["combined"]["overall"],
                        probe["improvement"],
                    )
                )
            return 0
        if args.command == "extract":
            kinds = tuple(k for k in args.features.split(",") if k)
            unknown = set(kinds) - set(pipeline.EXTRACT_KINDS)
            if unknown or not kinds:
                print(f"mbnf extract: unknown feature kinds {sorted(unknown)}", file=sys.stderr)
                return USAGE_EXIT
            pipeline.stage_extract(cfg, args.out, force=args.force, kinds=kinds, jobs=args.jobs)
            return 0
        if args.command == "score":
            if args.refs or args.hyp:
                if not (args.refs and args.hyp):
                    print("mbnf score: --refs and --hyp must be given together", file=sys.stderr)
                    return USAGE_EXIT
                return _score_files(args, cfg)
            result = pipeline.stage_score(cfg, args.out, force=args.force)
            overall = result["overall"]["wer_pct"]
            print(f"overall WER: {overall:.2f}%" if overall is not None else "overall WER: -")
            return 0
        handler = _STAGE_COMMANDS[args.command]
        handler(cfg, args.out, force=args.force)
        return 0
    except MbnfError as exc:
        print(f"mbnf {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
