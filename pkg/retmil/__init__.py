from argparse import ArgumentParser, ArgumentTypeError
import sys

try:
    from ._version import __version__
except ImportError:
    __version__ = "0.1.0"

from . import commands
from .check import FAULTS
from .config import load_config
from .tensor import PRECISIONS
from .util import exit_code_on_error


def positive_int(text):
    try:
        value = int(text)
    except ValueError:
        value = 0
    if value < 1:
        raise ArgumentTypeError(f"Expected a positive integer, got {text!r}")
    return value


def make_parser():
    parser = ArgumentParser(prog="retmil", description="Retention based multiple instance learning")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--precision", choices=sorted(PRECISIONS), default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=positive_int, default=None)
    parser.add_argument("--log-level", default=None)
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-synthetic", help="Generate a synthetic MIL task")
    gen.add_argument("--config")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=commands.gen_synthetic)

    train = subparsers.add_parser("train", help="Train a model")
    train.add_argument("--config")
    train.add_argument("--manifest")
    train.add_argument("--out", help="Output directory (default from the config)")
    train.set_defaults(func=commands.train_command)

    evaluate = subparsers.add_parser("eval", help="Evaluate one or more checkpoints")
    evaluate.add_argument("--config")
    evaluate.add_argument("--checkpoint", required=True, nargs="+")
    evaluate.add_argument("--manifest", required=True)
    evaluate.add_argument("--split", default="test", choices=["train", "val", "test"])
    evaluate.add_argument("--length-bins", help="Lower bounds of bag length bins, e.g. 0,5000,10000")
    evaluate.add_argument("--out", help="Metrics JSON (default: stdout)")
    evaluate.set_defaults(func=commands.eval_command)

    score = subparsers.add_parser("score", help="Per token attention scores for one bag")
    score.add_argument("--config")
    score.add_argument("--checkpoint", required=True)
    score.add_argument("--input", required=True)
    score.add_argument("--out", required=True)
    score.set_defaults(func=commands.score_command)

    split = subparsers.add_parser("split", help="Show how a bag is split into subsequences")
    split.add_argument("--config")
    split.add_argument("--input", required=True)
    split.add_argument("--subseq-len", type=positive_int)
    split.add_argument("--dump-provenance", help="CSV of row, slot, token_index")
    split.set_defaults(func=commands.split_command)

    bench = subparsers.add_parser("bench", help="Memory and throughput against bag length")
    bench.add_argument("--config")
    bench.add_argument("--out")
    bench.add_argument("--summary", help="Also write a JSON summary with environment info")
    bench.set_defaults(func=commands.bench_command)

    check = subparsers.add_parser("check", help="Run the oracle checks")
    check.add_argument("--inject-fault", choices=sorted(FAULTS), default=None)
    check.set_defaults(func=commands.check_command)

    return parser


@exit_code_on_error
def _dispatch(args):
    settings = load_config(args.log_level)
    return args.func(args, settings)


def main(argv=None):
    "Parse arguments and run the subcommand, returning the exit code."
    return _dispatch(make_parser().parse_args(argv))


def run():
    sys.exit(main())
