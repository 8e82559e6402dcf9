import sys
import argparse

from common import debuglog
from common.debuglog import debug, mention, red
from common.nse_solver import BlowUp, CFLViolation
from common.snapshot_io import write_provenance
from common.spectral_core import set_fft_workers
from experiment_cli.config import load_config
from experiment_cli.commands import InvariantViolation, cmd_spinup, cmd_twin, cmd_sweep, cmd_verify_observers, cmd_stats


EXIT_OK         = 0
EXIT_DIVERGED   = 2
EXIT_INVARIANT  = 3
EXIT_BAD_CONFIG = 4

COMMANDS = {
	'spinup':           cmd_spinup,
	'twin':             cmd_twin,
	'sweep':            cmd_sweep,
	'verify-observers': cmd_verify_observers,
	'stats':            cmd_stats,
}


def build_parser():
	common = argparse.ArgumentParser(add_help=False)
	common.add_argument('--config', required=True, help="Experiment config (JSON)")
	common.add_argument('--out', default=None, help="Output directory, overrides output_dir from the config")
	common.add_argument('--seed', type=int, default=None, help="Base seed, overrides every seed in the config")
	common.add_argument('--threads', type=int, default=1, help="FFT threads, and worker processes for sweeps")
	common.add_argument('--verbose', action='store_true', help="Debug logging")

	parser = argparse.ArgumentParser(prog='experiment_cli', description="Twin experiments for discrete-in-time nudging of 2D Navier-Stokes")
	subparsers = parser.add_subparsers(dest='command', required=True)
	for name in COMMANDS:
		subparser = subparsers.add_parser(name, parents=[common])
		if name == 'sweep':
			subparser.add_argument('--axis', choices=('beta', 'kappa', 'epsilon', 'm_or_h'), default=None)
			subparser.add_argument('--values', type=float, nargs='+', default=None)
	return parser


def run(args, argv):
	config = load_config(args.config)
	if args.seed is not None:
		config = config.with_seed(args.seed)
	out_dir = args.out or config.output_dir
	debug("Resolved config: {0}".format(config.model_dump(mode='json')))
	debug("lambda1={0:.6g}, viscous time={1:.6g}".format(config.lambda1, config.viscous_time))

	if args.command == 'sweep':
		cmd_sweep(config, out_dir, axis=args.axis, values=args.values, threads=args.threads)
	else:
		COMMANDS[args.command](config, out_dir)
	write_provenance(out_dir, argv=argv, extra={'command': args.command, 'threads': args.threads})


def main(argv=None):
	argv = sys.argv[1:] if argv is None else argv
	args = build_parser().parse_args(argv)

	if args.verbose:
		debuglog.set_debug(True)
	debuglog.colour_on()
	set_fft_workers(args.threads)
	debug("Debug logging is enabled")

	try:
		run(args, argv)
	except (BlowUp, CFLViolation) as e:
		mention(red("Diverged: {0}".format(e)))
		return EXIT_DIVERGED
	except InvariantViolation as e:
		mention(red("Invariant violated: {0}".format(e)))
		return EXIT_INVARIANT
	except ValueError as e:
		# InvalidConfig, and the parameter checks further down (grid sizes, spin-up length)
		mention(red("Bad config: {0}".format(e)))
		return EXIT_BAD_CONFIG
	except (OSError, LookupError) as e:
		# unwritable output, unknown observable names
		mention(red("Bad config: {0}".format(e)))
		return EXIT_BAD_CONFIG

	return EXIT_OK


if __name__ == "__main__":
	sys.exit(main())
