import argparse
import logging
import sys

from src.core.exceptions import BackendError, ConfigError, ExtractionError, InputMissingError
from src.chains.spec import ChainOrder, PROMPT_MODES, TaskKind
from src.evaluation.baseline import RESOURCE_KINDS
from src.experiments.config import load_config
from src.experiments.pipeline import (cmd_aggregate, cmd_associate, cmd_converge, cmd_evaluate, cmd_harden,
                                      cmd_inject)

logger = logging.getLogger('hardening')

# most specific first
EXIT_CODES = ((ExtractionError, 2), (BackendError, 3), (InputMissingError, 4), (ConfigError, 5))


def apply_overrides(config, args):
    chain = config.chain
    if args.output_dir is not None:
        config.output_dir = args.output_dir
    if args.backend is not None:
        config.backend.kind = args.backend
        config.backend.__post_init__()
    if args.seed is not None:
        config.evaluation.seed = args.seed
        config.backend.seed = args.seed
    if getattr(args, 'order', None) is not None:
        chain.order = args.order
    if getattr(args, 'no_match_step', False):
        chain.include_match_step = False
    if getattr(args, 'explanations', None) is not None:
        chain.include_explanations = args.explanations == 'on'
    if getattr(args, 'prompt_mode', None) is not None:
        chain.prompt_mode = args.prompt_mode
    if getattr(args, 'iterate', False):
        chain.iterate = True
    if getattr(args, 'max_iter', None) is not None:
        chain.max_iter = args.max_iter
    return config


def main(args):
    #---------------------------------------------- Config ----------------------------------------------#
    config = apply_overrides(load_config(args.config), args)

    #---------------------------------------------- Command ---------------------------------------------#
    if args.command == 'aggregate':
        paths = cmd_aggregate(config)
    elif args.command == 'associate':
        paths = cmd_associate(config)
    elif args.command == 'harden':
        paths = cmd_harden(config, args.task, targets=args.target, run_id=args.run_id)
    elif args.command == 'evaluate':
        paths = cmd_evaluate(config, args.candidates, baseline_source=args.baseline)
    elif args.command == 'converge':
        paths = cmd_converge(config, n_segments=args.n_segments)
    elif args.command == 'inject':
        paths = cmd_inject(config, kinds=args.kinds)
    else:
        raise ValueError(f'Unknown command {args.command}')

    #---------------------------------------------- Output ----------------------------------------------#
    for path in paths:
        print(path)


def run(args) -> int:
    """Runs a command and maps its failure to the documented exit code."""
    try:
        main(args)
    except Exception as e:
        code = next((c for cls, c in EXIT_CODES if isinstance(e, cls)), 1)
        logger.error(f'{type(e).__name__}: {e}')
        logger.debug('Traceback', exc_info=True)
        return code
    return 0


def parse_args(argv=None):
    desc = 'Log-driven hardening of Kubernetes Role, NetworkPolicy and Deployment manifests'
    parser = argparse.ArgumentParser(description=desc)
    parser.add_argument('--config', required=True, type=str, help='pipeline configuration (YAML or JSON)')
    parser.add_argument('--output_dir', '--output-dir', dest='output_dir', default=None, type=str,
                        help='overrides output_dir')
    parser.add_argument('--backend', default=None, choices=['http', 'oracle', 'replay'], help='overrides backend.kind')
    parser.add_argument('--seed', default=None, type=int, help='injection and backend seed')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('aggregate', help='parse and aggregate audit, flow and provenance logs')
    commands.add_parser('associate', help='associate provenance edges with microservices')

    harden = commands.add_parser('harden', help='run a prompt chain for every target workload')
    harden.add_argument('--task', required=True, choices=[t.value for t in TaskKind])
    harden.add_argument('--target', action='append', default=None, help='Deployment name; repeatable')
    harden.add_argument('--iterate', action='store_true', help='feed refined manifests back until stable')
    harden.add_argument('--max_iter', '--max-iter', dest='max_iter', default=None, type=int)
    harden.add_argument('--order', default=None, choices=[o.value for o in ChainOrder])
    harden.add_argument('--no-match-step', dest='no_match_step', action='store_true')
    harden.add_argument('--explanations', default=None, choices=['on', 'off'])
    harden.add_argument('--prompt-mode', dest='prompt_mode', default=None, choices=list(PROMPT_MODES))
    harden.add_argument('--run_id', '--run-id', dest='run_id', default=None, type=str,
                        help='run directory name, a UTC timestamp by default')

    evaluate = commands.add_parser('evaluate', help='score hardened manifests')
    evaluate.add_argument('--candidates', required=True, type=str, help='directory of harden runs')
    evaluate.add_argument('--baseline', default=None, type=str,
                          help='reference manifests; log-derived ground truth when omitted')

    converge = commands.add_parser('converge', help='cumulative-segment similarity analysis')
    converge.add_argument('--n_segments', '--n-segments', dest='n_segments', default=None, type=int)

    inject = commands.add_parser('inject', help='inject taxonomy anti-patterns into the configured manifests')
    inject.add_argument('--kinds', nargs='+', default=None, choices=list(RESOURCE_KINDS))
    return parser.parse_args(argv)


if __name__ == '__main__':

    # parse arguments
    args = parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    sys.exit(run(args))
