import argparse
import json
import sys

from loguru import logger

from src.models.report import NlpOptions, PipelineOptions
from src.pipeline import BACKENDS, feasibility_pipeline
from src.services.batch_service import batch_service
from src.services.case_service import case_service
from src.services.certify_service import STAGE3_MODES
from src.services.pop_service import NORMS
from src.services.report_service import report_service
from src.utils.errors import FeasprojError
from src.utils.logging_config import setup_logging


def add_run_arguments(parser):
    parser.add_argument('--norm', choices=NORMS, default='l1', help='Slack norm')
    parser.add_argument('--backend', choices=BACKENDS, default='nlp', help='Stage-1/2 backend')
    parser.add_argument('--stage3', choices=STAGE3_MODES, default='power_flow', help='Stage-3 projection mode')
    parser.add_argument('--stage3-norm', choices=NORMS, default='l2', help='Norm of the least-squares projection')
    parser.add_argument('--warm-start', choices=('flat', 'case'), default='flat', help='Stage-1 starting point')
    parser.add_argument('--budget-slack', type=float, default=0.0, help='Relative inflation of the Stage-2 budget')
    parser.add_argument(
        '--budget-margin', type=float, help='Relative tolerance margin on the Stage-2 budget and the Stage-3 bounds'
    )
    parser.add_argument('--points-dir', help='Directory for per-stage point files')
    parser.add_argument('--trace', action='store_true', help='Write iteration traces and SDP dumps')


def setup_parser():
    """Set up the argument parser."""
    parser = argparse.ArgumentParser(prog='feasproj', description='ACOPF feasibility projection')
    parser.add_argument('--log-level', choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'), help='Overrides LOG_LEVEL')
    parser.add_argument('--log-file', help='Overrides LOG_FILE; an empty value disables the file log')
    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    run_parser = subparsers.add_parser('run', help='Run the three stages on one instance')
    run_parser.add_argument('--case', required=True, help='Case file path or bundled case name')
    run_parser.add_argument('--perturb', help='P70, Q80, V40, P60 or custom:<kind>:<shrink>:<grow>')
    run_parser.add_argument('--report', help='Write the JSON report here instead of stdout')
    add_run_arguments(run_parser)

    batch_parser = subparsers.add_parser('batch', help='Run the instances listed in a manifest')
    batch_parser.add_argument('--manifest', required=True, help='JSON list or JSON lines of runs')
    batch_parser.add_argument('--output', help='Write one JSON report per line here instead of stdout')
    add_run_arguments(batch_parser)

    return parser


def build_options(values):
    return PipelineOptions(
        stage3=values.get('stage3', 'power_flow'),
        stage3_norm=values.get('stage3_norm', 'l2'),
        warm_start=values.get('warm_start', 'flat'),
        budget_slack=float(values.get('budget_slack', 0.0)),
        budget_margin=values.get('budget_margin'),
        trace=bool(values.get('trace', False)),
        points_dir=values.get('points_dir'),
        nlp=NlpOptions(trace=bool(values.get('trace', False)))
    )


def execute(values):
    """
    Run one instance described by a dict of run arguments.

    Returns:
        The PipelineRun
    """
    case = case_service.load_case(values['case'])
    perturbation = case_service.perturbation_preset(values['perturb']) if values.get('perturb') else None
    return feasibility_pipeline.run(
        case, perturbation, values.get('norm', 'l1'), values.get('backend', 'nlp'), build_options(values)
    )


def run_command(args):
    """Run the pipeline on one instance."""
    try:
        run = execute(vars(args))
    except (FeasprojError, ValueError) as e:
        logger.error(f"Cannot run: {str(e)}")
        return 1

    try:
        report_service.write_report(
            run.reports, run.certificate, args.report or sys.stdout, run.instance, run.norm
        )
    except FeasprojError as e:
        logger.error(f"Error writing report: {str(e)}")
        return 1
    return run.exit_code


def read_manifest(path):
    """A manifest is a JSON list of run objects or one JSON object per line."""
    with open(path, 'r', encoding='utf-8') as handle:
        text = handle.read()
    stripped = text.strip()
    if stripped.startswith('['):
        return json.loads(stripped)
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def batch_command(args):
    """Run every manifest entry on the batch thread pool."""
    try:
        entries = read_manifest(args.manifest)
    except (OSError, ValueError) as e:
        logger.error(f"Cannot read manifest {args.manifest}: {str(e)}")
        return 1

    skipped = ('manifest', 'output', 'command', 'log_level', 'log_file')
    defaults = {key: value for key, value in vars(args).items() if key not in skipped}
    entries = [dict(defaults, **entry) for entry in entries]
    if any('case' not in entry for entry in entries):
        logger.error("Every manifest entry needs a 'case'")
        return 1

    batch_service.initialize(execute)
    try:
        results = batch_service.run_all(entries)
    finally:
        batch_service.shutdown()

    sink = open(args.output, 'w', encoding='utf-8') if args.output else sys.stdout
    exit_code = 0
    try:
        for entry, run in zip(entries, results):
            if run is None or isinstance(run, Exception):
                logger.error(f"Run of {entry['case']} did not produce a report: {str(run)}")
                exit_code = max(exit_code, 3 if isinstance(run, FeasprojError) else 1)
                continue
            report_service.write_report(run.reports, run.certificate, sink, run.instance, run.norm)
            exit_code = max(exit_code, run.exit_code)
    finally:
        if args.output:
            sink.close()
    logger.info(f"Batch of {len(entries)} runs finished with exit code {exit_code}")
    return exit_code


def main():
    """Main entry point for the CLI."""
    parser = setup_parser()
    args = parser.parse_args()
    setup_logging(args.log_level, args.log_file)

    if not args.command:
        parser.print_help()
        return 1

    if args.command == 'run':
        return run_command(args)
    elif args.command == 'batch':
        return batch_command(args)
    parser.print_help()
    return 1


if __name__ == "__main__":
    sys.exit(main())
