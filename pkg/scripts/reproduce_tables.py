#!/usr/bin/env python3
"""
Run the perturbed benchmark instances for both backends and norms and print S1/S2/S3.
"""

import argparse
import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from loguru import logger

from src.config import settings
from src.models.report import PipelineOptions
from src.pipeline import feasibility_pipeline
from src.services.case_service import case_service
from src.utils.logging_config import setup_logging


INSTANCES = [
    ("case9", "P70"),
    ("case14", "P70"),
    ("case14", "Q80"),
    ("case14", "V40"),
]
# MATPOWER ships case118; it is run when present in CASES_DIR
OPTIONAL_INSTANCES = [
    ("case118", "P60"),
]


def format_value(report):
    if report is None or report.failed:
        return "*" if report is not None else "/"
    return f"{report.objective:.2f}"


def available_instances():
    instances = list(INSTANCES)
    for case_name, preset in OPTIONAL_INSTANCES:
        if os.path.exists(os.path.join(settings.CASES_DIR, f"{case_name}.m")):
            instances.append((case_name, preset))
        else:
            logger.warning(f"Skipping {case_name}-{preset}: {case_name}.m not found in {settings.CASES_DIR}")
    return instances


def reproduce(backends, norms):
    rows = []
    for case_name, preset in available_instances():
        case = case_service.load_case(case_name)
        perturbation = case_service.perturbation_preset(preset)
        for backend in backends:
            for norm in norms:
                try:
                    run = feasibility_pipeline.run(case, perturbation, norm, backend, PipelineOptions())
                except Exception as e:
                    logger.error(f"{case_name}-{preset} {backend}/{norm} failed: {str(e)}")
                    rows.append((f"{case_name}-{preset}", backend, norm, "/", "/", "/"))
                    continue
                s1 = run.report("S1")
                rows.append((
                    run.instance, backend, norm,
                    "/" if s1 is None or s1.failed else f"{s1.slack_norm:.2f}",
                    format_value(run.report("S2")),
                    format_value(run.report("S3")),
                ))
    return rows


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='Reproduce the benchmark tables')
    parser.add_argument('--backend', action='append', choices=('nlp', 'sdp'), help='Backends to run')
    parser.add_argument('--norm', action='append', choices=('l1', 'l2', 'linf'), help='Norms to run')
    args = parser.parse_args()

    setup_logging()
    rows = reproduce(args.backend or ['nlp', 'sdp'], args.norm or ['l1', 'linf'])

    header = ("instance", "backend", "norm", "S1", "S2", "S3")
    widths = [max(len(str(row[i])) for row in rows + [header]) for i in range(len(header))]
    for row in [header] + rows:
        print("  ".join(str(value).ljust(width) for value, width in zip(row, widths)))
