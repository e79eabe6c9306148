import json
import math
import os
from collections import OrderedDict

from loguru import logger

from src.config import settings
from src.models.report import StagePoint
from src.utils.errors import IoFailure, PointUnavailable


def _number(value):
    """JSON has no NaN or Inf; missing values are written as null."""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class ReportService:
    """Service serializing pipeline reports and stage points."""

    def nonzero_slack_names(self, report, tol=None):
        """
        Names of the slacks above tol, largest first.

        Args:
            report: A StageReport carrying slack values
            tol: Threshold, INFEASIBILITY_TOL by default

        Returns:
            List of slack names
        """
        tol = settings.INFEASIBILITY_TOL if tol is None else tol
        if report.slacks is None:
            raise PointUnavailable(f"Stage {report.stage} has no slack values")
        ranked = sorted(report.slacks.items(), key=lambda item: (-item[1], item[0]))
        return [name for name, value in ranked if value > tol]

    def stage_to_dict(self, report, tol=None):
        nonzero = []
        if report.slacks is not None:
            nonzero = [
                OrderedDict([("name", name), ("value", float(report.slacks[name]))])
                for name in self.nonzero_slack_names(report, tol)
            ]
        return OrderedDict([
            ("stage", report.stage_number),
            ("slack_norm", _number(report.slack_norm)),
            ("status", report.status),
            ("objective", _number(report.objective)),
            ("point_file", report.point_file),
            ("nonzero_slacks", nonzero),
            ("wall_ms", int(report.wall_ms)),
        ])

    def build_report(self, reports, certificate=None, instance="", norm=""):
        certificate_block = None
        if certificate is not None:
            certificate_block = OrderedDict(
                (key, _number(value) if key != "certified" else value)
                for key, value in certificate.to_dict().items()
            )
        return OrderedDict([
            ("instance", instance),
            ("norm", norm),
            ("stages", [self.stage_to_dict(report) for report in reports]),
            ("certificate", certificate_block),
        ])

    def write_report(self, reports, certificate, sink, instance="", norm=""):
        """
        Write a run report as one line of compact JSON.

        Args:
            reports: StageReports in stage order
            certificate: AlphaCertificate or None
            sink: A text stream or a file path
            instance: Instance label, e.g. 'case9-P70'
            norm: Slack norm of the run

        Returns:
            The JSON text written
        """
        text = json.dumps(self.build_report(reports, certificate, instance, norm), separators=(",", ":"))
        try:
            if isinstance(sink, str):
                directory = os.path.dirname(sink)
                if directory and not os.path.exists(directory):
                    os.makedirs(directory)
                with open(sink, "w", encoding="utf-8") as handle:
                    handle.write(text + "\n")
                logger.info(f"Report written to {sink}")
            else:
                sink.write(text + "\n")
        except OSError as e:
            raise IoFailure(f"Cannot write report: {str(e)}")
        return text

    def write_point(self, path, point):
        """Write a StagePoint as {names: [...], values: [...]}."""
        try:
            directory = os.path.dirname(path)
            if directory and not os.path.exists(directory):
                os.makedirs(directory)
            with open(path, "w", encoding="utf-8") as handle:
                json.dump(point.to_dict(), handle)
        except OSError as e:
            raise IoFailure(f"Cannot write point file {path}: {str(e)}")
        logger.debug(f"Point written to {path}")
        return path

    def read_point(self, path):
        try:
            with open(path, "r", encoding="utf-8") as handle:
                return StagePoint.from_dict(json.load(handle))
        except (OSError, ValueError, KeyError) as e:
            raise IoFailure(f"Cannot read point file {path}: {str(e)}")


report_service = ReportService()
