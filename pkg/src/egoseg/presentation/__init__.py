"""Results deck: metric tables and model-size / mIoU scatter."""

from .generate_report import build_report_rows, generate_report, scatter_points

__all__ = ["build_report_rows", "generate_report", "scatter_points"]
