"""
Generate a results deck from metric report files.

Usage:
    egoseg report runs/desk/metrics.json runs/desk_no_coco/metrics.json --out reports/

Writes <out>/<stem>.pptx with a title slide, a per-class IoU table (one row
per metrics file) and a parameter-count / mIoU scatter chart, plus
<out>/<stem>.md with the same table. With --pdf the deck is also converted
through LibreOffice when it is installed.
"""

import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from pptx import Presentation
from pptx.chart.data import XyChartData
from pptx.enum.chart import XL_CHART_TYPE, XL_LEGEND_POSITION
from pptx.enum.text import PP_ALIGN
from pptx.dml.color import RGBColor
from pptx.util import Inches, Pt

from ..lib.domain import CLASS_TITLES
from ..lib.metrics import MetricReport, read_report
from .styles import COLORS, FONTS, SIZES, DIMS

TABLE_HEADERS = ("Method", *CLASS_TITLES, "mIoU", "mAcc", "Illusion rate")
MISSING = "n/a"


@dataclass(frozen=True)
class ScatterPoint:
    name: str
    parameter_count: int
    miou: float


def _percent(value: float | None) -> str:
    return MISSING if value is None else f"{100 * value:.1f}"


def build_report_rows(reports: Sequence[MetricReport]) -> list[list[str]]:
    """Table cells, one row per report, percentages with one decimal."""
    rows = []
    for i, report in enumerate(reports):
        rows.append([
            report.name or f"run {i + 1}",
            *(_percent(v) for v in report.per_class_iou),
            _percent(report.miou),
            _percent(report.macc),
            _percent(report.illusion_rate),
        ])
    return rows


def scatter_points(reports: Sequence[MetricReport]) -> list[ScatterPoint]:
    """Reports that carry both a parameter count and a defined mIoU."""
    return [
        ScatterPoint(r.name or f"run {i + 1}", r.parameter_count, r.miou)
        for i, r in enumerate(reports)
        if r.parameter_count is not None and r.miou is not None
    ]


def markdown_table(rows: Sequence[Sequence[str]]) -> str:
    lines = [
        "| " + " | ".join(TABLE_HEADERS) + " |",
        "|" + "|".join("---" for _ in TABLE_HEADERS) + "|",
    ]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def rgb(color_key: str) -> RGBColor:
    """Convert color key to RGBColor."""
    return RGBColor.from_string(COLORS.get(color_key, color_key))


def add_slide_title(slide, title_text: str) -> None:
    title_box = slide.shapes.add_textbox(
        Inches(DIMS["margin"]), Inches(0.4),
        Inches(DIMS["width"] - 2 * DIMS["margin"]), Inches(1)
    )
    p = title_box.text_frame.paragraphs[0]
    p.text = title_text
    p.font.size = Pt(SIZES["heading"])
    p.font.bold = True
    p.font.color.rgb = rgb("text_dark")
    p.font.name = FONTS["title"]


def add_title_slide(prs: Presentation, title: str, subtitle: str | None = None) -> None:
    slide = prs.slides.add_slide(prs.slide_layouts[6])  # Blank

    title_box = slide.shapes.add_textbox(
        Inches(DIMS["margin"]), Inches(2.5),
        Inches(DIMS["width"] - 2 * DIMS["margin"]), Inches(1.5)
    )
    p = title_box.text_frame.paragraphs[0]
    p.text = title
    p.font.size = Pt(SIZES["title"])
    p.font.bold = True
    p.font.color.rgb = rgb("primary")
    p.font.name = FONTS["title"]
    p.alignment = PP_ALIGN.CENTER

    if subtitle:
        sub_box = slide.shapes.add_textbox(
            Inches(DIMS["margin"]), Inches(4.2),
            Inches(DIMS["width"] - 2 * DIMS["margin"]), Inches(1)
        )
        p = sub_box.text_frame.paragraphs[0]
        p.text = subtitle
        p.font.size = Pt(SIZES["subtitle"])
        p.font.color.rgb = rgb("text_light")
        p.font.name = FONTS["body"]
        p.alignment = PP_ALIGN.CENTER


def add_table_slide(prs: Presentation, rows: Sequence[Sequence[str]]) -> None:
    """Per-class IoU, mIoU, mAcc and illusion rate (all in %)."""
    slide = prs.slides.add_slide(prs.slide_layouts[6])
    add_slide_title(slide, "Segmentation results (%)")

    width = DIMS["width"] - 2 * DIMS["margin"]
    shape = slide.shapes.add_table(
        len(rows) + 1, len(TABLE_HEADERS),
        Inches(DIMS["margin"]), Inches(1.6),
        Inches(width), Inches(0.4 * (len(rows) + 1)),
    )
    table = shape.table
    table.columns[0].width = Inches(2.6)
    for j in range(1, len(TABLE_HEADERS)):
        table.columns[j].width = Inches((width - 2.6) / (len(TABLE_HEADERS) - 1))

    for j, header in enumerate(TABLE_HEADERS):
        cell = table.cell(0, j)
        cell.text = header
        cell.fill.solid()
        cell.fill.fore_color.rgb = rgb("primary")
        p = cell.text_frame.paragraphs[0]
        p.font.size = Pt(SIZES["table"])
        p.font.bold = True
        p.font.color.rgb = rgb("white")
        p.font.name = FONTS["body"]
        p.alignment = PP_ALIGN.CENTER

    for i, row in enumerate(rows, start=1):
        for j, value in enumerate(row):
            cell = table.cell(i, j)
            cell.text = value
            cell.fill.solid()
            cell.fill.fore_color.rgb = rgb("row_alt" if i % 2 == 0 else "background")
            p = cell.text_frame.paragraphs[0]
            p.font.size = Pt(SIZES["table"])
            p.font.name = FONTS["mono"] if j else FONTS["body"]
            p.font.color.rgb = rgb("muted" if value == MISSING else "text_dark")
            p.alignment = PP_ALIGN.CENTER if j else PP_ALIGN.LEFT


def add_scatter_slide(prs: Presentation, points: Sequence[ScatterPoint]) -> None:
    """Parameter count vs mIoU, one series per run so the legend names it."""
    slide = prs.slides.add_slide(prs.slide_layouts[6])
    add_slide_title(slide, "Model size vs mIoU")

    if not points:
        box = slide.shapes.add_textbox(Inches(DIMS["margin"]), Inches(3), Inches(8), Inches(1))
        p = box.text_frame.paragraphs[0]
        p.text = "No report carries both a parameter count and an mIoU."
        p.font.size = Pt(SIZES["subtitle"])
        p.font.color.rgb = rgb("text_light")
        p.font.name = FONTS["body"]
        return

    chart_data = XyChartData()
    for point in points:
        series = chart_data.add_series(point.name)
        series.add_data_point(point.parameter_count, point.miou)

    chart = slide.shapes.add_chart(
        XL_CHART_TYPE.XY_SCATTER,
        Inches(DIMS["margin"]), Inches(1.5),
        Inches(DIMS["width"] - 2 * DIMS["margin"]), Inches(DIMS["height"] - 2.2),
        chart_data,
    ).chart
    chart.has_legend = True
    chart.legend.position = XL_LEGEND_POSITION.RIGHT
    chart.legend.include_in_layout = False

    for axis, label in ((chart.category_axis, "Parameters"), (chart.value_axis, "mIoU")):
        axis.has_title = True
        axis.axis_title.text_frame.text = label
        axis.axis_title.text_frame.paragraphs[0].font.size = Pt(SIZES["small"])
        axis.tick_labels.font.size = Pt(SIZES["small"])


def convert_to_pdf(pptx_path: Path, soffice: str = "soffice") -> Path | None:
    """Headless LibreOffice conversion next to the deck; None when it is unavailable or fails."""
    pdf_path = pptx_path.with_suffix(".pdf")
    try:
        result = subprocess.run(
            [soffice, "--headless", "--convert-to", "pdf", "--outdir", str(pptx_path.parent), str(pptx_path)],
            capture_output=True,
            timeout=120,
        )
    except (FileNotFoundError, subprocess.TimeoutExpired):
        return None
    return pdf_path if result.returncode == 0 and pdf_path.exists() else None


def generate_report(
    metric_files: Sequence[Path],
    out_dir: Path,
    title: str = "Hand / active-object segmentation",
    stem: str = "report",
    pdf: bool = False,
) -> Path:
    """Render the deck and the Markdown table; returns the .pptx path."""
    reports = [read_report(Path(p)) for p in metric_files]
    rows = build_report_rows(reports)

    prs = Presentation()
    prs.slide_width = Inches(DIMS["width"])
    prs.slide_height = Inches(DIMS["height"])
    add_title_slide(prs, title, f"{len(reports)} run(s)")
    add_table_slide(prs, rows)
    add_scatter_slide(prs, scatter_points(reports))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    output_path = out_dir / f"{stem}.pptx"
    prs.save(output_path)
    (out_dir / f"{stem}.md").write_text(markdown_table(rows))
    print(f"PPTX saved to: {output_path}")

    if pdf:
        pdf_path = convert_to_pdf(output_path)
        if pdf_path:
            print(f"PDF saved to: {pdf_path}")
        else:
            print("PDF conversion skipped (install LibreOffice)")

    return output_path
