"""
Run Logger - Streaming visibility into training and evaluation runs.

Logs step losses, checkpoints and metrics to both stdout and a log file.
"""

from datetime import datetime
from pathlib import Path
from typing import TextIO

from .utils import get_project_root


class RunLogger:
    """Streaming logger for a training or evaluation run."""

    def __init__(self, run_name: str, log_dir: Path | None = None, echo: bool = True):
        """Initialize logger for a run.

        Args:
            run_name: Name of the run (config name)
            log_dir: Directory for log files (default: project_root/logs)
            echo: Also print to stdout
        """
        self.run_name = run_name
        self.echo = echo
        self.start_time = datetime.now()
        self.steps = 0

        if log_dir is None:
            log_dir = get_project_root() / "logs"
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)

        # logs/{run_name}.log (overwritten on each run)
        self.log_file = log_dir / f"{run_name}.log"
        self._file: TextIO | None = None

    def __enter__(self):
        self._file = open(self.log_file, "w")
        self._write_header()
        return self

    def __exit__(self, _exc_type, _exc_val, _exc_tb):
        if self._file:
            self._file.close()
            self._file = None

    def _write_header(self):
        header = f"""
{'=' * 60}
Run: {self.run_name}
Started: {self.start_time.isoformat()}
{'=' * 60}
"""
        self._log(header)

    def _log(self, msg: str, end: str = "\n", flush: bool = True):
        """Log to both stdout and file."""
        if self.echo:
            print(msg, end=end, flush=flush)
        if self._file:
            self._file.write(msg + end)
            if flush:
                self._file.flush()

    def info(self, text: str):
        self._log(text)

    def step(self, iteration: int, lr: float, weighted: dict[str, float], total: float):
        """Log one training step: weighted loss components and their total."""
        self.steps += 1
        parts = "  ".join(f"{name}={value:.4f}" for name, value in weighted.items())
        self._log(f"  [{iteration:>7d}] lr={lr:.3e}  {parts}  total={total:.4f}")

    def checkpoint(self, path: Path, iteration: int):
        self._log(f"  ▸ checkpoint @ {iteration}: {path}")

    def metrics(self, summary: dict[str, float | None]):
        """Log a metric summary (None prints as n/a)."""
        self._log("\n  Metrics:")
        for name, value in summary.items():
            shown = "n/a" if value is None else f"{value:.4f}"
            self._log(f"    {name:<22} {shown}")

    def complete(self, iterations: int = 0):
        """Log completion with stats."""
        elapsed = datetime.now() - self.start_time

        self._log(f"\n{'=' * 60}")
        self._log("Run complete!")
        self._log(f"Duration: {elapsed.total_seconds():.2f}s")
        if iterations:
            self._log(f"Iterations: {iterations}")
        self._log(f"Log file: {self.log_file}")
        self._log(f"{'=' * 60}\n")

    def error(self, error_msg: str):
        self._log(f"\n❌ ERROR: {error_msg}")
