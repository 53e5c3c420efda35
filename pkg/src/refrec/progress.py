"""
Terminal progress for long loops (training steps and dataset generation).

The bar is drawn in three colored sections: red for the first third of the
run, white for the middle, blue for the last third. Output goes to stderr
and is suppressed when stderr is not a terminal, so logs stay clean.
"""

import sys
import time
from typing import Optional, TextIO

RED = '\033[91m'
WHITE = '\033[97m'
BLUE = '\033[94m'
RESET = '\033[0m'
BOLD = '\033[1m'


class ColoredProgress:
    """Progress bar with an ETA and an optional trailing status message."""

    def __init__(self, total: int, label: str = "", width: int = 40,
                 stream: Optional[TextIO] = None, enabled: Optional[bool] = None):
        self.total = total
        self.label = label
        self.width = width
        self.stream = stream or sys.stderr
        self.enabled = self.stream.isatty() if enabled is None else enabled
        self.current = 0
        self.start_time = time.time()

    @property
    def phase(self) -> str:
        pct = self.current / self.total if self.total > 0 else 1.0
        if pct < 0.33:
            return 'beginning'
        if pct < 0.67:
            return 'middle'
        return 'end'

    def update(self, n: int = 1, message: str = ""):
        self.current = min(self.current + n, self.total)
        self._display(message)

    def _bar(self) -> str:
        filled = int(self.width * self.current / self.total) if self.total else self.width
        third = self.width // 3
        sections = [
            (RED, min(filled, third)),
            (WHITE, min(max(filled - third, 0), third)),
            (BLUE, max(filled - 2 * third, 0)),
        ]
        bar = ''.join(f"{color}{'#' * n}{RESET}" for color, n in sections if n > 0)
        return bar + '.' * (self.width - filled)

    def _display(self, message: str = ""):
        if not self.enabled or self.total == 0:
            return
        elapsed = time.time() - self.start_time
        if self.current > 0 and elapsed > 0:
            remaining = (self.total - self.current) * elapsed / self.current
            eta = f"ETA: {remaining:.0f}s"
        else:
            eta = "ETA: --"
        pct = 100.0 * self.current / self.total
        line = f"\r{BOLD}{self.label}{RESET} {self._bar()} {self.current}/{self.total} ({pct:.1f}%) {eta}"
        if message:
            line += f" | {message}"
        self.stream.write(line)
        self.stream.flush()

    def finish(self, message: str = "done"):
        self.current = self.total
        self._display(message)
        if self.enabled:
            self.stream.write("\n")
            self.stream.flush()


def print_section_header(text: str, color: str = BLUE):
    print(f"\n{color}{BOLD}{'=' * 70}")
    print(text.upper())
    print(f"{'=' * 70}{RESET}\n")
