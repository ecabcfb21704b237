"""Versioned BER result CSVs with atomic, resumable appends."""

import math
import os
from dataclasses import dataclass

from ..errors import ParseError, ValidationError

VERSION_LINE = "# chantwin-results v1"
COLUMNS = ("scenario", "variant", "snr_db", "ber", "bits", "stderr", "seed")
HEADER = VERSION_LINE + "\n" + ",".join(COLUMNS) + "\n"


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    variant: str
    snr_db: float
    ber: float
    bits: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.ber <= 1.0:
            raise ValidationError(f"BER {self.ber} outside [0, 1]")
        if self.bits < 1:
            raise ValidationError("bits must be positive")
        for text in (self.scenario, self.variant):
            if "," in text or "\n" in text:
                raise ValidationError(f"label {text!r} may not contain commas or newlines")

    @property
    def stderr(self):
        return math.sqrt(self.ber * (1.0 - self.ber) / self.bits)

    @property
    def key(self):
        return (self.scenario, self.variant, self.snr_db, self.seed)

    def to_line(self):
        return (f"{self.scenario},{self.variant},{self.snr_db!r},{self.ber!r},{self.bits},"
                f"{self.stderr!r},{self.seed}\n")


def parse_results(text):
    """Rows of a results CSV; a malformed row raises ``ParseError`` with its line number."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != VERSION_LINE:
        raise ParseError(f"expected '{VERSION_LINE}'", 1)
    if len(lines) < 2 or tuple(c.strip() for c in lines[1].split(",")) != COLUMNS:
        raise ParseError(f"expected column header {','.join(COLUMNS)}", 2)
    rows = []
    for no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise ParseError(f"expected {len(COLUMNS)} fields, got {len(parts)}", no)
        try:
            row = ResultRow(parts[0], parts[1], float(parts[2]), float(parts[3]), int(parts[4]), int(parts[6]))
            stderr = float(parts[5])
        except (ValueError, ValidationError) as exc:
            raise ParseError(str(exc), no) from None
        if not math.isclose(stderr, row.stderr, rel_tol=1e-12, abs_tol=1e-300):
            raise ParseError(f"stderr {stderr} does not match BER and bits", no)
        rows.append(row)
    return rows


def read_results(path):
    with open(path) as fh:
        return parse_results(fh.read())


class ResultWriter:
    """Single appender for one CSV file.

    Each row goes out in one ``write`` call followed by ``fsync``, so a crash
    can leave at most a truncated final line, which is dropped on reopen.
    """

    def __init__(self, path):
        self.path = os.fspath(path)
        self.done = set()
        if os.path.exists(self.path) and os.path.getsize(self.path) > 0:
            with open(self.path, "rb") as fh:
                raw = fh.read()
            if not raw.endswith(b"\n"):
                raw = raw[:raw.rfind(b"\n") + 1]
                with open(self.path, "r+b") as fh:
                    fh.truncate(len(raw))
            for row in parse_results(raw.decode()):
                self.done.add(row.key)
        else:
            self._write(HEADER, mode="w")

    def _write(self, text, mode="a"):
        with open(self.path, mode) as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())

    def append(self, row: ResultRow):
        if row.key in self.done:
            return False
        self._write(row.to_line())
        self.done.add(row.key)
        return True
