"""Radio materials and the text registry they are loaded from.

Registry format (one material per line, ``#`` starts a comment)::

    ctw-materials 1
    name a b c d scattering [pec]

with ``eps_r = a * f_GHz**b`` and ``sigma = c * f_GHz**d`` S/m.
"""

import os
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from ..errors import ParseError, ValidationError

EPS0 = 8.8541878128e-12
MATERIALS_ENV = "CHANTWIN_MATERIALS"
REGISTRY_HEADER = "ctw-materials 1"


@dataclass(frozen=True)
class Material:
    name: str
    a: float
    b: float
    c: float
    d: float
    scattering: float = 0.0
    pec: bool = False

    def __post_init__(self):
        if not self.name or any(ch.isspace() for ch in self.name):
            raise ValidationError(f"bad material name {self.name!r}")
        if not 0.0 <= self.scattering <= 1.0:
            raise ValidationError(f"{self.name}: scattering coefficient must lie in [0, 1]")
        if not all(np.isfinite([self.a, self.b, self.c, self.d])):
            raise ValidationError(f"{self.name}: non-finite coefficient")

    def permittivity(self, frequency):
        eps_r = self.a * (frequency / 1e9) ** self.b
        if np.any(eps_r < 1.0):
            raise ValidationError(f"{self.name}: relative permittivity below 1 at {frequency} Hz")
        return eps_r

    def conductivity(self, frequency):
        return self.c * (frequency / 1e9) ** self.d

    def complex_permittivity(self, frequency):
        """``eps_r - j sigma / (2 pi f eps0)``."""
        return self.permittivity(frequency) - 1j * self.conductivity(frequency) / (2 * np.pi * frequency * EPS0)

    def scaled(self, eps_factor=1.0, sigma_factor=1.0):
        """Copy with permittivity and conductivity multiplied by the given factors."""
        return Material(self.name, self.a * eps_factor, self.b, self.c * sigma_factor, self.d,
                        self.scattering, self.pec)

    def to_line(self):
        fields = [self.name] + [repr(float(x)) for x in (self.a, self.b, self.c, self.d, self.scattering)]
        if self.pec:
            fields.append("pec")
        return " ".join(fields)


def parse_material(fields, line=None):
    if len(fields) not in (6, 7) or (len(fields) == 7 and fields[6] != "pec"):
        raise ParseError("expected 'name a b c d scattering [pec]'", line)
    try:
        nums = [float(x) for x in fields[1:6]]
    except ValueError as exc:
        raise ParseError(str(exc), line) from None
    try:
        return Material(fields[0], *nums, pec=len(fields) == 7)
    except ValidationError as exc:
        raise ParseError(str(exc), line) from None


def parse_registry(text):
    lines = text.splitlines()
    out = {}
    header_seen = False
    for i, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if line != REGISTRY_HEADER:
                raise ParseError(f"expected header {REGISTRY_HEADER!r}", i)
            header_seen = True
            continue
        mat = parse_material(line.split(), i)
        if mat.name in out:
            raise ParseError(f"duplicate material {mat.name!r}", i)
        out[mat.name] = mat
    if not header_seen:
        raise ParseError("empty materials registry")
    return out


@lru_cache(maxsize=8)
def _load_cached(path):
    if path is None:
        text = resources.files("chantwin.ray").joinpath("data/itu_materials.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return parse_registry(text)


def load_materials(path=None):
    """Registry as ``{name: Material}``.

    Uses ``path`` if given, else ``$CHANTWIN_MATERIALS``, else the bundled file.
    """
    path = path or os.environ.get(MATERIALS_ENV) or None
    return dict(_load_cached(path))
