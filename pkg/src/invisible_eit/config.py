"""Experiment configuration files.

The format is plain text of ``key = value`` lines grouped under
``[section]`` headers.  ``#`` starts a comment.  Keys written before the
first header are shorthands for frequently changed settings (see
``TOP_LEVEL``).  Example::

    electrodes = 4
    epsilon = 6.0

    [omega]
    shape = concentric_disk
    radius = 0.5

    [cem]
    width = 0.0981747704
    impedance = 0.01

Sections and keys:

``[electrodes]``
    ``count`` (default 4), ``offset_deg`` (default 1; angles
    ``offset + j * 360 / count`` degrees), ``angles_deg`` (explicit comma
    separated list, overrides the rule).
``[omega]``
    ``shape`` = ``concentric_disk`` | ``annulus_sector`` | ``offset_disk``;
    ``radius``, ``r_in``, ``r_out``, ``angle_start_deg``, ``angle_span_deg``,
    ``center`` (``x, y``).
``[run]``
    ``epsilon`` (required), ``seed`` (expression in x, y or a built-in name,
    default ``1``), ``tau0`` (scalar filling every entry, default 0),
    ``stop_tol``, ``max_iter``, ``gamma_max``, ``epsilon_backoff``,
    ``max_backoffs``, ``min_sigma``, ``divergence_window``, ``solver_tol``.
``[mesh]``
    ``target_h`` (default 0.02), ``quadrature_degree`` (default 6).
``[cem]``
    ``width`` (radians, default pi/32), ``impedance`` (default 0.01).
    The presence of this section enables CEM validation.
``[output]``
    ``dir`` (default ``out``), ``raster`` (grid points per axis, default 101).
"""

import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .basis import BUILTIN_SEEDS
from .cem import DEFAULT_IMPEDANCE, DEFAULT_WIDTH
from .errors import ParseError, ValidationError
from .expr import parse_expression
from .mesh import DEFAULT_DEGREE, OmegaSpec
from .potentials import ElectrodeConfig
from .solver import RunConfig


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _floats(s):
    return tuple(float(p) for p in s.split(",") if p.strip())


def _text(s):
    return s


SCHEMA = {
    "electrodes": {"count": _int, "offset_deg": _float, "angles_deg": _floats},
    "omega": {"shape": _text, "radius": _float, "r_in": _float, "r_out": _float,
              "angle_start_deg": _float, "angle_span_deg": _float, "center": _floats},
    "run": {"epsilon": _float, "seed": _text, "tau0": _float, "stop_tol": _float,
            "max_iter": _int, "gamma_max": _float, "epsilon_backoff": _float,
            "max_backoffs": _int, "min_sigma": _float, "divergence_window": _int,
            "solver_tol": _float},
    "mesh": {"target_h": _float, "quadrature_degree": _int},
    "cem": {"width": _float, "impedance": _float},
    "output": {"dir": _text, "raster": _int},
}

TOP_LEVEL = {"electrodes": ("electrodes", "count"), "epsilon": ("run", "epsilon"),
             "seed": ("run", "seed"), "target_h": ("mesh", "target_h")}

_SECTION = re.compile(r"^\[\s*([A-Za-z_]\w*)\s*\]$")
_KEY = re.compile(r"^[A-Za-z_]\w*$")


@dataclass(frozen=True)
class CemSettings:
    width: float = DEFAULT_WIDTH
    impedance: float = DEFAULT_IMPEDANCE


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings with defaults filled in."""

    epsilon: float
    electrode_count: int = 4
    offset_deg: float = 1.0
    angles_deg: Optional[Tuple[float, ...]] = None
    omega: OmegaSpec = field(default_factory=lambda: OmegaSpec.concentric_disk(0.5))
    seed: str = "1"
    tau0: float = 0.0
    stop_tol: float = 1e-8
    max_iter: int = 200
    gamma_max: float = 1e3
    epsilon_backoff: float = 0.5
    max_backoffs: int = 5
    min_sigma: float = 1e-3
    divergence_window: int = 3
    solver_tol: float = 1e-12
    target_h: float = 0.02
    quadrature_degree: int = DEFAULT_DEGREE
    cem: Optional[CemSettings] = None
    output_dir: str = "out"
    raster: int = 101

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValidationError("must be positive", field="epsilon")
        if self.angles_deg is not None:
            object.__setattr__(self, "electrode_count", len(self.angles_deg))
        if self.electrode_count < 2:
            raise ValidationError("need at least two electrodes", field="electrodes.count")
        if not self.target_h > 0:
            raise ValidationError("must be positive", field="mesh.target_h")
        if self.raster < 2:
            raise ValidationError("need at least two points", field="output.raster")
        try:
            parse_expression(BUILTIN_SEEDS.get(self.seed.strip(), self.seed))
        except ParseError as err:
            raise ValidationError(f"bad seed expression: {err}", field="run.seed") from None
        self.electrode_config()
        self.run_config()
        if self.cem is not None:
            from .cem import CemElectrodes
            CemElectrodes(self.electrode_config().angles, self.cem.width, self.cem.impedance)

    @property
    def electrode_angles_deg(self):
        if self.angles_deg is not None:
            return tuple(self.angles_deg)
        n = self.electrode_count
        return tuple(self.offset_deg + j * 360.0 / n for j in range(n))

    def electrode_config(self):
        try:
            return ElectrodeConfig.from_degrees(self.electrode_angles_deg)
        except ValidationError as err:
            raise ValidationError(str(err), field="electrodes") from None

    def run_config(self):
        N = self.electrode_count - 1
        return RunConfig(epsilon=self.epsilon, tau0=np.full((N, N), self.tau0),
                         stop_tol=self.stop_tol, max_iter=self.max_iter, gamma_max=self.gamma_max,
                         epsilon_backoff=self.epsilon_backoff, min_sigma=self.min_sigma,
                         max_backoffs=self.max_backoffs, divergence_window=self.divergence_window,
                         solver_tol=self.solver_tol)

    def with_overrides(self, epsilon=None, electrodes=None, seed=None, output_dir=None):
        """Copy with command-line overrides applied (``None`` keeps a value)."""
        changes = {}
        if epsilon is not None:
            changes["epsilon"] = float(epsilon)
        if electrodes is not None:
            changes.update(electrode_count=int(electrodes), angles_deg=None)
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = output_dir
        return replace(self, **changes)


def tokenize_config(text):
    """``{section: {key: (raw value, line, column)}}`` from config text."""
    sections = {"": {}}
    current = ""
    seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.strip()
        if not stripped:
            continue
        indent = len(line) - len(line.lstrip()) + 1
        m = _SECTION.match(stripped)
        if m:
            current = m.group(1).lower()
            if current in sections and current != "":
                raise ParseError(f"duplicate section [{current}]", lineno, indent)
            sections[current] = {}
            continue
        if stripped.startswith("["):
            raise ParseError("malformed section header", lineno, indent)
        if "=" not in stripped:
            raise ParseError("expected 'key = value'", lineno, indent)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not _KEY.match(key):
            raise ParseError(f"invalid key {key!r}", lineno, indent)
        if not value:
            raise ParseError(f"missing value for {key!r}", lineno, line.index("=") + 2)
        if key.lower() in sections[current]:
            raise ParseError(f"duplicate key {key!r}", lineno, indent)
        sections[current][key.lower()] = (value, lineno, line.index(value) + 1)
        seen = True
    if not seen:
        raise ParseError("configuration contains no settings", 1, 1)
    return sections


def parse_config(text):
    """Parse and validate configuration text.

    Raises
    ------
    ParseError
        For syntax problems, with line and column.
    ValidationError
        For unknown keys, malformed values or out-of-range settings; the
        exception's ``field`` names the offending entry.
    """
    raw = tokenize_config(text)
    values = {s: {} for s in SCHEMA}
    for key, item in raw.pop("").items():
        if key not in TOP_LEVEL:
            raise ValidationError("unknown top-level key", field=key)
        sec, name = TOP_LEVEL[key]
        if name in raw.get(sec, {}):
            raise ValidationError("given both at top level and in its section", field=f"{sec}.{name}")
        values[sec][name] = item
    for sec, items in raw.items():
        if sec not in SCHEMA:
            raise ValidationError("unknown section", field=sec)
        values[sec].update(items)

    conv = {}
    for sec, items in values.items():
        for key, (value, lineno, col) in items.items():
            if key not in SCHEMA[sec]:
                raise ValidationError("unknown key", field=f"{sec}.{key}")
            try:
                conv[(sec, key)] = SCHEMA[sec][key](value)
            except ValueError:
                raise ValidationError(f"cannot read {value!r} (line {lineno})",
                                      field=f"{sec}.{key}") from None

    def get(sec, key, default=None):
        return conv.get((sec, key), default)

    if get("run", "epsilon") is None:
        raise ValidationError("required", field="epsilon")
    kw = dict(
        epsilon=get("run", "epsilon"),
        electrode_count=get("electrodes", "count", 4),
        offset_deg=get("electrodes", "offset_deg", 1.0),
        angles_deg=get("electrodes", "angles_deg"),
        omega=_omega(get),
        seed=get("run", "seed", "1"),
        target_h=get("mesh", "target_h", 0.02),
        quadrature_degree=get("mesh", "quadrature_degree", DEFAULT_DEGREE),
        output_dir=get("output", "dir", "out"),
        raster=get("output", "raster", 101),
    )
    for key in ("tau0", "stop_tol", "max_iter", "gamma_max", "epsilon_backoff", "max_backoffs",
                "min_sigma", "divergence_window", "solver_tol"):
        if ("run", key) in conv:
            kw[key] = conv[("run", key)]
    if "cem" in raw:
        kw["cem"] = CemSettings(get("cem", "width", DEFAULT_WIDTH),
                                get("cem", "impedance", DEFAULT_IMPEDANCE))
    return ExperimentConfig(**kw)


def _omega(get):
    shape = get("omega", "shape", "concentric_disk")
    if shape == "concentric_disk":
        return OmegaSpec.concentric_disk(get("omega", "radius", 0.5))
    if shape == "annulus_sector":
        if get("omega", "r_in") is None or get("omega", "r_out") is None:
            raise ValidationError("r_in and r_out are required", field="omega")
        return OmegaSpec.annulus_sector(get("omega", "r_in"), get("omega", "r_out"),
                                        math.radians(get("omega", "angle_start_deg", 0.0)),
                                        math.radians(get("omega", "angle_span_deg", 360.0)))
    if shape == "offset_disk":
        center = get("omega", "center", (0.0, 0.0))
        if len(center) != 2:
            raise ValidationError("need two coordinates", field="omega.center")
        return OmegaSpec.offset_disk(center, get("omega", "radius", 0.5))
    raise ValidationError(f"unknown shape {shape!r}", field="omega.shape")


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
