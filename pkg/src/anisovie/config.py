"""Run configuration: sectioned ``key = value`` text with a canonical form.

Example::

    [problem]
    kind = maxwell_reduced
    variant = iso_222
    size = 1            ; number of wavelengths, omega = 2 pi size
    n_side = 70

    [solver]
    method = bicgstab
    tolerance = 1e-14

    [study]
    sizes = 50, 70
    reference = 100

Unknown sections or keys are rejected so that typos cannot silently fall back
to defaults.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .fftconv import DEFAULT_L
from .grid import ProbeSet
from .krylov import SolveOptions
from .media import VARIANTS
from .operators import EquationKind
from .scattering import INCOMING_KINDS, IncomingField, ProblemTemplate

OUT_ENV = "ANISOVIE_OUT"

SCHEMA = {
    "problem": {"kind", "variant", "mu_variant", "size", "omega", "n_side", "pad_factor", "L"},
    "incoming": {"kind", "direction", "polarization", "amplitude", "coeffs"},
    "solver": {"method", "tolerance", "max_matvecs", "restart"},
    "study": {"sizes", "reference", "probe_count", "probe_lo", "probe_hi"},
    "sweep": {"omegas", "sizes", "variants"},
    "output": {"dir"},
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _floats(text: str, key: str) -> list:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(key, f"expected a list of numbers, got {text!r}") from None


def _ints(text: str, key: str) -> list:
    vals = _floats(text, key)
    if any(v != int(v) for v in vals):
        raise ConfigError(key, f"expected integers, got {text!r}")
    return [int(v) for v in vals]


@dataclass
class RunConfig:
    kind: EquationKind = EquationKind.MAXWELL_REDUCED
    variant: str = "iso_222"
    mu_variant: Optional[str] = None
    size: float = 1.0
    n_side: int = 48
    pad_factor: int = 2
    L: float = DEFAULT_L
    incoming_kind: Optional[str] = None
    direction: tuple = (1.0, 0.0, 0.0)
    polarization: tuple = (0.0, 0.0, 1.0)
    amplitude: float = 1.0
    coeffs: tuple = ()
    solver: SolveOptions = field(default_factory=SolveOptions)
    study_sizes: tuple = ()
    reference: Optional[int] = None
    probe_count: int = 11
    probe_lo: float = 0.25
    probe_hi: float = 0.75
    sweep_sizes: tuple = ()
    sweep_variants: tuple = ("iso_222", "diag_234", "dense_rot", "iso_444")
    out_dir: Optional[str] = None

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.size

    def template(self, variant: Optional[str] = None, size: Optional[float] = None) -> ProblemTemplate:
        return ProblemTemplate(self.kind, variant or self.variant,
                               self.size if size is None else size,
                               self.direction, self.polarization, self.solver,
                               self.mu_variant, self.L, self.pad_factor)

    def incoming(self) -> IncomingField:
        kind = self.incoming_kind
        if kind is None:
            kind = "uniform_gradient" if self.kind is EquationKind.ELECTROSTATIC else "plane_wave"
        if kind == "uniform_gradient":
            return IncomingField.uniform_gradient(self.direction, self.amplitude)
        if kind == "harmonic_poly":
            degree = max(sum(e) for e, _ in self.coeffs)
            return IncomingField.harmonic_poly(degree, dict(self.coeffs), self.amplitude)
        return IncomingField.plane_wave(self.omega, self.direction, self.polarization, self.amplitude)

    def problem(self, n_side: Optional[int] = None):
        t = self.template()
        p = t.build(n_side or self.n_side)
        inc = self.incoming()
        if inc != p.incoming:
            from dataclasses import replace
            p = replace(p, incoming=inc)
        return p

    def probes(self) -> ProbeSet:
        return ProbeSet.lattice(self.probe_count, self.probe_lo, self.probe_hi)

    def output_root(self, override: Optional[str] = None) -> Path:
        return Path(override or self.out_dir or os.environ.get(OUT_ENV) or "runs")

    # canonical form
    def canonical(self) -> str:
        s = self.solver
        items = {
            "problem": {
                "kind": self.kind.value, "variant": self.variant,
                "mu_variant": self.mu_variant or "none", "size": repr(float(self.size)),
                "n_side": str(self.n_side), "pad_factor": str(self.pad_factor), "L": repr(float(self.L)),
            },
            "incoming": {
                "kind": self.incoming().kind,
                "direction": ", ".join(repr(float(v)) for v in self.direction),
                "polarization": ", ".join(repr(float(v)) for v in self.polarization),
                "amplitude": repr(float(self.amplitude)),
                "coeffs": "; ".join(f"{a}{b}{c}:{v!r}" for (a, b, c), v in self.coeffs) or "none",
            },
            "solver": {"method": s.method, "tolerance": repr(s.tolerance),
                       "max_matvecs": str(s.max_matvecs), "restart": str(s.restart)},
            "study": {"sizes": ", ".join(str(n) for n in self.study_sizes) or "none",
                      "reference": str(self.reference) if self.reference else "none",
                      "probe_count": str(self.probe_count), "probe_lo": repr(self.probe_lo),
                      "probe_hi": repr(self.probe_hi)},
            "sweep": {"sizes": ", ".join(repr(float(v)) for v in self.sweep_sizes) or "none",
                      "variants": ", ".join(self.sweep_variants)},
        }
        lines = []
        for sec in sorted(items):
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in sorted(items[sec].items()))
            lines.append("")
        return "\n".join(lines)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError("config", f"cannot parse: {e}") from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(sec, f"unknown section; expected one of {sorted(SCHEMA)}")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{sec}.{key}", "unknown key")

    def get(sec, key, default=None):
        return cp[sec][key].strip() if cp.has_option(sec, key) else default

    cfg = RunConfig()
    kind = get("problem", "kind")
    if kind is not None:
        try:
            cfg.kind = EquationKind(kind)
        except ValueError:
            raise ConfigError("problem.kind",
                              f"unknown kind {kind!r}; choose from {[k.value for k in EquationKind]}") from None
    for key, attr in (("variant", "variant"), ("mu_variant", "mu_variant")):
        v = get("problem", key)
        if v is not None:
            if v not in VARIANTS:
                raise ConfigError(f"problem.{key}", f"unknown material {v!r}; choose from {VARIANTS}")
            setattr(cfg, attr, v)
    size, omega = get("problem", "size"), get("problem", "omega")
    if size is not None and omega is not None:
        raise ConfigError("problem.omega", "give either size or omega, not both")
    try:
        if size is not None:
            cfg.size = float(size)
        elif omega is not None:
            cfg.size = float(omega) / (2 * math.pi)
        elif cfg.kind is EquationKind.ELECTROSTATIC:
            cfg.size = 0.0
        for key in ("n_side", "pad_factor"):
            v = get("problem", key)
            if v is not None:
                setattr(cfg, key, int(v))
        if get("problem", "L") is not None:
            cfg.L = float(get("problem", "L"))
    except ValueError as e:
        raise ConfigError("problem", str(e)) from None
    if cfg.kind is EquationKind.ELECTROSTATIC and cfg.size != 0:
        raise ConfigError("problem.size" if size is not None else "problem.omega",
                          "the electrostatic problem requires omega = 0")
    if cfg.kind is not EquationKind.ELECTROSTATIC and not cfg.size > 0:
        raise ConfigError("problem.size", f"{cfg.kind.value} needs a positive frequency")
    if cfg.n_side < 2:
        raise ConfigError("problem.n_side", "must be >= 2")
    if cfg.pad_factor < 2:
        raise ConfigError("problem.pad_factor", "must be >= 2")
    if cfg.mu_variant is not None and cfg.kind is not EquationKind.MAXWELL_FULL:
        raise ConfigError("problem.mu_variant", "mu is only used by maxwell_full")

    ik = get("incoming", "kind")
    if ik is not None:
        if ik not in INCOMING_KINDS:
            raise ConfigError("incoming.kind", f"unknown kind {ik!r}; choose from {INCOMING_KINDS}")
        cfg.incoming_kind = ik
    for key in ("direction", "polarization"):
        v = get("incoming", key)
        if v is not None:
            vals = _floats(v, f"incoming.{key}")
            if len(vals) != 3:
                raise ConfigError(f"incoming.{key}", "expected three components")
            setattr(cfg, key, tuple(vals))
    if get("incoming", "amplitude") is not None:
        cfg.amplitude = _floats(get("incoming", "amplitude"), "incoming.amplitude")[0]
    if get("incoming", "coeffs") is not None:
        coeffs = []
        for item in get("incoming", "coeffs").split(";"):
            e, _, v = item.strip().partition(":")
            if len(e) != 3 or not e.isdigit():
                raise ConfigError("incoming.coeffs", f"bad monomial {item!r}; use e.g. '200:1; 020:-1'")
            coeffs.append(((int(e[0]), int(e[1]), int(e[2])), float(v)))
        cfg.coeffs = tuple(coeffs)
    try:
        cfg.incoming().validate(cfg.kind)
    except ValueError as e:
        raise ConfigError("incoming", str(e)) from None

    try:
        cfg.solver = SolveOptions(
            tolerance=float(get("solver", "tolerance", 1e-14)),
            max_matvecs=int(get("solver", "max_matvecs", 20000)),
            method=get("solver", "method", "bicgstab"),
            restart=int(get("solver", "restart", 50)))
    except ValueError as e:
        raise ConfigError("solver", str(e)) from None

    if get("study", "sizes") is not None:
        cfg.study_sizes = tuple(_ints(get("study", "sizes"), "study.sizes"))
    if get("study", "reference") is not None:
        cfg.reference = _ints(get("study", "reference"), "study.reference")[0]
    if cfg.reference is not None and any(n > cfg.reference for n in cfg.study_sizes):
        raise ConfigError("study.reference", "must not be smaller than the study sizes")
    if get("study", "probe_count") is not None:
        cfg.probe_count = _ints(get("study", "probe_count"), "study.probe_count")[0]
    for key in ("probe_lo", "probe_hi"):
        if get("study", key) is not None:
            setattr(cfg, key, _floats(get("study", key), f"study.{key}")[0])
    if not 0 < cfg.probe_lo < cfg.probe_hi < 1:
        raise ConfigError("study.probe_lo", "need 0 < probe_lo < probe_hi < 1")

    sw_sizes, sw_omegas = get("sweep", "sizes"), get("sweep", "omegas")
    if sw_sizes is not None and sw_omegas is not None:
        raise ConfigError("sweep.omegas", "give either sizes or omegas, not both")
    if sw_sizes is not None or sw_omegas is not None:
        key = "sweep.sizes" if sw_sizes is not None else "sweep.omegas"
        vals = _floats(sw_sizes if sw_sizes is not None else sw_omegas, key)
        if not vals:
            raise ConfigError(key, "empty frequency list")
        if any(v <= 0 for v in vals):
            raise ConfigError(key, "frequencies must be positive")
        scale = 1.0 if sw_sizes is not None else 1.0 / (2 * math.pi)
        cfg.sweep_sizes = tuple(v * scale for v in vals)
    if get("sweep", "variants") is not None:
        vs = tuple(v.strip() for v in get("sweep", "variants").split(",") if v.strip())
        bad = [v for v in vs if v not in VARIANTS]
        if bad or not vs:
            raise ConfigError("sweep.variants", f"unknown or empty variants {bad}")
        cfg.sweep_variants = vs
    cfg.out_dir = get("output", "dir")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config", f"file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))
