"""Configuration, verification reports and the forward / round-trip pipelines.

A config is an INI file with one section per stage::

    [input]
    fixture = torus:1          # or: mesh = path, metric = path
    q = const:1.2              # or: qdiff = path
    [uniformize]
    tol = 1e-10
    [middle]
    tol = 0.05
    [roundtrip]
    remark = 0.3
    [run]
    levels = 0, 1
    seed = 0
    output = out/
    [thresholds]
    middle.hopf_sum = 0.05
"""

from __future__ import annotations

import configparser
import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .fixtures import Surface, cone_sphere, flat_torus, refine_times
from .germ import MaxGerm, germ_residuals, particle_degeneracy, solve_modified_gauss
from .harmonic import (
    area_ratio,
    displaced_metric,
    find_middle,
    l2_norm,
    middle_comparison,
    middle_residuals,
    relative_error,
    smooth_displacement,
)
from .liouville import UniformizationProblem, curvature_residual, expected_area, hyperbolic_area, uniformize
from .mesh import ConeMesh, DiscreteMetric, gauss_bonnet_residual, load_mesh
from .mess import E, identity_checks, mess_transform, pair_metrics
from .quaddiff import QuadDiff, holomorphicity_residual, load_quaddiff, sample_analytic, SymmetricTwoTensor


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


# Thresholds default to the acceptance tolerances; residuals without one are data.
DEFAULT_THRESHOLDS = {
    "uniformize.curvature": 1e-8,
    "germ.trace": 1e-12,
    "germ.gauss": 1e-8,
    "mess.trace_B": 1e-12,
    "mess.det_b": 1e-12,
    "mess.eig_b": 1e-12,
    "mess.g2_pullback": 1e-12,
    "mess.sum_identity": 1e-12,
    "mess.self_adjoint": 1e-12,
    "mess.det_E_plus_JB": 1e-12,
    "mess.det_E_minus_JB": 1e-12,
    "mess.reconstruct": 1e-10,
    "middle.hopf_sum": 0.05,
    "middle.q_error": 0.05,
    "roundtrip.class_error": 0.05,
    "roundtrip.q_error": 0.05,
}

FORWARD_RESIDUALS = (
    "uniformize.curvature",
    "uniformize.gauss_bonnet",
    "uniformize.area",
    "germ.trace",
    "germ.divergence",
    "germ.gauss",
    "germ.holomorphicity",
    "germ.particle_degeneracy",
    "mess.trace_B",
    "mess.det_b",
    "mess.eig_b",
    "mess.g2_pullback",
    "mess.sum_identity",
    "mess.self_adjoint",
    "mess.det_E_plus_JB",
    "mess.det_E_minus_JB",
    "mess.reconstruct",
    "mess.curvature_g1",
    "mess.curvature_g2",
    "mess.curvature_g1_max",
    "mess.curvature_g2_max",
    "mess.codazzi",
    "mess.b_identity",
    "middle.hopf_sum",
    "middle.q_error",
    "middle.area_ratio",
)
# radius of the disks around poles left out of the holomorphicity norm
POLE_EXCLUDE = 0.3

ROUNDTRIP_RESIDUALS = ("roundtrip.class_error", "roundtrip.q_error", "roundtrip.hopf_sum")


# -- config ------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    mesh: str | None = None
    metric: str | None = None
    qdiff: str | None = None
    fixture: str | None = None
    q: str | None = None
    uniformize_tol: float = 1e-10
    uniformize_max_iter: int = 100
    germ_tol: float = 1e-10
    germ_max_iter: int = 100
    middle_tol: float = 0.05
    middle_max_outer: int = 10
    harmonic_tol: float = 1e-9
    remark: float = 0.3
    levels: list[int] = field(default_factory=lambda: [0])
    seed: int = 0
    output: str | None = None
    thresholds: dict[str, float] = field(default_factory=dict)
    source_text: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("uniformize_tol", "germ_tol", "middle_tol", "harmonic_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if any(lv < 0 for lv in self.levels) or not self.levels:
            raise ConfigError("refinement levels must be >= 0")
        if self.remark < 0:
            raise ConfigError("remark amplitude must be >= 0")
        if self.mesh is None and self.fixture is None:
            raise ConfigError("config needs [input] mesh or fixture")
        if self.qdiff is None and self.q is None:
            raise ConfigError("config needs [input] qdiff or q")
        if self.mesh is not None and self.levels != [0]:
            raise ConfigError("refinement levels need a fixture input")
        for p in (self.mesh, self.metric, self.qdiff):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"input file {p!r} not found")
        if self.fixture is not None:
            _check_fixture_spec(self.fixture)
        if self.q is not None:
            _check_q_spec(self.q)
        for k, v in self.thresholds.items():
            if not v > 0:
                raise ConfigError(f"threshold {k} must be positive")

    @property
    def all_thresholds(self) -> dict[str, float]:
        return {**DEFAULT_THRESHOLDS, **self.thresholds}

    def hash(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str, base: Path | None = None) -> "PipelineConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        base = base or Path(".")

        def get(sec, key, conv=str, default=None):
            if not cp.has_option(sec, key):
                return default
            raw = cp.get(sec, key)
            try:
                return conv(raw)
            except ValueError:
                raise ConfigError(f"[{sec}] {key} = {raw!r} is not valid") from None

        def path(key):
            p = get("input", key)
            return None if p is None else str(base / p)

        levels = get("run", "levels", lambda s: [int(x) for x in s.split(",") if x.strip()], [0])
        thr = {}
        if cp.has_section("thresholds"):
            for k in cp.options("thresholds"):
                thr[k] = get("thresholds", k, float)
        out = get("run", "output")
        return cls(
            mesh=path("mesh"),
            metric=path("metric"),
            qdiff=path("qdiff"),
            fixture=get("input", "fixture"),
            q=get("input", "q"),
            uniformize_tol=get("uniformize", "tol", float, 1e-10),
            uniformize_max_iter=get("uniformize", "max_iter", int, 100),
            germ_tol=get("germ", "tol", float, 1e-10),
            germ_max_iter=get("germ", "max_iter", int, 100),
            middle_tol=get("middle", "tol", float, 0.05),
            middle_max_outer=get("middle", "max_outer", int, 10),
            harmonic_tol=get("middle", "harmonic_tol", float, 1e-9),
            remark=get("roundtrip", "remark", float, 0.3),
            levels=levels,
            seed=get("run", "seed", int, 0),
            output=None if out is None else str(base / out),
            thresholds=thr,
            source_text=text,
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {str(path)!r} not found")
        return cls.from_text(path.read_text(), path.parent)


# -- report ------------------------------------------------------------------------


@dataclass
class VerificationReport:
    residuals: dict[str, float] = field(default_factory=dict)
    thresholds: dict[str, float] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    tables: dict[str, tuple[list[str], list[list[float]]]] = field(default_factory=dict)
    required: tuple[str, ...] = ()
    notes: list[str] = field(default_factory=list)

    def add(self, name: str, value: float) -> None:
        if name in self.residuals:
            raise ValueError(f"residual {name} reported twice")
        self.residuals[name] = float(value)

    def missing(self) -> list[str]:
        return [n for n in self.required if n not in self.residuals]

    def checks(self) -> dict[str, bool]:
        out = {}
        for name, v in self.residuals.items():
            t = self.thresholds.get(name)
            if t is not None:
                out[name] = bool(np.isfinite(v) and v <= t)
        return out

    @property
    def passed(self) -> bool:
        # flags are informational; only thresholds and completeness decide
        return not self.missing() and all(self.checks().values())

    def format(self, with_times: bool = True) -> str:
        lines = [f"provenance.{k} = {v}" for k, v in sorted(self.provenance.items())]
        for name in sorted(self.residuals):
            lines.append(f"residual.{name} = {self.residuals[name]:.6e}")
        for name in sorted(self.thresholds):
            if name in self.residuals:
                lines.append(f"threshold.{name} = {self.thresholds[name]:.6e}")
        for name, ok in sorted(self.checks().items()):
            lines.append(f"check.{name} = {str(ok).lower()}")
        for name, ok in sorted(self.flags.items()):
            lines.append(f"flag.{name} = {str(ok).lower()}")
        for name in self.missing():
            lines.append(f"missing.{name} = true")
        for note in self.notes:
            lines.append(f"note = {note}")
        if with_times:
            for name, t in sorted(self.timings.items()):
                lines.append(f"wall_time.{name} = {t:.3f}")
        lines.append(f"pass = {str(self.passed).lower()}")
        for name, (header, rows) in sorted(self.tables.items()):
            lines.append(f"[table {name}]")
            lines.append(",".join(header))
            lines += [",".join(f"{x:.10g}" for x in row) for row in rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "VerificationReport":
        rep = cls()
        table = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("[table "):
                table = line[7:-1]
                rep.tables[table] = ([], [])
                continue
            if table is not None:
                header, rows = rep.tables[table]
                if not header:
                    header.extend(line.split(","))
                else:
                    rows.append([float(x) for x in line.split(",")])
                continue
            key, _, val = line.partition(" = ")
            kind, _, name = key.partition(".")
            if kind == "residual":
                rep.residuals[name] = float(val)
            elif kind == "threshold":
                rep.thresholds[name] = float(val)
            elif kind == "flag":
                rep.flags[name] = val == "true"
            elif kind == "provenance":
                rep.provenance[name] = val
            elif kind == "wall_time":
                rep.timings[name] = float(val)
            elif kind == "note":
                rep.notes.append(val)
        return rep


def _provenance(cfg: PipelineConfig | None) -> dict[str, str]:
    import scipy

    out = {"package": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
    if cfg is not None:
        out["config_hash"] = cfg.hash()
        out["seed"] = str(cfg.seed)
    return out


# -- inputs ------------------------------------------------------------------------


def _check_fixture_spec(spec: str) -> None:
    kind, *args = spec.split(":")
    if kind not in ("torus", "sphere") or len(args) > (1 if kind == "torus" else 2):
        raise ConfigError(f"bad fixture spec {spec!r}")
    if not all(a.isdigit() for a in args):
        raise ConfigError(f"bad fixture spec {spec!r}")
    if kind == "sphere" and len(args) == 2 and args[1] not in ("3", "4"):
        raise ConfigError("sphere fixtures carry 3 or 4 cones")


def _check_q_spec(spec: str) -> None:
    kind, _, arg = spec.partition(":")
    try:
        if kind == "zero" and not arg:
            return
        if kind == "const":
            complex(arg)
            return
        if kind == "poles":
            float(arg)
            return
    except ValueError:
        pass
    raise ConfigError(f"bad q spec {spec!r}")


def make_fixture(spec: str, extra_levels: int = 0) -> Surface:
    """``torus:L`` (flat square torus, n = 8, one cone of angle pi/2, refined L times)
    or ``sphere:L[:N]`` (icosphere level L with N = 3 or 4 cones of angle pi/2)."""
    kind, *args = spec.split(":")
    try:
        nums = [int(a) for a in args]
    except ValueError:
        raise ConfigError(f"bad fixture spec {spec!r}") from None
    lev = (nums[0] if nums else 0) + extra_levels
    if kind == "torus":
        return refine_times(flat_torus(8, cones={0: math.pi / 2}), lev)
    if kind == "sphere":
        n = nums[1] if len(nums) > 1 else 4
        return cone_sphere(lev, n_cones=n)
    raise ConfigError(f"unknown fixture kind {kind!r}")


def fixture_quaddiff(spec: str, surface: Surface) -> QuadDiff:
    """``zero``, ``const:c`` (``c dz^2``) or ``poles:s`` (``s dz^2 / prod (z - p_i)``)."""
    kind, _, arg = spec.partition(":")
    if kind == "zero":
        return QuadDiff.zero(surface.mesh, surface.metric)
    if kind == "const":
        c = complex(arg)
        return sample_analytic(lambda z: c * np.ones_like(z), surface)
    if kind == "poles":
        s = float(arg)
        mc = surface.marked_coordinates()
        pts = list(mc.values())

        def expr(z):
            out = np.ones_like(z)
            for p in pts:
                out = out / (z - p)
            return out

        return sample_analytic(expr, surface, poles={v: 1 for v in mc}).scaled(s)
    raise ConfigError(f"unknown q spec {spec!r}")


def load_inputs(cfg: PipelineConfig, level: int = 0) -> tuple[ConeMesh, DiscreteMetric, QuadDiff]:
    if cfg.fixture is not None:
        surf = make_fixture(cfg.fixture, level)
        mesh, ref = surf.mesh, surf.metric
    else:
        surf = None
        mesh = load_mesh(cfg.mesh)
        ref = load_metric(cfg.metric, mesh) if cfg.metric else DiscreteMetric.from_positions(mesh)
    if cfg.qdiff is not None:
        q = load_quaddiff(cfg.qdiff, mesh, ref)
    elif surf is not None:
        q = fixture_quaddiff(cfg.q, surf)
    else:
        if cfg.q != "zero":
            raise ConfigError("analytic q specs need a fixture; use a qdiff file")
        q = QuadDiff.zero(mesh, ref)
    return mesh, ref, q


# -- metric and germ files ---------------------------------------------------------


def format_metric(metric: DiscreteMetric) -> str:
    lines = [f"# conformal factor over reference lengths", f"reference {metric.hash()}"]
    lines += [f"ref {e} {x:.17g}" for e, x in enumerate(metric.ref_lengths)]
    lines += [f"u {i} {x:.17g}" for i, x in enumerate(metric.u)]
    return "\n".join(lines) + "\n"


def _parse_metric_lines(text: str, mesh: ConeMesh, extra: dict[str, list] | None = None) -> DiscreteMetric:
    ref = np.full(mesh.n_edges, np.nan)
    u = np.full(mesh.n_vertices, np.nan)
    declared = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "reference" and len(tok) == 2:
                declared = tok[1]
            elif tok[0] == "ref" and len(tok) == 3:
                ref[int(tok[1])] = float(tok[2])
            elif tok[0] == "u" and len(tok) == 3:
                u[int(tok[1])] = float(tok[2])
            elif extra is not None and tok[0] in extra:
                extra[tok[0]].append(tok[1:])
            else:
                raise ValueError("unknown record")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: cannot parse {raw!r} ({exc})") from None
    if np.isnan(u).any():
        raise ValueError("metric file misses u values")
    if np.isnan(ref).all():
        ref = DiscreteMetric.from_positions(mesh).ref_lengths
    elif np.isnan(ref).any():
        raise ValueError("metric file has an incomplete ref block")
    m = DiscreteMetric(ref, u)
    if declared is not None and declared != m.hash():
        raise ValueError(f"reference hash mismatch: file says {declared}, lengths give {m.hash()}")
    return m


def parse_metric(text: str, mesh: ConeMesh) -> DiscreteMetric:
    return _parse_metric_lines(text, mesh)


def load_metric(path, mesh: ConeMesh) -> DiscreteMetric:
    return parse_metric(Path(path).read_text(), mesh)


def format_lengths(mesh: ConeMesh, metric: DiscreteMetric) -> str:
    """A metric given only by edge lengths (``u = 0``)."""
    return format_metric(metric.flattened(mesh))


def format_germ(germ: MaxGerm) -> str:
    """Metric file of ``g0`` over the reference, plus ``h f a b`` (``h = [[a, b], [b, -a]]`` in g0 frames).

    ``q f re im`` lines keep the source differential in reference frames:
    per-face frame changes are not exactly invertible, so it cannot be
    recovered from ``h`` without a small error.
    """
    lines = [format_metric(germ.g0).rstrip("\n")]
    lines += [f"h {i} {m[0, 0]:.17g} {m[0, 1]:.17g}" for i, m in enumerate(germ.h.mats)]
    lines += [f"q {i} {c.real:.17g} {c.imag:.17g}" for i, c in enumerate(germ.source_q.coeffs)]
    return "\n".join(lines) + "\n"


def parse_germ(text: str, mesh: ConeMesh) -> MaxGerm:
    extra = {"h": [], "q": []}
    g0 = _parse_metric_lines(text, mesh, extra)
    a = np.full(mesh.n_faces, np.nan)
    b = np.full(mesh.n_faces, np.nan)
    for rec in extra["h"]:
        if len(rec) != 3:
            raise ValueError(f"bad h record {rec!r}")
        a[int(rec[0])], b[int(rec[0])] = float(rec[1]), float(rec[2])
    if np.isnan(a).any():
        raise ValueError("germ file misses h entries")
    mats = np.empty((mesh.n_faces, 2, 2))
    mats[:, 0, 0], mats[:, 1, 1] = a, -a
    mats[:, 0, 1] = mats[:, 1, 0] = b
    lengths = g0.lengths(mesh)
    ref = DiscreteMetric(g0.ref_lengths, np.zeros(mesh.n_vertices))
    if extra["q"]:
        c = np.full(mesh.n_faces, np.nan, dtype=complex)
        for rec in extra["q"]:
            c[int(rec[0])] = float(rec[1]) + 1j * float(rec[2])
        if np.isnan(c).any():
            raise ValueError("germ file has an incomplete q block")
        source = QuadDiff(c, ref.lengths(mesh))
    else:
        source = QuadDiff(a - 1j * b, lengths).in_frames(mesh, ref)
    return MaxGerm(mesh, ref, g0, SymmetricTwoTensor(mats, lengths), source)


def load_germ(path, mesh: ConeMesh) -> MaxGerm:
    return parse_germ(Path(path).read_text(), mesh)


# -- stages ------------------------------------------------------------------------


class _Stage:
    def __init__(self, report: VerificationReport, name: str):
        self.report, self.name = report, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, et, exc, tb):
        self.report.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def verify_middle(mesh: ConeMesh, germ: MaxGerm, g1: DiscreteMetric, g2: DiscreteMetric, harmonic_tol: float = 1e-9):
    """Hopf differentials of the harmonic maps from ``[g0]`` to ``g1`` and ``g2``.

    Returns ``(hopf_sum, q_error, mean |area ratio - 1|)``.
    """
    m1, m2, p1, p2, ratio = middle_residuals(mesh, germ.g0, g1, g2, harmonic_tol)
    qerr = relative_error(mesh, p1.scaled(1j), germ.q0)
    ar = float(np.mean(np.abs(area_ratio(mesh, germ.g0, m1, m2) - 1.0)))
    return ratio, qerr, ar


def mess_report(report: VerificationReport, germ: MaxGerm, harmonic_tol: float = 1e-9):
    """Shared tail of the forward pipeline: identities of the pair and the middle point."""
    mesh = germ.mesh
    with _Stage(report, "mess"):
        field_, pair = mess_transform(germ)
        for k, v in identity_checks(germ, field_, pair).items():
            report.add(f"mess.{k}", v)
        dev = float(np.abs(field_.b - E).max())
        report.add("mess.b_identity", dev)
        report.flags["b_identity"] = dev <= 1e-8
        lam = np.sort(np.linalg.eigvals(field_.b).real, axis=1)
        report.tables["b_eigenvalues"] = (
            ["face", "lambda_min", "lambda_max", "k"],
            [[i, lam[i, 0], lam[i, 1], field_.k[i]] for i in range(mesh.n_faces)],
        )
        m1, m2 = pair_metrics(mesh, pair)
    with _Stage(report, "middle"):
        ratio, qerr, ar = verify_middle(mesh, germ, m1, m2, harmonic_tol)
        report.add("middle.hopf_sum", ratio)
        report.add("middle.q_error", qerr)
        report.add("middle.area_ratio", ar)
    return field_, pair, m1, m2


def forward_once(cfg: PipelineConfig, level: int = 0, report: VerificationReport | None = None):
    report = report or VerificationReport()
    with _Stage(report, "input"):
        mesh, ref, q = load_inputs(cfg, level)
    with _Stage(report, "uniformize"):
        c, _ = uniformize(UniformizationProblem(mesh, ref), cfg.uniformize_tol, cfg.uniformize_max_iter)
        report.add("uniformize.curvature", curvature_residual(mesh, c))
        report.add("uniformize.gauss_bonnet", abs(gauss_bonnet_residual(mesh, c)))
        exp = expected_area(mesh)
        report.add("uniformize.area", abs(hyperbolic_area(mesh, c) - exp) / exp)
    with _Stage(report, "germ"):
        germ, _ = solve_modified_gauss(mesh, ref, q, cfg.germ_tol, cfg.germ_max_iter)
        gr = germ_residuals(germ)
        report.add("germ.trace", gr.trace)
        report.add("germ.divergence", gr.divergence)
        report.add("germ.gauss", gr.gauss)
        report.add("germ.holomorphicity", holomorphicity_residual(germ.q0, mesh, germ.g0, POLE_EXCLUDE))
        report.add("germ.particle_degeneracy", particle_degeneracy(germ))
    outputs = mess_report(report, germ, cfg.harmonic_tol)
    return report, (mesh, ref, q, c, germ) + outputs


def run_forward(cfg: PipelineConfig) -> VerificationReport:
    """Uniformize, solve the germ, build the Mess pair, check identities and the middle point.

    Residuals come from the first refinement level; further levels fill the
    ``refinement`` table.
    """
    report = VerificationReport(thresholds=cfg.all_thresholds, required=FORWARD_RESIDUALS)
    report.provenance = _provenance(cfg)
    report, out = forward_once(cfg, cfg.levels[0], report)
    rows = [[cfg.levels[0]] + [report.residuals[n] for n in FORWARD_RESIDUALS]]
    for lv in cfg.levels[1:]:
        sub, _ = forward_once(cfg, lv)
        rows.append([lv] + [sub.residuals[n] for n in FORWARD_RESIDUALS])
    report.tables["refinement"] = (["level", *FORWARD_RESIDUALS], rows)
    if cfg.output:
        write_outputs(cfg.output, out)
        (Path(cfg.output) / "report.txt").write_text(report.format())
    return report


def write_outputs(outdir, out) -> None:
    from .mesh import save_mesh
    from .mess import format_pair
    from .quaddiff import save_quaddiff

    mesh, ref, q, c, germ, field_, pair, m1, m2 = out
    d = Path(outdir)
    d.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, d / "mesh.txt")
    (d / "reference.txt").write_text(format_metric(ref))
    (d / "metric.txt").write_text(format_metric(c))
    save_quaddiff(q.in_frames(mesh, ref), d / "qdiff.txt")
    (d / "germ.txt").write_text(format_germ(germ))
    (d / "pair.txt").write_text(format_pair(field_, pair))
    (d / "g1.txt").write_text(format_lengths(mesh, m1))
    (d / "g2.txt").write_text(format_lengths(mesh, m2))


def roundtrip_once(cfg: PipelineConfig, level: int, report: VerificationReport):
    with _Stage(report, "input"):
        mesh, ref, q = load_inputs(cfg, level)
    with _Stage(report, "germ"):
        germ, _ = solve_modified_gauss(mesh, ref, q, cfg.germ_tol, cfg.germ_max_iter)
    with _Stage(report, "mess"):
        _, pair = mess_transform(germ)
        m1, m2 = pair_metrics(mesh, pair)
        if cfg.remark > 0:
            # the pair is only defined up to isotopy: re-mark g2 by a smooth vertex motion
            m2 = displaced_metric(mesh, m2, smooth_displacement(mesh, m2, cfg.remark, cfg.seed))
    with _Stage(report, "find_middle"):
        res = find_middle(mesh, m1, m2, cfg.middle_tol, cfg.middle_max_outer, cfg.harmonic_tol)
        cerr, qerr = middle_comparison(mesh, res, germ.g0, germ.q0)
    return res, cerr, qerr


def run_roundtrip(cfg: PipelineConfig) -> VerificationReport:
    """Forward to ``(g1, g2)``, then ``find_middle`` back and compare with ``(c, q)``.

    Non-convergence of ``find_middle`` is recorded as a flag; the run completes.
    """
    report = VerificationReport(thresholds=cfg.all_thresholds, required=ROUNDTRIP_RESIDUALS)
    report.provenance = _provenance(cfg)
    res, cerr, qerr = roundtrip_once(cfg, cfg.levels[0], report)
    report.add("roundtrip.class_error", cerr)
    report.add("roundtrip.q_error", qerr)
    report.add("roundtrip.hopf_sum", res.ratio)
    report.flags["find_middle_converged"] = res.converged
    if not res.converged:
        report.notes.append(f"find_middle stopped after {res.outer} outer iterations")
    rows = [[cfg.levels[0], cerr, qerr, res.ratio, res.outer]]
    for lv in cfg.levels[1:]:
        r2, c2, q2 = roundtrip_once(cfg, lv, VerificationReport())
        rows.append([lv, c2, q2, r2.ratio, r2.outer])
    report.tables["roundtrip_refinement"] = (["level", "class_error", "q_error", "hopf_sum", "outer"], rows)
    if cfg.output:
        d = Path(cfg.output)
        d.mkdir(parents=True, exist_ok=True)
        (d / "roundtrip.txt").write_text(report.format())
    return report


def emit_plots(report: VerificationReport, outdir) -> list[Path]:
    """``residuals.csv`` plus one CSV per table carried by the report."""
    if not report.residuals and not report.tables:
        raise ValueError("empty report")
    d = Path(outdir)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    checks = report.checks()
    lines = ["name,value,threshold,pass"]
    for name in sorted(report.residuals):
        t = report.thresholds.get(name)
        ok = checks.get(name)
        lines.append(f"{name},{report.residuals[name]:.10g},{'' if t is None else f'{t:.3g}'},{'' if ok is None else str(ok).lower()}")
    p = d / "residuals.csv"
    p.write_text("\n".join(lines) + "\n")
    written.append(p)
    for name, (header, rows) in sorted(report.tables.items()):
        p = d / f"{name}.csv"
        body = [",".join(header)] + [",".join(f"{x:.10g}" for x in row) for row in rows]
        p.write_text("\n".join(body) + "\n")
        written.append(p)
    return written
