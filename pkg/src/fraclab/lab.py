"""Experiment orchestration: configuration, corpus sweeps, probes and result serialization."""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import json
import math
import os
import random
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from fraclab.branching import (
    branching_lower_bound_witness,
    branching_scale_finder,
    interval_decomposition,
)
from fraclab.dyadic import ScaleLadder, as_fraction, level_scale
from fraclab.entropy import entropy_profile, frac_ge_pow2, good_scales
from fraclab.generators import (
    ArcMeasure,
    DigitSystem,
    corpus_system,
    directions_from,
    generate_arc_measure,
    generate_planar,
)
from fraclab.measure import GridMeasure, measure_to_text
from fraclab.multiplicity import HypothesisError, iota_integrand, monotonicity_inclusions, unit_ball_mass
from fraclab.projection import Direction, greedy_min_cover

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or unsupported experiment configuration."""


# --- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class InstanceSpec:
    """A corpus name or a digit-system spec; depth is chosen per resolution."""

    name: str
    system: str | None = None

    def digit_system(self, level: int) -> DigitSystem:
        if self.system is None:
            return corpus_system(self.name, level)
        base = DigitSystem.parse(self.system)
        if level % base.bits:
            raise ConfigError(f"instance {self.name}: level {level} is not a multiple of {base.bits}")
        return base.with_depth(level // base.bits)

    def measure(self, level: int, window=None) -> GridMeasure:
        return generate_planar(self.digit_system(level), window)[1]


@dataclass(frozen=True)
class ArcSpec:
    kind: str = "uniform"
    level: int = 4
    digits: tuple = (0, 3)
    base: int = 4

    @property
    def name(self) -> str:
        return self.kind if self.kind == "uniform" else f"{self.kind}{self.base}:{','.join(map(str, self.digits))}"

    def measure(self, level: int | None = None) -> ArcMeasure:
        nu = generate_arc_measure(self.kind, self.level, self.digits, self.base)
        return nu if level is None or level <= nu.level else nu.refine(level)


def _rational(v, what: str) -> Fraction:
    try:
        return as_fraction(Fraction(v) if isinstance(v, str) else v)
    except (ValueError, TypeError, ZeroDivisionError):
        raise ConfigError(f"{what}: {v!r} is not a rational number") from None


def _sigma_value(token, s: Fraction) -> Fraction:
    """``"1/2"`` is literal; ``"s"``, ``"s/2"`` and ``"s*3/4"`` scale the instance dimension."""
    if isinstance(token, str) and token.strip().startswith("s"):
        rest = token.strip()[1:]
        if not rest:
            return s
        if rest.startswith("/"):
            return s / _rational(rest[1:], "sigma")
        if rest.startswith("*"):
            return s * _rational(rest[1:], "sigma")
        raise ConfigError(f"sigma: cannot read {token!r}")
    return _rational(token, "sigma")


@dataclass(frozen=True)
class ExperimentConfig:
    """Schema-versioned, fully deterministic description of a sweep."""

    corpus: tuple
    arcs: tuple
    m: int = 2
    N_range: tuple = (2, 6)
    sigma: tuple = ("s/2",)
    sigma0: tuple = ()
    lam: tuple = ()
    tau: tuple = (Fraction(1, 2), Fraction(1))
    eps: tuple = (Fraction(1, 16),)
    kappa: tuple = (Fraction(3, 10),)
    s_lower: tuple = (Fraction(1, 2),)
    spacing_exponent: Fraction = Fraction(1, 2)
    dual_path: bool = False
    seed: int = 0
    out_dir: str = "results"
    schema_version: int = SCHEMA_VERSION

    @property
    def Ns(self) -> range:
        return range(self.N_range[0], self.N_range[1] + 1)

    @classmethod
    def default(cls) -> "ExperimentConfig":
        from fraclab.generators import CORPUS_NAMES

        return cls(tuple(InstanceSpec(n) for n in CORPUS_NAMES), (ArcSpec("uniform", 4),))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a table")
        ver = d.get("schema_version")
        if ver != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION} (got {ver!r})")
        known = {"schema_version", "seed", "ladder", "grids", "corpus", "arcs", "directions", "output"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown top-level keys {sorted(extra)}")
        corpus = []
        for i, c in enumerate(d.get("corpus", [])):
            if not isinstance(c, dict) or "name" not in c:
                raise ConfigError(f"corpus[{i}] needs a name")
            spec = InstanceSpec(str(c["name"]), c.get("system"))
            try:
                spec.digit_system(2 * (spec.digit_system(2).bits if spec.system else 1))
            except (KeyError, ValueError) as e:
                raise ConfigError(f"corpus[{i}]: {e}") from None
            corpus.append(spec)
        if not corpus:
            raise ConfigError("corpus must list at least one instance")
        arcs = []
        for i, a in enumerate(d.get("arcs", [{"kind": "uniform", "level": 4}])):
            try:
                spec = ArcSpec(str(a.get("kind", "uniform")), int(a.get("level", 4)), tuple(int(x) for x in a.get("digits", (0, 3))), int(a.get("base", 4)))
                spec.measure()
            except (KeyError, ValueError, TypeError, AttributeError) as e:
                raise ConfigError(f"arcs[{i}]: {e}") from None
            arcs.append(spec)
        lad = d.get("ladder", {})
        m = lad.get("m", 2)
        Nr = lad.get("N", [2, 6])
        if not (isinstance(m, int) and m >= 1):
            raise ConfigError("ladder.m must be a positive integer")
        if isinstance(Nr, int):
            Nr = [Nr, Nr]
        if not (isinstance(Nr, list) and len(Nr) == 2 and all(isinstance(n, int) for n in Nr) and 1 <= Nr[0] <= Nr[1]):
            raise ConfigError("ladder.N must be an integer or a [lo, hi] pair with 1 <= lo <= hi")
        g = d.get("grids", {})
        unknown = set(g) - {"sigma", "sigma0", "lambda", "tau", "eps", "kappa", "s_lower"}
        if unknown:
            raise ConfigError(f"unknown grids {sorted(unknown)}")

        def grid(key, default):
            vals = g.get(key, default)
            if not isinstance(vals, list):
                raise ConfigError(f"grids.{key} must be a list")
            return tuple(vals if key == "sigma" else (_rational(v, key) for v in vals))

        sig = grid("sigma", ["s/2"])
        for t in sig:
            _sigma_value(t, Fraction(1))
        dirs = d.get("directions", {})
        out = d.get("output", {})
        return cls(
            corpus=tuple(corpus), arcs=tuple(arcs), m=m, N_range=tuple(Nr),
            sigma=sig, sigma0=grid("sigma0", []), lam=grid("lambda", []),
            tau=grid("tau", ["1/2", "1"]), eps=grid("eps", ["1/16"]),
            kappa=tuple(_rational(v, "kappa") if v != "inf" else math.inf for v in g.get("kappa", ["3/10"])),
            s_lower=grid("s_lower", ["1/2"]),
            spacing_exponent=_rational(dirs.get("spacing_exponent", "1/2"), "directions.spacing_exponent"),
            dual_path=bool(dirs.get("dual_path", False)),
            seed=int(d.get("seed", 0)), out_dir=str(out.get("dir", "results")),
        )

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config is not valid TOML: {e}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError(str(e)) from None
        return cls.from_toml(text)

    def spacing(self, level: int) -> Fraction:
        """Direction spacing ``delta^e`` rounded to the nearest coarser dyadic scale."""
        return level_scale(math.floor(level * self.spacing_exponent))


# --- results -----------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _canonical(params: dict) -> str:
    return json.dumps({k: format_value(v) for k, v in sorted(params.items())}, sort_keys=True)


def certificate(inputs: list[str], operation: str, params: dict) -> str:
    """Hash of input digests, operation name and parameters."""
    h = hashlib.sha256()
    for s in inputs:
        h.update(hashlib.sha256(s.encode()).digest())
    h.update(operation.encode())
    h.update(_canonical(params).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class ResultRow:
    instance: str
    params: dict
    quantity: str
    value: object
    certificate: str
    wall_time: float = 0.0
    status: str = "ok"

    FIELDS = ("instance", "params", "quantity", "value", "status", "certificate", "wall_time")

    def as_record(self) -> dict:
        return {
            "instance": self.instance,
            "params": {k: format_value(v) for k, v in sorted(self.params.items())},
            "quantity": self.quantity,
            "value": format_value(self.value),
            "status": self.status,
            "certificate": self.certificate,
            "wall_time": round(self.wall_time, 6),
        }

    def key(self) -> tuple:
        """Everything except the wall time; equal across reruns."""
        r = self.as_record()
        r.pop("wall_time")
        return tuple(json.dumps(r[k], sort_keys=True) for k in sorted(r))


def write_rows(rows: list[ResultRow], out_dir, stem: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, jl_path = out / f"{stem}.csv", out / f"{stem}.jsonl"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ResultRow.FIELDS)
        for r in rows:
            rec = r.as_record()
            rec["params"] = ";".join(f"{k}={v}" for k, v in rec["params"].items())
            w.writerow([rec[k] for k in ResultRow.FIELDS])
    with jl_path.open("w") as fh:
        for r in rows:
            fh.write(json.dumps(r.as_record(), sort_keys=True) + "\n")
    return csv_path, jl_path


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def max_workers() -> int:
    """Worker cap from ``FRACLAB_THREADS`` (default: one per CPU)."""
    raw = os.environ.get("FRACLAB_THREADS")
    cpus = os.cpu_count() or 1
    if raw is None or raw == "":
        return cpus
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FRACLAB_THREADS must be a positive integer (got {raw!r})") from None
    if n < 1:
        raise ConfigError(f"FRACLAB_THREADS must be a positive integer (got {raw!r})")
    return n


def _fan_out(fn, tasks: list, workers: int | None = None) -> list:
    """Apply ``fn`` to each task, possibly in worker processes; results in task order."""
    workers = max_workers() if workers is None else workers
    workers = min(workers, len(tasks))
    if workers <= 1:
        return [fn(t) for t in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


# --- theorem-probing pipelines ----------------------------------------------


def _arc_for(arc: ArcSpec, spacing: Fraction) -> ArcMeasure:
    from fraclab.dyadic import scale_level

    return arc.measure(scale_level(spacing))


def _iota_task(task) -> list[ResultRow]:
    cfg, inst, arc, sigma_token = task
    rows = []
    values = []
    for N in cfg.Ns:
        L = cfg.m * N
        mu = inst.measure(L)
        s = inst.digit_system(L).dimension
        sigma = _sigma_value(sigma_token, s)
        delta = level_scale(L)
        spacing = cfg.spacing(L)
        nu = _arc_for(arc, spacing)
        params = {"arc": arc.name, "sigma": sigma, "m": cfg.m, "N": N, "delta": delta, "spacing": spacing}
        inputs = [measure_to_text(mu), repr(sorted(nu.weights.items()))]
        t0 = time.perf_counter()
        val = iota_integrand(mu, nu, sigma, delta, spacing)
        dt = time.perf_counter() - t0
        rows.append(ResultRow(inst.name, params, "iota", val, certificate(inputs, "iota_integrand", params), dt))
        if cfg.dual_path:
            t0 = time.perf_counter()
            brute = iota_integrand(mu, nu, sigma, delta, spacing, method="brute")
            dt = time.perf_counter() - t0
            rows.append(ResultRow(inst.name, params, "iota_dual_path_equal", brute == val,
                                  certificate(inputs, "iota_integrand_brute", params), dt,
                                  "ok" if brute == val else "violation"))
        values.append(val)
    mono = all(a >= b for a, b in zip(values, values[1:]))
    p = {"arc": arc.name, "sigma": sigma_token, "m": cfg.m, "N": f"{cfg.N_range[0]}..{cfg.N_range[1]}"}
    rows.append(ResultRow(inst.name, p, "iota_non_increasing", mono, certificate([r.certificate for r in rows], "trend", p), 0.0))
    return rows


def run_theorem_A_probe(config: ExperimentConfig, workers: int | None = None) -> list[ResultRow]:
    """Direction-averaged high-multiplicity mass at ``delta = Delta^N`` per instance, arc measure and sigma."""
    tasks = [(config, inst, arc, sig) for inst in config.corpus for arc in config.arcs for sig in config.sigma]
    return [r for rows in _fan_out(_iota_task, tasks, workers) for r in rows]


def _pow2_threshold(den: int, e: Fraction) -> Fraction:
    """Least multiple of ``1/den`` that is ``>= 2^-e``; equivalent to ``2^-e`` for masses on that grid."""
    k = max(1, math.ceil(den * 2.0 ** (-float(e))))
    while k > 1 and frac_ge_pow2(Fraction(k - 1, den), -e):
        k -= 1
    while not frac_ge_pow2(Fraction(k, den), -e):
        k += 1
    return Fraction(k, den)


def min_cover_at(mu: GridMeasure, theta: Direction, L: int, kappa) -> tuple[int, Fraction]:
    """Fewest ``2^-L``-tubes carrying mass ``>= 2^(-L kappa)``; ``kappa = inf`` means threshold 0."""
    if kappa == math.inf:
        return 0, Fraction(0)
    den = math.lcm(*(v.denominator for v in mu.weights.values()))
    thr = _pow2_threshold(den, L * as_fraction(kappa))
    total = mu.mantissa_mass()
    if thr > total:
        thr = total
    n, _ = greedy_min_cover(mu, theta, level_scale(L), thr)
    return n, thr


def _cover_task(task) -> list[ResultRow]:
    cfg, inst, arc, N = task
    L = cfg.m * N
    mu = inst.measure(L)
    spacing = cfg.spacing(L)
    dirs = directions_from(_arc_for(arc, spacing), spacing)
    rows = []
    for kappa in cfg.kappa:
        counts = []
        for theta, _ in dirs:
            t0 = time.perf_counter()
            n, thr = min_cover_at(mu, theta, L, kappa)
            dt = time.perf_counter() - t0
            params = {"arc": arc.name, "N": N, "m": cfg.m, "kappa": kappa if kappa != math.inf else "inf", "theta": theta.label()}
            rows.append(ResultRow(inst.name, params, "min_projection_count", n,
                                  certificate([measure_to_text(mu)], "greedy_min_cover", params), dt))
            counts.append(n)
        vacuous = max(counts, default=0) <= 1
        for s_low in cfg.s_lower:
            passing = any(frac_ge_pow2(Fraction(c), L * s_low) for c in counts)
            params = {"arc": arc.name, "N": N, "m": cfg.m, "kappa": kappa if kappa != math.inf else "inf", "s_lower": s_low}
            rows.append(ResultRow(inst.name, params, "some_direction_reaches_bound", passing,
                                  certificate([measure_to_text(mu)], "theorem_B_cell", params), 0.0,
                                  "vacuous" if vacuous else "ok"))
    return rows


def run_theorem_B_probe(config: ExperimentConfig, workers: int | None = None) -> list[ResultRow]:
    """Worst-case projection counts of heavy subsets, per direction of the discretised arc measure."""
    tasks = [(config, inst, arc, N) for inst in config.corpus for arc in config.arcs for N in config.Ns]
    return [r for rows in _fan_out(_cover_task, tasks, workers) for r in rows]


# --- lemma suite --------------------------------------------------------------


@dataclass
class SuiteResult:
    rows: list = field(default_factory=list)

    @property
    def violations(self) -> list:
        return [r for r in self.rows if r.status == "violation"]

    @property
    def warnings(self) -> list:
        return [r for r in self.rows if r.status == "warning"]

    @property
    def ok(self) -> bool:
        return not self.violations


def _row(inst, params, quantity, value, ok, inputs, warn=False, dt=0.0) -> ResultRow:
    status = "ok" if ok else ("warning" if warn else "violation")
    return ResultRow(inst, params, quantity, value, certificate(inputs, quantity, params), dt, status)


def random_union_of_intervals(rng: random.Random, eps: Fraction, max_pieces: int = 6) -> list:
    """Random finite union of dyadic-rational intervals in ``[0,1]`` of total length ``<= eps``."""
    k = rng.randint(1, max_pieces)
    lens = [Fraction(rng.randint(1, 64), 64 * k) * eps for _ in range(k)]
    out = []
    for ln in lens:
        a = Fraction(rng.randrange(0, 1 << 12), 1 << 12) * (1 - ln)
        out.append((a, a + ln))
    return out


def _suite_task(task) -> list[ResultRow]:
    cfg, inst = task
    rows = []
    for N in cfg.Ns:
        L = cfg.m * N
        ladder = ScaleLadder(cfg.m, N)
        mu = inst.measure(L)
        K = mu.support
        s = inst.digit_system(L).dimension
        text = measure_to_text(mu)
        prof = entropy_profile(mu, ladder)
        p = {"m": cfg.m, "N": N}
        rows.append(_row(inst.name, p, "entropy_chain_rule_error", prof.max_identity_error, prof.max_identity_error <= 1e-12, [text]))
        for slope in (Fraction(0), Fraction(1, 2), Fraction(-2)):
            theta = Direction.from_slope(slope)
            reps = monotonicity_inclusions(K, theta, 2, 4, level_scale(L), ladder.Delta, 2)
            for r in reps:
                q = dict(p, theta=theta.label(), inclusion=r.name)
                rows.append(_row(inst.name, q, "inclusion_holds", r.holds, r.holds, [text]))
        for eps in cfg.eps:
            q = dict(p, s=s, eps=eps)
            try:
                gs = good_scales(K, ladder, s, eps)
            except HypothesisError as e:
                rows.append(_row(inst.name, q, "good_scales_hypothesis", str(e), False, [text], warn=True))
                continue
            rows.append(_row(inst.name, q, "good_scales_count", len(gs.good), gs.ok or not gs.in_regime, [text], warn=not gs.in_regime))
    theta0 = Direction.from_slope(0)
    ladder = ScaleLadder(cfg.m, cfg.N_range[0])
    mu = inst.measure(ladder.m * ladder.N)
    s = inst.digit_system(ladder.m * ladder.N).dimension
    q = {"m": ladder.m, "N": ladder.N, "sigma": s / 2, "theta": theta0.label()}
    try:
        w = branching_lower_bound_witness(mu.support, theta0, ladder, s / 2)
        rows.append(_row(inst.name, dict(q, regime=w.regime_note), "branching_witness_levels", len(w.G),
                         w.count_ok or not w.in_regime, [measure_to_text(mu)], warn=not w.in_regime))
    except HypothesisError as e:
        rows.append(_row(inst.name, q, "branching_witness_hypothesis", str(e), False, [measure_to_text(mu)], warn=True))
    return rows


def _interval_rows(cfg: ExperimentConfig, n_sets: int = 200) -> list[ResultRow]:
    rng = random.Random(cfg.seed)
    rows = []
    combos = [(e, C, g) for e in (Fraction(1, 16), Fraction(1, 64)) for C in (2, 4) for g in (Fraction(1, 4), Fraction(1, 8))]
    for k in range(n_sets):
        eps, C, gamma = combos[k % len(combos)]
        E = random_union_of_intervals(rng, eps)
        r = interval_decomposition(E, C, gamma, eps)
        q = {"trial": k, "eps": eps, "C": C, "gamma": gamma}
        rows.append(_row("interval_fuzz", q, "interval_decomposition_ok", r.ok, r.ok, [repr(E)]))
    return rows


def _scale_rows(cfg: ExperimentConfig) -> list[ResultRow]:
    rows = []
    for arc in cfg.arcs:
        nu = arc.measure()
        for L in (8, 12):
            for tau in cfg.tau:
                q = {"arc": arc.name, "delta": level_scale(L), "dfrak": 2, "tau": tau}
                inputs = [repr(sorted(nu.weights.items()))]
                try:
                    c = branching_scale_finder(nu, level_scale(L), 2, tau)
                except HypothesisError as e:
                    rows.append(_row(arc.name, q, "branching_scale_hypothesis", str(e), False, inputs, warn=True))
                    continue
                rows.append(_row(arc.name, q, "branching_scale_mass", c.nu_G, c.ok_mass, inputs))
                rows.append(_row(arc.name, q, "branching_scale_ratio", c.max_ratio, c.ok_ratio, inputs))
    return rows


def run_lemma_suite(config: ExperimentConfig, workers: int | None = None) -> SuiteResult:
    """Every checker over the corpus; regime misses are warnings, contract breaks are violations."""
    tasks = [(config, inst) for inst in config.corpus]
    rows = [r for rs in _fan_out(_suite_task, tasks, workers) for r in rs]
    rows += _interval_rows(config)
    rows += _scale_rows(config)
    return SuiteResult(rows)


def run_all(config: ExperimentConfig, out_dir=None, workers: int | None = None) -> SuiteResult:
    """All three pipelines; writes ``theorem_A``, ``theorem_B`` and ``lemmas`` as CSV and JSON lines."""
    out = Path(out_dir or config.out_dir)
    a = run_theorem_A_probe(config, workers)
    b = run_theorem_B_probe(config, workers)
    suite = run_lemma_suite(config, workers)
    write_rows(a, out, "theorem_A")
    write_rows(b, out, "theorem_B")
    write_rows(suite.rows, out, "lemmas")
    bad = [r for r in a if r.status == "violation"]
    return SuiteResult(bad + suite.rows)


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(ResultRow.FIELDS)
    for r in rows:
        rec = r.as_record()
        rec["params"] = ";".join(f"{k}={v}" for k, v in rec["params"].items())
        w.writerow([rec[k] for k in ResultRow.FIELDS])
    return buf.getvalue()
