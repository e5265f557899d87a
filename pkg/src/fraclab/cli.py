"""``fraclab`` command line: generators, per-module probes and the experiment runner.

Exit codes: 0 pass, 1 contract or hypothesis violation, 2 usage or input error.
"""

from __future__ import annotations

import csv
import json
import sys
from fractions import Fraction
from pathlib import Path

import click

from fraclab.branching import (
    branching_numbers,
    branching_scale_finder,
    interval_decomposition,
)
from fraclab.dyadic import GridSet, ScaleLadder, level_scale, scale_level
from fraclab.entropy import entropy_profile
from fraclab.generators import DigitSystem, arc_measure_from_text, generate_planar
from fraclab.lab import ConfigError, ExperimentConfig, format_value, max_workers, run_all
from fraclab.measure import GridMeasure, check_ahlfors, check_frostman, check_upper_regular, measure_to_text, read_measure_text
from fraclab.multiplicity import HypothesisError, ScalePairQuery, iota_integrand, multiplicity_field
from fraclab.projection import Direction, project_cover

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


# --- argument parsing -------------------------------------------------------


def parse_rational(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise InputError(f"not a rational number: {text!r}") from None


def parse_scale(text: str) -> Fraction:
    """``2^-k`` or a rational dyadic power such as ``1/16``."""
    t = text.strip().replace(" ", "")
    if t.startswith("2^"):
        try:
            return level_scale(-int(t[2:]))
        except ValueError:
            raise InputError(f"bad scale {text!r}; expected 2^-k") from None
    r = parse_rational(t)
    try:
        scale_level(r)
    except ValueError:
        raise InputError(f"scale {text!r} is not a dyadic power") from None
    return r


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except (OSError, UnicodeDecodeError) as e:
        raise InputError(str(e)) from None


def load_measure(path) -> GridMeasure:
    """A measure file; a bare set file is read as the uniform measure on its cells."""
    text = _read(path)
    try:
        if any(len(line.split("#", 1)[0].split()) == 4 for line in text.splitlines()):
            return read_measure_text(text)
        return GridMeasure.uniform(GridSet.from_text(text))
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def load_set(path) -> GridSet:
    return load_measure(path).support


def load_arc(path):
    try:
        return arc_measure_from_text(_read(path))
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None


def load_points_1d(path) -> tuple[list[int], int | None]:
    """Integer lattice indices, one per line, after an optional ``levels <mN>`` header."""
    pts, levels = [], None
    for lineno, raw in enumerate(_read(path).splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "levels":
                levels = int(parts[1])
                continue
            pts.extend(int(p) for p in parts)
        except (ValueError, IndexError):
            raise InputError(f"{path}:{lineno}: expected integers, got {line!r}") from None
    return pts, levels


def load_intervals(path) -> list[tuple[Fraction, Fraction]]:
    """One ``a b`` pair of rationals per line."""
    out = []
    for lineno, raw in enumerate(_read(path).splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 'a b', got {line!r}")
        out.append((parse_rational(parts[0]), parse_rational(parts[1])))
    return out


def _emit_csv(header, rows, out=None):
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_value(v) for v in r])
    finally:
        if out:
            fh.close()


def _certify(mu: GridMeasure, s: Fraction, C: Fraction) -> bool:
    ok = True
    reports = [
        check_frostman(mu, s, C),
        check_upper_regular(mu.support, s, C),
        check_ahlfors(mu, s, C),
    ]
    for r in reports:
        click.echo(f"{r.kind}: s={format_value(r.s)} C_best={r.C_best:.6g} C={format_value(C)} -> {'PASS' if r.verdict else 'FAIL'}")
        ok = ok and bool(r.verdict)
    return ok


# --- commands ------------------------------------------------------------------


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Exact dyadic experiments on projections and multiplicities of fractal measures."""


@main.command()
@click.option("--system", "spec", required=True, help="Digit system, e.g. 'b=4;D=(0,0),(3,3)'.")
@click.option("--depth", type=int, required=True, help="Number of digit levels.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--binary", is_flag=True, help="Write the run-length binary set format instead of text.")
@click.option("--certify", nargs=2, default=None, metavar="S C", help="Check Frostman, upper-regular and Ahlfors bounds.")
def generate(spec, depth, out, binary, certify):
    """Generate the depth-n digit set with its natural measure."""
    try:
        sys_ = DigitSystem.parse(spec).with_depth(depth)
        K, mu = generate_planar(sys_)
    except ValueError as e:
        raise InputError(str(e)) from None
    if binary:
        Path(out).write_bytes(K.to_bytes())
    else:
        Path(out).write_text(measure_to_text(mu))
    click.echo(f"{len(K)} cells at level {K.level} -> {out}")
    if certify and not _certify(mu, parse_rational(certify[0]), parse_rational(certify[1])):
        sys.exit(EXIT_VIOLATION)


@main.command()
@click.option("--mu", "mu_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--certify", nargs=2, required=True, metavar="S C")
def check(mu_path, certify):
    """Certify a measure file at (s, C); exits 1 if any check fails."""
    mu = load_measure(mu_path)
    if not _certify(mu, parse_rational(certify[0]), parse_rational(certify[1])):
        sys.exit(EXIT_VIOLATION)


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--slope", required=True, multiple=True, help="Rational slope p/q (repeatable).")
@click.option("--scale", "scales", required=True, multiple=True, help="2^-k (repeatable).")
def project(in_path, slope, scales):
    """Dyadic covering numbers of projections; CSV slope,scale,cover."""
    K = load_set(in_path)
    rows = []
    for sl in slope:
        theta = Direction.from_slope(parse_rational(sl))
        for sc in scales:
            r = parse_scale(sc)
            try:
                rows.append((theta.slope, r, project_cover(K, theta, r)))
            except ValueError as e:
                raise InputError(str(e)) from None
    _emit_csv(("slope", "scale", "cover"), rows)


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--slope", required=True)
@click.option("--lo", required=True, help="Lower scale 2^-a.")
@click.option("--hi", required=True, help="Upper scale 2^-b.")
@click.option("--field", "field_out", type=click.Path(dir_okay=False), default=None, help="Write x,y,count per cell centre.")
@click.option("--method", type=click.Choice(["direct", "brute"]), default="direct")
def mult(in_path, slope, lo, hi, field_out, method):
    """Multiplicity of fibres through the cell centres of the set."""
    K = load_set(in_path)
    theta = Direction.from_slope(parse_rational(slope))
    try:
        q = ScalePairQuery(parse_scale(lo), parse_scale(hi))
        pts = K.centers()
        vals = multiplicity_field(K, theta, q, pts, method)
    except ValueError as e:
        raise InputError(str(e)) from None
    if field_out:
        _emit_csv(("x", "y", "count"), [(x, y, v) for (x, y), v in zip(pts, vals)], field_out)
    hist: dict[int, int] = {}
    for v in vals:
        hist[v] = hist.get(v, 0) + 1
    _emit_csv(("count", "cells"), sorted(hist.items()))


@main.command()
@click.option("--mu", "mu_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--nu", "nu_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--sigma", required=True)
@click.option("--delta", required=True, help="2^-k")
@click.option("--spacing", default=None, help="Direction spacing (default: the arc measure's resolution).")
@click.option("--method", type=click.Choice(["direct", "brute"]), default="direct")
def iota(mu_path, nu_path, sigma, delta, spacing, method):
    """Direction-averaged mass of the high-multiplicity set inside B(1)."""
    mu, nu = load_measure(mu_path), load_arc(nu_path)
    try:
        v = iota_integrand(mu, nu, parse_rational(sigma), parse_scale(delta), parse_scale(spacing) if spacing else None, method)
    except ValueError as e:
        raise InputError(str(e)) from None
    _emit_csv(("sigma", "delta", "iota", "iota_float"), [(parse_rational(sigma), parse_scale(delta), v, float(v))])


@main.command("entropy-scan")
@click.option("--mu", "mu_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--base", required=True, help="Delta = 2^-m")
@click.option("--depth", type=int, required=True, help="Number of ladder steps N.")
def entropy_scan(mu_path, base, depth):
    """Per-level entropies and conditional entropies along the ladder; CSV."""
    mu = load_measure(mu_path)
    m = scale_level(parse_scale(base))
    try:
        prof = entropy_profile(mu.normalized() if not mu.is_probability() else mu, ScaleLadder(m, depth))
    except ValueError as e:
        raise InputError(str(e)) from None
    rows = []
    for j, (lv, h) in enumerate(zip(prof.levels, prof.entropies)):
        c = prof.conditional[j] if j < len(prof.conditional) else ""
        rows.append((j, lv, h, c))
    _emit_csv(("j", "level", "entropy", "conditional_next"), rows)


@main.command()
@click.option("--set", "set_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--base", required=True, help="Delta = 2^-m")
@click.option("--depth", type=int, default=None, help="N (default: from the file's 'levels' header / m).")
def branch(set_path, base, depth):
    """Branching numbers of a 1-D lattice set; exits 1 if the set is not uniform."""
    pts, levels = load_points_1d(set_path)
    m = scale_level(parse_scale(base))
    if depth is None:
        if levels is None or levels % m:
            raise InputError("give --depth or a 'levels <mN>' header divisible by m")
        depth = levels // m
    try:
        rep = branching_numbers(pts, ScaleLadder(m, depth))
    except ValueError as e:
        raise InputError(str(e)) from None
    _emit_csv(("j", "R"), list(enumerate(rep.R)))
    if not rep.is_uniform:
        click.echo(f"not uniform: level {rep.violation[0]} interval {rep.violation[1]} has {rep.violation[2]} children (expected {rep.violation[3]})", err=True)
        sys.exit(EXIT_VIOLATION)


@main.command()
@click.option("--E", "E_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--C", "C", required=True)
@click.option("--gamma", required=True)
@click.option("--eps", default=None, help="Upper bound for |E| (default: |E|).")
def lemma2(E_path, C, gamma, eps):
    """Dyadic interval decomposition of [0,1) avoiding dense parts of E."""
    E = load_intervals(E_path)
    try:
        r = interval_decomposition(E, parse_rational(C), parse_rational(gamma), parse_rational(eps) if eps else None)
    except ValueError as e:
        raise InputError(str(e)) from None
    _emit_csv(("left", "length"), [(ix * level_scale(lv), level_scale(lv)) for lv, ix in r.G])
    click.echo(
        f"# |G|={format_value(r.G_measure)} n={r.n_steps} rho={format_value(r.rho)} "
        f"measure={'PASS' if r.ok_measure else 'FAIL'} density={'PASS' if r.ok_density else 'FAIL'} "
        f"length={'PASS' if r.ok_length else 'FAIL'}",
        err=True,
    )
    if not r.ok:
        sys.exit(EXIT_VIOLATION)


@main.command()
@click.option("--nu", "nu_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--delta", required=True)
@click.option("--dfrak", default="2")
@click.option("--tau", required=True)
def scalefind(nu_path, delta, dfrak, tau):
    """Branching scale and good set of a Frostman measure on the circle."""
    nu = load_arc(nu_path)
    try:
        c = branching_scale_finder(nu, parse_scale(delta), parse_rational(dfrak), parse_rational(tau))
    except HypothesisError as e:
        click.echo(f"hypothesis failure: {e}", err=True)
        sys.exit(EXIT_VIOLATION)
    except ValueError as e:
        raise InputError(str(e)) from None
    click.echo(json.dumps({
        "p": format_value(c.p), "n": c.n_frak, "levels": c.levels, "entropy_table": c.entropy_table,
        "nu_G": format_value(c.nu_G), "mass_bound": c.mass_bound, "max_ratio": c.max_ratio,
        "ratio_bound": 2.0 ** (-scale_level(parse_scale(delta)) * float(c.ratio_exponent)),
        "ok_mass": c.ok_mass, "ok_ratio": c.ok_ratio, "eta": c.eta,
    }, indent=2))
    if not c.ok:
        sys.exit(EXIT_VIOLATION)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
def run(config_path, out_dir):
    """Run all probes and the lemma suite from a TOML config; write CSV and JSON lines."""
    try:
        cfg = ExperimentConfig.load(config_path)
        workers = max_workers()
    except ConfigError as e:
        raise InputError(f"config error: {e}") from None
    res = run_all(cfg, out_dir, workers)
    for r in res.warnings:
        click.echo(f"warning: {r.instance} {r.quantity} {format_value(r.value)}", err=True)
    for r in res.violations:
        click.echo(f"VIOLATION: {r.instance} {r.quantity} {json.dumps(r.as_record()['params'])}", err=True)
    click.echo(f"{len(res.rows)} checks, {len(res.violations)} violations, {len(res.warnings)} warnings -> {out_dir or cfg.out_dir}")
    if res.violations:
        sys.exit(EXIT_VIOLATION)


if __name__ == "__main__":
    main()
