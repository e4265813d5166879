"""Command-line driver: ``losmass CONFIG`` runs one of run / fbst / synth / report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fbst import FbstSettings, run_fbst
from .io import (ArtifactWriter, ConfigError, DataError, format_data, format_value,
                 parse_config_text, parse_data_file, read_csv, read_json, write_csv,
                 write_json)
from .model import (Configuration, ModelError, default_radial_grid,
                    linear_energy_grid, log_radial_grid)
from .potential import enclosed_mass, solve_potential
from .projection import LikelihoodSettings
from .sampler import (Chain, SamplerSettings, gelman_rubin, log_enclosed_mass, run_chains,
                      seed_configuration, support_scale, uncertainty_envelope,
                      velocity_scale)
from .synthgen import (AnnulusPlan, ToyDfSpec, default_test_potential, draw_natural,
                       draw_sample)

log = logging.getLogger("losmass")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MODES = ("run", "fbst", "synth", "report")


@dataclass(frozen=True)
class GridSpec:
    """Radial grid (log bins, ``r_min``/``r_max`` default from the data) and energy grid.

    Energy bins run linearly from ``energy_floor`` times the seed potential's
    central value up to 0.
    """

    n_r: int = 20
    r_min: float | None = None
    r_max: float | None = None
    n_e: int = 15
    energy_floor: float = 1.5
    n_l: int = 1
    l_max: float | None = None


@dataclass(frozen=True)
class SeedSpec:
    """Isothermal seeds; chain ``i`` scales the density by ``base * dispersion ** i``.

    ``base`` is ``density_scale``, raised with ``auto_scale`` until the
    seed's escape speed exceeds every observed ``|v3|``.
    """

    sigma: float | None = None
    core_radius: float = 2.0
    density_scale: float = 1.0
    dispersion: float = 3.0
    auto_scale: bool = True


@dataclass(frozen=True)
class SynthSpec:
    """Mock dataset: toy df in the cored test potential.

    Without ``annuli`` the ``n`` tracers inside ``r_p <= window`` keep
    their natural abundance; ``annuli = "5,10,15"`` (outer edges) with
    ``counts = "50,30,20"`` fixes the count per projected annulus.
    """

    kind: str = "gauss"
    sigma: float = 350.0
    r_a: float = math.inf
    core_radius: float = 5.0
    mass: float = 4.06e11
    mass_radius: float = 8.7
    n: int = 500
    window: float = 15.0
    r_trunc: float = 30.0
    noise: float = 10.0
    seed: int = 0
    annuli: str | None = None
    counts: str | None = None


@dataclass(frozen=True)
class RunConfig:
    mode: str = "run"
    data: str | None = None
    output: str = "out"
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    likelihood: LikelihoodSettings = field(default_factory=LikelihoodSettings)
    fbst: FbstSettings = field(default_factory=FbstSettings)
    grid: GridSpec = field(default_factory=GridSpec)
    seed: SeedSpec = field(default_factory=SeedSpec)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def echo(self) -> dict:
        """Every resolved setting as ``{section: {key: value}}``."""
        out = {"run": {"mode": self.mode, "data": self.data, "output": self.output}}
        for name in ("sampler", "likelihood", "fbst", "grid", "seed", "synth"):
            out[name] = dataclasses.asdict(getattr(self, name))
        return out


_SECTIONS = {"sampler": SamplerSettings, "likelihood": LikelihoodSettings, "fbst": FbstSettings,
             "grid": GridSpec, "seed": SeedSpec, "synth": SynthSpec}


def _convert(text: str, hint, key: str):
    optional = type(None) in typing.get_args(hint)
    base = [a for a in typing.get_args(hint) if a is not type(None)]
    target = base[0] if base else hint
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if target is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if target is int:
            return int(text)
        if target is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {target.__name__}") from None


def _build(cls, values: dict[str, str], section: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    kwargs = {k: _convert(v, hints[k], f"{section}.{k}") for k, v in values.items()}
    try:
        return cls(**kwargs)
    except ModelError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def config_from_sections(sections: dict[str, dict[str, str]], base_dir=None) -> RunConfig:
    sections = dict(sections)
    run = sections.pop("run", {})
    unknown = sorted(set(sections) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    extra = sorted(set(run) - {"mode", "data", "output"})
    if extra:
        raise ConfigError(f"unknown key(s) in [run]: {', '.join(extra)}")
    mode = run.get("mode", "run")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    data = run.get("data")
    if data is not None and data.lower() == "none":
        data = None
    output = run.get("output", "out")
    if base_dir is not None:
        if data is not None:
            data = str(Path(base_dir, data)) if not Path(data).is_absolute() else data
        output = str(Path(base_dir, output)) if not Path(output).is_absolute() else output
    parts = {name: _build(cls, sections.get(name, {}), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(mode=mode, data=data, output=output, **parts)
    if cfg.synth.kind not in ("gauss", "wd", "michie"):
        raise ConfigError(f"synth.kind must be gauss, wd or michie, got {cfg.synth.kind!r}")
    if mode in ("run", "fbst") and data is None:
        raise ConfigError(f"mode {mode} needs run.data")
    if mode in ("run", "fbst") and not Path(data).exists():
        raise ConfigError(f"data file {data} does not exist")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_sections(parse_config_text(text), base_dir=path.parent)


def echo_sections(cfg: RunConfig) -> dict[str, dict[str, str]]:
    """The echo rendered as config strings, suitable for :func:`config_from_sections`."""
    return {s: {k: format_value(v) for k, v in vals.items()} for s, vals in cfg.echo().items()}


# --------------------------------------------------------------------------
# modes

def build_grids(cfg: RunConfig, data):
    """Radial and energy grids, the seed velocity scale and the base density scale."""
    g = cfg.grid
    if g.r_min is None:
        radial = default_radial_grid(data, g.n_r, g.r_max)
    else:
        if g.r_max is None:
            raise ConfigError("grid.r_min given without grid.r_max")
        radial = log_radial_grid(g.r_min, g.r_max, g.n_r)
    sigma = cfg.seed.sigma or velocity_scale(data)
    scale = cfg.seed.density_scale
    probe = seed_configuration(radial, linear_energy_grid(-1.0, 1), sigma, cfg.seed.core_radius, scale)
    if cfg.seed.auto_scale:
        lift = support_scale(probe.rho, data)
        scale *= lift
        probe = Configuration(probe.df, probe.rho.with_values(probe.rho.values * lift))
    floor = g.energy_floor * solve_potential(probe.rho).phi_min
    if g.n_l > 1 and g.l_max is None:
        raise ConfigError("grid.l_max is required when grid.n_l > 1")
    energy = linear_energy_grid(floor, g.n_e, g.n_l, g.l_max)
    return radial, energy, sigma, scale


def build_seeds(cfg: RunConfig, data) -> list[Configuration]:
    radial, energy, sigma, scale = build_grids(cfg, data)
    return [seed_configuration(radial, energy, sigma, cfg.seed.core_radius,
                               scale * cfg.seed.dispersion**i)
            for i in range(cfg.sampler.n_chains)]


def summary_radius(cfg: RunConfig, data) -> float:
    if cfg.likelihood.R_E > 0:
        return cfg.likelihood.R_E
    return cfg.likelihood.window_for([d.r_p for d in data])


TRACE_HEADER = ("step", "temperature", "log_likelihood", "penalty", "accepted", "enclosed_mass")


def trace_rows(chain: Chain, radius: float):
    cache = {}
    for s in chain.steps:
        key = id(s.config.rho)
        if key not in cache:
            cache[key] = (s.config.rho, float(enclosed_mass(solve_potential(s.config.rho), radius)))
        yield (s.step, float(s.temperature), float(s.log_likelihood), float(s.penalty),
               bool(s.accepted), cache[key][1])


def _write_profiles(writer: ArtifactWriter, chain: Chain, burn_in: float):
    env = uncertainty_envelope(chain, burn_in)
    grid = env.best.rho.grid
    lo, hi = env.rho_band()
    write_csv(writer.path("rho.csv"), ("r_lo", "r_hi", "rho", "rho_sigma", "rho_lo", "rho_hi"),
              zip(grid.edges[:-1].tolist(), grid.edges[1:].tolist(), env.rho.tolist(),
                  env.rho_sigma.tolist(), lo.tolist(), hi.tolist()))
    eg = env.best.df.grid
    dlo, dhi = env.df_band()
    rows = []
    for il in range(eg.n_l):
        for je in range(eg.n_e):
            rows.append((float(eg.l_edges[il]), float(eg.l_edges[il + 1]),
                         float(eg.energy_edges[je]), float(eg.energy_edges[je + 1]),
                         float(env.df[il, je]), float(env.df_sigma[il, je]),
                         float(dlo[il, je]), float(dhi[il, je])))
    write_csv(writer.path("df.csv"),
              ("l_lo", "l_hi", "e_lo", "e_hi", "f", "f_sigma", "f_lo", "f_hi"), rows)
    return env


def _fit(cfg: RunConfig, writer: ArtifactWriter):
    data = parse_data_file(cfg.data)
    if len(data) < 2:
        raise DataError(f"{cfg.data}: need at least 2 data, found {len(data)}")
    seeds = build_seeds(cfg, data)
    chains = run_chains(data, seeds, cfg.sampler, cfg.likelihood)
    radius = summary_radius(cfg, data)
    for i, chain in enumerate(chains):
        write_csv(writer.path(f"trace_{i}.csv"), TRACE_HEADER, trace_rows(chain, radius))
    best = max(range(len(chains)), key=lambda i: chains[i].best().log_likelihood)
    env = _write_profiles(writer, chains[best], cfg.sampler.burn_in)
    rhat = {}
    if len(chains) >= 2:
        rhat[f"log_enclosed_mass_{radius!r}"] = gelman_rubin(
            chains, log_enclosed_mass(radius), cfg.sampler.burn_in)
        rhat["log_total_mass"] = gelman_rubin(
            chains, lambda c: math.log(solve_potential(c.rho).total_mass), cfg.sampler.burn_in)
        rhat["log_likelihood"] = gelman_rubin(
            chains, lambda c: c.log_likelihood, cfg.sampler.burn_in)
    summary = {
        "mode": cfg.mode,
        "n_data": len(data),
        "n_chains": len(chains),
        "best_chain": best,
        "best_log_likelihood": chains[best].best().log_likelihood,
        "final_log_likelihood": [c.steps[-1].log_likelihood for c in chains],
        "summary_radius": radius,
        "best_enclosed_mass": float(enclosed_mass(solve_potential(env.best.rho), radius)),
        "acceptance_rate": [c.acceptance_rate() for c in chains],
        "rhat": rhat,
        "seed": cfg.sampler.seed,
        "config": cfg.echo(),
    }
    return data, chains, best, summary


def _mode_run(cfg: RunConfig, writer: ArtifactWriter):
    _, _, _, summary = _fit(cfg, writer)
    write_json(writer.path("summary.json"), summary)


def _mode_fbst(cfg: RunConfig, writer: ArtifactWriter):
    data, chains, best, summary = _fit(cfg, writer)
    result = run_fbst(data, chains[best], cfg.sampler, cfg.likelihood, cfg.fbst)
    radius = summary["summary_radius"]
    for i, chain in enumerate(result.runs):
        write_csv(writer.path(f"fbst_trace_{i}.csv"), TRACE_HEADER, trace_rows(chain, radius))
    report = result.report.as_dict()
    report.update({"theta_star_run": result.theta_star.run,
                   "theta_star_step": result.theta_star.step,
                   "n_runs": len(result.runs)})
    write_json(writer.path("evidence.json"), report)
    summary["evidence"] = report
    write_json(writer.path("summary.json"), summary)


def _mode_synth(cfg: RunConfig, writer: ArtifactWriter):
    sp = cfg.synth
    pot = default_test_potential(sp.core_radius, sp.mass, sp.mass_radius)
    df = ToyDfSpec(sp.kind, sp.sigma, sp.r_a)
    rng = np.random.default_rng(sp.seed)
    if sp.annuli:
        edges = [float(x) for x in sp.annuli.split(",")]
        counts = [int(x) for x in (sp.counts or "").split(",") if x]
        plan = AnnulusPlan(edges, counts)
        data = draw_sample(df, pot, plan, sp.noise, rng, r_trunc=sp.r_trunc)
    else:
        data = draw_natural(df, pot, sp.n, sp.window, sp.noise, rng, r_trunc=sp.r_trunc)
    path = writer.path("data.txt")
    path.write_text(format_data(data, f"synthetic {sp.kind} sample, seed {sp.seed}"),
                    encoding="utf-8")
    write_json(writer.path("truth.json"), {
        "df": {"kind": sp.kind, "sigma": sp.sigma, "r_a": sp.r_a},
        "potential": {"amplitude": pot.amplitude, "core_radius": pot.core_radius},
        "enclosed_mass": {"radius": sp.mass_radius,
                          "mass": float(pot.enclosed_mass(sp.mass_radius))},
        "n": len(data), "window": sp.window, "r_trunc": sp.r_trunc, "noise": sp.noise,
        "seed": sp.seed,
    })


def _table(header, rows) -> str:
    cells = [list(header)] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_report(directory) -> str:
    directory = Path(directory)
    parts = []
    summary_path = directory / "summary.json"
    if not summary_path.exists():
        raise DataError(f"no summary.json in {directory}")
    summary = read_json(summary_path)
    parts.append(_table(("quantity", "value"), [
        ("data", summary["n_data"]),
        ("chains", summary["n_chains"]),
        ("best log-likelihood", f"{summary['best_log_likelihood']:.4f}"),
        (f"M(<{summary['summary_radius']:g})", f"{summary['best_enclosed_mass']:.4e}"),
    ] + [(f"R-hat {k}", f"{v:.4f}" if isinstance(v, float) else v)
         for k, v in summary["rhat"].items()]))
    header, rows = read_csv(directory / "rho.csv")
    parts.append("density profile\n" + _table(
        ("r_lo", "r_hi", "rho", "rho_sigma"),
        [(f"{float(r[0]):.3g}", f"{float(r[1]):.3g}", f"{float(r[2]):.4e}", f"{float(r[3]):.3e}")
         for r in rows]))
    header, rows = read_csv(directory / "df.csv")
    parts.append("distribution function\n" + _table(
        ("L bin", "E_lo", "E_hi", "f", "f_sigma"),
        [(f"[{float(r[0]):.3g}, {float(r[1]):.3g})", f"{float(r[2]):.4e}", f"{float(r[3]):.4e}",
          f"{float(r[4]):.4e}", f"{float(r[5]):.3e}") for r in rows]))
    ev_path = directory / "evidence.json"
    if ev_path.exists():
        ev = read_json(ev_path)
        parts.append("isotropy test\n" + _table(("quantity", "value"), [
            ("X", ev["X"]), ("Y", ev["Y"]),
            ("pr_T = X/Y", f"{ev['pr_T']:.4f}"),
            ("ev_standard = 1 - X/Y", f"{ev['ev_standard']:.4f}"),
        ]))
    return "\n\n".join(parts) + "\n"


def _mode_report(cfg: RunConfig, writer: ArtifactWriter):
    text = render_report(cfg.output)
    sys.stdout.write(text)
    writer.path("report.txt").write_text(text, encoding="utf-8")


_DISPATCH = {"run": _mode_run, "fbst": _mode_fbst, "synth": _mode_synth, "report": _mode_report}


def execute(cfg: RunConfig) -> int:
    """Run ``cfg.mode``; returns an exit status instead of raising."""
    try:
        writer = ArtifactWriter(cfg.output)
    except OSError as exc:
        log.error("cannot create output directory: %s", exc)
        return EXIT_CONFIG
    try:
        with np.errstate(all="ignore"):
            _DISPATCH[cfg.mode](cfg, writer)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (ModelError, ArithmeticError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    writer.commit()
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="losmass", description=__doc__.splitlines()[0])
    parser.add_argument("config", help="key = value configuration file")
    parser.add_argument("--mode", choices=MODES, help="override run.mode")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.mode:
            cfg = dataclasses.replace(cfg, mode=args.mode)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
