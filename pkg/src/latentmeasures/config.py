"""Run configuration: INI parsing, strict validation, and a resolved echo for meta.json."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .gibbs import CarSettings, ChainSettings, GroupedData, MgpSettings
from .priors import NigBase
from .slopt import AlmState, RattleConfig

__all__ = ["RunConfig", "ConfigError", "load_config"]


class ConfigError(ValueError):
    """Invalid or unknown configuration input; the CLI maps this to exit 2."""


def _to_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


@dataclass
class RunConfig:
    """Every knob of the pipeline, flat per section, all defaults explicit.

    ``mu0`` and ``jitter_sd`` use None for "unset" (empirical mean at fit
    time, no jitter); everything else is concrete so the meta.json echo fully
    determines a re-run.
    """

    # run
    seed: int = 0
    threads: int = 1
    # data
    data_path: str = ""
    jitter_sd: float | None = None
    # model
    n_atoms: int = 20
    phi: float = 1.0
    mu0: float | None = None
    lambda0: float = 0.01
    a: float = 2.0
    b: float = 2.0
    # prior
    prior_kind: str = "mgp"
    a1: float = 2.5
    a2: float = 3.0
    nu: float = 6.0
    h_init: int = 20
    adapt_window: int = 1000
    adapt_every: int = 50
    adapt_eps: float = 0.05
    car_tau: float = 2.5
    car_rho: float = 0.95
    car_n_factors: int = 3
    adjacency_path: str = ""
    # mcmc
    iterations: int = 11000
    burnin: int = 5000
    thin: int = 1
    n_leapfrog: int = 10
    hmc_step0: float = 0.1
    hmc_target: float = 0.75
    jump_target: float = 0.44
    temper: float = 1.0
    # postprocess
    pp_stepsize: float = 1e-6
    pp_tau: float = 0.9
    pp_rho0: float = 10.0
    pp_gamma0: float = 10.0
    pp_eps0: float = 1e-2
    pp_eps_star: float = 1e-6
    pp_inner_max: int = 5000
    pp_outer_cap: int = 200
    pp_rho_factor: float = 1.0 / 0.9
    pp_penalty: str = "squared_hinge"
    pp_orthogonal: bool = False
    # align
    align_metric: str = "l2"
    # summarize
    grid_points: int = 500
    n_clusters: int = 4
    # simulate
    scenario: str = "dirichlet-mix"
    sim_groups: int = 100
    sim_lattice_q: int = 4
    sim_n_per_group: int = 25

    def validate(self) -> None:
        positive_counts = {
            "threads": self.threads, "n_atoms": self.n_atoms, "h_init": self.h_init,
            "adapt_every": self.adapt_every, "iterations": self.iterations,
            "thin": self.thin, "n_leapfrog": self.n_leapfrog,
            "pp_inner_max": self.pp_inner_max, "pp_outer_cap": self.pp_outer_cap,
            "grid_points": self.grid_points, "n_clusters": self.n_clusters,
            "car_n_factors": self.car_n_factors, "sim_groups": self.sim_groups,
            "sim_lattice_q": self.sim_lattice_q, "sim_n_per_group": self.sim_n_per_group,
        }
        for name, value in positive_counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.burnin < 0 or self.adapt_window < 0:
            raise ConfigError("burnin and adapt_window cannot be negative")
        if self.burnin >= self.iterations:
            raise ConfigError(
                f"burnin ({self.burnin}) must be smaller than iterations ({self.iterations})"
            )
        if self.prior_kind not in ("mgp", "car"):
            raise ConfigError(f"prior kind must be 'mgp' or 'car', got {self.prior_kind!r}")
        if self.pp_penalty not in ("squared_hinge", "linear"):
            raise ConfigError(f"penalty must be 'squared_hinge' or 'linear', got {self.pp_penalty!r}")
        if self.align_metric not in ("l2", "lsw"):
            raise ConfigError(f"align metric must be 'l2' or 'lsw', got {self.align_metric!r}")
        if self.scenario not in ("dirichlet-mix", "spatial-lattice"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for name in ("phi", "lambda0", "a", "b", "a1", "a2", "nu", "car_tau",
                     "hmc_step0", "pp_stepsize", "pp_rho0", "pp_eps0", "pp_eps_star",
                     "pp_rho_factor"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.jitter_sd is not None and not self.jitter_sd > 0.0:
            raise ConfigError("jitter_sd must be positive when set")
        if not 0.0 <= self.car_rho < 1.0:
            raise ConfigError("car_rho must lie in [0, 1)")
        if self.temper not in (0.0, 1.0):
            raise ConfigError("temper must be 0 or 1")

    # -- builders ----------------------------------------------------------

    def base_measure(self, data: GroupedData) -> NigBase:
        mu0 = float(data.mean) if self.mu0 is None else self.mu0
        return NigBase(mu0=mu0, lambda0=self.lambda0, a=self.a, b=self.b)

    def chain_settings(self, adjacency: np.ndarray | None = None) -> ChainSettings:
        if self.prior_kind == "mgp":
            prior = MgpSettings(
                a1=self.a1, a2=self.a2, nu=self.nu, h_init=self.h_init,
                adapt_window=self.adapt_window, adapt_every=self.adapt_every,
                adapt_eps=self.adapt_eps,
            )
        else:
            if adjacency is None:
                raise ConfigError("spatial prior requires an adjacency matrix")
            prior = CarSettings(
                adjacency=adjacency, n_factors=self.car_n_factors,
                tau=self.car_tau, rho=self.car_rho,
            )
        return ChainSettings(
            prior=prior, n_atoms=self.n_atoms, phi=self.phi, base=None,
            iterations=self.iterations, burnin=self.burnin, thin=self.thin,
            n_leapfrog=self.n_leapfrog, hmc_step0=self.hmc_step0,
            hmc_target=self.hmc_target, jump_target=self.jump_target,
            temper=self.temper,
        )

    def rattle_config(self) -> RattleConfig:
        return RattleConfig(
            stepsize=self.pp_stepsize, tau=self.pp_tau, max_iters=self.pp_inner_max
        )

    def alm_state(self, n_groups: int, n_factors: int, n_atoms: int) -> AlmState:
        return AlmState.initial(
            n_groups, n_factors, n_atoms,
            rho=self.pp_rho0, gamma0=self.pp_gamma0,
            eps=self.pp_eps0, eps_star=self.pp_eps_star,
        )

    def resolved(self) -> dict:
        """Nested plain dict of every setting, for the meta.json echo."""
        out: dict[str, dict] = {}
        for section, names in _SECTIONS.items():
            out[section] = {}
            for key, attr in names.items():
                value = getattr(self, attr)
                out[section][key] = value
        return out


# section -> {ini key -> attribute}; single source for parse, echo, overrides.
_SECTIONS: dict[str, dict[str, str]] = {
    "run": {"seed": "seed", "threads": "threads"},
    "data": {"path": "data_path", "jitter_sd": "jitter_sd"},
    "model": {"n_atoms": "n_atoms", "phi": "phi", "mu0": "mu0",
              "lambda0": "lambda0", "a": "a", "b": "b"},
    "prior": {"kind": "prior_kind", "a1": "a1", "a2": "a2", "nu": "nu",
              "h_init": "h_init", "adapt_window": "adapt_window",
              "adapt_every": "adapt_every", "adapt_eps": "adapt_eps",
              "tau": "car_tau", "rho": "car_rho", "n_factors": "car_n_factors",
              "adjacency": "adjacency_path"},
    "mcmc": {"iterations": "iterations", "burnin": "burnin", "thin": "thin",
             "n_leapfrog": "n_leapfrog", "hmc_step0": "hmc_step0",
             "hmc_target": "hmc_target", "jump_target": "jump_target",
             "temper": "temper"},
    "postprocess": {"stepsize": "pp_stepsize", "tau": "pp_tau", "rho0": "pp_rho0",
                    "gamma0": "pp_gamma0", "eps0": "pp_eps0",
                    "eps_star": "pp_eps_star", "inner_max": "pp_inner_max",
                    "outer_cap": "pp_outer_cap", "rho_factor": "pp_rho_factor",
                    "penalty": "pp_penalty", "orthogonal": "pp_orthogonal"},
    "align": {"metric": "align_metric"},
    "summarize": {"grid_points": "grid_points", "n_clusters": "n_clusters"},
    "simulate": {"scenario": "scenario", "groups": "sim_groups",
                 "lattice_q": "sim_lattice_q", "n_per_group": "sim_n_per_group"},
}

_OPTIONAL_FLOATS = {"mu0", "jitter_sd"}


def _coerce(attr: str, raw: str):
    raw = raw.strip()
    hints = {f.name: f.type for f in fields(RunConfig)}
    hint = hints[attr]
    if attr in _OPTIONAL_FLOATS:
        return None if raw == "" else float(raw)
    try:
        if hint == "bool":
            return _to_bool(raw)
        if hint == "int":
            return int(raw)
        if hint == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {attr}") from None


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the INI file, then ``section.key=value`` overrides.

    Unknown sections or keys raise ConfigError naming the offender, so typos
    fail loudly instead of silently running on defaults.
    """
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(p, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(
                    f"unknown config section [{section}]; known: {sorted(_SECTIONS)}"
                )
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise ConfigError(
                        f"unknown key {key!r} in [{section}]; "
                        f"known: {sorted(_SECTIONS[section])}"
                    )
                setattr(cfg, _SECTIONS[section][key], _coerce(_SECTIONS[section][key], raw))
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in _SECTIONS or key not in _SECTIONS[section]:
            raise ConfigError(f"unknown override target {target!r}")
        setattr(cfg, _SECTIONS[section][key], _coerce(_SECTIONS[section][key], raw))
    cfg.validate()
    return cfg
