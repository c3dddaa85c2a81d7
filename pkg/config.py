# config.py
"""Experiment and scenario configuration.

Both files are JSON; values missing from a file fall back to the defaults
below, section by section.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from agent_sandbox import AgentKind, MixtureAssignment, MIXTURE_ORDER, assign_mixture
from auction_core import AdvertiserProfile, BidSpace, Mechanism, SeedLike, profiles_from_records
from exceptions import AuctionLearningError, ConfigError
from mechanism_opt import DEFAULT_ALPHA_GRID, GpConfig

logger = logging.getLogger(__name__)

SCENARIO_VERSION = 1
SEED_NAMES = ('gen', 'learn', 'ers', 'gp', 'evaluate')

DEFAULT_CONFIG = {
    'scenario': 'scenario.json',
    'data_dir': None,
    'output_dir': 'results',
    'train_periods': 100,
    'test_periods': 200,
    'horizon': 1000,
    'seed': 2024,
    'delta': 0.01,
    'alpha_grid': list(DEFAULT_ALPHA_GRID),
    'mixture_seeds': 20,
    'n_jobs': 1,
    'behavior': {
        'kind': 'parametric',
        'learning_rate': 0.1,
        'iterations': 500,
        'bandwidth': 1.0,
        'n_bins': 3,
        'epsilon': 1e-3,
    },
    'gp': {
        'population': 10,
        'generations': 50,
        'crossover_rate': 0.7,
        'mutation_rate': 0.2,
        'reproduction_rate': 0.1,
        'alpha_range': [0.0, 3.0],
        'mutation_sigma': 0.1,
        'elitism': 1,
    },
}


def _merge(defaults: Dict[str, Any], values: Dict[str, Any]) -> Dict[str, Any]:
    merged = {**defaults, **values}
    for key, default in defaults.items():
        if isinstance(default, dict):
            merged[key] = {**default, **(values.get(key) or {})}
    return merged


def load_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"file not found: {path}") from e
    except json.JSONDecodeError as e:
        logger.error(f"Error parsing {path}: {e}")
        raise ConfigError(f"invalid JSON in {path}: {e}") from e


@dataclass
class Scenario:
    bid_space: BidSpace
    position_discounts: Tuple[float, ...]
    profiles: Tuple[AdvertiserProfile, ...]
    users_per_period: float = 50.0
    agent_kinds: Optional[Tuple[AgentKind, ...]] = None
    mixture_proportions: Optional[Tuple[float, float, float]] = None
    am_draws: int = 200
    version: int = SCENARIO_VERSION

    @property
    def num_advertisers(self) -> int:
        return len(self.profiles)

    def mechanism(self, alpha: float = 1.0) -> Mechanism:
        return Mechanism(alpha=float(alpha), num_slots=len(self.position_discounts),
                         position_discounts=self.position_discounts,
                         closing_price=self.bid_space.min_bid)

    def initial_bids(self) -> np.ndarray:
        return self.bid_space.snap([p.initial_bid for p in self.profiles])

    def assignment(self, rng_seed: SeedLike = None) -> MixtureAssignment:
        """Fixed agent kinds when the scenario lists them, otherwise a sampled mixture"""
        if self.agent_kinds is not None:
            m = self.num_advertisers
            proportions = tuple(sum(k == kind for k in self.agent_kinds) / m for kind in MIXTURE_ORDER)
            return MixtureAssignment(proportions, self.agent_kinds)
        return assign_mixture(self.num_advertisers, rng_seed, self.mixture_proportions)

    def to_dict(self) -> Dict[str, Any]:
        agents: Dict[str, Any] = {}
        if self.agent_kinds is not None:
            agents['kinds'] = [kind.value for kind in self.agent_kinds]
        if self.mixture_proportions is not None:
            agents['proportions'] = list(self.mixture_proportions)
        return {
            'version': self.version,
            'bid_space': self.bid_space.to_dict(),
            'position_discounts': list(self.position_discounts),
            'users_per_period': self.users_per_period,
            'am_draws': self.am_draws,
            'agents': agents,
            'advertisers': [
                {'id': p.id, 'ctr': p.ctr, 'valuation': p.valuation, 'initial_bid': p.initial_bid}
                for p in self.profiles
            ],
        }


def scenario_from_dict(data: Dict[str, Any]) -> Scenario:
    version = data.get('version', SCENARIO_VERSION)
    if version != SCENARIO_VERSION:
        raise ConfigError(f"unsupported scenario version {version}")
    try:
        bid_space = BidSpace(**data['bid_space'])
        profiles = profiles_from_records(data['advertisers'])
        agents = data.get('agents') or {}
        kinds = agents.get('kinds')
        proportions = agents.get('proportions')
        scenario = Scenario(
            bid_space=bid_space,
            position_discounts=tuple(float(b) for b in data['position_discounts']),
            profiles=tuple(
                AdvertiserProfile(p.id, p.ctr, p.valuation, float(bid_space.snap(p.initial_bid)))
                for p in profiles
            ),
            users_per_period=float(data.get('users_per_period', 50.0)),
            agent_kinds=tuple(AgentKind(k) for k in kinds) if kinds is not None else None,
            mixture_proportions=tuple(proportions) if proportions is not None else None,
            am_draws=int(data.get('am_draws', 200)),
        )
    except KeyError as e:
        raise ConfigError(f"scenario is missing {e}") from e
    except AuctionLearningError as e:
        raise ConfigError(f"invalid scenario: {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid scenario: {e}") from e

    if scenario.agent_kinds is not None and len(scenario.agent_kinds) != scenario.num_advertisers:
        raise ConfigError("agent kinds must list one kind per advertiser")
    scenario.mechanism()
    return scenario


def load_scenario(path: str) -> Scenario:
    scenario = scenario_from_dict(load_json(path))
    logger.info(f"Loaded scenario {path}: {scenario.num_advertisers} advertisers, "
                f"{scenario.bid_space.size} bid levels")
    return scenario


def save_scenario(scenario: Scenario, path: str):
    with open(path, 'w') as f:
        json.dump(scenario.to_dict(), f, indent=2)


def derive_seeds(master_seed: int, names=SEED_NAMES) -> Dict[str, int]:
    """Independent component seeds fanned out from one master seed"""
    children = np.random.SeedSequence(master_seed).spawn(len(names))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(names, children)}


@dataclass
class ExperimentConfig:
    scenario_path: str
    output_dir: str
    data_dir: str
    train_periods: int
    test_periods: int
    horizon: int
    seed: int
    delta: float
    alpha_grid: List[float]
    mixture_seeds: int
    n_jobs: int
    behavior: Dict[str, Any]
    gp: GpConfig
    seeds: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.train_periods < 2:
            raise ConfigError(f"train_periods must be at least 2, got {self.train_periods}")
        if self.test_periods < 1 or self.horizon < 1:
            raise ConfigError("test_periods and horizon must be positive")
        if self.delta < 0:
            raise ConfigError(f"delta must be nonnegative, got {self.delta}")
        if not self.alpha_grid:
            raise ConfigError("alpha_grid is empty")
        if self.mixture_seeds < 1:
            raise ConfigError("mixture_seeds must be positive")
        if self.behavior['kind'] not in ('parametric', 'tabular'):
            raise ConfigError(f"unknown behavior model kind {self.behavior['kind']!r}")
        self.seeds = derive_seeds(self.seed)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def load_scenario(self) -> Scenario:
        if not os.path.exists(self.scenario_path):
            raise ConfigError(f"scenario file not found: {self.scenario_path}")
        return load_scenario(self.scenario_path)


def config_from_dict(values: Dict[str, Any], base_dir: str = '.') -> ExperimentConfig:
    merged = _merge(DEFAULT_CONFIG, values)
    gp_values = dict(merged['gp'])
    gp_values['alpha_range'] = tuple(gp_values['alpha_range'])
    try:
        gp = GpConfig(**gp_values, rng_seed=None)
        scenario_path = merged['scenario']
        if not os.path.isabs(scenario_path):
            scenario_path = os.path.join(base_dir, scenario_path)
        output_dir = merged['output_dir']
        config = ExperimentConfig(
            scenario_path=scenario_path,
            output_dir=output_dir,
            data_dir=merged['data_dir'] or output_dir,
            train_periods=int(merged['train_periods']),
            test_periods=int(merged['test_periods']),
            horizon=int(merged['horizon']),
            seed=int(merged['seed']),
            delta=float(merged['delta']),
            alpha_grid=[float(a) for a in merged['alpha_grid']],
            mixture_seeds=int(merged['mixture_seeds']),
            n_jobs=int(merged['n_jobs']),
            behavior=dict(merged['behavior']),
            gp=gp,
        )
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    # the GP draws from the master seed fan-out
    config.gp = GpConfig(**{**gp_values, 'rng_seed': config.seeds['gp']})
    return config


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Config file (if any) over defaults, then non-None CLI overrides on top"""
    values: Dict[str, Any] = load_json(path) if path else {}
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    base_dir = os.path.dirname(os.path.abspath(path)) if path else '.'
    config = config_from_dict(values, base_dir)
    logger.info(f"Configuration: seed={config.seed}, horizon={config.horizon}, delta={config.delta}, "
                f"output={config.output_dir}")
    return config
