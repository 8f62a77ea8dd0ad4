"""
bench_cli.py

Experiment runner: loads a flat YAML experiment file, sweeps power
budgets, SAR budgets and seeds, and writes one CSV row per run (or per
AO iteration for the convergence study).

Usage:
  python scripts/bench_cli.py run [config.yaml] [--experiment NAME] [--seed N] [--out PATH] [--jobs N]
  python scripts/bench_cli.py defaults [--out PATH]
  python scripts/bench_cli.py de-check [config.yaml]

Wall-clock times go to <out>.timing.csv so the main CSV is byte-for-byte
reproducible.

Project: EM-Exposure-Aware Uplink Optimization
"""

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed

sys.path.append(str(Path(__file__).resolve().parent))
sys.path.append(str(Path(__file__).resolve().parents[1]))

import config  # noqa: E402
import ao_driver  # noqa: E402
import det_equiv  # noqa: E402
import dma_opt  # noqa: E402
from model_core import (ConfigError, H1Spec, LinkBudget, SarConstraint, SystemDims,  # noqa: E402
                        default_statistics, generate_channels, generate_h1, monte_carlo_ergodic_se)

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXPERIMENTS = ('convergence', 'se_vs_power', 'ris_ablation', 'dma_sets', 'baselines', 'de_accuracy')
CSI_MODES = ('auto', 'full', 'partial')

RESULT_COLUMNS = ['schema_version', 'experiment', 'seed', 'pmax_dbm', 'sar_budget', 'csi_mode', 'dma_set',
                  'variant', 'iteration', 'se', 'iterations', 'converged', 'complexity', 'error']
TIMING_COLUMNS = ['schema_version', 'experiment', 'seed', 'pmax_dbm', 'sar_budget', 'csi_mode', 'dma_set',
                  'variant', 'wall_time_s']
DE_COLUMNS = ['schema_version', 'seed', 'K', 'N_R', 'N_k', 'S', 'L', 'pmax_dbm', 'de_se', 'mc_se',
              'mc_stderr', 'mc_samples', 'rel_gap', 'error']


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str = 'se_vs_power'
    num_users: int = config.NUM_USERS
    user_antennas: tuple = None
    ris_elements: int = config.RIS_ELEMENTS
    microstrips: int = config.MICROSTRIPS
    elements_per_microstrip: int = config.ELEMENTS_PER_MICROSTRIP
    noise_dbm: float = config.NOISE_DBM
    pathloss_db: float = config.PATHLOSS_DB
    hop1_db: float = config.HOP1_DB
    omega_decay: float = config.OMEGA_DECAY
    sar_budget: float = config.SAR_BUDGET
    pmax_dbm_grid: tuple = tuple(config.PMAX_DBM_GRID)
    sar_budget_grid: tuple = tuple(config.SAR_BUDGET_GRID)
    num_seeds: int = config.NUM_SEEDS
    base_seed: int = 0
    csi_mode: str = 'auto'
    dma_set: str = 'LP'
    ao_low: float = 0.001
    ao_high: float = 2.0
    ba_level: float = 0.1
    phase_init: str = 'random'
    dual_method: str = 'bisection'
    eps1: float = config.EPS_BCD
    eps2: float = config.EPS_MM
    eps3: float = config.EPS_DMA
    eps4: float = config.EPS_DE
    eps5: float = config.EPS_INNER
    eps6: float = config.EPS_AO
    max_outer: int = config.MAX_OUTER
    mc_samples: int = config.MC_SAMPLES
    de_pmax_dbm: float = 20.0
    de_scales: tuple = ((8, 2), (16, 4), (32, 8))
    output: str = ''

    def __post_init__(self):
        antennas = self.user_antennas
        if antennas is None:
            antennas = config.USER_ANTENNAS
        if np.isscalar(antennas):
            antennas = (antennas,) * max(int(self.num_users), 0)
        object.__setattr__(self, 'user_antennas', tuple(int(n) for n in antennas))
        object.__setattr__(self, 'pmax_dbm_grid', tuple(float(p) for p in self.pmax_dbm_grid))
        object.__setattr__(self, 'sar_budget_grid', tuple(float(d) for d in self.sar_budget_grid))
        object.__setattr__(self, 'de_scales', tuple(tuple(int(v) for v in pair) for pair in self.de_scales))

        for key, message in self.problems():
            raise ConfigError(f"{key}: {message}", key=key)

    def problems(self):
        """Invariant violations as (key, message) pairs."""
        found = []
        for key in ('num_users', 'ris_elements', 'microstrips', 'elements_per_microstrip', 'num_seeds',
                    'max_outer', 'mc_samples'):
            if getattr(self, key) < 1:
                found.append((key, f"must be >= 1 (got {getattr(self, key)})"))
        if self.experiment not in EXPERIMENTS:
            found.append(('experiment', f"unknown experiment '{self.experiment}' (expected one of {', '.join(EXPERIMENTS)})"))
        if len(self.user_antennas) != self.num_users:
            found.append(('user_antennas', f"expected {self.num_users} entries, got {len(self.user_antennas)}"))
        if any(n < 1 for n in self.user_antennas):
            found.append(('user_antennas', "every user needs at least one antenna"))
        if not self.pmax_dbm_grid:
            found.append(('pmax_dbm_grid', "must not be empty"))
        if not self.sar_budget_grid:
            found.append(('sar_budget_grid', "must not be empty"))
        if self.sar_budget <= 0 or any(d <= 0 for d in self.sar_budget_grid):
            found.append(('sar_budget', "SAR budgets must be positive"))
        if not 0 < self.hop1_db < self.pathloss_db:
            found.append(('hop1_db', f"must lie inside (0, pathloss_db={self.pathloss_db})"))
        if self.csi_mode not in CSI_MODES:
            found.append(('csi_mode', f"must be one of {', '.join(CSI_MODES)} (got '{self.csi_mode}')"))
        if self.dma_set not in dma_opt.SET_TAGS:
            found.append(('dma_set', f"must be one of {', '.join(dma_opt.SET_TAGS)} (got '{self.dma_set}')"))
        if not 0 < self.ao_low < self.ao_high:
            found.append(('ao_low', "AO interval needs 0 < ao_low < ao_high"))
        if self.ba_level <= 0:
            found.append(('ba_level', "must be positive"))
        if self.phase_init not in ('random', 'ones'):
            found.append(('phase_init', f"must be 'random' or 'ones' (got '{self.phase_init}')"))
        if self.dual_method not in ('bisection', 'subgradient'):
            found.append(('dual_method', f"must be 'bisection' or 'subgradient' (got '{self.dual_method}')"))
        for key in ('eps1', 'eps2', 'eps3', 'eps4', 'eps5', 'eps6'):
            if getattr(self, key) <= 0:
                found.append((key, "must be positive"))
        if any(len(pair) != 2 or min(pair) < 1 for pair in self.de_scales):
            found.append(('de_scales', "entries must be [N_R, N_k] pairs of positive integers"))
        return found

    def dims(self, ris_elements=None, user_antennas=None):
        antennas = self.user_antennas if user_antennas is None else (user_antennas,) * self.num_users
        return SystemDims(K=self.num_users, N=antennas, N_R=ris_elements or self.ris_elements,
                          S=self.microstrips, L=self.elements_per_microstrip)

    def effective_csi_mode(self):
        """'auto' means partial CSI for the DMA comparison and full CSI elsewhere."""
        if self.csi_mode != 'auto':
            return self.csi_mode
        return 'partial' if self.experiment == 'dma_sets' else 'full'

    def seeds(self):
        return list(range(self.base_seed, self.base_seed + self.num_seeds))

    def feasible_set(self, tag=None):
        return dma_opt.FeasibleSet(tag or self.dma_set, low=self.ao_low, high=self.ao_high, level=self.ba_level)

    def ao_config(self, seed, csi_mode=None, dma_set=None):
        return ao_driver.AoConfig(eps1=self.eps1, eps2=self.eps2, eps3=self.eps3, eps4=self.eps4,
                                  eps5=self.eps5, eps6=self.eps6, max_outer=self.max_outer,
                                  dual_method=self.dual_method, seed=seed,
                                  csi_mode=csi_mode or self.effective_csi_mode(),
                                  dma_set=self.feasible_set(dma_set), phase_init=self.phase_init)

    def to_dict(self):
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = [list(v) if isinstance(v, tuple) else v for v in value]
        return data


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

FIELD_TYPES = {f.name: f.type for f in fields(ExperimentSpec)}
INT_KEYS = {'num_users', 'ris_elements', 'microstrips', 'elements_per_microstrip', 'num_seeds', 'base_seed',
            'max_outer', 'mc_samples'}
FLOAT_KEYS = {'noise_dbm', 'pathloss_db', 'hop1_db', 'omega_decay', 'sar_budget', 'ao_low', 'ao_high',
              'ba_level', 'eps1', 'eps2', 'eps3', 'eps4', 'eps5', 'eps6', 'de_pmax_dbm'}
STR_KEYS = {'experiment', 'csi_mode', 'dma_set', 'phase_init', 'dual_method', 'output'}


def _coerce(key, value, line):
    """Type-check one YAML value against the schema."""
    try:
        if key in INT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError("an integer")
            return value
        if key in FLOAT_KEYS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError("a number")
            return float(value)
        if key in STR_KEYS:
            if not isinstance(value, str):
                raise TypeError("a string")
            return value
        if key == 'user_antennas':
            if isinstance(value, int) and not isinstance(value, bool):
                return value
            if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
                raise TypeError("an integer or a list of integers")
            return tuple(value)
        if key in ('pmax_dbm_grid', 'sar_budget_grid'):
            if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
                raise TypeError("a list of numbers")
            return tuple(float(v) for v in value)
        if key == 'de_scales':
            if not isinstance(value, list) or not all(
                    isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v)
                    for v in value):
                raise TypeError("a list of [N_R, N_k] pairs")
            return tuple(tuple(v) for v in value)
    except TypeError as e:
        raise ConfigError(f"'{key}' must be {e}", line, key) from None
    raise ConfigError(f"unknown key '{key}'", line, key)


def _key_lines(text):
    node = yaml.compose(text)
    if node is None or not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def load_config(path):
    """
    Read a flat key: value YAML experiment file.

    Missing keys take the config.py defaults; an empty file gives the
    default spec.

    Raises:
        ConfigError: with the 1-based line of the offending key
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    text = path.read_text(encoding='utf-8')

    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ConfigError(f"invalid YAML: {getattr(e, 'problem', e)}", mark.line + 1 if mark else None) from e

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping of key: value pairs", 1)

    values = {}
    for key, value in data.items():
        line = lines.get(key)
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown key '{key}'", line, key)
        if value is None:
            raise ConfigError(f"missing value for '{key}'", line, key)
        values[key] = _coerce(key, value, line)

    try:
        spec = ExperimentSpec(**values)
    except ConfigError as e:
        raise ConfigError(str(e), lines.get(e.key), e.key) from None
    logger.info(f"Loaded experiment '{spec.experiment}' from {path}")
    return spec


def dump_spec(spec):
    """Serialize a spec back to the flat YAML format."""
    return yaml.safe_dump(spec.to_dict(), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

def _tasks(spec):
    """Enumerate (seed, pmax, D, variant, csi_mode, dma_set) in a fixed order."""
    budgets = spec.sar_budget_grid if spec.experiment == 'se_vs_power' else (spec.sar_budget,)
    mode = spec.effective_csi_mode()
    if spec.experiment == 'convergence':
        variants = [('proposed', m, spec.dma_set) for m in ('full', 'partial')]
    elif spec.experiment == 'ris_ablation':
        variants = [('proposed', mode, spec.dma_set), ('no_ris', mode, spec.dma_set)]
    elif spec.experiment == 'dma_sets':
        variants = [('proposed', mode, tag) for tag in dma_opt.SET_TAGS] + [('conventional', mode, 'none')]
    elif spec.experiment == 'baselines':
        variants = [(v, mode, spec.dma_set) for v in ('proposed', 'adaptive', 'worst_case')]
    else:
        variants = [('proposed', mode, spec.dma_set)]

    tasks = []
    for seed in spec.seeds():
        for pmax in spec.pmax_dbm_grid:
            for budget in budgets:
                for variant, task_mode, tag in variants:
                    tasks.append({'seed': seed, 'pmax_dbm': pmax, 'sar_budget': budget,
                                  'variant': variant, 'csi_mode': task_mode, 'dma_set': tag})
    return tasks


def _dispatch(spec, task):
    dims = spec.dims()
    stats = default_statistics(dims, spec.omega_decay, spec.pathloss_db - spec.hop1_db)
    ch = generate_channels(stats, dims, H1Spec(spec.hop1_db), task['seed'])
    link = LinkBudget.from_dbm(task['pmax_dbm'], dims.K, spec.noise_dbm, spec.pathloss_db, spec.hop1_db)
    constraints = SarConstraint.uniform(dims, task['sar_budget'])
    tag = task['dma_set'] if task['dma_set'] in dma_opt.SET_TAGS else None
    cfg = spec.ao_config(task['seed'], task['csi_mode'], tag)
    source = ch if task['csi_mode'] == 'full' else (stats, ch.H1)

    variant = task['variant']
    if variant == 'proposed':
        if task['csi_mode'] == 'full':
            return ao_driver.ao_full_csi(ch, dims, constraints, link, cfg), dims
        return ao_driver.ao_partial_csi(stats, ch.H1, dims, constraints, link, cfg), dims
    if variant == 'no_ris':
        return ao_driver.no_ris_reference(source, dims, constraints, link, cfg), dims
    if variant == 'conventional':
        return ao_driver.conventional_reference(source, dims, constraints, link, cfg), dims
    if variant == 'adaptive':
        return ao_driver.baseline_adaptive(source, dims, constraints, link, cfg), dims
    if variant == 'worst_case':
        return ao_driver.baseline_worst_case(source, dims, constraints, link, cfg), dims
    raise ValueError(f"unknown variant '{variant}'")


def _run_task(spec, task):
    """One AO run; failures become rows with the error column set."""
    base = {'schema_version': SCHEMA_VERSION, 'experiment': spec.experiment, **task}
    start = time.perf_counter()
    try:
        trace, dims = _dispatch(spec, task)
    except Exception as e:
        logger.error(f"Run failed ({task}): {e}")
        rows = [{**base, 'iteration': 0, 'se': float('nan'), 'iterations': 0, 'converged': False,
                 'complexity': float('nan'), 'error': f"{type(e).__name__}: {e}"}]
        return rows, {**base, 'wall_time_s': time.perf_counter() - start}

    complexity = ao_driver.complexity_estimate(dims, trace.counts, trace.csi_mode)
    common = {'iterations': trace.iterations, 'converged': trace.converged, 'complexity': complexity, 'error': ''}
    if spec.experiment == 'convergence':
        rows = [{**base, 'iteration': i, 'se': float(se), **common} for i, se in enumerate(trace.se_trace)]
    else:
        rows = [{**base, 'iteration': trace.iterations, 'se': float(trace.final_se), **common}]
    return rows, {**base, 'wall_time_s': time.perf_counter() - start}


def _output_path(spec, out, suffix=''):
    if out:
        return Path(out)
    if spec.output:
        return Path(spec.output)
    return Path(config.RESULTS_DIR) / f"{spec.experiment}{suffix}.csv"


def _write(df, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format='%.17g', encoding='utf-8')


def run_experiment(spec, out=None, jobs=1):
    """
    Run every (seed, grid point, variant) of the experiment.

    Returns:
        tuple: (results DataFrame, path of the written CSV)
    """
    if spec.experiment == 'de_accuracy':
        return de_accuracy_report(spec, out, jobs)

    tasks = _tasks(spec)
    logger.info("="*60)
    logger.info(f"EXPERIMENT: {spec.experiment} ({len(tasks)} runs, {jobs} workers)")
    logger.info("="*60)

    results = Parallel(n_jobs=jobs)(delayed(_run_task)(spec, task) for task in tasks)
    rows = [row for task_rows, _ in results for row in task_rows]
    timings = [timing for _, timing in results]

    df = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    path = _output_path(spec, out)
    _write(df, path)
    _write(pd.DataFrame(timings, columns=TIMING_COLUMNS), path.with_suffix('.timing.csv'))

    failed = int((df['error'] != '').sum())
    logger.info(f"Saved {len(df)} rows to {path}")
    if failed:
        logger.error(f"{failed} rows carry errors")
    return df, path


def de_accuracy_row(spec, n_r, n_k, seed, omega_scale=1.0, jobs=1):
    """DE vs Monte Carlo at one dimension pair; Q, phi and V1 from the initial AO point."""
    base = {'schema_version': SCHEMA_VERSION, 'seed': seed, 'K': spec.num_users, 'N_R': n_r, 'N_k': n_k,
            'S': spec.microstrips, 'L': spec.elements_per_microstrip, 'pmax_dbm': spec.de_pmax_dbm}
    try:
        dims = spec.dims(ris_elements=n_r, user_antennas=n_k)
        stats = default_statistics(dims, spec.omega_decay, spec.pathloss_db - spec.hop1_db).scaled(omega_scale)
        H1 = generate_h1(dims, H1Spec(spec.hop1_db), seed)
        link = LinkBudget.from_dbm(spec.de_pmax_dbm, dims.K, spec.noise_dbm, spec.pathloss_db, spec.hop1_db)
        constraints = SarConstraint.uniform(dims, spec.sar_budget)
        cfg = spec.ao_config(seed)

        Q = ao_driver.initial_covariances(dims, constraints, link)
        phi = ao_driver.initial_phase(dims.N_R, cfg)
        V1 = dma_opt.unconstrained_v1(det_equiv.expected_smat(stats, H1, phi, Q, link.sigma2), dims.S)

        state = det_equiv.de_fixed_point(Q, stats, H1, phi, V1, link.sigma2, cfg.de_config())
        de_value = det_equiv.de_se(state, Q, link.sigma2)
        mc = monte_carlo_ergodic_se(stats, Q, phi, V1, link.sigma2, spec.mc_samples, seed, H1, jobs)
        gap = abs(de_value - mc.mean) / mc.mean if mc.mean > 0 else abs(de_value)
        return {**base, 'de_se': de_value, 'mc_se': mc.mean, 'mc_stderr': mc.stderr, 'mc_samples': mc.n,
                'rel_gap': gap, 'error': ''}
    except Exception as e:
        logger.error(f"DE check failed (N_R={n_r}, N_k={n_k}, seed={seed}): {e}")
        return {**base, 'de_se': float('nan'), 'mc_se': float('nan'), 'mc_stderr': float('nan'),
                'mc_samples': 0, 'rel_gap': float('nan'), 'error': f"{type(e).__name__}: {e}"}


def de_accuracy_report(spec, out=None, jobs=1):
    """
    Compare the deterministic equivalent with Monte Carlo over spec.de_scales.

    Returns:
        tuple: (DataFrame, path of the written CSV)
    """
    logger.info("="*60)
    logger.info(f"DE ACCURACY: scales {list(spec.de_scales)}, {spec.num_seeds} seeds, {spec.mc_samples} samples")
    logger.info("="*60)

    jobs_list = [(n_r, n_k, seed) for n_r, n_k in spec.de_scales for seed in spec.seeds()]
    rows = Parallel(n_jobs=jobs)(delayed(de_accuracy_row)(spec, n_r, n_k, seed) for n_r, n_k, seed in jobs_list)
    df = pd.DataFrame(rows, columns=DE_COLUMNS)

    path = _output_path(replace(spec, experiment='de_accuracy'), out)
    _write(df, path)
    summary = df.groupby(['N_R', 'N_k'])['rel_gap'].median()
    for (n_r, n_k), gap in summary.items():
        logger.info(f"  N_R={n_r:3d} N_k={n_k:2d}: median relative gap {gap:.4%}")
    logger.info(f"Saved {len(df)} rows to {path}")
    return df, path


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(description="EM-exposure-aware uplink experiments")
    parser.add_argument('--verbose', action='store_true', help="log per-iteration detail")
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help="run the experiment described by a config file")
    run.add_argument('config', nargs='?', default=config.DEFAULT_CONFIG)
    run.add_argument('--experiment', choices=EXPERIMENTS)
    run.add_argument('--seed', type=int, help="base seed (overrides base_seed)")
    run.add_argument('--out')
    run.add_argument('--jobs', type=int, default=config.DEFAULT_JOBS)

    defaults = sub.add_parser('defaults', help="print the default experiment file")
    defaults.add_argument('--out')

    check = sub.add_parser('de-check', help="deterministic equivalent vs Monte Carlo")
    check.add_argument('config', nargs='?', default=config.DEFAULT_CONFIG)
    check.add_argument('--seed', type=int)
    check.add_argument('--out')
    check.add_argument('--jobs', type=int, default=config.DEFAULT_JOBS)
    return parser


def _overrides(spec, args):
    changes = {}
    if getattr(args, 'experiment', None):
        changes['experiment'] = args.experiment
    if args.seed is not None:
        changes['base_seed'] = args.seed
    return replace(spec, **changes) if changes else spec


def main(argv=None):
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        if args.command == 'defaults':
            text = dump_spec(ExperimentSpec())
            if args.out:
                Path(args.out).parent.mkdir(parents=True, exist_ok=True)
                Path(args.out).write_text(text, encoding='utf-8')
                logger.info(f"Defaults written to {args.out}")
            else:
                print(text, end='')
            return 0

        spec = _overrides(load_config(args.config), args)
        if args.command == 'de-check':
            df, _ = de_accuracy_report(spec, args.out, args.jobs)
        else:
            df, _ = run_experiment(spec, args.out, args.jobs)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except Exception as e:
        logger.error(f"Experiment failed: {e}")
        raise

    failed = int((df['error'] != '').sum())
    if failed:
        logger.error(f"{failed} of {len(df)} rows failed")
        return 1
    logger.info("Done.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
