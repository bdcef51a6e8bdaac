#!/usr/bin/env python3
"""
Execution Script: Run SNN Experiments

Usage:
    python execution/run_experiment.py record-episode --seed 7 --out .tmp/runs/episode-7
    python execution/run_experiment.py calibrate --episode .tmp/runs/episode-7/episode.npy --out .tmp/runs/cal
    python execution/run_experiment.py train --config configs/train.json --seed 0 --out .tmp/runs/train-0 \
        --episode .tmp/runs/episode-7/episode.npy --calibration .tmp/runs/cal/calibration.json
    python execution/run_experiment.py eval --config configs/train.json --seed 1 --out .tmp/runs/eval-1 \
        --snapshot .tmp/runs/train-0/snapshot.json --calibration .tmp/runs/cal/calibration.json
    python execution/run_experiment.py ga --config configs/ga.json --seed 0 --out .tmp/runs/ga
    python execution/run_experiment.py baseline --config configs/baseline.json --seed 0 --out .tmp/runs/tree \
        --episode .tmp/runs/episode-7/episode.npy --calibration .tmp/runs/cal/calibration.json

Each run:
1. Resolves the config (defaults <- --config file <- flags) and writes resolved_config.json
2. Loads or records the ping-pong episode
3. Runs the requested pipeline
4. Writes CSV/JSON artifacts and manifest.json (SHA-256 of every artifact)

Exit status: 0 success, 2 config error, 1 runtime failure.
"""
import os
import sys
import argparse
import json
import logging
from typing import Any, Dict, List

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dotenv import load_dotenv
load_dotenv()

from snn.baselines import build_dataset, evaluate_tree, save_dataset, save_tree, train_tree
from snn.columnar import (NetworkBuildError, SnapshotError, build_network, l_neurons, load_snapshot,
                          resource_table, run_episode, save_snapshot)
from snn.config import ConfigError, RunConfig, env_defaults, load_config
from snn.encoding import (CalibrationError, bin_occupancy, calibrate_from_episode, encoded_stream,
                          load_calibration, save_calibration, section_names)
from snn.gasearch import ENCODER_STREAM, FitnessContext, evolve, simulate
from snn.pingpong import episode_summary, load_episode, record_episode, reward_times, save_episode
from snn.prediction import UndefinedScoreError, build_trace, last_window, r_squared
from snn.utils import ensure_dir, read_json, write_csv, write_json, write_manifest

logger = logging.getLogger(__name__)

COMMANDS = {
    'record-episode': 'record_episode',
    'calibrate': 'calibrate',
    'train': 'train_eval',
    'eval': 'eval',
    'ga': 'ga',
    'baseline': 'baseline',
}


# =============================================================================
# SHARED STAGES
# =============================================================================

def _episode(config: RunConfig, steps: int) -> np.ndarray:
    """Recorded episode from episode_path, or a fresh recording seeded by config.seed."""
    if config.episode_path:
        record = load_episode(config.episode_path)
        logger.info(f"Loaded episode {config.episode_path} ({len(record)} steps)")
        if len(record) < steps:
            raise ConfigError('episode_path', f"episode has {len(record)} steps, run needs {steps}")
        return record
    logger.info(f"Recording {steps} steps with world seed {config.seed}")
    return record_episode(config.seed, steps, config.world_params())


def _layout(config: RunConfig):
    return load_calibration(config.calibration_path, rate_hz=config.encoder['rate_hz'],
                            deterministic_rate=config.encoder['deterministic_rate'])


def _context(config: RunConfig, record: np.ndarray, sim_steps: int, eval_steps: int) -> FitnessContext:
    return FitnessContext(record=record, layout=_layout(config), sim_steps=sim_steps, eval_steps=eval_steps,
                          N=config.network['N'], L=config.network['L'], bin_ms=config.traces['bin_ms'])


def _series_frame(diagnostics, matrix: np.ndarray, value: str) -> pd.DataFrame:
    """Long-format (bin, neuron) series with per-column totals appended as neuron_id = -1."""
    bins, neurons = matrix.shape
    frame = pd.DataFrame({
        'bin': np.repeat(np.arange(bins), neurons),
        'bin_start_ms': np.repeat(np.arange(bins) * diagnostics.bin_ms, neurons),
        'column': np.tile(diagnostics.l_columns, bins),
        'neuron_id': np.tile(diagnostics.l_ids, bins),
        value: matrix.reshape(-1),
    })
    totals = frame.groupby(['bin', 'bin_start_ms', 'column'], as_index=False)[value].sum()
    totals['neuron_id'] = -1
    return pd.concat([frame, totals[frame.columns]], ignore_index=True)


def _write_traces(config: RunConfig, out_dir: str, net, result, trace) -> List[str]:
    files = []
    diag = result.diagnostics
    traces = config.traces
    if traces['spikes']:
        path = os.path.join(out_dir, 'spikes.csv')
        files.append(write_csv(path, diag.spike_log, ['time_ms', 'neuron_id', 'role', 'column_index']))
    if traces['weights']:
        files.append(write_csv(os.path.join(out_dir, 'firing_rate.csv'),
                               _series_frame(diag, diag.firing_rate, 'rate_hz')))
        files.append(write_csv(os.path.join(out_dir, 'weight_change.csv'),
                               _series_frame(diag, diag.weight_change, 'abs_weight_change')))
    if traces['stability']:
        frame = _series_frame(diag, diag.stability, 'stability')
        files.append(write_csv(os.path.join(out_dir, 'stability.csv'), frame[frame['neuron_id'] >= 0]))
    if traces['resources']:
        files.append(write_csv(os.path.join(out_dir, 'resources.csv'), resource_table(net, section_names())))
    if traces['prediction']:
        files.append(write_csv(os.path.join(out_dir, 'prediction.csv'), trace.to_frame()))
    path = os.path.join(out_dir, 'secrew_spikes.csv')
    files.append(write_csv(path, result.secrew_spikes, ['time_ms', 'column']))
    return files


def _score(result, record, context: FitnessContext):
    """Prediction trace over the whole run plus R^2 on its final window (None when undefined)."""
    trace = build_trace(result.output_spikes(context.N), reward_times(record).tolist(),
                        context.sim_steps, context.N, context.L)
    try:
        r2 = r_squared(trace, last_window(context.sim_steps, context.eval_steps))
    except UndefinedScoreError as e:
        logger.warning(f"R^2 undefined: {e}")
        r2 = None
    return trace, r2


def _run_summary(net, result, r2, window, record, steps) -> Dict[str, Any]:
    diag = result.diagnostics
    return {
        'r_squared': r2,
        'eval_window_ms': list(window),
        'rewards': int(np.sum(reward_times(record) < steps)),
        'secrew_spikes': len(result.secrew_spikes),
        'first_secrew_ms': {str(k): t for k, t in sorted(result.first_secrew_times().items())},
        'degenerate_skips': diag.degenerate_skips,
        'max_resource_drift': diag.max_resource_drift,
        'network': {'nodes': len(net.neurons), 'synapses': len(net.synapses),
                    'l_neurons': len(l_neurons(net))},
    }


# =============================================================================
# PIPELINES
# =============================================================================

def run_record_episode(config: RunConfig, out_dir: str) -> Dict[str, Any]:
    record = record_episode(config.seed, config.sim_steps, config.world_params())
    files = [os.path.join(out_dir, 'episode.npy')]
    save_episode(record, files[0])
    summary = episode_summary(record)
    files.append(write_json(os.path.join(out_dir, 'episode_summary.json'), summary))
    if config.traces['episode']:
        frame = pd.DataFrame(record)
        frame.insert(0, 'time_ms', np.arange(len(record)))
        files.append(write_csv(os.path.join(out_dir, 'episode.csv'), frame))
    logger.info(f"✓ Episode recorded: {summary['rewards']} rewards, {summary['punishments']} punishments")
    return {'files': files, 'summary': summary}


def run_calibrate(config: RunConfig, out_dir: str) -> Dict[str, Any]:
    record = _episode(config, config.sim_steps)
    layout = calibrate_from_episode(record)
    path = os.path.join(out_dir, 'calibration.json')
    save_calibration(layout, path)
    report = {
        'samples': int(len(record)),
        'vel_x_occupancy': bin_occupancy(record['vx'], layout.vel_x_edges).tolist(),
        'vel_y_occupancy': bin_occupancy(record['vy'], layout.vel_y_edges).tolist(),
    }
    files = [path, write_json(os.path.join(out_dir, 'calibration_report.json'), report)]
    logger.info(f"✓ Calibration written to {path}")
    return {'files': files, 'summary': report}


def run_train(config: RunConfig, out_dir: str) -> Dict[str, Any]:
    record = _episode(config, config.sim_steps)
    context = _context(config, record, config.sim_steps, config.eval_steps)
    seed = config.network_seed
    net, result = simulate(config.network_params(), context, (seed, ENCODER_STREAM),
                           learning=True, log_spikes=config.traces['spikes'])
    window = last_window(context.sim_steps, context.eval_steps)
    trace, r2 = _score(result, record, context)
    logger.info(f"✓ Training run finished: R^2 = {r2}")

    files = _write_traces(config, out_dir, net, result, trace)
    snapshot = os.path.join(out_dir, 'snapshot.json')
    save_snapshot(net, snapshot)
    files.append(snapshot)
    summary = _run_summary(net, result, r2, window, record, context.sim_steps)
    files.append(write_json(os.path.join(out_dir, 'summary.json'), summary))
    return {'files': files, 'summary': summary}


def run_eval(config: RunConfig, out_dir: str) -> Dict[str, Any]:
    """Inference-only pass of a saved network over a (usually fresh) episode."""
    net = load_snapshot(config.snapshot_path)
    record = _episode(config, config.sim_steps)
    context = _context(config, record, config.sim_steps, config.eval_steps)
    offset = net.time + 1
    stream = encoded_stream(record, context.layout, np.random.default_rng([config.seed, ENCODER_STREAM]),
                            context.sim_steps)
    result = run_episode(net, stream, context.sim_steps, learning=False, bin_ms=context.bin_ms,
                         log_spikes=config.traces['spikes'])
    result.secrew_spikes = [(t - offset, k) for t, k in result.secrew_spikes]
    result.diagnostics.spike_log = [(t - offset, *rest) for t, *rest in result.diagnostics.spike_log]
    window = last_window(context.sim_steps, context.eval_steps)
    trace, r2 = _score(result, record, context)
    logger.info(f"✓ Evaluation finished: R^2 = {r2}")

    files = _write_traces(config, out_dir, net, result, trace)
    summary = _run_summary(net, result, r2, window, record, context.sim_steps)
    files.append(write_json(os.path.join(out_dir, 'summary.json'), summary))
    return {'files': files, 'summary': summary}


def run_ga(config: RunConfig, out_dir: str, resume: bool = False) -> Dict[str, Any]:
    ga = config.ga_config()
    sim_steps = int(round(ga.sim_seconds * 1000))
    eval_steps = int(round(ga.eval_seconds * 1000))
    record = _episode(config, sim_steps)
    context = _context(config, record, sim_steps, eval_steps)
    log_path = os.path.join(out_dir, 'ga_log.csv')
    state_path = os.path.join(out_dir, 'ga_state.json')
    resume_state = None
    if resume and os.path.exists(state_path):
        resume_state = read_json(state_path)

    rng = np.random.default_rng(config.seed)
    best, best_fitness, log = evolve(ga, rng, context, base_seed=config.network_seed, log_path=log_path,
                                     state_path=state_path, resume_state=resume_state)
    summary = {'best_fitness': best_fitness, 'generations': len(log), 'best': best.to_dict()}
    files = [log_path, state_path, write_json(os.path.join(out_dir, 'best.json'), summary)]
    logger.info(f"✓ GA finished after {len(log)} generations: best fitness {best_fitness:.4f}")
    return {'files': files, 'summary': summary}


def run_baseline(config: RunConfig, out_dir: str) -> Dict[str, Any]:
    record = _episode(config, config.sim_steps)
    layout = _layout(config)
    N, L = config.network['N'], config.network['L']
    train_steps = int(round(config.baseline['train_seconds'] * 1000))
    dataset = build_dataset(record, layout, np.random.default_rng([config.network_seed, ENCODER_STREAM]),
                            N, L, train_steps, config.sim_steps, features=config.baseline['features'])
    files = save_dataset(dataset, os.path.join(out_dir, 'dataset'))

    X_train, y_train = dataset.train
    X_test, y_test = dataset.test
    tree = train_tree(X_train, y_train, max_depth=config.baseline['max_depth'],
                      min_leaf=config.baseline['min_leaf'], n_classes=N + 1,
                      readout=config.baseline['readout'])
    tree_path = os.path.join(out_dir, 'tree.json')
    save_tree(tree, tree_path)
    files.append(tree_path)
    try:
        r2 = evaluate_tree(tree, X_test, y_test)
    except UndefinedScoreError as e:
        logger.warning(f"R^2 undefined: {e}")
        r2 = None
    summary = {'r_squared': r2, 'train_rows': int(len(y_train)), 'test_rows': int(len(y_test)),
               'features': config.baseline['features'],
               'tree_nodes': len(tree.nodes), 'tree_depth': tree.depth()}
    files.append(write_json(os.path.join(out_dir, 'summary.json'), summary))
    logger.info(f"✓ Decision tree test R^2 = {r2}")
    return {'files': files, 'summary': summary}


PIPELINES = {
    'record_episode': run_record_episode,
    'calibrate': run_calibrate,
    'train_eval': run_train,
    'eval': run_eval,
    'baseline': run_baseline,
}


def run_experiment(config: RunConfig, out_dir: str = None, resume: bool = False) -> dict:
    """
    Run one configured pipeline.

    Returns:
        Dict with success flag, output directory, manifest path and summary,
        or the error message on failure
    """
    out_dir = ensure_dir(out_dir or os.path.join(config.output_dir, f"{config.kind}-seed{config.seed}"))
    logger.info(f"Running {config.kind} (seed {config.seed}) into {out_dir}")
    try:
        files = [write_json(os.path.join(out_dir, 'resolved_config.json'), config.to_dict())]
        if config.kind == 'ga':
            outcome = run_ga(config, out_dir, resume=resume)
        else:
            outcome = PIPELINES[config.kind](config, out_dir)
        files.extend(outcome['files'])
        manifest = write_manifest(out_dir, files)
    except ConfigError:
        raise
    except (CalibrationError, SnapshotError, NetworkBuildError, ValueError, OSError) as e:
        logger.error(f"❌ {config.kind} failed: {e}")
        return {'success': False, 'error': str(e), 'output_dir': out_dir}

    logger.info(f"✓ Manifest written to {manifest}")
    return {'success': True, 'output_dir': out_dir, 'manifest': manifest, 'summary': outcome['summary']}


# =============================================================================
# COMMAND LINE
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Columnar SNN reward-proximity experiments')
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        full_run = name not in ('record-episode', 'calibrate')
        p.add_argument('--config', required=full_run, help='JSON run config')
        p.add_argument('--seed', type=int, required=full_run,
                       help='Environment seed (also the default network/encoder seed)')
        p.add_argument('--out', required=full_run,
                       help='Output directory')
        p.add_argument('--sim-seconds', type=float, help='Simulated seconds')
        p.add_argument('--eval-seconds', type=float, help='Scored tail of the run, in seconds')
        p.add_argument('--episode', help='Recorded episode (.npy)')
        if full_run:
            p.add_argument('--calibration', help='Velocity calibration (.json)')
        if name in ('train', 'eval'):
            p.add_argument('--trace-spikes', action='store_true', help='Write every spike to spikes.csv')
        if name == 'eval':
            p.add_argument('--snapshot', help='Network snapshot written by train')
        if name == 'ga':
            p.add_argument('--workers', type=int, help='Parallel fitness processes')
            p.add_argument('--population', type=int, help='Population size')
            p.add_argument('--max-generations', type=int, help='Generation cap')
            p.add_argument('--resume', action='store_true', help='Continue from ga_state.json in --out')
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {'kind': COMMANDS[args.command]}
    flat = {
        'seed': args.seed,
        'sim_seconds': args.sim_seconds,
        'eval_seconds': args.eval_seconds,
        'episode_path': args.episode,
        'calibration_path': getattr(args, 'calibration', None),
        'snapshot_path': getattr(args, 'snapshot', None),
    }
    overrides.update({k: v for k, v in flat.items() if v is not None})
    if getattr(args, 'trace_spikes', False):
        overrides['traces'] = {'spikes': True}
    ga = {'workers': getattr(args, 'workers', None),
          'population': getattr(args, 'population', None),
          'max_generations': getattr(args, 'max_generations', None)}
    ga = {k: v for k, v in ga.items() if v is not None}
    if ga:
        overrides['ga'] = ga
    return overrides


def main(argv: List[str] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=env_defaults()['log_level'],
                        format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        config = load_config(args.config, overrides_from_args(args))
        result = run_experiment(config, args.out, resume=getattr(args, 'resume', False))
    except ConfigError as e:
        logger.error(f"❌ Config error: {e}")
        return 2

    print("\n" + "=" * 50)
    print("EXPERIMENT RESULT")
    print("=" * 50)
    print(json.dumps(result, indent=2, default=str))
    return 0 if result['success'] else 1


if __name__ == '__main__':
    sys.exit(main())
