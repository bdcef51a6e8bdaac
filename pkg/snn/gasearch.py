"""
Genetic search over the seven network hyperparameters.

Fitness of a chromosome is the mean R^2 of three seeded training runs on one
shared recorded episode, scored on the final eval window. Elites are carried
unchanged, offspring come from tournament-of-2 parents with uniform per-gene
crossover, and a mutated offspring has exactly one gene resampled from its
prior. The search stops when the best fitness stalls.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from snn.columnar import EpisodeResult, NetworkParams, build_network, run_episode
from snn.encoding import INPUT_COUNT, EncoderLayout, encoded_stream
from snn.pingpong import reward_times
from snn.plasticity import PlasticityParams
from snn.prediction import UndefinedScoreError, score_episode
from snn.utils import write_csv, write_json

logger = logging.getLogger(__name__)

GENE_RANGES = {
    'n0': (1, 30),
    'tau': (1.0, 30.0),
    'n_silent': (1, 300),
    'd_h_bar': (0.03, 1.0),
    'w_min': (-1.0, -0.003),
    'w_max': (0.03, 1.0),
}
INTEGER_GENES = ('n0', 'n_silent')
R_S_SD = 3.0
WORST_FITNESS = -1.0
ENCODER_STREAM = 1


@dataclass
class Chromosome:
    n0: int
    tau: float
    n_silent: int
    d_h_bar: float
    w_min: float
    w_max: float
    r_s: float

    def in_range(self) -> bool:
        for name, (lo, hi) in GENE_RANGES.items():
            if not lo <= getattr(self, name) <= hi:
                return False
        return math.isfinite(self.r_s)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Chromosome':
        c = cls(**{f.name: data[f.name] for f in fields(cls)})
        c.n0, c.n_silent = int(c.n0), int(c.n_silent)
        return c

    def network_params(self, seed: int, N: int = 3, L: int = 100,
                       input_count: int = INPUT_COUNT) -> NetworkParams:
        plasticity = PlasticityParams.from_hyperparameters(
            w_min=self.w_min, w_max=self.w_max, d_h_bar=self.d_h_bar, r_s=self.r_s,
            tau=self.tau, interval_ms=L, n_silent=self.n_silent)
        return NetworkParams(plasticity=plasticity, N=N, n0=self.n0, input_count=input_count,
                             tau=self.tau, L=L, seed=seed)


# best values reported for the ping-pong task
OPTIMUM = Chromosome(n0=1, tau=1.0, n_silent=118, d_h_bar=0.049, w_min=-0.019, w_max=0.45, r_s=0.487)


@dataclass
class GaConfig:
    population: int = 300
    elitism: float = 0.1
    mutation_prob: float = 0.5
    runs_per_fitness: int = 3
    sim_seconds: float = 2000.0
    eval_seconds: float = 600.0
    stall_generations: int = 3
    max_generations: Optional[int] = None
    workers: int = 1

    def validate(self):
        if not 0 < self.elitism < 1:
            raise ValueError(f"elitism must be in (0, 1), got {self.elitism}")
        if self.population < 2:
            raise ValueError(f"population must be >= 2, got {self.population}")
        if not 0 <= self.mutation_prob <= 1:
            raise ValueError(f"mutation_prob must be in [0, 1], got {self.mutation_prob}")
        if self.runs_per_fitness < 1 or self.stall_generations < 1:
            raise ValueError("runs_per_fitness and stall_generations must be >= 1")
        if self.eval_seconds > self.sim_seconds:
            raise ValueError("eval_seconds cannot exceed sim_seconds")


@dataclass
class FitnessContext:
    """Everything a fitness evaluation reads; shared by all evaluations."""
    record: np.ndarray
    layout: EncoderLayout
    sim_steps: int
    eval_steps: int
    N: int = 3
    L: int = 100
    bin_ms: int = 10_000


def sample_gene(name: str, rng: np.random.Generator):
    if name == 'r_s':
        return float(rng.normal(0.0, R_S_SD))
    lo, hi = GENE_RANGES[name]
    if name == 'w_min':
        return -float(math.exp(rng.uniform(math.log(-hi), math.log(-lo))))
    value = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    if name in INTEGER_GENES:
        return int(min(hi, max(lo, round(value))))
    return float(value)


def sample_chromosome(rng: np.random.Generator) -> Chromosome:
    return Chromosome(**{f.name: sample_gene(f.name, rng) for f in fields(Chromosome)})


def simulate(params: NetworkParams, context: FitnessContext, encoder_seed: Sequence[int],
             learning: bool = True, log_spikes: bool = False, network=None) -> Tuple[Any, EpisodeResult]:
    """Build (or reuse) a network and drive it over the recorded episode."""
    net = network if network is not None else build_network(params)
    stream = encoded_stream(context.record, context.layout, np.random.default_rng(list(encoder_seed)),
                            context.sim_steps)
    result = run_episode(net, stream, context.sim_steps, learning=learning,
                         bin_ms=context.bin_ms, log_spikes=log_spikes)
    return net, result


def run_score(result: EpisodeResult, context: FitnessContext):
    return score_episode(result.output_spikes(context.N), reward_times(context.record).tolist(),
                         context.sim_steps, context.N, context.L, context.eval_steps)


def fitness(c: Chromosome, base_seed: int, context: FitnessContext, runs: int = 3) -> float:
    scores = []
    for run in range(runs):
        seed = base_seed + run
        try:
            _, result = simulate(c.network_params(seed, context.N, context.L), context, (seed, ENCODER_STREAM))
            _, r2 = run_score(result, context)
        except UndefinedScoreError as e:
            logger.warning(f"Undefined R^2 for {c} run {run}: {e}")
            r2 = WORST_FITNESS
        except Exception as e:
            logger.warning(f"Fitness run failed for {c} run {run}: {e}")
            r2 = WORST_FITNESS
        scores.append(r2)
    return float(np.mean(scores))


_WORKER_CONTEXT: Optional[FitnessContext] = None


def _init_worker(context: FitnessContext, log_level: int):
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = context
    logging.basicConfig(level=log_level, format='%(asctime)s - %(levelname)s - %(message)s')


def _worker_fitness(args: Tuple[Dict[str, Any], int, int]) -> float:
    data, base_seed, runs = args
    return fitness(Chromosome.from_dict(data), base_seed, _WORKER_CONTEXT, runs)


def evaluate_population(population: List[Chromosome], context: FitnessContext, base_seed: int,
                        runs: int, executor: Optional[ProcessPoolExecutor] = None) -> List[float]:
    """Fitness of each chromosome, in population order regardless of worker scheduling."""
    if executor is None:
        return [fitness(c, base_seed, context, runs) for c in population]
    jobs = [(c.to_dict(), base_seed, runs) for c in population]
    return list(executor.map(_worker_fitness, jobs))


def _tournament(fitnesses: Sequence[float], rng: np.random.Generator) -> int:
    a, b = (int(i) for i in rng.integers(0, len(fitnesses), size=2))
    if fitnesses[b] > fitnesses[a] or (fitnesses[b] == fitnesses[a] and b < a):
        return b
    return a


def crossover(a: Chromosome, b: Chromosome, rng: np.random.Generator) -> Chromosome:
    genes = {}
    for f in fields(Chromosome):
        genes[f.name] = getattr(a if rng.random() < 0.5 else b, f.name)
    return Chromosome(**genes)


def mutate(c: Chromosome, rng: np.random.Generator) -> Chromosome:
    names = [f.name for f in fields(Chromosome)]
    name = names[int(rng.integers(0, len(names)))]
    genes = c.to_dict()
    genes[name] = sample_gene(name, rng)
    return Chromosome(**genes)


def next_generation(population: List[Chromosome], fitnesses: List[float], config: GaConfig,
                    rng: np.random.Generator) -> Tuple[List[Chromosome], List[float], int]:
    """Returns (new population, carried fitnesses of the elites, elite count)."""
    order = np.argsort(-np.asarray(fitnesses), kind='stable')
    n_elite = math.ceil(config.elitism * config.population)
    elites = [population[i] for i in order[:n_elite]]
    elite_fitness = [fitnesses[i] for i in order[:n_elite]]
    offspring = []
    while len(elites) + len(offspring) < config.population:
        child = crossover(population[_tournament(fitnesses, rng)],
                          population[_tournament(fitnesses, rng)], rng)
        if rng.random() < config.mutation_prob:
            child = mutate(child, rng)
        offspring.append(child)
    return elites + offspring, elite_fitness, n_elite


def _generation_row(generation: int, population: List[Chromosome], fitnesses: List[float]) -> Dict[str, Any]:
    best = int(np.argmax(fitnesses))
    row = {'generation': generation,
           'best_fitness': float(fitnesses[best]),
           'mean_fitness': float(np.mean(fitnesses))}
    row.update(population[best].to_dict())
    return row


def evolve(config: GaConfig, rng: np.random.Generator, context: FitnessContext, base_seed: int = 0,
           log_path: str = None, state_path: str = None,
           resume_state: Dict[str, Any] = None) -> Tuple[Chromosome, float, List[Dict[str, Any]]]:
    config.validate()
    log: List[Dict[str, Any]] = []
    best: Optional[Chromosome] = None
    best_fitness = -math.inf
    stall = 0
    generation = 0
    population: List[Chromosome] = []
    fitnesses: List[float] = []

    executor = None
    if config.workers > 1:
        executor = ProcessPoolExecutor(max_workers=config.workers, initializer=_init_worker,
                                       initargs=(context, logging.getLogger().level))
    try:
        if resume_state:
            rng.bit_generator.state = resume_state['rng_state']
            population = [Chromosome.from_dict(d) for d in resume_state['population']]
            fitnesses = list(resume_state['fitnesses'])
            generation = resume_state['generation'] + 1
            best = Chromosome.from_dict(resume_state['best'])
            best_fitness = resume_state['best_fitness']
            stall = resume_state['stall']
            log = list(resume_state['log'])
            logger.info(f"Resuming GA at generation {generation}")
            capped = config.max_generations is not None and generation >= config.max_generations
            if stall >= config.stall_generations or capped:
                return best, best_fitness, log
            population, fitnesses = _breed(population, fitnesses, config, rng, context, base_seed, executor)
        else:
            population = [sample_chromosome(rng) for _ in range(config.population)]
            fitnesses = evaluate_population(population, context, base_seed, config.runs_per_fitness, executor)

        while True:
            row = _generation_row(generation, population, fitnesses)
            if row['best_fitness'] > best_fitness:
                best_fitness = row['best_fitness']
                best = population[int(np.argmax(fitnesses))]
                stall = 0
            elif generation > 0:
                stall += 1
            row['best_so_far'] = best_fitness
            log.append(row)
            logger.info(f"Generation {generation}: best={row['best_fitness']:.4f} "
                        f"mean={row['mean_fitness']:.4f} best_so_far={best_fitness:.4f}")

            if log_path:
                write_csv(log_path, log)
            if state_path:
                write_json(state_path, {
                    'generation': generation,
                    'population': [c.to_dict() for c in population],
                    'fitnesses': fitnesses,
                    'best': best.to_dict(),
                    'best_fitness': best_fitness,
                    'stall': stall,
                    'rng_state': rng.bit_generator.state,
                    'log': log,
                })

            if stall >= config.stall_generations:
                logger.info(f"No improvement for {stall} generations, stopping")
                break
            if config.max_generations is not None and generation + 1 >= config.max_generations:
                logger.info(f"Reached generation cap {config.max_generations}")
                break

            population, fitnesses = _breed(population, fitnesses, config, rng, context, base_seed, executor)
            generation += 1
    finally:
        if executor is not None:
            executor.shutdown()

    return best, best_fitness, log


def _breed(population, fitnesses, config, rng, context, base_seed, executor):
    population, elite_fitness, n_elite = next_generation(population, fitnesses, config, rng)
    offspring_fitness = evaluate_population(population[n_elite:], context, base_seed,
                                            config.runs_per_fitness, executor)
    return population, elite_fitness + offspring_fitness
