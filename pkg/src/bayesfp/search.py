"""Mode-jumping MCMC over a feature population and the genetic outer loop.

A chain state is an integer bitmask over the ``s`` features of the current
population. Local moves flip one bit. Mode jumps flip a random block of
bits, climb greedily to a nearby mode, then randomise around it; the
Metropolis-Hastings ratio uses only the randomisation kernels, evaluated
forward from the forward mode and backward from the mode reached by undoing
the same block flip from the proposal.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .evidence import NEG_INF, Evidence, EvidenceEvaluator, Model, PriorConfig
from .transforms import ALL_TRANSFORMS, F1, IDENTITY, Feature, enumerate_terms, parse_feature

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OperatorProbs:
    """Probabilities of the mutation, multiplication, modification and projection operators."""

    p_in: float = 0.5
    p_mu: float = 0.0
    p_mo: float = 0.5
    p_pr: float = 0.0

    def __post_init__(self):
        vals = (self.p_in, self.p_mu, self.p_mo, self.p_pr)
        if any(v < 0 for v in vals) or abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"operator probabilities must be nonnegative and sum to 1, got {vals}")
        if self.p_pr > 0:
            raise ValueError("projection operators are not supported (p_pr must be 0)")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_in, self.p_mu, self.p_mo])


FP_OPERATORS = OperatorProbs(0.5, 0.0, 0.5, 0.0)
INTERACTION_OPERATORS = OperatorProbs(0.4, 0.3, 0.3, 0.0)


@dataclass(frozen=True)
class SearchConfig:
    """Every tuning knob of the search plus the model prior.

    The run is ``n_init`` iterations on the initial population, then
    ``n_populations - 2`` exploration epochs of ``n_expl`` iterations, each
    followed by an evolution step, and ``n_final`` iterations on the last
    population. ``n_populations = 1`` is plain MJMCMC on the initial
    population for ``n_init + n_final`` iterations.
    """

    population_size: int = 20
    n_init: int = 250
    n_expl: int = 250
    n_final: int = 5000
    n_populations: int = 61
    prior: PriorConfig = field(default_factory=PriorConfig)
    operators: OperatorProbs = FP_OPERATORS
    fp_degree: int = 2
    rho_jump: float = 0.05
    eps: float = 0.05
    greedy_steps: Optional[int] = None
    w_min: float = 0.02
    delta: float = 0.01
    pinned: Tuple[str, ...] = ()
    seed: int = 1
    n_chains: int = 1

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.n_populations < 1 or self.n_init < 1 or self.n_final < 0 or self.n_expl < 0:
            raise ValueError("iteration counts must be nonnegative (n_init and n_populations >= 1)")
        if not 0.0 <= self.rho_jump <= 1.0 or not 0.0 < self.eps < 1.0:
            raise ValueError("rho_jump must be in [0,1] and eps in (0,1)")
        if self.fp_degree not in (1, 2):
            raise ValueError("fp_degree must be 1 or 2")
        if self.prior.interactions and self.operators.p_mu <= 0:
            raise ValueError("interaction mode needs a positive multiplication probability")
        if not self.prior.interactions and self.operators.p_mu > 0:
            raise ValueError("multiplication requires interactions to be enabled in the prior")

    @property
    def total_iterations(self) -> int:
        return self.n_init + max(self.n_populations - 2, 0) * self.n_expl + self.n_final

    @property
    def greedy_limit(self) -> int:
        return self.greedy_steps if self.greedy_steps is not None else 2 * self.population_size

    @classmethod
    def from_schedule(cls, iterations: int, evolution_period: int, last_evolution: int, **kw) -> "SearchConfig":
        """Translate "evolve every ``period`` iterations, last at ``last_evolution``"."""
        if evolution_period < 1 or last_evolution > iterations:
            raise ValueError("need evolution_period >= 1 and last_evolution <= iterations")
        n_evolutions = last_evolution // evolution_period
        if n_evolutions == 0:
            return cls(n_init=max(iterations // 2, 1), n_expl=0,
                       n_final=iterations - max(iterations // 2, 1), n_populations=1, **kw)
        return cls(n_init=evolution_period, n_expl=evolution_period,
                   n_final=iterations - n_evolutions * evolution_period,
                   n_populations=n_evolutions + 1, **kw)


@dataclass
class Population:
    features: List[Feature]
    generation: int = 0

    def __len__(self):
        return len(self.features)


@dataclass
class ChainState:
    mask: int
    log_post: float


class VisitLog:
    """Every model evaluated during a run, keyed by signature."""

    def __init__(self):
        self.entries: Dict[str, Tuple[Model, Evidence]] = {}

    def add(self, m: Model, ev: Evidence) -> None:
        self.entries.setdefault(m.signature, (m, ev))

    def merge(self, other: "VisitLog") -> "VisitLog":
        for key, item in other.entries.items():
            self.entries.setdefault(key, item)
        return self

    @classmethod
    def union(cls, logs: Iterable["VisitLog"]) -> "VisitLog":
        out = cls()
        for lg in logs:
            out.merge(lg)
        return out

    def __len__(self):
        return len(self.entries)

    def __contains__(self, signature):
        return signature in self.entries

    def items(self):
        return self.entries.values()

    def best(self) -> Tuple[Model, Evidence]:
        return max(self.entries.values(), key=lambda me: (me[1].log_posterior, me[0].signature))


class PopulationSpace:
    """Scores bitmasks over one population, memoising per mask and logging every fit."""

    def __init__(self, features: Sequence[Feature], evidence_fn: Callable[[Model], Evidence], visits: VisitLog):
        self.features = list(features)
        self.s = len(self.features)
        self.evidence_fn = evidence_fn
        self.visits = visits
        self.scores: Dict[int, float] = {}

    def model(self, mask: int) -> Model:
        return Model(f for i, f in enumerate(self.features) if mask >> i & 1)

    def score(self, mask: int) -> float:
        lp = self.scores.get(mask)
        if lp is None:
            m = self.model(mask)
            ev = self.evidence_fn(m)
            if ev.log_prior > NEG_INF:
                self.visits.add(m, ev)
            lp = ev.log_posterior
            if math.isnan(lp):
                lp = NEG_INF
            self.scores[mask] = lp
        return lp


@dataclass(frozen=True)
class JumpParams:
    rho_jump: float = 0.05
    eps: float = 0.05
    greedy_steps: int = 40

    @classmethod
    def from_config(cls, cfg: SearchConfig) -> "JumpParams":
        return cls(cfg.rho_jump, cfg.eps, cfg.greedy_limit)


def greedy_ascent(space: PopulationSpace, start: int, max_flips: int) -> int:
    """Best-improvement single-flip hill climb; ties go to the lowest index."""
    cur = start
    cur_lp = space.score(cur)
    for _ in range(max_flips):
        best, best_lp = cur, cur_lp
        for i in range(space.s):
            cand = cur ^ (1 << i)
            lp = space.score(cand)
            if lp > best_lp:
                best, best_lp = cand, lp
        if best == cur:
            break
        cur, cur_lp = best, best_lp
    return cur


def _randomisation_logq(a: int, b: int, s: int, log_eps: float, log_1m: float) -> float:
    h = (a ^ b).bit_count()
    return h * log_eps + (s - h) * log_1m


def _accept(log_ratio: float, rng) -> bool:
    if log_ratio >= 0:
        return True
    if log_ratio == NEG_INF or math.isnan(log_ratio):
        return False
    return math.log(rng.random()) < log_ratio


def mjmcmc_step(state: ChainState, space: PopulationSpace, rng, params: JumpParams) -> ChainState:
    """One Metropolis-Hastings transition (local flip or mode jump)."""
    s = space.s
    if s == 0:
        return state
    if rng.random() >= params.rho_jump:
        prop = state.mask ^ (1 << int(rng.integers(s)))
        lp = space.score(prop)
        if lp > NEG_INF and _accept(lp - state.log_post, rng):
            return ChainState(prop, lp)
        return state

    lo, hi = math.ceil(s / 4), math.ceil(s / 2)
    k = int(rng.integers(lo, hi + 1))
    block = 0
    for i in rng.choice(s, size=k, replace=False):
        block |= 1 << int(i)
    fwd_mode = greedy_ascent(space, state.mask ^ block, params.greedy_steps)
    noise = 0
    for i in np.flatnonzero(rng.random(s) < params.eps):
        noise |= 1 << int(i)
    prop = fwd_mode ^ noise
    lp = space.score(prop)
    if lp == NEG_INF:
        return state
    back_mode = greedy_ascent(space, prop ^ block, params.greedy_steps)
    log_eps, log_1m = math.log(params.eps), math.log1p(-params.eps)
    log_q_fwd = _randomisation_logq(prop, fwd_mode, s, log_eps, log_1m)
    log_q_back = _randomisation_logq(state.mask, back_mode, s, log_eps, log_1m)
    if _accept(lp + log_q_back - state.log_post - log_q_fwd, rng):
        return ChainState(prop, lp)
    return state


def random_start(space: PopulationSpace, rng, tries: int = 10) -> ChainState:
    """Random valid state; falls back to the null model."""
    s = space.s
    for _ in range(tries):
        mask = 0
        for i in np.flatnonzero(rng.random(s) < 0.5):
            mask |= 1 << int(i)
        lp = space.score(mask)
        if lp > NEG_INF:
            return ChainState(mask, lp)
    return ChainState(0, space.score(0))


def run_mjmcmc(
    pop: Population,
    evidence_fn: Callable[[Model], Evidence],
    n_iters: int,
    params: JumpParams,
    visits: Optional[VisitLog] = None,
    rng=None,
    state: Optional[ChainState] = None,
    trace: Optional[Dict[int, int]] = None,
) -> Tuple[VisitLog, ChainState, PopulationSpace]:
    """Run ``n_iters`` transitions on ``pop``.

    Every model evaluated along the way (accepted or not) lands in
    ``visits``; models excluded by the prior are never fitted and never
    logged. ``trace``, when given, counts the states the chain occupies.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    visits = VisitLog() if visits is None else visits
    rng = np.random.default_rng() if rng is None else rng
    space = PopulationSpace(pop.features, evidence_fn, visits)
    if state is None:
        state = random_start(space, rng)
    elif state.log_post == NEG_INF:
        state = ChainState(0, space.score(0))
    else:
        space.scores[state.mask] = state.log_post
        space.score(state.mask)
    for _ in range(n_iters):
        state = mjmcmc_step(state, space, rng, params)
        if trace is not None:
            trace[state.mask] = trace.get(state.mask, 0) + 1
    return visits, state, space


def estimate_inclusion_within(pop: Population, visits: VisitLog) -> np.ndarray:
    """Renormalised posterior mass of logged models containing each population feature."""
    if len(visits) == 0:
        raise ValueError("empty visit log")
    models, lps = [], []
    for m, ev in visits.items():
        models.append(m)
        lps.append(ev.log_posterior)
    lps = np.array(lps)
    weights = np.zeros(len(pop))
    if not np.any(np.isfinite(lps)):
        return weights
    w = np.exp(lps - lps.max())
    w /= w.sum()
    index = {f: i for i, f in enumerate(pop.features)}
    for m, wm in zip(models, w):
        if wm == 0.0:
            continue
        for f in m.features:
            i = index.get(f)
            if i is not None:
                weights[i] += wm
    return np.minimum(weights, 1.0)


def _universe_by_predictor(universe: Sequence[Feature]) -> Dict[str, List[Feature]]:
    out: Dict[str, List[Feature]] = {}
    for f in universe:
        if f.order == 1:
            out.setdefault(f.factors[0][0], []).append(f)
    return out


def evolve_population(
    pop: Population,
    weights: np.ndarray,
    universe: Sequence[Feature],
    probs: OperatorProbs,
    prior: PriorConfig,
    rng,
    w_min: float = 0.02,
    delta: float = 0.01,
    pinned: Iterable[Feature] = (),
    max_attempts: Optional[int] = None,
) -> Tuple[Population, List[int]]:
    """Replace low-weight features with operator-generated ones.

    Returns the new population and the indices (into the old population) of
    the features that survived in place; replacements reuse the freed slots.
    """
    pinned = set(pinned)
    s = len(pop)
    keep = [i for i, f in enumerate(pop.features) if weights[i] >= w_min or f in pinned]
    if len(keep) == s:
        return Population(list(pop.features), pop.generation + 1), keep
    slots = [i for i in range(s) if i not in set(keep)]
    kept = [pop.features[i] for i in keep]  # ordered: draws must not depend on hash order
    current = set(kept)
    by_pred = _universe_by_predictor(universe)
    fresh = [f for f in universe if f.order == 1]
    p_ops = probs.as_array()
    p_ops = p_ops / p_ops.sum()
    mult_w = np.asarray(weights, dtype=float) + delta
    mult_w = mult_w / mult_w.sum()
    new_feats: List[Feature] = []
    attempts = 0
    limit = max_attempts if max_attempts is not None else 200 * s
    while len(new_feats) < len(slots) and attempts < limit:
        attempts += 1
        op = rng.choice(3, p=p_ops)
        if op == 0:
            cand = fresh[int(rng.integers(len(fresh)))]
        elif op == 1:
            i, j = rng.choice(s, size=2, replace=False, p=mult_w)
            cand = pop.features[int(i)] * pop.features[int(j)]
            if cand.order > prior.max_order:
                continue
        else:
            pool = kept + new_feats if (kept or new_feats) else list(pop.features)
            base = pool[int(rng.integers(len(pool)))]
            preds = base.predictors
            name = preds[int(rng.integers(len(preds)))]
            options = by_pred.get(name)
            if not options:
                continue
            cand = options[int(rng.integers(len(options)))]
        if cand in current or cand in new_feats:
            continue
        new_feats.append(cand)
    if len(new_feats) < len(slots):
        log.warning("feature universe exhausted: population shrinks from %d to %d",
                    s, len(keep) + len(new_feats))
    features = list(pop.features)
    for slot, f in zip(slots, new_feats):
        features[slot] = f
    dropped = set(slots[len(new_feats):])
    features = [f for i, f in enumerate(features) if i not in dropped]
    return Population(features, pop.generation + 1), keep


def _remap_mask(mask: int, old: Population, new: Population, keep: Sequence[int]) -> int:
    pos = {f: i for i, f in enumerate(new.features)}
    out = 0
    for i in keep:
        if mask >> i & 1:
            out |= 1 << pos[old.features[i]]
    return out


def feature_universe(ds, cfg: SearchConfig) -> List[Feature]:
    allowed = {IDENTITY, *F1} if cfg.fp_degree == 1 else set(ALL_TRANSFORMS)
    return [f for f in enumerate_terms(ds, cfg.prior.max_order) if f.factors[0][1] in allowed]


def initial_population(ds, cfg: SearchConfig, universe: Sequence[Feature], rng) -> Population:
    """Pinned features, then every identity term, padded with random plain powers."""
    s = cfg.population_size
    feats: List[Feature] = []
    for text in cfg.pinned:
        f = parse_feature(text)
        if f not in feats:
            feats.append(f)
    identities = [f for f in universe if f.factors[0][1] == IDENTITY and f not in feats]
    room = s - len(feats)
    if len(identities) > room:
        pick = rng.choice(len(identities), size=max(room, 0), replace=False)
        identities = [identities[int(i)] for i in sorted(pick)]
    feats.extend(identities)
    f1 = [f for f in universe if f.factors[0][1] in F1 and f not in feats]
    while len(feats) < s and f1:
        feats.append(f1.pop(int(rng.integers(len(f1)))))
    if len(feats) < s:
        rest = [f for f in universe if f not in feats]
        while len(feats) < s and rest:
            feats.append(rest.pop(int(rng.integers(len(rest)))))
    return Population(feats, 0)


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Counter-based Philox stream for one chain of one run."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain)])))


def gmjmcmc(ds, cfg: SearchConfig, evaluator: Optional[EvidenceEvaluator] = None, chain: int = 0) -> VisitLog:
    """Genetically modified MJMCMC for one chain; returns every model it evaluated."""
    if evaluator is None:
        evaluator = EvidenceEvaluator(ds, cfg.prior)
    rng = chain_rng(cfg.seed, chain)
    universe = feature_universe(ds, cfg)
    pinned = [parse_feature(t) for t in cfg.pinned]
    params = JumpParams.from_config(cfg)
    visits = VisitLog()
    if pinned:
        # forced inclusion: the search path always contains the model made of the pinned features
        forced = Model(pinned)
        ev = evaluator.evaluate(forced)
        if ev.log_prior > NEG_INF:
            visits.add(forced, ev)
    pop = initial_population(ds, cfg, universe, rng)
    state = None
    schedule = [cfg.n_init] + [cfg.n_expl] * max(cfg.n_populations - 2, 0)
    for epoch, n_iter in enumerate(schedule):
        local = VisitLog()
        if n_iter > 0:
            _, state, _ = run_mjmcmc(pop, evaluator.evaluate, n_iter, params, local, rng, state)
        visits.merge(local)
        _log_epoch(chain, epoch, visits)
        if cfg.n_populations == 1:
            break
        weights = estimate_inclusion_within(pop, local) if len(local) else np.zeros(len(pop))
        new_pop, keep = evolve_population(pop, weights, universe, cfg.operators, cfg.prior, rng,
                                          cfg.w_min, cfg.delta, pinned)
        if state is not None:
            mask = _remap_mask(state.mask, pop, new_pop, keep)
            state = ChainState(mask, NEG_INF if mask != state.mask or new_pop.features != pop.features
                               else state.log_post)
            if state.log_post == NEG_INF:
                space = PopulationSpace(new_pop.features, evaluator.evaluate, visits)
                state = ChainState(mask, space.score(mask))
        pop = new_pop
    if cfg.n_final > 0:
        local = VisitLog()
        run_mjmcmc(pop, evaluator.evaluate, cfg.n_final, params, local, rng, state)
        visits.merge(local)
        _log_epoch(chain, len(schedule), visits)
    return visits


def _log_epoch(chain: int, epoch: int, visits: VisitLog) -> None:
    if log.isEnabledFor(logging.INFO) and len(visits):
        _, best = visits.best()
        log.info("chain %d epoch %d best log posterior %.4f |Omega| %d",
                 chain, epoch, best.log_posterior, len(visits))


def _chain_worker(args):
    ds, cfg, chain = args
    return gmjmcmc(ds, cfg, None, chain)


def run_parallel(
    ds,
    cfg: SearchConfig,
    n_chains: Optional[int] = None,
    seeds: Optional[Sequence[int]] = None,
    workers: int = 1,
    evaluator: Optional[EvidenceEvaluator] = None,
) -> VisitLog:
    """Independent chains merged by signature union.

    Chain ``c`` draws from the stream ``(seed, c)``; ``seeds`` overrides the
    base seed per chain. With ``workers <= 1`` chains run in turn and share
    one evidence cache, otherwise each worker process keeps its own.
    """
    n_chains = n_chains if n_chains is not None else cfg.n_chains
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    jobs = []
    for c in range(n_chains):
        ccfg = cfg if seeds is None else replace(cfg, seed=int(seeds[c]))
        jobs.append((ds, ccfg, c if seeds is None else 0))
    if workers <= 1 or n_chains == 1:
        if evaluator is None:
            evaluator = EvidenceEvaluator(ds, cfg.prior)
        logs = [gmjmcmc(d, c, evaluator, k) for d, c, k in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(_chain_worker, jobs))
    return VisitLog.union(logs)
