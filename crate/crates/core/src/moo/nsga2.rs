use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, rng_from};
use crate::error::{Error, Result};

/// Objectives are minimized; the point is feasible iff every constraint is ≤ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objectives: Vec<f64>,
    pub constraints: Vec<f64>,
}

pub trait MooProblem: Sync {
    fn bounds(&self) -> &[(f64, f64)];

    fn n_obj(&self) -> usize;

    /// Evaluates a whole generation at once, in order.
    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Evaluation>>;

    fn dim(&self) -> usize {
        self.bounds().len()
    }
}

/// A problem given by a plain per-point closure.
pub struct FnProblem<F> {
    pub bounds: Vec<(f64, f64)>,
    pub n_obj: usize,
    pub f: F,
}

impl<F> MooProblem for FnProblem<F>
where
    F: Fn(&[f64]) -> Evaluation + Sync,
{
    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn n_obj(&self) -> usize {
        self.n_obj
    }

    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Evaluation>> {
        Ok(xs.iter().map(|x| (self.f)(x)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MooSettings {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub eta_c: f64,
    pub eta_m: f64,
    pub seed: u64,
}

impl Default for MooSettings {
    fn default() -> Self {
        MooSettings {
            population: 200,
            generations: 60,
            crossover_prob: 0.9,
            mutation_prob: 0.9,
            eta_c: 15.0,
            eta_m: 20.0,
            seed: 0,
        }
    }
}

impl MooSettings {
    pub fn paper_scale(seed: u64) -> Self {
        MooSettings {
            population: 1000,
            generations: 100,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 || self.population % 2 != 0 {
            return Err(Error::config("population", "must be even and at least 4"));
        }
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if !(self.eta_c >= 0.0 && self.eta_m >= 0.0) {
            return Err(Error::config("eta", "distribution indices must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub x: Vec<f64>,
    pub objectives: Vec<f64>,
    pub constraints: Vec<f64>,
    /// Sum of positive constraint values; infinite when the evaluation was not finite.
    pub violation: f64,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    fn new(x: Vec<f64>, e: Evaluation, n_obj: usize) -> Result<Self> {
        if e.objectives.len() != n_obj {
            return Err(Error::dim(n_obj, e.objectives.len(), "objective count"));
        }
        let finite = e.objectives.iter().chain(&e.constraints).all(|v| v.is_finite());
        let violation = if finite {
            e.constraints.iter().map(|c| c.max(0.0)).sum()
        } else {
            f64::INFINITY
        };
        Ok(Individual {
            x,
            objectives: e.objectives,
            constraints: e.constraints,
            violation,
            rank: 0,
            crowding: 0.0,
        })
    }

    pub fn is_feasible(&self) -> bool {
        self.violation == 0.0
    }
}

/// `a` Pareto-dominates `b` (minimization).
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

fn constrained_dominates(a: &Individual, b: &Individual) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation < b.violation,
        (true, true) => dominates(&a.objectives, &b.objectives),
    }
}

fn sort_with<F: Fn(usize, usize) -> bool>(n: usize, dom: F) -> Vec<Vec<usize>> {
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dom(i, j) {
                dominated_by[i].push(j);
                count[j] += 1;
            } else if dom(j, i) {
                dominated_by[j].push(i);
                count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Fronts of mutually non-dominated indices, best first; indices ascending within a front.
pub fn fast_nondominated_sort(objectives: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    let m = objectives.first().ok_or(Error::InvalidArgument("no points to sort".into()))?.len();
    if let Some(bad) = objectives.iter().find(|o| o.len() != m) {
        return Err(Error::dim(m, bad.len(), "objective vector"));
    }
    Ok(sort_with(objectives.len(), |i, j| dominates(&objectives[i], &objectives[j])))
}

/// Crowding distance for each member of one front, in the given order.
pub fn crowding_distance(objectives: &[&[f64]]) -> Vec<f64> {
    let n = objectives.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = objectives[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        order.sort_by(|&a, &b| objectives[a][k].total_cmp(&objectives[b][k]));
        let lo = objectives[order[0]][k];
        let hi = objectives[order[n - 1]][k];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if !(range > 0.0 && range.is_finite()) {
            continue;
        }
        for w in 1..n - 1 {
            let gap = (objectives[order[w + 1]][k] - objectives[order[w - 1]][k]) / range;
            if gap.is_finite() {
                dist[order[w]] += gap;
            }
        }
    }
    dist
}

/// Simulated binary crossover with bound clipping.
pub fn sbx_crossover(
    a: &[f64],
    b: &[f64],
    bounds: &[(f64, f64)],
    eta: f64,
    prob: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = a.to_vec();
    let mut c2 = b.to_vec();
    if rng.random::<f64>() >= prob {
        return (c1, c2);
    }
    for i in 0..a.len() {
        let u_swap: f64 = rng.random();
        let u: f64 = rng.random();
        let (x1, x2) = (a[i].min(b[i]), a[i].max(b[i]));
        if x2 - x1 < 1e-14 || u_swap > 0.5 {
            continue;
        }
        let (lo, hi) = bounds[i];
        let spread = x2 - x1;
        let child = |beta: f64| -> f64 {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let beta_lo = 1.0 + 2.0 * (x1 - lo) / spread;
        let beta_hi = 1.0 + 2.0 * (hi - x2) / spread;
        let y1 = 0.5 * ((x1 + x2) - child(beta_lo) * spread);
        let y2 = 0.5 * ((x1 + x2) + child(beta_hi) * spread);
        let (y1, y2) = (y1.clamp(lo, hi), y2.clamp(lo, hi));
        if a[i] <= b[i] {
            c1[i] = y1;
            c2[i] = y2;
        } else {
            c1[i] = y2;
            c2[i] = y1;
        }
    }
    (c1, c2)
}

/// Bounded polynomial mutation; each gene mutates with probability `gene_rate`.
pub fn polynomial_mutation(
    x: &mut [f64],
    bounds: &[(f64, f64)],
    eta: f64,
    gene_rate: f64,
    rng: &mut ChaCha8Rng,
) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        if rng.random::<f64>() >= gene_rate || hi <= lo {
            continue;
        }
        let u: f64 = rng.random();
        let d1 = (*v - lo) / (hi - lo);
        let d2 = (hi - *v) / (hi - lo);
        let p = 1.0 / (eta + 1.0);
        let dq = if u < 0.5 {
            let t = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
            t.powf(p) - 1.0
        } else {
            let t = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - t.powf(p)
        };
        *v = (*v + dq * (hi - lo)).clamp(lo, hi);
    }
}

/// Per-generation record of the first front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub front_size: usize,
    pub feasible: usize,
    /// Minimum of each objective over the feasible part of front 0 (or all of it when none is feasible).
    pub best: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Nsga2Result {
    pub population: Vec<Individual>,
    /// Rank-0 members of the final population.
    pub front: Vec<Individual>,
    pub history: Vec<GenerationStats>,
    /// Evaluations that returned non-finite values and were treated as infeasible.
    pub nonfinite: usize,
}

fn assign_rank_crowding(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let fronts = sort_with(pop.len(), |i, j| constrained_dominates(&pop[i], &pop[j]));
    for (r, front) in fronts.iter().enumerate() {
        let objs: Vec<&[f64]> = front.iter().map(|&i| pop[i].objectives.as_slice()).collect();
        let cd = crowding_distance(&objs);
        for (&i, c) in front.iter().zip(cd) {
            pop[i].rank = r;
            pop[i].crowding = c;
        }
    }
    fronts
}

/// Drops the most crowded member one at a time, recomputing distances after each removal.
fn truncate_by_crowding(pop: &[Individual], mut members: Vec<usize>, target: usize) -> Vec<usize> {
    while members.len() > target {
        let objs: Vec<&[f64]> = members.iter().map(|&i| pop[i].objectives.as_slice()).collect();
        let cd = crowding_distance(&objs);
        let mut worst = 0;
        for k in 1..members.len() {
            if cd[k] <= cd[worst] {
                worst = k;
            }
        }
        members.remove(worst);
    }
    members
}

fn better(a: &Individual, b: &Individual) -> bool {
    a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding)
}

fn tournament<'p>(pop: &'p [Individual], rng: &mut ChaCha8Rng) -> &'p Individual {
    let i = rng.random_range(0..pop.len());
    let j = rng.random_range(0..pop.len());
    if better(&pop[j], &pop[i]) {
        &pop[j]
    } else {
        &pop[i]
    }
}

fn evaluate(
    problem: &dyn MooProblem,
    xs: Vec<Vec<f64>>,
    nonfinite: &mut usize,
) -> Result<Vec<Individual>> {
    let evals = problem.evaluate_batch(&xs)?;
    if evals.len() != xs.len() {
        return Err(Error::dim(xs.len(), evals.len(), "batch evaluations"));
    }
    let n_obj = problem.n_obj();
    let pop = xs
        .into_iter()
        .zip(evals)
        .map(|(x, e)| Individual::new(x, e, n_obj))
        .collect::<Result<Vec<_>>>()?;
    let bad = pop.iter().filter(|p| p.violation.is_infinite()).count();
    if bad > 0 {
        log::warn!("{bad} evaluations were not finite");
        *nonfinite += bad;
    }
    Ok(pop)
}

fn stats(generation: usize, pop: &[Individual], n_obj: usize) -> GenerationStats {
    let front: Vec<&Individual> = pop.iter().filter(|p| p.rank == 0).collect();
    let feasible: Vec<&Individual> = front.iter().copied().filter(|p| p.is_feasible()).collect();
    let pool = if feasible.is_empty() { &front } else { &feasible };
    let best = (0..n_obj)
        .map(|k| pool.iter().map(|p| p.objectives[k]).fold(f64::INFINITY, f64::min))
        .collect();
    GenerationStats {
        generation,
        front_size: front.len(),
        feasible: feasible.len(),
        best,
    }
}

/// Elitist NSGA-II with constrained domination. Generation 0 is the random initial population.
pub fn nsga2_run(problem: &dyn MooProblem, settings: &MooSettings) -> Result<Nsga2Result> {
    settings.validate()?;
    let bounds = problem.bounds().to_vec();
    if bounds.is_empty() {
        return Err(Error::InvalidArgument("problem has no decision variables".into()));
    }
    if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::InvalidArgument("decision bounds must be finite with lo <= hi".into()));
    }
    if problem.n_obj() == 0 {
        return Err(Error::InvalidArgument("at least one objective is required".into()));
    }
    let n = settings.population;
    let gene_rate = 1.0 / bounds.len() as f64;
    let mut rng = rng_from(derive_seed(settings.seed, 0x6e5a2));
    let mut nonfinite = 0;

    let init: Vec<Vec<f64>> = (0..n)
        .map(|_| bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect())
        .collect();
    let mut pop = evaluate(problem, init, &mut nonfinite)?;
    assign_rank_crowding(&mut pop);
    let mut history = vec![stats(0, &pop, problem.n_obj())];

    for generation in 1..=settings.generations {
        let mut children = Vec::with_capacity(n);
        while children.len() < n {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let (mut c1, mut c2) =
                sbx_crossover(&a.x, &b.x, &bounds, settings.eta_c, settings.crossover_prob, &mut rng);
            for c in [&mut c1, &mut c2] {
                if rng.random::<f64>() < settings.mutation_prob {
                    polynomial_mutation(c, &bounds, settings.eta_m, gene_rate, &mut rng);
                }
            }
            children.push(c1);
            children.push(c2);
        }
        let offspring = evaluate(problem, children, &mut nonfinite)?;
        let mut merged = pop;
        merged.extend(offspring);
        let fronts = assign_rank_crowding(&mut merged);
        let mut keep = Vec::with_capacity(n);
        for front in fronts {
            if keep.len() + front.len() <= n {
                keep.extend(front);
            } else {
                keep.extend(truncate_by_crowding(&merged, front, n - keep.len()));
            }
            if keep.len() == n {
                break;
            }
        }
        keep.sort_unstable();
        let mut slots: Vec<Option<Individual>> = merged.into_iter().map(Some).collect();
        pop = keep.into_iter().map(|i| slots[i].take().expect("kept once")).collect();
        assign_rank_crowding(&mut pop);
        history.push(stats(generation, &pop, problem.n_obj()));
    }

    let front = pop.iter().filter(|p| p.rank == 0).cloned().collect();
    Ok(Nsga2Result {
        population: pop,
        front,
        history,
        nonfinite,
    })
}
