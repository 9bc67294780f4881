//! Gillespie direct-method simulation of the particle system on a sampled graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::model::RateModel;
use super::sum_tree::SumTree;
use crate::error::{Error, Result};
use crate::rng;
use crate::sampling::SampledGraph;
use crate::step::StepFunction;

/// How vertex states are chosen at time zero.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    /// One state index per vertex.
    Explicit(Vec<usize>),
    /// Each vertex drawn independently from `u0(U_i, .)`, a step function of
    /// per-state probabilities.
    Iid(StepFunction),
    /// State `isolated` for degree-zero vertices, `otherwise` for the rest.
    DegreeZero { isolated: usize, otherwise: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub time: f64,
    pub vertex: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Transition(TransitionEvent),
    Absorbed,
}

/// Recorded path of a simulation: box aggregates on an `M`-grid and global
/// state densities at multiples of `record_dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid_size: usize,
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    pub frames: Vec<StepFunction>,
    pub densities: Vec<Vec<f64>>,
    pub events: u64,
}

/// Maximum discrepancies between maintained and recomputed state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyCheck {
    pub counts_match: bool,
    pub max_rate_rel_error: f64,
    pub root_rel_error: f64,
}

impl ConsistencyCheck {
    pub fn within(&self, tol: f64) -> bool {
        self.counts_match && self.max_rate_rel_error <= tol && self.root_rel_error <= tol
    }
}

pub struct Process<'g> {
    graph: &'g SampledGraph,
    model: RateModel,
    states: Vec<u8>,
    /// Neighbor counts per state, `[i * S + s]`; `phi_i = counts * scale`.
    counts: Vec<u32>,
    rates: Vec<f64>,
    tree: SumTree,
    scale: f64,
    time: f64,
    events: u64,
    rng: ChaCha8Rng,
    /// Degree above which a full tree rebuild beats per-leaf updates.
    rebuild_degree: usize,
    scratch: Vec<f64>,
}

fn relative_error(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

impl<'g> Process<'g> {
    /// Set up the process at time zero. The initial draw uses the seed's
    /// initial-condition stream and events use a separate stream.
    pub fn new(
        graph: &'g SampledGraph,
        model: RateModel,
        initial: &InitialCondition,
        seed: u64,
    ) -> Result<Self> {
        let n = graph.n();
        let s = model.n_states();
        let states: Vec<u8> = match initial {
            InitialCondition::Explicit(v) => {
                if v.len() != n {
                    return Err(Error::InvalidInitialCondition(format!(
                        "expected {n} vertex states, got {}",
                        v.len()
                    )));
                }
                if let Some(&bad) = v.iter().find(|&&x| x >= s) {
                    return Err(Error::InvalidInitialCondition(format!(
                        "state index {bad} out of range for {s} states"
                    )));
                }
                v.iter().map(|&x| x as u8).collect()
            }
            InitialCondition::Iid(u0) => {
                if u0.n_components() != s {
                    return Err(Error::InvalidInitialCondition(format!(
                        "initial profile has {} components, model has {s} states",
                        u0.n_components()
                    )));
                }
                if !u0.in_simplex(1e-9) {
                    return Err(Error::InvalidInitialCondition(
                        "initial profile is not a probability vector in every cell".into(),
                    ));
                }
                let mut r = rng::stream(seed, rng::STREAM_INITIAL);
                graph
                    .positions()
                    .iter()
                    .map(|&x| {
                        let u: f64 = r.random();
                        let mut acc = 0.0;
                        for c in 0..s {
                            acc += u0.eval_left(x, c).max(0.0);
                            if u < acc {
                                return c as u8;
                            }
                        }
                        // Rounding leftovers go to the last state with mass.
                        (0..s)
                            .rev()
                            .find(|&c| u0.eval_left(x, c) > 0.0)
                            .unwrap_or(s - 1) as u8
                    })
                    .collect()
            }
            InitialCondition::DegreeZero {
                isolated,
                otherwise,
            } => {
                if *isolated >= s || *otherwise >= s {
                    return Err(Error::InvalidInitialCondition(format!(
                        "state index out of range for {s} states"
                    )));
                }
                (0..n)
                    .map(|i| {
                        if graph.neighbors(i).is_empty() {
                            *isolated as u8
                        } else {
                            *otherwise as u8
                        }
                    })
                    .collect()
            }
        };

        let scale = 1.0 / (n as f64 * graph.kappa());
        let mut counts = vec![0u32; n * s];
        for i in 0..n {
            for &j in graph.neighbors(i) {
                counts[i * s + states[j as usize] as usize] += 1;
            }
        }
        let rates: Vec<f64> = (0..n)
            .map(|i| model.exit_rate_counts(states[i] as usize, &counts[i * s..(i + 1) * s], scale))
            .collect();
        let tree = SumTree::from_weights(&rates);
        let log_n = (n.max(2) as f64).log2();
        Ok(Process {
            graph,
            model,
            states,
            counts,
            rates,
            tree,
            scale,
            time: 0.0,
            events: 0,
            rng: rng::stream(seed, rng::STREAM_EVENTS),
            rebuild_degree: (n as f64 / log_n) as usize,
            scratch: vec![0.0; s],
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    pub fn graph(&self) -> &SampledGraph {
        self.graph
    }

    pub fn state(&self, i: usize) -> usize {
        self.states[i] as usize
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.states.iter().map(|&s| s as usize)
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    pub fn vertex_rate(&self, i: usize) -> f64 {
        self.rates[i]
    }

    /// `phi_i`: neighbor counts per state scaled by `1/(N kappa)`.
    pub fn env_vector(&self, i: usize) -> Vec<f64> {
        let s = self.model.n_states();
        self.counts[i * s..(i + 1) * s]
            .iter()
            .map(|&c| c as f64 * self.scale)
            .collect()
    }

    /// Fraction of vertices in each state.
    pub fn densities(&self) -> Vec<f64> {
        let s = self.model.n_states();
        let mut d = vec![0.0; s];
        for &st in &self.states {
            d[st as usize] += 1.0;
        }
        let n = self.states.len() as f64;
        d.iter_mut().for_each(|x| *x /= n);
        d
    }

    /// Box aggregate on an `m`-grid: the index-ordered indicator profile on
    /// the `N`-grid averaged over each of the `m` cells.
    pub fn aggregate(&self, m: usize) -> Result<StepFunction> {
        let s = self.model.n_states();
        let n = self.states.len();
        let labels = self.model.states().to_vec();
        if n.is_multiple_of(m) {
            let r = n / m;
            let w = 1.0 / r as f64;
            let mut values = vec![0.0; m * s];
            for (i, &st) in self.states.iter().enumerate() {
                values[(i / r) * s + st as usize] += w;
            }
            return StepFunction::new(m, labels, values);
        }
        let mut values = vec![0.0; n * s];
        for (i, &st) in self.states.iter().enumerate() {
            values[i * s + st as usize] = 1.0;
        }
        StepFunction::new(n, labels, values)?.project(m)
    }

    /// Advance by one event, or report absorption when no rate is positive.
    pub fn step(&mut self) -> StepOutcome {
        match self.advance(f64::INFINITY) {
            Some(e) => StepOutcome::Transition(e),
            None => StepOutcome::Absorbed,
        }
    }

    /// Draw the next event; if it would occur after `horizon` it is discarded,
    /// time is set to `horizon` and `None` is returned (memorylessness makes
    /// this exact). Also returns `None` when absorbed, leaving time unchanged.
    fn advance(&mut self, horizon: f64) -> Option<TransitionEvent> {
        let total = self.tree.total();
        if !(total > 0.0) {
            return None;
        }
        let wait = Exp::new(total).expect("positive rate").sample(&mut self.rng);
        if self.time + wait > horizon {
            self.time = horizon;
            return None;
        }
        self.time += wait;

        let u: f64 = self.rng.random::<f64>() * total;
        let i = self.tree.sample(u);
        let s = self.model.n_states();
        let from = self.states[i] as usize;
        let phi: Vec<f64> = self.counts[i * s..(i + 1) * s]
            .iter()
            .map(|&c| c as f64 * self.scale)
            .collect();
        let mut sum = 0.0;
        for to in 0..s {
            let r = if to == from {
                0.0
            } else {
                self.model.rate(from, to, &phi)
            };
            self.scratch[to] = r;
            sum += r;
        }
        let v: f64 = self.rng.random::<f64>() * sum;
        let mut acc = 0.0;
        let mut to = (0..s).rev().find(|&t| self.scratch[t] > 0.0).unwrap_or(from);
        for t in 0..s {
            acc += self.scratch[t];
            if v < acc && self.scratch[t] > 0.0 {
                to = t;
                break;
            }
        }
        self.flip(i, to);
        self.events += 1;
        Some(TransitionEvent {
            time: self.time,
            vertex: i,
            from,
            to,
        })
    }

    fn flip(&mut self, i: usize, to: usize) {
        let s = self.model.n_states();
        let from = self.states[i] as usize;
        self.states[i] = to as u8;
        let own = self
            .model
            .exit_rate_counts(to, &self.counts[i * s..(i + 1) * s], self.scale);
        self.rates[i] = own;

        let nbrs = self.graph.neighbors(i);
        let bulk = nbrs.len() > self.rebuild_degree;
        if !bulk {
            self.tree.set(i, own);
        }
        for &j in nbrs {
            let j = j as usize;
            self.counts[j * s + from] -= 1;
            self.counts[j * s + to] += 1;
            let sj = self.states[j] as usize;
            if self.model.depends_on(sj, from) || self.model.depends_on(sj, to) {
                let r = self
                    .model
                    .exit_rate_counts(sj, &self.counts[j * s..(j + 1) * s], self.scale);
                self.rates[j] = r;
                if !bulk {
                    self.tree.set(j, r);
                }
            }
        }
        if bulk {
            self.tree.rebuild(&self.rates);
        }
    }

    /// Simulate until time `t_end`, recording at `0, dt, 2 dt, ...` up to `t_end`.
    pub fn run(&mut self, t_end: f64, record_m: usize, record_dt: f64) -> Result<Trajectory> {
        if !(t_end > 0.0) || !(record_dt > 0.0) || record_m == 0 {
            return Err(Error::domain(
                "run needs T > 0, record_dt > 0 and record grid size >= 1",
            ));
        }
        let start = self.time;
        let n_records = ((t_end - start) / record_dt + 1e-9).floor() as usize + 1;
        let mut traj = Trajectory {
            grid_size: record_m,
            labels: self.model.states().to_vec(),
            times: Vec::with_capacity(n_records),
            frames: Vec::with_capacity(n_records),
            densities: Vec::with_capacity(n_records),
            events: 0,
        };
        let events0 = self.events;
        for k in 0..n_records {
            let t_rec = (start + k as f64 * record_dt).min(t_end);
            // Process all events strictly before the recording time.
            loop {
                if self.time >= t_rec {
                    break;
                }
                if self.advance(t_rec).is_none() {
                    break;
                }
            }
            traj.times.push(t_rec);
            traj.frames.push(self.aggregate(record_m)?);
            traj.densities.push(self.densities());
        }
        // Finish the horizon so that `time() == t_end` unless absorbed.
        while self.time < t_end && self.advance(t_end).is_some() {}
        traj.events = self.events - events0;
        Ok(traj)
    }

    /// Recompute counts, rates and the tree total from scratch and compare
    /// with the incrementally maintained values.
    pub fn consistency(&self) -> ConsistencyCheck {
        let n = self.states.len();
        let s = self.model.n_states();
        let mut counts = vec![0u32; n * s];
        for i in 0..n {
            for &j in self.graph.neighbors(i) {
                counts[i * s + self.states[j as usize] as usize] += 1;
            }
        }
        let mut max_rel: f64 = 0.0;
        let mut total = 0.0;
        for i in 0..n {
            let r = self.model.exit_rate_counts(
                self.states[i] as usize,
                &counts[i * s..(i + 1) * s],
                self.scale,
            );
            total += r;
            max_rel = max_rel.max(relative_error(r, self.rates[i]));
            max_rel = max_rel.max(relative_error(r, self.tree.get(i)));
        }
        ConsistencyCheck {
            counts_match: counts == self.counts,
            max_rate_rel_error: max_rel,
            root_rel_error: relative_error(total, self.tree.total()),
        }
    }
}
