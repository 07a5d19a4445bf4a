//! Engine learning: search over rule sets until the engine reproduces every
//! demonstrated transition.
//!
//! The learner walks the transitions of a demonstration in order. Whenever
//! the engine's prediction for a transition is further than `theta` facts
//! from the demonstrated next frame, it searches the neighbourhood of the
//! engine (add a rule for an unmatched fact, intersect an implicated rule's
//! conditions with the current frame, or drop a rule). An improving neighbour
//! replaces the engine and the walk restarts from frame 0; otherwise the
//! search continues from the best neighbour for at most `max_iterations`
//! steps, after which the closest engine seen so far is kept.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::engine::{effects_compatible, predict_facts, with_inputs_of, Dynamics, Engine, RuleId};
use crate::error::{Error, Result};
use crate::fact::{Fact, FactSet, FactTrace, Slot, DEFAULT_VMAX};

pub const DEFAULT_MAX_ITERATIONS: usize = 10;

/// Two scores closer than this are a tie.
const SCORE_EPSILON: f64 = 1e-12;

/// Upper bound on accepted updates per transition in one learn call. Each
/// update strictly improves the prefix it was scored on, but later updates
/// may undo earlier ones; this keeps a pathological demonstration finite.
const MAX_UPDATES_PER_TRANSITION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Largest raw distance accepted as a correct prediction.
    pub theta: usize,
    pub max_iterations: usize,
    pub vmax: i32,
    pub kinematics: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            theta: 0,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            vmax: DEFAULT_VMAX,
            kinematics: true,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidProject(
                "maxIterations must be at least 1".into(),
            ));
        }
        if self.vmax < 1 {
            return Err(Error::InvalidProject("vmax must be at least 1".into()));
        }
        Ok(())
    }
}

/// A slot on which prediction and truth disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnmatchedPair {
    pub have: Fact,
    pub want: Fact,
}

/// Slot-by-slot disagreements between a predicted and an actual fact set,
/// ordered by slot.
///
/// A slot filled on only one side pairs with the object's `Empty` fact.
/// Relationship and input slots present on only one side have no such
/// counterpart and are skipped: relationships are derived from positions and
/// inputs are always present.
pub fn unmatched_pairs(predicted: &FactSet, actual: &FactSet) -> Vec<UnmatchedPair> {
    let have = predicted.by_slot();
    let want = actual.by_slot();
    let slots: BTreeSet<&Slot> = have.keys().chain(want.keys()).collect();
    let mut pairs = Vec::new();
    for slot in slots {
        let pair = match (have.get(slot), want.get(slot)) {
            (Some(h), Some(w)) if h != w => Some(((*h).clone(), (*w).clone())),
            (Some(h), None) => slot.object().map(|id| ((*h).clone(), Fact::Empty { id })),
            (None, Some(w)) => slot.object().map(|id| (Fact::Empty { id }, (*w).clone())),
            _ => None,
        };
        if let Some((have, want)) = pair {
            if have != want && effects_compatible(&have, &want) {
                pairs.push(UnmatchedPair { have, want });
            }
        }
    }
    pairs
}

/// Rewrites that would turn `current` into `actual` on the slots where the
/// prediction went wrong. The pre-effect is read from `current` so the
/// resulting rule can fire on it.
fn rewrite_pairs(current: &FactSet, predicted: &FactSet, actual: &FactSet) -> Vec<UnmatchedPair> {
    let current_slots = current.by_slot();
    let mut out: Vec<UnmatchedPair> = Vec::new();
    for pair in unmatched_pairs(predicted, actual) {
        let target = if pair.have.is_empty_fact() {
            pair.want.slot()
        } else {
            pair.have.slot()
        };
        let have = match current_slots.get(&target) {
            Some(f) => (*f).clone(),
            None => match target.object() {
                Some(id) if current.contains(&Fact::Empty { id }) => Fact::Empty { id },
                _ => continue,
            },
        };
        let candidate = UnmatchedPair {
            have,
            want: pair.want,
        };
        if candidate.have != candidate.want
            && effects_compatible(&candidate.have, &candidate.want)
            && !out.contains(&candidate)
        {
            out.push(candidate);
        }
    }
    out
}

/// Appends a rule rewriting `pair.have` into `pair.want`, guarded by every
/// fact of the current frame.
pub fn add_rule(engine: &Engine, current: &FactSet, pair: &UnmatchedPair) -> Result<Engine> {
    let mut next = engine.clone();
    next.push(pair.have.clone(), pair.want.clone(), current.clone())?;
    Ok(next)
}

/// Generalizes a rule by intersecting its conditions with the current frame.
/// Returns `None` when nothing would be left of the guard.
pub fn modify_rule(engine: &Engine, id: RuleId, current: &FactSet) -> Result<Option<Engine>> {
    let rule = engine.rule(id).ok_or(Error::RuleNotFound(id))?;
    let conditions = rule.conditions.intersection(current);
    if conditions.is_empty() {
        return Ok(None);
    }
    let mut next = engine.clone();
    next.rule_mut(id).expect("rule exists").conditions = conditions;
    Ok(Some(next))
}

pub fn remove_rule(engine: &Engine, id: RuleId) -> Result<Engine> {
    let mut next = engine.clone();
    next.remove(id).ok_or(Error::RuleNotFound(id))?;
    Ok(next)
}

fn dynamics(trace: &FactTrace, config: &LearnerConfig) -> Dynamics {
    Dynamics::new(config.kinematics, trace.grid)
}

fn transition_distance(
    engine: &Engine,
    trace: &FactTrace,
    t: usize,
    dynamics: &Dynamics,
) -> (usize, f64) {
    let d = crate::engine::transition_distance(
        engine,
        &trace.frames[t],
        &trace.frames[t + 1],
        dynamics,
    );
    (d.raw, d.normalized)
}

/// Sum of normalized distances over transitions `0..upto`.
pub fn score_engine(
    engine: &Engine,
    trace: &FactTrace,
    upto: usize,
    config: &LearnerConfig,
) -> f64 {
    let dynamics = dynamics(trace, config);
    score_prefix(engine, trace, upto, &dynamics)
}

fn score_prefix(engine: &Engine, trace: &FactTrace, upto: usize, dynamics: &Dynamics) -> f64 {
    let upto = upto.min(trace.transitions());
    (0..upto)
        .map(|t| transition_distance(engine, trace, t, dynamics).1)
        .sum()
}

fn total_score(engine: &Engine, trace: &FactTrace, dynamics: &Dynamics) -> f64 {
    score_prefix(engine, trace, trace.transitions(), dynamics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Operator {
    Add,
    Modify(RuleId),
    Remove(RuleId),
}

#[derive(Debug, Clone)]
pub struct Neighbor {
    pub engine: Engine,
    pub operator: Operator,
}

/// Every engine one operator away from `engine`, in generation order: adds
/// (one per rewrite pair), then modifies of implicated rules, then removes.
pub fn neighbors(
    engine: &Engine,
    trace: &FactTrace,
    failing: usize,
    config: &LearnerConfig,
) -> Vec<Neighbor> {
    let dynamics = dynamics(trace, config);
    let current = &trace.frames[failing];
    let actual = &trace.frames[failing + 1];
    let predicted = with_inputs_of(&predict_facts(engine, current, &dynamics).facts, actual);

    let mut out = Vec::new();
    for pair in rewrite_pairs(current, &predicted, actual) {
        if let Ok(next) = add_rule(engine, current, &pair) {
            out.push(Neighbor {
                engine: next,
                operator: Operator::Add,
            });
        }
    }

    let implicated: BTreeSet<Slot> = unmatched_pairs(&predicted, actual)
        .iter()
        .flat_map(|p| [p.have.slot(), p.want.slot()])
        .collect();
    for rule in engine.rules() {
        if !implicated.contains(&rule.pre.slot()) && !implicated.contains(&rule.target_slot()) {
            continue;
        }
        if let Ok(Some(next)) = modify_rule(engine, rule.id, current) {
            if next != *engine {
                out.push(Neighbor {
                    engine: next,
                    operator: Operator::Modify(rule.id),
                });
            }
        }
    }

    for rule in engine.rules() {
        out.push(Neighbor {
            engine: remove_rule(engine, rule.id).expect("rule exists"),
            operator: Operator::Remove(rule.id),
        });
    }
    out
}

#[derive(Debug, Clone)]
struct Scored {
    neighbor: Neighbor,
    score: f64,
}

/// Orders candidates: lower score first; on a tie the smaller engine (fewer
/// rules, then fewer conditions); then generation order.
/// Whether two engines predict identically on transitions `0..upto`. A
/// neighbour that is inert on the scored prefix can never improve it, and
/// walking onto one only changes behaviour further along, unobserved.
fn same_predictions(
    a: &Engine,
    b: &Engine,
    trace: &FactTrace,
    upto: usize,
    dynamics: &Dynamics,
) -> bool {
    (0..upto.min(trace.transitions())).all(|t| {
        let facts = &trace.frames[t];
        predict_facts(a, facts, dynamics).facts == predict_facts(b, facts, dynamics).facts
    })
}

fn better(a: &Scored, b: &Scored) -> bool {
    if a.score + SCORE_EPSILON < b.score {
        return true;
    }
    if b.score + SCORE_EPSILON < a.score {
        return false;
    }
    let size = |s: &Scored| {
        (
            s.neighbor.engine.len(),
            s.neighbor.engine.total_conditions(),
        )
    };
    size(a) < size(b)
}

fn best_neighbor(
    engine: &Engine,
    trace: &FactTrace,
    failing: usize,
    config: &LearnerConfig,
    exclude: &[Engine],
    skip_inert: bool,
) -> Option<Scored> {
    let dynamics = dynamics(trace, config);
    let mut best: Option<Scored> = None;
    for neighbor in neighbors(engine, trace, failing, config) {
        if exclude.contains(&neighbor.engine) {
            continue;
        }
        if skip_inert && same_predictions(engine, &neighbor.engine, trace, failing + 1, &dynamics) {
            continue;
        }
        let score = score_prefix(&neighbor.engine, trace, failing + 1, &dynamics);
        let candidate = Scored { neighbor, score };
        if best.as_ref().is_none_or(|b| better(&candidate, b)) {
            best = Some(candidate);
        }
    }
    best
}

/// One search step on the failing transition. Returns the best neighbour and
/// `true` when it strictly improves the score on transitions
/// `0..=failing`; otherwise returns `engine` unchanged and `false`.
pub fn engine_search(
    engine: &Engine,
    trace: &FactTrace,
    failing: usize,
    config: &LearnerConfig,
) -> (Engine, bool) {
    let base = score_engine(engine, trace, failing + 1, config);
    match best_neighbor(engine, trace, failing, config, &[], false) {
        Some(best) if best.score + SCORE_EPSILON < base => (best.neighbor.engine, true),
        _ => (engine.clone(), false),
    }
}

/// One visit of the search loop to a failing transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SearchEpisode {
    pub transition: usize,
    /// Neighbourhood searches performed during this visit.
    pub iterations: usize,
    pub updated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LearnStats {
    pub episodes: Vec<SearchEpisode>,
    pub updates: usize,
    /// Whole-demonstration score of every engine the search stood on.
    pub visited_scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LearnResult {
    pub engine: Engine,
    /// Summed normalized distance over all transitions.
    pub total_error: f64,
    pub converged: bool,
    pub stats: LearnStats,
}

struct BestSeen {
    engine: Engine,
    score: f64,
}

impl BestSeen {
    fn offer(&mut self, engine: &Engine, score: f64, stats: &mut LearnStats) {
        stats.visited_scores.push(score);
        if score + SCORE_EPSILON < self.score {
            self.engine = engine.clone();
            self.score = score;
        }
    }
}

/// Learns an engine for a demonstration, starting from `initial`.
pub fn learn(trace: &FactTrace, config: &LearnerConfig, initial: &Engine) -> Result<LearnResult> {
    config.validate()?;
    if trace.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: trace.len(),
        });
    }
    let dynamics = dynamics(trace, config);
    let transitions = trace.transitions();
    let update_budget = MAX_UPDATES_PER_TRANSITION * transitions;

    let mut stats = LearnStats::default();
    let mut engine = initial.clone();
    let mut best = BestSeen {
        engine: engine.clone(),
        score: f64::INFINITY,
    };
    best.offer(&engine, total_score(&engine, trace, &dynamics), &mut stats);

    let mut t = 0;
    while t < transitions {
        let (raw, _) = transition_distance(&engine, trace, t, &dynamics);
        if raw <= config.theta {
            t += 1;
            continue;
        }
        if stats.updates >= update_budget {
            // Out of update budget: settle on the closest engine and stop
            // searching.
            break;
        }

        let base = score_prefix(&engine, trace, t + 1, &dynamics);
        let mut episode = SearchEpisode {
            transition: t,
            iterations: 0,
            updated: false,
        };
        let mut walk = engine.clone();
        let mut visited = vec![walk.clone()];
        while episode.iterations < config.max_iterations {
            episode.iterations += 1;
            let Some(step) = best_neighbor(&walk, trace, t, config, &visited, true) else {
                break;
            };
            let candidate = step.neighbor.engine;
            best.offer(
                &candidate,
                total_score(&candidate, trace, &dynamics),
                &mut stats,
            );
            if step.score + SCORE_EPSILON < base {
                engine = candidate;
                episode.updated = true;
                break;
            }
            visited.push(candidate.clone());
            walk = candidate;
        }
        stats.episodes.push(episode.clone());

        if episode.updated {
            stats.updates += 1;
            t = 0;
        } else {
            engine = best.engine.clone();
            t += 1;
        }
    }

    let final_score = total_score(&engine, trace, &dynamics);
    best.offer(&engine, final_score, &mut stats);
    let within = |e: &Engine| {
        (0..transitions).all(|t| transition_distance(e, trace, t, &dynamics).0 <= config.theta)
    };
    let (engine, total_error) = if within(&engine) {
        (engine, final_score)
    } else {
        (best.engine.clone(), best.score)
    };
    let converged = within(&engine);
    Ok(LearnResult {
        engine,
        total_error,
        converged,
        stats,
    })
}
