//! Rules, engines and one-step prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fact::{relationship_facts, Fact, FactKind, FactSet, Footprint, Grid, ObjectId, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u32);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A guarded rewrite: when every condition holds and `pre` is present, the
/// next frame has `post` in its place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRule")]
pub struct Rule {
    pub id: RuleId,
    pub pre: Fact,
    pub post: Fact,
    pub conditions: FactSet,
}

impl Rule {
    pub fn new(id: RuleId, pre: Fact, post: Fact, conditions: FactSet) -> Result<Rule> {
        let rule = Rule {
            id,
            pre,
            post,
            conditions,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pre == self.post {
            return Err(Error::InvalidRule(format!(
                "rule {}: pre-effect equals post-effect",
                self.id
            )));
        }
        if self.conditions.is_empty() {
            return Err(Error::InvalidRule(format!(
                "rule {}: condition set is empty",
                self.id
            )));
        }
        if !effects_compatible(&self.pre, &self.post) {
            return Err(Error::InvalidRule(format!(
                "rule {}: {:?} cannot rewrite to {:?}",
                self.id, self.pre, self.post
            )));
        }
        Ok(())
    }

    pub fn fires(&self, facts: &FactSet) -> bool {
        rule_fires(self, facts)
    }

    /// The slot this rule writes. For an appearing object that is the slot
    /// of the new fact rather than the `Empty` it replaces.
    pub fn target_slot(&self) -> Slot {
        if self.pre.is_empty_fact() {
            self.post.slot()
        } else {
            self.pre.slot()
        }
    }

    /// Appear or disappear rule.
    pub fn changes_presence(&self) -> bool {
        self.pre.is_empty_fact() != self.post.is_empty_fact()
    }

    /// Same rewrite under the same guard, ignoring the id.
    pub fn same_behavior(&self, other: &Rule) -> bool {
        self.pre == other.pre && self.post == other.post && self.conditions == other.conditions
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: RuleId,
    pre: Fact,
    post: Fact,
    conditions: FactSet,
}

impl TryFrom<RawRule> for Rule {
    type Error = Error;

    fn try_from(raw: RawRule) -> Result<Rule> {
        Rule::new(raw.id, raw.pre, raw.post, raw.conditions)
    }
}

/// Whether `pre -> post` is a rewrite a rule may express: the same slot, or
/// an object toggling between absent (`Empty`) and one of its own facts.
pub fn effects_compatible(pre: &Fact, post: &Fact) -> bool {
    match (pre.is_empty_fact(), post.is_empty_fact()) {
        (false, false) => pre.slot() == post.slot(),
        (true, true) => false,
        (true, false) => pre.object().is_some() && pre.object() == post.object(),
        (false, true) => post.object().is_some() && pre.object() == post.object(),
    }
}

/// `conditions ⊆ facts` and `pre ∈ facts`.
pub fn rule_fires(rule: &Rule, facts: &FactSet) -> bool {
    facts.contains(&rule.pre) && rule.conditions.is_subset(facts)
}

/// An ordered rule list: the learned game program.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", try_from = "RawEngine")]
pub struct Engine {
    rules: Vec<Rule>,
    next_rule_id: u32,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawEngine {
    rules: Vec<Rule>,
    next_rule_id: u32,
}

impl TryFrom<RawEngine> for Engine {
    type Error = Error;

    fn try_from(raw: RawEngine) -> Result<Engine> {
        Engine::from_parts(raw.rules, raw.next_rule_id)
    }
}

impl Engine {
    pub fn new() -> Self {
        Engine::default()
    }

    /// Builds an engine from existing rules, keeping their ids and order.
    pub fn from_rules(rules: Vec<Rule>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for rule in &rules {
            rule.validate()?;
            if !seen.insert(rule.id) {
                return Err(Error::InvalidRule(format!("duplicate rule id {}", rule.id)));
            }
        }
        let next_rule_id = rules.iter().map(|r| r.id.0 + 1).max().unwrap_or(0);
        Ok(Engine {
            rules,
            next_rule_id,
        })
    }

    /// Like [`Engine::from_rules`] but with an explicit id counter, which
    /// must lie beyond every existing id.
    pub fn from_parts(rules: Vec<Rule>, next_rule_id: u32) -> Result<Self> {
        let mut engine = Engine::from_rules(rules)?;
        if next_rule_id < engine.next_rule_id {
            return Err(Error::InvalidRule(format!(
                "nextRuleId {next_rule_id} collides with an existing rule id"
            )));
        }
        engine.next_rule_id = next_rule_id;
        Ok(engine)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn next_rule_id(&self) -> u32 {
        self.next_rule_id
    }

    pub fn rule(&self, id: RuleId) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn total_conditions(&self) -> usize {
        self.rules.iter().map(|r| r.conditions.len()).sum()
    }

    /// Appends a rule with a fresh id.
    pub fn push(&mut self, pre: Fact, post: Fact, conditions: FactSet) -> Result<RuleId> {
        let id = RuleId(self.next_rule_id);
        let rule = Rule::new(id, pre, post, conditions)?;
        self.rules.push(rule);
        self.next_rule_id += 1;
        Ok(id)
    }

    pub(crate) fn rule_mut(&mut self, id: RuleId) -> Option<&mut Rule> {
        self.rules.iter_mut().find(|r| r.id == id)
    }

    pub(crate) fn remove(&mut self, id: RuleId) -> Option<Rule> {
        let pos = self.rules.iter().position(|r| r.id == id)?;
        Some(self.rules.remove(pos))
    }

    /// Same rules in the same order, ignoring ids.
    pub fn same_behavior(&self, other: &Engine) -> bool {
        self.rules.len() == other.rules.len()
            && self
                .rules
                .iter()
                .zip(&other.rules)
                .all(|(a, b)| a.same_behavior(b))
    }
}

/// How prediction moves objects after rules have fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dynamics {
    pub kinematics: bool,
    pub grid: Grid,
}

impl Dynamics {
    pub fn new(kinematics: bool, grid: Grid) -> Self {
        Dynamics { kinematics, grid }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub facts: FactSet,
    pub fired: Vec<RuleId>,
    pub distance: Option<f64>,
}

impl PredictionResult {
    pub fn compare(mut self, actual: &FactSet) -> Self {
        self.distance = Some(frame_distance(&self.facts, actual).normalized);
        self
    }
}

/// Predicts the fact set of the next frame.
///
/// Rules are scanned in engine order and the first firing rule for a slot
/// wins. Fired rules replace their pre-effect with their post-effect. With
/// kinematics on, every drawn object then moves by its (post-rule) velocity,
/// clamped to the grid, except along an axis whose position a rule wrote
/// directly; relationship facts are then recomputed from the new positions.
pub fn predict_facts(engine: &Engine, facts: &FactSet, dynamics: &Dynamics) -> PredictionResult {
    let mut claimed: BTreeSet<Slot> = BTreeSet::new();
    let mut fired: Vec<&Rule> = Vec::new();
    for rule in engine.rules() {
        if rule_fires(rule, facts) && claimed.insert(rule.target_slot()) {
            fired.push(rule);
        }
    }

    let mut next = facts.clone();
    let mut written: BTreeSet<Slot> = BTreeSet::new();
    let mut presence_changed: BTreeSet<ObjectId> = BTreeSet::new();
    for rule in &fired {
        next.remove(&rule.pre);
        written.insert(rule.post.slot());
        if rule.changes_presence() {
            presence_changed.extend(rule.pre.object());
        }
    }
    for rule in &fired {
        next.insert(rule.post.clone());
    }
    for id in presence_changed {
        settle_presence(&mut next, id);
    }

    if dynamics.kinematics {
        integrate(&mut next, &written, dynamics.grid);
    }

    PredictionResult {
        facts: next,
        fired: fired.iter().map(|r| r.id).collect(),
        distance: None,
    }
}

/// After an appear or disappear rewrite an object is either drawn (drop the
/// `Empty` marker) or absent (drop everything else said about it).
fn settle_presence(facts: &mut FactSet, id: ObjectId) {
    let drawn = facts
        .iter()
        .any(|f| matches!(f, Fact::Animation { id: o, .. } if *o == id));
    if drawn {
        facts.remove(&Fact::Empty { id });
    } else if facts.contains(&Fact::Empty { id }) {
        facts.retain(|f| f.is_empty_fact() || !f.mentions(id));
    }
}

fn integrate(facts: &mut FactSet, written: &BTreeSet<Slot>, grid: Grid) {
    #[derive(Default)]
    struct Body {
        extent: Option<(u32, u32)>,
        x: Option<i32>,
        y: Option<i32>,
        vx: i32,
        vy: i32,
    }
    let mut bodies: BTreeMap<ObjectId, Body> = BTreeMap::new();
    for fact in facts.iter() {
        let Some(id) = fact.object() else { continue };
        let body = bodies.entry(id).or_default();
        match fact {
            Fact::Animation { width, height, .. } => body.extent = Some((*width, *height)),
            Fact::PositionX { value, .. } => body.x = Some(*value),
            Fact::PositionY { value, .. } => body.y = Some(*value),
            Fact::VelocityX { value, .. } => body.vx = *value,
            Fact::VelocityY { value, .. } => body.vy = *value,
            _ => {}
        }
    }

    let mut footprints = Vec::new();
    for (id, body) in &bodies {
        let Some((width, height)) = body.extent else {
            continue;
        };
        let slot = |kind| Slot {
            kind,
            subject: crate::fact::Subject::Object(*id),
        };
        let mut x = body.x;
        let mut y = body.y;
        if let Some(old) = x {
            if !written.contains(&slot(FactKind::PositionX)) {
                let new = grid.clamp_x(old.saturating_add(body.vx));
                facts.remove(&Fact::PositionX {
                    id: *id,
                    value: old,
                });
                facts.insert(Fact::PositionX {
                    id: *id,
                    value: new,
                });
                x = Some(new);
            }
        }
        if let Some(old) = y {
            if !written.contains(&slot(FactKind::PositionY)) {
                let new = grid.clamp_y(old.saturating_add(body.vy));
                facts.remove(&Fact::PositionY {
                    id: *id,
                    value: old,
                });
                facts.insert(Fact::PositionY {
                    id: *id,
                    value: new,
                });
                y = Some(new);
            }
        }
        if let (Some(x), Some(y)) = (x, y) {
            footprints.push((
                *id,
                Footprint {
                    x,
                    y,
                    width,
                    height,
                },
            ));
        }
    }

    facts.retain(|f| !matches!(f, Fact::RelationshipX { .. } | Fact::RelationshipY { .. }));
    facts.extend(relationship_facts(&footprints));
}

/// Replaces the input facts of `predicted` with those of `actual`.
///
/// Button state is supplied by the player, not produced by rules, so a
/// prediction is judged on the world state only.
pub fn with_inputs_of(predicted: &FactSet, actual: &FactSet) -> FactSet {
    let mut out: FactSet = predicted
        .iter()
        .filter(|f| f.kind() != FactKind::Variable)
        .cloned()
        .collect();
    out.extend(
        actual
            .iter()
            .filter(|f| f.kind() == FactKind::Variable)
            .cloned(),
    );
    out
}

/// Predicts `next` from `current` and measures the miss.
pub fn transition_distance(
    engine: &Engine,
    current: &FactSet,
    next: &FactSet,
    dynamics: &Dynamics,
) -> Distance {
    let predicted = predict_facts(engine, current, dynamics).facts;
    frame_distance(&with_inputs_of(&predicted, next), next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub raw: usize,
    pub normalized: f64,
}

/// Symmetric-difference distance between two fact sets, raw and normalized
/// by the combined size (`0/0` is `0`).
pub fn frame_distance(predicted: &FactSet, actual: &FactSet) -> Distance {
    let raw = predicted.symmetric_difference_len(actual);
    let total = predicted.len() + actual.len();
    let normalized = if total == 0 {
        0.0
    } else {
        raw as f64 / total as f64
    };
    Distance { raw, normalized }
}
