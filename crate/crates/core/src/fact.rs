//! Frames, objects, inputs and the fact language the learner observes.
//!
//! A [`Frame`] is what the user draws: sprites placed on a grid plus the
//! button state for that instant. [`extract_facts`] turns a frame into a
//! [`FactSet`], the unit both the learner and the runtime work on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_WIDTH: u32 = 12;
pub const DEFAULT_GRID_HEIGHT: u32 = 9;
pub const DEFAULT_VMAX: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub width: u32,
    pub height: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            width: DEFAULT_GRID_WIDTH,
            height: DEFAULT_GRID_HEIGHT,
        }
    }
}

impl Grid {
    pub fn new(width: u32, height: u32) -> Self {
        Grid { width, height }
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as i64) < self.width as i64 && (y as i64) < self.height as i64
    }

    pub fn clamp_x(&self, x: i32) -> i32 {
        x.clamp(0, self.width.max(1) as i32 - 1)
    }

    pub fn clamp_y(&self, y: i32) -> i32 {
        y.clamp(0, self.height.max(1) as i32 - 1)
    }
}

/// A sprite and its extent in grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpriteRef {
    pub name: String,
    pub width: u32,
    pub height: u32,
}

impl SpriteRef {
    pub fn new(name: impl Into<String>, width: u32, height: u32) -> Self {
        SpriteRef {
            name: name.into(),
            width,
            height,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.name.is_empty() {
            return Err("sprite name is empty".into());
        }
        if self.width == 0 || self.height == 0 {
            return Err(format!("sprite '{}' has a zero extent", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GameObject {
    pub id: ObjectId,
    pub sprite: SpriteRef,
    pub x: i32,
    pub y: i32,
    #[serde(default)]
    pub vx: i32,
    #[serde(default)]
    pub vy: i32,
    /// Velocity was set by the user and must survive velocity derivation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub velocity_locked: bool,
}

impl GameObject {
    pub fn new(id: u32, sprite: SpriteRef, x: i32, y: i32) -> Self {
        GameObject {
            id: ObjectId(id),
            sprite,
            x,
            y,
            vx: 0,
            vy: 0,
            velocity_locked: false,
        }
    }

    /// Pins a user-chosen velocity on the object.
    pub fn with_velocity(mut self, vx: i32, vy: i32) -> Self {
        self.vx = vx;
        self.vy = vy;
        self.velocity_locked = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Button {
    Space,
    Up,
    Down,
    Left,
    Right,
}

pub const BUTTONS: [Button; 5] = [
    Button::Space,
    Button::Up,
    Button::Down,
    Button::Left,
    Button::Right,
];

impl Button {
    pub fn name(self) -> &'static str {
        match self {
            Button::Space => "space",
            Button::Up => "up",
            Button::Down => "down",
            Button::Left => "left",
            Button::Right => "right",
        }
    }
}

/// State of the five input buttons. Serialized as a map that must name
/// every button exactly once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Buttons {
    pub space: bool,
    pub up: bool,
    pub down: bool,
    pub left: bool,
    pub right: bool,
}

impl Buttons {
    pub fn none() -> Self {
        Buttons::default()
    }

    pub fn pressed(button: Button) -> Self {
        let mut b = Buttons::default();
        b.set(button, true);
        b
    }

    pub fn get(&self, button: Button) -> bool {
        match button {
            Button::Space => self.space,
            Button::Up => self.up,
            Button::Down => self.down,
            Button::Left => self.left,
            Button::Right => self.right,
        }
    }

    pub fn set(&mut self, button: Button, value: bool) {
        match button {
            Button::Space => self.space = value,
            Button::Up => self.up = value,
            Button::Down => self.down = value,
            Button::Left => self.left = value,
            Button::Right => self.right = value,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputState {
    pub buttons: Buttons,
    #[serde(rename = "prevButtons")]
    pub previous: Buttons,
}

impl InputState {
    pub fn new(buttons: Buttons, previous: Buttons) -> Self {
        InputState { buttons, previous }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Frame {
    pub index: usize,
    pub grid_width: u32,
    pub grid_height: u32,
    pub objects: Vec<GameObject>,
    #[serde(default)]
    pub input: InputState,
}

impl Frame {
    pub fn new(index: usize, grid: Grid) -> Self {
        Frame {
            index,
            grid_width: grid.width,
            grid_height: grid.height,
            objects: Vec::new(),
            input: InputState::default(),
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.grid_width, self.grid_height)
    }

    pub fn with_object(mut self, object: GameObject) -> Self {
        self.objects.push(object);
        self
    }

    pub fn with_buttons(mut self, buttons: Buttons) -> Self {
        self.input.buttons = buttons;
        self
    }

    pub fn object(&self, id: ObjectId) -> Option<&GameObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let malformed = |reason: String| Error::MalformedFrame {
            frame: self.index,
            reason,
        };
        if self.grid_width == 0 || self.grid_height == 0 {
            return Err(malformed("grid has a zero dimension".into()));
        }
        let grid = self.grid();
        let mut seen = BTreeSet::new();
        for object in &self.objects {
            if !seen.insert(object.id) {
                return Err(Error::DuplicateObject {
                    frame: self.index,
                    id: object.id,
                });
            }
            object.sprite.validate().map_err(malformed)?;
            if !grid.contains(object.x, object.y) {
                return Err(malformed(format!(
                    "object {} at ({}, {}) is outside the {}x{} grid",
                    object.id, object.x, object.y, grid.width, grid.height
                )));
            }
        }
        Ok(())
    }
}

/// Fills in velocities from consecutive positions.
///
/// An object's velocity in frame `i` is its displacement from frame `i - 1`.
/// Displacements larger than `vmax` are teleports: the velocity carries over
/// from the previous frame instead. Objects in frame 0 and objects that just
/// appeared start at rest. Locked velocities are left alone.
pub fn derive_velocities(frames: &[Frame], vmax: i32) -> Result<Vec<Frame>> {
    for frame in frames {
        frame.validate()?;
    }
    let mut out: Vec<Frame> = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut next = frame.clone();
        let prev = out.last();
        for object in next.objects.iter_mut().filter(|o| !o.velocity_locked) {
            match prev.and_then(|p| p.object(object.id)) {
                Some(before) => {
                    object.vx = axis_velocity(object.x - before.x, before.vx, vmax);
                    object.vy = axis_velocity(object.y - before.y, before.vy, vmax);
                }
                None => {
                    object.vx = 0;
                    object.vy = 0;
                }
            }
        }
        out.push(next);
    }
    Ok(out)
}

fn axis_velocity(delta: i32, carried: i32, vmax: i32) -> i32 {
    if delta.abs() > vmax {
        carried
    } else {
        delta
    }
}

/// Sets each frame's previous-button state from the frame before it.
pub fn link_previous_inputs(frames: &mut [Frame]) {
    let mut previous = Buttons::none();
    for frame in frames.iter_mut() {
        frame.input.previous = previous;
        previous = frame.input.buttons;
    }
}

/// Input variable name: a button, either as currently held or as held on the
/// previous frame (`"upPrev"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct InputVar {
    pub previous: bool,
    pub button: Button,
}

impl InputVar {
    pub fn current(button: Button) -> Self {
        InputVar {
            previous: false,
            button,
        }
    }

    pub fn previous(button: Button) -> Self {
        InputVar {
            previous: true,
            button,
        }
    }

    /// All ten variables: current buttons first, then the previous-frame ones.
    pub fn all() -> impl Iterator<Item = InputVar> {
        BUTTONS
            .into_iter()
            .map(InputVar::current)
            .chain(BUTTONS.into_iter().map(InputVar::previous))
    }
}

impl fmt::Display for InputVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.button.name())?;
        if self.previous {
            f.write_str("Prev")?;
        }
        Ok(())
    }
}

impl FromStr for InputVar {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (base, previous) = match s.strip_suffix("Prev") {
            Some(base) => (base, true),
            None => (s, false),
        };
        BUTTONS
            .into_iter()
            .find(|b| b.name() == base)
            .map(|button| InputVar { previous, button })
            .ok_or_else(|| format!("unknown input variable '{s}'"))
    }
}

impl TryFrom<String> for InputVar {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<InputVar> for String {
    fn from(value: InputVar) -> Self {
        value.to_string()
    }
}

/// An atomic proposition about one frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum Fact {
    Animation {
        id: ObjectId,
        sprite: String,
        width: u32,
        height: u32,
    },
    VelocityX {
        id: ObjectId,
        value: i32,
    },
    VelocityY {
        id: ObjectId,
        value: i32,
    },
    PositionX {
        id: ObjectId,
        value: i32,
    },
    PositionY {
        id: ObjectId,
        value: i32,
    },
    Variable {
        name: InputVar,
        value: bool,
    },
    RelationshipX {
        a: ObjectId,
        b: ObjectId,
        offset: i32,
    },
    RelationshipY {
        a: ObjectId,
        b: ObjectId,
        offset: i32,
    },
    Empty {
        id: ObjectId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactKind {
    Animation,
    VelocityX,
    VelocityY,
    PositionX,
    PositionY,
    Variable,
    RelationshipX,
    RelationshipY,
    Empty,
}

impl FactKind {
    pub fn name(self) -> &'static str {
        match self {
            FactKind::Animation => "AnimationFact",
            FactKind::VelocityX => "VelocityXFact",
            FactKind::VelocityY => "VelocityYFact",
            FactKind::PositionX => "PositionXFact",
            FactKind::PositionY => "PositionYFact",
            FactKind::Variable => "VariableFact",
            FactKind::RelationshipX => "RelationshipXFact",
            FactKind::RelationshipY => "RelationshipYFact",
            FactKind::Empty => "EmptyFact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subject {
    Object(ObjectId),
    Input(InputVar),
    Pair(ObjectId, ObjectId),
}

/// Identity key of a fact: which variable of the world it talks about.
///
/// An `Empty` fact sits in the animation slot of its object, so an object is
/// either drawn with some sprite or absent, never both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub kind: FactKind,
    pub subject: Subject,
}

impl Slot {
    pub fn object(&self) -> Option<ObjectId> {
        match self.subject {
            Subject::Object(id) => Some(id),
            _ => None,
        }
    }
}

impl Fact {
    pub fn animation(id: u32, sprite: &str, width: u32, height: u32) -> Fact {
        Fact::Animation {
            id: ObjectId(id),
            sprite: sprite.to_string(),
            width,
            height,
        }
    }

    pub fn velocity_x(id: u32, value: i32) -> Fact {
        Fact::VelocityX {
            id: ObjectId(id),
            value,
        }
    }

    pub fn velocity_y(id: u32, value: i32) -> Fact {
        Fact::VelocityY {
            id: ObjectId(id),
            value,
        }
    }

    pub fn position_x(id: u32, value: i32) -> Fact {
        Fact::PositionX {
            id: ObjectId(id),
            value,
        }
    }

    pub fn position_y(id: u32, value: i32) -> Fact {
        Fact::PositionY {
            id: ObjectId(id),
            value,
        }
    }

    pub fn variable(name: &str, value: bool) -> Fact {
        Fact::Variable {
            name: name.parse().expect("known input variable"),
            value,
        }
    }

    pub fn relationship_x(a: u32, b: u32, offset: i32) -> Fact {
        Fact::RelationshipX {
            a: ObjectId(a),
            b: ObjectId(b),
            offset,
        }
    }

    pub fn relationship_y(a: u32, b: u32, offset: i32) -> Fact {
        Fact::RelationshipY {
            a: ObjectId(a),
            b: ObjectId(b),
            offset,
        }
    }

    pub fn empty(id: u32) -> Fact {
        Fact::Empty { id: ObjectId(id) }
    }

    pub fn kind(&self) -> FactKind {
        match self {
            Fact::Animation { .. } => FactKind::Animation,
            Fact::VelocityX { .. } => FactKind::VelocityX,
            Fact::VelocityY { .. } => FactKind::VelocityY,
            Fact::PositionX { .. } => FactKind::PositionX,
            Fact::PositionY { .. } => FactKind::PositionY,
            Fact::Variable { .. } => FactKind::Variable,
            Fact::RelationshipX { .. } => FactKind::RelationshipX,
            Fact::RelationshipY { .. } => FactKind::RelationshipY,
            Fact::Empty { .. } => FactKind::Empty,
        }
    }

    pub fn slot(&self) -> Slot {
        let (kind, subject) = match self {
            Fact::Empty { id } => (FactKind::Animation, Subject::Object(*id)),
            Fact::Variable { name, .. } => (FactKind::Variable, Subject::Input(*name)),
            Fact::RelationshipX { a, b, .. } | Fact::RelationshipY { a, b, .. } => {
                (self.kind(), Subject::Pair(*a, *b))
            }
            Fact::Animation { id, .. }
            | Fact::VelocityX { id, .. }
            | Fact::VelocityY { id, .. }
            | Fact::PositionX { id, .. }
            | Fact::PositionY { id, .. } => (self.kind(), Subject::Object(*id)),
        };
        Slot { kind, subject }
    }

    /// The single object this fact is about, if any.
    pub fn object(&self) -> Option<ObjectId> {
        self.slot().object()
    }

    pub fn is_empty_fact(&self) -> bool {
        matches!(self, Fact::Empty { .. })
    }

    /// Integer payload of velocity, position and relationship facts.
    pub fn numeric_value(&self) -> Option<i32> {
        match self {
            Fact::VelocityX { value, .. }
            | Fact::VelocityY { value, .. }
            | Fact::PositionX { value, .. }
            | Fact::PositionY { value, .. } => Some(*value),
            Fact::RelationshipX { offset, .. } | Fact::RelationshipY { offset, .. } => {
                Some(*offset)
            }
            _ => None,
        }
    }

    /// Mentions `id`, either as the subject or as one side of a relationship.
    pub fn mentions(&self, id: ObjectId) -> bool {
        match self.slot().subject {
            Subject::Object(o) => o == id,
            Subject::Pair(a, b) => a == id || b == id,
            Subject::Input(_) => false,
        }
    }
}

/// A set of facts with deterministic iteration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactSet(BTreeSet<Fact>);

impl FactSet {
    pub fn new() -> Self {
        FactSet(BTreeSet::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.0.contains(fact)
    }

    pub fn insert(&mut self, fact: Fact) -> bool {
        self.0.insert(fact)
    }

    pub fn remove(&mut self, fact: &Fact) -> bool {
        self.0.remove(fact)
    }

    pub fn retain(&mut self, f: impl FnMut(&Fact) -> bool) {
        self.0.retain(f)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fact> + '_ {
        self.0.iter()
    }

    pub fn is_subset(&self, other: &FactSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn intersection(&self, other: &FactSet) -> FactSet {
        FactSet(self.0.intersection(&other.0).cloned().collect())
    }

    /// `|self \ other| + |other \ self|`.
    pub fn symmetric_difference_len(&self, other: &FactSet) -> usize {
        self.0.symmetric_difference(&other.0).count()
    }

    /// Facts keyed by slot. When a set holds several facts for one slot the
    /// last in set order wins; extracted sets never do.
    pub fn by_slot(&self) -> BTreeMap<Slot, &Fact> {
        self.0.iter().map(|f| (f.slot(), f)).collect()
    }

    pub fn get(&self, slot: &Slot) -> Option<&Fact> {
        self.0.iter().find(|f| f.slot() == *slot)
    }

    /// Object ids with an `Animation` fact, i.e. the objects present.
    pub fn present_objects(&self) -> BTreeSet<ObjectId> {
        self.0
            .iter()
            .filter_map(|f| match f {
                Fact::Animation { id, .. } => Some(*id),
                _ => None,
            })
            .collect()
    }

    pub fn into_inner(self) -> BTreeSet<Fact> {
        self.0
    }
}

impl FromIterator<Fact> for FactSet {
    fn from_iter<I: IntoIterator<Item = Fact>>(iter: I) -> Self {
        FactSet(iter.into_iter().collect())
    }
}

impl Extend<Fact> for FactSet {
    fn extend<I: IntoIterator<Item = Fact>>(&mut self, iter: I) {
        self.0.extend(iter)
    }
}

impl<'a> IntoIterator for &'a FactSet {
    type Item = &'a Fact;
    type IntoIter = std::collections::btree_set::Iter<'a, Fact>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl IntoIterator for FactSet {
    type Item = Fact;
    type IntoIter = std::collections::btree_set::IntoIter<Fact>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

/// Axis-aligned footprint of a placed sprite, used for contact tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Footprint {
    pub x: i32,
    pub y: i32,
    pub width: u32,
    pub height: u32,
}

impl Footprint {
    /// Chebyshev gap between the two boxes in cells; 0 when they overlap.
    fn gap(&self, other: &Footprint) -> i32 {
        let gap_axis = |a: i32, wa: u32, b: i32, wb: u32| {
            let a_end = a + wa as i32 - 1;
            let b_end = b + wb as i32 - 1;
            (b - a_end).max(a - b_end).max(0)
        };
        gap_axis(self.x, self.width, other.x, other.width).max(gap_axis(
            self.y,
            self.height,
            other.y,
            other.height,
        ))
    }

    pub fn touches(&self, other: &Footprint) -> bool {
        self.gap(other) <= 1
    }
}

/// Relationship facts for every ordered pair of touching objects.
pub(crate) fn relationship_facts(objects: &[(ObjectId, Footprint)]) -> Vec<Fact> {
    let mut out = Vec::new();
    for (a, fa) in objects {
        for (b, fb) in objects {
            if a == b || !fa.touches(fb) {
                continue;
            }
            out.push(Fact::RelationshipX {
                a: *a,
                b: *b,
                offset: fa.x - fb.x,
            });
            out.push(Fact::RelationshipY {
                a: *a,
                b: *b,
                offset: fa.y - fb.y,
            });
        }
    }
    out
}

/// Translates a frame into its fact set.
///
/// `universe` lists every object id that occurs anywhere in the
/// demonstration; ids absent from this frame produce an `Empty` fact.
pub fn extract_facts(frame: &Frame, universe: &BTreeSet<ObjectId>) -> FactSet {
    let mut facts = FactSet::new();
    for o in &frame.objects {
        let id = o.id;
        facts.insert(Fact::Animation {
            id,
            sprite: o.sprite.name.clone(),
            width: o.sprite.width,
            height: o.sprite.height,
        });
        facts.insert(Fact::VelocityX { id, value: o.vx });
        facts.insert(Fact::VelocityY { id, value: o.vy });
        facts.insert(Fact::PositionX { id, value: o.x });
        facts.insert(Fact::PositionY { id, value: o.y });
    }
    for name in InputVar::all() {
        let state = if name.previous {
            &frame.input.previous
        } else {
            &frame.input.buttons
        };
        facts.insert(Fact::Variable {
            name,
            value: state.get(name.button),
        });
    }
    for id in universe {
        if frame.object(*id).is_none() {
            facts.insert(Fact::Empty { id: *id });
        }
    }
    let footprints: Vec<(ObjectId, Footprint)> = frame
        .objects
        .iter()
        .map(|o| {
            (
                o.id,
                Footprint {
                    x: o.x,
                    y: o.y,
                    width: o.sprite.width,
                    height: o.sprite.height,
                },
            )
        })
        .collect();
    facts.extend(relationship_facts(&footprints));
    facts
}

/// Rebuilds the visible objects described by a fact set. Objects need an
/// `Animation` fact to be drawn; missing coordinates default to zero.
pub fn render_objects(facts: &FactSet) -> Vec<GameObject> {
    let mut objects: BTreeMap<ObjectId, GameObject> = BTreeMap::new();
    for fact in facts {
        if let Fact::Animation {
            id,
            sprite,
            width,
            height,
        } = fact
        {
            objects.insert(
                *id,
                GameObject {
                    id: *id,
                    sprite: SpriteRef::new(sprite.clone(), *width, *height),
                    x: 0,
                    y: 0,
                    vx: 0,
                    vy: 0,
                    velocity_locked: false,
                },
            );
        }
    }
    for fact in facts {
        let Some(object) = fact.object().and_then(|id| objects.get_mut(&id)) else {
            continue;
        };
        match fact {
            Fact::VelocityX { value, .. } => object.vx = *value,
            Fact::VelocityY { value, .. } => object.vy = *value,
            Fact::PositionX { value, .. } => object.x = *value,
            Fact::PositionY { value, .. } => object.y = *value,
            _ => {}
        }
    }
    objects.into_values().collect()
}

/// Reads the current and previous button state back out of a fact set.
pub fn input_from_facts(facts: &FactSet) -> InputState {
    let mut input = InputState::default();
    for fact in facts {
        if let Fact::Variable { name, value } = fact {
            if name.previous {
                input.previous.set(name.button, *value);
            } else {
                input.buttons.set(name.button, *value);
            }
        }
    }
    input
}

/// A validated demonstration with velocities and previous inputs filled in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    grid: Grid,
    frames: Vec<Frame>,
}

impl Demonstration {
    /// Validates `frames`, renumbers them from zero, links previous inputs
    /// and derives velocities.
    pub fn prepare(frames: &[Frame], vmax: i32) -> Result<Self> {
        let grid = frames.first().map(Frame::grid).unwrap_or_default();
        let mut frames = frames.to_vec();
        for (i, frame) in frames.iter_mut().enumerate() {
            frame.index = i;
            if frame.grid() != grid {
                return Err(Error::MalformedFrame {
                    frame: i,
                    reason: "grid size differs from frame 0".into(),
                });
            }
        }
        link_previous_inputs(&mut frames);
        let frames = derive_velocities(&frames, vmax)?;
        Ok(Demonstration { grid, frames })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn universe(&self) -> BTreeSet<ObjectId> {
        universe_of(&self.frames)
    }

    pub fn fact_trace(&self) -> FactTrace {
        let universe = self.universe();
        FactTrace {
            grid: self.grid,
            frames: self
                .frames
                .iter()
                .map(|f| extract_facts(f, &universe))
                .collect(),
        }
    }
}

pub fn universe_of(frames: &[Frame]) -> BTreeSet<ObjectId> {
    frames
        .iter()
        .flat_map(|f| f.objects.iter().map(|o| o.id))
        .collect()
}

/// The fact sets of a demonstration, in frame order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactTrace {
    pub grid: Grid,
    pub frames: Vec<FactSet>,
}

impl FactTrace {
    pub fn new(grid: Grid, frames: Vec<FactSet>) -> Self {
        FactTrace { grid, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }
}
