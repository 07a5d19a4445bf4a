//! Project files, engine export and the event log.
//!
//! Projects and engines are pretty-printed JSON documents carrying a
//! `schemaVersion`. Engines can also be exported as an indented text listing
//! meant for people to read.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::engine::{Engine, Rule};
use crate::error::{Error, Result};
use crate::fact::{Demonstration, Fact, Frame, Grid, SpriteRef, BUTTONS};
use crate::learner::LearnerConfig;

pub const SCHEMA_VERSION: u64 = 1;

/// Learner settings a project overrides; unset fields fall back to the
/// defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vmax: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinematics: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_hz: Option<u32>,
}

impl ConfigOverrides {
    pub fn is_empty(&self) -> bool {
        *self == ConfigOverrides::default()
    }

    pub fn apply(&self, base: LearnerConfig) -> LearnerConfig {
        LearnerConfig {
            theta: self.theta.unwrap_or(base.theta),
            max_iterations: self.max_iterations.unwrap_or(base.max_iterations),
            vmax: self.vmax.unwrap_or(base.vmax),
            kinematics: self.kinematics.unwrap_or(base.kinematics),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Project {
    pub name: String,
    pub grid: Grid,
    pub sprites: Vec<SpriteRef>,
    pub frames: Vec<Frame>,
    pub engine: Option<Engine>,
    pub config_overrides: ConfigOverrides,
}

impl Project {
    pub fn new(name: impl Into<String>, grid: Grid) -> Self {
        Project {
            name: name.into(),
            grid,
            sprites: Vec::new(),
            frames: Vec::new(),
            engine: None,
            config_overrides: ConfigOverrides::default(),
        }
    }

    /// A project holding `frames`, declaring exactly the sprites they use.
    pub fn from_frames(name: impl Into<String>, frames: Vec<Frame>) -> Self {
        let grid = frames.first().map(Frame::grid).unwrap_or_default();
        let mut project = Project::new(name, grid);
        project.frames = frames;
        project.declare_used_sprites();
        project
    }

    /// Adds every sprite used by a frame to the declared set.
    pub fn declare_used_sprites(&mut self) {
        let used = self
            .frames
            .iter()
            .flat_map(|f| f.objects.iter().map(|o| o.sprite.clone()));
        for sprite in used {
            if !self.sprites.contains(&sprite) {
                self.sprites.push(sprite);
            }
        }
        self.sprites.sort();
    }

    pub fn config(&self) -> LearnerConfig {
        self.config_overrides.apply(LearnerConfig::default())
    }

    pub fn demonstration(&self) -> Result<Demonstration> {
        Demonstration::prepare(&self.frames, self.config().vmax)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.width == 0 || self.grid.height == 0 {
            return Err(Error::InvalidProject("grid has a zero dimension".into()));
        }
        for (i, sprite) in self.sprites.iter().enumerate() {
            sprite.validate().map_err(Error::InvalidProject)?;
            if self.sprites[..i].iter().any(|s| s.name == sprite.name) {
                return Err(Error::InvalidProject(format!(
                    "sprite '{}' declared twice",
                    sprite.name
                )));
            }
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.index != i {
                return Err(Error::MalformedFrame {
                    frame: i,
                    reason: format!("index {} out of sequence", frame.index),
                });
            }
            if frame.grid() != self.grid {
                return Err(Error::MalformedFrame {
                    frame: i,
                    reason: "grid size differs from the project's".into(),
                });
            }
            frame.validate()?;
            if let Some(o) = frame
                .objects
                .iter()
                .find(|o| !self.sprites.contains(&o.sprite))
            {
                return Err(Error::MalformedFrame {
                    frame: i,
                    reason: format!("object {} uses undeclared sprite '{}'", o.id, o.sprite.name),
                });
            }
        }
        self.config().validate()
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ProjectOut<'a> {
    schema_version: u64,
    name: &'a str,
    grid_width: u32,
    grid_height: u32,
    sprites: &'a [SpriteRef],
    frames: &'a [Frame],
    #[serde(skip_serializing_if = "Option::is_none")]
    engine: Option<&'a Engine>,
    #[serde(skip_serializing_if = "ConfigOverrides::is_empty")]
    config_overrides: &'a ConfigOverrides,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ProjectIn {
    #[allow(dead_code)]
    schema_version: u64,
    name: String,
    grid_width: u32,
    grid_height: u32,
    sprites: Vec<SpriteRef>,
    frames: Vec<Frame>,
    #[serde(default)]
    engine: Option<Engine>,
    #[serde(default)]
    config_overrides: ConfigOverrides,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct VersionProbe {
    schema_version: Option<Value>,
}

/// Checks `schemaVersion` before the document is parsed in full, so that a
/// file from another version reports that rather than a field mismatch.
fn check_version(text: &str) -> Result<()> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    match probe.schema_version {
        None => Err(Error::Schema {
            line: 1,
            column: 1,
            message: "missing field `schemaVersion`".into(),
        }),
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => Ok(()),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(found) => Err(Error::UnsupportedVersion {
                found,
                expected: SCHEMA_VERSION,
            }),
            None => Err(Error::Schema {
                line: 1,
                column: 1,
                message: format!("schemaVersion {n} is not a version number"),
            }),
        },
        Some(other) => Err(Error::Schema {
            line: 1,
            column: 1,
            message: format!("schemaVersion must be a number, got {other}"),
        }),
    }
}

/// Reports a document-level problem found after parsing as a schema error.
fn document_error(err: Error) -> Error {
    match err {
        Error::Schema { .. } | Error::UnsupportedVersion { .. } | Error::Io(_) => err,
        other => Error::Schema {
            line: 0,
            column: 0,
            message: other.to_string(),
        },
    }
}

pub fn project_to_json(project: &Project) -> String {
    let out = ProjectOut {
        schema_version: SCHEMA_VERSION,
        name: &project.name,
        grid_width: project.grid.width,
        grid_height: project.grid.height,
        sprites: &project.sprites,
        frames: &project.frames,
        engine: project.engine.as_ref(),
        config_overrides: &project.config_overrides,
    };
    let mut text = serde_json::to_string_pretty(&out).expect("project serializes");
    text.push('\n');
    text
}

pub fn project_from_json(text: &str) -> Result<Project> {
    check_version(text)?;
    let doc: ProjectIn = serde_json::from_str(text)?;
    let project = Project {
        name: doc.name,
        grid: Grid::new(doc.grid_width, doc.grid_height),
        sprites: doc.sprites,
        frames: doc.frames,
        engine: doc.engine,
        config_overrides: doc.config_overrides,
    };
    project.validate().map_err(document_error)?;
    Ok(project)
}

pub fn save_project(project: &Project, path: &Path) -> Result<()> {
    fs::write(path, project_to_json(project))?;
    Ok(())
}

pub fn load_project(path: &Path) -> Result<Project> {
    project_from_json(&fs::read_to_string(path)?)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EngineOut<'a> {
    schema_version: u64,
    #[serde(flatten)]
    engine: &'a Engine,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct EngineIn {
    #[allow(dead_code)]
    schema_version: u64,
    rules: Vec<Rule>,
    next_rule_id: u32,
}

pub fn export_engine_json(engine: &Engine) -> String {
    let out = EngineOut {
        schema_version: SCHEMA_VERSION,
        engine,
    };
    let mut text = serde_json::to_string_pretty(&out).expect("engine serializes");
    text.push('\n');
    text
}

pub fn import_engine_json(text: &str) -> Result<Engine> {
    check_version(text)?;
    let doc: EngineIn = serde_json::from_str(text)?;
    Engine::from_parts(doc.rules, doc.next_rule_id).map_err(document_error)
}

/// Renders an engine as text: a `RULE:` header per rule, in id order,
/// followed by its conditions indented four spaces.
pub fn export_engine_text(engine: &Engine) -> String {
    let mut rules: Vec<&Rule> = engine.rules().iter().collect();
    rules.sort_by_key(|r| r.id);
    let mut out = String::new();
    for rule in rules {
        let _ = writeln!(
            out,
            "RULE: {} {}->{}",
            rule.id,
            fact_text(&rule.pre),
            fact_text(&rule.post)
        );
        let mut conditions: Vec<&Fact> = rule.conditions.iter().collect();
        conditions.sort_by_key(|f| listing_key(f));
        for fact in conditions {
            let _ = writeln!(out, "    {}", fact_text(fact));
        }
    }
    out
}

fn real(v: impl Into<f64>) -> String {
    format!("{:.1}", v.into())
}

fn velocity(v: i32) -> String {
    if v == 0 {
        "0".into()
    } else {
        real(v)
    }
}

fn fact_text(fact: &Fact) -> String {
    let payload = match fact {
        Fact::Animation {
            id,
            sprite,
            width,
            height,
        } => format!("{id}, '{sprite}', {}, {}", real(*width), real(*height)),
        Fact::VelocityX { id, value } | Fact::VelocityY { id, value } => {
            format!("{id}, {}", velocity(*value))
        }
        Fact::PositionX { id, value } | Fact::PositionY { id, value } => {
            format!("{id}, {}", real(*value))
        }
        Fact::Variable { name, value } => {
            format!("'{name}', {}", if *value { "True" } else { "False" })
        }
        Fact::RelationshipX { a, b, offset } | Fact::RelationshipY { a, b, offset } => {
            format!("{a}, {b}, {}", real(*offset))
        }
        Fact::Empty { id } => id.to_string(),
    };
    format!("{}: [{payload}]", fact.kind().name())
}

/// Listing order for conditions: inputs in button order, then objects from
/// the highest id down (resting velocities, moving velocities, sprite,
/// position), then relationships, then absences.
fn listing_key(fact: &Fact) -> (u8, i64, u8, i64, i64) {
    let button_rank = |b| BUTTONS.iter().position(|x| *x == b).unwrap_or(0) as i64;
    let object = |rank: u8, id: u32| (1, -(id as i64), rank, 0, 0);
    match fact {
        Fact::Variable { name, .. } => (0, name.previous as i64, 0, button_rank(name.button), 0),
        Fact::VelocityY { id, value } => object(if *value == 0 { 0 } else { 2 }, id.0),
        Fact::VelocityX { id, value } => object(if *value == 0 { 1 } else { 3 }, id.0),
        Fact::Animation { id, .. } => object(4, id.0),
        Fact::PositionY { id, .. } => object(5, id.0),
        Fact::PositionX { id, .. } => object(6, id.0),
        Fact::RelationshipX { a, b, .. } => (2, 0, 0, a.0 as i64, b.0 as i64),
        Fact::RelationshipY { a, b, .. } => (2, 0, 1, a.0 as i64, b.0 as i64),
        Fact::Empty { id } => (3, id.0 as i64, 0, 0, 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    FrameEdited,
    PredictionShown,
    PredictionAccepted,
    LearnStarted,
    LearnFinished,
    PlayStarted,
    PlayEnded,
    ProjectSaved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub kind: EventKind,
    #[serde(default)]
    pub payload: Map<String, Value>,
}

/// Appends `record` to the JSON-lines log at `path`, creating it if needed.
pub fn append_event(path: &Path, record: &EventRecord) -> Result<()> {
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(line.as_bytes())?;
    Ok(())
}

/// Reads a JSON-lines event log. Blank lines are skipped.
pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let file = fs::File::open(path)?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        events.push(record);
    }
    Ok(events)
}

/// Number of `frame-edited` events per frame index.
pub fn frame_edit_counts(events: &[EventRecord]) -> BTreeMap<u64, usize> {
    let mut counts = BTreeMap::new();
    for event in events.iter().filter(|e| e.kind == EventKind::FrameEdited) {
        if let Some(frame) = event.payload.get("frame").and_then(Value::as_u64) {
            *counts.entry(frame).or_default() += 1;
        }
    }
    counts
}

/// An append-only log that keeps timestamps non-decreasing even if the
/// wall clock steps backwards.
#[derive(Debug, Clone)]
pub struct EventLog {
    path: PathBuf,
    last: u64,
}

impl EventLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        EventLog {
            path: path.into(),
            last: 0,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&mut self, kind: EventKind, payload: Map<String, Value>) -> Result<EventRecord> {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.last = self.last.max(now);
        let record = EventRecord {
            timestamp: self.last,
            kind,
            payload,
        };
        append_event(&self.path, &record)?;
        Ok(record)
    }
}
