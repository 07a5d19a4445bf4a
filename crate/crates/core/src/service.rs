//! The editing session behind the editor: it holds a project, relearns the
//! engine after frame edits, serves ghost predictions and runs play mode.
//!
//! Clients talk to it with newline-delimited JSON. Each request line is
//! `{"type", "requestId", "payload"}` and gets exactly one response line
//! `{"requestId", "ok", "payload" | "error"}`. The session may also push
//! notification lines `{"event", "payload"}`.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::engine::{predict_facts, Dynamics, Engine};
use crate::error::Error;
use crate::evaluation::frame_error;
use crate::fact::{
    extract_facts, render_objects, universe_of, Buttons, Demonstration, Frame, GameObject,
    InputState,
};
use crate::fixtures;
use crate::learner::learn;
use crate::persistence::{
    export_engine_json, export_engine_text, load_project, project_from_json, save_project,
    EventKind, EventLog, Project,
};
use crate::runtime::{PlaySession, DEFAULT_TICK_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Request {
    #[serde(rename = "type")]
    pub kind: String,
    pub request_id: u64,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// The engine the session still serves, when a learn failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Response {
    /// `None` only when the request line could not be read at all.
    pub request_id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub event: String,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub response: Response,
    pub notifications: Vec<Notification>,
}

#[derive(Debug)]
struct Failure {
    code: &'static str,
    message: String,
    engine: Option<Value>,
}

impl Failure {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
            engine: None,
        }
    }

    fn range(what: &str, index: usize, len: usize) -> Self {
        Failure::new(
            "out-of-range",
            format!("{what} {index} is out of range (have {len})"),
        )
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Schema { .. } | Error::UnsupportedVersion { .. } => "schema",
            Error::Io(_) => "io",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::MalformedFrame { .. } | Error::DuplicateObject { .. } => "invalid-frame",
            _ => "invalid",
        };
        Failure::new(code, err.to_string())
    }
}

type Handled = std::result::Result<(Value, Vec<Notification>), Failure>;

fn args<T: DeserializeOwned>(payload: &Value) -> std::result::Result<T, Failure> {
    let payload = if payload.is_null() {
        json!({})
    } else {
        payload.clone()
    };
    serde_json::from_value(payload).map_err(|e| Failure::new("bad-request", e.to_string()))
}

fn notify(event: &str, payload: Value) -> Notification {
    Notification {
        event: event.into(),
        payload,
    }
}

/// Buttons as clients send them: omitted buttons are released.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeldButtons {
    space: bool,
    up: bool,
    down: bool,
    left: bool,
    right: bool,
}

impl From<HeldButtons> for Buttons {
    fn from(b: HeldButtons) -> Self {
        Buttons {
            space: b.space,
            up: b.up,
            down: b.down,
            left: b.left,
            right: b.right,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadArgs {
    path: Option<PathBuf>,
    fixture: Option<String>,
    project: Option<Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathArgs {
    path: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexArgs {
    index: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameSetArgs {
    index: usize,
    objects: Vec<GameObject>,
    buttons: Option<HeldButtons>,
    #[serde(default)]
    insert: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InputSetArgs {
    index: usize,
    buttons: HeldButtons,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlayStartArgs {
    #[serde(default)]
    frame: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlayInputArgs {
    buttons: HeldButtons,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalArgs {
    fixture: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

struct Play {
    session: PlaySession,
    held: Buttons,
}

/// One client's editing session.
pub struct Session {
    project: Project,
    engine: Engine,
    generation: u64,
    dirty: bool,
    play: Option<Play>,
    log: Option<EventLog>,
}

impl Session {
    pub fn new(project: Project) -> Self {
        let engine = project.engine.clone().unwrap_or_default();
        Session {
            project,
            engine,
            generation: 0,
            dirty: false,
            play: None,
            log: None,
        }
    }

    /// Records session events to a JSON-lines log.
    pub fn with_log(mut self, log: EventLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn project(&self) -> &Project {
        &self.project
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn is_playing(&self) -> bool {
        self.play.is_some()
    }

    pub fn tick_hz(&self) -> u32 {
        self.project
            .config_overrides
            .tick_hz
            .filter(|hz| *hz > 0)
            .unwrap_or(DEFAULT_TICK_HZ)
    }

    /// Whether the engine is stale and there is enough to learn from.
    pub fn relearn_policy(&self) -> bool {
        self.dirty && self.project.frames.len() >= 2
    }

    fn record(&mut self, kind: EventKind, payload: Value) {
        if let Some(log) = &mut self.log {
            let payload = match payload {
                Value::Object(map) => map,
                _ => Map::new(),
            };
            // The log is diagnostic; a full disk must not stop editing.
            let _ = log.record(kind, payload);
        }
    }

    fn summary(&self) -> Value {
        json!({
            "name": self.project.name,
            "gridWidth": self.project.grid.width,
            "gridHeight": self.project.grid.height,
            "frames": self.project.frames.len(),
            "rules": self.engine.len(),
            "generation": self.generation,
            "dirty": self.dirty,
        })
    }

    /// Handles one raw request line.
    pub fn handle_line(&mut self, line: &str) -> Outcome {
        match serde_json::from_str::<Request>(line) {
            Ok(request) => self.handle(&request),
            Err(err) => {
                let request_id = serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("requestId").and_then(Value::as_u64));
                Outcome {
                    response: Response {
                        request_id,
                        ok: false,
                        payload: None,
                        error: Some(ErrorBody {
                            code: "bad-request".into(),
                            message: err.to_string(),
                            engine: None,
                        }),
                    },
                    notifications: Vec::new(),
                }
            }
        }
    }

    pub fn handle(&mut self, request: &Request) -> Outcome {
        let p = &request.payload;
        let result = match request.kind.as_str() {
            "session.status" => args::<Empty>(p).map(|_| (self.summary(), vec![])),
            "project.load" => args(p).and_then(|a| self.load(a)),
            "project.save" => args(p).and_then(|a| self.save(a)),
            "frame.get" => args(p).and_then(|a| self.frame_get(a)),
            "frame.set" => args(p).and_then(|a| self.frame_set(a)),
            "frame.delete" => args(p).and_then(|a| self.frame_delete(a)),
            "input.set" => args(p).and_then(|a| self.input_set(a)),
            "predict.get" => args(p).and_then(|a| self.predict_get(a)),
            "predict.accept" => args(p).and_then(|a| self.predict_accept(a)),
            "learn.run" => args::<Empty>(p).and_then(|_| self.relearn()),
            "engine.export" => args::<Empty>(p).map(|_| (self.export(), vec![])),
            "play.start" => args(p).and_then(|a| self.play_start(a)),
            "play.input" => args(p).and_then(|a| self.play_input(a)),
            "play.tick" => args::<Empty>(p).and_then(|_| self.play_tick()),
            "play.stop" => args::<Empty>(p).and_then(|_| self.play_stop()),
            "eval.run" => args(p).and_then(|a| self.eval(a)),
            other => Err(Failure::new(
                "unknown-type",
                format!("unknown message type '{other}'"),
            )),
        };
        let request_id = Some(request.request_id);
        match result {
            Ok((payload, notifications)) => Outcome {
                response: Response {
                    request_id,
                    ok: true,
                    payload: Some(payload),
                    error: None,
                },
                notifications,
            },
            Err(f) => Outcome {
                response: Response {
                    request_id,
                    ok: false,
                    payload: None,
                    error: Some(ErrorBody {
                        code: f.code.into(),
                        message: f.message,
                        engine: f.engine,
                    }),
                },
                notifications: Vec::new(),
            },
        }
    }

    fn load(&mut self, a: LoadArgs) -> Handled {
        let project = match (a.path, a.fixture, a.project) {
            (Some(path), None, None) => load_project(&path)?,
            (None, Some(name), None) => fixtures::project(&name)
                .ok_or_else(|| Failure::new("not-found", format!("no fixture named '{name}'")))?,
            (None, None, Some(doc)) => project_from_json(&doc.to_string())?,
            _ => {
                return Err(Failure::new(
                    "bad-request",
                    "give exactly one of path, fixture or project",
                ))
            }
        };
        *self = Session {
            log: self.log.take(),
            ..Session::new(project)
        };
        Ok((self.summary(), vec![]))
    }

    fn save(&mut self, a: PathArgs) -> Handled {
        self.project.engine = Some(self.engine.clone());
        save_project(&self.project, &a.path)?;
        self.record(EventKind::ProjectSaved, json!({ "path": a.path }));
        Ok((json!({ "path": a.path }), vec![]))
    }

    fn frame_get(&self, a: IndexArgs) -> Handled {
        let frame = self
            .project
            .frames
            .get(a.index)
            .ok_or_else(|| Failure::range("frame", a.index, self.project.frames.len()))?;
        Ok((json!({ "index": a.index, "frame": frame }), vec![]))
    }

    /// Applies an edit to a copy of the frame list and keeps it only if the
    /// project is still valid.
    fn edit_frames(&mut self, index: usize, edit: impl FnOnce(&mut Vec<Frame>)) -> Handled {
        let mut project = self.project.clone();
        edit(&mut project.frames);
        for (i, f) in project.frames.iter_mut().enumerate() {
            f.index = i;
        }
        project.declare_used_sprites();
        project.validate()?;
        self.project = project;
        self.dirty = true;
        self.record(EventKind::FrameEdited, json!({ "frame": index }));
        let mut summary = self.summary();
        summary["index"] = json!(index);
        Ok((summary, vec![]))
    }

    fn frame_set(&mut self, a: FrameSetArgs) -> Handled {
        let len = self.project.frames.len();
        if a.index > len {
            return Err(Failure::range("frame", a.index, len));
        }
        let mut frame = Frame::new(a.index, self.project.grid);
        frame.objects = a.objects;
        frame.input.buttons = match a.buttons {
            Some(b) => b.into(),
            None if !a.insert && a.index < len => self.project.frames[a.index].input.buttons,
            None => Buttons::none(),
        };
        self.edit_frames(a.index, |frames| {
            if a.insert || a.index == frames.len() {
                frames.insert(a.index, frame);
            } else {
                frames[a.index] = frame;
            }
        })
    }

    fn frame_delete(&mut self, a: IndexArgs) -> Handled {
        let len = self.project.frames.len();
        if a.index >= len {
            return Err(Failure::range("frame", a.index, len));
        }
        self.edit_frames(a.index, |frames| {
            frames.remove(a.index);
        })
    }

    fn input_set(&mut self, a: InputSetArgs) -> Handled {
        let len = self.project.frames.len();
        if a.index >= len {
            return Err(Failure::range("frame", a.index, len));
        }
        self.edit_frames(a.index, |frames| {
            frames[a.index].input.buttons = a.buttons.into()
        })
    }

    /// The frame the engine expects at `index`, predicted from the frame
    /// before it. Frame 0 has nothing before it and is returned as is.
    fn ghost(&self, index: usize) -> std::result::Result<(Frame, Vec<u32>), Failure> {
        let frames = &self.project.frames;
        if index > frames.len() || frames.is_empty() {
            return Err(Failure::range("frame", index, frames.len()));
        }
        if index == 0 {
            return Ok((frames[0].clone(), vec![]));
        }
        let config = self.project.config();
        let demo = Demonstration::prepare(&frames[..index], config.vmax)?;
        let source = &demo.frames()[index - 1];
        let facts = extract_facts(source, &universe_of(frames));
        let dynamics = Dynamics::new(config.kinematics, self.project.grid);
        let predicted = predict_facts(&self.engine, &facts, &dynamics);
        let mut ghost = Frame::new(index, self.project.grid);
        ghost.objects = render_objects(&predicted.facts);
        let buttons = frames
            .get(index)
            .map_or(Buttons::none(), |f| f.input.buttons);
        ghost.input = InputState::new(buttons, source.input.buttons);
        Ok((ghost, predicted.fired.iter().map(|r| r.0).collect()))
    }

    fn predict_get(&mut self, a: IndexArgs) -> Handled {
        let (frame, fired) = self.ghost(a.index)?;
        self.record(EventKind::PredictionShown, json!({ "frame": a.index }));
        Ok((
            json!({ "index": a.index, "frame": frame, "firedRules": fired }),
            vec![],
        ))
    }

    fn predict_accept(&mut self, a: IndexArgs) -> Handled {
        let (ghost, _) = self.ghost(a.index)?;
        let outcome = self.edit_frames(a.index, |frames| {
            if a.index == frames.len() {
                frames.push(ghost);
            } else {
                frames[a.index].objects = ghost.objects;
            }
        })?;
        self.record(EventKind::PredictionAccepted, json!({ "frame": a.index }));
        Ok(outcome)
    }

    /// Learns over the current frames, starting from the served engine.
    fn relearn(&mut self) -> Handled {
        self.record(
            EventKind::LearnStarted,
            json!({ "frames": self.project.frames.len() }),
        );
        let config = self.project.config();
        // Warm-starting keeps relearning cheap, but the search can only
        // generalize a rule, never narrow it again. If a rule was widened by
        // an edit that has since been undone, the warm start can get stuck
        // short of convergence; a cold start over the same frames cannot.
        let attempt = self.project.demonstration().and_then(|demo| {
            let trace = demo.fact_trace();
            let warm = learn(&trace, &config, &self.engine)?;
            if warm.converged || self.engine.is_empty() {
                return Ok((warm, false));
            }
            let cold = learn(&trace, &config, &Engine::new())?;
            Ok(if cold.total_error < warm.total_error {
                (cold, true)
            } else {
                (warm, false)
            })
        });
        let (result, cold_start) = match attempt {
            Ok(result) => result,
            Err(err) => {
                let mut failure = Failure::from(err);
                failure.engine = serde_json::from_str(&export_engine_json(&self.engine)).ok();
                return Err(failure);
            }
        };
        self.engine = result.engine;
        self.generation += 1;
        self.dirty = false;
        let payload = json!({
            "generation": self.generation,
            "converged": result.converged,
            "totalError": result.total_error,
            "rules": self.engine.len(),
            "updates": result.stats.updates,
            "coldStart": cold_start,
        });
        self.record(EventKind::LearnFinished, payload.clone());
        Ok((payload.clone(), vec![notify("learn.finished", payload)]))
    }

    fn export(&self) -> Value {
        let json: Value =
            serde_json::from_str(&export_engine_json(&self.engine)).expect("engine JSON parses");
        json!({ "text": export_engine_text(&self.engine), "json": json })
    }

    fn play_start(&mut self, a: PlayStartArgs) -> Handled {
        let frames = &self.project.frames;
        if a.frame >= frames.len() {
            return Err(Failure::range("frame", a.frame, frames.len()));
        }
        let config = self.project.config();
        let demo = Demonstration::prepare(&frames[..=a.frame], config.vmax)?;
        let start = &demo.frames()[a.frame];
        let session = PlaySession::start(self.engine.clone(), start, &universe_of(frames), config);
        let frame = session.frame();
        self.play = Some(Play {
            session,
            held: Buttons::none(),
        });
        self.record(EventKind::PlayStarted, json!({ "frame": a.frame }));
        let snapshot = json!({ "tick": 0, "frame": frame });
        Ok((
            json!({ "tickHz": self.tick_hz(), "frame": frame }),
            vec![notify("play.frame", snapshot)],
        ))
    }

    fn playing(&mut self) -> std::result::Result<&mut Play, Failure> {
        self.play
            .as_mut()
            .ok_or_else(|| Failure::new("not-playing", "play mode is not running"))
    }

    fn play_input(&mut self, a: PlayInputArgs) -> Handled {
        self.playing()?.held = a.buttons.into();
        Ok((json!({}), vec![]))
    }

    /// Advances play mode one tick with the held buttons.
    fn play_tick(&mut self) -> Handled {
        let play = self.playing()?;
        let frame = play.session.step(play.held);
        let tick = play.session.tick();
        Ok((
            json!({ "tick": tick }),
            vec![notify(
                "play.frame",
                json!({ "tick": tick, "frame": frame }),
            )],
        ))
    }

    fn play_stop(&mut self) -> Handled {
        let play = self
            .play
            .take()
            .ok_or_else(|| Failure::new("not-playing", "play mode is not running"))?;
        let ticks = play.session.tick();
        self.record(EventKind::PlayEnded, json!({ "ticks": ticks }));
        Ok((
            json!({ "ticks": ticks }),
            vec![notify("play.stopped", json!({ "ticks": ticks }))],
        ))
    }

    fn eval(&self, a: EvalArgs) -> Handled {
        let frames = match &a.fixture {
            Some(name) => fixtures::by_name(name)
                .ok_or_else(|| Failure::new("not-found", format!("no fixture named '{name}'")))?,
            None => self.project.frames.clone(),
        };
        let report = frame_error(&self.engine, &frames, &self.project.config())?;
        Ok((
            serde_json::to_value(report).expect("report serializes"),
            vec![],
        ))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    /// Relearn on its own once edits have been quiet for `debounce`.
    pub auto_relearn: bool,
    pub debounce: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            auto_relearn: false,
            debounce: Duration::from_millis(200),
        }
    }
}

enum Event {
    Line(String),
    Tick,
    Closed,
}

fn write_json<W: Write>(out: &mut W, value: &impl Serialize) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

fn write_outcome<W: Write>(out: &mut W, outcome: &Outcome) -> io::Result<()> {
    write_json(out, &outcome.response)?;
    for n in &outcome.notifications {
        write_json(out, n)?;
    }
    Ok(())
}

struct Ticker {
    stop: Arc<AtomicBool>,
}

impl Ticker {
    fn start(hz: u32, events: Sender<Event>) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let period = Duration::from_secs_f64(1.0 / f64::from(hz.max(1)));
        thread::spawn(move || loop {
            thread::sleep(period);
            if flag.load(Ordering::Relaxed) || events.send(Event::Tick).is_err() {
                break;
            }
        });
        Ticker { stop }
    }
}

impl Drop for Ticker {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Runs a session over a line stream until the input closes. Play mode
/// ticks on its own at the project's tick rate while it is running.
pub fn serve<R, W>(
    mut session: Session,
    input: R,
    mut output: W,
    options: ServeOptions,
) -> io::Result<Session>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    let (events, inbox) = mpsc::channel();
    let reader_events = events.clone();
    thread::spawn(move || {
        for line in input.lines() {
            let Ok(line) = line else { break };
            if reader_events.send(Event::Line(line)).is_err() {
                return;
            }
        }
        let _ = reader_events.send(Event::Closed);
    });

    let mut ticker: Option<Ticker> = None;
    let mut last_edit = Instant::now();
    loop {
        match (session.is_playing(), ticker.is_some()) {
            (true, false) => ticker = Some(Ticker::start(session.tick_hz(), events.clone())),
            (false, true) => ticker = None,
            _ => {}
        }
        let pending = options.auto_relearn && session.relearn_policy();
        let event = if pending {
            let wait = options.debounce.saturating_sub(last_edit.elapsed());
            match inbox.recv_timeout(wait) {
                Ok(event) => event,
                Err(RecvTimeoutError::Timeout) => {
                    let notification = match session.relearn() {
                        Ok((_, mut notes)) => notes.remove(0),
                        Err(f) => {
                            // Leave the edit marked clean so a hopeless
                            // demonstration is not retried in a loop.
                            session.dirty = false;
                            notify(
                                "learn.failed",
                                json!({ "code": f.code, "message": f.message }),
                            )
                        }
                    };
                    write_json(&mut output, &notification)?;
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => break,
            }
        } else {
            match inbox.recv() {
                Ok(event) => event,
                Err(_) => break,
            }
        };
        match event {
            Event::Line(line) if line.trim().is_empty() => {}
            Event::Line(line) => {
                let generation = session.generation();
                let was_dirty = session.is_dirty();
                let outcome = session.handle_line(&line);
                if session.is_dirty() && (!was_dirty || session.generation() == generation) {
                    last_edit = Instant::now();
                }
                write_outcome(&mut output, &outcome)?;
            }
            Event::Tick => {
                if let Ok((_, notes)) = session.play_tick() {
                    for n in &notes {
                        write_json(&mut output, n)?;
                    }
                }
            }
            Event::Closed => break,
        }
    }
    Ok(session)
}

/// Listens on a Unix socket; every connection gets its own session built by
/// `new_session`.
#[cfg(unix)]
pub fn serve_unix<F>(path: &Path, options: ServeOptions, new_session: F) -> io::Result<()>
where
    F: Fn() -> Session + Send + Sync + 'static,
{
    use std::os::unix::net::UnixListener;

    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let listener = UnixListener::bind(path)?;
    let new_session = Arc::new(new_session);
    for stream in listener.incoming() {
        let stream = stream?;
        let new_session = Arc::clone(&new_session);
        thread::spawn(move || {
            let Ok(reader) = stream.try_clone() else {
                return;
            };
            let _ = serve(new_session(), io::BufReader::new(reader), stream, options);
        });
    }
    Ok(())
}
