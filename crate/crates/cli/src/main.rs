use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use mechanic::analysis::{
    assign_clusters, elbow_select, encode_rule, fit_gmm, GmmOptions, DEFAULT_K_MAX, RULE_DIMS,
};
use mechanic::engine::Engine;
use mechanic::evaluation::frame_error;
use mechanic::fact::{Buttons, Demonstration};
use mechanic::learner::{learn, LearnerConfig};
use mechanic::persistence::{
    export_engine_json, export_engine_text, import_engine_json, load_project, EventKind, EventLog,
    Project,
};
use mechanic::runtime::run_trace;
use mechanic::service::{serve, HeldButtons, ServeOptions, Session};
use serde_json::json;

/// Learns game mechanics from demonstration frames and plays them back.
#[derive(Parser)]
#[command(name = "mechanic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn an engine from a project's frames.
    Learn {
        /// Project file (.mmproj) holding the demonstration.
        #[arg(long)]
        project: PathBuf,
        /// Where to write the learned engine JSON.
        #[arg(long)]
        out: PathBuf,
        /// Largest prediction error accepted as correct.
        #[arg(long)]
        theta: Option<usize>,
        /// Search iterations allowed per failing transition.
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
        /// Turn off velocity-driven motion between frames.
        #[arg(long = "no-kinematics")]
        no_kinematics: bool,
    },
    /// Score an engine against a reference project, next to the do-nothing baseline.
    Eval {
        /// Engine JSON file.
        #[arg(long)]
        engine: PathBuf,
        /// Reference project file (.mmproj).
        #[arg(long)]
        reference: PathBuf,
        /// Where to write the JSON report.
        #[arg(long)]
        report: PathBuf,
        /// Turn off velocity-driven motion between frames.
        #[arg(long = "no-kinematics")]
        no_kinematics: bool,
    },
    /// Play an engine headlessly from a starting frame with recorded inputs.
    Play {
        /// Engine JSON file.
        #[arg(long)]
        engine: PathBuf,
        /// Project file whose frame starts the run.
        #[arg(long)]
        frame0: PathBuf,
        /// Which frame of the project to start from.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// JSON array of button maps, one per tick, e.g. [{"space": true}, {}].
        #[arg(long)]
        trace: PathBuf,
        /// Where to write the JSON array of played frames.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster the rules of every engine in a directory.
    Cluster {
        /// Directory of *.engine.json files.
        #[arg(long)]
        engines: PathBuf,
        /// Number of clusters, or "auto" to pick one by the elbow method.
        #[arg(long, default_value = "auto")]
        k: String,
        /// Seed for mixture initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the CSV, one row per rule.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve editing sessions over newline-delimited JSON.
    #[command(group(ArgGroup::new("transport").required(true).args(["socket", "stdio"])))]
    Serve {
        /// Unix socket path to listen on.
        #[arg(long)]
        socket: Option<PathBuf>,
        /// Serve a single session on standard input and output.
        #[arg(long)]
        stdio: bool,
        /// Project to open in every new session.
        #[arg(long)]
        project: Option<PathBuf>,
        /// Relearn on its own shortly after frame edits.
        #[arg(long = "auto-relearn")]
        auto_relearn: bool,
    },
    /// Write an engine's rules as a readable listing.
    Export {
        /// Engine JSON file.
        #[arg(long)]
        engine: PathBuf,
        /// Where to write the listing.
        #[arg(long)]
        text: PathBuf,
    },
}

fn event_log() -> Option<EventLog> {
    std::env::var_os("MM_LOG").map(EventLog::new)
}

fn read_engine(path: &Path) -> Result<Engine> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    import_engine_json(&text).with_context(|| format!("{}", path.display()))
}

fn read_project(path: &Path) -> Result<Project> {
    load_project(path).with_context(|| format!("{}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn config_for(project: &Project, no_kinematics: bool) -> LearnerConfig {
    let mut config = project.config();
    if no_kinematics {
        config.kinematics = false;
    }
    config
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Learn {
            project,
            out,
            theta,
            max_iter,
            no_kinematics,
        } => {
            let path = project;
            let project = read_project(&path)?;
            let mut config = config_for(&project, no_kinematics);
            config.theta = theta.unwrap_or(config.theta);
            config.max_iterations = max_iter.unwrap_or(config.max_iterations);
            config.validate()?;
            let mut log = event_log();
            if let Some(log) = &mut log {
                log.record(
                    EventKind::LearnStarted,
                    json_map(json!({ "project": path })),
                )?;
            }
            let demo = project
                .demonstration()
                .with_context(|| format!("{}", path.display()))?;
            let result = learn(&demo.fact_trace(), &config, &Engine::new())?;
            if let Some(log) = &mut log {
                let payload =
                    json!({ "rules": result.engine.len(), "converged": result.converged });
                log.record(EventKind::LearnFinished, json_map(payload))?;
            }
            write(&out, export_engine_json(&result.engine))?;
            println!(
                "{} rules, total error {}, {}",
                result.engine.len(),
                result.total_error,
                if result.converged {
                    "converged"
                } else {
                    "not converged"
                }
            );
        }
        Command::Eval {
            engine,
            reference,
            report,
            no_kinematics,
        } => {
            let engine = read_engine(&engine)?;
            let project = read_project(&reference)?;
            let config = config_for(&project, no_kinematics);
            let result = frame_error(&engine, &project.frames, &config)
                .with_context(|| format!("{}", reference.display()))?;
            write(&report, serde_json::to_string_pretty(&result)? + "\n")?;
            println!(
                "mean error {} (baseline {})",
                result.mean_error, result.baseline_mean_error
            );
        }
        Command::Play {
            engine,
            frame0,
            frame,
            trace,
            out,
        } => {
            let engine = read_engine(&engine)?;
            let project = read_project(&frame0)?;
            if frame >= project.frames.len() {
                bail!(
                    "{}: no frame {frame} (have {})",
                    frame0.display(),
                    project.frames.len()
                );
            }
            let config = project.config();
            let demo = Demonstration::prepare(&project.frames[..=frame], config.vmax)?;
            let text = fs::read_to_string(&trace)
                .with_context(|| format!("cannot read {}", trace.display()))?;
            let inputs: Vec<HeldButtons> = serde_json::from_str(&text).with_context(|| {
                format!("{}: expected an array of button maps", trace.display())
            })?;
            let inputs: Vec<Buttons> = inputs.into_iter().map(Buttons::from).collect();
            let frames = run_trace(&engine, &demo.frames()[frame], &inputs, config);
            write(&out, serde_json::to_string_pretty(&frames)? + "\n")?;
        }
        Command::Cluster {
            engines,
            k,
            seed,
            out,
        } => cluster(&engines, &k, seed, &out)?,
        Command::Serve {
            socket,
            stdio: _,
            project,
            auto_relearn,
        } => {
            let project = match project {
                Some(path) => Some(read_project(&path)?),
                None => None,
            };
            let options = ServeOptions {
                auto_relearn,
                ..ServeOptions::default()
            };
            let new_session = move || {
                let project = project
                    .clone()
                    .unwrap_or_else(|| Project::new("untitled", Default::default()));
                let session = Session::new(project);
                match event_log() {
                    Some(log) => session.with_log(log),
                    None => session,
                }
            };
            match socket {
                Some(path) => mechanic::service::serve_unix(&path, options, new_session)
                    .with_context(|| format!("{}", path.display()))?,
                None => {
                    serve(
                        new_session(),
                        BufReader::new(io::stdin()),
                        io::stdout(),
                        options,
                    )?;
                }
            }
        }
        Command::Export { engine, text } => {
            let engine = read_engine(&engine)?;
            write(&text, export_engine_text(&engine))?;
        }
    }
    Ok(())
}

fn json_map(value: serde_json::Value) -> serde_json::Map<String, serde_json::Value> {
    match value {
        serde_json::Value::Object(map) => map,
        _ => Default::default(),
    }
}

fn cluster(dir: &Path, k: &str, seed: u64, out: &Path) -> Result<()> {
    let k = match k {
        "auto" => None,
        n => Some(
            n.parse::<usize>()
                .with_context(|| format!("--k: expected 'auto' or a number, got '{n}'"))?,
        ),
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".engine.json"))
        .collect();
    paths.sort();

    let mut rows = Vec::new();
    for path in &paths {
        let engine = read_engine(path)?;
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .trim_end_matches(".engine.json")
            .to_string();
        for rule in engine.rules() {
            rows.push((name.clone(), rule.id.0, encode_rule(rule)));
        }
    }
    if rows.is_empty() {
        bail!("{}: no rules found in *.engine.json files", dir.display());
    }
    let data: Vec<Vec<f64>> = rows.iter().map(|(_, _, v)| v.as_slice().to_vec()).collect();
    let model = match k {
        Some(k) => fit_gmm(&data, k, seed, GmmOptions::default())?,
        None => {
            let elbow = elbow_select(&data, DEFAULT_K_MAX, seed)?;
            let k = elbow.k;
            elbow
                .models
                .into_iter()
                .nth(k - 1)
                .expect("elbow fits every k")
        }
    };
    let assignments = assign_clusters(&model, &data);

    let mut writer =
        csv::Writer::from_path(out).with_context(|| format!("cannot write {}", out.display()))?;
    let mut header = vec!["engine".to_string(), "ruleId".to_string()];
    header.extend((0..RULE_DIMS).map(|d| format!("d{d}")));
    header.extend(["cluster".to_string(), "responsibility".to_string()]);
    writer.write_record(&header)?;
    for ((engine, id, vector), a) in rows.iter().zip(&assignments) {
        let mut record = vec![engine.clone(), id.to_string()];
        record.extend(vector.as_slice().iter().map(|x| x.to_string()));
        record.extend([a.cluster.to_string(), a.responsibility.to_string()]);
        writer.write_record(&record)?;
    }
    writer.flush()?;
    println!("{} rules in {} clusters", rows.len(), model.k);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mechanic: {err:#}");
            ExitCode::from(1)
        }
    }
}
