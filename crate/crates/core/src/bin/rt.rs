use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use robot_trajectron::control::{AssistMode, ControllerConfig};
use robot_trajectron::data::{
    generate_dataset, history_features, load_dataset, save_dataset, split, split_with_validation, GenConfig, Trajectory,
};
use robot_trajectron::eval::autonomy::{scripted_autonomy_experiment, AutonomyConfig};
use robot_trajectron::eval::baseline::{train_baseline, VanillaLstm};
use robot_trajectron::eval::intent::{intent_change_experiment, synthesize_intent_trajectories, IntentConfig};
use robot_trajectron::eval::suite::{adefde_suite, adefde_table, autonomy_table, intent_table, write_jsonl};
use robot_trajectron::model::{ModelConfig, RtModel};
use robot_trajectron::predict::{goal_belief, predict_most_likely, propagate_position_mixture};
use robot_trajectron::scene::Scene;
use robot_trajectron::service::{self, read_log, replay_log, replay_positions, AppState, Session};
use robot_trajectron::train::{train, TrainConfig, TrainOutputs};

#[derive(Parser)]
#[command(name = "rt", version, about = "Reach-trajectory prediction and shared-control teleoperation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Adefde,
    Intent,
    Autonomy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Rt,
    Vanilla,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate simulated reaching trajectories.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random observation windows drawn per trajectory and epoch.
        #[arg(long, default_value_t = 4)]
        windows: usize,
        #[arg(long, value_enum, default_value_t = Arch::Rt)]
        arch: Arch,
        /// Per-epoch report, one record per line.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run an evaluation suite.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset whose held-out split is scored (adefde only).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        suite: Suite,
        /// Vanilla LSTM checkpoint to compare against (adefde only).
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        rounds: usize,
        /// Directory for records.jsonl, summary.txt and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the continuation of one recorded trajectory.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        /// Index of the last observed position.
        #[arg(long)]
        t_obs: usize,
        /// Trajectory id inside the file; the first one by default.
        #[arg(long)]
        id: Option<u64>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Serve the teleoperation session over HTTP and websocket.
    Serve {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, env = service::PORT_ENV, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "rt-assist")]
        mode: AssistMode,
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Write the session command log here.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Stream a session log or a recorded trajectory through the control
    /// loop and print every state record.
    Replay {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        traj: PathBuf,
        /// Mode for trajectory files; session logs carry their own.
        #[arg(long, default_value = "rt-assist")]
        mode: AssistMode,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        id: Option<u64>,
    },
}

fn load_scene(path: Option<&Path>) -> anyhow::Result<Scene> {
    match path {
        Some(p) => Scene::load(p).with_context(|| format!("reading scene {}", p.display())),
        None => Ok(Scene::default()),
    }
}

fn load_model(path: &Path) -> anyhow::Result<RtModel> {
    RtModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_data(path: &Path) -> anyhow::Result<Vec<Trajectory>> {
    load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn pick(trajs: Vec<Trajectory>, id: Option<u64>) -> anyhow::Result<Trajectory> {
    match id {
        Some(id) => trajs.into_iter().find(|t| t.id == id).with_context(|| format!("no trajectory with id {id}")),
        None => trajs.into_iter().next().context("trajectory file is empty"),
    }
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().cmd {
        Cmd::GenData { n, seed, out } => {
            let (trajs, discarded) = generate_dataset(&GenConfig { seed, ..GenConfig::default() }, n)?;
            save_dataset(&trajs, &out)?;
            eprintln!("wrote {} trajectories ({discarded} attempts discarded)", trajs.len());
        }
        Cmd::Train {
            data,
            epochs,
            lr,
            batch,
            hidden,
            out,
            seed,
            windows,
            arch,
            report,
        } => {
            let trajs = load_data(&data)?;
            let dt = trajs.first().context("dataset is empty")?.dt;
            let (tr, val, _) = split_with_validation(&trajs);
            let cfg = TrainConfig {
                epochs,
                lr,
                batch,
                seed,
                windows_per_traj: windows,
                ..TrainConfig::default()
            };
            match arch {
                Arch::Rt => {
                    let mcfg = ModelConfig {
                        hidden_size: hidden,
                        dt,
                        ..ModelConfig::default()
                    };
                    let model = RtModel::new(mcfg, seed)?;
                    let outputs = TrainOutputs {
                        checkpoint: Some(out.clone()),
                        report,
                    };
                    let r = train(model, &tr, &val, &cfg, &outputs)?;
                    eprintln!("best epoch {} written to {}", r.best_epoch, out.display());
                }
                Arch::Vanilla => {
                    let model = VanillaLstm::new(hidden, ModelConfig::default().horizon, dt, seed)?;
                    let (m, rep) = train_baseline(model, &tr, &val, &cfg)?;
                    m.save(&out)?;
                    if let Some(p) = report {
                        write_jsonl(&p, &rep)?;
                    }
                    eprintln!("baseline written to {}", out.display());
                }
            }
        }
        Cmd::Eval {
            ckpt,
            data,
            suite,
            baseline,
            scene,
            seed,
            rounds,
            out,
        } => {
            let model = load_model(&ckpt)?;
            let scene = load_scene(scene.as_deref())?;
            if let Some(d) = &out {
                std::fs::create_dir_all(d)?;
            }
            let (table, summary) = match suite {
                Suite::Adefde => {
                    let data = data.context("--data is required for the adefde suite")?;
                    let (_, test) = split(&load_data(&data)?);
                    let base = match &baseline {
                        Some(p) => Some(VanillaLstm::load(p).with_context(|| format!("loading baseline {}", p.display()))?),
                        None => None,
                    };
                    let r = adefde_suite(&model, base.as_ref(), &test, 20, seed)?;
                    if let Some(d) = &out {
                        write_jsonl(&d.join("records.jsonl"), &r.records)?;
                    }
                    (adefde_table(&r), json!({ "windows": r.windows, "rt": r.rt, "baseline": r.baseline }))
                }
                Suite::Intent => {
                    let cfg = IntentConfig { seed, ..IntentConfig::default() };
                    let trajs = synthesize_intent_trajectories(&scene, &cfg)?;
                    let r = intent_change_experiment(&model, &scene, &trajs, &cfg)?;
                    if let Some(d) = &out {
                        write_jsonl(&d.join("records.jsonl"), &trajs)?;
                    }
                    (intent_table(&r), serde_json::to_value(&r)?)
                }
                Suite::Autonomy => {
                    let cfg = AutonomyConfig {
                        rounds,
                        seed,
                        ..AutonomyConfig::default()
                    };
                    let r = scripted_autonomy_experiment(&scene, Some(Arc::new(model)), &cfg)?;
                    if let Some(d) = &out {
                        let recs = r.iter().flat_map(|m| {
                            m.rounds.iter().map(move |x| json!({ "mode": m.mode, "time": x.time, "inputs": x.inputs, "path_length": x.path_length }))
                        });
                        write_jsonl(&d.join("records.jsonl"), recs)?;
                    }
                    let summary: Vec<_> = r
                        .iter()
                        .map(|m| {
                            json!({
                                "mode": m.mode, "completed": m.completed, "discarded": m.discarded,
                                "time_mean": m.time_mean, "time_std": m.time_std,
                                "inputs_mean": m.inputs_mean, "inputs_std": m.inputs_std,
                                "path_mean": m.path_mean, "path_std": m.path_std,
                            })
                        })
                        .collect();
                    (autonomy_table(&r), json!(summary))
                }
            };
            print!("{table}");
            if let Some(d) = &out {
                std::fs::write(d.join("summary.txt"), &table)?;
                std::fs::write(d.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            }
        }
        Cmd::Predict {
            ckpt,
            traj,
            t_obs,
            id,
            scene,
        } => {
            let model = load_model(&ckpt)?;
            let scene = load_scene(scene.as_deref())?;
            let t = pick(load_data(&traj)?, id)?;
            if t_obs < 2 || t_obs >= t.positions.len() {
                bail!("--t-obs must lie in 2..{} for trajectory {}", t.positions.len(), t.id);
            }
            let hist = &t.positions[..=t_obs];
            let origin = hist[t_obs];
            let x = history_features(hist, model.config.dt);
            let rollout = predict_most_likely(&model, &x, origin)?;
            let pm = propagate_position_mixture(&rollout.mixtures, origin, model.config.dt, Some(scene.table_height));
            let belief = goal_belief(&pm, &scene.goal_positions(), scene.table_height)?;
            let goals: Vec<_> = scene
                .goals
                .iter()
                .zip(&belief.probs)
                .zip(&belief.densities)
                .map(|((g, p), d)| json!({ "id": g.id, "pos": g.pos, "prob": p, "density": d }))
                .collect();
            let rec = json!({
                "traj_id": t.id,
                "t_obs": t_obs,
                "pred_path": rollout.positions,
                "goals": goals,
                "low_confidence": belief.low_confidence,
            });
            println!("{rec}");
        }
        Cmd::Serve {
            ckpt,
            port,
            mode,
            scene,
            record,
            host,
        } => {
            if mode == AssistMode::RtAssist && ckpt.is_none() {
                bail!("--ckpt is required for --mode rt-assist");
            }
            let model = match &ckpt {
                Some(p) => Some(Arc::new(load_model(p)?)),
                None => None,
            };
            let scene = load_scene(scene.as_deref())?;
            let session = Session::new(scene, ControllerConfig::default(), mode, model)?;
            let state = AppState::new(session, record)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(state, SocketAddr::new(host, port)))?;
        }
        Cmd::Replay {
            ckpt,
            traj,
            mode,
            scene,
            id,
        } => {
            let model = match &ckpt {
                Some(p) => Some(Arc::new(load_model(p)?)),
                None => None,
            };
            let text = std::fs::read_to_string(&traj).with_context(|| format!("reading {}", traj.display()))?;
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            let is_log = serde_json::from_str::<serde_json::Value>(first)
                .map(|v| v.get("type").is_some())
                .unwrap_or(false);
            let states = if is_log {
                replay_log(&read_log(&text)?, ControllerConfig::default(), model)?
            } else {
                if mode == AssistMode::RtAssist && model.is_none() {
                    bail!("--ckpt is required for --mode rt-assist");
                }
                let t = pick(load_data(&traj)?, id)?;
                replay_positions(&t.positions, load_scene(scene.as_deref())?, ControllerConfig::default(), mode, model)?
            };
            let stdout = std::io::stdout();
            let mut out = std::io::BufWriter::new(stdout.lock());
            for s in states {
                writeln!(out, "{}", serde_json::to_string(&s)?)?;
            }
            out.flush()?;
        }
    }
    Ok(())
}
