use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ordered_steps::dp::AssignmentMode;
use ordered_steps::eval::{
    corpus_stats, infer, mean_average_precision, recall, uniform_baseline, GroundTruth, Prediction,
};
use ordered_steps::io::{self, SideInput};
use ordered_steps::par::{self, Exec};
use ordered_steps::synth::{generate_synthetic, write_corpus, SyntheticSpec};
use ordered_steps::task::{Granularity, TaskSet};
use ordered_steps::text::{text_windows, TextParams, DEFAULT_HALF_WIDTH_SEC, DEFAULT_WINDOW_WORDS};
use ordered_steps::trainer::{train, TrainConfig, TrainMode, TrainingVideo};
use ordered_steps::{Error, Result};

#[derive(Parser)]
#[command(name = "ordered-steps", version, about = "Weakly supervised step localization in instructional videos")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn narration transcripts into per-step constraint windows.
    TextConstraints {
        #[arg(long)]
        tasks: PathBuf,
        /// Directory of `<task>/<video>.txt` transcripts.
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of `<task>/<video>.ctft` features used to clip windows
        /// to the video length.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_WINDOW_WORDS)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_HALF_WIDTH_SEC)]
        half_width: f64,
    },
    /// Train component classifiers from a manifest of videos.
    Train {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Simple)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = GranularityArg::Component)]
        granularity: GranularityArg,
        #[arg(long)]
        no_text_constraints: bool,
        #[arg(long, default_value_t = 30)]
        init_epochs: usize,
        #[arg(long, default_value_t = 30)]
        outer: usize,
        #[arg(long, default_value_t = 1)]
        inner_epochs: usize,
        #[arg(long, default_value_t = 1e-5)]
        lr: f64,
        #[arg(long, default_value_t = 0.5)]
        dropout: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Let each step cover a contiguous run of segments.
        #[arg(long)]
        runs: bool,
        #[arg(long, default_value_t = DEFAULT_WINDOW_WORDS)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_HALF_WIDTH_SEC)]
        half_width: f64,
        /// Write the objective after every alternation here.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Process videos one at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Predict one segment per step for unseen videos.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        /// A feature file, or a directory of `<task>/<video>.ctft`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Task of a single feature file. Defaults to its parent directory name.
        #[arg(long)]
        task: Option<String>,
    },
    /// Score predictions against annotations.
    Eval {
        /// Directory of `<task>/<video>.pred`.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of `<task>/<video>.tsv`.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::Recall)]
        metric: MetricArg,
    },
    /// Generate a synthetic corpus from a JSON spec.
    GenSynth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Simple,
    Majorize,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Component,
    SharedStep,
    TaskStep,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Recall,
    Map,
    Stats,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Component => Granularity::Component,
            GranularityArg::SharedStep => Granularity::SharedStep,
            GranularityArg::TaskStep => Granularity::TaskStep,
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Files `dir/<sub>/<name>.<ext>`, sorted, as `(sub, stem, path)`.
fn nested_files(dir: &Path, ext: &str) -> Result<Vec<(String, String, PathBuf)>> {
    let mut out = Vec::new();
    for sub in fs::read_dir(dir).map_err(io_error(dir))? {
        let sub = sub.map_err(io_error(dir))?.path();
        if !sub.is_dir() {
            continue;
        }
        let group = sub.file_name().unwrap().to_string_lossy().into_owned();
        for file in fs::read_dir(&sub).map_err(io_error(&sub))? {
            let path = file.map_err(io_error(&sub))?.path();
            if path.extension().is_some_and(|e| e == ext) {
                let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
                out.push((group.clone(), stem, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn task_index(tasks: &TaskSet, id: &str) -> Result<usize> {
    tasks
        .index_of(id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown task `{id}`")))
}

fn text_constraints(
    tasks: &Path,
    transcripts: &Path,
    out: &Path,
    features: Option<&Path>,
    params: TextParams,
) -> Result<()> {
    let tasks = io::read_tasks(tasks)?;
    let files = nested_files(transcripts, "txt")?;
    for (task_id, video, path) in &files {
        let task = tasks
            .iter()
            .find(|t| &t.id == task_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown task `{task_id}`")))?;
        let transcript = io::read_transcript(path)?;
        let (num_segments, sps) = match features {
            Some(dir) => {
                let x = io::read_features(&dir.join(task_id).join(format!("{video}.ctft")))?;
                (x.len(), x.seconds_per_segment())
            }
            None => {
                let last = transcript.words().last().map_or(0.0, |w| w.1);
                ((last + params.half_width_sec).ceil() as usize + 1, 1.0)
            }
        };
        let windows = text_windows(&transcript, task, num_segments, sps, params)?;
        io::write_constraints(&out.join(task_id).join(format!("{video}.txt")), &windows)?;
    }
    log::info!("wrote {} constraint files", files.len());
    Ok(())
}

struct TrainArgs {
    config: TrainConfig,
    granularity: Granularity,
    text: TextParams,
    history: Option<PathBuf>,
}

fn train_cmd(tasks: &Path, manifest: &Path, out: &Path, args: TrainArgs) -> Result<()> {
    let tasks = TaskSet::new(io::read_tasks(tasks)?, args.granularity)?;
    let entries = io::read_manifest(manifest)?;
    let mut videos = Vec::with_capacity(entries.len());
    for e in &entries {
        let task = task_index(&tasks, &e.task_id)?;
        let features = io::read_features(&e.features)?;
        let k = tasks.task(task).num_steps();
        let windows = match (&e.side, args.config.use_text_constraints) {
            (Some(side), true) => Some(match io::read_side_input(side, k)? {
                SideInput::Constraints(w) => w,
                SideInput::Transcript(tr) => text_windows(
                    &tr,
                    tasks.task(task),
                    features.len(),
                    features.seconds_per_segment(),
                    args.text,
                )?,
            }),
            _ => None,
        };
        videos.push(TrainingVideo {
            task,
            features,
            windows,
        });
    }
    log::info!("training on {} videos, {} components", videos.len(), tasks.vocabulary().len());
    let (bank, history) = train(&videos, &tasks, &args.config)?;
    io::write_model(out, &bank, tasks.vocabulary())?;
    if let Some(path) = args.history {
        let mut text = String::from("iteration\tobjective\n");
        for (i, v) in history.iter().enumerate() {
            let _ = writeln!(text, "{}\t{v}", i + 1);
        }
        fs::write(&path, text).map_err(io_error(&path))?;
    }
    Ok(())
}

fn infer_cmd(model: &Path, tasks: &Path, features: &Path, out: &Path, task: Option<&str>) -> Result<()> {
    let (bank, vocab) = io::read_model(model)?;
    let tasks = TaskSet::with_vocabulary(io::read_tasks(tasks)?, vocab)?;
    let predict = |task_id: &str, feat: &Path, dest: &Path| -> Result<()> {
        let k = task_index(&tasks, task_id)?;
        let x = io::read_features(feat)?;
        let p = infer(&bank, tasks.matrix(k), &x)?;
        io::write_prediction(dest, task_id, &p)
    };
    if features.is_dir() {
        let files = nested_files(features, "ctft")?;
        let jobs: Vec<_> = files
            .iter()
            .filter(|(t, ..)| task.is_none_or(|only| only == t))
            .collect();
        Exec::Parallel.try_map(&jobs, |_, (task_id, video, path)| {
            predict(task_id, path, &out.join(task_id).join(format!("{video}.pred")))
        })?;
        log::info!("wrote {} predictions", jobs.len());
        Ok(())
    } else {
        let task_id = match task {
            Some(t) => t.to_string(),
            None => features
                .parent()
                .and_then(Path::file_name)
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| Error::InvalidInput("cannot infer the task; pass --task".into()))?,
        };
        predict(&task_id, features, out)
    }
}

fn eval_cmd(pred: &Path, gt: &Path, out: &Path, metric: MetricArg) -> Result<()> {
    let mut by_task: BTreeMap<String, Vec<(Prediction, GroundTruth)>> = BTreeMap::new();
    for (_, video, path) in nested_files(pred, "pred")? {
        let p = io::read_prediction(&path)?;
        let ann = gt.join(&p.task_id).join(format!("{video}.tsv"));
        let g = io::read_annotation(&ann, p.prediction.num_steps())?;
        by_task.entry(p.task_id).or_default().push((p.prediction, g));
    }
    if by_task.is_empty() {
        return Err(Error::InvalidInput(format!("no predictions under {}", pred.display())));
    }
    let split = |rows: &[(Prediction, GroundTruth)]| -> (Vec<Prediction>, Vec<GroundTruth>) {
        rows.iter().cloned().unzip()
    };
    let num_segments = |p: &Prediction| -> Result<usize> {
        p.scores()
            .map(|s| s.rows())
            .ok_or_else(|| Error::InvalidInput("prediction has no score matrix".into()))
    };

    let mut report = String::from("metric\ttask\tvalue\n");
    let mut row = |metric: &str, task: &str, value: f64| {
        let _ = writeln!(report, "{metric}\t{task}\t{value}");
    };
    let all: Vec<(Prediction, GroundTruth)> = by_task.values().flatten().cloned().collect();
    match metric {
        MetricArg::Recall => {
            for (task, rows) in by_task.iter().map(|(t, r)| (t.as_str(), r.as_slice())).chain([("all", all.as_slice())]) {
                let (preds, gts) = split(rows);
                row("recall", task, recall(&preds, &gts)?);
                let uniform = preds
                    .iter()
                    .map(|p| uniform_baseline(num_segments(p)?, p.num_steps()))
                    .collect::<Result<Vec<_>>>();
                if let Ok(uniform) = uniform {
                    row("uniform_recall", task, recall(&uniform, &gts)?);
                }
            }
        }
        MetricArg::Map => {
            let mut maps = Vec::new();
            for (task, rows) in &by_task {
                let (preds, gts) = split(rows);
                let v = mean_average_precision(&preds, &gts)?;
                maps.push(v);
                row("map", task, v);
            }
            row("map", "all", maps.iter().sum::<f64>() / maps.len() as f64);
        }
        MetricArg::Stats => {
            for (task, rows) in by_task.iter().map(|(t, r)| (t.as_str(), r.as_slice())).chain([("all", all.as_slice())]) {
                let videos = rows
                    .iter()
                    .map(|(p, g)| Ok((g, num_segments(p)?, p.seconds_per_segment())))
                    .collect::<Result<Vec<_>>>()?;
                let s = corpus_stats(&videos)?;
                row("background_fraction", task, s.background_fraction);
                row("missing_step_fraction", task, s.missing_step_fraction);
                if let Some(oc) = s.mean_order_consistency {
                    row("order_consistency", task, oc);
                }
            }
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    fs::write(out, report).map_err(io_error(out))
}

fn gen_synth(spec: &Path, out: &Path) -> Result<()> {
    let spec = SyntheticSpec::read(spec)?;
    let corpus = generate_synthetic(&spec)?;
    write_corpus(out, &corpus)?;
    log::info!("wrote {} videos of {} tasks", corpus.videos.len(), corpus.tasks.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    par::configure_threads_from_env()?;
    match cli.command {
        Command::TextConstraints {
            tasks,
            transcripts,
            out,
            features,
            window,
            half_width,
        } => text_constraints(
            &tasks,
            &transcripts,
            &out,
            features.as_deref(),
            TextParams {
                window,
                half_width_sec: half_width,
            },
        ),
        Command::Train {
            tasks,
            manifest,
            out,
            mode,
            granularity,
            no_text_constraints,
            init_epochs,
            outer,
            inner_epochs,
            lr,
            dropout,
            batch_size,
            seed,
            runs,
            window,
            half_width,
            history,
            sequential,
        } => {
            let config = TrainConfig {
                mode: match mode {
                    ModeArg::Simple => TrainMode::Simple,
                    ModeArg::Majorize => TrainMode::Majorize,
                },
                init_epochs,
                outer_iterations: outer,
                inner_epochs,
                learning_rate: lr,
                batch_size,
                dropout,
                use_text_constraints: !no_text_constraints,
                assignment_mode: if runs {
                    AssignmentMode::Runs
                } else {
                    AssignmentMode::SingleFrame
                },
                seed,
                exec: if sequential { Exec::Sequential } else { Exec::Parallel },
            };
            let args = TrainArgs {
                config,
                granularity: granularity.into(),
                text: TextParams {
                    window,
                    half_width_sec: half_width,
                },
                history,
            };
            train_cmd(&tasks, &manifest, &out, args)
        }
        Command::Infer {
            model,
            tasks,
            features,
            out,
            task,
        } => infer_cmd(&model, &tasks, &features, &out, task.as_deref()),
        Command::Eval {
            pred,
            gt,
            out,
            metric,
        } => eval_cmd(&pred, &gt, &out, metric),
        Command::GenSynth { spec, out } => gen_synth(&spec, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
