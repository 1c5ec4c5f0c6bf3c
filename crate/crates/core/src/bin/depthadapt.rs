use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use depthadapt_core::dataset::{generate_toy_domain_pair, DatasetManifest, Domain, TOY_DEPTH_CAP};
use depthadapt_core::metrics::{Crop, MetricsReport};
use depthadapt_core::model::{Checkpoint, DepthNet};
use depthadapt_core::trainer::{
    evaluate, key_table, parse_override, RunConfig, TrainConfig, Trainer, LOG_FILE,
};
use depthadapt_core::uncertainty::uncertainty_score;
use depthadapt_core::{Error, Result};

const RUNS_ENV: &str = "DEPTHADAPT_RUNS_DIR";

#[derive(Parser)]
#[command(
    name = "depthadapt",
    version,
    about = "Consistency-regularised domain adaptation for depth estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run config file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted key=value overrides applied after the file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural toy source/target domain pair.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        n_source: usize,
        #[arg(long, default_value_t = 64)]
        n_target: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
    },
    /// Supervised CutMix pretraining on the source domain.
    Pretrain {
        /// Labelled source dataset (directory or manifest file).
        #[arg(long)]
        source: PathBuf,
        /// Continue from a pretraining checkpoint of this run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Joint source/target adaptation from a pretrained checkpoint.
    Adapt {
        #[arg(long)]
        source: PathBuf,
        /// Unlabelled target dataset.
        #[arg(long)]
        target: PathBuf,
        /// Pretrained checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Continue from an adaptation checkpoint of this run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the seven-metric row of a checkpoint on a labelled dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled dataset (directory or manifest file).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cap: Option<f64>,
        #[arg(long)]
        crop: Option<Crop>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the flip-consistency uncertainty score of a checkpoint.
    Uncertainty {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image dataset; labels are not read.
        #[arg(long)]
        images: PathBuf,
    },
    /// Side-by-side table of several runs.
    Report {
        /// Run names below the runs root.
        #[arg(required = true)]
        runs: Vec<String>,
        /// Labelled dataset to evaluate each run's latest checkpoint on.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        cap: Option<f64>,
        #[arg(long)]
        crop: Option<Crop>,
        /// Write input/ground-truth/prediction grids here.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Samples per grid.
        #[arg(long, default_value_t = 4)]
        grid_rows: usize,
    },
}

fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix("ckpt-")
                .and_then(|n| n.parse::<usize>().ok())
                .map(|n| (n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Argument(format!("no checkpoints in {}", dir.display())))
}

fn load_net(path: &Path) -> Result<DepthNet> {
    Checkpoint::load(path)?.to_net()
}

fn check_domain(m: &DatasetManifest, want: Domain, what: &str) -> Result<()> {
    if m.domain != want {
        return Err(Error::Config(format!(
            "{what} manifest is {}, expected {want}",
            m.domain
        )));
    }
    Ok(())
}

fn eval_config(
    cfg: &RunConfig,
    cap: Option<f64>,
    crop: Option<Crop>,
) -> Result<depthadapt_core::metrics::EvalConfig> {
    let mut e = cfg.eval;
    if let Some(c) = cap {
        e.cap = c;
    }
    if let Some(c) = crop {
        e.crop = c;
    }
    e.validate()?;
    Ok(e)
}

fn metric_details(r: &MetricsReport) -> String {
    let mut out: Vec<String> = MetricsReport::COLUMNS
        .iter()
        .zip(r.values())
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    out.push(format!("valid_pixels={}", r.valid_pixel_count));
    out.join(" ")
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            out,
            seed,
            n_source,
            n_target,
            height,
            width,
        } => {
            let pair = generate_toy_domain_pair(&out, seed, n_source, n_target, (height, width))?;
            println!("source={}", pair.source.root.display());
            println!("target={}", pair.target.root.display());
            println!("target_gt={}", pair.target_labels.root.display());
            println!("cap={TOY_DEPTH_CAP}");
        }
        Command::Pretrain {
            source,
            resume,
            cfg,
        } => {
            let run = cfg.load()?;
            let manifest = DatasetManifest::load(&source)?;
            check_domain(&manifest, Domain::Source, "source")?;
            let tc = TrainConfig::pretrain(&run);
            let net = DepthNet::init(run.model, tc.seeds.model)?;
            let mut trainer = Trainer::pretrain(net, manifest.load_all()?, tc)?;
            if let Some(r) = resume {
                trainer = trainer.resume_from(&Checkpoint::load(&r)?)?;
            }
            let dir = runs_root().join(&run.train.name);
            std::fs::write(dir_create(&dir)?.join("config.txt"), run.to_text()).map_err(|e| {
                Error::Io {
                    path: dir.clone(),
                    source: e,
                }
            })?;
            let mut trainer = trainer.with_run_dir(&dir)?;
            trainer.run()?;
            println!("run_dir={}", dir.display());
            println!(
                "checkpoint={}",
                dir.join(format!("ckpt-{}", trainer.epoch())).display()
            );
            println!("checksum={}", trainer.net().checksum());
        }
        Command::Adapt {
            source,
            target,
            init,
            resume,
            cfg,
        } => {
            let run = cfg.load()?;
            let src = DatasetManifest::load(&source)?;
            check_domain(&src, Domain::Source, "source")?;
            let tgt = DatasetManifest::load(&target)?;
            check_domain(&tgt, Domain::Target, "target")?;
            let tc = TrainConfig::adapt(&run);
            let net = match (&init, &resume) {
                (Some(p), _) => Checkpoint::load_expecting(p, &run.model)?.to_net()?,
                (None, Some(_)) => DepthNet::init(run.model, tc.seeds.model)?,
                (None, None) => {
                    return Err(Error::Config(
                        "adapt needs --init <pretrained checkpoint> or --resume".into(),
                    ))
                }
            };
            let mut trainer = Trainer::adapt(net, src.load_all()?, tgt.load_all()?, tc)?;
            if let Some(r) = resume {
                trainer = trainer.resume_from(&Checkpoint::load(&r)?)?;
            }
            let plan = *trainer.plan().expect("adaptation has a plan");
            eprintln!(
                "plan sup_pairs={} sup_images={} unsup_originals={} streams={} forward_batch={}",
                plan.sup_pairs,
                plan.sup_images,
                plan.unsup_originals,
                plan.streams,
                plan.concat_total
            );
            let dir = runs_root().join(&run.train.name);
            std::fs::write(dir_create(&dir)?.join("config.txt"), run.to_text()).map_err(|e| {
                Error::Io {
                    path: dir.clone(),
                    source: e,
                }
            })?;
            let mut trainer = trainer.with_run_dir(&dir)?;
            trainer.run()?;
            println!("run_dir={}", dir.display());
            println!(
                "checkpoint={}",
                dir.join(format!("ckpt-{}", trainer.epoch())).display()
            );
            println!("forward_batch={}", plan.concat_total);
            println!("checksum={}", trainer.net().checksum());
        }
        Command::Evaluate {
            checkpoint,
            data,
            cap,
            crop,
            cfg,
        } => {
            let run = cfg.load()?;
            let ev = eval_config(&run, cap, crop)?;
            let net = load_net(&checkpoint)?;
            let samples = DatasetManifest::load(&data)?.load_all()?;
            let report = evaluate(&net, &samples, &ev)?;
            println!("{}", report.tsv_row());
            eprintln!("{} images={}", metric_details(&report), samples.len());
        }
        Command::Uncertainty { checkpoint, images } => {
            let net = load_net(&checkpoint)?;
            let samples = DatasetManifest::load(&images)?.load_all()?;
            let ims: Vec<_> = samples.into_iter().map(|s| s.image).collect();
            let score = uncertainty_score(&net, &ims)?;
            println!("{}", score.value);
            println!("score={}", score.value);
            println!("n_images={}", score.n_images);
            for (name, v) in net
                .spec()
                .decoder_blocks()
                .iter()
                .zip(&score.per_block_means)
            {
                println!("{name}={v}");
            }
        }
        Command::Report {
            runs,
            data,
            cap,
            crop,
            grid,
            grid_rows,
        } => report(
            &runs,
            data.as_deref(),
            cap,
            crop,
            grid.as_deref(),
            grid_rows,
        )?,
    }
    Ok(())
}

fn dir_create(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(dir)
}

fn last_log_row(dir: &Path) -> Option<Vec<String>> {
    let text = std::fs::read_to_string(dir.join(LOG_FILE)).ok()?;
    text.lines()
        .skip(1)
        .last()
        .map(|l| l.split('\t').map(String::from).collect())
}

fn report(
    runs: &[String],
    data: Option<&Path>,
    cap: Option<f64>,
    crop: Option<Crop>,
    grid: Option<&Path>,
    grid_rows: usize,
) -> Result<()> {
    let root = runs_root();
    let ev = eval_config(&RunConfig::default(), cap, crop)?;
    let samples = match data {
        Some(d) => Some(DatasetManifest::load(d)?.load_all()?),
        None => None,
    };
    let mut header = vec!["run", "checkpoint", "steps", "last_total"];
    if samples.is_some() {
        header.extend(MetricsReport::COLUMNS);
    }
    println!("{}", header.join("\t"));
    for name in runs {
        let dir = root.join(name);
        let ckpt = latest_checkpoint(&dir)?;
        let log = last_log_row(&dir);
        let mut row = vec![
            name.clone(),
            ckpt.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            log.as_ref()
                .map(|r| (r[0].parse::<u64>().unwrap_or(0) + 1).to_string())
                .unwrap_or_else(|| "0".into()),
            log.as_ref()
                .and_then(|r| r.get(6).cloned())
                .unwrap_or_else(|| "-".into()),
        ];
        if let Some(s) = &samples {
            let net = load_net(&ckpt)?;
            row.extend(
                evaluate(&net, s, &ev)?
                    .values()
                    .iter()
                    .map(|v| format!("{v:.6}")),
            );
            if let Some(g) = grid {
                let path = dir_create(g)?.join(format!("{name}.png"));
                write_grid(&net, &s[..grid_rows.min(s.len())], ev.cap as f32, &path)?;
            }
        }
        println!("{}", row.join("\t"));
    }
    Ok(())
}

/// One row per sample: input image, ground truth, prediction (depth as
/// inverse-depth gray levels, black where missing).
fn write_grid(
    net: &DepthNet,
    samples: &[depthadapt_core::dataset::DepthSample],
    cap: f32,
    path: &Path,
) -> Result<()> {
    use ndarray::{s, Array3};
    if samples.is_empty() {
        return Err(Error::Argument("no samples for the grid".into()));
    }
    let (h, w) = (samples[0].height(), samples[0].width());
    let preds = net.predict(&samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
    let mut canvas = Array3::<f32>::zeros((h * samples.len(), w * 3, 3));
    let shade = |d: f32| {
        if d > 0.0 {
            (1.0 / d.min(cap).max(1.0)).sqrt()
        } else {
            0.0
        }
    };
    for (i, (s, p)) in samples.iter().zip(&preds).enumerate() {
        canvas
            .slice_mut(s![i * h..(i + 1) * h, 0..w, ..])
            .assign(&s.image);
        for c in 0..3 {
            canvas
                .slice_mut(s![i * h..(i + 1) * h, w..2 * w, c])
                .assign(&s.depth.mapv(shade));
            canvas
                .slice_mut(s![i * h..(i + 1) * h, 2 * w..3 * w, c])
                .assign(&p.mapv(shade));
        }
    }
    depthadapt_core::dataset::write_image(path, &canvas)
}

fn fail(kind: &str, message: &str) {
    let line = serde_json::json!({"error": kind, "message": message.replace('\n', " ")});
    eprintln!("{line}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let command = Cli::command()
        .after_long_help(key_table())
        .after_help(key_table());
    let matches: ArgMatches = match command.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            fail(
                "usage",
                e.to_string().lines().next().unwrap_or("bad arguments"),
            );
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            fail("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(e.kind(), &e.to_string());
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
