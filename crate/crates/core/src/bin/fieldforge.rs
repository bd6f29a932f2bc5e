use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fieldforge::cli::{
    cmd_ablate_occ, cmd_eval, cmd_mask_study, cmd_render, cmd_train, read_config_file, resolve, CliError, EvalSplit, RunSpec, TrainOptions,
};

#[derive(Parser)]
#[command(name = "fieldforge", version, about = "Few-shot radiance fields with frequency and occlusion regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Named preset (fixture3, dtu3, llff3, blender8, ...).
    #[arg(long)]
    preset: Option<String>,
    /// key=value file or a run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of input views; also picks the curriculum unless one is given.
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long = "occ-weight")]
    occ_weight: Option<f64>,
    /// Curriculum fraction of total iterations.
    #[arg(long)]
    curriculum: Option<f64>,
    #[arg(long)]
    fixture: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunSpec, CliError> {
        let file = match &self.config {
            Some(p) => read_config_file(p)?,
            None => Vec::new(),
        };
        let mut flags = Vec::new();
        for item in &self.set {
            let (k, v) = item.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
            flags.push((k.to_string(), v.to_string()));
        }
        let named = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("scene.views", self.views.map(|v| v.to_string())),
            ("total_iters", self.iters.map(|v| v.to_string())),
            ("occ.weight", self.occ_weight.map(|v| v.to_string())),
            ("curriculum_fraction", self.curriculum.map(|v| v.to_string())),
            ("scene.fixture", self.fixture.clone()),
        ];
        flags.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        resolve(self.preset.as_deref(), &file, &flags)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Render views of a trained model.
    Render {
        checkpoint: PathBuf,
        #[arg(long, default_value = "renders")]
        out: PathBuf,
        /// train, test, all or a comma-separated id list.
        #[arg(long, default_value = "test")]
        views: String,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Metrics of a trained model.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        views: String,
        /// Restrict metrics to each view's mask.
        #[arg(long)]
        mask: bool,
    },
    /// Static frequency-mask study.
    MaskStudy {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1.0")]
        ratios: Vec<f64>,
        #[arg(long, default_value = "runs/mask-study")]
        out: PathBuf,
    },
    /// Occlusion-term ablation over ranges and near bounds.
    AblateOcc {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long = "ranges", value_delimiter = ',', default_value = "0,5,10,20")]
        ranges: Vec<usize>,
        #[arg(long = "nears", value_delimiter = ',', default_value = "1.0")]
        nears: Vec<f64>,
        #[arg(long, default_value = "runs/ablate-occ")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, resume, quiet } => {
            let spec = config.resolve()?;
            let summary = cmd_train(&spec, &out, &TrainOptions { resume, verbose: !quiet, skip_renders: false })?;
            println!("{} run: {}", summary.label, summary.test_report.summary());
            println!("checkpoint: {}", summary.checkpoint.display());
        }
        Command::Render { checkpoint, out, views, scale } => {
            for p in cmd_render(&checkpoint, &out, &EvalSplit::parse(&views)?, scale)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { checkpoint, out, views, mask } => {
            let report = cmd_eval(&checkpoint, &out, &EvalSplit::parse(&views)?, mask)?;
            print!("{}", report.to_csv());
            println!("{}", report.summary());
        }
        Command::MaskStudy { config, ratios, out } => {
            println!("ratio,psnr");
            for (r, p) in cmd_mask_study(&config.resolve()?, &ratios, &out)? {
                println!("{r},{p:.6}");
            }
        }
        Command::AblateOcc { config, ranges, nears, out } => {
            let rows = cmd_ablate_occ(&config.resolve()?, &ranges, &nears, &out)?;
            println!("near,range,psnr,near_density");
            for r in rows {
                let m = r.range.map_or("off".to_string(), |m| m.to_string());
                println!("{},{m},{:.6},{:.6}", r.near, r.psnr, r.near_density);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
