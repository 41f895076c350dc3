use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use facegan::synth::SynthConfig;
use facegan_cli::commands::{self, DataArgs, Task};
use facegan_cli::{configure_threads, exit_code, EXIT_OK, EXIT_USAGE};

/// UV position-map GAN for 3D faces.
#[derive(Parser)]
#[command(name = "facegan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic head corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        subjects: usize,
        #[arg(long, default_value_t = 10)]
        modes: usize,
        /// Per-vertex normal noise in millimetres.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Number of labels; each subject appears once per label.
        #[arg(long, default_value_t = 0)]
        labels: usize,
        #[arg(long, default_value_t = 0.0)]
        warp: f64,
        #[arg(long, default_value_t = 6.0)]
        mode_scale: f64,
        #[arg(long, default_value_t = 10.0)]
        label_scale: f64,
        #[arg(long, default_value_t = 45)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align, normalize and rasterize a mesh directory.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory of paired target meshes with the same file names.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        /// labels.csv to carry along.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the autoencoder discriminator.
    Pretrain {
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint at --out.
        #[arg(long)]
        resume: bool,
    },
    /// Adversarial training from a pre-trained discriminator.
    Train {
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from D.ckpt and G.ckpt in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Sample faces from the latent Gaussian.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Gaussian file; fitted on the training split and written here when absent.
        #[arg(long)]
        gaussian: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.85)]
        split: f64,
        #[arg(long)]
        targets: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the generator over aligned meshes.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-split metrics with CED curves.
    Evaluate {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        data: PathBuf,
        /// Generator checkpoint, or `identity`.
        #[arg(long, default_value = "identity")]
        model: String,
        /// Generated meshes for the specificity task.
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long, default_value_t = 0.85)]
        split: f64,
        /// Split seed; defaults to the checkpoint's training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// PCA baseline components; defaults to the model's latent size.
        #[arg(long)]
        pca: Option<usize>,
        #[arg(long)]
        x_max: Option<f64>,
        #[arg(long)]
        fail_threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataOpts {
    /// Preprocessed directory.
    #[arg(long)]
    data: PathBuf,
    /// Train on paired targets (translation).
    #[arg(long)]
    targets: bool,
    /// Condition on labels; inputs are each subject's label-0 mesh.
    #[arg(long)]
    labels: bool,
    /// Fraction of items (or subjects, with labels.csv) used for training.
    #[arg(long, default_value_t = 0.85)]
    split: f64,
}

impl DataOpts {
    fn into_args(self) -> DataArgs {
        DataArgs {
            data: self.data,
            targets: self.targets,
            labels: self.labels,
            split: self.split,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Represent,
    Translate,
    Specificity,
}

fn run(command: Command) -> facegan::Result<()> {
    match command {
        Command::Synth {
            subjects,
            modes,
            noise,
            labels,
            warp,
            mode_scale,
            label_scale,
            grid,
            seed,
            out,
        } => commands::synth(&commands::SynthArgs {
            config: SynthConfig {
                subjects,
                modes,
                noise,
                labels,
                seed,
                grid,
                mode_scale,
                label_scale,
                warp,
            },
            out,
        }),
        Command::Preprocess {
            input,
            targets,
            template,
            landmarks,
            labels,
            res,
            out,
        } => commands::preprocess_dir(&commands::PreprocessArgs {
            input,
            targets,
            template,
            landmarks,
            labels,
            resolution: res,
            out,
        }),
        Command::Pretrain {
            data,
            config,
            out,
            resume,
        } => commands::pretrain(&commands::PretrainArgs {
            data: data.into_args(),
            config,
            out,
            resume,
        }),
        Command::Train {
            data,
            pretrained,
            config,
            out,
            resume,
        } => commands::train(&commands::TrainArgs {
            data: data.into_args(),
            pretrained,
            config,
            out,
            resume,
        }),
        Command::Generate {
            model,
            data,
            gaussian,
            n,
            label,
            seed,
            split,
            targets,
            out,
        } => commands::generate(&commands::GenerateArgs {
            model,
            data,
            gaussian,
            n,
            label,
            seed,
            split,
            targets,
            out,
        }),
        Command::Translate {
            model,
            data,
            input,
            label,
            out,
        } => commands::translate(&commands::TranslateArgs {
            model,
            data,
            input,
            label,
            out,
        }),
        Command::Evaluate {
            task,
            data,
            model,
            generated,
            split,
            seed,
            pca,
            x_max,
            fail_threshold,
            out,
        } => {
            let summaries = commands::evaluate(&commands::EvaluateArgs {
                task: match task {
                    TaskArg::Represent => Task::Represent,
                    TaskArg::Translate => Task::Translate,
                    TaskArg::Specificity => Task::Specificity,
                },
                data,
                model: (model != "identity").then(|| PathBuf::from(model)),
                generated,
                split,
                seed,
                pca_components: pca,
                x_max,
                fail_threshold,
                out,
            })?;
            for s in summaries {
                println!("{} mean {:.6} std {:.6} n {}", s.metric, s.mean, s.std, s.count);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
