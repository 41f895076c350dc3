//! One function per subcommand. Each takes parsed options and returns the
//! core error type, which `main` maps to an exit code.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use facegan::eval::{
    ced_auc_fr, pca_fit, rmse3d_translation, specificity, ErrorDistribution, Reconstructor, Retain, RmseOptions,
};
use facegan::generation::{collect_bottlenecks, fit_label_gaussians, fit_latent_gaussian, generate_faces, LatentGaussian};
use facegan::geometry::{read_landmarks, write_landmarks, Mesh};
use facegan::io::{
    adversarial_csv, ced_csv, load_gaussians, pretrain_csv, save_gaussians, save_layout, save_uvmap, values_csv,
    write_text, Checkpoint, LabelRow, LabelTable, MetricSummary, Phase, RunConfig, ScaleRecord,
};
use facegan::model::NetParams;
use facegan::pipeline::{maps_to_meshes, preprocess, apply_to_maps, NetworkModel, PreprocessOptions};
use facegan::synth::{label_name, synth_dataset, SynthConfig};
use facegan::training::{
    run_adversarial, run_pretraining, AdversarialState, EpochLosses, PairedDataset, PretrainState,
};
use facegan::{Error, Result};

use crate::workdir::{list_stems, read_meshes, write_meshes, Corpus, DataMode, WorkDir};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub struct SynthArgs {
    pub config: SynthConfig,
    pub out: PathBuf,
}

/// Writes `meshes/`, `clean/` (with noise), `template.obj`, `landmarks.txt` and `labels.csv`.
pub fn synth(args: &SynthArgs) -> Result<()> {
    let data = synth_dataset(&args.config)?;
    let stems: Vec<String> = (0..data.meshes.len()).map(|i| format!("{i:05}")).collect();
    write_meshes(&args.out.join("meshes"), &stems, &data.meshes)?;
    if args.config.noise > 0.0 {
        write_meshes(&args.out.join("clean"), &stems, &data.clean)?;
    }
    data.template.write_obj(&args.out.join("template.obj"))?;
    write_landmarks(&args.out.join("landmarks.txt"), &data.template.landmarks)?;
    let rows = stems
        .iter()
        .enumerate()
        .map(|(i, stem)| {
            let label = data.labels.get(i).copied();
            LabelRow {
                file: stem.clone(),
                subject: data.subjects[i],
                label,
                name: label.map(label_name).unwrap_or_default(),
            }
        })
        .collect();
    LabelTable { rows }.save(&args.out.join("labels.csv"))?;
    eprintln!("wrote {} meshes to {}", stems.len(), args.out.display());
    Ok(())
}

pub struct PreprocessArgs {
    pub input: PathBuf,
    pub targets: Option<PathBuf>,
    pub template: PathBuf,
    pub landmarks: PathBuf,
    pub labels: Option<PathBuf>,
    pub resolution: usize,
    pub out: PathBuf,
}

/// Registration, alignment, normalization and rasterization of a mesh
/// directory, optionally with paired targets that share one normalization.
pub fn preprocess_dir(args: &PreprocessArgs) -> Result<()> {
    let mut template = Mesh::read_obj(&args.template)?;
    template.landmarks = read_landmarks(&args.landmarks)?;
    template.validate().map_err(|e| Error::Format {
        path: args.landmarks.clone(),
        reason: e.to_string(),
    })?;
    let stems = list_stems(&args.input, "obj")?;
    let read = |dir: &Path| -> Result<Vec<Mesh>> {
        stems
            .iter()
            .map(|s| {
                let mut m = Mesh::read_obj(&dir.join(format!("{s}.obj")))?;
                if m.same_topology(&template) {
                    m.landmarks = template.landmarks.clone();
                }
                Ok(m)
            })
            .collect()
    };
    let mut scans = read(&args.input)?;
    let n = scans.len();
    if let Some(t) = &args.targets {
        scans.extend(read(t)?);
    }
    let options = PreprocessOptions {
        resolution: args.resolution,
        ..PreprocessOptions::default()
    };
    let pre = preprocess(&scans, &template, &options)?;
    let dir = WorkDir::new(&args.out);
    let write_maps = |sub: PathBuf, maps: &[facegan::UvMap]| -> Result<()> {
        create_dir(&sub)?;
        for (s, m) in stems.iter().zip(maps) {
            save_uvmap(&sub.join(format!("{s}.uvf")), m)?;
        }
        Ok(())
    };
    write_maps(dir.maps(), &pre.maps[..n])?;
    write_meshes(&dir.aligned(), &stems, &pre.meshes[..n])?;
    if args.targets.is_some() {
        write_maps(dir.targets(), &pre.maps[n..])?;
        write_meshes(&dir.aligned_targets(), &stems, &pre.meshes[n..])?;
    }
    save_layout(&dir.layout(), &pre.layout)?;
    ScaleRecord {
        factor: pre.factor,
        resolution: args.resolution,
        meshes: pre.meshes.len(),
    }
    .save(&dir.scale())?;
    if let Some(labels) = &args.labels {
        let table = LabelTable::load(labels)?;
        if let Some(s) = stems.iter().find(|s| table.row(s).is_none()) {
            return Err(Error::Format {
                path: labels.clone(),
                reason: format!("no row for {s}"),
            });
        }
        table.save(&dir.labels())?;
    }
    eprintln!("preprocessed {n} meshes into {}", args.out.display());
    Ok(())
}

/// Options shared by the training commands.
pub struct DataArgs {
    pub data: PathBuf,
    pub targets: bool,
    pub labels: bool,
    pub split: f64,
}

fn training_set(args: &DataArgs, config: &RunConfig) -> Result<PairedDataset> {
    let corpus = Corpus::load(&args.data, args.targets)?;
    if args.labels {
        let count = corpus.label_table()?.label_count();
        if config.net.label_channels != count {
            return Err(invalid(format!(
                "the data has {count} labels but label_channels = {}",
                config.net.label_channels
            )));
        }
    } else if config.net.label_channels != 0 {
        return Err(invalid("label_channels > 0 needs --labels"));
    }
    if corpus.scale.resolution != config.net.resolution {
        return Err(invalid(format!(
            "maps are {0}x{0} but the network expects {1}x{1}",
            corpus.scale.resolution, config.net.resolution
        )));
    }
    let split = corpus.split(args.split, config.train.seed);
    corpus.dataset(
        &split.train,
        DataMode {
            targets: args.targets,
            labelled: args.labels,
        },
    )
}

fn load_phase(path: &Path, phase: Phase) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.phase != phase {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected a {phase:?} checkpoint, found {:?}", ck.phase),
        });
    }
    Ok(ck)
}

fn pretrain_checkpoint(state: &PretrainState, seed: u64) -> Checkpoint {
    Checkpoint {
        net: state.d.clone(),
        adam: Some(state.adam.clone()),
        seed,
        epoch: state.epoch as u64,
        phase: Phase::Pretrain,
        history: state.history.iter().map(|&l| vec![l]).collect(),
    }
}

pub struct PretrainArgs {
    pub data: DataArgs,
    pub config: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
}

/// Autoencoder training of `D`; writes the checkpoint and `<out>.csv`.
pub fn pretrain(args: &PretrainArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let data = training_set(&args.data, &config)?;
    let seed = config.train.seed;
    let mut state = if args.resume && args.out.exists() {
        let ck = load_phase(&args.out, Phase::Pretrain)?;
        if ck.net.config != config.net || ck.seed != seed {
            return Err(Error::Format {
                path: args.out.clone(),
                reason: "checkpoint was written with a different network or seed".into(),
            });
        }
        PretrainState {
            adam: ck.adam.ok_or_else(|| Error::Format {
                path: args.out.clone(),
                reason: "checkpoint has no optimizer state to resume from".into(),
            })?,
            d: ck.net,
            epoch: ck.epoch as usize,
            history: ck.history.iter().map(|r| r.first().copied().unwrap_or(f64::NAN)).collect(),
        }
    } else {
        PretrainState::new(&config.net, &config.train)?
    };
    let every = config.train.checkpoint_every;
    let total = config.train.pretrain_epochs;
    run_pretraining(&mut state, &data, &config.train, &mut |s| {
        eprintln!("pretrain epoch {}/{total} loss {:.6}", s.epoch, s.history.last().copied().unwrap_or(0.0));
        if every > 0 && s.epoch % every == 0 {
            pretrain_checkpoint(s, seed).save(&args.out)?;
        }
        Ok(())
    })?;
    pretrain_checkpoint(&state, seed).save(&args.out)?;
    write_text(&args.out.with_extension("csv"), &pretrain_csv(&state.history))
}

fn adversarial_checkpoints(state: &AdversarialState, seed: u64) -> [Checkpoint; 2] {
    let history: Vec<Vec<f64>> = state.history.iter().map(|h| vec![h.l_d, h.l_g, h.l_rec]).collect();
    let ck = |net: &NetParams<f32>, adam| Checkpoint {
        net: net.clone(),
        adam: Some(adam),
        seed,
        epoch: state.epoch as u64,
        phase: Phase::Adversarial,
        history: history.clone(),
    };
    [ck(&state.d, state.adam_d.clone()), ck(&state.g, state.adam_g.clone())]
}

pub struct TrainArgs {
    pub data: DataArgs,
    pub pretrained: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
}

/// Adversarial phase from a pre-trained `D`; writes `D.ckpt`, `G.ckpt`,
/// `losses.csv` and a copy of the configuration.
pub fn train(args: &TrainArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let data = training_set(&args.data, &config)?;
    let seed = config.train.seed;
    let pre = load_phase(&args.pretrained, Phase::Pretrain)?;
    if pre.net.config != config.net {
        return Err(Error::Format {
            path: args.pretrained.clone(),
            reason: "pre-trained network does not match the configuration".into(),
        });
    }
    let (d_path, g_path) = (args.out.join("D.ckpt"), args.out.join("G.ckpt"));
    let mut state = if args.resume && d_path.exists() && g_path.exists() {
        let (d, g) = (load_phase(&d_path, Phase::Adversarial)?, load_phase(&g_path, Phase::Adversarial)?);
        let missing = |p: &Path| Error::Format {
            path: p.to_path_buf(),
            reason: "checkpoint has no optimizer state to resume from".into(),
        };
        AdversarialState {
            epoch: g.epoch as usize,
            history: g
                .history
                .iter()
                .enumerate()
                .map(|(i, r)| EpochLosses {
                    epoch: i + 1,
                    l_d: r[0],
                    l_g: r[1],
                    l_rec: r[2],
                })
                .collect(),
            adam_d: d.adam.ok_or_else(|| missing(&d_path))?,
            adam_g: g.adam.ok_or_else(|| missing(&g_path))?,
            d: d.net,
            g: g.net,
        }
    } else {
        AdversarialState::from_pretrained(pre.net, &config.train)
    };
    create_dir(&args.out)?;
    config.save(&args.out.join("config.txt"))?;
    let every = config.train.checkpoint_every;
    let total = config.train.epochs;
    let save = |s: &AdversarialState| -> Result<()> {
        let [d, g] = adversarial_checkpoints(s, seed);
        d.save(&d_path)?;
        g.save(&g_path)
    };
    run_adversarial(&mut state, &data, &config.train, &mut |s| {
        let h = s.history.last().expect("epoch recorded");
        eprintln!(
            "train epoch {}/{total} L_D {:.6} L_G {:.6} L_rec {:.6}",
            s.epoch, h.l_d, h.l_g, h.l_rec
        );
        if every > 0 && s.epoch % every == 0 {
            save(s)?;
        }
        Ok(())
    })?;
    save(&state)?;
    write_text(&args.out.join("losses.csv"), &adversarial_csv(&state.history))
}

/// Label index for `--label`, checked against the model's label channels.
fn resolve_label(corpus: &Corpus, net: &NetParams<f32>, label: Option<&str>) -> Result<Option<(usize, usize)>> {
    let count = net.config.label_channels;
    match (label, count) {
        (None, 0) => Ok(None),
        (Some(_), 0) => Err(invalid("--label given but the model is not label-conditioned")),
        (None, _) => Err(invalid("the model is label-conditioned; pass --label")),
        (Some(name), _) => {
            let table = corpus.label_table()?;
            let l = table
                .resolve(name)
                .ok_or_else(|| invalid(format!("unknown label {name:?}")))?;
            if l >= count {
                return Err(invalid(format!("label {l} is outside the model's {count} label channels")));
            }
            Ok(Some((l, count)))
        }
    }
}

pub struct GenerateArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub gaussian: PathBuf,
    pub n: usize,
    pub label: Option<String>,
    pub seed: u64,
    pub split: f64,
    pub targets: bool,
    pub out: PathBuf,
}

/// Samples faces from the latent Gaussian, fitting and saving it from the
/// training split first when the Gaussian file does not exist.
pub fn generate(args: &GenerateArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.model)?;
    let g = ck.net;
    let corpus = Corpus::load(&args.data, args.targets)?;
    let labelled = g.config.label_channels > 0;
    let gaussians = if args.gaussian.exists() {
        load_gaussians(&args.gaussian)?
    } else {
        let split = corpus.split(args.split, ck.seed);
        let data = corpus.dataset(
            &split.train,
            DataMode {
                targets: args.targets,
                labelled,
            },
        )?;
        let fitted: Vec<LatentGaussian> = if labelled {
            fit_label_gaussians(&g, &data)?.into_values().collect()
        } else {
            vec![fit_latent_gaussian(&collect_bottlenecks(&g, &data)?)?]
        };
        save_gaussians(&args.gaussian, &fitted)?;
        fitted
    };
    let wanted = resolve_label(&corpus, &g, args.label.as_deref())?.map(|(l, _)| l);
    let gaussian = gaussians
        .iter()
        .find(|x| x.label == wanted)
        .ok_or_else(|| Error::Format {
            path: args.gaussian.clone(),
            reason: format!("no Gaussian for label {wanted:?}"),
        })?;
    if gaussian.dim() != g.config.latent_dim {
        return Err(Error::Format {
            path: args.gaussian.clone(),
            reason: format!("Gaussian has dimension {}, model latent is {}", gaussian.dim(), g.config.latent_dim),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let meshes = generate_faces(&g, gaussian, &corpus.layout, args.n, &mut rng)?;
    let stems: Vec<String> = (0..meshes.len()).map(|i| format!("{i:05}")).collect();
    write_meshes(&args.out, &stems, &meshes)
}

pub struct TranslateArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub input: PathBuf,
    pub label: Option<String>,
    pub out: PathBuf,
}

/// Runs `G` over aligned meshes (normalized frame) and writes the outputs.
pub fn translate(args: &TranslateArgs) -> Result<()> {
    let g = Checkpoint::load(&args.model)?.net;
    let corpus = Corpus::load(&args.data, false)?;
    let label = resolve_label(&corpus, &g, args.label.as_deref())?;
    let stems = list_stems(&args.input, "obj")?;
    let paths: Vec<PathBuf> = stems.iter().map(|s| args.input.join(format!("{s}.obj"))).collect();
    let meshes = read_meshes(&paths, &corpus.layout)?;
    let model = NetworkModel {
        net: &g,
        layout: &corpus.layout,
        label,
    };
    write_meshes(&args.out, &stems, &model.reconstruct(&meshes)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Represent,
    Translate,
    Specificity,
}

pub struct EvaluateArgs {
    pub task: Task,
    pub data: PathBuf,
    /// Checkpoint path, or `None` for the identity model.
    pub model: Option<PathBuf>,
    pub generated: Option<PathBuf>,
    pub split: f64,
    pub seed: Option<u64>,
    pub pca_components: Option<usize>,
    pub x_max: Option<f64>,
    pub fail_threshold: Option<f64>,
    pub out: PathBuf,
}

fn write_report(out: &Path, name: &str, values: Vec<f64>, x_max: f64, threshold: f64, seed: u64) -> Result<MetricSummary> {
    let errs = ErrorDistribution::new(values.clone(), 1.0)?;
    let ced = ced_auc_fr(&errs, x_max, threshold, 101)?;
    let summary = MetricSummary::from_errors(name, errs.mean(), errs.std(), errs.len(), Some(&ced), seed);
    write_text(&out.join(format!("{name}.json")), &summary.to_json())?;
    write_text(&out.join(format!("{name}_errors.csv")), &values_csv("error", &values))?;
    write_text(&out.join(format!("{name}_ced.csv")), &ced_csv(&ced))?;
    Ok(summary)
}

/// Test-split metrics for a trained `G` (or the identity model):
///
/// * `represent`: mean per-vertex distance, plus a PCA baseline with as many
///   components as the latent dimension, fitted on the training split.
/// * `translate`: inter-ocular-normalized 3D RMSE against the paired
///   targets, plus the identity baseline that copies the input.
/// * `specificity`: nearest-test-mesh distance of the meshes in `--generated`.
pub fn evaluate(args: &EvaluateArgs) -> Result<Vec<MetricSummary>> {
    let ck = args.model.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
    let seed = args.seed.or(ck.as_ref().map(|c| c.seed)).unwrap_or(0);
    let translate = args.task == Task::Translate;
    let corpus = Corpus::load(&args.data, translate)?;
    let labelled = ck.as_ref().is_some_and(|c| c.net.config.label_channels > 0);
    let split = corpus.split(args.split, seed);
    let gt = |items: &[usize]| if translate { corpus.aligned_targets(items) } else { corpus.aligned(items) };
    let test_gt = gt(&split.test)?;
    create_dir(&args.out)?;

    if args.task == Task::Specificity {
        let dir = args
            .generated
            .as_ref()
            .ok_or_else(|| invalid("specificity needs --generated"))?;
        let stems = list_stems(dir, "obj")?;
        let paths: Vec<PathBuf> = stems.iter().map(|s| dir.join(format!("{s}.obj"))).collect();
        let generated = read_meshes(&paths, &corpus.layout)?;
        let report = specificity(&generated, &test_gt)?;
        let summary = MetricSummary::from_specificity(&report, seed);
        write_text(&args.out.join("specificity.json"), &summary.to_json())?;
        write_text(&args.out.join("specificity_errors.csv"), &values_csv("distance", &report.distances))?;
        return Ok(vec![summary]);
    }

    let inputs_idx = corpus.input_items(&split.test, labelled)?;
    let inputs = corpus.aligned(&inputs_idx)?;
    let predictions = match &ck {
        None => inputs.clone(),
        Some(ck) => {
            let data = corpus.dataset(
                &split.test,
                DataMode {
                    targets: translate,
                    labelled,
                },
            )?;
            let maps: Vec<_> = inputs_idx.iter().map(|&i| corpus.maps[i].clone()).collect();
            let outputs = if labelled {
                let mut out = Vec::with_capacity(maps.len());
                for (m, s) in maps.iter().zip(&data.samples) {
                    let l = s.label.map(|l| (l, data.label_count));
                    out.extend(apply_to_maps(&ck.net, std::slice::from_ref(m), l)?);
                }
                out
            } else {
                apply_to_maps(&ck.net, &maps, None)?
            };
            maps_to_meshes(&outputs, &corpus.layout)?
        }
    };
    let model_name = if ck.is_some() { "3dfacegan" } else { "identity" };
    let mut summaries = Vec::new();
    if translate {
        let options = RmseOptions {
            crop_radius: RmseOptions::default().crop_radius / corpus.scale.factor,
            ..RmseOptions::default()
        };
        let rmse = |pred: &[Mesh]| -> Result<Vec<f64>> {
            pred.iter().zip(&test_gt).map(|(p, g)| rmse3d_translation(p, g, &options)).collect()
        };
        let x_max = args.x_max.unwrap_or(0.1);
        let thr = args.fail_threshold.unwrap_or(x_max);
        summaries.push(write_report(&args.out, &format!("translate_{model_name}"), rmse(&predictions)?, x_max, thr, seed)?);
        if ck.is_some() {
            summaries.push(write_report(&args.out, "translate_identity", rmse(&inputs)?, x_max, thr, seed)?);
        }
    } else {
        let x_max = args.x_max.unwrap_or(facegan::eval::DEFAULT_X_MAX);
        let thr = args.fail_threshold.unwrap_or(x_max);
        let dist = |pred: &[Mesh]| -> Vec<f64> { pred.iter().zip(&test_gt).map(|(p, g)| p.mean_vertex_distance(g)).collect() };
        summaries.push(write_report(&args.out, &format!("represent_{model_name}"), dist(&predictions), x_max, thr, seed)?);
        let k = args
            .pca_components
            .or(ck.as_ref().map(|c| c.net.config.latent_dim))
            .unwrap_or(16);
        let pca = pca_fit(&gt(&split.train)?, Retain::Components(k))?;
        summaries.push(write_report(&args.out, "represent_pca", dist(&pca.reconstruct(&test_gt)?), x_max, thr, seed)?);
    }
    Ok(summaries)
}
