use std::path::{Path, PathBuf};

use caamargin::eval::{alignment_uniformity_default, eer, min_dcf, score_trials};
use caamargin::gradcheck::{check_all, GradcheckOptions, Kernel, FD_STEP, FD_TOLERANCE};
use caamargin::io::{fmt_f64, Document, KeyValues};
use caamargin::loss::{Ablation, EmbeddingBatch};
use caamargin::synth::{augment, make_trials, Dataset, GeneratorParams, SpeakerBank, TrialList};
use caamargin::train::{fit, LossKind, Model, TrainConfig};
use rayon::prelude::*;

use crate::error::CliError;
use crate::report::{cell, num, read_file, sha256_hex, write_file, Manifest, Report};
use crate::settings::Settings;

/// A finished command: its report, plus the failure to exit with after printing it.
#[derive(Debug)]
pub struct Outcome {
    pub report: String,
    pub error: Option<CliError>,
}

impl Outcome {
    fn ok(report: Report) -> Self {
        Self {
            report: report.text().to_string(),
            error: None,
        }
    }
}

/// Explicit paths of a command; unset ones default to files under the output root.
#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub trials: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Paths {
    fn data_or(&self, name: &str) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join(name))
    }

    fn checkpoint(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    fn trials(&self) -> PathBuf {
        self.trials
            .clone()
            .unwrap_or_else(|| self.out.join("trials.txt"))
    }

    fn report(&self, command: &str) -> PathBuf {
        self.report
            .clone()
            .unwrap_or_else(|| self.out.join(format!("{command}.report")))
    }
}

fn load_document(path: &Path, kind: &str) -> Result<(Document, String), CliError> {
    let text = read_file(path)?;
    let doc = Document::parse(&text, kind).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((doc, sha256_hex(text.as_bytes())))
}

fn load_dataset(path: &Path) -> Result<(Dataset, String), CliError> {
    let (doc, sha) = load_document(path, "dataset")?;
    let data = Dataset::from_document(&doc).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((data, sha))
}

fn dataset_header(s: &Settings, split: &str, generator: &GeneratorParams, seed: u64) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.set("split", split);
    kv.set("seed", seed.to_string());
    kv.set("n_speakers", s.data.n_speakers.to_string());
    kv.set("spread", fmt_f64(generator.spread));
    kv.set("outlier_rate", fmt_f64(generator.outlier_rate));
    kv.set("outlier_shift", fmt_f64(generator.outlier_shift));
    kv.set("radius", fmt_f64(generator.radius));
    kv
}

/// Training split, held-out split and trials over the held-out split.
struct Experiment {
    train: Dataset,
    heldout: Dataset,
    trials: TrialList,
    train_text: String,
    heldout_text: String,
}

fn build_experiment(s: &Settings, generator: &GeneratorParams, seed: u64) -> Result<Experiment, CliError> {
    let d = &s.data;
    let bank = SpeakerBank::draw(d.n_speakers, generator, seed)?;
    let train = bank.sample(d.utts)?;
    let heldout = bank.sample_heldout(d.heldout_utts)?;
    let trials = make_trials(&heldout.labels, d.n_target, d.n_nontarget, seed)?;
    let train_text = train.to_document(&dataset_header(s, "train", generator, seed)).to_text();
    let heldout_text = heldout
        .to_document(&dataset_header(s, "heldout", generator, seed))
        .to_text();
    Ok(Experiment {
        train,
        heldout,
        trials,
        train_text,
        heldout_text,
    })
}

pub fn gen_data(s: &Settings, paths: &Paths) -> Result<Outcome, CliError> {
    let exp = build_experiment(s, &s.data.generator, s.data.seed)?;
    let train_path = paths.data_or("train.data");
    let heldout_path = paths.out.join("heldout.data");
    let trials_path = paths.trials();
    let report_path = paths.report("gen-data");
    let trials_text = exp.trials.to_text();
    write_file(&train_path, &exp.train_text)?;
    write_file(&heldout_path, &exp.heldout_text)?;
    write_file(&trials_path, &trials_text)?;

    let manifest = Manifest {
        command: "gen-data",
        config: s.snapshot(),
        seed: s.data.seed.to_string(),
        dataset_sha256: sha256_hex(exp.train_text.as_bytes()),
        paths: vec![
            ("train", train_path),
            ("heldout", heldout_path),
            ("trials", trials_path),
            ("report", report_path.clone()),
        ],
    };
    let mut r = Report::new(&manifest);
    r.section("dataset");
    let outliers = |d: &Dataset| d.outliers.iter().filter(|&&o| o).count();
    r.kv("train_rows", exp.train.len());
    r.kv("train_outliers", outliers(&exp.train));
    r.kv("heldout_rows", exp.heldout.len());
    r.kv("heldout_outliers", outliers(&exp.heldout));
    r.kv("heldout_sha256", sha256_hex(exp.heldout_text.as_bytes()));
    r.kv("d_in", exp.train.dim());
    r.kv("n_speakers", exp.train.n_speakers());
    let (t, n) = exp.trials.counts();
    r.kv("trials_target", t);
    r.kv("trials_nontarget", n);
    r.kv("trials_sha256", sha256_hex(trials_text.as_bytes()));
    r.write(&report_path)?;
    Ok(Outcome::ok(r))
}

pub fn gradcheck(s: &Settings, paths: &Paths, corrupt: Option<Kernel>) -> Result<Outcome, CliError> {
    let opts = GradcheckOptions {
        instances: s.instances,
        seed: s.gradcheck_seed,
        margin: s.train.margin,
        encoder_dims: s.train.dims(s.data.generator.d_in),
        activation: s.train.activation,
        corrupt,
    };
    let checks = check_all(&opts)?;
    let report_path = paths.report("gradcheck");
    let manifest = Manifest {
        command: "gradcheck",
        config: s.snapshot(),
        seed: s.gradcheck_seed.to_string(),
        dataset_sha256: "none".into(),
        paths: vec![("report", report_path.clone())],
    };
    let mut r = Report::new(&manifest);
    r.section("gradcheck");
    r.kv("instances", s.instances);
    r.kv("fd_step", num(FD_STEP));
    r.kv("tolerance", num(FD_TOLERANCE));
    if let Some(k) = corrupt {
        r.kv("corrupted", k);
    }
    let mut rows = Vec::new();
    for c in &checks {
        for (group, err) in &c.groups {
            let status = if *err < FD_TOLERANCE { "pass" } else { "FAIL" };
            rows.push(vec![
                c.kernel.to_string(),
                group.to_string(),
                format!("{err:.3e}"),
                status.to_string(),
            ]);
        }
    }
    r.table(&["kernel", "group", "max_rel_err", "status"], &rows);
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.kernel.to_string())
        .collect();
    r.section("summary");
    r.kv("status", if failed.is_empty() { "pass" } else { "fail" });
    r.kv("failed", if failed.is_empty() { "none".into() } else { failed.join(",") });
    r.write(&report_path)?;
    let mut outcome = Outcome::ok(r);
    if !failed.is_empty() {
        outcome.error = Some(CliError::Numerical(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )));
    }
    Ok(outcome)
}

pub fn train(s: &Settings, paths: &Paths) -> Result<Outcome, CliError> {
    let data_path = paths.data_or("train.data");
    let (data, data_sha) = load_dataset(&data_path)?;
    let cfg = &s.train;
    let model = Model::init(data.dim(), data.n_speakers(), cfg)?;
    let result = fit(model, &data, cfg)?;

    let mut header = cfg.to_key_values();
    header.set("dataset_sha256", &data_sha);
    let ckpt_text = result.model.to_document(&header).to_text();
    let ckpt_path = paths.checkpoint();
    write_file(&ckpt_path, &ckpt_text)?;

    let report_path = paths.report("train");
    let manifest = Manifest {
        command: "train",
        config: s.snapshot(),
        seed: cfg.seed.to_string(),
        dataset_sha256: data_sha,
        paths: vec![
            ("data", data_path),
            ("checkpoint", ckpt_path),
            ("report", report_path.clone()),
        ],
    };
    let mut r = Report::new(&manifest);
    r.section("result");
    r.kv("epochs", result.history.len());
    r.kv("steps", result.history.iter().map(|h| h.steps).sum::<usize>());
    r.kv("initial_loss", num(result.initial_loss));
    r.kv("final_loss", num(result.final_loss));
    r.kv("checkpoint_sha256", sha256_hex(ckpt_text.as_bytes()));
    r.section("history");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), cell);
    let rows: Vec<Vec<String>> = result
        .history
        .iter()
        .map(|h| {
            vec![
                h.epoch.to_string(),
                h.steps.to_string(),
                cell(h.mean_loss),
                opt(h.mean_task_losses.map(|t| t.0)),
                opt(h.mean_task_losses.map(|t| t.1)),
                opt(h.mean_lambda1),
                opt(h.last_lambda1),
                h.max_bound_excess.map_or("-".into(), |e| format!("{e:.3e}")),
            ]
        })
        .collect();
    r.table(
        &[
            "epoch",
            "steps",
            "loss",
            "cls_loss",
            "con_loss",
            "lambda1_mean",
            "lambda1_last",
            "mgda_bound_excess",
        ],
        &rows,
    );
    r.write(&report_path)?;
    Ok(Outcome::ok(r))
}

/// Verification metrics of `model` on `data` and `trials`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub min_dcf_threshold: f64,
    pub alignment: f64,
    pub uniformity: f64,
}

pub fn evaluate(
    model: &Model,
    data: &Dataset,
    trials: &TrialList,
    s: &Settings,
) -> Result<(Metrics, caamargin::Scores), CliError> {
    if data.dim() != model.encoder.input_dim() {
        return Err(CliError::Data(format!(
            "checkpoint expects {} input features, dataset has {}",
            model.encoder.input_dim(),
            data.dim()
        )));
    }
    let z = model.encoder.embed(&data.features)?;
    let scored = score_trials(&z, trials)?;
    let (e, et) = eer(&scored)?;
    let (dcf, dt) = min_dcf(&scored, &s.dcf)?;
    let cfg = &s.train;
    let views = augment(&data.features, cfg.aug_noise, cfg.aug_dropout, cfg.seed)?;
    let zv = model.encoder.embed(&views)?;
    let batch = EmbeddingBatch::paired(z, zv, &data.labels)?;
    let (alignment, uniformity) = alignment_uniformity_default(&batch);
    Ok((
        Metrics {
            eer: e,
            eer_threshold: et,
            min_dcf: dcf,
            min_dcf_threshold: dt,
            alignment,
            uniformity,
        },
        scored,
    ))
}

pub fn eval(s: &Settings, paths: &Paths) -> Result<Outcome, CliError> {
    let ckpt_path = paths.checkpoint();
    let (ckpt, ckpt_sha) = load_document(&ckpt_path, "checkpoint")?;
    let model = Model::from_document(&ckpt).map_err(|e| CliError::Data(format!("{}: {e}", ckpt_path.display())))?;
    let data_path = paths.data_or("heldout.data");
    let (data, data_sha) = load_dataset(&data_path)?;
    let trials_path = paths.trials();
    let trials_text = read_file(&trials_path)?;
    let trials = TrialList::parse(&trials_text).map_err(|e| CliError::from(e).in_file(&trials_path))?;
    let (m, scored) = evaluate(&model, &data, &trials, s)?;

    let scores_path = paths.out.join("scores.txt");
    let mut scores = String::new();
    for (t, score) in trials.trials.iter().zip(&scored.scores) {
        let flag = if t.target { "target" } else { "nontarget" };
        scores.push_str(&format!("{} {} {} {flag}\n", t.enroll, t.test, fmt_f64(*score)));
    }
    write_file(&scores_path, &scores)?;

    let report_path = paths.report("eval");
    let manifest = Manifest {
        command: "eval",
        config: s.snapshot(),
        seed: s.train.seed.to_string(),
        dataset_sha256: data_sha,
        paths: vec![
            ("checkpoint", ckpt_path),
            ("data", data_path),
            ("trials", trials_path),
            ("scores", scores_path),
            ("report", report_path.clone()),
        ],
    };
    let mut r = Report::new(&manifest);
    r.section("metrics");
    r.kv("eer", num(m.eer));
    r.kv("eer_threshold", num(m.eer_threshold));
    r.kv("min_dcf", num(m.min_dcf));
    r.kv("min_dcf_threshold", num(m.min_dcf_threshold));
    r.kv("p_target", num(s.dcf.p_target));
    r.kv("c_miss", num(s.dcf.c_miss));
    r.kv("c_fa", num(s.dcf.c_fa));
    r.kv("alignment", num(m.alignment));
    r.kv("uniformity", num(m.uniformity));
    let (t, n) = trials.counts();
    r.kv("trials_target", t);
    r.kv("trials_nontarget", n);
    r.kv("checkpoint_sha256", ckpt_sha);
    r.kv("trials_sha256", sha256_hex(trials_text.as_bytes()));
    r.kv("scores_sha256", sha256_hex(scores.as_bytes()));
    r.write(&report_path)?;
    Ok(Outcome::ok(r))
}

/// One trained variant of the ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub condition: &'static str,
    pub variant: Ablation,
    pub seed: u64,
    pub eer: f64,
    pub min_dcf: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Mean over seeds of one (condition, variant) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub condition: &'static str,
    pub variant: Ablation,
    pub mean_eer: f64,
    pub mean_min_dcf: f64,
    /// Final loss below initial loss for every seed.
    pub losses_decreased: bool,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub runs: Vec<AblationRun>,
    pub rows: Vec<AblationRow>,
    pub dataset_sha256: String,
}

impl AblationResult {
    pub fn row(&self, condition: &str, variant: Ablation) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.variant == variant)
    }
}

/// Clean and outlier-injected conditions.
pub fn ablation_conditions(s: &Settings) -> [(&'static str, f64); 2] {
    [("clean", 0.0), ("outlier", s.ablation_outlier_rate)]
}

/// Trains every variant on every (condition, seed) with shared data, in parallel;
/// results come back in grid order.
pub fn run_ablation(s: &Settings) -> Result<AblationResult, CliError> {
    let mut experiments = Vec::new();
    for (condition, rate) in ablation_conditions(s) {
        let generator = GeneratorParams {
            outlier_rate: rate,
            ..s.data.generator
        };
        for &seed in &s.seeds {
            experiments.push((condition, seed, build_experiment(s, &generator, seed)?));
        }
    }
    let mut hasher_input = String::new();
    for (_, _, exp) in &experiments {
        hasher_input.push_str(&sha256_hex(exp.train_text.as_bytes()));
        hasher_input.push_str(&sha256_hex(exp.heldout_text.as_bytes()));
    }
    let jobs: Vec<(usize, Ablation)> = (0..experiments.len())
        .flat_map(|e| Ablation::ALL.into_iter().map(move |v| (e, v)))
        .collect();
    let runs: Vec<AblationRun> = jobs
        .par_iter()
        .map(|&(e, variant)| {
            let (condition, seed, exp) = &experiments[e];
            let cfg = TrainConfig {
                loss: LossKind::CaaMarginCon,
                ablation: variant,
                seed: *seed,
                ..s.train.clone()
            };
            let model = Model::init(exp.train.dim(), exp.train.n_speakers(), &cfg)?;
            let out = fit(model, &exp.train, &cfg)?;
            let settings = Settings {
                train: cfg,
                ..s.clone()
            };
            let (m, _) = evaluate(&out.model, &exp.heldout, &exp.trials, &settings)?;
            Ok(AblationRun {
                condition,
                variant,
                seed: *seed,
                eer: m.eer,
                min_dcf: m.min_dcf,
                initial_loss: out.initial_loss,
                final_loss: out.final_loss,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let mut rows = Vec::new();
    for (condition, _) in ablation_conditions(s) {
        for variant in Ablation::ALL {
            let cell: Vec<&AblationRun> = runs
                .iter()
                .filter(|r| r.condition == condition && r.variant == variant)
                .collect();
            let k = cell.len() as f64;
            rows.push(AblationRow {
                condition,
                variant,
                mean_eer: cell.iter().map(|r| r.eer).sum::<f64>() / k,
                mean_min_dcf: cell.iter().map(|r| r.min_dcf).sum::<f64>() / k,
                losses_decreased: cell.iter().all(|r| r.final_loss < r.initial_loss),
            });
        }
    }
    Ok(AblationResult {
        runs,
        rows,
        dataset_sha256: sha256_hex(hasher_input.as_bytes()),
    })
}

pub fn ablation(s: &Settings, paths: &Paths) -> Result<Outcome, CliError> {
    let result = run_ablation(s)?;
    let report_path = paths.report("ablation");
    let seeds: Vec<String> = s.seeds.iter().map(u64::to_string).collect();
    let manifest = Manifest {
        command: "ablation",
        config: s.snapshot(),
        seed: seeds.join(","),
        dataset_sha256: result.dataset_sha256.clone(),
        paths: vec![("report", report_path.clone())],
    };
    let mut r = Report::new(&manifest);
    r.section("ablation");
    r.kv("loss", LossKind::CaaMarginCon);
    r.kv("seeds", s.seeds.len());
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|row| {
            vec![
                row.condition.to_string(),
                row.variant.key().to_string(),
                row.variant.label().to_string(),
                cell(row.mean_eer),
                cell(row.mean_min_dcf),
                row.losses_decreased.to_string(),
            ]
        })
        .collect();
    r.table(
        &["condition", "variant", "label", "mean_eer", "mean_min_dcf", "losses_decreased"],
        &rows,
    );
    r.section("runs");
    let runs: Vec<Vec<String>> = result
        .runs
        .iter()
        .map(|run| {
            vec![
                run.condition.to_string(),
                run.variant.key().to_string(),
                run.seed.to_string(),
                cell(run.eer),
                cell(run.min_dcf),
                cell(run.initial_loss),
                cell(run.final_loss),
            ]
        })
        .collect();
    r.table(
        &["condition", "variant", "seed", "eer", "min_dcf", "initial_loss", "final_loss"],
        &runs,
    );
    r.section("summary");
    for (condition, _) in ablation_conditions(s) {
        let full = result.row(condition, Ablation::Full).expect("grid row");
        let both = result.row(condition, Ablation::WithoutBoth).expect("grid row");
        r.kv(
            &format!("{condition}.full_minus_no_both_eer"),
            num(full.mean_eer - both.mean_eer),
        );
        r.kv(
            &format!("{condition}.full_le_no_both"),
            full.mean_eer <= both.mean_eer,
        );
    }
    r.write(&report_path)?;
    Ok(Outcome::ok(r))
}
