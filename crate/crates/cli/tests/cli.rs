use std::path::Path;
use std::process::Command;

use caamargin::io::Document;
use caamargin::synth::{Dataset, TrialList};
use caamargin::train::Model;
use caamargin_cli::commands::evaluate;
use caamargin_cli::{run, Settings};

const SMALL: &[&str] = &[
    "--n_speakers", "5", "--utts", "12", "--heldout_utts", "8", "--n_target", "60",
    "--n_nontarget", "60", "--batch_size", "16", "--epochs", "4",
];

fn cli(out: &Path, args: &[&str]) -> String {
    // later flags win, so per-test arguments override the small defaults
    let mut full = vec!["caamargin".to_string(), args[0].to_string()];
    full.extend(SMALL.iter().map(|s| s.to_string()));
    full.extend(args[1..].iter().map(|s| s.to_string()));
    full.push("--out".into());
    full.push(out.display().to_string());
    let outcome = run(full).unwrap();
    assert!(outcome.error.is_none(), "{:?}", outcome.error);
    outcome.report
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_caamargin"))
        .args(args)
        .env_remove("CAAMARGIN_OUT")
        .output()
        .unwrap()
}

fn metric(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in report"))
        .parse()
        .unwrap()
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let g1 = cli(out, &["gen-data"]);
    let g2 = cli(out, &["gen-data"]);
    assert_eq!(g1, g2);
    let t1 = cli(out, &["train"]);
    let ckpt1 = std::fs::read_to_string(out.join("model.ckpt")).unwrap();
    let t2 = cli(out, &["train"]);
    let ckpt2 = std::fs::read_to_string(out.join("model.ckpt")).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(ckpt1, ckpt2);
    assert!(t1.contains("[history]") && t1.contains("lambda1_mean"));
    let e1 = cli(out, &["eval"]);
    let e2 = cli(out, &["eval"]);
    assert_eq!(e1, e2);
    assert_eq!(std::fs::read_to_string(out.join("eval.report")).unwrap(), e1);
    for key in ["eer", "min_dcf", "alignment", "uniformity"] {
        assert!(metric(&e1, key).is_finite());
    }
}

#[test]
fn eval_matches_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    cli(out, &["gen-data"]);
    cli(out, &["train"]);
    let report = cli(out, &["eval"]);
    let read = |name: &str| std::fs::read_to_string(out.join(name)).unwrap();
    let model = Model::from_document(&Document::parse(&read("model.ckpt"), "checkpoint").unwrap()).unwrap();
    let data = Dataset::from_document(&Document::parse(&read("heldout.data"), "dataset").unwrap()).unwrap();
    let trials = TrialList::parse(&read("trials.txt")).unwrap();
    let mut settings = Settings::default();
    settings
        .apply(&caamargin::io::KeyValues::parse(&SMALL.chunks(2).map(|c| format!("{} = {}\n", &c[0][2..], c[1])).collect::<String>()).unwrap())
        .unwrap();
    let (m, _) = evaluate(&model, &data, &trials, &settings).unwrap();
    assert_eq!(metric(&report, "eer").to_bits(), m.eer.to_bits());
    assert_eq!(metric(&report, "min_dcf").to_bits(), m.min_dcf.to_bits());
    assert_eq!(metric(&report, "alignment").to_bits(), m.alignment.to_bits());
    assert_eq!(metric(&report, "uniformity").to_bits(), m.uniformity.to_bits());
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    cli(out, &["gen-data"]);
    cli(out, &["train", "--epochs", "0"]);
    let text = std::fs::read_to_string(out.join("model.ckpt")).unwrap();
    let saved = Model::from_document(&Document::parse(&text, "checkpoint").unwrap()).unwrap();
    let cfg = caamargin::train::TrainConfig {
        batch_size: 16,
        epochs: 0,
        ..Default::default()
    };
    let init = Model::init(40, 5, &cfg).unwrap();
    assert_eq!(saved.flatten(), init.flatten());
}

#[test]
fn losses_swap_with_everything_else_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    cli(out, &["gen-data"]);
    let a = out.join("ce.ckpt");
    let b = out.join("caa.ckpt");
    cli(out, &["train", "--loss", "cross_entropy", "--checkpoint", a.to_str().unwrap()]);
    cli(out, &["train", "--loss", "caa_margin_con", "--checkpoint", b.to_str().unwrap()]);
    let header = |p: &Path| {
        Document::parse(&std::fs::read_to_string(p).unwrap(), "checkpoint")
            .unwrap()
            .header
    };
    let (ha, hb) = (header(&a), header(&b));
    let differing: Vec<&str> = ha.iter().filter(|(k, v)| hb.get(k) != Some(*v)).map(|(k, _)| k).collect();
    assert_eq!(differing, ["loss"]);
}

#[test]
fn random_encoder_is_at_chance_without_speaker_structure() {
    // centroids collapsed far inside the within-speaker noise: nothing to find
    let mut eers = Vec::new();
    for seed in 1..=5u64 {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let s = seed.to_string();
        let common = ["--data_seed", s.as_str(), "--seed", s.as_str(), "--radius", "1e-3", "--heldout_utts", "20", "--n_target", "400", "--n_nontarget", "400"];
        let mut args = vec!["gen-data"];
        args.extend(common);
        cli(out, &args);
        let mut args = vec!["train", "--epochs", "0"];
        args.extend(common);
        cli(out, &args);
        let mut args = vec!["eval"];
        args.extend(common);
        eers.push(metric(&cli(out, &args), "eer"));
    }
    for e in &eers {
        assert!((e - 0.5).abs() <= 0.1, "{eers:?}");
    }
}

#[test]
fn separable_speakers_reach_zero_eer_after_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let common = ["--spread", "1e-3", "--epochs", "10", "--loss", "aam_softmax", "--aug_noise", "1e-3", "--aug_dropout", "0"];
    let mut args = vec!["gen-data"];
    args.extend(common);
    cli(out, &args);
    let mut args = vec!["train"];
    args.extend(common);
    cli(out, &args);
    let mut args = vec!["eval"];
    args.extend(common);
    assert_eq!(metric(&cli(out, &args), "eer"), 0.0);
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# experiment\nlr = 0.01\ntau = 0.1\n").unwrap();
    let report = cli(dir.path(), &["gradcheck", "--instances", "1", "--config", cfg.to_str().unwrap(), "--lr", "0.05"]);
    assert!(report.contains("config.lr = 5e-2"));
    assert!(report.contains("config.tau = 1e-1"));
    assert!(report.contains("config.margin = 2e-1"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "epochs = 3\n\nmargin = wide\n").unwrap();
    let o = bin(&["train", "--out", out, "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = bin(&["train", "--out", out, "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = bin(&["eval", "--out", out]);
    assert_eq!(o.status.code(), Some(3));

    let o = bin(&["gradcheck", "--out", out, "--instances", "2", "--corrupt-gradient", "sup_margin_con_loss"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sup_margin_con_loss"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("failed = sup_margin_con_loss"));

    let o = bin(&["gradcheck", "--out", out, "--instances", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("status = pass"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_caamargin"))
        .args(["gen-data", "--n_speakers", "3", "--utts", "4", "--heldout_utts", "4", "--n_target", "5", "--n_nontarget", "5"])
        .env("CAAMARGIN_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.data", "heldout.data", "trials.txt", "gen-data.report"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn ablation_report_has_four_variants_per_condition() {
    let dir = tempfile::tempdir().unwrap();
    let report = cli(dir.path(), &["ablation", "--seeds", "1,2", "--epochs", "2"]);
    let section: Vec<&str> = report
        .split("[ablation]")
        .nth(1)
        .unwrap()
        .split("\n\n")
        .next()
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("clean") || l.starts_with("outlier"))
        .collect();
    assert_eq!(section.len(), 8);
    for key in ["full", "no_margin", "no_caa", "no_both"] {
        assert_eq!(section.iter().filter(|l| l.split_whitespace().nth(1) == Some(key)).count(), 2);
    }
    assert!(report.contains("w/o CAA and Margin"));
    assert!(report.contains("outlier.full_le_no_both = "));
}
