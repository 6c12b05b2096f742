//! Experiment driver behind the `caamargin` binary.
//!
//! Every subcommand writes a plain-text report that starts with a manifest
//! (effective config, seed, dataset hash, version tag, paths), so rerunning with the
//! same manifest reproduces the report byte for byte.

pub mod commands;
pub mod error;
pub mod report;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use caamargin::gradcheck::Kernel;
use caamargin::io::KeyValues;
use clap::{value_parser, Arg, ArgMatches, Command};

pub use commands::{Outcome, Paths};
pub use error::CliError;
pub use settings::Settings;

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

/// Command-line interface. Every config key is also a `--<key>` flag.
pub fn command() -> Command {
    let mut cmd = Command::new("caamargin")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Margin and class-aware-attention contrastive learning experiments")
        .subcommand_required(true)
        .args_override_self(true)
        .arg_required_else_help(true)
        .arg(path_arg("config", "key = value config file").global(true))
        .arg(
            path_arg("out", "output directory [env: CAAMARGIN_OUT, default: caamargin-out]")
                .global(true),
        )
        .arg(path_arg("report", "report file [default: <out>/<command>.report]").global(true));
    for key in settings::all_keys() {
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .help("overrides the config key of the same name")
                .global(true)
                .hide_short_help(true),
        );
    }
    cmd.subcommand(
        Command::new("gen-data")
            .about("Generate training and held-out speakers plus trials")
            .arg(path_arg("data", "training set output [default: <out>/train.data]"))
            .arg(path_arg("trials", "trial list output [default: <out>/trials.txt]")),
    )
    .subcommand(
        Command::new("gradcheck")
            .about("Check every analytic gradient against central finite differences")
            .arg(
                Arg::new("corrupt-gradient")
                    .long("corrupt-gradient")
                    .value_name("KERNEL")
                    .value_parser(value_parser!(String))
                    .hide(true),
            ),
    )
    .subcommand(
        Command::new("train")
            .about("Train an encoder and write a checkpoint plus history")
            .arg(path_arg("data", "training set [default: <out>/train.data]"))
            .arg(path_arg("checkpoint", "checkpoint output [default: <out>/model.ckpt]")),
    )
    .subcommand(
        Command::new("eval")
            .about("Score trials with a checkpoint: EER, minDCF, alignment, uniformity")
            .arg(path_arg("checkpoint", "checkpoint [default: <out>/model.ckpt]"))
            .arg(path_arg("data", "evaluation set [default: <out>/heldout.data]"))
            .arg(path_arg("trials", "trial list [default: <out>/trials.txt]")),
    )
    .subcommand(
        Command::new("ablation")
            .about("Train the four loss variants on clean and outlier data over several seeds"),
    )
}

fn flag_values(m: &ArgMatches) -> KeyValues {
    let mut kv = KeyValues::default();
    for key in settings::all_keys() {
        if let Some(v) = m.get_one::<String>(key) {
            kv.set(key, v.clone());
        }
    }
    kv
}

fn path(m: &ArgMatches, name: &str) -> Option<PathBuf> {
    m.try_get_one::<PathBuf>(name).ok().flatten().cloned()
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let settings = Settings::resolve(path(sub, "config").as_deref(), &flag_values(sub))?;
    let paths = Paths {
        out: settings::output_root(path(sub, "out").as_ref()),
        data: path(sub, "data"),
        checkpoint: path(sub, "checkpoint"),
        trials: path(sub, "trials"),
        report: path(sub, "report"),
    };
    match name {
        "gen-data" => commands::gen_data(&settings, &paths),
        "gradcheck" => {
            let corrupt = match sub.get_one::<String>("corrupt-gradient") {
                Some(k) => Some(k.parse::<Kernel>()?),
                None => None,
            };
            commands::gradcheck(&settings, &paths, corrupt)
        }
        "train" => commands::train(&settings, &paths),
        "eval" => commands::eval(&settings, &paths),
        "ablation" => commands::ablation(&settings, &paths),
        other => unreachable!("unknown subcommand {other}"),
    }
}
