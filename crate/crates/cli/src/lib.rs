//! `fcmad` command-line runner.
//!
//! Every subcommand accepts every configuration key as `--key value`, on top
//! of an optional `--config FILE` of `key = value` lines. Exit codes: 0
//! success, 1 usage or configuration error, 2 data error, 3 numeric error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{default_value, RunConfig, KEYS};
use fcmad::Result;

type Handler = fn(&RunConfig) -> Result<String>;

const SUBCOMMANDS: &[(&str, &str, Handler)] = &[
    (
        "gen-data",
        "render bona fide images, landmarks, manifest and identity split",
        commands::gen_data,
    ),
    (
        "gen-morphs",
        "generate selfmorphs and morphs for `families` from a gen-data directory",
        commands::gen_morphs,
    ),
    (
        "train",
        "train one variant (bc, fc-v1, fc-v2) and write a checkpoint",
        commands::train_cmd,
    ),
    (
        "train-fr",
        "train the face recognition model used for score fusion",
        commands::train_fr_cmd,
    ),
    (
        "gen-protocol",
        "write the differential protocol of `eval_family`",
        commands::gen_protocol,
    ),
    (
        "eval",
        "score a protocol; write scores, metrics, DET CSV and SVG",
        commands::eval,
    ),
    ("compare", "compare score files on one protocol", commands::compare),
    ("selftest", "gradient checks and metric oracles", commands::selftest_cmd),
    (
        "desk",
        "end-to-end experiment over `seeds` (train BC/FC-V1/FC-V2, benchmark, fuse)",
        commands::desk,
    ),
];

fn key_args() -> Vec<Arg> {
    let mut args: Vec<Arg> = KEYS
        .iter()
        .map(|k| {
            let def = default_value(k.name);
            let help = if def.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {def}]", k.help)
            };
            Arg::new(k.name).long(k.name).value_name("VALUE").help(help)
        })
        .collect();
    args.push(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("flat `key = value` config file applied before command-line keys"),
    );
    args.push(
        Arg::new("delta")
            .long("delta")
            .value_name("DELTA")
            .action(ArgAction::Append)
            .help("BPCER target; repeatable, replaces `deltas`"),
    );
    args.push(
        Arg::new("score")
            .long("score")
            .value_name("NAME=PATH")
            .action(ArgAction::Append)
            .help("compare input; repeatable, replaces `scores`"),
    );
    args
}

pub fn command() -> Command {
    let mut cmd = Command::new("fcmad")
        .about("Fused-classification differential morphing attack detection experiments")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, _) in SUBCOMMANDS {
        cmd = cmd.subcommand(Command::new(*name).about(*about).args(key_args()));
    }
    cmd
}

/// Builds the resolved configuration: defaults, then `--config`, then keys.
pub fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(path)?;
    }
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            cfg.set(k.name, v)?;
        }
    }
    if let Some(d) = m.get_many::<String>("delta") {
        cfg.set("deltas", &d.cloned().collect::<Vec<_>>().join(","))?;
    }
    if let Some(s) = m.get_many::<String>("score") {
        cfg.set("scores", &s.cloned().collect::<Vec<_>>().join(","))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let handler = SUBCOMMANDS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, h)| *h)
        .expect("registered subcommand");
    match resolve(sub).and_then(|cfg| handler(&cfg)) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
