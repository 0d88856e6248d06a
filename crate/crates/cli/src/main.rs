mod commands;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use conceptgrid::config::{RunConfig, KEYS};

use commands::Axis;
use error::CliError;

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let mut cmd = Command::new("conceptgrid")
        .about("Concept segmentation with split-reference episodes on a synthetic micro-world")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .global(true)
                .value_name("FILE")
                .help("flat `key = value` config file; CONCEPTGRID_<KEY> variables and flags override it"),
        );
    for key in KEYS {
        cmd = cmd.arg(Arg::new(key).long(flag(key)).global(true).value_name("VALUE").hide_short_help(true));
    }
    cmd.subcommand(
        Command::new("gen")
            .about("Generate a dataset")
            .arg(Arg::new("out").long("out").value_name("DIR").help("output directory (default: the dataset key)")),
    )
    .subcommand(
        Command::new("train")
            .about("Run one training stage")
            .arg(
                Arg::new("stage")
                    .long("stage")
                    .required(true)
                    .value_parser(clap::value_parser!(u8).range(1..=2)),
            )
            .arg(Arg::new("out").long("out").value_name("FILE").help("checkpoint to write")),
    )
    .subcommand(Command::new("eval").about("Evaluate a checkpoint under all three router modes"))
    .subcommand(
        Command::new("sweep")
            .about("Train and evaluate across one axis")
            .arg(Arg::new("axis").long("axis").required(true).value_name("L2|k|rewards"))
            .arg(
                Arg::new("values")
                    .long("values")
                    .value_name("LIST")
                    .action(ArgAction::Set)
                    .help("comma-separated values (default depends on the axis)"),
            ),
    )
}

fn build_config(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let path = PathBuf::from(path);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_env(std::env::vars())?;
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(m: &ArgMatches) -> Result<(), CliError> {
    let cfg = build_config(m)?;
    match m.subcommand() {
        Some(("gen", sub)) => {
            let out = sub.get_one::<String>("out").map(PathBuf::from).unwrap_or_else(|| cfg.dataset.clone());
            let manifest = commands::gen(&cfg, &out)?;
            println!("wrote {} episodes to {}", manifest.episodes, out.display());
            for (f, n) in &manifest.family_counts {
                println!("  {f:16} {n}");
            }
        }
        Some(("train", sub)) => {
            let stage = *sub.get_one::<u8>("stage").expect("required");
            let out = sub.get_one::<String>("out").map(PathBuf::from);
            let (ckpt, trace) = commands::train(&cfg, stage, out)?;
            println!("stage {stage}: checkpoint {} trace {}", ckpt.display(), trace.display());
        }
        Some(("eval", _)) => {
            let r = commands::eval(&cfg)?;
            for s in &r.modes {
                let o = &s.overall;
                println!(
                    "{:8} miou {:.4} mdice {:.4} mae {:.4} routing {:.3} accuracy {:.3}",
                    s.mode.name(),
                    o.miou,
                    o.mdice,
                    o.mae,
                    o.routing_rate,
                    o.target_accuracy
                );
            }
            println!("report written to {}", cfg.report.display());
        }
        Some(("sweep", sub)) => {
            let axis = Axis::parse(sub.get_one::<String>("axis").expect("required"))?;
            let values = match sub.get_one::<String>("values") {
                Some(v) => v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
                None => axis.default_values(),
            };
            let r = commands::sweep(&cfg, axis, &values)?;
            for row in &r.rows {
                println!("{:16} miou {:.4} accuracy {:.3}", row.label, row.row.miou, row.row.target_accuracy);
            }
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    match run(&m) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
