//! Command-line front end: runs the teacher/student experiment grid and
//! emits the results table, accuracy-vs-epsilon curves, and ledger reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::Parser;

use qpate::error::Error;
use qpate::harness::{
    emit_curve, emit_table, parse_config_file, prepare_data, run_experiment_with_data,
    BackendSel, ExperimentConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "qpate",
    about = "Privacy-preserving teacher/student training over classical and hybrid quantum classifiers"
)]
struct Cli {
    /// Backend to run: classical, quantum, or both
    #[arg(long)]
    backend: Option<String>,

    /// Comma-separated privacy budgets to sweep
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,

    /// Comma-separated epoch counts to sweep
    #[arg(long, value_delimiter = ',')]
    epochs: Option<Vec<usize>>,

    /// Independent trials per grid cell
    #[arg(long)]
    trials: Option<usize>,

    /// Number of teacher models
    #[arg(long)]
    teachers: Option<usize>,

    /// Master seed; every trial derives its own stream from it
    #[arg(long)]
    seed: Option<u64>,

    /// Directory holding the IDX dataset files (falls back to QPATE_DATA_DIR)
    #[arg(long)]
    data_dir: Option<PathBuf>,

    /// Output directory for CSV, curves, and ledger reports
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Use the built-in synthetic dataset instead of IDX files
    #[arg(long)]
    synthetic: bool,

    /// Flat key=value config file; explicit flags override it
    #[arg(long)]
    config: Option<PathBuf>,

    /// Grid cells to run in parallel
    #[arg(long)]
    jobs: Option<usize>,

    /// Teacher pool size
    #[arg(long)]
    teacher_pool: Option<usize>,

    /// Student (public) pool size
    #[arg(long)]
    student_pool: Option<usize>,
}

fn usage_err(msg: String) -> Error {
    Error::Usage(msg)
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::default();

    if let Some(path) = &cli.config {
        for (key, value) in parse_config_file(path)? {
            apply_key(&mut config, &key, &value)?;
        }
    }

    if let Some(b) = &cli.backend {
        config.backend = BackendSel::from_str(b)?;
    }
    if let Some(e) = cli.epsilons {
        config.epsilons = e;
    }
    if let Some(e) = cli.epochs {
        config.epochs = e;
    }
    if let Some(t) = cli.trials {
        config.trials = t;
    }
    if let Some(t) = cli.teachers {
        config.num_teachers = t;
    }
    if let Some(s) = cli.seed {
        config.master_seed = s;
    }
    if let Some(d) = cli.data_dir {
        config.data_dir = Some(d);
    }
    if let Some(o) = cli.out_dir {
        config.out_dir = o;
    }
    if cli.synthetic {
        config.synthetic = true;
    }
    if let Some(j) = cli.jobs {
        config.jobs = j.max(1);
    }
    if let Some(p) = cli.teacher_pool {
        config.teacher_pool = p;
    }
    if let Some(p) = cli.student_pool {
        config.student_pool = p;
    }

    config.validate()?;
    Ok(config)
}

fn apply_key(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), Error> {
    let bad = |what: &str| usage_err(format!("config key '{key}': bad {what} '{value}'"));
    match key {
        "backend" => config.backend = BackendSel::from_str(value)?,
        "epsilons" => {
            config.epsilons = value
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad("number")))
                .collect::<Result<_, _>>()?;
        }
        "epochs" => {
            config.epochs = value
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad("integer")))
                .collect::<Result<_, _>>()?;
        }
        "trials" => config.trials = value.parse().map_err(|_| bad("integer"))?,
        "teachers" => config.num_teachers = value.parse().map_err(|_| bad("integer"))?,
        "seed" => config.master_seed = value.parse().map_err(|_| bad("integer"))?,
        "data_dir" => config.data_dir = Some(PathBuf::from(value)),
        "out_dir" => config.out_dir = PathBuf::from(value),
        "synthetic" => config.synthetic = value.parse().map_err(|_| bad("boolean"))?,
        "jobs" => config.jobs = value.parse().map_err(|_| bad("integer"))?,
        "teacher_pool" => config.teacher_pool = value.parse().map_err(|_| bad("integer"))?,
        "student_pool" => config.student_pool = value.parse().map_err(|_| bad("integer"))?,
        other => return Err(usage_err(format!("unknown config key '{other}'"))),
    }
    Ok(())
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    let config = build_config(cli)?;
    let out_dir = config.out_dir.clone();
    let data = prepare_data(&config)?;
    println!(
        "dataset: {} ({} teacher / {} student / {} validation / {} test records)",
        data.source,
        data.teacher_pool.len(),
        data.student_pool.len(),
        data.validation.len(),
        data.test.len()
    );
    let rows = run_experiment_with_data(&config, &data)?;
    if rows.is_empty() {
        return Err(Error::Accounting(
            "every grid cell failed; see messages above".into(),
        ));
    }
    let (csv, txt) = emit_table(&rows, &out_dir)?;
    println!("wrote {}", csv.display());
    println!("wrote {}", txt.display());
    match emit_curve(&rows, &out_dir) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(Error::Usage(_)) => {
            // A single-epsilon grid has no curve to draw.
        }
        Err(e) => return Err(e),
    }
    println!("{}", std::fs::read_to_string(&txt)?);
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
