//! Experiment harness: grid configuration, seeded multi-trial runs over both
//! backends, incremental CSV output, and plot-ready accuracy-vs-epsilon files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{
    build_records, load_idx_dir, make_splits, resolve_data_dir, synthetic_dataset, take_records,
    ImageRecord, SplitSpec, DATA_DIR_ENV,
};
use crate::error::{Error, Result};
use crate::pate::{derive_seed, run_pate, BackendKind, Hyperparams, PateConfig, PateData};

/// Which backends a grid covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendSel {
    Classical,
    Quantum,
    Both,
}

impl BackendSel {
    pub fn kinds(&self) -> Vec<BackendKind> {
        match self {
            BackendSel::Classical => vec![BackendKind::Classical],
            BackendSel::Quantum => vec![BackendKind::Quantum],
            BackendSel::Both => vec![BackendKind::Classical, BackendKind::Quantum],
        }
    }
}

impl std::str::FromStr for BackendSel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(BackendSel::Classical),
            "quantum" => Ok(BackendSel::Quantum),
            "both" => Ok(BackendSel::Both),
            other => Err(Error::Usage(format!("unknown backend '{other}'"))),
        }
    }
}

/// Full grid configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub backend: BackendSel,
    pub epsilons: Vec<f64>,
    pub epochs: Vec<usize>,
    pub trials: usize,
    pub num_teachers: usize,
    pub master_seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub synthetic: bool,
    pub jobs: usize,
    pub teacher_pool: usize,
    pub student_pool: usize,
    pub delta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            backend: BackendSel::Both,
            epsilons: vec![0.01, 0.1, 1.0, 10.0],
            epochs: vec![1, 10, 20],
            trials: 10,
            num_teachers: 4,
            master_seed: 42,
            data_dir: None,
            out_dir: PathBuf::from("results"),
            synthetic: false,
            jobs: 1,
            teacher_pool: 1000,
            student_pool: 1000,
            delta: 1e-5,
            learning_rate: 0.001,
            batch_size: 64,
            weight_decay: 1e-4,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Usage("trials must be at least 1".into()));
        }
        if self.num_teachers == 0 {
            return Err(Error::Usage("teacher count must be at least 1".into()));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| e <= 0.0) {
            return Err(Error::Usage("every epsilon must be positive".into()));
        }
        if self.epochs.is_empty() {
            return Err(Error::Usage("at least one epoch count is required".into()));
        }
        Ok(())
    }
}

/// One aggregated grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub backend: String,
    pub epsilon: f64,
    pub delta: f64,
    pub epochs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub eps_certified: f64,
    pub gamma: f64,
    pub seconds: f64,
    pub seeds: Vec<u64>,
    pub trial_accuracies: Vec<f64>,
}

pub const CSV_HEADER: &str =
    "backend,epsilon,delta,epochs,acc_mean,acc_std,eps_certified,gamma,seconds";

fn fmt_float(x: f64) -> String {
    // Six significant digits, stable across writers and parsers.
    format!("{x:.5e}")
}

fn csv_line(row: &ResultRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.backend,
        fmt_float(row.epsilon),
        fmt_float(row.delta),
        row.epochs,
        fmt_float(row.acc_mean),
        fmt_float(row.acc_std),
        fmt_float(row.eps_certified),
        fmt_float(row.gamma),
        fmt_float(row.seconds),
    )
}

/// Parses a CSV produced by [`emit_table`] or the incremental writer.
pub fn parse_table_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::Format(format!("unexpected CSV header: {other:?}"))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Format(format!(
                "line {}: expected 9 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("line {}: bad number '{s}': {e}", lineno + 2)))
        };
        rows.push(ResultRow {
            backend: fields[0].to_string(),
            epsilon: num(fields[1])?,
            delta: num(fields[2])?,
            epochs: fields[3]
                .parse()
                .map_err(|e| Error::Format(format!("line {}: bad epochs: {e}", lineno + 2)))?,
            acc_mean: num(fields[4])?,
            acc_std: num(fields[5])?,
            eps_certified: num(fields[6])?,
            gamma: num(fields[7])?,
            seconds: num(fields[8])?,
            seeds: Vec::new(),
            trial_accuracies: Vec::new(),
        });
    }
    Ok(rows)
}

/// Resolved dataset splits for a whole grid.
pub struct GridData {
    pub teacher_pool: Vec<ImageRecord>,
    pub student_pool: Vec<ImageRecord>,
    pub validation: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
    pub test_full: Vec<ImageRecord>,
    pub source: String,
}

/// Loads the dataset either from IDX files or from the synthetic generator.
/// Synthetic mode draws one deterministic pool sized for the splits plus a
/// larger held-out set.
pub fn prepare_data(config: &ExperimentConfig) -> Result<GridData> {
    let spec = SplitSpec {
        teacher_pool: config.teacher_pool,
        student_pool: config.student_pool,
        validation: 100,
        test: 100,
        seed: derive_seed(config.master_seed, "splits", 0),
    };
    if config.synthetic {
        let needed = spec.teacher_pool + spec.student_pool + spec.validation + spec.test;
        let extra_test = 1000;
        let records = synthetic_dataset(
            needed + extra_test,
            derive_seed(config.master_seed, "synthetic", 0),
        )?;
        let splits = make_splits(needed, &spec)?;
        Ok(GridData {
            teacher_pool: take_records(&records, &splits.teacher),
            student_pool: take_records(&records, &splits.student),
            validation: take_records(&records, &splits.validation),
            test: take_records(&records, &splits.test),
            test_full: records[needed..].to_vec(),
            source: "synthetic".to_string(),
        })
    } else {
        let dir = resolve_data_dir(config.data_dir.as_deref()).ok_or_else(|| {
            Error::Usage(format!(
                "no dataset directory: pass --data-dir, set {DATA_DIR_ENV}, or use --synthetic"
            ))
        })?;
        let (train_images, train_labels) = load_idx_dir(&dir, "train")?;
        let train_records = build_records(&train_images, &train_labels)?;
        let splits = make_splits(train_records.len(), &spec)?;
        let (test_images, test_labels) = load_idx_dir(&dir, "t10k")?;
        let test_records = build_records(&test_images, &test_labels)?;
        Ok(GridData {
            teacher_pool: take_records(&train_records, &splits.teacher),
            student_pool: take_records(&train_records, &splits.student),
            validation: take_records(&train_records, &splits.validation),
            test: take_records(&train_records, &splits.test),
            test_full: test_records,
            source: dir.display().to_string(),
        })
    }
}

fn trial_seed(master: u64, backend: BackendKind, epsilon: f64, epochs: usize, trial: usize) -> u64 {
    let tag = format!("{}|{:?}|{}|{}", backend.as_str(), epsilon, epochs, trial);
    derive_seed(master, &tag, 0)
}

/// Runs one grid cell: `trials` independent runs with derived seeds.
fn run_cell(
    config: &ExperimentConfig,
    data: &GridData,
    backend: BackendKind,
    epsilon: f64,
    epochs: usize,
) -> Result<(ResultRow, String)> {
    let started = Instant::now();
    let mut accuracies = Vec::with_capacity(config.trials);
    let mut seeds = Vec::with_capacity(config.trials);
    let mut certified: f64 = 0.0;
    let mut gamma = f64::NAN;
    let mut last_report = String::new();
    for trial in 0..config.trials {
        let seed = trial_seed(config.master_seed, backend, epsilon, epochs, trial);
        seeds.push(seed);
        let run = run_pate(
            &PateConfig {
                backend,
                num_teachers: config.num_teachers,
                target_epsilon: epsilon,
                delta: config.delta,
                hyper: Hyperparams {
                    learning_rate: config.learning_rate,
                    weight_decay: config.weight_decay,
                    batch_size: config.batch_size,
                    epochs,
                },
                seed,
            },
            &PateData {
                teacher_pool: &data.teacher_pool,
                student_pool: &data.student_pool,
                validation: &data.validation,
                test: &data.test,
                test_full: if data.test_full.is_empty() {
                    None
                } else {
                    Some(&data.test_full)
                },
            },
        )?;
        assert!(run.certified_epsilon <= epsilon);
        certified = certified.max(run.certified_epsilon);
        gamma = run.gamma;
        accuracies.push(run.student_accuracy);
        last_report = run.ledger_report;
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let std = if accuracies.len() > 1 {
        (accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / (accuracies.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    Ok((
        ResultRow {
            backend: backend.as_str().to_string(),
            epsilon,
            delta: config.delta,
            epochs,
            acc_mean: mean,
            acc_std: std,
            eps_certified: certified,
            gamma,
            seconds: started.elapsed().as_secs_f64(),
            seeds,
            trial_accuracies: accuracies,
        },
        last_report,
    ))
}

/// Runs the whole grid. Rows are appended to `results.csv` as cells finish so
/// partial runs survive; a cell failure is reported and skips only that cell.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment_with_data(config, &prepare_data(config)?)
}

pub fn run_experiment_with_data(
    config: &ExperimentConfig,
    data: &GridData,
) -> Result<Vec<ResultRow>> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let ledger_dir = config.out_dir.join("ledgers");
    fs::create_dir_all(&ledger_dir)?;

    let incremental_path = config.out_dir.join("results.csv");
    let mut incremental = fs::File::create(&incremental_path)?;
    writeln!(incremental, "{CSV_HEADER}")?;

    let mut cells = Vec::new();
    for backend in config.backend.kinds() {
        for &epsilon in &config.epsilons {
            for &epochs in &config.epochs {
                cells.push((backend, epsilon, epochs));
            }
        }
    }

    let mut rows = Vec::new();
    let run_one = |&(backend, epsilon, epochs): &(BackendKind, f64, usize)| {
        (
            (backend, epsilon, epochs),
            run_cell(config, data, backend, epsilon, epochs),
        )
    };
    let outcomes: Vec<_> = if config.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| {
                Error::Config(format!("cannot build a {}-thread pool: {e}", config.jobs))
            })?;
        pool.install(|| {
            use rayon::prelude::*;
            cells.par_iter().map(run_one).collect()
        })
    } else {
        cells.iter().map(run_one).collect()
    };

    for ((backend, epsilon, epochs), outcome) in outcomes {
        match outcome {
            Ok((row, report)) => {
                writeln!(incremental, "{}", csv_line(&row))?;
                incremental.flush()?;
                let report_path = ledger_dir.join(format!(
                    "{}_eps{}_ep{}.txt",
                    backend.as_str(),
                    epsilon,
                    epochs
                ));
                fs::write(report_path, report)?;
                rows.push(row);
            }
            Err(e) => {
                eprintln!(
                    "cell ({}, epsilon {}, {} epochs) failed: {e}",
                    backend.as_str(),
                    epsilon,
                    epochs
                );
            }
        }
    }
    Ok(rows)
}

/// Writes the sorted CSV plus a fixed-width text rendering. Returns both paths.
pub fn emit_table(rows: &[ResultRow], out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if rows.is_empty() {
        return Err(Error::Usage("no result rows to emit".into()));
    }
    for row in rows {
        assert!(
            row.eps_certified <= row.epsilon,
            "certified epsilon exceeds the configured budget in row {row:?}"
        );
    }
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.backend.as_str(), a.epsilon, a.epochs)
            .partial_cmp(&(b.backend.as_str(), b.epsilon, b.epochs))
            .expect("no NaN keys")
    });

    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("table.csv");
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for row in &sorted {
        csv.push_str(&csv_line(row));
        csv.push('\n');
    }
    fs::write(&csv_path, &csv)?;

    let txt_path = out_dir.join("table.txt");
    let mut txt = String::new();
    writeln!(
        txt,
        "{:<10} {:>8} {:>8} {:>7} {:>22} {:>14} {:>12} {:>10}",
        "backend", "epsilon", "delta", "epochs", "accuracy (mean+/-std)", "eps_certified", "gamma", "seconds"
    )
    .unwrap();
    for row in &sorted {
        writeln!(
            txt,
            "{:<10} {:>8} {:>8} {:>7} {:>13.4} +/- {:>6.4} {:>14.4e} {:>12.4e} {:>10.2}",
            row.backend,
            row.epsilon,
            row.delta,
            row.epochs,
            row.acc_mean,
            row.acc_std,
            row.eps_certified,
            row.gamma,
            row.seconds
        )
        .unwrap();
    }
    fs::write(&txt_path, &txt)?;
    Ok((csv_path, txt_path))
}

/// Writes one whitespace-delimited `epsilon mean std` file per
/// (backend, epochs) pair, x-sorted, for external plotting.
pub fn emit_curve(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let distinct: std::collections::BTreeSet<u64> =
        rows.iter().map(|r| r.epsilon.to_bits()).collect();
    if distinct.len() < 2 {
        return Err(Error::Usage(
            "accuracy-vs-epsilon curves need at least two epsilon values".into(),
        ));
    }
    fs::create_dir_all(out_dir)?;
    let mut groups: std::collections::BTreeMap<(String, usize), Vec<&ResultRow>> =
        std::collections::BTreeMap::new();
    for row in rows {
        groups
            .entry((row.backend.clone(), row.epochs))
            .or_default()
            .push(row);
    }
    let mut paths = Vec::new();
    for ((backend, epochs), mut group) in groups {
        group.sort_by(|a, b| a.epsilon.partial_cmp(&b.epsilon).expect("no NaN epsilon"));
        let mut body = String::new();
        for row in group {
            writeln!(
                body,
                "{} {} {}",
                fmt_float(row.epsilon),
                fmt_float(row.acc_mean),
                fmt_float(row.acc_std)
            )
            .unwrap();
        }
        let path = out_dir.join(format!("curve_{backend}_ep{epochs}.dat"));
        fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Flat `key=value` config file; `#` starts a comment. Returns key/value pairs
/// in file order.
pub fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!(
                "config line {}: expected key=value, got '{raw}'",
                lineno + 1
            ))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<ResultRow> {
        vec![
            ResultRow {
                backend: "quantum".into(),
                epsilon: 10.0,
                delta: 1e-5,
                epochs: 20,
                acc_mean: 0.97,
                acc_std: 0.01,
                eps_certified: 9.5,
                gamma: 0.0391,
                seconds: 12.0,
                seeds: vec![1],
                trial_accuracies: vec![0.97],
            },
            ResultRow {
                backend: "classical".into(),
                epsilon: 0.1,
                delta: 1e-5,
                epochs: 20,
                acc_mean: 0.5,
                acc_std: 0.02,
                eps_certified: 0.0999,
                gamma: 1e-4,
                seconds: 5.0,
                seeds: vec![2],
                trial_accuracies: vec![0.5],
            },
            ResultRow {
                backend: "classical".into(),
                epsilon: 10.0,
                delta: 1e-5,
                epochs: 1,
                acc_mean: 0.9,
                acc_std: 0.0,
                eps_certified: 9.0,
                gamma: 0.0391,
                seconds: 2.0,
                seeds: vec![3],
                trial_accuracies: vec![0.9],
            },
        ]
    }

    #[test]
    fn table_round_trips_at_six_significant_digits() {
        let dir = tempfile::tempdir().unwrap();
        let rows = sample_rows();
        let (csv_path, txt_path) = emit_table(&rows, dir.path()).unwrap();
        assert!(txt_path.is_file());
        let parsed = parse_table_csv(&fs::read_to_string(&csv_path).unwrap()).unwrap();
        assert_eq!(parsed.len(), rows.len());
        // Sorted by (backend, epsilon) ascending.
        assert_eq!(parsed[0].backend, "classical");
        assert!(parsed[0].epsilon < parsed[1].epsilon);
        assert_eq!(parsed[2].backend, "quantum");
        for p in &parsed {
            let orig = rows
                .iter()
                .find(|r| {
                    r.backend == p.backend
                        && r.epochs == p.epochs
                        && (r.epsilon - p.epsilon).abs() < 1e-12
                })
                .unwrap();
            for (a, b) in [
                (p.acc_mean, orig.acc_mean),
                (p.acc_std, orig.acc_std),
                (p.eps_certified, orig.eps_certified),
                (p.gamma, orig.gamma),
            ] {
                let rel = if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
                assert!(rel < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn curves_are_grouped_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_curve(&sample_rows(), dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let content = fs::read_to_string(dir.path().join("curve_classical_ep20.dat")).unwrap();
        let first_field = content.lines().next().unwrap().split(' ').next().unwrap();
        let eps: f64 = first_field.parse().unwrap();
        assert!((eps - 0.1).abs() < 1e-9);
    }

    #[test]
    fn curve_requires_two_epsilons() {
        let dir = tempfile::tempdir().unwrap();
        let one = vec![sample_rows()[0].clone()];
        assert!(emit_curve(&one, dir.path()).is_err());
    }

    #[test]
    fn single_row_table_still_emits_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let one = vec![sample_rows()[0].clone()];
        let (csv_path, txt_path) = emit_table(&one, dir.path()).unwrap();
        assert!(txt_path.is_file());
        let parsed = parse_table_csv(&fs::read_to_string(csv_path).unwrap()).unwrap();
        assert_eq!(parsed.len(), 1);
    }

    #[test]
    fn full_grid_curve_count_and_line_count() {
        // 4 epsilons x 2 backends x 3 epoch settings -> 6 files, 4 lines each.
        let mut rows = Vec::new();
        for backend in ["classical", "quantum"] {
            for epochs in [1usize, 10, 20] {
                for eps in [0.01, 0.1, 1.0, 10.0] {
                    rows.push(ResultRow {
                        backend: backend.into(),
                        epsilon: eps,
                        delta: 1e-5,
                        epochs,
                        acc_mean: 0.9,
                        acc_std: 0.01,
                        eps_certified: eps * 0.99,
                        gamma: 0.01,
                        seconds: 1.0,
                        seeds: vec![],
                        trial_accuracies: vec![],
                    });
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_curve(&rows, dir.path()).unwrap();
        assert_eq!(paths.len(), 6);
        for path in paths {
            let body = fs::read_to_string(path).unwrap();
            assert_eq!(body.lines().count(), 4);
            let first: Vec<f64> = body
                .lines()
                .map(|l| l.split(' ').next().unwrap().parse().unwrap())
                .collect();
            assert!(first.windows(2).all(|w| w[0] < w[1]), "x not increasing");
        }
    }

    #[test]
    fn config_file_parses_comments_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# grid\nbackend=quantum\ntrials = 3  # small\n\n").unwrap();
        let pairs = parse_config_file(&path).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("backend".to_string(), "quantum".to_string()),
                ("trials".to_string(), "3".to_string())
            ]
        );
        fs::write(&path, "not a pair\n").unwrap();
        assert!(parse_config_file(&path).is_err());
    }

    #[test]
    fn validate_rejects_bad_grids() {
        let mut config = ExperimentConfig {
            trials: 0,
            ..ExperimentConfig::default()
        };
        assert!(config.validate().is_err());
        config.trials = 1;
        config.epsilons = vec![-1.0];
        assert!(config.validate().is_err());
    }

    #[test]
    fn failing_cells_are_skipped_without_aborting_the_grid() {
        // Four teachers cannot split a three-record pool, so every cell
        // errors; the run must finish, report, and return zero rows.
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            backend: BackendSel::Classical,
            epsilons: vec![10.0],
            epochs: vec![1],
            trials: 1,
            teacher_pool: 3,
            student_pool: 10,
            synthetic: true,
            out_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let rows = run_experiment(&config).unwrap();
        assert!(rows.is_empty());
        // The incremental CSV still exists with just its header.
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.trim(), CSV_HEADER);
    }
}
