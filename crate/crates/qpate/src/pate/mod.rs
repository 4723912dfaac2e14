//! The teacher/student protocol: disjoint partitioning, independent teacher
//! training, noisy-argmax labeling of a public pool, and student training.
//!
//! The student trainer only ever sees public images and a labeling callback;
//! teacher parameters and private shards never cross that boundary.

mod model;

pub use model::{batch_tensor, BackendKind, Hyperparams, Model, IMAGE_SIDE, NUM_CLASSES};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ImageRecord;
use crate::dp::{noisy_argmax, solve_gamma, LaplaceNoise, PrivacyLedger, VoteHistogram};
use crate::error::{Error, Result};

/// Seeded shuffle followed by a round-robin split into `n` subsets whose
/// sizes differ by at most one; together they cover the pool exactly.
pub fn partition_data<T: Clone>(pool: &[T], n: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if n == 0 {
        return Err(Error::Usage("partition count must be positive".into()));
    }
    if pool.len() < n {
        return Err(Error::Usage(format!(
            "cannot split {} records into {n} non-empty subsets",
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    crate::data::shuffle(&mut order, &mut rng);
    let mut subsets = vec![Vec::with_capacity(pool.len() / n + 1); n];
    for (k, idx) in order.into_iter().enumerate() {
        subsets[k % n].push(pool[idx].clone());
    }
    Ok(subsets)
}

/// A trained teacher and its held-out accuracy.
pub struct TrainedTeacher {
    pub model: Model,
    pub validation_accuracy: f64,
}

/// Ordinary (non-private) supervised training on one disjoint shard.
pub fn train_teacher(
    subset: &[ImageRecord],
    kind: BackendKind,
    hyper: &Hyperparams,
    seed: u64,
    validation: &[ImageRecord],
) -> Result<TrainedTeacher> {
    if subset.is_empty() {
        return Err(Error::Usage("teacher shard is empty".into()));
    }
    let mut model = Model::new(kind, seed)?;
    let labels: Vec<usize> = subset.iter().map(|r| r.label as usize).collect();
    model.train(subset, &labels, hyper, seed.wrapping_add(1))?;
    let validation_accuracy = if validation.is_empty() {
        f64::NAN
    } else {
        evaluate(&model, validation)?
    };
    Ok(TrainedTeacher {
        model,
        validation_accuracy,
    })
}

/// One label query: collect per-teacher argmax votes, add Laplace noise to
/// the histogram, return the noisy winner, and charge the ledger exactly once.
pub fn aggregate_label(
    teachers: &[Model],
    image: &ImageRecord,
    noise: &mut LaplaceNoise,
    ledger: &mut PrivacyLedger,
) -> Result<usize> {
    if teachers.is_empty() {
        return Err(Error::Usage("label aggregation needs at least one teacher".into()));
    }
    let mut votes = Vec::with_capacity(teachers.len());
    for teacher in teachers {
        votes.push(teacher.predict(std::slice::from_ref(image))?[0]);
    }
    let histogram = VoteHistogram::from_labels(&votes, NUM_CLASSES)?;
    let label = noisy_argmax(&histogram, noise)?;
    ledger.record_query();
    Ok(label)
}

/// Labels every public image once through the callback (charging the ledger),
/// verifies the certified budget, then trains a fresh student on the noisy
/// labels. Returns the student and its certified epsilon.
pub fn train_student<F>(
    public: &[ImageRecord],
    mut label_fn: F,
    ledger: &mut PrivacyLedger,
    target_epsilon: f64,
    kind: BackendKind,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<(Model, f64)>
where
    F: FnMut(&ImageRecord, &mut PrivacyLedger) -> Result<usize>,
{
    if public.is_empty() {
        return Err(Error::Usage("student pool is empty".into()));
    }
    let mut labels = Vec::with_capacity(public.len());
    for image in public {
        labels.push(label_fn(image, ledger)?);
    }
    let certified = ledger.epsilon();
    if certified > target_epsilon {
        return Err(Error::Accounting(format!(
            "certified epsilon {certified:e} exceeds the target {target_epsilon:e} \
             after {} label queries",
            ledger.query_count()
        )));
    }
    let mut student = Model::new(kind, seed)?;
    student.train(public, &labels, hyper, seed.wrapping_add(1))?;
    Ok((student, certified))
}

/// Fraction of argmax-correct predictions.
pub fn evaluate(model: &Model, test: &[ImageRecord]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Usage("evaluation set is empty".into()));
    }
    let predictions = model.predict(test)?;
    let correct = predictions
        .iter()
        .zip(test)
        .filter(|(&p, r)| p == r.label as usize)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Inputs of one end-to-end run.
pub struct PateConfig {
    pub backend: BackendKind,
    pub num_teachers: usize,
    pub target_epsilon: f64,
    pub delta: f64,
    pub hyper: Hyperparams,
    pub seed: u64,
}

/// Data for one end-to-end run. `test_full` optionally carries a larger
/// held-out set reported alongside the headline test split.
pub struct PateData<'a> {
    pub teacher_pool: &'a [ImageRecord],
    pub student_pool: &'a [ImageRecord],
    pub validation: &'a [ImageRecord],
    pub test: &'a [ImageRecord],
    pub test_full: Option<&'a [ImageRecord]>,
}

/// Full record of one run: configuration, noise level, accuracies, and the
/// certified budget.
#[derive(Debug, Clone)]
pub struct PateRun {
    pub backend: BackendKind,
    pub num_teachers: usize,
    pub target_epsilon: f64,
    pub certified_epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub teacher_accuracies: Vec<f64>,
    pub student_accuracy: f64,
    pub student_accuracy_full: Option<f64>,
    pub ledger_report: String,
}

/// Runs the whole protocol: solve the noise level from the target budget,
/// partition the private pool, train the teachers concurrently, label the
/// public pool through the noisy vote, train the student, and evaluate.
pub fn run_pate(config: &PateConfig, data: &PateData) -> Result<PateRun> {
    let queries = data.student_pool.len() as u64;
    let gamma = solve_gamma(config.target_epsilon, queries, config.delta)?;

    let shards = partition_data(data.teacher_pool, config.num_teachers, config.seed)?;
    let teacher_seeds: Vec<u64> = (0..config.num_teachers)
        .map(|i| derive_seed(config.seed, "teacher", i as u64))
        .collect();

    let teachers: Vec<TrainedTeacher> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .zip(&teacher_seeds)
            .map(|(shard, &seed)| {
                let hyper = config.hyper;
                let kind = config.backend;
                let validation = data.validation;
                scope.spawn(move || train_teacher(shard, kind, &hyper, seed, validation))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("teacher thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    let teacher_accuracies: Vec<f64> = teachers.iter().map(|t| t.validation_accuracy).collect();
    let teacher_models: Vec<Model> = teachers.into_iter().map(|t| t.model).collect();

    let mut ledger = PrivacyLedger::new(gamma, config.delta)?;
    let mut noise = LaplaceNoise::new(gamma, derive_seed(config.seed, "noise", 0))?;
    let (student, certified_epsilon) = train_student(
        data.student_pool,
        |image, ledger| aggregate_label(&teacher_models, image, &mut noise, ledger),
        &mut ledger,
        config.target_epsilon,
        config.backend,
        &config.hyper,
        derive_seed(config.seed, "student", 0),
    )?;

    let student_accuracy = evaluate(&student, data.test)?;
    let student_accuracy_full = match data.test_full {
        Some(full) if !full.is_empty() => Some(evaluate(&student, full)?),
        _ => None,
    };

    Ok(PateRun {
        backend: config.backend,
        num_teachers: config.num_teachers,
        target_epsilon: config.target_epsilon,
        certified_epsilon,
        delta: config.delta,
        gamma,
        epochs: config.hyper.epochs,
        batch_size: config.hyper.batch_size,
        seed: config.seed,
        teacher_accuracies,
        student_accuracy,
        student_accuracy_full,
        ledger_report: ledger.report(),
    })
}

/// Stable FNV-1a over a role string; keeps every consumer of the master seed
/// on an independent stream.
pub fn derive_seed(master: u64, role: &str, index: u64) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |byte: u8| {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    };
    for b in master.to_le_bytes() {
        eat(b);
    }
    for b in role.bytes() {
        eat(b);
    }
    for b in index.to_le_bytes() {
        eat(b);
    }
    hash
}
