//! Three-input versus four-input comparison over repeated fresh datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::dataset::{split, synthetic_samples, DEFAULT_ANOMALY_FRACTION, DEFAULT_SET_SIZE};
use crate::engine::{
    evaluate, init_model, train, EngineError, Hyperparams, LabeledSet, MlpModel, TrainReport, DEFAULT_HIDDEN,
};

/// Published median accuracies for the three- and four-input networks, kept
/// alongside study output for comparison.
pub const REFERENCE_ACCURACY_3: f64 = 0.87;
pub const REFERENCE_ACCURACY_4: f64 = 0.94;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub trials: usize,
    pub seed: u64,
    pub set_size: usize,
    pub anomaly_fraction: f64,
    pub train_fraction: f64,
    pub n_hidden: usize,
    pub hyperparams: Hyperparams,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            trials: 11,
            seed: 0,
            set_size: DEFAULT_SET_SIZE,
            anomaly_fraction: DEFAULT_ANOMALY_FRACTION,
            train_fraction: 0.8,
            n_hidden: DEFAULT_HIDDEN,
            hyperparams: Hyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub accuracy: f64,
    pub epochs: usize,
    pub converged: bool,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub anomaly_fraction: f64,
    pub three_inputs: ArmResult,
    pub four_inputs: ArmResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub trials: Vec<TrialResult>,
    pub median_accuracy_3: f64,
    pub median_accuracy_4: f64,
    pub median_epochs_3: f64,
    pub median_epochs_4: f64,
    pub reference_accuracy_3: f64,
    pub reference_accuracy_4: f64,
}

impl StudyReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("trial  seed                  anom%   acc(3)  acc(4)  epochs(3)  epochs(4)\n");
        for t in &self.trials {
            out.push_str(&format!(
                "{:>5}  {:<20}  {:>5.1}  {:>6.3}  {:>6.3}  {:>9}  {:>9}\n",
                t.trial,
                t.seed,
                100.0 * t.anomaly_fraction,
                t.three_inputs.accuracy,
                t.four_inputs.accuracy,
                t.three_inputs.epochs,
                t.four_inputs.epochs,
            ));
        }
        out.push_str(&format!(
            "median accuracy: 3 inputs {:.3}, 4 inputs {:.3}\n",
            self.median_accuracy_3, self.median_accuracy_4
        ));
        out.push_str(&format!(
            "median epochs:   3 inputs {}, 4 inputs {}\n",
            self.median_epochs_3, self.median_epochs_4
        ));
        out.push_str(&format!(
            "reference medians: 3 inputs {:.0}%, 4 inputs {:.0}%\n",
            100.0 * self.reference_accuracy_3,
            100.0 * self.reference_accuracy_4
        ));
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn run_arm(train_rows: &LabeledSet, test_rows: &LabeledSet, cfg: &StudyConfig, init_seed: u64) -> Result<ArmResult, EngineError> {
    let hp = &cfg.hyperparams;
    let mut model = init_model(train_rows.n_inputs(), cfg.n_hidden, hp.init_scale, init_seed)?;
    let report = train(&mut model, train_rows, hp)?;
    let eval = evaluate(&model, test_rows)?;
    Ok(ArmResult {
        accuracy: eval.accuracy,
        epochs: report.epochs_run,
        converged: report.converged,
        final_loss: report.final_loss(),
    })
}

fn run_trial(trial: usize, seed: u64, cfg: &StudyConfig) -> Result<TrialResult, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = synthetic_samples(cfg.set_size, cfg.anomaly_fraction, rng.random());
    let (train_s, test_s) = split(&samples, cfg.train_fraction, rng.random());
    let init_seed: u64 = rng.random();
    let hp = Hyperparams {
        seed: rng.random(),
        ..cfg.hyperparams
    };
    let cfg = StudyConfig { hyperparams: hp, ..*cfg };
    let arm = |n: usize| -> Result<ArmResult, EngineError> {
        run_arm(
            &LabeledSet::from_samples(&train_s, n)?,
            &LabeledSet::from_samples(&test_s, n)?,
            &cfg,
            init_seed,
        )
    };
    let anomalies = samples.iter().filter(|s| s.state == crate::domain::PatientState::Anomaly).count();
    Ok(TrialResult {
        trial,
        seed,
        anomaly_fraction: anomalies as f64 / samples.len().max(1) as f64,
        three_inputs: arm(3)?,
        four_inputs: arm(4)?,
    })
}

/// A 4-input network trained with default hyperparameters on the full
/// default-size synthetic set drawn from `seed`.
pub fn reference_model(seed: u64) -> Result<(MlpModel, TrainReport), EngineError> {
    let samples = synthetic_samples(DEFAULT_SET_SIZE, DEFAULT_ANOMALY_FRACTION, seed);
    let set = LabeledSet::from_samples(&samples, 4)?;
    let hp = Hyperparams { seed, ..Hyperparams::default() };
    let mut model = init_model(4, DEFAULT_HIDDEN, hp.init_scale, seed)?;
    let report = train(&mut model, &set, &hp)?;
    Ok((model, report))
}

/// Trains a 3-input and a 4-input network on identical fresh data for each
/// trial and reports test accuracy and epochs-to-target medians. Trials run
/// in parallel; the report depends only on `cfg`.
pub fn input_study(cfg: &StudyConfig) -> Result<StudyReport, EngineError> {
    if cfg.trials == 0 || cfg.trials % 2 == 0 {
        return Err(EngineError::Hyperparam("trials must be odd"));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(EngineError::Hyperparam("train_fraction"));
    }
    cfg.hyperparams.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.trials).map(|_| rng.random()).collect();
    let trials = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| run_trial(i, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let col = |f: &dyn Fn(&TrialResult) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
    Ok(StudyReport {
        config: *cfg,
        median_accuracy_3: median(&col(&|t| t.three_inputs.accuracy)),
        median_accuracy_4: median(&col(&|t| t.four_inputs.accuracy)),
        median_epochs_3: median(&col(&|t| t.three_inputs.epochs as f64)),
        median_epochs_4: median(&col(&|t| t.four_inputs.epochs as f64)),
        reference_accuracy_3: REFERENCE_ACCURACY_3,
        reference_accuracy_4: REFERENCE_ACCURACY_4,
        trials,
    })
}
