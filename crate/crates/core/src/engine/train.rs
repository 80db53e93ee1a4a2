use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::PatientState;
use crate::engine::{EngineError, LabeledSet, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Training stops once the mean epoch loss is at or below this.
    pub target_loss: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 2000,
            seed: 0,
            init_scale: 0.5,
            target_loss: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EngineError::Hyperparam("learning_rate"));
        }
        if self.epochs == 0 {
            return Err(EngineError::Hyperparam("epochs"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(EngineError::Hyperparam("init_scale"));
        }
        if !(self.target_loss >= 0.0) {
            return Err(EngineError::Hyperparam("target_loss"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch, measured before each update.
    pub loss_curve: Vec<f64>,
    pub epochs_run: usize,
    /// Whether `target_loss` was reached before the epoch budget ran out.
    pub converged: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().copied().unwrap_or(f64::NAN)
    }
}

/// Per-example gradient descent over a freshly shuffled order each epoch.
pub fn train(model: &mut MlpModel, data: &LabeledSet, hp: &Hyperparams) -> Result<TrainReport, EngineError> {
    if data.is_empty() {
        return Err(EngineError::EmptySet);
    }
    if data.n_inputs() != model.n_inputs {
        return Err(EngineError::DimensionMismatch {
            expected: model.n_inputs,
            got: data.n_inputs(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::new();
    let mut converged = false;
    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (x, label) = &data.rows()[i];
            total += model.backprop_step(x, *label as f64, hp.learning_rate)?;
        }
        let mean = total / data.len() as f64;
        loss_curve.push(mean);
        if mean <= hp.target_loss {
            converged = true;
            break;
        }
    }
    Ok(TrainReport {
        epochs_run: loss_curve.len(),
        loss_curve,
        converged,
    })
}

/// Anomaly is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn correct(&self) -> usize {
        self.tp + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
}

pub fn evaluate(model: &MlpModel, test: &LabeledSet) -> Result<Evaluation, EngineError> {
    if test.is_empty() {
        return Err(EngineError::EmptySet);
    }
    let mut c = Confusion::default();
    for (x, label) in test.rows() {
        let predicted = model.classify(x)?;
        match (predicted, *label == 1) {
            (PatientState::Anomaly, true) => c.tp += 1,
            (PatientState::Normal, false) => c.tn += 1,
            (PatientState::Anomaly, false) => c.fp += 1,
            (PatientState::Normal, true) => c.fn_ += 1,
        }
    }
    Ok(Evaluation {
        accuracy: c.correct() as f64 / c.total() as f64,
        confusion: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{init_model, FeatureVector};

    fn xor() -> LabeledSet {
        LabeledSet::new(vec![
            (FeatureVector::from_raw(vec![0.0, 0.0, 0.0]), 0),
            (FeatureVector::from_raw(vec![0.0, 1.0, 0.0]), 1),
            (FeatureVector::from_raw(vec![1.0, 0.0, 0.0]), 1),
            (FeatureVector::from_raw(vec![1.0, 1.0, 0.0]), 0),
        ])
        .unwrap()
    }

    /// Output 0.6 everywhere: zero hidden weights, b2 = logit(0.6).
    fn constant_model(n: usize, y: f64) -> MlpModel {
        let mut m = MlpModel::zeros(n, 2);
        m.b2 = (y / (1.0 - y)).ln();
        m
    }

    #[test]
    fn xor_is_learned_with_defaults() {
        let hp = Hyperparams::default();
        let mut m = init_model(3, 5, hp.init_scale, 0).unwrap();
        let report = train(&mut m, &xor(), &hp).unwrap();
        assert_eq!(evaluate(&m, &xor()).unwrap().accuracy, 1.0, "{:?}", report.final_loss());
        assert!(report.final_loss() < report.loss_curve[0]);
    }

    #[test]
    fn single_example_fits_below_target() {
        let data = LabeledSet::new(vec![(FeatureVector::from_raw(vec![0.9, 0.2, 0.4, 0.1]), 1)]).unwrap();
        let hp = Hyperparams::default();
        let mut m = init_model(4, 5, hp.init_scale, 5).unwrap();
        let r = train(&mut m, &data, &hp).unwrap();
        assert!(r.converged);
        assert!(r.final_loss() <= hp.target_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let hp = Hyperparams { seed: 8, epochs: 50, ..Default::default() };
        let run = || {
            let mut m = init_model(3, 5, hp.init_scale, 2).unwrap();
            let r = train(&mut m, &xor(), &hp).unwrap();
            (m, r)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn constant_output_accuracy() {
        let m = constant_model(3, 0.6);
        let x = FeatureVector::from_raw(vec![0.1, 0.2, 0.3]);
        assert!((m.forward(&x).unwrap() - 0.6).abs() < 1e-12);
        let all_anomaly = LabeledSet::new(vec![(x.clone(), 1); 7]).unwrap();
        let all_normal = LabeledSet::new(vec![(x, 0); 7]).unwrap();
        assert_eq!(evaluate(&m, &all_anomaly).unwrap().accuracy, 1.0);
        let e = evaluate(&m, &all_normal).unwrap();
        assert_eq!(e.accuracy, 0.0);
        assert_eq!(e.confusion, Confusion { tp: 0, tn: 0, fp: 7, fn_: 0 });
    }

    #[test]
    fn errors() {
        let hp = Hyperparams::default();
        let mut m = MlpModel::zeros(4, 2);
        assert_eq!(train(&mut m, &LabeledSet::empty(), &hp), Err(EngineError::EmptySet));
        assert!(matches!(
            train(&mut m, &xor(), &hp),
            Err(EngineError::DimensionMismatch { expected: 4, got: 3 })
        ));
        assert!(Hyperparams { learning_rate: 0.0, ..hp }.validate().is_err());
        assert!(Hyperparams { epochs: 0, ..hp }.validate().is_err());
    }
}
