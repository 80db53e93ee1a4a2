//! Single-hidden-layer sigmoid network with one output unit.
//!
//! `y = σ(W2 · σ(W1 x + b1) + b2)`, trained on `L = ½ (y − t)²`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::PatientState;
use crate::engine::{EngineError, FeatureVector};

pub const DEFAULT_HIDDEN: usize = 5;
pub const DEFAULT_INIT_SCALE: f64 = 0.5;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Weights of both synapse layers. `w1` is `n_hidden × n_inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Partial derivatives of the loss, laid out like [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

pub struct Activations {
    pub hidden: Vec<f64>,
    pub output: f64,
}

impl MlpModel {
    pub fn zeros(n_inputs: usize, n_hidden: usize) -> Self {
        Self {
            n_inputs,
            n_hidden,
            w1: vec![0.0; n_hidden * n_inputs],
            b1: vec![0.0; n_hidden],
            w2: vec![0.0; n_hidden],
            b2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_hidden == 0 {
            return Err(EngineError::Shape("n_hidden must be at least 1".into()));
        }
        if self.n_inputs == 0 {
            return Err(EngineError::Shape("n_inputs must be at least 1".into()));
        }
        let expect = [
            ("w1", self.w1.len(), self.n_hidden * self.n_inputs),
            ("b1", self.b1.len(), self.n_hidden),
            ("w2", self.w2.len(), self.n_hidden),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(EngineError::Shape(format!("{name} has {got} entries, expected {want}")));
            }
        }
        let all_finite = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(EngineError::NonFinite);
        }
        Ok(())
    }

    fn check_input(&self, x: &FeatureVector) -> Result<(), EngineError> {
        if x.len() != self.n_inputs {
            return Err(EngineError::DimensionMismatch {
                expected: self.n_inputs,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn activations(&self, x: &FeatureVector) -> Result<Activations, EngineError> {
        self.check_input(x)?;
        let x = x.as_slice();
        let hidden: Vec<f64> = self
            .w1
            .chunks_exact(self.n_inputs)
            .zip(&self.b1)
            .map(|(row, b)| sigmoid(row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b))
            .collect();
        let z2 = self.w2.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2;
        Ok(Activations {
            hidden,
            output: sigmoid(z2),
        })
    }

    pub fn forward(&self, x: &FeatureVector) -> Result<f64, EngineError> {
        Ok(self.activations(x)?.output)
    }

    /// Returns the loss at the current weights and its gradient.
    pub fn gradients(&self, x: &FeatureVector, label: f64) -> Result<(f64, Gradients), EngineError> {
        let act = self.activations(x)?;
        let y = act.output;
        let loss = 0.5 * (y - label) * (y - label);
        let delta_out = (y - label) * y * (1.0 - y);
        let w2: Vec<f64> = act.hidden.iter().map(|h| delta_out * h).collect();
        let b1: Vec<f64> = act
            .hidden
            .iter()
            .zip(&self.w2)
            .map(|(h, w)| delta_out * w * h * (1.0 - h))
            .collect();
        let w1: Vec<f64> = b1
            .iter()
            .flat_map(|d| x.as_slice().iter().map(move |xi| d * xi))
            .collect();
        Ok((
            loss,
            Gradients {
                w1,
                b1,
                w2,
                b2: delta_out,
            },
        ))
    }

    pub fn apply(&mut self, g: &Gradients, learning_rate: f64) {
        let step = |p: &mut [f64], d: &[f64]| {
            for (pi, di) in p.iter_mut().zip(d) {
                *pi -= learning_rate * di;
            }
        };
        step(&mut self.w1, &g.w1);
        step(&mut self.b1, &g.b1);
        step(&mut self.w2, &g.w2);
        self.b2 -= learning_rate * g.b2;
    }

    /// One gradient-descent update on a single example. Returns the loss
    /// measured before the update.
    pub fn backprop_step(&mut self, x: &FeatureVector, label: f64, learning_rate: f64) -> Result<f64, EngineError> {
        let (loss, g) = self.gradients(x, label)?;
        self.apply(&g, learning_rate);
        Ok(loss)
    }

    /// Anomaly iff the output is strictly greater than 0.5.
    pub fn classify(&self, x: &FeatureVector) -> Result<PatientState, EngineError> {
        Ok(state_for(self.forward(x)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let m: MlpModel = serde_json::from_str(text).map_err(|e| EngineError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn state_for(output: f64) -> PatientState {
    if output > 0.5 {
        PatientState::Anomaly
    } else {
        PatientState::Normal
    }
}

/// Uniform weights in `[-init_scale, init_scale]`, zero biases.
pub fn init_model(n_inputs: usize, n_hidden: usize, init_scale: f64, seed: u64) -> Result<MlpModel, EngineError> {
    if !(3..=4).contains(&n_inputs) {
        return Err(EngineError::InputCount(n_inputs));
    }
    if n_hidden == 0 {
        return Err(EngineError::Shape("n_hidden must be at least 1".into()));
    }
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(EngineError::Hyperparam("init_scale"));
    }
    let mut m = MlpModel::zeros(n_inputs, n_hidden);
    if init_scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in m.w1.iter_mut().chain(m.w2.iter_mut()) {
            *w = rng.random_range(-init_scale..=init_scale);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::from_raw(v.to_vec())
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = MlpModel::zeros(4, 5);
        assert_eq!(m.forward(&fv(&[0.3, 0.9, 0.1, 0.5])).unwrap(), 0.5);
        assert_eq!(m.classify(&fv(&[0.3, 0.9, 0.1, 0.5])).unwrap(), PatientState::Normal);
    }

    #[test]
    fn hand_evaluated_two_layer_composition() {
        let m = MlpModel {
            n_inputs: 1,
            n_hidden: 1,
            w1: vec![4.0],
            b1: vec![-2.0],
            w2: vec![1.0],
            b2: 0.0,
        };
        // hidden = σ(4·0.5 − 2) = σ(0) = 0.5; output = σ(0.5)
        let expected = 1.0 / (1.0 + (-0.5f64).exp());
        let y = m.forward(&fv(&[0.5])).unwrap();
        assert_eq!(y, expected);
        assert!((y - 0.6225).abs() < 1e-4);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(state_for(0.5), PatientState::Normal);
        assert_eq!(state_for(0.50001), PatientState::Anomaly);
        assert_eq!(state_for(0.49999), PatientState::Normal);
    }

    #[test]
    fn dimension_mismatch() {
        let m = MlpModel::zeros(4, 5);
        assert_eq!(
            m.forward(&fv(&[0.1, 0.2, 0.3])),
            Err(EngineError::DimensionMismatch { expected: 4, got: 3 })
        );
        let mut m = m;
        assert!(m.backprop_step(&fv(&[0.1]), 1.0, 0.1).is_err());
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = init_model(4, 5, 0.5, 9).unwrap();
        assert_eq!(a, init_model(4, 5, 0.5, 9).unwrap());
        assert_ne!(a, init_model(4, 5, 0.5, 10).unwrap());
        assert_eq!((a.w1.len(), a.w2.len(), a.b1.len()), (20, 5, 5));
        assert!(a.w1.iter().chain(&a.w2).all(|w| w.abs() <= 0.5));
        assert!(a.b1.iter().all(|b| *b == 0.0) && a.b2 == 0.0);
        let z = init_model(3, 2, 0.0, 9).unwrap();
        assert_eq!(z, MlpModel::zeros(3, 2));
        assert!(init_model(2, 5, 0.5, 0).is_err());
        assert!(init_model(3, 0, 0.5, 0).is_err());
    }

    #[test]
    fn exact_target_leaves_model_unchanged() {
        let mut m = init_model(3, 4, 0.5, 1).unwrap();
        let x = fv(&[0.2, 0.4, 0.6]);
        let y = m.forward(&x).unwrap();
        let before = m.clone();
        let loss = m.backprop_step(&x, y, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn zero_learning_rate_reports_loss_only() {
        let mut m = init_model(3, 4, 0.5, 1).unwrap();
        let x = fv(&[0.2, 0.4, 0.6]);
        let before = m.clone();
        let y = m.forward(&x).unwrap();
        let loss = m.backprop_step(&x, 1.0, 0.0).unwrap();
        assert_eq!(loss, 0.5 * (y - 1.0) * (y - 1.0));
        assert_eq!(m, before);
    }

    #[test]
    fn step_reduces_loss_on_that_example() {
        let mut m = init_model(4, 5, 0.5, 3).unwrap();
        let x = fv(&[0.9, 0.1, 0.4, 0.7]);
        let l0 = m.backprop_step(&x, 1.0, 0.5).unwrap();
        let l1 = m.gradients(&x, 1.0).unwrap().0;
        assert!(l1 < l0);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut m = init_model(4, 5, 0.5, 77).unwrap();
        m.b1[2] = 1.0 / 3.0;
        m.b2 = -std::f64::consts::PI * 1e-7;
        let back = MlpModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.w1.iter().zip(&m.w1) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn malformed_model_rejected() {
        let mut m = MlpModel::zeros(3, 2);
        m.w2.pop();
        assert!(matches!(MlpModel::from_json(&m.to_json()), Err(EngineError::Shape(_))));
        assert!(MlpModel::from_json("{").is_err());
    }
}
