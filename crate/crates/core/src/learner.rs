//! Linear softmax classifier with an expandable output head.
//!
//! The head starts with any number of classes (possibly none) and grows one
//! zero-initialised row per newly seen class, so the logits of classes that
//! were already registered are untouched by an expansion. Training is
//! minibatch Adam on mean cross-entropy.

use std::borrow::Borrow;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::types::LabeledSample;
use crate::vector::{dot, entropy_unchecked, softmax};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub base_epochs: usize,
    pub rehearsal_epochs: usize,
    /// Memory updates tolerated without a training round; training runs once
    /// the count exceeds this value.
    pub retrain_patience: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 1e-4,
            base_epochs: 10,
            rehearsal_epochs: 3,
            retrain_patience: 9,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamState<T> {
    m_w: Vec<Vec<T>>,
    v_w: Vec<Vec<T>>,
    m_b: Vec<T>,
    v_b: Vec<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    fn new(n_classes: usize, dim: usize) -> Self {
        Self {
            m_w: vec![vec![T::zero(); dim]; n_classes],
            v_w: vec![vec![T::zero(); dim]; n_classes],
            m_b: vec![T::zero(); n_classes],
            v_b: vec![T::zero(); n_classes],
            step: 0,
        }
    }

    fn push_row(&mut self, dim: usize) {
        self.m_w.push(vec![T::zero(); dim]);
        self.v_w.push(vec![T::zero(); dim]);
        self.m_b.push(T::zero());
        self.v_b.push(T::zero());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel<T> {
    dim: usize,
    classes: Vec<usize>,
    weights: Vec<Vec<T>>,
    biases: Vec<T>,
    adam: AdamState<T>,
}

impl<T: Real> TaskModel<T> {
    /// Model with an empty head.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            classes: Vec::new(),
            weights: Vec::new(),
            biases: Vec::new(),
            adam: AdamState::new(0, dim),
        }
    }

    /// Zero weights for the given classes.
    pub fn with_classes(dim: usize, classes: &[usize]) -> Result<Self> {
        let mut m = Self::new(dim);
        for &c in classes {
            m.expand_head(c)?;
        }
        Ok(m)
    }

    /// Gaussian weights with standard deviation `scale`, zero biases.
    pub fn random_init(dim: usize, classes: &[usize], scale: f64, rng: &mut RngStream) -> Result<Self> {
        let mut m = Self::with_classes(dim, classes)?;
        for row in &mut m.weights {
            for w in row.iter_mut() {
                *w = T::lit(rng.gaussian() * scale);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn knows(&self, class: usize) -> bool {
        self.classes.contains(&class)
    }

    pub fn weights(&self) -> &[Vec<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[T] {
        &self.biases
    }

    fn class_index(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// Affine scores, one per registered class. Empty for an empty head.
    pub fn logits(&self, features: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, features.len())?;
        Ok(self.logits_unchecked(features))
    }

    fn logits_unchecked(&self, features: &[T]) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, &b)| dot(w, features) + b)
            .collect()
    }

    /// Softmax probabilities, ordered like [`classes`](Self::classes).
    pub fn predict_proba(&self, features: &[T]) -> Result<Vec<T>> {
        if self.classes.is_empty() {
            return Err(Error::EmptyHead);
        }
        Ok(softmax(&self.logits(features)?))
    }

    /// Most probable class label, or `None` for an empty head.
    pub fn predict(&self, features: &[T]) -> Result<Option<usize>> {
        if self.classes.is_empty() {
            check_dim(self.dim, features.len())?;
            return Ok(None);
        }
        let z = self.logits(features)?;
        let mut best = 0;
        for (j, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = j;
            }
        }
        Ok(Some(self.classes[best]))
    }

    /// Appends a zero-initialised output unit for `class`.
    pub fn expand_head(&mut self, class: usize) -> Result<()> {
        if self.knows(class) {
            return Err(Error::DuplicateClass(class));
        }
        self.classes.push(class);
        self.weights.push(vec![T::zero(); self.dim]);
        self.biases.push(T::zero());
        self.adam.push_row(self.dim);
        Ok(())
    }

    /// Mean cross-entropy over `(features, label)` pairs.
    pub fn loss<L: Borrow<LabeledSample<T>>>(&self, batch: &[L]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let mut total = T::zero();
        for ex in batch {
            let ex = ex.borrow();
            let j = self.class_index(ex.label).ok_or(Error::UnknownClass(ex.label))?;
            let p = self.predict_proba(ex.features())?;
            total -= p[j].ln();
        }
        Ok(total / T::from_count(batch.len()))
    }

    /// Runs `epochs` passes of minibatch Adam over `batch`, reshuffling with
    /// `rng` before each pass. Returns the number of optimizer steps taken.
    pub fn train<L: Borrow<LabeledSample<T>>>(
        &mut self,
        batch: &[L],
        settings: &TrainSettings,
        epochs: usize,
        rng: &mut RngStream,
    ) -> Result<usize> {
        if epochs == 0 {
            return Ok(0);
        }
        if batch.is_empty() {
            return Err(Error::EmptyInput("training batch"));
        }
        settings.validate()?;
        let mut rows = Vec::with_capacity(batch.len());
        for ex in batch {
            let ex = ex.borrow();
            check_dim(self.dim, ex.features().len())?;
            let j = self.class_index(ex.label).ok_or(Error::UnknownClass(ex.label))?;
            rows.push((ex.features(), j));
        }

        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut steps = 0;
        for _ in 0..epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(settings.batch_size) {
                let examples: Vec<(&[T], usize)> = chunk.iter().map(|&i| rows[i]).collect();
                self.adam_step(&examples, settings.learning_rate);
                steps += 1;
            }
        }
        Ok(steps)
    }

    fn adam_step(&mut self, examples: &[(&[T], usize)], lr: f64) {
        let k = self.classes.len();
        let inv_n = T::one() / T::from_count(examples.len());
        let mut g_w = vec![vec![T::zero(); self.dim]; k];
        let mut g_b = vec![T::zero(); k];
        for &(x, y) in examples {
            let mut delta = softmax(&self.logits_unchecked(x));
            delta[y] -= T::one();
            for j in 0..k {
                let dj = delta[j] * inv_n;
                g_b[j] += dj;
                for (g, &xi) in g_w[j].iter_mut().zip(x) {
                    *g += dj * xi;
                }
            }
        }

        let b1 = T::lit(ADAM_BETA1);
        let b2 = T::lit(ADAM_BETA2);
        let eps = T::lit(ADAM_EPS);
        let one = T::one();
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::lit(lr);
        let update = |param: &mut T, m: &mut T, v: &mut T, g: T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *param -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        let st = &mut self.adam;
        for j in 0..k {
            let params = self.weights[j].iter_mut().zip(&mut st.m_w[j]).zip(&mut st.v_w[j]);
            for (((w, m), v), &g) in params.zip(&g_w[j]) {
                update(w, m, v, g);
            }
            update(&mut self.biases[j], &mut st.m_b[j], &mut st.v_b[j], g_b[j]);
        }
    }

    /// Entropy of the predictive distribution divided by `ln(max(K, 2))`, so
    /// the score lies in [0, 1] whatever the head size.
    pub fn uncertainty(&self, features: &[T]) -> Result<T> {
        let p = self.predict_proba(features)?;
        let norm = T::from_count(p.len().max(2)).ln();
        Ok((entropy_unchecked(&p) / norm).min(T::one()))
    }

    /// Expected gradient length: `Σ_y p(y|x) ‖∇θ CE(x, y)‖₂` over every
    /// registered class, with the gradient taken over all weights and biases.
    ///
    /// For the linear head the gradient of the loss for label `y` is
    /// `(p − e_y) ⊗ [x, 1]`, whose norm factorises as
    /// `‖p − e_y‖ · sqrt(‖x‖² + 1)`.
    pub fn egl(&self, features: &[T]) -> Result<T> {
        let p = self.predict_proba(features)?;
        let input_norm = (dot(features, features) + T::one()).sqrt();
        let mut total = T::zero();
        for (y, &py) in p.iter().enumerate() {
            let residual: T = p
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let d = if j == y { pj - T::one() } else { pj };
                    d * d
                })
                .sum();
            total += py * residual.sqrt();
        }
        Ok(total * input_norm)
    }

    /// Classification accuracy on labeled samples. Zero for an empty head.
    pub fn accuracy<L: Borrow<LabeledSample<T>>>(&self, samples: &[L]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for s in samples {
            let s = s.borrow();
            if self.predict(s.features())? == Some(s.label) {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

const CHECKPOINT_MAGIC: &str = "rbaca-task-model";
const CHECKPOINT_VERSION: u32 = 1;

impl<T: Real> TaskModel<T> {
    /// Writes a text checkpoint:
    ///
    /// ```text
    /// rbaca-task-model 1
    /// dim <d>
    /// classes <K>
    /// unit <label> <bias> <w_0> ... <w_{d-1}>     (K lines, head order)
    /// ```
    ///
    /// Numbers use the shortest round-trip decimal form, so a reload is
    /// bitwise exact. Optimizer moments are not stored; a restored model
    /// resumes with fresh Adam state.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(w, "dim {}", self.dim)?;
        writeln!(w, "classes {}", self.classes.len())?;
        for ((c, b), row) in self.classes.iter().zip(&self.biases).zip(&self.weights) {
            write!(w, "unit {c} {b}")?;
            for v in row {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let path = PathBuf::from("<checkpoint>");
        let err = |line: usize, msg: String| Error::Parse {
            path: path.clone(),
            line,
            msg,
        };
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(err(0, format!("unexpected end of file, expected {what}"))),
            }
        };

        let (n, header) = next("header")?;
        if header.trim() != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
            return Err(err(n, format!("unsupported header {header:?}")));
        }
        let field = |n: usize, line: &str, key: &str| -> Result<usize> {
            let mut it = line.split_whitespace();
            match (it.next(), it.next().and_then(|v| v.parse().ok()), it.next()) {
                (Some(k), Some(v), None) if k == key => Ok(v),
                _ => Err(err(n, format!("expected `{key} <count>`"))),
            }
        };
        let (n, l) = next("dim")?;
        let dim = field(n, &l, "dim")?;
        let (n, l) = next("classes")?;
        let k = field(n, &l, "classes")?;

        let mut model = Self::new(dim);
        for _ in 0..k {
            let (n, l) = next("unit")?;
            let mut it = l.split_whitespace();
            if it.next() != Some("unit") {
                return Err(err(n, "expected `unit` line".into()));
            }
            let class: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(n, "bad class label".into()))?;
            let nums: Vec<T> = it
                .map(|v| v.parse::<T>().map_err(|_| err(n, format!("bad number {v:?}"))))
                .collect::<Result<_>>()?;
            if nums.len() != dim + 1 {
                return Err(err(n, format!("expected {} numbers, found {}", dim + 1, nums.len())));
            }
            model.expand_head(class).map_err(|e| err(n, e.to_string()))?;
            let j = model.classes.len() - 1;
            model.biases[j] = nums[0];
            model.weights[j].copy_from_slice(&nums[1..]);
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Sample;

    fn labeled(id: u64, features: Vec<f64>, label: usize) -> LabeledSample<f64> {
        LabeledSample {
            sample: Sample {
                id,
                features,
                true_label: label,
                context_tag: 0,
                stream_index: id as usize,
            },
            label,
            annotation_time: 0,
        }
    }

    #[test]
    fn uniform_for_zero_model() {
        let m = TaskModel::<f64>::with_classes(4, &[0, 1, 2]).unwrap();
        let p = m.predict_proba(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((m.uncertainty(&[0.0; 4]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_softmax() {
        let mut m = TaskModel::<f64>::with_classes(2, &[0, 1, 2]).unwrap();
        m.biases[0] = 100.0;
        let p = m.predict_proba(&[0.3, 0.1]).unwrap();
        assert!(p[0] > 1.0 - 1e-9);
        assert!(m.uncertainty(&[0.3, 0.1]).unwrap() < 1e-6);
        assert!(m.egl(&[0.3, 0.1]).unwrap() < 1e-6);
    }

    #[test]
    fn two_class_probabilities_match_exp_normalize() {
        let mut rng = RngStream::new(31);
        let m = TaskModel::<f64>::random_init(3, &[0, 1], 1.0, &mut rng).unwrap();
        let x = [0.4, -1.2, 2.0];
        let z0: f64 = (0..3).map(|i| m.weights[0][i] * x[i]).sum::<f64>() + m.biases[0];
        let z1: f64 = (0..3).map(|i| m.weights[1][i] * x[i]).sum::<f64>() + m.biases[1];
        let p0 = z0.exp() / (z0.exp() + z1.exp());
        let p = m.predict_proba(&x).unwrap();
        assert!((p[0] - p0).abs() < 1e-12);
        assert!((p[1] - (1.0 - p0)).abs() < 1e-12);
    }

    #[test]
    fn empty_head_behaviour() {
        let m = TaskModel::<f64>::new(2);
        assert!(matches!(m.predict_proba(&[0.0, 0.0]), Err(Error::EmptyHead)));
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), None);
        assert!(m.uncertainty(&[0.0, 0.0]).is_err());
        assert!(m.egl(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn uncertainty_normalises_entropy() {
        // logits ln(2), 0, 0 give p = [0.5, 0.25, 0.25]
        let mut m = TaskModel::<f64>::with_classes(1, &[0, 1, 2]).unwrap();
        m.biases[0] = 2f64.ln();
        let u = m.uncertainty(&[0.0]).unwrap();
        assert!((u - 1.5 * 2f64.ln() / 3f64.ln()).abs() < 1e-12);
        assert!((u - 0.946395).abs() < 1e-6);
    }

    #[test]
    fn expand_head_bootstraps_and_rejects_duplicates() {
        let mut m = TaskModel::<f64>::new(3);
        m.expand_head(7).unwrap();
        assert_eq!(m.classes(), &[7]);
        assert_eq!(m.n_classes(), 1);
        assert!(matches!(m.expand_head(7), Err(Error::DuplicateClass(7))));
    }

    #[test]
    fn zero_epochs_is_bitwise_noop() {
        let mut rng = RngStream::new(1);
        let mut m = TaskModel::<f64>::random_init(2, &[0, 1], 0.5, &mut rng).unwrap();
        let before = m.clone();
        let data = vec![labeled(0, vec![1.0, 2.0], 0)];
        let steps = m.train(&data, &TrainSettings::default(), 0, &mut rng).unwrap();
        assert_eq!(steps, 0);
        assert_eq!(m, before);
    }

    #[test]
    fn unknown_label_rejected() {
        let mut m = TaskModel::<f64>::with_classes(2, &[0]).unwrap();
        let data = vec![labeled(0, vec![1.0, 2.0], 3)];
        let r = m.train(&data, &TrainSettings::default(), 1, &mut RngStream::new(0));
        assert!(matches!(r, Err(Error::UnknownClass(3))));
    }

    #[test]
    fn separable_data_reaches_full_accuracy() {
        let mut rng = RngStream::new(5);
        let mut data = Vec::new();
        for i in 0..40 {
            let y = i % 2;
            let cx = if y == 0 { -2.0 } else { 2.0 };
            data.push(labeled(i as u64, vec![cx + rng.gaussian() * 0.3, rng.gaussian()], y));
        }
        let mut m = TaskModel::<f64>::with_classes(2, &[0, 1]).unwrap();
        let settings = TrainSettings {
            learning_rate: 0.05,
            ..TrainSettings::default()
        };
        // 5 steps per epoch
        let steps = m.train(&data, &settings, 40, &mut rng).unwrap();
        assert_eq!(steps, 200);
        assert_eq!(m.accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn single_sample_loss_strictly_decreases() {
        let mut m = TaskModel::<f64>::with_classes(3, &[0, 1]).unwrap();
        let data = vec![labeled(0, vec![0.5, -1.0, 2.0], 1)];
        let settings = TrainSettings {
            learning_rate: 0.01,
            ..TrainSettings::default()
        };
        let mut rng = RngStream::new(2);
        let mut prev = m.loss(&data).unwrap();
        for _ in 0..10 {
            m.train(&data, &settings, 1, &mut rng).unwrap();
            let now = m.loss(&data).unwrap();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut g = RngStream::new(8);
        let data: Vec<_> = (0..30)
            .map(|i| labeled(i, vec![g.gaussian(), g.gaussian()], (i % 3) as usize))
            .collect();
        let run = || {
            let mut m = TaskModel::<f64>::with_classes(2, &[0, 1, 2]).unwrap();
            m.train(&data, &TrainSettings::default(), 3, &mut RngStream::new(4)).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn egl_at_zero_input_matches_closed_form() {
        let mut rng = RngStream::new(17);
        let m = TaskModel::<f64>::random_init(4, &[0, 1, 2], 1.0, &mut rng).unwrap();
        let mut m = m;
        m.biases = vec![0.3, -0.7, 1.1];
        let x = [0.0; 4];
        let p = m.predict_proba(&x).unwrap();
        let mut want = 0.0;
        for y in 0..3 {
            let r: f64 = (0..3)
                .map(|j| {
                    let d = p[j] - if j == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum();
            want += p[y] * r.sqrt();
        }
        assert!((m.egl(&x).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = RngStream::new(3);
        let m = TaskModel::<f64>::random_init(5, &[4, 1, 9], 1.0, &mut rng).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let back = TaskModel::<f64>::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.classes(), m.classes());
        assert_eq!(back.weights(), m.weights());
        assert_eq!(back.biases(), m.biases());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let bad = "rbaca-task-model 1\ndim 2\nclasses 1\nunit 0 1.0 x 2.0\n";
        let e = TaskModel::<f64>::read_checkpoint(bad.as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e}");
        let bad = "something else\n";
        assert!(TaskModel::<f64>::read_checkpoint(bad.as_bytes()).is_err());
    }

    #[test]
    fn works_in_f32() {
        let m = TaskModel::<f32>::with_classes(2, &[0, 1]).unwrap();
        let p = m.predict_proba(&[1.0, 1.0]).unwrap();
        assert_eq!(p, vec![0.5f32, 0.5]);
    }
}
