//! Multinomial logistic regression on flattened pixels, used for the ModelAcc term.

use std::collections::BTreeMap;

use log::warn;

use crate::export::split_dataset;

pub const NEUTRAL_ACCURACY: f64 = 0.5;
pub const MIN_PER_CLASS: usize = 5;
/// Retrain after this many new kept samples.
pub const DEFAULT_PROBE_EVERY: usize = 50;

const EPOCHS: usize = 150;
const LEARNING_RATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub accuracy: f64,
    pub warning: Option<String>,
}

impl ProbeOutcome {
    fn neutral(why: String) -> Self {
        warn!("probe classifier: {why}; using neutral accuracy {NEUTRAL_ACCURACY}");
        Self {
            accuracy: NEUTRAL_ACCURACY,
            warning: Some(why),
        }
    }
}

struct Softmax {
    classes: usize,
    dim: usize,
    /// `classes x (dim + 1)`, bias last.
    w: Vec<f64>,
}

impl Softmax {
    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .w
            .chunks_exact(self.dim + 1)
            .map(|row| {
                row[self.dim]
                    + row[..self.dim]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    fn predict(&self, x: &[f64]) -> usize {
        let p = self.probs(x);
        (0..self.classes).fold(0, |b, i| if p[i] > p[b] { i } else { b })
    }

    fn fit(classes: usize, xs: &[Vec<f64>], ys: &[usize]) -> Self {
        let dim = xs[0].len();
        let mut model = Self {
            classes,
            dim,
            w: vec![0.0; classes * (dim + 1)],
        };
        let n = xs.len() as f64;
        for _ in 0..EPOCHS {
            let mut grad = vec![0.0; model.w.len()];
            for (x, &y) in xs.iter().zip(ys) {
                let p = model.probs(x);
                for k in 0..classes {
                    let d = (p[k] - if k == y { 1.0 } else { 0.0 }) / n;
                    let row = &mut grad[k * (dim + 1)..(k + 1) * (dim + 1)];
                    row.iter_mut().zip(x).for_each(|(g, &xi)| *g += d * xi);
                    row[dim] += d;
                }
            }
            model
                .w
                .iter_mut()
                .zip(&grad)
                .for_each(|(w, g)| *w -= LEARNING_RATE * g);
        }
        model
    }
}

/// Trains on a stratified 80/20 split of `(images, labels)` and returns held-out
/// accuracy. Classes with fewer than [`MIN_PER_CLASS`] samples are ignored; with
/// fewer than two usable classes the neutral accuracy 0.5 is returned with a warning.
pub fn train_probe(images: &[&[u8]], labels: &[usize], seed: u64) -> ProbeOutcome {
    assert_eq!(images.len(), labels.len(), "one label per image");
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .for_each(|&l| *counts.entry(l).or_default() += 1);
    let usable: Vec<usize> = counts
        .iter()
        .filter(|(_, &c)| c >= MIN_PER_CLASS)
        .map(|(&l, _)| l)
        .collect();
    if usable.len() < 2 {
        return ProbeOutcome::neutral(format!(
            "need 2 classes with at least {MIN_PER_CLASS} samples, have {}",
            usable.len()
        ));
    }
    let index: BTreeMap<usize, usize> = usable.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let rows: Vec<usize> = (0..labels.len())
        .filter(|&i| index.contains_key(&labels[i]))
        .collect();
    let ys: Vec<usize> = rows.iter().map(|&i| index[&labels[i]]).collect();
    let dim = images[rows[0]].len();
    if rows.iter().any(|&i| images[i].len() != dim) {
        return ProbeOutcome::neutral("images differ in size".into());
    }
    let scale = 1.0 / (255.0 * (dim as f64).sqrt());
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| images[i].iter().map(|&p| p as f64 * scale).collect())
        .collect();

    let split = match split_dataset(&ys, 0.8, seed) {
        Ok(s) => s,
        Err(e) => return ProbeOutcome::neutral(e.to_string()),
    };
    if split.test.is_empty() {
        return ProbeOutcome::neutral("empty held-out split".into());
    }
    let train_x: Vec<Vec<f64>> = split.train.iter().map(|&i| xs[i].clone()).collect();
    let train_y: Vec<usize> = split.train.iter().map(|&i| ys[i]).collect();
    let model = Softmax::fit(usable.len(), &train_x, &train_y);
    let correct = split
        .test
        .iter()
        .filter(|&&i| model.predict(&xs[i]) == ys[i])
        .count();
    ProbeOutcome {
        accuracy: correct as f64 / split.test.len() as f64,
        warning: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_classes() {
        let black = vec![0u8; 784];
        let white = vec![255u8; 784];
        let images: Vec<&[u8]> = (0..40)
            .map(|i| if i % 2 == 0 { &black[..] } else { &white[..] })
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let out = train_probe(&images, &labels, 1);
        assert_eq!(out.accuracy, 1.0);
        assert!(out.warning.is_none());
    }

    #[test]
    fn shuffled_labels_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let images: Vec<Vec<u8>> = (0..1000)
            .map(|_| (0..784).map(|_| rng.gen()).collect())
            .collect();
        let mut labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        labels.shuffle(&mut rng);
        let refs: Vec<&[u8]> = images.iter().map(|v| &v[..]).collect();
        let acc = train_probe(&refs, &labels, 3).accuracy;
        assert!((acc - 0.5).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn single_class_is_neutral() {
        let img = [9u8; 16];
        let images: Vec<&[u8]> = vec![&img[..]; 12];
        let out = train_probe(&images, &[3; 12], 0);
        assert_eq!(out.accuracy, 0.5);
        assert!(out.warning.is_some());
    }
}
