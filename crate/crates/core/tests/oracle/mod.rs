//! Reference implementations written independently of the library, shared by the
//! core integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::HashMap;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mnistgen_core::curation::dqn::{td_loss, td_loss_grad, TdSample};
use mnistgen_core::curation::nn::Mlp;
use mnistgen_core::curation::{Agent, AgentConfig, CurationAction, RLState, Transition, STATE_DIM};
use mnistgen_core::semantics::CategorizationResult;
use mnistgen_core::transforms::{
    AnnotatedImage, BinarizeMode, GrayMode, LookupTagger, Pipeline, Stage, StageContext,
};

/// The printed Tree confusion matrix (rows actual, columns predicted).
pub const TREE_MATRIX: [[u64; 4]; 4] = [
    [296, 19, 25, 10],
    [10, 308, 5, 10],
    [25, 10, 298, 15],
    [15, 21, 6, 314],
];

/// θ maximizing ω0·ω1·(μ0 − μ1)² over classes `<= θ` and `> θ`, in exact rationals.
/// Ties go to the smallest θ; a single occupied bin returns that bin.
pub fn otsu_exhaustive(gray: &[u8]) -> u8 {
    let n = gray.len() as i128;
    let mut best: Option<(u8, Ratio<i128>)> = None;
    for t in 0..=255u8 {
        let (lo, hi): (Vec<i128>, Vec<i128>) = gray
            .iter()
            .map(|&v| v as i128)
            .partition(|&v| v <= t as i128);
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let (n0, n1) = (lo.len() as i128, hi.len() as i128);
        let mu0 = Ratio::new(lo.iter().sum(), n0);
        let mu1 = Ratio::new(hi.iter().sum(), n1);
        let var = Ratio::new(n0, n) * Ratio::new(n1, n) * (mu0 - mu1) * (mu0 - mu1);
        if best.as_ref().is_none_or(|(_, b)| var > *b) {
            best = Some((t, var));
        }
    }
    best.map_or(gray[0], |(t, _)| t)
}

#[derive(Debug, Clone, Copy)]
pub struct Weighted {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Weighted metrics by expanding the matrix into (actual, predicted) pairs and
/// counting per class. Zero denominators contribute 0.
pub fn brute_force_metrics(rows: &[Vec<u64>]) -> Weighted {
    let mut pairs = Vec::new();
    for (a, row) in rows.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((a, p), c as usize));
        }
    }
    let n = pairs.len() as f64;
    let count = |f: &dyn Fn(&(usize, usize)) -> bool| pairs.iter().filter(|x| f(x)).count() as f64;
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let mut w = Weighted {
        accuracy: count(&|&(a, p)| a == p) / n,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for c in 0..rows.len() {
        let tp = count(&|&(a, p)| a == c && p == c);
        let fp = count(&|&(a, p)| a != c && p == c);
        let fnn = count(&|&(a, p)| a == c && p != c);
        let support = count(&|&(a, _)| a == c) / n;
        let (pr, re) = (div(tp, tp + fp), div(tp, tp + fnn));
        w.precision += support * pr;
        w.recall += support * re;
        w.f1 += support * div(2.0 * pr * re, pr + re);
    }
    w
}

pub fn random_matrix<R: Rng>(rng: &mut R) -> Vec<Vec<u64>> {
    let k = rng.gen_range(2..=6);
    loop {
        let m: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..k).map(|_| rng.gen_range(0..30)).collect())
            .collect();
        if m.iter().flatten().sum::<u64>() > 0 {
            return m;
        }
    }
}

pub fn random_rgb<R: Rng>(rng: &mut R, id: &str) -> AnnotatedImage {
    let (w, h) = (rng.gen_range(4..=20), rng.gen_range(4..=20));
    let px = (0..w * h * 3).map(|_| rng.gen()).collect();
    AnnotatedImage::new(id, w, h, 3, px).unwrap()
}

/// Up to `max_len` stages that form a valid pipeline for a `width`×`height` RGB input.
pub fn random_stages<R: Rng>(rng: &mut R, width: u32, height: u32, max_len: usize) -> Vec<Stage> {
    let (mut w, mut h, mut gray) = (width, height, false);
    let len = rng.gen_range(0..=max_len);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let last = out.len() + 1 == len;
        let stage = match rng.gen_range(0..9) {
            0 => Stage::SemanticTag,
            1 => Stage::BackgroundRemoval,
            2 => {
                (w, h) = (rng.gen_range(2..=24), rng.gen_range(2..=24));
                Stage::Resize {
                    width: w,
                    height: h,
                }
            }
            3 => {
                (w, h) = (rng.gen_range(1..=w), rng.gen_range(1..=h));
                Stage::CenterCrop {
                    width: w,
                    height: h,
                }
            }
            4 => {
                gray = true;
                let mode = if rng.gen() {
                    GrayMode::Mean
                } else {
                    GrayMode::Weighted
                };
                Stage::Grayscale { mode }
            }
            5 if gray => {
                let mode = if rng.gen() {
                    BinarizeMode::Otsu
                } else {
                    BinarizeMode::Fixed(rng.gen())
                };
                Stage::Binarize { mode }
            }
            6 => {
                let degrees = *[0.0, 90.0, -90.0, 180.0, 45.0, rng.gen_range(-360.0..360.0)]
                    .choose(rng)
                    .unwrap();
                Stage::Rotate { degrees }
            }
            7 => Stage::ContrastStretch,
            8 if gray && last => Stage::Normalize {
                mu: rng.gen_range(0.0..1.0),
                sigma: rng.gen_range(0.1..1.0),
            },
            _ => continue,
        };
        out.push(stage);
    }
    out
}

/// A tagger that knows one image id.
pub fn tagger_for(id: &str) -> LookupTagger {
    let result = CategorizationResult {
        best_main: 1,
        best_sub: 0,
        confidence: 0.7,
        eligible: true,
        breakdown: vec![],
    };
    LookupTagger(HashMap::from([(id.to_string(), result)]))
}

/// Checks identity and composition preservation for one random pipeline and image.
pub fn check_functor_laws(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_rgb(&mut rng, "x");
    let stages = random_stages(&mut rng, x.width, x.height, 8);
    let tagger = tagger_for("x");
    let ctx = StageContext {
        tagger: Some(&tagger),
        matting: None,
    };
    let fail = |what: &str| Err(format!("seed {seed}: {what} for {stages:?}"));

    let id = Pipeline::identity();
    if id.apply(&x, &ctx).map_err(|e| e.to_string())? != x {
        return fail("identity changed the image");
    }
    let p = Pipeline::new(stages.clone()).map_err(|e| e.to_string())?;
    let whole = p.apply(&x, &ctx).map_err(|e| e.to_string())?;
    for q in [id.compose(&p), p.compose(&id)] {
        if q.map_err(|e| e.to_string())?
            .apply(&x, &ctx)
            .map_err(|e| e.to_string())?
            != whole
        {
            return fail("identity composition differs");
        }
    }
    let i = rng.gen_range(0..=stages.len());
    let j = rng.gen_range(i..=stages.len());
    let part =
        |r: std::ops::Range<usize>| Pipeline::new(stages[r].to_vec()).map_err(|e| e.to_string());
    let (a, b, c) = (part(0..i)?, part(i..j)?, part(j..stages.len())?);
    let stepwise = {
        let ya = a.apply(&x, &ctx).map_err(|e| e.to_string())?;
        let yb = b.apply(&ya, &ctx).map_err(|e| e.to_string())?;
        c.apply(&yb, &ctx).map_err(|e| e.to_string())?
    };
    let left = a
        .compose(&b)
        .and_then(|ab| ab.compose(&c))
        .map_err(|e| e.to_string())?;
    let right = b
        .compose(&c)
        .and_then(|bc| a.compose(&bc))
        .map_err(|e| e.to_string())?;
    for (name, q) in [("(a;b);c", left), ("a;(b;c)", right)] {
        if q.apply(&x, &ctx).map_err(|e| e.to_string())? != stepwise {
            return fail(&format!("{name} differs from stepwise application"));
        }
    }
    if stepwise != whole {
        return fail("split pipeline differs from the whole");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub draws: usize,
    pub checked: usize,
    /// Parameters rejected because ±h flips a ReLU.
    pub skipped: usize,
    pub max_rel: f64,
}

pub const GRAD_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator, for parameters with vanishing gradient.
pub const GRAD_FLOOR: f64 = 1e-8;

fn relu_pattern(net: &Mlp<f64>, samples: &[TdSample<f64>]) -> Vec<bool> {
    let hidden = net.layers.len() - 1;
    samples
        .iter()
        .flat_map(|s| {
            let trace = net.forward_trace(&s.state);
            trace.pre[..hidden]
                .iter()
                .flatten()
                .map(|&z| z > 0.0)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Central-difference check of the TD-loss gradient of the default 22→256→128→64→3
/// network on batches of 32 transitions with bootstrapped targets. Each draw takes
/// `per_layer` weights and biases from every layer.
pub fn gradient_check(draws: usize, per_layer: usize, seed: u64) -> GradCheck {
    let mut out = GradCheck {
        draws,
        ..Default::default()
    };
    for d in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(d as u64));
        let agent: Agent<f64> = Agent::new(AgentConfig::default(), rng.gen()).unwrap();
        let mut net = agent.online().clone();
        for b in net.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
            *b = rng.gen_range(-0.1..0.1);
        }
        let batch: Vec<Transition> = (0..32)
            .map(|_| {
                let mut state = || {
                    RLState::new((0..STATE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .unwrap()
                };
                let (state, next_state) = (state(), state());
                Transition {
                    state,
                    action: CurationAction::from_index(rng.gen_range(0..3)),
                    reward: rng.gen_range(-0.1..0.9),
                    next_state,
                    terminal: false,
                }
            })
            .collect();
        let samples = agent.td_samples(&batch);
        let (_, grads) = td_loss_grad(&net, &samples);
        let base = relu_pattern(&net, &samples);
        let mut offset = 0;
        for layer in 0..net.layers.len() {
            let (nw, nb) = (
                net.layers[layer].weights.len(),
                net.layers[layer].bias.len(),
            );
            let mut taken = 0;
            let mut attempts = 0;
            while taken < per_layer && attempts < 50 * per_layer {
                attempts += 1;
                let k = if taken % 2 == 0 {
                    rng.gen_range(0..nw)
                } else {
                    nw + rng.gen_range(0..nb)
                };
                let p = offset + k;
                let theta = *net.param_mut(p);
                let mut plus = net.clone();
                *plus.param_mut(p) = theta + GRAD_STEP;
                let mut minus = net.clone();
                *minus.param_mut(p) = theta - GRAD_STEP;
                if relu_pattern(&plus, &samples) != base || relu_pattern(&minus, &samples) != base {
                    out.skipped += 1;
                    continue;
                }
                let numeric =
                    (td_loss(&plus, &samples) - td_loss(&minus, &samples)) / (2.0 * GRAD_STEP);
                let analytic = *grads.params().nth(p).unwrap();
                let rel =
                    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
                out.max_rel = out.max_rel.max(rel);
                out.checked += 1;
                taken += 1;
            }
            offset += nw + nb;
        }
    }
    out
}
