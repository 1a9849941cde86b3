//! Order categorization and pick-list batching.
//!
//! Orders are described by how their lines spread over product clusters.
//! A one-vs-rest linear SVM (Pegasos subgradient steps on the regularized
//! hinge loss) maps them to categories; same-category orders are batched
//! into shared trips.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Order, ProductId, SimParams, SlotAssignment, SlotId};
use crate::slotting::Clustering;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFeatures {
    /// Share of the order's lines in each cluster (sums to 1).
    pub cluster_share: Vec<f64>,
    pub line_count: f64,
}

impl OrderFeatures {
    pub fn vector(&self) -> Vec<f64> {
        let mut v = self.cluster_share.clone();
        v.push(self.line_count);
        v
    }

    /// Cluster holding most lines, lowest id on ties.
    pub fn dominant_cluster(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.cluster_share.iter().enumerate() {
            if *s > self.cluster_share[best] {
                best = i;
            }
        }
        best
    }
}

pub fn featurize_order(order: &Order, k: usize, labels: &BTreeMap<ProductId, usize>) -> Result<OrderFeatures> {
    let mut share = vec![0.0; k];
    for l in &order.lines {
        let c = *labels
            .get(&l.product_id)
            .ok_or_else(|| Error::InvalidInstance(format!("product {} is not clustered", l.product_id)))?;
        if c >= k {
            return Err(Error::InvalidArgument(format!("cluster {c} out of range for k = {k}")));
        }
        share[c] += 1.0;
    }
    let n = order.lines.len() as f64;
    if n > 0.0 {
        for s in &mut share {
            *s /= n;
        }
    }
    Ok(OrderFeatures { cluster_share: share, line_count: n })
}

pub fn featurize(order: &Order, clustering: &Clustering) -> Result<OrderFeatures> {
    featurize_order(order, clustering.k, &clustering.labels())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Regularization is `lambda = 1 / c`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 100.0, epochs: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub capacity: usize,
    pub len: usize,
    pub oldest: Option<i64>,
    pub newest: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub labels: Vec<usize>,
    /// One weight vector per label; the last entry is the bias.
    pub weights: Vec<Vec<f64>>,
    pub config: SvmConfig,
    pub window: WindowMeta,
    /// Subgradient steps taken so far; warm starts resume the schedule.
    pub steps: u64,
}

impl SvmModel {
    pub fn bias(&self, label_index: usize) -> f64 {
        *self.weights[label_index].last().unwrap_or(&0.0)
    }

    pub fn score(&self, label_index: usize, x: &[f64]) -> f64 {
        let w = &self.weights[label_index];
        dot(&w[..w.len() - 1], x) + w[w.len() - 1]
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_s = f64::NEG_INFINITY;
        for i in 0..self.labels.len() {
            let s = self.score(i, x);
            if s > best_s {
                best_s = s;
                best = i;
            }
        }
        self.labels[best]
    }

    pub fn accuracy(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 1.0;
        }
        let hit = samples.iter().filter(|s| self.predict(&s.features) == s.label).count();
        hit as f64 / samples.len() as f64
    }

    /// Sum over labels of the one-vs-rest regularized hinge objective.
    pub fn objective(&self, samples: &[Sample]) -> f64 {
        let lambda = 1.0 / self.config.c;
        (0..self.labels.len())
            .map(|i| binary_objective(&self.weights[i], samples, self.labels[i], lambda))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn augmented_dot(w: &[f64], x: &[f64]) -> f64 {
    dot(&w[..w.len() - 1], x) + w[w.len() - 1]
}

fn binary_objective(w: &[f64], samples: &[Sample], positive: usize, lambda: f64) -> f64 {
    let reg = 0.5 * lambda * dot(w, w);
    if samples.is_empty() {
        return reg;
    }
    let hinge: f64 = samples
        .iter()
        .map(|s| {
            let y = if s.label == positive { 1.0 } else { -1.0 };
            (1.0 - y * augmented_dot(w, &s.features)).max(0.0)
        })
        .sum();
    reg + hinge / samples.len() as f64
}

/// Pegasos on one binary problem, keeping the best epoch-end iterate.
fn pegasos(
    samples: &[Sample],
    positive: usize,
    init: Vec<f64>,
    lambda: f64,
    orders: &[Vec<usize>],
    t0: u64,
) -> Vec<f64> {
    let mut w = init;
    let mut best = w.clone();
    let mut best_obj = binary_objective(&w, samples, positive, lambda);
    let mut t = t0;
    let dim = w.len();
    for order in orders {
        for &i in order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let s = &samples[i];
            let y = if s.label == positive { 1.0 } else { -1.0 };
            let margin = y * augmented_dot(&w, &s.features);
            let shrink = 1.0 - eta * lambda;
            for v in w.iter_mut() {
                *v *= shrink;
            }
            if margin < 1.0 {
                for (v, x) in w[..dim - 1].iter_mut().zip(&s.features) {
                    *v += eta * y * x;
                }
                w[dim - 1] += eta * y;
            }
        }
        let obj = binary_objective(&w, samples, positive, lambda);
        if obj < best_obj {
            best_obj = obj;
            best = w.clone();
        }
    }
    best
}

fn shuffles(n: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..epochs)
        .map(|_| {
            let mut v: Vec<usize> = (0..n).collect();
            v.shuffle(&mut rng);
            v
        })
        .collect()
}

fn window_meta(capacity: usize, samples: &[Sample]) -> WindowMeta {
    WindowMeta {
        capacity,
        len: samples.len(),
        oldest: samples.iter().map(|s| s.timestamp).min(),
        newest: samples.iter().map(|s| s.timestamp).max(),
    }
}

fn check_samples(samples: &[Sample]) -> Result<usize> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    if samples.iter().any(|s| s.features.len() != dim || s.features.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument("samples must be finite and of equal dimension".into()));
    }
    Ok(dim)
}

pub fn svm_train(samples: &[Sample], config: SvmConfig) -> Result<SvmModel> {
    svm_train_windowed(samples, config, samples.len())
}

/// Trains from zero weights; `capacity` fixes the sliding-window size.
pub fn svm_train_windowed(samples: &[Sample], config: SvmConfig, capacity: usize) -> Result<SvmModel> {
    if !(config.c > 0.0) {
        return Err(Error::InvalidArgument("C must be positive".into()));
    }
    let labels: BTreeSet<usize> = samples.iter().map(|s| s.label).collect();
    if labels.len() < 2 {
        return Err(Error::DegenerateLabels);
    }
    let dim = check_samples(samples)?;
    let lambda = 1.0 / config.c;
    let orders = shuffles(samples.len(), config.epochs, config.seed);
    let labels: Vec<usize> = labels.into_iter().collect();
    let weights = labels
        .iter()
        .map(|&l| pegasos(samples, l, vec![0.0; dim + 1], lambda, &orders, 0))
        .collect();
    Ok(SvmModel {
        labels,
        weights,
        config,
        window: window_meta(capacity, samples),
        steps: (samples.len() * config.epochs) as u64,
    })
}

/// Fixed-capacity FIFO of training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub capacity: usize,
    pub samples: VecDeque<Sample>,
}

impl SampleWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, samples: VecDeque::new() }
    }

    /// Appends and evicts the oldest beyond capacity; returns the evicted.
    pub fn push_all(&mut self, batch: &[Sample]) -> Vec<Sample> {
        self.samples.extend(batch.iter().cloned());
        let mut out = Vec::new();
        while self.samples.len() > self.capacity {
            out.extend(self.samples.pop_front());
        }
        out
    }

    pub fn as_vec(&self) -> Vec<Sample> {
        self.samples.iter().cloned().collect()
    }
}

/// Slides the window and retrains from the current weights.
pub fn svm_update(model: &SvmModel, window: &SampleWindow, new_batch: &[Sample]) -> Result<(SvmModel, SampleWindow)> {
    if new_batch.is_empty() {
        return Ok((model.clone(), window.clone()));
    }
    let mut window = window.clone();
    window.capacity = model.window.capacity;
    window.push_all(new_batch);
    let samples = window.as_vec();
    let dim = check_samples(&samples)?;

    let mut labels = model.labels.clone();
    let mut weights = model.weights.clone();
    for s in &samples {
        if let Err(pos) = labels.binary_search(&s.label) {
            log::info!("svm: new category {} joins the model", s.label);
            labels.insert(pos, s.label);
            weights.insert(pos, vec![0.0; dim + 1]);
        }
    }
    if weights.iter().any(|w| w.len() != dim + 1) {
        return Err(Error::DimensionMismatch {
            context: "svm feature dimension".into(),
            expected: weights[0].len() - 1,
            got: dim,
        });
    }

    let config = SvmConfig { seed: model.config.seed.wrapping_add(model.steps), ..model.config };
    let lambda = 1.0 / config.c;
    let orders = shuffles(samples.len(), config.epochs, config.seed);
    // resume the step schedule one window-pass in, so the first step does
    // not erase the warm start
    let t0 = samples.len() as u64;
    let weights = labels
        .iter()
        .zip(weights)
        .map(|(&l, w)| pegasos(&samples, l, w, lambda, &orders, t0))
        .collect();
    let updated = SvmModel {
        labels,
        weights,
        config: model.config,
        window: window_meta(window.capacity, &samples),
        steps: model.steps + (samples.len() * config.epochs) as u64,
    };
    Ok((updated, window))
}

/// Bootstrap training set: each order labeled by its dominant cluster.
pub fn bootstrap_samples(orders: &[Order], clustering: &Clustering) -> Result<Vec<Sample>> {
    let labels = clustering.labels();
    orders
        .iter()
        .map(|o| {
            let f = featurize_order(o, clustering.k, &labels)?;
            Ok(Sample { label: f.dominant_cluster(), features: f.vector(), timestamp: o.timestamp })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickBatch {
    pub id: usize,
    pub category: usize,
    pub orders: Vec<u64>,
    /// Distinct slots to visit, in line order of the member orders.
    pub slots: Vec<SlotId>,
    /// Pick lines over all member orders.
    pub lines: usize,
    pub cart: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Picklists {
    pub parallelism: usize,
    pub batches: Vec<PickBatch>,
    /// Batch ids in dispatch order.
    pub dispatch: Vec<usize>,
}

/// Carts that can work at once: `min(max_carts, min_i floor(a_i / cart_width))`.
pub fn parallelism_limit(aisle_widths: &[f64], params: &SimParams) -> Result<usize> {
    let narrow = aisle_widths.iter().copied().fold(f64::INFINITY, f64::min);
    let per_aisle = if narrow.is_finite() {
        (narrow / params.cart_width + 1e-9).floor() as usize
    } else {
        params.max_carts
    };
    let p = params.max_carts.min(per_aisle);
    if p == 0 {
        return Err(Error::InfeasibleParallelism { min_aisle: narrow, cart_width: params.cart_width });
    }
    Ok(p)
}

/// How orders are grouped into trips.
#[derive(Debug, Clone, Copy)]
pub enum Batching<'m> {
    /// One order per trip, in input order.
    Single,
    /// Classify, then fill batches of up to `cap` orders per category.
    Classified { model: &'m SvmModel, cap: usize },
}

pub fn build_picklists(
    orders: &[Order],
    batching: Batching<'_>,
    clustering: &Clustering,
    assignment: &SlotAssignment,
    aisle_widths: &[f64],
    params: &SimParams,
) -> Result<Picklists> {
    let parallelism = parallelism_limit(aisle_widths, params)?;
    let mut groups: BTreeMap<usize, Vec<Vec<&Order>>> = BTreeMap::new();
    match batching {
        Batching::Single => {
            groups.insert(0, orders.iter().map(|o| vec![o]).collect());
        }
        Batching::Classified { model, cap } => {
            if cap == 0 {
                return Err(Error::InvalidArgument("batch cap must be at least 1".into()));
            }
            let labels = clustering.labels();
            let mut by_cat: BTreeMap<usize, Vec<&Order>> = BTreeMap::new();
            for o in orders {
                let f = featurize_order(o, clustering.k, &labels)?;
                by_cat.entry(model.predict(&f.vector())).or_default().push(o);
            }
            for (cat, members) in by_cat {
                groups.insert(cat, members.chunks(cap).map(|c| c.to_vec()).collect());
            }
        }
    }

    let mut batches = Vec::new();
    for (category, chunks) in groups {
        for members in chunks {
            let mut slots: Vec<SlotId> = Vec::new();
            let mut lines = 0;
            for o in &members {
                for l in &o.lines {
                    let s = assignment
                        .get(&l.product_id)
                        .ok_or_else(|| Error::InvalidInstance(format!("product {} has no slot", l.product_id)))?;
                    if !slots.contains(&s) {
                        slots.push(s);
                    }
                    lines += 1;
                }
            }
            let id = batches.len();
            batches.push(PickBatch {
                id,
                category,
                orders: members.iter().map(|o| o.id).collect(),
                slots,
                lines,
                cart: id % parallelism,
            });
        }
    }
    Ok(Picklists {
        parallelism,
        dispatch: (0..batches.len()).collect(),
        batches,
    })
}
