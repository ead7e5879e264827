use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::FusedFeature;
use crate::error::{Error, Result};
use crate::numcore::SeededRng;

pub const GBDT_FORMAT_VERSION: u32 = 1;

/// Predicted probabilities are kept this far from 0 and 1.
const PROB_EPS: f64 = 1e-15;
const MAX_BACKTRACK: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub min_child_hessian: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            max_depth: 3,
            shrinkage: 0.1,
            lambda: 1.0,
            min_child_hessian: 1e-3,
            subsample: 1.0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be positive".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return Err(Error::InvalidConfig(format!("shrinkage must be > 0, got {}", self.shrinkage)));
        }
        if !(self.lambda >= 0.0 && self.min_child_hessian >= 0.0) {
            return Err(Error::InvalidConfig("lambda and min_child_hessian must be >= 0".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidConfig(format!("subsample must be in (0,1], got {}", self.subsample)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Node {
    /// Rows with `x[feature] < threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// Regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { weight } = n {
                *weight *= factor;
            }
        }
    }
}

/// Gradient-boosted trees on the logistic loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtModel {
    pub format_version: u32,
    pub config: GbdtConfig,
    pub seed: u64,
    pub num_features: usize,
    /// Prior log-odds of the positive class.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Training logloss before any tree, then after each round.
    pub train_logloss: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logloss(scores: &[f64], y: &[f64]) -> f64 {
    // log(1 + e^z) - y z, computed stably.
    scores
        .iter()
        .zip(y)
        .map(|(&z, &t)| z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z)
        .sum::<f64>()
        / scores.len() as f64
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    g: &'a [f64],
    h: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<Node>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf_weight(&self, rows: &[usize]) -> f64 {
        let (g, h) = self.sums(rows);
        -g / (h + self.cfg.lambda)
    }

    fn sums(&self, rows: &[usize]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(g, h), &i| (g + self.g[i], h + self.h[i]))
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.lambda)
    }

    /// Exhaustive search over midpoints between consecutive distinct values.
    /// Ties keep the earliest candidate: lowest feature, then lowest threshold.
    fn best_split(&self, rows: &[usize]) -> Option<Best> {
        let (gt, ht) = self.sums(rows);
        let parent = self.score(gt, ht);
        let mut best: Option<Best> = None;
        let mut order = rows.to_vec();
        for f in 0..self.x[0].len() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in 0..order.len() - 1 {
                let (i, j) = (order[w], order[w + 1]);
                gl += self.g[i];
                hl += self.h[i];
                let (a, b) = (self.x[i][f], self.x[j][f]);
                if a == b {
                    continue;
                }
                let (gr, hr) = (gt - gl, ht - hl);
                if hl < self.cfg.min_child_hessian || hr < self.cfg.min_child_hessian {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(gr, hr) - parent;
                let threshold = a + (b - a) / 2.0;
                if gain > 1e-12 && best.as_ref().is_none_or(|bst| gain > bst.gain) {
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            weight: self.leaf_weight(rows),
        });
        if depth >= self.cfg.max_depth || rows.len() < 2 {
            return id;
        }
        if let Some(b) = self.best_split(rows) {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| self.x[i][b.feature] < b.threshold);
            let left = self.grow(&l, depth + 1);
            let right = self.grow(&r, depth + 1);
            self.nodes[id] = Node::Split {
                feature: b.feature,
                threshold: b.threshold,
                left,
                right,
            };
        }
        id
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Boosting on binary cross-entropy with second-order leaf weights
/// `-Σg / (Σh + λ)`. Training examples are put in a canonical order first,
/// so the model does not depend on the order they are given in. A round that
/// would raise the training logloss has its leaves halved until it does not.
pub fn train_gbdt(features: &[FusedFeature], cfg: &GbdtConfig, seed: u64) -> Result<GbdtModel> {
    cfg.validate()?;
    let Some(first) = features.first() else {
        return Err(Error::Data("no training examples".into()));
    };
    let nf = first.values.len();
    if nf == 0 {
        return Err(Error::Data("feature vectors are empty".into()));
    }
    for f in features {
        if f.values.len() != nf {
            return Err(Error::shape("train_gbdt", &[nf], &[f.values.len()]));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of {}", f.snippet_id)));
        }
    }
    let n_pos = features.iter().filter(|f| f.label == 1).count();
    if n_pos == 0 || n_pos == features.len() {
        return Err(Error::Data(format!(
            "classifier needs both classes; got {n_pos} positive of {}",
            features.len()
        )));
    }

    let mut canon: Vec<(&[f64], f64)> = features
        .iter()
        .map(|f| (f.values.as_slice(), f64::from(f.label)))
        .collect();
    canon.sort_by(|a, b| lexicographic(a.0, b.0).then(a.1.total_cmp(&b.1)));
    let x: Vec<Vec<f64>> = canon.iter().map(|(v, _)| v.to_vec()).collect();
    let y: Vec<f64> = canon.iter().map(|&(_, t)| t).collect();
    let n = x.len();

    let prior = n_pos as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let mut scores = vec![base_score; n];
    let mut history = vec![logloss(&scores, &y)];
    let mut trees = Vec::with_capacity(cfg.rounds);
    let rng = SeededRng::new(seed).derive_str("gbdt");
    let take = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);

    for round in 0..cfg.rounds {
        let p: Vec<f64> = scores.iter().map(|&z| sigmoid(z)).collect();
        let g: Vec<f64> = p.iter().zip(&y).map(|(p, t)| p - t).collect();
        let h: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let rows: Vec<usize> = if take == n {
            (0..n).collect()
        } else {
            let mut r = index::sample(&mut rng.derive(round as u64), n, take).into_vec();
            r.sort_unstable();
            r
        };
        let mut b = Builder {
            x: &x,
            g: &g,
            h: &h,
            cfg,
            nodes: Vec::new(),
        };
        b.grow(&rows, 0);
        let mut tree = Tree { nodes: b.nodes };
        let outputs: Vec<f64> = x.iter().map(|r| tree.predict(r)).collect();
        let prev = *history.last().expect("seeded with the prior loss");
        let mut factor = 1.0;
        let mut trial: Vec<f64>;
        let mut loss;
        let mut tries = 0;
        loop {
            trial = scores
                .iter()
                .zip(&outputs)
                .map(|(s, o)| s + cfg.shrinkage * (factor * o))
                .collect();
            loss = logloss(&trial, &y);
            if loss <= prev || tries == MAX_BACKTRACK {
                break;
            }
            factor *= 0.5;
            tries += 1;
        }
        if loss > prev {
            factor = 0.0;
            trial = scores.clone();
            loss = prev;
        }
        if factor != 1.0 {
            tree.scale_leaves(factor);
        }
        assert!(loss <= prev, "training logloss rose in round {round}");
        scores = trial;
        history.push(loss);
        trees.push(tree);
    }

    Ok(GbdtModel {
        format_version: GBDT_FORMAT_VERSION,
        config: cfg.clone(),
        seed,
        num_features: nf,
        base_score,
        trees,
        train_logloss: history,
    })
}

impl GbdtModel {
    /// Raw additive score (log-odds).
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |s, t| s + self.config.shrinkage * t.predict(x))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model fields always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(GBDT_FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::UnsupportedVersion {
                    found: u32::try_from(v).unwrap_or(u32::MAX),
                    expected: GBDT_FORMAT_VERSION,
                })
            }
            None => return Err(Error::MalformedCheckpoint("missing integer format_version".into())),
        }
        let model: GbdtModel =
            serde_json::from_value(value).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        for t in &model.trees {
            for n in &t.nodes {
                if let Node::Split { feature, left, right, .. } = *n {
                    if feature >= model.num_features || left >= t.nodes.len() || right >= t.nodes.len() {
                        return Err(Error::MalformedCheckpoint("tree node out of range".into()));
                    }
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fault probability `sigmoid(base + shrinkage·Σ tree(x))`, kept inside (0,1).
pub fn predict_proba(model: &GbdtModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.num_features {
        return Err(Error::shape("predict_proba", &[model.num_features], &[x.len()]));
    }
    Ok(sigmoid(model.decision(x)).clamp(PROB_EPS, 1.0 - PROB_EPS))
}
