//! CART random forest with Gini splits and bootstrap bagging.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features tried per split; 0 means ⌈√N⌉.
    pub features_per_split: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 50,
            max_depth: 8,
            min_samples_split: 2,
            features_per_split: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Normalized class histogram.
    Leaf(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_histogram(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf(h) => return h,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf(_) => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub num_classes: usize,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(x: ArrayView2<f64>, labels: &[usize], num_classes: usize, cfg: &ForestConfig, seed: u64) -> Result<Self> {
        if cfg.trees == 0 {
            return Err(Error::Config("probe.rf_trees must be ≥ 1".into()));
        }
        if x.nrows() != labels.len() || labels.is_empty() {
            return Err(Error::Shape(format!("{} rows for {} labels", x.nrows(), labels.len())));
        }
        let n_feat = x.ncols();
        let mtry = match cfg.features_per_split {
            0 => ((n_feat as f64).sqrt().ceil() as usize).max(1),
            m => m.min(n_feat),
        };
        let trees = (0..cfg.trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
                let boot: Vec<usize> = (0..labels.len()).map(|_| rng.random_range(0..labels.len())).collect();
                let mut builder = Builder {
                    x,
                    labels,
                    num_classes,
                    mtry,
                    cfg,
                    rng,
                    nodes: Vec::new(),
                };
                builder.grow(boot, 0);
                DecisionTree { nodes: builder.nodes }
            })
            .collect();
        Ok(RandomForest { num_classes, trees })
    }

    /// Mean leaf histogram over all trees.
    pub fn predict_proba(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut acc = vec![0.0; self.num_classes];
        for tree in &self.trees {
            for (a, h) in acc.iter_mut().zip(tree.leaf_histogram(x)) {
                *a += h;
            }
        }
        let t = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= t);
        acc
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        x.rows()
            .into_iter()
            .map(|row| {
                let p = self.predict_proba(row);
                let mut best = 0;
                for (j, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    labels: &'a [usize],
    num_classes: usize,
    mtry: usize,
    cfg: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

impl Builder<'_> {
    fn histogram(&self, rows: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.num_classes];
        for &r in rows {
            h[self.labels[r]] += 1.0;
        }
        h
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let hist = self.histogram(&rows);
        let pure = hist.iter().filter(|&&c| c > 0.0).count() <= 1;
        let split = if pure || depth >= self.cfg.max_depth || rows.len() < self.cfg.min_samples_split.max(2) {
            None
        } else {
            self.best_split(&rows, &hist)
        };
        match split {
            None => {
                let total = rows.len() as f64;
                self.nodes.push(Node::Leaf(hist.iter().map(|c| c / total).collect()));
            }
            Some((feature, threshold)) => {
                self.nodes.push(Node::Leaf(Vec::new()));
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[[i, feature]] <= threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        id
    }

    fn best_split(&mut self, rows: &[usize], hist: &[f64]) -> Option<(usize, f64)> {
        let total = rows.len() as f64;
        let parent = gini(hist, total);
        let mut best: Option<(f64, usize, f64)> = None;
        let features = sample(&mut self.rng, self.x.ncols(), self.mtry).into_vec();
        let mut vals: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in features {
            vals.clear();
            vals.extend(rows.iter().map(|&r| (self.x[[r, f]], self.labels[r])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0.0; self.num_classes];
            let mut right = hist.to_vec();
            for i in 0..vals.len() - 1 {
                left[vals[i].1] += 1.0;
                right[vals[i].1] -= 1.0;
                if vals[i].0 == vals[i + 1].0 {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = total - nl;
                let impurity = (nl * gini(&left, nl) + nr * gini(&right, nr)) / total;
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (vals[i].0 + vals[i + 1].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy() -> (Array2<f64>, Vec<usize>) {
        let x = Array2::from_shape_fn((60, 4), |(i, j)| ((i * 7 + j * 13) % 11) as f64 + if j == 2 { (i % 3) as f64 * 20.0 } else { 0.0 });
        let y = (0..60).map(|i| i % 3).collect();
        (x, y)
    }

    #[test]
    fn learns_an_axis_aligned_rule_and_respects_depth() {
        let (x, y) = toy();
        let cfg = ForestConfig {
            trees: 10,
            max_depth: 3,
            features_per_split: 4,
            ..ForestConfig::default()
        };
        let rf = RandomForest::fit(x.view(), &y, 3, &cfg, 1).unwrap();
        assert_eq!(rf.predict(x.view()), y);
        assert!(rf.trees.iter().all(|t| t.depth() <= 3));
        for row in x.rows() {
            let s: f64 = rf.predict_proba(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (x, y) = toy();
        let cfg = ForestConfig::default();
        let a = RandomForest::fit(x.view(), &y, 3, &cfg, 9).unwrap();
        let b = RandomForest::fit(x.view(), &y, 3, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(x.view()), b.predict(x.view()));
    }
}
