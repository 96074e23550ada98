use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::delta::delta_regularizer;
use super::{History, SuppressionConfig, Suppressor, SuppressorKind};
use crate::data::{sample_triplets, Attribute, Dataset, Triplet, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::tensor::{
    accuracy, adam_update, derive_seed, fit_classifier, gather_rows, predict_labels, triplet_loss, Activation,
    AdamState, DenseNet, Gradients, HeadLoss, TrainConfig,
};

/// Triplets used to monitor identity ordering during training.
const MONITOR_TRIPLETS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnRecord {
    pub iteration: usize,
    /// Mean triplet loss over this round's suppressor steps.
    pub triplet_loss: f64,
    /// Mean of (Δ^A + Δ^P + Δ^N) / 3 over this round's suppressor steps.
    pub mean_delta: f64,
    /// Fresh adversary accuracy on the part of `se` it was trained on.
    pub adversary_accuracy: f64,
    /// Same adversary on the held-out part of `se`.
    pub heldout_accuracy: f64,
    /// Fraction of monitor triplets with d(a,p) < d(a,n) after this round.
    pub triplet_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct SnBatch {
    pub loss: f64,
    pub triplet_loss: f64,
    pub mean_delta: f64,
    pub grads: Gradients,
}

/// Neutral component of the emotion head's posterior for one blinded embedding.
pub fn neutral_probability(emotion_head: &DenseNet, phi_x: ArrayView1<f64>) -> Result<f64> {
    check_emotion_head(emotion_head)?;
    let out = emotion_head.predict(phi_x.insert_axis(Axis(0)))?;
    Ok(out[[0, 0]])
}

fn check_emotion_head(head: &DenseNet) -> Result<()> {
    let last = head.layers().last().expect("non-empty network").activation;
    if head.output_dim() != NUM_EMOTIONS || last != Activation::Softmax {
        return Err(Error::Shape(format!(
            "emotion head '{}' must end in a {NUM_EMOTIONS}-way softmax, has {} {:?} outputs",
            head.name,
            head.output_dim(),
            last
        )));
    }
    Ok(())
}

/// Batch objective of the suppressor with the adversary frozen:
/// mean triplet loss plus `delta_weight` × mean(Δ^A + Δ^P + Δ^N).
pub fn sn_batch_objective(
    suppressor: &DenseNet,
    adversary: &DenseNet,
    anchors: ArrayView2<f64>,
    positives: ArrayView2<f64>,
    negatives: ArrayView2<f64>,
    cfg: &SuppressionConfig,
) -> Result<SnBatch> {
    check_emotion_head(adversary)?;
    let b = anchors.nrows();
    if b == 0 || positives.nrows() != b || negatives.nrows() != b {
        return Err(Error::Shape(format!(
            "triplet batch sizes differ: {} / {} / {}",
            b,
            positives.nrows(),
            negatives.nrows()
        )));
    }
    let scale = 1.0 / b as f64;
    let fwds = [
        suppressor.forward(anchors)?,
        suppressor.forward(positives)?,
        suppressor.forward(negatives)?,
    ];
    let out_dim = suppressor.output_dim();
    let mut phi_grads = [
        Array2::<f64>::zeros((b, out_dim)),
        Array2::<f64>::zeros((b, out_dim)),
        Array2::<f64>::zeros((b, out_dim)),
    ];

    let mut trip_total = 0.0;
    for i in 0..b {
        let rows = [fwds[0].output().row(i), fwds[1].output().row(i), fwds[2].output().row(i)];
        let (units, norms) = if cfg.normalize_triplet {
            let mut units = Vec::with_capacity(3);
            let mut norms = [1.0; 3];
            for (k, r) in rows.iter().enumerate() {
                let nrm = r.dot(r).sqrt();
                if !(nrm > 0.0) {
                    return Err(Error::Numeric(format!("zero-norm suppressed embedding in triplet row {i}")));
                }
                norms[k] = nrm;
                units.push(r.mapv(|v| v / nrm));
            }
            (units, norms)
        } else {
            (rows.iter().map(|r| r.to_owned()).collect(), [1.0; 3])
        };
        let t = triplet_loss(units[0].view(), units[1].view(), units[2].view(), cfg.triplet_margin)?;
        trip_total += t.loss;
        if t.loss > 0.0 {
            let srcs = [&t.grad_anchor, &t.grad_positive, &t.grad_negative];
            for k in 0..3 {
                let mut gk = ndarray::Array1::from(srcs[k].clone());
                if cfg.normalize_triplet {
                    // d(φ/‖φ‖)/dφ = (I − u uᵀ)/‖φ‖
                    let along = units[k].dot(&gk);
                    gk.scaled_add(-along, &units[k]);
                    gk /= norms[k];
                }
                phi_grads[k].row_mut(i).scaled_add(scale, &gk);
            }
        }
    }

    let mut delta_total = 0.0;
    for (fwd, g) in fwds.iter().zip(phi_grads.iter_mut()) {
        let adv = adversary.forward(fwd.output().view())?;
        let probs = adv.output();
        let mut logit_grad = Array2::<f64>::zeros(probs.raw_dim());
        for i in 0..b {
            let p0 = probs[[i, 0]].clamp(0.0, 1.0);
            let (value, slope) = delta_regularizer(p0, cfg.delta_target)?;
            delta_total += value;
            // dp0/dz_j = p0 (1[j=0] − p_j)
            let w = cfg.delta_weight * scale * slope * p0;
            for j in 0..NUM_EMOTIONS {
                let ind = if j == 0 { 1.0 } else { 0.0 };
                logit_grad[[i, j]] = w * (ind - probs[[i, j]]);
            }
        }
        if cfg.delta_weight > 0.0 {
            let back = adversary.backward_logits(&adv, logit_grad.view())?;
            *g += &back.input_grad;
        }
    }

    let mut grads = Gradients::zeros_like(suppressor);
    for (fwd, g) in fwds.iter().zip(&phi_grads) {
        let back = suppressor.backward(fwd, g.view())?;
        grads.add_scaled(&back.grads, 1.0);
    }
    let triplet = trip_total * scale;
    let mean_delta = delta_total * scale / 3.0;
    Ok(SnBatch {
        loss: triplet + cfg.delta_weight * 3.0 * mean_delta,
        triplet_loss: triplet,
        mean_delta,
        grads,
    })
}

/// Alternates a freshly retrained emotion adversary on `se` with suppressor
/// steps on triplets from `sp`.
pub fn train_sensitivenets(sp: &Dataset, se: &Dataset, cfg: &SuppressionConfig) -> Result<Suppressor> {
    cfg.validate()?;
    if sp.is_empty() || se.is_empty() {
        return Err(Error::Data(format!(
            "suppression needs non-empty data (sp has {} samples, se has {})",
            sp.len(),
            se.len()
        )));
    }
    if sp.dim() != se.dim() {
        return Err(Error::Shape(format!("sp has N={}, se has N={}", sp.dim(), se.dim())));
    }
    let n = sp.dim();
    let seed = cfg.train.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let mut net = DenseNet::near_identity("w_E", n, cfg.depth, cfg.init_noise, &mut rng)?;
    let mut state = AdamState::new(&net);

    // Train on inputs centred by the sp mean with frozen zero biases, so the
    // suppressor cannot satisfy Δ by translating every sample.
    let center = sp.embeddings().mean_axis(Axis(0)).expect("non-empty");
    let xp = sp.embeddings() - &center;
    let xe = se.embeddings() - &center;
    let ye = se.labels(Attribute::Emotion);
    let mut order: Vec<usize> = (0..se.len()).collect();
    order.shuffle(&mut rng);
    let held = if se.len() >= 5 { se.len() / 5 } else { 0 };
    let (held_idx, fit_idx) = order.split_at(held);
    let mut held_idx = held_idx.to_vec();
    let mut fit_idx = fit_idx.to_vec();
    held_idx.sort_unstable();
    fit_idx.sort_unstable();
    let y_fit: Vec<usize> = fit_idx.iter().map(|&i| ye[i]).collect();
    let y_held: Vec<usize> = held_idx.iter().map(|&i| ye[i]).collect();
    let x_fit = gather_rows(xe.view(), &fit_idx);
    let x_held = gather_rows(xe.view(), &held_idx);

    let monitor = sample_triplets(sp, MONITOR_TRIPLETS, derive_seed(seed, &[1]))?;
    let adv_cfg = TrainConfig {
        learning_rate: cfg.adversary_learning_rate,
        ..cfg.train.clone()
    };

    let mut history = Vec::with_capacity(cfg.outer_iterations);
    for iteration in 0..cfg.outer_iterations {
        // (a) fresh adversary on the current blinded features
        let phi_fit = net.predict(x_fit.view())?;
        // zero start: no random projections onto nuisance directions
        let mut adversary = DenseNet::zero_layer("w_3", n, NUM_EMOTIONS, Activation::Softmax)?;
        fit_classifier(
            &mut adversary,
            phi_fit.view(),
            &y_fit,
            HeadLoss::CrossEntropy,
            cfg.adversary_epochs,
            &adv_cfg,
            derive_seed(seed, &[3, iteration as u64]),
        )?;
        let adversary_accuracy = accuracy(&predict_labels(&adversary.predict(phi_fit.view())?), &y_fit);
        let heldout_accuracy = if held_idx.is_empty() {
            adversary_accuracy
        } else {
            let phi_held = net.predict(x_held.view())?;
            accuracy(&predict_labels(&adversary.predict(phi_held.view())?), &y_held)
        };

        // (b) suppressor steps against the frozen adversary
        let mut trip_sum = 0.0;
        let mut delta_sum = 0.0;
        for step in 0..cfg.suppressor_steps {
            let batch = sample_triplets(
                sp,
                cfg.train.batch_size,
                derive_seed(seed, &[4, iteration as u64, step as u64]),
            )?;
            let (a, p, ng) = triplet_rows(xp.view(), &batch);
            let obj = sn_batch_objective(&net, &adversary, a.view(), p.view(), ng.view(), cfg)?;
            if !obj.loss.is_finite() || !obj.grads.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite suppression loss at iteration {iteration}, step {step}"
                )));
            }
            trip_sum += obj.triplet_loss;
            delta_sum += obj.mean_delta;
            let mut grads = obj.grads;
            for layer in &mut grads.layers {
                layer.bias.fill(0.0);
            }
            adam_update(&mut net, &grads, &mut state, &cfg.train)?;
        }
        if cfg.max_gain > 0.0 {
            for layer in net.layers_mut() {
                clip_singular_values(&mut layer.weight, cfg.max_gain);
            }
        }
        let steps = cfg.suppressor_steps.max(1) as f64;
        let triplet_accuracy = triplet_order_accuracy(&net, xp.view(), &monitor)?;
        history.push(SnRecord {
            iteration,
            triplet_loss: trip_sum / steps,
            mean_delta: delta_sum / steps,
            adversary_accuracy,
            heldout_accuracy,
            triplet_accuracy,
        });
        let hit_ceiling = cfg.emotion_ceiling.is_some_and(|c| heldout_accuracy <= c);
        let hit_floor = cfg.verification_floor.is_some_and(|f| triplet_accuracy < f);
        if hit_ceiling || hit_floor {
            break;
        }
    }
    // fold the centring into the first layer: W₁(x − μ) = W₁x − W₁μ
    let shift = net.layers()[0].weight.dot(&center);
    net.layers_mut()[0].bias -= &shift;
    Ok(Suppressor {
        kind: SuppressorKind::Sn,
        network: net,
        history: History::Sn(history),
    })
}

/// Caps every singular value of `w` at `max`.
///
/// With `wᵀw = V S² Vᵀ`, each right singular vector `v` whose singular value
/// `s` exceeds `max` is rescaled: `w ← w (I − (1 − max/s) v vᵀ)`.
pub(crate) fn clip_singular_values(w: &mut Array2<f64>, max: f64) {
    let gram = w.t().dot(w);
    let c = gram.ncols();
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_fn(c, c, |i, j| gram[[i, j]]));
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        if s <= max {
            continue;
        }
        let v = ndarray::Array1::from_iter(eig.eigenvectors.column(k).iter().copied());
        let wv = w.dot(&v);
        let shrink = 1.0 - max / s;
        for i in 0..w.nrows() {
            let a = shrink * wv[i];
            w.row_mut(i).scaled_add(-a, &v);
        }
    }
}

fn triplet_rows(x: ArrayView2<f64>, batch: &[Triplet]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let a: Vec<usize> = batch.iter().map(|t| t.anchor).collect();
    let p: Vec<usize> = batch.iter().map(|t| t.positive).collect();
    let n: Vec<usize> = batch.iter().map(|t| t.negative).collect();
    (gather_rows(x, &a), gather_rows(x, &p), gather_rows(x, &n))
}

/// Fraction of triplets whose anchor is closer to the positive than to the negative.
pub(crate) fn triplet_order_accuracy(net: &DenseNet, x: ArrayView2<f64>, triplets: &[Triplet]) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(1.0);
    }
    let (a, p, n) = triplet_rows(x, triplets);
    let (a, p, n) = (net.predict(a.view())?, net.predict(p.view())?, net.predict(n.view())?);
    let mut good = 0usize;
    for i in 0..triplets.len() {
        let dp: f64 = (&a.row(i) - &p.row(i)).mapv(|v| v * v).sum();
        let dn: f64 = (&a.row(i) - &n.row(i)).mapv(|v| v * v).sum();
        if dp < dn {
            good += 1;
        }
    }
    Ok(good as f64 / triplets.len() as f64)
}
