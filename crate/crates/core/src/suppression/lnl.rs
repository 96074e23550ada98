use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sensitivenets::clip_singular_values;
use super::{History, SuppressionConfig, Suppressor, SuppressorKind};
use crate::data::{Attribute, Dataset, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::probes::{Task, TaskSpec};
use crate::tensor::{
    accuracy, adam_update, derive_seed, entropy, fit_classifier, gather_rows, gradient_reversal, head_loss_grad,
    neg_entropy_logit_grad, predict_labels, Activation, AdamState, DenseNet, Gradients, HeadLoss, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnlRecord {
    /// 0 is the state right after head pre-training.
    pub epoch: usize,
    pub main_loss: f64,
    pub main_accuracy: f64,
    pub emotion_loss: f64,
    pub emotion_accuracy: f64,
    /// Mean per-sample entropy (nats) of the emotion posterior.
    pub emotion_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct LnlBatch {
    pub main_loss: f64,
    pub emotion_loss: f64,
    pub mean_entropy: f64,
    pub encoder: Gradients,
    pub main_head: Gradients,
    pub emotion_head: Gradients,
    /// Gradient of the emotion loss w.r.t. the encoder output, before reversal.
    pub emotion_feature_grad: Array2<f64>,
}

impl LnlBatch {
    /// The quantity the encoder gradient descends:
    /// `L_main − μ·L_emotion − λ·H̄`.
    pub fn encoder_objective(&self, reversal_scale: f64, lambda: f64) -> f64 {
        self.main_loss - reversal_scale * self.emotion_loss - lambda * self.mean_entropy
    }
}

/// One batch of gradients for the encoder and both heads. The encoder receives
/// the main-task gradient, the reversed emotion gradient and `lambda` times
/// the gradient of the negative posterior entropy; the heads receive their
/// ordinary cross-entropy gradients.
#[allow(clippy::too_many_arguments)]
pub fn lnl_batch_gradients(
    encoder: &DenseNet,
    main_head: &DenseNet,
    emotion_head: &DenseNet,
    x: ArrayView2<f64>,
    main_labels: &[usize],
    emotion_labels: &[usize],
    reversal_scale: f64,
    lambda: f64,
) -> Result<LnlBatch> {
    let b = x.nrows();
    if main_labels.len() != b || emotion_labels.len() != b {
        return Err(Error::Shape(format!(
            "{b} rows for {} main / {} emotion labels",
            main_labels.len(),
            emotion_labels.len()
        )));
    }
    let enc = encoder.forward(x)?;
    let feat = enc.output().view();

    let main = main_head.forward(feat)?;
    let (main_loss, main_grad) = head_loss_grad(HeadLoss::CrossEntropy, main.output(), main_labels)?;
    let main_back = main_head.backward_logits(&main, main_grad.view())?;

    let emo = emotion_head.forward(feat)?;
    let (emotion_loss, emo_grad) = head_loss_grad(HeadLoss::CrossEntropy, emo.output(), emotion_labels)?;
    let emo_back = emotion_head.backward_logits(&emo, emo_grad.view())?;

    let probs = emo.output();
    let mut ent_grad = Array2::<f64>::zeros(probs.raw_dim());
    let mut ent_total = 0.0;
    for (i, row) in probs.rows().into_iter().enumerate() {
        let p = row.to_vec();
        ent_total += entropy(&p);
        for (j, g) in neg_entropy_logit_grad(&p).into_iter().enumerate() {
            ent_grad[[i, j]] = g / b.max(1) as f64;
        }
    }
    let ent_back = emotion_head.backward_logits(&emo, ent_grad.view())?;

    let mut feat_grad = main_back.input_grad.clone();
    feat_grad += &gradient_reversal(&emo_back.input_grad, reversal_scale);
    feat_grad.scaled_add(lambda, &ent_back.input_grad);
    let enc_back = encoder.backward(&enc, feat_grad.view())?;

    Ok(LnlBatch {
        main_loss,
        emotion_loss,
        mean_entropy: ent_total / b.max(1) as f64,
        encoder: enc_back.grads,
        main_head: main_back.grads,
        emotion_head: emo_back.grads,
        emotion_feature_grad: emo_back.input_grad,
    })
}

/// Retrains a linear adapter over `x` for `main_task` while unlearning emotion.
pub fn train_lnl(train: &Dataset, main_task: &TaskSpec, cfg: &SuppressionConfig) -> Result<Suppressor> {
    cfg.validate()?;
    if matches!(main_task.task, Task::Verification | Task::Emotion) {
        return Err(Error::UnsupportedTask(format!(
            "'{}' cannot be the main task of adapter retraining (needs a closed-set non-emotion task)",
            main_task.name
        )));
    }
    if train.is_empty() {
        return Err(Error::Data("adapter retraining needs a non-empty training set".into()));
    }
    let n = train.dim();
    let width = if cfg.lnl_width == 0 { n } else { cfg.lnl_width };
    let x = train.embeddings();
    let y_main = main_task.labels(train)?;
    let y_emo = train.labels(Attribute::Emotion);
    let seed = cfg.train.seed;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[10]));
    let mut encoder = if width == n {
        DenseNet::near_identity("lnl-encoder", n, 1, cfg.init_noise, &mut rng)?
    } else {
        DenseNet::random("lnl-encoder", &[n, width], &[Activation::Linear], &mut rng)?
    };
    // zero-initialised heads carry no random projections onto nuisance directions
    let mut main_head = DenseNet::zero_layer(
        format!("head-{}", main_task.name),
        width,
        main_task.num_classes,
        Activation::Softmax,
    )?;
    let mut emotion_head = DenseNet::zero_layer("head-emotion", width, NUM_EMOTIONS, Activation::Softmax)?;

    let head_cfg = TrainConfig {
        learning_rate: cfg.adversary_learning_rate,
        ..cfg.train.clone()
    };
    let enc_cfg = TrainConfig {
        learning_rate: cfg.lnl_learning_rate,
        ..cfg.train.clone()
    };
    let feat = encoder.predict(x.view())?;
    fit_classifier(
        &mut main_head,
        feat.view(),
        &y_main,
        HeadLoss::CrossEntropy,
        cfg.lnl_pretrain_epochs,
        &head_cfg,
        derive_seed(seed, &[11]),
    )?;
    fit_classifier(
        &mut emotion_head,
        feat.view(),
        &y_emo,
        HeadLoss::CrossEntropy,
        cfg.lnl_pretrain_epochs,
        &head_cfg,
        derive_seed(seed, &[12]),
    )?;

    let mut history = vec![lnl_record(0, &encoder, &main_head, &emotion_head, x.view(), &y_main, &y_emo)?];
    let mut enc_state = AdamState::new(&encoder);
    let mut main_state = AdamState::new(&main_head);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.lnl_epochs {
        // a fresh emotion head each epoch, fitted to the current features
        emotion_head = DenseNet::zero_layer("head-emotion", width, NUM_EMOTIONS, Activation::Softmax)?;
        let feat = encoder.predict(x.view())?;
        fit_classifier(
            &mut emotion_head,
            feat.view(),
            &y_emo,
            HeadLoss::CrossEntropy,
            cfg.lnl_pretrain_epochs,
            &head_cfg,
            derive_seed(seed, &[13, epoch as u64]),
        )?;
        let mut emo_state = AdamState::new(&emotion_head);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            let xb = gather_rows(x.view(), chunk);
            let ym: Vec<usize> = chunk.iter().map(|&i| y_main[i]).collect();
            let ye: Vec<usize> = chunk.iter().map(|&i| y_emo[i]).collect();
            // extra emotion-head updates on detached features
            for _ in 1..cfg.lnl_head_steps {
                let feat = encoder.predict(xb.view())?;
                let fwd = emotion_head.forward(feat.view())?;
                let (_, g) = head_loss_grad(HeadLoss::CrossEntropy, fwd.output(), &ye)?;
                let back = emotion_head.backward_logits(&fwd, g.view())?;
                adam_update(&mut emotion_head, &back.grads, &mut emo_state, &head_cfg)?;
            }
            let batch = lnl_batch_gradients(
                &encoder,
                &main_head,
                &emotion_head,
                xb.view(),
                &ym,
                &ye,
                cfg.reversal_scale,
                cfg.lnl_lambda,
            )?;
            if !batch.encoder_objective(cfg.reversal_scale, cfg.lnl_lambda).is_finite() {
                return Err(Error::Numeric(format!("non-finite adapter loss at epoch {epoch}")));
            }
            adam_update(&mut encoder, &batch.encoder, &mut enc_state, &enc_cfg)?;
            adam_update(&mut main_head, &batch.main_head, &mut main_state, &enc_cfg)?;
            adam_update(&mut emotion_head, &batch.emotion_head, &mut emo_state, &head_cfg)?;
        }
        if cfg.max_gain > 0.0 {
            for layer in encoder.layers_mut() {
                clip_singular_values(&mut layer.weight, cfg.max_gain);
            }
        }
        history.push(lnl_record(epoch, &encoder, &main_head, &emotion_head, x.view(), &y_main, &y_emo)?);
    }
    Ok(Suppressor {
        kind: SuppressorKind::Lnl,
        network: encoder,
        history: History::Lnl(history),
    })
}

fn lnl_record(
    epoch: usize,
    encoder: &DenseNet,
    main_head: &DenseNet,
    emotion_head: &DenseNet,
    x: ArrayView2<f64>,
    y_main: &[usize],
    y_emo: &[usize],
) -> Result<LnlRecord> {
    let feat = encoder.predict(x)?;
    let main = main_head.predict(feat.view())?;
    let emo = emotion_head.predict(feat.view())?;
    let (main_loss, _) = head_loss_grad(HeadLoss::CrossEntropy, &main, y_main)?;
    let (emotion_loss, _) = head_loss_grad(HeadLoss::CrossEntropy, &emo, y_emo)?;
    let ent: f64 = emo.rows().into_iter().map(|r| entropy(&r.to_vec())).sum();
    Ok(LnlRecord {
        epoch,
        main_loss,
        main_accuracy: accuracy(&predict_labels(&main), y_main),
        emotion_loss,
        emotion_accuracy: accuracy(&predict_labels(&emo), y_emo),
        emotion_entropy: ent / y_emo.len().max(1) as f64,
    })
}
