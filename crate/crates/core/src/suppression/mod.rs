//! Blinding transformations: adversarial suppression with a retrained emotion
//! adversary (`Sn`) and adapter retraining with gradient reversal and an
//! entropy penalty (`Lnl`).

mod delta;
mod lnl;
mod sensitivenets;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use delta::delta_regularizer;
pub use lnl::{lnl_batch_gradients, train_lnl, LnlBatch, LnlRecord};
pub use sensitivenets::{neutral_probability, sn_batch_objective, train_sensitivenets, SnBatch, SnRecord};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::io::{net_to_string, read_net, Lines};
use crate::tensor::{DenseNet, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuppressorKind {
    Sn,
    Lnl,
}

impl SuppressorKind {
    pub fn code(self) -> &'static str {
        match self {
            SuppressorKind::Sn => "sn",
            SuppressorKind::Lnl => "lnl",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "sn" => Some(SuppressorKind::Sn),
            "lnl" => Some(SuppressorKind::Lnl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionConfig {
    /// Outer adversary/suppressor rounds R.
    pub outer_iterations: usize,
    /// Epochs spent retraining the fresh emotion adversary each round.
    pub adversary_epochs: usize,
    /// Adam step size used when retraining the adversary.
    pub adversary_learning_rate: f64,
    /// Upper bound on the singular values of each suppressor layer, enforced
    /// after every round (0 disables the bound).
    pub max_gain: f64,
    /// Suppressor mini-batch steps per round.
    pub suppressor_steps: usize,
    pub triplet_margin: f64,
    /// Compare suppressed embeddings on the unit sphere in the triplet term.
    pub normalize_triplet: bool,
    pub delta_target: f64,
    /// Multiplier on the Δ terms (0 disables them).
    pub delta_weight: f64,
    /// Number of linear layers in the suppressor.
    pub depth: usize,
    /// Std of the Gaussian perturbation around the identity initialisation.
    pub init_noise: f64,
    pub lnl_lambda: f64,
    pub reversal_scale: f64,
    pub lnl_epochs: usize,
    /// Adam step size for the adapter and its main-task head.
    pub lnl_learning_rate: f64,
    /// Epochs used to fit each freshly initialised head.
    pub lnl_pretrain_epochs: usize,
    /// Emotion-head updates per adapter update.
    pub lnl_head_steps: usize,
    /// Encoder output width; 0 means "same as the input".
    pub lnl_width: usize,
    /// Stop once the held-out adversary accuracy falls to this level.
    pub emotion_ceiling: Option<f64>,
    /// Stop once held-out triplet ordering accuracy drops below this level.
    pub verification_floor: Option<f64>,
    pub train: TrainConfig,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        SuppressionConfig {
            outer_iterations: 20,
            adversary_epochs: 10,
            adversary_learning_rate: 0.01,
            max_gain: 1.0,
            suppressor_steps: 40,
            triplet_margin: 2.0,
            normalize_triplet: true,
            delta_target: 0.9,
            delta_weight: 1.0,
            depth: 3,
            init_noise: 0.01,
            lnl_lambda: 3.0,
            reversal_scale: 1.0,
            lnl_epochs: 100,
            lnl_learning_rate: 1e-4,
            lnl_pretrain_epochs: 20,
            lnl_head_steps: 5,
            lnl_width: 0,
            emotion_ceiling: None,
            verification_floor: None,
            train: TrainConfig::default(),
        }
    }
}

impl SuppressionConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.outer_iterations == 0 {
            return bad("sup.outer_iterations must be ≥ 1");
        }
        if !(self.delta_target > 0.0 && self.delta_target <= 1.0) {
            return bad("sup.delta_target must lie in (0, 1]");
        }
        if !(self.lnl_lambda >= 0.0) {
            return bad("sup.lnl_lambda must be ≥ 0");
        }
        if !(self.reversal_scale >= 0.0 && self.reversal_scale.is_finite()) {
            return bad("sup.reversal_scale must be ≥ 0");
        }
        if !(self.triplet_margin >= 0.0) {
            return bad("sup.triplet_margin must be ≥ 0");
        }
        if !(self.delta_weight >= 0.0) {
            return bad("sup.delta_weight must be ≥ 0");
        }
        if !(self.adversary_learning_rate > 0.0 && self.adversary_learning_rate.is_finite()) {
            return bad("sup.adversary_learning_rate must be > 0");
        }
        if !(self.lnl_learning_rate > 0.0 && self.lnl_learning_rate.is_finite()) {
            return bad("sup.lnl_learning_rate must be > 0");
        }
        if self.lnl_head_steps == 0 {
            return bad("sup.lnl_head_steps must be ≥ 1");
        }
        if self.depth == 0 {
            return bad("sup.depth must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum History {
    Sn(Vec<SnRecord>),
    Lnl(Vec<LnlRecord>),
}

impl History {
    pub fn len(&self) -> usize {
        match self {
            History::Sn(h) => h.len(),
            History::Lnl(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suppressor {
    pub kind: SuppressorKind,
    pub network: DenseNet,
    pub history: History,
}

impl Suppressor {
    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.network.output_dim()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let batch = x.insert_axis(Axis(0));
        let out = self.apply_batch(batch)?;
        Ok(out.row(0).to_owned())
    }

    pub fn apply_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.network.predict(x)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "suppressor 1 kind={} input={} output={}",
            self.kind.code(),
            self.input_dim(),
            self.output_dim()
        );
        out.push_str(&net_to_string(&self.network));
        out
    }

    /// Loads a suppressor; the training history is not persisted.
    pub fn from_text(text: &str) -> Result<Self> {
        let first = text.lines().next().ok_or(Error::Parse {
            line: 1,
            msg: "empty suppressor file".into(),
        })?;
        let mut kind = None;
        let mut toks = first.split_ascii_whitespace();
        if toks.next() != Some("suppressor") || toks.next() != Some("1") {
            return Err(Error::Parse {
                line: 1,
                msg: "expected 'suppressor 1 kind=...' header".into(),
            });
        }
        for tok in toks {
            if let Some(v) = tok.strip_prefix("kind=") {
                kind = SuppressorKind::from_code(v);
            }
        }
        let kind = kind.ok_or(Error::Parse {
            line: 1,
            msg: "missing or unknown kind".into(),
        })?;
        let rest = text.split_once('\n').map_or("", |(_, r)| r);
        let mut lines = Lines::new(rest, 1);
        let network = read_net(&mut lines)?;
        Ok(Suppressor {
            kind,
            network,
            history: match kind {
                SuppressorKind::Sn => History::Sn(Vec::new()),
                SuppressorKind::Lnl => History::Lnl(Vec::new()),
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Which embedding space a probe or experiment works in.
#[derive(Debug, Clone, Copy)]
pub enum Representation<'a> {
    Raw,
    Blinded(&'a Suppressor),
}

impl Representation<'_> {
    pub fn embed(&self, ds: &Dataset) -> Result<Array2<f64>> {
        self.embed_matrix(ds.embeddings().view())
    }

    pub fn embed_matrix(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Representation::Raw => Ok(x.to_owned()),
            Representation::Blinded(s) => s.apply_batch(x),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Representation::Raw => "x",
            Representation::Blinded(s) => match s.kind {
                SuppressorKind::Sn => "phi_sn(x)",
                SuppressorKind::Lnl => "phi_lnl(x)",
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_suppressor_is_a_no_op_and_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Suppressor {
            kind: SuppressorKind::Sn,
            network: DenseNet::near_identity("w_E", 3, 3, 0.0, &mut rng).unwrap(),
            history: History::Sn(Vec::new()),
        };
        let x = array![0.5, -1.0, 2.0];
        assert_eq!(s.apply(x.view()).unwrap(), x);
        assert_eq!(s.apply(x.view()).unwrap(), s.apply(x.view()).unwrap());
        let err = s.apply(array![1.0, 2.0].view()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Suppressor {
            kind: SuppressorKind::Lnl,
            network: DenseNet::near_identity("lnl-encoder", 4, 1, 0.1, &mut rng).unwrap(),
            history: History::Lnl(Vec::new()),
        };
        let back = Suppressor::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert!(Suppressor::from_text("suppressor 1 kind=zz\n").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SuppressionConfig::default().validate().is_ok());
        for bad in [
            SuppressionConfig { outer_iterations: 0, ..Default::default() },
            SuppressionConfig { delta_target: 0.0, ..Default::default() },
            SuppressionConfig { delta_target: 1.5, ..Default::default() },
            SuppressionConfig { lnl_lambda: -1.0, ..Default::default() },
            SuppressionConfig { reversal_scale: -0.5, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
