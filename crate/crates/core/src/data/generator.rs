//! Planted-factor generator standing in for a frozen face backbone.
//!
//! Latent layout: `[identity code | emotion block | gender | ethnicity (2) |
//! attractive | smiling]`. The latent is mapped into `N` dimensions by a
//! seeded matrix with orthonormal columns, so every factor is spread over all
//! embedding coordinates.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Attribute, Dataset, Emotion, LabeledSample, Provenance, NUM_EMOTIONS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_identities: usize,
    pub images_per_identity: usize,
    /// Embedding dimension N.
    pub dim: usize,
    pub identity_dim: usize,
    pub emotion_dim: usize,
    pub identity_scale: f64,
    /// Norm of each emotion prototype.
    pub emotion_scale: f64,
    /// Per-image Gaussian jitter around the emotion prototype.
    pub emotion_jitter: f64,
    pub gender_scale: f64,
    pub ethnicity_scale: f64,
    pub attractive_scale: f64,
    /// Per-identity Gaussian spread of the attractiveness coordinate.
    pub attractive_spread: f64,
    pub smiling_scale: f64,
    pub smiling_rate: f64,
    /// Phi coefficient between `smiling` and the Happy emotion.
    pub smiling_happy_correlation: f64,
    pub noise_sigma: f64,
    /// Seed for identities, labels and noise.
    pub seed: u64,
    /// Seed for the mixing matrix and emotion prototypes.
    pub mixing_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_identities: 240,
            images_per_identity: 6,
            dim: 256,
            identity_dim: 64,
            emotion_dim: 8,
            identity_scale: 0.5,
            emotion_scale: 2.5,
            emotion_jitter: 0.5,
            gender_scale: 2.0,
            ethnicity_scale: 4.0,
            attractive_scale: 0.8,
            attractive_spread: 0.6,
            smiling_scale: 2.0,
            smiling_rate: 0.35,
            smiling_happy_correlation: 0.6,
            noise_sigma: 0.05,
            seed: 0,
            mixing_seed: 0,
        }
    }
}

impl GenConfig {
    pub fn latent_dim(&self) -> usize {
        self.identity_dim + self.emotion_dim + 5
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim < self.latent_dim() {
            return bad(format!(
                "gen.dim = {} must be ≥ identity_dim + emotion_dim + 5 = {}",
                self.dim,
                self.latent_dim()
            ));
        }
        if self.num_identities == 0 || self.images_per_identity == 0 {
            return bad("gen.num_identities and gen.images_per_identity must be ≥ 1".into());
        }
        if self.identity_dim == 0 || self.emotion_dim == 0 {
            return bad("gen.identity_dim and gen.emotion_dim must be ≥ 1".into());
        }
        for (key, v) in [
            ("identity_scale", self.identity_scale),
            ("emotion_scale", self.emotion_scale),
            ("gender_scale", self.gender_scale),
            ("ethnicity_scale", self.ethnicity_scale),
            ("attractive_scale", self.attractive_scale),
            ("smiling_scale", self.smiling_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("gen.{key} must be > 0"));
            }
        }
        for (key, v) in [
            ("emotion_jitter", self.emotion_jitter),
            ("attractive_spread", self.attractive_spread),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("gen.{key} must be ≥ 0"));
            }
        }
        happy_smiling_rates(self.smiling_rate, self.smiling_happy_correlation)?;
        Ok(())
    }
}

/// `(P(smiling | Happy), P(smiling | not Happy))` giving overall rate `rate`
/// and phi coefficient `correlation` with a 1/6 Happy base rate.
pub fn happy_smiling_rates(rate: f64, correlation: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&rate) || !(-1.0..=1.0).contains(&correlation) {
        return Err(Error::Config(
            "gen.smiling_rate must lie in [0,1] and gen.smiling_happy_correlation in [-1,1]".into(),
        ));
    }
    let ph = 1.0 / NUM_EMOTIONS as f64;
    let gap = correlation * (rate * (1.0 - rate) / (ph * (1.0 - ph))).sqrt();
    let not_happy = rate - ph * gap;
    let happy = not_happy + gap;
    let tol = 1e-12;
    if happy > 1.0 + tol || not_happy < -tol || happy < -tol || not_happy > 1.0 + tol {
        return Err(Error::Config(format!(
            "gen.smiling_rate = {rate} cannot reach correlation {correlation} with Happy"
        )));
    }
    Ok((happy.clamp(0.0, 1.0), not_happy.clamp(0.0, 1.0)))
}

/// The fixed part of the generator: mixing matrix and emotion prototypes.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    /// `N × latent_dim`, orthonormal columns.
    pub mixing: Array2<f64>,
    /// `6 × emotion_dim`.
    pub prototypes: Array2<f64>,
    identity_dim: usize,
    emotion_dim: usize,
}

impl SyntheticWorld {
    pub fn new(cfg: &GenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.mixing_seed);
        let mixing = orthonormal_columns(cfg.dim, cfg.latent_dim(), &mut rng);
        let prototypes = if cfg.emotion_dim >= NUM_EMOTIONS {
            orthonormal_columns(cfg.emotion_dim, NUM_EMOTIONS, &mut rng).t().to_owned()
        } else {
            let mut p = gaussian(NUM_EMOTIONS, cfg.emotion_dim, &mut rng);
            for mut row in p.rows_mut() {
                let n = row.dot(&row).sqrt();
                row /= n;
            }
            p
        } * cfg.emotion_scale;
        Ok(SyntheticWorld {
            mixing,
            prototypes,
            identity_dim: cfg.identity_dim,
            emotion_dim: cfg.emotion_dim,
        })
    }

    /// First latent coordinate carrying an attribute (ethnicity spans two).
    pub fn latent_index(&self, attr: Attribute) -> Option<usize> {
        let base = self.identity_dim + self.emotion_dim;
        match attr {
            Attribute::Gender => Some(base),
            Attribute::Ethnicity => Some(base + 1),
            Attribute::Attractive => Some(base + 3),
            Attribute::Smiling => Some(base + 4),
            Attribute::Identity | Attribute::Emotion => None,
        }
    }

    pub fn emotion_range(&self) -> std::ops::Range<usize> {
        self.identity_dim..self.identity_dim + self.emotion_dim
    }

    pub fn embed(&self, latent: &Array1<f64>) -> Array1<f64> {
        self.mixing.dot(latent)
    }
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Q factor of a Gaussian matrix, with column signs fixed by diag(R) > 0.
fn orthonormal_columns<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let g = gaussian(rows, cols, rng);
    let m = DMatrix::from_fn(rows, cols, |i, j| g[[i, j]]);
    let qr = m.qr();
    let q = qr.q();
    let r = qr.r();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * sign
    })
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    /// Latent code of every sample, row-aligned with the dataset.
    pub latents: Array2<f64>,
    pub world: SyntheticWorld,
}

pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    Ok(generate_with_latents(cfg)?.dataset)
}

pub fn generate_with_latents(cfg: &GenConfig) -> Result<Generated> {
    let world = SyntheticWorld::new(cfg)?;
    let (p_smile_happy, p_smile_other) =
        happy_smiling_rates(cfg.smiling_rate, cfg.smiling_happy_correlation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.num_identities * cfg.images_per_identity;
    let d = cfg.latent_dim();
    let mut latents = Array2::zeros((total, d));
    let mut samples = Vec::with_capacity(total);
    let emo = world.emotion_range();
    let idx = |a| world.latent_index(a).expect("scalar attribute");

    for identity in 0..cfg.num_identities {
        let code: Vec<f64> = (0..cfg.identity_dim)
            .map(|_| cfg.identity_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let gender = rng.random_range(0..2usize);
        let ethnicity = rng.random_range(0..3usize);
        let attractive = rng.random_range(0..2usize);
        let attractive_value = signed(attractive) * cfg.attractive_scale
            + cfg.attractive_spread * rng.sample::<f64, _>(StandardNormal);

        for image in 0..cfg.images_per_identity {
            let emotion = Emotion::from_index(image % NUM_EMOTIONS).expect("index < 6");
            let p_smile = if emotion == Emotion::Happy {
                p_smile_happy
            } else {
                p_smile_other
            };
            let smiling = usize::from(rng.random_bool(p_smile));
            let id = samples.len();
            let mut latent = latents.row_mut(id);
            for (k, &v) in code.iter().enumerate() {
                latent[k] = v;
            }
            for (k, slot) in emo.clone().enumerate() {
                latent[slot] = world.prototypes[[emotion.index(), k]]
                    + cfg.emotion_jitter * rng.sample::<f64, _>(StandardNormal);
            }
            latent[idx(Attribute::Gender)] = signed(gender) * cfg.gender_scale;
            // ethnicity centroids sit on an equilateral triangle
            let angle = 2.0 * std::f64::consts::PI * ethnicity as f64 / 3.0;
            latent[idx(Attribute::Ethnicity)] = angle.cos() * cfg.ethnicity_scale;
            latent[idx(Attribute::Ethnicity) + 1] = angle.sin() * cfg.ethnicity_scale;
            latent[idx(Attribute::Attractive)] = attractive_value;
            latent[idx(Attribute::Smiling)] = signed(smiling) * cfg.smiling_scale;

            let mut embedding = world.mixing.dot(&latent);
            if cfg.noise_sigma > 0.0 {
                embedding.mapv_inplace(|v| v + cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal));
            }
            samples.push(LabeledSample {
                id,
                embedding: embedding.to_vec(),
                identity,
                emotion,
                gender,
                ethnicity,
                attractive,
                smiling,
            });
        }
    }
    Ok(Generated {
        dataset: Dataset {
            samples,
            provenance: Provenance::Generated(cfg.clone()),
            mixing_seed: Some(cfg.mixing_seed),
        },
        latents,
        world,
    })
}

fn signed(label: usize) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            num_identities: 30,
            dim: 96,
            ..GenConfig::default()
        }
    }

    #[test]
    fn layout_matches_six_images_per_subject() {
        let ds = generate_dataset(&GenConfig::default()).unwrap();
        assert_eq!(ds.len(), 1440);
        for (_, idx) in ds.by_identity() {
            let mut emotions: Vec<usize> = idx.iter().map(|&i| ds.samples[i].emotion.index()).collect();
            emotions.sort_unstable();
            assert_eq!(emotions, (0..6).collect::<Vec<_>>());
        }
        let counts = ds.labels(Attribute::Emotion).iter().fold([0usize; 6], |mut c, &e| {
            c[e] += 1;
            c
        });
        assert!(counts.iter().all(|&c| c == 240));
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&GenConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.samples[0].embedding, c.samples[0].embedding);
    }

    #[test]
    fn noiseless_duplicates_are_identical() {
        let cfg = GenConfig {
            images_per_identity: 24,
            noise_sigma: 0.0,
            emotion_jitter: 0.0,
            ..small()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let mut found = 0;
        for idx in ds.by_identity().values() {
            for (i, &a) in idx.iter().enumerate() {
                for &b in &idx[i + 1..] {
                    let (sa, sb) = (&ds.samples[a], &ds.samples[b]);
                    if sa.emotion == sb.emotion && sa.smiling == sb.smiling {
                        assert_eq!(sa.embedding, sb.embedding);
                        found += 1;
                    }
                }
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn mixing_preserves_latent_distances() {
        let cfg = GenConfig {
            noise_sigma: 0.0,
            ..small()
        };
        let g = generate_with_latents(&cfg).unwrap();
        let x = g.dataset.embeddings();
        for (i, j) in [(0, 1), (0, 7), (5, 100), (33, 170)] {
            let dx = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
            let dl = (&g.latents.row(i) - &g.latents.row(j)).mapv(|v| v * v).sum().sqrt();
            assert!((dx - dl).abs() < 1e-9, "{dx} vs {dl}");
        }
    }

    #[test]
    fn emotion_centroids_well_separated() {
        let cfg = GenConfig::default();
        let ds = generate_dataset(&cfg).unwrap();
        let x = ds.embeddings();
        let mut centroids = Array2::<f64>::zeros((6, cfg.dim));
        let mut counts = [0.0; 6];
        for (row, s) in x.rows().into_iter().zip(&ds.samples) {
            let e = s.emotion.index();
            let mut c = centroids.row_mut(e);
            c += &row;
            counts[e] += 1.0;
        }
        for (mut c, n) in centroids.rows_mut().into_iter().zip(counts) {
            c /= n;
        }
        for a in 0..6 {
            for b in a + 1..6 {
                let d = (&centroids.row(a) - &centroids.row(b)).mapv(|v| v * v).sum().sqrt();
                assert!(d > 4.0 * cfg.noise_sigma, "{a}-{b}: {d}");
            }
        }
    }

    #[test]
    fn smiling_rates_hit_target_correlation() {
        let (a, b) = happy_smiling_rates(0.35, 0.6).unwrap();
        let ph = 1.0 / 6.0;
        let ps = ph * a + (1.0 - ph) * b;
        let phi = (a - b) * (ph * (1.0 - ph) / (ps * (1.0 - ps))).sqrt();
        assert!((ps - 0.35).abs() < 1e-12);
        assert!((phi - 0.6).abs() < 1e-12);
        assert!(happy_smiling_rates(0.05, 0.9).is_err());
        assert_eq!(happy_smiling_rates(0.4, 0.0).unwrap(), (0.4, 0.4));
    }

    #[test]
    fn dimension_constraint_is_config_error() {
        let cfg = GenConfig {
            dim: 70,
            ..GenConfig::default()
        };
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
        let cfg = GenConfig {
            gender_scale: 0.0,
            ..GenConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
