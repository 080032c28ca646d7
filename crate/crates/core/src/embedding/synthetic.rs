//! Deterministic synthetic embedding worlds.
//!
//! Each world plants one latent unit vector `u_i` per recipe step:
//!
//! - status prompts embed as `u_i` rotated by a small fixed angle,
//! - step texts embed as `normalize(alpha * u_i + (1 - alpha) * d)` with a
//!   distractor `d` shared by all steps of the world,
//! - frames of step `i` embed as `normalize(u_i + noise)`, with isotropic
//!   Gaussian noise of per-component standard deviation `sigma`, seeded by the
//!   frame reference so the same frame always embeds the same way.
//!
//! Frames are addressed as `synthetic://{world_id}/{step}/{tag}`; step 0
//! denotes a frame showing no recipe step.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendKind, EmbeddingBackend, EmbeddingVector};
use crate::error::{BackendError, Error, Result};
use crate::frames::{FrameRef, ImageRef, SYNTHETIC_SCHEME};
use crate::recipe::{render_status_prompt, ObjectStatus, Recipe};
use crate::seed::{derive_seed, seed_from_bytes};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_ROTATION_RAD: f64 = 0.2;

const NOUNS: &[&str] = &[
    "carrots", "onions", "mushrooms", "potatoes", "eggs", "tomatoes", "garlic", "peppers", "zucchini",
    "spinach", "chicken", "rice", "noodles", "beans", "broccoli", "celery", "cabbage", "tofu", "shrimp",
    "lentils",
];

const VERBS: &[(&str, &str)] = &[
    ("Chop", "chopped"),
    ("Dice", "diced"),
    ("Slice", "sliced"),
    ("Peel", "peeled"),
    ("Fry", "fried"),
    ("Sauté", "sautéed"),
    ("Boil", "boiled"),
    ("Simmer", "simmered"),
    ("Stir", "stirred"),
    ("Mix", "mixed"),
    ("Whisk", "whisked"),
    ("Crack", "cracked"),
    ("Add", "added"),
    ("Bake", "baked"),
    ("Pour", "poured"),
    ("Wash", "washed"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n_steps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub sigma: f64,
    pub dim: usize,
    pub rotation_rad: f64,
}

impl SyntheticParams {
    pub fn new(n_steps: usize, seed: u64, alpha: f64, sigma: f64) -> Self {
        Self {
            n_steps,
            seed,
            alpha,
            sigma,
            dim: DEFAULT_DIM,
            rotation_rad: DEFAULT_ROTATION_RAD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub id: String,
    pub n_steps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub sigma: f64,
}

/// File form of a set of worlds (`synthetic.json` next to a generated dataset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_rotation")]
    pub rotation_rad: f64,
    pub worlds: Vec<WorldSpec>,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

fn default_rotation() -> f64 {
    DEFAULT_ROTATION_RAD
}

impl SyntheticSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SyntheticSpec =
            serde_json::from_str(&text).map_err(|e| Error::schema(path, Some(e.line()), e.to_string()))?;
        let mut ids: Vec<&str> = spec.worlds.iter().map(|w| w.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::schema(path, None, "duplicate world id"));
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("spec serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn build(&self) -> Result<Vec<SyntheticWorld>> {
        self.worlds
            .iter()
            .map(|w| {
                SyntheticWorld::generate(
                    &w.id,
                    SyntheticParams {
                        n_steps: w.n_steps,
                        seed: w.seed,
                        alpha: w.alpha,
                        sigma: w.sigma,
                        dim: self.dim,
                        rotation_rad: self.rotation_rad,
                    },
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub id: String,
    pub params: SyntheticParams,
    latents: Vec<Vec<f64>>,
    recipe: Recipe,
    step_text_vectors: Vec<EmbeddingVector>,
    status_vectors: Vec<Vec<EmbeddingVector>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit(seed: u64, dim: usize) -> EmbeddingVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingVector::normalized(gaussian(&mut rng, dim)).expect("gaussian vector is non-zero")
}

/// Generates a world with default dimension and rotation.
pub fn synthetic_planted_world(id: &str, n_steps: usize, seed: u64, alpha: f64, sigma: f64) -> SyntheticWorld {
    SyntheticWorld::generate(id, SyntheticParams::new(n_steps, seed, alpha, sigma))
        .expect("default synthetic parameters are valid")
}

/// Frame reference that the synthetic backend embeds as a frame of `step` in `world_id`.
pub fn synthetic_frame_ref(world_id: &str, step: usize, t_s: f64) -> FrameRef {
    FrameRef {
        source_id: world_id.to_string(),
        t_s,
        image: ImageRef::Path(format!("{SYNTHETIC_SCHEME}{world_id}/{step}/t={t_s:.3}")),
        blur_score: None,
    }
}

impl SyntheticWorld {
    pub fn generate(id: &str, params: SyntheticParams) -> Result<Self> {
        if params.n_steps < 1 {
            return Err(Error::InvalidArgument("synthetic world needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&params.alpha) || !(params.sigma >= 0.0) || params.dim < 2 {
            return Err(Error::InvalidArgument(format!("invalid synthetic parameters {params:?}")));
        }
        if id.is_empty() || id.contains('/') {
            return Err(Error::InvalidArgument(format!("invalid world id {id:?}")));
        }
        let dim = params.dim;
        let mut latent_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "latent", 0));
        let latents: Vec<Vec<f64>> = (0..params.n_steps).map(|_| unit(gaussian(&mut latent_rng, dim))).collect();
        let distractor = unit(gaussian(&mut latent_rng, dim));

        let step_text_vectors = latents
            .iter()
            .map(|u| {
                let mixed = u
                    .iter()
                    .zip(&distractor)
                    .map(|(a, b)| params.alpha * a + (1.0 - params.alpha) * b)
                    .collect();
                EmbeddingVector::normalized(mixed).expect("mixture of unit vectors is non-zero")
            })
            .collect();

        // Recipe wording and the number of statuses per step.
        let mut text_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "recipe", 0));
        let mut order: Vec<usize> = (0..NOUNS.len()).collect();
        order.shuffle(&mut text_rng);
        let noun = |k: usize| {
            let base = NOUNS[order[k % NOUNS.len()]];
            match k / NOUNS.len() {
                0 => format!("{id} {base}"),
                batch => format!("{id} {base} batch {batch}"),
            }
        };
        let mut rotation_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "rotation", 0));
        let mut steps = Vec::with_capacity(params.n_steps);
        let mut status_vectors = Vec::with_capacity(params.n_steps);
        for (i, u) in latents.iter().enumerate() {
            let (verb, participle) = VERBS[text_rng.random_range(0..VERBS.len())];
            let object = noun(i);
            let mut statuses = vec![ObjectStatus::new(object.clone(), format!("being {participle}"), i + 1)];
            if text_rng.random_bool(0.5) {
                statuses.push(ObjectStatus::new(noun(params.n_steps + i), "in the pan", i + 1));
            }
            let vectors = statuses
                .iter()
                .map(|_| {
                    let w = gaussian(&mut rotation_rng, dim);
                    let along = dot(&w, u);
                    let w = unit(w.iter().zip(u).map(|(a, b)| a - along * b).collect());
                    let (c, s) = (params.rotation_rad.cos(), params.rotation_rad.sin());
                    EmbeddingVector::normalized(u.iter().zip(&w).map(|(a, b)| c * a + s * b).collect())
                        .expect("rotation of a unit vector is non-zero")
                })
                .collect();
            status_vectors.push(vectors);
            steps.push((format!("{verb} the {object}."), statuses));
        }
        let mut ingredients: Vec<String> = steps
            .iter()
            .flat_map(|(_, st): &(String, Vec<ObjectStatus>)| st.iter().map(|s| s.object.clone()))
            .collect();
        ingredients.sort();
        ingredients.dedup();
        let recipe = Recipe::with_statuses(format!("Synthetic recipe {id}"), ingredients, steps)?;

        Ok(Self {
            id: id.to_string(),
            params,
            latents,
            recipe,
            step_text_vectors,
            status_vectors,
        })
    }

    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    pub fn latent(&self, step: usize) -> &[f64] {
        &self.latents[step - 1]
    }

    pub fn step_text_vector(&self, step: usize) -> &EmbeddingVector {
        &self.step_text_vectors[step - 1]
    }

    pub fn status_vectors(&self, step: usize) -> &[EmbeddingVector] {
        &self.status_vectors[step - 1]
    }

    pub fn frame_ref(&self, step: usize, t_s: f64) -> FrameRef {
        synthetic_frame_ref(&self.id, step, t_s)
    }

    /// Embedding of a frame of `step` (0 for none), with noise seeded by `tag`.
    pub fn frame_embedding(&self, step: usize, tag: &str) -> Result<EmbeddingVector> {
        if step > self.params.n_steps {
            return Err(BackendError::new(format!(
                "synthetic frame refers to step {step} of {} in world {}",
                self.params.n_steps, self.id
            ))
            .into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.params.seed, tag, step as u64));
        let noise = gaussian(&mut rng, self.params.dim);
        let values = match step {
            0 => noise,
            s => self.latents[s - 1]
                .iter()
                .zip(noise)
                .map(|(u, n)| u + self.params.sigma * n)
                .collect(),
        };
        EmbeddingVector::normalized(values)
    }

    fn texts(&self) -> impl Iterator<Item = (String, &EmbeddingVector)> + '_ {
        self.recipe.steps.iter().flat_map(move |step| {
            let text = std::iter::once((step.text.clone(), &self.step_text_vectors[step.index - 1]));
            let statuses = step
                .statuses
                .iter()
                .zip(&self.status_vectors[step.index - 1])
                .map(|(s, v)| (render_status_prompt(s), v));
            text.chain(statuses)
        })
    }
}

/// Backend serving a fixed set of synthetic worlds. Texts that no world
/// defines, and real images, embed as deterministic random directions.
pub struct SyntheticBackend {
    dim: usize,
    worlds: HashMap<String, SyntheticWorld>,
    texts: HashMap<String, EmbeddingVector>,
}

impl SyntheticBackend {
    pub fn new(worlds: Vec<SyntheticWorld>) -> Self {
        let dim = worlds.first().map(|w| w.params.dim).unwrap_or(DEFAULT_DIM);
        let mut texts = HashMap::new();
        for w in &worlds {
            assert_eq!(w.params.dim, dim, "all synthetic worlds must share one dimension");
            for (text, v) in w.texts() {
                texts.entry(text).or_insert_with(|| v.clone());
            }
        }
        Self {
            dim,
            worlds: worlds.into_iter().map(|w| (w.id.clone(), w)).collect(),
            texts,
        }
    }

    pub fn world(&self, id: &str) -> Option<&SyntheticWorld> {
        self.worlds.get(id)
    }

    fn embed_frame(&self, frame: &FrameRef) -> Result<EmbeddingVector> {
        match &frame.image {
            ImageRef::Path(p) if p.starts_with(SYNTHETIC_SCHEME) => {
                let rest = &p[SYNTHETIC_SCHEME.len()..];
                let mut parts = rest.splitn(3, '/');
                let (world, step) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
                let world = self
                    .worlds
                    .get(world)
                    .ok_or_else(|| BackendError::new(format!("unknown synthetic world in {p}")))?;
                let step: usize = step
                    .parse()
                    .map_err(|_| BackendError::new(format!("malformed synthetic frame reference {p}")))?;
                world.frame_embedding(step, p)
            }
            other => {
                let (bytes, _) = other.load_bytes()?;
                Ok(random_unit(seed_from_bytes(&bytes), self.dim))
            }
        }
    }
}

impl EmbeddingBackend for SyntheticBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Synthetic,
            endpoint: None,
            dim: self.dim,
            model_label: "synthetic".into(),
        }
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::InvalidArgument("no texts to embed".into()));
        }
        Ok(texts
            .iter()
            .map(|t| {
                self.texts
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| random_unit(derive_seed(0, &format!("text:{t}"), 0), self.dim))
            })
            .collect())
    }

    fn embed_images(&self, frames: &[FrameRef]) -> Result<Vec<EmbeddingVector>> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("no frames to embed".into()));
        }
        frames.iter().map(|f| self.embed_frame(f)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine_similarity;

    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if *x > v[best] {
                best = i;
            }
        }
        best + 1
    }

    #[test]
    fn same_seed_same_world() {
        let a = synthetic_planted_world("w", 5, 9, 0.5, 0.3);
        let b = synthetic_planted_world("w", 5, 9, 0.5, 0.3);
        assert_eq!(a.recipe(), b.recipe());
        assert_eq!(a.latents, b.latents);
        assert_eq!(a.frame_embedding(2, "x").unwrap(), b.frame_embedding(2, "x").unwrap());
        let c = synthetic_planted_world("w", 5, 10, 0.5, 0.3);
        assert_ne!(a.latents, c.latents);
    }

    #[test]
    fn recipe_is_valid_with_statuses() {
        let w = synthetic_planted_world("w", 8, 3, 0.5, 0.3);
        let r = w.recipe();
        assert_eq!(r.n_steps(), 8);
        assert!(r.steps.iter().all(|s| !s.statuses.is_empty() && s.statuses.len() <= 2));
        let mut texts: Vec<_> = w.texts().map(|(t, _)| t).collect();
        let n = texts.len();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), n, "world texts must be unique");
    }

    #[test]
    fn status_vectors_are_rotated_latents() {
        let w = synthetic_planted_world("w", 4, 3, 0.5, 0.3);
        for step in 1..=4 {
            let u = EmbeddingVector::normalized(w.latent(step).to_vec()).unwrap();
            for s in w.status_vectors(step) {
                let c = cosine_similarity(&u, s).unwrap();
                assert!((c - DEFAULT_ROTATION_RAD.cos()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn all_vectors_unit_norm() {
        let w = synthetic_planted_world("w", 6, 1, 0.3, 2.0);
        let b = SyntheticBackend::new(vec![w.clone()]);
        let texts: Vec<String> = w.texts().map(|(t, _)| t).chain(["unknown".to_string()]).collect();
        for v in b.embed_texts(&texts).unwrap() {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
        let frames: Vec<FrameRef> = (0..=6).map(|s| w.frame_ref(s, s as f64)).collect();
        for v in b.embed_images(&frames).unwrap() {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_limit_ranks_true_step_first() {
        let w = synthetic_planted_world("w", 8, 5, 1.0, 0.0);
        let b = SyntheticBackend::new(vec![w.clone()]);
        let step_texts: Vec<String> = w.recipe().steps.iter().map(|s| s.text.clone()).collect();
        let tv = b.embed_texts(&step_texts).unwrap();
        for step in 1..=8 {
            let f = b.embed_images(&[w.frame_ref(step, 1.0)]).unwrap().remove(0);
            let base: Vec<f64> = tv.iter().map(|t| cosine_similarity(&f, t).unwrap()).collect();
            assert_eq!(argmax(&base), step);
            let status: Vec<f64> = (1..=8)
                .map(|n| {
                    w.status_vectors(n)
                        .iter()
                        .map(|s| cosine_similarity(&f, s).unwrap())
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            assert_eq!(argmax(&status), step);
        }
    }

    #[test]
    fn same_frame_twice_identical() {
        let w = synthetic_planted_world("w", 3, 5, 0.5, 1.0);
        let b = SyntheticBackend::new(vec![w.clone()]);
        let f = w.frame_ref(2, 4.0);
        let out = b.embed_images(&[f.clone(), f]).unwrap();
        assert_eq!(out[0], out[1]);
        assert!(b.embed_images(&[]).is_err());
        let bad = synthetic_frame_ref("nope", 1, 0.0);
        assert!(matches!(b.embed_images(&[bad]), Err(Error::Backend(_))));
    }

    #[test]
    fn spec_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            dim: 16,
            rotation_rad: 0.1,
            worlds: vec![WorldSpec {
                id: "a".into(),
                n_steps: 3,
                seed: 1,
                alpha: 0.5,
                sigma: 1.0,
            }],
        };
        let path = dir.path().join("synthetic.json");
        spec.save(&path).unwrap();
        assert_eq!(SyntheticSpec::load(&path).unwrap(), spec);
        assert_eq!(spec.build().unwrap()[0].params.dim, 16);
    }
}
