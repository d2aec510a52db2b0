// SPDX-License-Identifier: Apache-2.0

//! An analytically solvable stand-in for a text-conditioned diffusion model.
//!
//! Every concept is a Gaussian `Normal(template, σ²I)` over images, so the
//! Bayes-optimal noise predictor for any condition is closed-form (see
//! [`predict`]). The unconditional model is the prior mixture over the
//! concept library.

mod config;
pub mod patterns;
pub mod predict;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor3};

pub use config::{RegionSource, TemplateSource, WorldConfig};
pub use predict::{analytic_noise_prediction, mixture_noise_prediction, MixtureComponent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptLabel {
    Safe,
    Unsafe,
}

/// A set of `(i, j)` pixel positions on an `H×W` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelRegion {
    height: usize,
    width: usize,
    members: Vec<bool>,
}

impl PixelRegion {
    pub fn from_pixels(
        height: usize,
        width: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut members = vec![false; height * width];
        for (i, j) in pixels {
            if i >= height || j >= width {
                return Err(Error::config(format!(
                    "region pixel ({i}, {j}) outside {height}x{width} grid"
                )));
            }
            members[i * width + j] = true;
        }
        let region = Self {
            height,
            width,
            members,
        };
        if region.count() == 0 {
            return Err(Error::config("region must contain at least one pixel"));
        }
        Ok(region)
    }

    /// Axis-aligned rectangle with top-left `(row, col)`.
    pub fn rect(
        height: usize,
        width: usize,
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || row + rows > height || col + cols > width {
            return Err(Error::config(format!(
                "rectangle at ({row}, {col}) of size {rows}x{cols} does not fit {height}x{width}"
            )));
        }
        Self::from_pixels(
            height,
            width,
            (row..row + rows).flat_map(|i| (col..col + cols).map(move |j| (i, j))),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.height && j < self.width && self.members[i * self.width + j]
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |i| (0..self.width).map(move |j| (i, j)))
            .filter(|&(i, j)| self.contains(i, j))
    }

    pub fn complement(&self) -> Option<Self> {
        let members: Vec<bool> = self.members.iter().map(|m| !m).collect();
        if members.iter().any(|&m| m) {
            Some(Self {
                height: self.height,
                width: self.width,
                members,
            })
        } else {
            None
        }
    }

    /// Whether element `flat` of a tensor with this grid lies in the region.
    #[inline]
    pub fn contains_flat(&self, flat: usize) -> bool {
        self.members[flat % (self.height * self.width)]
    }

    pub fn fits(&self, shape: Shape) -> bool {
        self.height == shape.height && self.width == shape.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTemplate {
    pub id: String,
    pub label: ConceptLabel,
    pub mean_image: Tensor3,
    pub data_std: f64,
    pub region: Option<PixelRegion>,
}

impl ConceptTemplate {
    pub fn new(
        id: impl Into<String>,
        label: ConceptLabel,
        mean_image: Tensor3,
        data_std: f64,
        region: Option<PixelRegion>,
    ) -> Result<Self> {
        let id = id.into();
        if !(data_std >= 0.0 && data_std.is_finite()) {
            return Err(Error::config(format!(
                "concept '{id}': std must be a non-negative real, got {data_std}"
            )));
        }
        if let Some(r) = &region {
            if !r.fits(mean_image.shape()) {
                return Err(Error::config(format!(
                    "concept '{id}': region grid {}x{} does not match template {}",
                    r.height(),
                    r.width(),
                    mean_image.shape()
                )));
            }
        }
        Ok(Self {
            id,
            label,
            mean_image,
            data_std,
            region,
        })
    }
}

/// A prompt of graded harmfulness: the background with an `α`-blend of the
/// unsafe patch over the patch's region.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptScenario {
    pub id: String,
    pub background: String,
    pub unsafe_patch: String,
    pub intensity: f64,
    pub composed_template: Tensor3,
    /// Data spread of the prompt condition (the background's).
    pub data_std: f64,
    pub region: PixelRegion,
}

/// Blends `patch` into `background` with weight `alpha` over `patch.region`.
pub fn compose_scenario(
    id: impl Into<String>,
    background: &ConceptTemplate,
    patch: &ConceptTemplate,
    alpha: f64,
) -> Result<PromptScenario> {
    let id = id.into();
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "scenario '{id}': intensity {alpha} outside [0, 1]"
        )));
    }
    let shape = background.mean_image.shape();
    if patch.mean_image.shape() != shape {
        return Err(Error::config(format!(
            "scenario '{id}': background shape {shape} != patch shape {}",
            patch.mean_image.shape()
        )));
    }
    let region = patch.region.clone().ok_or_else(|| {
        Error::config(format!(
            "scenario '{id}': patch concept '{}' has no region",
            patch.id
        ))
    })?;
    let bg = &background.mean_image;
    let pt = &patch.mean_image;
    let composed = Tensor3::from_fn(shape, |c, i, j| {
        let b = bg.get(c, i, j);
        if region.contains(i, j) {
            b * (1.0 - alpha) + pt.get(c, i, j) * alpha
        } else {
            b
        }
    });
    Ok(PromptScenario {
        id,
        background: background.id.clone(),
        unsafe_patch: patch.id.clone(),
        intensity: alpha,
        composed_template: composed,
        data_std: background.data_std,
        region,
    })
}

/// A Gaussian condition the sampler can query: template mean and data spread.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub template: Tensor3,
    pub data_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    shape: Shape,
    concepts: Vec<ConceptTemplate>,
    prior_weights: Vec<f64>,
    unsafe_set: Vec<usize>,
}

impl WorldModel {
    pub fn new(
        shape: Shape,
        concepts: Vec<ConceptTemplate>,
        prior_weights: Option<Vec<f64>>,
        unsafe_ids: &[&str],
    ) -> Result<Self> {
        shape.validate()?;
        if concepts.is_empty() {
            return Err(Error::config("world needs at least one concept"));
        }
        for (k, c) in concepts.iter().enumerate() {
            if c.mean_image.shape() != shape {
                return Err(Error::config(format!(
                    "concept '{}' template shape {} != world shape {shape}",
                    c.id,
                    c.mean_image.shape()
                )));
            }
            if concepts[..k].iter().any(|o| o.id == c.id) {
                return Err(Error::config(format!("duplicate concept id '{}'", c.id)));
            }
        }
        let n = concepts.len();
        let prior_weights = prior_weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        if prior_weights.len() != n {
            return Err(Error::config(format!(
                "{} prior weights for {n} concepts",
                prior_weights.len()
            )));
        }
        if prior_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::config("prior weights must be positive"));
        }
        let total: f64 = prior_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!(
                "prior weights sum to {total}, expected 1"
            )));
        }
        if unsafe_ids.is_empty() {
            return Err(Error::config("unsafe_set must name at least one concept"));
        }
        let mut unsafe_set = Vec::with_capacity(unsafe_ids.len());
        for id in unsafe_ids {
            let k = concepts
                .iter()
                .position(|c| c.id == *id)
                .ok_or_else(|| Error::config(format!("unsafe_set names unknown concept '{id}'")))?;
            if !unsafe_set.contains(&k) {
                unsafe_set.push(k);
            }
        }
        Ok(Self {
            shape,
            concepts,
            prior_weights,
            unsafe_set,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn concepts(&self) -> &[ConceptTemplate] {
        &self.concepts
    }

    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }

    pub fn concept(&self, id: &str) -> Result<&ConceptTemplate> {
        self.concepts
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::config(format!("unknown concept '{id}'")))
    }

    pub fn unsafe_concepts(&self) -> impl Iterator<Item = &ConceptTemplate> {
        self.unsafe_set.iter().map(|&k| &self.concepts[k])
    }

    pub fn unsafe_ids(&self) -> Vec<String> {
        self.unsafe_concepts().map(|c| c.id.clone()).collect()
    }

    /// Components of the null condition: the prior mixture over the library.
    pub fn null_components(&self) -> Vec<MixtureComponent<'_>> {
        self.concepts
            .iter()
            .zip(&self.prior_weights)
            .map(|(c, &w)| MixtureComponent {
                template: &c.mean_image,
                sigma: c.data_std,
                weight: w,
            })
            .collect()
    }

    pub fn unsafe_conditions(&self) -> Vec<Condition> {
        self.unsafe_concepts()
            .map(|c| Condition {
                template: c.mean_image.clone(),
                data_std: c.data_std,
            })
            .collect()
    }

    /// One condition standing for the whole unsafe set: the average template
    /// with the average spread.
    pub fn combined_unsafe_condition(&self) -> Condition {
        let n = self.unsafe_set.len() as f64;
        let mut acc = Tensor3::zeros(self.shape);
        let mut std = 0.0;
        for c in self.unsafe_concepts() {
            for (a, v) in acc.as_mut_slice().iter_mut().zip(c.mean_image.as_slice()) {
                *a += v;
            }
            std += c.data_std;
        }
        Condition {
            template: acc.scale(1.0 / n),
            data_std: std / n,
        }
    }

    /// Region of the first unsafe concept that has one.
    pub fn unsafe_region(&self) -> Option<&PixelRegion> {
        self.unsafe_concepts().find_map(|c| c.region.as_ref())
    }

    pub fn scenario(&self, id: &str, background: &str, patch: &str, alpha: f64) -> Result<PromptScenario> {
        compose_scenario(id, self.concept(background)?, self.concept(patch)?, alpha)
    }

    /// Scenario over the world's first safe concept and first unsafe concept.
    pub fn default_scenario(&self, alpha: f64) -> Result<PromptScenario> {
        let bg = self
            .concepts
            .iter()
            .find(|c| c.label == ConceptLabel::Safe)
            .ok_or_else(|| Error::config("world has no safe concept to use as background"))?;
        let patch = self
            .unsafe_concepts()
            .next()
            .expect("unsafe_set is non-empty");
        compose_scenario(format!("alpha_{alpha}"), bg, patch, alpha)
    }

    /// The built-in world: a smooth landscape, a blocky cityscape, and an
    /// unsafe textured block confined to a 6×6 region; σ = 0.1 throughout.
    pub fn default_world() -> Self {
        WorldConfig::default_world()
            .build()
            .expect("built-in world is valid")
    }
}
