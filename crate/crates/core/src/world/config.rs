// SPDX-License-Identifier: Apache-2.0

//! TOML world definitions.
//!
//! ```toml
//! shape = [3, 16, 16]
//! unsafe_set = ["unsafe"]
//! # priors = [0.25, 0.25, 0.5]     # optional, uniform by default
//!
//! [[concepts]]
//! id = "landscape"
//! label = "safe"
//! std = 0.1
//! template_source = { pattern = "gradient", axis = "vertical", from = -0.6, to = 0.6 }
//!
//! [[concepts]]
//! id = "unsafe"
//! label = "unsafe"
//! std = 0.1
//! region = { rect = [2, 4, 6, 6] }   # or { pixels = [[i, j], ...] }
//! template_source = { pattern = "block", rect = [2, 4, 6, 6], high = 0.95, low = 0.55 }
//! ```
//!
//! A `block` template without an explicit `region` uses its rectangle.

use serde::{Deserialize, Serialize};

use super::patterns::{self, Axis};
use super::{ConceptLabel, ConceptTemplate, PixelRegion, WorldModel};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub shape: [usize; 3],
    pub concepts: Vec<ConceptConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<f64>>,
    pub unsafe_set: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptConfig {
    pub id: String,
    pub label: ConceptLabel,
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSource>,
    pub template_source: TemplateSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionSource {
    Rect { rect: [usize; 4] },
    Pixels { pixels: Vec<[usize; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemplateSource {
    /// Flat `C·H·W` values, channel-major then row-major.
    Inline { values: Vec<f64> },
    Gradient {
        axis: Axis,
        from: f64,
        to: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        channel_offsets: Vec<f64>,
    },
    Block {
        rect: [usize; 4],
        high: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        low: Option<f64>,
        #[serde(default)]
        outside: f64,
        /// Pattern drawn outside the rectangle in place of `outside`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        background: Option<Box<TemplateSource>>,
    },
    Checker { cell: usize, high: f64, low: f64 },
}

impl TemplateSource {
    fn render(&self, shape: Shape) -> Result<Tensor3> {
        Ok(match self {
            TemplateSource::Inline { values } => Tensor3::new(shape, values.clone())
                .map_err(|e| Error::config(format!("inline template: {e}")))?,
            TemplateSource::Gradient {
                axis,
                from,
                to,
                channel_offsets,
            } => patterns::gradient(shape, *axis, *from, *to, channel_offsets),
            TemplateSource::Block {
                rect,
                high,
                low,
                outside,
                background,
            } => {
                let r = PixelRegion::rect(shape.height, shape.width, rect[0], rect[1], rect[2], rect[3])?;
                let block = patterns::block(shape, *rect, *high, low.unwrap_or(*high), *outside);
                match background {
                    None => block,
                    Some(_) if *outside != 0.0 => {
                        return Err(Error::config("block: set either `outside` or `background`, not both"))
                    }
                    Some(bg) => {
                        let bg = bg.render(shape)?;
                        let hw = shape.height * shape.width;
                        let values = (0..block.len())
                            .map(|f| if r.contains_flat(f % hw) { block.as_slice()[f] } else { bg.as_slice()[f] })
                            .collect();
                        Tensor3::new(shape, values)?
                    }
                }
            }
            TemplateSource::Checker { cell, high, low } => {
                if *cell == 0 {
                    return Err(Error::config("checker cell size must be positive"));
                }
                patterns::checker(shape, *cell, *high, *low)
            }
        })
    }
}

impl RegionSource {
    fn build(&self, shape: Shape) -> Result<PixelRegion> {
        match self {
            RegionSource::Rect { rect } => {
                PixelRegion::rect(shape.height, shape.width, rect[0], rect[1], rect[2], rect[3])
            }
            RegionSource::Pixels { pixels } => PixelRegion::from_pixels(
                shape.height,
                shape.width,
                pixels.iter().map(|p| (p[0], p[1])),
            ),
        }
    }
}

impl WorldConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("world config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world config serializes")
    }

    pub fn build(&self) -> Result<WorldModel> {
        let [c, h, w] = self.shape;
        let shape = Shape::new(c, h, w);
        shape.validate()?;
        let mut concepts = Vec::with_capacity(self.concepts.len());
        for cc in &self.concepts {
            let ctx = |e: Error| Error::config(format!("concept '{}': {}", cc.id, e.root()));
            let template = cc.template_source.render(shape).map_err(ctx)?;
            let region = match (&cc.region, &cc.template_source) {
                (Some(r), _) => Some(r.build(shape).map_err(ctx)?),
                (None, TemplateSource::Block { rect, .. }) => Some(
                    RegionSource::Rect { rect: *rect }
                        .build(shape)
                        .map_err(ctx)?,
                ),
                (None, _) => None,
            };
            concepts.push(ConceptTemplate::new(
                cc.id.clone(),
                cc.label,
                template,
                cc.std,
                region,
            )?);
        }
        let ids: Vec<&str> = self.unsafe_set.iter().map(String::as_str).collect();
        WorldModel::new(shape, concepts, self.priors.clone(), &ids)
    }

    /// The built-in default world (also shipped as `configs/world_default.toml`).
    pub fn default_world() -> Self {
        let rect = [2, 4, 6, 6];
        WorldConfig {
            shape: [3, 16, 16],
            concepts: vec![
                ConceptConfig {
                    id: "landscape".into(),
                    label: ConceptLabel::Safe,
                    std: 0.1,
                    region: None,
                    template_source: TemplateSource::Gradient {
                        axis: Axis::Vertical,
                        from: -0.3,
                        to: 0.3,
                        channel_offsets: vec![0.05, 0.0, -0.05],
                    },
                },
                ConceptConfig {
                    id: "cityscape".into(),
                    label: ConceptLabel::Safe,
                    std: 0.1,
                    region: None,
                    template_source: TemplateSource::Checker {
                        cell: 4,
                        high: 0.2,
                        low: -0.2,
                    },
                },
                ConceptConfig {
                    id: "unsafe".into(),
                    label: ConceptLabel::Unsafe,
                    std: 0.1,
                    region: Some(RegionSource::Rect { rect }),
                    template_source: TemplateSource::Block {
                        rect,
                        high: 0.475,
                        low: Some(0.275),
                        outside: 0.0,
                        // a washed-out landscape behind the unsafe patch
                        background: Some(Box::new(TemplateSource::Gradient {
                            axis: Axis::Vertical,
                            from: -0.15,
                            to: 0.15,
                            channel_offsets: vec![0.025, 0.0, -0.025],
                        })),
                    },
                },
            ],
            priors: None,
            unsafe_set: vec!["unsafe".into()],
        }
    }
}
