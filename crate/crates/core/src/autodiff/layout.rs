use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvFilter,
    FcRow,
    Bias,
    Batchnorm,
}

impl ParamKind {
    /// Kinds whose leading tensor axis is split into one group per filter/row.
    pub fn is_filter(self) -> bool {
        matches!(self, ParamKind::ConvFilter | ParamKind::FcRow)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub count: usize,
    pub kind: ParamKind,
    pub filter_shape: Vec<usize>,
}

impl ParamGroup {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.count
    }
}

/// Ordered, contiguous partition of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    groups: Vec<ParamGroup>,
}

impl ParamLayout {
    pub fn new(groups: Vec<ParamGroup>) -> Result<Self> {
        let mut next = 0;
        for g in &groups {
            if g.offset != next {
                return Err(Error::Layout(format!(
                    "group `{}` starts at {} but previous groups end at {next}",
                    g.name, g.offset
                )));
            }
            if g.kind.is_filter() && g.filter_shape.iter().product::<usize>() != g.count {
                return Err(Error::Layout(format!(
                    "group `{}` has count {} but filter shape {:?}",
                    g.name, g.count, g.filter_shape
                )));
            }
            next += g.count;
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn total_count(&self) -> usize {
        self.groups.last().map_or(0, |g| g.offset + g.count)
    }

    pub fn count_kind(&self, kind: ParamKind) -> usize {
        self.groups.iter().filter(|g| g.kind == kind).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ParamLayout = serde_json::from_str(s)?;
        Self::new(raw.groups)
    }
}

fn same_layout(a: &Arc<ParamLayout>, b: &Arc<ParamLayout>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

macro_rules! flat_vector {
    ($name:ident) => {
        impl $name {
            pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
                if values.len() != layout.total_count() {
                    return Err(Error::Layout(format!(
                        "{} values for a layout of {} parameters",
                        values.len(),
                        layout.total_count()
                    )));
                }
                Ok(Self { values, layout })
            }

            pub fn zeros(layout: Arc<ParamLayout>) -> Self {
                Self {
                    values: vec![0.0; layout.total_count()],
                    layout,
                }
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }

            pub fn layout(&self) -> &Arc<ParamLayout> {
                &self.layout
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn norm(&self) -> f64 {
                crate::linalg::norm(&self.values)
            }

            pub fn ensure_layout(&self, layout: &Arc<ParamLayout>) -> Result<()> {
                if same_layout(&self.layout, layout) {
                    Ok(())
                } else {
                    Err(Error::Layout(format!(
                        "{} differs from the expected layout",
                        stringify!($name)
                    )))
                }
            }
        }
    };
}

/// Model parameters: a flat vector plus the layout describing its groups.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatParams {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

/// A displacement in weight space sharing a model's layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

flat_vector!(FlatParams);
flat_vector!(Direction);

impl From<FlatParams> for Direction {
    fn from(p: FlatParams) -> Self {
        Direction {
            values: p.values,
            layout: p.layout,
        }
    }
}

impl From<Direction> for FlatParams {
    fn from(d: Direction) -> Self {
        FlatParams {
            values: d.values,
            layout: d.layout,
        }
    }
}

impl FlatParams {
    /// `self + Σ cᵢ·dᵢ`, evaluated left to right per entry.
    pub fn displaced(&self, steps: &[(f64, &Direction)]) -> Result<FlatParams> {
        for (_, d) in steps {
            d.ensure_layout(&self.layout)?;
        }
        let mut out = self.values.clone();
        for (i, v) in out.iter_mut().enumerate() {
            for (c, d) in steps {
                *v += c * d.values[i];
            }
        }
        Ok(FlatParams {
            values: out,
            layout: self.layout.clone(),
        })
    }

    /// `self - other` as a direction.
    pub fn difference(&self, other: &FlatParams) -> Result<Direction> {
        other.ensure_layout(&self.layout)?;
        Ok(Direction {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            layout: self.layout.clone(),
        })
    }
}

impl Direction {
    pub fn dot(&self, other: &Direction) -> f64 {
        crate::linalg::dot(&self.values, &other.values)
    }

    pub fn scaled(&self, c: f64) -> Direction {
        Direction {
            values: self.values.iter().map(|v| v * c).collect(),
            layout: self.layout.clone(),
        }
    }
}
