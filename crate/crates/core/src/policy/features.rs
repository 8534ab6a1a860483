//! Policy input features: ordered, named row segments and their
//! standardization.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Past outputs `y_{t-P+1} .. y_t`.
    PastOutputs,
    /// Lower output bounds over the horizon.
    LowerBounds,
    /// Upper output bounds over the horizon.
    UpperBounds,
    /// Disturbance forecast over the horizon.
    Disturbances,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureLayout {
    pub segments: Vec<Segment>,
}

impl FeatureLayout {
    /// `[past outputs; lower bounds; disturbances]`.
    pub fn standard(n_y: usize, n_d: usize, past: usize, horizon: usize) -> Self {
        Self::from_kinds(
            &[
                SegmentKind::PastOutputs,
                SegmentKind::LowerBounds,
                SegmentKind::Disturbances,
            ],
            n_y,
            n_d,
            past,
            horizon,
        )
    }

    pub fn from_kinds(
        kinds: &[SegmentKind],
        n_y: usize,
        n_d: usize,
        past: usize,
        horizon: usize,
    ) -> Self {
        let segments = kinds
            .iter()
            .map(|&kind| {
                let (name, rows) = match kind {
                    SegmentKind::PastOutputs => ("past_outputs", past * n_y),
                    SegmentKind::LowerBounds => ("lower_bounds", horizon * n_y),
                    SegmentKind::UpperBounds => ("upper_bounds", horizon * n_y),
                    SegmentKind::Disturbances => ("disturbances", horizon * n_d),
                };
                Segment {
                    name: name.to_string(),
                    kind,
                    rows,
                }
            })
            .collect();
        Self { segments }
    }

    pub fn rows(&self) -> usize {
        self.segments.iter().map(|s| s.rows).sum()
    }

    /// Row offset of each segment.
    pub fn offsets(&self) -> Vec<usize> {
        self.segments
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.rows;
                Some(o)
            })
            .collect()
    }
}

/// Raw feature sources; only those named by the layout are required.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureInputs {
    pub past_outputs: Option<Var>,
    pub lower_bounds: Option<Var>,
    pub upper_bounds: Option<Var>,
    pub disturbances: Option<Var>,
}

/// Row-concatenate the sources in layout order.
pub fn assemble_features(
    g: &mut Graph,
    inputs: &FeatureInputs,
    layout: &FeatureLayout,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(layout.segments.len());
    for seg in &layout.segments {
        let v = match seg.kind {
            SegmentKind::PastOutputs => inputs.past_outputs,
            SegmentKind::LowerBounds => inputs.lower_bounds,
            SegmentKind::UpperBounds => inputs.upper_bounds,
            SegmentKind::Disturbances => inputs.disturbances,
        }
        .ok_or_else(|| Error::Dimension(format!("feature segment `{}` has no source", seg.name)))?;
        let rows = g.shape(v).0;
        if rows != seg.rows {
            return Err(Error::Dimension(format!(
                "feature segment `{}` expects {} rows, got {rows}",
                seg.name, seg.rows
            )));
        }
        parts.push(v);
    }
    if parts.is_empty() {
        return Err(Error::Dimension("feature layout is empty".into()));
    }
    g.concat_rows(&parts)
}

/// Per-row `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(rows: usize) -> Self {
        Self {
            mean: vec![0.0; rows],
            std: vec![1.0; rows],
        }
    }

    /// Statistics over the columns of `x`; near-constant rows keep unit scale.
    pub fn fit(x: &Tensor) -> Self {
        let n = x.cols() as f64;
        let mut mean = Vec::with_capacity(x.rows());
        let mut std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row_values(r);
            let m = row.iter().sum::<f64>() / n;
            let v = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(if v.sqrt() > 1e-6 { v.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn rows(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.shape(x).0 != self.rows() {
            return Err(Error::Dimension(format!(
                "standardizer has {} rows, features have {}",
                self.rows(),
                g.shape(x).0
            )));
        }
        let m = g.constant(Tensor::column(&self.mean));
        let inv = g.constant(Tensor::column(
            &self.std.iter().map(|s| 1.0 / s).collect::<Vec<_>>(),
        ));
        let c = g.sub(x, m)?;
        g.hadamard(c, inv)
    }
}
