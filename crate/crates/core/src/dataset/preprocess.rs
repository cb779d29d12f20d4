//! Row image preprocessing: resize each cell, rescale to `[0, 1]`, then
//! standardise per channel. Cell `i` of the row becomes channel `i`.

use std::collections::HashMap;
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::problem::{Cell, Row, RpmProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessProfile {
    pub target_resolution: usize,
    pub channel_means: [f32; 3],
    pub channel_stds: [f32; 3],
    /// Divide raw pixel values by 255 before standardising.
    pub rescale: bool,
}

impl Default for PreprocessProfile {
    fn default() -> Self {
        Self {
            target_resolution: 224,
            channel_means: [0.485, 0.456, 0.406],
            channel_stds: [0.229, 0.224, 0.225],
            rescale: true,
        }
    }
}

impl PreprocessProfile {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            target_resolution: resolution,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_resolution < 8 {
            return Err(Error::invalid(format!(
                "target resolution {} below 8",
                self.target_resolution
            )));
        }
        if self
            .channel_stds
            .iter()
            .any(|&s| s.is_nan() || s <= 0.0 || s.is_infinite())
        {
            return Err(Error::invalid("channel standard deviations must be positive"));
        }
        Ok(())
    }
}

/// Preprocessed row: `3 x R x R` values.
#[derive(Clone, Debug, PartialEq)]
pub struct RowTensor {
    resolution: usize,
    values: Vec<f32>,
}

impl RowTensor {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.resolution * self.resolution;
        &self.values[c * n..(c + 1) * n]
    }

    /// Stack rows into an `N x 3 x R x R` batch.
    pub fn batch(rows: &[RowTensor]) -> Result<Tensor> {
        let r = rows
            .first()
            .map(|t| t.resolution)
            .ok_or_else(|| Error::invalid("empty row batch"))?;
        if rows.iter().any(|t| t.resolution != r) {
            return Err(Error::invalid("row tensors in a batch must share a resolution"));
        }
        let mut data = Vec::with_capacity(rows.len() * 3 * r * r);
        for t in rows {
            data.extend_from_slice(&t.values);
        }
        Ok(Tensor::from_vec(&[rows.len(), 3, r, r], data))
    }
}

fn triangle(x: f32) -> f32 {
    let x = x.abs();
    if x < 1.0 {
        1.0 - x
    } else {
        0.0
    }
}

/// Per-output-pixel tap lists for separable bilinear resampling. When
/// shrinking, the triangle kernel widens with the scale so every source pixel
/// contributes.
fn taps(input: usize, output: usize) -> Vec<(usize, Vec<f32>)> {
    let scale = input as f32 / output as f32;
    let support = scale.max(1.0);
    (0..output)
        .map(|o| {
            let center = (o as f32 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(input);
            let mut w: Vec<f32> = (lo..hi)
                .map(|i| triangle((i as f32 + 0.5 - center) / support))
                .collect();
            let total: f32 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (lo, w)
        })
        .collect()
}

/// Bilinearly resize a cell to `out x out` raw intensities (0..=255 scale).
pub fn resize_cell(cell: &Cell, out: usize) -> Vec<f32> {
    let n = cell.side();
    let px = cell.pixels();
    if n == out {
        return px.iter().map(|&p| p as f32).collect();
    }
    let tx = taps(n, out);
    let mut horiz = vec![0.0f32; n * out];
    for y in 0..n {
        let row = &px[y * n..(y + 1) * n];
        for (ox, (lo, w)) in tx.iter().enumerate() {
            horiz[y * out + ox] = w.iter().enumerate().map(|(i, wi)| wi * row[lo + i] as f32).sum();
        }
    }
    let mut result = vec![0.0f32; out * out];
    for (oy, (lo, w)) in tx.iter().enumerate() {
        for ox in 0..out {
            result[oy * out + ox] = w
                .iter()
                .enumerate()
                .map(|(i, wi)| wi * horiz[(lo + i) * out + ox])
                .sum();
        }
    }
    result
}

/// Resize, rescale and standardise a row.
pub fn preprocess_row(row: &Row<'_>, profile: &PreprocessProfile) -> Result<RowTensor> {
    profile.validate()?;
    let r = profile.target_resolution;
    let mut values = Vec::with_capacity(3 * r * r);
    for (c, cell) in row.cells.iter().enumerate() {
        standardize_into(&resize_cell(cell, r), c, profile, &mut values);
    }
    Ok(RowTensor { resolution: r, values })
}

fn standardize_into(resized: &[f32], channel: usize, profile: &PreprocessProfile, out: &mut Vec<f32>) {
    let mean = profile.channel_means[channel];
    let std = profile.channel_stds[channel];
    let scale = if profile.rescale { 255.0 } else { 1.0 };
    out.extend(resized.iter().map(|v| (v / scale - mean) / std));
}

/// Resized copies of every cell in a problem set, so repeated row sampling
/// during training only pays for standardisation. Rows whose cells are not
/// from the cached problems fall back to a fresh resize; results are
/// bit-identical to [`preprocess_row`].
pub struct ResizeCache<'a> {
    profile: PreprocessProfile,
    cells: HashMap<*const Cell, Vec<f32>>,
    _problems: PhantomData<&'a [RpmProblem]>,
}

// The raw pointers are only used as identity keys and the borrow keeps them valid.
unsafe impl Send for ResizeCache<'_> {}
unsafe impl Sync for ResizeCache<'_> {}

impl<'a> ResizeCache<'a> {
    pub fn build(problems: &'a [RpmProblem], profile: &PreprocessProfile) -> Result<Self> {
        profile.validate()?;
        let r = profile.target_resolution;
        let cells: Vec<&Cell> = problems
            .iter()
            .flat_map(|p| p.context().iter().chain(p.candidates()))
            .collect();
        let resized = crate::exec::map(&cells, |c| resize_cell(c, r));
        Ok(Self {
            profile: profile.clone(),
            cells: cells.into_iter().map(|c| c as *const Cell).zip(resized).collect(),
            _problems: PhantomData,
        })
    }

    pub fn profile(&self) -> &PreprocessProfile {
        &self.profile
    }

    pub fn row(&self, row: &Row<'_>) -> RowTensor {
        let r = self.profile.target_resolution;
        let mut values = Vec::with_capacity(3 * r * r);
        for (c, cell) in row.cells.iter().enumerate() {
            match self.cells.get(&(*cell as *const Cell)) {
                Some(resized) => standardize_into(resized, c, &self.profile, &mut values),
                None => standardize_into(&resize_cell(cell, r), c, &self.profile, &mut values),
            }
        }
        RowTensor { resolution: r, values }
    }

    pub fn rows(&self, rows: &[Row<'_>]) -> Result<Tensor> {
        RowTensor::batch(&crate::exec::map(rows, |r| self.row(r)))
    }
}

/// Preprocess many rows into one batch tensor.
pub fn preprocess_rows(rows: &[Row<'_>], profile: &PreprocessProfile) -> Result<Tensor> {
    let tensors = crate::exec::map(rows, |r| preprocess_row(r, profile));
    let tensors: Vec<RowTensor> = tensors.into_iter().collect::<Result<_>>()?;
    RowTensor::batch(&tensors)
}
