//! Balanced (equal-frequency) binning with a per-feature width cap.
//!
//! Fitting happens in two passes. Quantile cuts first split the sorted sample
//! into bins of (nearly) equal occupancy; any bin still wider than the cap is
//! then bisected at its midpoint, recursively, until every width fits. Bins are
//! half-open `[start, end)`, and the top edge is nudged just past the largest
//! fitted value so that value lands inside the last bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Upper bound on the number of bins a single fit may produce.
pub const MAX_BINS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct BinSpec<T> {
    pub feature_name: String,
    pub edges: Vec<T>,
    pub width_cap: T,
    /// Per-bin training occupancy.
    pub counts: Vec<u64>,
    /// Bin count requested from the quantile pass.
    pub target_bins: usize,
    /// Number of midpoint bisections performed by the width-cap pass.
    pub splits: usize,
}

impl<T: Scalar> BinSpec<T> {
    /// Builds a spec from explicit edges, with zero counts.
    pub fn from_edges(feature_name: impl Into<String>, edges: Vec<T>, width_cap: T) -> Result<Self> {
        let spec = BinSpec {
            feature_name: feature_name.into(),
            counts: vec![0; edges.len().saturating_sub(1)],
            target_bins: edges.len().saturating_sub(1),
            splits: 0,
            edges,
            width_cap,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::invalid(format!(
                "{}: need at least 2 edges, got {}",
                self.feature_name,
                self.edges.len()
            )));
        }
        if self.edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid(format!("{}: non-finite edge", self.feature_name)));
        }
        if let Some(w) = self.edges.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "{}: edges not strictly increasing at {} -> {}",
                self.feature_name, w[0], w[1]
            )));
        }
        if !(self.width_cap > T::zero()) {
            return Err(Error::invalid(format!("{}: width_cap must be positive", self.feature_name)));
        }
        if self.counts.len() != self.len() {
            return Err(Error::invalid(format!(
                "{}: {} counts for {} bins",
                self.feature_name,
                self.counts.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Number of bins.
    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.edges.len() < 2
    }

    pub fn lower(&self) -> T {
        self.edges[0]
    }

    pub fn upper(&self) -> T {
        self.edges[self.edges.len() - 1]
    }

    /// Returns the bin containing `x`, or `None` when `x` is outside `[lower, upper)`.
    pub fn locate(&self, x: T) -> Result<Option<usize>> {
        if x.is_nan() {
            return Err(Error::invalid(format!("{}: cannot locate NaN", self.feature_name)));
        }
        if x < self.lower() || x >= self.upper() {
            return Ok(None);
        }
        let above = self.edges.partition_point(|&e| e <= x);
        Ok(Some(above - 1))
    }

    /// Like [`locate`](Self::locate) but out-of-support is an error.
    pub fn locate_in_support(&self, x: T) -> Result<usize> {
        self.locate(x)?.ok_or_else(|| Error::OutOfSupport {
            feature: self.feature_name.clone(),
            value: x.as_f64(),
            lo: self.lower().as_f64(),
            hi: self.upper().as_f64(),
        })
    }

    pub fn bin_width(&self, i: usize) -> Result<T> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        Ok(self.edges[i + 1] - self.edges[i])
    }

    pub fn widths(&self) -> Vec<T> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn centers(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.edges.windows(2).map(|w| w[0] + half * (w[1] - w[0])).collect()
    }

    pub fn max_width(&self) -> T {
        self.widths().into_iter().fold(T::zero(), T::max)
    }

    /// Converts edges and cap to another scalar type.
    pub fn cast<U: Scalar>(&self) -> BinSpec<U> {
        BinSpec {
            feature_name: self.feature_name.clone(),
            edges: self.edges.iter().map(|&e| U::lit(e.as_f64())).collect(),
            width_cap: U::lit(self.width_cap.as_f64()),
            counts: self.counts.clone(),
            target_bins: self.target_bins,
            splits: self.splits,
        }
    }
}

/// Smallest offset that moves `x` strictly upward with some headroom.
fn top_epsilon<T: Scalar>(x: T) -> T {
    x.abs().max(T::one()) * T::epsilon() * T::lit(64.0)
}

/// Fits equal-frequency bins to `values`, then enforces `width_cap`.
pub fn fit_balanced<T: Scalar>(
    feature_name: &str,
    values: &[T],
    target_bins: usize,
    width_cap: T,
) -> Result<BinSpec<T>> {
    if values.is_empty() {
        return Err(Error::invalid(format!("{feature_name}: cannot fit bins to an empty sample")));
    }
    if target_bins == 0 {
        return Err(Error::invalid(format!("{feature_name}: target_bins must be >= 1")));
    }
    if !(width_cap > T::zero()) || !width_cap.is_finite() {
        return Err(Error::invalid(format!("{feature_name}: width_cap must be a positive finite number")));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{feature_name}: non-finite value {bad}")));
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let min = sorted[0];
    let max = sorted[n - 1];

    let mut edges = vec![min];
    for j in 1..target_bins {
        let cut = j * n / target_bins;
        if cut == 0 || cut >= n {
            continue;
        }
        // First value strictly greater than the quantile point, so ties stay together.
        let q = sorted[cut - 1];
        let k = cut + sorted[cut..].partition_point(|&v| v <= q);
        if k < n {
            let edge = sorted[k];
            if edge > *edges.last().expect("non-empty") {
                edges.push(edge);
            }
        }
    }
    let top = max + top_epsilon(max);
    if top <= max {
        return Err(Error::invalid(format!("{feature_name}: cannot extend top edge past {max}")));
    }
    edges.push(top);

    let (edges, splits) = split_wide_bins(feature_name, &edges, width_cap)?;

    let mut spec = BinSpec {
        feature_name: feature_name.to_string(),
        counts: vec![0; edges.len() - 1],
        edges,
        width_cap,
        target_bins,
        splits,
    };
    for &v in &sorted {
        let i = spec.locate(v)?.expect("fitted values lie inside the support");
        spec.counts[i] += 1;
    }
    Ok(spec)
}

fn split_wide_bins<T: Scalar>(feature_name: &str, edges: &[T], width_cap: T) -> Result<(Vec<T>, usize)> {
    let mut out = vec![edges[0]];
    let mut splits = 0;
    for w in edges.windows(2) {
        bisect_into(feature_name, w[0], w[1], width_cap, &mut out, &mut splits)?;
        if out.len() > MAX_BINS + 1 {
            return Err(Error::invalid(format!(
                "{feature_name}: width_cap {width_cap} would need more than {MAX_BINS} bins"
            )));
        }
    }
    Ok((out, splits))
}

fn bisect_into<T: Scalar>(
    feature_name: &str,
    lo: T,
    hi: T,
    width_cap: T,
    out: &mut Vec<T>,
    splits: &mut usize,
) -> Result<()> {
    if hi - lo <= width_cap {
        out.push(hi);
        return Ok(());
    }
    let mid = lo + (hi - lo) * T::lit(0.5);
    if !(mid > lo && mid < hi) {
        return Err(Error::invalid(format!(
            "{feature_name}: width_cap {width_cap} is below the representable split resolution near {lo}"
        )));
    }
    if out.len() > MAX_BINS {
        return Err(Error::invalid(format!(
            "{feature_name}: width_cap {width_cap} would need more than {MAX_BINS} bins"
        )));
    }
    *splits += 1;
    bisect_into(feature_name, lo, mid, width_cap, out, splits)?;
    bisect_into(feature_name, mid, hi, width_cap, out, splits)
}
