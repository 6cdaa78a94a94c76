use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::table::{EditKind, EditTable};
use crate::cflow::ConditionalFlow;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::synthworld::WorldSpec;

/// Whether the flow re-encodes the whole state after each edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    /// Keep the previous prior codes.
    Fast,
    /// Re-encode every row with the new attributes.
    Accurate,
}

/// `V1` writes the edited code to every row; `V2` only to the edit's rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "v1", alias = "V1")]
    V1,
    #[serde(rename = "v2", alias = "V2")]
    V2,
}

impl FromStr for EditMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(EditMode::Fast),
            "accurate" => Ok(EditMode::Accurate),
            _ => Err(Error::config(format!("unknown edit mode {s:?} (expected fast or accurate)"))),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            _ => Err(Error::config(format!("unknown variant {s:?} (expected v1 or v2)"))),
        }
    }
}

impl fmt::Display for EditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditMode::Fast => "fast",
            EditMode::Accurate => "accurate",
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
        })
    }
}

/// A resolved edit: which rows to write and which channels to overwrite.
#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub kind: EditKind,
    /// `(channel index, absolute target value)`.
    pub targets: Vec<(usize, f64)>,
    pub mode: EditMode,
    pub variant: Variant,
}

impl EditRequest {
    /// Pairs `values` with the edit's channels in order. A single value for
    /// a multi-channel edit sets only the first channel.
    pub fn new(kind: &EditKind, channel_names: &[String], values: &[f64], mode: EditMode, variant: Variant) -> Result<Self> {
        let channels = kind.resolve_channels(channel_names)?;
        if values.is_empty() || values.len() > channels.len() {
            return Err(Error::config(format!(
                "edit {:?} takes 1 to {} values, got {}",
                kind.name,
                channels.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite edit target {v}")));
        }
        Ok(EditRequest { kind: kind.clone(), targets: channels.into_iter().zip(values.iter().copied()).collect(), mode, variant })
    }

    /// `a_current` with the targeted channels overwritten.
    pub fn target_attributes(&self, a_current: &[f64]) -> Result<Vec<f64>> {
        let mut a = a_current.to_vec();
        for &(c, v) in &self.targets {
            *a.get_mut(c).ok_or_else(|| Error::shape(format!("edit targets channel {c} of {}", a_current.len())))? = v;
        }
        Ok(a)
    }

    /// Rows this request writes in a state of `n_rows` rows.
    pub fn written_rows(&self, n_rows: usize) -> Vec<usize> {
        match self.variant {
            Variant::V1 => (0..n_rows).collect(),
            Variant::V2 => self.kind.rows.clone(),
        }
    }
}

/// Anything that can measure attributes of a latent code.
pub trait AttributeOracle {
    fn attributes(&self, w: &[f64]) -> Result<Vec<f64>>;
}

impl AttributeOracle for WorldSpec {
    fn attributes(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.attribute_fn(w)
    }
}

/// How an extended latent is collapsed for attribute measurement.
#[derive(Debug, Clone, PartialEq)]
pub enum Readout {
    /// Measure the mean of all rows.
    MeanRows,
    /// Measure a weighted mean of rows; weights are normalized.
    Weighted(Vec<f64>),
    /// Channel `k` is measured on the mean of its own row set.
    PerChannel(Vec<Vec<usize>>),
}

impl Readout {
    /// Per-channel readout using the rows each channel is edited through.
    pub fn per_channel(table: &EditTable, channel_names: &[String], n_rows: usize) -> Self {
        Readout::PerChannel(table.channel_rows(channel_names, n_rows))
    }

    pub fn measure(&self, oracle: &dyn AttributeOracle, state: &DenseMatrix) -> Result<Vec<f64>> {
        let k = state.rows();
        match self {
            Readout::MeanRows => oracle.attributes(&weighted_rows(state, &vec![1.0; k])?),
            Readout::Weighted(w) => oracle.attributes(&weighted_rows(state, w)?),
            Readout::PerChannel(sets) => {
                let mut out = Vec::with_capacity(sets.len());
                for (c, rows) in sets.iter().enumerate() {
                    let mut w = vec![0.0; k];
                    for &r in rows {
                        *w.get_mut(r).ok_or_else(|| Error::config(format!("readout row {r} outside {k} rows")))? = 1.0;
                    }
                    let a = oracle.attributes(&weighted_rows(state, &w)?)?;
                    out.push(*a.get(c).ok_or_else(|| Error::shape("readout has more channels than the oracle"))?);
                }
                Ok(out)
            }
        }
    }
}

fn weighted_rows(state: &DenseMatrix, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != state.rows() {
        return Err(Error::shape(format!("{} readout weights for {} rows", weights.len(), state.rows())));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::config("readout weights must be non-negative with a positive sum"));
    }
    let mut out = vec![0.0; state.cols()];
    for (r, w) in weights.iter().enumerate() {
        if *w != 0.0 {
            for (o, x) in out.iter_mut().zip(state.row(r)) {
                *o += w * x / total;
            }
        }
    }
    Ok(out)
}

/// `K` copies of `w` as an extended latent.
pub fn broadcast(w: &[f64], n_rows: usize) -> Result<DenseMatrix> {
    if n_rows == 0 {
        return Err(Error::config("an extended latent needs at least one row"));
    }
    DenseMatrix::from_row_major(n_rows, w.len(), w.repeat(n_rows))
}

/// Joint reverse encoding: `z0 = Ψ(w, a)`.
pub fn jre(flow: &ConditionalFlow, w: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    flow.reverse_point(w, a)
}

/// Conditional forward editing: `w' = Φ(z0, a_target)`.
pub fn cfe(flow: &ConditionalFlow, z0: &[f64], a_target: &[f64]) -> Result<Vec<f64>> {
    flow.forward_point(z0, a_target)
}

/// Copy of `w_plus` with the rows of `kind` replaced by `w_new`.
pub fn subset_select(w_plus: &DenseMatrix, w_new: &[f64], kind: &EditKind) -> Result<DenseMatrix> {
    if w_new.len() != w_plus.cols() {
        return Err(Error::shape("replacement row has the wrong width"));
    }
    if let Some(r) = kind.rows.iter().find(|r| **r >= w_plus.rows()) {
        return Err(Error::config(format!("edit {:?} writes row {r} of a {}-row latent", kind.name, w_plus.rows())));
    }
    let mut out = w_plus.clone();
    for &r in &kind.rows {
        out.row_mut(r).copy_from_slice(w_new);
    }
    Ok(out)
}

/// Outcome of one edit in a session.
#[derive(Debug, Clone, PartialEq)]
pub struct EditStep {
    pub a_target: Vec<f64>,
    pub a_new: Vec<f64>,
    /// Rows whose contents changed (bitwise).
    pub changed_rows: Vec<usize>,
}

/// Sequential editing of one extended latent.
///
/// Every row keeps its own prior code. An edit maps the codes of the rows it
/// writes forward under the target attributes; accurate mode then
/// re-encodes all rows with the new attributes, fast mode keeps the codes.
pub struct EditSession<'a> {
    flow: &'a ConditionalFlow,
    measure: Option<(&'a dyn AttributeOracle, Readout)>,
    state: DenseMatrix,
    attrs: Vec<f64>,
    codes: Vec<Vec<f64>>,
}

impl<'a> EditSession<'a> {
    /// Starts a session at `state` with attributes `attrs`. Without an oracle
    /// the attributes after an edit are taken to be its targets.
    pub fn new(
        flow: &'a ConditionalFlow,
        state: DenseMatrix,
        attrs: Vec<f64>,
        measure: Option<(&'a dyn AttributeOracle, Readout)>,
    ) -> Result<Self> {
        if state.cols() != flow.latent_dim() || attrs.len() != flow.attr_dim() {
            return Err(Error::shape("edit state does not match the flow's dimensions"));
        }
        let codes = encode_rows(flow, &state, &attrs)?;
        Ok(EditSession { flow, measure, state, attrs, codes })
    }

    /// Starts from the measured attributes of `state`.
    pub fn measured(flow: &'a ConditionalFlow, state: DenseMatrix, oracle: &'a dyn AttributeOracle, readout: Readout) -> Result<Self> {
        let attrs = readout.measure(oracle, &state)?;
        Self::new(flow, state, attrs, Some((oracle, readout)))
    }

    pub fn state(&self) -> &DenseMatrix {
        &self.state
    }

    pub fn attributes(&self) -> &[f64] {
        &self.attrs
    }

    pub fn into_state(self) -> DenseMatrix {
        self.state
    }

    pub fn apply(&mut self, req: &EditRequest) -> Result<EditStep> {
        let k = self.state.rows();
        let a_target = req.target_attributes(&self.attrs)?;
        let rows = req.written_rows(k);
        if let Some(r) = rows.iter().find(|r| **r >= k) {
            return Err(Error::config(format!("edit {:?} writes row {r} of a {k}-row latent", req.kind.name)));
        }
        let mut next = self.state.clone();
        let mut cache: Vec<(&[f64], Vec<f64>)> = Vec::new();
        for &r in &rows {
            let code = &self.codes[r];
            let w_new = match cache.iter().find(|(c, _)| *c == code.as_slice()) {
                Some((_, w)) => w.clone(),
                None => {
                    let w = cfe(self.flow, code, &a_target)?;
                    cache.push((code, w.clone()));
                    w
                }
            };
            next.row_mut(r).copy_from_slice(&w_new);
        }
        let changed_rows = (0..k).filter(|&r| next.row(r) != self.state.row(r)).collect();
        let a_new = match &self.measure {
            Some((oracle, readout)) => readout.measure(*oracle, &next)?,
            None => a_target.clone(),
        };
        if req.mode == EditMode::Accurate {
            self.codes = encode_rows(self.flow, &next, &a_new)?;
        }
        self.state = next;
        self.attrs = a_new.clone();
        Ok(EditStep { a_target, a_new, changed_rows })
    }
}

fn encode_rows(flow: &ConditionalFlow, state: &DenseMatrix, attrs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(state.rows());
    for r in 0..state.rows() {
        let row = state.row(r);
        let code = match (0..r).find(|&p| state.row(p) == row) {
            Some(p) => codes[p].clone(),
            None => jre(flow, row, attrs)?,
        };
        codes.push(code);
    }
    Ok(codes)
}

/// One edit on a fresh session: `(state', a_new)`.
pub fn apply_edit(
    flow: &ConditionalFlow,
    state: &DenseMatrix,
    a_current: &[f64],
    req: &EditRequest,
    measure: Option<(&dyn AttributeOracle, Readout)>,
) -> Result<(DenseMatrix, Vec<f64>)> {
    let mut s = EditSession::new(flow, state.clone(), a_current.to_vec(), measure)?;
    let step = s.apply(req)?;
    Ok((s.into_state(), step.a_new))
}

/// `Φ(z0, (1 − s) a_from + s a_to)` for `steps` evenly spaced `s ∈ [0, 1]`.
pub fn interpolate_attribute(flow: &ConditionalFlow, z0: &[f64], a_from: &[f64], a_to: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps < 2 {
        return Err(Error::config("interpolation needs at least 2 steps"));
    }
    if a_from.len() != a_to.len() {
        return Err(Error::shape("interpolation endpoints differ in length"));
    }
    (0..steps)
        .map(|i| {
            let s = i as f64 / (steps - 1) as f64;
            let a: Vec<f64> = a_from.iter().zip(a_to).map(|(x, y)| (1.0 - s) * x + s * y).collect();
            cfe(flow, z0, &a)
        })
        .collect()
}
