use crate::cflow::ConditionalFlow;
use crate::editpipe::{cfe, interpolate_attribute, jre, AttributeOracle, EditMode, EditRequest, EditSession, Readout};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, DenseMatrix};

/// Cosine similarity and euclidean distance of two identity embeddings.
pub fn identity_scores(e1: &[f64], e2: &[f64]) -> Result<(f64, f64)> {
    if e1.len() != e2.len() {
        return Err(Error::shape("identity embeddings differ in length"));
    }
    let (s1, s2) = (dot(e1, e1), dot(e2, e2));
    if s1 == 0.0 || s2 == 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity of a zero vector".into()));
    }
    let euclid = e1.iter().zip(e2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(((dot(e1, e2) / (s1 * s2).sqrt()).clamp(-1.0, 1.0), euclid))
}

/// The `q`-quantile (linear interpolation) of `distances`.
pub fn identity_threshold(distances: &[f64], q: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::EmptyRequest("identity threshold from no distances"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config("quantile must lie in [0, 1]"));
    }
    let mut s = distances.to_vec();
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite identity distance".into()));
    }
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Ok(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

/// Fraction of distances at or below `threshold`.
pub fn identity_accuracy(distances: &[f64], threshold: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::EmptyRequest("identity accuracy of no distances"));
    }
    Ok(distances.iter().filter(|d| **d <= threshold).count() as f64 / distances.len() as f64)
}

/// A non-empty ordered list of edits.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSequence {
    edits: Vec<EditRequest>,
}

impl EditSequence {
    pub fn new(edits: Vec<EditRequest>) -> Result<Self> {
        if edits.is_empty() {
            return Err(Error::EmptyRequest("empty edit sequence"));
        }
        Ok(EditSequence { edits })
    }

    pub fn edits(&self) -> &[EditRequest] {
        &self.edits
    }

    fn probe_target(&self, channel: usize) -> Option<f64> {
        self.edits.iter().rev().find_map(|e| e.targets.iter().find(|(c, _)| *c == channel).map(|(_, v)| *v))
    }

    /// Runs the sequence in accurate mode from `w_plus` and returns the
    /// measured attributes of the final state.
    pub fn run(&self, flow: &ConditionalFlow, oracle: &dyn AttributeOracle, readout: &Readout, w_plus: &DenseMatrix) -> Result<Vec<f64>> {
        let mut session = EditSession::measured(flow, w_plus.clone(), oracle, readout.clone())?;
        for e in &self.edits {
            session.apply(&EditRequest { mode: EditMode::Accurate, ..e.clone() })?;
        }
        Ok(session.attributes().to_vec())
    }
}

/// `|A_c(seq_a(w)) − A_c(seq_b(w))|` with both sequences run in accurate mode.
pub fn edit_consistency(
    flow: &ConditionalFlow,
    oracle: &dyn AttributeOracle,
    readout: &Readout,
    w_plus: &DenseMatrix,
    seq_a: &EditSequence,
    seq_b: &EditSequence,
    channel: usize,
) -> Result<f64> {
    match (seq_a.probe_target(channel), seq_b.probe_target(channel)) {
        (Some(x), Some(y)) if x == y => {}
        (Some(_), Some(_)) => return Err(Error::config("sequences set the probed channel to different values")),
        _ => return Err(Error::config(format!("both sequences must edit probed channel {channel}"))),
    }
    let a = seq_a.run(flow, oracle, readout, w_plus)?;
    let b = seq_b.run(flow, oracle, readout, w_plus)?;
    let (x, y) = (a.get(channel), b.get(channel));
    match (x, y) {
        (Some(x), Some(y)) => Ok((x - y).abs()),
        _ => Err(Error::shape(format!("probed channel {channel} outside the readout"))),
    }
}

/// One edit applied to a single code: `cfe(jre(w, a), a')` with `a` measured
/// by the oracle on the model's channels.
fn edit_single(flow: &ConditionalFlow, oracle: &dyn AttributeOracle, model_channels: &[usize], req: &EditRequest, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let full = oracle.attributes(w)?;
    let a: Vec<f64> = model_channels
        .iter()
        .map(|&c| full.get(c).copied().ok_or_else(|| Error::shape(format!("model channel {c} outside the oracle"))))
        .collect::<Result<_>>()?;
    let z0 = jre(flow, w, &a)?;
    let w_new = cfe(flow, &z0, &req.target_attributes(&a)?)?;
    Ok((w_new, full))
}

/// Statistics of the difference vectors `w′ − w` of one edit over many starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffVecStats {
    pub mean_norm: f64,
    /// Maximum pairwise angle in degrees over the non-zero differences.
    pub max_angle_deg: f64,
    pub nonzero: usize,
}

pub fn diffvec_stats(flow: &ConditionalFlow, oracle: &dyn AttributeOracle, req: &EditRequest, starts: &[Vec<f64>]) -> Result<DiffVecStats> {
    if starts.len() < 2 {
        return Err(Error::EmptyRequest("difference-vector statistics need at least two starts"));
    }
    let channels: Vec<usize> = (0..flow.attr_dim()).collect();
    let mut diffs = Vec::with_capacity(starts.len());
    let mut total = 0.0;
    for w in starts {
        let (w_new, _) = edit_single(flow, oracle, &channels, req, w)?;
        let d: Vec<f64> = w_new.iter().zip(w).map(|(a, b)| a - b).collect();
        let n = norm2(&d);
        total += n;
        if n > 0.0 {
            diffs.push((d, n));
        }
    }
    let mut max_angle: f64 = 0.0;
    for i in 0..diffs.len() {
        for j in i + 1..diffs.len() {
            let c = (dot(&diffs[i].0, &diffs[j].0) / (diffs[i].1 * diffs[j].1)).clamp(-1.0, 1.0);
            max_angle = max_angle.max(c.acos().to_degrees());
        }
    }
    Ok(DiffVecStats { mean_norm: total / starts.len() as f64, max_angle_deg: max_angle, nonzero: diffs.len() })
}

/// Mean distance between the attribute path `cfe(z0, a(s))` and the straight
/// segment through its endpoints, divided by the mean step of that segment.
pub fn path_deviation(flow: &ConditionalFlow, z0: &[f64], a_from: &[f64], a_to: &[f64], samples: usize) -> Result<f64> {
    let path = interpolate_attribute(flow, z0, a_from, a_to, samples)?;
    let (first, last) = (&path[0], &path[samples - 1]);
    let chord: Vec<f64> = last.iter().zip(first).map(|(b, a)| b - a).collect();
    let step = norm2(&chord) / (samples - 1) as f64;
    let mut dev = 0.0;
    for (i, p) in path.iter().enumerate() {
        let s = i as f64 / (samples - 1) as f64;
        let off: f64 = p.iter().zip(first).zip(&chord).map(|((p, a), c)| (p - a - s * c).powi(2)).sum();
        dev += off.sqrt();
    }
    dev /= samples as f64;
    if dev == 0.0 {
        return Ok(0.0);
    }
    if step == 0.0 {
        return Err(Error::UndefinedMetric("attribute path returns to its start".into()));
    }
    Ok(dev / step)
}

/// Mean absolute change of the channels an edit does not target, each
/// divided by its training-set standard deviation, averaged over starts.
///
/// `model_channels[k]` is the oracle channel the model conditions on at
/// slot `k`; the edit's targets index model slots.
pub fn leakage(
    flow: &ConditionalFlow,
    oracle: &dyn AttributeOracle,
    req: &EditRequest,
    model_channels: &[usize],
    starts: &[Vec<f64>],
    attr_std: &[f64],
) -> Result<f64> {
    if starts.is_empty() {
        return Err(Error::EmptyRequest("leakage over no starts"));
    }
    if model_channels.len() != flow.attr_dim() {
        return Err(Error::shape("model channel map does not match the flow"));
    }
    if attr_std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::UndefinedMetric("attribute standard deviation must be positive".into()));
    }
    let targeted: Vec<usize> = req.targets.iter().map(|(k, _)| model_channels.get(*k).copied().unwrap_or(usize::MAX)).collect();
    let others: Vec<usize> = (0..attr_std.len()).filter(|c| !targeted.contains(c)).collect();
    if others.is_empty() {
        return Err(Error::UndefinedMetric("edit targets every channel".into()));
    }
    let mut total = 0.0;
    for w in starts {
        let (w_new, before) = edit_single(flow, oracle, model_channels, req, w)?;
        let after = oracle.attributes(&w_new)?;
        if before.len() != attr_std.len() {
            return Err(Error::shape("attribute std does not match the oracle"));
        }
        total += others.iter().map(|&c| (after[c] - before[c]).abs() / attr_std[c]).sum::<f64>() / others.len() as f64;
    }
    Ok(total / starts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::editpipe::{broadcast, EditTable, Variant};
    use crate::synthworld::make_world_with_channels;

    #[test]
    fn identity_score_cases() {
        assert_eq!(identity_scores(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (1.0, 0.0));
        assert_eq!(identity_scores(&[1.0, 2.0], &[-1.0, -2.0]).unwrap().0, -1.0);
        let (c, e) = identity_scores(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(c, 0.0);
        assert!((e - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(identity_scores(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn thresholds() {
        let d = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(identity_threshold(&d, 0.5).unwrap(), 3.0);
        assert_eq!(identity_threshold(&d, 1.0).unwrap(), 5.0);
        assert_eq!(identity_threshold(&d, 0.875).unwrap(), 4.5);
        assert_eq!(identity_accuracy(&d, 3.0).unwrap(), 0.6);
    }

    fn names() -> Vec<String> {
        ["yaw", "expression", "light_0"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identity_model_metrics() {
        let world = make_world_with_channels(3, 5, &["yaw", "expression", "light_0"]).unwrap();
        let flow = ConditionalFlow::identity(5, 3).unwrap();
        let t = EditTable::default();
        let req = EditRequest::new(t.get("yaw").unwrap(), &names(), &[0.7], EditMode::Fast, Variant::V2).unwrap();
        let starts: Vec<Vec<f64>> = (0..4).map(|i| vec![0.1 * i as f64; 5]).collect();
        let s = diffvec_stats(&flow, &world, &req, &starts).unwrap();
        assert_eq!((s.mean_norm, s.max_angle_deg, s.nonzero), (0.0, 0.0, 0));
        let z0 = [0.3, -0.1, 0.2, 0.0, 0.5];
        assert_eq!(path_deviation(&flow, &z0, &[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 20).unwrap(), 0.0);
        let std = [0.2, 0.2, 0.2];
        assert_eq!(leakage(&flow, &world, &req, &[0, 1, 2], &starts, &std).unwrap(), 0.0);
    }

    #[test]
    fn consistency_of_identical_sequences_is_zero() {
        let world = make_world_with_channels(3, 6, &["yaw", "expression", "light_0"]).unwrap();
        let flow = ConditionalFlow::init(6, 3, 2, 1).unwrap();
        let t = EditTable::default();
        let mk = |name: &str, v: f64| EditRequest::new(t.get(name).unwrap(), &names(), &[v], EditMode::Fast, Variant::V2).unwrap();
        let seq = EditSequence::new(vec![mk("expression", 0.6), mk("yaw", 0.3)]).unwrap();
        let w = broadcast(&[0.2, -0.1, 0.3, 0.0, 0.1, -0.2], 18).unwrap();
        let readout = Readout::MeanRows;
        assert_eq!(edit_consistency(&flow, &world, &readout, &w, &seq, &seq, 0).unwrap(), 0.0);
        let other = EditSequence::new(vec![mk("yaw", 0.4)]).unwrap();
        assert!(edit_consistency(&flow, &world, &readout, &w, &seq, &other, 0).is_err());
        assert!(edit_consistency(&flow, &world, &readout, &w, &seq, &seq, 2).is_err());
        assert!(EditSequence::new(vec![]).is_err());
    }

    #[test]
    fn path_deviation_rejects_closed_paths() {
        let flow = ConditionalFlow::init(3, 1, 2, 4).unwrap();
        let z0 = [0.1, 0.2, -0.3];
        assert_eq!(path_deviation(&flow, &z0, &[0.5], &[0.5], 10).unwrap(), 0.0);
        assert!(path_deviation(&flow, &z0, &[0.0], &[1.0], 1).is_err());
    }
}
