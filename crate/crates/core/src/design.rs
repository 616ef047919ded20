//! Model specifications and the per-record regression rows they induce.
//!
//! A row carries the control vector `Z_t = (1, controls...)`, the centered
//! treatment block `(A_t - p̃_t) S_t` with `S_t = (1, moderators...)` repeated
//! per arm, and the weight `I_t W_t`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use crate::config::KeyValues;
use crate::data::{DecisionRecord, IndividualId, MrtDataset, Schema};
use crate::error::{Error, Result};

/// Randomization probability of one arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ProbSpec {
    Constant(f64),
    /// Read per record from the named data column.
    Column(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSpec {
    pub treatment: String,
    pub prob: ProbSpec,
}

/// The probability `p̃` each treatment indicator is centered by.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Ptilde {
    EqualToP,
    Constant(f64),
    /// Read per record from the named covariate column.
    Column(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub id: String,
    pub time: String,
    pub outcome: String,
    pub availability: String,
    pub arms: Vec<ArmSpec>,
    /// Effect moderators; the intercept is implicit.
    pub moderators: Vec<String>,
    /// Working-model controls; the intercept is implicit.
    pub controls: Vec<String>,
    /// `None` selects the default: `p` when every arm has a constant
    /// probability, otherwise the constant `1 / (arms + 1)`.
    pub ptilde: Option<Ptilde>,
    /// Use `A_t - p̃_t` (true) or the raw indicator `A_t` in the treatment block.
    pub centered: bool,
}

impl ModelSpec {
    /// Single-arm spec with constant probability, no moderators, and `p̃ = p`.
    pub fn single_arm(
        outcome: impl Into<String>,
        availability: impl Into<String>,
        treatment: impl Into<String>,
        p: f64,
    ) -> Self {
        Self {
            id: "userid".into(),
            time: "decision_index".into(),
            outcome: outcome.into(),
            availability: availability.into(),
            arms: vec![ArmSpec { treatment: treatment.into(), prob: ProbSpec::Constant(p) }],
            moderators: Vec::new(),
            controls: Vec::new(),
            ptilde: None,
            centered: true,
        }
    }

    pub fn with_controls<S: Into<String>>(mut self, controls: impl IntoIterator<Item = S>) -> Self {
        self.controls = controls.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_moderators<S: Into<String>>(mut self, moderators: impl IntoIterator<Item = S>) -> Self {
        self.moderators = moderators.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_ptilde(mut self, ptilde: Ptilde) -> Self {
        self.ptilde = Some(ptilde);
        self
    }

    pub fn uncentered(mut self) -> Self {
        self.centered = false;
        self
    }

    pub fn effective_ptilde(&self) -> Ptilde {
        match &self.ptilde {
            Some(p) => p.clone(),
            None if self.arms.iter().all(|a| matches!(a.prob, ProbSpec::Constant(_))) => Ptilde::EqualToP,
            None => Ptilde::Constant(1.0 / (self.arms.len() as f64 + 1.0)),
        }
    }

    pub fn q_alpha(&self) -> usize {
        1 + self.controls.len()
    }

    pub fn q_beta(&self) -> usize {
        self.arms.len() * (1 + self.moderators.len())
    }

    /// Total parameter count `dim α + dim β`.
    pub fn q(&self) -> usize {
        self.q_alpha() + self.q_beta()
    }

    pub fn alpha_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string())
            .chain(self.controls.iter().cloned())
            .collect()
    }

    pub fn beta_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.q_beta());
        for arm in &self.arms {
            names.push(arm.treatment.clone());
            for m in &self.moderators {
                names.push(format!("{}:{m}", arm.treatment));
            }
        }
        names
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::spec("at least one treatment arm is required"));
        }
        let mut seen = BTreeSet::new();
        for arm in &self.arms {
            if !seen.insert(arm.treatment.as_str()) {
                return Err(Error::spec(format!("treatment `{}` listed twice", arm.treatment)));
            }
            if let ProbSpec::Constant(p) = arm.prob {
                check_prob(p, &format!("probability of arm `{}`", arm.treatment))?;
            }
        }
        let constant_total: Option<f64> = self
            .arms
            .iter()
            .map(|a| match a.prob {
                ProbSpec::Constant(p) => Some(p),
                ProbSpec::Column(_) => None,
            })
            .sum();
        if let Some(total) = constant_total {
            if total >= 1.0 {
                return Err(Error::spec(format!(
                    "arm probabilities sum to {total}; the no-treatment option needs positive probability"
                )));
            }
        }
        if let Some(Ptilde::Constant(c)) = &self.ptilde {
            check_prob(*c, "ptilde")?;
            if *c * self.arms.len() as f64 >= 1.0 {
                return Err(Error::spec("ptilde summed over arms must be below 1"));
            }
        }
        for m in &self.moderators {
            if !self.controls.contains(m) {
                return Err(Error::spec(format!(
                    "moderator `{m}` must also appear among the controls"
                )));
            }
        }
        for (label, list) in [("controls", &self.controls), ("moderators", &self.moderators)] {
            let mut seen = BTreeSet::new();
            for term in list {
                if !seen.insert(term) {
                    return Err(Error::spec(format!("`{term}` repeated in {label}")));
                }
            }
        }
        Ok(())
    }

    /// The CSV schema needed to ingest data for this spec.
    pub fn schema(&self) -> Schema {
        let mut schema = Schema::new(&self.id, &self.time, &self.availability, &self.outcome);
        for arm in &self.arms {
            schema = match &arm.prob {
                ProbSpec::Constant(_) => schema.treatment(&arm.treatment),
                ProbSpec::Column(c) => schema.treatment_with_prob(&arm.treatment, c),
            };
        }
        for c in &self.controls {
            schema = schema.covariate(c);
        }
        if let Some(Ptilde::Column(c)) = &self.ptilde {
            schema = schema.covariate(c);
        }
        schema
    }

    /// Reads the flat key-value spec format.
    ///
    /// ```text
    /// outcome = jbsteps30_log
    /// availability = avail
    /// arms[0].treatment = send
    /// arms[0].prob = 0.6
    /// controls = jbsteps30pre_log, study_day_nogap
    /// moderators = study_day_nogap
    /// ptilde = p
    /// ```
    ///
    /// `arms[k].prob_column` replaces `arms[k].prob` for per-record
    /// probabilities; `ptilde` takes `p` or a number, and `ptilde_column`
    /// names a per-record column. `id`, `time`, and `center` are optional.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut arm_indices = BTreeSet::new();
        for key in kv.keys_with_prefix("arms[") {
            let idx = key["arms[".len()..]
                .split_once(']')
                .and_then(|(i, _)| i.parse::<usize>().ok())
                .ok_or_else(|| Error::config(format!("malformed arm key `{key}`")))?;
            arm_indices.insert(idx);
        }
        let mut arms = Vec::new();
        for (expected, idx) in arm_indices.into_iter().enumerate() {
            if idx != expected {
                return Err(Error::config(format!("arm indices must be 0..k, found arms[{idx}]")));
            }
            let treatment = kv.require(&format!("arms[{idx}].treatment"))?.to_string();
            let prob = match (
                kv.get_parsed::<f64>(&format!("arms[{idx}].prob"))?,
                kv.get(&format!("arms[{idx}].prob_column")),
            ) {
                (Some(p), None) => ProbSpec::Constant(p),
                (None, Some(c)) => ProbSpec::Column(c.to_string()),
                _ => {
                    return Err(Error::config(format!(
                        "arms[{idx}] needs exactly one of `prob` or `prob_column`"
                    )))
                }
            };
            arms.push(ArmSpec { treatment, prob });
        }
        let ptilde = match (kv.get("ptilde"), kv.get("ptilde_column")) {
            (None, None) => None,
            (Some("p"), None) => Some(Ptilde::EqualToP),
            (Some(v), None) => Some(Ptilde::Constant(v.parse().map_err(|_| {
                Error::config(format!("`ptilde` must be `p` or a number, got `{v}`"))
            })?)),
            (None, Some(c)) => Some(Ptilde::Column(c.to_string())),
            (Some(_), Some(_)) => {
                return Err(Error::config("give only one of `ptilde` and `ptilde_column`"))
            }
        };
        let spec = Self {
            id: kv.get("id").unwrap_or("userid").to_string(),
            time: kv.get("time").unwrap_or("decision_index").to_string(),
            outcome: kv.require("outcome")?.to_string(),
            availability: kv.require("availability")?.to_string(),
            arms,
            moderators: kv.get_list("moderators").unwrap_or_default(),
            controls: kv.get_list("controls").unwrap_or_default(),
            ptilde,
            centered: kv.get_bool("center")?.unwrap_or(true),
        };
        kv.ensure_all_used()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::from_path(path)?)
    }
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must lie in (0, 1), got {p}")))
    }
}

/// Change-of-probability weight `(p̃/p)^a ((1-p̃)/(1-p))^(1-a)`.
pub fn compute_weight(a: bool, p: f64, ptilde: f64) -> Result<f64> {
    check_prob(p, "p")?;
    check_prob(ptilde, "ptilde")?;
    Ok(if a { ptilde / p } else { (1.0 - ptilde) / (1.0 - p) })
}

/// Multi-arm form: the ratio of `p̃` to `p` evaluated at the realized option,
/// where "no treatment" has probability `1 - Σ_k p_k`. Reduces to
/// [`compute_weight`] for one arm.
pub fn categorical_weight(treated_arm: Option<usize>, p: &[f64], ptilde: &[f64]) -> Result<f64> {
    if p.len() == 1 {
        return compute_weight(treated_arm == Some(0), p[0], ptilde[0]);
    }
    match treated_arm {
        Some(k) => Ok(ptilde[k] / p[k]),
        None => {
            let p0 = 1.0 - p.iter().sum::<f64>();
            let q0 = 1.0 - ptilde.iter().sum::<f64>();
            if p0 <= 0.0 || q0 <= 0.0 {
                return Err(Error::domain("no-treatment probability must be positive"));
            }
            Ok(q0 / p0)
        }
    }
}

/// One regression row. Unavailable records keep their slot with weight 0 and
/// zero-filled vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub individual: usize,
    pub time_index: u32,
    pub weight: f64,
    pub z: Vec<f64>,
    pub ts: Vec<f64>,
    pub y: f64,
}

/// All rows of a dataset under one spec, ordered by (individual, time).
#[derive(Debug, Clone)]
pub struct Design {
    pub rows: Vec<DesignRow>,
    pub alpha_names: Vec<String>,
    pub beta_names: Vec<String>,
    pub individual_ids: Vec<IndividualId>,
    offsets: Vec<usize>,
}

impl Design {
    pub fn from_rows(
        rows: Vec<DesignRow>,
        alpha_names: Vec<String>,
        beta_names: Vec<String>,
        individual_ids: Vec<IndividualId>,
    ) -> Result<Self> {
        let n = individual_ids.len();
        let mut offsets = vec![0usize; n + 1];
        for w in rows.windows(2) {
            if w[1].individual < w[0].individual {
                return Err(Error::spec("design rows must be grouped by individual"));
            }
        }
        for r in &rows {
            if r.individual >= n {
                return Err(Error::spec("design row refers to an unknown individual"));
            }
            if r.z.len() != alpha_names.len() || r.ts.len() != beta_names.len() {
                return Err(Error::spec("design row length does not match column names"));
            }
            offsets[r.individual + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self { rows, alpha_names, beta_names, individual_ids, offsets })
    }

    pub fn n(&self) -> usize {
        self.individual_ids.len()
    }

    pub fn q_alpha(&self) -> usize {
        self.alpha_names.len()
    }

    pub fn q_beta(&self) -> usize {
        self.beta_names.len()
    }

    pub fn q(&self) -> usize {
        self.q_alpha() + self.q_beta()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.alpha_names.iter().chain(&self.beta_names).cloned().collect()
    }

    /// Rows belonging to individual `i`.
    pub fn individual_rows(&self, i: usize) -> &[DesignRow] {
        &self.rows[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn n_available(&self) -> usize {
        self.rows.iter().filter(|r| r.weight > 0.0).count()
    }
}

/// Builds one [`DesignRow`] per decision record.
pub fn build_design(data: &MrtDataset, spec: &ModelSpec) -> Result<Design> {
    spec.validate()?;
    let schema = data.schema();
    let cov = |name: &str| -> Result<usize> {
        schema
            .covariate_index(name)
            .ok_or_else(|| Error::Schema { column: name.to_string() })
    };
    let control_idx = spec.controls.iter().map(|c| cov(c)).collect::<Result<Vec<_>>>()?;
    let moderator_idx = spec.moderators.iter().map(|c| cov(c)).collect::<Result<Vec<_>>>()?;
    let arm_idx = spec
        .arms
        .iter()
        .map(|a| {
            schema
                .treatment_index(&a.treatment)
                .ok_or_else(|| Error::Schema { column: a.treatment.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    for (arm, &k) in spec.arms.iter().zip(&arm_idx) {
        if let ProbSpec::Column(c) = &arm.prob {
            if schema.rand_probs[k].as_deref() != Some(c.as_str()) {
                return Err(Error::Schema { column: c.clone() });
            }
        }
    }
    let ptilde = spec.effective_ptilde();
    let ptilde_idx = match &ptilde {
        Ptilde::Column(c) => Some(cov(c)?),
        _ => None,
    };

    let n_arms = spec.arms.len();
    let qa = spec.q_alpha();
    let s_len = 1 + spec.moderators.len();
    let mut rows = Vec::with_capacity(data.n_records());
    let mut p = vec![0.0; n_arms];
    let mut pt = vec![0.0; n_arms];
    for (i, ind) in data.individuals().iter().enumerate() {
        for rec in &ind.records {
            if !rec.available {
                rows.push(DesignRow {
                    individual: i,
                    time_index: rec.time_index,
                    weight: 0.0,
                    z: vec![0.0; qa],
                    ts: vec![0.0; n_arms * s_len],
                    y: 0.0,
                });
                continue;
            }
            let fail = |message: String| Error::Record {
                individual: ind.id.to_string(),
                time: rec.time_index,
                message,
            };
            let value = |idx: usize, name: &str| -> Result<f64> {
                rec.covariates[idx]
                    .ok_or_else(|| fail(format!("missing covariate `{name}` at an available decision point")))
            };
            let mut z = Vec::with_capacity(qa);
            z.push(1.0);
            for (&c, name) in control_idx.iter().zip(&spec.controls) {
                z.push(value(c, name)?);
            }
            let mut s = Vec::with_capacity(s_len);
            s.push(1.0);
            for (&c, name) in moderator_idx.iter().zip(&spec.moderators) {
                s.push(value(c, name)?);
            }
            for (k, (arm, &col)) in spec.arms.iter().zip(&arm_idx).enumerate() {
                p[k] = match &arm.prob {
                    ProbSpec::Constant(v) => *v,
                    ProbSpec::Column(_) => rec.rand_prob[col].ok_or_else(|| {
                        fail(format!("missing randomization probability for `{}`", arm.treatment))
                    })?,
                };
                pt[k] = match &ptilde {
                    Ptilde::EqualToP => p[k],
                    Ptilde::Constant(c) => *c,
                    Ptilde::Column(name) => value(ptilde_idx.expect("resolved above"), name)?,
                };
                if !(pt[k] > 0.0 && pt[k] < 1.0) {
                    return Err(fail(format!("ptilde {} outside (0, 1)", pt[k])));
                }
            }
            let treated = treated_among(rec, &arm_idx);
            let weight = categorical_weight(treated, &p, &pt).map_err(|e| fail(e.to_string()))?;
            let mut ts = Vec::with_capacity(n_arms * s_len);
            for k in 0..n_arms {
                let a = if treated == Some(k) { 1.0 } else { 0.0 };
                let centered = if spec.centered { a - pt[k] } else { a };
                ts.extend(s.iter().map(|v| centered * v));
            }
            rows.push(DesignRow {
                individual: i,
                time_index: rec.time_index,
                weight,
                z,
                ts,
                y: rec.outcome.expect("validated: available records carry an outcome"),
            });
        }
    }
    let ids = data.individuals().iter().map(|i| i.id.clone()).collect();
    Design::from_rows(rows, spec.alpha_names(), spec.beta_names(), ids)
}

fn treated_among(rec: &DecisionRecord, arm_idx: &[usize]) -> Option<usize> {
    arm_idx.iter().position(|&c| rec.treatments[c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest_csv;

    #[test]
    fn weight_examples() {
        assert_eq!(compute_weight(true, 0.6, 0.6).unwrap(), 1.0);
        assert!((compute_weight(true, 0.6, 0.5).unwrap() - 0.5 / 0.6).abs() < 1e-15);
        assert!((compute_weight(false, 0.2, 0.5).unwrap() - 0.625).abs() < 1e-15);
        assert!(compute_weight(true, 0.0, 0.5).is_err());
        assert!(compute_weight(true, 0.5, 1.0).is_err());
    }

    #[test]
    fn categorical_weight_reduces_to_binary() {
        for &(a, p, q) in &[(true, 0.3, 0.5), (false, 0.7, 0.4)] {
            let k = if a { Some(0) } else { None };
            assert_eq!(categorical_weight(k, &[p], &[q]).unwrap(), compute_weight(a, p, q).unwrap());
        }
        let w = categorical_weight(None, &[0.3, 0.3], &[0.25, 0.25]).unwrap();
        assert!((w - 0.5 / 0.4).abs() < 1e-15);
    }

    const DATA: &str = "userid,decision_index,avail,send,walk,sed,y,x,day,loc\n\
        1,1,1,1,1,0,2.0,0.5,0,1\n\
        1,2,1,0,0,0,1.0,0.1,0,0\n\
        1,3,0,0,0,0,,,1,0\n\
        2,1,1,1,0,1,3.0,0.2,0,1\n\
        2,2,1,0,0,0,0.0,0.9,0,0\n";

    fn ds(spec: &ModelSpec) -> MrtDataset {
        ingest_csv(DATA.as_bytes(), &spec.schema()).unwrap()
    }

    #[test]
    fn single_arm_rows() {
        let spec = ModelSpec::single_arm("y", "avail", "send", 0.6).with_controls(["x"]);
        let d = build_design(&ds(&spec), &spec).unwrap();
        assert_eq!(d.rows.len(), 5);
        assert_eq!(d.q(), 3);
        let r = &d.rows[0];
        assert_eq!(r.z, vec![1.0, 0.5]);
        assert!((r.ts[0] - 0.4).abs() < 1e-15);
        assert_eq!(r.weight, 1.0);
        let r = &d.rows[1];
        assert!((r.ts[0] + 0.6).abs() < 1e-15);
        let off = &d.rows[2];
        assert_eq!(off.weight, 0.0);
        assert!(off.z.iter().chain(&off.ts).all(|&v| v == 0.0));
        assert_eq!(d.individual_rows(1).len(), 2);
    }

    #[test]
    fn moderated_rows() {
        let spec = ModelSpec::single_arm("y", "avail", "send", 0.6)
            .with_controls(["x", "day"])
            .with_moderators(["day"]);
        let d = build_design(&ds(&spec), &spec).unwrap();
        assert_eq!(d.q_beta(), 2);
        assert_eq!(d.beta_names, vec!["send", "send:day"]);
    }

    #[test]
    fn two_arm_rows() {
        let mut spec = ModelSpec::single_arm("y", "avail", "walk", 0.3)
            .with_controls(["x", "loc"])
            .with_moderators(["loc"]);
        spec.arms.push(ArmSpec { treatment: "sed".into(), prob: ProbSpec::Constant(0.3) });
        let d = build_design(&ds(&spec), &spec).unwrap();
        assert_eq!(d.q_beta(), 4);
        assert_eq!(d.q(), 7);
        let r = &d.rows[0]; // walk=1, loc=1
        let expect = [0.7, 0.7, -0.3, -0.3];
        for (a, b) in r.ts.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let r = &d.rows[3]; // sed=1, loc=1
        let expect = [-0.3, -0.3, 0.7, 0.7];
        for (a, b) in r.ts.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ptilde_differs_from_p() {
        let spec = ModelSpec::single_arm("y", "avail", "send", 0.6).with_ptilde(Ptilde::Constant(0.5));
        let d = build_design(&ds(&spec), &spec).unwrap();
        assert!((d.rows[0].weight - 0.5 / 0.6).abs() < 1e-15);
        assert!((d.rows[1].weight - 0.5 / 0.4).abs() < 1e-15);
        assert!((d.rows[0].ts[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn moderator_must_be_control() {
        let spec = ModelSpec::single_arm("y", "avail", "send", 0.6).with_moderators(["day"]);
        let err = spec.validate().unwrap_err();
        assert!(matches!(err, Error::Spec(ref m) if m.contains("`day`")), "{err}");
    }

    #[test]
    fn missing_covariate_at_available_record() {
        let text = DATA.replace("2,2,1,0,0,0,0.0,0.9", "2,2,1,0,0,0,0.0,");
        let spec = ModelSpec::single_arm("y", "avail", "send", 0.6).with_controls(["x"]);
        let data = ingest_csv(text.as_bytes(), &spec.schema()).unwrap();
        match build_design(&data, &spec) {
            Err(Error::Record { individual, time, .. }) => {
                assert_eq!(individual, "2");
                assert_eq!(time, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_spec_file() {
        let text = "# two arms\noutcome = y\navailability = avail\n\
            arms[0].treatment = walk\narms[0].prob = 0.3\n\
            arms[1].treatment = sed\narms[1].prob = 0.3\n\
            controls = x, loc\nmoderators = loc\n";
        let spec = ModelSpec::parse(text).unwrap();
        assert_eq!(spec.arms.len(), 2);
        assert_eq!(spec.q(), 7);
        assert_eq!(spec.effective_ptilde(), Ptilde::EqualToP);

        let col = "outcome = y\navailability = a\narms[0].treatment = t\narms[0].prob_column = p\n";
        let spec = ModelSpec::parse(col).unwrap();
        assert_eq!(spec.effective_ptilde(), Ptilde::Constant(0.5));

        assert!(ModelSpec::parse("outcome = y\navailability = a\n").is_err());
        assert!(ModelSpec::parse(&format!("{col}bogus = 1\n")).is_err());
        let bad = "outcome = y\navailability = a\narms[0].treatment = t\narms[0].prob = 0.5\nmoderators = m\n";
        assert!(matches!(ModelSpec::parse(bad), Err(Error::Spec(_))));
    }
}
