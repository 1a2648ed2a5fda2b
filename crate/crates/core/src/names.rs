//! Canonical feature identifiers.
//!
//! Identifiers are dot-separated: an optional transform prefix, the summary
//! statistic, the quantity, the week pair and an optional voltage window, e.g.
//! `log_abs.mean.d_dqdv.w3-w0.3.60V-3.90V`. They appear verbatim as CSV headers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Summary of the incremental-capacity difference curve.
    DqdvDelta,
    /// Summary of the capacity-vs-voltage difference curve.
    DeltaQ,
    CvTime,
    DeltaCvTime,
    /// Full discharge capacity at one week.
    Capacity,
    /// Capacity discharged inside a voltage window at one week.
    CapacityWindow,
    /// Change in full capacity between two weeks.
    CapacityFade,
    DvaDelta,
    Stress,
    Condition,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureKind::DqdvDelta => "dqdv_delta",
            FeatureKind::DeltaQ => "delta_q",
            FeatureKind::CvTime => "cv_time",
            FeatureKind::DeltaCvTime => "delta_cv_time",
            FeatureKind::Capacity => "capacity",
            FeatureKind::CapacityWindow => "capacity_window",
            FeatureKind::CapacityFade => "capacity_fade",
            FeatureKind::DvaDelta => "dva_capacity_delta",
            FeatureKind::Stress => "stress",
            FeatureKind::Condition => "condition",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Var,
    Min,
    Skew,
    Kurtosis,
}

impl Statistic {
    pub fn as_str(&self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Var => "var",
            Statistic::Min => "min",
            Statistic::Skew => "skew",
            Statistic::Kurtosis => "kurt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressKind {
    Chg,
    Dchg,
    Avg,
    Mult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    CChg,
    CDis,
    Dod,
}

/// Ordered week pair `(later, earlier)`, i.e. the difference `w_j − w_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekPair {
    pub later: f64,
    pub earlier: f64,
}

impl WeekPair {
    pub fn new(later: f64, earlier: f64) -> Self {
        Self { later, earlier }
    }
}

impl Default for WeekPair {
    fn default() -> Self {
        Self::new(3.0, 0.0)
    }
}

impl fmt::Display for WeekPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}-w{}", fmt_week(self.later), fmt_week(self.earlier))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageWindow {
    pub lo: f64,
    pub hi: f64,
}

impl VoltageWindow {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

impl fmt::Display for VoltageWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}V-{:.2}V", self.lo, self.hi)
    }
}

/// Weeks print without a trailing `.0`; fractional weeks keep their digits.
pub fn fmt_week(w: f64) -> String {
    if w.fract() == 0.0 {
        format!("{}", w as i64)
    } else {
        format!("{w}")
    }
}

/// Structured description of one feature column. Fields not used by a kind
/// stay `None`; [`canonical_feature_name`] checks that the ones a kind needs
/// are bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub kind: FeatureKind,
    pub weeks: Option<WeekPair>,
    pub week: Option<f64>,
    pub window: Option<VoltageWindow>,
    pub statistic: Option<Statistic>,
    pub transform: Option<Transform>,
    pub dva_index: Option<u8>,
    pub stress: Option<StressKind>,
    pub condition: Option<ConditionKind>,
}

impl FeatureDescriptor {
    pub fn empty(kind: FeatureKind) -> Self {
        Self {
            kind,
            weeks: None,
            week: None,
            window: None,
            statistic: None,
            transform: None,
            dva_index: None,
            stress: None,
            condition: None,
        }
    }

    pub fn dqdv_delta(
        weeks: WeekPair,
        window: Option<VoltageWindow>,
        statistic: Statistic,
        transform: Transform,
    ) -> Self {
        Self {
            weeks: Some(weeks),
            window,
            statistic: Some(statistic),
            transform: Some(transform),
            ..Self::empty(FeatureKind::DqdvDelta)
        }
    }

    pub fn delta_q(weeks: WeekPair, statistic: Statistic, transform: Transform) -> Self {
        Self {
            weeks: Some(weeks),
            statistic: Some(statistic),
            transform: Some(transform),
            ..Self::empty(FeatureKind::DeltaQ)
        }
    }

    pub fn cv_time(week: f64) -> Self {
        Self {
            week: Some(week),
            transform: Some(Transform::Log),
            ..Self::empty(FeatureKind::CvTime)
        }
    }

    pub fn delta_cv_time(weeks: WeekPair) -> Self {
        Self {
            weeks: Some(weeks),
            transform: Some(Transform::LogAbs),
            ..Self::empty(FeatureKind::DeltaCvTime)
        }
    }

    pub fn capacity(week: f64) -> Self {
        Self {
            week: Some(week),
            transform: Some(Transform::Log),
            ..Self::empty(FeatureKind::Capacity)
        }
    }

    pub fn capacity_window(week: f64, window: VoltageWindow) -> Self {
        Self {
            week: Some(week),
            window: Some(window),
            transform: Some(Transform::Log),
            ..Self::empty(FeatureKind::CapacityWindow)
        }
    }

    pub fn capacity_fade(weeks: WeekPair) -> Self {
        Self {
            weeks: Some(weeks),
            transform: Some(Transform::LogAbs),
            ..Self::empty(FeatureKind::CapacityFade)
        }
    }

    pub fn dva_delta(index: u8, weeks: WeekPair) -> Self {
        Self {
            weeks: Some(weeks),
            dva_index: Some(index),
            transform: Some(Transform::Identity),
            ..Self::empty(FeatureKind::DvaDelta)
        }
    }

    pub fn stress(kind: StressKind) -> Self {
        Self {
            stress: Some(kind),
            transform: Some(Transform::Identity),
            ..Self::empty(FeatureKind::Stress)
        }
    }

    pub fn condition(kind: ConditionKind) -> Self {
        Self {
            condition: Some(kind),
            transform: Some(Transform::Identity),
            ..Self::empty(FeatureKind::Condition)
        }
    }

    pub fn transform_or_identity(&self) -> Transform {
        self.transform.unwrap_or(Transform::Identity)
    }

    pub fn name(&self) -> Result<String> {
        canonical_feature_name(self)
    }
}

fn need<T>(d: &FeatureDescriptor, v: Option<T>, field: &'static str) -> Result<T> {
    v.ok_or_else(|| Error::UnboundFeatureField {
        kind: d.kind.to_string(),
        field,
    })
}

fn prefix(t: Transform) -> &'static str {
    match t {
        Transform::Identity => "",
        Transform::Log => "log.",
        Transform::LogAbs => "log_abs.",
    }
}

/// Deterministic identifier for a fully bound descriptor.
pub fn canonical_feature_name(d: &FeatureDescriptor) -> Result<String> {
    use FeatureKind::*;
    let name = match d.kind {
        DqdvDelta => {
            let t = need(d, d.transform, "transform")?;
            let s = need(d, d.statistic, "statistic")?;
            let w = need(d, d.weeks, "weeks")?;
            let mut n = format!("{}{}.d_dqdv.{w}", prefix(t), s.as_str());
            if let Some(win) = d.window {
                n.push_str(&format!(".{win}"));
            }
            n
        }
        DeltaQ => {
            let t = need(d, d.transform, "transform")?;
            let s = need(d, d.statistic, "statistic")?;
            let w = need(d, d.weeks, "weeks")?;
            format!("{}{}.d_q.{w}", prefix(t), s.as_str())
        }
        CvTime => {
            let t = need(d, d.transform, "transform")?;
            let wk = need(d, d.week, "week")?;
            format!("{}cv_time.w{}", prefix(t), fmt_week(wk))
        }
        DeltaCvTime => {
            let t = need(d, d.transform, "transform")?;
            let w = need(d, d.weeks, "weeks")?;
            format!("{}d_cv_time.{w}", prefix(t))
        }
        Capacity => {
            let t = need(d, d.transform, "transform")?;
            let wk = need(d, d.week, "week")?;
            format!("{}q.w{}", prefix(t), fmt_week(wk))
        }
        CapacityWindow => {
            let t = need(d, d.transform, "transform")?;
            let wk = need(d, d.week, "week")?;
            let win = need(d, d.window, "window")?;
            format!("{}q.w{}.{win}", prefix(t), fmt_week(wk))
        }
        CapacityFade => {
            let t = need(d, d.transform, "transform")?;
            let w = need(d, d.weeks, "weeks")?;
            format!("{}d_q_full.{w}", prefix(t))
        }
        DvaDelta => {
            let k = need(d, d.dva_index, "dva_index")?;
            let w = need(d, d.weeks, "weeks")?;
            format!("delta_q_dva{k}.{w}")
        }
        Stress => {
            let s = need(d, d.stress, "stress")?;
            let tag = match s {
                StressKind::Chg => "chg",
                StressKind::Dchg => "dchg",
                StressKind::Avg => "avg",
                StressKind::Mult => "mult",
            };
            format!("stress.{tag}")
        }
        Condition => {
            let c = need(d, d.condition, "condition")?;
            let tag = match c {
                ConditionKind::CChg => "c_chg",
                ConditionKind::CDis => "c_dis",
                ConditionKind::Dod => "dod",
            };
            format!("cond.{tag}")
        }
    };
    Ok(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_feature_name() {
        let d = FeatureDescriptor::dqdv_delta(
            WeekPair::new(3.0, 0.0),
            Some(VoltageWindow::new(3.60, 3.90)),
            Statistic::Mean,
            Transform::LogAbs,
        );
        assert_eq!(
            canonical_feature_name(&d).unwrap(),
            "log_abs.mean.d_dqdv.w3-w0.3.60V-3.90V"
        );
    }

    #[test]
    fn stress_and_dva_names() {
        assert_eq!(
            canonical_feature_name(&FeatureDescriptor::stress(StressKind::Avg)).unwrap(),
            "stress.avg"
        );
        assert_eq!(
            canonical_feature_name(&FeatureDescriptor::dva_delta(1, WeekPair::new(3.0, 0.0)))
                .unwrap(),
            "delta_q_dva1.w3-w0"
        );
    }

    #[test]
    fn fractional_weeks() {
        let d = FeatureDescriptor::delta_cv_time(WeekPair::new(3.0, 0.5));
        assert_eq!(d.name().unwrap(), "log_abs.d_cv_time.w3-w0.5");
    }

    #[test]
    fn unbound_field_is_named() {
        let mut d = FeatureDescriptor::dqdv_delta(
            WeekPair::default(),
            None,
            Statistic::Var,
            Transform::LogAbs,
        );
        d.weeks = None;
        match canonical_feature_name(&d) {
            Err(Error::UnboundFeatureField { field, .. }) => assert_eq!(field, "weeks"),
            other => panic!("unexpected {other:?}"),
        }
        let d = FeatureDescriptor::empty(FeatureKind::Stress);
        let err = canonical_feature_name(&d).unwrap_err().to_string();
        assert!(err.contains("stress"), "{err}");
    }

    #[test]
    fn names_are_distinct_across_catalog() {
        let w = WeekPair::default();
        let mut all = vec![];
        for s in [Statistic::Mean, Statistic::Var] {
            for t in [Transform::Identity, Transform::LogAbs] {
                all.push(FeatureDescriptor::dqdv_delta(w, None, s, t));
                all.push(FeatureDescriptor::dqdv_delta(
                    w,
                    Some(VoltageWindow::new(3.0, 3.6)),
                    s,
                    t,
                ));
                all.push(FeatureDescriptor::delta_q(w, s, t));
            }
        }
        all.push(FeatureDescriptor::cv_time(0.0));
        all.push(FeatureDescriptor::cv_time(3.0));
        all.push(FeatureDescriptor::delta_cv_time(w));
        all.push(FeatureDescriptor::capacity(0.0));
        all.push(FeatureDescriptor::capacity_window(0.0, VoltageWindow::new(3.0, 3.6)));
        all.push(FeatureDescriptor::capacity_fade(w));
        for k in 1..=4 {
            all.push(FeatureDescriptor::dva_delta(k, w));
        }
        let names: std::collections::HashSet<_> =
            all.iter().map(|d| d.name().unwrap()).collect();
        assert_eq!(names.len(), all.len());
    }
}
