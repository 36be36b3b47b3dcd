use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::SchemeKind;

/// Upper step index accepted by [`step_schedule`].
pub const SCHEDULE_MAX_STEP: usize = 100_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Plateau,
    StepSchedule,
    Constant,
    /// Constant `gamma0` for `warm_steps`, plateau decay afterwards.
    WarmThenPlateau,
}

/// Learning-rate policy. Plateau fields are ignored by the other kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayPolicy {
    pub kind: PolicyKind,
    pub gamma0: f64,
    pub gamma_min: f64,
    /// Steps per averaging period.
    pub period: usize,
    /// Validation probe interval; `period / probe_every` probes per period.
    pub probe_every: usize,
    pub validation_size: usize,
    /// Minimum relative improvement between consecutive period means.
    pub threshold: f64,
    pub factor: f64,
    /// Stagnant periods at `gamma_min` before stopping.
    pub patience: usize,
    pub warm_steps: usize,
    pub max_steps: usize,
}

impl Default for DecayPolicy {
    fn default() -> Self {
        Self::for_scheme(SchemeKind::Ladbsde)
    }
}

impl DecayPolicy {
    /// Plateau decay with the per-scheme `(gamma0, gamma_min)`.
    pub fn for_scheme(kind: SchemeKind) -> Self {
        let (gamma0, gamma_min) = kind.learning_rates();
        Self {
            kind: PolicyKind::Plateau,
            gamma0,
            gamma_min,
            period: 1000,
            probe_every: 100,
            validation_size: 1024,
            threshold: 0.05,
            factor: 0.5,
            patience: 2,
            warm_steps: 0,
            max_steps: 60_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v >= 0.0;
        if !pos(self.gamma0) || !pos(self.gamma_min) || self.gamma_min > self.gamma0 {
            return Err(Error::config(
                "train.policy.gamma0",
                format!("need 0 <= gamma_min <= gamma0, got {} and {}", self.gamma_min, self.gamma0),
            ));
        }
        if self.probe_every == 0 || self.period == 0 || self.period % self.probe_every != 0 {
            return Err(Error::config(
                "train.policy.period",
                format!("period {} must be a positive multiple of probe_every {}", self.period, self.probe_every),
            ));
        }
        if self.validation_size == 0 {
            return Err(Error::config("train.policy.validation_size", "must be positive"));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::config("train.policy.factor", "must lie in (0, 1)"));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::config("train.policy.threshold", "must be non-negative"));
        }
        if self.patience == 0 {
            return Err(Error::config("train.policy.patience", "must be positive"));
        }
        if self.kind == PolicyKind::StepSchedule && self.max_steps > SCHEDULE_MAX_STEP {
            return Err(Error::config(
                "train.policy.max_steps",
                format!("the step schedule is defined up to k = {SCHEDULE_MAX_STEP}"),
            ));
        }
        Ok(())
    }

    pub fn probes_per_period(&self) -> usize {
        self.period / self.probe_every
    }

    pub fn start(&self) -> PlateauState {
        PlateauState {
            gamma: self.gamma0,
            previous: None,
            stagnant_at_min: 0,
        }
    }

    /// Learning rate for step `k` (1-based) given the policy state.
    pub fn rate(&self, state: &PlateauState, k: usize) -> Result<f64> {
        match self.kind {
            PolicyKind::Plateau => Ok(state.gamma),
            PolicyKind::WarmThenPlateau if k <= self.warm_steps => Ok(self.gamma0),
            PolicyKind::WarmThenPlateau => Ok(state.gamma),
            PolicyKind::StepSchedule => step_schedule(k),
            PolicyKind::Constant => Ok(self.gamma0),
        }
    }

    /// Feeds the probes of the period ending at step `k`.
    pub fn end_period(&self, state: &mut PlateauState, k: usize, probes: &[f64]) -> PlateauDecision {
        match self.kind {
            PolicyKind::Plateau => plateau_update(self, state, probes),
            PolicyKind::WarmThenPlateau if k > self.warm_steps => plateau_update(self, state, probes),
            PolicyKind::WarmThenPlateau => {
                state.previous = Some(mean(probes));
                PlateauDecision::Hold
            }
            PolicyKind::StepSchedule | PolicyKind::Constant => PlateauDecision::Hold,
        }
    }
}

/// Mutable part of the plateau policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauState {
    pub gamma: f64,
    /// Mean validation loss of the previous period.
    pub previous: Option<f64>,
    pub stagnant_at_min: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauDecision {
    Hold,
    Halve,
    Stop,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Period-boundary update.
///
/// With `cur` the mean of `probes`, the period is stagnant when
/// `(prev - cur) / prev < threshold`; a loss increase or a NaN ratio also
/// counts. A stagnant period halves `gamma` (floored at `gamma_min`); once
/// `gamma` already sits at `gamma_min`, `patience` consecutive stagnant
/// periods stop the run. The first period only records its mean.
pub fn plateau_update(policy: &DecayPolicy, state: &mut PlateauState, probes: &[f64]) -> PlateauDecision {
    let cur = mean(probes);
    let Some(prev) = state.previous.replace(cur) else {
        return PlateauDecision::Hold;
    };
    let improvement = (prev - cur) / prev;
    if improvement >= policy.threshold {
        state.stagnant_at_min = 0;
        return PlateauDecision::Hold;
    }
    if state.gamma <= policy.gamma_min {
        state.stagnant_at_min += 1;
        if state.stagnant_at_min >= policy.patience {
            return PlateauDecision::Stop;
        }
        return PlateauDecision::Hold;
    }
    state.gamma = (state.gamma * policy.factor).max(policy.gamma_min);
    PlateauDecision::Halve
}

/// Piecewise-constant schedule: `1e-3` up to step 20000, `1e-4` up to
/// 50000, `1e-5` up to 80000, `1e-6` after.
pub fn step_schedule(k: usize) -> Result<f64> {
    if !(1..=SCHEDULE_MAX_STEP).contains(&k) {
        return Err(Error::invalid(format!(
            "step_schedule is defined for 1 <= k <= {SCHEDULE_MAX_STEP}, got {k}"
        )));
    }
    let ind = |c: usize| i32::from(k <= c);
    Ok(10f64.powi(ind(20_000) + ind(50_000) + ind(80_000) - 6))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> DecayPolicy {
        DecayPolicy {
            gamma0: 1e-3,
            gamma_min: 2.5e-4,
            ..DecayPolicy::default()
        }
    }

    #[test]
    fn schedule_boundaries() {
        let cases = [(1, 1e-3), (20_000, 1e-3), (20_001, 1e-4), (50_000, 1e-4), (50_001, 1e-5), (80_000, 1e-5), (80_001, 1e-6), (100_000, 1e-6)];
        for (k, want) in cases {
            assert!((step_schedule(k).unwrap() - want).abs() < 1e-20 + want * 1e-14, "k = {k}");
        }
        assert!(step_schedule(0).is_err());
        assert!(step_schedule(100_001).is_err());
    }

    #[test]
    fn first_period_only_records() {
        let p = policy();
        let mut s = p.start();
        assert_eq!(plateau_update(&p, &mut s, &[1.0; 10]), PlateauDecision::Hold);
        assert_eq!(s.previous, Some(1.0));
        assert_eq!(s.gamma, 1e-3);
    }

    #[test]
    fn halve_hold_stop_trace() {
        let p = policy();
        let mut s = p.start();
        let steps = [
            (1.0, PlateauDecision::Hold, 1e-3),
            (1.0, PlateauDecision::Halve, 5e-4),
            (0.5, PlateauDecision::Hold, 5e-4),
            (0.49, PlateauDecision::Halve, 2.5e-4),
            (0.6, PlateauDecision::Hold, 2.5e-4),
            (0.3, PlateauDecision::Hold, 2.5e-4),
            (0.3, PlateauDecision::Hold, 2.5e-4),
            (0.29, PlateauDecision::Stop, 2.5e-4),
        ];
        for (i, (loss, want, gamma)) in steps.into_iter().enumerate() {
            assert_eq!(plateau_update(&p, &mut s, &[loss; 10]), want, "period {i}");
            assert_eq!(s.gamma, gamma, "period {i}");
        }
    }

    #[test]
    fn improvement_resets_patience() {
        let p = policy();
        let mut s = PlateauState {
            gamma: p.gamma_min,
            previous: Some(1.0),
            stagnant_at_min: 0,
        };
        assert_eq!(plateau_update(&p, &mut s, &[1.0]), PlateauDecision::Hold);
        assert_eq!(s.stagnant_at_min, 1);
        assert_eq!(plateau_update(&p, &mut s, &[0.5]), PlateauDecision::Hold);
        assert_eq!(s.stagnant_at_min, 0);
        assert_eq!(plateau_update(&p, &mut s, &[0.5]), PlateauDecision::Hold);
        assert_eq!(plateau_update(&p, &mut s, &[0.5]), PlateauDecision::Stop);
    }

    #[test]
    fn warm_phase_holds_the_initial_rate() {
        let p = DecayPolicy {
            kind: PolicyKind::WarmThenPlateau,
            warm_steps: 2000,
            ..policy()
        };
        let mut s = p.start();
        assert_eq!(p.end_period(&mut s, 1000, &[1.0]), PlateauDecision::Hold);
        assert_eq!(p.end_period(&mut s, 2000, &[1.0]), PlateauDecision::Hold);
        assert_eq!(p.rate(&s, 2000).unwrap(), 1e-3);
        assert_eq!(p.end_period(&mut s, 3000, &[1.0]), PlateauDecision::Halve);
        assert_eq!(p.rate(&s, 3001).unwrap(), 5e-4);
    }

    #[test]
    fn table_rates_and_validation() {
        assert_eq!(DecayPolicy::for_scheme(SchemeKind::Dbsde).gamma0, 1e-2);
        assert_eq!(DecayPolicy::for_scheme(SchemeKind::Ldbsde).gamma_min, 1e-5);
        assert!(DecayPolicy::default().validate().is_ok());
        let bad = DecayPolicy {
            probe_every: 300,
            ..DecayPolicy::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "train.policy.period"));
    }
}
