//! Deterministic synthetic cohorts with smooth, heavy-tailed and spiky
//! variables, plus noisy threshold labels for utility checks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{quantile_sorted, summary_features, PhysicalRange};
use crate::pipeline::CohortView;

pub const MIN_SYNTH_STAYS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Process {
    /// Gaussian AR(1) with unit stationary variance.
    AR1,
    /// Gaussian AR(1) passed through a lognormal link, giving a
    /// right-skewed, heavy-tailed marginal.
    AR1HeavyTail,
    /// Low-weight AR(1) baseline plus Poisson-arriving spikes with
    /// exponential amplitudes and geometric decay.
    SpikyPoisson,
}

fn default_tail() -> f64 {
    0.6
}
fn default_spike_rate() -> f64 {
    0.08
}
fn default_spike_scale() -> f64 {
    1.0
}
fn default_spike_decay() -> f64 {
    0.6
}
fn default_baseline_weight() -> f64 {
    0.4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthVariable {
    pub name: String,
    pub process: Process,
    pub phi: f64,
    pub base_mu: f64,
    pub base_sigma: f64,
    /// Physical range `[lo, hi]`; generated values are clipped to it.
    pub range: [f64; 2],
    /// Share of the latent standard deviation given to a per-stay offset.
    #[serde(default)]
    pub stay_effect: f64,
    /// Lognormal link scale for `AR1HeavyTail`.
    #[serde(default = "default_tail")]
    pub tail: f64,
    #[serde(default = "default_spike_rate")]
    pub spike_rate: f64,
    #[serde(default = "default_spike_scale")]
    pub spike_scale: f64,
    #[serde(default = "default_spike_decay")]
    pub spike_decay: f64,
    #[serde(default = "default_baseline_weight")]
    pub baseline_weight: f64,
}

impl SynthVariable {
    pub fn new(
        name: &str,
        process: Process,
        phi: f64,
        base_mu: f64,
        base_sigma: f64,
        range: [f64; 2],
    ) -> Self {
        Self {
            name: name.into(),
            process,
            phi,
            base_mu,
            base_sigma,
            range,
            stay_effect: 0.0,
            tail: default_tail(),
            spike_rate: default_spike_rate(),
            spike_scale: default_spike_scale(),
            spike_decay: default_spike_decay(),
            baseline_weight: default_baseline_weight(),
        }
    }

    pub fn with_stay_effect(mut self, s: f64) -> Self {
        self.stay_effect = s;
        self
    }

    pub fn physical_range(&self) -> Result<PhysicalRange> {
        PhysicalRange::new(self.name.clone(), self.range[0], self.range[1])
    }
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    /// `<summary>_<variable>` with summary one of mean, max, min, slope.
    pub feature: String,
    pub quantile: f64,
    /// Probability of flipping each label.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_stays: usize,
    pub t_max: u32,
    pub seed: u64,
    pub variables: Vec<SynthVariable>,
    pub label_rule: LabelRule,
}

impl Default for SynthSpec {
    /// 500 stays by 48 hours: HR-like smooth AR(1), Glucose-like heavy
    /// tail, Lactate-like spikes.
    fn default() -> Self {
        Self {
            n_stays: 500,
            t_max: 47,
            seed: 7,
            variables: vec![
                SynthVariable::new("HR", Process::AR1, 0.85, 85.0, 12.0, [20.0, 250.0])
                    .with_stay_effect(0.5),
                SynthVariable::new(
                    "Glucose",
                    Process::AR1HeavyTail,
                    0.8,
                    140.0,
                    40.0,
                    [20.0, 1000.0],
                )
                .with_stay_effect(0.5),
                SynthVariable::new("Lactate", Process::SpikyPoisson, 0.5, 2.5, 0.8, [0.1, 30.0])
                    .with_stay_effect(0.3),
            ],
            label_rule: LabelRule {
                feature: "mean_HR".into(),
                quantile: 0.5,
                noise: 0.1,
            },
        }
    }
}

impl SynthSpec {
    pub fn from_yaml(text: &str) -> Result<Self> {
        let s: Self = serde_yaml::from_str(text).map_err(|e| {
            let (line, column) = e
                .location()
                .map(|l| (l.line(), l.column()))
                .unwrap_or((0, 0));
            Error::ParseError {
                line,
                column,
                message: e.to_string(),
            }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("synth spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stays < MIN_SYNTH_STAYS {
            return Err(Error::ConfigError(format!(
                "n_stays {} below {MIN_SYNTH_STAYS}",
                self.n_stays
            )));
        }
        if self.variables.is_empty() {
            return Err(Error::ConfigError("no variables".into()));
        }
        for v in &self.variables {
            if !(v.phi.abs() < 1.0) {
                return Err(Error::ConfigError(format!("{}: |phi| must be < 1", v.name)));
            }
            if !(v.base_sigma > 0.0) {
                return Err(Error::ConfigError(format!(
                    "{}: base_sigma must be > 0",
                    v.name
                )));
            }
            if !(0.0..1.0).contains(&v.stay_effect) {
                return Err(Error::ConfigError(format!(
                    "{}: stay_effect must lie in [0, 1)",
                    v.name
                )));
            }
            if !(0.0..1.0).contains(&v.spike_decay)
                || !(v.spike_rate >= 0.0)
                || !(v.spike_scale > 0.0)
            {
                return Err(Error::ConfigError(format!(
                    "{}: invalid spike parameters",
                    v.name
                )));
            }
            v.physical_range()?;
        }
        let r = &self.label_rule;
        if !(0.0..=1.0).contains(&r.quantile) || !(0.0..=1.0).contains(&r.noise) {
            return Err(Error::ConfigError(
                "label quantile and noise must lie in [0, 1]".into(),
            ));
        }
        parse_feature(&r.feature)?;
        Ok(())
    }
}

pub fn stay_id(i: usize) -> String {
    format!("stay{i:05}")
}

fn ar1(rng: &mut ChaCha8Rng, phi: f64, n: usize) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut x: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        let e: f64 = rng.sample(StandardNormal);
        x = phi * x + innov * e;
    }
    out
}

/// Unit-variance latent: optional stay offset mixed with an AR(1) path.
fn latent(rng: &mut ChaCha8Rng, v: &SynthVariable, n: usize) -> Vec<f64> {
    let b: f64 = rng.sample(StandardNormal);
    let w = (1.0 - v.stay_effect * v.stay_effect).sqrt();
    ar1(rng, v.phi, n)
        .into_iter()
        .map(|a| v.stay_effect * b + w * a)
        .collect()
}

/// Zero-mean, unit-variance series for one stay.
fn simulate(rng: &mut ChaCha8Rng, v: &SynthVariable, n: usize) -> Vec<f64> {
    match v.process {
        Process::AR1 => latent(rng, v, n),
        Process::AR1HeavyTail => {
            let s = v.tail;
            let mean = (s * s / 2.0).exp();
            let sd = (((s * s).exp() - 1.0) * (s * s).exp()).sqrt();
            latent(rng, v, n)
                .into_iter()
                .map(|g| ((s * g).exp() - mean) / sd)
                .collect()
        }
        Process::SpikyPoisson => {
            let base = latent(rng, v, n);
            let (lambda, a, d) = (v.spike_rate, v.spike_scale, v.spike_decay);
            let amp = Exp::new(1.0 / a).expect("positive scale");
            let arrivals = (lambda > 0.0).then(|| Poisson::new(lambda).expect("positive rate"));
            let mut level = 0.0;
            let spikes: Vec<f64> = (0..n)
                .map(|_| {
                    level *= d;
                    let k = arrivals.as_ref().map(|p| p.sample(rng) as u64).unwrap_or(0);
                    for _ in 0..k {
                        level += amp.sample(rng);
                    }
                    level
                })
                .collect();
            let s_mean = lambda * a / (1.0 - d);
            let s_var = lambda * 2.0 * a * a / (1.0 - d * d);
            let wb = v.baseline_weight;
            let sd = (wb * wb + s_var).sqrt();
            base.iter()
                .zip(&spikes)
                .map(|(b, s)| (wb * b + s - s_mean) / sd)
                .collect()
        }
    }
}

/// Generate the cohort. Each (stay, variable) cell draws from its own
/// ChaCha stream, so output is independent of thread scheduling.
pub fn gen_cohort(spec: &SynthSpec) -> Result<CohortView> {
    spec.validate()?;
    let n = spec.t_max as usize + 1;
    let mut view = CohortView::new(0, n);
    for (vi, v) in spec.variables.iter().enumerate() {
        let range = v.physical_range()?;
        let stays: BTreeMap<String, Vec<f64>> = (0..spec.n_stays)
            .into_par_iter()
            .map(|si| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(((si as u64) << 16) | vi as u64);
                let s = simulate(&mut rng, v, n)
                    .into_iter()
                    .map(|u| range.clip(v.base_mu + v.base_sigma * u))
                    .collect();
                (stay_id(si), s)
            })
            .collect();
        view.insert_variable(&v.name, stays, Some(range))?;
    }
    Ok(view)
}

fn parse_feature(feature: &str) -> Result<(usize, &str)> {
    let (summary, var) = feature
        .split_once('_')
        .ok_or_else(|| Error::ConfigError(format!("feature `{feature}` must look like mean_HR")))?;
    let idx = match summary {
        "mean" => 0,
        "max" => 1,
        "min" => 2,
        "slope" => 3,
        other => return Err(Error::ConfigError(format!("unknown summary `{other}`"))),
    };
    Ok((idx, var))
}

/// Label each stay 1 when its summary feature exceeds the cohort quantile,
/// then flip each label independently with probability `rule.noise`.
pub fn gen_labels(
    cohort: &CohortView,
    rule: &LabelRule,
    seed: u64,
) -> Result<BTreeMap<String, bool>> {
    let (idx, var) = parse_feature(&rule.feature)?;
    let data = cohort.variable(var)?;
    let feats: Vec<(String, f64)> = data
        .stays
        .iter()
        .map(|(id, s)| (id.clone(), summary_features(s)[idx]))
        .collect();
    let mut sorted: Vec<f64> = feats.iter().map(|f| f.1).collect();
    sorted.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&sorted, rule.quantile);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    Ok(feats
        .into_iter()
        .map(|(id, f)| {
            let flip = rng.gen_bool(rule.noise);
            (id, (f > threshold) ^ flip)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_round_trips_through_yaml() {
        let s = SynthSpec::default();
        assert_eq!(SynthSpec::from_yaml(&s.to_yaml()).unwrap(), s);
        let bundled = SynthSpec::from_yaml(include_str!("../assets/synth/default.yaml")).unwrap();
        assert_eq!(bundled, s);
    }

    #[test]
    fn validation() {
        let s = SynthSpec {
            n_stays: 10,
            ..SynthSpec::default()
        };
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.variables[0].phi = 1.0;
        assert!(s.validate().is_err());
        assert!(SynthSpec::from_yaml("n_stays: 30\nbogus: 1\n").is_err());
    }

    #[test]
    fn deterministic_and_in_range() {
        let mut s = SynthSpec {
            n_stays: 40,
            ..SynthSpec::default()
        };
        let a = gen_cohort(&s).unwrap();
        let b = gen_cohort(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.t_len, 48);
        for v in a.variables.values() {
            let r = v.range.as_ref().unwrap();
            assert!(v.stays.values().flatten().all(|&x| r.contains(x)));
        }
        s.seed += 1;
        assert_ne!(gen_cohort(&s).unwrap(), a);
    }

    #[test]
    fn exact_half_without_noise() {
        let s = SynthSpec::default();
        let c = gen_cohort(&s).unwrap();
        let rule = LabelRule {
            feature: "mean_HR".into(),
            quantile: 0.5,
            noise: 0.0,
        };
        let l = gen_labels(&c, &rule, 1).unwrap();
        let pos = l.values().filter(|&&x| x).count();
        assert!((pos as i64 - 250).abs() <= 1, "{pos}");
        assert!(gen_labels(
            &c,
            &LabelRule {
                feature: "mean_SpO2".into(),
                quantile: 0.5,
                noise: 0.0
            },
            1
        )
        .is_err());
    }
}
