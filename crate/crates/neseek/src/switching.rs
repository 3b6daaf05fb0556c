//! Semi-Markov mode-switching signals: sojourn-time distributions, the
//! embedded jump chain, seeded trajectory generation, and sojourn statistics.
//!
//! The process is realized constructively as (per-mode sojourn distribution,
//! embedded jump chain). When only transition-rate intervals are available,
//! the embedded chain defaults to the normalized midpoints of the
//! off-diagonal intervals; the raw intervals themselves are carried along
//! purely as vertices for the mean-square stability check. The time-varying
//! rates written elsewhere as `lambda_mn` and the transition-model rates
//! `iota_mn` are treated as the same object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Hard cap on jumps per generated signal.
const MAX_JUMPS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SojournDistribution {
    Weibull { scale: f64, shape: f64 },
    Exponential { rate: f64 },
}

impl SojournDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SojournDistribution::Weibull { scale, shape } => {
                if scale <= 0.0 || shape <= 0.0 {
                    return Err(Error::invalid_config(format!(
                        "Weibull parameters must be positive (scale {scale}, shape {shape})"
                    )));
                }
            }
            SojournDistribution::Exponential { rate } => {
                if rate <= 0.0 {
                    return Err(Error::invalid_config(format!(
                        "Exponential rate must be positive, got {rate}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            SojournDistribution::Weibull { scale, shape } => {
                1.0 - (-(x / scale).powf(shape)).exp()
            }
            SojournDistribution::Exponential { rate } => 1.0 - (-rate * x).exp(),
        }
    }

    /// Inverse-CDF transform; exact and branch-free, no rejection step.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&u));
        match *self {
            SojournDistribution::Weibull { scale, shape } => {
                scale * (-(1.0 - u).ln()).powf(1.0 / shape)
            }
            SojournDistribution::Exponential { rate } => -(1.0 - u).ln() / rate,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        // Draw until the sojourn is strictly positive so jump times stay
        // strictly increasing (u = 0 has probability ~2^-53 but is legal
        // output of gen_range).
        loop {
            let x = self.inverse_cdf(rng.gen_range(0.0..1.0));
            if x > 0.0 {
                return x;
            }
        }
    }
}

/// Specification of a semi-Markov switching process over modes `1..=s`.
#[derive(Debug, Clone)]
pub struct SemiMarkovSpec {
    /// Initial mode, 1-based.
    pub initial_mode: usize,
    /// One sojourn distribution per mode.
    pub sojourn: Vec<SojournDistribution>,
    /// Row-stochastic embedded jump chain with zero diagonal.
    pub embedded: Mat,
    /// Optional s x s transition-rate interval bounds `[lo, hi]`; only the
    /// off-diagonal entries are meaningful (the diagonal is `-sum` of the
    /// row). Metadata for the LMI vertex enumeration.
    pub rate_intervals: Option<Vec<Vec<(f64, f64)>>>,
}

impl SemiMarkovSpec {
    pub fn mode_count(&self) -> usize {
        self.sojourn.len()
    }

    /// Build with the default embedded chain: normalized midpoints of the
    /// off-diagonal rate intervals.
    pub fn from_rate_intervals(
        initial_mode: usize,
        sojourn: Vec<SojournDistribution>,
        rate_intervals: Vec<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        let s = sojourn.len();
        if rate_intervals.len() != s || rate_intervals.iter().any(|r| r.len() != s) {
            return Err(Error::invalid_config("rate interval table must be s x s"));
        }
        let mut embedded = Mat::zeros(s, s);
        for m in 0..s {
            let mids: Vec<f64> = (0..s)
                .map(|a| {
                    if a == m {
                        0.0
                    } else {
                        0.5 * (rate_intervals[m][a].0 + rate_intervals[m][a].1)
                    }
                })
                .collect();
            let total: f64 = mids.iter().sum();
            if total <= 0.0 {
                return Err(Error::invalid_config(format!(
                    "rate intervals of mode {} give a degenerate embedded row",
                    m + 1
                )));
            }
            for a in 0..s {
                embedded[(m, a)] = mids[a] / total;
            }
        }
        let spec = SemiMarkovSpec {
            initial_mode,
            sojourn,
            embedded,
            rate_intervals: Some(rate_intervals),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.mode_count();
        if s < 2 {
            return Err(Error::invalid_config(
                "a semi-Markov spec needs at least two modes (no valid embedded row otherwise)",
            ));
        }
        if self.initial_mode < 1 || self.initial_mode > s {
            return Err(Error::invalid_config(format!(
                "initial mode {} out of range 1..={s}",
                self.initial_mode
            )));
        }
        for d in &self.sojourn {
            d.validate()?;
        }
        if self.embedded.rows() != s || self.embedded.cols() != s {
            return Err(Error::invalid_config("embedded chain must be s x s"));
        }
        for m in 0..s {
            if self.embedded[(m, m)] != 0.0 {
                return Err(Error::invalid_config(format!(
                    "embedded chain diagonal must be zero (mode {})",
                    m + 1
                )));
            }
            let mut sum = 0.0;
            for a in 0..s {
                let p = self.embedded[(m, a)];
                if p < 0.0 {
                    return Err(Error::invalid_config("embedded chain entries must be >= 0"));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::invalid_config(format!(
                    "embedded chain row {} sums to {sum}, expected 1",
                    m + 1
                )));
            }
        }
        if let Some(rates) = &self.rate_intervals {
            if rates.len() != s || rates.iter().any(|r| r.len() != s) {
                return Err(Error::invalid_config("rate interval table must be s x s"));
            }
            for (m, row) in rates.iter().enumerate() {
                for (a, &(lo, hi)) in row.iter().enumerate() {
                    if lo > hi {
                        return Err(Error::invalid_config(format!(
                            "rate interval ({}, {}) has lo {lo} > hi {hi}",
                            m + 1,
                            a + 1
                        )));
                    }
                    if a != m && lo < 0.0 {
                        return Err(Error::invalid_config(format!(
                            "off-diagonal rate interval ({}, {}) must be >= 0",
                            m + 1,
                            a + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn draw_next_mode(&self, current: usize, rng: &mut ChaCha8Rng) -> usize {
        let s = self.mode_count();
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut last_positive = current;
        for a in 0..s {
            let p = self.embedded[(current, a)];
            if p > 0.0 {
                last_positive = a;
                acc += p;
                if u < acc {
                    return a;
                }
            }
        }
        // Rounding in the cumulative sum can leave u just above acc.
        last_positive
    }
}

/// A realized piecewise-constant mode trajectory.
///
/// `jump_times[k]` is the start of segment `k` (the first is 0) and
/// `modes[k]` its 1-based mode; the signal is right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    jump_times: Vec<f64>,
    modes: Vec<usize>,
    horizon: f64,
}

impl SwitchingSignal {
    pub fn new(jump_times: Vec<f64>, modes: Vec<usize>, horizon: f64) -> Result<Self> {
        if jump_times.is_empty() || jump_times[0] != 0.0 {
            return Err(Error::invalid_argument("jump times must start at 0"));
        }
        if jump_times.len() != modes.len() {
            return Err(Error::invalid_argument(
                "need exactly one mode per segment",
            ));
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid_argument("jump times must be strictly increasing"));
        }
        if modes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid_argument("consecutive modes must differ"));
        }
        Ok(SwitchingSignal {
            jump_times,
            modes,
            horizon,
        })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Mode at time `t`, right-continuous: at a jump instant the post-jump
    /// mode is returned.
    pub fn mode_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::invalid_argument(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        let idx = self.jump_times.partition_point(|&jt| jt <= t);
        Ok(self.modes[idx - 1])
    }

    /// Completed sojourn durations grouped by 1-based mode; the final,
    /// horizon-truncated segment is excluded.
    pub fn completed_sojourns(&self, mode_count: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); mode_count];
        for k in 0..self.jump_times.len() - 1 {
            let dur = self.jump_times[k + 1] - self.jump_times[k];
            out[self.modes[k] - 1].push(dur);
        }
        out
    }
}

/// Generate a switching signal on `[0, horizon]`, deterministic per seed.
///
/// Starting from the configured initial mode, repeatedly draws a sojourn by
/// inverse-CDF transform and then the next mode from the embedded chain row,
/// truncating at the horizon.
pub fn sample_signal(spec: &SemiMarkovSpec, horizon: f64, seed: u64) -> Result<SwitchingSignal> {
    spec.validate()?;
    if horizon <= 0.0 || !horizon.is_finite() {
        return Err(Error::invalid_argument("horizon must be positive and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jump_times = vec![0.0];
    let mut modes = vec![spec.initial_mode];
    let mut t = 0.0;
    let mut mode = spec.initial_mode - 1;
    loop {
        let sojourn = spec.sojourn[mode].sample(&mut rng);
        t += sojourn;
        if t >= horizon {
            break;
        }
        mode = spec.draw_next_mode(mode, &mut rng);
        jump_times.push(t);
        modes.push(mode + 1);
        if jump_times.len() > MAX_JUMPS {
            return Err(Error::Internal(format!(
                "switching signal exceeded {MAX_JUMPS} jumps before reaching the horizon"
            )));
        }
    }
    SwitchingSignal::new(jump_times, modes, horizon)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ModeSojournStats {
    /// 1-based mode id.
    pub mode: usize,
    pub count: usize,
    pub mean: f64,
    /// Kolmogorov-Smirnov distance between the empirical sojourn CDF and the
    /// spec distribution for this mode.
    pub ks_distance: f64,
}

/// Per-mode sojourn statistics of one or more signals against `spec`.
pub fn sojourn_statistics(
    spec: &SemiMarkovSpec,
    signals: &[SwitchingSignal],
) -> Result<Vec<ModeSojournStats>> {
    if signals.is_empty() {
        return Err(Error::invalid_argument("sojourn_statistics needs at least one signal"));
    }
    let s = spec.mode_count();
    let mut samples = vec![Vec::new(); s];
    for sig in signals {
        for (m, durs) in sig.completed_sojourns(s).into_iter().enumerate() {
            samples[m].extend(durs);
        }
    }
    let mut out = Vec::with_capacity(s);
    for (m, mut xs) in samples.into_iter().enumerate() {
        if xs.is_empty() {
            return Err(Error::invalid_argument(format!(
                "mode {} has no completed sojourn",
                m + 1
            )));
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nn = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / nn;
        let mut ks = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = spec.sojourn[m].cdf(x);
            ks = ks.max((f - i as f64 / nn).abs());
            ks = ks.max((f - (i + 1) as f64 / nn).abs());
        }
        out.push(ModeSojournStats {
            mode: m + 1,
            count: xs.len(),
            mean,
            ks_distance: ks,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_mode_spec(sojourn: SojournDistribution) -> SemiMarkovSpec {
        SemiMarkovSpec {
            initial_mode: 1,
            sojourn: vec![sojourn; 2],
            embedded: Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            rate_intervals: None,
        }
    }

    #[test]
    fn single_mode_spec_rejected() {
        let spec = SemiMarkovSpec {
            initial_mode: 1,
            sojourn: vec![SojournDistribution::Exponential { rate: 1.0 }],
            embedded: Mat::zeros(1, 1),
            rate_intervals: None,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn weibull_inverse_cdf_identity() {
        // F(1) = 1 - e^{-1} for scale 1, any shape; the inverse transform of
        // that u recovers 1.0 up to rounding.
        let d = SojournDistribution::Weibull { scale: 1.0, shape: 1.5 };
        let u = 1.0 - (-1.0f64).exp();
        assert!((d.inverse_cdf(u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weibull_sojourn_mean_matches_quadrature() {
        // Oracle: E[X] = integral of (1 - F(x)) dx by Simpson's rule.
        let d = SojournDistribution::Weibull { scale: 1.0, shape: 1.5 };
        let (a, b, m) = (0.0, 40.0, 400_000);
        let h = (b - a) / m as f64;
        let g = |x: f64| 1.0 - d.cdf(x);
        let mut integral = g(a) + g(b);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * g(a + i as f64 * h);
        }
        integral *= h / 3.0;

        let spec = two_mode_spec(d);
        let sig = sample_signal(&spec, 100_000.0, 9).unwrap();
        let stats = sojourn_statistics(&spec, &[sig]).unwrap();
        let total: usize = stats.iter().map(|s| s.count).sum();
        assert!(total > 50_000, "want ~1e5 sojourns, got {total}");
        for s in &stats {
            let rel = (s.mean - integral).abs() / integral;
            assert!(rel < 0.02, "mode {} mean {} vs {}", s.mode, s.mean, integral);
        }
    }

    #[test]
    fn ks_distance_detects_matching_and_mismatched_distribution() {
        let weib = two_mode_spec(SojournDistribution::Weibull { scale: 1.0, shape: 1.5 });
        let sig = sample_signal(&weib, 20_000.0, 4).unwrap();
        let stats = sojourn_statistics(&weib, &[sig.clone()]).unwrap();
        for s in &stats {
            assert!(s.count >= 9_000);
            assert!(s.ks_distance < 0.02, "mode {} ks {}", s.mode, s.ks_distance);
        }

        // Same exponential-generated signal judged against a Weibull k=3 spec.
        let exp = two_mode_spec(SojournDistribution::Exponential { rate: 1.0 });
        let sig = sample_signal(&exp, 20_000.0, 4).unwrap();
        let wrong = two_mode_spec(SojournDistribution::Weibull { scale: 1.0, shape: 3.0 });
        let stats = sojourn_statistics(&wrong, &[sig]).unwrap();
        for s in &stats {
            assert!(s.ks_distance > 0.1, "mode {} ks {}", s.mode, s.ks_distance);
        }
    }

    #[test]
    fn single_sojourn_mean_is_exact() {
        let spec = two_mode_spec(SojournDistribution::Exponential { rate: 0.5 });
        let sig = SwitchingSignal::new(vec![0.0, 1.75, 3.0], vec![1, 2, 1], 4.0).unwrap();
        let stats = sojourn_statistics(&spec, &[sig]).unwrap();
        assert_eq!(stats[0].count, 1);
        assert_eq!(stats[0].mean, 1.75);
        assert_eq!(stats[1].mean, 1.25);
    }

    #[test]
    fn mode_at_is_right_continuous() {
        let sig = SwitchingSignal::new(vec![0.0, 2.0], vec![1, 2], 5.0).unwrap();
        assert_eq!(sig.mode_at(1.5).unwrap(), 1);
        assert_eq!(sig.mode_at(2.0).unwrap(), 2);
        assert_eq!(sig.mode_at(0.0).unwrap(), 1);
        assert!(sig.mode_at(5.1).is_err());
        assert!(sig.mode_at(-0.1).is_err());
    }

    #[test]
    fn mode_just_before_jump_is_previous_segment() {
        let spec = two_mode_spec(SojournDistribution::Weibull { scale: 1.0, shape: 1.5 });
        let sig = sample_signal(&spec, 50.0, 123).unwrap();
        assert!(sig.jump_times().len() > 10);
        for k in 1..sig.jump_times().len() {
            let t = sig.jump_times()[k];
            assert_eq!(sig.mode_at(t - 1e-12).unwrap(), sig.modes()[k - 1]);
            assert_eq!(sig.mode_at(t).unwrap(), sig.modes()[k]);
        }
    }

    #[test]
    fn sample_signal_is_deterministic_per_seed() {
        let spec = two_mode_spec(SojournDistribution::Weibull { scale: 1.0, shape: 1.5 });
        let a = sample_signal(&spec, 200.0, 77).unwrap();
        let b = sample_signal(&spec, 200.0, 77).unwrap();
        assert_eq!(a, b);
        let c = sample_signal(&spec, 200.0, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn embedded_chain_from_rate_interval_midpoints() {
        let rates = vec![
            vec![(-5.2, -1.3), (0.5, 3.0), (0.8, 2.2)],
            vec![(0.6, 2.0), (-7.0, -2.0), (1.4, 5.0)],
            vec![(0.3, 5.6), (0.7, 4.4), (-10.0, -1.0)],
        ];
        let spec = SemiMarkovSpec::from_rate_intervals(
            1,
            vec![SojournDistribution::Weibull { scale: 1.0, shape: 1.5 }; 3],
            rates,
        )
        .unwrap();
        // Row 1 midpoints: 1.75 and 1.5; normalized.
        assert!((spec.embedded[(0, 1)] - 1.75 / 3.25).abs() < 1e-15);
        assert!((spec.embedded[(0, 2)] - 1.5 / 3.25).abs() < 1e-15);
        assert_eq!(spec.embedded[(0, 0)], 0.0);
        spec.validate().unwrap();
    }

    #[test]
    fn invalid_specs_rejected() {
        // Degenerate embedded row.
        let spec = SemiMarkovSpec {
            initial_mode: 1,
            sojourn: vec![SojournDistribution::Exponential { rate: 1.0 }; 2],
            embedded: Mat::zeros(2, 2),
            rate_intervals: None,
        };
        assert!(spec.validate().is_err());
        // Bad Weibull.
        assert!(SojournDistribution::Weibull { scale: 0.0, shape: 1.0 }.validate().is_err());
        // Nonzero diagonal.
        let spec = SemiMarkovSpec {
            initial_mode: 1,
            sojourn: vec![SojournDistribution::Exponential { rate: 1.0 }; 2],
            embedded: Mat::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap(),
            rate_intervals: None,
        };
        assert!(spec.validate().is_err());
    }
}
