//! Bayesian online change-point detection for daily count series under a
//! Poisson likelihood with a conjugate Gamma prior on the rate.
//!
//! Run length convention: `r_t = r` means the regime containing day `t` started
//! on day `t - r`, so the predictive for `x_t` conditions on the `r` counts
//! `x_{t-r} .. x_{t-1}`. Column `t` of the posterior therefore ranges over
//! `0..=t`, and a reset to `r_t = 0` marks day `t` as the first day of a new
//! regime. Hazard is constant at `1 / h0` per day.

use chrono::NaiveDate;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{
    candidates_from_days, to_daily_counts, CandidateMoC, CountSource, DailyCountSeries,
    EventHistory,
};

/// Run lengths whose posterior probability falls below this are dropped.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonGammaPrior {
    alpha0: f64,
    beta0: f64,
    hazard: f64,
}

impl PoissonGammaPrior {
    /// `hazard` is the expected run length `h0`; the per-day change
    /// probability is `1 / h0`.
    pub fn new(alpha0: f64, beta0: f64, hazard: f64) -> Result<Self> {
        if !(alpha0.is_finite() && alpha0 > 0.0) {
            return Err(Error::invalid(format!(
                "alpha0 must be positive, got {alpha0}"
            )));
        }
        if !(beta0.is_finite() && beta0 > 0.0) {
            return Err(Error::invalid(format!(
                "beta0 must be positive, got {beta0}"
            )));
        }
        if !(hazard.is_finite() && hazard >= 1.0) {
            return Err(Error::invalid(format!("hazard must be >= 1, got {hazard}")));
        }
        Ok(Self {
            alpha0,
            beta0,
            hazard,
        })
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn hazard(&self) -> f64 {
        self.hazard
    }

    fn change_prob(&self) -> f64 {
        self.hazard.recip()
    }
}

/// The two configurations compared in the original study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BocpdPreset {
    /// alpha0 = 0.01, beta0 = 10, h0 = 1000: conservative.
    One,
    /// alpha0 = 1, beta0 = 1, h0 = 10: eager.
    Two,
}

impl BocpdPreset {
    pub fn prior(self) -> PoissonGammaPrior {
        match self {
            BocpdPreset::One => PoissonGammaPrior {
                alpha0: 0.01,
                beta0: 10.0,
                hazard: 1e3,
            },
            BocpdPreset::Two => PoissonGammaPrior {
                alpha0: 1.0,
                beta0: 1.0,
                hazard: 10.0,
            },
        }
    }

    pub fn method_id(self) -> &'static str {
        match self {
            BocpdPreset::One => "bocpd_pg_1",
            BocpdPreset::Two => "bocpd_pg_2",
        }
    }
}

/// Log of the negative-binomial predictive obtained by integrating the Poisson
/// rate against Gamma(alpha, beta) (shape/rate).
fn ln_nb_predictive(x: u64, alpha: f64, beta: f64) -> f64 {
    let x = x as f64;
    ln_gamma(x + alpha)
        - ln_gamma(x + 1.0)
        - ln_gamma(alpha)
        - alpha * beta.recip().ln_1p()
        - x * beta.ln_1p()
}

/// Negative-binomial pmf `Γ(x+α) / (x! Γ(α)) · (β/(β+1))^α · (1/(β+1))^x`.
pub fn nb_predictive(x: u64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid(format!(
            "predictive needs finite positive parameters, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok(ln_nb_predictive(x, alpha, beta).exp())
}

/// One posterior column, stored sparsely after pruning. Run lengths ascend.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorColumn {
    run_lengths: Vec<usize>,
    probs: Vec<f64>,
}

impl PosteriorColumn {
    pub fn run_lengths(&self) -> &[usize] {
        &self.run_lengths
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.run_lengths
            .iter()
            .copied()
            .zip(self.probs.iter().copied())
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Most probable run length; ties go to the shorter run.
    pub fn argmax(&self) -> usize {
        argmax(self.iter())
    }
}

fn argmax(items: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (r, v) in items {
        if v > best.1 {
            best = (r, v);
        }
    }
    best.0
}

/// Per-day distribution over run lengths, as produced by [`run_bocpd`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunLengthPosterior {
    prior: PoissonGammaPrior,
    start_day: NaiveDate,
    columns: Vec<PosteriorColumn>,
}

impl RunLengthPosterior {
    pub fn prior(&self) -> PoissonGammaPrior {
        self.prior
    }

    pub fn start_day(&self) -> NaiveDate {
        self.start_day
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[PosteriorColumn] {
        &self.columns
    }

    pub fn column(&self, t: usize) -> &PosteriorColumn {
        &self.columns[t]
    }

    /// Column `t` expanded to a dense vector over run lengths `0..=t`.
    pub fn dense_column(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; t + 1];
        for (r, p) in self.columns[t].iter() {
            out[r] = p;
        }
        out
    }

    pub fn prob(&self, t: usize, run_length: usize) -> f64 {
        let col = &self.columns[t];
        col.run_lengths
            .binary_search(&run_length)
            .map(|i| col.probs[i])
            .unwrap_or(0.0)
    }
}

/// Prefix sums: `prefix[k]` is the total of the first `k` counts.
fn prefix_sums(counts: &[u64]) -> Vec<u64> {
    let mut prefix = Vec::with_capacity(counts.len() + 1);
    prefix.push(0);
    let mut acc = 0u64;
    for &c in counts {
        acc += c;
        prefix.push(acc);
    }
    prefix
}

/// Log predictive of `x_t` for a regime that has already absorbed the `r`
/// counts immediately before `t`.
fn ln_run_predictive(prior: &PoissonGammaPrior, prefix: &[u64], t: usize, r: usize, x: u64) -> f64 {
    let in_run = (prefix[t] - prefix[t - r]) as f64;
    ln_nb_predictive(x, prior.alpha0 + in_run, prior.beta0 + r as f64)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn run_bocpd(
    series: &DailyCountSeries,
    prior: &PoissonGammaPrior,
) -> Result<RunLengthPosterior> {
    run_bocpd_with_threshold(series, prior, PRUNE_THRESHOLD)
}

/// As [`run_bocpd`] with an explicit pruning threshold (`0.0` disables pruning).
pub fn run_bocpd_with_threshold(
    series: &DailyCountSeries,
    prior: &PoissonGammaPrior,
    prune_below: f64,
) -> Result<RunLengthPosterior> {
    if series.is_empty() {
        return Err(Error::EmptyInput("count series"));
    }
    let counts = &series.counts;
    let prefix = prefix_sums(counts);
    let ln_h = prior.change_prob().ln();
    let ln_1mh = (-prior.change_prob()).ln_1p();

    let mut columns = Vec::with_capacity(counts.len());
    columns.push(PosteriorColumn {
        run_lengths: vec![0],
        probs: vec![1.0],
    });

    let mut run_lengths = Vec::new();
    let mut log_joint = Vec::new();
    for (t, &x) in counts.iter().enumerate().skip(1) {
        let prev = &columns[t - 1];
        run_lengths.clear();
        log_joint.clear();

        // previous column is normalised, so the change branch is h * prior predictive
        run_lengths.push(0);
        log_joint.push(ln_h + ln_nb_predictive(x, prior.alpha0, prior.beta0));
        if ln_1mh.is_finite() {
            for (r_prev, p_prev) in prev.iter() {
                let r = r_prev + 1;
                run_lengths.push(r);
                log_joint.push(p_prev.ln() + ln_1mh + ln_run_predictive(prior, &prefix, t, r, x));
            }
        }

        let norm = log_sum_exp(&log_joint);
        let mut col = PosteriorColumn {
            run_lengths: Vec::with_capacity(run_lengths.len()),
            probs: Vec::with_capacity(run_lengths.len()),
        };
        for (&r, &lj) in run_lengths.iter().zip(&log_joint) {
            let p = (lj - norm).exp();
            if p >= prune_below && p > 0.0 {
                col.run_lengths.push(r);
                col.probs.push(p);
            }
        }
        let kept: f64 = col.probs.iter().sum();
        for p in &mut col.probs {
            *p /= kept;
        }
        columns.push(col);
    }

    Ok(RunLengthPosterior {
        prior: *prior,
        start_day: series.start_day,
        columns,
    })
}

/// The single most probable segmentation of a series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    /// First day of each regime after the first; strictly increasing.
    pub change_days: Vec<NaiveDate>,
    /// Run length along the maximising trajectory, one per day.
    pub map_run_lengths: Vec<usize>,
}

/// Viterbi maximisation over run-length trajectories, restricted to the run
/// lengths the posterior retained.
///
/// For `r > 0` the only way into `(t, r)` is growth from `(t-1, r-1)`; the
/// reset state `(t, 0)` takes the best of the whole previous column. Backtracking
/// from the final column's best state yields the regime starts.
pub fn map_segmentation(
    posterior: &RunLengthPosterior,
    series: &DailyCountSeries,
) -> Result<Segmentation> {
    if posterior.len() != series.len() || posterior.start_day() != series.start_day {
        return Err(Error::DimensionMismatch(format!(
            "posterior covers {} days from {}, series covers {} days from {}",
            posterior.len(),
            posterior.start_day(),
            series.len(),
            series.start_day
        )));
    }
    let n = series.len();
    let prior = posterior.prior();
    let counts = &series.counts;
    let prefix = prefix_sums(counts);
    let ln_h = prior.change_prob().ln();
    let ln_1mh = (-prior.change_prob()).ln_1p();

    // best_prev[t]: argmax run length of the Viterbi column at t-1
    let mut best_prev = vec![0usize; n];
    let mut prev_scores = vec![ln_nb_predictive(counts[0], prior.alpha0, prior.beta0)];
    let mut prev_support = vec![0usize];

    for t in 1..n {
        let x = counts[t];
        let (best_r, best_score) = prev_support
            .iter()
            .copied()
            .zip(prev_scores.iter().copied())
            .fold((0usize, f64::NEG_INFINITY), |acc, (r, s)| {
                if s > acc.1 {
                    (r, s)
                } else {
                    acc
                }
            });
        best_prev[t] = best_r;

        let support = posterior.column(t).run_lengths();
        let mut scores = Vec::with_capacity(support.len());
        for &r in support {
            let score = if r == 0 {
                best_score + ln_h + ln_nb_predictive(x, prior.alpha0, prior.beta0)
            } else {
                match prev_support.binary_search(&(r - 1)) {
                    Ok(i) => prev_scores[i] + ln_1mh + ln_run_predictive(&prior, &prefix, t, r, x),
                    Err(_) => f64::NEG_INFINITY,
                }
            };
            scores.push(score);
        }
        prev_support = support.to_vec();
        prev_scores = scores;
    }

    let mut run = argmax(
        prev_support
            .iter()
            .copied()
            .zip(prev_scores.iter().copied()),
    );
    let mut map_run_lengths = vec![0usize; n];
    let mut change_idx = Vec::new();
    let mut t = n - 1;
    loop {
        let start = t - run;
        for (k, slot) in map_run_lengths[start..=t].iter_mut().enumerate() {
            *slot = k;
        }
        if start == 0 {
            break;
        }
        change_idx.push(start);
        run = best_prev[start];
        t = start - 1;
    }
    change_idx.reverse();

    Ok(Segmentation {
        change_days: change_idx.into_iter().map(|i| series.day_at(i)).collect(),
        map_run_lengths,
    })
}

/// Posts-per-day BOCPD followed by MAP segmentation; one candidate per regime start.
pub fn detect_bocpd(
    history: &EventHistory,
    prior: &PoissonGammaPrior,
    method_id: &str,
) -> Result<Vec<CandidateMoC>> {
    let series = to_daily_counts(history, CountSource::Posts)?;
    let posterior = run_bocpd(&series, prior)?;
    let seg = map_segmentation(&posterior, &series)?;
    Ok(candidates_from_days(seg.change_days, method_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 6, 1).unwrap()
    }

    fn series(counts: Vec<u64>) -> DailyCountSeries {
        DailyCountSeries {
            start_day: day0(),
            counts,
            source: CountSource::Posts,
        }
    }

    fn poisson_segments(segments: &[(usize, f64)], seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for &(len, rate) in segments {
            let dist = Poisson::new(rate).unwrap();
            out.extend((0..len).map(|_| dist.sample(&mut rng) as u64));
        }
        out
    }

    fn change_offsets(seg: &Segmentation) -> Vec<i64> {
        seg.change_days
            .iter()
            .map(|d| (*d - day0()).num_days())
            .collect()
    }

    #[test]
    fn predictive_closed_form_points() {
        assert!((nb_predictive(0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!((nb_predictive(1, 1.0, 1.0).unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn predictive_normalises_small_shape() {
        let total: f64 = (0..=200)
            .map(|x| nb_predictive(x, 0.01, 10.0).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "sum = {total}");
    }

    #[test]
    fn predictive_rejects_bad_parameters() {
        assert!(nb_predictive(0, f64::NAN, 1.0).is_err());
        assert!(nb_predictive(0, 1.0, f64::INFINITY).is_err());
        assert!(nb_predictive(0, 0.0, 1.0).is_err());
    }

    #[test]
    fn prior_validation() {
        assert!(PoissonGammaPrior::new(0.0, 1.0, 10.0).is_err());
        assert!(PoissonGammaPrior::new(1.0, -1.0, 10.0).is_err());
        assert!(PoissonGammaPrior::new(1.0, 1.0, 0.5).is_err());
        assert!(PoissonGammaPrior::new(1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn presets_match_published_settings() {
        let p1 = BocpdPreset::One.prior();
        assert_eq!((p1.alpha0(), p1.beta0(), p1.hazard()), (0.01, 10.0, 1000.0));
        let p2 = BocpdPreset::Two.prior();
        assert_eq!((p2.alpha0(), p2.beta0(), p2.hazard()), (1.0, 1.0, 10.0));
    }

    #[test]
    fn single_observation_posterior() {
        let post = run_bocpd(&series(vec![4]), &BocpdPreset::Two.prior()).unwrap();
        assert_eq!(post.len(), 1);
        assert_eq!(post.dense_column(0), vec![1.0]);
        let seg = map_segmentation(&post, &series(vec![4])).unwrap();
        assert!(seg.change_days.is_empty());
        assert_eq!(seg.map_run_lengths, vec![0]);
    }

    #[test]
    fn constant_series_run_length_grows() {
        let s = series(vec![3; 60]);
        let prior = PoissonGammaPrior::new(1.0, 1.0, 10.0).unwrap();
        let post = run_bocpd(&s, &prior).unwrap();
        let modes: Vec<usize> = post.columns().iter().map(PosteriorColumn::argmax).collect();
        let t0 = modes
            .iter()
            .enumerate()
            .position(|(t, &m)| m == t)
            .expect("argmax never tracks t");
        for (t, &m) in modes.iter().enumerate().skip(t0) {
            assert_eq!(m, t, "argmax reset at t={t}");
        }
        assert!(t0 < 30, "burn-in too long: {t0}");
        assert!(map_segmentation(&post, &s).unwrap().change_days.is_empty());
    }

    #[test]
    fn reset_mass_peaks_at_rate_jump() {
        let s = series(poisson_segments(&[(100, 1.0), (100, 10.0)], 11));
        let prior = PoissonGammaPrior::new(1.0, 1.0, 100.0).unwrap();
        let post = run_bocpd(&s, &prior).unwrap();
        let peak = (1..s.len())
            .max_by(|&a, &b| post.prob(a, 0).total_cmp(&post.prob(b, 0)))
            .unwrap();
        assert!((peak as i64 - 100).abs() <= 3, "peak at {peak}");
    }

    #[test]
    fn columns_are_normalised() {
        let s = series(poisson_segments(&[(80, 2.0), (80, 7.0), (40, 0.5)], 3));
        for preset in [BocpdPreset::One, BocpdPreset::Two] {
            let post = run_bocpd(&s, &preset.prior()).unwrap();
            for (t, col) in post.columns().iter().enumerate() {
                assert!((col.sum() - 1.0).abs() < 1e-9, "t={t}");
                assert!(col.probs().iter().all(|p| (0.0..=1.0).contains(p)));
                assert!(col.run_lengths().iter().all(|&r| r <= t));
            }
        }
    }

    #[test]
    fn pruning_barely_moves_the_posterior() {
        let s = series(poisson_segments(&[(60, 1.0), (60, 6.0)], 5));
        let prior = BocpdPreset::Two.prior();
        let pruned = run_bocpd(&s, &prior).unwrap();
        let full = run_bocpd_with_threshold(&s, &prior, 0.0).unwrap();
        for t in 0..s.len() {
            let a = pruned.dense_column(t);
            let b = full.dense_column(t);
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            assert!(diff < 1e-9, "t={t} l1 diff {diff}");
        }
        assert_eq!(
            map_segmentation(&pruned, &s).unwrap(),
            map_segmentation(&full, &s).unwrap()
        );
    }

    #[test]
    fn recovers_single_jump() {
        let s = series(poisson_segments(&[(100, 1.0), (100, 10.0)], 21));
        let prior = PoissonGammaPrior::new(1.0, 1.0, 100.0).unwrap();
        let seg = map_segmentation(&run_bocpd(&s, &prior).unwrap(), &s).unwrap();
        let offs = change_offsets(&seg);
        assert_eq!(offs.len(), 1, "{offs:?}");
        assert!((offs[0] - 100).abs() <= 3);
    }

    #[test]
    fn recovers_two_jumps() {
        let s = series(poisson_segments(&[(80, 1.0), (80, 10.0), (80, 1.0)], 8));
        let prior = PoissonGammaPrior::new(1.0, 1.0, 100.0).unwrap();
        let seg = map_segmentation(&run_bocpd(&s, &prior).unwrap(), &s).unwrap();
        let offs = change_offsets(&seg);
        assert_eq!(offs.len(), 2, "{offs:?}");
        assert!(
            (offs[0] - 80).abs() <= 5 && (offs[1] - 160).abs() <= 5,
            "{offs:?}"
        );
    }

    #[test]
    fn map_run_lengths_match_change_days() {
        let s = series(poisson_segments(&[(50, 1.0), (50, 12.0)], 2));
        let seg = map_segmentation(&run_bocpd(&s, &BocpdPreset::Two.prior()).unwrap(), &s).unwrap();
        let resets: Vec<NaiveDate> = seg
            .map_run_lengths
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &r)| r == 0)
            .map(|(t, _)| s.day_at(t))
            .collect();
        assert_eq!(resets, seg.change_days);
    }

    #[test]
    fn dimension_mismatch() {
        let s = series(vec![1, 2, 3]);
        let post = run_bocpd(&s, &BocpdPreset::Two.prior()).unwrap();
        assert!(matches!(
            map_segmentation(&post, &series(vec![1, 2])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn unit_hazard_resets_every_day() {
        let s = series(vec![1, 5, 2, 0]);
        let prior = PoissonGammaPrior::new(1.0, 1.0, 1.0).unwrap();
        let post = run_bocpd(&s, &prior).unwrap();
        for t in 0..s.len() {
            assert_eq!(post.dense_column(t)[0], 1.0);
        }
        assert_eq!(map_segmentation(&post, &s).unwrap().change_days.len(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn huge_hazard_never_splits_iid_series(
                rate in 0.0f64..8.0,
                len in 1usize..=50,
                seed in any::<u64>(),
            ) {
                let counts = poisson_segments(&[(len, rate)], seed);
                let s = series(counts);
                let prior = PoissonGammaPrior::new(1.0, 1.0, 1e9).unwrap();
                let seg = map_segmentation(&run_bocpd(&s, &prior).unwrap(), &s).unwrap();
                prop_assert!(seg.change_days.is_empty());
            }

            #[test]
            fn change_days_shift_with_start_date(
                shift in -2000i64..2000,
                seed in any::<u64>(),
            ) {
                let counts = poisson_segments(&[(40, 1.0), (40, 8.0)], seed);
                let a = series(counts.clone());
                let b = DailyCountSeries {
                    start_day: day0() + chrono::Duration::days(shift),
                    ..a.clone()
                };
                let prior = BocpdPreset::Two.prior();
                let sa = map_segmentation(&run_bocpd(&a, &prior).unwrap(), &a).unwrap();
                let sb = map_segmentation(&run_bocpd(&b, &prior).unwrap(), &b).unwrap();
                let shifted: Vec<NaiveDate> = sa
                    .change_days
                    .iter()
                    .map(|d| *d + chrono::Duration::days(shift))
                    .collect();
                prop_assert_eq!(shifted, sb.change_days);
                prop_assert_eq!(sa.map_run_lengths, sb.map_run_lengths);
            }
        }
    }

    #[test]
    fn larger_hazard_never_adds_change_days() {
        let scenarios: [&[(usize, f64)]; 4] = [
            &[(100, 1.0), (100, 10.0)],
            &[(80, 1.0), (80, 10.0), (80, 1.0)],
            &[(150, 3.0)],
            &[(60, 0.5), (60, 2.0), (60, 6.0), (60, 1.0)],
        ];
        let mut violations = 0;
        for (i, segs) in scenarios.iter().enumerate() {
            for seed in 0..10u64 {
                let s = series(poisson_segments(segs, 1000 * i as u64 + seed));
                let counts: Vec<usize> = [10.0, 1e2, 1e3]
                    .iter()
                    .map(|&h| {
                        let prior = PoissonGammaPrior::new(1.0, 1.0, h).unwrap();
                        map_segmentation(&run_bocpd(&s, &prior).unwrap(), &s)
                            .unwrap()
                            .change_days
                            .len()
                    })
                    .collect();
                if counts.windows(2).any(|w| w[1] > w[0]) {
                    violations += 1;
                }
            }
        }
        assert_eq!(violations, 0);
    }
}
