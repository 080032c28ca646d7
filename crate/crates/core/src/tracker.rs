//! Monotone step progression: an offline decoder over whole score sequences
//! and an online hysteresis tracker for live use.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::alignment::predict_argmax;
use crate::error::{Error, Result};

/// Exhaustive search refuses instances with more rows or columns than this.
pub const BRUTE_FORCE_LIMIT: usize = 8;

fn check_matrix(scores: &[Vec<f64>]) -> Result<usize> {
    let n = scores.first().map(Vec::len).unwrap_or(0);
    if scores.is_empty() || n == 0 {
        return Err(Error::ShapeMismatch("score matrix must be non-empty".into()));
    }
    if scores.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch("ragged score matrix".into()));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("score matrix contains non-finite values".into()));
    }
    Ok(n)
}

/// Sum of `scores[t][a_t - 1]`, accumulated from the first row.
pub fn objective(scores: &[Vec<f64>], assignment: &[usize]) -> f64 {
    scores
        .iter()
        .zip(assignment)
        .fold(0.0, |acc, (row, &a)| acc + row[a - 1])
}

/// Best nondecreasing assignment of rows to 1-based columns. Among equal
/// optima the lexicographically smallest is returned.
pub fn decode_monotone(scores: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = check_matrix(scores)?;
    let t_len = scores.len();
    // best[t][j]: max over nondecreasing suffixes starting at row t with a_t >= j.
    let mut best = vec![vec![0.0; n + 1]; t_len + 1];
    for t in (0..t_len).rev() {
        best[t][n] = f64::NEG_INFINITY;
        for j in (0..n).rev() {
            let here = scores[t][j] + best[t + 1][j];
            best[t][j] = here.max(best[t][j + 1]);
        }
    }
    let mut out = Vec::with_capacity(t_len);
    let mut lo = 0;
    for t in 0..t_len {
        let target = best[t][lo];
        let j = (lo..n)
            .find(|&j| scores[t][j] + best[t + 1][j] == target)
            .expect("suffix maximum is attained");
        out.push(j + 1);
        lo = j;
    }
    Ok(out)
}

/// Exhaustive counterpart of [`decode_monotone`], for testing.
pub fn brute_force_decode(scores: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = check_matrix(scores)?;
    let t_len = scores.len();
    if t_len > BRUTE_FORCE_LIMIT || n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { rows: t_len, cols: n });
    }
    let mut a = vec![1usize; t_len];
    let mut best = (objective(scores, &a), a.clone());
    // Visits nondecreasing sequences in lexicographic order.
    while let Some(i) = (0..t_len).rev().find(|&i| a[i] < n) {
        let v = a[i] + 1;
        for x in &mut a[i..] {
            *x = v;
        }
        let value = objective(scores, &a);
        if value > best.0 {
            best = (value, a.clone());
        }
    }
    Ok(best.1)
}

/// Unconstrained per-row argmax, 1-based.
pub fn decode_argmax(scores: &[Vec<f64>]) -> Result<Vec<usize>> {
    check_matrix(scores)?;
    Ok(scores.iter().map(|r| predict_argmax(r)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressState {
    pub n_steps: usize,
    /// 0 before tracking has started.
    pub current: usize,
    pub completed: BTreeSet<usize>,
    pub missing: BTreeSet<usize>,
    pub remaining: BTreeSet<usize>,
}

impl ProgressState {
    pub fn new(n_steps: usize) -> Self {
        Self {
            n_steps,
            current: 0,
            completed: BTreeSet::new(),
            missing: BTreeSet::new(),
            remaining: (1..=n_steps).collect(),
        }
    }

    pub fn has_started(&self) -> bool {
        self.current > 0
    }

    /// Moves to `next`, marking the old current step completed and any skipped
    /// steps missing. Requests that do not move forward are ignored.
    pub fn advance_to(&mut self, next: usize) {
        if next <= self.current || next > self.n_steps {
            return;
        }
        if self.current > 0 {
            self.completed.insert(self.current);
        }
        for skipped in self.current + 1..next {
            self.missing.insert(skipped);
        }
        self.remaining = (next + 1..=self.n_steps).collect();
        self.current = next;
    }

    /// Checks that the parts partition `1..=n_steps` and sit on the right side
    /// of `current`.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.current > self.n_steps {
            return Err(format!("current {} exceeds {} steps", self.current, self.n_steps));
        }
        let mut seen = BTreeSet::new();
        let parts = [&self.completed, &self.missing, &self.remaining];
        for part in parts {
            for &i in part {
                if !seen.insert(i) {
                    return Err(format!("step {i} appears twice"));
                }
            }
        }
        if self.current > 0 && !seen.insert(self.current) {
            return Err(format!("current step {} also in another part", self.current));
        }
        if seen != (1..=self.n_steps).collect::<BTreeSet<_>>() {
            return Err(format!("parts cover {seen:?}, expected 1..={}", self.n_steps));
        }
        if let Some(&i) = self.completed.iter().chain(&self.missing).find(|&&i| i >= self.current) {
            return Err(format!("step {i} is behind the tracker but not below current {}", self.current));
        }
        if let Some(&i) = self.remaining.iter().find(|&&i| i <= self.current) {
            return Err(format!("remaining step {i} is not above current {}", self.current));
        }
        Ok(())
    }
}

pub fn progress_snapshot(state: &ProgressState) -> ProgressState {
    state.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub max_jump: usize,
    pub advance_margin: f64,
    pub confirm_count: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_jump: 3,
            advance_margin: 0.02,
            confirm_count: 2,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_jump < 1 {
            return Err(Error::InvalidArgument("max_jump must be >= 1".into()));
        }
        if !(self.advance_margin >= 0.0 && self.advance_margin.is_finite()) {
            return Err(Error::InvalidArgument("advance_margin must be finite and >= 0".into()));
        }
        if self.confirm_count < 1 {
            return Err(Error::InvalidArgument("confirm_count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLogEntry {
    pub t_s: f64,
    pub fused: Vec<f64>,
    pub predicted: usize,
    pub state_after: ProgressState,
}

/// Streak of observations agreeing on the same forward candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pending {
    pub candidate: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineTracker {
    config: TrackerConfig,
    state: ProgressState,
    pending: Option<Pending>,
    last_t_s: Option<f64>,
}

impl OnlineTracker {
    pub fn new(n_steps: usize, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        if n_steps == 0 {
            return Err(Error::InvalidArgument("tracker needs at least one step".into()));
        }
        Ok(Self {
            config,
            state: ProgressState::new(n_steps),
            pending: None,
            last_t_s: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn state(&self) -> &ProgressState {
        &self.state
    }

    pub fn last_t_s(&self) -> Option<f64> {
        self.last_t_s
    }

    /// Windowed candidate for `fused` given the current step.
    pub fn candidate(&self, fused: &[f64]) -> usize {
        let lo = self.state.current.max(1);
        let hi = (self.state.current + self.config.max_jump).min(self.state.n_steps);
        lo + predict_argmax(&fused[lo - 1..hi]) - 1
    }

    pub fn observe(&mut self, fused: &[f64], t_s: f64) -> Result<PredictionLogEntry> {
        if fused.len() != self.state.n_steps {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {} steps",
                fused.len(),
                self.state.n_steps
            )));
        }
        if fused.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite score".into()));
        }
        if !t_s.is_finite() {
            return Err(Error::InvalidArgument(format!("timestamp {t_s} is not finite")));
        }
        if let Some(last) = self.last_t_s {
            if t_s < last {
                return Err(Error::NonMonotoneTimestamp { last, got: t_s });
            }
        }
        self.last_t_s = Some(t_s);

        let current = self.state.current;
        let candidate = self.candidate(fused);
        // Before the first step there is no reference score to beat.
        let qualifies = candidate > current
            && (current == 0 || fused[candidate - 1] >= fused[current - 1] + self.config.advance_margin);
        self.pending = if qualifies {
            let count = match self.pending {
                Some(p) if p.candidate == candidate => p.count + 1,
                _ => 1,
            };
            Some(Pending { candidate, count })
        } else {
            None
        };
        if let Some(p) = self.pending {
            if p.count >= self.config.confirm_count {
                self.state.advance_to(p.candidate);
                self.pending = None;
            }
        }
        let predicted = if self.state.current > 0 {
            self.state.current
        } else {
            candidate
        };
        Ok(PredictionLogEntry {
            t_s,
            fused: fused.to_vec(),
            predicted,
            state_after: progress_snapshot(&self.state),
        })
    }
}

/// Feeds every row of `scores` through a fresh tracker.
pub fn run_online(scores: &[Vec<f64>], times: &[f64], config: TrackerConfig) -> Result<Vec<PredictionLogEntry>> {
    let n = check_matrix(scores)?;
    if times.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} timestamps for {} score rows",
            times.len(),
            scores.len()
        )));
    }
    let mut tracker = OnlineTracker::new(n, config)?;
    scores
        .iter()
        .zip(times)
        .map(|(row, &t)| tracker.observe(row, t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn peaked(n: usize, at: usize, height: f64) -> Vec<f64> {
        (1..=n).map(|i| if i == at { height } else { 0.1 }).collect()
    }

    #[test]
    fn decode_examples() {
        let diag = vec![vec![0.9, 0.1, 0.1], vec![0.1, 0.9, 0.1], vec![0.1, 0.1, 0.9]];
        assert_eq!(decode_monotone(&diag).unwrap(), vec![1, 2, 3]);
        let one = vec![vec![0.3], vec![-0.2], vec![0.7]];
        assert_eq!(decode_monotone(&one).unwrap(), vec![1, 1, 1]);
        // Unconstrained argmaxes are [2, 1, 3, 2].
        let s = vec![
            vec![0.1, 0.5, 0.2],
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.1, 0.7],
            vec![0.1, 0.4, 0.3],
        ];
        assert_eq!(decode_argmax(&s).unwrap(), vec![2, 1, 3, 2]);
        let a = decode_monotone(&s).unwrap();
        assert_eq!(a, brute_force_decode(&s).unwrap());
        // [1,1,3,3] = 1.7, [2,3,3,3] = 1.6, [2,2,3,3] = 1.8
        assert_eq!(a, vec![2, 2, 3, 3]);
        assert!((objective(&s, &a) - 1.8).abs() < 1e-12);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let zeros = vec![vec![0.0; 3]; 3];
        assert_eq!(decode_monotone(&zeros).unwrap(), vec![1, 1, 1]);
        // [2,2] and [1,3] both score 1.
        let s = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]];
        assert_eq!(decode_monotone(&s).unwrap(), vec![1, 2]);
        assert_eq!(brute_force_decode(&s).unwrap(), vec![1, 2]);
    }

    #[test]
    fn brute_force_guards() {
        assert_eq!(brute_force_decode(&[vec![0.1, 0.9, 0.3]]).unwrap(), vec![2]);
        let big = vec![vec![0.0; 9]; 9];
        assert!(matches!(brute_force_decode(&big), Err(Error::TooLarge { rows: 9, cols: 9 })));
        assert!(matches!(decode_monotone(&[]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(decode_monotone(&[vec![0.0], vec![0.0, 1.0]]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(decode_monotone(&[vec![f64::NAN]]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn brute_force_agrees_on_quantized_matrices() {
        // Dyadic scores make sums exact and ties common.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let t = rng.random_range(1..=6);
            let n = rng.random_range(1..=6);
            let s: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..n).map(|_| rng.random_range(0..4) as f64 / 4.0).collect())
                .collect();
            assert_eq!(decode_monotone(&s).unwrap(), brute_force_decode(&s).unwrap(), "{s:?}");
        }
    }

    #[test]
    fn fresh_start_confirms_step_one() {
        let mut tr = OnlineTracker::new(4, TrackerConfig::default()).unwrap();
        let e = tr.observe(&peaked(4, 1, 0.9), 0.0).unwrap();
        assert_eq!(e.state_after.current, 0);
        assert_eq!(e.predicted, 1);
        let e = tr.observe(&peaked(4, 1, 0.9), 1.0).unwrap();
        assert_eq!(e.state_after.current, 1);
        assert!(e.state_after.completed.is_empty());
        assert_eq!(e.state_after.remaining, (2..=4).collect());
    }

    #[test]
    fn sustained_jump_marks_skipped_step_missing() {
        let mut tr = OnlineTracker::new(6, TrackerConfig::default()).unwrap();
        for (t, step) in [1, 1, 2, 2, 4, 4].into_iter().enumerate() {
            tr.observe(&peaked(6, step, 0.9), t as f64).unwrap();
        }
        let s = tr.state();
        assert_eq!(s.current, 4);
        assert_eq!(s.completed, BTreeSet::from([1, 2]));
        assert_eq!(s.missing, BTreeSet::from([3]));
        assert_eq!(s.remaining, BTreeSet::from([5, 6]));
    }

    #[test]
    fn single_spurious_peak_is_ignored() {
        let mut tr = OnlineTracker::new(6, TrackerConfig::default()).unwrap();
        for t in 0..2 {
            tr.observe(&peaked(6, 2, 0.9), t as f64).unwrap();
        }
        let before = tr.state().clone();
        tr.observe(&peaked(6, 5, 0.9), 2.0).unwrap();
        tr.observe(&peaked(6, 2, 0.9), 3.0).unwrap();
        assert_eq!(tr.state(), &before);
    }

    #[test]
    fn margin_and_window_boundaries() {
        let cfg = TrackerConfig {
            max_jump: 1,
            advance_margin: 0.125,
            confirm_count: 1,
        };
        let mut tr = OnlineTracker::new(4, cfg).unwrap();
        tr.observe(&peaked(4, 1, 0.9), 0.0).unwrap();
        assert_eq!(tr.state().current, 1);
        // Step 2 leads step 1 by less than the margin.
        tr.observe(&[0.5, 0.55, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(tr.state().current, 1);
        // Step 3 is outside the window even though it dominates.
        tr.observe(&[0.1, 0.3, 0.9, 0.0], 2.0).unwrap();
        assert_eq!(tr.state().current, 2);
        // Exactly at the margin advances.
        tr.observe(&[0.0, 0.5, 0.625, 0.0], 3.0).unwrap();
        assert_eq!(tr.state().current, 3);
    }

    #[test]
    fn streak_resets_when_candidate_changes() {
        let mut tr = OnlineTracker::new(6, TrackerConfig::default()).unwrap();
        tr.observe(&peaked(6, 1, 0.9), 0.0).unwrap();
        tr.observe(&peaked(6, 2, 0.9), 1.0).unwrap();
        tr.observe(&peaked(6, 1, 0.9), 2.0).unwrap();
        assert_eq!(tr.state().current, 0);
        tr.observe(&peaked(6, 1, 0.9), 3.0).unwrap();
        assert_eq!(tr.state().current, 1);
    }

    #[test]
    fn observe_guards() {
        let mut tr = OnlineTracker::new(3, TrackerConfig::default()).unwrap();
        assert!(matches!(tr.observe(&[0.1, 0.2], 0.0), Err(Error::ShapeMismatch(_))));
        tr.observe(&[0.1, 0.2, 0.3], 5.0).unwrap();
        assert!(matches!(
            tr.observe(&[0.1, 0.2, 0.3], 4.0),
            Err(Error::NonMonotoneTimestamp { .. })
        ));
        tr.observe(&[0.1, 0.2, 0.3], 5.0).unwrap();
        let bad = TrackerConfig {
            confirm_count: 0,
            ..TrackerConfig::default()
        };
        assert!(OnlineTracker::new(3, bad).is_err());
    }

    #[test]
    fn snapshot_is_isolated() {
        let mut tr = OnlineTracker::new(3, TrackerConfig::default()).unwrap();
        let snap = progress_snapshot(tr.state());
        assert_eq!(&snap, tr.state());
        for t in 0..2 {
            tr.observe(&peaked(3, 1, 0.9), t as f64).unwrap();
        }
        assert_eq!(snap.current, 0);
        assert_ne!(&snap, tr.state());
        snap.check_invariants().unwrap();
    }

    #[test]
    fn log_serializes_as_sets_of_indices() {
        let log = run_online(&[peaked(3, 1, 0.9), peaked(3, 1, 0.9)], &[0.0, 0.5], TrackerConfig::default()).unwrap();
        let v = serde_json::to_value(&log[1]).unwrap();
        assert_eq!(v["state_after"]["remaining"], serde_json::json!([2, 3]));
        assert_eq!(v["state_after"]["current"], 1);
    }

    fn matrix(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1..=max, 1..=max).prop_flat_map(|(t, n)| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), t))
    }

    proptest! {
        #[test]
        fn decoder_matches_exhaustive_search(s in matrix(8)) {
            let a = decode_monotone(&s).unwrap();
            let b = brute_force_decode(&s).unwrap();
            prop_assert!(a.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(objective(&s, &a), objective(&s, &b));
        }

        #[test]
        fn online_tracker_never_moves_back(
            n in 1usize..10,
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 10), 1..60),
            k in 1usize..5,
            m in 1usize..4,
            delta in 0.0f64..0.1,
        ) {
            let cfg = TrackerConfig { max_jump: k, advance_margin: delta, confirm_count: m };
            let mut tr = OnlineTracker::new(n, cfg).unwrap();
            let mut prev = tr.state().clone();
            for (t, row) in rows.iter().enumerate() {
                let e = tr.observe(&row[..n], t as f64).unwrap();
                let s = &e.state_after;
                prop_assert!(s.check_invariants().is_ok(), "{:?}", s.check_invariants());
                prop_assert!(s.current >= prev.current);
                prop_assert!(s.current <= prev.current + k);
                prop_assert!(prev.completed.is_subset(&s.completed));
                prop_assert!(prev.missing.is_subset(&s.missing));
                prop_assert!((1..=n).contains(&e.predicted));
                prev = s.clone();
            }
        }
    }
}
