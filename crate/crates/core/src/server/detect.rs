//! Reliability scores and statistical noisy-client detection.

use std::collections::BTreeMap;

use crate::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::nn::{param_sq_distance, ModelParams};

/// Per-client reliability scores for one round, in update order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityScores {
    pub round: usize,
    pub client_ids: Vec<usize>,
    /// `e`: squared distance between the round-start global model and the client model.
    pub divergences: Vec<f64>,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `scores`.
    pub std: f64,
}

/// `q_c = ‖Θ_G − Θ_c‖² · h_c / n_c` for every update.
pub fn reliability_scores(updates: &[ClientUpdate], global: &ModelParams, round: usize) -> Result<ReliabilityScores> {
    let mut client_ids = Vec::with_capacity(updates.len());
    let mut divergences = Vec::with_capacity(updates.len());
    let mut scores = Vec::with_capacity(updates.len());
    for u in updates {
        if u.n_samples == 0 {
            return Err(Error::Domain(format!("client {} reported zero samples", u.client_id)));
        }
        let e = param_sq_distance(global, &u.params)?;
        client_ids.push(u.client_id);
        divergences.push(e);
        scores.push(e * u.h / u.n_samples as f64);
    }
    let (mean, std) = mean_std(&scores);
    Ok(ReliabilityScores {
        round,
        client_ids,
        divergences,
        scores,
        mean,
        std,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Split of one round's participants.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Detection {
    pub noisy: Vec<usize>,
    pub clean: Vec<usize>,
}

impl Detection {
    pub fn is_noisy(&self, client: usize) -> bool {
        self.noisy.contains(&client)
    }
}

/// Flags clients whose score exceeds the mean by more than `beta` standard deviations.
pub fn detect_noisy(scores: &ReliabilityScores, beta: f64) -> Detection {
    let mut d = Detection::default();
    let single = scores.scores.len() < 2;
    for (&id, &q) in scores.client_ids.iter().zip(&scores.scores) {
        if !single && q - scores.mean > beta * scores.std {
            d.noisy.push(id);
        } else {
            d.clean.push(id);
        }
    }
    d
}

/// Per-round detection results kept by the server.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionHistory {
    rounds: BTreeMap<usize, Detection>,
    flag_counts: BTreeMap<usize, usize>,
}

impl DetectionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, round: usize, detection: Detection) {
        if let Some(old) = self.rounds.get(&round) {
            for c in &old.noisy {
                if let Some(n) = self.flag_counts.get_mut(c) {
                    *n -= 1;
                }
            }
        }
        for &c in &detection.noisy {
            *self.flag_counts.entry(c).or_default() += 1;
        }
        self.rounds.insert(round, detection);
    }

    pub fn get(&self, round: usize) -> Option<&Detection> {
        self.rounds.get(&round)
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Rounds in which `client` was flagged, over the whole history.
    pub fn flag_count(&self, client: usize) -> usize {
        self.flag_counts.get(&client).copied().unwrap_or(0)
    }

    /// Every client flagged at least once.
    pub fn ever_flagged(&self) -> Vec<usize> {
        self.flag_counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&c, _)| c)
            .collect()
    }
}

/// Clients flagged in strictly more than `alpha * t_corr` of rounds `1..=t_corr`.
pub fn select_s_corr(history: &DetectionHistory, alpha: f64, t_corr: usize) -> Result<Vec<usize>> {
    if let Some(missing) = (1..=t_corr).find(|r| history.get(*r).is_none()) {
        return Err(Error::State(format!(
            "detection history lacks round {missing} (needs rounds 1..={t_corr})"
        )));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in 1..=t_corr {
        for &c in &history.get(r).expect("checked above").noisy {
            *counts.entry(c).or_default() += 1;
        }
    }
    let bar = alpha * t_corr as f64;
    Ok(counts
        .into_iter()
        .filter(|&(_, n)| n as f64 > bar)
        .map(|(c, _)| c)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(qs: &[f64]) -> ReliabilityScores {
        let (mean, std) = mean_std(qs);
        ReliabilityScores {
            round: 1,
            client_ids: (0..qs.len()).collect(),
            divergences: vec![0.0; qs.len()],
            scores: qs.to_vec(),
            mean,
            std,
        }
    }

    #[test]
    fn hand_score() {
        use crate::server::aggregate::tests::scalar_update;
        let g = scalar_update(0, 0.0, 1).params;
        let mut u = scalar_update(1, 1.0, 6);
        u.h = 3.0;
        // e = 1^2 + 1^2 = 2, q = 2 * 3 / 6
        let s = reliability_scores(&[u.clone()], &g, 4).unwrap();
        assert_eq!(s.scores, vec![1.0]);
        assert_eq!(s.divergences, vec![2.0]);
        let same = reliability_scores(&[scalar_update(0, 0.0, 3)], &g, 4).unwrap();
        assert_eq!(same.scores, vec![0.0]);
        u.n_samples = 0;
        assert!(reliability_scores(&[u], &g, 4).is_err());
    }

    #[test]
    fn equal_scores_flag_nobody() {
        let d = detect_noisy(&scores(&[2.0; 6]), 0.6);
        assert!(d.noisy.is_empty());
        assert_eq!(d.clean.len(), 6);
    }

    #[test]
    fn single_outlier_flagged() {
        let mut q = vec![1.0; 9];
        q.push(10.0);
        let s = scores(&q);
        assert!((s.mean - 1.9).abs() < 1e-12);
        assert!((s.std - 2.7).abs() < 1e-12);
        let d = detect_noisy(&s, 0.6);
        assert_eq!(d.noisy, vec![9]);
        assert!(detect_noisy(&s, 1e300).noisy.is_empty());
    }

    #[test]
    fn single_client_never_flagged() {
        assert!(detect_noisy(&scores(&[5.0]), 0.0).noisy.is_empty());
    }

    #[test]
    fn s_corr_strict_threshold() {
        let mut h = DetectionHistory::new();
        for r in 1..=10 {
            let mut d = Detection::default();
            d.noisy.push(0);
            if r <= 6 {
                d.noisy.push(1);
            } else {
                d.clean.push(1);
            }
            if r <= 7 {
                d.noisy.push(3);
            } else {
                d.clean.push(3);
            }
            d.clean.push(2);
            h.record(r, d);
        }
        assert_eq!(select_s_corr(&h, 0.6, 10).unwrap(), vec![0, 3]);
        assert_eq!(h.flag_count(1), 6);
        assert!(matches!(select_s_corr(&h, 0.6, 11), Err(Error::State(_))));
    }

    #[test]
    fn rerecording_a_round_replaces_counts() {
        let mut h = DetectionHistory::new();
        h.record(1, Detection { noisy: vec![4], clean: vec![] });
        h.record(1, Detection { noisy: vec![], clean: vec![4] });
        assert_eq!(h.flag_count(4), 0);
        assert!(h.ever_flagged().is_empty());
    }
}
