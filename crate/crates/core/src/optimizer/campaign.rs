use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::ExperimentRecord;
use super::kdtree::Objective;
use super::proposer::{BayesProposer, Proposer, RandomProposer};
use super::OptimizerError;

pub const DEFAULT_BUDGET: usize = 20;
pub const DEFAULT_INIT: usize = 10;
pub const INIT_MAX_SCORE: f64 = 0.6;

/// Published final best and score dispersion per strategy, kept for comparison output.
pub const REFERENCE_RESULTS: [(&str, f64, f64); 3] = [
    ("deepseek-r1", 0.5913, 0.2366),
    ("gpt-4o", 0.4344, 0.2447),
    ("bayes", 0.3130, 0.2785),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub proposer: String,
    pub budget: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    pub init: Vec<ExperimentRecord>,
    /// Proposed iterations only.
    pub history: Vec<ExperimentRecord>,
    /// Running maximum of history scores.
    pub best_so_far: Vec<f64>,
    pub score_std: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Campaign {
    pub fn new(
        proposer: impl Into<String>,
        budget: usize,
        seed: u64,
        init: Vec<ExperimentRecord>,
    ) -> Self {
        Self {
            proposer: proposer.into(),
            budget,
            seed,
            dataset_hash: None,
            init,
            history: Vec::new(),
            best_so_far: Vec::new(),
            score_std: 0.0,
            warnings: Vec::new(),
            error: None,
        }
    }

    pub fn final_best(&self) -> Option<f64> {
        self.best_so_far.last().copied()
    }

    pub fn is_complete(&self) -> bool {
        self.error.is_none() && self.history.len() == self.budget
    }

    fn push(&mut self, record: ExperimentRecord) {
        let best = self
            .final_best()
            .map_or(record.pigment_score, |b| b.max(record.pigment_score));
        self.history.push(record);
        self.best_so_far.push(best);
        self.score_std = population_std(self.history.iter().map(|r| r.pigment_score));
    }
}

fn population_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    (xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64).sqrt()
}

pub fn proposer_by_name(name: &str) -> Result<Box<dyn Proposer>, OptimizerError> {
    match name {
        "random" => Ok(Box::new(RandomProposer)),
        "bayes" => Ok(Box::new(BayesProposer::default())),
        other => Err(OptimizerError::UnknownProposer(other.into())),
    }
}

pub fn run_campaign(
    proposer: &mut dyn Proposer,
    oracle: &dyn Objective,
    budget: usize,
    init: Vec<ExperimentRecord>,
    seed: u64,
) -> Result<Campaign, OptimizerError> {
    run_campaign_observed(proposer, oracle, budget, init, seed, &mut |_| {})
}

/// As [`run_campaign`], calling `observe` after every appended record.
/// A proposer or oracle failure stops the loop and is recorded on the campaign.
pub fn run_campaign_observed(
    proposer: &mut dyn Proposer,
    oracle: &dyn Objective,
    budget: usize,
    init: Vec<ExperimentRecord>,
    seed: u64,
    observe: &mut dyn FnMut(&Campaign),
) -> Result<Campaign, OptimizerError> {
    if budget == 0 {
        return Err(OptimizerError::InvalidBudget);
    }
    let mut campaign = Campaign::new(proposer.id(), budget, seed, init);
    let mut seen: Vec<ExperimentRecord> = campaign.init.clone();
    for iteration in 0..budget {
        let step = proposer
            .propose(&seen, iteration, seed)
            .and_then(|p| oracle.score(&p.point).map(|s| (p, s)));
        let (proposal, score) = match step {
            Ok(x) => x,
            Err(e) => {
                campaign.error = Some(e.to_string());
                break;
            }
        };
        campaign.warnings.extend(
            proposal
                .warnings
                .iter()
                .map(|w| format!("iteration {iteration}: {w}")),
        );
        let record = ExperimentRecord {
            point: proposal.point,
            pigment_score: score.clamp(0.0, 1.0),
            source: oracle.source(),
        };
        seen.push(record);
        campaign.push(record);
        observe(&campaign);
    }
    Ok(campaign)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub proposer: String,
    pub seed: u64,
    pub iterations: usize,
    pub final_best: Option<f64>,
    pub score_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CampaignReport {
    pub rows: Vec<CampaignRow>,
    /// Best-so-far curves by proposer, then seed.
    pub curves: BTreeMap<String, BTreeMap<u64, Vec<f64>>>,
}

pub fn campaign_report(campaigns: &[Campaign]) -> CampaignReport {
    let mut report = CampaignReport::default();
    for c in campaigns {
        report.rows.push(CampaignRow {
            proposer: c.proposer.clone(),
            seed: c.seed,
            iterations: c.history.len(),
            final_best: c.final_best(),
            score_std: c.score_std,
        });
        report
            .curves
            .entry(c.proposer.clone())
            .or_default()
            .insert(c.seed, c.best_so_far.clone());
    }
    report
}

impl CampaignReport {
    pub fn table_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["proposer", "seed", "iterations", "final_best", "score_std"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.proposer.clone(),
                r.seed.to_string(),
                r.iterations.to_string(),
                r.final_best.map(|b| b.to_string()).unwrap_or_default(),
                r.score_std.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn curves_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["proposer", "seed", "iteration", "best_so_far"])
            .expect("in-memory write");
        for (proposer, by_seed) in &self.curves {
            for (seed, curve) in by_seed {
                for (i, b) in curve.iter().enumerate() {
                    w.write_record([
                        proposer.clone(),
                        seed.to_string(),
                        (i + 1).to_string(),
                        b.to_string(),
                    ])
                    .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Median of a non-empty sample; averages the middle pair.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{ParamSpace, Surrogate};

    #[test]
    fn budget_one_random() {
        let s = Surrogate::new(ParamSpace.lower());
        let c = run_campaign(&mut RandomProposer, &s, 1, vec![], 5).unwrap();
        assert_eq!(c.history.len(), 1);
        assert_eq!(c.best_so_far, [c.history[0].pigment_score]);
        assert_eq!(c.score_std, 0.0);
        assert!(c.is_complete());
        assert_eq!(
            run_campaign(&mut RandomProposer, &s, 0, vec![], 5),
            Err(OptimizerError::InvalidBudget)
        );
    }

    #[test]
    fn report_rows_and_curves() {
        let s = Surrogate::new(ParamSpace.upper());
        let a = run_campaign(&mut RandomProposer, &s, 3, vec![], 1).unwrap();
        let b = run_campaign(&mut RandomProposer, &s, 3, vec![], 2).unwrap();
        let one = campaign_report(std::slice::from_ref(&a));
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.table_csv().lines().count(), 2);
        let two = campaign_report(&[a, b]);
        assert_eq!(
            two.curves["random"].keys().copied().collect::<Vec<_>>(),
            [1, 2]
        );
        assert_eq!(two.curves_csv().lines().count(), 7);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
