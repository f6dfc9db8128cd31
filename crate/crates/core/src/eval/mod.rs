//! Ranking, repetition and popularity metrics over held-out sessions, and
//! the comparison report across models.

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actr::ActivationTable;
use crate::corpus::{Instance, SessionSequence};
use crate::error::{Error, Result};
use crate::scoring::{Resources, ScoredList, Scorer, UserContext};

pub use metrics::{ndcg_recall, pop_bias, rep_bias, rep_bias_instance, PopularityRanks, RankMetrics, Subset};

/// The eight reported metrics, all in percent except PopBias (a
/// percentile).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub ndcg: f64,
    pub recall: f64,
    pub ndcg_rep: f64,
    pub recall_rep: f64,
    pub ndcg_exp: f64,
    pub recall_exp: f64,
    pub rep_bias: f64,
    pub pop_bias: f64,
}

impl MetricValues {
    pub const NAMES: [&'static str; 8] = [
        "NDCG", "Recall", "NDCG^Rep", "Recall^Rep", "NDCG^Exp", "Recall^Exp", "RepBias", "PopBias",
    ];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.ndcg,
            self.recall,
            self.ndcg_rep,
            self.recall_rep,
            self.ndcg_exp,
            self.recall_exp,
            self.rep_bias,
            self.pop_bias,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        MetricValues {
            ndcg: a[0],
            recall: a[1],
            ndcg_rep: a[2],
            recall_rep: a[3],
            ndcg_exp: a[4],
            recall_exp: a[5],
            rep_bias: a[6],
            pop_bias: a[7],
        }
    }
}

/// Metrics of one held-out session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub user: usize,
    pub target: usize,
    pub all: RankMetrics,
    pub repeated: Option<RankMetrics>,
    pub new: Option<RankMetrics>,
    pub rep_bias: f64,
    pub pop_percentile: Option<f64>,
}

/// One scorer over one test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub values: MetricValues,
    pub instances: Vec<InstanceMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Metrics of one instance given its recommendation list.
pub fn instance_metrics(
    instance: Instance,
    list: &ScoredList,
    ground_truth: &[usize],
    k: usize,
    is_heard: impl Fn(usize) -> bool + Copy,
    ranks: &PopularityRanks,
) -> Result<InstanceMetrics> {
    let all = ndcg_recall(list, ground_truth, Subset::All, k, is_heard)?.expect("non-empty ground truth");
    Ok(InstanceMetrics {
        user: instance.user,
        target: instance.target,
        all,
        repeated: ndcg_recall(list, ground_truth, Subset::Repeated, k, is_heard)?,
        new: ndcg_recall(list, ground_truth, Subset::New, k, is_heard)?,
        rep_bias: rep_bias_instance(list, ground_truth, is_heard),
        pop_percentile: ranks.median(list),
    })
}

/// Averages instance metrics; Rep/Exp means skip instances without such
/// ground truth.
pub fn aggregate(instances: &[InstanceMetrics]) -> MetricValues {
    let pct = |f: &dyn Fn(&InstanceMetrics) -> Option<f64>| 100.0 * mean(instances.iter().filter_map(f));
    MetricValues {
        ndcg: pct(&|m| Some(m.all.ndcg)),
        recall: pct(&|m| Some(m.all.recall)),
        ndcg_rep: pct(&|m| m.repeated.map(|r| r.ndcg)),
        recall_rep: pct(&|m| m.repeated.map(|r| r.recall)),
        ndcg_exp: pct(&|m| m.new.map(|r| r.ndcg)),
        recall_exp: pct(&|m| m.new.map(|r| r.recall)),
        rep_bias: mean(instances.iter().map(|m| m.rep_bias)),
        pop_bias: mean(instances.iter().filter_map(|m| m.pop_percentile)),
    }
}

/// Everything an evaluation run reads.
#[derive(Clone, Copy)]
pub struct EvalData<'a> {
    pub sequences: &'a [SessionSequence],
    pub table: &'a ActivationTable,
    pub resources: Resources<'a>,
    /// Training popularity per track.
    pub popularity: &'a [u64],
    pub window: usize,
    pub k: usize,
}

/// Scores every instance on its observed window and computes all metrics.
pub fn evaluate_run(scorer: &Scorer, data: &EvalData, instances: &[Instance]) -> Result<RunMetrics> {
    if instances.is_empty() {
        return Err(Error::EmptySplit("no evaluation instances".into()));
    }
    let ranks = PopularityRanks::new(data.popularity);
    let per = instances
        .par_iter()
        .map(|&inst| {
            let seq = &data.sequences[inst.user];
            let ctx = UserContext::for_instance(seq, data.table, inst, data.window)?;
            let list = scorer.recommend(&ctx, &data.resources, data.k)?;
            let history = ctx.history();
            let gt = &seq.sessions[inst.target].tracks;
            instance_metrics(inst, &list, gt, data.k, |t| history.has_heard(t), &ranks)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunMetrics {
        values: aggregate(&per),
        instances: per,
    })
}

/// Share of ground-truth tracks heard in their observed window, percent.
pub fn rep_ratio_gt(sequences: &[SessionSequence], instances: &[Instance], window: usize) -> f64 {
    let (mut rep, mut total) = (0usize, 0usize);
    for inst in instances {
        let seq = &sequences[inst.user];
        let heard = seq.heard_in(inst.observed(window));
        for t in &seq.sessions[inst.target].tracks {
            rep += heard.contains(t) as usize;
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * rep as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: String,
    pub ndcg: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub runs: usize,
    pub mean: MetricValues,
    pub std: MetricValues,
    /// Per-user NDCG and Recall (percent), averaged over runs.
    pub per_user: Vec<UserMetrics>,
}

impl ModelReport {
    /// Mean ± sample standard deviation over runs (std 0 for one run).
    pub fn from_runs(model: &str, runs: &[RunMetrics], sequences: &[SessionSequence]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidArgument(format!("no runs for {model}")));
        }
        let n = runs.len() as f64;
        let arrays: Vec<[f64; 8]> = runs.iter().map(|r| r.values.to_array()).collect();
        let mut m = [0.0; 8];
        let mut s = [0.0; 8];
        for i in 0..8 {
            m[i] = arrays.iter().map(|a| a[i]).sum::<f64>() / n;
            if runs.len() > 1 {
                s[i] = (arrays.iter().map(|a| (a[i] - m[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            }
        }
        let mut users: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
        for run in runs {
            for im in &run.instances {
                let e = users.entry(im.user).or_default();
                e.0 += im.all.ndcg;
                e.1 += im.all.recall;
                e.2 += 1;
            }
        }
        let per_user = users
            .into_iter()
            .map(|(u, (nd, re, c))| UserMetrics {
                user: sequences[u].user_id.clone(),
                ndcg: 100.0 * nd / c as f64,
                recall: 100.0 * re / c as f64,
            })
            .collect();
        Ok(ModelReport {
            model: model.to_string(),
            runs: runs.len(),
            mean: MetricValues::from_array(m),
            std: MetricValues::from_array(s),
            per_user,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub n_instances: usize,
    pub rep_ratio_gt: f64,
    pub models: Vec<ModelReport>,
}

impl EvalReport {
    /// Aligned text table grouped as global, repetition, exploration and
    /// beyond-accuracy columns.
    pub fn to_table(&self) -> String {
        let cell = |m: f64, s: f64| format!("{m:.2} ± {s:.2}");
        let mut rows: Vec<Vec<String>> = vec![
            ["", "Global", "", "Repetition", "", "Exploration", "", "Beyond-accuracy", ""]
                .map(String::from)
                .to_vec(),
            std::iter::once("Model".to_string())
                .chain(MetricValues::NAMES.iter().map(|s| s.to_string()))
                .collect(),
        ];
        for m in &self.models {
            let (a, s) = (m.mean.to_array(), m.std.to_array());
            rows.push(
                std::iter::once(m.model.clone())
                    .chain((0..8).map(|i| cell(a[i], s[i])))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..9)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 1 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        let _ = writeln!(
            out,
            "K = {}, {} test instances, RepRatio-GT = {:.2}%",
            self.k, self.n_instances, self.rep_ratio_gt
        );
        out
    }
}
