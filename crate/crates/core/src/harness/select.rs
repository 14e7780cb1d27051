//! Switching-interval selection and its aggregation across tasks.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid_input, Error, Result};
use crate::harness::sweep::ResultRow;
use crate::protocol::MethodVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMetric {
    FinalMeanClientLoss,
    FinalFAvg,
}

impl SelectionMetric {
    pub fn name(self) -> &'static str {
        match self {
            Self::FinalMeanClientLoss => "final_mean_client_loss",
            Self::FinalFAvg => "final_F_avg",
        }
    }

    pub fn of(self, row: &ResultRow) -> f64 {
        match self {
            Self::FinalMeanClientLoss => row.final_mean_client_loss,
            Self::FinalFAvg => row.final_f_avg,
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::FinalMeanClientLoss, Self::FinalFAvg]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown metric '{s}' (expected final_mean_client_loss or final_F_avg)"
                ))
            })
    }
}

/// Selected interval for one `(method, p)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestT {
    pub method: MethodVariant,
    pub p: f64,
    pub t_star: u64,
    /// Seed-mean metric at `t_star`.
    pub metric_mean: f64,
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

/// For each `(method, p)`, the `T` minimising the seed-mean of `metric`; ties go
/// to the smaller `T`. Every `(p, T)` combination seen for a method must have rows.
pub fn select_best_t(rows: &[ResultRow], metric: SelectionMetric) -> Result<Vec<BestT>> {
    if rows.is_empty() {
        return Err(invalid_input("no result rows"));
    }
    let mut methods = Vec::new();
    for r in rows {
        push_unique(&mut methods, r.method);
    }
    let mut out = Vec::new();
    for method in methods {
        let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method).collect();
        let mut ps = Vec::new();
        let mut ts = Vec::new();
        for r in &mine {
            push_unique(&mut ps, r.p);
            push_unique(&mut ts, r.t);
        }
        ts.sort_unstable();
        let mut missing = Vec::new();
        for &p in &ps {
            let mut best: Option<(u64, f64)> = None;
            for &t in &ts {
                let vals: Vec<f64> = mine
                    .iter()
                    .filter(|r| r.p == p && r.t == t)
                    .map(|r| metric.of(r))
                    .collect();
                if vals.is_empty() {
                    missing.push(format!("(p={p}, T={t})"));
                    continue;
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                // Strict comparison over ascending T keeps the smallest T on ties.
                if best.is_none_or(|(_, b)| mean < b) {
                    best = Some((t, mean));
                }
            }
            if let Some((t_star, metric_mean)) = best {
                out.push(BestT {
                    method,
                    p,
                    t_star,
                    metric_mean,
                });
            }
        }
        if !missing.is_empty() {
            return Err(invalid_input(format!(
                "missing cells for {method}: {}",
                missing.join(", ")
            )));
        }
    }
    Ok(out)
}

/// [`select_best_t`] applied to each seed on its own, giving one `T̂*` per seed.
pub fn best_t_per_seed(rows: &[ResultRow], metric: SelectionMetric) -> Result<Vec<(u64, Vec<BestT>)>> {
    let mut seeds = Vec::new();
    for r in rows {
        push_unique(&mut seeds, r.seed);
    }
    seeds
        .into_iter()
        .map(|s| {
            let mine: Vec<ResultRow> = rows.iter().filter(|r| r.seed == s).cloned().collect();
            Ok((s, select_best_t(&mine, metric)?))
        })
        .collect()
}

/// `(median, mean)`; an even count takes the midpoint of the two central values.
pub fn aggregate_median_t(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(invalid_input("cannot aggregate an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Ok((median, v.iter().sum::<f64>() / n as f64))
}
