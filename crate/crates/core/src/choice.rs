//! Multinomial logit over grid alternatives.
//!
//! The utility of an alternative is a linear combination of its (scaled) feature
//! row. Goal probabilities are a softmax over scores `s_k = u_k + z_k`, where
//! `z_k` is an optional learned term; with `z = 0` this is the plain logit model.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureRow, NUM_FEATURES};

/// Model variants compared in the ablation, from plain recurrent baseline to the
/// full waypoint-aware choice model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "LSTM")]
    Lstm,
    TrajDCM,
    WayDCM1,
    WayDCM2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Lstm,
        Variant::TrajDCM,
        Variant::WayDCM1,
        Variant::WayDCM2,
    ];

    /// Utility features used by the variant; `None` for the baseline without a
    /// choice model.
    pub fn feature_set(self) -> Option<FeatureSet> {
        match self {
            Variant::Lstm => None,
            Variant::TrajDCM => Some(FeatureSet::TRAJ_DCM),
            Variant::WayDCM1 => Some(FeatureSet::WAY_DCM1),
            Variant::WayDCM2 => Some(FeatureSet::WAY_DCM2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "LSTM",
            Variant::TrajDCM => "TrajDCM",
            Variant::WayDCM1 => "WayDCM1",
            Variant::WayDCM2 => "WayDCM2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "lstm" => Ok(Variant::Lstm),
            "trajdcm" => Ok(Variant::TrajDCM),
            "waydcm1" => Ok(Variant::WayDCM1),
            "waydcm2" => Ok(Variant::WayDCM2),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?}, expected one of LSTM, TrajDCM, WayDCM1, WayDCM2"
            ))),
        }
    }
}

/// Subset of feature columns entering the utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSet(pub [bool; NUM_FEATURES]);

impl FeatureSet {
    pub const TRAJ_DCM: FeatureSet = FeatureSet([true, true, true, false, false]);
    pub const WAY_DCM1: FeatureSet = FeatureSet([true, true, true, true, false]);
    pub const WAY_DCM2: FeatureSet = FeatureSet([true; NUM_FEATURES]);

    pub fn contains(&self, f: Feature) -> bool {
        self.0[f.column()]
    }

    pub fn features(&self) -> Vec<Feature> {
        Feature::ALL
            .into_iter()
            .filter(|f| self.contains(*f))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Utility coefficients, one per feature column.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaVector {
    pub beta_dir: f64,
    pub beta_occ: f64,
    pub beta_coll: f64,
    pub beta_dangle: f64,
    pub beta_ddist: f64,
}

impl BetaVector {
    pub fn from_array(v: [f64; NUM_FEATURES]) -> Self {
        Self {
            beta_dir: v[0],
            beta_occ: v[1],
            beta_coll: v[2],
            beta_dangle: v[3],
            beta_ddist: v[4],
        }
    }

    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.beta_dir,
            self.beta_occ,
            self.beta_coll,
            self.beta_dangle,
            self.beta_ddist,
        ]
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.to_array()[f.column()]
    }

    /// Zeroes the coefficients outside `set`.
    pub fn restricted(&self, set: FeatureSet) -> Self {
        let mut v = self.to_array();
        for (b, keep) in v.iter_mut().zip(set.0) {
            if !keep {
                *b = 0.0;
            }
        }
        Self::from_array(v)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|b| b.is_finite())
    }

    /// Estimated coefficients of the full waypoint model on real driving data,
    /// used as the default ground truth for synthetic scenes.
    pub fn reference_waydcm2() -> Self {
        Self::from_array([-2.64, -0.06, -0.05, -10.83, -20.86])
    }
}

/// `u_k = Σ_c β_c · x_kc`.
pub fn utility(features: &FeatureRow, beta: &BetaVector) -> f64 {
    features
        .0
        .iter()
        .zip(beta.to_array())
        .map(|(x, b)| x * b)
        .sum()
}

pub fn utilities(table: &[FeatureRow], beta: &BetaVector) -> Vec<f64> {
    table.iter().map(|row| utility(row, beta)).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(s)` with max subtraction.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `n` largest values in decreasing order; ties go to the lowest index.
pub fn top_n(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalDistribution {
    pub probs: Vec<f64>,
    pub utilities: Vec<f64>,
    pub scores: Vec<f64>,
}

impl GoalDistribution {
    pub fn top(&self, n: usize) -> Vec<usize> {
        top_n(&self.scores, n)
    }
}

/// Goal probabilities from utilities and optional learned scores.
pub fn goal_probabilities(utilities: &[f64], neural: Option<&[f64]>) -> Result<GoalDistribution> {
    if let Some(z) = neural {
        if z.len() != utilities.len() {
            return Err(Error::Numerical(format!(
                "utility and neural score lengths differ ({} vs {})",
                utilities.len(),
                z.len()
            )));
        }
    }
    if utilities.is_empty() {
        return Err(Error::Numerical("no alternatives to choose from".into()));
    }
    let scores: Vec<f64> = match neural {
        Some(z) => utilities.iter().zip(z).map(|(u, z)| u + z).collect(),
        None => utilities.to_vec(),
    };
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical(
            "non-finite goal score in choice probabilities".into(),
        ));
    }
    Ok(GoalDistribution {
        probs: softmax(&scores),
        utilities: utilities.to_vec(),
        scores,
    })
}

/// One observed choice: the scaled feature table of a scene and the chosen index.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceObservation {
    pub features: Vec<FeatureRow>,
    pub choice: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Gradient descent with a backtracking (Armijo) line search.
    #[default]
    GradientDescent,
    /// Newton steps with the same backtracking line search.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub method: FitMethod,
    pub max_iterations: usize,
    /// Stop when the ∞-norm of the gradient falls below this.
    pub tolerance: f64,
    /// Optional ridge penalty `l2/2 · ‖β‖²` added to the mean negative log-likelihood.
    pub l2: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::GradientDescent,
            max_iterations: 20_000,
            tolerance: 1e-6,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub beta: BetaVector,
    pub features: Vec<Feature>,
    pub nll: f64,
    pub nll_trace: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub scenes: usize,
}

/// Mean negative log-likelihood (plus ridge term) of the observations under the
/// coefficients `beta` on the columns of `set`, and its gradient with respect to
/// those coefficients.
pub fn mnl_objective(
    observations: &[ChoiceObservation],
    set: FeatureSet,
    beta: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let cols: Vec<usize> = set.features().iter().map(|f| f.column()).collect();
    let p = cols.len();
    let mut nll = 0.0;
    let mut grad = vec![0.0; p];
    let mut scores = Vec::new();
    for obs in observations {
        scores.clear();
        scores.extend(
            obs.features
                .iter()
                .map(|row| cols.iter().zip(beta).map(|(&c, b)| row.0[c] * b).sum::<f64>()),
        );
        let lse = log_sum_exp(&scores);
        nll += lse - scores[obs.choice];
        for (k, row) in obs.features.iter().enumerate() {
            let prob = (scores[k] - lse).exp();
            let y = if k == obs.choice { 1.0 } else { 0.0 };
            for (g, &c) in grad.iter_mut().zip(&cols) {
                *g += (prob - y) * row.0[c];
            }
        }
    }
    let n = observations.len().max(1) as f64;
    nll /= n;
    for g in &mut grad {
        *g /= n;
    }
    if l2 > 0.0 {
        nll += 0.5 * l2 * beta.iter().map(|b| b * b).sum::<f64>();
        for (g, b) in grad.iter_mut().zip(beta) {
            *g += l2 * b;
        }
    }
    (nll, grad)
}

/// Mean Hessian of the negative log-likelihood (plus ridge term).
fn mnl_hessian(observations: &[ChoiceObservation], set: FeatureSet, beta: &[f64], l2: f64) -> Vec<f64> {
    let cols: Vec<usize> = set.features().iter().map(|f| f.column()).collect();
    let p = cols.len();
    let mut h = vec![0.0; p * p];
    let mut scores = Vec::new();
    let mut mean_x = vec![0.0; p];
    for obs in observations {
        scores.clear();
        scores.extend(
            obs.features
                .iter()
                .map(|row| cols.iter().zip(beta).map(|(&c, b)| row.0[c] * b).sum::<f64>()),
        );
        let probs = softmax(&scores);
        mean_x.iter_mut().for_each(|m| *m = 0.0);
        for (row, &pk) in obs.features.iter().zip(&probs) {
            for (m, &c) in mean_x.iter_mut().zip(&cols) {
                *m += pk * row.0[c];
            }
        }
        for (row, &pk) in obs.features.iter().zip(&probs) {
            for i in 0..p {
                let di = row.0[cols[i]] - mean_x[i];
                for j in 0..p {
                    h[i * p + j] += pk * di * (row.0[cols[j]] - mean_x[j]);
                }
            }
        }
    }
    let n = observations.len().max(1) as f64;
    for v in &mut h {
        *v /= n;
    }
    for i in 0..p {
        h[i * p + i] += l2;
    }
    h
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, n × n) by
/// Cholesky factorization. `None` when `A` is not numerically positive definite.
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-14 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

/// Maximum-likelihood fit of the logit coefficients on the columns of `set`.
///
/// Starts from `init` restricted to `set`. The returned report always carries the
/// best iterate; `converged` is false when the iteration cap was hit first.
pub fn fit_mnl(
    observations: &[ChoiceObservation],
    set: FeatureSet,
    init: &BetaVector,
    options: &FitOptions,
) -> Result<FitReport> {
    if observations.is_empty() {
        return Err(Error::Config("cannot fit a choice model on zero scenes".into()));
    }
    for (i, obs) in observations.iter().enumerate() {
        if obs.choice >= obs.features.len() {
            return Err(Error::Config(format!(
                "observation {i}: chosen index {} out of {} alternatives",
                obs.choice,
                obs.features.len()
            )));
        }
    }
    let features = set.features();
    let init_full = init.to_array();
    let mut beta: Vec<f64> = features.iter().map(|f| init_full[f.column()]).collect();
    let (mut nll, mut grad) = mnl_objective(observations, set, &beta, options.l2);
    let mut trace = vec![nll];
    let mut step = 1.0;
    let mut iterations = 0;
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    while iterations < options.max_iterations && inf_norm(&grad) >= options.tolerance {
        iterations += 1;
        let direction: Vec<f64> = match options.method {
            FitMethod::GradientDescent => grad.iter().map(|g| -g).collect(),
            FitMethod::Newton => {
                let h = mnl_hessian(observations, set, &beta, options.l2);
                match cholesky_solve(&h, &grad) {
                    Some(d) => {
                        step = 1.0;
                        d.into_iter().map(|v| -v).collect()
                    }
                    None => grad.iter().map(|g| -g).collect(),
                }
            }
        };
        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
        let mut accepted = None;
        let mut t = step;
        for _ in 0..60 {
            let candidate: Vec<f64> = beta.iter().zip(&direction).map(|(b, d)| b + t * d).collect();
            let (c_nll, c_grad) = mnl_objective(observations, set, &candidate, options.l2);
            if c_nll.is_finite() && c_nll <= nll + 1e-4 * t * slope {
                accepted = Some((candidate, c_nll, c_grad));
                break;
            }
            t *= 0.5;
        }
        let Some((b, n, g)) = accepted else {
            // No decrease possible at machine precision.
            break;
        };
        beta = b;
        nll = n;
        grad = g;
        trace.push(nll);
        step = t * 2.0;
    }

    if !nll.is_finite() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("choice model fit diverged".into()));
    }
    let gradient_norm = inf_norm(&grad);
    let converged = gradient_norm < options.tolerance;
    let mut full = [0.0; NUM_FEATURES];
    for (f, b) in features.iter().zip(&beta) {
        full[f.column()] = *b;
    }
    let warning = (!converged).then(|| {
        format!(
            "stopped after {iterations} iterations with gradient norm {gradient_norm:.3e} (tolerance {:.1e})",
            options.tolerance
        )
    });
    Ok(FitReport {
        beta: BetaVector::from_array(full),
        features,
        nll,
        nll_trace: trace,
        iterations,
        gradient_norm,
        converged,
        warning,
        scenes: observations.len(),
    })
}

/// Mean cross-entropy of `beta` on `observations`, using every column.
pub fn mean_nll(observations: &[ChoiceObservation], beta: &BetaVector) -> f64 {
    let b = beta.to_array();
    mnl_objective(observations, FeatureSet::WAY_DCM2, &b, 0.0).0
}

/// Column order of the coefficient table, following the published layout.
pub const REPORT_COLUMNS: [Feature; NUM_FEATURES] = [
    Feature::Dir,
    Feature::Coll,
    Feature::Occ,
    Feature::Dangle,
    Feature::Ddist,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReportRow {
    pub model: String,
    /// Coefficients by feature column; `None` where the model does not use the feature.
    pub values: [Option<f64>; NUM_FEATURES],
    /// Features whose coefficient is not negative.
    pub sign_violations: Vec<Feature>,
    /// Features ordered by decreasing |β|.
    pub ranking: Vec<Feature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub rows: Vec<BetaReportRow>,
}

/// Builds the coefficient comparison table for a set of named, fitted models.
pub fn interpretability_report(models: &[(String, FeatureSet, BetaVector)]) -> BetaReport {
    let rows = models
        .iter()
        .map(|(name, set, beta)| {
            let used = set.features();
            let mut values = [None; NUM_FEATURES];
            for f in &used {
                values[f.column()] = Some(beta.get(*f));
            }
            let sign_violations = used.iter().copied().filter(|f| beta.get(*f) >= 0.0).collect();
            let mut ranking = used.clone();
            ranking.sort_by(|a, b| {
                beta.get(*b)
                    .abs()
                    .total_cmp(&beta.get(*a).abs())
                    .then(a.cmp(b))
            });
            BetaReportRow {
                model: name.clone(),
                values,
                sign_violations,
                ranking,
            }
        })
        .collect();
    BetaReport { rows }
}

impl BetaReport {
    /// CSV with one row per model; unused coefficients are written as `-`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "model")?;
        for f in REPORT_COLUMNS {
            write!(w, ",beta_{}", f.name())?;
        }
        writeln!(w, ",sign_violations,most_significant")?;
        for row in &self.rows {
            write!(w, "{}", row.model)?;
            for f in REPORT_COLUMNS {
                match row.values[f.column()] {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",-")?,
                }
            }
            let violations: Vec<&str> = row.sign_violations.iter().map(|f| f.name()).collect();
            let top = row.ranking.first().map_or("-", |f| f.name());
            writeln!(w, ",{},{}", violations.join(";"), top)?;
        }
        Ok(())
    }
}

impl fmt::Display for BetaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10}", "model")?;
        for c in REPORT_COLUMNS {
            write!(f, " {:>12}", format!("beta_{}", c.name()))?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<10}", row.model)?;
            for c in REPORT_COLUMNS {
                match row.values[c.column()] {
                    Some(v) => write!(f, " {v:>12.4}")?,
                    None => write!(f, " {:>12}", "-")?,
                }
            }
            let ranking: Vec<&str> = row.ranking.iter().map(|r| r.name()).collect();
            write!(f, "   |beta| order: {}", ranking.join(" > "))?;
            if !row.sign_violations.is_empty() {
                let v: Vec<&str> = row.sign_violations.iter().map(|r| r.name()).collect();
                write!(f, "   non-negative: {}", v.join(", "))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
