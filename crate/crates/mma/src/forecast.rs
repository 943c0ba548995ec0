//! Demand/supply forecasting: Lasso regressions per look-ahead horizon,
//! OD transition-proportion estimation, attrition rates from exponential
//! patience, and the absolute-error-rate metric.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Demand feature layout: 4 same-interval lags (one per past week) plus the
/// 6 most recent intervals before the forecast origin at week offsets 0..4.
pub const DEMAND_FEATURES: usize = 4 + 6 * 5;
/// Supply feature layout: 6 recent intervals this week and last week, plus
/// the same-interval lag one week back.
pub const SUPPLY_FEATURES: usize = 6 + 6 + 1;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("undefined metric: sum of actuals is zero")]
    UndefinedMetric,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Per-interval per-zone inputs to the strategic layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forecasts {
    /// demand[t][r]: newly emerging requests in window interval t, zone r.
    pub demand: Vec<Vec<f64>>,
    pub supply: Vec<Vec<f64>>,
    /// transition[t][i][j]: share of zone-i demand headed to zone j.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Per-interval pool-exit probability for unmatched demand.
    pub drop_demand: Vec<f64>,
    pub drop_supply: Vec<f64>,
}

impl Forecasts {
    pub fn validate(&self, p: usize, zones: usize) -> Result<(), ForecastError> {
        let shape_err = |what: &str| ForecastError::InvalidInput(format!("forecast shape mismatch: {what}"));
        if self.demand.len() != p || self.supply.len() != p || self.transition.len() != p {
            return Err(shape_err("window length"));
        }
        if self.drop_demand.len() != p || self.drop_supply.len() != p {
            return Err(shape_err("attrition length"));
        }
        for t in 0..p {
            if self.demand[t].len() != zones || self.supply[t].len() != zones {
                return Err(shape_err("zone count"));
            }
            for r in 0..zones {
                if self.demand[t][r] < 0.0 || self.supply[t][r] < 0.0 {
                    return Err(ForecastError::InvalidInput("negative forecast".into()));
                }
            }
            if !(0.0..=1.0).contains(&self.drop_demand[t]) || !(0.0..=1.0).contains(&self.drop_supply[t]) {
                return Err(ForecastError::InvalidInput("attrition outside [0,1]".into()));
            }
            if self.transition[t].len() != zones {
                return Err(shape_err("transition rows"));
            }
            for i in 0..zones {
                let row = &self.transition[t][i];
                if row.len() != zones {
                    return Err(shape_err("transition columns"));
                }
                let mut sum = 0.0;
                for &v in row {
                    if v < 0.0 {
                        return Err(ForecastError::InvalidInput("negative transition entry".into()));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(ForecastError::InvalidInput(format!(
                        "transition row ({t},{i}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn clamp_nonnegative(&mut self) {
        for grid in [&mut self.demand, &mut self.supply] {
            for row in grid.iter_mut() {
                for v in row.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l1_penalty: f64,
}

impl LassoModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(features).map(|(c, x)| c * x).sum::<f64>()
    }
}

/// Sum of squared residuals plus the L1 penalty, the quantity coordinate
/// descent drives down.
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], model: &LassoModel) -> f64 {
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let e = model.predict(row) - yi;
            e * e
        })
        .sum();
    rss + model.l1_penalty * model.coefficients.iter().map(|c| c.abs()).sum::<f64>()
}

fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for `min Σ(ŷ-y)² + λ1·‖ζ‖₁` with an
/// unpenalized intercept. Zero-variance columns keep coefficient 0.
pub fn fit_lasso(
    x: &[Vec<f64>],
    y: &[f64],
    l1: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoModel, ForecastError> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(ForecastError::InvalidInput("empty data or row/target mismatch".into()));
    }
    let d = x[0].len();
    if x.iter().any(|row| row.len() != d) {
        return Err(ForecastError::InvalidInput("ragged feature matrix".into()));
    }
    if l1 < 0.0 || !l1.is_finite() {
        return Err(ForecastError::InvalidInput("l1 penalty must be finite and >= 0".into()));
    }

    let col_sq: Vec<f64> = (0..d).map(|j| x.iter().map(|row| row[j] * row[j]).sum()).collect();
    // Constant columns are collinear with the intercept; skip them.
    let col_active: Vec<bool> = (0..d)
        .map(|j| {
            let mean = x.iter().map(|row| row[j]).sum::<f64>() / n as f64;
            let var: f64 = x.iter().map(|row| (row[j] - mean).powi(2)).sum();
            var > 1e-12
        })
        .collect();
    let mut coef = vec![0.0; d];
    let mut intercept = y.iter().sum::<f64>() / n as f64;
    // Residual r_i = y_i - prediction_i, kept incrementally.
    let mut resid: Vec<f64> = y.iter().map(|&yi| yi - intercept).collect();

    for _ in 0..max_iter {
        let mut max_change = 0.0f64;
        for j in 0..d {
            if !col_active[j] || col_sq[j] <= 1e-12 {
                continue;
            }
            // rho = x_j' (resid + coef_j x_j)
            let mut rho = coef[j] * col_sq[j];
            for (row, &r) in x.iter().zip(&resid) {
                rho += row[j] * r;
            }
            let new = soft_threshold(rho, l1 / 2.0) / col_sq[j];
            let delta = new - coef[j];
            if delta != 0.0 {
                for (row, r) in x.iter().zip(resid.iter_mut()) {
                    *r -= delta * row[j];
                }
                coef[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        // Intercept re-centering (unpenalized).
        let shift = resid.iter().sum::<f64>() / n as f64;
        if shift != 0.0 {
            intercept += shift;
            for r in resid.iter_mut() {
                *r -= shift;
            }
            max_change = max_change.max(shift.abs());
        }
        if max_change < tol {
            break;
        }
    }
    Ok(LassoModel { coefficients: coef, intercept, l1_penalty: l1 })
}

/// Flat per-interval counts across consecutive stored days.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub zones: usize,
    pub intervals_per_day: usize,
    /// series[t][r] with t a flat index over all stored days in order.
    pub series: Vec<Vec<f64>>,
    /// Flat-index stride standing in for "one week back". The toy network
    /// uses synthetic warm-up days, so this is one day.
    pub week_stride: usize,
}

impl History {
    pub fn new(zones: usize, intervals_per_day: usize, week_stride_days: usize) -> Self {
        Self { zones, intervals_per_day, series: Vec::new(), week_stride: intervals_per_day * week_stride_days }
    }

    pub fn push_day(&mut self, day: Vec<Vec<f64>>) -> Result<(), ForecastError> {
        if day.len() != self.intervals_per_day || day.iter().any(|r| r.len() != self.zones) {
            return Err(ForecastError::InvalidInput("day shape mismatch".into()));
        }
        self.series.extend(day);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    fn at(&self, t: isize, r: usize) -> Option<f64> {
        if t < 0 || t as usize >= self.series.len() {
            None
        } else {
            Some(self.series[t as usize][r])
        }
    }

    /// Demand features for target flat index `target`, forecasting from
    /// `origin` (the last observed interval is `origin - 1`).
    pub fn demand_features(&self, origin: usize, target: usize, r: usize) -> Option<Vec<f64>> {
        let s = self.week_stride as isize;
        let mut f = Vec::with_capacity(DEMAND_FEATURES);
        for w in 1..=4isize {
            f.push(self.at(target as isize - w * s, r)?);
        }
        for i in 1..=6isize {
            for w in 0..=4isize {
                f.push(self.at(origin as isize - i - w * s, r)?);
            }
        }
        Some(f)
    }

    pub fn supply_features(&self, origin: usize, target: usize, r: usize) -> Option<Vec<f64>> {
        let s = self.week_stride as isize;
        let mut f = Vec::with_capacity(SUPPLY_FEATURES);
        for i in 1..=6isize {
            f.push(self.at(origin as isize - i, r)?);
        }
        for i in 1..=6isize {
            f.push(self.at(origin as isize - i - s, r)?);
        }
        f.push(self.at(target as isize - s, r)?);
        Some(f)
    }

    /// Historical mean of the target's interval-of-day slot, the fallback
    /// when lag features are unavailable.
    pub fn same_interval_mean(&self, target: usize, r: usize) -> f64 {
        let slot = target % self.intervals_per_day;
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut t = slot;
        while t < self.series.len() && t < target {
            sum += self.series[t][r];
            n += 1;
            t += self.intervals_per_day;
        }
        if n > 0 {
            return sum / n as f64;
        }
        // No prior day covers this slot yet: average everything observed.
        let upto = target.min(self.series.len());
        if upto == 0 {
            return 0.0;
        }
        self.series[..upto].iter().map(|row| row[r]).sum::<f64>() / upto as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Demand,
    Supply,
}

/// Fits one pooled-across-zones Lasso per look-ahead horizon h in 0..p.
pub fn fit_horizon_models(
    history: &History,
    p: usize,
    kind: FeatureKind,
    l1: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<LassoModel>, ForecastError> {
    let mut models = Vec::with_capacity(p);
    for h in 0..p {
        let mut xs: Vec<Vec<f64>> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for origin in 0..history.len() {
            let target = origin + h;
            if target >= history.len() {
                break;
            }
            for r in 0..history.zones {
                let feat = match kind {
                    FeatureKind::Demand => history.demand_features(origin, target, r),
                    FeatureKind::Supply => history.supply_features(origin, target, r),
                };
                if let Some(f) = feat {
                    xs.push(f);
                    ys.push(history.series[target][r]);
                }
            }
        }
        if xs.is_empty() {
            return Err(ForecastError::InvalidInput(format!(
                "no training samples for horizon {h}: history too short"
            )));
        }
        models.push(fit_lasso(&xs, &ys, l1, tol, max_iter)?);
    }
    Ok(models)
}

/// Forecasts for window intervals k..k+p-1 (flat indices). Negative raw
/// predictions clamp to zero. Returns the per-interval-per-zone grid and a
/// flag set when any cell fell back to the same-interval historical mean.
pub fn predict_window(
    models: &[LassoModel],
    history: &History,
    kind: FeatureKind,
    k: usize,
    p: usize,
) -> Result<(Vec<Vec<f64>>, bool), ForecastError> {
    if models.len() < p {
        return Err(ForecastError::InvalidInput(format!(
            "need {p} horizon models, have {}",
            models.len()
        )));
    }
    let mut out = vec![vec![0.0; history.zones]; p];
    let mut fell_back = false;
    for h in 0..p {
        let target = k + h;
        for r in 0..history.zones {
            let feat = match kind {
                FeatureKind::Demand => history.demand_features(k, target, r),
                FeatureKind::Supply => history.supply_features(k, target, r),
            };
            out[h][r] = match feat {
                Some(f) => models[h].predict(&f).max(0.0),
                None => {
                    fell_back = true;
                    history.same_interval_mean(target, r)
                }
            };
        }
    }
    Ok((out, fell_back))
}

/// Row-normalizes OD counts per interval class; all-zero rows default to
/// uniform so every row stays stochastic.
pub fn estimate_transition(od_counts: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    od_counts
        .iter()
        .map(|mat| {
            let zones = mat.len();
            mat.iter()
                .map(|row| {
                    let sum: f64 = row.iter().sum();
                    if sum > 0.0 {
                        row.iter().map(|&v| v / sum).collect()
                    } else {
                        vec![1.0 / zones as f64; zones]
                    }
                })
                .collect()
        })
        .collect()
}

/// Per-interval exit probability of exponential patience with mean `phi`.
pub fn attrition_rate(phi_s: f64, interval_s: f64) -> Result<f64, ForecastError> {
    if phi_s <= 0.0 || !phi_s.is_finite() {
        return Err(ForecastError::InvalidInput("patience mean must be positive".into()));
    }
    Ok(1.0 - (-interval_s / phi_s).exp())
}

/// Maximum-likelihood mean of exponential samples.
pub fn estimate_phi(samples: &[f64]) -> Result<f64, ForecastError> {
    if samples.is_empty() {
        return Err(ForecastError::InvalidInput("no samples".into()));
    }
    if samples.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return Err(ForecastError::InvalidInput("samples must be finite and non-negative".into()));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    if mean <= 0.0 {
        return Err(ForecastError::InvalidInput("degenerate all-zero samples".into()));
    }
    Ok(mean)
}

/// ER = Σ|p - y| / Σy.
pub fn error_rate(predicted: &[f64], actual: &[f64]) -> Result<f64, ForecastError> {
    if predicted.len() != actual.len() {
        return Err(ForecastError::InvalidInput("length mismatch".into()));
    }
    let denom: f64 = actual.iter().sum();
    if denom <= 0.0 {
        return Err(ForecastError::UndefinedMetric);
    }
    let num: f64 = predicted.iter().zip(actual).map(|(p, y)| (p - y).abs()).sum();
    Ok(num / denom)
}

/// On-disk model bundle: one Lasso per horizon for demand and supply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub l1_penalty: f64,
    pub demand_feature_count: usize,
    pub supply_feature_count: usize,
    pub demand: Vec<LassoModel>,
    pub supply: Vec<LassoModel>,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<(), ForecastError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        let text = std::fs::read_to_string(path)?;
        let bundle: Self = serde_json::from_str(&text)?;
        if bundle.version != MODEL_FILE_VERSION {
            return Err(ForecastError::InvalidInput(format!(
                "unsupported model file version {}",
                bundle.version
            )));
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_without_penalty() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| 2.0 * i as f64).collect();
        let m = fit_lasso(&x, &y, 0.0, 1e-12, 10_000).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-8);
        assert!(m.intercept.abs() < 1e-7);
    }

    #[test]
    fn huge_penalty_shrinks_to_intercept() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 + i as f64).collect();
        let m = fit_lasso(&x, &y, 1e12, 1e-10, 1000).unwrap();
        assert!(m.coefficients.iter().all(|c| *c == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((m.intercept - mean).abs() < 1e-9);
    }

    #[test]
    fn orthonormal_design_matches_soft_threshold() {
        // Columns orthonormal: coefficient_j = S(x_j'y, l1/2).
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let y = vec![3.0, 0.4];
        let l1 = 1.0;
        // Intercept absorbs the mean; to isolate the closed form, use
        // centered data where the intercept stays ~0.
        let xc = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let yc = vec![3.0, -3.0, 0.4, -0.4];
        let m = fit_lasso(&xc, &yc, l1, 1e-12, 10_000).unwrap();
        // col_sq = 2, rho_j = 2*b_j: coef = S(2 b_j, 0.5)/2.
        assert!((m.coefficients[0] - (2.0 * 3.0 - 0.5) / 2.0).abs() < 1e-8);
        assert!((m.coefficients[1] - (2.0 * 0.4 - 0.5) / 2.0).abs() < 1e-8);
        let _ = (x, y);
    }

    #[test]
    fn objective_monotone_per_sweep() {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 % 5.0])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 1.5 * r[0] - 0.3 * r[2] + 2.0).collect();
        let mut prev = f64::INFINITY;
        for sweeps in 1..=8 {
            let m = fit_lasso(&x, &y, 2.0, 0.0, sweeps).unwrap();
            let obj = lasso_objective(&x, &y, &m);
            assert!(obj <= prev + 1e-9, "objective rose at sweep {sweeps}: {obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn penalty_path_monotone_in_l1_norm() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i as f64).sqrt(), (i % 7) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 0.8 * r[0] + 2.0 * r[1] - r[2]).collect();
        let mut prev_norm = f64::INFINITY;
        for l1 in [0.0, 10.0, 1000.0, 1e6] {
            let m = fit_lasso(&x, &y, l1, 1e-10, 20_000).unwrap();
            let norm: f64 = m.coefficients.iter().map(|c| c.abs()).sum();
            assert!(norm <= prev_norm + 1e-6);
            prev_norm = norm;
        }
    }

    #[test]
    fn zero_variance_column_skipped() {
        let x = vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]];
        let y = vec![2.0, 4.0, 6.0];
        let m = fit_lasso(&x, &y, 0.0, 1e-12, 10_000).unwrap();
        assert_eq!(m.coefficients[0], 0.0);
        assert!((m.coefficients[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_empty_data() {
        assert!(fit_lasso(&[], &[], 0.0, 1e-8, 10).is_err());
    }

    #[test]
    fn transition_rows_stochastic() {
        let counts = vec![vec![vec![2.0, 3.0, 5.0], vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 1.0]]];
        let b = estimate_transition(&counts);
        assert_eq!(b[0][0], vec![0.2, 0.3, 0.5]);
        assert_eq!(b[0][1], vec![1.0 / 3.0; 3]);
        for row in &b[0] {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attrition_analytic_values() {
        let mu = attrition_rate(600.0, 600.0).unwrap();
        assert!((mu - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        let tiny = attrition_rate(1e15, 600.0).unwrap();
        assert!(tiny < 1e-9);
        assert!(attrition_rate(0.0, 600.0).is_err());
    }

    #[test]
    fn phi_mle_is_sample_mean() {
        let phi = estimate_phi(&[100.0, 200.0, 300.0]).unwrap();
        assert!((phi - 200.0).abs() < 1e-12);
        assert!(estimate_phi(&[]).is_err());
    }

    #[test]
    fn error_rate_examples() {
        assert_eq!(error_rate(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let er = error_rate(&[3.0, 3.0], &[2.0, 4.0]).unwrap();
        assert!((er - 2.0 / 6.0).abs() < 1e-12);
        assert!(matches!(error_rate(&[1.0], &[0.0]), Err(ForecastError::UndefinedMetric)));
    }

    fn constant_history(days: usize, zones: usize, per_day: usize, c: f64) -> History {
        let mut h = History::new(zones, per_day, 1);
        for _ in 0..days {
            h.push_day(vec![vec![c; zones]; per_day]).unwrap();
        }
        h
    }

    #[test]
    fn constant_history_predicts_constant() {
        let h = constant_history(6, 2, 20, 7.0);
        let models = fit_horizon_models(&h, 3, FeatureKind::Demand, 0.1, 1e-9, 5000).unwrap();
        let (pred, fallback) = predict_window(&models, &h, FeatureKind::Demand, h.len() - 3, 3).unwrap();
        assert!(!fallback);
        for row in &pred {
            for &v in row {
                assert!((v - 7.0).abs() < 0.35, "prediction {v} strayed from 7");
            }
        }
    }

    #[test]
    fn short_history_falls_back_to_mean() {
        let h = constant_history(1, 1, 10, 4.0);
        let models = vec![LassoModel { coefficients: vec![0.0; DEMAND_FEATURES], intercept: 0.0, l1_penalty: 0.0 }];
        let (pred, fallback) = predict_window(&models, &h, FeatureKind::Demand, 5, 1).unwrap();
        assert!(fallback);
        assert!((pred[0][0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn forecasts_validation() {
        let f = Forecasts {
            demand: vec![vec![1.0, 2.0]],
            supply: vec![vec![1.0, 0.0]],
            transition: vec![vec![vec![0.5, 0.5], vec![1.0, 0.0]]],
            drop_demand: vec![0.3],
            drop_supply: vec![0.2],
        };
        assert!(f.validate(1, 2).is_ok());
        let mut bad = f.clone();
        bad.transition[0][0][0] = 0.6;
        assert!(bad.validate(1, 2).is_err());
    }

    #[test]
    fn model_bundle_round_trip() {
        let dir = std::env::temp_dir().join("mma_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bundle.json");
        let bundle = ModelBundle {
            version: MODEL_FILE_VERSION,
            l1_penalty: 0.5,
            demand_feature_count: DEMAND_FEATURES,
            supply_feature_count: SUPPLY_FEATURES,
            demand: vec![LassoModel { coefficients: vec![1.0; DEMAND_FEATURES], intercept: 0.1, l1_penalty: 0.5 }],
            supply: vec![LassoModel { coefficients: vec![2.0; SUPPLY_FEATURES], intercept: 0.2, l1_penalty: 0.5 }],
        };
        bundle.save(&path).unwrap();
        let loaded = ModelBundle::load(&path).unwrap();
        assert_eq!(loaded.demand[0].coefficients.len(), DEMAND_FEATURES);
        assert_eq!(loaded.supply[0].coefficients.len(), SUPPLY_FEATURES);
        assert!((loaded.demand[0].intercept - 0.1).abs() < 1e-15);
    }
}
