//! Event-driven day simulator: demand/supply generation from mixture
//! timetables, the matching/relocation control loop, forecast preparation,
//! robustness harnesses, and experiment orchestration.

mod world;

pub use world::{run_day, DayOutcome, LogEvent};

use std::path::Path;

use crate::core::{CoreError, HorizonConfig, Request, RequestState, Vehicle, VehicleState, ZoneGraph};
use crate::exec::ExecError;
use crate::forecast::{
    attrition_rate, estimate_transition, fit_horizon_models, FeatureKind, ForecastError, Forecasts,
    History, LassoModel,
};
use crate::lr::LrOptions;
use crate::slm::SlmError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Strategic(#[from] SlmError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Two-component Gaussian mixture over generation-interval indices.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Mixture6 {
    pub eps1: f64,
    pub eps2: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
}

impl Mixture6 {
    pub fn validate(&self) -> Result<(), SimError> {
        if (self.eps1 + self.eps2 - 1.0).abs() > 1e-9 || self.eps1 < 0.0 || self.eps2 < 0.0 {
            return Err(SimError::InvalidInput("mixture weights must be non-negative and sum to 1".into()));
        }
        if self.sigma1 <= 0.0 || self.sigma2 <= 0.0 {
            return Err(SimError::InvalidInput("mixture sigmas must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub center: [f64; 2],
    pub side_km: f64,
    pub demand_quantity: u64,
    pub demand_mixture: Mixture6,
    /// Destination-zone probabilities for requests originating here.
    pub transition: Vec<f64>,
    pub supply_quantity: u64,
    pub supply_mixture: Mixture6,
}

/// Time-of-day band with mean patience for waiting customers (`phi_demand_s`)
/// and idle drivers (`phi_supply_s`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PatienceBand {
    pub start_h: f64,
    pub end_h: f64,
    pub phi_demand_s: f64,
    pub phi_supply_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub regions: Vec<RegionSpec>,
    pub speed_kmh: f64,
    pub detour: f64,
    pub strategic_interval_s: u32,
    pub matching_interval_s: u32,
    pub planning_intervals: usize,
    pub patience_bands: Vec<PatienceBand>,
    /// Seconds represented by one unit of the generation-interval index the
    /// mixtures sample. Calibration knob; defaults to the strategic interval.
    pub gen_interval_unit_s: f64,
    pub warmup_days: usize,
    pub l1_penalty: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.regions.is_empty() {
            return Err(SimError::InvalidInput("no regions".into()));
        }
        let z = self.regions.len();
        for r in &self.regions {
            r.demand_mixture.validate()?;
            r.supply_mixture.validate()?;
            if r.side_km <= 0.0 {
                return Err(SimError::InvalidInput(format!("region {} side must be positive", r.name)));
            }
            if r.transition.len() != z {
                return Err(SimError::InvalidInput(format!("region {} transition row length", r.name)));
            }
            let sum: f64 = r.transition.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || r.transition.iter().any(|&v| v < 0.0) {
                return Err(SimError::InvalidInput(format!("region {} transition row must be stochastic", r.name)));
            }
        }
        if self.speed_kmh <= 0.0 || self.detour < 1.0 {
            return Err(SimError::InvalidInput("speed must be positive, detour >= 1".into()));
        }
        if self.strategic_interval_s == 0
            || self.matching_interval_s == 0
            || self.strategic_interval_s % self.matching_interval_s != 0
        {
            return Err(SimError::InvalidInput("strategic interval must be a positive multiple of the matching interval".into()));
        }
        if (SECONDS_PER_DAY as u64) % self.strategic_interval_s as u64 != 0 {
            return Err(SimError::InvalidInput("strategic interval must divide the day".into()));
        }
        if self.planning_intervals == 0 {
            return Err(SimError::InvalidInput("planning_intervals must be >= 1".into()));
        }
        if self.patience_bands.is_empty()
            || self
                .patience_bands
                .iter()
                .any(|b| b.start_h >= b.end_h || b.phi_demand_s <= 0.0 || b.phi_supply_s <= 0.0)
        {
            return Err(SimError::InvalidInput("patience bands must be non-empty with positive means".into()));
        }
        if self.gen_interval_unit_s <= 0.0 {
            return Err(SimError::InvalidInput("gen_interval_unit_s must be positive".into()));
        }
        if self.l1_penalty < 0.0 {
            return Err(SimError::InvalidInput("l1_penalty must be non-negative".into()));
        }
        Ok(())
    }

    pub fn intervals_per_day(&self) -> usize {
        (SECONDS_PER_DAY as u64 / self.strategic_interval_s as u64) as usize
    }

    pub fn zone_graph(&self) -> Result<ZoneGraph, SimError> {
        let centers: Vec<[f64; 2]> = self.regions.iter().map(|r| r.center).collect();
        Ok(ZoneGraph::from_centroids(&centers, self.speed_kmh, self.detour, self.strategic_interval_s)?)
    }

    pub fn horizon(&self, alpha: f64, beta: f64) -> HorizonConfig {
        HorizonConfig {
            strategic_interval_s: self.strategic_interval_s,
            matching_interval_s: self.matching_interval_s,
            planning_intervals: self.planning_intervals,
            alpha,
            beta,
        }
    }

    fn band_at(&self, time_s: f64) -> &PatienceBand {
        let h = (time_s / 3600.0).rem_euclid(24.0);
        self.patience_bands
            .iter()
            .find(|b| h >= b.start_h && h < b.end_h)
            .unwrap_or_else(|| self.patience_bands.last().unwrap())
    }

    pub fn phi_demand_at(&self, time_s: f64) -> f64 {
        self.band_at(time_s).phi_demand_s
    }

    pub fn phi_supply_at(&self, time_s: f64) -> f64 {
        self.band_at(time_s).phi_supply_s
    }

    /// Index of the nearest region center.
    pub fn zone_of(&self, xy: [f64; 2]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, r) in self.regions.iter().enumerate() {
            let d = crate::core::euclid(xy, r.center);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| SimError::InvalidInput(format!("bad scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| SimError::InvalidInput(format!("serialize config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Three-square toy network with rush-hour demand/supply timetables.
    pub fn toy_default() -> Self {
        let mix = |eps1: f64, eps2: f64, mu1: f64, sigma1: f64, mu2: f64, sigma2: f64| Mixture6 {
            eps1,
            eps2,
            mu1,
            sigma1,
            mu2,
            sigma2,
        };
        Self {
            regions: vec![
                RegionSpec {
                    name: "A".into(),
                    center: [1.5, 1.5],
                    side_km: 3.0,
                    demand_quantity: 5000,
                    demand_mixture: mix(0.5, 0.5, 30.0, 30.0, 100.0, 30.0),
                    transition: vec![0.2, 0.3, 0.5],
                    supply_quantity: 300,
                    supply_mixture: mix(0.7, 0.3, 36.0, 20.0, 108.0, 20.0),
                },
                RegionSpec {
                    name: "B".into(),
                    center: [1.5, 9.5],
                    side_km: 3.0,
                    demand_quantity: 5000,
                    demand_mixture: mix(0.5, 0.5, 96.0, 60.0, 126.0, 60.0),
                    transition: vec![0.3, 0.2, 0.5],
                    supply_quantity: 300,
                    supply_mixture: mix(0.5, 0.5, 50.0, 20.0, 108.0, 20.0),
                },
                RegionSpec {
                    name: "C".into(),
                    center: [13.5, 1.5],
                    side_km: 3.0,
                    demand_quantity: 5000,
                    demand_mixture: mix(0.7, 0.3, 36.0, 30.0, 96.0, 50.0),
                    transition: vec![0.2, 0.2, 0.6],
                    supply_quantity: 300,
                    supply_mixture: mix(0.7, 0.3, 43.0, 20.0, 108.0, 20.0),
                },
            ],
            speed_kmh: 30.0,
            detour: 1.3,
            strategic_interval_s: 600,
            matching_interval_s: 10,
            planning_intervals: 9,
            patience_bands: vec![
                PatienceBand { start_h: 0.0, end_h: 6.0, phi_demand_s: 1500.0, phi_supply_s: 1200.0 },
                PatienceBand { start_h: 6.0, end_h: 10.0, phi_demand_s: 1200.0, phi_supply_s: 1800.0 },
                PatienceBand { start_h: 10.0, end_h: 17.0, phi_demand_s: 1800.0, phi_supply_s: 900.0 },
                PatienceBand { start_h: 17.0, end_h: 21.0, phi_demand_s: 1200.0, phi_supply_s: 1800.0 },
                PatienceBand { start_h: 21.0, end_h: 24.0, phi_demand_s: 1500.0, phi_supply_s: 1200.0 },
            ],
            gen_interval_unit_s: 600.0,
            warmup_days: 5,
            l1_penalty: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling helpers.

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sample_exp(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    -mean * u.ln()
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws a generation-interval index from the mixture, truncated to an
/// integer; out-of-day draws are resampled.
fn sample_unit_index(rng: &mut ChaCha8Rng, mix: &Mixture6, n_units: i64) -> i64 {
    for _ in 0..1000 {
        let (mu, sigma) = if rng.gen::<f64>() < mix.eps1 { (mix.mu1, mix.sigma1) } else { (mix.mu2, mix.sigma2) };
        let v = (mu + sigma * std_normal(rng)).floor() as i64;
        if (0..n_units).contains(&v) {
            return v;
        }
    }
    0
}

fn uniform_in_square(rng: &mut ChaCha8Rng, center: [f64; 2], side: f64) -> [f64; 2] {
    [
        center[0] + side * (rng.gen::<f64>() - 0.5),
        center[1] + side * (rng.gen::<f64>() - 0.5),
    ]
}

// ---------------------------------------------------------------------------
// Day generation.

#[derive(Debug, Clone, Default)]
pub struct DayStreams {
    pub requests: Vec<Request>,
    pub vehicles: Vec<Vehicle>,
}

const STREAM_DEMAND: u64 = 1;
const STREAM_SUPPLY: u64 = 2;

fn gen_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One day of request and driver-entry streams sampled from the scenario's
/// mixture timetables.
pub fn generate_day(cfg: &ScenarioConfig, seed: u64) -> Result<DayStreams, SimError> {
    cfg.validate()?;
    let n_units = (SECONDS_PER_DAY / cfg.gen_interval_unit_s).round() as i64;
    let mut requests = Vec::new();
    let mut rng = gen_rng(seed, STREAM_DEMAND);
    for (r, region) in cfg.regions.iter().enumerate() {
        for _ in 0..region.demand_quantity {
            let idx = sample_unit_index(&mut rng, &region.demand_mixture, n_units);
            let t = (idx as f64 + rng.gen::<f64>()) * cfg.gen_interval_unit_s;
            let dest_zone = sample_categorical(&mut rng, &region.transition);
            let origin_xy = uniform_in_square(&mut rng, region.center, region.side_km);
            let dest_xy =
                uniform_in_square(&mut rng, cfg.regions[dest_zone].center, cfg.regions[dest_zone].side_km);
            let patience_s = sample_exp(&mut rng, cfg.phi_demand_at(t));
            requests.push(Request {
                id: 0,
                gen_time_s: t,
                origin_zone: r,
                dest_zone,
                origin_xy,
                dest_xy,
                patience_s,
                state: RequestState::Waiting,
            });
        }
    }
    sort_and_relabel_requests(&mut requests);

    let mut vehicles = Vec::new();
    let mut rng = gen_rng(seed, STREAM_SUPPLY);
    for (r, region) in cfg.regions.iter().enumerate() {
        for _ in 0..region.supply_quantity {
            let idx = sample_unit_index(&mut rng, &region.supply_mixture, n_units);
            let t = (idx as f64 + rng.gen::<f64>()) * cfg.gen_interval_unit_s;
            let xy = uniform_in_square(&mut rng, region.center, region.side_km);
            let patience_s = sample_exp(&mut rng, cfg.phi_supply_at(t));
            vehicles.push(Vehicle {
                id: 0,
                entry_time_s: t,
                xy,
                zone: r,
                state: VehicleState::Vacant,
                idle_since_s: t,
                patience_s,
                busy_until_s: t,
                target_zone: None,
            });
        }
    }
    vehicles.sort_by(|a, b| a.entry_time_s.total_cmp(&b.entry_time_s));
    for (i, v) in vehicles.iter_mut().enumerate() {
        v.id = i as u64;
    }
    Ok(DayStreams { requests, vehicles })
}

fn sort_and_relabel_requests(requests: &mut Vec<Request>) {
    requests.sort_by(|a, b| a.gen_time_s.total_cmp(&b.gen_time_s));
    for (i, r) in requests.iter_mut().enumerate() {
        r.id = i as u64;
    }
}

// ---------------------------------------------------------------------------
// Robustness harnesses.

/// Multiplies every demand/supply forecast entry by an independent
/// Uniform[1-a, 1+a] draw.
pub fn perturb_forecasts(forecasts: &Forecasts, amplitude: f64, seed: u64) -> Result<Forecasts, SimError> {
    if !(0.0..1.0).contains(&amplitude) {
        return Err(SimError::InvalidInput("perturbation amplitude must be in [0,1)".into()));
    }
    let mut out = forecasts.clone();
    if amplitude == 0.0 {
        return Ok(out);
    }
    let mut rng = gen_rng(seed, 3);
    for grid in [&mut out.demand, &mut out.supply] {
        for row in grid.iter_mut() {
            for v in row.iter_mut() {
                *v *= 1.0 - amplitude + 2.0 * amplitude * rng.gen::<f64>();
            }
        }
    }
    Ok(out)
}

/// Demand shock: extra requests injected, or existing ones removed, inside a
/// time window and zone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrregularEvent {
    pub start_s: f64,
    pub end_s: f64,
    pub zone: usize,
    #[serde(default)]
    pub add_per_hour: u64,
    #[serde(default)]
    pub drop_per_hour: u64,
}

/// Applies demand shocks to a generated request stream; drops are clamped to
/// the eligible requests available.
pub fn apply_irregular_events(
    cfg: &ScenarioConfig,
    requests: &[Request],
    events: &[IrregularEvent],
    seed: u64,
) -> Result<Vec<Request>, SimError> {
    let mut out: Vec<Request> = requests.to_vec();
    let mut rng = gen_rng(seed, 4);
    for ev in events {
        if !(0.0..=SECONDS_PER_DAY).contains(&ev.start_s) || ev.end_s <= ev.start_s || ev.end_s > SECONDS_PER_DAY {
            return Err(SimError::InvalidInput("irregular-event window outside the day".into()));
        }
        if ev.zone >= cfg.regions.len() {
            return Err(SimError::InvalidInput(format!("irregular-event zone {} out of range", ev.zone)));
        }
        let hours = (ev.end_s - ev.start_s) / 3600.0;
        let region = &cfg.regions[ev.zone];
        let n_add = (ev.add_per_hour as f64 * hours).round() as u64;
        for _ in 0..n_add {
            let t = ev.start_s + rng.gen::<f64>() * (ev.end_s - ev.start_s);
            let dest_zone = sample_categorical(&mut rng, &region.transition);
            let origin_xy = uniform_in_square(&mut rng, region.center, region.side_km);
            let dest_xy =
                uniform_in_square(&mut rng, cfg.regions[dest_zone].center, cfg.regions[dest_zone].side_km);
            out.push(Request {
                id: 0,
                gen_time_s: t,
                origin_zone: ev.zone,
                dest_zone,
                origin_xy,
                dest_xy,
                patience_s: sample_exp(&mut rng, cfg.phi_demand_at(t)),
                state: RequestState::Waiting,
            });
        }
        let n_drop = (ev.drop_per_hour as f64 * hours).round() as usize;
        for _ in 0..n_drop {
            let eligible: Vec<usize> = out
                .iter()
                .enumerate()
                .filter(|(_, r)| r.origin_zone == ev.zone && r.gen_time_s >= ev.start_s && r.gen_time_s < ev.end_s)
                .map(|(i, _)| i)
                .collect();
            if eligible.is_empty() {
                break;
            }
            let pick = eligible[rng.gen_range(0..eligible.len())];
            out.swap_remove(pick);
        }
    }
    sort_and_relabel_requests(&mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Forecast preparation from synthetic warm-up days.

/// Fitted forecasting state for the strategic layer: lag models, warm-up
/// histories, and the per-interval destination-share matrix.
#[derive(Debug, Clone)]
pub struct ForecastPrep {
    pub demand_history: History,
    pub supply_history: History,
    pub demand_models: Vec<LassoModel>,
    pub supply_models: Vec<LassoModel>,
    /// transition[t][i][j] for each interval-of-day t.
    pub transition: Vec<Vec<Vec<f64>>>,
}

const WARMUP_SEED_SALT: u64 = 0x5eed_da75;

/// Counts a request/vehicle stream into per-interval per-zone grids and OD
/// tallies.
fn count_streams(
    cfg: &ScenarioConfig,
    streams: &DayStreams,
    od: &mut [Vec<Vec<f64>>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = cfg.intervals_per_day();
    let z = cfg.regions.len();
    let slot = |t: f64| ((t / cfg.strategic_interval_s as f64) as usize).min(n - 1);
    let mut demand = vec![vec![0.0; z]; n];
    let mut supply = vec![vec![0.0; z]; n];
    for r in &streams.requests {
        let t = slot(r.gen_time_s);
        demand[t][r.origin_zone] += 1.0;
        od[t][r.origin_zone][r.dest_zone] += 1.0;
    }
    for v in &streams.vehicles {
        supply[slot(v.entry_time_s)][v.zone] += 1.0;
    }
    (demand, supply)
}

/// Generates the warm-up days, fits one Lasso per look-ahead horizon for
/// demand and supply, and tallies destination shares.
pub fn prepare_forecasts(cfg: &ScenarioConfig, seed: u64) -> Result<ForecastPrep, SimError> {
    cfg.validate()?;
    if cfg.warmup_days < 5 {
        return Err(SimError::InvalidInput(
            "warmup_days must be >= 5: demand features reach four day-strides back".into(),
        ));
    }
    let n = cfg.intervals_per_day();
    let z = cfg.regions.len();
    let mut demand_history = History::new(z, n, 1);
    let mut supply_history = History::new(z, n, 1);
    let mut od = vec![vec![vec![0.0; z]; z]; n];
    for day in 0..cfg.warmup_days {
        let streams = generate_day(cfg, seed ^ WARMUP_SEED_SALT.wrapping_add(day as u64))?;
        let (d, s) = count_streams(cfg, &streams, &mut od);
        demand_history.push_day(d)?;
        supply_history.push_day(s)?;
    }
    let p = cfg.planning_intervals;
    let demand_models = fit_horizon_models(&demand_history, p, FeatureKind::Demand, cfg.l1_penalty, 1e-6, 200)?;
    let supply_models = fit_horizon_models(&supply_history, p, FeatureKind::Supply, cfg.l1_penalty, 1e-6, 200)?;
    let transition = estimate_transition(&od);
    Ok(ForecastPrep { demand_history, supply_history, demand_models, supply_models, transition })
}

impl ForecastPrep {
    /// Per-window attrition rates for intervals k..k+p-1.
    pub fn drop_rates(&self, cfg: &ScenarioConfig, k: usize) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        let n = cfg.intervals_per_day();
        let dt = cfg.strategic_interval_s as f64;
        let mut dd = Vec::with_capacity(cfg.planning_intervals);
        let mut ds = Vec::with_capacity(cfg.planning_intervals);
        for h in 0..cfg.planning_intervals {
            let t = (((k + h) % n) as f64 + 0.5) * dt;
            dd.push(attrition_rate(cfg.phi_demand_at(t), dt)?);
            ds.push(attrition_rate(cfg.phi_supply_at(t), dt)?);
        }
        Ok((dd, ds))
    }
}

// ---------------------------------------------------------------------------
// Run options, experiment driver, and artifact writers.

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub alpha: f64,
    pub beta: f64,
    pub lr: LrOptions,
    pub perturb_amplitude: f64,
    pub irregular: Vec<IrregularEvent>,
    pub collect_events: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.2,
            lr: LrOptions { max_iter: 10, samples: 2, ..LrOptions::default() },
            perturb_amplitude: 0.0,
            irregular: Vec::new(),
            collect_events: true,
        }
    }
}

/// One metrics.csv row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub day: usize,
    pub policy: String,
    pub seed: u64,
    pub generated: u64,
    pub completed: u64,
    pub abandoned: u64,
    pub completion_rate: f64,
    pub mean_pickup_km: f64,
    pub relocations: u64,
}

#[derive(Debug, Default)]
pub struct ExperimentOutcome {
    pub rows: Vec<MetricsRow>,
    pub events: Vec<LogEvent>,
}

fn day_seed(seed: u64, day: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(day as u64)
}

/// Runs each named policy over `days` seeded days of the scenario; the same
/// generated streams are fed to every policy on a given day.
pub fn run_experiment(
    cfg: &ScenarioConfig,
    policy_names: &[String],
    days: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<ExperimentOutcome, SimError> {
    cfg.validate()?;
    let registry = crate::policy::PolicyRegistry::builtin();
    let needs_prep = policy_names.iter().any(|n| {
        registry.create(n).map(|p| p.needs_guidance()).unwrap_or(false)
    });
    // Surface unknown policy names before any work.
    for name in policy_names {
        registry.create(name)?;
    }
    let prep = if needs_prep { Some(prepare_forecasts(cfg, seed)?) } else { None };
    let mut out = ExperimentOutcome::default();
    for day in 0..days {
        let ds = day_seed(seed, day);
        let mut streams = generate_day(cfg, ds)?;
        if !opts.irregular.is_empty() {
            streams.requests = apply_irregular_events(cfg, &streams.requests, &opts.irregular, ds)?;
        }
        for name in policy_names {
            let mut policy = registry.create(name)?;
            let outcome = run_day(cfg, policy.as_mut(), &streams, ds, opts, prep.as_ref())?;
            out.rows.push(MetricsRow {
                day,
                policy: name.clone(),
                seed: ds,
                generated: outcome.metrics.generated_requests,
                completed: outcome.metrics.completed_requests,
                abandoned: outcome.metrics.abandoned_requests,
                completion_rate: outcome.metrics.completion_rate,
                mean_pickup_km: outcome.metrics.mean_pickup_distance_km,
                relocations: outcome.metrics.relocation_count,
            });
            if opts.collect_events {
                out.events.extend(outcome.events);
            }
        }
    }
    Ok(out)
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_jsonl(path: &Path, events: &[LogEvent]) -> Result<(), SimError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ev in events {
        let line = serde_json::to_string(ev)
            .map_err(|e| SimError::InvalidInput(format!("serialize event: {e}")))?;
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// External data ingestion.

#[derive(Debug, Deserialize)]
struct RequestRow {
    id: u64,
    gen_time_s: f64,
    origin_zone: usize,
    dest_zone: usize,
    ox: f64,
    oy: f64,
    dx: f64,
    dy: f64,
}

#[derive(Debug, Deserialize)]
struct VehicleRow {
    id: u64,
    entry_time_s: f64,
    x: f64,
    y: f64,
}

/// Loads externally supplied request/vehicle streams; patience is sampled
/// from the scenario's bands since the CSV schema does not carry it.
pub fn load_streams_csv(
    cfg: &ScenarioConfig,
    requests_path: &Path,
    vehicles_path: &Path,
    seed: u64,
) -> Result<DayStreams, SimError> {
    let mut rng = gen_rng(seed, 5);
    let mut requests = Vec::new();
    for row in csv::Reader::from_path(requests_path)?.deserialize() {
        let row: RequestRow = row?;
        if row.origin_zone >= cfg.regions.len() || row.dest_zone >= cfg.regions.len() {
            return Err(SimError::InvalidInput(format!("request {} references an unknown zone", row.id)));
        }
        requests.push(Request {
            id: row.id,
            gen_time_s: row.gen_time_s,
            origin_zone: row.origin_zone,
            dest_zone: row.dest_zone,
            origin_xy: [row.ox, row.oy],
            dest_xy: [row.dx, row.dy],
            patience_s: sample_exp(&mut rng, cfg.phi_demand_at(row.gen_time_s)),
            state: RequestState::Waiting,
        });
    }
    sort_and_relabel_requests(&mut requests);
    let mut vehicles = Vec::new();
    for row in csv::Reader::from_path(vehicles_path)?.deserialize() {
        let row: VehicleRow = row?;
        let xy = [row.x, row.y];
        vehicles.push(Vehicle {
            id: row.id,
            entry_time_s: row.entry_time_s,
            xy,
            zone: cfg.zone_of(xy),
            state: VehicleState::Vacant,
            idle_since_s: row.entry_time_s,
            patience_s: sample_exp(&mut rng, cfg.phi_supply_at(row.entry_time_s)),
            busy_until_s: row.entry_time_s,
            target_zone: None,
        });
    }
    vehicles.sort_by(|a, b| a.entry_time_s.total_cmp(&b.entry_time_s));
    Ok(DayStreams { requests, vehicles })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_validates_and_matches_geometry() {
        let cfg = ScenarioConfig::toy_default();
        cfg.validate().unwrap();
        assert_eq!(cfg.intervals_per_day(), 144);
        let g = cfg.zone_graph().unwrap();
        assert_eq!(g.travel_intervals[0][1], 3);
        assert_eq!(g.travel_intervals[0][2], 4);
        assert_eq!(g.travel_intervals[1][2], 4);
        assert_eq!(g.travel_intervals[0][0], 0);
    }

    #[test]
    fn generated_day_is_deterministic_and_right_sized() {
        let cfg = ScenarioConfig::toy_default();
        let a = generate_day(&cfg, 7).unwrap();
        let b = generate_day(&cfg, 7).unwrap();
        assert_eq!(a.requests.len(), 15000);
        assert_eq!(a.vehicles.len(), 900);
        assert_eq!(serde_json::to_string(&a.requests).unwrap(), serde_json::to_string(&b.requests).unwrap());
        assert_eq!(serde_json::to_string(&a.vehicles).unwrap(), serde_json::to_string(&b.vehicles).unwrap());
        for (i, r) in a.requests.iter().enumerate() {
            assert_eq!(r.id, i as u64);
            assert!((0.0..SECONDS_PER_DAY).contains(&r.gen_time_s));
        }
        let c = generate_day(&cfg, 8).unwrap();
        assert_ne!(serde_json::to_string(&a.requests).unwrap(), serde_json::to_string(&c.requests).unwrap());
    }

    #[test]
    fn destination_draws_follow_transition_row() {
        let cfg = ScenarioConfig::toy_default();
        let streams = generate_day(&cfg, 3).unwrap();
        let from_c: Vec<&Request> = streams.requests.iter().filter(|r| r.origin_zone == 2).collect();
        let mut counts = [0.0; 3];
        for r in &from_c {
            counts[r.dest_zone] += 1.0;
        }
        let n = from_c.len() as f64;
        for (j, expect) in [0.2, 0.2, 0.6].iter().enumerate() {
            assert!((counts[j] / n - expect).abs() < 0.03, "zone {j}: {}", counts[j] / n);
        }
    }

    #[test]
    fn patience_bands_lookup() {
        let cfg = ScenarioConfig::toy_default();
        assert_eq!(cfg.phi_demand_at(0.0), 1500.0);
        assert_eq!(cfg.phi_demand_at(7.0 * 3600.0), 1200.0);
        assert_eq!(cfg.phi_supply_at(12.0 * 3600.0), 900.0);
        assert_eq!(cfg.phi_supply_at(23.5 * 3600.0), 1200.0);
    }

    #[test]
    fn perturbation_bounds_and_identity() {
        let f = Forecasts {
            demand: vec![vec![10.0; 3]; 2],
            supply: vec![vec![4.0; 3]; 2],
            transition: vec![vec![vec![1.0 / 3.0; 3]; 3]; 2],
            drop_demand: vec![0.1; 2],
            drop_supply: vec![0.1; 2],
        };
        let same = perturb_forecasts(&f, 0.0, 1).unwrap();
        assert_eq!(serde_json::to_string(&same.demand).unwrap(), serde_json::to_string(&f.demand).unwrap());
        let p = perturb_forecasts(&f, 0.5, 1).unwrap();
        for row in &p.demand {
            for &v in row {
                assert!((5.0..=15.0).contains(&v));
            }
        }
        assert!(perturb_forecasts(&f, 1.0, 1).is_err());
    }

    #[test]
    fn irregular_events_add_and_clamp_drops() {
        let cfg = ScenarioConfig::toy_default();
        let base: Vec<Request> = (0..150)
            .map(|i| Request {
                id: i,
                gen_time_s: 100.0 + i as f64,
                origin_zone: 1,
                dest_zone: 0,
                origin_xy: [1.5, 9.5],
                dest_xy: [1.5, 1.5],
                patience_s: 600.0,
                state: RequestState::Waiting,
            })
            .collect();
        let add = vec![IrregularEvent { start_s: 0.0, end_s: 7200.0, zone: 0, add_per_hour: 400, drop_per_hour: 0 }];
        let grown = apply_irregular_events(&cfg, &base, &add, 1).unwrap();
        assert_eq!(grown.len(), 150 + 800);
        let drop = vec![IrregularEvent { start_s: 0.0, end_s: 3600.0, zone: 1, add_per_hour: 0, drop_per_hour: 200 }];
        let shrunk = apply_irregular_events(&cfg, &base, &drop, 1).unwrap();
        assert_eq!(shrunk.len(), 0);
        let noop = apply_irregular_events(&cfg, &base, &[], 1).unwrap();
        assert_eq!(noop.len(), base.len());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ScenarioConfig::toy_default();
        let dir = std::env::temp_dir().join("mma-sim-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.json");
        cfg.save(&path).unwrap();
        let loaded = ScenarioConfig::load(&path).unwrap();
        assert_eq!(serde_json::to_string(&cfg).unwrap(), serde_json::to_string(&loaded).unwrap());
    }

    #[test]
    fn forecast_prep_produces_usable_models() {
        let mut cfg = ScenarioConfig::toy_default();
        for r in &mut cfg.regions {
            r.demand_quantity = 400;
            r.supply_quantity = 60;
        }
        let prep = prepare_forecasts(&cfg, 11).unwrap();
        assert_eq!(prep.demand_models.len(), cfg.planning_intervals);
        assert_eq!(prep.transition.len(), 144);
        for row in &prep.transition[30] {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let (dd, ds) = prep.drop_rates(&cfg, 140).unwrap();
        assert_eq!(dd.len(), 9);
        assert!(dd.iter().chain(&ds).all(|v| (0.0..1.0).contains(v)));
    }
}
