//! Shared domain types: zones, time discretization, agents, guidance, metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ZoneId = usize;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Zone topology: strategic-interval travel counts `a[i][j]` and
/// centroid distances in km.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneGraph {
    pub travel_intervals: Vec<Vec<u32>>,
    pub distance_km: Vec<Vec<f64>>,
}

impl ZoneGraph {
    pub fn new(travel_intervals: Vec<Vec<u32>>, distance_km: Vec<Vec<f64>>) -> Result<Self, CoreError> {
        let n = travel_intervals.len();
        if distance_km.len() != n {
            return Err(CoreError::InvalidInput("travel/distance matrices differ in size".into()));
        }
        for i in 0..n {
            if travel_intervals[i].len() != n || distance_km[i].len() != n {
                return Err(CoreError::InvalidInput("matrices must be square".into()));
            }
            if travel_intervals[i][i] != 0 {
                return Err(CoreError::InvalidInput(format!("a[{i}][{i}] must be 0")));
            }
            if distance_km[i][i] != 0.0 {
                return Err(CoreError::InvalidInput(format!("distance[{i}][{i}] must be 0")));
            }
            for j in 0..n {
                if !distance_km[i][j].is_finite() || distance_km[i][j] < 0.0 {
                    return Err(CoreError::InvalidInput("distances must be finite and non-negative".into()));
                }
                if (distance_km[i][j] - distance_km[j][i]).abs() > 1e-9 {
                    return Err(CoreError::InvalidInput("distance matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self { travel_intervals, distance_km })
    }

    pub fn n_zones(&self) -> usize {
        self.travel_intervals.len()
    }

    /// Builds the graph from zone centroids: `a[i][j] = ceil(travel_time / dt)`
    /// clamped to at least 1 for distinct zones.
    pub fn from_centroids(
        centers: &[[f64; 2]],
        speed_kmh: f64,
        detour: f64,
        strategic_interval_s: u32,
    ) -> Result<Self, CoreError> {
        let n = centers.len();
        let mut dist = vec![vec![0.0; n]; n];
        let mut a = vec![vec![0u32; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = euclid(centers[i], centers[j]);
                dist[i][j] = d;
                let tt = travel_time_s(centers[i], centers[j], speed_kmh, detour)?;
                a[i][j] = ((tt / strategic_interval_s as f64).ceil() as u32).max(1);
            }
        }
        Self::new(a, dist)
    }
}

/// Nested time discretization and strategic-layer weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HorizonConfig {
    pub strategic_interval_s: u32,
    pub matching_interval_s: u32,
    pub planning_intervals: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.strategic_interval_s == 0 || self.matching_interval_s == 0 {
            return Err(CoreError::InvalidInput("interval lengths must be positive".into()));
        }
        if self.strategic_interval_s % self.matching_interval_s != 0 {
            return Err(CoreError::InvalidInput(
                "strategic interval must be a multiple of the matching interval".into(),
            ));
        }
        if self.planning_intervals < 1 {
            return Err(CoreError::InvalidInput("planning_intervals must be >= 1".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(CoreError::InvalidInput("weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Strategic interval index for a clock time in seconds.
    pub fn interval_of(&self, time_s: f64) -> usize {
        (time_s / self.strategic_interval_s as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestState {
    Waiting,
    Matched,
    InVehicle,
    Completed,
    Abandoned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub gen_time_s: f64,
    pub origin_zone: ZoneId,
    pub dest_zone: ZoneId,
    pub origin_xy: [f64; 2],
    pub dest_xy: [f64; 2],
    pub patience_s: f64,
    pub state: RequestState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleState {
    Vacant,
    PickingUp,
    Occupied,
    Relocating,
    Offline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u64,
    pub entry_time_s: f64,
    pub xy: [f64; 2],
    pub zone: ZoneId,
    pub state: VehicleState,
    pub idle_since_s: f64,
    pub patience_s: f64,
    pub busy_until_s: f64,
    pub target_zone: Option<ZoneId>,
}

/// The current-interval slice of a strategic solution consumed by the
/// execution layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Guidance {
    pub interval: usize,
    /// `match_target[r][j]`: vehicles to serve demand from zone r to j.
    pub match_target: Vec<Vec<f64>>,
    /// `relocate_target[r][j]`: idle vehicles to send from zone r to j.
    pub relocate_target: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimMetrics {
    pub generated_requests: u64,
    pub completed_requests: u64,
    pub abandoned_requests: u64,
    pub completion_rate: f64,
    pub mean_pickup_distance_km: f64,
    pub relocation_count: u64,
    /// `waiting_by_interval[k][r]`: waiting requests in zone r at the start
    /// of strategic interval k.
    pub waiting_by_interval: Vec<Vec<u64>>,
    pub vacant_by_interval: Vec<Vec<u64>>,
    /// Completed OD counts, for the realized transition matrix.
    pub completed_od: Vec<Vec<u64>>,
}

pub fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Travel time in seconds for a straight-line move scaled by a detour ratio.
pub fn travel_time_s(from: [f64; 2], to: [f64; 2], speed_kmh: f64, detour: f64) -> Result<f64, CoreError> {
    if !(from[0].is_finite() && from[1].is_finite() && to[0].is_finite() && to[1].is_finite()) {
        return Err(CoreError::InvalidInput("non-finite coordinates".into()));
    }
    if speed_kmh <= 0.0 {
        return Err(CoreError::InvalidInput("speed must be positive".into()));
    }
    if detour < 1.0 {
        return Err(CoreError::InvalidInput("detour ratio must be >= 1".into()));
    }
    Ok(euclid(from, to) * detour / speed_kmh * 3600.0)
}
