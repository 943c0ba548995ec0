//! Dispatch strategies behind a common trait, registered by name and
//! selected at runtime.

use std::collections::BTreeMap;

use crate::baselines::{batch_match, fcfs_match};
use crate::core::Guidance;
use crate::exec::{
    identity_priority, relocate_greedy, run_matching_interval, Assignment, ExecError,
    MatchLedger, MatchPool,
};
use rand_chacha::ChaCha8Rng;

/// Snapshot handed to a policy at a decision point.
pub struct WorldView<'a> {
    pub time_s: f64,
    /// Vacant vehicles and waiting customers grouped by origin zone.
    pub zone_pools: &'a [MatchPool],
    /// The same agents in one zone-agnostic pool, for policies that ignore
    /// zone structure.
    pub global_pool: &'a MatchPool,
}

/// Instruction to send `count` vacant vehicles from one zone toward another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelocationOrder {
    pub from_zone: usize,
    pub to_zone: usize,
    pub count: u64,
}

pub trait DispatchPolicy {
    fn name(&self) -> &'static str;

    /// Whether the simulator must solve the strategic layer and feed
    /// guidance before each strategic interval.
    fn needs_guidance(&self) -> bool {
        false
    }

    /// Whether matching should also run immediately on each arrival event
    /// instead of only at batch ticks.
    fn continuous(&self) -> bool {
        false
    }

    /// Called at each strategic-interval start with fresh guidance (when
    /// `needs_guidance`), resetting any per-interval state.
    fn begin_strategic_interval(&mut self, _guidance: Option<&Guidance>) {}

    fn on_match_tick(
        &mut self,
        view: &WorldView,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Assignment>, ExecError>;

    /// Called at the end of the last matching tick of each strategic
    /// interval; returns relocation orders.
    fn on_strategic_boundary(
        &mut self,
        _view: &WorldView,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<RelocationOrder>, ExecError> {
        Ok(Vec::new())
    }
}

pub struct FcfsPolicy;

impl DispatchPolicy for FcfsPolicy {
    fn name(&self) -> &'static str {
        "fcfs"
    }

    fn continuous(&self) -> bool {
        true
    }

    fn on_match_tick(
        &mut self,
        view: &WorldView,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Assignment>, ExecError> {
        Ok(fcfs_match(view.global_pool))
    }
}

/// Zone-local optimal batch matching; cross-zone pick-ups are not allowed.
pub struct BatchPolicy;

impl DispatchPolicy for BatchPolicy {
    fn name(&self) -> &'static str {
        "batch"
    }

    fn on_match_tick(
        &mut self,
        view: &WorldView,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Assignment>, ExecError> {
        let mut out = Vec::new();
        for pool in view.zone_pools {
            out.extend(batch_match(pool, identity_priority)?);
        }
        Ok(out)
    }
}

/// Guidance-driven per-zone matching, optionally dispatching the guided
/// relocations at strategic boundaries.
pub struct MmaPolicy {
    relocation_enabled: bool,
    ledger: Option<MatchLedger>,
    relocate_target: Vec<Vec<f64>>,
}

impl MmaPolicy {
    pub fn new(relocation_enabled: bool) -> Self {
        Self { relocation_enabled, ledger: None, relocate_target: Vec::new() }
    }
}

impl DispatchPolicy for MmaPolicy {
    fn name(&self) -> &'static str {
        if self.relocation_enabled {
            "mma"
        } else {
            "mma-noreloc"
        }
    }

    fn needs_guidance(&self) -> bool {
        true
    }

    fn begin_strategic_interval(&mut self, guidance: Option<&Guidance>) {
        match guidance {
            Some(g) => {
                self.ledger = Some(MatchLedger::new(g.match_target.clone()));
                self.relocate_target = g.relocate_target.clone();
            }
            None => {
                self.ledger = None;
                self.relocate_target = Vec::new();
            }
        }
    }

    fn on_match_tick(
        &mut self,
        view: &WorldView,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Assignment>, ExecError> {
        // Without guidance yet (warm-up), behave like zone-local batch matching.
        let Some(ledger) = self.ledger.as_mut() else {
            let mut out = Vec::new();
            for pool in view.zone_pools {
                out.extend(batch_match(pool, identity_priority)?);
            }
            return Ok(out);
        };
        let mut out = Vec::new();
        for (r, pool) in view.zone_pools.iter().enumerate() {
            let res = run_matching_interval(ledger, r, pool, identity_priority, rng)?;
            out.extend(res.assignments);
        }
        Ok(out)
    }

    fn on_strategic_boundary(
        &mut self,
        view: &WorldView,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<RelocationOrder>, ExecError> {
        if !self.relocation_enabled || self.relocate_target.is_empty() {
            return Ok(Vec::new());
        }
        let mut orders = Vec::new();
        for (r, row) in self.relocate_target.iter().enumerate() {
            let idle = view.zone_pools.get(r).map_or(0, |p| p.vehicles.len() as u64);
            if idle == 0 {
                continue;
            }
            let z = relocate_greedy(row, idle);
            for (j, &count) in z.iter().enumerate() {
                if count > 0 && j != r {
                    orders.push(RelocationOrder { from_zone: r, to_zone: j, count });
                }
            }
        }
        Ok(orders)
    }
}

pub type PolicyFactory = fn() -> Box<dyn DispatchPolicy>;

pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// Registry preloaded with the built-in strategies.
    pub fn builtin() -> Self {
        let mut reg = Self::new();
        reg.register("fcfs", || Box::new(FcfsPolicy));
        reg.register("batch", || Box::new(BatchPolicy));
        reg.register("mma-noreloc", || Box::new(MmaPolicy::new(false)));
        reg.register("mma", || Box::new(MmaPolicy::new(true)));
        reg
    }

    pub fn register(&mut self, name: &str, factory: PolicyFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn DispatchPolicy>, ExecError> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| {
            ExecError::InvalidInput(format!(
                "unknown policy '{name}'; available: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{PoolCustomer, PoolVehicle};
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn registry_lists_builtins_and_rejects_unknown() {
        let reg = PolicyRegistry::builtin();
        assert_eq!(reg.names(), vec!["batch", "fcfs", "mma", "mma-noreloc"]);
        for name in reg.names() {
            assert_eq!(reg.create(&name).unwrap().name(), name);
        }
        assert!(reg.create("nope").is_err());
    }

    fn one_zone_view<'a>(
        zone_pools: &'a [MatchPool],
        global_pool: &'a MatchPool,
    ) -> WorldView<'a> {
        WorldView { time_s: 0.0, zone_pools, global_pool }
    }

    #[test]
    fn mma_falls_back_to_batch_without_guidance() {
        let pool = MatchPool {
            customers: vec![PoolCustomer { id: 1, dest_zone: 0, arrival_seq: 1, xy: [1.0, 0.0] }],
            vehicles: vec![PoolVehicle { id: 9, xy: [0.0, 0.0] }],
        };
        let zones = vec![pool.clone()];
        let mut p = MmaPolicy::new(true);
        let out = p.on_match_tick(&one_zone_view(&zones, &pool), &mut rng()).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn mma_relocation_orders_follow_guidance() {
        let guidance = Guidance {
            interval: 0,
            match_target: vec![vec![0.0; 2]; 2],
            relocate_target: vec![vec![0.0, 1.4], vec![0.0, 0.0]],
        };
        let mut p = MmaPolicy::new(true);
        p.begin_strategic_interval(Some(&guidance));
        let zones = vec![
            MatchPool {
                customers: Vec::new(),
                vehicles: (0..3).map(|i| PoolVehicle { id: i, xy: [0.0, 0.0] }).collect(),
            },
            MatchPool::default(),
        ];
        let global = MatchPool::default();
        let orders = p.on_strategic_boundary(&one_zone_view(&zones, &global), &mut rng()).unwrap();
        assert_eq!(orders, vec![RelocationOrder { from_zone: 0, to_zone: 1, count: 2 }]);
    }

    #[test]
    fn disabled_relocation_emits_nothing() {
        let guidance = Guidance {
            interval: 0,
            match_target: vec![vec![0.0; 2]; 2],
            relocate_target: vec![vec![0.0, 5.0], vec![0.0, 0.0]],
        };
        let mut p = MmaPolicy::new(false);
        p.begin_strategic_interval(Some(&guidance));
        let zones = vec![
            MatchPool {
                customers: Vec::new(),
                vehicles: vec![PoolVehicle { id: 0, xy: [0.0, 0.0] }],
            },
            MatchPool::default(),
        ];
        let global = MatchPool::default();
        let orders = p.on_strategic_boundary(&one_zone_view(&zones, &global), &mut rng()).unwrap();
        assert!(orders.is_empty());
    }
}
