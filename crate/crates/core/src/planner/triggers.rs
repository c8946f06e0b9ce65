use serde::{Deserialize, Serialize};

use super::{ttc_min, Trajectory};
use crate::ldm::{EventStatus, LdmState};
use crate::vehicle::VehicleState;
use crate::world::{is_on_route, Route};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    pub hazard_lookahead: f64,
    pub hazard_corridor: f64,
    pub ttc_risk_threshold: f64,
    pub prefix_horizon: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            hazard_lookahead: 50.0,
            hazard_corridor: 2.0,
            ttc_risk_threshold: 3.0,
            prefix_horizon: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    HazardOnRoute,
    RiskThreshold,
    KnowledgeChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TriggerSet {
    pub hazard_on_route: bool,
    pub risk_threshold: bool,
    pub knowledge_change: bool,
}

impl TriggerSet {
    pub fn any(&self) -> bool {
        self.hazard_on_route || self.risk_threshold || self.knowledge_change
    }

    pub fn triggers(&self) -> Vec<Trigger> {
        let mut out = Vec::new();
        if self.hazard_on_route {
            out.push(Trigger::HazardOnRoute);
        }
        if self.risk_threshold {
            out.push(Trigger::RiskThreshold);
        }
        if self.knowledge_change {
            out.push(Trigger::KnowledgeChange);
        }
        out
    }
}

/// Evaluates the three replanning triggers against the current plan.
///
/// Only gate-accepted events not yet known to `plan` fire the hazard
/// trigger; the risk trigger uses confident tracks along the plan prefix.
pub fn check_triggers(
    ldm: &LdmState,
    route: &Route,
    plan: &Trajectory,
    ego: &VehicleState,
    trig: &TriggerConfig,
    b_obstacle: f64,
    radius_sum: f64,
) -> TriggerSet {
    let hazard_on_route = ldm.events.iter().any(|e| {
        e.status == EventStatus::Accepted
            && !plan.known_events.contains(&e.event_id)
            && is_on_route(e.position, ego.position(), &route.reference_path, trig.hazard_corridor, trig.hazard_lookahead)
    });

    let s0 = plan.sample_at(ego.position()).arc_length;
    let mut prefix = vec![ego.position()];
    prefix.extend(plan.segment_points(s0, (ego.speed * trig.prefix_horizon).max(1.0)));
    let objects: Vec<_> = ldm
        .objects
        .iter()
        .filter(|t| t.existence_belief >= b_obstacle)
        .map(|t| (t.position, t.velocity))
        .collect();
    let ttc = ttc_min(&prefix, ego.speed, &objects, radius_sum, trig.prefix_horizon);
    let risk_threshold = ttc < trig.ttc_risk_threshold;

    TriggerSet {
        hazard_on_route,
        risk_threshold,
        knowledge_change: ldm.active_map.version_id != plan.planned_on_version,
    }
}
