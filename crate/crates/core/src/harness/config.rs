//! Tunable configuration of one operating point and the sweep grid.

use serde::{Deserialize, Serialize};

use crate::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::planner::TriggerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Configuration {
    pub config_id: String,
    pub look_ahead: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub ttc_risk_threshold: f64,
    pub hazard_lookahead: f64,
    /// Seconds between map update polls.
    pub update_interval: f64,
}

impl Default for Configuration {
    /// The knee point of the default sweep.
    fn default() -> Self {
        Self {
            config_id: "knee".into(),
            look_ahead: 4.5,
            kp: 0.4,
            ki: 0.1,
            kd: 0.0,
            ttc_risk_threshold: 3.0,
            hazard_lookahead: 50.0,
            update_interval: 0.5,
        }
    }
}

impl Configuration {
    pub fn validate(&self) -> Result<()> {
        self.controller().validate()?;
        if !(self.ttc_risk_threshold > 0.0 && self.hazard_lookahead > 0.0 && self.update_interval > 0.0) {
            return Err(Error::InvalidInput(format!("configuration {} out of range", self.config_id)));
        }
        Ok(())
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            look_ahead: self.look_ahead,
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            ..ControllerConfig::default()
        }
    }

    pub fn triggers(&self) -> TriggerConfig {
        TriggerConfig {
            ttc_risk_threshold: self.ttc_risk_threshold,
            hazard_lookahead: self.hazard_lookahead,
            ..TriggerConfig::default()
        }
    }
}

/// Cartesian grid over the controller parameters; everything else is taken
/// from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub look_ahead: Vec<f64>,
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
    #[serde(default)]
    pub base: Option<Configuration>,
}

impl Default for SweepGrid {
    /// 5 look-ahead distances × 4 proportional gains × 3 derivative gains.
    fn default() -> Self {
        Self {
            look_ahead: vec![3.0, 4.5, 6.0, 8.0, 10.0],
            kp: vec![0.4, 0.8, 1.2, 1.6],
            ki: vec![0.1],
            kd: vec![0.0, 0.05, 0.2],
            base: None,
        }
    }
}

impl SweepGrid {
    pub fn configurations(&self) -> Result<Vec<Configuration>> {
        let base = self.base.clone().unwrap_or_default();
        let mut out = Vec::new();
        for &la in &self.look_ahead {
            for &kp in &self.kp {
                for &ki in &self.ki {
                    for &kd in &self.kd {
                        let c = Configuration {
                            config_id: format!("la{la}-kp{kp}-ki{ki}-kd{kd}"),
                            look_ahead: la,
                            kp,
                            ki,
                            kd,
                            ..base.clone()
                        };
                        c.validate()?;
                        out.push(c);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("empty sweep grid".into()));
        }
        Ok(out)
    }
}
