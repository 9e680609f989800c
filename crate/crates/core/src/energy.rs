//! Per-sensor energy accounting and the unit model that folds movement,
//! start/brake actions and radio traffic into one number.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub meters_moved: f64,
    pub start_brake_count: u64,
    pub tx_count: u64,
    pub rx_count: u64,
}

impl EnergyLedger {
    pub fn new(meters_moved: f64, start_brake_count: u64, tx_count: u64, rx_count: u64) -> Self {
        EnergyLedger { meters_moved, start_brake_count, tx_count, rx_count }
    }
}

/// Weights converting ledger counters into energy units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub rx_unit: f64,
    pub tx_unit: f64,
    pub move_per_meter: f64,
    pub start_brake: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        let tx_unit = 1.125;
        let move_per_meter = 300.0 * tx_unit;
        EnergyModel { rx_unit: 1.0, tx_unit, move_per_meter, start_brake: move_per_meter }
    }
}

impl EnergyModel {
    pub fn units(&self, ledger: &EnergyLedger) -> f64 {
        ledger.rx_count as f64 * self.rx_unit
            + ledger.tx_count as f64 * self.tx_unit
            + ledger.meters_moved * self.move_per_meter
            + ledger.start_brake_count as f64 * self.start_brake
    }

    /// Cost of one straight leg: the distance plus its start and brake.
    pub fn leg(&self, meters: f64) -> f64 {
        if meters > 0.0 {
            meters * self.move_per_meter + 2.0 * self.start_brake
        } else {
            0.0
        }
    }
}
