use serde::{Deserialize, Serialize};

use super::HpoError;

/// Grid carbon intensity of the local servers, gCO2 per kWh.
pub const DEFAULT_EMISSION_FACTOR: f64 = 324.0;

pub fn kg_co2(energy_kwh: f64, factor_g_per_kwh: f64) -> f64 {
    energy_kwh * factor_g_per_kwh / 1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionEntry {
    pub trial_id: usize,
    pub energy_kwh: f64,
    pub factor_g_per_kwh: f64,
    pub kg_co2: f64,
}

/// Append-only record of energy use converted to CO2 mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionsLedger {
    pub default_factor: f64,
    entries: Vec<EmissionEntry>,
}

impl Default for EmissionsLedger {
    fn default() -> Self {
        Self::new(DEFAULT_EMISSION_FACTOR)
    }
}

impl EmissionsLedger {
    pub fn new(default_factor: f64) -> Self {
        EmissionsLedger {
            default_factor,
            entries: Vec::new(),
        }
    }

    pub fn record(&mut self, trial_id: usize, energy_kwh: f64) -> Result<&EmissionEntry, HpoError> {
        let factor = self.default_factor;
        self.record_with_factor(trial_id, energy_kwh, factor)
    }

    pub fn record_with_factor(
        &mut self,
        trial_id: usize,
        energy_kwh: f64,
        factor_g_per_kwh: f64,
    ) -> Result<&EmissionEntry, HpoError> {
        if !energy_kwh.is_finite() || energy_kwh < 0.0 {
            return Err(HpoError::Range(energy_kwh));
        }
        if !factor_g_per_kwh.is_finite() || factor_g_per_kwh < 0.0 {
            return Err(HpoError::Config(format!("invalid emission factor {factor_g_per_kwh}")));
        }
        self.entries.push(EmissionEntry {
            trial_id,
            energy_kwh,
            factor_g_per_kwh,
            kg_co2: kg_co2(energy_kwh, factor_g_per_kwh),
        });
        Ok(self.entries.last().unwrap())
    }

    pub fn entries(&self) -> &[EmissionEntry] {
        &self.entries
    }

    pub fn total_kwh(&self) -> f64 {
        self.entries.iter().map(|e| e.energy_kwh).sum()
    }

    pub fn total_kg(&self) -> f64 {
        self.entries.iter().map(|e| e.kg_co2).sum()
    }
}

/// Appends one entry and returns the ledger.
pub fn record_emissions(
    mut ledger: EmissionsLedger,
    trial_id: usize,
    energy_kwh: f64,
    factor_g_per_kwh: f64,
) -> Result<EmissionsLedger, HpoError> {
    ledger.record_with_factor(trial_id, energy_kwh, factor_g_per_kwh)?;
    Ok(ledger)
}
