use std::fmt;

use serde::{Deserialize, Serialize};

/// Additive dB ledger of a sounder link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub source_power_dbm: f64,
    pub amplifier_gain_db: f64,
    pub tx_antenna_gain_dbi: f64,
    pub tx_hardware_loss_db: f64,
    pub rx_antenna_gain_dbi: f64,
    pub lna_gain_db: f64,
    pub rx_cable_loss_db: f64,
    pub switch_insertion_loss_db: f64,
    pub noise_density_dbm_hz: f64,
    /// Bandwidth expressed in dB·Hz (90 for 1 GHz).
    pub bandwidth_db_hz: f64,
    pub noise_figure_db: f64,
    pub snr_threshold_db: f64,
}

impl BudgetLedger {
    /// The 28 GHz horn-to-array configuration: -6 dBm source, 47 dB PA,
    /// 30 dBi horn, 4 dB Tx loss, 5 dBi array, 20 dB LNA, 3 dB cable,
    /// 10 dB switch, -147.2 dBm/Hz over 1 GHz, 6 dB NF, 0 dB threshold.
    pub fn mmwave_28ghz() -> Self {
        BudgetLedger {
            source_power_dbm: -6.0,
            amplifier_gain_db: 47.0,
            tx_antenna_gain_dbi: 30.0,
            tx_hardware_loss_db: 4.0,
            rx_antenna_gain_dbi: 5.0,
            lna_gain_db: 20.0,
            rx_cable_loss_db: 3.0,
            switch_insertion_loss_db: 10.0,
            noise_density_dbm_hz: -147.2,
            bandwidth_db_hz: 90.0,
            noise_figure_db: 6.0,
            snr_threshold_db: 0.0,
        }
    }

    pub fn zero() -> Self {
        BudgetLedger {
            source_power_dbm: 0.0,
            amplifier_gain_db: 0.0,
            tx_antenna_gain_dbi: 0.0,
            tx_hardware_loss_db: 0.0,
            rx_antenna_gain_dbi: 0.0,
            lna_gain_db: 0.0,
            rx_cable_loss_db: 0.0,
            switch_insertion_loss_db: 0.0,
            noise_density_dbm_hz: 0.0,
            bandwidth_db_hz: 0.0,
            noise_figure_db: 0.0,
            snr_threshold_db: 0.0,
        }
    }

    fn fields(&self) -> [(&'static str, f64, &'static str); 12] {
        [
            ("source_power", self.source_power_dbm, "dBm"),
            ("amplifier_gain", self.amplifier_gain_db, "dB"),
            ("tx_antenna_gain", self.tx_antenna_gain_dbi, "dBi"),
            ("tx_hardware_loss", self.tx_hardware_loss_db, "dB"),
            ("rx_antenna_gain", self.rx_antenna_gain_dbi, "dBi"),
            ("lna_gain", self.lna_gain_db, "dB"),
            ("rx_cable_loss", self.rx_cable_loss_db, "dB"),
            ("switch_insertion_loss", self.switch_insertion_loss_db, "dB"),
            ("noise_density", self.noise_density_dbm_hz, "dBm/Hz"),
            ("bandwidth", self.bandwidth_db_hz, "dB·Hz"),
            ("noise_figure", self.noise_figure_db, "dB"),
            ("snr_threshold", self.snr_threshold_db, "dB"),
        ]
    }

    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        for (name, v, _) in self.fields() {
            if !v.is_finite() {
                errs.push(format!("budget.{name} must be finite"));
            }
        }
    }

    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_density_dbm_hz + self.bandwidth_db_hz
    }

    pub fn noise_floor_dbm(&self) -> f64 {
        self.noise_power_dbm() + self.noise_figure_db
    }

    pub fn eirp_dbm(&self) -> f64 {
        self.source_power_dbm + self.amplifier_gain_db + self.tx_antenna_gain_dbi
            - self.tx_hardware_loss_db
    }

    pub fn rx_chain_gain_db(&self) -> f64 {
        self.rx_antenna_gain_dbi + self.lna_gain_db
            - self.rx_cable_loss_db
            - self.switch_insertion_loss_db
    }

    /// Per-bin complex noise variance in channel units (|H|²) for which the
    /// received SNR reaches 0 dB at a propagation loss equal to
    /// `max_path_loss + snr_threshold`.
    pub fn channel_noise_variance(&self) -> f64 {
        10f64.powf((self.noise_floor_dbm() - self.eirp_dbm() - self.rx_chain_gain_db()) / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub ledger: BudgetLedger,
    pub noise_power_dbm: f64,
    pub noise_floor_dbm: f64,
    pub eirp_dbm: f64,
    pub rx_chain_gain_db: f64,
    pub max_path_loss_db: f64,
    pub reference_db: Option<f64>,
    /// `max_path_loss_db - reference_db`.
    pub residual_db: Option<f64>,
}

impl BudgetReport {
    /// Whether the computed loss disagrees with the reference by more
    /// than `tol` dB.
    pub fn flagged(&self, tol: f64) -> bool {
        self.residual_db.is_some_and(|r| r.abs() > tol)
    }
}

/// Maximum propagation loss the ledger can measure at the SNR threshold.
pub fn max_measurable_path_loss(ledger: &BudgetLedger, reference_db: Option<f64>) -> BudgetReport {
    let max_pl = ledger.eirp_dbm() + ledger.rx_chain_gain_db()
        - ledger.noise_floor_dbm()
        - ledger.snr_threshold_db;
    BudgetReport {
        ledger: ledger.clone(),
        noise_power_dbm: ledger.noise_power_dbm(),
        noise_floor_dbm: ledger.noise_floor_dbm(),
        eirp_dbm: ledger.eirp_dbm(),
        rx_chain_gain_db: ledger.rx_chain_gain_db(),
        max_path_loss_db: max_pl,
        reference_db,
        residual_db: reference_db.map(|r| max_pl - r),
    }
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "link budget")?;
        for (name, v, unit) in self.ledger.fields() {
            writeln!(f, "  {name:<24} {v:>9.2} {unit}")?;
        }
        writeln!(f, "  {:<24} {:>9.2} dBm", "eirp", self.eirp_dbm)?;
        writeln!(f, "  {:<24} {:>9.2} dB", "rx_chain_gain", self.rx_chain_gain_db)?;
        writeln!(f, "  {:<24} {:>9.2} dBm", "noise_power", self.noise_power_dbm)?;
        writeln!(f, "  {:<24} {:>9.2} dBm", "noise_floor", self.noise_floor_dbm)?;
        writeln!(f, "  {:<24} {:>9.2} dB", "max_path_loss", self.max_path_loss_db)?;
        if let (Some(r), Some(d)) = (self.reference_db, self.residual_db) {
            let flag = if d.abs() > 0.05 { "  <-- MISMATCH" } else { "" };
            writeln!(f, "  {:<24} {:>9.2} dB (residual {:+.2} dB){flag}", "reference", r, d)?;
        }
        Ok(())
    }
}
