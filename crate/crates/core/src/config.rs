//! Machine configuration.
//!
//! Every micro-architectural parameter the functional and timing models
//! consume lives in [`MachineConfig`]. Two validation levels exist:
//! [`MachineConfig::validate`] checks what the models need to run at all,
//! [`MachineConfig::validate_conformant`] additionally pins the reference
//! design point (RLEN = 128, eight registers, one register row per bus beat).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bits in one accumulator lane; a register has `rlen_bits / LANE_BITS` rows.
pub const LANE_BITS: u32 = 32;

/// Largest register file the 5-bit encoding fields are allowed to address.
pub const MAX_MATRIX_REGS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineConfig {
    pub rlen_bits: u32,
    pub num_matrix_regs: u32,
    pub mrf_read_ports: u32,
    pub mrf_write_ports: u32,
    pub lsu_bus_bits: u32,
    pub num_banks: u32,
    pub bank_size_bytes: u32,
    pub sa_mmac_latency_cycles: u32,
    pub sa_mmac_steady_cycles: u32,
    pub lsu_turnaround_cycles: u32,
    pub offload_issue_per_cycle: u32,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            rlen_bits: 128,
            num_matrix_regs: 8,
            mrf_read_ports: 4,
            mrf_write_ports: 3,
            lsu_bus_bits: 128,
            num_banks: 4,
            bank_size_bytes: 32 * 1024,
            sa_mmac_latency_cycles: 12,
            sa_mmac_steady_cycles: 4,
            lsu_turnaround_cycles: 3,
            offload_issue_per_cycle: 1,
        }
    }
}

/// One variant per violated rule so callers (and tests) can tell them apart.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("rlen_bits = {0} must be a multiple of 32 and at least 64")]
    RlenShape(u32),
    #[error("num_matrix_regs = {0} must be in 1..={MAX_MATRIX_REGS}")]
    RegisterCount(u32),
    #[error("mrf_read_ports = {0}: at least 2 are needed to fetch both mmac operands")]
    ReadPorts(u32),
    #[error("mrf_write_ports = {0}: at least 1 is required")]
    WritePorts(u32),
    #[error("lsu_bus_bits = {0} must be a positive multiple of 32")]
    BusWidth(u32),
    #[error("num_banks = {0} must be positive")]
    BankCount(u32),
    #[error("bank_size_bytes = {0} must be a positive multiple of 4")]
    BankSize(u32),
    #[error("memory capacity {0} bytes exceeds the 32-bit address space")]
    Capacity(u64),
    #[error("sa_mmac_steady_cycles = {steady} must equal the {rows} rows per register")]
    SteadyCycles { steady: u32, rows: u32 },
    #[error("sa_mmac_latency_cycles = {latency} must be three stages of {steady} cycles")]
    Latency { latency: u32, steady: u32 },
    #[error("offload_issue_per_cycle must be at least 1")]
    IssueRate,
    #[error("reference design requires rlen_bits = 128, got {0}")]
    ConformantRlen(u32),
    #[error("reference design requires exactly 8 matrix registers, got {0}")]
    ConformantRegisters(u32),
    #[error("reference design moves one register row per beat: lsu_bus_bits {bus} != rlen_bits {rlen}")]
    ConformantBus { bus: u32, rlen: u32 },
    #[error(
        "reference design spreads one row over all banks: {banks} banks x 4 bytes must divide {bus_bytes} bus bytes"
    )]
    ConformantBanks { banks: u32, bus_bytes: u32 },
}

impl MachineConfig {
    /// Defaults scaled to a different row length, keeping one row per bus beat.
    pub fn with_rlen(rlen_bits: u32) -> Self {
        let rows = rlen_bits / LANE_BITS;
        Self {
            rlen_bits,
            lsu_bus_bits: rlen_bits,
            sa_mmac_steady_cycles: rows,
            sa_mmac_latency_cycles: 3 * rows,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.rlen_bits.is_multiple_of(LANE_BITS) || self.rlen_bits < 64 {
            return Err(ConfigError::RlenShape(self.rlen_bits));
        }
        if self.num_matrix_regs == 0 || self.num_matrix_regs > MAX_MATRIX_REGS {
            return Err(ConfigError::RegisterCount(self.num_matrix_regs));
        }
        if self.mrf_read_ports < 2 {
            return Err(ConfigError::ReadPorts(self.mrf_read_ports));
        }
        if self.mrf_write_ports == 0 {
            return Err(ConfigError::WritePorts(self.mrf_write_ports));
        }
        if self.lsu_bus_bits == 0 || !self.lsu_bus_bits.is_multiple_of(LANE_BITS) {
            return Err(ConfigError::BusWidth(self.lsu_bus_bits));
        }
        if self.num_banks == 0 {
            return Err(ConfigError::BankCount(self.num_banks));
        }
        if self.bank_size_bytes == 0 || !self.bank_size_bytes.is_multiple_of(4) {
            return Err(ConfigError::BankSize(self.bank_size_bytes));
        }
        if self.capacity_bytes() > u64::from(u32::MAX) + 1 {
            return Err(ConfigError::Capacity(self.capacity_bytes()));
        }
        let rows = self.rows_per_register();
        if self.sa_mmac_steady_cycles != rows {
            return Err(ConfigError::SteadyCycles {
                steady: self.sa_mmac_steady_cycles,
                rows,
            });
        }
        if self.sa_mmac_latency_cycles != 3 * self.sa_mmac_steady_cycles {
            return Err(ConfigError::Latency {
                latency: self.sa_mmac_latency_cycles,
                steady: self.sa_mmac_steady_cycles,
            });
        }
        if self.offload_issue_per_cycle == 0 {
            return Err(ConfigError::IssueRate);
        }
        Ok(())
    }

    pub fn validate_conformant(&self) -> Result<(), ConfigError> {
        self.validate()?;
        if self.rlen_bits != 128 {
            return Err(ConfigError::ConformantRlen(self.rlen_bits));
        }
        if self.num_matrix_regs != 8 {
            return Err(ConfigError::ConformantRegisters(self.num_matrix_regs));
        }
        if self.lsu_bus_bits != self.rlen_bits {
            return Err(ConfigError::ConformantBus {
                bus: self.lsu_bus_bits,
                rlen: self.rlen_bits,
            });
        }
        let bus_bytes = self.lsu_bus_bits / 8;
        if !bus_bytes.is_multiple_of(self.num_banks * 4) {
            return Err(ConfigError::ConformantBanks {
                banks: self.num_banks,
                bus_bytes,
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn rows_per_register(&self) -> u32 {
        self.rlen_bits / LANE_BITS
    }

    pub fn row_bytes(&self) -> u32 {
        self.rlen_bits / 8
    }

    pub fn register_bytes(&self) -> u32 {
        self.rows_per_register() * self.row_bytes()
    }

    pub fn capacity_bytes(&self) -> u64 {
        u64::from(self.num_banks) * u64::from(self.bank_size_bytes)
    }

    /// Bus cycles needed to move one register row. A beat carries
    /// `lsu_bus_bits`, but never more words than there are banks.
    pub fn mem_cycles_per_row(&self) -> u32 {
        let words_per_row = self.rlen_bits / LANE_BITS;
        let words_per_beat = (self.lsu_bus_bits / LANE_BITS).min(self.num_banks).max(1);
        words_per_row.div_ceil(words_per_beat)
    }

    /// Memory-port cycles of one full-register burst.
    pub fn burst_cycles(&self) -> u32 {
        self.rows_per_register() * self.mem_cycles_per_row()
    }

    /// Bank holding the 32-bit word at `addr`; words interleave round-robin.
    pub fn bank_of(&self, addr: u64) -> u32 {
        ((addr / 4) % u64::from(self.num_banks)) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_conformant() {
        let cfg = MachineConfig::default();
        cfg.validate_conformant().unwrap();
        assert_eq!(cfg.rows_per_register(), 4);
        assert_eq!(cfg.capacity_bytes(), 128 * 1024);
        assert_eq!(cfg.burst_cycles(), 4);
    }

    #[test]
    fn scaled_configs_validate_but_are_not_conformant() {
        for rlen in [64, 256] {
            let cfg = MachineConfig::with_rlen(rlen);
            cfg.validate().unwrap();
            assert_eq!(cfg.validate_conformant(), Err(ConfigError::ConformantRlen(rlen)));
        }
    }

    #[test]
    fn each_rule_has_its_own_error() {
        let base = MachineConfig::default();
        let cases: Vec<(MachineConfig, ConfigError)> = vec![
            (
                MachineConfig {
                    rlen_bits: 96 + 1,
                    ..base
                },
                ConfigError::RlenShape(97),
            ),
            (MachineConfig { rlen_bits: 32, ..base }, ConfigError::RlenShape(32)),
            (
                MachineConfig {
                    num_matrix_regs: 9,
                    ..base
                },
                ConfigError::RegisterCount(9),
            ),
            (
                MachineConfig {
                    mrf_read_ports: 1,
                    ..base
                },
                ConfigError::ReadPorts(1),
            ),
            (
                MachineConfig {
                    mrf_write_ports: 0,
                    ..base
                },
                ConfigError::WritePorts(0),
            ),
            (
                MachineConfig {
                    lsu_bus_bits: 48,
                    ..base
                },
                ConfigError::BusWidth(48),
            ),
            (MachineConfig { num_banks: 0, ..base }, ConfigError::BankCount(0)),
            (
                MachineConfig {
                    bank_size_bytes: 6,
                    ..base
                },
                ConfigError::BankSize(6),
            ),
            (
                MachineConfig {
                    sa_mmac_steady_cycles: 3,
                    ..base
                },
                ConfigError::SteadyCycles { steady: 3, rows: 4 },
            ),
            (
                MachineConfig {
                    sa_mmac_latency_cycles: 10,
                    ..base
                },
                ConfigError::Latency { latency: 10, steady: 4 },
            ),
            (
                MachineConfig {
                    offload_issue_per_cycle: 0,
                    ..base
                },
                ConfigError::IssueRate,
            ),
        ];
        for (cfg, err) in cases {
            assert_eq!(cfg.validate(), Err(err));
        }

        let conformant: Vec<(MachineConfig, ConfigError)> = vec![
            (
                MachineConfig {
                    num_matrix_regs: 4,
                    ..base
                },
                ConfigError::ConformantRegisters(4),
            ),
            (
                MachineConfig {
                    lsu_bus_bits: 64,
                    ..base
                },
                ConfigError::ConformantBus { bus: 64, rlen: 128 },
            ),
            (
                MachineConfig { num_banks: 8, ..base },
                ConfigError::ConformantBanks {
                    banks: 8,
                    bus_bytes: 16,
                },
            ),
        ];
        for (cfg, err) in conformant {
            cfg.validate().unwrap();
            assert_eq!(cfg.validate_conformant(), Err(err));
        }
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let good = serde_json::to_string(&MachineConfig::default()).unwrap();
        assert_eq!(MachineConfig::from_json(&good).unwrap(), MachineConfig::default());
        let bad = good.replacen('{', "{\"vlen_bits\":128,", 1);
        assert!(MachineConfig::from_json(&bad).is_err());
    }

    #[test]
    fn narrow_bank_count_slows_bursts() {
        let cfg = MachineConfig {
            num_banks: 2,
            ..MachineConfig::default()
        };
        assert_eq!(cfg.mem_cycles_per_row(), 2);
        assert_eq!(cfg.bank_of(0), 0);
        assert_eq!(cfg.bank_of(4), 1);
        assert_eq!(cfg.bank_of(8), 0);
    }
}
