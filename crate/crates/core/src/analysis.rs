//! Closed-form ISA bandwidth figures, performance metrics and the cycle
//! oracle the simulator is checked against.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, MachineConfig, LANE_BITS};
use crate::isa::ElemType;
use crate::kernelgen::{k_step, KernelError, MatmulSpec};
use crate::sim::{SimReport, Stage, TraceEvent, Unit};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("{what} = {value} is not a multiple of {divisor}")]
    Divisibility {
        what: &'static str,
        value: u32,
        divisor: u32,
    },
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("report has zero cycles")]
    ZeroCycles,
    #[error(transparent)]
    Spec(#[from] KernelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn divides(what: &'static str, value: u32, divisor: u32) -> Result<(), AnalysisError> {
    if divisor == 0 {
        return Err(AnalysisError::Zero(what));
    }
    if value == 0 || !value.is_multiple_of(divisor) {
        return Err(AnalysisError::Divisibility { what, value, divisor });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Isa {
    Vector,
    Matrix,
}

/// A ratio kept exact; MACs per cycle are whole numbers for valid
/// parameters but the type does not assume it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Self {
        fn gcd(a: u64, b: u64) -> u64 {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn as_integer(self) -> Option<u64> {
        (self.den == 1).then_some(self.num)
    }
}

/// MACs and elements moved by one vector MAC instruction.
pub fn vector_instr_traffic(vlen: u32, sew: u32) -> Result<(u64, u64), AnalysisError> {
    divides("vlen", vlen, sew)?;
    let e = u64::from(vlen / sew);
    Ok((e, 4 * e))
}

/// MACs, elements moved and RF-access reduction of one mmac.
pub fn matrix_instr_traffic(rlen: u32, sew: u32) -> Result<(u64, u64, u64), AnalysisError> {
    divides("rlen", rlen, sew)?;
    divides("rlen", rlen, LANE_BITS)?;
    let rows = u64::from(rlen / LANE_BITS);
    let e = u64::from(rlen / sew);
    Ok((rows * rows * e, 4 * rows * e, rows))
}

pub fn macs_per_cycle_at_dlen(isa: Isa, dlen: u32, sew: u32, rlen: u32) -> Result<Rational, AnalysisError> {
    divides("dlen", dlen, sew)?;
    let base = u64::from(dlen / sew);
    match isa {
        Isa::Vector => Ok(Rational::new(base, 1)),
        Isa::Matrix => {
            divides("rlen", rlen, LANE_BITS)?;
            Ok(Rational::new(base * u64::from(rlen / LANE_BITS), 1))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsaTrafficRow {
    pub isa: Isa,
    pub len_bits: u32,
    pub sew: u32,
    pub dlen: u32,
    pub macs_per_instr: u64,
    pub elements_moved_per_instr: u64,
    pub macs_per_cycle_at_dlen: f64,
    pub rf_access_reduction_vs_vector: u64,
}

/// Vector and matrix rows for one `(len, sew, dlen)` point; `len` is VLEN
/// for the vector row and RLEN for the matrix row.
pub fn compare_isa(len: u32, sew: u32, dlen: u32) -> Result<[IsaTrafficRow; 2], AnalysisError> {
    let (vmacs, velems) = vector_instr_traffic(len, sew)?;
    let (mmacs, melems, reduction) = matrix_instr_traffic(len, sew)?;
    let vrate = macs_per_cycle_at_dlen(Isa::Vector, dlen, sew, len)?;
    let mrate = macs_per_cycle_at_dlen(Isa::Matrix, dlen, sew, len)?;
    Ok([
        IsaTrafficRow {
            isa: Isa::Vector,
            len_bits: len,
            sew,
            dlen,
            macs_per_instr: vmacs,
            elements_moved_per_instr: velems,
            macs_per_cycle_at_dlen: vrate.as_f64(),
            rf_access_reduction_vs_vector: 1,
        },
        IsaTrafficRow {
            isa: Isa::Matrix,
            len_bits: len,
            sew,
            dlen,
            macs_per_instr: mmacs,
            elements_moved_per_instr: melems,
            macs_per_cycle_at_dlen: mrate.as_f64(),
            rf_access_reduction_vs_vector: reduction,
        },
    ])
}

pub fn isa_rows_to_csv(rows: &[IsaTrafficRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "isa",
        "len_bits",
        "sew",
        "dlen",
        "macs_per_instr",
        "elements_moved_per_instr",
        "macs_per_cycle_at_dlen",
        "rf_access_reduction_vs_vector",
    ])
    .expect("in-memory write");
    for r in rows {
        let isa = match r.isa {
            Isa::Vector => "vector",
            Isa::Matrix => "matrix",
        };
        w.write_record([
            isa.to_string(),
            r.len_bits.to_string(),
            r.sew.to_string(),
            r.dlen.to_string(),
            r.macs_per_instr.to_string(),
            r.elements_moved_per_instr.to_string(),
            r.macs_per_cycle_at_dlen.to_string(),
            r.rf_access_reduction_vs_vector.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Peak MACs per cycle of the array for one element type.
pub fn peak_macs_per_cycle(etype: ElemType, config: &MachineConfig) -> u64 {
    let rows = u64::from(config.rows_per_register());
    rows * u64::from(config.rlen_bits / etype.sew_bits())
}

/// Lower bound on cycles: the larger of MAC throughput and port traffic.
///
/// Port traffic counts every A and B register load the blocked schedule
/// needs plus one store per output register.
pub fn ideal_cycles(spec: &MatmulSpec, config: &MachineConfig) -> Result<u64, AnalysisError> {
    spec.validate(config)?;
    let compute = spec.macs().div_ceil(peak_macs_per_cycle(spec.etype, config));
    let reg = u64::from(config.register_bytes());
    let bytes_per_cycle = u64::from(config.lsu_bus_bits / 8);
    let tiles = spec.tiles(config) as u64;
    let kit = spec.k_iterations(config) as u64;
    let bytes = tiles * (4 * kit * reg + 4 * reg);
    let memory = bytes.div_ceil(bytes_per_cycle);
    Ok(compute.max(memory))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfMetrics {
    pub cycles: u64,
    pub ideal_cycles: u64,
    pub performance_ideality: f64,
    pub fpu_utilization: f64,
}

pub fn perf_metrics(
    report: &SimReport,
    spec: &MatmulSpec,
    config: &MachineConfig,
) -> Result<PerfMetrics, AnalysisError> {
    if report.total_cycles == 0 {
        return Err(AnalysisError::ZeroCycles);
    }
    let ideal = ideal_cycles(spec, config)?;
    let cycles = report.total_cycles;
    let achieved = report.total_macs as f64 / cycles as f64;
    Ok(PerfMetrics {
        cycles,
        ideal_cycles: ideal,
        performance_ideality: ideal as f64 / cycles as f64,
        fpu_utilization: achieved / peak_macs_per_cycle(spec.etype, config) as f64,
    })
}

/// One row of the metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub etype: ElemType,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub cycles: u64,
    pub performance_ideality: f64,
    pub fpu_utilization: f64,
}

impl MetricRow {
    pub fn new(spec: &MatmulSpec, metrics: &PerfMetrics) -> Self {
        Self {
            etype: spec.etype,
            m: spec.m,
            k: spec.k,
            n: spec.n,
            cycles: metrics.cycles,
            performance_ideality: metrics.performance_ideality,
            fpu_utilization: metrics.fpu_utilization,
        }
    }
}

/// Cycles lost per output block on the memory port between k-loops.
pub const BLOCK_PORT_LOSS: u64 = 3;

/// Cycles before the first load reaches the memory port: the four
/// leading zeroing instructions are offloaded ahead of it.
pub fn oracle_fill_cycles(config: &MachineConfig) -> u64 {
    4u64.div_ceil(u64::from(config.offload_issue_per_cycle))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleOracle {
    /// Closed form over all output blocks.
    pub steady_cycles: u64,
    /// Pipeline fill, reported on its own.
    pub fill_cycles: u64,
}

impl CycleOracle {
    pub fn total(&self) -> u64 {
        self.steady_cycles + self.fill_cycles
    }
}

/// Closed-form cycle count of a generated kernel.
///
/// Per block the port moves four registers per k-iteration and four
/// result registers, then idles for the block's turnaround loss.
pub fn analytical_cycle_oracle(spec: &MatmulSpec, config: &MachineConfig) -> Result<CycleOracle, AnalysisError> {
    config.validate_conformant()?;
    spec.validate(config)?;
    let burst = u64::from(config.burst_cycles());
    let tiles = spec.tiles(config) as u64;
    let kit = (spec.k / k_step(spec.etype, config)) as u64;
    Ok(CycleOracle {
        steady_cycles: tiles * (4 * burst * kit + 4 * burst + BLOCK_PORT_LOSS),
        fill_cycles: oracle_fill_cycles(config),
    })
}

/// Row-granular MRF port traffic implied by a trace.
pub fn rf_access_counts(trace: &[TraceEvent]) -> (u64, u64) {
    let mut reads = 0;
    let mut writes = 0;
    for e in trace {
        match (e.unit, e.stage) {
            (Unit::Sa, Stage::FetchOperands) => reads += 2 * e.len(),
            (Unit::Lsu, Stage::FetchOperands) => reads += e.len(),
            (Unit::Sa, Stage::Writeback) | (Unit::Lsu, Stage::BufferDrain) | (Unit::Perm, Stage::Zero) => {
                writes += e.len()
            }
            _ => {}
        }
    }
    (reads, writes)
}

/// RF row accesses a vector machine needs for the same MAC work: each
/// vector MAC reads two operands and reads and writes the accumulator.
pub fn vector_rf_accesses(macs: u64, vlen: u32, sew: u32) -> Result<u64, AnalysisError> {
    let (per_instr, _) = vector_instr_traffic(vlen, sew)?;
    Ok(macs.div_ceil(per_instr) * 4)
}

/// Matrix RF accesses for the same work, counted the same way.
pub fn matrix_rf_accesses(macs: u64, rlen: u32, sew: u32) -> Result<u64, AnalysisError> {
    let (per_instr, _, _) = matrix_instr_traffic(rlen, sew)?;
    let rows = u64::from(rlen / LANE_BITS);
    Ok(macs.div_ceil(per_instr) * 4 * rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelgen::generate_matmul;
    use crate::sim::simulate;

    #[test]
    fn isa_traffic_examples() {
        assert_eq!(vector_instr_traffic(128, 32).unwrap(), (4, 16));
        assert_eq!(vector_instr_traffic(32, 32).unwrap(), (1, 4));
        assert_eq!(vector_instr_traffic(128, 8).unwrap(), (16, 64));
        assert!(vector_instr_traffic(128, 48).is_err());
        assert_eq!(matrix_instr_traffic(128, 32).unwrap(), (64, 64, 4));
        assert_eq!(matrix_instr_traffic(128, 8).unwrap(), (256, 256, 4));
        let (v, ve) = vector_instr_traffic(32, 8).unwrap();
        assert_eq!(matrix_instr_traffic(32, 8).unwrap(), (v, ve, 1));
    }

    #[test]
    fn macs_per_cycle_ratio_is_row_count() {
        for rlen in [32, 64, 128, 256, 512] {
            for sew in [8, 16, 32] {
                for dlen in [32, 64, 128, 256] {
                    let v = macs_per_cycle_at_dlen(Isa::Vector, dlen, sew, rlen).unwrap();
                    let m = macs_per_cycle_at_dlen(Isa::Matrix, dlen, sew, rlen).unwrap();
                    assert_eq!(
                        Rational::new(m.num * v.den, m.den * v.num),
                        Rational::new(u64::from(rlen / 32), 1)
                    );
                }
            }
        }
        assert_eq!(
            macs_per_cycle_at_dlen(Isa::Matrix, 128, 32, 128).unwrap().as_integer(),
            Some(16)
        );
    }

    #[test]
    fn ideal_cycle_examples() {
        let cfg = MachineConfig::default();
        assert_eq!(
            ideal_cycles(&MatmulSpec::new(64, 64, 64, ElemType::F32), &cfg).unwrap(),
            17408
        );
        assert_eq!(
            ideal_cycles(&MatmulSpec::new(8, 1024, 8, ElemType::F32), &cfg).unwrap(),
            4096 + 16
        );
        // one tile, one k-iteration: 8 register moves beat 32 compute cycles
        assert_eq!(
            ideal_cycles(&MatmulSpec::new(8, 4, 8, ElemType::F32), &cfg).unwrap(),
            32
        );
    }

    #[test]
    fn oracle_examples() {
        let cfg = MachineConfig::default();
        let o = |m, k, n| {
            analytical_cycle_oracle(&MatmulSpec::new(m, k, n, ElemType::F32), &cfg)
                .unwrap()
                .steady_cycles
        };
        assert_eq!(o(64, 64, 64), 17600);
        assert_eq!(o(8, 1024, 8), 4115);
        assert_eq!(o(64, 16, 64), 5312);
        let full = analytical_cycle_oracle(&MatmulSpec::new(8, 4, 8, ElemType::F32), &cfg).unwrap();
        assert_eq!(full.total(), full.steady_cycles + 4);
        assert!(
            analytical_cycle_oracle(&MatmulSpec::new(8, 4, 8, ElemType::F32), &MachineConfig::with_rlen(64)).is_err()
        );
    }

    #[test]
    fn rf_counts_from_trace() {
        let cfg = MachineConfig::default();
        let p = crate::asm::assemble("mmac.f32 m4, m0, m1\nmz m2\n").unwrap();
        let (_, trace, report) = simulate(&p, &cfg).unwrap();
        assert_eq!(rf_access_counts(&trace), (8, 8));
        assert_eq!(rf_access_counts(&trace), (report.mrf_reads, report.mrf_writes));
        let macs = 1 << 16;
        assert_eq!(
            vector_rf_accesses(macs, 128, 32).unwrap() / matrix_rf_accesses(macs, 128, 32).unwrap(),
            4
        );
    }

    #[test]
    fn metrics_bounded() {
        let cfg = MachineConfig::default();
        let spec = MatmulSpec::new(16, 32, 16, ElemType::I16);
        let (_, _, report) = simulate(&generate_matmul(&spec, &cfg).unwrap(), &cfg).unwrap();
        let m = perf_metrics(&report, &spec, &cfg).unwrap();
        assert!(m.performance_ideality > 0.0 && m.performance_ideality <= 1.0);
        assert!(m.fpu_utilization > 0.0 && m.fpu_utilization <= 1.0);
        let zero = SimReport {
            total_cycles: 0,
            ..report
        };
        assert_eq!(perf_metrics(&zero, &spec, &cfg), Err(AnalysisError::ZeroCycles));
    }
}
