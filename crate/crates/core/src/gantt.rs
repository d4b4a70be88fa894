//! Gantt rendering of simulator traces.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::sim::trace::{trace_to_csv, Stage, TraceEvent, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GanttFormat {
    Text,
    Svg,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown gantt format `{0}` (expected text, svg or csv)")]
pub struct UnknownFormat(pub String);

impl FromStr for GanttFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "svg" => Ok(Self::Svg),
            "csv" => Ok(Self::Csv),
            other => Err(UnknownFormat(other.to_string())),
        }
    }
}

/// Events overlapping `[from, to)`, clipped to it.
pub fn window(trace: &[TraceEvent], from: u64, to: u64) -> Vec<TraceEvent> {
    trace
        .iter()
        .filter(|e| e.end_cycle > from && e.start_cycle < to)
        .map(|e| TraceEvent {
            start_cycle: e.start_cycle.max(from),
            end_cycle: e.end_cycle.min(to),
            ..*e
        })
        .collect()
}

fn lane_order(trace: &[TraceEvent]) -> Vec<&TraceEvent> {
    let mut events: Vec<&TraceEvent> = trace.iter().collect();
    events.sort_by_key(|e| (e.unit, e.start_cycle, e.instr_id, e.stage));
    events
}

fn stage_letter(stage: Stage) -> char {
    match stage {
        Stage::FetchOperands => 'F',
        Stage::Compute => 'C',
        Stage::Writeback => 'W',
        Stage::MemBurst => 'M',
        Stage::BufferDrain => 'D',
        Stage::Zero => 'Z',
    }
}

fn span(trace: &[TraceEvent]) -> (u64, u64) {
    let from = trace.iter().map(|e| e.start_cycle).min().unwrap_or(0);
    let to = trace.iter().map(|e| e.end_cycle).max().unwrap_or(0);
    (from, to)
}

fn render_text(trace: &[TraceEvent]) -> String {
    let (from, to) = span(trace);
    let scale = (to - from).div_ceil(120).max(1);
    let mut out = format!("# cycles [{from}, {to}), {scale} cycle(s) per column\n");
    out.push_str("unit      instr stage            start     end  bar\n");
    for e in lane_order(trace) {
        let lead = ((e.start_cycle - from) / scale) as usize;
        let width = (e.end_cycle - from).div_ceil(scale) as usize - lead;
        let bar: String = std::iter::repeat_n(stage_letter(e.stage), width.max(1)).collect();
        let _ = writeln!(
            out,
            "{:<9} {:>5} {:<14} {:>7} {:>7}  {}{}",
            e.unit.name(),
            e.instr_id,
            e.stage.name(),
            e.start_cycle,
            e.end_cycle,
            " ".repeat(lead),
            bar
        );
    }
    out
}

fn stage_color(stage: Stage) -> &'static str {
    match stage {
        Stage::FetchOperands => "#4e79a7",
        Stage::Compute => "#59a14f",
        Stage::Writeback => "#f28e2b",
        Stage::MemBurst => "#e15759",
        Stage::BufferDrain => "#b07aa1",
        Stage::Zero => "#9c755f",
    }
}

fn render_svg(trace: &[TraceEvent]) -> String {
    const PX: u64 = 6;
    const ROW: u64 = 14;
    const LABEL: u64 = 150;
    let (from, to) = span(trace);
    // one row per (unit, stage) pair that occurs
    let mut rows: Vec<(Unit, Stage)> = trace.iter().map(|e| (e.unit, e.stage)).collect();
    rows.sort();
    rows.dedup();
    let width = LABEL + (to - from) * PX + 10;
    let height = ROW * rows.len() as u64 + 30;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"monospace\" font-size=\"10\">\n"
    );
    let _ = writeln!(out, "<text x=\"4\" y=\"12\">cycles {from}..{to}</text>");
    for (i, (unit, stage)) in rows.iter().enumerate() {
        let y = 20 + i as u64 * ROW;
        let _ = writeln!(
            out,
            "<text x=\"4\" y=\"{}\">{} {}</text>",
            y + 10,
            unit.name(),
            stage.name()
        );
    }
    for e in lane_order(trace) {
        let row = rows.iter().position(|r| *r == (e.unit, e.stage)).expect("row exists");
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#000\" stroke-width=\"0.3\"><title>{} {} #{} [{}, {})</title></rect>",
            LABEL + (e.start_cycle - from) * PX,
            20 + row as u64 * ROW,
            e.len() * PX,
            ROW - 2,
            stage_color(e.stage),
            e.unit.name(),
            e.stage.name(),
            e.instr_id,
            e.start_cycle,
            e.end_cycle
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Render `trace`, optionally restricted to a cycle window.
pub fn export_gantt(trace: &[TraceEvent], format: GanttFormat, cycles: Option<(u64, u64)>) -> String {
    let events = match cycles {
        Some((from, to)) => window(trace, from, to),
        None => trace.to_vec(),
    };
    match format {
        GanttFormat::Text => render_text(&events),
        GanttFormat::Svg => render_svg(&events),
        GanttFormat::Csv => trace_to_csv(&events),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::config::MachineConfig;
    use crate::sim::simulate;

    fn mmac_trace() -> Vec<TraceEvent> {
        let p = assemble("mmac.f32 m4, m0, m1\n").unwrap();
        simulate(&p, &MachineConfig::default()).unwrap().1
    }

    #[test]
    fn empty_trace_is_header_only() {
        for f in [GanttFormat::Text, GanttFormat::Svg, GanttFormat::Csv] {
            let out = export_gantt(&[], f, None);
            assert!(!out.contains("SA"), "{f:?}: {out}");
        }
        assert_eq!(export_gantt(&[], GanttFormat::Csv, None).lines().count(), 1);
    }

    #[test]
    fn single_mmac_has_three_bars() {
        let t = mmac_trace();
        let text = export_gantt(&t, GanttFormat::Text, None);
        assert!(text.starts_with("# cycles [0, 12)"));
        assert_eq!(text.lines().filter(|l| l.starts_with("SA")).count(), 3);
        assert!(text.lines().any(|l| l.ends_with("      CCCC")));
        let svg = export_gantt(&t, GanttFormat::Svg, None);
        assert_eq!(svg.matches("<rect").count(), 3);
    }

    #[test]
    fn deterministic_and_windowed() {
        let t = mmac_trace();
        assert_eq!(
            export_gantt(&t, GanttFormat::Svg, None),
            export_gantt(&t, GanttFormat::Svg, None)
        );
        let w = export_gantt(&t, GanttFormat::Csv, Some((4, 8)));
        assert_eq!(w.lines().count(), 2);
        assert!(w.contains("SA,0,COMPUTE,4,8"));
        assert_eq!("svg".parse::<GanttFormat>(), Ok(GanttFormat::Svg));
        assert!("png".parse::<GanttFormat>().is_err());
    }
}
