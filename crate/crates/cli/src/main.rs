use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mxsim_core::analysis::{compare_isa, isa_rows_to_csv, perf_metrics, MetricRow};
use mxsim_core::formats::{
    checksum, decode_memory_image, decode_program, encode_memory_image, encode_operand, encode_program,
    manifest_to_json, parse_manifest, PROGRAM_MAGIC,
};
use mxsim_core::gantt::{export_gantt, GanttFormat};
use mxsim_core::kernelgen::{extract_c, generate_with, kernel_source, random_operands};
use mxsim_core::sim::simulate_detailed;
use mxsim_core::sim::trace::trace_to_csv;
use mxsim_core::{
    assemble, disassemble, reference_matmul, run_program, ElemType, MachineConfig, MatmulSpec, Matrix, Program,
    RunError, SimError,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "mxsim",
    version,
    about = "Matrix coprocessor assembler, simulator and analysis tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble source into a program binary plus memory image sidecars.
    Asm {
        source: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print a program binary (and its data, if a sidecar exists) as source.
    Disasm { binary: PathBuf },
    /// Execute a program on the functional model.
    Run {
        program: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cycle-level simulation from a run manifest or flags.
    Sim(SimArgs),
    /// Generate a blocked matmul kernel with seeded operands.
    GenMatmul(GenArgs),
    /// Per-instruction traffic of vector versus matrix MACs.
    CompareIsa {
        #[arg(long, value_delimiter = ',', default_value = "128")]
        len: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "32")]
        sew: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "128")]
        dlen: Vec<u32>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Metric table for the standard workloads, simulated concurrently.
    Table {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Gantt {
    Text,
    Svg,
}

#[derive(clap::Args)]
struct SimArgs {
    /// Run manifest (JSON); flags override its fields.
    manifest: Option<PathBuf>,
    #[arg(long, conflicts_with = "matmul")]
    program: Option<PathBuf>,
    /// Generated kernel shape as M,K,N.
    #[arg(long)]
    matmul: Option<String>,
    #[arg(long, value_parser = parse_etype)]
    etype: Option<ElemType>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long, value_enum)]
    gantt: Option<Gantt>,
    /// Restrict the Gantt chart to cycles FROM:TO.
    #[arg(long, value_parser = parse_window)]
    gantt_cycles: Option<(u64, u64)>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pad: bool,
}

#[derive(clap::Args)]
struct GenArgs {
    m: usize,
    k: usize,
    n: usize,
    #[arg(value_parser = parse_etype)]
    etype: ElemType,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    pad: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatmulRequest {
    m: usize,
    k: usize,
    n: usize,
    #[serde(default)]
    etype: Option<ElemType>,
}

/// Everything one `sim` invocation needs. Relative paths resolve against
/// the manifest's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunManifest {
    config: Option<PathBuf>,
    program: Option<PathBuf>,
    matmul: Option<MatmulRequest>,
    out: Option<PathBuf>,
    format: Option<String>,
    gantt: Option<Gantt>,
    seed: Option<u64>,
    #[serde(default)]
    pad: bool,
}

/// A fault raised while executing, as opposed to bad input.
#[derive(Debug)]
struct Fault {
    kind: &'static str,
    message: String,
    instruction: Option<usize>,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Fault {}

fn sim_fault(e: SimError) -> anyhow::Error {
    let (kind, instruction) = match &e {
        SimError::Exec { index, .. } => ("exec", Some(*index)),
        SimError::Deadlock { .. } => ("deadlock", None),
        SimError::Structural { .. } => ("structural", None),
        _ => return e.into(),
    };
    Fault {
        kind,
        message: e.to_string(),
        instruction,
    }
    .into()
}

fn run_fault(e: RunError) -> anyhow::Error {
    match &e {
        RunError::Exec { index, .. } => Fault {
            kind: "exec",
            message: e.to_string(),
            instruction: Some(*index),
        }
        .into(),
        _ => e.into(),
    }
}

fn parse_etype(s: &str) -> Result<ElemType, String> {
    ElemType::ALL
        .into_iter()
        .find(|e| e.name() == s)
        .ok_or_else(|| format!("unknown element type `{s}` (expected f32, i32, i16 or i8)"))
}

fn parse_window(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once(':').ok_or("expected FROM:TO")?;
    let from = a.parse::<u64>().map_err(|e| e.to_string())?;
    let to = b.parse::<u64>().map_err(|e| e.to_string())?;
    if from >= to {
        return Err("empty cycle window".into());
    }
    Ok((from, to))
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize)> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad shape `{s}`"))?;
    match dims[..] {
        [m, k, n] => Ok((m, k, n)),
        _ => bail!("shape `{s}` needs three dimensions M,K,N"),
    }
}

fn load_config(path: Option<&Path>) -> Result<MachineConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            MachineConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => MachineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn sidecars(binary: &Path) -> (PathBuf, PathBuf) {
    (binary.with_extension("mem"), binary.with_extension("manifest.json"))
}

/// Source text or a program binary, with its memory image if present.
fn load_program(path: &Path) -> Result<Program> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if !bytes.starts_with(PROGRAM_MAGIC) {
        let text =
            String::from_utf8(bytes).with_context(|| format!("{} is neither source nor binary", path.display()))?;
        return assemble(&text).with_context(|| format!("assembling {}", path.display()));
    }
    let mut program = decode_program(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    let (image, manifest) = sidecars(path);
    if manifest.exists() {
        let text = fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
        let flat = fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
        program.segments = decode_memory_image(&flat, &parse_manifest(&text)?)?;
    }
    Ok(program)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_asm(source: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(source).with_context(|| format!("reading {}", source.display()))?;
    let program = assemble(&text).with_context(|| format!("assembling {}", source.display()))?;
    write(out, encode_program(&program)?)?;
    let (flat, manifest) = encode_memory_image(&program.segments);
    let (image, manifest_path) = sidecars(out);
    write(&image, flat)?;
    write(&manifest_path, manifest_to_json(&manifest))?;
    println!(
        "{} instructions, {} data bytes",
        program.len(),
        program.segments.iter().map(|s| s.bytes.len()).sum::<usize>()
    );
    Ok(())
}

fn cmd_run(path: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let program = load_program(path)?;
    let state = run_program(&program, &cfg).map_err(run_fault)?;
    let summary = serde_json::json!({
        "retired_instructions": state.retired,
        "total_macs": state.macs,
        "memory_checksum": format!("{:016x}", checksum(state.memory.as_bytes())),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// A generated kernel and the unpadded operands it was built from.
struct Generated {
    spec: MatmulSpec,
    program: Program,
    a: Matrix,
    b: Matrix,
    logical: (usize, usize, usize),
}

fn generate(
    shape: (usize, usize, usize),
    etype: ElemType,
    seed: u64,
    pad: bool,
    cfg: &MachineConfig,
) -> Result<Generated> {
    let (m, k, n) = shape;
    let logical = MatmulSpec::new(m, k, n, etype).with_seed(seed);
    let (pm, pk, pn) = if pad {
        MatmulSpec::padded_dims(m, k, n, etype, cfg)
    } else {
        shape
    };
    if (pm, pk, pn) != shape {
        eprintln!("note: padded {m}x{k}x{n} to {pm}x{pk}x{pn} with zeros");
    }
    let spec = MatmulSpec::new(pm, pk, pn, etype).with_seed(seed);
    spec.validate(cfg)?;
    let (a, b) = random_operands(&logical);
    let program = generate_with(&spec, &a.padded(pm, pk), &b.padded(pk, pn), cfg)?;
    Ok(Generated {
        spec,
        program,
        a,
        b,
        logical: shape,
    })
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let g = generate((args.m, args.k, args.n), args.etype, args.seed, args.pad, &cfg)?;
    let (pm, pk, pn) = (g.spec.m, g.spec.k, g.spec.n);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write(&args.out.join("kernel.s"), kernel_source(&g.spec, &g.program))?;
    write(&args.out.join("a.op"), encode_operand(&g.a.padded(pm, pk)))?;
    write(&args.out.join("b.op"), encode_operand(&g.b.padded(pk, pn)))?;
    let (flat, manifest) = encode_memory_image(&g.program.segments);
    write(&args.out.join("memory.bin"), flat)?;
    write(&args.out.join("manifest.json"), manifest_to_json(&manifest))?;
    write(&args.out.join("spec.json"), serde_json::to_string_pretty(&g.spec)?)?;
    println!("{} instructions", g.program.len());
    Ok(())
}

struct SimPlan {
    cfg: MachineConfig,
    program: Option<PathBuf>,
    matmul: Option<((usize, usize, usize), ElemType)>,
    out: PathBuf,
    format: Format,
    gantt: Option<Gantt>,
    seed: u64,
    pad: bool,
}

fn plan(args: &SimArgs) -> Result<SimPlan> {
    let (manifest, base) = match &args.manifest {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            (m, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (RunManifest::default(), PathBuf::new()),
    };
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let config = args.config.clone().or(manifest.config.map(resolve));
    let cfg = load_config(config.as_deref())?;

    let mut program = manifest.program.map(resolve);
    let mut matmul = manifest.matmul.map(|r| ((r.m, r.k, r.n), r.etype));
    if let Some(p) = &args.program {
        program = Some(p.clone());
        matmul = None;
    }
    if let Some(s) = &args.matmul {
        matmul = Some((parse_shape(s)?, None));
        program = None;
    }
    let matmul = matmul.map(|(shape, etype)| (shape, args.etype.or(etype).unwrap_or(ElemType::F32)));
    if program.is_some() == matmul.is_some() {
        bail!("give exactly one of a program or a matmul shape");
    }
    let format = match (args.format, manifest.format.as_deref()) {
        (Some(f), _) => f,
        (None, None | Some("json")) => Format::Json,
        (None, Some("csv")) => Format::Csv,
        (None, Some(other)) => bail!("unknown report format `{other}`"),
    };
    Ok(SimPlan {
        cfg,
        program,
        matmul,
        out: args
            .out
            .clone()
            .or(manifest.out.map(resolve))
            .unwrap_or_else(|| PathBuf::from(".")),
        format,
        gantt: args.gantt.or(manifest.gantt),
        seed: args.seed.or(manifest.seed).unwrap_or(0),
        pad: args.pad || manifest.pad,
    })
}

fn report_csv(report: &serde_json::Value) -> String {
    let mut out = String::from("metric,value\n");
    let mut push = |key: String, v: &serde_json::Value| out.push_str(&format!("{key},{v}\n"));
    for (k, v) in report.as_object().expect("report is an object") {
        match v.as_object() {
            Some(inner) => inner.iter().for_each(|(ik, iv)| push(format!("{k}.{ik}"), iv)),
            None => push(k.clone(), v),
        }
    }
    out
}

fn cmd_sim(args: &SimArgs) -> Result<()> {
    let plan = plan(args)?;
    let generated = match plan.matmul {
        Some((shape, etype)) => Some(generate(shape, etype, plan.seed, plan.pad, &plan.cfg)?),
        None => None,
    };
    let program = match (&generated, &plan.program) {
        (Some(g), _) => g.program.clone(),
        (None, Some(p)) => load_program(p)?,
        (None, None) => unreachable!("plan requires one source"),
    };
    let outcome = simulate_detailed(&program, &plan.cfg).map_err(sim_fault)?;

    let mut report = serde_json::to_value(&outcome.report)?;
    let mut lines = vec![format!("cycles {}", outcome.report.total_cycles)];
    if let Some(g) = &generated {
        let metrics = perf_metrics(&outcome.report, &g.spec, &plan.cfg)?;
        report["metrics"] = serde_json::to_value(MetricRow::new(&g.spec, &metrics))?;
        let (m, _, n) = g.logical;
        let c = extract_c(&outcome.state.memory, &g.spec).cropped(m, n);
        lines.push(format!("C checksum {:016x}", checksum(&c.to_bytes())));
        if c != reference_matmul(&g.a, &g.b)? {
            return Err(Fault {
                kind: "mismatch",
                message: "simulated C differs from the reference product".into(),
                instruction: None,
            }
            .into());
        }
        lines.push("C matches reference".into());
    } else {
        lines.push(format!(
            "memory checksum {:016x}",
            checksum(outcome.state.memory.as_bytes())
        ));
    }

    fs::create_dir_all(&plan.out).with_context(|| format!("creating {}", plan.out.display()))?;
    match plan.format {
        Format::Json => write(
            &plan.out.join("report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?,
        Format::Csv => write(&plan.out.join("report.csv"), report_csv(&report))?,
    }
    write(&plan.out.join("trace.csv"), trace_to_csv(&outcome.trace))?;
    if let Some(g) = plan.gantt {
        let (format, name) = match g {
            Gantt::Text => (GanttFormat::Text, "gantt.txt"),
            Gantt::Svg => (GanttFormat::Svg, "gantt.svg"),
        };
        write(
            &plan.out.join(name),
            export_gantt(&outcome.trace, format, args.gantt_cycles),
        )?;
    }
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn cmd_compare_isa(len: &[u32], sew: &[u32], dlen: &[u32], format: Format) -> Result<()> {
    let mut rows = Vec::new();
    for &l in len {
        for &s in sew {
            for &d in dlen {
                rows.extend(compare_isa(l, s, d)?);
            }
        }
    }
    match format {
        Format::Csv => print!("{}", isa_rows_to_csv(&rows)),
        Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
    }
    Ok(())
}

const WORKLOADS: [(usize, usize, usize); 3] = [(64, 64, 64), (8, 1024, 8), (64, 16, 64)];

fn cmd_table(config: Option<&Path>, format: Format) -> Result<()> {
    let cfg = load_config(config)?;
    let jobs: Vec<MatmulSpec> = WORKLOADS
        .iter()
        .flat_map(|&(m, k, n)| ElemType::ALL.map(|e| MatmulSpec::new(m, k, n, e)))
        .collect();
    let rows: Vec<Result<MetricRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|spec| {
                let cfg = &cfg;
                s.spawn(move || -> Result<MetricRow> {
                    let g = generate((spec.m, spec.k, spec.n), spec.etype, 0, false, cfg)?;
                    let o = simulate_detailed(&g.program, cfg).map_err(sim_fault)?;
                    Ok(MetricRow::new(spec, &perf_metrics(&o.report, spec, cfg)?))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let rows: Vec<MetricRow> = rows.into_iter().collect::<Result<_>>()?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
        Format::Csv => {
            println!("etype,M,K,N,cycles,performance_ideality,fpu_utilization");
            for r in &rows {
                println!(
                    "{},{},{},{},{},{:.4},{:.4}",
                    r.etype, r.m, r.k, r.n, r.cycles, r.performance_ideality, r.fpu_utilization
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Asm { source, out } => cmd_asm(source, out),
        Command::Disasm { binary } => load_program(binary).map(|p| print!("{}", disassemble(&p))),
        Command::Run { program, config } => cmd_run(program, config.as_deref()),
        Command::Sim(args) => cmd_sim(args),
        Command::GenMatmul(args) => cmd_gen(args),
        Command::CompareIsa { len, sew, dlen, format } => cmd_compare_isa(len, sew, dlen, *format),
        Command::Table { config, format } => cmd_table(config.as_deref(), *format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<Fault>() {
            Some(f) => {
                let obj = serde_json::json!({
                    "error": f.kind,
                    "message": f.message,
                    "instruction": f.instruction,
                });
                eprintln!("{obj}");
                ExitCode::from(3)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}
