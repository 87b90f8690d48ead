use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use eolla_core::analytics::sweep;
use eolla_core::output::{self, OutputDir, RunMetadata};
use eolla_core::sim::{self, TraceFlags};
use eolla_core::Scenario;

#[derive(Parser)]
#[command(name = "eolla", version, about = "CBG-based HARQ and eOLLA simulator for XR downlink traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the closed-form CBG error and resource-gain relations.
    Analytics(Common),
    /// Run the configured replications of one scenario.
    Simulate(Common),
    /// Sweep UEs per cell and report the system capacity.
    Capacity {
        #[command(flatten)]
        common: Common,
        /// Load levels as a list (`1,2,4`) or inclusive range (`1..10`).
        #[arg(long, value_name = "LIST")]
        ues_per_cell: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed, overriding the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `la.policy=eolla_alg2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, overriding the scenario.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut s = match &self.config {
            Some(path) => eolla_core::load_scenario_with(path, &self.overrides)
                .with_context(|| format!("loading {}", path.display()))?,
            None => Scenario::parse("", &self.overrides, "<defaults>".as_ref())?,
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(out) = &self.out {
            s.output_dir = out.clone();
        }
        Ok(s)
    }
}

fn parse_counts(text: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = text.split_once("..") {
        let lo: usize = a.trim().parse().with_context(|| format!("bad range start `{a}`"))?;
        let hi: usize = b.trim().trim_start_matches('=').parse().with_context(|| format!("bad range end `{b}`"))?;
        if lo == 0 || lo > hi {
            bail!("range `{text}` must satisfy 1 <= start <= end");
        }
        return Ok((lo..=hi).collect());
    }
    let counts = text
        .split(',')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad UE count `{t}`")))
        .collect::<Result<Vec<_>>>()?;
    if counts.is_empty() || counts.contains(&0) || !counts.windows(2).all(|w| w[0] < w[1]) {
        bail!("UE counts `{text}` must be positive and strictly ascending");
    }
    Ok(counts)
}

fn analytics(common: &Common) -> Result<()> {
    let scenario = common.scenario()?;
    let rows = sweep(&scenario.sweep_spec()?)?;
    let dir = OutputDir::create(&scenario.output_dir)?;
    output::write_analytics(&dir.path("analytics.csv"), &rows)?;
    output::write_metadata(&dir, &RunMetadata::new("analytics", &scenario, vec![scenario.seed])?, &scenario)?;
    dir.finish()?;
    println!("wrote {} rows to {}", rows.len(), scenario.output_dir.join("analytics.csv").display());
    Ok(())
}

fn simulate(common: &Common) -> Result<()> {
    let scenario = common.scenario()?;
    let seeds = sim::run_seeds(&scenario);
    let traces = TraceFlags::from_scenario(&scenario);
    let dir = OutputDir::create(&scenario.output_dir)?;
    let mut runs = Vec::with_capacity(seeds.len());
    for (r, &seed) in seeds.iter().enumerate() {
        let run = sim::simulate(&scenario, seed, traces)?;
        let sub = dir.subdir(&format!("run{r:02}"))?;
        output::write_kpi_summary(&sub.join("kpi_summary.csv"), &run, scenario.reliability)?;
        if traces.offset {
            output::write_offset_trace(&sub.join("offset_trace.csv"), &run)?;
        }
        if traces.harq {
            output::write_harq_trace(&sub.join("harq_trace.csv"), &run)?;
        }
        if traces.packet {
            output::write_packet_trace(&sub.join("packet_trace.csv"), &run)?;
        }
        runs.push(run);
    }
    output::write_mcs_ecdf(&dir.path("mcs_ecdf.csv"), &runs)?;
    output::write_prb_ecdf(&dir.path("prb_ecdf.csv"), &runs)?;
    output::write_metadata(&dir, &RunMetadata::new("simulate", &scenario, seeds)?, &scenario)?;
    dir.finish()?;

    let (mut yes, mut n) = (0, 0);
    for run in &runs {
        let (y, t) = sim::satisfied_count(run, scenario.reliability)?;
        yes += y;
        n += t;
    }
    let prb: f64 = runs.iter().filter_map(|r| r.mean_prb_load()).sum::<f64>() / runs.len() as f64;
    println!(
        "{} runs, {yes}/{n} UEs satisfied, mean PRB load {:.3}, output in {}",
        runs.len(),
        prb,
        scenario.output_dir.display()
    );
    Ok(())
}

fn capacity(common: &Common, ues_per_cell: Option<&str>) -> Result<()> {
    let mut scenario = common.scenario()?;
    if let Some(text) = ues_per_cell {
        scenario.capacity.ue_counts = parse_counts(text)?;
    }
    let dir = OutputDir::create(&scenario.output_dir)?;
    let result =
        sim::system_capacity(&scenario, &scenario.capacity.ue_counts, scenario.capacity.satisfied_fraction)?;
    output::write_capacity_curve(&dir.path("capacity_curve.csv"), &result.curve)?;
    let mut meta = RunMetadata::new("capacity", &scenario, sim::run_seeds(&scenario))?;
    meta.capacity_ues_per_cell = Some(result.capacity);
    output::write_metadata(&dir, &meta, &scenario)?;
    dir.finish()?;
    println!("capacity {} UEs/cell, output in {}", result.capacity, scenario.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analytics(c) => analytics(c),
        Command::Simulate(c) => simulate(c),
        Command::Capacity { common, ues_per_cell } => capacity(common, ues_per_cell.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
