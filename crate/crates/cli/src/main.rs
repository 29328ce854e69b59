//! `powertalk` command-line runner.
//!
//! Every subcommand reads a preset (default `table1`), overlays an optional
//! TOML file, applies `--seed`, and writes its output under `--out`
//! (default: the working directory). Written paths are echoed on stdout.
//!
//! Exit codes: 0 success, 1 invalid configuration or usage, 2 runtime failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use powertalk::coding::build_codebook;
use powertalk::config::{Preset, RunConfig};
use powertalk::figures::{generate, FigureId};
use powertalk::grid::solve_steady_state;
use powertalk::protocol::ProtocolVariant;
use powertalk::signaling::design_fixed_rd_constellation;
use powertalk::simulator::{
    run_simulation, verify_against_closed_forms, CellProtocol, CsvTrace, TraceSink, VerificationCell,
    VerificationSettings,
};
use powertalk::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Debug)]
#[command(
    name = "powertalk",
    version,
    about = "Droop-parameter signaling experiments for DC microgrids"
)]
struct Cli {
    /// TOML file with top-level keys overriding the preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base parameter set: table1, fig7, fig8 or sec7.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Overrides the `seed` key.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and replications (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bus voltage, unit currents and powers over the `r` load list (steady_state.csv).
    SteadyState,
    /// Data behind one figure (`<id>.csv`).
    Figures {
        /// fig6, fig7, fig8, fig11, fig12, fig13, fig14 or fig15.
        id: String,
    },
    /// Slot-level protocol simulation (simulate_report.json, optionally simulate_trace.csv).
    Simulate {
        /// Also write one CSV row per slot.
        #[arg(long)]
        trace: bool,
    },
    /// Print the adder-channel codebook for `K` units.
    Codebook { units: usize },
    /// Closed-form rates against simulation over `K_values` x `lambda_values` (verify.csv).
    Verify {
        /// Minimum replications per cell.
        #[arg(long, default_value_t = 4)]
        replications: usize,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter(_) | Error::UnsupportedSize(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: invalid configuration: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let preset = cli.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    let mut cfg = RunConfig::load(preset, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn output_path(cli: &Cli, name: &str) -> Result<PathBuf, Failure> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir.join(name))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Config("`--workers` must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Codebook { units } => {
            let cb = build_codebook(*units)?;
            print!("{}", cb.dump());
            Ok(())
        }
        Command::SteadyState => steady_state(&cli, &load_config(&cli)?),
        Command::Figures { id } => {
            let id: FigureId = id.parse()?;
            let cfg = load_config(&cli)?;
            let table = generate(id, &cfg)?;
            write_file(&output_path(&cli, &format!("{}.csv", id.name()))?, &table.to_csv())
        }
        Command::Simulate { trace } => simulate(&cli, &load_config(&cli)?, *trace),
        Command::Verify { replications } => verify(&cli, &load_config(&cli)?, *replications),
    }
}

fn steady_state(cli: &Cli, cfg: &RunConfig) -> Result<(), Failure> {
    let k = cfg.grid.units();
    let mut header = vec!["r".to_string()];
    header.extend((1..=k).map(|u| format!("v_{u}")));
    header.extend((1..=k).map(|u| format!("r_d_{u}")));
    header.push("v_star".into());
    header.extend((1..=k).map(|u| format!("i_{u}")));
    header.extend((1..=k).map(|u| format!("p_{u}")));
    let mut out = format!(
        "# steady state of the nominal droop parameters over the load list\n{}\n",
        header.join(",")
    );
    for &r in &cfg.sweeps.loads {
        let ss = solve_steady_state(&cfg.grid, &cfg.grid.nominal, r)?;
        let mut row = vec![r.to_string()];
        row.extend(cfg.grid.nominal.iter().map(|s| s.v.to_string()));
        row.extend(cfg.grid.nominal.iter().map(|s| s.r_d.to_string()));
        row.push(format!("{:.12}", ss.v_star));
        row.extend(ss.currents.iter().map(|i| format!("{i:.12}")));
        row.extend(ss.powers.iter().map(|p| format!("{p:.9}")));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(&output_path(cli, "steady_state.csv")?, &out)
}

fn simulate(cli: &Cli, cfg: &RunConfig, with_trace: bool) -> Result<(), Failure> {
    let c = design_fixed_rd_constellation(cfg.gamma, cfg.mode, &cfg.grid, cfg.anchor_v0, cfg.p_b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = if with_trace {
        let path = output_path(cli, "simulate_trace.csv")?;
        let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
        let mut sink = CsvTrace::new(BufWriter::new(file), cfg.grid.units()).map_err(|e| io_failure(&path, e))?;
        let report = run_simulation(
            &cfg.grid,
            &c,
            cfg.mode,
            &cfg.protocol,
            cfg.n_slots,
            &cfg.options,
            &mut rng,
            Some(&mut sink as &mut dyn TraceSink),
        )?;
        sink.finish()
            .and_then(|mut w| w.flush())
            .map_err(|e| io_failure(&path, e))?;
        println!("wrote {}", path.display());
        report
    } else {
        run_simulation(
            &cfg.grid,
            &c,
            cfg.mode,
            &cfg.protocol,
            cfg.n_slots,
            &cfg.options,
            &mut rng,
            None,
        )?
    };
    let mut json = serde_json::to_value(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut json {
        map.insert("seed".into(), cfg.seed.into());
        map.insert("gamma".into(), cfg.gamma.into());
        map.insert("x0_v".into(), c.x0.v.into());
        map.insert("x0_r_d".into(), c.x0.r_d.into());
        map.insert("x1_v".into(), c.x1.v.into());
        map.insert("x1_r_d".into(), c.x1.r_d.into());
        map.insert("p_b".into(), c.p_b.into());
    }
    let text = serde_json::to_string_pretty(&json).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(&output_path(cli, "simulate_report.json")?, &(text + "\n"))
}

fn verify(cli: &Cli, cfg: &RunConfig, replications: usize) -> Result<(), Failure> {
    if replications == 0 {
        return Err(Failure::Config("`--replications` must be at least 1".into()));
    }
    let protocol = match cfg.protocol.variant {
        ProtocolVariant::Periodic { .. } if cfg.requested_b == 0 => CellProtocol::PeriodicOptimal,
        ProtocolVariant::Periodic { b } => CellProtocol::Periodic { b },
        ProtocolVariant::Tracker { l_bs, .. } => CellProtocol::Tracker { l_bs },
    };
    let ks = cfg.sweeps.k_values.clone().unwrap_or_else(|| vec![cfg.grid.units()]);
    let lambdas = cfg
        .sweeps
        .lambda_values
        .clone()
        .unwrap_or_else(|| vec![cfg.protocol.lambda]);
    let cells: Vec<VerificationCell> = ks
        .iter()
        .flat_map(|&k| lambdas.iter().map(move |&l| (k, l)))
        .map(|(k, l)| VerificationCell::new(cfg.mode, k, l, protocol, cfg.protocol.m))
        .collect();
    let settings = VerificationSettings {
        grid: cfg.grid.clone(),
        gamma: cfg.gamma,
        anchor_v0: cfg.anchor_v0,
        p_b: cfg.p_b,
        n_slots: cfg.n_slots,
        min_replications: replications,
        seed: cfg.seed,
        options: cfg.options,
        ..VerificationSettings::default()
    };
    let rows = verify_against_closed_forms(&cells, &settings)?;
    let mut out = String::from(
        "# closed-form rate against simulation\nmode,K,lambda,B,eta_simulated,standard_error,eta_closed_form,relative_error,replications,constraint_violations,pass\n",
    );
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{:.9e},{:.3e},{:.9e},{:.6},{},{},{}\n",
            r.cell.mode,
            r.cell.units,
            r.cell.lambda,
            r.b.map(|b| b.to_string()).unwrap_or_default(),
            r.eta_simulated,
            r.standard_error,
            r.eta_closed_form,
            r.relative_error,
            r.replications,
            r.constraint_violations,
            r.pass
        ));
    }
    write_file(&output_path(cli, "verify.csv")?, &out)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} of {} cells outside tolerance",
            rows.len()
        )));
    }
    Ok(())
}
