use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

mod config;
mod error;
mod ops;
mod output;

use config::{output_dir, ConfigFile, ExperimentConfig};
use error::Result;
use output::{Manifest, ManifestEntry, ResultRecord};

#[derive(Parser)]
#[command(name = "percolab", version, about = "Run percolation experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the operation of a config once.
    Run {
        config: PathBuf,
        /// Output directory; overrides run.output_dir and $PERCOLAB_OUTPUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the operation at every point of the config's [sweep] grid.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// List the operations a config can name.
    ListOps,
}

/// Exit status when every record is inconclusive.
const INCONCLUSIVE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, out.as_deref()),
        Command::Sweep { config, out } => sweep(&config, out.as_deref()),
        Command::Validate { config } => validate(&config),
        Command::ListOps => {
            list_ops();
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn list_ops() {
    for op in &ops::OPERATIONS {
        println!("{:<24} {}", op.name, op.summary);
        if !op.params.is_empty() {
            println!("{:<24}   params: {}", "", op.params);
        }
    }
}

fn validate(path: &Path) -> Result<u8> {
    let file = ConfigFile::read(path)?;
    if file.has_sweep() {
        let points = file.grid()?;
        for p in &points {
            p.config.validate()?;
        }
        println!("ok: {} grid points", points.len());
    } else {
        let cfg = file.single()?;
        let ball = cfg.validate()?;
        println!(
            "ok: {} on {} ({} vertices, {} edges)",
            cfg.operation.name(),
            cfg.graph.family.tag(),
            ball.n_vertices(),
            ball.n_edges()
        );
    }
    Ok(0)
}

fn execute(cfg: &ExperimentConfig) -> Result<(ResultRecord, Option<String>)> {
    let ball = cfg.validate()?;
    let out = cfg
        .operation
        .execute(&ball, &cfg.process, cfg.run.n, cfg.run.seed)?;
    Ok((ResultRecord::new(cfg, out.payload, out.inconclusive), out.table))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn run(path: &Path, out: Option<&Path>) -> Result<u8> {
    let started = unix_now();
    let clock = Instant::now();
    let file = ConfigFile::read(path)?;
    let cfg = file.single()?;
    let (record, table) = execute(&cfg)?;

    let dir = output_dir(out, &cfg);
    output::create_dir(&dir)?;
    let stem = file.stem(&cfg);
    let results = dir.join(format!("{stem}.jsonl"));
    output::write_records(&results, std::slice::from_ref(&record))?;
    let mut outputs = vec![results];
    if let Some(t) = table {
        let csv = dir.join(format!("{stem}.csv"));
        output::write_file(&csv, t.as_bytes())?;
        outputs.push(csv);
    }
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    output::write_manifest(
        &manifest_path,
        &Manifest {
            command: "run".into(),
            config_file: path.to_path_buf(),
            configs: vec![ManifestEntry::new(&cfg)],
            seed: cfg.run.seed,
            version: output::VERSION.into(),
            outputs: outputs.clone(),
            started_unix_seconds: started,
            wall_time_seconds: clock.elapsed().as_secs_f64(),
        },
    )?;
    for p in outputs.iter().chain([&manifest_path]) {
        println!("wrote {}", p.display());
    }
    Ok(if record.inconclusive { INCONCLUSIVE } else { 0 })
}

fn sweep(path: &Path, out: Option<&Path>) -> Result<u8> {
    let started = unix_now();
    let clock = Instant::now();
    let file = ConfigFile::read(path)?;
    let points = file.grid()?;
    let base_seed = {
        let mut t = file.table.clone();
        t.remove("sweep");
        config::parse_point(&t)?.run.seed
    };
    for p in &points {
        p.config.validate()?;
    }
    // Points run in order; the operations parallelize over samples.
    let mut records = Vec::with_capacity(points.len());
    for p in &points {
        let (mut record, _) = execute(&p.config)?;
        record.grid_point = Some(p.index);
        record.grid_values = Some(p.values.clone());
        records.push(record);
    }

    let first = &points[0].config;
    let dir = output_dir(out, first);
    output::create_dir(&dir)?;
    let stem = file.stem(first);
    let results = dir.join(format!("{stem}.jsonl"));
    output::write_records(&results, &records)?;
    let csv = dir.join(format!("{stem}.csv"));
    output::write_file(&csv, &output::sweep_csv(&records)?)?;
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    output::write_manifest(
        &manifest_path,
        &Manifest {
            command: "sweep".into(),
            config_file: path.to_path_buf(),
            configs: points.iter().map(|p| ManifestEntry::new(&p.config)).collect(),
            seed: base_seed,
            version: output::VERSION.into(),
            outputs: vec![results.clone(), csv.clone()],
            started_unix_seconds: started,
            wall_time_seconds: clock.elapsed().as_secs_f64(),
        },
    )?;
    for p in [&results, &csv, &manifest_path] {
        println!("wrote {}", p.display());
    }
    Ok(if records.iter().all(|r| r.inconclusive) { INCONCLUSIVE } else { 0 })
}
