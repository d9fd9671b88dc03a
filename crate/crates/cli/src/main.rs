use clap::{Parser, Subcommand};
use drivecov::coverage::k_epsilon_report;
use drivecov::orchestrator::{
    parse_bucket_spec, run_campaign, summarize_by_bucket, write_buckets, CampaignOptions, ReportTable, ScenarioConfig,
};
use drivecov::param_space::{ParamDecl, ParameterSpace};
use drivecov::sampler::{read_points_csv, sample_mixed, SampleSet, Strategy, StrategyKind};
use drivecov::{opendrive, Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)");

/// Coverage-driven scenario testing for driving controllers.
#[derive(Parser, Debug)]
#[command(name = "drivecov", version = VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw test vectors from a parameter space.
    Sample {
        /// Parameter space JSON: a list of interval/enum declarations, or a scenario file.
        #[arg(long)]
        space: PathBuf,
        /// halton or random.
        #[arg(long, default_value = "halton")]
        strategy: StrategyKind,
        /// Number of vectors.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; `.json` writes JSON, anything else CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// k-wise coverage and dispersion of a points or report CSV.
    Coverage {
        #[arg(long)]
        points: PathBuf,
        /// Parameter space JSON; defaults to the `<points>.space.json` sidecar,
        /// else the space is inferred from the columns.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Output JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a test campaign and write report.csv and report.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides test.iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Overrides test.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides test.strategy (halton, random, halton+opt, random+opt).
        #[arg(long)]
        strategy: Option<StrategyKind>,
        /// Worker threads for iterations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write one OpenDRIVE file per iteration under `<out-dir>/opendrive`.
        #[arg(long)]
        export_opendrive: bool,
        /// Exit with status 1 when any iteration fails.
        #[arg(long)]
        fail_on_violation: bool,
    },
    /// Grouped table of a campaign report.
    Report {
        /// A report.csv written by `run`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Rules separated by `;`: `param` groups by value, `param:t1,t2` splits
        /// at thresholds, `*` is one bucket with every row.
        #[arg(long)]
        buckets: String,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the road network of scenario instances as OpenDRIVE.
    Export {
        #[arg(long)]
        scenario: PathBuf,
        /// A 1-based index into the scenario's sample sequence, or a points/report CSV
        /// whose every row is exported.
        #[arg(long)]
        vector: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A bare declaration list, or any file with a `params` list (a scenario).
fn load_space(path: &Path) -> Result<ParameterSpace> {
    let v: serde_json::Value = serde_json::from_str(&read(path)?)?;
    let decls = match v {
        serde_json::Value::Object(mut m) => m
            .remove("params")
            .ok_or_else(|| Error::Config(format!("{} has no `params` list", path.display())))?,
        other => other,
    };
    Ok(serde_json::from_value(decls)?)
}

fn sidecar(points: &Path) -> PathBuf {
    points.with_extension("space.json")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

const REPORT_COLUMNS: &[&str] = &["index", "status", "ticks", "path_length", "mean_gap", "collision", "inactive"];

/// Numeric columns become intervals over their observed range, others enums.
fn infer_space(text: &str) -> Result<ParameterSpace> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| Error::Config(e.to_string()))?.iter().map(String::from).collect();
    let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>().map_err(|e| Error::Config(e.to_string()))?;
    let mut decls = Vec::new();
    for (i, name) in header.iter().enumerate() {
        if REPORT_COLUMNS.contains(&name.as_str()) || name.ends_with(".verdict") || name.ends_with(".score") {
            continue;
        }
        let cells: Vec<&str> = rows.iter().map(|r| r.get(i).unwrap_or_default()).collect();
        let nums: Option<Vec<f64>> = cells.iter().map(|c| c.parse().ok()).collect();
        match nums {
            Some(xs) if !xs.is_empty() => {
                let low = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let high = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                decls.push(ParamDecl::Interval { name: name.clone(), low, high: if high > low { high } else { low + 1.0 } });
            }
            _ => {
                let mut values: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
                values.sort();
                values.dedup();
                decls.push(ParamDecl::Enum { name: name.clone(), values });
            }
        }
    }
    ParameterSpace::new(decls)
}

fn vectors_for_export(cfg: &ScenarioConfig, spec: &str) -> Result<SampleSet> {
    if let Ok(index) = spec.parse::<usize>() {
        if index == 0 {
            return Err(Error::Config("vector index is 1-based".into()));
        }
        let kind = cfg.test.strategy.base();
        let mut set = sample_mixed(&cfg.params, &Strategy::plain(kind, index), cfg.test.seed)?;
        set.samples.drain(..index - 1);
        return Ok(set);
    }
    read_points_csv(&cfg.params, read(Path::new(spec))?.as_bytes())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sample { space, strategy, n, seed, out } => {
            if strategy.is_search() {
                return Err(Error::Config(format!("`sample` draws plain sets; {strategy} needs a scenario (`run`)")));
            }
            let ps = load_space(&space)?;
            let set = sample_mixed(&ps, &Strategy::plain(strategy, n), seed)?;
            let bytes = if out.extension().is_some_and(|e| e == "json") {
                set.to_json()?.into_bytes()
            } else {
                let mut buf = Vec::new();
                set.write_csv(&mut buf)?;
                buf
            };
            write_atomic(&out, &bytes)?;
            write_atomic(&sidecar(&out), serde_json::to_string_pretty(&ps)?.as_bytes())?;
            println!("wrote {} vectors to {}", set.len(), out.display());
        }
        Command::Coverage { points, space, k, out } => {
            let text = read(&points)?;
            let ps = match space {
                Some(p) => load_space(&p)?,
                None if sidecar(&points).exists() => ParameterSpace::from_json(&read(&sidecar(&points))?)?,
                None => {
                    eprintln!("drivecov: warning: no parameter space given; inferring it from the columns");
                    infer_space(&text)?
                }
            };
            let set = read_points_csv(&ps, text.as_bytes())?;
            let report = k_epsilon_report(&set, k)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(p) => write_atomic(&p, json.as_bytes())?,
                None => print!("{json}"),
            }
        }
        Command::Run { scenario, iterations, seed, strategy, jobs, out_dir, export_opendrive, fail_on_violation } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            let opts = CampaignOptions {
                iterations,
                seed,
                strategy,
                jobs,
                export_opendrive: export_opendrive.then(|| out_dir.join("opendrive")),
            };
            let report = run_campaign(&cfg, &opts)?;
            write_atomic(&out_dir.join("report.csv"), report.csv_string()?.as_bytes())?;
            write_atomic(&out_dir.join("report.json"), (report.to_json()? + "\n").as_bytes())?;
            write_atomic(&out_dir.join("report.space.json"), serde_json::to_string_pretty(&report.space)?.as_bytes())?;
            let s = &report.summary;
            println!(
                "{}: {} iterations, {} passed, {} failed, {} errored ({:.1}% fail)",
                if s.name.is_empty() { "campaign" } else { &s.name },
                s.iterations,
                s.passed,
                s.failed,
                s.errored,
                s.fail_pct
            );
            if fail_on_violation && s.failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { input, buckets, out } => {
            let table = ReportTable::from_csv(read(&input)?.as_bytes())?;
            let rows = summarize_by_bucket(&table, &parse_bucket_spec(&buckets)?)?;
            let mut buf = Vec::new();
            write_buckets(&rows, &mut buf)?;
            match out {
                Some(p) => write_atomic(&p, &buf)?,
                None => print!("{}", String::from_utf8_lossy(&buf)),
            }
        }
        Command::Export { scenario, vector, out } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            let set = vectors_for_export(&cfg, &vector)?;
            std::fs::create_dir_all(&out)?;
            for s in &set.samples {
                let net = cfg.instantiate(&s.vector)?.network;
                let path = out.join(format!("iteration_{:04}.xodr", s.index));
                opendrive::export_network(&net, &path)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("drivecov: error[{}]: {msg}", e.kind());
            ExitCode::from(2)
        }
    }
}
