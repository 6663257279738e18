//! `elqa`: generate synthetic data, extract features, cluster them, or serve
//! the cleansing dashboard.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use elqa_core::miners::{analyse, AnalyserDescriptor, PointMatrix};
use elqa_core::preprocess::extract_features;
use elqa_core::store::{ingest_csv, JOURNAL_FILE};
use elqa_core::synth::{generate, GenConfig};
use elqa_dashboard::cleansing::{register_cleansing, shared, CleansingContext, DEFAULT_ACTIVITY_URL};
use elqa_dashboard::DashboardRegistry;
use elqa_server::{ServerConfig, SessionManager, DEFAULT_SESSION_TTL_S};
use serde_json::json;

const ACTIVITY_URL_ENV: &str = "ELQA_ACTIVITY_URL";

const FEATURE_HEADER: [&str; 9] = [
    "measurement_id",
    "mean",
    "min",
    "max",
    "skewness",
    "kurtosis_excess",
    "slope",
    "slope_stderr",
    "capacitance_F",
];

#[derive(Parser)]
#[command(name = "elqa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Kmeans,
    Dbscan,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic CSV bundle and print the generation report.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        circuits: Option<usize>,
        #[arg(long)]
        missing_rate: Option<f64>,
        #[arg(long)]
        noise_rate: Option<f64>,
    },
    /// Extract one feature vector per measurement of a bundle.
    Features {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "features.csv")]
        out: PathBuf,
    },
    /// Cluster the rows of a features file.
    Cluster {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        /// Cluster the raw values instead of per-column z-scores.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value = "labels.csv")]
        out: PathBuf,
    },
    /// Serve the cleansing dashboard over a bundle.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Overridden by the ELQA_ACTIVITY_URL environment variable.
        #[arg(long)]
        activity_url_template: Option<String>,
        /// Idle seconds before a session expires; 0 keeps sessions forever.
        #[arg(long, default_value_t = DEFAULT_SESSION_TTL_S)]
        session_ttl: u64,
        /// Directory with a built client bundle to serve at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            seed,
            out,
            circuits,
            missing_rate,
            noise_rate,
        } => {
            let mut cfg = GenConfig { seed, ..GenConfig::default() };
            if let Some(n) = circuits {
                cfg.n_circuits = n;
            }
            if let Some(r) = missing_rate {
                cfg.missing_rate = r;
            }
            if let Some(r) = noise_rate {
                cfg.tp4_noise_rate = r;
            }
            let report = generate(&cfg, &out)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Features { data, out } => features(&data, &out)?,
        Command::Cluster {
            features,
            method,
            k,
            eps,
            min_pts,
            seed,
            restarts,
            raw,
            out,
        } => {
            let descriptor = match method {
                Method::Kmeans => {
                    let Some(k) = k else { bail!("--k is required for kmeans") };
                    AnalyserDescriptor::new("kmeans", json!({"k": k, "seed": seed, "restarts": restarts}))
                }
                Method::Dbscan => {
                    let (Some(eps), Some(min_pts)) = (eps, min_pts) else {
                        bail!("--eps and --min-pts are required for dbscan")
                    };
                    AnalyserDescriptor::new("dbscan", json!({"eps": eps, "min_pts": min_pts}))
                }
            };
            cluster(&features, &descriptor, !raw, &out)?;
        }
        Command::Serve {
            data,
            port,
            host,
            activity_url_template,
            session_ttl,
            static_dir,
        } => {
            let template = std::env::var(ACTIVITY_URL_ENV)
                .ok()
                .or(activity_url_template)
                .unwrap_or_else(|| DEFAULT_ACTIVITY_URL.to_string());
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host or port")?;
            serve(&data, addr, &template, ServerConfig { session_ttl_s: session_ttl, static_dir })?;
        }
    }
    Ok(())
}

fn features(data: &Path, out: &Path) -> Result<()> {
    let repo = ingest_csv(data)?;
    let mut w = csv::Writer::from_path(out).with_context(|| format!("cannot write {}", out.display()))?;
    w.write_record(FEATURE_HEADER)?;
    let mut written = 0;
    for m in repo.measurements() {
        let f = match extract_features(m) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("skipping {}: {e}", m.measurement_id);
                continue;
            }
        };
        let num = |v: f64| v.to_string();
        w.write_record([
            f.measurement_id,
            num(f.mean),
            num(f.min),
            num(f.max),
            num(f.skewness),
            num(f.kurtosis_excess),
            num(f.slope),
            num(f.slope_stderr),
            f.capacitance_f.map(num).unwrap_or_default(),
        ])?;
        written += 1;
    }
    w.flush()?;
    eprintln!("wrote {written} of {} measurements to {}", repo.measurements().len(), out.display());
    Ok(())
}

/// Reads a features file into a matrix. The capacitance column is kept only
/// when every row has a value.
fn read_features(path: &Path) -> Result<PointMatrix> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != FEATURE_HEADER {
        bail!("{}: unexpected header {:?}", path.display(), header);
    }
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|cell| match cell {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some),
            })
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: line {}", path.display(), i + 2))?;
        if row[..7].iter().any(Option::is_none) {
            bail!("{}: line {} has an empty feature", path.display(), i + 2);
        }
        rows.push(row);
    }
    let keep_cap = rows.iter().all(|r| r[7].is_some());
    if !keep_cap {
        eprintln!("capacitance_F incomplete; clustering without it");
    }
    let width = if keep_cap { 8 } else { 7 };
    let rows = rows
        .into_iter()
        .map(|r| r.into_iter().take(width).map(|v| v.unwrap_or_default()).collect())
        .collect();
    Ok(PointMatrix::new(rows, ids)?)
}

fn cluster(features: &Path, descriptor: &AnalyserDescriptor, standardize: bool, out: &Path) -> Result<()> {
    let m = read_features(features)?;
    if m.n() == 0 {
        bail!("{} has no rows", features.display());
    }
    let m = if standardize { m.standardize() } else { m };
    let a = analyse(&m, descriptor)?;
    let mut w = csv::Writer::from_path(out).with_context(|| format!("cannot write {}", out.display()))?;
    w.write_record(["measurement_id", "label"])?;
    for (id, label) in m.ids().iter().zip(&a.labels) {
        w.write_record([id.as_str(), &label.to_string()])?;
    }
    w.flush()?;
    let summary = json!({
        "method": descriptor.method,
        "n": m.n(),
        "clusters": a.n_clusters(),
        "noise": a.labels.iter().filter(|&&l| l < 0).count(),
        "inertia": a.inertia,
        "iterations": a.iterations,
    });
    println!("{summary}");
    Ok(())
}

fn serve(data: &Path, addr: SocketAddr, template: &str, config: ServerConfig) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let mut repo = ingest_csv(data)?;
    let journal = data.join(JOURNAL_FILE);
    if journal.exists() {
        let n = repo.replay_journal(&journal)?;
        eprintln!("replayed {n} annotations from {}", journal.display());
    }
    repo.set_journal(&journal);
    let ctx = CleansingContext::new(shared(repo), template)?;
    let mut registry = DashboardRegistry::new();
    register_cleansing(&mut registry, ctx);
    let manager = Arc::new(SessionManager::new(registry));

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let (bound, task) = elqa_server::spawn(addr, manager, config).await?;
        eprintln!("serving on http://{bound}/");
        task.await??;
        Ok(())
    })
}
