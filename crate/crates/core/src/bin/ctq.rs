use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ctq::baseline3d::RTree3;
use ctq::bench::{run_sweep, Axis, Setting, SweepSpec, LEVEL_VALUES, PSI_VALUES, TAU_VALUES};
use ctq::model::{oracle_ctq, Dataset, ExposureRecord, QueryParams, Trajectory, UserId};
use ctq::qr_index::{Q2rIndex, QrIndex, QrParams, DEFAULT_PAGE_CAPACITY, DEFAULT_THETA, DEFAULT_THETA_TRAJ};
use ctq::query::{trace, TraceResult, TraceStats};
use ctq::spacetime::{DEFAULT_BUCKET_WIDTH, DEFAULT_MAX_DEPTH};
use ctq::storage::{read_index_file, stats_lines, write_index_file, AnyIndex, IndexKind};
use ctq::workload::{
    generate, ingest_csv_path, write_csv, ColumnMap, CoordMode, EpochPolicy, GenSpec, IngestConventions, IngestOptions,
};

/// Raised when an index answer differs from the exhaustive oracle.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

#[derive(Parser)]
#[command(
    name = "ctq",
    version,
    about = "Contact tracing queries over QR-tree, Q2R-tree and 3D R-tree indexes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Qr,
    Q2r,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    QueryPoints,
    Trajectories,
    Psi,
    Tau,
    Levels,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::QueryPoints => Axis::QueryPoints,
            AxisArg::Trajectories => Axis::Trajectories,
            AxisArg::Psi => Axis::Psi,
            AxisArg::Tau => Axis::Tau,
            AxisArg::Levels => Axis::Levels,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic random-walk dataset with planted contact chains.
    Gen {
        #[arg(long, default_value_t = 1000)]
        users: usize,
        #[arg(long, default_value_t = 20)]
        points_min: usize,
        #[arg(long, default_value_t = 200)]
        points_max: usize,
        /// Side of the square region, meters.
        #[arg(long, default_value_t = 20_000.0)]
        extent: f64,
        #[arg(long, default_value_t = 14)]
        days: u64,
        #[arg(long, default_value_t = 400.0)]
        step_median: f64,
        /// Number of planted contact chains.
        #[arg(long, default_value_t = 20)]
        chains: usize,
        #[arg(long, default_value_t = 2)]
        chain_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the planted meetings as CSV.
        #[arg(long)]
        plants: Option<PathBuf>,
    },
    /// Build and persist an index from a CSV dataset.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "qr")]
        index: KindArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: usize,
        #[arg(long, default_value_t = DEFAULT_PAGE_CAPACITY)]
        page_cap: usize,
        #[arg(long, default_value_t = DEFAULT_BUCKET_WIDTH)]
        bucket_width: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: u8,
        #[arg(long, default_value_t = DEFAULT_THETA_TRAJ)]
        theta_traj: usize,
        #[command(flatten)]
        ingest: IngestArgs,
    },
    /// Run one contact tracing query.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// CSV file holding the query trajectory (one user).
        #[arg(long, conflicts_with = "query_user")]
        query: Option<PathBuf>,
        /// Use an indexed user's trajectory as the query.
        #[arg(long)]
        query_user: Option<u64>,
        #[arg(long, default_value_t = 2.0)]
        psi: f64,
        #[arg(long, default_value_t = 1800)]
        tau: u64,
        #[arg(long, default_value_t = 1)]
        depth: u32,
        /// Also run the exhaustive oracle and require equal answers.
        #[arg(long)]
        verify: bool,
        /// Write a JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare an index against the oracle on random queries.
    Verify {
        #[arg(long)]
        index: PathBuf,
        /// Oracle dataset (CSV); defaults to the trajectories stored in the
        /// index. Use it to check that an index still matches its source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fixed thresholds; when absent each query draws ψ, τ and L from
        /// the sweep values.
        #[arg(long)]
        psi: Option<f64>,
        #[arg(long)]
        tau: Option<u64>,
        #[arg(long)]
        depth: Option<u32>,
    },
    /// Parameter sweeps over generated data.
    Bench {
        /// Axes to sweep (default: all).
        #[arg(long, value_enum, value_delimiter = ',')]
        axis: Vec<AxisArg>,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        /// Dataset size used when another axis varies.
        #[arg(long, default_value_t = 50_000)]
        trajectories: usize,
        /// Values for the trajectory-count axis.
        #[arg(long, value_delimiter = ',', default_values_t = vec![10_000usize, 25_000, 50_000, 100_000])]
        scale: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        points_min: usize,
        #[arg(long, default_value_t = 300)]
        points_max: usize,
        /// Side of the generated square region, meters.
        #[arg(long)]
        extent: Option<f64>,
        #[arg(long)]
        step_median: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: usize,
        #[arg(long, default_value_t = DEFAULT_PAGE_CAPACITY)]
        page_cap: usize,
        #[arg(long, default_value_t = DEFAULT_THETA_TRAJ)]
        theta_traj: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Check every answer against the oracle (slow at scale).
        #[arg(long)]
        verify: bool,
        /// Write a JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct IngestArgs {
    /// Columns hold latitude (x) and longitude (y) in degrees.
    #[arg(long)]
    geo: bool,
    /// Shift timestamps so the earliest sample is at t = 0.
    #[arg(long)]
    rebase: bool,
    #[arg(long, default_value_t = 14)]
    window_days: u32,
    #[arg(long, default_value = "user_id")]
    col_user: String,
    #[arg(long, default_value = "x")]
    col_x: String,
    #[arg(long, default_value = "y")]
    col_y: String,
    #[arg(long, default_value = "t")]
    col_t: String,
}

/// Metadata stored alongside every index.
#[derive(Serialize, Deserialize)]
struct IndexMeta {
    conventions: IngestConventions,
    columns: ColumnMap,
    trajectories: usize,
    points: usize,
}

#[derive(Serialize)]
struct QueryReport<'a> {
    index: IndexKind,
    query_user: UserId,
    params: QueryParams,
    records: &'a [ExposureRecord],
    stats: TraceStats,
    verified: Option<bool>,
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is reserved for verification
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<VerificationFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Gen {
            users,
            points_min,
            points_max,
            extent,
            days,
            step_median,
            chains,
            chain_len,
            seed,
            out,
            plants,
        } => {
            let spec = GenSpec {
                n_users: users,
                points_per_user: (points_min, points_max),
                extent,
                duration: days * 86_400,
                step_median,
                seed,
                ..GenSpec::default()
            }
            .with_random_chains(chains, chain_len);
            let (d, planted) = generate(&spec)?;
            write_csv(
                d.trajectories(),
                BufWriter::new(File::create(&out).with_context(|| out.display().to_string())?),
            )?;
            if let Some(p) = plants {
                let mut w = csv::Writer::from_path(&p)?;
                w.write_record(["user_a", "user_b", "a_x", "a_y", "a_t", "b_x", "b_y", "b_t"])?;
                for pl in &planted {
                    w.write_record([
                        pl.user_a.to_string(),
                        pl.user_b.to_string(),
                        pl.a.x.to_string(),
                        pl.a.y.to_string(),
                        pl.a.t.to_string(),
                        pl.b.x.to_string(),
                        pl.b.y.to_string(),
                        pl.b.t.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            print!(
                "{}",
                stats_lines([
                    ("users", d.len().to_string()),
                    ("points", d.point_count().to_string()),
                    ("planted", planted.len().to_string()),
                    ("window_days", d.window_days.to_string()),
                ])
            );
            Ok(())
        }
        Cmd::Build {
            input,
            index,
            out,
            theta,
            page_cap,
            bucket_width,
            max_depth,
            theta_traj,
            ingest,
        } => {
            let columns = ColumnMap {
                user: ingest.col_user,
                x: ingest.col_x,
                y: ingest.col_y,
                t: ingest.col_t,
            };
            let opts = IngestOptions {
                columns: columns.clone(),
                coords: if ingest.geo {
                    CoordMode::Geographic
                } else {
                    CoordMode::Planar
                },
                epoch: if ingest.rebase {
                    EpochPolicy::Rebase
                } else {
                    EpochPolicy::Raw
                },
                window_days: ingest.window_days,
                ..Default::default()
            };
            let (d, rep) = ingest_csv_path(&input, &opts)?;
            for (line, reason) in &rep.skipped {
                eprintln!("warning: skipped line {line}: {reason}");
            }
            let params = QrParams {
                theta,
                page_capacity: page_cap,
                bucket_width,
                max_depth,
            };
            let built = match index {
                KindArg::Qr => AnyIndex::Qr(QrIndex::build(&d, params)?),
                KindArg::Q2r => AnyIndex::Q2r(Q2rIndex::build(&d, theta_traj, params)?),
                KindArg::Baseline => AnyIndex::Baseline(RTree3::build(&d, page_cap)?),
            };
            let meta = IndexMeta {
                conventions: rep.conventions.clone(),
                columns,
                trajectories: d.len(),
                points: d.point_count(),
            };
            let bytes = write_index_file(&out, &built, &serde_json::to_vec(&meta)?)?;
            let mut stats = vec![
                ("index", format!("{:?}", built.kind()).to_lowercase()),
                ("trajectories", d.len().to_string()),
                ("points", d.point_count().to_string()),
                ("skipped_rows", rep.skipped.len().to_string()),
            ];
            stats.extend(build_stats(&built));
            stats.push((
                "page_bytes",
                built.stores().iter().map(|s| s.byte_size()).sum::<usize>().to_string(),
            ));
            stats.push(("file_bytes", bytes.to_string()));
            print!("{}", stats_lines(stats));
            Ok(())
        }
        Cmd::Query {
            index,
            query,
            query_user,
            psi,
            tau,
            depth,
            verify,
            report,
        } => {
            let (idx, meta) = open_index(&index)?;
            let q = match (query, query_user) {
                (Some(path), _) => read_query(&path, &meta)?,
                (None, Some(u)) => find_user(&idx, UserId(u))?,
                (None, None) => bail!("either --query or --query-user is required"),
            };
            let params = QueryParams::new(psi, tau, depth)?;
            let r = run_query(&idx, &q, &params)?;
            let verified = if verify {
                let d = dataset_of(&idx)?;
                let want = oracle_ctq(&d, &q, &params);
                Some(want == r.records)
            } else {
                None
            };
            for rec in &r.records {
                println!(
                    "record user={} level={} t_exposed={} via={}",
                    rec.user, rec.level, rec.t_exposed, rec.via
                );
            }
            println!("{} records", r.records.len());
            let mut lines = vec![("index", format!("{:?}", idx.kind()).to_lowercase())];
            lines.extend(trace_stats(&r.stats));
            if let Some(v) = verified {
                lines.push(("verified", v.to_string()));
            }
            print!("{}", stats_lines(lines));
            if let Some(path) = report {
                let rep = QueryReport {
                    index: idx.kind(),
                    query_user: q.user,
                    params,
                    records: &r.records,
                    stats: r.stats,
                    verified,
                };
                serde_json::to_writer_pretty(File::create(&path)?, &rep)?;
            }
            if verified == Some(false) {
                return Err(VerificationFailed(format!("query user {} diverges from the oracle", q.user)).into());
            }
            Ok(())
        }
        Cmd::Verify {
            index,
            data,
            queries,
            seed,
            psi,
            tau,
            depth,
        } => {
            let (idx, meta) = open_index(&index)?;
            let d = match data {
                Some(path) => ingest_csv_path(&path, &meta.conventions.follow(meta.columns.clone()))?.0,
                None => dataset_of(&idx)?,
            };
            if d.is_empty() {
                bail!("index holds no trajectories");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut failures = 0usize;
            for i in 0..queries {
                let q = &d.trajectories()[rng.random_range(0..d.len())];
                let params = QueryParams::new(
                    psi.unwrap_or_else(|| PSI_VALUES[rng.random_range(0..PSI_VALUES.len())]),
                    tau.unwrap_or_else(|| TAU_VALUES[rng.random_range(0..TAU_VALUES.len())]),
                    depth.unwrap_or_else(|| LEVEL_VALUES[rng.random_range(0..LEVEL_VALUES.len())]),
                )?;
                let got = run_query(&idx, q, &params)?;
                let want = oracle_ctq(&d, q, &params);
                if got.records != want {
                    failures += 1;
                    eprintln!(
                        "mismatch: query #{i} user={} psi={} tau={} depth={}: {} records vs oracle {}",
                        q.user,
                        params.psi,
                        params.tau,
                        params.levels,
                        got.records.len(),
                        want.len()
                    );
                }
            }
            print!(
                "{}",
                stats_lines([("queries", queries.to_string()), ("mismatches", failures.to_string()),])
            );
            if failures > 0 {
                return Err(VerificationFailed(format!("{failures} of {queries} queries diverged")).into());
            }
            Ok(())
        }
        Cmd::Bench {
            axis,
            queries,
            trajectories,
            scale,
            points_min,
            points_max,
            extent,
            step_median,
            theta,
            page_cap,
            theta_traj,
            seed,
            verify,
            report,
        } => {
            let axes: Vec<Axis> = if axis.is_empty() {
                Axis::ALL.to_vec()
            } else {
                axis.into_iter().map(Axis::from).collect()
            };
            let base = SweepSpec::default();
            let spec = SweepSpec {
                axes,
                defaults: Setting {
                    trajectories,
                    ..Setting::default()
                },
                trajectory_counts: scale,
                queries,
                generator: GenSpec {
                    points_per_user: (points_min, points_max),
                    extent: extent.unwrap_or(base.generator.extent),
                    step_median: step_median.unwrap_or(base.generator.step_median),
                    ..base.generator.clone()
                },
                qr: QrParams {
                    theta,
                    page_capacity: page_cap,
                    ..QrParams::default()
                },
                theta_traj,
                verify,
                seed,
                ..base
            };
            let (rep, divergences) = run_sweep(&spec, |m| eprintln!("bench: {m}"))?;
            print!("{}", rep.to_text());
            if let Some(path) = report {
                serde_json::to_writer_pretty(File::create(&path)?, &rep)?;
            }
            if !divergences.is_empty() {
                for d in &divergences {
                    eprintln!(
                        "divergence: {} on query user {} ({} records vs oracle {})",
                        d.approach,
                        d.query_user,
                        d.got.len(),
                        d.expected.len()
                    );
                }
                return Err(VerificationFailed(format!("{} divergent answers", divergences.len())).into());
            }
            Ok(())
        }
    }
}

fn build_stats(idx: &AnyIndex) -> Vec<(&'static str, String)> {
    match idx {
        AnyIndex::Qr(q) => vec![
            ("leaves", q.tree().leaves().count().to_string()),
            ("depth", q.tree().depth().to_string()),
            ("pages", q.store().len().to_string()),
            ("registry_entries", q.registry_entries().to_string()),
        ],
        AnyIndex::Q2r(q) => vec![
            ("top_nodes", q.nodes().len().to_string()),
            ("owning_nodes", q.owners().count().to_string()),
            (
                "leaves",
                q.owners()
                    .map(|(_, x)| x.tree().leaves().count())
                    .sum::<usize>()
                    .to_string(),
            ),
            (
                "depth",
                q.nodes().iter().map(|n| n.id.depth).max().unwrap_or(0).to_string(),
            ),
            ("pages", q.page_count().to_string()),
        ],
        AnyIndex::Baseline(b) => vec![
            ("leaves", b.leaf_count().to_string()),
            ("depth", b.height().to_string()),
            ("pages", b.store().len().to_string()),
        ],
    }
}

fn trace_stats(s: &TraceStats) -> Vec<(&'static str, String)> {
    vec![
        ("unique_page_reads", s.unique_page_reads.to_string()),
        ("raw_page_reads", s.raw_page_reads.to_string()),
        ("nodes_visited", s.nodes_visited.to_string()),
        ("candidates_tested", s.candidates_tested.to_string()),
        ("wall_time_us", s.wall_time_us.to_string()),
    ]
}

fn open_index(path: &Path) -> anyhow::Result<(AnyIndex, IndexMeta)> {
    let (idx, meta) = read_index_file(path).with_context(|| path.display().to_string())?;
    let meta: IndexMeta = serde_json::from_slice(&meta).context("index metadata")?;
    Ok((idx, meta))
}

fn run_query(idx: &AnyIndex, q: &Trajectory, params: &QueryParams) -> anyhow::Result<TraceResult> {
    Ok(match idx {
        AnyIndex::Qr(x) => trace(x, q, params)?,
        AnyIndex::Q2r(x) => trace(x, q, params)?,
        AnyIndex::Baseline(x) => trace(x, q, params)?,
    })
}

fn dataset_of(idx: &AnyIndex) -> anyhow::Result<Dataset> {
    let mut all = Vec::new();
    for s in idx.stores() {
        all.extend(s.all_trajectories()?);
    }
    all.sort_by_key(|t| t.user);
    Ok(Dataset::new(all, 0)?)
}

fn find_user(idx: &AnyIndex, user: UserId) -> anyhow::Result<Trajectory> {
    for s in idx.stores() {
        for t in s.all_trajectories()? {
            if t.user == user {
                return Ok(t);
            }
        }
    }
    Err(anyhow!("user {user} is not in the index"))
}

fn read_query(path: &Path, meta: &IndexMeta) -> anyhow::Result<Trajectory> {
    let opts = meta.conventions.follow(meta.columns.clone());
    let (d, rep) = ingest_csv_path(path, &opts)?;
    for (line, reason) in &rep.skipped {
        eprintln!("warning: skipped query line {line}: {reason}");
    }
    let mut ts = d.into_trajectories();
    if ts.len() != 1 {
        bail!("query file must hold exactly one user, found {}", ts.len());
    }
    Ok(ts.remove(0))
}
