use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use transitnet_core::coverage::{self, PointSource, PopulationMap, SampleConfig};
use transitnet_core::ingest::{self, IngestOptions, PointOfInterest};
use transitnet_core::network::{self, TransitNetwork};
use transitnet_core::report::{self, CityReport, ReportConfig, TableFormat, Tables};
use transitnet_core::routing::{self, PathQuery, RoutingParams, WaitPolicy};
use transitnet_core::EarthModel;

#[derive(Parser, Debug)]
#[command(
    name = "transitnet",
    version,
    about = "Transit network analytics for city comparison"
)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Opts {
    /// City snapshot JSON.
    #[arg(long, global = true)]
    snapshot: Option<PathBuf>,
    /// Neighborhood population CSV.
    #[arg(long, global = true)]
    population: Option<PathBuf>,
    /// Points of interest CSV.
    #[arg(long, global = true)]
    pois: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 10_000)]
    samples: usize,
    /// Starting points for point-of-interest access.
    #[arg(long, global = true, default_value_t = 1_000)]
    poi_starts: usize,
    #[arg(long, global = true, default_value_t = 400.0)]
    walk_threshold: f64,
    #[arg(long, global = true, default_value_t = 800.0)]
    service_bound: f64,
    #[arg(long, global = true, default_value_t = 30.0)]
    merge_threshold: f64,
    #[arg(long, global = true, default_value_t = 300.0)]
    transfer_penalty: f64,
    #[arg(long, global = true, value_enum, default_value_t = Wait::HalfHeadway)]
    wait_policy: Wait,
    /// Walking speed in meters per minute.
    #[arg(long, global = true, default_value_t = 80.0)]
    walk_speed: f64,
    /// In-vehicle speed for legs without a scheduled time.
    #[arg(long, global = true, default_value_t = 18.0)]
    default_speed: f64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Wait {
    HalfHeadway,
    Zero,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Source {
    Area,
    Population,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest, prune and merge a snapshot; writes the normalized snapshot.
    Build,
    /// Structural totals for the network.
    Metrics,
    /// Stops within walking distance and distance to the closest stop.
    Coverage {
        #[arg(long, value_enum, default_value_t = Source::Area)]
        source: Source,
    },
    /// Door-to-door trips between sampled points.
    Trips {
        #[arg(long, value_enum, default_value_t = Source::Area)]
        source: Source,
    },
    /// Time to the nearest point of interest.
    Access {
        #[arg(long, value_enum, default_value_t = Source::Area)]
        source: Source,
    },
    /// Fastest transfer-aware path between two stops.
    Path {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Connections whose removal disconnects the network.
    Bridges,
    /// Every metric for one city.
    Report,
    /// Side-by-side comparison of saved JSON reports.
    Compare {
        #[arg(long = "report", required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
    },
    /// Stops and connections as GeoJSON.
    ExportGeojson {
        #[arg(long)]
        no_bridges: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Metrics => "metrics",
            Command::Coverage { .. } => "coverage",
            Command::Trips { .. } => "trips",
            Command::Access { .. } => "access",
            Command::Path { .. } => "path",
            Command::Bridges => "bridges",
            Command::Report => "report",
            Command::Compare { .. } => "compare",
            Command::ExportGeojson { .. } => "export-geojson",
        }
    }
}

/// Missing or inconsistent arguments, reported with exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    inputs: Vec<String>,
    sample: SampleConfig,
    merge_threshold_m: f64,
    transfer_penalty_sec: f64,
    wait_policy: Wait,
    default_speed_kmh: f64,
    format: Format,
    threads: usize,
    tool_version: &'static str,
    duration_sec: f64,
}

impl Opts {
    fn sample(&self) -> SampleConfig {
        SampleConfig {
            sample_count: self.samples,
            walk_threshold_m: self.walk_threshold,
            service_bound_m: self.service_bound,
            poi_start_count: self.poi_starts,
            seed: self.seed,
            walking_speed_m_per_min: self.walk_speed,
        }
    }

    fn routing(&self) -> RoutingParams {
        RoutingParams {
            transfer_penalty_sec: self.transfer_penalty,
            wait_policy: match self.wait_policy {
                Wait::HalfHeadway => WaitPolicy::HalfHeadway,
                Wait::Zero => WaitPolicy::Zero,
            },
        }
    }

    fn ingest(&self) -> IngestOptions {
        IngestOptions {
            default_speed_kmh: self.default_speed,
            ..IngestOptions::default()
        }
    }

    fn report_config(&self) -> ReportConfig {
        ReportConfig {
            sample: self.sample(),
            routing: self.routing(),
            merge_threshold_m: self.merge_threshold,
            ingest: self.ingest(),
        }
    }

    fn table_format(&self) -> TableFormat {
        match self.format {
            Format::Csv => TableFormat::Csv,
            Format::Json => TableFormat::Json,
        }
    }

    fn network(&self) -> Result<TransitNetwork> {
        let path = self
            .snapshot
            .as_ref()
            .ok_or_else(|| usage("--snapshot is required"))?;
        let feed = ingest::load_snapshot(path)?;
        Ok(ingest::normalize(
            feed,
            EarthModel::WGS84,
            &self.ingest(),
            self.merge_threshold,
        )?)
    }

    fn popmap(&self) -> Result<PopulationMap> {
        let path = self
            .population
            .as_ref()
            .ok_or_else(|| usage("--population is required"))?;
        let regions = ingest::load_population(path, &self.ingest())?;
        Ok(PopulationMap::new(regions)?)
    }

    fn load_pois(&self, required: bool) -> Result<Vec<PointOfInterest>> {
        match &self.pois {
            Some(p) => Ok(ingest::load_pois(p)?),
            None if required => Err(usage("--pois is required")),
            None => Ok(Vec::new()),
        }
    }

    fn inputs(&self) -> Vec<String> {
        [&self.snapshot, &self.population, &self.pois]
            .into_iter()
            .flatten()
            .map(|p| p.display().to_string())
            .collect()
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(a) => a
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        other => out.push((prefix.to_string(), other.clone())),
    }
}

/// Two-column field/value CSV of any serializable result.
fn to_csv<T: Serialize>(value: &T) -> String {
    let mut fields = Vec::new();
    flatten(
        "",
        &serde_json::to_value(value).expect("serializable"),
        &mut fields,
    );
    let mut w = csv_writer();
    w.write_record(["field", "value", "sig_digits"])
        .expect("write");
    let sig = report::SIG_DIGITS.to_string();
    for (k, v) in fields {
        let text = match &v {
            Value::Number(n) if n.is_f64() => {
                report::format_sig(n.as_f64().unwrap_or(0.0), report::SIG_DIGITS)
            }
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        };
        w.write_record([k.as_str(), text.as_str(), sig.as_str()])
            .expect("write");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new())
}

fn render<T: Serialize>(opts: &Opts, value: &T) -> String {
    match opts.format {
        Format::Json => to_json(value),
        Format::Csv => to_csv(value),
    }
}

fn source<'a>(s: Source, popmap: Option<&'a PopulationMap>) -> PointSource<'a> {
    match (s, popmap) {
        (Source::Population, Some(m)) => PointSource::Population(m),
        _ => PointSource::Area,
    }
}

fn resolve_stop<'a>(net: &'a TransitNetwork, id: &str) -> Result<&'a str> {
    if let Some(s) = net.stop(id) {
        return Ok(&s.id);
    }
    net.stops()
        .iter()
        .find(|s| s.merged_from.contains(id))
        .map(|s| s.id.as_str())
        .ok_or_else(|| anyhow!("unknown stop {id:?}"))
}

#[derive(Serialize)]
struct BridgeRow<'a> {
    a: &'a str,
    b: &'a str,
    routes: Vec<&'a str>,
}

fn execute(opts: &Opts, command: &Command) -> Result<String> {
    let pop_if = |s: Source| -> Result<Option<PopulationMap>> {
        match s {
            Source::Population => Ok(Some(opts.popmap()?)),
            Source::Area => Ok(None),
        }
    };
    Ok(match command {
        Command::Build => ingest::network_to_feed(&opts.network()?).to_json(),
        Command::Metrics => render(opts, &network::structural_metrics(&opts.network()?)?),
        Command::Coverage { source: s } => {
            let net = opts.network()?;
            let result = match pop_if(*s)? {
                Some(m) => coverage::population_coverage(&net, &m, &opts.sample())?,
                None => coverage::area_coverage(&net, &opts.sample())?,
            };
            render(opts, &result)
        }
        Command::Trips { source: s } => {
            let net = opts.network()?;
            let pop = pop_if(*s)?;
            render(
                opts,
                &coverage::trip_metrics(
                    &net,
                    &opts.sample(),
                    source(*s, pop.as_ref()),
                    &opts.routing(),
                )?,
            )
        }
        Command::Access { source: s } => {
            let net = opts.network()?;
            let pois = opts.load_pois(true)?;
            let pop = pop_if(*s)?;
            let r = coverage::poi_access(
                &net,
                &pois,
                &opts.sample(),
                source(*s, pop.as_ref()),
                &opts.routing(),
            )?;
            render(opts, &r)
        }
        Command::Path { from, to } => {
            let net = opts.network()?;
            let query = PathQuery {
                origin_stop: resolve_stop(&net, from)?.to_string(),
                destination_stop: resolve_stop(&net, to)?.to_string(),
                params: opts.routing(),
            };
            let result = routing::shortest_time_path(&net, &query)?
                .ok_or_else(|| anyhow!("no path from {from:?} to {to:?}"))?;
            render(opts, &result)
        }
        Command::Bridges => {
            let net = opts.network()?;
            let rows: Vec<BridgeRow> = network::find_bridges(&net)
                .into_iter()
                .map(|k| {
                    let c = &net.connections()[k];
                    BridgeRow {
                        a: &c.a,
                        b: &c.b,
                        routes: c.routes.iter().map(String::as_str).collect(),
                    }
                })
                .collect();
            render(opts, &rows)
        }
        Command::Report => {
            let net = opts.network()?;
            let report = report::build_city_report(
                &net,
                &opts.popmap()?,
                &opts.load_pois(false)?,
                &opts.report_config(),
            )?;
            report::render_tables(Tables::Report(&report), opts.table_format())
        }
        Command::Compare { reports } => {
            let loaded = reports
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<CityReport>(&text)
                        .with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = report::compare_cities(&loaded)?;
            report::render_tables(Tables::Comparison(&table), opts.table_format())
        }
        Command::ExportGeojson { no_bridges } => {
            let options = report::GeoJsonOptions {
                include_bridges: !no_bridges,
            };
            report::geojson_string(&opts.network()?, options)
        }
    })
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    let opts = &cli.opts;
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let started = Instant::now();
    let output = execute(opts, &cli.command)?;
    let mut inputs = opts.inputs();
    if let Command::Compare { reports } = &cli.command {
        inputs.extend(reports.iter().map(|p| p.display().to_string()));
    }
    let manifest = RunManifest {
        command: cli.command.name(),
        inputs,
        sample: opts.sample(),
        merge_threshold_m: opts.merge_threshold,
        transfer_penalty_sec: opts.transfer_penalty,
        wait_policy: opts.wait_policy,
        default_speed_kmh: opts.default_speed,
        format: opts.format,
        threads: rayon::current_num_threads(),
        tool_version: env!("CARGO_PKG_VERSION"),
        duration_sec: started.elapsed().as_secs_f64(),
    };
    match &opts.out {
        Some(path) => {
            std::fs::write(path, output).with_context(|| format!("writing {}", path.display()))?;
            let mpath = manifest_path(path);
            std::fs::write(&mpath, to_json(&manifest))
                .with_context(|| format!("writing {}", mpath.display()))?;
        }
        None => {
            print!("{output}");
            eprint!("{}", to_json(&manifest));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
