use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dtgmm::protocol::CopulaTilt;
use dtgmm::{
    decode_payload, encode_payload, encode_result, lead_aggregate, site_export, AggregateConfig, Family, FitConfig, GmmConfig, GridConfig,
    GridScheme, LeadInput, ModelSpec, NoTilt, ReducedModelSpec, TiltProvider,
};
use dtgmm_sim::report::{grid_markdown, metrics_markdown, read_metrics_csv, write_grid_csv, write_metrics_csv, write_rmse_csv};
use dtgmm_sim::{generate_replicate, run_study, sweep_grid_density, sweep_reference_size, HistogramTilt, MethodTag, SimError, SimSetting, StudyConfig};

mod data;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{stage} failed: {source}")]
    Numerical {
        stage: &'static str,
        #[source]
        source: dtgmm::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical { .. } => 2,
            _ => 1,
        }
    }
}

fn at(stage: &'static str) -> impl Fn(dtgmm::Error) -> CliError {
    move |e| match e {
        dtgmm::Error::Malformed(_)
        | dtgmm::Error::SchemaVersion { .. }
        | dtgmm::Error::UnresolvedNames(_)
        | dtgmm::Error::InvalidOutcome { .. }
        | dtgmm::Error::Io(_) => CliError::Input(format!("{stage}: {e}")),
        source => CliError::Numerical { stage, source },
    }
}

fn sim_at(stage: &'static str) -> impl Fn(SimError) -> CliError {
    move |e| match e {
        SimError::Core(c) => at(stage)(c),
        SimError::Config(m) => CliError::Usage(m),
        SimError::Csv(c) => CliError::Input(c.to_string()),
        SimError::Io(io) => CliError::Io(io),
    }
}

#[derive(Parser, Debug)]
#[command(name = "dtgmm", version, about = "Distributed GMM for sites with structurally missing covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the reduced model and summarize the reference sample into a payload.
    SiteExport(SiteExportArgs),
    /// Combine the lead site's data with external payloads into a result file.
    Aggregate(AggregateArgs),
    /// Run the replicated method comparison and write metrics.
    Simulate(SimulateArgs),
    /// RMSE over reference sample sizes.
    SweepRef(SweepRefArgs),
    /// dist-GMM-C metrics over grid sizes.
    SweepGrid(SweepGridArgs),
    /// Render a metrics CSV as a table.
    Report(ReportArgs),
    /// Write one replicate of a simulation setting as site CSV files.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Logistic,
    Gaussian,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Logistic => Family::Logistic,
            FamilyArg::Gaussian => Family::Gaussian,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Quantile,
    EqualSpaced,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Grid points per continuous covariate.
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, value_enum, default_value = "quantile")]
    grid_scheme: SchemeArg,
    /// Discrete covariates that stratify the density summary.
    #[arg(long, value_delimiter = ',')]
    discrete: Vec<String>,
    #[arg(long, default_value_t = 20)]
    min_stratum: usize,
}

impl GridArgs {
    fn config(&self) -> GridConfig {
        let names: Vec<&str> = self.discrete.iter().map(String::as_str).collect();
        GridConfig {
            m: self.m,
            scheme: match self.grid_scheme {
                SchemeArg::Quantile => GridScheme::Quantile,
                SchemeArg::EqualSpaced => GridScheme::EqualSpaced,
            },
            min_stratum_n: self.min_stratum,
            ..GridConfig::default()
        }
        .with_discrete(&names)
    }
}

#[derive(Args, Debug)]
struct SiteExportArgs {
    #[arg(long)]
    study: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Covariates of the reduced model; defaults to every study column.
    #[arg(long, value_delimiter = ',')]
    mask: Vec<String>,
    #[arg(long, value_enum, default_value = "logistic")]
    family: FamilyArg,
    /// Defaults to the output file stem.
    #[arg(long)]
    site_id: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[arg(long)]
    study: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, value_delimiter = ',')]
    mask: Vec<String>,
    #[arg(long)]
    payload: Vec<PathBuf>,
    /// Main-model covariates; defaults to the lead reference columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[arg(long, value_enum, default_value = "logistic")]
    family: FamilyArg,
    #[arg(long, default_value = "site1")]
    site_id: String,
    /// GENMETA, dist-GMM-C or dist-GMM-S.
    #[arg(long, default_value = "dist-GMM-C")]
    method: MethodTag,
    #[command(flatten)]
    grid: GridArgs,
    /// Bins per continuous covariate for dist-GMM-S.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Bootstrap draws over the lead reference sample (0 disables).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_gamma: bool,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// JSON study configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    settings: Option<Vec<u8>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_study: Option<usize>,
    #[arg(long)]
    n_ref: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    min_stratum: Option<usize>,
    /// Worker threads for replicates.
    #[arg(long, env = "DTGMM_JOBS")]
    jobs: Option<usize>,
}

impl StudyArgs {
    fn config(&self, methods: Option<Vec<MethodTag>>) -> Result<StudyConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                serde_json::from_slice(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => StudyConfig::default(),
        };
        if let Some(v) = &self.settings {
            c.settings = v.clone();
        }
        if let Some(v) = methods {
            c.methods = v;
        }
        macro_rules! set {
            ($($f:ident <- $a:ident),*) => { $(if let Some(v) = self.$a { c.$f = v; })* };
        }
        set!(reps <- reps, root_seed <- seed, n_study <- n_study, n_ref <- n_ref, m <- m, min_stratum_n <- min_stratum);
        if self.jobs.is_some() {
            c.jobs = self.jobs;
        }
        c.validate().map_err(sim_at("configuration"))?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodTag>>,
    /// Long-format metrics CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the grouped markdown table here.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepRefArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, value_delimiter = ',', default_value = "dist-GMM-C,dist-GMM-S")]
    methods: Vec<MethodTag>,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,300,400,500,1000")]
    sizes: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepGridArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    ms: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Markdown,
    Csv,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: ReportFormat,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    setting: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n_study: usize,
    #[arg(long, default_value_t = 500)]
    n_ref: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file {} does not exist", p.display())))
    }
}

fn require_parent(p: &Path) -> Result<(), CliError> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(CliError::Usage(format!("output directory {} does not exist", d.display()))),
        _ => Ok(()),
    }
}

fn names_or(mask: &[String], fallback: &[String]) -> Vec<String> {
    if mask.is_empty() {
        fallback.to_vec()
    } else {
        mask.to_vec()
    }
}

fn site_export_cmd(a: &SiteExportArgs) -> Result<(), CliError> {
    require_file(&a.study)?;
    require_file(&a.reference)?;
    require_parent(&a.out)?;
    let study = data::read_study(&a.study)?;
    let reference = data::read_reference(&a.reference)?;
    let mask = names_or(&a.mask, study.covariates.names());
    let reduced = ReducedModelSpec::new(a.family.into(), mask, true).map_err(|e| CliError::Usage(e.to_string()))?;
    let site_id = match &a.site_id {
        Some(s) => s.clone(),
        None => a
            .out
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Usage("cannot derive a site id from --out; pass --site-id".into()))?
            .to_string(),
    };
    let payload = site_export(&site_id, &study, &reference, &reduced, &a.grid.config(), &FitConfig::default()).map_err(at("site export"))?;
    let bytes = encode_payload(&payload).map_err(at("payload encoding"))?;
    fs::write(&a.out, &bytes)?;
    eprintln!("wrote {} ({} bytes, {} values)", a.out.display(), bytes.len(), dtgmm::protocol::payload_value_count(&payload));
    Ok(())
}

fn aggregate_cmd(a: &AggregateArgs) -> Result<(), CliError> {
    require_file(&a.study)?;
    require_file(&a.reference)?;
    for p in &a.payload {
        require_file(p)?;
    }
    require_parent(&a.out)?;
    let study = data::read_study(&a.study)?;
    let reference = data::read_reference(&a.reference)?;
    let payloads = a
        .payload
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            decode_payload(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let main = ModelSpec::new(a.family.into(), names_or(&a.covariates, reference.names()), true).map_err(|e| CliError::Usage(e.to_string()))?;
    let reduced =
        ReducedModelSpec::new(a.family.into(), names_or(&a.mask, study.covariates.names()), true).map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = AggregateConfig {
        lead_site_id: a.site_id.clone(),
        gmm: GmmConfig {
            include_gamma: !a.no_gamma,
            level: a.level,
            ..GmmConfig::default()
        },
        bootstrap: (a.bootstrap > 0).then_some(dtgmm::protocol::BootstrapConfig {
            draws: a.bootstrap,
            seed: a.seed,
        }),
        ..AggregateConfig::default()
    };
    let grid = a.grid.config();
    let copula = CopulaTilt {
        grid: grid.clone(),
        ..CopulaTilt::default()
    };
    let histogram = HistogramTilt {
        bins: a.bins,
        synthetic_size: None,
        seed: a.seed,
        options: Default::default(),
        policy: Default::default(),
    };
    let tilt: &dyn TiltProvider = match a.method {
        MethodTag::DistGmmC => &copula,
        MethodTag::DistGmmS => &histogram,
        MethodTag::Genmeta => &NoTilt,
        MethodTag::Local => return Err(CliError::Usage("aggregate supports GENMETA, dist-GMM-C and dist-GMM-S".into())),
    };
    let lead = LeadInput {
        study: &study,
        reference: &reference,
        reduced: &reduced,
    };
    let result = lead_aggregate(&lead, &payloads, &main, &cfg, tilt).map_err(at("aggregate"))?;
    let mut sites = vec![a.site_id.clone()];
    let mut ext: Vec<String> = payloads.iter().map(|p| p.site_id.clone()).collect();
    ext.sort();
    sites.extend(ext);
    fs::write(&a.out, encode_result(a.method.name(), &sites, &result).map_err(at("result encoding"))?)?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<14} {:>12} {:>12} {:>26}", "coefficient", "estimate", "std.error", format!("{:.0}% interval", a.level * 100.0))?;
    for (k, name) in result.coefficient_names.iter().enumerate() {
        let (lo, hi) = result.intervals[k];
        writeln!(out, "{name:<14} {:>12.6} {:>12.6} {:>12.6} {:>12.6}", result.beta_hat[k], result.std_errors[k], lo, hi)?;
    }
    Ok(())
}

fn simulate_cmd(a: &SimulateArgs) -> Result<(), CliError> {
    require_parent(&a.out)?;
    if let Some(p) = &a.markdown {
        require_parent(p)?;
    }
    let cfg = a.study.config(a.methods.clone())?;
    let rows = run_study(&cfg).map_err(sim_at("simulation"))?;
    write_metrics_csv(&rows, fs::File::create(&a.out)?).map_err(sim_at("metrics output"))?;
    if let Some(p) = &a.markdown {
        fs::write(p, metrics_markdown(&rows))?;
    }
    Ok(())
}

fn sweep_ref_cmd(a: &SweepRefArgs) -> Result<(), CliError> {
    require_parent(&a.out)?;
    let mut cfg = a.study.config(Some(a.methods.clone()))?;
    // Reference samples of 50 leave about ten rows in the rarer stratum.
    if a.study.min_stratum.is_none() && a.study.config.is_none() {
        cfg.min_stratum_n = 5;
    }
    let rows = sweep_reference_size(&cfg, &a.sizes).map_err(sim_at("reference-size sweep"))?;
    write_rmse_csv(&rows, fs::File::create(&a.out)?).map_err(sim_at("sweep output"))
}

fn sweep_grid_cmd(a: &SweepGridArgs) -> Result<(), CliError> {
    require_parent(&a.out)?;
    let cfg = a.study.config(None)?;
    let rows = sweep_grid_density(&cfg, &a.ms).map_err(sim_at("grid sweep"))?;
    write_grid_csv(&rows, fs::File::create(&a.out)?).map_err(sim_at("sweep output"))?;
    if let Some(p) = &a.markdown {
        fs::write(p, grid_markdown(&rows))?;
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<(), CliError> {
    require_file(&a.metrics)?;
    let rows = read_metrics_csv(fs::File::open(&a.metrics)?).map_err(sim_at("report"))?;
    let mut buf = Vec::new();
    match a.format {
        ReportFormat::Markdown => buf.extend_from_slice(metrics_markdown(&rows).as_bytes()),
        ReportFormat::Csv => write_metrics_csv(&rows, &mut buf).map_err(sim_at("report"))?,
    }
    match &a.out {
        Some(p) => fs::write(p, buf)?,
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

fn generate_cmd(a: &GenerateArgs) -> Result<(), CliError> {
    if !a.out_dir.is_dir() {
        return Err(CliError::Usage(format!("output directory {} does not exist", a.out_dir.display())));
    }
    let setting = SimSetting::standard(a.setting, a.n_study, a.n_ref).ok_or_else(|| CliError::Usage(format!("unknown setting {}", a.setting)))?;
    for site in generate_replicate(&setting, a.seed) {
        data::write_study(&a.out_dir.join(format!("{}_study.csv", site.site_id)), &site.study)?;
        data::write_reference(&a.out_dir.join(format!("{}_ref.csv", site.site_id)), &site.reference)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::SiteExport(a) => site_export_cmd(a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::SweepRef(a) => sweep_ref_cmd(a),
        Command::SweepGrid(a) => sweep_grid_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Generate(a) => generate_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
