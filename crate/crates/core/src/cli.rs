//! Command-line front end: `dispatch`, `audit`, `ratio`, `convert` and `bids`.
//!
//! Exit codes: 0 when the dispatch is optimal, 2 when it is infeasible, 1 on
//! any error. Reports go to stdout (or `--out`); diagnostics go to stderr.
//! `VCG_MARKET_THREADS` sets the worker thread count.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::bidset::BidderSet;
use crate::cases::{self, BidSampler, BidShape, CaseOverride};
use crate::coalition::{check_core, collusion_bound, CORE_CAP};
use crate::dispatch::{make_oracle, DispatchResult, Dispatcher};
use crate::error::{Error, Result};
use crate::market::{BidProfile, MarketInstance};
use crate::report::{digest, AuditReport, AuditSettings, RatioDocument, StageError, SCHEMA_VERSION, TOOL_VERSION};
use crate::setfunc::{ratio, ratio_market_estimate, RatioConfig, RatioMethod, Separation};
use crate::vcg::{check_individual_rationality, run_vcg};

pub const THREADS_ENV: &str = "VCG_MARKET_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vcg-market", version, about = "VCG electricity market clearing and coalition audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clear the market and print objective, allocation and flows.
    Dispatch(DispatchArgs),
    /// Full pipeline: dispatch, VCG, core, ratio and collusion bounds.
    Audit(AuditArgs),
    /// Supermodularity ratio of the market objective.
    Ratio(RatioArgs),
    /// Convert a MATPOWER case file to the JSON case format.
    Convert(ConvertArgs),
    /// Draw a random bid profile for a case.
    Bids(BidsArgs),
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// JSON case, MATPOWER `.m` file, or `builtin:{simple,case14,case30,case_ieee30,case118}`.
    pub case: String,
    /// Bid profile JSON; defaults to truthful bids.
    #[arg(long)]
    pub bids: Option<PathBuf>,
    /// JSON case modifications (line limits, added bidders, demand scale).
    #[arg(long = "override")]
    pub override_path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DispatchArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Comma-separated bidder ids allowed to supply (default: all).
    #[arg(long)]
    pub active: Option<String>,
    /// Print the result as JSON instead of text.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(alias = "exhaustive")]
    Exact,
    #[value(alias = "constraint-generation")]
    Cg,
}

impl From<MethodArg> for RatioMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exact => RatioMethod::Exhaustive,
            MethodArg::Cg => RatioMethod::ConstraintGeneration,
        }
    }
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Sampled bid profiles for the market-level ratio estimate.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    pub method: MethodArg,
    /// `auto` (losing subsets up to size 3) or coalitions like `2,3;4`.
    #[arg(long, default_value = "auto")]
    pub coalitions: String,
    /// `auto` or comma-separated bidder ids spanning the analysed sub-market.
    #[arg(long, default_value = "auto")]
    pub players: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RatioArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Sampled bid profiles; 0 analyses only the given profile.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    pub method: MethodArg,
    #[arg(long, default_value = "auto")]
    pub players: String,
    /// Random separation with this many pairs per round (constraint generation only).
    #[arg(long)]
    pub sampled_pairs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ratings at or above this value mean "unlimited".
    #[arg(long, default_value_t = 9900.0)]
    pub unlimited_rating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Quadratic,
    Pwl,
    Block,
    Same,
}

#[derive(Debug, Args)]
pub struct BidsArgs {
    pub case: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ShapeArg::Same)]
    pub shape: ShapeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses and runs a command line, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Dispatch(a) => cmd_dispatch(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Ratio(a) => cmd_ratio(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Bids(a) => cmd_bids(a),
    }
}

/// Loads a case from a JSON document, a MATPOWER file or a bundled name.
pub fn load_case(spec: &str) -> Result<MarketInstance> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return match name {
            "simple" => Ok(cases::simple_example(0.01)?.0),
            _ => Ok(cases::ieee_case(name)?.instance),
        };
    }
    let text = std::fs::read_to_string(spec)?;
    if Path::new(spec).extension().is_some_and(|e| e == "m") {
        let parsed = cases::parse_matpower_case(&text)?;
        for w in &parsed.warnings {
            log::warn!("{spec}: {w}");
        }
        return Ok(parsed.instance);
    }
    let inst = MarketInstance::from_json(&text)?;
    inst.ensure_valid()?;
    Ok(inst)
}

fn load_inputs(a: &CaseArgs) -> Result<(MarketInstance, BidProfile)> {
    let mut inst = load_case(&a.case)?;
    if let Some(p) = &a.override_path {
        let ov: CaseOverride = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        inst = cases::apply_overrides(&inst, &ov)?;
    }
    let bids = match &a.bids {
        Some(p) => {
            let b = BidProfile::from_json(&std::fs::read_to_string(p)?)?;
            let v = b.violations(&inst);
            if !v.is_empty() {
                return Err(Error::Invalid(v));
            }
            b
        }
        None => inst.truthful_profile(),
    };
    Ok((inst, bids))
}

/// Parses comma-separated 1-based bidder ids.
pub fn parse_ids(text: &str, instance: &MarketInstance) -> Result<BidderSet> {
    let mut ids = Vec::new();
    for t in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let id: usize = t.parse().map_err(|_| Error::Precondition(format!("bad bidder id {t:?}")))?;
        if id == 0 || id > instance.num_bidders() {
            return Err(Error::MissingBid(id));
        }
        ids.push(id);
    }
    Ok(BidderSet::from_ids(&ids))
}

/// `auto` picks every bidder on small markets; on large ones it picks the
/// bidders closest to the limited lines (or to the reference bus).
pub fn resolve_players(text: &str, instance: &MarketInstance, cap: usize) -> Result<BidderSet> {
    if text != "auto" {
        return parse_ids(text, instance);
    }
    let n = instance.num_bidders();
    if n <= cap {
        return Ok(BidderSet::full(n));
    }
    let limited: Vec<(usize, usize)> = instance.lines.iter().filter(|l| l.limit.is_some()).map(|l| (l.from, l.to)).collect();
    Ok(cases::players_near(instance, &limited, cap))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn render_dispatch(instance: &MarketInstance, r: &DispatchResult) -> String {
    if !r.is_optimal() {
        return "infeasible\n".to_string();
    }
    let mut s = format!("J = {:.2}\nduality gap {:.1e}\n", r.objective, r.duality_gap);
    s.push_str(&format!("{:>7} {:>6} {:>14}\n", "bidder", "bus", "allocation"));
    for (b, x) in instance.bidders.iter().zip(&r.allocation) {
        s.push_str(&format!("{:>7} {:>6} {:>14.4}\n", b.id, b.bus, x));
    }
    if !instance.lines.is_empty() {
        s.push_str(&format!("{:>6} {:>6} {:>14} {:>10}\n", "from", "to", "flow", "limit"));
        for (l, f) in instance.lines.iter().zip(&r.flows) {
            let lim = l.limit.map_or("-".to_string(), |v| format!("{v:.1}"));
            s.push_str(&format!("{:>6} {:>6} {:>14.4} {:>10}\n", l.from, l.to, f, lim));
        }
    }
    s
}

pub fn cmd_dispatch(a: &DispatchArgs) -> Result<i32> {
    let (inst, bids) = load_inputs(&a.case)?;
    let active = match &a.active {
        Some(t) => parse_ids(t, &inst)?,
        None => BidderSet::full(inst.num_bidders()),
    };
    let d = Dispatcher::new(&inst)?;
    let r = d.solve(&bids, active)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        print!("{}", render_dispatch(&inst, &r));
    }
    if let Some(dir) = &a.csv {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("allocation.csv"))?;
        w.write_record(["bidder", "bus", "allocation"])?;
        for (b, x) in inst.bidders.iter().zip(&r.allocation) {
            w.serialize((b.id, b.bus, x))?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("flows.csv"))?;
        w.write_record(["from", "to", "flow", "limit"])?;
        for (l, f) in inst.lines.iter().zip(&r.flows) {
            w.write_record([l.from.to_string(), l.to.to_string(), f.to_string(), l.limit.map_or(String::new(), |v| v.to_string())])
                ?;
        }
        w.flush()?;
    }
    Ok(if r.is_optimal() { EXIT_OK } else { EXIT_INFEASIBLE })
}

/// Which coalitions the audit bounds.
#[derive(Debug, Clone, PartialEq)]
pub enum CoalitionSpec {
    /// Every set of 1 to `max_size` truthful losers among the players.
    Auto { max_size: usize },
    List(Vec<BidderSet>),
}

impl CoalitionSpec {
    pub fn parse(text: &str, instance: &MarketInstance) -> Result<Self> {
        if text == "auto" {
            return Ok(CoalitionSpec::Auto { max_size: 3 });
        }
        text.split(';').map(|g| parse_ids(g, instance)).collect::<Result<_>>().map(CoalitionSpec::List)
    }
}

#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub samples: usize,
    pub seed: u64,
    pub method: RatioMethod,
    pub coalitions: CoalitionSpec,
    pub players: BidderSet,
    pub config: RatioConfig,
}

impl AuditOptions {
    pub fn new(instance: &MarketInstance) -> Self {
        let config = RatioConfig::default();
        AuditOptions {
            samples: 20,
            seed: 0,
            method: RatioMethod::Exhaustive,
            coalitions: CoalitionSpec::Auto { max_size: 3 },
            players: resolve_players("auto", instance, config.exhaustive_cap).unwrap_or(BidderSet::EMPTY),
            config,
        }
    }
}

fn losing_subsets(losers: &[usize], max_size: usize) -> Vec<BidderSet> {
    let mut out = Vec::new();
    let n = losers.len();
    for mask in 1u64..(1u64 << n.min(63)) {
        if (mask.count_ones() as usize) <= max_size {
            out.push(BidderSet::from_indices((0..n).filter(|i| mask >> i & 1 == 1).map(|i| losers[i])));
        }
    }
    out.sort_by_key(|s| (s.len(), s.ids()));
    out
}

/// Runs the audit pipeline. Stage failures are recorded in `errors`; only an
/// invalid instance is fatal.
pub fn audit(instance: &MarketInstance, bids: &BidProfile, opts: &AuditOptions) -> Result<AuditReport> {
    let mut timings = BTreeMap::new();
    let mut errors = Vec::new();
    let mut fail = |stage: &str, e: &Error| errors.push(StageError { stage: stage.into(), message: e.to_string() });
    let truthful = instance.truthful_profile();
    let d = Dispatcher::new(instance)?;
    let n = instance.num_bidders();
    let all = BidderSet::full(n);
    let mut report = AuditReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        case_name: instance.meta.name.clone(),
        instance_digest: digest(instance)?,
        bids_digest: digest(bids)?,
        seed: opts.seed,
        settings: AuditSettings {
            samples: opts.samples,
            method: opts.method,
            coalitions: match &opts.coalitions {
                CoalitionSpec::Auto { .. } => "auto".into(),
                CoalitionSpec::List(l) => l.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
            },
            players: opts.players,
        },
        dispatch: None,
        vcg: None,
        individually_rational: None,
        core: None,
        ratio: None,
        market_ratio: None,
        gamma: None,
        bounds: Vec::new(),
        errors: Vec::new(),
        timings: BTreeMap::new(),
    };

    let t = Instant::now();
    let dispatch = d.solve(bids, all);
    timings.insert("dispatch".to_string(), t.elapsed().as_secs_f64());
    match dispatch {
        Ok(r) if r.is_optimal() => report.dispatch = Some(r),
        Ok(r) => {
            report.dispatch = Some(r);
            report.timings = timings;
            return Ok(report);
        }
        Err(e) => fail("dispatch", &e),
    }

    let t = Instant::now();
    match run_vcg(&d, bids, &truthful) {
        Ok(v) => {
            report.individually_rational = Some(check_individual_rationality(&v, 1e-9));
            report.vcg = Some(v);
        }
        Err(e) => fail("vcg", &e),
    }
    timings.insert("vcg".to_string(), t.elapsed().as_secs_f64());

    if let Some(v) = &report.vcg {
        let t = Instant::now();
        if n <= CORE_CAP {
            match check_core(&make_oracle(&d, &truthful), v, 1e-9) {
                Ok(c) => report.core = Some(c),
                Err(e) => fail("core", &e),
            }
        } else {
            fail("core", &Error::CapExceeded { size: n, cap: CORE_CAP });
        }
        timings.insert("core".to_string(), t.elapsed().as_secs_f64());
    }

    let t = Instant::now();
    let mut config = opts.config;
    if opts.players.len() > config.exhaustive_cap && opts.method == RatioMethod::ConstraintGeneration {
        config.separation = Separation::Sampled { pairs_per_round: 256, seed: opts.seed };
    }
    match ratio(&make_oracle(&d, bids).restrict(opts.players), opts.method, &config) {
        Ok(r) => report.ratio = Some(r),
        Err(e) => fail("ratio", &e),
    }
    timings.insert("ratio".to_string(), t.elapsed().as_secs_f64());

    if opts.samples > 0 {
        let t = Instant::now();
        let sampler = BidSampler { shape: BidShape::SameAsTrue, seed: opts.seed, ..BidSampler::default() };
        match ratio_market_estimate(&d, &sampler, opts.samples, Some(opts.players), opts.method, &config) {
            Ok(r) => report.market_ratio = Some(r),
            Err(e) => fail("market_ratio", &e),
        }
        timings.insert("market_ratio".to_string(), t.elapsed().as_secs_f64());
    }
    report.gamma = [&report.ratio, &report.market_ratio].iter().filter_map(|r| r.as_ref().map(|r| r.gamma)).reduce(f64::min);

    if let Some(gamma) = report.gamma {
        let t = Instant::now();
        let coalitions = match &opts.coalitions {
            CoalitionSpec::List(l) => l.clone(),
            CoalitionSpec::Auto { max_size } => match d.solve(&truthful, all) {
                Ok(base) if base.is_optimal() => {
                    let losers: Vec<usize> = opts
                        .players
                        .iter()
                        .filter(|&l| base.allocation[l] <= 1e-9 * (1.0 + instance.bidders[l].true_cost.capacity()))
                        .collect();
                    losing_subsets(&losers, *max_size)
                }
                Ok(_) => Vec::new(),
                Err(e) => {
                    fail("bounds", &e);
                    Vec::new()
                }
            },
        };
        let results: Vec<_> = coalitions.par_iter().map(|&k| (k, collusion_bound(&d, &truthful, k, gamma, Some(bids)))).collect();
        for (k, r) in results {
            match r {
                Ok(b) => report.bounds.push(b),
                Err(e) => fail(&format!("bounds {k}"), &e),
            }
        }
        timings.insert("bounds".to_string(), t.elapsed().as_secs_f64());
    }
    report.errors = errors;
    report.timings = timings;
    Ok(report)
}

pub fn cmd_audit(a: &AuditArgs) -> Result<i32> {
    if a.samples == 0 {
        return Err(Error::Precondition("--samples must be at least 1".into()));
    }
    let (inst, bids) = load_inputs(&a.case)?;
    let mut opts = AuditOptions::new(&inst);
    opts.samples = a.samples;
    opts.seed = a.seed;
    opts.method = a.method.into();
    opts.coalitions = CoalitionSpec::parse(&a.coalitions, &inst)?;
    opts.players = resolve_players(&a.players, &inst, opts.config.exhaustive_cap)?;
    let report = audit(&inst, &bids, &opts)?;
    let json = report.to_json()?;
    if let Some(dir) = &a.csv {
        report.write_csv(dir, &inst)?;
    }
    match &a.out {
        Some(p) => {
            std::fs::write(p, &json)?;
            print!("{}", report.summary(&inst));
        }
        None => {
            println!("{json}");
            eprint!("{}", report.summary(&inst));
        }
    }
    Ok(match &report.dispatch {
        Some(r) if !r.is_optimal() => EXIT_INFEASIBLE,
        _ => EXIT_OK,
    })
}

pub fn cmd_ratio(a: &RatioArgs) -> Result<i32> {
    let (inst, bids) = load_inputs(&a.case)?;
    let d = Dispatcher::new(&inst)?;
    let mut config = RatioConfig::default();
    if let Some(pairs) = a.sampled_pairs {
        config.separation = Separation::Sampled { pairs_per_round: pairs, seed: a.seed };
    }
    let players = resolve_players(&a.players, &inst, config.exhaustive_cap)?;
    let method: RatioMethod = a.method.into();
    let t = Instant::now();
    let oracle = make_oracle(&d, &bids).restrict(players);
    if oracle.evaluate(oracle.ground())?.is_infinite() {
        eprintln!("infeasible");
        return Ok(EXIT_INFEASIBLE);
    }
    let r = if a.samples > 0 {
        let sampler = BidSampler { shape: BidShape::SameAsTrue, seed: a.seed, ..BidSampler::default() };
        ratio_market_estimate(&d, &sampler, a.samples, Some(players), method, &config)?
    } else {
        ratio(&oracle, method, &config)?
    };
    let doc = RatioDocument {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        case_name: inst.meta.name.clone(),
        instance_digest: digest(&inst)?,
        seed: a.seed,
        samples: a.samples,
        ratio: r,
        timings: BTreeMap::from([("ratio".to_string(), t.elapsed().as_secs_f64())]),
    };
    if let Some(dir) = &a.csv {
        std::fs::create_dir_all(dir)?;
        crate::report::write_witnesses(&dir.join("witnesses.csv"), &doc.ratio)?;
    }
    write_output(a.out.as_deref(), &serde_json::to_string_pretty(&doc)?)?;
    eprintln!(
        "gamma = {:.6}  k_feas = {}  lower bound {:.6}  witnesses {}  evaluations {}",
        doc.ratio.gamma,
        doc.ratio.k_feas,
        doc.ratio.lower_bound,
        doc.ratio.witnesses.len(),
        doc.ratio.evaluations_used
    );
    Ok(EXIT_OK)
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.input)?;
    let parsed = cases::parse_matpower_case_with(&text, &cases::ParseOptions { unlimited_rating: a.unlimited_rating })?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    write_output(a.out.as_deref(), &parsed.instance.to_json()?)?;
    Ok(EXIT_OK)
}

pub fn cmd_bids(a: &BidsArgs) -> Result<i32> {
    let inst = load_case(&a.case)?;
    let shape = match a.shape {
        ShapeArg::Quadratic => BidShape::Quadratic,
        ShapeArg::Pwl => BidShape::PiecewiseLinear { pieces: 3 },
        ShapeArg::Block => BidShape::Block,
        ShapeArg::Same => BidShape::SameAsTrue,
    };
    let sampler = BidSampler { shape, seed: a.seed, ..BidSampler::default() };
    write_output(a.out.as_deref(), &sampler.sample_profile(&inst).to_json()?)?;
    Ok(EXIT_OK)
}
