//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use logitfe::differencing::{find_wperp, integer_design, minimal_t_polytrend, pairs_for_wperp, SearchOptions, WeightVector};
use logitfe::estimation::{EstimateReport, Sample, Weighting};
use logitfe::io::{fmt12, read_network_csv, read_sample_csv, write_mc_csv, write_network_csv, write_sample_csv};
use logitfe::model::{path_from_index, IndexFamily, ModelSpec, OutcomePath};
use logitfe::moments::{
    build_dset, dset_cardinality, moment_bound, nullspace_functions, nullspace_moments, qt_values, sampled_nullspace,
    subspace_residual, verify_closed_form, verify_moment, ClosedForm,
};
use logitfe::simulation::{generate, monte_carlo, stream_rng, DgpConfig, EstimatorSpec, MomentChoice};
use logitfe::sufficiency::{
    arp_condition_check, arp_statistics, enumerate_pairs_ar1, lemma2_check, network_cond_full,
    network_cond_likelihood, network_cond_star, ConditioningSet, PairCertificate, PairFilter,
};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::args::{self, usage, Bits, Floats, ModelArgs, Weights};
use crate::Output;

fn table(header: &[String], rows: impl IntoIterator<Item = Vec<String>>, kind: &str) -> Result<String> {
    let mut buf = format!("# logitfe {kind} schema_version={}\n", logitfe::io::SCHEMA_VERSION).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf)?)
}

fn spaced(w: &WeightVector) -> String {
    w.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Args, Serialize)]
pub struct WperpArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Keep at most this many vectors.
    #[arg(long = "max")]
    pub max_solutions: Option<usize>,
    /// Only vectors with nonzero first and last entries.
    #[arg(long)]
    pub endpoints: bool,
}

pub fn wperp(a: &WperpArgs) -> Result<Output> {
    let spec = a.model.spec()?;
    let w = integer_design(&spec)?;
    let opts = SearchOptions { max_solutions: a.max_solutions, require_endpoints: a.endpoints, ..Default::default() };
    let found = find_wperp(&w, &opts)?;
    let head: Vec<String> = (1..=spec.t()).map(|t| format!("w{t}")).collect();
    let csv = table(&head, found.iter().map(|v| v.0.iter().map(|x| x.to_string()).collect()), "wperp")?;
    let out = Output::json(&found)?.with_csv(csv);
    if found.is_empty() {
        eprintln!("no differencing vector: W has no nonzero orthogonal vector in {{-1,0,1}}^T");
        return Ok(out.degenerate());
    }
    Ok(out)
}

#[derive(Debug, Args, Serialize)]
pub struct Table1Args {
    #[arg(long, default_value_t = 5)]
    pub max_p: usize,
    /// Allow degrees above 5 (can run for hours).
    #[arg(long)]
    pub long: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Table1Row {
    pub p: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub w_perp: WeightVector,
}

pub fn table1(a: &Table1Args) -> Result<Output> {
    let rows = (0..=a.max_p)
        .map(|p| minimal_t_polytrend(p, a.long).map(|(t, w_perp)| Table1Row { p, t, w_perp }))
        .collect::<logitfe::Result<Vec<_>>>()?;
    let csv = table(
        &["p".into(), "T".into(), "w_perp".into()],
        rows.iter().map(|r| vec![r.p.to_string(), r.t.to_string(), spaced(&r.w_perp)]),
        "table1",
    )?;
    Ok(Output::csv(csv).with_json(&rows)?)
}

#[derive(Debug, Args, Serialize)]
pub struct PairsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Initial condition, oldest first.
    #[arg(long)]
    pub y0: Option<Bits>,
    /// Parameter value for the log-ratio column (static models).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<Floats>,
    /// Covariates for static models: CSV `t,x1..xd`.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Keep only pairs whose transition counts differ.
    #[arg(long)]
    pub gap: bool,
    #[arg(long = "max")]
    pub max_pairs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn pairs(a: &PairsArgs) -> Result<Output> {
    let spec = a.model.spec()?;
    let y0 = args::initial(&a.y0, &spec)?;
    let mut certs: Vec<PairCertificate> = match spec.family() {
        IndexFamily::Ar { p: 1 } => {
            let filter = PairFilter { require_gap: a.gap, max_pairs: a.max_pairs };
            enumerate_pairs_ar1(&spec, &y0, filter)?.into_iter().flat_map(|g| g.pairs).collect()
        }
        IndexFamily::Ar { .. } => {
            let t = spec.t();
            let mut groups: BTreeMap<Vec<Vec<i64>>, Vec<OutcomePath>> = BTreeMap::new();
            for i in 0..1usize << t {
                let path = OutcomePath::new(path_from_index(i, t), y0.clone());
                groups.entry(arp_statistics(&spec, &path)?).or_default().push(path);
            }
            let mut out = Vec::new();
            for members in groups.values() {
                for (i, y) in members.iter().enumerate() {
                    for yt in &members[i + 1..] {
                        let c = arp_condition_check(&spec, y, yt)?;
                        if !a.gap || c.transition_gap.is_some_and(|g| g != 0) {
                            out.push(c);
                        }
                    }
                }
            }
            out
        }
        IndexFamily::Static => {
            let theta = args::theta_or(&a.theta, &spec, false)?;
            let x = args::covariates(a.x.as_deref(), &spec, a.seed)?;
            let ws = find_wperp(&integer_design(&spec)?, &SearchOptions::default())?;
            let mut out = Vec::new();
            for w in &ws {
                for pair in pairs_for_wperp(w) {
                    let (y, yt) = (OutcomePath::static_path(pair.y1), OutcomePath::static_path(pair.y2));
                    out.push(lemma2_check(&spec, &y, &yt, Some(&x), &theta)?);
                }
            }
            out
        }
        IndexFamily::Network { .. } => return usage("use netcond for network models"),
    };
    if let Some(m) = a.max_pairs {
        certs.truncate(m);
    }
    let empty = certs.is_empty();
    let out = Output::json(&certs)?;
    Ok(if empty { out.degenerate() } else { out })
}

#[derive(Debug, Args, Serialize)]
pub struct NetcondArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Initial network, dyads (1,2),(1,3),...,(n-1,n).
    #[arg(long)]
    pub y0: Bits,
    /// Observed networks for periods 1..3, concatenated.
    #[arg(long)]
    pub path: Bits,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub delta: f64,
    /// Use the swap-only set instead of the full one.
    #[arg(long)]
    pub star: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NetcondReport {
    pub size: usize,
    pub set: ConditioningSet,
    pub likelihood: f64,
}

pub fn netcond(a: &NetcondArgs) -> Result<Output> {
    let spec = a.model.spec()?;
    let y = OutcomePath::new(a.path.0.clone(), a.y0.0.clone());
    let set = if a.star { network_cond_star(&spec, &y)? } else { network_cond_full(&spec, &y)? };
    let likelihood = network_cond_likelihood(&spec, a.gamma, a.delta, &y, &set)?;
    let out = Output::json(NetcondReport { size: set.len(), set, likelihood })?;
    Ok(out)
}

#[derive(Debug, Args, Serialize)]
pub struct CellArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<Floats>,
    /// Initial condition, oldest first (default zeros).
    #[arg(long)]
    pub y0: Option<Bits>,
    /// Covariates: CSV `t,x1..xd`; drawn N(0,1) from --seed when absent.
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DsetArgs {
    #[command(flatten)]
    pub cell: CellArgs,
    /// List the elements of D.
    #[arg(long)]
    pub elements: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DsetReport {
    pub q_t: Vec<usize>,
    pub cardinality: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<Vec<Vec<f64>>>,
}

pub fn dset(a: &DsetArgs) -> Result<Output> {
    let spec = a.cell.model.spec()?;
    let theta = args::theta_or(&a.cell.theta, &spec, true)?;
    let y0 = args::initial(&a.cell.y0, &spec)?;
    let x = args::covariates(a.cell.x.as_deref(), &spec, a.cell.seed)?;
    let q_t = qt_values(&spec, &y0, &x, &theta)?;
    let cardinality = u64::try_from(dset_cardinality(&spec, &q_t)?).context("|D| does not fit in 64 bits")?;
    let elements = if a.elements { Some(build_dset(&spec, &q_t)?.elements) } else { None };
    Output::json(DsetReport { q_t, cardinality, elements })
}

#[derive(Debug, Args, Serialize)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub cell: CellArgs,
    /// Random A draws used to verify each basis function.
    #[arg(long, default_value_t = 20)]
    pub draws: usize,
    /// Also build the null space from sampled-A probabilities.
    #[arg(long)]
    pub oracle: bool,
    /// Include the basis coefficients.
    #[arg(long)]
    pub basis: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub dimension: usize,
    pub residual: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MomentsReport {
    pub theta: Vec<f64>,
    pub y0: Vec<u8>,
    pub x: Vec<Vec<f64>>,
    pub q_t: Vec<usize>,
    pub d_cardinality: u64,
    pub bound: i64,
    pub nullspace_dimension: usize,
    pub rank: usize,
    pub last_retained_pivot: Option<f64>,
    pub first_discarded_pivot: Option<f64>,
    pub gap_warning: bool,
    /// Largest `|E[m | Y0, X, A]|` per basis function over the draws.
    pub verification: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<f64>>>,
}

pub fn moments(a: &MomentsArgs) -> Result<Output> {
    let spec = a.cell.model.spec()?;
    let theta = args::theta_or(&a.cell.theta, &spec, true)?;
    let y0 = args::initial(&a.cell.y0, &spec)?;
    let x = args::covariates(a.cell.x.as_deref(), &spec, a.cell.seed)?;
    let q_t = qt_values(&spec, &y0, &x, &theta)?;
    let d_cardinality = u64::try_from(dset_cardinality(&spec, &q_t)?).context("|D| does not fit in 64 bits")?;
    let bound = i64::try_from(moment_bound(&spec, &y0, &x, &theta)?).context("bound does not fit in 64 bits")?;
    let ns = nullspace_moments(&spec, &y0, &x, &theta)?;
    let mut rng = stream_rng(a.cell.seed, 1);
    let normal = Normal::new(0.0, 2.0).unwrap();
    let grid: Vec<_> = (0..a.draws)
        .map(|_| logitfe::model::FixedEffect((0..spec.dw()).map(|_| normal.sample(&mut rng)).collect()))
        .collect();
    let verification = if grid.is_empty() {
        Vec::new()
    } else {
        nullspace_functions(&ns)
            .iter()
            .map(|m| verify_moment(m, &spec, &y0, &x, &theta, &grid))
            .collect::<logitfe::Result<Vec<_>>>()?
    };
    let oracle = if a.oracle {
        let o = sampled_nullspace(&spec, &y0, &x, &theta, 1 << spec.t(), &mut stream_rng(a.cell.seed, 2))?;
        Some(OracleReport { dimension: o.dimension(), residual: subspace_residual(&ns.basis, &o.basis) })
    } else {
        None
    };
    let dim = ns.dimension();
    let report = MomentsReport {
        theta,
        y0,
        x: (0..spec.t()).map(|t| x.at(t).to_vec()).collect(),
        q_t,
        d_cardinality,
        bound,
        nullspace_dimension: dim,
        rank: ns.rank,
        last_retained_pivot: ns.pivots.last().copied(),
        first_discarded_pivot: ns.first_discarded,
        gap_warning: ns.gap_warning,
        verification,
        oracle,
        basis: a.basis.then(|| ns.basis.clone()),
    };
    let out = Output::json(report)?;
    Ok(if dim == 0 { out.degenerate() } else { out })
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// ar2_t3, quarterly_t6 or network_transition.
    #[arg(long)]
    pub moment: String,
    #[arg(long, default_value_t = 200)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn verify(a: &VerifyArgs) -> Result<Output> {
    let which: ClosedForm = a.moment.parse()?;
    let rows = verify_closed_form(which, a.draws, &mut stream_rng(a.seed, 0))?;
    let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    eprintln!("max |expectation| = {}", fmt12(worst));
    let csv = table(
        &["draw".into(), "moment".into(), "y0".into(), "residual".into()],
        rows.iter().map(|r| vec![r.draw.to_string(), r.moment.clone(), r.y0.clone(), fmt12(r.residual)]),
        "verify",
    )?;
    Output::csv(csv).with_json(&rows)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Conditional likelihood: static classes, AR sufficiency classes or network sets.
    Cmle,
    /// Composite pairwise likelihood over differencing vectors.
    Pairwise,
    Gmm,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentsFlag {
    Ar2T3,
    QuarterlyT6,
    NetworkTransition,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingFlag {
    Identity,
    TwoStep,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sample CSV, or an edge list for network models.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Moment set for gmm (inferred from the model when absent).
    #[arg(long, value_enum)]
    pub moments: Option<MomentsFlag>,
    #[arg(long, value_enum, default_value = "two-step")]
    pub weighting: WeightingFlag,
    /// Interact the moments with (1, y0, X).
    #[arg(long)]
    pub instruments: bool,
    /// Differencing vector for pairwise, e.g. `1,-1,0` (repeatable; default: all).
    #[arg(long, allow_hyphen_values = true)]
    pub wperp: Vec<Weights>,
    /// Swap-only conditioning sets for network cmle.
    #[arg(long)]
    pub star: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub init: Option<Floats>,
    /// Recorded for reproducibility; the estimators are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn read_sample(path: &std::path::Path, spec: &ModelSpec) -> Result<Sample> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(match spec.family() {
        IndexFamily::Network { .. } => read_network_csv(file, spec)?,
        _ => read_sample_csv(file, spec)?,
    })
}

fn default_moments(spec: &ModelSpec) -> Result<MomentChoice> {
    Ok(match spec.family() {
        IndexFamily::Ar { p: 2 } => MomentChoice::Ar2T3,
        IndexFamily::Ar { p: 1 } => MomentChoice::QuarterlyT6,
        IndexFamily::Network { .. } => MomentChoice::NetworkTransition,
        _ => return usage("no closed-form moments for this model; pass --moments"),
    })
}

fn estimator(a: &EstimateArgs, spec: &ModelSpec) -> Result<EstimatorSpec> {
    Ok(match a.method {
        Method::Cmle => match spec.family() {
            IndexFamily::Static => EstimatorSpec::CmleStatic,
            IndexFamily::Ar { .. } => EstimatorSpec::CmleDynamic,
            IndexFamily::Network { .. } => EstimatorSpec::CmleNetwork { full: !a.star },
        },
        Method::Pairwise => {
            let wperp = if a.wperp.is_empty() {
                let found = find_wperp(&integer_design(spec)?, &SearchOptions::default())?;
                if found.is_empty() {
                    return Err(logitfe::Error::NoInformation("W admits no differencing vector".into()).into());
                }
                found.into_iter().map(|w| w.0).collect()
            } else {
                a.wperp.iter().map(|w| w.0.clone()).collect()
            };
            EstimatorSpec::CmlePairwise { wperp }
        }
        Method::Gmm => EstimatorSpec::Gmm {
            moments: match a.moments {
                Some(MomentsFlag::Ar2T3) => MomentChoice::Ar2T3,
                Some(MomentsFlag::QuarterlyT6) => MomentChoice::QuarterlyT6,
                Some(MomentsFlag::NetworkTransition) => MomentChoice::NetworkTransition,
                None => default_moments(spec)?,
            },
            weighting: match a.weighting {
                WeightingFlag::Identity => Weighting::Identity,
                WeightingFlag::TwoStep => Weighting::TwoStep,
            },
            instruments: a.instruments,
        },
    })
}

pub fn estimate(a: &EstimateArgs) -> Result<Output> {
    let spec = a.model.spec()?;
    let sample = read_sample(&a.data, &spec)?;
    let est = estimator(a, &spec)?;
    let init = args::theta_or(&a.init, &spec, false)?;
    let report: EstimateReport = est.run(&sample, &init)?;
    if !report.flags.is_empty() {
        eprintln!("flags: {}", report.flags.join(", "));
    }
    let head: Vec<String> = ["parameter", "estimate", "std_error", "identified"].iter().map(|s| s.to_string()).collect();
    let rows = (0..report.theta_hat.len()).map(|j| {
        vec![
            report.theta_layout[j].clone(),
            fmt12(report.theta_hat[j]),
            report.std_errors[j].map(fmt12).unwrap_or_default(),
            report.identified[j].to_string(),
        ]
    });
    let csv = table(&head, rows, "estimate")?;
    Ok(Output::json(&report)?.with_csv(csv))
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Data-generating process JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the number of units.
    #[arg(long)]
    pub n: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| args::Usage(format!("{}: {e}", path.display())).into())
}

pub fn simulate(a: &SimulateArgs) -> Result<Output> {
    let mut cfg: DgpConfig = read_json(&a.config)?;
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    eprintln!("# dgp {}", serde_json::to_string(&cfg)?);
    let sample = generate(&cfg)?;
    let mut buf = Vec::new();
    match cfg.spec.family() {
        IndexFamily::Network { .. } => write_network_csv(&mut buf, &sample)?,
        _ => write_sample_csv(&mut buf, &sample)?,
    }
    Ok(Output::csv(String::from_utf8(buf)?))
}

/// Monte Carlo configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub estimator: EstimatorSpec,
    pub replications: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct McArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn mc(a: &McArgs) -> Result<Output> {
    let mut cfg: McConfig = read_json(&a.config)?;
    cfg.replications = a.replications.unwrap_or(cfg.replications);
    cfg.dgp.seed = a.seed.unwrap_or(cfg.dgp.seed);
    eprintln!("# mc {}", serde_json::to_string(&cfg)?);
    let result = monte_carlo(&cfg.dgp, &cfg.estimator, cfg.replications)?;
    let mut buf = Vec::new();
    write_mc_csv(&mut buf, &result)?;
    let all_failed = result.summary.failures == result.summary.replications;
    let out = Output::csv(String::from_utf8(buf)?).with_json(&result)?;
    Ok(if all_failed { out.degenerate() } else { out })
}
