//! Shared argument groups and input helpers.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use logitfe::differencing::{build_design, DesignFamily};
use logitfe::model::{CovariatePath, IndexFamily, ModelSpec};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

/// Marks an error as a usage problem (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    /// Scalar unit effect over T periods.
    PanelFe,
    /// Polynomial trend of degree --p over T periods.
    Poly,
    Overlapping,
    /// Unit and time effects on an --n x --periods panel.
    TwoWay,
    /// Undirected dyads among --n nodes.
    Dyadic,
    /// Triads with sides --n1, --n2, --n3.
    Triadic,
    /// Quarter indicators over T periods.
    Quarterly,
    /// Scalar unit effect with AR(--p) dynamics.
    Ar,
    /// Three-period style network among --n nodes over --periods periods.
    Network,
}

/// Where the model comes from: a JSON file or a built-in design.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Model-spec JSON file.
    #[arg(long, conflicts_with = "design")]
    pub model: Option<PathBuf>,
    /// Built-in design instead of a model file.
    #[arg(long, value_enum)]
    pub design: Option<Design>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Polynomial degree (poly) or autoregressive order (ar).
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub n3: Option<usize>,
    /// Add AR dynamics of this order to a static design.
    #[arg(long)]
    pub lags: Option<usize>,
    /// Number of covariates (defaults: 0 for ar and network, 1 otherwise).
    #[arg(long)]
    pub dx: Option<usize>,
}

fn need(v: Option<usize>, flag: &str, design: Design) -> Result<usize> {
    match v {
        Some(v) => Ok(v),
        None => usage(format!("--design {} needs --{flag}", design.to_possible_value().unwrap().get_name())),
    }
}

impl ModelArgs {
    pub fn spec(&self) -> Result<ModelSpec> {
        if let Some(path) = &self.model {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return match serde_json::from_str(&text) {
                Ok(spec) => Ok(spec),
                Err(e) => usage(format!("{}: {e}", path.display())),
            };
        }
        let Some(d) = self.design else {
            return usage("give either --model or --design");
        };
        let family = match d {
            Design::PanelFe => DesignFamily::PanelFe { t: need(self.t, "T", d)? },
            Design::Poly => DesignFamily::PolyTrend { p: need(self.p, "p", d)?, t: need(self.t, "T", d)? },
            Design::Overlapping => DesignFamily::Overlapping,
            Design::TwoWay => DesignFamily::TwoWay { n: need(self.n, "n", d)?, periods: need(self.periods, "periods", d)? },
            Design::Dyadic => DesignFamily::Dyadic { n: need(self.n, "n", d)? },
            Design::Triadic => DesignFamily::Triadic {
                n1: need(self.n1, "n1", d)?,
                n2: need(self.n2, "n2", d)?,
                n3: need(self.n3, "n3", d)?,
            },
            Design::Quarterly => DesignFamily::Quarterly { t: need(self.t, "T", d)? },
            Design::Ar => {
                let t = need(self.t, "T", d)?;
                let spec = ModelSpec::new(IndexFamily::Ar { p: need(self.p, "p", d)? }, vec![vec![1.0; t]], 0)?;
                return Ok(spec.with_dx(self.dx.unwrap_or(0)));
            }
            Design::Network => {
                return Ok(ModelSpec::network(need(self.n, "n", d)?, need(self.periods, "periods", d)?, self.dx.unwrap_or(0))?);
            }
        };
        let mut spec = build_design(family)?;
        if let Some(p) = self.lags {
            spec = spec.with_family(IndexFamily::Ar { p })?;
        }
        let dx = self.dx.unwrap_or(spec.dx());
        Ok(spec.with_dx(dx))
    }
}

/// Reads `t,x1..xd` rows (t = 1..T) into a covariate path.
pub fn read_x(path: &Path, spec: &ModelSpec) -> Result<CovariatePath> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let (t, dx) = (spec.t(), spec.dx());
    let mut rows = vec![None; t];
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != dx + 1 {
            return usage(format!("covariate rows need {} columns (t,x1..x{dx})", dx + 1));
        }
        let s: usize = rec[0].parse().map_err(|_| Usage(format!("bad period {:?}", &rec[0])))?;
        if s == 0 || s > t {
            return usage(format!("period {s} outside 1..={t}"));
        }
        let vals = (1..=dx)
            .map(|k| rec[k].parse::<f64>().map_err(|_| Usage(format!("bad covariate {:?}", &rec[k])).into()))
            .collect::<Result<Vec<f64>>>()?;
        rows[s - 1] = Some(vals);
    }
    let rows: Vec<Vec<f64>> = match rows.into_iter().collect() {
        Some(r) => r,
        None => return usage(format!("covariate file must list every period 1..={t}")),
    };
    Ok(CovariatePath::from_rows(&rows)?)
}

/// Covariates from `--x`, or standard normal draws from `seed`.
pub fn covariates(x: Option<&Path>, spec: &ModelSpec, seed: u64) -> Result<CovariatePath> {
    if spec.dx() == 0 {
        return Ok(CovariatePath::zeros(0, spec.t()));
    }
    if let Some(p) = x {
        return read_x(p, spec);
    }
    let mut rng = logitfe::simulation::stream_rng(seed, u64::MAX);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..spec.t()).map(|_| (0..spec.dx()).map(|_| normal.sample(&mut rng)).collect()).collect();
    Ok(CovariatePath::from_rows(&rows)?)
}

/// Initial condition: the given bits, or zeros.
pub fn initial(y0: &Option<Bits>, spec: &ModelSpec) -> Result<Vec<u8>> {
    let want = spec.y0_len();
    let y0 = y0.as_ref().map(|b| b.0.clone()).unwrap_or_else(|| vec![0; want]);
    if y0.len() != want || y0.iter().any(|&b| b > 1) {
        return usage(format!("--y0 needs {want} entries in {{0,1}}"));
    }
    Ok(y0)
}

pub fn theta_or(theta: &Option<Floats>, spec: &ModelSpec, required: bool) -> Result<Vec<f64>> {
    match theta.as_ref().map(|f| &f.0) {
        Some(t) if t.len() == spec.theta_len() => Ok(t.clone()),
        Some(t) => usage(format!("--theta has {} entries, layout {:?}", t.len(), spec.theta_layout())),
        None if required => usage(format!("--theta is required, layout {:?}", spec.theta_layout())),
        None => Ok(vec![0.0; spec.theta_len()]),
    }
}

/// Bit string such as `0110` or `0,1,1,0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Bits(pub Vec<u8>);

impl FromStr for Bits {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.chars()
            .filter(|c| *c != ',' && !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(format!("{s:?} is not a bit string")),
            })
            .collect::<std::result::Result<_, _>>()
            .map(Bits)
    }
}

/// Comma-separated weight vector such as `1,-1,0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Weights(pub Vec<i8>);

impl FromStr for Weights {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|v| match v.trim().parse::<i8>() {
                Ok(x) if (-1..=1).contains(&x) => Ok(x),
                _ => Err(format!("{v:?} is not in {{-1,0,1}}")),
            })
            .collect::<std::result::Result<_, _>>()
            .map(Weights)
    }
}

/// Comma-separated numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Floats(pub Vec<f64>);

impl FromStr for Floats {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Floats(Vec::new()));
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number")))
            .collect::<std::result::Result<_, _>>()
            .map(Floats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!("0,1,1".parse::<Bits>().unwrap().0, vec![0, 1, 1]);
        assert_eq!("101".parse::<Bits>().unwrap().0, vec![1, 0, 1]);
        assert!("102".parse::<Bits>().is_err());
        assert_eq!("1,-1,0".parse::<Weights>().unwrap().0, vec![1, -1, 0]);
        assert!("2".parse::<Weights>().is_err());
        assert_eq!("0.5,-0.3".parse::<Floats>().unwrap().0, vec![0.5, -0.3]);
    }
}
