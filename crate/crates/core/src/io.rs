//! CSV readers and writers for samples, network edge lists and Monte Carlo
//! results.
//!
//! Every file starts with a `# logitfe <kind> schema_version=1` line.
//!
//! * sample: `unit,t,y,x1..xd`; rows with `t <= 0` carry the initial
//!   condition (`t = 1-p .. 0`) and leave the covariates empty.
//! * network: `unit,tau,i,j,y,x1..xd` with 1-based nodes `i < j`; `tau = 0`
//!   holds the initial network.
//! * mc: `row,replication,seed,ok,converged,<theta names>,<se names>,error`;
//!   `row` is `rep` for replications and `bias`, `rmse`, `mae`, `coverage`
//!   for the summary rows.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::estimation::{Sample, Unit};
use crate::model::{dyad_index, CovariatePath, IndexFamily, ModelSpec, OutcomePath};
use crate::simulation::McResult;

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest decimal form of `v` rounded to 12 significant digits.
pub fn fmt12(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    format!("{r}")
}

/// Rounds every float in a JSON tree to 12 significant digits.
pub fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let r: f64 = fmt12(n.as_f64().unwrap()).parse().unwrap();
            if let Some(m) = serde_json::Number::from_f64(r) {
                *n = m;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

fn header(kind: &str) -> String {
    format!("# logitfe {kind} schema_version={SCHEMA_VERSION}\n")
}

/// Reads the whole input, checks the schema line and returns a CSV reader
/// over the remainder.
fn open(mut r: impl Read, kind: &str) -> Result<csv::Reader<std::io::Cursor<String>>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let first = text.lines().next().unwrap_or("");
    if let Some(rest) = first.strip_prefix('#') {
        let version = rest.split_whitespace().find_map(|w| w.strip_prefix("schema_version="));
        match version {
            Some(v) if v == SCHEMA_VERSION.to_string() => {}
            Some(v) => return invalid(format!("{kind} file has schema_version={v}, expected {SCHEMA_VERSION}")),
            None => return invalid(format!("{kind} file header lacks schema_version")),
        }
    }
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(std::io::Cursor::new(text)))
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<T> {
    field.parse().map_err(|_| Error::InvalidInput(format!("line {line}: cannot parse {what} from {field:?}")))
}

fn check_columns(headers: &csv::StringRecord, lead: &[&str], dx: usize) -> Result<()> {
    let want: Vec<String> =
        lead.iter().map(|s| s.to_string()).chain((1..=dx).map(|k| format!("x{k}"))).collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != want {
        return invalid(format!("columns {got:?}, expected {want:?}"));
    }
    Ok(())
}

pub fn write_sample_csv(w: &mut impl Write, sample: &Sample) -> Result<()> {
    let spec = &sample.spec;
    w.write_all(header("sample").as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["unit".to_string(), "t".into(), "y".into()];
    head.extend((1..=spec.dx()).map(|k| format!("x{k}")));
    out.write_record(&head)?;
    let y0_len = spec.y0_len() as isize;
    for (i, u) in sample.units.iter().enumerate() {
        for (s, v) in u.path.y0.iter().enumerate() {
            let mut rec = vec![i.to_string(), (s as isize + 1 - y0_len).to_string(), v.to_string()];
            rec.extend(std::iter::repeat_n(String::new(), spec.dx()));
            out.write_record(&rec)?;
        }
        for (s, v) in u.path.y.iter().enumerate() {
            let mut rec = vec![i.to_string(), (s + 1).to_string(), v.to_string()];
            rec.extend(u.x.at(s).iter().map(|&x| fmt12(x)));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a panel sample; units may appear in any order but each must carry
/// every `t` in `1-p ..= T` exactly once.
pub fn read_sample_csv(r: impl Read, spec: &ModelSpec) -> Result<Sample> {
    if matches!(spec.family(), IndexFamily::Network { .. }) {
        return invalid("network samples use the edge-list format");
    }
    let mut rd = open(r, "sample")?;
    check_columns(rd.headers()?, &["unit", "t", "y"], spec.dx())?;
    let (t_len, y0_len, dx) = (spec.t() as isize, spec.y0_len() as isize, spec.dx());
    let mut units: BTreeMap<String, (Vec<Option<u8>>, Vec<Option<u8>>, Vec<f64>)> = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let unit = rec[0].to_string();
        let t: isize = parse(&rec[1], "t", line)?;
        let y: u8 = parse(&rec[2], "y", line)?;
        if y > 1 {
            return invalid(format!("line {line}: y must be 0 or 1"));
        }
        let entry = units
            .entry(unit)
            .or_insert_with(|| (vec![None; y0_len as usize], vec![None; t_len as usize], vec![0.0; dx * t_len as usize]));
        let slot = if (1..=t_len).contains(&t) {
            &mut entry.1[(t - 1) as usize]
        } else if (1 - y0_len..=0).contains(&t) {
            &mut entry.0[(t + y0_len - 1) as usize]
        } else {
            return invalid(format!("line {line}: t={t} outside {}..={t_len}", 1 - y0_len));
        };
        if slot.replace(y).is_some() {
            return invalid(format!("line {line}: duplicate row"));
        }
        if t >= 1 {
            for k in 0..dx {
                let v: f64 = parse(&rec[3 + k], "covariate", line)?;
                entry.2[(t - 1) as usize * dx + k] = v;
            }
        }
    }
    let mut out = Vec::with_capacity(units.len());
    for (name, (y0, y, x)) in units {
        let collect = |v: Vec<Option<u8>>| -> Result<Vec<u8>> {
            v.into_iter().collect::<Option<Vec<u8>>>().ok_or_else(|| Error::InvalidInput(format!("unit {name}: missing periods")))
        };
        let x = if dx == 0 {
            CovariatePath::zeros(0, t_len as usize)
        } else {
            CovariatePath::from_rows(&x.chunks(dx).map(<[f64]>::to_vec).collect::<Vec<_>>())?
        };
        out.push(Unit { path: OutcomePath::new(collect(y)?, collect(y0)?), x, weight: 1.0 });
    }
    Sample::new(spec.clone(), out)
}

fn network_dims(spec: &ModelSpec) -> Result<(usize, usize, usize)> {
    match spec.family() {
        IndexFamily::Network { n, periods } => Ok((n, periods, n * (n - 1) / 2)),
        _ => invalid("edge lists need a network model"),
    }
}

pub fn write_network_csv(w: &mut impl Write, sample: &Sample) -> Result<()> {
    let spec = &sample.spec;
    let (n, periods, m) = network_dims(spec)?;
    let ds = crate::model::dyads(n);
    w.write_all(header("network").as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["unit".to_string(), "tau".into(), "i".into(), "j".into(), "y".into()];
    head.extend((1..=spec.dx()).map(|k| format!("x{k}")));
    out.write_record(&head)?;
    for (u_idx, u) in sample.units.iter().enumerate() {
        for tau in 0..=periods {
            for (k, &(i, j)) in ds.iter().enumerate() {
                let y = if tau == 0 { u.path.y0[k] } else { u.path.y[(tau - 1) * m + k] };
                let mut rec = vec![u_idx.to_string(), tau.to_string(), (i + 1).to_string(), (j + 1).to_string(), y.to_string()];
                if tau == 0 {
                    rec.extend(std::iter::repeat_n(String::new(), spec.dx()));
                } else {
                    rec.extend(u.x.at((tau - 1) * m + k).iter().map(|&x| fmt12(x)));
                }
                out.write_record(&rec)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a network edge list; a file without a `unit` column holds one
/// network.
pub fn read_network_csv(r: impl Read, spec: &ModelSpec) -> Result<Sample> {
    let (n, periods, m) = network_dims(spec)?;
    let dx = spec.dx();
    let mut rd = open(r, "network")?;
    let has_unit = rd.headers()?.get(0) == Some("unit");
    if has_unit {
        check_columns(rd.headers()?, &["unit", "tau", "i", "j", "y"], dx)?;
    } else {
        check_columns(rd.headers()?, &["tau", "i", "j", "y"], dx)?;
    }
    let off = has_unit as usize;
    let total = m * (periods + 1);
    let mut units: BTreeMap<String, (Vec<Option<u8>>, Vec<f64>)> = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let unit = if has_unit { rec[0].to_string() } else { "0".into() };
        let tau: usize = parse(&rec[off], "tau", line)?;
        let i: usize = parse(&rec[off + 1], "i", line)?;
        let j: usize = parse(&rec[off + 2], "j", line)?;
        let y: u8 = parse(&rec[off + 3], "y", line)?;
        if tau > periods || i == 0 || j == 0 || i >= j || j > n || y > 1 {
            return invalid(format!("line {line}: need tau <= {periods}, 1 <= i < j <= {n}, y in {{0,1}}"));
        }
        let k = dyad_index(n, i - 1, j - 1);
        let entry = units.entry(unit).or_insert_with(|| (vec![None; total], vec![0.0; dx * m * periods]));
        if entry.0[tau * m + k].replace(y).is_some() {
            return invalid(format!("line {line}: duplicate row"));
        }
        if tau > 0 {
            for c in 0..dx {
                entry.1[((tau - 1) * m + k) * dx + c] = parse(&rec[off + 4 + c], "covariate", line)?;
            }
        }
    }
    let mut out = Vec::with_capacity(units.len());
    for (name, (ys, x)) in units {
        let ys: Vec<u8> = ys
            .into_iter()
            .collect::<Option<Vec<u8>>>()
            .ok_or_else(|| Error::InvalidInput(format!("network {name}: missing dyads")))?;
        let x = if dx == 0 {
            CovariatePath::zeros(0, m * periods)
        } else {
            CovariatePath::from_rows(&x.chunks(dx).map(<[f64]>::to_vec).collect::<Vec<_>>())?
        };
        out.push(Unit { path: OutcomePath::new(ys[m..].to_vec(), ys[..m].to_vec()), x, weight: 1.0 });
    }
    Sample::new(spec.clone(), out)
}

fn opt12(v: Option<f64>) -> String {
    v.map(fmt12).unwrap_or_default()
}

pub fn write_mc_csv(w: &mut impl Write, result: &McResult) -> Result<()> {
    w.write_all(header("mc").as_bytes())?;
    let s = &result.summary;
    let k = s.theta_layout.len();
    let mut out = csv::Writer::from_writer(w);
    let mut head: Vec<String> = ["row", "replication", "seed", "ok", "converged"].iter().map(|s| s.to_string()).collect();
    head.extend(s.theta_layout.iter().map(|n| format!("theta_{n}")));
    head.extend(s.theta_layout.iter().map(|n| format!("se_{n}")));
    head.push("error".into());
    out.write_record(&head)?;
    for r in &result.rows {
        let mut rec = vec!["rep".to_string(), r.replication.to_string(), r.seed.to_string(), r.ok.to_string(), r.converged.to_string()];
        rec.extend((0..k).map(|j| r.theta_hat.get(j).map(|&v| fmt12(v)).unwrap_or_default()));
        rec.extend((0..k).map(|j| r.std_errors.get(j).copied().flatten().map(fmt12).unwrap_or_default()));
        rec.push(r.error.clone().unwrap_or_default());
        out.write_record(&rec)?;
    }
    for (name, vals) in [("bias", &s.bias), ("rmse", &s.rmse), ("mae", &s.mean_abs_error), ("coverage", &s.coverage)] {
        let mut rec = vec![name.to_string(), String::new(), String::new(), String::new(), String::new()];
        rec.extend(vals.iter().map(|&v| opt12(Some(v))));
        rec.extend(std::iter::repeat_n(String::new(), k + 1));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{generate, ALaw, DgpConfig, XLaw, Y0Law};

    fn cfg(spec: ModelSpec, theta: Vec<f64>) -> DgpConfig {
        DgpConfig {
            spec,
            theta,
            a_law: ALaw::Normal { mean: 0.0, sd: 1.0 },
            x_law: XLaw::Normal { sd: 1.0 },
            y0_law: Y0Law::default(),
            n: 20,
            seed: 5,
        }
    }

    fn rounded(mut s: Sample) -> Sample {
        for u in &mut s.units {
            let rows: Vec<Vec<f64>> = (0..u.x.periods())
                .map(|t| u.x.at(t).iter().map(|&v| fmt12(v).parse().unwrap()).collect())
                .collect();
            if u.x.dx() > 0 {
                u.x = CovariatePath::from_rows(&rows).unwrap();
            }
        }
        s
    }

    #[test]
    fn sample_round_trip() {
        let spec = ModelSpec::new(IndexFamily::Ar { p: 2 }, vec![vec![1.0; 4]], 2).unwrap();
        let s = generate(&cfg(spec.clone(), vec![0.5, -0.3, 1.0, 0.2])).unwrap();
        let mut buf = Vec::new();
        write_sample_csv(&mut buf, &s).unwrap();
        let back = read_sample_csv(buf.as_slice(), &spec).unwrap();
        assert_eq!(back.units.len(), 20);
        // units are read back in lexicographic order of their ids
        let mut want = rounded(s).units;
        let mut ids: Vec<(String, usize)> = (0..want.len()).map(|i| (i.to_string(), i)).collect();
        ids.sort();
        want = ids.into_iter().map(|(_, i)| want[i].clone()).collect();
        assert_eq!(back.units, want);
    }

    #[test]
    fn network_round_trip() {
        let spec = ModelSpec::network(3, 3, 1).unwrap();
        let s = generate(&cfg(spec.clone(), vec![0.5, 0.3, 1.0])).unwrap();
        let mut buf = Vec::new();
        write_network_csv(&mut buf, &s).unwrap();
        let back = read_network_csv(buf.as_slice(), &spec).unwrap();
        assert_eq!(back.units.len(), 20);
        assert!(back.units.iter().all(|u| s.units.iter().any(|v| v.path == u.path)));
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let spec = ModelSpec::new(IndexFamily::Static, vec![vec![1.0; 2]], 0).unwrap();
        let text = "# logitfe sample schema_version=9\nunit,t,y\n0,1,1\n0,2,0\n";
        assert!(read_sample_csv(text.as_bytes(), &spec).is_err());
        let ok = "# logitfe sample schema_version=1\nunit,t,y\n0,1,1\n0,2,0\n";
        assert_eq!(read_sample_csv(ok.as_bytes(), &spec).unwrap().units[0].path.y, vec![1, 0]);
    }

    #[test]
    fn missing_period_is_rejected() {
        let spec = ModelSpec::new(IndexFamily::Static, vec![vec![1.0; 2]], 0).unwrap();
        assert!(read_sample_csv("unit,t,y\n0,1,1\n".as_bytes(), &spec).is_err());
    }

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(2.0), "2");
        assert_eq!(fmt12(-1234567.891234567), "-1234567.89123");
    }
}
