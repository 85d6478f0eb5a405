//! CSV and markdown renderings of simulation summaries.

use std::io::{Read, Write};

use crate::method::MethodTag;
use crate::study::{GridSweepRow, MetricRow, RmseRow};
use crate::SimError;

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_cell(s: &str) -> Result<Option<f64>, SimError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| SimError::Config(format!("bad number `{s}` in metrics CSV")))
}

pub const METRIC_HEADER: [&str; 8] = ["setting", "method", "coefficient", "bias", "sd", "esd", "ci", "n_fail"];

/// Long format; absent values are empty fields, numbers print in shortest round-trip form.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRIC_HEADER)?;
    for r in rows {
        w.write_record([
            r.setting.to_string(),
            r.method.name().to_string(),
            r.coefficient.clone(),
            cell(r.bias),
            cell(r.sd),
            cell(r.esd),
            cell(r.ci),
            r.n_fail.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricRow>, SimError> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != METRIC_HEADER {
        return Err(SimError::Config(format!("unexpected metrics header {header:?}")));
    }
    rd.records()
        .map(|rec| {
            let rec = rec?;
            let num = |i: usize| parse_cell(&rec[i]);
            Ok(MetricRow {
                setting: rec[0].parse().map_err(|_| SimError::Config(format!("bad setting `{}`", &rec[0])))?,
                method: rec[1].parse().map_err(SimError::Config)?,
                coefficient: rec[2].to_string(),
                bias: num(3)?,
                sd: num(4)?,
                esd: num(5)?,
                ci: num(6)?,
                n_fail: rec[7].parse().map_err(|_| SimError::Config(format!("bad n_fail `{}`", &rec[7])))?,
            })
        })
        .collect()
}

fn fmt2(v: Option<f64>) -> String {
    match v {
        // Avoid printing "-0.00".
        Some(x) if (x * 100.0).round() == 0.0 => "0.00".into(),
        Some(x) => format!("{x:.2}"),
        None => String::new(),
    }
}

fn coef_md(label: &str) -> String {
    label.strip_prefix("beta").map_or_else(|| label.to_string(), |k| format!("β{k}"))
}

/// Groups of four columns (Bias, SD, ESD, CI) per `groups` entry, one row per
/// (setting, coefficient).
fn grouped_markdown<G: Copy>(groups: &[(G, String)], keys: &[(u8, String)], lookup: impl Fn(G, u8, &str) -> Option<MetricRow>) -> String {
    let mut s = String::from("| Setting | β |");
    for (_, name) in groups {
        s.push_str(&format!(" {name} Bias | {name} SD | {name} ESD | {name} CI |"));
    }
    s.push_str("\n|---|---|");
    s.push_str(&"---:|".repeat(4 * groups.len()));
    s.push('\n');
    for (setting, coef) in keys {
        s.push_str(&format!("| {setting} | {} |", coef_md(coef)));
        for (g, _) in groups {
            let r = lookup(*g, *setting, coef);
            let get = |f: fn(&MetricRow) -> Option<f64>| fmt2(r.as_ref().and_then(f));
            s.push_str(&format!(
                " {} | {} | {} | {} |",
                get(|r| r.bias),
                get(|r| r.sd),
                get(|r| r.esd),
                get(|r| r.ci)
            ));
        }
        s.push('\n');
    }
    s
}

fn row_keys(rows: impl Iterator<Item = (u8, String)>) -> Vec<(u8, String)> {
    let mut keys: Vec<(u8, String)> = rows.collect();
    keys.sort();
    keys.dedup();
    keys
}

/// Method-comparison table: one column group per method.
pub fn metrics_markdown(rows: &[MetricRow]) -> String {
    let mut methods: Vec<MethodTag> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let groups: Vec<(MethodTag, String)> = methods.iter().map(|m| (*m, m.name().to_string())).collect();
    let keys = row_keys(rows.iter().map(|r| (r.setting, r.coefficient.clone())));
    grouped_markdown(&groups, &keys, |m, s, c| {
        rows.iter()
            .find(|r| r.method == m && r.setting == s && r.coefficient == c)
            .cloned()
    })
}

/// Grid-size table: one column group per `m`.
pub fn grid_markdown(rows: &[GridSweepRow]) -> String {
    let mut ms: Vec<usize> = rows.iter().map(|r| r.m).collect();
    ms.sort();
    ms.dedup();
    let groups: Vec<(usize, String)> = ms.iter().map(|m| (*m, format!("m={m}"))).collect();
    let keys = row_keys(rows.iter().map(|r| (r.metrics.setting, r.metrics.coefficient.clone())));
    grouped_markdown(&groups, &keys, |m, s, c| {
        rows.iter()
            .find(|r| r.m == m && r.metrics.setting == s && r.metrics.coefficient == c)
            .map(|r| r.metrics.clone())
    })
}

pub fn write_grid_csv<W: Write>(rows: &[GridSweepRow], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "setting", "method", "coefficient", "bias", "sd", "esd", "ci", "n_fail"])?;
    for r in rows {
        let x = &r.metrics;
        w.write_record([
            r.m.to_string(),
            x.setting.to_string(),
            x.method.name().to_string(),
            x.coefficient.clone(),
            cell(x.bias),
            cell(x.sd),
            cell(x.esd),
            cell(x.ci),
            x.n_fail.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rmse_csv<W: Write>(rows: &[RmseRow], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setting", "method", "n", "rmse", "rmse_beta1", "rmse_beta2", "rmse_beta3", "n_fail"])?;
    for r in rows {
        let mut rec = vec![r.setting.to_string(), r.method.name().to_string(), r.n.to_string(), cell(r.rmse)];
        rec.extend(r.rmse_coef.iter().map(|v| cell(*v)));
        rec.push(r.n_fail.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
