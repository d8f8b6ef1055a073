//! CSV tables and small hand-written SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::evaluation::MethodScorecard;
use crate::features::LogRegModel;
use crate::model::DailyCountSeries;

/// Raw vote totals: method -> one value per margin.
pub type VoteTable = BTreeMap<String, Vec<f64>>;

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// `method,P,R,F1,covering,MV`, one row per method in input order.
pub fn scorecard_csv(cards: &[MethodScorecard]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "P", "R", "F1", "covering", "MV"])
        .map_err(csv_error)?;
    for c in cards {
        w.write_record([
            c.method_id.clone(),
            fmt6(c.precision),
            fmt6(c.recall),
            fmt6(c.f1),
            fmt6(c.covering),
            fmt6(c.mv),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorecardRow {
    pub method_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub covering: f64,
    pub mv: f64,
}

pub fn read_scorecard<R: Read>(reader: R) -> Result<Vec<ScorecardRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Record {
                    line: i + 2,
                    message: format!("column {k} is not a number"),
                })
        };
        out.push(ScorecardRow {
            method_id: rec.get(0).unwrap_or_default().to_string(),
            precision: field(1)?,
            recall: field(2)?,
            f1: field(3)?,
            covering: field(4)?,
            mv: field(5)?,
        });
    }
    Ok(out)
}

/// Long-format raw vote totals: `method,tau,raw_votes`.
pub fn votes_csv(taus: &[u32], table: &VoteTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "tau", "raw_votes"])
        .map_err(csv_error)?;
    for (method, row) in table {
        for (tau, v) in taus.iter().zip(row) {
            w.write_record([method.clone(), tau.to_string(), fmt6(*v)])
                .map_err(csv_error)?;
        }
    }
    finish(w)
}

/// Reads [`votes_csv`] output back into `(taus, method -> totals)`, keeping
/// only the margins in `keep` when given.
pub fn read_votes<R: Read>(reader: R, keep: Option<&[u32]>) -> Result<(Vec<u32>, VoteTable)> {
    let mut r = csv::Reader::from_reader(reader);
    let mut cells: BTreeMap<String, BTreeMap<u32, f64>> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let bad = |what: &str| Error::Record {
            line: i + 2,
            message: format!("bad {what}"),
        };
        let method = rec.get(0).ok_or_else(|| bad("method"))?.to_string();
        let tau: u32 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("tau"))?;
        let v: f64 = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("raw_votes"))?;
        if keep.is_none_or(|k| k.contains(&tau)) {
            cells.entry(method).or_default().insert(tau, v);
        }
    }
    let mut taus: Vec<u32> = cells.values().flat_map(|m| m.keys().copied()).collect();
    taus.sort_unstable();
    taus.dedup();
    let table = cells
        .into_iter()
        .map(|(m, row)| {
            let values = taus
                .iter()
                .map(|t| row.get(t).copied().unwrap_or(0.0))
                .collect();
            (m, values)
        })
        .collect();
    Ok((taus, table))
}

/// `rank,method,MV`, best first; ties keep method-name order.
pub fn ranking_csv(scaled: &BTreeMap<String, f64>) -> Result<String> {
    let mut rows: Vec<(&String, f64)> = scaled.iter().map(|(k, v)| (k, *v)).collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "method", "MV"])
        .map_err(csv_error)?;
    for (i, (m, v)) in rows.into_iter().enumerate() {
        w.write_record([(i + 1).to_string(), m.clone(), fmt6(v)])
            .map_err(csv_error)?;
    }
    finish(w)
}

/// `feature,coefficient`, largest coefficient first, intercept last.
pub fn coefficients_csv(model: &LogRegModel) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "coefficient"])
        .map_err(csv_error)?;
    for (name, c) in &model.coefficients {
        w.write_record([name.clone(), fmt6(*c)])
            .map_err(csv_error)?;
    }
    w.write_record(["(intercept)".to_string(), fmt6(model.intercept)])
        .map_err(csv_error)?;
    finish(w)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 240.0;
const PAD: f64 = 30.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Daily activity as a polyline with a dashed vertical marker per candidate day.
pub fn daily_counts_svg(
    series: &DailyCountSeries,
    candidates: &[NaiveDate],
    title: &str,
) -> String {
    let n = series.len().max(1);
    let ymax = series.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let x = |i: f64| PAD + (WIDTH - 2.0 * PAD) * i / (n.max(2) - 1) as f64;
    let y = |v: f64| HEIGHT - PAD - (HEIGHT - 2.0 * PAD) * v / ymax;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<title>{}</title>"#, xml_escape(title));
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        b = HEIGHT - PAD,
        r = WIDTH - PAD
    );
    let points: Vec<String> = series
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| format!("{:.2},{:.2}", x(i as f64), y(c as f64)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1" points="{}"/>"#,
        points.join(" ")
    );
    for d in candidates {
        let offset = (*d - series.start_day).num_days();
        if offset < 0 || offset as usize >= series.len() {
            continue;
        }
        let cx = x(offset as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{cx:.2}" y1="{PAD}" x2="{cx:.2}" y2="{b}" stroke="red" stroke-dasharray="4,3"><title>{d}</title></line>"#,
            b = HEIGHT - PAD
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{t}" font-size="11">{} .. {} (max {ymax})</text>"#,
        series.start_day,
        series.last_day(),
        t = PAD - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Histogram of timeline densities over `[0, 1]`.
pub fn density_histogram_svg(densities: &[f64], bins: usize) -> String {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for &d in densities {
        let idx = ((d.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let cmax = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (WIDTH - 2.0 * PAD) / bins as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, "<title>timeline density</title>");
    for (i, &c) in counts.iter().enumerate() {
        let h = (HEIGHT - 2.0 * PAD) * c as f64 / cmax;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="gray"><title>{}</title></rect>"#,
            PAD + i as f64 * bw,
            HEIGHT - PAD - h,
            (bw - 1.0).max(0.5),
            h,
            c
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CountSource;

    fn card(id: &str, mv: f64) -> MethodScorecard {
        MethodScorecard {
            method_id: id.into(),
            precision: 0.25,
            recall: 1.0,
            f1: 0.4,
            covering: 0.5,
            raw_votes: 3.0,
            mv,
            runs: 1,
        }
    }

    #[test]
    fn scorecard_layout_and_read_back() {
        let text = scorecard_csv(&[card("everyday", 0.0), card("bocpd_pg_1", 1.0)]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("method,P,R,F1,covering,MV"));
        assert_eq!(
            lines.next(),
            Some("everyday,0.250000,1.000000,0.400000,0.500000,0.000000")
        );
        let rows = read_scorecard(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].mv, 1.0);
    }

    #[test]
    fn votes_round_trip() {
        let taus = [0, 1, 2];
        let table = BTreeMap::from([
            ("a".to_string(), vec![1.0, 2.0, 3.0]),
            ("b".to_string(), vec![0.0, 0.5, 0.25]),
        ]);
        let text = votes_csv(&taus, &table).unwrap();
        let (t, back) = read_votes(text.as_bytes(), None).unwrap();
        assert_eq!(t, taus);
        assert_eq!(back, table);
        let (t, sub) = read_votes(text.as_bytes(), Some(&[2])).unwrap();
        assert_eq!(t, vec![2]);
        assert_eq!(sub["a"], vec![3.0]);
    }

    #[test]
    fn ranking_order() {
        let scaled = BTreeMap::from([
            ("a".to_string(), 0.2),
            ("b".to_string(), 1.0),
            ("c".to_string(), 0.0),
        ]);
        let text = ranking_csv(&scaled).unwrap();
        let methods: Vec<&str> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap())
            .collect();
        assert_eq!(methods, ["b", "a", "c"]);
    }

    #[test]
    fn svg_markers() {
        let s = DailyCountSeries {
            start_day: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            counts: vec![1, 3, 0, 2],
            source: CountSource::Posts,
        };
        let day = NaiveDate::from_ymd_opt(2020, 1, 3).unwrap();
        let svg = daily_counts_svg(&s, &[day], "u<1>");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(svg.contains("u&lt;1&gt;"));
        let hist = density_histogram_svg(&[0.0, 0.1, 0.95, 1.0], 10);
        assert_eq!(hist.matches("<rect").count(), 10);
    }
}
