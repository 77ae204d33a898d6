//! Versioned CSV tables and static SVG plots.
//!
//! Every table starts with `# pacetok-table v1 <kind>`, then a header row.
//! Floats are written in shortest round-trip form, so a table re-read and
//! re-written is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalcal::{CalibrationReport, EvalRecord, PointMetrics};

pub const TABLE_MAGIC: &str = "# pacetok-table v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

impl Table {
    pub fn new(kind: &str, header: &[&str]) -> Self {
        Table { kind: kind.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for table {}", self.kind);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells");
        format!("{TABLE_MAGIC} {}\n{body}", self.kind)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (first, body) = text.split_once('\n').unwrap_or((text, ""));
        let kind = first
            .strip_prefix(TABLE_MAGIC)
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Data(format!("not a pacetok table (first line {first:?})")))?;
        let data_err = |e: csv::Error| Error::Data(format!("table {kind}: {e}"));
        let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let header: Vec<String> = r.headers().map_err(data_err)?.iter().map(String::from).collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Data(format!("table {kind} has no header")));
        }
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(data_err))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Table { kind: kind.into(), header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("table {} has no column {name}", self.kind)))
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| r[c].parse::<f64>().map_err(|e| Error::Data(format!("column {name}: {e}"))))
            .collect()
    }
}

pub const METRIC_COLUMNS: [&str; 8] =
    ["n", "ks", "mean_mae", "median_mae", "mode_mae", "mean_rmse", "median_rmse", "mode_rmse"];

pub fn metric_cells(n: usize, ks: f64, m: &PointMetrics) -> Vec<String> {
    vec![
        n.to_string(),
        num(ks),
        num(m.mean.mae),
        num(m.median.mae),
        num(m.mode.mae),
        num(m.mean.rmse),
        num(m.median.rmse),
        num(m.mode.rmse),
    ]
}

/// Header made of `leading` columns followed by [`METRIC_COLUMNS`].
pub fn metrics_table(kind: &str, leading: &[&str]) -> Table {
    let header: Vec<&str> = leading.iter().copied().chain(METRIC_COLUMNS).collect();
    Table::new(kind, &header)
}

pub fn records_table(records: &[EvalRecord]) -> Table {
    let mut t = Table::new("examples", &["index", "y_true", "pit", "mean", "median", "mode"]);
    for (i, r) in records.iter().enumerate() {
        t.push(vec![i.to_string(), num(r.y_true), num(r.pit), num(r.mean), num(r.median), num(r.mode)]);
    }
    t
}

pub fn records_from_table(t: &Table) -> Result<Vec<EvalRecord>> {
    if t.kind != "examples" {
        return Err(Error::Data(format!("expected an examples table, found {}", t.kind)));
    }
    let cols = ["y_true", "pit", "mean", "median", "mode"].map(|c| t.f64_column(c));
    let [y, p, mean, median, mode] = cols;
    let (y, p, mean, median, mode) = (y?, p?, mean?, median?, mode?);
    Ok((0..y.len())
        .map(|i| EvalRecord { y_true: y[i], pit: p[i], mean: mean[i], median: median[i], mode: mode[i] })
        .collect())
}

/// Q-Q, occupancy, per-stratum summary and reliability tables.
pub fn calibration_tables(r: &CalibrationReport) -> Vec<Table> {
    let mut qq = Table::new("qq", &["uniform_quantile", "pit_quantile"]);
    for &(u, q) in &r.qq {
        qq.push(vec![num(u), num(q)]);
    }
    let bins = r.occupancy.len();
    let mut occ = Table::new("occupancy", &["bin", "lo", "hi", "count", "fraction"]);
    for (i, &c) in r.occupancy.iter().enumerate() {
        occ.push(vec![
            i.to_string(),
            num(i as f64 / bins as f64),
            num((i + 1) as f64 / bins as f64),
            c.to_string(),
            num(c as f64 / r.n as f64),
        ]);
    }
    let mut strata = Table::new("strata", &["stratum", "y_min", "y_max", "n", "ks"]);
    let mut rel = Table::new("reliability", &["stratum", "level", "observed"]);
    for s in &r.strata {
        strata.push(vec![s.index.to_string(), num(s.y_min), num(s.y_max), s.n.to_string(), num(s.ks)]);
        for &(level, obs) in &s.reliability {
            rel.push(vec![s.index.to_string(), num(level), num(obs)]);
        }
    }
    vec![qq, occ, strata, rel]
}

// ---- SVG ----

const W: f64 = 480.0;
const H: f64 = 360.0;
const M: f64 = 48.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        xml(title)
    )
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = writeln!(
        s,
        "<path d=\"M{M} {} L{M} {} L{} {}\" stroke=\"black\" fill=\"none\"/>",
        M,
        H - M,
        W - M,
        H - M
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
        W / 2.0,
        H - 12.0,
        xml(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        xml(y_label)
    );
    for (v, px) in [(x.0, M), (x.1, W - M)] {
        let _ = writeln!(s, "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>", H - M + 14.0, tick(v));
    }
    for (v, py) in [(y.0, H - M), (y.1, M)] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{py}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>", M - 4.0, tick(v));
    }
}

fn tick(v: f64) -> String {
    format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
}

fn project(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Line plot of one or more named series; `unit_square` fixes both axes to [0, 1] and draws the diagonal.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)], unit_square: bool) -> String {
    let (xr, yr) = if unit_square {
        ((0.0, 1.0), (0.0, 1.0))
    } else {
        (
            bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0))),
            bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1))),
        )
    };
    let mut s = svg_open(title);
    axes(&mut s, x_label, y_label, xr, yr);
    if unit_square {
        let _ = writeln!(s, "<path d=\"M{M} {} L{} {M}\" stroke=\"#999\" stroke-dasharray=\"4 3\" fill=\"none\"/>", H - M, W - M);
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| {
                let px = project(x, xr.0, xr.1, M, W - M);
                let py = project(y, yr.0, yr.1, H - M, M);
                format!("{}{px:.2} {py:.2}", if j == 0 { "M" } else { "L" })
            })
            .collect();
        let _ = writeln!(s, "<path d=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"1.5\"><title>{}</title></path>", d.join(" "), xml(name));
        if series.len() > 1 {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"9\" fill=\"{color}\">{}</text>",
                W - M + 4.0,
                M + 11.0 * i as f64,
                xml(name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn bar_chart(title: &str, x_label: &str, y_label: &str, values: &[f64]) -> String {
    let top = values.iter().copied().fold(0.0, f64::max);
    let mut s = svg_open(title);
    axes(&mut s, x_label, y_label, (0.0, values.len() as f64), (0.0, top));
    let bw = (W - 2.0 * M) / values.len().max(1) as f64;
    for (i, &v) in values.iter().enumerate() {
        let h = project(v, 0.0, top, 0.0, H - 2.0 * M);
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"><title>{}</title></rect>",
            M + i as f64 * bw + 1.0,
            H - M - h,
            (bw - 2.0).max(0.5),
            PALETTE[0],
            num(v)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grey-scale heat map of `rows[i][j]` in [0, 1] (row `i` drawn top to bottom).
pub fn heatmap(title: &str, rows: &[Vec<f64>]) -> String {
    let n = rows.len().max(1) as f64;
    let m = rows.iter().map(Vec::len).max().unwrap_or(1).max(1) as f64;
    let (cw, ch) = ((W - 2.0 * M) / m, (H - 2.0 * M) / n);
    let mut s = svg_open(title);
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"rgb({shade},{shade},{shade})\"/>",
                M + j as f64 * cw,
                M + i as f64 * ch
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
