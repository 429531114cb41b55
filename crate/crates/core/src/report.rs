//! The reference error table as an experiment plan, its CSV and text
//! renderings, and small hand-written SVG figures.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::make_dataset;
use crate::error::{Error, Result};
use crate::maps::MapSpec;
use crate::models::Variant;
use crate::num::fmt17;
use crate::train::{train, TrainConfig, TrainStatus, WindowReport};
use crate::uq::PredictionSummary;

/// Samples per dataset in the table runs (240 train / 60 test).
pub const TABLE_SAMPLES: usize = 300;

/// Model 2 starting coefficients swept across the table, `(c, -c)`.
pub const MODEL2_SWEEP: [f64; 5] = [3.0, 3.1, 3.5, 3.9, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub variant: Variant,
    /// `c1` of the Model 2 column (`c2 = -c1`).
    pub c: Option<f64>,
}

impl Column {
    pub fn label(&self) -> String {
        match self.c {
            Some(c) => format!("model{}_c{c:.1}", self.variant.number()),
            None => format!("model{}", self.variant.number()),
        }
    }
}

pub fn table1_columns() -> Vec<Column> {
    let mut cols = vec![Column {
        variant: Variant::ConjugacyAe,
        c: None,
    }];
    cols.extend(MODEL2_SWEEP.iter().map(|&c| Column {
        variant: Variant::LogisticAe,
        c: Some(c),
    }));
    cols.push(Column {
        variant: Variant::Fnn,
        c: None,
    });
    cols.push(Column {
        variant: Variant::Pinn,
        c: None,
    });
    cols
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub spec: MapSpec<f64>,
}

impl Row {
    pub fn map_label(&self) -> &'static str {
        self.spec.kind.name()
    }

    /// Parameter as printed in the table, `-` for parameter-free maps.
    pub fn param_label(&self) -> String {
        self.spec.param().map_or("-".into(), |p| format!("{p:.2}"))
    }
}

pub fn table1_rows() -> Vec<Row> {
    [
        MapSpec::logistic(4.0),
        MapSpec::logistic(3.9),
        MapSpec::logistic(3.57),
        MapSpec::custom(),
        MapSpec::katsura_fukuda(0.5),
        MapSpec::doubling(),
        MapSpec::pomeau_manneville(1.5, 1.0),
    ]
    .into_iter()
    .map(|spec| Row { spec })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCell {
    pub row: usize,
    pub col: usize,
    pub spec: MapSpec<f64>,
    pub column: Column,
    /// Each seed drives both the dataset and the initialization.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub rows: Vec<Row>,
    pub columns: Vec<Column>,
    pub cells: Vec<PlanCell>,
    pub samples: usize,
}

impl ExperimentPlan {
    /// The full grid with `replicates` seeds per cell starting at `seed_base`.
    pub fn table1(seed_base: u64, replicates: usize) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::Config("at least one replicate is needed".into()));
        }
        let rows = table1_rows();
        let columns = table1_columns();
        let seeds: Vec<u64> = (0..replicates as u64).map(|r| seed_base.wrapping_add(r)).collect();
        let mut cells = Vec::new();
        for (ri, row) in rows.iter().enumerate() {
            for (ci, column) in columns.iter().enumerate() {
                cells.push(PlanCell {
                    row: ri,
                    col: ci,
                    spec: row.spec,
                    column: *column,
                    seeds: seeds.clone(),
                    train: TrainConfig::preset(row.spec.kind),
                });
            }
        }
        Ok(ExperimentPlan {
            rows,
            columns,
            cells,
            samples: TABLE_SAMPLES,
        })
    }

    pub fn training_runs(&self) -> usize {
        self.cells.iter().map(|c| c.seeds.len()).sum()
    }

    /// Human-readable listing of every cell, used by dry runs.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "table1 plan: {} rows x {} columns = {} cells, {} training runs, {} samples per dataset",
            self.rows.len(),
            self.columns.len(),
            self.cells.len(),
            self.training_runs(),
            self.samples
        );
        for c in &self.cells {
            let t = &c.train;
            let _ = writeln!(
                s,
                "  {:<15} {:<5} {:<13} seeds {:?} batch {} width {} layers {}/{} epochs {} lr {} {}",
                c.spec.kind.name(),
                self.rows[c.row].param_label(),
                c.column.label(),
                c.seeds,
                t.batch_size,
                t.layer_width,
                t.layers_in,
                t.layers_out,
                t.epochs,
                t.learning_rate,
                t.activation
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: TrainStatus,
    pub train_mse: f64,
    pub test_mse: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub row: usize,
    pub col: usize,
    pub outcomes: Vec<SeedOutcome>,
}

impl CellResult {
    /// Median test error over completed seeds; `None` (printed `-`) when
    /// nothing completed or most seeds stopped on a vanishing gradient.
    pub fn value(&self) -> Option<f64> {
        let vanished = self
            .outcomes
            .iter()
            .filter(|o| o.status == TrainStatus::VanishingGradient)
            .count();
        if 2 * vanished > self.outcomes.len() {
            return None;
        }
        let done: Vec<f64> = self
            .outcomes
            .iter()
            .filter(|o| o.status.is_completed())
            .map(|o| o.test_mse)
            .collect();
        median(&done)
    }
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Trains every seed of one cell.
pub fn run_cell(cell: &PlanCell, samples: usize) -> Result<CellResult> {
    let mut outcomes = Vec::with_capacity(cell.seeds.len());
    for &seed in &cell.seeds {
        let data = make_dataset(&cell.spec, samples, seed)?;
        let cfg = cell.train.clone().with_seed(seed);
        let mut model = cfg.model_config(cell.column.variant, 1, &cell.spec);
        if let Some(c) = cell.column.c {
            model = model.with_latent_coeffs(c, -c);
        }
        let (_, report) = train(&model, &data, &cfg)?;
        log::info!(
            "{} {} {} seed {seed}: {:?} test {:e}",
            cell.spec,
            cell.column.label(),
            cell.column.variant,
            report.status,
            report.test_mse
        );
        outcomes.push(SeedOutcome {
            seed,
            status: report.status,
            train_mse: report.train_mse,
            test_mse: report.test_mse,
            epochs_run: report.history.len(),
        });
    }
    Ok(CellResult {
        row: cell.row,
        col: cell.col,
        outcomes,
    })
}

/// Table CSV: one line per map row, one column per model column.
pub fn table_csv(plan: &ExperimentPlan, results: &[CellResult]) -> String {
    let mut s = String::from("map,parameter");
    for c in &plan.columns {
        s.push(',');
        s.push_str(&c.label());
    }
    s.push('\n');
    for (ri, row) in plan.rows.iter().enumerate() {
        let _ = write!(s, "{},{}", row.map_label(), row.param_label());
        for ci in 0..plan.columns.len() {
            let cell = results.iter().find(|r| r.row == ri && r.col == ci);
            s.push(',');
            match cell.and_then(CellResult::value) {
                Some(v) => s.push_str(&fmt17(v)),
                None => s.push('-'),
            }
        }
        s.push('\n');
    }
    s
}

/// Long-format CSV with every seed of every cell.
pub fn runs_csv(plan: &ExperimentPlan, results: &[CellResult]) -> String {
    let mut s = String::from("map,parameter,column,seed,status,epochs,train_mse,test_mse\n");
    for r in results {
        let row = &plan.rows[r.row];
        for o in &r.outcomes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                row.map_label(),
                row.param_label(),
                plan.columns[r.col].label(),
                o.seed,
                o.status.name(),
                o.epochs_run,
                fmt17(o.train_mse),
                fmt17(o.test_mse)
            );
        }
    }
    s
}

/// Fixed-width text table with three significant decimals.
pub fn render_table(plan: &ExperimentPlan, results: &[CellResult]) -> String {
    let mut s = format!("{:<15} {:>9}", "map", "parameter");
    for c in &plan.columns {
        let _ = write!(s, " {:>13}", c.label());
    }
    s.push('\n');
    for (ri, row) in plan.rows.iter().enumerate() {
        let _ = write!(s, "{:<15} {:>9}", row.map_label(), row.param_label());
        for ci in 0..plan.columns.len() {
            let v = results
                .iter()
                .find(|r| r.row == ri && r.col == ci)
                .and_then(CellResult::value);
            match v {
                Some(v) => {
                    let _ = write!(s, " {:>13}", format!("{v:.3E}"));
                }
                None => {
                    let _ = write!(s, " {:>13}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Self {
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in xs.filter(|v| v.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in ys.filter(|v| v.is_finite()) {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x1.partial_cmp(&x0) != Some(Ordering::Greater) {
            x0 -= 0.5;
            x1 = x0 + 1.0;
        }
        if y1.partial_cmp(&y0) != Some(Ordering::Greater) {
            y0 -= 0.5;
            y1 = y0 + 1.0;
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (SVG_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (SVG_H - 2.0 * MARGIN)
    }

    fn points(&self, pts: impl Iterator<Item = (f64, f64)>) -> String {
        let mut s = String::new();
        for (x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            if !s.is_empty() {
                s.push(' ');
            }
            let _ = write!(s, "{:.2},{:.2}", self.px(x), self.py(y));
        }
        s
    }
}

fn svg_open(title: &str, f: &Frame) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        SVG_W / 2.0,
        xml_escape(title)
    );
    let (l, r, t, b) = (MARGIN, SVG_W - MARGIN, MARGIN, SVG_H - MARGIN);
    let _ = writeln!(
        s,
        "<polyline class=\"axes\" points=\"{l},{t} {l},{b} {r},{b}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{l}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>",
        b + 14.0,
        f.x0
    );
    let _ = writeln!(
        s,
        "<text x=\"{r}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
        b + 14.0,
        f.x1
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
        l - 4.0,
        f.y0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
        l - 4.0,
        t + 10.0,
        f.y1
    );
    s
}

fn legend(s: &mut String, idx: usize, label: &str, color: &str) {
    let y = MARGIN + 14.0 * idx as f64;
    let x = SVG_W - MARGIN - 150.0;
    let _ = writeln!(
        s,
        "<polyline class=\"legend\" points=\"{x},{y} {},{y}\" stroke=\"{color}\" stroke-width=\"2\"/>",
        x + 16.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
        x + 20.0,
        y + 3.0,
        xml_escape(label)
    );
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Truth, mean and a shaded interval for each `(label, summary)`; exactly
/// one `<polygon>` per summary.
pub fn band_svg(title: &str, bands: &[(String, &PredictionSummary)]) -> String {
    let frame = Frame::fit(
        bands.iter().flat_map(|(_, b)| b.x.iter().copied()),
        bands
            .iter()
            .flat_map(|(_, b)| b.lower.iter().chain(&b.upper).chain(&b.truth).copied()),
    );
    let mut s = svg_open(title, &frame);
    for (i, (label, b)) in bands.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut order: Vec<usize> = (0..b.len()).collect();
        order.sort_by(|&p, &q| b.x[p].total_cmp(&b.x[q]));
        let upper = order.iter().map(|&k| (b.x[k], b.upper[k]));
        let lower = order.iter().rev().map(|&k| (b.x[k], b.lower[k]));
        let _ = writeln!(
            s,
            "<polygon class=\"band\" data-label=\"{}\" points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
            xml_escape(label),
            frame.points(upper.chain(lower))
        );
        let _ = writeln!(
            s,
            "<polyline class=\"mean\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            frame.points(order.iter().map(|&k| (b.x[k], b.mean[k])))
        );
        legend(&mut s, i, label, color);
    }
    if let Some((_, b)) = bands.first() {
        let mut order: Vec<usize> = (0..b.len()).collect();
        order.sort_by(|&p, &q| b.x[p].total_cmp(&b.x[q]));
        for &k in &order {
            let _ = writeln!(
                s,
                "<circle class=\"truth\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.8\" fill=\"black\"/>",
                frame.px(b.x[k]),
                frame.py(b.truth[k])
            );
        }
        legend(&mut s, bands.len(), "true", "black");
    }
    s.push_str("</svg>\n");
    s
}

/// Test-segment forecast traces of a window experiment against the orbit.
pub fn trace_svg(title: &str, report: &WindowReport) -> String {
    let t0 = report.split_index;
    let n = report.truth.len();
    let frame = Frame::fit(
        (t0..n).map(|t| t as f64),
        report.truth[t0..]
            .iter()
            .copied()
            .chain(report.runs.iter().flat_map(|r| r.predictions[t0..].iter().copied())),
    );
    let mut s = svg_open(title, &frame);
    let _ = writeln!(
        s,
        "<polyline class=\"truth\" points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>",
        frame.points((t0..n).map(|t| (t as f64, report.truth[t])))
    );
    legend(&mut s, 0, "true", "black");
    for (i, run) in report.runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            "<polyline class=\"model\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-dasharray=\"4 2\"/>",
            frame.points((t0..n).map(|t| (t as f64, run.predictions[t])))
        );
        legend(&mut s, i + 1, &format!("model {}", run.variant.number()), color);
    }
    s.push_str("</svg>\n");
    s
}
