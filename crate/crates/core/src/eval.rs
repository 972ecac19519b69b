//! Leave-one-domain-out experiments, ablation grids, reports and feature
//! export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{leave_one_domain_out, DomainDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::Model;
use crate::trainer::{train_with, StrategyMode, TrainConfig};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(model: &Model, rows: &[f64], labels: &[usize], exec: Exec) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Contract("accuracy of an empty set is undefined".into()));
    }
    let logits = model.predict(rows, exec)?;
    let c = model.num_classes();
    let hits = logits
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn evaluate(model: &Model, test: &DomainDataset) -> Result<f64> {
    accuracy(model, test.x(), test.labels(), Exec::auto())
}

/// One (alpha, m, q_max) override of an ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub m_percent: f64,
    pub q_max: f64,
}

impl GridPoint {
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            m_percent: self.m_percent,
            q_max: self.q_max,
            ..cfg.clone()
        }
    }

    pub fn label(&self) -> String {
        format!("alpha={} m={} q_max={}", self.alpha, self.m_percent, self.q_max)
    }
}

/// Accuracies of one (target, method) cell across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub target: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridPoint>,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Accuracy on rows held back from the source domains.
    pub heldin_accuracies: Vec<f64>,
    pub heldin_mean: f64,
}

/// Per-method average over target domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FooterRow {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridPoint>,
    pub mean: f64,
    pub heldin_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub targets: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub footer: Vec<FooterRow>,
    pub fingerprint: String,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// SHA-256 over the training config, the dataset metadata, and the methods
/// and seeds of a run.
pub fn fingerprint(cfg: &TrainConfig, ds: &DomainDataset, methods: &[String], seeds: &[u64]) -> String {
    let meta = serde_json::json!({
        "config": cfg,
        "input_shape": ds.input_shape(),
        "num_classes": ds.num_classes(),
        "domains": ds.domain_names(),
        "rows": ds.len(),
        "methods": methods,
        "seeds": seeds,
    });
    let mut h = Sha256::new();
    h.update(meta.to_string().as_bytes());
    for v in ds.x() {
        h.update(v.to_bits().to_le_bytes());
    }
    for &y in ds.labels() {
        h.update((y as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// A method column: a strategy mode plus an optional grid override.
#[derive(Debug, Clone)]
struct Method {
    label: String,
    grid: Option<GridPoint>,
    cfg: TrainConfig,
}

struct CellResult {
    target: f64,
    heldin: f64,
}

fn run_cell(ds: &DomainDataset, target: &str, cfg: &TrainConfig, exec: Exec) -> Result<CellResult> {
    let split = leave_one_domain_out(ds, target)?;
    let (train_view, val) = split.train.split_holdout(cfg.holdout_fraction, cfg.seed)?;
    let (model, _) = train_with(&train_view, cfg, exec)?;
    let target_acc = accuracy(&model, split.test.x(), split.test.labels(), exec)?;
    let heldin = if val.is_empty() {
        f64::NAN
    } else {
        accuracy(&model, val.x(), val.labels(), exec)?
    };
    Ok(CellResult {
        target: target_acc,
        heldin,
    })
}

fn run_grid(
    ds: &DomainDataset,
    methods: &[Method],
    seeds: &[u64],
    fingerprint: String,
    exec: Exec,
) -> Result<RunReport> {
    if ds.domain_names().len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-domain-out needs at least 2 domains, dataset has {}",
            ds.domain_names().len()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("method list is empty".into()));
    }
    for m in methods {
        m.cfg.validate()?;
    }
    let targets = ds.domain_names().to_vec();
    let mut cells = Vec::new();
    for target in &targets {
        for (mi, _) in methods.iter().enumerate() {
            for &seed in seeds {
                cells.push((target.clone(), mi, seed));
            }
        }
    }
    let results = exec.map(cells.clone(), |(target, mi, seed)| {
        let cfg = TrainConfig {
            seed,
            ..methods[mi].cfg.clone()
        };
        run_cell(ds, &target, &cfg, exec).map_err(|e| Error::Cell {
            target: target.clone(),
            method: methods[mi].label.clone(),
            seed,
            source: Box::new(e),
        })
    });
    let mut rows = Vec::new();
    let mut results = results.into_iter();
    for target in &targets {
        for m in methods {
            let mut accs = Vec::with_capacity(seeds.len());
            let mut held = Vec::with_capacity(seeds.len());
            for _ in seeds {
                let r = results.next().expect("one result per cell")?;
                accs.push(r.target);
                held.push(r.heldin);
            }
            rows.push(ReportRow {
                target: target.clone(),
                method: m.label.clone(),
                grid: m.grid,
                seeds: seeds.to_vec(),
                mean: mean(&accs),
                heldin_mean: mean(&held),
                accuracies: accs,
                heldin_accuracies: held,
            });
        }
    }
    let footer = methods
        .iter()
        .map(|m| {
            let mine: Vec<&ReportRow> = rows.iter().filter(|r| r.method == m.label).collect();
            FooterRow {
                method: m.label.clone(),
                grid: m.grid,
                mean: mean(&mine.iter().map(|r| r.mean).collect::<Vec<_>>()),
                heldin_mean: mean(&mine.iter().map(|r| r.heldin_mean).collect::<Vec<_>>()),
            }
        })
        .collect();
    let report = RunReport {
        targets,
        rows,
        footer,
        fingerprint,
    };
    report.verify()?;
    Ok(report)
}

pub fn lodo_experiment(
    ds: &DomainDataset,
    cfg: &TrainConfig,
    methods: &[StrategyMode],
    seeds: &[u64],
) -> Result<RunReport> {
    lodo_experiment_with(ds, cfg, methods, seeds, Exec::auto())
}

pub fn lodo_experiment_with(
    ds: &DomainDataset,
    cfg: &TrainConfig,
    methods: &[StrategyMode],
    seeds: &[u64],
    exec: Exec,
) -> Result<RunReport> {
    let cols: Vec<Method> = methods
        .iter()
        .map(|&mode| Method {
            label: mode.to_string(),
            grid: None,
            cfg: TrainConfig {
                strategy_mode: mode,
                ..cfg.clone()
            },
        })
        .collect();
    let labels: Vec<String> = cols.iter().map(|m| m.label.clone()).collect();
    let fp = fingerprint(cfg, ds, &labels, seeds);
    run_grid(ds, &cols, seeds, fp, exec)
}

/// One report row group per grid point, each trained with `base`'s strategy
/// mode and the point's (alpha, m, q_max).
pub fn ablation_grid(
    ds: &DomainDataset,
    base: &TrainConfig,
    grid: &[GridPoint],
    seeds: &[u64],
) -> Result<RunReport> {
    ablation_grid_with(ds, base, grid, seeds, Exec::auto())
}

pub fn ablation_grid_with(
    ds: &DomainDataset,
    base: &TrainConfig,
    grid: &[GridPoint],
    seeds: &[u64],
    exec: Exec,
) -> Result<RunReport> {
    if grid.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let cols: Vec<Method> = grid
        .iter()
        .enumerate()
        .map(|(i, g)| Method {
            label: format!("#{i} {}", g.label()),
            grid: Some(*g),
            cfg: g.apply(base),
        })
        .collect();
    let labels: Vec<String> = cols.iter().map(|m| m.label.clone()).collect();
    let fp = fingerprint(base, ds, &labels, seeds);
    run_grid(ds, &cols, seeds, fp, exec)
}

fn dash(v: f64) -> String {
    if v == 0.0 {
        "-".to_string()
    } else {
        format!("{v}")
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl RunReport {
    /// Recomputes every mean from its per-seed values.
    pub fn verify(&self) -> Result<()> {
        let seeds = self.rows.first().map_or(0, |r| r.accuracies.len());
        for r in &self.rows {
            if r.accuracies.len() != seeds || r.heldin_accuracies.len() != seeds {
                return Err(Error::Contract(format!(
                    "cell ({}, {}) has {} seeds, expected {seeds}",
                    r.target,
                    r.method,
                    r.accuracies.len()
                )));
            }
            if (mean(&r.accuracies) - r.mean).abs() > 1e-12 {
                return Err(Error::Contract(format!(
                    "cell ({}, {}) mean {} does not match its seeds",
                    r.target, r.method, r.mean
                )));
            }
        }
        Ok(())
    }

    pub fn row(&self, target: &str, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.target == target && r.method == method)
    }

    pub fn footer_for(&self, method: &str) -> Option<&FooterRow> {
        self.footer.iter().find(|f| f.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RunReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Aligned text table: one line per method, one column per target
    /// domain, then the average and the held-in accuracy (percent).
    pub fn to_text(&self) -> String {
        let ablation = self.footer.iter().any(|f| f.grid.is_some());
        let mut header: Vec<String> = Vec::new();
        if ablation {
            header.extend(["alpha", "m", "q_max"].map(String::from));
        } else {
            header.push("method".into());
        }
        header.extend(self.targets.iter().cloned());
        header.push("avg".into());
        header.push("held-in".into());
        let mut table = vec![header];
        for f in &self.footer {
            let mut line = Vec::new();
            match f.grid {
                Some(g) if ablation => {
                    line.extend([dash(g.alpha), dash(g.m_percent), dash(g.q_max)]);
                }
                _ => line.push(f.method.clone()),
            }
            for t in &self.targets {
                line.push(self.row(t, &f.method).map_or("?".into(), |r| pct(r.mean)));
            }
            line.push(pct(f.mean));
            line.push(pct(f.heldin_mean));
            table.push(line);
        }
        let cols = table[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in table.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| {
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (cols - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        let _ = writeln!(out, "fingerprint {}", self.fingerprint);
        out
    }
}

/// Writes `domain,label,f0..` rows with penultimate-layer activations.
pub fn export_features(model: &Model, held: &DomainDataset, path: &Path) -> Result<()> {
    let feats = model.features(held.x(), Exec::auto())?;
    let width = model.feature_width();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let wrap = |e: csv::Error| Error::io(path, e.into());
    let mut header = vec!["domain".to_string(), "label".to_string()];
    header.extend((0..width).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(wrap)?;
    for i in 0..held.len() {
        let mut rec = vec![held.domain_of(i).to_string(), held.labels()[i].to_string()];
        rec.extend(feats[i * width..(i + 1) * width].iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
