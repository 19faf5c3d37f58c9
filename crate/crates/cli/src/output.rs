//! CSV and JSON emission.

use std::io::Write;
use std::path::PathBuf;

use aoi_path::experiments::{CompareRow, OracleCheck, SweepRow};
use aoi_path::tours::MultiTour;
use aoi_path::trajopt::RefinedTour;
use clap::ValueEnum;
use serde::Serialize;

use crate::{Failure, Outcome};

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Rows with a CSV rendering; the header may depend on the whole table.
pub trait Table: Serialize + Sized {
    fn header(rows: &[Self]) -> Vec<&'static str>;
    fn record(&self, header: &[&str]) -> Vec<String>;
}

fn tour_json(t: &MultiTour) -> String {
    serde_json::to_string(t).expect("tours always serialise")
}

impl Table for SweepRow {
    fn header(rows: &[Self]) -> Vec<&'static str> {
        let mut h = vec![
            "lambda",
            "avg_aoi_s",
            "energy_j",
            "n_cycles",
            "solver",
            "iterations",
            "runtime_ms",
        ];
        if rows.iter().any(|r| r.refined.is_some()) {
            h.extend(["refined_avg_aoi_s", "refined_energy_j"]);
        }
        h.push("tour");
        h
    }

    fn record(&self, header: &[&str]) -> Vec<String> {
        let mut r = vec![
            self.lambda.to_string(),
            self.avg_aoi_s.to_string(),
            self.energy_j.to_string(),
            self.n_cycles.to_string(),
            self.solver.to_string(),
            self.iterations.to_string(),
            format!("{:.3}", self.runtime_ms),
        ];
        if header.contains(&"refined_avg_aoi_s") {
            match &self.refined {
                Some(m) => r.extend([m.avg_aoi_s.to_string(), m.energy_j.to_string()]),
                None => r.extend([String::new(), String::new()]),
            }
        }
        r.push(tour_json(&self.tour));
        r
    }
}

impl Table for CompareRow {
    fn header(_: &[Self]) -> Vec<&'static str> {
        vec![
            "k",
            "mode",
            "variant",
            "avg_aoi_s",
            "energy_j",
            "n_cycles",
            "tour",
        ]
    }

    fn record(&self, _: &[&str]) -> Vec<String> {
        vec![
            self.k.to_string(),
            self.mode.to_string(),
            self.variant.to_string(),
            self.avg_aoi_s.to_string(),
            self.energy_j.to_string(),
            self.n_cycles.to_string(),
            tour_json(&self.tour),
        ]
    }
}

impl Table for OracleCheck {
    fn header(_: &[Self]) -> Vec<&'static str> {
        vec![
            "k",
            "seed",
            "lambda",
            "oracle",
            "monolithic",
            "benders",
            "max_error",
            "benders_iterations",
            "runtime_ms",
        ]
    }

    fn record(&self, _: &[&str]) -> Vec<String> {
        vec![
            self.k.to_string(),
            self.seed.map_or(String::new(), |s| s.to_string()),
            self.lambda.to_string(),
            self.oracle.to_string(),
            self.monolithic.to_string(),
            self.benders.to_string(),
            format!("{:e}", self.max_error()),
            self.benders_iterations.to_string(),
            format!("{:.3}", self.runtime_ms),
        ]
    }
}

fn csv_error(e: csv::Error) -> Failure {
    Failure::Config(format!("writing csv: {e}"))
}

fn csv_table<T: Table>(rows: &[T]) -> Result<Vec<u8>, Failure> {
    let header = T::header(rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r.record(&header)).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Failure::Config(e.to_string()))
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Config(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn emit<T: Table>(out: &Option<PathBuf>, format: Format, rows: &[T]) -> Outcome {
    let bytes = match format {
        Format::Csv => csv_table(rows)?,
        Format::Json => json(rows)?,
    };
    write(out, &bytes)
}

/// JSON gives the full trajectories; CSV one row per sensor.
pub fn emit_refined(out: &Option<PathBuf>, format: Format, refined: &RefinedTour) -> Outcome {
    let bytes = match format {
        Format::Json => json(refined)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["sn", "aoi_s", "time_s", "energy_j", "bits", "n_waypoints"])
                .map_err(csv_error)?;
            for t in &refined.traversals {
                w.write_record([
                    t.sn.to_string(),
                    refined.aoi_per_sn[t.sn - 1].to_string(),
                    t.time.to_string(),
                    t.energy.to_string(),
                    t.bits.to_string(),
                    t.waypoints.len().to_string(),
                ])
                .map_err(csv_error)?;
            }
            w.into_inner().map_err(|e| Failure::Config(e.to_string()))?
        }
    };
    write(out, &bytes)
}

pub fn write(out: &Option<PathBuf>, bytes: &[u8]) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}
