#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netdid::graph::InterferenceMatrix;
use netdid::io::{write_covariates, write_interference, write_panel, write_treatments, Panel};

pub fn netdid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netdid"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn error_code(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("{stderr}"));
    v["error"]["code"].as_str().unwrap().to_string()
}

pub struct Fixture {
    pub panel: PathBuf,
    pub covariates: PathBuf,
    pub treatments: PathBuf,
    pub interference: PathBuf,
    pub config: PathBuf,
}

impl Fixture {
    pub fn args(&self) -> Vec<String> {
        [
            ("--panel", &self.panel),
            ("--covariates", &self.covariates),
            ("--treatments", &self.treatments),
            ("--interference", &self.interference),
            ("--config", &self.config),
        ]
        .iter()
        .flat_map(|(f, p)| [f.to_string(), p.display().to_string()])
        .collect()
    }
}

/// Four outcome units, each affected only by its own intervention unit.
/// Units 0 and 1 are treated in period 1; outcome changes are (3, 5, 1, 1).
/// Constant propensities 0.5 and a zero outcome regression turn the
/// estimator into a difference of group means.
pub fn hand_fixture(dir: &Path, treated: [bool; 4]) -> Fixture {
    let f = Fixture {
        panel: dir.join("panel.csv"),
        covariates: dir.join("covariates.csv"),
        treatments: dir.join("treatments.csv"),
        interference: dir.join("w.csv"),
        config: dir.join("run.cfg"),
    };
    let dy = [3.0, 5.0, 1.0, 1.0];
    write_panel(
        &f.panel,
        &Panel {
            y: dy.iter().map(|&d| vec![10.0, 10.0 + d]).collect(),
        },
    )
    .unwrap();
    write_covariates(&f.covariates, &[vec![0.1], vec![0.2], vec![0.3], vec![0.4]]).unwrap();
    write_treatments(&f.treatments, &[vec![false; 4], treated.to_vec()]).unwrap();
    write_interference(&f.interference, &InterferenceMatrix::identity(4)).unwrap();
    std::fs::write(
        &f.config,
        "nuisance.pi = constant:0.5\nnuisance.mu = zero\nnuisance.p1 = empirical\n",
    )
    .unwrap();
    f
}
