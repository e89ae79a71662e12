//! Helpers for driving the `seisdiag` binary from tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_seisdiag")
}

/// Knobs for a small three-story run configuration.
pub struct Setup {
    pub seed: u64,
    pub scales: Vec<f64>,
    pub records_per_scale: usize,
    pub eta: Vec<f64>,
    pub stories: usize,
    pub budget: usize,
    pub init_points: usize,
    pub folds: usize,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            seed: 11,
            scales: vec![0.2, 1.5, 3.0],
            records_per_scale: 5,
            eta: vec![0.5, 1.0, 2.0],
            stories: 3,
            budget: 8,
            init_points: 4,
            folds: 3,
        }
    }
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

impl Setup {
    pub fn toml(&self) -> String {
        let s = self.stories;
        let stiff: Vec<f64> = (0..s).map(|i| 1.2e8 - 0.2e8 * i as f64).collect();
        format!(
            "seed = {seed}\n\
             [building]\nmasses = {m}\nstiffnesses = {k}\nyield_drifts = {y}\nheights = {h}\n\
             [ground_motion]\nduration = 10.0\n\
             [hazard]\nscales = {scales}\ns0 = 1.0\nrecords_per_scale = {r}\n\
             [features]\neta = {eta}\n\
             [costs]\nw1 = 12.0\nw2 = 5.0\nw3 = 0.05\n\
             [tuner]\nbudget = {b}\ninit_points = {ip}\nfolds = {f}\nacquisition_restarts = 8\n",
            seed = self.seed,
            m = list(&vec![1e5; s]),
            k = list(&stiff),
            y = list(&vec![0.004; s]),
            h = list(&vec![3.0; s]),
            scales = list(&self.scales),
            r = self.records_per_scale,
            eta = list(&self.eta),
            b = self.budget,
            ip = self.init_points,
            f = self.folds,
        )
    }

    /// Write the config into `dir` and return its path.
    pub fn write(&self, dir: &Path) -> PathBuf {
        let p = dir.join("run.toml");
        std::fs::write(&p, self.toml()).unwrap();
        p
    }
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("failed to start seisdiag")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "seisdiag {args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data lines of a CSV file with a `#` comment line and a header.
pub fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

pub const REFERENCE_SCORES: &str = "truth,NNN,DNN,DDN,DDD\n\
NNN,26.51,4.49,0.02,0\n\
DNN,1.38,7.64,0.38,0.02\n\
DDN,0,0.66,1.17,0.25\n\
DDD,0,0,0,0.16\n";
