#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use fdcert::model::{load_model, FdModel, LoopModel, Model};
use fdcert::numerics::{Matrix, SymMatrix};
use fdcert::synthesis::{synthesize, synthesize_loop, CertificateBundle, LoopBundle, SynthOptions};
use proptest::prelude::*;

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

pub fn heli() -> &'static (FdModel, CertificateBundle) {
    static CELL: OnceLock<(FdModel, CertificateBundle)> = OnceLock::new();
    CELL.get_or_init(|| {
        let Model::Detector(m) = load_model(&models_dir().join("heli3dof.toml")).unwrap() else {
            panic!("heli3dof is a detector model");
        };
        let b = synthesize(&m, &SynthOptions::default()).unwrap();
        (m, b)
    })
}

pub fn scalar() -> &'static (LoopModel, LoopBundle) {
    static CELL: OnceLock<(LoopModel, LoopBundle)> = OnceLock::new();
    CELL.get_or_init(|| {
        let Model::Loop(m) = load_model(&models_dir().join("scalar_loop.toml")).unwrap() else {
            panic!("scalar_loop is a loop model");
        };
        let b = synthesize_loop(&m).unwrap();
        (m, b)
    })
}

pub fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-range..range, rows * cols)
        .prop_map(move |d| Matrix::from_row_major(rows, cols, d).unwrap())
}

pub fn square(max_n: usize, range: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_n).prop_flat_map(move |n| matrix(n, n, range))
}

pub fn symmetric(max_n: usize, range: f64) -> impl Strategy<Value = SymMatrix> {
    square(max_n, range).prop_map(|m| SymMatrix::from_symmetric_part(&m))
}

/// `G Gᵀ + shift I`.
pub fn spd(max_n: usize, shift: f64) -> impl Strategy<Value = SymMatrix> {
    square(max_n, 3.0)
        .prop_map(move |g| SymMatrix::from_symmetric_part(&(&g * &g.transpose())).shift(shift))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
