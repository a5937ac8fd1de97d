#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use memrex::autodiff::{Graph, Var};
use memrex::config::RunConfig;
use memrex::corpus::{parse_docred, Document, TypeVocabulary};
use memrex::encoder::TokenVocab;
use memrex::params::ParamStore;
use memrex::pipeline::Model;
use memrex::tensor::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn tiny_corpus() -> (Vec<Document>, TypeVocabulary) {
    parse_docred(memrex::TINY_CORPUS, None).expect("bundled corpus parses")
}

pub fn tiny_config() -> RunConfig {
    RunConfig::from_flat_json(memrex::TINY_CONFIG).expect("bundled config parses")
}

pub fn tiny_model(cfg: &RunConfig) -> (Model, Vec<Document>) {
    let (docs, types) = tiny_corpus();
    let tokens = TokenVocab::build(&docs, cfg.encoder.vocab_size);
    (cfg.build_model(types, tokens).unwrap(), docs)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Largest violation of `|analytic - numeric| <= rel * max(|analytic|, |numeric|) + abs`
/// over every scalar of the named parameters, using central differences.
pub struct GradCheck {
    pub worst_excess: f64,
    pub worst_param: String,
    pub checked: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst_excess <= 0.0
    }
}

pub fn finite_difference_check(
    params: &ParamStore,
    names: &[&str],
    loss: &dyn Fn(&mut Graph) -> Var,
    step: f64,
    rel: f64,
    abs: f64,
) -> GradCheck {
    let analytic: BTreeMap<String, Matrix> = {
        let mut g = Graph::new(params);
        let out = loss(&mut g);
        let grads = g.backward(out);
        g.param_gradients(&grads)
    };
    let eval = |p: &ParamStore| {
        let mut g = Graph::new(p);
        let out = loss(&mut g);
        g.scalar(out)
    };
    let mut result = GradCheck {
        worst_excess: f64::NEG_INFINITY,
        worst_param: String::new(),
        checked: 0,
    };
    let mut probe = params.clone();
    for &name in names {
        let len = params.get(name).expect("parameter exists").len();
        for i in 0..len {
            let original = params.get(name).unwrap().as_slice()[i];
            probe.get_mut(name).unwrap().as_mut_slice()[i] = original + step;
            let up = eval(&probe);
            probe.get_mut(name).unwrap().as_mut_slice()[i] = original - step;
            let down = eval(&probe);
            probe.get_mut(name).unwrap().as_mut_slice()[i] = original;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[name].as_slice()[i];
            let excess = (a - numeric).abs() - (rel * a.abs().max(numeric.abs()) + abs);
            if excess > result.worst_excess {
                result.worst_excess = excess;
                result.worst_param = format!("{name}[{i}] analytic {a:.6e} numeric {numeric:.6e}");
            }
            result.checked += 1;
        }
    }
    result
}
