//! Per-operation gradient-check scenarios: every differentiable tensor op,
//! exercised on seeded inputs and compared against central finite
//! differences.

use inpcc::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fd::{central_diff, max_rel_err};

pub struct OpScenario {
    pub name: &'static str,
    /// Leaf tensors: shape and initial data. All become tracked parameters.
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    /// Maps the leaves to a scalar loss.
    pub build: fn(&[Tensor]) -> Tensor,
}

/// Deterministic non-uniform weighting that turns any tensor into a scalar,
/// so gradients of structure ops are not just constant fields.
fn spread(t: &Tensor) -> Tensor {
    let w: Vec<f64> = (0..t.numel())
        .map(|i| ((i as f64) * 0.7311 + 0.2).sin() + 1.3)
        .collect();
    let wt = Tensor::new(t.shape(), w).unwrap();
    t.hadamard(&wt).unwrap().sum()
}

fn vals(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero (for kinked ops: abs, relu).
fn vals_off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.2..1.5)
        })
        .collect()
}

pub fn scenarios() -> Vec<OpScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(417);
    let mut list: Vec<OpScenario> = Vec::new();

    let a23 = vals(&mut rng, 6, -1.5, 1.5);
    let b23 = vals(&mut rng, 6, -1.5, 1.5);
    list.push(OpScenario {
        name: "add",
        inputs: vec![(vec![2, 3], a23.clone()), (vec![2, 3], b23.clone())],
        build: |t| spread(&t[0].add(&t[1]).unwrap()),
    });
    list.push(OpScenario {
        name: "sub",
        inputs: vec![(vec![2, 3], a23.clone()), (vec![2, 3], b23.clone())],
        build: |t| spread(&t[0].sub(&t[1]).unwrap()),
    });
    list.push(OpScenario {
        name: "hadamard",
        inputs: vec![(vec![2, 3], a23.clone()), (vec![2, 3], b23.clone())],
        build: |t| spread(&t[0].hadamard(&t[1]).unwrap()),
    });
    list.push(OpScenario {
        name: "div",
        inputs: vec![
            (vec![2, 3], a23.clone()),
            (vec![2, 3], vals(&mut rng, 6, 0.5, 1.5)),
        ],
        build: |t| spread(&t[0].div(&t[1]).unwrap()),
    });

    // Keep the two operands separated so min/max stay away from their kinks.
    let base = vals(&mut rng, 6, -1.0, 1.0);
    let apart: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(i, x)| x + if i % 2 == 0 { 0.4 } else { -0.4 })
        .collect();
    list.push(OpScenario {
        name: "minimum",
        inputs: vec![(vec![2, 3], base.clone()), (vec![2, 3], apart.clone())],
        build: |t| spread(&t[0].minimum(&t[1]).unwrap()),
    });
    list.push(OpScenario {
        name: "maximum",
        inputs: vec![(vec![2, 3], base.clone()), (vec![2, 3], apart.clone())],
        build: |t| spread(&t[0].maximum(&t[1]).unwrap()),
    });

    list.push(OpScenario {
        name: "scale",
        inputs: vec![(vec![2, 2], vals(&mut rng, 4, -1.5, 1.5))],
        build: |t| spread(&t[0].scale(1.7)),
    });
    list.push(OpScenario {
        name: "add_scalar",
        inputs: vec![(vec![2, 2], vals(&mut rng, 4, -1.5, 1.5))],
        build: |t| spread(&t[0].add_scalar(-0.3)),
    });
    list.push(OpScenario {
        name: "scale_by",
        inputs: vec![
            (vec![2, 2], vals(&mut rng, 4, -1.5, 1.5)),
            (vec![1], vals(&mut rng, 1, 0.5, 1.5)),
        ],
        build: |t| spread(&t[0].scale_by(&t[1]).unwrap()),
    });
    list.push(OpScenario {
        name: "div_by",
        inputs: vec![
            (vec![2, 2], vals(&mut rng, 4, -1.5, 1.5)),
            (vec![1], vals(&mut rng, 1, 0.7, 1.3)),
        ],
        build: |t| spread(&t[0].div_by(&t[1]).unwrap()),
    });

    list.push(OpScenario {
        name: "abs",
        inputs: vec![(vec![2, 3], vals_off_zero(&mut rng, 6))],
        build: |t| spread(&t[0].abs()),
    });
    list.push(OpScenario {
        name: "relu",
        inputs: vec![(vec![2, 3], vals_off_zero(&mut rng, 6))],
        build: |t| spread(&t[0].relu()),
    });
    list.push(OpScenario {
        name: "sigmoid",
        inputs: vec![(vec![2, 3], vals(&mut rng, 6, -2.0, 2.0))],
        build: |t| spread(&t[0].sigmoid()),
    });
    list.push(OpScenario {
        name: "log",
        inputs: vec![(vec![2, 3], vals(&mut rng, 6, 0.2, 2.0))],
        build: |t| spread(&t[0].log()),
    });
    list.push(OpScenario {
        name: "exp",
        inputs: vec![(vec![2, 3], vals(&mut rng, 6, -1.0, 1.0))],
        build: |t| spread(&t[0].exp()),
    });
    list.push(OpScenario {
        name: "gelu",
        inputs: vec![(vec![2, 3], vals(&mut rng, 6, -2.0, 2.0))],
        build: |t| spread(&t[0].gelu()),
    });

    list.push(OpScenario {
        name: "matmul",
        inputs: vec![
            (vec![4, 5], vals(&mut rng, 20, -1.5, 1.5)),
            (vec![5, 3], vals(&mut rng, 15, -1.5, 1.5)),
        ],
        build: |t| t[0].matmul(&t[1]).unwrap().sum(),
    });
    list.push(OpScenario {
        name: "vecmat",
        inputs: vec![
            (vec![4], vals(&mut rng, 4, -1.5, 1.5)),
            (vec![4, 3], vals(&mut rng, 12, -1.5, 1.5)),
        ],
        build: |t| spread(&t[0].vecmat(&t[1]).unwrap()),
    });
    list.push(OpScenario {
        name: "outer",
        inputs: vec![
            (vec![3], vals(&mut rng, 3, -1.5, 1.5)),
            (vec![4], vals(&mut rng, 4, -1.5, 1.5)),
        ],
        build: |t| spread(&t[0].outer(&t[1]).unwrap()),
    });
    list.push(OpScenario {
        name: "linear_vec",
        inputs: vec![
            (vec![4], vals(&mut rng, 4, -1.5, 1.5)),
            (vec![4, 3], vals(&mut rng, 12, -1.5, 1.5)),
            (vec![3], vals(&mut rng, 3, -1.5, 1.5)),
        ],
        build: |t| spread(&t[0].linear(&t[1], &t[2]).unwrap()),
    });
    list.push(OpScenario {
        name: "linear_mat",
        inputs: vec![
            (vec![2, 4], vals(&mut rng, 8, -1.5, 1.5)),
            (vec![4, 3], vals(&mut rng, 12, -1.5, 1.5)),
            (vec![3], vals(&mut rng, 3, -1.5, 1.5)),
        ],
        build: |t| spread(&t[0].linear(&t[1], &t[2]).unwrap()),
    });
    list.push(OpScenario {
        name: "transpose",
        inputs: vec![(vec![3, 2], vals(&mut rng, 6, -1.5, 1.5))],
        build: |t| spread(&t[0].transpose().unwrap()),
    });
    list.push(OpScenario {
        name: "concat_rows",
        inputs: vec![
            (vec![2, 3], vals(&mut rng, 6, -1.5, 1.5)),
            (vec![1, 3], vals(&mut rng, 3, -1.5, 1.5)),
        ],
        build: |t| spread(&Tensor::concat_rows(&[t[0].clone(), t[1].clone()]).unwrap()),
    });
    list.push(OpScenario {
        name: "concat_cols",
        inputs: vec![
            (vec![2, 2], vals(&mut rng, 4, -1.5, 1.5)),
            (vec![2, 3], vals(&mut rng, 6, -1.5, 1.5)),
        ],
        build: |t| spread(&Tensor::concat_cols(&[t[0].clone(), t[1].clone()]).unwrap()),
    });
    list.push(OpScenario {
        name: "mean_rows",
        inputs: vec![(vec![3, 4], vals(&mut rng, 12, -1.5, 1.5))],
        build: |t| spread(&t[0].mean_rows().unwrap()),
    });
    list.push(OpScenario {
        name: "sum",
        inputs: vec![(vec![2, 3], vals(&mut rng, 6, -1.5, 1.5))],
        build: |t| t[0].sum(),
    });
    list.push(OpScenario {
        name: "mean",
        inputs: vec![(vec![2, 3], vals(&mut rng, 6, -1.5, 1.5))],
        build: |t| t[0].mean(),
    });
    list.push(OpScenario {
        name: "gather_rows",
        inputs: vec![(vec![4, 3], vals(&mut rng, 12, -1.5, 1.5))],
        build: |t| spread(&t[0].gather_rows(&[2, 0, 2]).unwrap()),
    });
    list.push(OpScenario {
        name: "slice_cols",
        inputs: vec![(vec![3, 5], vals(&mut rng, 15, -1.5, 1.5))],
        build: |t| spread(&t[0].slice_cols(1, 4).unwrap()),
    });
    list.push(OpScenario {
        name: "add_row",
        inputs: vec![
            (vec![3, 4], vals(&mut rng, 12, -1.5, 1.5)),
            (vec![4], vals(&mut rng, 4, -1.5, 1.5)),
        ],
        build: |t| spread(&t[0].add_row(&t[1]).unwrap()),
    });
    list.push(OpScenario {
        name: "softmax",
        inputs: vec![(vec![5], vals(&mut rng, 5, -1.5, 1.5))],
        build: |t| spread(&t[0].softmax(0.7).unwrap()),
    });
    list.push(OpScenario {
        name: "softmax_rows",
        inputs: vec![(vec![3, 4], vals(&mut rng, 12, -1.5, 1.5))],
        build: |t| spread(&t[0].softmax_rows().unwrap()),
    });
    list.push(OpScenario {
        name: "layer_norm",
        inputs: vec![
            (vec![3, 5], vals(&mut rng, 15, -1.5, 1.5)),
            (vec![5], vals(&mut rng, 5, 0.5, 1.5)),
            (vec![5], vals(&mut rng, 5, -0.5, 0.5)),
        ],
        build: |t| spread(&t[0].layer_norm(&t[1], &t[2]).unwrap()),
    });
    list.push(OpScenario {
        name: "l2_normalize",
        inputs: vec![(vec![4], vals_off_zero(&mut rng, 4))],
        build: |t| spread(&t[0].l2_normalize().unwrap()),
    });
    list.push(OpScenario {
        name: "cosine_sim",
        inputs: vec![
            (vec![4], vals_off_zero(&mut rng, 4)),
            (vec![4], vals_off_zero(&mut rng, 4)),
        ],
        build: |t| t[0].cosine_sim(&t[1]).unwrap(),
    });
    list.push(OpScenario {
        name: "reshape",
        inputs: vec![(vec![2, 6], vals(&mut rng, 12, -1.5, 1.5))],
        build: |t| spread(&t[0].reshape(&[3, 4]).unwrap()),
    });

    list
}

/// Analytic-vs-numeric max relative error for one scenario.
pub fn check(s: &OpScenario) -> f64 {
    let params: Vec<Tensor> = s
        .inputs
        .iter()
        .map(|(shape, data)| Tensor::param(shape, data.clone()).unwrap())
        .collect();
    let loss = (s.build)(&params);
    loss.backward().unwrap();
    let analytic: Vec<f64> = params
        .iter()
        .flat_map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let flat0: Vec<f64> = s.inputs.iter().flat_map(|(_, d)| d.clone()).collect();
    let f = |x: &[f64]| -> f64 {
        let mut offset = 0;
        let leaves: Vec<Tensor> = s
            .inputs
            .iter()
            .map(|(shape, _)| {
                let n: usize = shape.iter().product();
                let t = Tensor::new(shape, x[offset..offset + n].to_vec()).unwrap();
                offset += n;
                t
            })
            .collect();
        (s.build)(&leaves).value()
    };
    let numeric = central_diff(&f, &flat0, 1e-5);
    max_rel_err(&analytic, &numeric, 1e-8)
}

/// Runs every scenario; returns (op name, max relative error).
pub fn run_all() -> Vec<(&'static str, f64)> {
    scenarios().iter().map(|s| (s.name, check(s))).collect()
}
