//! Finite-difference checks for every primitive operation.

use rand::Rng;

use crate::fd::{central_difference, max_relative_error};
use crate::graph::{Graph, OpKind, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;

/// One representative instance of every differentiable primitive.
pub fn primitive_kinds() -> Vec<OpKind> {
    vec![
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale(-1.7),
        OpKind::AddScalar(0.3),
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SumLast,
        OpKind::Square,
        OpKind::Elu,
        OpKind::Tanh,
        OpKind::Softplus,
        OpKind::Softmax { tau: 0.7 },
        OpKind::Exp,
        OpKind::Log,
        OpKind::Concat,
        OpKind::Slice { start: 1, len: 2 },
        OpKind::SliceRows { start: 1, len: 2 },
        OpKind::RepeatRows(3),
        OpKind::Reshape(vec![4, 3]),
    ]
}

fn away_from_zero<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Input shapes for an op kind (all inputs differentiable).
fn input_shapes(kind: &OpKind) -> Vec<Vec<usize>> {
    match kind {
        OpKind::MatMul => vec![vec![3, 4], vec![4, 2]],
        OpKind::Add | OpKind::Sub => vec![vec![3, 4], vec![4]],
        OpKind::Mul => vec![vec![3, 4], vec![3, 1]],
        OpKind::Concat => vec![vec![3, 2], vec![3, 3]],
        _ => vec![vec![3, 4]],
    }
}

/// Max relative error between `backward` and central differences for one
/// op on random inputs, with a random linear read-out to a scalar.
pub fn check_op<R: Rng + ?Sized>(kind: &OpKind, rng: &mut R) -> f64 {
    let shapes = input_shapes(kind);
    let inputs: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            match kind {
                OpKind::Log => (0..n).map(|_| rng.gen_range(0.2..2.0)).collect(),
                _ => away_from_zero(rng, n),
            }
        })
        .collect();
    let eval = |vals: &[Vec<f64>], weights: Option<&[f64]>| -> (Graph, Vec<Var>, Var, usize) {
        let mut g = Graph::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(vals)
            .map(|(s, v)| g.leaf(&Tensor::new(s.clone(), v.clone()).unwrap()))
            .collect();
        let y = g.apply(kind, &vars).expect("valid op instance");
        let n = g.value(y).len();
        let out = match weights {
            Some(w) => {
                let w = g.constant_from(g.shape(y).to_vec(), w.to_vec()).unwrap();
                let p = g.mul(y, w).unwrap();
                g.sum(p)
            }
            None => g.sum(y),
        };
        (g, vars, out, n)
    };
    let (_, _, _, out_len) = eval(&inputs, None);
    let weights: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (g, vars, root, _) = eval(&inputs, Some(&weights));
    let grads = g.backward(root).unwrap();

    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let numeric = central_difference(&inputs[i], FD_STEP, |x| {
            let mut vals = inputs.clone();
            vals[i] = x.to_vec();
            let (g, _, root, _) = eval(&vals, Some(&weights));
            g.item(root)
        });
        worst = worst.max(max_relative_error(&analytic, &numeric, REL_FLOOR));
    }
    worst
}
