//! Finite-difference gradient checking. Analytic gradients from the
//! reverse pass are compared against 64-bit central differences,
//! rebuilding the graph for every probe so any op can be checked,
//! including seeded dropout (the mask depends only on graph structure,
//! which perturbation does not change).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Graph, NodeId, Tensor};

pub trait LossBuilder: Fn(&mut Graph<f64>, &BTreeMap<String, Tensor<f64>>) -> Result<NodeId> {}
impl<F: Fn(&mut Graph<f64>, &BTreeMap<String, Tensor<f64>>) -> Result<NodeId>> LossBuilder for F {}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < FD_TOLERANCE
    }
}

fn make_graph(train_seed: Option<u64>) -> Graph<f64> {
    match train_seed {
        Some(s) => Graph::train(s),
        None => Graph::new(),
    }
}

fn eval(
    params: &BTreeMap<String, Tensor<f64>>,
    build: &impl LossBuilder,
    train_seed: Option<u64>,
) -> Result<f64> {
    let mut g = make_graph(train_seed);
    let loss = build(&mut g, params)?;
    Ok(g.value(loss).data()[0])
}

/// Probe up to `coords_per_param` evenly spaced coordinates of every
/// parameter (0 = all coordinates) with central differences at `FD_STEP`.
/// relerr = |fd - an| / max(|fd|, |an|), treated as 0 when both are tiny.
pub fn check_gradients(
    params: &BTreeMap<String, Tensor<f64>>,
    build: &impl LossBuilder,
    train_seed: Option<u64>,
    coords_per_param: usize,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut g = make_graph(train_seed);
        let loss = build(&mut g, params)?;
        g.backward(loss)?.into_params()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        coords_checked: 0,
    };
    for (name, tensor) in params {
        let numel = tensor.numel();
        let coords: Vec<usize> = if coords_per_param == 0 || coords_per_param >= numel {
            (0..numel).collect()
        } else {
            let mut v: Vec<usize> = (0..coords_per_param)
                .map(|k| k * (numel - 1) / (coords_per_param - 1).max(1))
                .collect();
            v.dedup();
            v
        };
        let an_tensor = analytic
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tensor.shape()));
        for &i in &coords {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += FD_STEP;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= FD_STEP;
            let fd = (eval(&plus, build, train_seed)? - eval(&minus, build, train_seed)?)
                / (2.0 * FD_STEP);
            let an = an_tensor.data()[i];
            let denom = fd.abs().max(an.abs());
            let rel = if denom > 1e-8 { (fd - an).abs() / denom } else { 0.0 };
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{i}]: fd={fd:.3e} analytic={an:.3e}");
            }
        }
    }
    Ok(report)
}

/// Pseudo-random test tensor with entries bounded away from zero so ReLU
/// and |.| kinks are not straddled by the probe step.
pub fn test_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel)
        .map(|_| {
            let x: f64 = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Named single-op and composite-op gradient checks covering the whole
/// forward op set.
pub fn op_checks() -> Vec<(&'static str, GradCheckReport)> {
    let mut out = Vec::new();
    let mut run =
        |name: &'static str,
         params: BTreeMap<String, Tensor<f64>>,
         train_seed: Option<u64>,
         build: Box<dyn Fn(&mut Graph<f64>, &BTreeMap<String, Tensor<f64>>) -> Result<NodeId>>| {
            let report =
                check_gradients(&params, &build, train_seed, 0).expect("gradcheck build failed");
            out.push((name, report));
        };

    let one = |n: &str, t: Tensor<f64>| -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([(n.to_string(), t)])
    };
    let scalarize = |g: &mut Graph<f64>, y: NodeId| -> Result<NodeId> {
        let shape = g.value(y).shape().to_vec();
        let target = g.input(Tensor::zeros(&shape));
        let mask = g.input(Tensor::full(&shape, 1.0));
        g.masked_mse(y, target, mask)
    };

    run(
        "matmul",
        {
            let mut p = one("a", test_tensor(&[3, 4], 1));
            p.insert("b".into(), test_tensor(&[4, 2], 2));
            p
        },
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let y = g.matmul(a, b)?;
            scalarize(g, y)
        }),
    );

    run(
        "matmul_nt",
        {
            let mut p = one("a", test_tensor(&[3, 4], 3));
            p.insert("b".into(), test_tensor(&[2, 4], 4));
            p
        },
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let y = g.matmul_nt(a, b)?;
            scalarize(g, y)
        }),
    );

    run(
        "add_broadcast",
        {
            let mut p = one("a", test_tensor(&[3, 4], 5));
            p.insert("b".into(), test_tensor(&[4], 6));
            p
        },
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let y = g.add(a, b)?;
            scalarize(g, y)
        }),
    );

    run(
        "mul_broadcast",
        {
            let mut p = one("a", test_tensor(&[3, 4], 7));
            p.insert("b".into(), test_tensor(&[4], 8));
            p
        },
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let y = g.mul(a, b)?;
            scalarize(g, y)
        }),
    );

    run(
        "scale_sub",
        {
            let mut p = one("a", test_tensor(&[2, 3], 9));
            p.insert("b".into(), test_tensor(&[2, 3], 10));
            p
        },
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let s = g.scale(a, 1.7);
            let y = g.sub(s, b)?;
            scalarize(g, y)
        }),
    );

    run(
        "relu",
        one("a", test_tensor(&[4, 4], 11)),
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let y = g.relu(a);
            scalarize(g, y)
        }),
    );

    run(
        "softmax",
        one("a", test_tensor(&[3, 5], 12)),
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let y = g.softmax(a);
            scalarize(g, y)
        }),
    );

    run(
        "layer_norm",
        one("a", test_tensor(&[3, 6], 13)),
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let y = g.layer_norm(a);
            scalarize(g, y)
        }),
    );

    run(
        "embedding",
        one("table", test_tensor(&[5, 3], 14)),
        None,
        Box::new(move |g, p| {
            let t = g.param("table", &p["table"]);
            let y = g.embedding(t, &[0, 2, 2, 4])?;
            scalarize(g, y)
        }),
    );

    run(
        "unfold_conv",
        {
            let mut p = one("x", test_tensor(&[5, 3], 15));
            p.insert("w".into(), test_tensor(&[9, 2], 16));
            p
        },
        None,
        Box::new(move |g, p| {
            let x = g.param("x", &p["x"]);
            let w = g.param("w", &p["w"]);
            let u = g.unfold(x, 3)?;
            let y = g.matmul(u, w)?;
            scalarize(g, y)
        }),
    );

    run(
        "dropout_train",
        one("a", test_tensor(&[4, 5], 17)),
        Some(99),
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let y = g.dropout(a, 0.4);
            scalarize(g, y)
        }),
    );

    run(
        "concat_slice_gather",
        {
            let mut p = one("a", test_tensor(&[2, 4], 18));
            p.insert("b".into(), test_tensor(&[3, 4], 19));
            p
        },
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let b = g.param("b", &p["b"]);
            let c = g.concat(a, b, 0)?;
            let c2 = g.concat(c, c, 1)?;
            let s = g.slice_cols(c2, 2, 7)?;
            let s = g.slice_rows(s, 1, 5)?;
            let y = g.gather_rows(s, &[0, 0, 2, 3, 1])?;
            scalarize(g, y)
        }),
    );

    run(
        "masked_mse",
        one("a", test_tensor(&[3, 4], 20)),
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            let target = g.input(test_tensor(&[3, 4], 21));
            let mask_data: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect();
            let mask = g.input(Tensor::new(vec![3, 4], mask_data));
            g.masked_mse(a, target, mask)
        }),
    );

    run(
        "masked_mae",
        one("a", test_tensor(&[3, 4], 22)),
        None,
        Box::new(move |g, p| {
            let a = g.param("a", &p["a"]);
            // far-away target keeps |pred - target| off its kink
            let target = g.input(Tensor::full(&[3, 4], 5.0));
            let mask = g.input(Tensor::full(&[3, 4], 1.0));
            g.masked_mae(a, target, mask)
        }),
    );

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_op_gradients_match_finite_differences() {
        for (name, report) in op_checks() {
            assert!(
                report.pass(),
                "op '{name}': max rel err {:.3e} at {}",
                report.max_rel_err,
                report.worst
            );
        }
    }

    #[test]
    fn checker_flags_a_corrupted_gradient() {
        // negative control: a loss whose value depends on the parameter
        // but whose graph hides that dependence from the reverse pass
        // (parameter folded into a constant input) must fail the check.
        let params = BTreeMap::from([("a".to_string(), test_tensor(&[2, 2], 30))]);
        let report = check_gradients(
            &params,
            &|g: &mut Graph<f64>, p: &BTreeMap<String, Tensor<f64>>| {
                let a = g.param("a", &p["a"]);
                // half the dependence routed around the tape
                let hidden = g.input(p["a"].clone());
                let y = g.add(a, hidden)?;
                let t = g.input(Tensor::zeros(&[2, 2]));
                let m = g.input(Tensor::full(&[2, 2], 1.0));
                g.masked_mse(y, t, m)
            },
            None,
            0,
        )
        .unwrap();
        assert!(!report.pass(), "corrupted gradient slipped through");
        assert!(report.max_rel_err > 0.4, "{}", report.max_rel_err);
    }
}
