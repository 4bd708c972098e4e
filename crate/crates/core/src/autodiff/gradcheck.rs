use std::sync::Arc;

use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::seeded;
use crate::sparse::CsrMatrix;

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
///
/// `build` records the function on a fresh tape given one trainable leaf per
/// entry of `point`. Returns the largest `|a − b| / max(1e-12, |a| + |b|)`.
pub fn grad_check<F>(build: F, point: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &leaves)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let leaves: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &leaves)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = point.to_vec();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).expect("trainable leaf has a gradient");
        for i in 0..point[k].len() {
            let x = point[k].data()[i];
            probe[k].data_mut()[i] = x + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

pub(crate) fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random values kept at least `gap` away from each other and from zero,
/// so relu / max / sort kinks are never straddled by the difference step.
pub(crate) fn rand_separated(rng: &mut impl Rng, r: usize, c: usize, gap: f64) -> Tensor<f64> {
    loop {
        let t = rand_tensor(rng, r, c);
        let mut v = t.data().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let spaced = v.windows(2).all(|w| w[1] - w[0] > gap);
        if spaced && v.iter().all(|x| x.abs() > gap) {
            return t;
        }
    }
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights.
pub(crate) fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = seeded(seed);
    let w: Vec<f64> = (0..tape.value(x).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

/// Runs [`grad_check`] on one random configuration of every tape primitive,
/// each reduced to a scalar by a fixed random weighting. Inputs of kinked
/// operations (relu, maximum, sort, quantile, pinball) are resampled until
/// no kink lies within the difference step. Returns `(primitive, error)`.
pub fn primitive_grad_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = seeded(seed);
    let r = rng.random_range(2..=8);
    let c = rng.random_range(2..=8);
    let k = rng.random_range(1..=8);
    let h = 1e-6;
    let gap = 1e-4;
    let mut out = Vec::new();
    let mut check = |name, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, pts: Vec<Tensor<f64>>| {
        out.push((name, grad_check(f, &pts, h)));
    };

    let a = rand_tensor(&mut rng, r, c);
    let b = rand_tensor(&mut rng, c, k);
    check("matmul", &|t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), b]);

    let mut edges = Vec::new();
    for u in 0..r {
        for w in u + 1..r {
            if rng.random_bool(0.4) {
                edges.push((u, w));
            }
        }
    }
    let g = crate::graph::Graph::from_edges(r, &edges).unwrap();
    let s: Arc<CsrMatrix<f64>> = crate::graph::propagation(&g);
    check("spmm", &|t, v| { let y = t.spmm(&s, v[0])?; weighted_sum(t, y, seed) }, vec![a.clone()]);

    let a2 = rand_tensor(&mut rng, r, c);
    check("add", &|t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), a2.clone()]);
    check("sub", &|t, v| { let y = t.sub(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), a2.clone()]);
    check("mul", &|t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), a2.clone()]);

    let m1 = rand_separated(&mut rng, r, c, gap);
    let mut m2 = m1.clone();
    for (i, x) in m2.data_mut().iter_mut().enumerate() {
        *x += if i % 2 == 0 { 0.3 } else { -0.3 };
    }
    check("maximum", &|t, v| { let y = t.maximum(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![m1, m2]);

    let bias = rand_tensor(&mut rng, 1, c);
    check("add_row_bias", &|t, v| { let y = t.add_row_bias(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), bias]);
    let sc = Tensor::scalar(rng.random_range(-1.0..1.0));
    check("add_scalar", &|t, v| { let y = t.add_scalar(v[0], v[1])?; weighted_sum(t, y, seed) }, vec![a.clone(), sc]);
    check("scale", &|t, v| { let y = t.scale(v[0], -1.7); weighted_sum(t, y, seed) }, vec![a.clone()]);

    let rl = rand_separated(&mut rng, r, c, gap);
    check("relu", &|t, v| { let y = t.relu(v[0]); weighted_sum(t, y, seed) }, vec![rl]);
    check("sigmoid", &|t, v| { let y = t.sigmoid(v[0]); weighted_sum(t, y, seed) }, vec![a.clone()]);
    check("softmax_rows", &|t, v| { let y = t.softmax_rows(v[0])?; weighted_sum(t, y, seed) }, vec![a.clone()]);
    let pos = a.map(|x| x.abs() + 0.5);
    check("log", &|t, v| { let y = t.log(v[0]); weighted_sum(t, y, seed) }, vec![pos]);
    check("sum", &|t, v| { let y = t.sigmoid(v[0]); Ok(t.sum(y)) }, vec![a.clone()]);
    check("mean", &|t, v| { let y = t.sigmoid(v[0]); t.mean(y) }, vec![a.clone()]);

    let srt = rand_separated(&mut rng, r, c, gap);
    check("sort_rows", &|t, v| { let (y, _) = t.sort_rows(v[0], true)?; weighted_sum(t, y, seed) }, vec![srt.clone()]);
    check("cumsum_rows", &|t, v| { let y = t.cumsum_rows(v[0])?; weighted_sum(t, y, seed) }, vec![a.clone()]);
    let level = rng.random_range(0.05..1.0);
    check("quantile", &|t, v| t.quantile(v[0], level), vec![srt]);

    let rows: Vec<usize> = (0..r).filter(|_| rng.random_bool(0.7)).chain([0]).collect();
    let labels: Vec<usize> = rows.iter().map(|_| rng.random_range(0..c)).collect();
    check("cross_entropy", &|t, v| t.cross_entropy(v[0], &rows, &labels), vec![a.clone()]);

    let pred = rand_tensor(&mut rng, r, 2);
    let targets: Vec<f64> = loop {
        let y: Vec<f64> = rows.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let clear = rows
            .iter()
            .zip(&y)
            .all(|(&i, &yi)| (0..2).all(|j| (yi - pred.get(i, j)).abs() > gap));
        if clear {
            break y;
        }
    };
    check("pinball", &|t, v| t.pinball(v[0], &rows, &targets, &[0.05, 0.95]), vec![pred]);

    let target = rand_tensor(&mut rng, r, c);
    check("squared_error", &|t, v| t.squared_error(v[0], &target), vec![a.clone()]);

    check(
        "dropout",
        &|t, v| {
            let y = t.dropout(v[0], 0.4, &mut seeded(seed))?;
            weighted_sum(t, y, seed)
        },
        vec![a],
    );
    out.into_iter().map(|(n, e)| e.map(|e| (n, e))).collect()
}
