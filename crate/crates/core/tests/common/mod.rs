//! Oracles shared by the integration test targets.

#![allow(dead_code)]

use std::collections::HashMap;

use glen::autodiff::{Tape, Tensor, Var};
use glen::corpus::{Domain, EmbeddingTable, Instance, Split};
use glen::global_graph::{build_scoped_graph, GraphScope};
use glen::instance_graph::GatLayerParams;
use glen::model::{Ablation, GlenModel, ModelConfig, ModelInputs};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Q = Ratio<i64>;

pub const H: f64 = 1e-5;

pub fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

pub fn instance(tokens: Vec<usize>, domain: Domain) -> Instance {
    Instance {
        id: String::new(),
        tokens,
        labels: None,
        domain,
        split: Split::Unlabeled,
    }
}

/// Edge weights recomputed with exact rationals straight from the posts.
pub fn rational_weights(insts: &[Instance], radius: usize) -> HashMap<(usize, usize), Q> {
    let mut occ: HashMap<(Domain, usize), i64> = HashMap::new();
    let mut pair: HashMap<(Domain, usize, usize), i64> = HashMap::new();
    for inst in insts {
        for (i, &t) in inst.tokens.iter().enumerate() {
            *occ.entry((inst.domain, t)).or_default() += 1;
            for j in i + 1..inst.tokens.len().min(i + radius + 1) {
                let u = inst.tokens[j];
                *pair.entry((inst.domain, t.min(u), t.max(u))).or_default() += 1;
            }
        }
    }
    let mut out = HashMap::new();
    for &(_, a, b) in pair.keys() {
        if a == b || out.contains_key(&(a, b)) {
            continue;
        }
        let mut w = Q::from_integer(0);
        for d in [Domain::Source, Domain::Target] {
            let n = pair.get(&(d, a, b)).copied().unwrap_or(0);
            let denom = occ.get(&(d, a)).copied().unwrap_or(0) + occ.get(&(d, b)).copied().unwrap_or(0);
            if denom > 0 {
                w += Q::new(n, denom);
            }
        }
        out.insert((a, b), w / 2);
    }
    out
}

pub fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// `D^-1/2 (A + I) D^-1/2` as a dense matrix from the rational weights.
pub fn dense_normalized(insts: &[Instance], n: usize, radius: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for ((i, j), w) in rational_weights(insts, radius) {
        a[i][j] = to_f64(w);
        a[j][i] = to_f64(w);
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

/// `N relu(N X W0) W1`.
pub fn dense_gcn(norm: &[Vec<f64>], x: &Tensor, w0: &Tensor, w1: &Tensor) -> Vec<Vec<f64>> {
    let h1: Vec<Vec<f64>> = dense_matmul(&dense_matmul(norm, &rows_of(x)), &rows_of(w0))
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    dense_matmul(&dense_matmul(norm, &h1), &rows_of(w1))
}

/// One GAT layer with concatenated heads, with nodes and neighbourhoods
/// rebuilt from the raw token positions.
pub fn dense_gat(tokens: &[usize], radius: usize, h: &Tensor, params: &GatLayerParams) -> Vec<Vec<f64>> {
    let mut nodes: Vec<usize> = Vec::new();
    for &t in tokens {
        if !nodes.contains(&t) {
            nodes.push(t);
        }
    }
    let n = nodes.len();
    let node_of = |t: usize| nodes.iter().position(|&x| x == t).unwrap();
    let mut nbr = vec![vec![false; n]; n];
    for p in 0..tokens.len() {
        nbr[node_of(tokens[p])][node_of(tokens[p])] = true;
        for q in 0..tokens.len() {
            if p != q && p.abs_diff(q) <= radius {
                nbr[node_of(tokens[p])][node_of(tokens[q])] = true;
            }
        }
    }
    let heads = params.attn.len();
    let d = params.w.cols() / heads;
    let wh = dense_matmul(&rows_of(h), &rows_of(&params.w));
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let mut out = vec![vec![0.0; heads * d]; n];
    for k in 0..heads {
        let a = params.attn[k].values();
        let proj = |i: usize| &wh[i][k * d..(k + 1) * d];
        for i in 0..n {
            let js: Vec<usize> = (0..n).filter(|&j| nbr[i][j]).collect();
            let e: Vec<f64> = js
                .iter()
                .map(|&j| {
                    let s = dot(&a[..d], proj(i)) + dot(&a[d..], proj(j));
                    if s > 0.0 {
                        s
                    } else {
                        0.2 * s
                    }
                })
                .collect();
            let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
            for c in 0..d {
                out[i][k * d + c] = js.iter().zip(&e).map(|(&j, v)| (v - m).exp() / z * proj(j)[c]).sum();
            }
        }
    }
    out
}

/// Per-class precision/recall from a full pass over the samples, in exact
/// arithmetic; undefined ratios count as 0. Returns (weighted, micro, macro).
pub fn f1_oracle(preds: &[Vec<u8>], truths: &[Vec<u8>], classes: usize) -> (Q, Q, Q) {
    let zero = Q::from_integer(0);
    let harmonic = |tp: i64, fp: i64, fn_: i64| {
        let p = if tp + fp == 0 { zero } else { Q::new(tp, tp + fp) };
        let r = if tp + fn_ == 0 { zero } else { Q::new(tp, tp + fn_) };
        if p + r == zero {
            zero
        } else {
            Q::from_integer(2) * p * r / (p + r)
        }
    };
    let (mut weighted, mut macro_, mut support_total) = (zero, zero, 0);
    let (mut all_tp, mut all_fp, mut all_fn) = (0, 0, 0);
    for c in 0..classes {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, t) in preds.iter().zip(truths) {
            match (p[c], t[c]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
        let f = harmonic(tp, fp, fn_);
        weighted += f * Q::from_integer(tp + fn_);
        support_total += tp + fn_;
        macro_ += f;
        all_tp += tp;
        all_fp += fp;
        all_fn += fn_;
    }
    let weighted = if support_total == 0 { zero } else { weighted / support_total };
    (weighted, harmonic(all_tp, all_fp, all_fn), macro_ / classes as i64)
}

/// `||a - n|| / (||a|| + ||n||)`, robust to entries near zero.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// Largest relative error over the inputs of `op`. The output is reduced to
/// a scalar with fixed random weights so every element carries a distinct
/// cotangent.
pub fn op_grad_error<F>(inputs: &[Tensor], op: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |xs: &[Tensor], record: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs
            .iter()
            .map(|x| if record { tape.leaf(x.clone()) } else { tape.constant(x.clone()) })
            .collect();
        let out = op(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = tape.constant(Tensor::uniform(&shape, 1.0, &mut rng));
        let weighted = tape.mul(out, w).unwrap();
        let loss = tape.sum(weighted);
        let value = tape.value(loss).item();
        if !record {
            return (value, vec![]);
        }
        let grads = tape.backward(loss).unwrap();
        (value, vars.iter().map(|&v| grads.wrt(v)).collect())
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; x.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].values_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].values_mut()[i] -= H;
            *slot = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * H);
        }
        worst = worst.max(rel_err(analytic[k].values(), &numeric));
    }
    worst
}

pub fn toy_model(ablation: Ablation) -> (GlenModel, EmbeddingTable, Vec<Instance>) {
    let insts: Vec<Instance> = [(vec![1, 2, 3, 2], 0), (vec![4, 1, 5], 1)]
        .into_iter()
        .map(|(tokens, c)| {
            let mut labels = vec![0; 2];
            labels[c] = 1;
            Instance {
                id: format!("{tokens:?}"),
                tokens,
                labels: Some(labels),
                domain: Domain::Source,
                split: Split::Train,
            }
        })
        .collect();
    let config = ModelConfig {
        d_in: 5,
        d_h: 3,
        classes: 2,
        ablation,
        lstm_dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let emb = EmbeddingTable::from_matrix(Tensor::uniform(&[6, 5], 1.0, &mut r));
    (GlenModel::new(config, 3).unwrap(), emb, insts)
}

/// Relative error per named parameter of the two-instance toy model.
pub fn model_grad_errors(ablation: Ablation) -> Vec<(String, f64)> {
    let (model, emb, insts) = toy_model(ablation);
    let graph = build_scoped_graph(&insts, 6, 1, GraphScope::All).unwrap();
    let inputs = ModelInputs {
        embeddings: &emb,
        graph: ablation.uses_global().then_some(&graph),
    };
    let batch: Vec<&Instance> = insts.iter().collect();
    let loss_of = |m: &GlenModel| {
        let mut tape = Tape::new();
        let (_, _, loss) = m.forward_loss(&mut tape, &inputs, &batch, None).unwrap();
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let (vars, _, loss) = model.forward_loss(&mut tape, &inputs, &batch, None).unwrap();
    let grads = tape.backward(loss).unwrap();
    let names: Vec<String> = model.params().named().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (k, var) in vars.all().into_iter().enumerate() {
        let analytic = grads.wrt(var);
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.params_mut().named_mut()[k].1.values_mut()[i] += H;
            let mut minus = model.clone();
            minus.params_mut().named_mut()[k].1.values_mut()[i] -= H;
            *slot = (loss_of(&plus) - loss_of(&minus)) / (2.0 * H);
        }
        out.push((names[k].clone(), rel_err(analytic.values(), &numeric)));
    }
    out
}

/// Every differentiable tape op with its relative gradient error.
pub fn op_grad_errors() -> Vec<(&'static str, f64)> {
    use glen::autodiff::SparseMatrix;
    use std::sync::Arc;

    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let a = away_from_zero(&[3, 4], &mut r);
    let b = away_from_zero(&[3, 4], &mut r);
    let bias = away_from_zero(&[4], &mut r);
    let m = away_from_zero(&[4, 2], &mut r);
    let row = away_from_zero(&[1, 4], &mut r);
    let wide = away_from_zero(&[4, 7], &mut r);
    let tall = away_from_zero(&[4, 3], &mut r);
    let c = away_from_zero(&[2, 4], &mut r);
    let scores = away_from_zero(&[6, 1], &mut r);
    let feats = away_from_zero(&[3, 4], &mut r);
    let dst = [0, 0, 1, 1, 1, 2];
    let src = [0, 1, 0, 1, 2, 2];
    let targets = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let s = Arc::new(
        SparseMatrix::from_triplets(3, 3, vec![(0, 1, 0.5), (0, 2, -1.0), (1, 0, 2.0), (2, 2, 0.25), (2, 1, 1.5)])
            .unwrap(),
    );

    vec![
        ("add", op_grad_error(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap())),
        ("sub", op_grad_error(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap())),
        ("mul", op_grad_error(&[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap())),
        ("scale", op_grad_error(std::slice::from_ref(&a), |t, v| t.scale(v[0], -2.5))),
        ("add_bias", op_grad_error(&[a.clone(), bias], |t, v| t.add_bias(v[0], v[1]).unwrap())),
        ("matmul", op_grad_error(&[a.clone(), m], |t, v| t.matmul(v[0], v[1]).unwrap())),
        ("matmul row", op_grad_error(&[row, wide], |t, v| t.matmul(v[0], v[1]).unwrap())),
        ("concat_cols", op_grad_error(&[tall.clone(), away_from_zero(&[4, 2], &mut r)], |t, v| {
            t.concat_cols(&[v[0], v[1]]).unwrap()
        })),
        ("concat_rows", op_grad_error(&[a.clone(), c], |t, v| t.concat_rows(&[v[0], v[1]]).unwrap())),
        ("slice_rows", op_grad_error(std::slice::from_ref(&tall), |t, v| t.slice_rows(v[0], 1, 2).unwrap())),
        ("slice_cols", op_grad_error(std::slice::from_ref(&tall), |t, v| t.slice_cols(v[0], 1, 2).unwrap())),
        ("gather_rows", op_grad_error(&[tall], |t, v| t.gather_rows(v[0], &[3, 0, 3, 1, 3]).unwrap())),
        ("sigmoid", op_grad_error(std::slice::from_ref(&a), |t, v| t.sigmoid(v[0]))),
        ("tanh", op_grad_error(std::slice::from_ref(&a), |t, v| t.tanh(v[0]))),
        ("relu", op_grad_error(std::slice::from_ref(&a), |t, v| t.relu(v[0]))),
        ("leaky_relu", op_grad_error(std::slice::from_ref(&a), |t, v| t.leaky_relu(v[0], 0.2))),
        ("elu", op_grad_error(std::slice::from_ref(&a), |t, v| t.elu(v[0]))),
        // Same seed on every evaluation, so the mask is fixed.
        ("dropout", op_grad_error(std::slice::from_ref(&a), |t, v| {
            let mut m = ChaCha8Rng::seed_from_u64(5);
            t.dropout(v[0], 0.3, &mut m).unwrap()
        })),
        ("spmm", op_grad_error(std::slice::from_ref(&feats), |t, v| t.spmm(&s, v[0]).unwrap())),
        ("segment_softmax", op_grad_error(std::slice::from_ref(&scores), |t, v| t.segment_softmax(v[0], &dst).unwrap())),
        ("segment_weighted_sum", op_grad_error(&[scores, feats], |t, v| {
            t.segment_weighted_sum(v[0], v[1], &dst, &src, 3).unwrap()
        })),
        ("sum", op_grad_error(std::slice::from_ref(&a), |t, v| t.sum(v[0]))),
        ("softmax_cross_entropy", op_grad_error(std::slice::from_ref(&a), |t, v| {
            t.softmax_cross_entropy(v[0], &[2, 0, 3]).unwrap()
        })),
        ("bce_with_logits", op_grad_error(&[a], |t, v| t.bce_with_logits(v[0], &targets).unwrap())),
    ]
}
