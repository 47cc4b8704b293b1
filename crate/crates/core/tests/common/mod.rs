//! Independent scalar-loop reference implementations used as test oracles.
//! Nothing here calls into the library's numeric code.
#![allow(dead_code)]

pub type Mat = Vec<Vec<f64>>;

pub fn oracle_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// softmax(QKᵀ/√d_k)V, one element at a time.
pub fn oracle_attention(q: &Mat, k: &Mat, v: &Mat, key_mask: &[bool]) -> Mat {
    let dk = q[0].len();
    let mut out = vec![vec![0.0; v[0].len()]; q.len()];
    for i in 0..q.len() {
        let mut scores = vec![0.0; k.len()];
        for j in 0..k.len() {
            let mut dot = 0.0;
            for t in 0..dk {
                dot += q[i][t] * k[j][t];
            }
            scores[j] = dot / (dk as f64).sqrt() + if key_mask[j] { 0.0 } else { -1e9 };
        }
        let w = oracle_softmax(&scores);
        for c in 0..v[0].len() {
            for j in 0..k.len() {
                out[i][c] += w[j] * v[j][c];
            }
        }
    }
    out
}

pub fn oracle_matmul(a: &Mat, b: &Mat) -> Mat {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for t in 0..b.len() {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

/// max(0, xW1 + b1)W2 + b2 per row.
pub fn oracle_ffn(x: &Mat, w1: &Mat, b1: &[f64], w2: &Mat, b2: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let hidden: Vec<f64> = (0..b1.len())
                .map(|j| {
                    let mut s = b1[j];
                    for (t, xv) in row.iter().enumerate() {
                        s += xv * w1[t][j];
                    }
                    s.max(0.0)
                })
                .collect();
            (0..b2.len())
                .map(|c| {
                    let mut s = b2[c];
                    for (j, h) in hidden.iter().enumerate() {
                        s += h * w2[j][c];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn oracle_pe(pos: usize, col: usize, d_model: usize) -> f64 {
    let pair = col / 2;
    let angle = pos as f64 / 10000f64.powf(2.0 * pair as f64 / d_model as f64);
    if col.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

pub fn oracle_layer_norm(row: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    row.iter().map(|x| (x - mean) / (var + eps).sqrt()).collect()
}

/// Batch-mean of -Σ t_c ln(max(s_c, 1e-12)).
pub fn oracle_cross_entropy(target: &Mat, probs: &Mat) -> f64 {
    let mut total = 0.0;
    for (t, s) in target.iter().zip(probs) {
        let mut l = 0.0;
        for c in 0..t.len() {
            l -= t[c] * s[c].max(1e-12).ln();
        }
        total += l;
    }
    total / target.len() as f64
}

pub fn oracle_entropy(t: &[f64]) -> f64 {
    -t.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Brute-force metrics: recount every quantity from the raw pairs.
pub struct OracleMetrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub counts: Vec<Vec<usize>>,
}

pub fn oracle_metrics(preds: &[usize], labels: &[usize], classes: usize) -> OracleMetrics {
    let mut counts = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for i in 0..preds.len() {
        counts[labels[i]][preds[i]] += 1;
        if preds[i] == labels[i] {
            correct += 1;
        }
    }
    let mut precision = vec![];
    let mut recall = vec![];
    let mut f1 = vec![];
    for c in 0..classes {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for i in 0..preds.len() {
            match (preds[i] == c, labels[i] == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    let macro_f1 = f1.iter().sum::<f64>() / classes as f64;
    OracleMetrics {
        accuracy: correct as f64 / preds.len() as f64,
        precision,
        recall,
        f1,
        macro_f1,
        counts,
    }
}

pub fn to_mat(t: &tkd::Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}
