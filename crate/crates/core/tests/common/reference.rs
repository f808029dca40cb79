//! Straight-line evaluation of the chain on dense nested vectors, sharing no
//! code with the library beyond reading parameter values.

use gcot::cot::PromptState;
use gcot::encoder::EncoderWeights;
use gcot::graphdata::GraphRecord;
use gcot::numcore::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter()
        .map(|r| r.iter().map(|&v| f(v)).collect())
        .collect()
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).collect())
        .collect()
}

fn add_row(a: &Mat, r: &[f64]) -> Mat {
    a.iter()
        .map(|x| x.iter().zip(r).map(|(p, q)| p + q).collect())
        .collect()
}

fn a_hat(g: &GraphRecord) -> Mat {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for &(u, v) in &g.edges {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

fn layers(a: &Mat, x: &Mat, thetas: &[Mat]) -> Vec<Mat> {
    let mut out: Vec<Mat> = Vec::new();
    let mut h = x.clone();
    for (l, th) in thetas.iter().enumerate() {
        h = mm(a, &mm(&h, th));
        if l + 1 < thetas.len() {
            h = map(&h, |v| v.max(0.0));
        }
        out.push(h.clone());
    }
    out
}

pub fn reference(g: &GraphRecord, enc: &EncoderWeights, s: &PromptState) -> Mat {
    let a = a_hat(g);
    let x = to_mat(&g.features);
    let thetas: Vec<Mat> = enc.thetas().iter().map(to_mat).collect();
    let w = s.fusion.values().to_vec();
    let (w1, b1, w2, b2) = (
        to_mat(&s.condnet.w1),
        s.condnet.b1.values(),
        to_mat(&s.condnet.w2),
        s.condnet.b2.values(),
    );
    let mut xk = x.clone();
    for _ in 1..s.steps {
        let hs = layers(&a, &xk, &thetas);
        let mut t = vec![vec![0.0; hs[0][0].len()]; hs[0].len()];
        for (l, h) in hs.iter().enumerate() {
            for i in 0..t.len() {
                for j in 0..t[0].len() {
                    t[i][j] += w[l] * h[i][j];
                }
            }
        }
        let z = map(&add_row(&mm(&t, &w1), b1), |v| {
            if v > 0.0 {
                v
            } else {
                0.01 * v
            }
        });
        let p = add_row(&mm(&z, &w2), b2);
        xk = if s.chain_features {
            hadamard(&p, &xk)
        } else {
            hadamard(&p, &x)
        };
    }
    let hk = layers(&a, &xk, &thetas).pop().unwrap();
    let params = s.standard.params();
    let (bias, proj) = (to_mat(params[0]), to_mat(params[1]));
    let logits = mm(&hk, &proj);
    let alpha: Mat = logits
        .iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect();
    hadamard(&mm(&alpha, &bias), &hk)
}
