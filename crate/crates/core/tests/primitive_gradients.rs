//! Every recorded primitive against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tkd::gradcheck::finite_diff_check;
use tkd::{Graph, Result, Tensor, Var};

const TRIALS: u64 = 50;
const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, -2.0, 2.0, rng)
}

/// Reduces an output to a scalar with fixed random weights, so no coordinate
/// has an identically-zero gradient by symmetry.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let w = Tensor::uniform(g.value(out).shape(), 0.5, 1.5, &mut rng);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn check<F>(name: &str, make_inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, op: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let inputs = make_inputs(&mut rng);
        let err = finite_diff_check(
            |g, v| {
                let out = op(g, v)?;
                weighted_sum(g, out, trial)
            },
            &inputs,
            H,
        )
        .unwrap();
        worst = worst.max(err);
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..5))
}

#[test]
fn matmul() {
    check(
        "matmul",
        |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[4, 2])],
        |g, v| g.matmul(v[0], v[1]),
    );
}

#[test]
fn matmul_nt() {
    check(
        "matmul_nt",
        |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[5, 4])],
        |g, v| g.matmul_nt(v[0], v[1]),
    );
}

#[test]
fn elementwise_binary() {
    let pair = |r: &mut ChaCha8Rng| {
        let (m, n) = dims(r);
        vec![rand_t(r, &[m, n]), rand_t(r, &[m, n])]
    };
    check("add", pair, |g, v| g.add(v[0], v[1]));
    check("sub", pair, |g, v| g.sub(v[0], v[1]));
    check("mul", pair, |g, v| g.mul(v[0], v[1]));
}

#[test]
fn unary() {
    let one = |r: &mut ChaCha8Rng| {
        let (m, n) = dims(r);
        vec![rand_t(r, &[m, n])]
    };
    check("scale", one, |g, v| g.scale(v[0], -1.7));
    check("transpose", one, |g, v| g.transpose(v[0]));
    check("exp", one, |g, v| g.exp(v[0]));
    check("relu", one, |g, v| g.relu(v[0]));
    check("softmax_rows", one, |g, v| g.softmax_rows(v[0]));
    check("mean_axis0", one, |g, v| g.mean_axis(v[0], 0));
    check("mean_axis1", one, |g, v| g.mean_axis(v[0], 1));
    check(
        "log",
        |r| {
            let (m, n) = dims(r);
            vec![Tensor::uniform(&[m, n], 0.25, 2.0, r)]
        },
        |g, v| g.log(v[0]),
    );
}

#[test]
fn add_bias() {
    check(
        "add_bias",
        |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[4])],
        |g, v| g.add_bias(v[0], v[1]),
    );
}

#[test]
fn layer_norm() {
    check(
        "layer_norm",
        |r| vec![rand_t(r, &[3, 5]), rand_t(r, &[5]), rand_t(r, &[5])],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
    );
}

#[test]
fn concat_and_split() {
    check(
        "concat_cols",
        |r| vec![rand_t(r, &[3, 2]), rand_t(r, &[3, 4])],
        |g, v| g.concat_cols(&[v[0], v[1]]),
    );
    check(
        "concat_rows",
        |r| vec![rand_t(r, &[2, 3]), rand_t(r, &[4, 3])],
        |g, v| g.concat_rows(&[v[1], v[0]]),
    );
    check(
        "split_cols",
        |r| vec![rand_t(r, &[3, 6])],
        |g, v| {
            let parts = g.split_cols(v[0], 3)?;
            // recombine out of order so each slice gets a distinct weight
            g.concat_cols(&[parts[2], parts[0]])
        },
    );
    check(
        "slice_rows",
        |r| vec![rand_t(r, &[5, 3])],
        |g, v| g.slice_rows(v[0], 1, 3),
    );
}

#[test]
fn gather_rows() {
    check(
        "gather_rows",
        |r| vec![rand_t(r, &[6, 3])],
        |g, v| g.gather_rows(v[0], &[4, 1, 4, 0]),
    );
}

#[test]
fn relu_points_match_finite_differences() {
    for (x, expect) in [(3.0, 1.0), (-3.0, 0.0)] {
        let mut g = Graph::new();
        let v = g.param(tkd::ParamId(0), Tensor::scalar(x));
        let r = g.relu(v).unwrap();
        let s = g.sum(r).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(tkd::ParamId(0)).unwrap().item(), expect);
        let err = finite_diff_check(
            |g, v| {
                let r = g.relu(v[0])?;
                g.sum(r)
            },
            &[Tensor::scalar(x)],
            H,
        )
        .unwrap();
        assert!(err < 1e-10);
    }
}
