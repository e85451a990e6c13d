use edl_autodiff::gradcheck::compare;
use edl_autodiff::{Padding, Result, Tape, Tensor, Var};
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(shape.to_vec(), v).unwrap())
}

/// Reduces any tensor to a scalar with non-uniform weights so that every
/// output element's gradient path is exercised.
fn weighted_sum(t: &mut Tape, x: Var) -> Result<Var> {
    let n = t.value(x).numel();
    let w = Tensor::new(
        t.shape(x).to_vec(),
        (0..n).map(|i| 0.5 + (i as f64 * 0.37).sin()).collect(),
    )?;
    let w = t.constant(w);
    let p = t.mul(x, w)?;
    Ok(t.sum(p))
}

fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let cmp = compare(f, inputs, H).unwrap();
    let err = cmp.max_relative_error();
    assert!(err < TOL, "relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul(a in tensor(&[3, 4], -2.0, 2.0), b in tensor(&[4, 2], -2.0, 2.0)) {
        check(&[a, b], |t, v| { let m = t.matmul(v[0], v[1])?; weighted_sum(t, m) });
    }

    #[test]
    fn broadcasting_arithmetic(a in tensor(&[3, 4], -2.0, 2.0), b in tensor(&[4], 0.5, 2.0), c in tensor(&[3, 1], 0.5, 2.0)) {
        check(&[a, b, c], |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.div(s, v[2])?;
            let m = t.mul(d, v[1])?;
            let r = t.sub(m, v[2])?;
            weighted_sum(t, r)
        });
    }

    #[test]
    fn softmax_and_log_softmax(x in tensor(&[2, 5], -3.0, 3.0)) {
        check(std::slice::from_ref(&x), |t, v| { let s = t.softmax(v[0])?; weighted_sum(t, s) });
        check(&[x], |t, v| { let s = t.log_softmax(v[0])?; weighted_sum(t, s) });
    }

    #[test]
    fn special_functions(x in tensor(&[6], 0.3, 15.0)) {
        check(std::slice::from_ref(&x), |t, v| { let s = t.ln_gamma(v[0]); weighted_sum(t, s) });
        check(&[x], |t, v| { let s = t.digamma(v[0]); weighted_sum(t, s) });
    }

    #[test]
    fn conv_and_pool(x in tensor(&[1, 2, 6, 6], -1.0, 1.0), w in tensor(&[3, 2, 3, 3], -1.0, 1.0)) {
        check(&[x.clone(), w.clone()], |t, v| {
            let c = t.conv2d(v[0], v[1], Padding::Same)?;
            weighted_sum(t, c)
        });
        check(&[x, w], |t, v| {
            let c = t.conv2d(v[0], v[1], Padding::Valid)?;
            let sq = t.square(c);
            weighted_sum(t, sq)
        });
    }
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 3], vec![0.1, -0.4, 2.2, 1.3, -0.7, 0.05]).unwrap());
        let w = t.constant(Tensor::new(vec![3, 2], vec![0.3, 0.9, -1.1, 0.2, 0.8, -0.6]).unwrap());
        let m = t.matmul(x, w).unwrap();
        let s = t.softplus(m);
        let y = t.log_softmax(s).unwrap();
        t.value(y).clone()
    };
    let (a, b) = (build(), build());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
