use emoclf::autodiff::{grad_check, AutodiffError, Tape, Tensor, Var, DEFAULT_LAYER_NORM_EPS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `y` with fixed random weights so every output element matters.
fn reduce(t: &mut Tape, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let w = random(t.shape(y), &mut rng);
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn check<F>(inputs: &[Tensor], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    grad_check(|t: &mut Tape, v: &[Var]| { let y = f(t, v)?; reduce(t, y, seed) }, inputs).unwrap()
}

fn dim() -> impl Strategy<Value = usize> {
    1usize..5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_grad(m in dim(), k in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[m, k], &mut rng), random(&[k, n], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.matmul(v[0], v[1])) < TOL);
    }

    #[test]
    fn batch_matmul_grad(b in dim(), m in dim(), k in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[b, m, k], &mut rng), random(&[b, k, n], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.batch_matmul(v[0], v[1])) < TOL);
    }

    #[test]
    fn transpose_and_reshape_grad(m in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[m, n], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.transpose(v[0])) < TOL);
        prop_assert!(check(&inputs, seed, |t, v| t.reshape(v[0], &[n * m])) < TOL);
    }

    #[test]
    fn permute_grad(a in dim(), b in dim(), c in dim(), d in dim(), p in 0usize..24, seed in any::<u64>()) {
        let mut perm = vec![0, 1, 2, 3];
        let mut code = p;
        for i in (1..4).rev() {
            perm.swap(i, code % (i + 1));
            code /= i + 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[a, b, c, d], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.permute(v[0], &perm)) < TOL);
    }

    #[test]
    fn elementwise_grad(m in dim(), n in dim(), factor in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[m, n], &mut rng), random(&[m, n], &mut rng), random(&[n], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.add(v[0], v[1])) < TOL);
        prop_assert!(check(&inputs, seed, |t, v| t.mul(v[0], v[1])) < TOL);
        prop_assert!(check(&inputs, seed, |t, v| t.add_bias(v[0], v[2])) < TOL);
        prop_assert!(check(&inputs, seed, |t, v| Ok(t.scale(v[0], factor))) < TOL);
        prop_assert!(check(&inputs, seed, |t, v| Ok(t.gelu(v[0]))) < TOL);
        prop_assert!(check(&inputs, seed, |t, v| Ok(t.sum(v[0]))) < TOL);
    }

    #[test]
    fn softmax_grad(a in dim(), b in dim(), c in dim(), axis in 0usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[a, b, c], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.softmax(v[0], axis)) < TOL);
    }

    #[test]
    fn masked_softmax_grad(groups in dim(), per in dim(), keys in 2usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep: Vec<bool> = (0..groups * keys)
            .map(|i| i % keys == 0 || rng.random_bool(0.6))
            .collect();
        let inputs = [random(&[groups * per, 2, keys], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.masked_softmax(v[0], &keep)) < TOL);
    }

    #[test]
    fn layer_norm_grad(m in dim(), n in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[m, n], &mut rng), random(&[n], &mut rng), random(&[n], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.layer_norm(v[0], v[1], v[2], DEFAULT_LAYER_NORM_EPS)) < TOL);
    }

    #[test]
    fn gather_rows_grad(rows in dim(), cols in dim(), picks in proptest::collection::vec(0usize..16, 1..8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<usize> = picks.iter().map(|p| p % rows).collect();
        let inputs = [random(&[rows, cols], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.gather_rows(v[0], &picks)) < TOL);
    }

    #[test]
    fn dropout_grad(m in dim(), n in dim(), prob in 0.0f64..0.9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[m, n], &mut rng)];
        prop_assert!(check(&inputs, seed, |t, v| t.dropout(v[0], prob, seed, true)) < TOL);
    }

    #[test]
    fn cross_entropy_grad(batch in dim(), classes in 2usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let inputs = [random(&[batch, classes], &mut rng)];
        let err = grad_check(|t: &mut Tape, v: &[Var]| t.cross_entropy(v[0], &labels), &inputs).unwrap();
        prop_assert!(err < TOL);
    }

    #[test]
    fn matmul_is_associative(m in dim(), k in dim(), l in dim(), n in dim(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let a = t.constant(random(&[m, k], &mut rng));
        let b = t.constant(random(&[k, l], &mut rng));
        let c = t.constant(random(&[l, n], &mut rng));
        let ab = t.matmul(a, b).unwrap();
        let left = t.matmul(ab, c).unwrap();
        let bc = t.matmul(b, c).unwrap();
        let right = t.matmul(a, bc).unwrap();
        for (x, y) in t.value(left).data().iter().zip(t.value(right).data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn backward_leaves_forward_values_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Tape::new();
    let x = t.leaf(random(&[3, 4], &mut rng), true);
    let w = t.leaf(random(&[4, 5], &mut rng), true);
    let g = t.leaf(random(&[5], &mut rng), true);
    let b = t.leaf(random(&[5], &mut rng), true);
    let h1 = t.matmul(x, w).unwrap();
    let h2 = t.gelu(h1);
    let h3 = t.layer_norm(h2, g, b, DEFAULT_LAYER_NORM_EPS).unwrap();
    let p = t.softmax(h3, 1).unwrap();
    let loss = t.cross_entropy(p, &[0, 4, 2]).unwrap();
    let vars = [x, w, g, b, h1, h2, h3, p, loss];
    let before: Vec<Tensor> = vars.iter().map(|&v| t.value(v).clone()).collect();
    t.backward(loss).unwrap();
    for (v, old) in vars.iter().zip(&before) {
        assert_eq!(t.value(*v), old);
    }
    assert!(vars.iter().all(|&v| t.grad(v).is_some()));
}
