use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signshot::nncore::{conv1d_temporal, multi_head_self_attention, softmax, AttentionWeights, Graph};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn attention(x: &Array2<f64>, params: &[Array2<f64>], heads: usize, mask: &[bool]) -> Array2<f64> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let v: Vec<_> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let w = AttentionWeights { wq: v[0], bq: v[1], wk: v[2], bk: Some(v[3]), wv: v[4], bv: v[5], wo: v[6], bo: v[7] };
    let out = multi_head_self_attention::<ChaCha8Rng>(&mut g, xv, &w, heads, mask, 0.0, None).unwrap();
    g.value(out).clone()
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        z in proptest::collection::vec(-50.0f64..50.0, 1..40),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in 0u64..1000, t in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let x = random(&mut rng, t, d);
        let params: Vec<Array2<f64>> = (0..4)
            .flat_map(|_| [random(&mut rng, d, d), random(&mut rng, 1, d)])
            .collect();
        let mut perm: Vec<usize> = (0..t).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let permuted = Array2::from_shape_fn((t, d), |(i, j)| x[[perm[i], j]]);
        let mask = vec![true; t];
        let y = attention(&x, &params, 2, &mask);
        let yp = attention(&permuted, &params, 2, &mask);
        for i in 0..t {
            for j in 0..d {
                prop_assert!((yp[[i, j]] - y[[perm[i], j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn conv_is_shift_equivariant_in_the_interior(seed in 0u64..1000, k_idx in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = [1, 3, 5][k_idx];
        let (t, cin, cout) = (12, 3, 2);
        let x = random(&mut rng, t, cin);
        let kernel = random(&mut rng, k * cin, cout);
        let bias = random(&mut rng, 1, cout);
        // shifted[i] = x[i - 1]
        let mut shifted = Array2::zeros((t, cin));
        shifted.slice_mut(s![1.., ..]).assign(&x.slice(s![..t - 1, ..]));
        let run = |input: &Array2<f64>| {
            let mut g = Graph::new();
            let (xv, kv, bv) = (g.leaf(input.clone()), g.leaf(kernel.clone()), g.leaf(bias.clone()));
            let y = conv1d_temporal(&mut g, xv, kv, bv, k).unwrap();
            g.value(y).clone()
        };
        let (y, ys) = (run(&x), run(&shifted));
        let half = k / 2;
        for i in (1 + half)..(t - half) {
            for c in 0..cout {
                prop_assert!((ys[[i, c]] - y[[i - 1, c]]).abs() < 1e-12);
            }
        }
    }
}
