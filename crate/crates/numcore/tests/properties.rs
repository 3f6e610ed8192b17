use proptest::prelude::*;
use trisleep_numcore::{conv_output_len, Execution, Graph, ParamStore, Tensor};

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, vals in proptest::collection::vec(-500.0f32..500.0, 60)) {
        let store = ParamStore::new();
        let mut g = Graph::<f32>::inference(store.values());
        let x = Tensor::from_fn(&[rows, cols], |i| vals[i % vals.len()]);
        let x = g.constant(x).unwrap();
        let y = g.softmax_rows(&x).unwrap();
        for r in 0..rows {
            let row = y.value().row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6, "row sum {}", s);
        }
    }

    #[test]
    fn conv_length_formula(t in 1usize..300, k in 1usize..12, s in 1usize..6) {
        prop_assume!(t >= k);
        let store = ParamStore::new();
        let mut g = Graph::<f32>::inference(store.values());
        let x = g.constant(Tensor::zeros(&[1, t])).unwrap();
        let w = g.constant(Tensor::zeros(&[2, 1, k])).unwrap();
        let y = g.conv1d(&x, &w, s).unwrap();
        prop_assert_eq!(y.shape()[1], (t - k) / s + 1);
        prop_assert_eq!(conv_output_len(t, k, s), Some((t - k) / s + 1));
    }

    #[test]
    fn sequential_and_parallel_matmul_agree(m in 60usize..200, k in 30usize..90, n in 60usize..120) {
        let store = ParamStore::new();
        let a = Tensor::<f32>::from_fn(&[m, k], |i| ((i * 7919) % 101) as f32 / 50.0 - 1.0);
        let b = Tensor::<f32>::from_fn(&[k, n], |i| ((i * 104729) % 97) as f32 / 48.0 - 1.0);
        let run = |exec| {
            let mut g = Graph::<f32>::inference(store.values()).with_execution(exec);
            let (av, bv) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
            g.matmul(&av, &bv).unwrap().value().clone()
        };
        prop_assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }
}
