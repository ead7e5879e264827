use battery_msm::dataio::{apply_norm, fit_norm, synth_fleet, vehicle_split, ChargeSnippet, FleetDataset, SynthConfig};
use battery_msm::evalkit::{auroc, expected_cost, min_expected_cost, roc_points, trapezoid_area, CostParams};
use battery_msm::model::{cls_embedding, cls_embeddings, forward, init_params, ModelConfig, ModelParams};
use battery_msm::numcore::{
    dropout, finite_diff_check_with, layer_norm, matmul, softmax_rows, GradCheckOptions, ParameterSet, SeededRng, Stencil, Tensor,
};
use battery_msm::pretrain::{msm_loss, sample_mask, MaskMatrix};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 0;
                l[1] = 1;
                (s, l)
            })
    })
}

fn has_ties(s: &[f64]) -> bool {
    let mut v = s.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).any(|w| w[0] == w[1])
}

proptest! {
    #[test]
    fn matmul_is_associative(a in matrix(4, 4), b in matrix(4, 4), c in matrix(4, 4), d in matrix(4, 4)) {
        let left = matmul(&matmul(&matmul(&a, &b).unwrap(), &c).unwrap(), &d).unwrap();
        let right = matmul(&a, &matmul(&b, &matmul(&c, &d).unwrap()).unwrap()).unwrap();
        let scale = left.data().iter().map(|v| v.abs()).fold(1.0, f64::max);
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn layer_norm_standardizes_vectors(x in matrix(5, 7)) {
        let gamma = Tensor::full(&[7], 1.0);
        let beta = Tensor::zeros(&[7]);
        for r in 0..5 {
            let row = x.row(r);
            let spread = row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - row.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let y = layer_norm(&Tensor::vector(row.to_vec()).unwrap(), &gamma, &beta, 1e-12).unwrap();
            let out = y.data();
            let mean = out.iter().sum::<f64>() / 7.0;
            let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 7.0;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(x in matrix(4, 6), shift in -50.0..50.0f64) {
        let p = softmax_rows(&x).unwrap();
        for r in 0..4 {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let q = softmax_rows(&x.map(|v| v + shift)).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dropout_in_eval_mode_is_identity(x in matrix(3, 5), rate in 0.0..0.9f64, seed in any::<u64>()) {
        let y = dropout(&x, rate, false, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(y, x);
    }

    #[test]
    fn masked_loss_ignores_unmasked_cells(
        m in 1usize..30,
        d in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let mut cells: Vec<bool> = (0..m * d).map(|_| rng.uniform() < 0.2).collect();
        cells[0] = true;
        let mask = MaskMatrix::from_cells(m, d, cells).unwrap();
        let s = Tensor::matrix(m, d, (0..m * d).map(|_| rng.normal()).collect()).unwrap();
        let pred = Tensor::matrix(m, d, (0..m * d).map(|_| rng.normal()).collect()).unwrap();
        let base = msm_loss(&pred, &s, &mask).unwrap();
        let mut moved = pred.clone();
        for (v, &c) in moved.data_mut().iter_mut().zip(mask.cells()) {
            if !c {
                *v = 1e6 * rng.normal();
            }
        }
        prop_assert_eq!(msm_loss(&moved, &s, &mask).unwrap(), base);
    }

    #[test]
    fn masks_have_exact_counts(m in 1usize..300, d in 1usize..10, rate in 0.01..0.99f64, seed in any::<u64>()) {
        let want = (rate * (m * d) as f64).round() as usize;
        let got = sample_mask(m, d, rate, &mut SeededRng::new(seed));
        if want == 0 {
            prop_assert!(got.is_err());
        } else {
            let mask = got.unwrap();
            prop_assert_eq!(mask.count(), want);
            prop_assert_eq!(mask.cells().iter().filter(|&&c| c).count(), want);
        }
    }

    #[test]
    fn auroc_matches_trapezoid_and_is_rank_based((s, l) in scores_and_labels(), a in 0.1..5.0f64, b in -3.0..3.0f64) {
        let base = auroc(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!((trapezoid_area(&roc_points(&s, &l).unwrap()) - base).abs() <= 1e-12);
        // Strictly increasing maps keep the order and the ties.
        let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp().atan()).collect();
        prop_assume!(!has_ties(&t) || has_ties(&s));
        prop_assert!((auroc(&t, &l).unwrap() - base).abs() <= 1e-12);
        if !has_ties(&s) {
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((auroc(&neg, &l).unwrap() - (1.0 - base)).abs() <= 1e-12);
        }
    }

    #[test]
    fn min_cost_never_exceeds_the_endpoints((s, l) in scores_and_labels(), p in 0.0..1.0f64, c_f in 0.0..1e7f64, c_r in 0.0..1e5f64) {
        let params = CostParams { p, c_f, c_r };
        let best = min_expected_cost(&s, &l, &params).unwrap();
        prop_assert!(best.cost <= expected_cost(&params, 0.0, 0.0) * (1.0 + 1e-12));
        prop_assert!(best.cost <= expected_cost(&params, 1.0, 1.0) * (1.0 + 1e-12));
    }

    #[test]
    fn expected_cost_is_affine(
        p in 0.0..1.0f64,
        q0 in (0.0..1.0f64, 0.0..1.0f64),
        q1 in (0.0..1.0f64, 0.0..1.0f64),
        t in 0.0..1.0f64,
    ) {
        let params = CostParams { p, ..CostParams::default() };
        let mid = (q0.0 + t * (q1.0 - q0.0), q0.1 + t * (q1.1 - q0.1));
        let c0 = expected_cost(&params, q0.0, q0.1);
        let c1 = expected_cost(&params, q1.0, q1.1);
        let cm = expected_cost(&params, mid.0, mid.1);
        prop_assert!((cm - (c0 + t * (c1 - c0))).abs() <= 1e-9 * (1.0 + c0.abs() + c1.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn vehicle_splits_are_disjoint_and_complete(
        vehicles in 2usize..30,
        faults in 0.0..0.5f64,
        ratio in 0.05..0.95f64,
        seed in any::<u64>(),
    ) {
        let cfg = SynthConfig {
            vehicles,
            fault_fraction: faults,
            snippets_per_vehicle: 2,
            seq_len: 8,
            ..SynthConfig::default()
        };
        let ds = synth_fleet(&cfg, seed).unwrap();
        if let Ok((train, val, spec)) = vehicle_split(&ds, ratio, seed) {
            prop_assert!(spec.train_vehicle_ids.is_disjoint(&spec.val_vehicle_ids));
            prop_assert_eq!(spec.train_vehicle_ids.len() + spec.val_vehicle_ids.len(), vehicles);
            prop_assert_eq!(train.len() + val.len(), ds.len());
            prop_assert!(train.snippets().iter().all(|s| spec.train_vehicle_ids.contains(&s.vehicle_id)));
            prop_assert!(val.snippets().iter().all(|s| spec.val_vehicle_ids.contains(&s.vehicle_id)));
        }
    }
}

fn random_fleet(n: usize, m: usize, seed: u64) -> FleetDataset {
    let mut rng = SeededRng::new(seed);
    let snippets = (0..n)
        .map(|i| ChargeSnippet {
            snippet_id: format!("s{i}"),
            vehicle_id: format!("v{}", i / 2),
            channels: Tensor::matrix(m, 3, (0..m * 3).map(|k| 100.0 * (k % 3) as f64 + rng.normal() * 7.0).collect())
                .unwrap(),
            meta: vec![1e4 * rng.uniform(), rng.normal()],
            label: u8::from((i / 2) % 3 == 0),
        })
        .collect();
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    FleetDataset::new(snippets, names(&["voltage", "current", "temperature"]), names(&["a", "b"])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn normalized_training_data_is_standard(n in 2usize..12, m in 2usize..20, seed in any::<u64>()) {
        let ds = random_fleet(2 * n, m, seed);
        let z = apply_norm(&ds, &fit_norm(&ds).unwrap()).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = z.snippets().iter().flat_map(|s| (0..m).map(move |t| s.channels.get(t, c))).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }
}

fn tiny_config(layers: usize, heads: usize, head_dim: usize, m: usize) -> ModelConfig {
    ModelConfig {
        channels: 2,
        hidden: heads * head_dim,
        layers,
        heads,
        ff_dim: 2 * heads * head_dim,
        max_seq_len: m + 1,
        dropout_rate: 0.0,
        meta_dim: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn encoder_gradients_on_random_small_shapes(
        layers in 0usize..3,
        heads in 1usize..3,
        head_dim in 3usize..5,
        m in 2usize..6,
        seed in any::<u64>(),
    ) {
        let cfg = tiny_config(layers, heads, head_dim, m);
        let mut rng = SeededRng::new(seed);
        let x = Tensor::matrix(m, 2, (0..2 * m).map(|_| rng.normal()).collect()).unwrap();
        let target: Vec<f64> = (0..2 * m).map(|_| rng.normal()).collect();
        let mut params = init_params(&cfg, &rng.derive_str("init")).unwrap();
        for p in params.parameters_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += 0.3 * rng.normal());
        }
        let loss = |p: &ModelParams| {
            let f = forward(p, &x, false, &mut SeededRng::new(0)).unwrap();
            f.reconstruction_data().iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let f = forward(&params, &x, false, &mut SeededRng::new(0)).unwrap();
        let d: Vec<f64> = f.reconstruction_data().iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        let grads = f.backward(&params, &d);
        for (p, g) in params.parameters_mut().iter_mut().zip(grads) {
            p.grad = g;
        }
        // Tiny gradients want a large step, sharp curvature a small one.
        let reps: Vec<_> = [1e-3, 1e-4]
            .into_iter()
            .map(|step| {
                let opts = GradCheckOptions { step, tol: 1e-4, stencil: Stencil::Central4 };
                finite_diff_check_with(|p: &ModelParams, _, _| loss(p), &params, &opts).unwrap()
            })
            .collect();
        prop_assert!(
            reps.iter().any(|r| r.passed()),
            "worst {:.2e} / {:.2e} in {:?} / {:?}",
            reps[0].max_rel_error(),
            reps[1].max_rel_error(),
            reps[0].flagged(),
            reps[1].flagged()
        );
    }

    #[test]
    fn encoding_is_deterministic_and_batch_independent(n in 1usize..6, m in 2usize..10, seed in any::<u64>()) {
        let cfg = tiny_config(2, 2, 4, m);
        let params = init_params(&cfg, &SeededRng::new(seed)).unwrap();
        let mut rng = SeededRng::new(seed ^ 1);
        let xs: Vec<Tensor> = (0..n)
            .map(|_| Tensor::matrix(m, 2, (0..2 * m).map(|_| rng.normal()).collect()).unwrap())
            .collect();
        let refs: Vec<&Tensor> = xs.iter().collect();
        let batch = cls_embeddings(&params, &refs).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            let one = cls_embedding(&params, x).unwrap();
            prop_assert_eq!(&one, &cls_embedding(&params, x).unwrap());
            for (u, v) in one.iter().zip(b) {
                prop_assert!((u - v).abs() <= 1e-10);
            }
        }
    }
}
