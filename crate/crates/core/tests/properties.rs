use proptest::prelude::*;

use gsn_seq::data::{
    make_subsequences, sequence_mnist, synthetic_digits, BallSystem, BouncingBallsConfig, SequenceDataset, ValueRange,
};
use gsn_seq::gsn::{gsn_sample_chain, gsn_train_step, GsnParams, WalkbackConfig};
use gsn_seq::harness::{
    decode_checkpoint, encode_checkpoint, evaluate_mse, preset, render_image_grid, Checkpoint, MetricsLog, Model,
};
use gsn_seq::nn::{
    clip_global_norm, dense_backward, dense_forward, global_norm, lstm_step, DenseLayer, GradClipConfig, LstmCell,
    LstmState, OptimizerConfig, OptimizerState,
};
use gsn_seq::tensor::{salt_pepper, Activation, Matrix, NoiseConfig, RandomSource, SaltPepperMask};

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

fn sized(max: usize) -> impl Strategy<Value = (usize, usize)> {
    (1..=max, 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn data_length_is_rows_times_cols((r, c) in sized(9), seed in any::<u64>()) {
        let mut rng = RandomSource::new(seed);
        let m = Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform()).collect()).unwrap();
        prop_assert_eq!(m.data().len(), r * c);
        prop_assert!(Matrix::from_vec(r, c, vec![0.0; r * c + 1]).is_err());
    }

    #[test]
    fn matmul_associative(a in matrix(10, 10, 1.0), b in matrix(10, 10, 1.0), c in matrix(10, 10, 1.0)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.sub(&right).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn same_seed_same_stream(seed in any::<u64>()) {
        let (mut a, mut b) = (RandomSource::new(seed), RandomSource::new(seed));
        for _ in 0..64 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
            prop_assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
        let (mut ca, mut cb) = (a.split(), b.split());
        prop_assert_eq!(ca.next_u64(), cb.next_u64());
        prop_assert_ne!(a.fork(1).next_u64(), a.fork(2).next_u64());
    }

    #[test]
    fn salt_pepper_touches_only_masked(m in matrix(6, 7, 1.0), p in 0.0..=1.0f64, seed in any::<u64>()) {
        let mask = SaltPepperMask::sample(6, 7, p, &mut RandomSource::new(seed)).unwrap();
        let out = mask.apply(&m).unwrap();
        for ((&keep, &before), &after) in mask.keep().iter().zip(m.data()).zip(out.data()) {
            if keep {
                prop_assert_eq!(before.to_bits(), after.to_bits());
            } else {
                prop_assert!(after == 0.0 || after == 1.0);
            }
        }
        let again = salt_pepper(&m, p, &mut RandomSource::new(seed)).unwrap();
        prop_assert_eq!(out, again);
    }

    #[test]
    fn clipped_norm_within_bound(g in prop::collection::vec(matrix(3, 4, 100.0), 1..4), max in 0.01..10.0f64) {
        let mut g = g;
        clip_global_norm(&mut g, GradClipConfig { max_l2_norm: max });
        prop_assert!(global_norm(&g) <= max + 1e-12);
    }

    #[test]
    fn dense_shapes(x in matrix(4, 5, 2.0), out in 1usize..7, seed in any::<u64>()) {
        let layer = DenseLayer::new(5, out, Activation::Tanh, &mut RandomSource::new(seed));
        let (y, cache) = dense_forward(&layer, &x).unwrap();
        prop_assert_eq!(y.shape(), (4, out));
        let (dx, g) = dense_backward(&layer, &cache, &Matrix::filled(4, out, 1.0)).unwrap();
        prop_assert_eq!(dx.shape(), x.shape());
        prop_assert_eq!(g.weights.shape(), layer.weights.shape());
        prop_assert_eq!(g.bias.shape(), layer.bias.shape());
    }

    #[test]
    fn lstm_hidden_bounded(x in matrix(3, 4, 1e3), seed in any::<u64>()) {
        let cell = LstmCell::new(4, 5, &mut RandomSource::new(seed));
        let mut state = LstmState::zeros(3, 5);
        for _ in 0..5 {
            state = lstm_step(&cell, &x, &state).unwrap().0;
            prop_assert!(state.h.data().iter().all(|v| v.abs() <= 1.0 && v.is_finite()));
        }
    }

    #[test]
    fn sgd_learning_rate_anneals(lr in 0.001..1.0f64, rate in 0.9..1.0f64, epochs in 0u32..50) {
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(lr, 0.5, rate)).unwrap();
        for _ in 0..epochs {
            opt.end_epoch();
        }
        prop_assert_eq!(opt.learning_rate(), lr * rate.powi(epochs as i32));
    }

    #[test]
    fn subsequence_count((len, win) in (1usize..60, 2usize..30), stride in 1usize..20) {
        let ds = SequenceDataset::new(vec![Matrix::zeros(len, 2)], ValueRange::Unbounded).unwrap();
        let w = make_subsequences(&ds, win, stride).unwrap();
        let expect = if len >= win { (len - win) / stride + 1 } else { 0 };
        prop_assert_eq!(w.len(), expect);
        prop_assert!(w.iter().all(|m| m.rows() == win));
    }

    #[test]
    fn pgm_dimensions(n in 1usize..13, cols in 1usize..6, side in 2usize..6) {
        let frames = Matrix::filled(n, side * side, 0.5);
        let bytes = render_image_grid(&frames, cols, Some((side, side))).unwrap();
        let c = cols.min(n);
        let r = n.div_ceil(c);
        let header = format!("P5\n{} {}\n255\n", c * side + c - 1, r * side + r - 1);
        prop_assert!(bytes.starts_with(header.as_bytes()));
        prop_assert_eq!(bytes.len(), header.len() + (c * side + c - 1) * (r * side + r - 1));
    }

    #[test]
    fn checkpoint_save_load_save(tensors in prop::collection::vec(matrix(2, 3, 1e6), 0..4), seed in any::<u64>()) {
        let ck = Checkpoint {
            tensors: tensors.into_iter().enumerate().map(|(i, m)| (format!("t{i}"), m)).collect(),
            config: preset("balls/lstm").unwrap(),
            rng: RandomSource::new(seed).state(),
            epoch: 3,
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        prop_assert_eq!(&encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap(), &bytes);
    }

    #[test]
    fn metrics_csv_round_trip(values in prop::collection::vec(-1e9..1e9f64, 1..20)) {
        let mut log = MetricsLog::new();
        for (e, v) in values.iter().enumerate() {
            log.push(e + 1, "train", "loss", *v).unwrap();
        }
        let csv = log.to_csv();
        prop_assert_eq!(MetricsLog::parse_csv(&csv).unwrap().to_csv(), csv);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tied_weights_stay_transposed(seed in any::<u64>()) {
        let mut rng = RandomSource::new(seed);
        let noise = NoiseConfig::input_only(0.3).with_hidden_gaussian(0.0, 1.0);
        let mut p = GsnParams::new(&[6, 5, 4], true, noise, Activation::Tanh, Activation::Sigmoid, &mut rng).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.25, 0.5, 1.0)).unwrap();
        let x = Matrix::from_vec(3, 6, (0..18).map(|_| rng.uniform()).collect()).unwrap();
        for _ in 0..3 {
            gsn_train_step(&mut p, &x, &WalkbackConfig::fixed(4), &mut opt, &mut rng).unwrap();
            for i in 0..2 {
                prop_assert_eq!(p.down_weight(i), p.up[i].transpose());
            }
        }
    }

    #[test]
    fn chain_visibles_in_unit_interval(seed in any::<u64>()) {
        let mut rng = RandomSource::new(seed);
        let noise = NoiseConfig::input_only(0.4).with_hidden_gaussian(0.0, 2.0);
        let p = GsnParams::new(&[8, 6, 5], false, noise, Activation::Tanh, Activation::Sigmoid, &mut rng).unwrap();
        let x = Matrix::from_vec(2, 8, (0..16).map(|_| rng.uniform()).collect()).unwrap();
        for v in gsn_sample_chain(&p, &x, 10, &mut rng).unwrap() {
            prop_assert!(v.data().iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }

    #[test]
    fn balls_stay_in_box_and_conserve_energy(seed in any::<u64>(), n in 1usize..4) {
        let cfg = BouncingBallsConfig { n_balls: n, seed, ..Default::default() };
        let mut sys = BallSystem::random(&cfg, &mut RandomSource::new(seed)).unwrap();
        let e0 = sys.kinetic_energy();
        let (lo, hi) = (sys.radius, sys.box_size - sys.radius);
        for _ in 0..500 {
            sys.advance_frame();
            prop_assert!(sys.balls.iter().all(|b| b.pos.iter().all(|&p| (lo..=hi).contains(&p))));
            prop_assert!(sys.render(15).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        prop_assert!((sys.kinetic_energy() - e0).abs() <= 1e-6 * e0);
    }

    #[test]
    fn digit_cycle_is_zero_to_nine(seed in any::<u64>()) {
        let store = synthetic_digits(3, 10, seed).unwrap();
        let (seq, labels) = sequence_mnist(&store, seed ^ 1, None).unwrap();
        prop_assert_eq!(seq.sequences[0].rows(), 30);
        for (i, &l) in labels.iter().enumerate() {
            prop_assert_eq!(l as usize, i % 10);
        }
    }

    #[test]
    fn mse_independent_of_batch(seed in any::<u64>(), batch in 1usize..7) {
        let mut cfg = preset("balls/lstm").unwrap();
        cfg.layers = vec![7];
        cfg.dataset.balls.resolution = 5;
        let model = Model::build(&cfg, &mut RandomSource::new(seed)).unwrap();
        let mut rng = RandomSource::new(seed ^ 7);
        let seqs: Vec<Matrix> = (0..6)
            .map(|i| Matrix::from_vec(4 + i % 2, 25, (0..(4 + i % 2) * 25).map(|_| rng.uniform()).collect()).unwrap())
            .collect();
        let one = evaluate_mse(model.predictor().as_mut(), &seqs, None, 1).unwrap();
        let many = evaluate_mse(model.predictor().as_mut(), &seqs, None, batch).unwrap();
        prop_assert_eq!(one.to_bits(), many.to_bits());
    }
}
