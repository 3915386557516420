use super::features::{doppler_from_ramp, doppler_ramp};
use super::*;
use crate::chanmodel::MeasurementGrid;
use ndarray::{array, Array2};
use rand::Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Central difference with step `h`, shrinking the step when a ReLU changes
/// state inside the stencil.
fn central_difference<F>(mut eval: F, x0: f64, h: f64) -> f64
where
    F: FnMut(f64) -> (f64, Vec<bool>),
{
    let (_, base) = eval(x0);
    let mut step = h;
    loop {
        let (fp, pp) = eval(x0 + step);
        let (fm, pm) = eval(x0 - step);
        if (pp == base && pm == base) || step < 1e-9 {
            return (fp - fm) / (2.0 * step);
        }
        step /= 100.0;
    }
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-9
}

#[test]
fn dense_gradients_match_finite_differences() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = DenseNet::new(&[6, 9, 7, 5], &mut rng).unwrap();
        let x = random_matrix(3, 6, &mut rng);
        let g = random_matrix(3, 5, &mut rng);
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let analytic = net.backward(&cache, g.view()).unwrap().0.flatten();
        for i in 0..net.num_params() {
            let p0 = net.param(i);
            let numeric = central_difference(
                |p| {
                    net.set_param(i, p);
                    let (out, c) = net.forward_cached(x.view()).unwrap();
                    ((&out * &g).sum(), c.activation_pattern())
                },
                p0,
                1e-5,
            );
            net.set_param(i, p0);
            assert!(close(analytic[i], numeric), "seed {seed} param {i}: {} vs {numeric}", analytic[i]);
        }
    }
}

fn vae_eval(vae: &VaeNet, x: &Array2<f64>, t: &Array2<f64>, eps: &Array2<f64>, klw: f64) -> (f64, Vec<bool>) {
    let (h, c1) = vae.encoder.forward_cached(x.view()).unwrap();
    let d = vae.latent_dim;
    let mu = h.slice(ndarray::s![.., ..d]).to_owned();
    let lv = h.slice(ndarray::s![.., d..]).to_owned();
    let z = &mu + &(&lv.mapv(|v| (0.5 * v).exp()) * eps);
    let (y, c2) = vae.decoder.forward_cached(z.view()).unwrap();
    let n = x.nrows() as f64;
    let mse = (&y - t).mapv(|v| v * v).sum() / (n * t.ncols() as f64);
    let mut kl = 0.0;
    for (m, l) in mu.iter().zip(lv.iter()) {
        kl += 0.5 * (l.exp() + m * m - 1.0 - l);
    }
    let mut pattern = c1.activation_pattern();
    pattern.extend(c2.activation_pattern());
    (mse + klw * kl / n, pattern)
}

#[test]
fn vae_gradients_match_finite_differences() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut vae = VaeNet::new(5, 4, &[7, 6], 3, &mut rng).unwrap();
        let x = random_matrix(2, 5, &mut rng);
        let t = random_matrix(2, 4, &mut rng);
        let eps = random_matrix(2, 3, &mut rng);
        let klw = 0.3;
        let (loss, grads) = vae.loss_and_gradients(x.view(), t.view(), eps.view(), klw).unwrap();
        assert!((loss.total - vae_eval(&vae, &x, &t, &eps, klw).0).abs() < 1e-12);
        let ge = grads.encoder.flatten();
        let gd = grads.decoder.flatten();
        for i in 0..vae.encoder.num_params() {
            let p0 = vae.encoder.param(i);
            let numeric = central_difference(
                |p| {
                    vae.encoder.set_param(i, p);
                    vae_eval(&vae, &x, &t, &eps, klw)
                },
                p0,
                1e-5,
            );
            vae.encoder.set_param(i, p0);
            assert!(close(ge[i], numeric), "encoder {i}: {} vs {numeric}", ge[i]);
        }
        for i in 0..vae.decoder.num_params() {
            let p0 = vae.decoder.param(i);
            let numeric = central_difference(
                |p| {
                    vae.decoder.set_param(i, p);
                    vae_eval(&vae, &x, &t, &eps, klw)
                },
                p0,
                1e-5,
            );
            vae.decoder.set_param(i, p0);
            assert!(close(gd[i], numeric), "decoder {i}: {} vs {numeric}", gd[i]);
        }
    }
}

#[test]
fn kl_term_is_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let vae = VaeNet::new(4, 4, &[8], 2, &mut rng).unwrap();
        let x = random_matrix(5, 4, &mut rng) * 3.0;
        let eps = random_matrix(5, 2, &mut rng);
        let l = vae.loss(x.view(), x.view(), eps.view(), 1.0).unwrap();
        assert!(l.kl >= 0.0);
    }
}

#[test]
fn zero_vae_predicts_zero() {
    let vae = VaeNet::from_parts(
        DenseNet::zeros(&[6, 5, 4]).unwrap(),
        DenseNet::zeros(&[2, 5, 6]).unwrap(),
    )
    .unwrap();
    let y = vae.predict_mean(array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]].view()).unwrap();
    assert!(y.iter().all(|v| *v == 0.0));
}

fn identity_data(n: usize, dim: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (v.clone(), v)
        })
        .collect()
}

fn mse_over_variance(pred: &Array2<f64>, data: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let (_, y) = split_pairs(data).unwrap();
    let var = y.var_axis(Axis(0), 0.0).mean().unwrap();
    (pred - &y).mapv(|v| v * v).mean().unwrap() / var
}

#[test]
fn fnn_learns_identity() {
    let train = identity_data(4096, 8, 1);
    let test = identity_data(128, 8, 2);
    let cfg = FnnConfig::default();
    let model = train_fnn_mobility(&train, &cfg).unwrap();
    let (x, _) = split_pairs(&test).unwrap();
    let rel = mse_over_variance(&model.predict_batch(&x).unwrap(), &test);
    assert!(rel < 1e-3, "relative mse {rel}");
    let s = smoothed(&model.loss_curve, 10);
    for w in s.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "smoothed loss rose: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn fnn_constant_target_predicts_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<_> = (0..2000)
        .map(|_| (vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], vec![2.5]))
        .collect();
    let cfg = FnnConfig {
        train: TrainConfig {
            epochs: 100,
            ..Default::default()
        },
        ..Default::default()
    };
    let model = train_fnn_mobility(&data, &cfg).unwrap();
    let (x, _) = split_pairs(&data).unwrap();
    let pred = model.predict_batch(&x).unwrap();
    assert!((pred.mean().unwrap() - 2.5).abs() < 1e-3);
    assert!(pred.iter().all(|y| (y - 2.5).abs() < 1e-2));
}

#[test]
fn fnn_learns_doppler_scaling() {
    let g = MeasurementGrid::default();
    let ratio = 1.2;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sample = |n: usize| -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..n)
            .map(|_| {
                let fd = rng.random_range(-3500.0..3500.0);
                (doppler_ramp(fd, &g), doppler_ramp(ratio * fd, &g))
            })
            .collect()
    };
    let train = sample(3000);
    let cfg = FnnConfig {
        train: TrainConfig {
            epochs: 150,
            learning_rate: 0.003,
            ..Default::default()
        },
        ..Default::default()
    };
    let model = train_fnn_mobility(&train, &cfg).unwrap();
    let mut test_rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let mag = test_rng.random_range(1000.0..3400.0);
        let fd = if test_rng.random_bool(0.5) { mag } else { -mag };
        let out = model.predict(&doppler_ramp(fd, &g)).unwrap();
        let got = doppler_from_ramp(&out, &g).unwrap();
        assert!((got - ratio * fd).abs() < 0.02 * (ratio * fd).abs(), "{fd}: {got}");
    }
}

#[test]
fn empty_dataset_rejected() {
    assert!(train_fnn_mobility(&[], &FnnConfig::default()).is_err());
    assert!(train_vae_crossband(&[], &VaeConfig::default()).is_err());
}

#[test]
fn vae_autoencodes_identity_without_kl() {
    let train = identity_data(4096, 8, 3);
    let test = identity_data(128, 8, 4);
    let cfg = VaeConfig {
        hidden: vec![64, 32],
        latent_dim: 8,
        train: TrainConfig {
            epochs: 100,
            kl_weight: 0.0,
            ..Default::default()
        },
    };
    let model = train_vae_crossband(&train, &cfg).unwrap();
    let (x, _) = split_pairs(&test).unwrap();
    let rel = mse_over_variance(&model.predict_batch(&x).unwrap(), &test);
    assert!(rel < 1e-3, "relative mse {rel}");
}

#[test]
fn vae_overfits_single_pair_and_is_deterministic() {
    let data = vec![(vec![0.3, -1.2, 0.8, 0.1], vec![1.0, 2.0, -0.5])];
    let cfg = VaeConfig {
        hidden: vec![16],
        latent_dim: 4,
        train: TrainConfig {
            epochs: 20000,
            ..Default::default()
        },
    };
    let model = train_vae_crossband(&data, &cfg).unwrap();
    let a = predict_crossband_path(&model, &data[0].0).unwrap();
    let b = predict_crossband_path(&model, &data[0].0).unwrap();
    assert_eq!(a, b);
    let err: f64 = a.iter().zip(&data[0].1).map(|(p, t)| (p - t).powi(2)).sum();
    assert!(err < 1e-6, "{err}");
    let again = train_vae_crossband(&data, &cfg).unwrap();
    assert_eq!(again, model);
}

#[test]
fn models_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = FnnConfig {
        hidden: vec![5],
        train: TrainConfig {
            epochs: 3,
            ..Default::default()
        },
    };
    let fnn = train_fnn_mobility(&identity_data(20, 3, 0), &cfg).unwrap();
    fnn.save(dir.path(), "fnn").unwrap();
    assert_eq!(TrainedFnn::load(dir.path(), "fnn").unwrap(), fnn);
    let vcfg = VaeConfig {
        hidden: vec![6, 4],
        latent_dim: 2,
        train: TrainConfig {
            epochs: 3,
            ..Default::default()
        },
    };
    let vae = train_vae_crossband(&identity_data(20, 3, 0), &vcfg).unwrap();
    vae.save(dir.path(), "vae").unwrap();
    assert_eq!(TrainedVae::load(dir.path(), "vae").unwrap(), vae);
    assert!(TrainedFnn::load(dir.path(), "vae").is_err());
    let mut bytes = std::fs::read(dir.path().join("fnn.csnn")).unwrap();
    bytes.push(0);
    assert!(matches!(read_nets(&bytes[..]), Err(Error::Format(_))));
}
