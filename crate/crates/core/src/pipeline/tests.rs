use super::*;
use crate::chanmodel::{synth_channel, synth_path};
use crate::neural::{train_fnn_mobility, train_vae_crossband, FnnConfig, TrainConfig, VaeConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_grid() -> MeasurementGrid {
    MeasurementGrid::new(8, 8, 2, 50e-6, 960e3, 0.5, 60e9).unwrap()
}

fn random_path<R: Rng>(rng: &mut R) -> PathParams {
    PathParams::new(
        Complex64::from_polar(rng.random_range(0.2..1.5), rng.random_range(-PI..PI)),
        rng.random_range(0.0..5e-7),
        rng.random_range(-0.9..0.9),
        rng.random_range(-3000.0..3000.0),
    )
}

fn random_tensor<R: Rng>(grid: &MeasurementGrid, rng: &mut R) -> ChannelTensor {
    let values = (0..grid.len())
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ChannelTensor::new(0, *grid, values).unwrap()
}

fn max_diff(a: &ChannelTensor, b: &ChannelTensor) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[test]
fn zero_doppler_removal_is_identity() {
    let g = small_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = random_path(&mut rng);
    p.doppler = 0.0;
    let (_, s) = remove_mobility(&p, &g);
    assert!(max_diff(&s, &synth_path(&g, &p)) < 1e-15);
    let t = random_tensor(&g, &mut rng);
    assert_eq!(apply_mobility(&t, 0.0).unwrap(), t);
}

proptest! {
    #[test]
    fn removal_and_application_are_inverse(seed in 0u64..1000) {
        let g = small_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_path(&mut rng);
        let (_, s) = remove_mobility(&p, &g);
        let back = apply_mobility(&s, p.doppler).unwrap();
        prop_assert!(max_diff(&back, &synth_path(&g, &p)) < 1e-12);
        let t = random_tensor(&g, &mut rng);
        let round = remove_mobility_tensor(&apply_mobility(&t, p.doppler).unwrap(), p.doppler);
        prop_assert!(max_diff(&round, &t) < 1e-12);
        // Unit-magnitude modulation keeps the norm.
        let m = apply_mobility(&t, p.doppler).unwrap();
        prop_assert!((m.energy() - t.energy()).abs() < 1e-10 * t.energy());
    }
}

#[test]
fn non_finite_doppler_rejected() {
    let g = small_grid();
    let t = ChannelTensor::zeros(0, g);
    assert!(apply_mobility(&t, f64::NAN).is_err());
}

#[test]
fn sage_static_matches_truth_noiseless() {
    let g = MeasurementGrid::default();
    let paths = [
        PathParams::new(Complex64::from_polar(1.0, 0.3), 1.4e-7, 0.25, 1900.0),
        PathParams::new(Complex64::from_polar(0.5, -1.2), 6.9e-7, -0.4, -2600.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = synth_channel(&g, &paths, 0.0, &mut rng).unwrap();
    let coarse = coarse_estimate(&h, &MusicConfig::default()).unwrap();
    let est = sage_refine(&h, &coarse, &SageConfig::default()).unwrap();
    let (est, _) = align_paths(&est.paths, None);
    for (e, t) in est.iter().zip(&paths) {
        let got = remove_mobility(e, &g).1;
        let want = remove_mobility(t, &g).1;
        assert!(ccne(got.values(), want.values()).unwrap() > 40.0);
    }
}

#[test]
fn alignment_trims_weakest_and_pads() {
    let a = PathParams::new(Complex64::new(1.0, 0.0), 3e-7, 0.0, 0.0);
    let b = PathParams::new(Complex64::new(0.1, 0.0), 1e-7, 0.0, 0.0);
    let c = PathParams::new(Complex64::new(0.5, 0.0), 2e-7, 0.0, 0.0);
    let (k, adj) = align_paths(&[a, b, c], Some(2));
    assert_eq!(k, vec![c, a]);
    assert_eq!(adj, PathCountAdjustment { dropped: 1, zero_filled: 0 });
    let (k, adj) = align_paths(&[a], Some(3));
    assert_eq!(k.len(), 3);
    assert_eq!(adj.zero_filled, 2);
    assert_eq!(k.iter().filter(|p| p.alpha.norm() == 0.0).count(), 2);
}

/// Independent evaluation of the two error terms with explicit loops.
fn lemma_oracle(truth: &[ChannelTensor], pred: &[ChannelTensor], fds: &[f64]) -> (f64, f64) {
    let g = truth[0].grid;
    let per_packet = g.num_subcarriers * g.num_antennas;
    let m = g.len();
    let mut full = vec![Complex64::new(0.0, 0.0); m];
    let mut per = 0.0;
    for l in 0..truth.len() {
        let mut e2 = 0.0;
        for k in 0..m {
            let t = k / per_packet;
            let w = Complex64::from_polar(1.0, 2.0 * PI * fds[l] * t as f64 * g.packet_interval);
            let d = truth[l].values()[k] - pred[l].values()[k];
            e2 += d.norm_sqr();
            full[k] += w * d;
        }
        per += e2.sqrt();
    }
    let full = full.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() / m as f64;
    (full, per / (m * truth.len()) as f64)
}

#[test]
fn lemma_single_path_equality() {
    let g = small_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let p = random_path(&mut rng);
        let truth = remove_mobility(&p, &g).1;
        let pred = &truth + &random_tensor(&g, &mut rng).scale(Complex64::new(0.1, 0.0));
        let r = lemma1_check(&[truth], &[pred], &[p.doppler]).unwrap();
        assert!((r.full_channel_error - r.per_path_error).abs() <= 1e-12 * r.per_path_error);
    }
}

#[test]
fn lemma_matches_oracle_and_triangle_bound() {
    let g = small_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let l = rng.random_range(2..6);
        let paths: Vec<_> = (0..l).map(|_| random_path(&mut rng)).collect();
        let truth: Vec<_> = paths.iter().map(|p| remove_mobility(p, &g).1).collect();
        let pred: Vec<_> = truth
            .iter()
            .map(|t| t + &random_tensor(&g, &mut rng).scale(Complex64::new(rng.random_range(0.0..0.5), 0.0)))
            .collect();
        let fds: Vec<_> = paths.iter().map(|p| p.doppler).collect();
        let r = lemma1_check(&truth, &pred, &fds).unwrap();
        let (full, per) = lemma_oracle(&truth, &pred, &fds);
        assert!((r.full_channel_error - full).abs() <= 1e-12 * full);
        assert!((r.per_path_error - per).abs() <= 1e-12 * per);
        assert!(r.full_channel_error <= l as f64 * r.per_path_error * (1.0 + 1e-12));
    }
}

#[test]
fn lemma_phase_aligned_perturbations_reach_bound() {
    let g = small_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = 3;
    let paths: Vec<_> = (0..l).map(|_| random_path(&mut rng)).collect();
    let fds: Vec<_> = paths.iter().map(|p| p.doppler).collect();
    let truth: Vec<_> = paths.iter().map(|p| remove_mobility(p, &g).1).collect();
    // The same dynamic-domain error for every path, mapped back per path.
    let shared = random_tensor(&g, &mut rng);
    let mut last = 0.0;
    for eps in [0.0, 0.01, 0.1, 0.5, 1.0, 2.0] {
        let pred: Vec<_> = truth
            .iter()
            .zip(&fds)
            .map(|(t, &fd)| t - &remove_mobility_tensor(&shared.scale(Complex64::new(eps, 0.0)), fd))
            .collect();
        let r = lemma1_check(&truth, &pred, &fds).unwrap();
        if eps > 0.0 {
            let bound = l as f64 * r.per_path_error;
            assert!((r.full_channel_error - bound).abs() <= 1e-12 * bound);
        } else {
            assert_eq!(r.full_channel_error, 0.0);
            assert_eq!(r.per_path_error, 0.0);
        }
        assert!(r.full_channel_error >= last - 1e-9);
        last = r.full_channel_error;
    }
}

#[test]
fn lemma_rejects_mismatched_counts() {
    let g = small_grid();
    let t = ChannelTensor::zeros(0, g);
    assert!(lemma1_check(&[t.clone()], &[t.clone(), t.clone()], &[0.0]).is_err());
    assert!(lemma1_check(&[], &[], &[]).is_err());
}

/// Trains small mappers on ground-truth pairs for a fixed delay/angle set.
fn toy_models(source: &MeasurementGrid, target: &MeasurementGrid) -> CrossbandModels {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut statics = Vec::new();
    let mut ramps = Vec::new();
    let mut dynamics = Vec::new();
    let ratio = target.carrier_frequency / source.carrier_frequency;
    for _ in 0..1500 {
        let p = random_path(&mut rng);
        let shift = Complex64::from_polar(1.0, -2.0 * PI * (target.carrier_frequency - source.carrier_frequency) * p.tau);
        let q = PathParams::new(p.alpha * shift, p.tau, p.phi, p.doppler * ratio);
        let pairs = path_training_pairs(&p, &q, source, target).unwrap();
        statics.push(pairs.static_pair);
        ramps.push(pairs.ramp_pair);
        dynamics.push(pairs.dynamic_pair);
    }
    let fast = TrainConfig {
        epochs: 30,
        ..Default::default()
    };
    let vcfg = VaeConfig {
        hidden: vec![64, 32],
        latent_dim: 8,
        train: fast.clone(),
    };
    CrossbandModels {
        mobility: train_fnn_mobility(&ramps, &FnnConfig { hidden: vec![64], train: fast }).unwrap(),
        static_paths: train_vae_crossband(&statics, &vcfg).unwrap(),
        dynamic_paths: Some(train_vae_crossband(&dynamics, &vcfg).unwrap()),
    }
}

#[test]
fn ground_truth_pairs_rebuild_target_band() {
    let source = small_grid();
    let target = source.adjacent_band();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = random_path(&mut rng);
    let shift = Complex64::from_polar(1.0, -2.0 * PI * (target.carrier_frequency - source.carrier_frequency) * p.tau);
    let q = PathParams::new(p.alpha * shift, p.tau, p.phi, p.doppler * 1.001);
    let pairs = path_training_pairs(&p, &q, &source, &target).unwrap();
    let s = static_vector_to_tensor(&pairs.static_pair.1, p.alpha, &target, 1).unwrap();
    assert!(max_diff(&s, &remove_mobility(&q, &target).1) < 1e-12);
    let d = dynamic_vector_to_tensor(&pairs.dynamic_pair.1, p.alpha, &target, 1).unwrap();
    assert!(max_diff(&d, &synth_path(&target, &q)) < 1e-12);
    let fd = doppler_from_ramp(&pairs.ramp_pair.1, &target).unwrap();
    assert!((fd - q.doppler).abs() < 1e-8);
}

#[test]
fn reconstruction_bookkeeping() {
    let source = small_grid();
    let target = source.adjacent_band();
    let models = toy_models(&source, &target);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let paths: Vec<_> = (0..3).map(|_| random_path(&mut rng)).collect();
    let r = reconstruct_from_paths(&paths, &source, &target, &models, true).unwrap();
    // Dynamic prediction is the static prediction re-modulated path by path.
    let mut rebuilt = ChannelTensor::zeros(1, target);
    for (s, fd) in r.per_path_static.iter().zip(&r.predicted_dopplers) {
        rebuilt.accumulate(&apply_mobility(s, *fd).unwrap()).unwrap();
    }
    assert!(max_diff(&rebuilt, &r.dynamic_prediction) < 1e-12);
    let mut static_sum = ChannelTensor::zeros(1, target);
    for s in &r.per_path_static {
        static_sum.accumulate(s).unwrap();
    }
    assert!(max_diff(&static_sum, &r.static_prediction) < 1e-12);
    // Deterministic inference.
    assert_eq!(r, reconstruct_from_paths(&paths, &source, &target, &models, true).unwrap());
    let nr = reconstruct_from_paths(&paths, &source, &target, &models, false).unwrap();
    assert_eq!(nr.per_path_static.len(), 3);
    let without_dynamic = CrossbandModels {
        dynamic_paths: None,
        ..models
    };
    assert!(reconstruct_from_paths(&paths, &source, &target, &without_dynamic, false).is_err());
}

#[test]
fn static_channel_matches_zero_doppler_synthesis() {
    let g = small_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let paths: Vec<_> = (0..3).map(|_| random_path(&mut rng)).collect();
    let still: Vec<_> = paths.iter().map(|p| p.to_static().with_doppler(0.0)).collect();
    let want = synth_channel(&g, &still, 0.0, &mut rng).unwrap();
    let got = static_channel(&g, 4, &paths).unwrap();
    assert_eq!(got.band_id, 4);
    assert!(max_diff(&got, &want) < 1e-12);
    let mut bad = paths[0];
    bad.tau = f64::NAN;
    assert!(static_channel(&g, 0, &[bad]).is_err());
}

#[test]
fn strip_mobility_keeps_the_residual() {
    let g = small_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let paths: Vec<_> = (0..3).map(|_| random_path(&mut rng)).collect();
    let clean = synth_channel(&g, &paths, 0.0, &mut rng).unwrap();
    let noise = random_tensor(&g, &mut rng);
    let measured = &clean + &noise;
    // Exact paths: the output is the static channel plus the untouched noise.
    let stripped = strip_mobility(&measured, &paths).unwrap();
    let want = &static_channel(&g, 0, &paths).unwrap() + &noise;
    assert!(max_diff(&stripped, &want) < 1e-12);
    // Wrong paths leave measured minus dynamic plus static.
    let wrong: Vec<_> = (0..2).map(|_| random_path(&mut rng)).collect();
    let got = strip_mobility(&measured, &wrong).unwrap();
    let mut want = measured.clone();
    for p in &wrong {
        want = &(&want - &synth_path(&g, p)) + &remove_mobility(p, &g).1;
    }
    assert!(max_diff(&got, &want) < 1e-12);
}
