use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxsr::linear_sr::{fit_volumes, LinearSrModel, Phase};
use voxsr::upsample::{upsample, Interp};
use voxsr::{Dims, Volume};

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i - 1 } else if i >= n { 2 * n - i - 1 } else { i };
    j as usize
}

/// Row-major `(dz, dy, dx)` neighbourhood in integer units.
fn neighbourhood(v: &Volume, z: usize, y: usize, x: usize, k: usize) -> Vec<i64> {
    let d = v.dims();
    let h = (k / 2) as isize;
    let mut out = Vec::with_capacity(k * k * k);
    for dz in -h..=h {
        for dy in -h..=h {
            for dx in -h..=h {
                out.push(v.get(
                    reflect(z as isize + dz, d.z),
                    reflect(y as isize + dy, d.y),
                    reflect(x as isize + dx, d.x),
                ) as i64);
            }
        }
    }
    out
}

fn phase_offset(p: usize, s: usize) -> [usize; 3] {
    [p / (s * s), (p / s) % s, p % s]
}

/// HR from integer per-phase kernels, so every target is an exact `u16`.
fn synthesize(lr: &Volume, s: usize, k: usize, kernels: &[(Vec<i64>, i64)]) -> Volume {
    let d = lr.dims();
    let hd = d.scaled(s);
    let mut hr = Volume::zeros(hd, [1.0; 3]);
    for z in 0..d.z {
        for y in 0..d.y {
            for x in 0..d.x {
                let n = neighbourhood(lr, z, y, x, k);
                for (p, (w, b)) in kernels.iter().enumerate() {
                    let v: i64 = w.iter().zip(&n).map(|(a, c)| a * c).sum::<i64>() + b;
                    let [pz, py, px] = phase_offset(p, s);
                    let i = hd.index(s * z + pz, s * y + py, s * x + px);
                    hr.data_mut()[i] = u16::try_from(v).expect("kernel output in range");
                }
            }
        }
    }
    hr
}

fn lstsq_oracle(lrs: &[Volume], hrs: &[Volume], s: usize, k: usize, phase: usize) -> Vec<f64> {
    let m = k * k * k;
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    let [pz, py, px] = phase_offset(phase, s);
    for (lr, hr) in lrs.iter().zip(hrs) {
        let d = lr.dims();
        for z in 0..d.z {
            for y in 0..d.y {
                for x in 0..d.x {
                    rows.extend(neighbourhood(lr, z, y, x, k).iter().map(|&v| v as f64 / 65535.0));
                    rows.push(1.0);
                    ys.push(hr.get(s * z + pz, s * y + py, s * x + px) as f64 / 65535.0);
                }
            }
        }
    }
    let g = DMatrix::from_row_slice(ys.len(), m + 1, &rows);
    let sol = g.svd(true, true).solve(&DVector::from_vec(ys), 1e-12).unwrap();
    sol.iter().copied().collect()
}

#[test]
fn known_integer_kernel_is_recovered_and_matches_lstsq() {
    let (s, k) = (2, 3);
    let m = k * k * k;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let kernels: Vec<(Vec<i64>, i64)> = (0..s * s * s)
        .map(|_| {
            let mut w = vec![0i64; m];
            let taps = rand::seq::index::sample(&mut rng, m, 3).into_vec();
            w[taps[0]] += 1;
            w[taps[1]] += 1;
            w[taps[2]] -= 1;
            (w, rng.random_range(0..500))
        })
        .collect();
    let lrs: Vec<Volume> = (0..3)
        .map(|_| Volume::from_fn(Dims::cube(6), [2.0; 3], |_, _, _| rng.random_range(10_000..20_000)))
        .collect();
    let hrs: Vec<Volume> = lrs.iter().map(|lr| synthesize(lr, s, k, &kernels)).collect();

    let model = fit_volumes::<f64>(lrs.iter().zip(&hrs), s, k, 0.0).unwrap();
    for (p, (phase, (w, b))) in model.phases.iter().zip(&kernels).enumerate() {
        for (got, &want) in phase.weights.iter().zip(w) {
            assert!((got - want as f64).abs() < 1e-6, "phase {p}: {got} vs {want}");
        }
        assert!((phase.bias - *b as f64 / 65535.0).abs() < 1e-6);
        let oracle = lstsq_oracle(&lrs, &hrs, s, k, p);
        for (got, want) in phase.weights.iter().chain([&phase.bias]).zip(&oracle) {
            assert!((got - want).abs() < 1e-6, "phase {p}: {got} vs oracle {want}");
        }
    }
}

#[test]
fn ridge_matches_augmented_lstsq_and_raises_the_residual() {
    let (s, k, lambda) = (2, 3, 0.05);
    let m = k * k * k;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lrs: Vec<Volume> = (0..2)
        .map(|_| Volume::from_fn(Dims::cube(6), [2.0; 3], |_, _, _| rng.random()))
        .collect();
    let hrs: Vec<Volume> = lrs
        .iter()
        .map(|lr| Volume::from_fn(lr.dims().scaled(s), [1.0; 3], |_, _, _| rng.random()))
        .collect();
    let plain = fit_volumes::<f64>(lrs.iter().zip(&hrs), s, k, 0.0).unwrap();
    let ridge = fit_volumes::<f64>(lrs.iter().zip(&hrs), s, k, lambda).unwrap();

    // Ridge as ordinary least squares with √λ rows penalizing each weight but not the bias.
    let [pz, py, px] = phase_offset(0, s);
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for (lr, hr) in lrs.iter().zip(&hrs) {
        let d = lr.dims();
        for z in 0..d.z {
            for y in 0..d.y {
                for x in 0..d.x {
                    rows.extend(neighbourhood(lr, z, y, x, k).iter().map(|&v| v as f64 / 65535.0));
                    rows.push(1.0);
                    ys.push(hr.get(s * z + pz, s * y + py, s * x + px) as f64 / 65535.0);
                }
            }
        }
    }
    for i in 0..m {
        let mut r = vec![0.0; m + 1];
        r[i] = lambda.sqrt();
        rows.extend(r);
        ys.push(0.0);
    }
    let g = DMatrix::from_row_slice(ys.len(), m + 1, &rows);
    let oracle = g.svd(true, true).solve(&DVector::from_vec(ys), 1e-12).unwrap();
    let got = &ridge.phases[0];
    for (a, b) in got.weights.iter().chain([&got.bias]).zip(oracle.iter()) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    for (r0, r1) in plain.stats.residual_norm.iter().zip(&ridge.stats.residual_norm) {
        assert!(r0 <= r1, "unregularized residual {r0} exceeds ridge residual {r1}");
    }
}

#[test]
fn apply_matches_per_voxel_oracle() {
    let (s, k) = (2, 3);
    let m = k * k * k;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = LinearSrModel::<f64> {
        scale: s,
        k,
        lambda: 0.0,
        phases: (0..s * s * s)
            .map(|_| Phase {
                weights: (0..m).map(|_| rng.random_range(-0.1..0.15)).collect(),
                bias: rng.random_range(0.0..0.2),
            })
            .collect(),
        stats: Default::default(),
    };
    let lr = Volume::from_fn(Dims::cube(8), [2.0; 3], |_, _, _| rng.random());
    let out = model.apply(&lr).unwrap();
    assert_eq!(out.dims(), Dims::cube(16));
    for z in 0..8 {
        for y in 0..8 {
            for x in 0..8 {
                let n = neighbourhood(&lr, z, y, x, k);
                for (p, phase) in model.phases.iter().enumerate() {
                    let v: f64 = phase.weights.iter().zip(&n).map(|(w, &c)| w * c as f64 / 65535.0).sum::<f64>()
                        + phase.bias;
                    let want = (v * 65535.0).clamp(0.0, 65535.0);
                    let [pz, py, px] = phase_offset(p, s);
                    let got = out.get(2 * z + pz, 2 * y + py, 2 * x + px) as f64;
                    assert!((got - want).abs() <= 0.5 + 1e-6, "({z},{y},{x}) phase {p}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn delta_and_constant_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let lr = Volume::from_fn(Dims::new(5, 6, 7), [4.0; 3], |_, _, _| rng.random());
    let delta = LinearSrModel::<f64>::delta(4, 5).unwrap();
    assert_eq!(delta.apply(&lr).unwrap().data(), upsample(&lr, 4, Interp::Nearest).unwrap().data());

    let mut constant = LinearSrModel::<f64>::delta(2, 3).unwrap();
    for p in &mut constant.phases {
        p.weights.iter_mut().for_each(|w| *w = 0.0);
        p.bias = 1234.0 / 65535.0;
    }
    assert!(constant.apply(&lr).unwrap().data().iter().all(|&v| v == 1234));
}
