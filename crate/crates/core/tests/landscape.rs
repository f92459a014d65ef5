use critic_landscape::env::{CartPoleConfig, EnvConfig};
use critic_landscape::landscape::{
    critic_match_loss, default_grid_ranges, evaluate_grid, pca_basis, project_path, quantile_sorted, read_grid_csv,
    read_path_csv, symmetric_axis, write_grid_csv, write_path_csv, LandscapeGrid, PcaBasis, ProjectedPath,
};
use critic_landscape::nn::{Activation, MlpSpec, ParamVector};
use critic_landscape::replay::{stream_rng, Transition};
use critic_landscape::sac::{train_sac, SacConfig};
use critic_landscape::snapshot::{freeze_targets, FrozenTargetSet, ProbeBatch, ProbeSource, SnapshotRecorder, Stage};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn pv(values: Vec<f64>) -> ParamVector {
    ParamVector { values, spec_hash: 0 }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; columns of the
/// returned matrix are eigenvectors.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Top-2 eigenvectors of the sample covariance matrix.
fn covariance_top2(snaps: &[Vec<f64>]) -> [Vec<f64>; 2] {
    let (m, d) = (snaps.len(), snaps[0].len());
    let mean: Vec<f64> = (0..d).map(|k| snaps.iter().map(|s| s[k]).sum::<f64>() / m as f64).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| snaps.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).sum::<f64>() / (m - 1) as f64).collect())
        .collect();
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let col = |k: usize| (0..d).map(|i| vecs[i][order[k]]).collect::<Vec<f64>>();
    [col(0), col(1)]
}

/// Sine of the largest principal angle between span{u1,u2} and span{v1,v2}.
fn max_principal_sine(u: [&[f64]; 2], v: &[Vec<f64>; 2]) -> f64 {
    let resid: Vec<Vec<f64>> = v
        .iter()
        .map(|x| {
            let (c1, c2) = (dot(x, u[0]), dot(x, u[1]));
            x.iter().zip(u[0].iter().zip(u[1])).map(|(xi, (a, b))| xi - c1 * a - c2 * b).collect()
        })
        .collect();
    let g = [
        [dot(&resid[0], &resid[0]), dot(&resid[0], &resid[1])],
        [dot(&resid[1], &resid[0]), dot(&resid[1], &resid[1])],
    ];
    let mean = 0.5 * (g[0][0] + g[1][1]);
    let r = (0.5 * (g[0][0] - g[1][1])).hypot(g[0][1]);
    (mean + r).max(0.0).sqrt()
}

fn random_snapshots(seed: u64, m: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0);
    let scales = [6.0, 2.5, 0.8, 0.3, 0.1];
    let axes: Vec<Vec<f64>> = (0..scales.len()).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let offset: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    (0..m)
        .map(|_| {
            let mut x = offset.clone();
            for (axis, s) in axes.iter().zip(scales) {
                let z: f64 = rng.sample(StandardNormal);
                x.iter_mut().zip(axis).for_each(|(a, b)| *a += s * z * b);
            }
            x
        })
        .collect()
}

#[test]
fn pca_matches_covariance_eigenvectors() {
    for seed in 0..30 {
        let d = 6 + (seed as usize % 20);
        let m = 8 + (seed as usize % 12);
        let snaps = random_snapshots(seed, m, d);
        let pvs: Vec<ParamVector> = snaps.iter().cloned().map(pv).collect();
        let refs: Vec<&ParamVector> = pvs.iter().collect();
        let basis = pca_basis(&refs, refs.last().unwrap()).unwrap();
        let oracle = covariance_top2(&snaps);
        let sin = max_principal_sine([&basis.delta.values, &basis.eta.values], &oracle);
        assert!(sin < 1e-8, "seed {seed}: sin {sin:e}");
        assert!(dot(&basis.delta.values, &basis.eta.values).abs() < 1e-10);
        assert!((basis.delta.norm() - 1.0).abs() < 1e-12);
        assert!((basis.eta.norm() - 1.0).abs() < 1e-12);
        let [r1, r2] = basis.variance_ratios;
        assert!(r1 >= r2 && r2 >= 0.0 && r1 + r2 <= 1.0 + 1e-12);
        assert!(!basis.degenerate);
    }
}

#[test]
fn pca_of_collinear_snapshots_is_rank_one() {
    let w0 = vec![0.5, -1.0, 2.0, 0.0];
    let v = vec![-1.0, 2.0, 0.5, 1.0];
    let snaps: Vec<ParamVector> = (0..6)
        .map(|t| pv(w0.iter().zip(&v).map(|(a, b)| a + t as f64 * b).collect()))
        .collect();
    let refs: Vec<&ParamVector> = snaps.iter().collect();
    let basis = pca_basis(&refs, &snaps[5]).unwrap();
    let vn = dot(&v, &v).sqrt();
    assert!((dot(&basis.delta.values, &v).abs() / vn - 1.0).abs() < 1e-12);
    assert!((basis.variance_ratios[0] - 1.0).abs() < 1e-12);
    assert!(basis.degenerate);
    assert!(dot(&basis.delta.values, &basis.eta.values).abs() < 1e-12);
    assert!((basis.eta.norm() - 1.0).abs() < 1e-12);
    // Sign convention: first significant coordinate is positive.
    let first = basis.delta.values.iter().find(|x| x.abs() > 1e-9).unwrap();
    assert!(*first > 0.0);
}

#[test]
fn pca_rejects_too_few_snapshots() {
    let a = pv(vec![1.0, 2.0]);
    assert!(pca_basis(&[&a, &a], &a).is_err());
}

fn plane_basis() -> PcaBasis {
    let s = 0.5f64.sqrt();
    PcaBasis {
        center: pv(vec![1.0, 2.0, 3.0]),
        delta: pv(vec![s, s, 0.0]),
        eta: pv(vec![0.0, 0.0, 1.0]),
        variance_ratios: [0.7, 0.3],
        degenerate: false,
    }
}

#[test]
fn path_projection_recovers_plane_coordinates() {
    let b = plane_basis();
    let w = b.reconstruct(2.0, -3.0);
    let p = project_path(&[&b.center, &w], &[0, 10], &b).unwrap();
    assert_eq!(p.points[0], (0.0, 0.0));
    assert!((p.points[1].0 - 2.0).abs() < 1e-12 && (p.points[1].1 + 3.0).abs() < 1e-12);

    let spiral: Vec<(f64, f64)> = (0..40)
        .map(|k| {
            let t = k as f64 * 0.3;
            (0.1 * t * t.cos(), 0.1 * t * t.sin())
        })
        .collect();
    let ws: Vec<ParamVector> = spiral.iter().map(|&(a, c)| b.reconstruct(a, c)).collect();
    let refs: Vec<&ParamVector> = ws.iter().collect();
    let steps: Vec<u64> = (0..40).collect();
    let p = project_path(&refs, &steps, &b).unwrap();
    for (got, want) in p.points.iter().zip(&spiral) {
        assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
    }
}

#[test]
fn reconstruction_is_linear_and_exact_at_center() {
    let b = plane_basis();
    assert_eq!(b.reconstruct(0.0, 0.0), b.center);
    for (a, c) in [(0.3, -1.7), (-2.0, 0.25), (1e-3, 5.0)] {
        let w = b.reconstruct(a, c);
        for k in 0..3 {
            let lin = a * b.delta.values[k] + c * b.eta.values[k];
            let diff = w.values[k] - b.center.values[k];
            assert!((diff - lin).abs() <= 4.0 * f64::EPSILON * b.center.values[k].abs().max(1.0), "{diff} vs {lin}");
        }
    }
}

#[test]
fn grid_ranges_cover_the_path() {
    let p = ProjectedPath {
        steps: vec![0, 1, 2],
        points: vec![(-1.0, 0.5), (1.0, -1.0), (0.2, 1.0)],
    };
    let (a, b) = default_grid_ranges(&p, 1.2, 51).unwrap();
    assert_eq!(a.len(), 51);
    assert!((a[0] + 1.2).abs() < 1e-15 && (a[50] - 1.2).abs() < 1e-15);
    assert!((b[50] - 1.2).abs() < 1e-15);
    assert_eq!(a[25], 0.0);
    let rev: Vec<f64> = a.iter().rev().map(|x| -x).collect();
    assert_eq!(rev, a);

    let flat = ProjectedPath {
        steps: vec![0],
        points: vec![(0.0, 0.0)],
    };
    let (a, b) = default_grid_ranges(&flat, 1.2, 11).unwrap();
    assert_eq!((a[0], a[10], b[0], b[10]), (-1.0, 1.0, -1.0, 1.0));
    assert!(default_grid_ranges(&flat, 1.2, 12).is_err());
    assert!(default_grid_ranges(&flat, 1.2, 9).is_err());
}

/// Probe with one `(s, a)` row and a linear critic `Q = w·[s, a] + b`.
fn linear_setup() -> (MlpSpec, PcaBasis, ProbeBatch, FrozenTargetSet) {
    let spec = MlpSpec::new(vec![2, 1], vec![Activation::Identity]).unwrap();
    let hash = spec.spec_hash();
    let probe = ProbeBatch::new(
        "synthetic",
        ProbeSource::ReplaySample,
        0,
        vec![Transition {
            s: vec![0.5],
            a: vec![-2.0],
            r: 0.0,
            s_next: vec![0.0],
            terminated: true,
            truncated: false,
        }],
    )
    .unwrap();
    let targets = FrozenTargetSet {
        y: vec![1.5],
        policy_step: 0,
        seed: 0,
        probe_digest: probe.digest(),
    };
    let p = |v: Vec<f64>| ParamVector { values: v, spec_hash: hash };
    let basis = PcaBasis {
        center: p(vec![0.3, -0.4, 0.1]),
        delta: p(vec![0.6, 0.0, 0.8]),
        eta: p(vec![0.0, 1.0, 0.0]),
        variance_ratios: [0.9, 0.1],
        degenerate: false,
    };
    (spec, basis, probe, targets)
}

#[test]
fn linear_critic_gives_closed_form_quadratic() {
    let (spec, basis, probe, targets) = linear_setup();
    let axis = symmetric_axis(2.0, 21).unwrap();
    let g = evaluate_grid(&basis, &probe, &targets, &spec, &axis, &axis).unwrap();
    // x̃ = (s, a, 1): Q0 = 0.15 + 0.8 + 0.1, slope along δ = 0.3 + 0.8, along η = −2.
    let (q0, p, q, y) = (1.05, 1.1, -2.0, 1.5);
    for (i, a) in axis.iter().enumerate() {
        for (j, b) in axis.iter().enumerate() {
            let want = (q0 - y + a * p + b * q).powi(2);
            assert!((g.l[g.index(i, j)] - want).abs() < 1e-12, "{a},{b}");
        }
    }
    assert!((g.l_star - (q0 - y).powi(2)).abs() < 1e-15);
}

#[test]
fn center_is_exact_and_sweeps_are_bit_identical() {
    let (spec, basis, probe, targets) = linear_setup();
    let axis = symmetric_axis(1.0, 31).unwrap();
    let g1 = evaluate_grid(&basis, &probe, &targets, &spec, &axis, &axis).unwrap();
    let g2 = evaluate_grid(&basis, &probe, &targets, &spec, &axis, &axis).unwrap();
    assert_eq!(g1, g2);
    let (i0, j0) = g1.center_index().unwrap();
    assert_eq!(g1.delta_l[g1.index(i0, j0)], 0.0);
    let sa = probe.to_batch().state_actions();
    assert_eq!(g1.l_star, critic_match_loss(&spec, &basis.center.values, &sa, &targets.y).unwrap());
    for (i, a) in axis.iter().enumerate().step_by(7) {
        for (j, b) in axis.iter().enumerate().step_by(5) {
            let w = basis.reconstruct(*a, *b);
            assert_eq!(g1.l[g1.index(i, j)], critic_match_loss(&spec, &w.values, &sa, &targets.y).unwrap());
        }
    }
}

#[test]
fn grid_rejects_mismatched_inputs() {
    let (spec, basis, probe, mut targets) = linear_setup();
    let axis = symmetric_axis(1.0, 11).unwrap();
    let shifted: Vec<f64> = axis.iter().map(|x| x + 0.05).collect();
    assert!(evaluate_grid(&basis, &probe, &targets, &spec, &shifted, &axis).is_err());
    let rev: Vec<f64> = axis.iter().rev().copied().collect();
    assert!(evaluate_grid(&basis, &probe, &targets, &spec, &rev, &axis).is_err());
    targets.probe_digest[0] ^= 1;
    assert!(evaluate_grid(&basis, &probe, &targets, &spec, &axis, &axis).is_err());
}

#[test]
fn normalisation_uses_iqr_with_flat_fallback() {
    let axis = vec![-1.0, 0.0, 1.0];
    let l: Vec<f64> = (0..9).map(|k| k as f64).collect();
    let g = LandscapeGrid::from_losses(axis.clone(), axis.clone(), l, 4.0).unwrap();
    assert_eq!(g.delta_l[4], 0.0);
    assert_eq!(g.iqr, 4.0);
    assert!(!g.iqr_fallback);
    assert_eq!(g.l_tilde[8], 1.0);

    let mut spike = vec![2.0; 9];
    spike[0] = 6.0;
    let g = LandscapeGrid::from_losses(axis.clone(), axis.clone(), spike, 2.0).unwrap();
    assert!(g.iqr_fallback);
    assert_eq!(g.normalizer, 4.0);
    assert_eq!(g.l_tilde[0], 1.0);

    let g = LandscapeGrid::from_losses(axis.clone(), axis.clone(), vec![3.0; 9], 3.0).unwrap();
    assert!(g.iqr_fallback);
    assert!(g.l_tilde.iter().all(|v| *v == 0.0));

    let mut holes: Vec<f64> = (0..9).map(|k| k as f64).collect();
    holes[2] = f64::NAN;
    holes[6] = f64::INFINITY;
    let g = LandscapeGrid::from_losses(axis.clone(), axis, holes, 4.0).unwrap();
    assert_eq!(g.non_finite_cells, 2);
    assert!(g.iqr.is_finite());
}

fn oracle_quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (v.len() - 1) as f64;
    let below = v[pos as usize];
    let above = v[(pos as usize + 1).min(v.len() - 1)];
    below * (1.0 - pos.fract()) + above * pos.fract()
}

proptest! {
    #[test]
    fn quartiles_match_sorting_oracle(xs in prop::collection::vec(-1e3..1e3f64, 1..200)) {
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let n = xs.len();
        for p in [0.25, 0.75] {
            let q = quantile_sorted(&sorted, p);
            prop_assert!((q - oracle_quantile(&xs, p)).abs() <= 1e-12 * q.abs().max(1.0));
            let h = (n - 1) as f64 * p;
            let le = xs.iter().filter(|x| **x <= q).count();
            let lt = xs.iter().filter(|x| **x < q).count();
            prop_assert!(le > h.floor() as usize);
            prop_assert!(lt <= h.ceil() as usize);
        }
    }
}

#[test]
fn grid_and_path_csv_roundtrip() {
    let (spec, basis, probe, targets) = linear_setup();
    let axis = symmetric_axis(1.0, 11).unwrap();
    let g = evaluate_grid(&basis, &probe, &targets, &spec, &axis, &axis).unwrap();
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, &g).unwrap();
    let back = read_grid_csv(buf.as_slice()).unwrap();
    assert_eq!(back.l, g.l);
    assert_eq!(back.l_tilde, g.l_tilde);
    assert_eq!(back.alphas, g.alphas);
    assert!((back.l_star - g.l_star).abs() < 1e-15);
    assert_eq!(back.iqr, g.iqr);

    let path = ProjectedPath {
        steps: vec![0, 5000],
        points: vec![(0.25, -1.5), (0.0, 0.0)],
    };
    let mut pb = Vec::new();
    write_path_csv(&mut pb, &path).unwrap();
    assert_eq!(read_path_csv(pb.as_slice()).unwrap(), path);

    assert!(read_grid_csv("alpha,beta\n1,2\n".as_bytes()).is_err());
    assert!(read_grid_csv("alpha,beta,L,delta_L,L_tilde\n0,0,x,1,1\n".as_bytes()).is_err());
    assert!(read_path_csv("step,alpha,beta\n1,2\n".as_bytes()).is_err());
}

#[test]
fn trained_critic_landscape_end_to_end() {
    let config = SacConfig {
        actor_hidden: vec![8],
        critic_hidden: vec![8],
        batch_size: 8,
        buffer_capacity: 500,
        learning_starts: 20,
        total_steps: 200,
        eval_interval: 1000,
        seed: 2,
        ..Default::default()
    };
    let mut rec = SnapshotRecorder::new("cartpole", 0.02, 40, Some(200), 16, 0).unwrap();
    train_sac(&EnvConfig::Cartpole(CartPoleConfig::default()), &config, &mut rec).unwrap();
    let log = rec.into_log().unwrap();
    let fin = log.select(Stage::Final).unwrap();
    let basis = pca_basis(&log.critic_trajectory(), &fin.critic1).unwrap();
    let path = project_path(&log.critic_trajectory(), &log.steps(), &basis).unwrap();
    assert_eq!(path.points.len(), log.len());
    assert_eq!(*path.points.last().unwrap(), (0.0, 0.0));
    let probe = fin.probe.clone().unwrap();
    let targets = freeze_targets(&log.meta, fin, &probe, log.meta.gamma, 0).unwrap();
    let (a, b) = default_grid_ranges(&path, 1.2, 11).unwrap();
    let before = (probe.digest(), targets.digest());
    let g = evaluate_grid(&basis, &probe, &targets, &log.meta.critic_spec, &a, &b).unwrap();
    assert_eq!((probe.digest(), targets.digest()), before);
    let (i0, j0) = g.center_index().unwrap();
    assert_eq!(g.delta_l[g.index(i0, j0)], 0.0);
    assert_eq!(g.non_finite_cells, 0);
}
