use super::*;
use crate::features::FeatureKind;
use rayon::prelude::*;

struct Scene {
    fs: FeatureSet,
    model: ArmModel,
    deformer: DeformationOperator,
    xi: Trajectory,
}

impl Scene {
    fn ctx(&self) -> PushContext<'_> {
        PushContext {
            fs: &self.fs,
            model: &self.model,
            deformer: &self.deformer,
            sampler: SamplerConfig::default(),
        }
    }
}

fn scene() -> Scene {
    Scene {
        fs: FeatureSet::standard(0.1, [0.7, 0.5], 1.2),
        model: ArmModel::new(vec![0.5, 0.4, 0.3], [0.0, 0.0]).unwrap(),
        deformer: DeformationOperator::new(20, 3, 0.1, 0.1).unwrap(),
        xi: Trajectory::straight_line(&[0.2, 0.9, 0.3], &[1.3, 0.5, -0.2], 20, 0.1).unwrap(),
    }
}

#[test]
fn indifferent_human_does_not_push() {
    let s = scene();
    let mut h = SimHuman::new(vec![0.0; 3], f64::INFINITY, 1e-4, 1).unwrap();
    let u = h.sample_correction(s.ctx(), &s.xi, 9).unwrap();
    assert!(u.torque.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn optimal_push_is_stationary() {
    let s = scene();
    let theta = [30.0, -30.0, 5.0];
    let cost = PushCost::new(s.ctx(), &s.xi, 8, &theta, 1e-4).unwrap();
    let u = cost.optimal_push().unwrap();
    let mut g = [0.0; 3];
    cost.value_and_gradient(&u, &mut g);
    assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
    assert!(cost.value(&u) <= cost.value(&[0.0; 3]));
}

#[test]
fn gradient_matches_finite_differences() {
    let s = scene();
    let theta = [3.0, -2.0, 1.0];
    let cost = PushCost::new(s.ctx(), &s.xi, 11, &theta, 1e-3).unwrap();
    let u = [35.0, -60.0, 10.0];
    let mut g = [0.0; 3];
    cost.value_and_gradient(&u, &mut g);
    for j in 0..3 {
        let mut up = u;
        let mut dn = u;
        up[j] += 1e-4;
        dn[j] -= 1e-4;
        let fd = (cost.value(&up) - cost.value(&dn)) / 2e-4;
        assert!((g[j] - fd).abs() < 1e-7, "{} vs {}", g[j], fd);
    }
}

#[test]
fn same_seed_same_pushes() {
    let s = scene();
    let mut a = SimHuman::new(vec![20.0, 0.0, 0.0], 0.5, 1e-4, 42).unwrap();
    let mut b = a.clone();
    b.reset();
    a.reset();
    for index in [5, 9, 13] {
        let ua = a.sample_correction(s.ctx(), &s.xi, index).unwrap();
        let ub = b.sample_correction(s.ctx(), &s.xi, index).unwrap();
        assert_eq!(ua, ub);
    }
    let mut c = SimHuman::new(vec![20.0, 0.0, 0.0], 0.5, 1e-4, 43).unwrap();
    let uc = c.sample_correction(s.ctx(), &s.xi, 5).unwrap();
    a.reset();
    assert_ne!(a.sample_correction(s.ctx(), &s.xi, 5).unwrap(), uc);
}

#[test]
fn factories_check_the_mask() {
    let s = scene();
    let r = SimHuman::relevant(&s.fs, "table", 20.0, 1.0, 1e-4, 0).unwrap();
    assert_eq!(r.theta, vec![20.0, 0.0, 0.0]);
    let i = SimHuman::irrelevant(&s.fs, "human", -20.0, 1.0, 1e-4, 0).unwrap();
    assert_eq!(i.theta, vec![0.0, -20.0, 0.0]);
    assert!(matches!(SimHuman::relevant(&s.fs, "human", 1.0, 1.0, 1e-4, 0), Err(Error::Config(_))));
    assert!(matches!(SimHuman::irrelevant(&s.fs, "table", 1.0, 1.0, 1e-4, 0), Err(Error::Config(_))));
    assert!(matches!(SimHuman::relevant(&s.fs, "lamp", 1.0, 1.0, 1e-4, 0), Err(Error::UnknownFeature(_))));
    assert!(SimHuman::new(vec![0.0; 3], 0.0, 1e-4, 0).is_err());
    assert!(SimHuman::new(vec![0.0; 3], 1.0, 0.0, 0).is_err());
}

#[test]
fn push_rejects_endpoints() {
    let s = scene();
    let mut h = SimHuman::new(vec![1.0, 0.0, 0.0], 1.0, 1e-4, 0).unwrap();
    assert!(matches!(
        h.sample_correction(s.ctx(), &s.xi, 20),
        Err(Error::CorrectionPlacement { .. })
    ));
}

#[test]
fn sharper_humans_push_closer_to_optimal() {
    let s = scene();
    let theta = vec![30.0, 0.0, 0.0];
    let cost = PushCost::new(s.ctx(), &s.xi, 10, &theta, 1e-4).unwrap();
    let opt = cost.optimal_push().unwrap();
    let dist = |beta: f64| -> f64 {
        (0..50u64)
            .map(|seed| {
                let mut h = SimHuman::new(theta.clone(), beta, 1e-4, seed).unwrap();
                let u = h.sample_correction(s.ctx(), &s.xi, 10).unwrap();
                u.torque.iter().zip(&opt).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum()
    };
    assert!(dist(1e4) < dist(10.0));
}

#[test]
fn single_joint_sampler_matches_quadrature() {
    let model = ArmModel::new(vec![1.0], [0.0, 0.0]).unwrap();
    let fs = FeatureSet::new(vec![FeatureKind::Table], vec![true], -0.4, [0.0, 0.0], 0.0).unwrap();
    let deformer = DeformationOperator::new(10, 1, 0.1, 0.1).unwrap();
    let xi = Trajectory::straight_line(&[0.5], &[0.1], 10, 0.1).unwrap();
    let ctx = PushContext {
        fs: &fs,
        model: &model,
        deformer: &deformer,
        sampler: SamplerConfig::default(),
    };
    let theta = [2.0];
    let (beta, lambda_h) = (0.5, 1e-4);
    let cost = PushCost::new(ctx, &xi, 4, &theta, lambda_h).unwrap();
    // E[u] under exp(-beta C(u)) by dense quadrature
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    let c0 = cost.value(&cost.optimal_push().unwrap());
    let mut u = -2000.0;
    while u <= 2000.0 {
        let w = (-beta * (cost.value(&[u]) - c0)).exp();
        z += w;
        m1 += w * u;
        m2 += w * u * u;
        u += 0.05;
    }
    let mean = m1 / z;
    let sd = (m2 / z - mean * mean).sqrt();
    let draws: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|seed| {
            let mut h = SimHuman::new(theta.to_vec(), beta, lambda_h, seed).unwrap();
            h.sample_correction(ctx, &xi, 4).unwrap().torque[0]
        })
        .collect();
    let n = draws.len() as f64;
    let sample_mean = draws.iter().sum::<f64>() / n;
    let se = sd / n.sqrt();
    assert!(
        (sample_mean - mean).abs() < 3.0 * se,
        "sampled {sample_mean} quadrature {mean} se {se}"
    );
}
