use fisheripm::oracle::integrate;
use fisheripm::ssl::toy_classes;
use fisheripm::{Distribution, DistributionSpec, QuadratureConfig};

fn specs() -> Vec<DistributionSpec> {
    vec![
        DistributionSpec::gaussian(vec![0.5], 2.0),
        DistributionSpec::gaussian(vec![1.0, -1.0], 0.5),
        DistributionSpec::ring(8, 2.0, 0.2),
        DistributionSpec::uniform(vec![-1.0, 0.0], vec![2.0, 0.5]),
        toy_classes(3, 3.0, 1.0),
    ]
}

#[test]
fn densities_integrate_to_one() {
    let quad = QuadratureConfig::default();
    for spec in specs() {
        let d = Distribution::new(spec.clone()).unwrap();
        let mass = integrate(&d, &d, &quad, |x| d.density(x)).unwrap().value;
        assert!((mass - 1.0).abs() < 1e-6, "{spec:?}: mass {mass}");
    }
}

#[test]
fn sample_moments_match_analytic_moments() {
    for spec in specs() {
        let d = Distribution::new(spec.clone()).unwrap();
        let dim = d.dim();
        let n = 200_000;
        let x = d.sample(n, 3);
        let mean = d.mean();
        let cov = d.covariance();
        for i in 0..dim {
            let m = x.column(i).mean().unwrap();
            let sd = cov[i * dim + i].sqrt();
            assert!(
                (m - mean[i]).abs() < 5.0 * sd / (n as f64).sqrt(),
                "{spec:?} axis {i}: {m} vs {}",
                mean[i]
            );
            let var = x.column(i).mapv(|v| (v - m).powi(2)).mean().unwrap();
            assert!(
                (var / cov[i * dim + i] - 1.0).abs() < 0.02,
                "{spec:?} axis {i}: var {var}"
            );
        }
    }
}

#[test]
fn sampling_is_reproducible() {
    let d = Distribution::new(DistributionSpec::ring(8, 2.0, 0.2)).unwrap();
    assert_eq!(d.sample(100, 9), d.sample(100, 9));
    assert_ne!(d.sample(100, 9), d.sample(100, 10));
}

#[test]
fn spec_round_trips_through_json() {
    for spec in specs() {
        let json = serde_json::to_string(&spec).unwrap();
        let back: DistributionSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
