mod common;

use glam::DVec3;
use grainlight::geometry::Aabb;
use grainlight::optics::{BinnedOptics, OpticsSettings};
use grainlight::particles::{
    estimate_local_psd, generate_cloud, global_bulk_properties, sample_radius, OpticsProvider, ParticleCloud,
    ParticleRecord, SizeDistribution,
};
use grainlight::scatter::{HybridPolicy, PhaseEvaluator, Sphere};
use grainlight::ComplexValue;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use common::sphere_integral;

fn unit_box() -> Aabb {
    Aabb::new(DVec3::ZERO, DVec3::ONE)
}

// Mean and standard deviation of N(mu, s) truncated to [a, b].
fn truncated_normal_moments(mu: f64, s: f64, a: f64, b: f64) -> (f64, f64) {
    let n = Normal::new(0.0, 1.0).unwrap();
    let (za, zb) = ((a - mu) / s, (b - mu) / s);
    let z = n.cdf(zb) - n.cdf(za);
    let (pa, pb) = (n.pdf(za), n.pdf(zb));
    let mean = mu + s * (pa - pb) / z;
    let var = s * s * (1.0 + (za * pa - zb * pb) / z - ((pa - pb) / z).powi(2));
    (mean, var.sqrt())
}

fn log_moments(radii: &[f64]) -> (f64, f64) {
    let n = radii.len() as f64;
    let m = radii.iter().map(|r| r.ln()).sum::<f64>() / n;
    let v = radii.iter().map(|r| (r.ln() - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn log_normal_moments_match_truncated_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let psd = SizeDistribution::log_normal(100.0, 6.0, 1);
    let radii: Vec<f64> = (0..1_000_000).map(|_| sample_radius(&psd, &mut rng)).collect();
    let (m, s) = log_moments(&radii);
    let (tm, ts) = truncated_normal_moments(100f64.ln(), 6f64.ln(), 0.01f64.ln(), 2000f64.ln());
    assert!((m.exp() / tm.exp() - 1.0).abs() < 0.02, "geometric mean {} vs {}", m.exp(), tm.exp());
    assert!((s.exp() / ts.exp() - 1.0).abs() < 0.03, "geometric stdev {} vs {}", s.exp(), ts.exp());
    // the clip shifts the geometric mean measurably below 100
    assert!(tm.exp() < 95.0);

    // with negligible clipping the raw parameters come back
    let narrow = SizeDistribution::log_normal(10.0, 1.5, 1);
    let radii: Vec<f64> = (0..1_000_000).map(|_| sample_radius(&narrow, &mut rng)).collect();
    let (m, s) = log_moments(&radii);
    assert!((m.exp() / 10.0 - 1.0).abs() < 0.02 && (s.exp() / 1.5 - 1.0).abs() < 0.03);
}

#[test]
fn full_volume_histogram_converges_to_distribution() {
    let n = Normal::new(0.0, 1.0).unwrap();
    let (mu, s) = (50f64.ln(), 3f64.ln());
    let (a, b) = (0.01f64.ln(), 2000f64.ln());
    let cdf = |r: f64| (n.cdf((r.ln() - mu) / s) - n.cdf((a - mu) / s)) / (n.cdf((b - mu) / s) - n.cdf((a - mu) / s));
    let ks: Vec<f64> = [1_000u64, 10_000, 100_000]
        .iter()
        .map(|&count| {
            let cloud = generate_cloud(&SizeDistribution::log_normal(50.0, 3.0, count), &unit_box(), 77).unwrap();
            let h = estimate_local_psd(&cloud, &unit_box(), 64).unwrap();
            let mut acc = 0u64;
            h.counts
                .iter()
                .zip(&h.edges[1..])
                .map(|(&c, &edge)| {
                    acc += c;
                    (acc as f64 / count as f64 - cdf(edge)).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(ks[0] > ks[1] && ks[1] > ks[2], "{ks:?}");
}

#[test]
fn histogram_is_additive_over_a_partition() {
    let cloud = generate_cloud(&SizeDistribution::log_normal(100.0, 6.0, 5000), &unit_box(), 3).unwrap();
    let left = Aabb::new(DVec3::ZERO, DVec3::new(0.37, 1.0, 1.0));
    let right = Aabb::new(DVec3::new(0.37, 0.0, 0.0), DVec3::ONE);
    let whole = estimate_local_psd(&cloud, &unit_box(), 20).unwrap();
    let (l, r) = (estimate_local_psd(&cloud, &left, 20).unwrap(), estimate_local_psd(&cloud, &right, 20).unwrap());
    let sum: Vec<u64> = l.counts.iter().zip(&r.counts).map(|(a, b)| a + b).collect();
    assert_eq!(sum, whole.counts);
    assert_eq!(whole.total(), 5000);
    assert!(l.total() > 0 && r.total() > 0);
}

#[test]
fn patch_histograms_vary_less_in_larger_patches() {
    let cloud = generate_cloud(&SizeDistribution::log_normal(100.0, 6.0, 2000), &unit_box(), 8).unwrap();
    // relative spread of the patch counts of one radius bin across patches
    let spread = |side: f64| {
        let per_axis = (1.0 / side).round() as usize;
        let counts: Vec<f64> = (0..per_axis * per_axis)
            .map(|k| {
                let (i, j) = ((k % per_axis) as f64, (k / per_axis) as f64);
                let region = Aabb::new(DVec3::new(i * side, j * side, 0.0), DVec3::new((i + 1.0) * side, (j + 1.0) * side, 1.0));
                estimate_local_psd(&cloud, &region, 4).unwrap().total() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / counts.len() as f64).sqrt() / mean
    };
    assert!(spread(0.125) > spread(0.25) && spread(0.25) > spread(0.5));
}

#[test]
fn same_seed_gives_identical_files() {
    let psd = SizeDistribution::log_normal(100.0, 6.0, 3000);
    let write = |seed| {
        let mut v = Vec::new();
        generate_cloud(&psd, &unit_box(), seed).unwrap().write(&mut v).unwrap();
        v
    };
    assert_eq!(write(9), write(9));
    assert_ne!(write(9), write(10));
}

fn settings() -> OpticsSettings {
    OpticsSettings { wavelengths_um: vec![0.45, 0.6], n_theta: 721, ..OpticsSettings::default() }
}

#[test]
fn monodisperse_bulk_extinction_is_exact() {
    let cloud = generate_cloud(&SizeDistribution::monodisperse(400.0, 1000), &Aabb::new(DVec3::ZERO, DVec3::new(2.0, 1.0, 0.5)), 4)
        .unwrap();
    let optics = BinnedOptics::for_cloud(&cloud, &settings(), None).unwrap();
    let bulk = global_bulk_properties(&cloud, &optics).unwrap();
    for (band, b) in bulk.iter().enumerate() {
        let c_t = optics.optics(0, band).cross_sections.c_t;
        assert_eq!(b.sigma_t, c_t * 1e-12 * 1000.0 / 1.0);
        assert!(b.sigma_a >= 0.0 && b.sigma_s <= b.sigma_t);
    }
}

#[test]
fn empty_cloud_has_no_bulk_scattering() {
    let cloud = generate_cloud(&SizeDistribution::monodisperse(400.0, 0), &unit_box(), 4).unwrap();
    let optics = BinnedOptics::for_cloud(&cloud, &settings(), None).unwrap();
    let bulk = global_bulk_properties(&cloud, &optics).unwrap();
    assert!(bulk.iter().all(|b| b.sigma_t == 0.0 && b.phase.is_none()));
}

fn two_particle_cloud(r1: f64, r2: f64) -> ParticleCloud {
    let rec = |x: f64, r: f64| ParticleRecord { position: DVec3::new(x, 0.5, 0.5), radius_um: r };
    ParticleCloud { records: vec![rec(0.2, r1), rec(0.7, r2)], bounds: unit_box(), seed: 0, psd: None, rejections: 0 }
}

#[test]
fn equal_particles_share_the_single_particle_phase() {
    let cloud = two_particle_cloud(5.0, 5.0);
    let optics = BinnedOptics::for_cloud(&cloud, &settings(), None).unwrap();
    let bulk = global_bulk_properties(&cloud, &optics).unwrap();
    let single = &optics.optics(0, 1).phase;
    let ensemble = bulk[1].phase.as_ref().unwrap();
    for (a, b) in ensemble.masses().iter().zip(single.masses()) {
        assert!((a - b).abs() <= 1e-12 * b + 1e-300);
    }
}

#[test]
fn mixed_radii_phase_is_scattering_weighted_mean() {
    let cloud = two_particle_cloud(1.0, 10.0);
    let s = OpticsSettings { n_bins: 2, n_theta: 1801, ..settings() };
    let optics = BinnedOptics::build((1.0, 10.0), &s, None).unwrap();
    let bulk = global_bulk_properties(&cloud, &optics).unwrap();
    let policy = HybridPolicy::default();
    for (band, b) in bulk.iter().enumerate() {
        let lambda = s.wavelengths_um[band];
        let eta = ComplexValue::new(1.33, 0.0);
        let parts: Vec<(f64, PhaseEvaluator)> = optics
            .bins()
            .iter()
            .map(|bin| {
                let sphere = Sphere::new(bin.radius_um, lambda, eta, 1.0);
                (bin.spectral[band].cross_sections.c_s, PhaseEvaluator::new(&sphere, &policy).unwrap())
            })
            .collect();
        let total: f64 = parts.iter().map(|p| p.0).sum();
        let direct = |theta: f64| parts.iter().map(|(c, f)| c * f.eval(theta)).sum::<f64>() / total;
        let table = b.phase.as_ref().unwrap();
        let thetas = table.thetas();
        for k in (0..thetas.len()).step_by(37) {
            let (want, got) = (direct(thetas[k]), table.node_values()[k]);
            assert!((got - want).abs() <= 2e-3 * want, "theta {} {got} {want}", thetas[k]);
        }
        let norm = sphere_integral(direct, 2048);
        assert!((norm - 1.0).abs() < 1e-3, "{norm}");
        assert!((table.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((b.sigma_s - total * 1e-12).abs() < 1e-12 * b.sigma_s);
    }
}
