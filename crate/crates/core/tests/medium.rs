use std::collections::BTreeSet;
use std::f64::consts::PI;

use glam::DVec3;
use grainlight::geometry::Aabb;
use grainlight::medium::{brute_force_gather, CaptureNormalization, LocalQ, Medium, QueryCylinder, Resolution, UniformGrid};
use grainlight::particles::{generate_cloud, OpticsProvider, ParticleCloud, ParticleRecord, SizeDistribution};
use grainlight::scatter::{CrossSections, PhaseTable, SpectralOptics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One optics entry with fixed cross sections (µm²) and a chosen phase.
struct FixedOptics(SpectralOptics);

impl FixedOptics {
    fn new(c_t: f64, c_s: f64, phase: PhaseTable) -> Self {
        let cross_sections = CrossSections { c_t, c_s, c_a: c_t - c_s, clamped: false };
        Self(SpectralOptics { wavelength_um: 0.6, cross_sections, phase })
    }
}

impl OpticsProvider for FixedOptics {
    fn n_bands(&self) -> usize {
        1
    }
    fn wavelength_um(&self, _: usize) -> f64 {
        0.6
    }
    fn entry(&self, _: f64) -> usize {
        0
    }
    fn optics(&self, _: usize, _: usize) -> &SpectralOptics {
        &self.0
    }
    fn n_entries(&self) -> usize {
        1
    }
}

fn unit_box() -> Aabb {
    Aabb::new(DVec3::ZERO, DVec3::ONE)
}

fn cloud_of(records: Vec<ParticleRecord>) -> ParticleCloud {
    ParticleCloud { records, bounds: unit_box(), seed: 0, psd: None, rejections: 0 }
}

fn fixed_medium(cloud: ParticleCloud, c_t: f64, margin: f64, capture: CaptureNormalization) -> Medium {
    let optics = Box::new(FixedOptics::new(c_t, c_t, PhaseTable::isotropic(256)));
    Medium::new(cloud, optics, Resolution::Auto, margin, capture).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> DVec3 {
    DVec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

// Voxels whose closed box meets the segment, by clipping against each one.
fn slab_oracle(grid: &UniformGrid, a: DVec3, b: DVec3) -> BTreeSet<[usize; 3]> {
    let r = grid.resolution();
    let len = (b - a).length();
    let dir = (b - a) / len;
    let mut set = BTreeSet::new();
    for z in 0..r[2] {
        for y in 0..r[1] {
            for x in 0..r[0] {
                if grid.voxel_box([x, y, z]).clip(a, dir, 0.0, len).is_some() {
                    set.insert([x, y, z]);
                }
            }
        }
    }
    set
}

#[test]
fn traversal_matches_slab_and_dense_sampling_oracles() {
    let grid = UniformGrid::build(&cloud_of(vec![]), Resolution::Fixed([7, 5, 6]), 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let side = grid.voxel_size().min_element();
    for _ in 0..1000 {
        let (a, b) = (random_point(&mut rng, -0.5, 1.5), random_point(&mut rng, -0.5, 1.5));
        let walked = grid.traverse_voxels(a, b);
        let set: BTreeSet<_> = walked.iter().copied().collect();
        assert_eq!(set.len(), walked.len(), "voxel visited twice");
        assert_eq!(set, slab_oracle(&grid, a, b));
        // order: consecutive voxels are face, edge or corner neighbours
        for w in walked.windows(2) {
            assert!((0..3).all(|k| (w[0][k] as i64 - w[1][k] as i64).abs() <= 1));
        }
        let len = (b - a).length();
        let steps = (len / (0.25 * side)).ceil() as usize;
        for k in 0..=steps {
            if let Some(v) = grid.voxel_of(a + (b - a) * (k as f64 / steps as f64)) {
                assert!(set.contains(&v));
            }
        }
    }
}

#[test]
fn grid_gather_equals_brute_force() {
    let cloud = generate_cloud(&SizeDistribution::log_normal(300.0, 2.0, 10_000), &unit_box(), 5).unwrap();
    let r_c = 0.01;
    let medium = fixed_medium(cloud, 1.0, r_c, CaptureNormalization::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut total = 0;
    let mut gathered = Vec::new();
    for _ in 0..100 {
        let cyl = QueryCylinder::new(random_point(&mut rng, -0.2, 1.2), random_point(&mut rng, -0.2, 1.2), r_c).unwrap();
        medium.gather(&cyl, &mut gathered).unwrap();
        assert_eq!(gathered, brute_force_gather(&medium.cloud, &cyl));
        total += gathered.len();
    }
    assert!(total > 100, "{total}");
    let too_wide = QueryCylinder::new(DVec3::ZERO, DVec3::ONE, 0.02).unwrap();
    assert!(medium.gather(&too_wide, &mut gathered).is_err());
}

#[test]
fn single_particle_is_found() {
    let cloud = cloud_of(vec![ParticleRecord { position: DVec3::new(0.3, 0.6, 0.2), radius_um: 50.0 }]);
    let medium = fixed_medium(cloud, 1.0, 0.001, CaptureNormalization::default());
    let mut out = Vec::new();
    let cyl = QueryCylinder::new(DVec3::new(0.3, 0.6, -1.0), DVec3::new(0.3, 0.6, 2.0), 1e-4).unwrap();
    medium.gather(&cyl, &mut out).unwrap();
    assert_eq!(out, vec![0]);
    assert_eq!(out, brute_force_gather(&medium.cloud, &cyl));
}

#[test]
fn transmittance_count_form() {
    let x = 2.0e6; // µm²
    let on_axis = |z: f64| ParticleRecord { position: DVec3::new(0.5, 0.5, z), radius_um: 100.0 };
    let r_c = 0.002;
    let cyl = QueryCylinder::new(DVec3::new(0.5, 0.5, 0.0), DVec3::new(0.5, 0.5, 1.0), r_c).unwrap();

    let axis = fixed_medium(cloud_of(vec![on_axis(0.2), on_axis(0.5), on_axis(0.8)]), x, r_c, CaptureNormalization::AxisArea);
    let expected = (-3.0 * x * 1e-12 / (PI * r_c * r_c)).exp();
    assert!((axis.transmittance(&cyl, 0).unwrap() - expected).abs() < 1e-15);

    let capture = fixed_medium(cloud_of(vec![on_axis(0.2), on_axis(0.5), on_axis(0.8)]), x, r_c, CaptureNormalization::CaptureArea);
    let r = r_c + 100e-6;
    let expected = (-3.0 * x * 1e-12 / (PI * r * r)).exp();
    assert!((capture.transmittance(&cyl, 0).unwrap() - expected).abs() < 1e-15);

    let empty = fixed_medium(cloud_of(vec![]), x, r_c, CaptureNormalization::default());
    assert_eq!(empty.transmittance(&cyl, 0).unwrap(), 1.0);
}

#[test]
fn transmittance_is_monotone_and_additive() {
    let cloud = generate_cloud(&SizeDistribution::monodisperse(400.0, 20_000), &unit_box(), 6).unwrap();
    let r_c = 0.01;
    let medium = fixed_medium(cloud.clone(), 5.0e5, r_c, CaptureNormalization::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (a, b) = (random_point(&mut rng, 0.0, 1.0), random_point(&mut rng, 0.0, 1.0));
        let m = a + (b - a) * rng.random_range(0.1..0.9);
        let t = |p: DVec3, q: DVec3| medium.transmittance(&QueryCylinder::new(p, q, r_c).unwrap(), 0).unwrap();
        let (whole, first, second) = (t(a, b), t(a, m), t(m, b));
        assert!(whole > 0.0 && whole <= 1.0);
        assert!(((-whole.ln()) - (-first.ln() - second.ln())).abs() < 1e-12 * (1.0 - whole.ln()));

        // one more particle on the axis strictly lowers T
        let mut more = cloud.clone();
        more.records.push(ParticleRecord { position: 0.5 * (a + b), radius_um: 400.0 });
        let denser = fixed_medium(more, 5.0e5, r_c, CaptureNormalization::default());
        assert!(denser.transmittance(&QueryCylinder::new(a, b, r_c).unwrap(), 0).unwrap() < whole);
    }
}

#[test]
fn local_q_branches() {
    let phase = PhaseTable::from_node_values((0..256).map(|k| 1.0 + (k as f64 * PI / 255.0).cos()).collect()).unwrap();
    let rec = ParticleRecord { position: DVec3::splat(0.5), radius_um: 10.0 };
    let build = |records| {
        Medium::new(cloud_of(records), Box::new(FixedOptics::new(3.0, 2.0, phase.clone())), Resolution::Auto, 0.01, CaptureNormalization::AxisArea)
            .unwrap()
    };
    let one = build(vec![rec]);
    let two = build(vec![rec, rec]);
    assert_eq!(one.local_q(DVec3::splat(0.9), 0.01, 1.0).unwrap(), LocalQ::PassThrough);
    let q = |m: &Medium, t: f64| match m.local_q(DVec3::splat(0.505), 0.01, t).unwrap() {
        LocalQ::Values(v) => v[0],
        LocalQ::PassThrough => panic!("expected particles"),
    };
    let (t1, t2) = (0.3, 2.1);
    assert!((q(&one, t1) / q(&one, t2) - phase.eval(t1.cos()) / phase.eval(t2.cos())).abs() < 1e-12);
    assert_eq!(q(&two, t1), 2.0 * q(&one, t1));
    let expected = 2.0e-12 * phase.eval(t1.cos()) / (4.0 / 3.0 * PI * 1e-6);
    assert!((q(&one, t1) - expected).abs() < 1e-12 * expected);
    assert!(q(&one, t2) >= 0.0);
}

#[test]
fn grid_statistics_csv() {
    let cloud = generate_cloud(&SizeDistribution::monodisperse(100.0, 1000), &unit_box(), 2).unwrap();
    let grid = UniformGrid::build(&cloud, Resolution::Auto, 0.0).unwrap();
    assert_eq!(grid.resolution(), [10, 10, 10]);
    let mut out = Vec::new();
    grid.write_stats_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.lines().nth(1) == Some("particles_per_voxel,voxels"));
    let voxels: usize = grid.occupancy_histogram().iter().map(|(_, n)| n).sum();
    assert_eq!(voxels, 1000);
}
