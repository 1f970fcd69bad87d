use ldm3d_core::diffusion::{make_schedule, time_embedding, Denoiser, DenoiserConfig, ScheduleSpec};
use ldm3d_core::explore::{latent_hash, variations};
use ldm3d_core::geom::{self, Vec3};
use ldm3d_core::meshing::{export_obj, marching_cubes, read_obj, Bounds, PointCloud};
use ldm3d_core::metrics::{chamfer, coverage_from, emd, one_nna_from, DistMatrix};
use ldm3d_core::numerics::Rng;
use ldm3d_core::shapes::{balanced_batch, sample_bank, Primitive, ShapeSpec};
use proptest::prelude::*;

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = Rng::seed(seed);
    PointCloud {
        points: (0..n).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect(),
    }
}

fn rigid(c: &PointCloud, axis: Vec3, angle: f64, shift: Vec3) -> PointCloud {
    let r = geom::rotation(axis, angle);
    PointCloud {
        points: c.points.iter().map(|&p| geom::add(geom::mat_vec(&r, p), shift)).collect(),
    }
}

fn dist_matrix(rows: usize, cols: usize, seed: u64) -> DistMatrix {
    let mut rng = Rng::seed(seed);
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.uniform()).collect();
    DistMatrix::from_fn(rows, cols, |i, j| values[i * cols + j])
}

fn symmetric(n: usize, seed: u64) -> DistMatrix {
    let m = dist_matrix(n, n, seed);
    DistMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { m.get(i.min(j), i.max(j)) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_zero_on_itself(n in 1usize..60, m in 1usize..60, seed in any::<u64>()) {
        let (x, y) = (cloud(n, seed), cloud(m, seed ^ 1));
        let (a, b) = (chamfer(&x, &y).unwrap(), chamfer(&y, &x).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn distances_ignore_rigid_motion(
        n in 1usize..24,
        seed in any::<u64>(),
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in 0.0f64..6.3,
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        prop_assume!(geom::norm(axis) > 1e-3);
        let (x, y) = (cloud(n, seed), cloud(n, seed ^ 7));
        let (mx, my) = (rigid(&x, axis, angle, shift), rigid(&y, axis, angle, shift));
        let (c0, c1) = (chamfer(&x, &y).unwrap(), chamfer(&mx, &my).unwrap());
        prop_assert!((c0 - c1).abs() <= 1e-9 * c0.max(1.0));
        let (e0, e1) = (emd(&x, &y).unwrap(), emd(&mx, &my).unwrap());
        prop_assert!((e0 - e1).abs() <= 1e-9 * e0.max(1.0));
    }

    #[test]
    fn emd_bounds_one_sided_nearest_distance(n in 1usize..30, seed in any::<u64>()) {
        let (x, y) = (cloud(n, seed), cloud(n, seed ^ 3));
        let nearest: f64 = x
            .points
            .iter()
            .map(|&p| y.points.iter().map(|&q| geom::dist2(p, q).sqrt()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / n as f64;
        prop_assert!(emd(&x, &y).unwrap() >= nearest - 1e-12);
    }

    #[test]
    fn set_metrics_see_only_neighbour_order(g in 1usize..12, t in 1usize..12, seed in any::<u64>(), k in 0.1f64..5.0) {
        let gt = dist_matrix(g, t, seed);
        let (gg, tt) = (symmetric(g, seed ^ 1), symmetric(t, seed ^ 2));
        let warp = |m: &DistMatrix| DistMatrix::from_fn(m.rows, m.cols, |i, j| (k * m.get(i, j)).exp() - 1.0);
        prop_assert_eq!(coverage_from(&gt, None), coverage_from(&warp(&gt), None));
        prop_assert_eq!(coverage_from(&gt, Some(&gg)), coverage_from(&warp(&gt), Some(&warp(&gg))));
        if g + t >= 2 {
            prop_assert_eq!(
                one_nna_from(&gg, &gt, &tt).unwrap(),
                one_nna_from(&warp(&gg), &warp(&gt), &warp(&tt)).unwrap()
            );
        }
    }

    #[test]
    fn schedule_tables_are_consistent(steps in 1usize..3000, a in 1e-6f64..0.3, b in 0.0f64..0.6) {
        let (start, end) = (a, (a + b).min(0.999));
        let s = make_schedule(steps, start, end).unwrap();
        prop_assert_eq!(s.sigma2(1), 0.0);
        for t in 1..=steps {
            // strict until the product underflows to zero
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1) || s.alpha_bar(t - 1) < 1e-300);
            prop_assert!(s.sigma2(t) >= 0.0 && s.sigma2(t) <= s.beta(t) + 1e-15);
        }
    }

    #[test]
    fn scaled_linear_stays_a_valid_schedule(steps in 1usize..50_000) {
        let spec = ScheduleSpec::scaled_linear(steps);
        prop_assert!(spec.build().is_ok());
    }

    #[test]
    fn time_embedding_is_bounded_and_distinct(t in 0usize..30_000, half in 1usize..64) {
        let e = time_embedding(t, 2 * half).unwrap();
        prop_assert_eq!(e.len(), 2 * half);
        prop_assert!(e.iter().all(|x| x.abs() <= 1.0));
        prop_assert_ne!(e, time_embedding(t + 1, 2 * half).unwrap());
    }

    #[test]
    fn sphere_isosurface_is_closed_and_close(r in 0.2f64..0.9, cx in -0.1f64..0.1, res in 12usize..40) {
        let c = [cx, -cx, 0.5 * cx];
        let field = move |p: Vec3| geom::norm(geom::sub(p, c)) - r;
        let bounds = Bounds::cube(1.05);
        let mesh = marching_cubes(&field, res, bounds, 0.0).unwrap();
        prop_assert!(mesh.is_watertight());
        let cell = 2.1 / res as f64;
        for &v in &mesh.vertices {
            prop_assert!((geom::norm(geom::sub(v, c)) - r).abs() < 0.5 * cell);
        }
        prop_assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn obj_text_preserves_topology(r in 0.2f64..0.9, res in 8usize..24) {
        let field = move |p: Vec3| geom::norm(p) - r;
        let mesh = marching_cubes(&field, res, Bounds::cube(1.05), 0.0).unwrap();
        let back = read_obj(&export_obj(&mesh)).unwrap();
        prop_assert_eq!(&back.triangles, &mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            prop_assert!(geom::dist2(*a, *b).sqrt() < 1e-6);
        }
    }

    #[test]
    fn balanced_batches_split_signs(k in 1usize..200, seed in any::<u64>()) {
        let mut rng = Rng::seed(seed);
        let spec = ShapeSpec::single(Primitive::Sphere { radius: 0.4 });
        let bank = sample_bank(&spec, 0, 400, &mut rng).unwrap();
        let batch = balanced_batch(&bank, k, &mut rng).unwrap();
        prop_assert_eq!(batch.samples.len(), k);
        let neg = batch.samples.iter().filter(|s| s.d < 0.0).count();
        if !batch.imbalanced {
            prop_assert_eq!(neg, k / 2);
        }
    }

    #[test]
    fn zero_noise_variations_are_copies(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = Rng::seed(seed);
        let config = DenoiserConfig {
            latent_dim: 5,
            hidden_dim: 8,
            num_layers: 4,
            time_embed_dim: 4,
            schedule: ScheduleSpec::scaled_linear(20),
            ..Default::default()
        };
        let model = Denoiser::init(config, &mut rng).unwrap();
        let schedule = model.config.schedule.build().unwrap();
        let z: Vec<f32> = (0..5).map(|_| rng.normal() as f32).collect();
        let out = variations(&model, &schedule, &z, 0, k, seed, None).unwrap();
        prop_assert!(out.iter().all(|v| latent_hash(v) == latent_hash(&z) && v == &z));
    }
}
