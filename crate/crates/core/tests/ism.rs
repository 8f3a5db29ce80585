use alod_core::geom::Vec3;
use alod_core::ism::{self, Provenance};
use alod_core::scene::{self, calibrate_absorption, AbsorptionProfile, FiniteReflector, Pose, ReverbTarget, RoomGeometry};
use proptest::prelude::*;

fn shoebox() -> RoomGeometry {
    RoomGeometry::new(Vec3::new(4.97, 3.78, 2.71), Vec3::new(0.5, -1.0, 0.0)).unwrap()
}

fn absorption(g: &RoomGeometry) -> AbsorptionProfile {
    calibrate_absorption(g, &ReverbTarget::uniform(0.54)).unwrap()
}

/// Independent lattice enumeration: per axis x = (1 - 2q) s + 2 m L with
/// q in {0, 1}, reflection count |2m - q|.
fn brute_force(room: &RoomGeometry, src: Vec3, max_order: u32) -> Vec<([f64; 3], u32)> {
    let n = max_order as i64;
    let local = src - room.origin;
    let mut out = Vec::new();
    let axis = |a: usize| -> Vec<(f64, u32)> {
        let mut v = Vec::new();
        for m in -n..=n {
            for q in 0..2i64 {
                let refl = (2 * m - q).unsigned_abs() as u32;
                if refl <= max_order {
                    let x = (1 - 2 * q) as f64 * local.get(a) + 2.0 * m as f64 * room.dims.get(a);
                    v.push((room.origin.get(a) + x, refl));
                }
            }
        }
        v
    };
    let (xs, ys, zs) = (axis(0), axis(1), axis(2));
    for &(x, ox) in &xs {
        for &(y, oy) in &ys {
            for &(z, oz) in &zs {
                if ox + oy + oz <= max_order {
                    out.push(([x, y, z], ox + oy + oz));
                }
            }
        }
    }
    out
}

fn sorted(mut v: Vec<([f64; 3], u32)>) -> Vec<([f64; 3], u32)> {
    v.sort_by(|a, b| {
        a.1.cmp(&b.1)
            .then(a.0[0].total_cmp(&b.0[0]))
            .then(a.0[1].total_cmp(&b.0[1]))
            .then(a.0[2].total_cmp(&b.0[2]))
    });
    v
}

#[test]
fn counts_and_positions_match_brute_force_up_to_order_15() {
    let room = shoebox();
    let src = Vec3::new(2.0, 0.3, 1.5);
    let set = ism::enumerate_images(&room, src, 15, &absorption(&room)).unwrap();
    assert_eq!(set.images.len(), 4991);
    let got = sorted(set.images.iter().map(|i| (<[f64; 3]>::from(i.position), i.order)).collect());
    let want = sorted(brute_force(&room, src, 15));
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g, w);
    }
    for o in 0..=15u32 {
        let n = want.iter().filter(|x| x.1 == o).count();
        assert_eq!(n, if o == 0 { 1 } else { (4 * o * o + 2) as usize }, "order {o}");
    }
}

#[test]
fn totals_by_max_order() {
    let room = shoebox();
    let a = absorption(&room);
    let src = Vec3::new(1.0, 1.0, 1.0);
    let totals: Vec<usize> = (0..=15)
        .map(|o| ism::enumerate_images(&room, src, o, &a).unwrap().images.len())
        .collect();
    assert_eq!(totals[0], 1);
    assert_eq!(totals[3], 63);
    assert_eq!(totals[15], 4991);
    for (o, t) in totals.iter().enumerate() {
        assert_eq!(*t, brute_force(&room, src, o as u32).len());
    }
}

#[test]
fn order_zero_is_the_source_with_unit_gain() {
    let room = shoebox();
    let src = Vec3::new(3.0, 1.0, 2.0);
    let set = ism::enumerate_images(&room, src, 0, &absorption(&room)).unwrap();
    assert_eq!(set.images.len(), 1);
    assert_eq!(set.images[0].position, src);
    assert!(set.images[0].gains.iter().all(|&g| g == 1.0));
}

#[test]
fn source_outside_room_is_a_domain_error() {
    let room = shoebox();
    let r = ism::enumerate_images(&room, Vec3::new(-3.0, 0.0, 1.0), 2, &absorption(&room));
    assert!(matches!(r, Err(alod_core::Error::Domain(_))));
}

#[test]
fn band_gain_is_product_of_wall_factors() {
    let room = shoebox();
    let a = absorption(&room);
    let set = ism::enumerate_images(&room, Vec3::new(2.0, 0.0, 1.0), 5, &a).unwrap();
    for img in &set.images {
        let Provenance::Lattice(v) = img.provenance else { panic!() };
        let walls: i32 = v.iter().map(|x| x.abs()).sum();
        assert_eq!(walls as u32, img.order);
        for b in 0..10 {
            let mut g = 1.0;
            for _ in 0..img.order {
                g *= (1.0 - a.alpha_per_band[b]).sqrt();
            }
            assert!((img.gains[b] - g).abs() < 1e-14);
            if img.order > 0 {
                assert!(img.gains[b] > 0.0 && img.gains[b] <= 1.0);
            }
        }
    }
}

#[test]
fn order_15_enumeration_is_fast() {
    let room = shoebox();
    let a = absorption(&room);
    let t = std::time::Instant::now();
    let set = ism::enumerate_images(&room, Vec3::new(2.0, 0.3, 1.5), 15, &a).unwrap();
    assert_eq!(set.images.len(), 4991);
    assert!(t.elapsed().as_secs_f64() < 1.0);
}

proptest! {
    #[test]
    fn jitter_stays_within_bound(seed in any::<u64>()) {
        let room = shoebox();
        let set = ism::enumerate_images(&room, Vec3::new(2.0, 0.3, 1.5), 3, &absorption(&room)).unwrap();
        let j = ism::apply_jitter(&set, seed);
        for (a, b) in set.images.iter().zip(&j.images) {
            let d = b.position - a.position;
            let bound = 0.05 * a.order as f64 + 1e-12;
            prop_assert!(d.x.abs() <= bound && d.y.abs() <= bound && d.z.abs() <= bound);
            if a.order == 0 {
                prop_assert_eq!(a.position, b.position);
            }
        }
        prop_assert_eq!(j, ism::apply_jitter(&set, seed));
    }

    #[test]
    fn doubling_distance_halves_amplitude(d in 0.5f64..20.0) {
        let room = RoomGeometry::new(Vec3::new(100.0, 100.0, 100.0), Vec3::new(-50.0, -50.0, -50.0)).unwrap();
        let a = absorption(&room);
        let rx = Pose::at(Vec3::ZERO);
        let near = ism::enumerate_images(&room, Vec3::new(d, 0.0, 0.0), 0, &a).unwrap();
        let far = ism::enumerate_images(&room, Vec3::new(2.0 * d, 0.0, 0.0), 0, &a).unwrap();
        let tn = ism::image_taps(&near.images, &rx, 343.0).unwrap();
        let tf = ism::image_taps(&far.images, &rx, 343.0).unwrap();
        prop_assert!((tn.taps[0].amplitude / tf.taps[0].amplitude - 2.0).abs() < 1e-12);
    }
}

#[test]
fn pub_direct_path_delay() {
    let s = scene::pub_scene();
    let room = &s.rooms[0].geometry;
    let set = ism::enumerate_images(room, s.source.position, 0, &absorption(room)).unwrap();
    let taps = ism::image_taps(&set.images, &s.receiver, 343.0).unwrap();
    let t = &taps.taps[0];
    assert!((t.delay - 0.97 / 343.0).abs() < 1e-12);
    assert!((t.delay * 44100.0 - 124.71).abs() < 0.01);
    assert!((t.direction.x - 1.0).abs() < 1e-12);
}

#[test]
fn direct_sound_comes_first() {
    let s = scene::pub_scene();
    let room = &s.rooms[0].geometry;
    let set = ism::enumerate_images(room, s.source.position, 3, &absorption(room)).unwrap();
    let taps = ism::image_taps(&set.images, &s.receiver, 343.0).unwrap();
    assert_eq!(taps.taps[0].order, 0);
    assert!(taps.taps.windows(2).all(|w| w[0].delay <= w[1].delay));
}

#[test]
fn coincident_image_is_degenerate() {
    let room = shoebox();
    let p = Vec3::new(2.0, 0.0, 1.0);
    let set = ism::enumerate_images(&room, p, 0, &absorption(&room)).unwrap();
    let r = ism::image_taps(&set.images, &Pose::at(p), 343.0);
    assert!(matches!(r, Err(alod_core::Error::DegenerateDistance(_))));
}

fn plate(center: Vec3, normal: Vec3, extents: [f64; 2]) -> FiniteReflector {
    FiniteReflector {
        label: "plate".into(),
        center,
        normal,
        extents,
        alpha_per_band: [0.2; 10],
    }
}

#[test]
fn large_floor_plate_mirrors_in_z() {
    let src = Pose::at(Vec3::new(1.0, 0.5, 1.2));
    let rx = Pose::at(Vec3::new(-2.0, 0.3, 1.7));
    let imgs = ism::reflect_finite_surfaces(&src, &rx, &[plate(Vec3::ZERO, Vec3::Z, [1e6, 1e6])]);
    assert_eq!(imgs.len(), 1);
    assert!((imgs[0].position - Vec3::new(1.0, 0.5, -1.2)).norm() < 1e-12);
    for g in imgs[0].gains {
        assert!((g - 0.8f64.sqrt()).abs() < 1e-12);
    }
}

/// Specular point by explicit line-plane intersection.
fn specular_inside(src: Vec3, rx: Vec3, r: &FiniteReflector) -> bool {
    let n = r.normal;
    let img = src - n * (2.0 * (src - r.center).dot(n));
    let t = (r.center - img).dot(n) / (rx - img).dot(n);
    let p = img + (rx - img) * t;
    let (u, v) = r.tangents();
    (0.0..=1.0).contains(&t)
        && (p - r.center).dot(u).abs() <= r.extents[0] / 2.0
        && (p - r.center).dot(v).abs() <= r.extents[1] / 2.0
}

#[test]
fn pub_reflectors_add_two_images() {
    let s = scene::pub_scene();
    for r in &s.reflectors {
        assert!(specular_inside(s.source.position, s.receiver.position, r), "{}", r.label);
    }
    let imgs = ism::reflect_finite_surfaces(&s.source, &s.receiver, &s.reflectors);
    assert_eq!(imgs.len(), 2);
}

#[test]
fn reflector_missing_the_specular_point_contributes_nothing() {
    let s = scene::pub_scene();
    let mut table = s.reflectors[0].clone();
    table.center = table.center + Vec3::new(0.0, 2.0, 0.0);
    assert!(!specular_inside(s.source.position, s.receiver.position, &table));
    assert!(ism::reflect_finite_surfaces(&s.source, &s.receiver, &[table]).is_empty());
}
