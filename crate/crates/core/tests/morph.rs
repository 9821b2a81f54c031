use fcmad::image::Point;
use fcmad::morph::{border_points, morph_landmark, selfmorph, triangulate, warp_image, MorphConfig};
use fcmad::synth::{FaceSpace, SynthConfig};
use proptest::prelude::*;

fn space() -> FaceSpace {
    FaceSpace::new(SynthConfig::default(), 11).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn landmark_morph_geometry(a in 0u32..50, b in 50u32..100, va in any::<u64>(), vb in any::<u64>(), alpha in 0.0f64..=1.0) {
        let s = space();
        let fa = s.render(&s.make_identity(a), va);
        let fb = s.render(&s.make_identity(b), vb);
        let m = morph_landmark(&fa, &fb, &MorphConfig::landmark(alpha)).unwrap();
        for ((p, q), r) in fa.landmarks.iter().zip(&fb.landmarks).zip(&m.face.landmarks) {
            prop_assert!((r.x - ((1.0 - alpha) * p.x + alpha * q.x)).abs() <= 1e-12);
            prop_assert!((r.y - ((1.0 - alpha) * p.y + alpha * q.y)).abs() <= 1e-12);
        }
        let swapped = morph_landmark(&fb, &fa, &MorphConfig::landmark(1.0 - alpha)).unwrap();
        if alpha != 0.5 {
            // 1 - (1 - α) may differ from α in the last bit; compare loosely.
            prop_assert!(m.face.pixels.max_abs_diff(&swapped.face.pixels) <= 1e-9);
        }
        prop_assert!(m.face.pixels.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn warp_partition_covers_each_pixel_once(id in 0u32..100, v in any::<u64>(), alpha in 0.0f64..=1.0) {
        let s = space();
        let fa = s.render(&s.make_identity(id), v);
        let fb = s.render(&s.make_identity(id + 100), v ^ 1);
        let (w, h) = (fa.pixels.width(), fa.pixels.height());
        let border = border_points(w, h);
        let dst: Vec<Point> = fa
            .landmarks
            .iter()
            .zip(&fb.landmarks)
            .map(|(p, q)| p.lerp(*q, alpha))
            .chain(border)
            .collect();
        let src: Vec<Point> = fa.landmarks.iter().copied().chain(border).collect();
        let tri = triangulate(&dst).unwrap();
        let acc = warp_image(&fa.pixels, &src, &dst, &tri).unwrap();
        prop_assert_eq!(acc.unwritten(), 0);
        prop_assert!(acc.writes.iter().all(|&n| n == 1));
        prop_assert!(acc.claims.iter().all(|&n| n >= 1));
        // Triangle areas tile the image rectangle.
        let area = tri.area(&dst);
        prop_assert!((area - ((w - 1) * (h - 1)) as f64).abs() < 1e-6);
    }
}

#[test]
fn exact_midpoint_and_swap_at_half() {
    let s = space();
    let fa = s.render(&s.make_identity(1), 10);
    let fb = s.render(&s.make_identity(2), 20);
    let ab = morph_landmark(&fa, &fb, &MorphConfig::landmark(0.5)).unwrap();
    let ba = morph_landmark(&fb, &fa, &MorphConfig::landmark(0.5)).unwrap();
    for ((p, q), r) in fa.landmarks.iter().zip(&fb.landmarks).zip(&ab.face.landmarks) {
        assert!((r.x - 0.5 * (p.x + q.x)).abs() <= 1e-12);
        assert!((r.y - 0.5 * (p.y + q.y)).abs() <= 1e-12);
    }
    assert!(ab.face.pixels.max_abs_diff(&ba.face.pixels) <= 1e-12);
}

#[test]
fn selfmorph_of_an_image_with_itself_is_the_image() {
    let s = space();
    for id in 0..5 {
        let f = s.render(&s.make_identity(id), u64::from(id) * 7);
        let m = selfmorph(&s, &f, &f, &MorphConfig::landmark(0.5), 0).unwrap();
        let (w, h) = (f.pixels.width(), f.pixels.height());
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert!(
                    (m.face.pixels.get(x, y) - f.pixels.get(x, y)).abs() <= 1e-9,
                    "({x},{y})"
                );
            }
        }
        assert_eq!((m.id_first, m.id_second), (id, id));
    }
}
