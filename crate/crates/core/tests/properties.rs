use proptest::prelude::*;
use quiz_core::augment::AugmentKind;
use quiz_core::geometry::warp_translate;
use quiz_core::metrics::tre;
use quiz_core::{RigidTransform, Volume};

fn kind() -> impl Strategy<Value = AugmentKind> {
    prop_oneof![
        prop::array::uniform3(-5.0..5.0f64).prop_map(|shift| AugmentKind::Translate { shift }),
        (0.8..1.25f64).prop_map(|factor| AugmentKind::Scale { factor }),
        (0..3usize).prop_map(|axis| AugmentKind::Flip { axis }),
        Just(AugmentKind::AxisSwap { perm: [1, 2, 0] }),
        Just(AugmentKind::AxisSwap { perm: [2, 1, 0] }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augment_point_maps_invert(k in kind(), p in prop::array::uniform3(0.0..11.0f64)) {
        let dims = [12, 10, 14];
        let back = k.inverse_point(k.forward_point(p, dims), dims);
        for a in 0..3 {
            prop_assert!((back[a] - p[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn integer_warps_compose(a in prop::array::uniform3(-2i32..=2), b in prop::array::uniform3(-2i32..=2), seed in 0u32..1000) {
        let v = Volume::from_fn([11, 11, 11], |x, y, z| ((x * 31 + y * 17 + z * 7 + seed as usize) % 13) as f32).unwrap();
        let af = a.map(|c| c as f64);
        let bf = b.map(|c| c as f64);
        let two = warp_translate(&warp_translate(&v, af).unwrap(), bf).unwrap();
        let one = warp_translate(&v, [af[0] + bf[0], af[1] + bf[1], af[2] + bf[2]]).unwrap();
        // away from the border no voxel passes through the zero padding
        for z in 4..7 {
            for y in 4..7 {
                for x in 4..7 {
                    prop_assert_eq!(two.get(x, y, z), one.get(x, y, z));
                }
            }
        }
    }

    #[test]
    fn translation_matrix_round_trips(t in prop::array::uniform3(-100.0..100.0f64), u in prop::array::uniform3(-100.0..100.0f64)) {
        let m = RigidTransform::from_translation(t).unwrap();
        prop_assert_eq!(RigidTransform::from_matrix(m.matrix()).unwrap(), m);
        let n = RigidTransform::from_translation(u).unwrap();
        let p = [[1.0, -2.0, 3.5]];
        let chained = n.apply(&m.apply(&p).unwrap()).unwrap();
        let composed = m.compose(&n).apply(&p).unwrap();
        for a in 0..3 {
            prop_assert!((chained[0][a] - composed[0][a]).abs() < 1e-9);
        }
    }

    #[test]
    fn tre_is_a_symmetric_mean_distance(a in prop::collection::vec(prop::array::uniform3(-50.0..50.0f64), 1..8), d in prop::array::uniform3(-5.0..5.0f64)) {
        let b: Vec<_> = a.iter().map(|p| [p[0] + d[0], p[1] + d[1], p[2] + d[2]]).collect();
        let ab = tre(&a, &b).unwrap();
        prop_assert!((ab - tre(&b, &a).unwrap()).abs() < 1e-12);
        let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((ab - len).abs() < 1e-9);
    }
}
