mod common;

use common::{brute_mip, brute_resample};
use petgan::model::LatentSeed;
use petgan::pipeline::{mip_project, normalize_suv, normalize_value, resample_nearest, Axis};
use petgan::walk::lerp_seeds;
use petgan::Volume3D;
use proptest::prelude::*;

fn volume() -> impl Strategy<Value = Volume3D> {
    (1usize..7, 1usize..7, 1usize..7, prop::array::uniform3(0.5f64..5.0)).prop_flat_map(|(z, y, x, sp)| {
        prop::collection::vec(0.0f32..45.0, z * y * x).prop_map(move |v| Volume3D::new([z, y, x], sp, v).unwrap())
    })
}

proptest! {
    #[test]
    fn resample_creates_no_new_values(v in volume(), target in 0.5f64..5.0) {
        let out = resample_nearest(&v, target).unwrap();
        for x in out.voxels() {
            prop_assert!(v.voxels().iter().any(|y| y.to_bits() == x.to_bits()));
        }
        let (dims, want) = brute_resample(&v, target);
        prop_assert_eq!(out.dims().to_vec(), dims);
        prop_assert_eq!(out.voxels(), &want[..]);
    }

    #[test]
    fn normalize_is_monotone_into_unit(a in -5.0f32..60.0, b in -5.0f32..60.0, max in 1.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (nl, nh) = (normalize_value(lo, max), normalize_value(hi, max));
        prop_assert!(nl <= nh);
        prop_assert!((0.0..=1.0).contains(&nl) && (0.0..=1.0).contains(&nh));
    }

    #[test]
    fn mip_commutes_with_normalisation(v in volume(), max in 1.0f64..50.0) {
        for axis in [Axis::Y, Axis::X] {
            let a = mip_project(&normalize_suv(&v, max).unwrap(), axis).unwrap();
            let m = mip_project(&v, axis).unwrap();
            let b: Vec<f32> = m.pixels.iter().map(|&p| normalize_value(p, max)).collect();
            prop_assert_eq!(&a.pixels, &b);
        }
    }

    #[test]
    fn mip_matches_brute_force(v in volume()) {
        for (axis, idx) in [(Axis::Y, 1), (Axis::X, 2)] {
            let img = mip_project(&v, axis).unwrap();
            let (rows, cols, want) = brute_mip(&v, idx);
            prop_assert_eq!((img.height, img.width), (rows, cols));
            for (a, b) in img.pixels.iter().zip(&want) {
                prop_assert!((*a as f64 - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn lerp_is_affine(
        a in prop::collection::vec(-3.0f64..3.0, 100),
        b in prop::collection::vec(-3.0f64..3.0, 100),
        n in 3usize..16,
    ) {
        let seeds = lerp_seeds(&LatentSeed::new(a.clone()).unwrap(), &LatentSeed::new(b.clone()).unwrap(), n).unwrap();
        prop_assert_eq!(seeds[0].as_slice(), &a[..]);
        prop_assert_eq!(seeds[n - 1].as_slice(), &b[..]);
        for k in 1..n - 1 {
            for i in 0..100 {
                let d2 = seeds[k + 1].as_slice()[i] - 2.0 * seeds[k].as_slice()[i] + seeds[k - 1].as_slice()[i];
                prop_assert!(d2.abs() <= 1e-12);
            }
        }
    }
}
