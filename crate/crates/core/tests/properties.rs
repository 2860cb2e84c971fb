use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qrbsa_core::data::{
    extract_planes, nearest_plane_upsample, sample_patches, sparse_section, synth_voronoi, Normal, PatchSchedule,
};
use qrbsa_core::layers::{pixelshuffle_1d, split_activation, Activation};
use qrbsa_core::loss::{pixel_loss, rotational_distance, LossConfig};
use qrbsa_core::quat::{ipf_color, misorientation, symmetry_reduce, Quat, SymmetrySet};
use qrbsa_core::tensor::{Tape, Tensor};

fn quat() -> impl Strategy<Value = Quat> {
    prop::array::uniform4(-2.0f64..2.0).prop_map(Quat::from_array)
}

fn unit() -> impl Strategy<Value = Quat> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("away from zero", |a| a.iter().map(|v| v * v).sum::<f64>() > 0.01)
        .prop_map(|a| Quat::from_array(a).normalize().unwrap())
}

fn close(a: Quat, b: Quat, tol: f64) -> bool {
    (a - b).norm() < tol
}

proptest! {
    #[test]
    fn hamilton_norm_is_multiplicative(p in quat(), q in quat()) {
        prop_assert!(((p * q).norm() - p.norm() * q.norm()).abs() < 1e-10);
    }

    #[test]
    fn hamilton_is_associative(a in quat(), b in quat(), c in quat()) {
        prop_assert!(close((a * b) * c, a * (b * c), 1e-10));
    }

    #[test]
    fn product_with_conjugate_is_squared_norm(q in quat()) {
        let r = q * q.conjugate();
        prop_assert!(close(r, Quat::new(q.norm() * q.norm(), 0.0, 0.0, 0.0), 1e-10));
    }

    #[test]
    fn misorientation_is_symmetric(p in unit(), q in unit()) {
        let sym = SymmetrySet::hexagonal();
        let (a, b) = (misorientation(p, q, &sym).unwrap(), misorientation(q, p, &sym).unwrap());
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&a));
    }

    #[test]
    fn misorientation_vanishes_on_the_orbit(q in unit(), k in 0usize..12, flip in any::<bool>()) {
        let sym = SymmetrySet::hexagonal();
        let mut e = sym.operators[k] * q;
        if flip {
            e = -e;
        }
        prop_assert!(misorientation(e, q, &sym).unwrap() < 1e-7);
        prop_assert!(close(symmetry_reduce(e, &sym).unwrap(), symmetry_reduce(q, &sym).unwrap(), 1e-9));
    }

    #[test]
    fn ipf_colour_ignores_crystal_symmetry(q in unit(), k in 0usize..12) {
        let sym = SymmetrySet::hexagonal();
        let a = ipf_color(q, [0.0, 0.0, 1.0]);
        let b = ipf_color(sym.operators[k] * q, [0.0, 0.0, 1.0]);
        prop_assert!((a.r - b.r).abs() < 1e-9 && (a.g - b.g).abs() < 1e-9 && (a.b - b.b).abs() < 1e-9);
    }

    #[test]
    fn rotational_distance_is_nondecreasing(a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rotational_distance(lo, 1.9) <= rotational_distance(hi, 1.9));
    }

    #[test]
    fn pixel_loss_is_nonnegative_and_zero_on_self(p in unit(), t in unit()) {
        let cfg = LossConfig::default();
        prop_assert!(pixel_loss(p, t, &cfg).0 >= 0.0);
        prop_assert_eq!(pixel_loss(t, t, &cfg).0, 0.0);
    }

    #[test]
    fn pixelshuffle_is_a_permutation(n in 1usize..3, c in 1usize..4, r in 1usize..5, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::from_fn([n, c * r, h, w], |_| rand::Rng::random(&mut rng));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = pixelshuffle_1d(&mut tape, xv, r).unwrap();
        let mut a = x.data().to_vec();
        let mut b = tape.value(y).to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn split_activation_commutes_with_reshape(h in 1usize..5, w in 1usize..5, gelu in any::<bool>(), seed in any::<u64>()) {
        let act = if gelu { Activation::Gelu } else { Activation::Relu };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::from_fn([2, 8, h, w], |_| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let a = split_activation(&mut tape, xv, act).unwrap();
        let a = tape.reshape(a, &[4, 4, h * w]).unwrap();
        let r = tape.reshape(xv, &[4, 4, h * w]).unwrap();
        let b = split_activation(&mut tape, r, act).unwrap();
        prop_assert_eq!(tape.value(a), tape.value(b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sectioning_keeps_retained_planes(seed in any::<u64>(), stride in 1usize..5, planes in 1usize..4) {
        let nz = planes * stride;
        let vol = synth_voronoi([nz, 6, 7], 3, &mut ChaCha8Rng::seed_from_u64(seed), 0.0).unwrap();
        let lr = sparse_section(&vol, stride).unwrap();
        let up = nearest_plane_upsample(&lr, stride).unwrap();
        for z in (0..nz).step_by(stride) {
            prop_assert_eq!(lr.z_plane(z / stride), vol.z_plane(z));
            prop_assert_eq!(up.z_plane(z), vol.z_plane(z));
        }
    }

    #[test]
    fn sampled_pairs_are_strided(seed in any::<u64>(), scale in prop::sample::select(vec![2usize, 4]), p in prop::sample::select(vec![8usize, 16])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vol = synth_voronoi([16, 16, 20], 5, &mut rng, 1.0).unwrap();
        let mut planes = extract_planes(&vol, Normal::X);
        planes.extend(extract_planes(&vol, Normal::Y));
        let (lr, hr) = sample_patches::<f32, _>(&planes, 0, 1, &PatchSchedule::fixed(p), scale, 2, &mut rng).unwrap();
        for b in 0..2 {
            for c in 0..4 {
                for r in 0..p / scale {
                    for x in 0..p {
                        prop_assert_eq!(lr.at(&[b, c, r, x]), hr.at(&[b, c, r * scale, x]));
                    }
                }
            }
        }
    }

    #[test]
    fn synthesis_is_seeded(seed in any::<u64>(), noise in 0.0f64..3.0) {
        let a = synth_voronoi([5, 6, 7], 4, &mut ChaCha8Rng::seed_from_u64(seed), noise).unwrap();
        let b = synth_voronoi([5, 6, 7], 4, &mut ChaCha8Rng::seed_from_u64(seed), noise).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn hamilton_is_not_commutative() {
    let i = Quat::new(0.0, 1.0, 0.0, 0.0);
    let j = Quat::new(0.0, 0.0, 1.0, 0.0);
    assert_eq!(i * j, Quat::new(0.0, 0.0, 0.0, 1.0));
    assert_eq!(j * i, Quat::new(0.0, 0.0, 0.0, -1.0));
}

#[test]
fn symmetry_set_is_closed() {
    let sym = SymmetrySet::hexagonal();
    assert_eq!(sym.len(), 12);
    for &a in sym.iter() {
        for &b in sym.iter() {
            let c = a * b;
            assert!(
                sym.iter().any(|&s| close(s, c, 1e-12) || close(s, -c, 1e-12)),
                "{a:?} * {b:?} = {c:?} is not in the group"
            );
        }
    }
}
