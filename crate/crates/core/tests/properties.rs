//! Property tests for invariants that must hold for every input.

mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_vnu, random_lattice, random_structure};
use xtalgen::canon::{canonical_order, infer_bonds, is_permutation};
use xtalgen::crystal::{niggli_reduce, params_to_matrix, random_translate, wrap_unit, Lattice};
use xtalgen::diffusion::{eps_from_v, forward_noise, v_target, z0_from_v, NoiseSchedule, RunningStats};
use xtalgen::eval::{hill_formula, structure_id, vnu};
use xtalgen::io::{parse_cif, toy_dataset, write_cif};
use xtalgen::tensor::Tensor;

fn lattice() -> impl Strategy<Value = Lattice> {
    any::<u64>().prop_map(|seed| random_lattice(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn wrap_unit_lands_in_half_open_interval(x in -1e6f64..1e6) {
        let w = wrap_unit(x);
        prop_assert!((0.0..1.0).contains(&w));
        let k = x - w;
        prop_assert!((k - k.round()).abs() < 1e-6);
    }

    #[test]
    fn matrix_round_trips_parameters(l in lattice()) {
        let back = params_to_matrix(&l).unwrap().to_lattice();
        for (a, b) in back.as_array().iter().zip(l.as_array()) {
            prop_assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fractional_cartesian_inverse(l in lattice(), f in prop::array::uniform3(-2.0f64..2.0)) {
        let m = params_to_matrix(&l).unwrap();
        let back = m.to_fractional(m.to_cartesian(f));
        for d in 0..3 {
            prop_assert!((back[d] - f[d]).abs() < 1e-10);
        }
    }

    #[test]
    fn niggli_keeps_volume_and_is_idempotent(l in lattice()) {
        let r = niggli_reduce(&l).unwrap();
        let (v0, v1) = (l.volume().unwrap(), r.volume().unwrap());
        prop_assert!((v0 - v1).abs() < 1e-8 * v0);
        prop_assert!(r.lengths[0] <= r.lengths[1] + 1e-9 && r.lengths[1] <= r.lengths[2] + 1e-9);
        prop_assert!(r.angles_in_bounds());
        let rr = niggli_reduce(&r).unwrap();
        for (a, b) in rr.as_array().iter().zip(r.as_array()) {
            prop_assert!((a - b).abs() < 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn canonical_order_is_a_relabeling_invariant(seed in any::<u64>(), n in 1usize..14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_structure(&mut rng, n, &[1, 6, 7, 8, 30]);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let t = s.permuted(&perm);
        let (a, b) = (canonical_order(&infer_bonds(&s, 1.2)).unwrap(), canonical_order(&infer_bonds(&t, 1.2)).unwrap());
        prop_assert!(is_permutation(a.as_slice()));
        let (ca, cb) = (s.permuted(a.as_slice()), t.permuted(b.as_slice()));
        prop_assert_eq!(ca.atom_types(), cb.atom_types());
    }

    #[test]
    fn structure_id_ignores_atom_order_and_translation(seed in any::<u64>(), u in prop::array::uniform3(0.0f64..1.0)) {
        let s = toy_dataset(seed, 1, (3, 20)).unwrap().remove(0);
        let mut perm: Vec<usize> = (0..s.num_atoms()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let id = structure_id(&s, 1.2);
        prop_assert_eq!(&structure_id(&s.permuted(&perm), 1.2), &id);
        prop_assert_eq!(&structure_id(&random_translate(&s, u).unwrap(), 1.2), &id);
    }

    #[test]
    fn hill_formula_ignores_order(mut types in prop::collection::vec(1u8..=40, 1..20), seed in any::<u64>()) {
        let f = hill_formula(types.iter().copied());
        types.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(hill_formula(types), f);
    }

    #[test]
    fn cif_write_parse_is_stable(seed in any::<u64>()) {
        let s = toy_dataset(seed, 1, (2, 40)).unwrap().remove(0);
        let once = parse_cif(&write_cif(&s)).unwrap();
        let twice = parse_cif(&write_cif(&once)).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn v_parameterization_inverts(
        z0 in prop::collection::vec(-5.0f64..5.0, 6),
        eps in prop::collection::vec(-5.0f64..5.0, 6),
        u in 0.0f64..1.0,
    ) {
        let s = NoiseSchedule::new(100_000.0, 2.0);
        let ab = s.alpha_bar(u * s.timesteps);
        let (z0, eps) = (Tensor::matrix(2, 3, z0).unwrap(), Tensor::matrix(2, 3, eps).unwrap());
        let zt = forward_noise(&z0, ab, &eps).unwrap();
        let v = v_target(&z0, &eps, ab).unwrap();
        for (a, b) in z0_from_v(&zt, &v, ab).unwrap().data().iter().zip(z0.data()) {
            prop_assert!((a - b).abs() < 1e-11);
        }
        for (a, b) in eps_from_v(&zt, &v, ab).unwrap().data().iter().zip(eps.data()) {
            prop_assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn alpha_bar_decreases(u in 0.0f64..0.999, du in 1e-3f64..0.5) {
        let s = NoiseSchedule::new(100_000.0, 2.0);
        let t = u * s.timesteps;
        let t2 = ((u + du).min(1.0)) * s.timesteps;
        prop_assert!(s.alpha_bar(t2) <= s.alpha_bar(t));
    }

    #[test]
    fn standardization_round_trips(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..30)) {
        let mut st = RunningStats::new(3);
        for r in &rows {
            st.observe(r);
        }
        for r in &rows {
            let back = st.destandardize_row(&st.standardize_row(r).unwrap()).unwrap();
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn vnu_counts_are_nested(
        picks in prop::collection::vec(prop::option::weighted(0.9, 0u8..6), 0..24),
        train in prop::collection::hash_set(0u8..6, 0..6),
        seed in any::<u64>(),
    ) {
        let ids: Vec<Option<String>> = picks.iter().map(|p| p.map(|x| x.to_string())).collect();
        let train: Vec<String> = train.iter().map(|x| x.to_string()).collect();
        let valid: Vec<bool> = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..ids.len()).map(|_| rand::Rng::random_bool(&mut rng, 0.7)).collect()
        };
        let set: HashSet<String> = train.iter().cloned().collect();
        let r = vnu(&ids, &set, &valid).unwrap();
        prop_assert_eq!(r, brute_vnu(&ids, &train, &valid));
        prop_assert!(r.vnu <= r.novel_unique);
        prop_assert!(r.novel_unique <= r.unique.min(r.novel));
        prop_assert!(r.unique.max(r.novel) <= r.id_exists);
        prop_assert!(r.id_exists <= r.total && r.valid <= r.total);
    }
}
