use proptest::prelude::*;

use nalgebra::DMatrix;
use pilotmimo::asymptotics::{asymptotic_ber, asymptotic_sinr};
use pilotmimo::channel::{CsiEstimate, PowerProfile, C64};
use pilotmimo::grid::CellGrid;
use pilotmimo::metrics::{compute_ccdf, compute_cdf, percentile};
use pilotmimo::pilot_allocation::{enumerate_permutations, PilotAssignment};
use pilotmimo::power_control::{effective_interference, opc_step, tpc_step};
use pilotmimo::precoding::{mf_precoder, zf_precoder};
use pilotmimo::scenario::BetaTensor;

fn instance() -> impl Strategy<Value = (BetaTensor, PowerProfile, PilotAssignment)> {
    (2usize..=4, 1usize..=3).prop_flat_map(|(cells, users)| {
        let n = cells * users;
        (
            prop::collection::vec(0.01f64..2.0, n * cells),
            prop::collection::vec(0.5f64..20.0, n),
            prop::collection::vec(0.1f64..10.0, n),
            prop::collection::vec(0usize..720, cells),
        )
            .prop_map(move |(b, g, p, pick)| {
                let mut it = b.into_iter();
                let beta = BetaTensor::from_fn(cells, users, |_, _, _| it.next().unwrap());
                let gamma = CellGrid::from_fn(cells, users, |c, u| g[c * users + u]);
                let phi = CellGrid::from_fn(cells, users, |c, u| p[c * users + u]);
                let perms = enumerate_permutations(users).unwrap();
                let a = PilotAssignment::from_perms(pick.iter().map(|i| perms[i % perms.len()].clone()).collect()).unwrap();
                (beta, PowerProfile { gamma, phi_max: phi.clone(), phi }, a)
            })
    })
}

proptest! {
    #[test]
    fn opc_never_exceeds_tpc_or_cap(i in 0.0f64..100.0, z in 1e-3f64..1e3, cap in 1e-3f64..100.0) {
        let o = opc_step(i, z, cap);
        prop_assert!(o >= 0.0);
        prop_assert!(o <= tpc_step(i, z, cap));
        prop_assert!(o <= cap * (1.0 + 1e-15));
    }

    #[test]
    fn opc_branches_meet_at_boundary(z in 1e-2f64..1e2, cap in 1e-2f64..1e2) {
        let i = cap / z;
        prop_assert!((opc_step(i, z, cap) - cap).abs() <= 1e-12 * cap);
        prop_assert!((opc_step(i * (1.0 + 1e-9), z, cap) - cap).abs() <= 1e-8 * cap);
    }

    #[test]
    fn ber_is_a_sign_pattern_fraction((beta, powers, a) in instance()) {
        let (cells, users) = powers.shape();
        let rows = (1usize << (cells - 1)) as f64;
        for c in 0..cells {
            for u in 0..users {
                let b = asymptotic_ber(&beta, &powers, &a, c, u).unwrap();
                prop_assert!((0.0..=0.5).contains(&b));
                prop_assert!((b * rows - (b * rows).round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sinr_ignores_common_power_scale((beta, powers, a) in instance(), c in 0.01f64..100.0) {
        let s1 = asymptotic_sinr(&beta, &powers, &a);
        let s2 = asymptotic_sinr(&beta, &powers.with_phi(powers.phi.map(|p| p * c)), &a);
        for (x, y) in s1.as_slice().iter().zip(s2.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn interference_ignores_own_power((beta, powers, a) in instance(), boost in 0.1f64..10.0) {
        let before = effective_interference(&beta, &powers, &a, 0, 0);
        let mut p = powers.clone();
        p.phi.set(0, 0, powers.phi.at(0, 0) * boost);
        prop_assert_eq!(before, effective_interference(&beta, &p, &a, 0, 0));
    }

    #[test]
    fn cdf_steps_are_monotone(v in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 1..200)) {
        let cdf = compute_cdf(&v).unwrap();
        prop_assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        prop_assert_eq!(cdf.last().unwrap().1, 1.0);
        let ccdf = compute_ccdf(&v).unwrap();
        prop_assert_eq!(ccdf[0].1, 1.0);
        let p5 = percentile(&v, 5.0).unwrap();
        prop_assert!(v.contains(&p5));
        // the 5th percentile is where the complementary curve still holds >= 95%
        let above = v.iter().filter(|&&x| x >= p5).count() as f64 / v.len() as f64;
        prop_assert!(above >= 0.95);
    }

    #[test]
    fn assignment_json_round_trips((_, _, a) in instance()) {
        prop_assert_eq!(PilotAssignment::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn zf_nulls_other_pilots(k in 1usize..5, extra in 0usize..12, seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * k + extra;
        let g = DMatrix::from_fn(k, n, |_, _| pilotmimo::channel::complex_normal(&mut rng));
        let csi = CsiEstimate::from_ghat(vec![g.clone()]);
        let zf = zf_precoder(&csi).unwrap();
        let mf = mf_precoder(&csi).unwrap();
        let m = &g * &zf.p[0];
        let scale = m.diagonal().iter().map(|d: &C64| d.norm()).fold(0.0, f64::max);
        for i in 0..k {
            for j in (0..k).filter(|&j| j != i) {
                prop_assert!(m[(i, j)].norm() <= 1e-8 * scale);
            }
            prop_assert!((zf.p[0].column(i).norm() - 1.0).abs() < 1e-12);
            prop_assert!((mf.p[0].column(i).norm() - 1.0).abs() < 1e-12);
        }
    }
}
