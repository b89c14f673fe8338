//! Independent cross-checks: brute-force equilibria, large-array agreement
//! of the two precoders with the limit, and training-estimate convergence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pilotmimo::asymptotics::{asymptotic_ber, asymptotic_sinr, linear_to_db};
use pilotmimo::channel::{check_alpha_convergence, make_pilot_book, simulate_training, ChannelRealization, Noise, PowerProfile};
use pilotmimo::harness::{generate_drop, ExperimentConfig, CENTRAL_CELL};
use pilotmimo::pilot_allocation::{best_response_rounds, enumerate_permutations, AllocationCriterion, PilotAssignment};
use pilotmimo::precoding::{build_precoder, downlink_gains, empirical_metrics, PrecoderKind};
use pilotmimo::scenario::BetaTensor;

fn own_score(crit: AllocationCriterion, beta: &BetaTensor, powers: &PowerProfile, a: &PilotAssignment, cell: usize) -> f64 {
    let users = beta.users_per_cell();
    let sinr = asymptotic_sinr(beta, powers, a);
    let s = sinr.cell(cell);
    let b: Vec<f64> = (0..users).map(|u| asymptotic_ber(beta, powers, a, cell, u).unwrap()).collect();
    match crit {
        AllocationCriterion::MinBer => b.iter().sum::<f64>() / users as f64,
        AllocationCriterion::MaxSinr => s.iter().sum::<f64>() / users as f64,
        AllocationCriterion::MinimaxBer => b.iter().copied().fold(f64::MIN, f64::max),
        AllocationCriterion::MaxminSinr => s.iter().copied().fold(f64::MAX, f64::min),
        AllocationCriterion::Random => 0.0,
    }
}

/// Settled best-response outcomes on two-user, two-cell networks must be
/// pure equilibria when checked against every joint assignment.
#[test]
fn settled_games_are_equilibria_by_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let perms = enumerate_permutations(2).unwrap();
    let powers = PowerProfile::uniform(2, 2, 10.0, 10.0);
    let mut checked = 0;
    for _ in 0..200 {
        let beta = BetaTensor::from_fn(2, 2, |bs, _, c| {
            if bs == c {
                rng.random_range(0.2..2.0)
            } else {
                rng.random_range(0.05..1.0)
            }
        });
        for crit in [
            AllocationCriterion::MinBer,
            AllocationCriterion::MaxSinr,
            AllocationCriterion::MinimaxBer,
            AllocationCriterion::MaxminSinr,
        ] {
            let (a, trace) = best_response_rounds(crit, &beta, &powers, &PilotAssignment::identity(2, 2), 20).unwrap();
            if !trace.converged {
                continue;
            }
            checked += 1;
            for cell in 0..2 {
                let current = own_score(crit, &beta, &powers, &a, cell);
                for p in &perms {
                    let mut dev = a.clone();
                    dev.set_cell(cell, p);
                    let alt = own_score(crit, &beta, &powers, &dev, cell);
                    assert!(
                        !crit.better(alt, current) || (alt - current).abs() <= 1e-12 * current.abs(),
                        "{crit}: cell {cell} could move from {current} to {alt}"
                    );
                }
            }
        }
    }
    assert!(checked > 400, "only {checked} settled games");
}

/// With one user per cell there is nothing to permute: every game settles
/// in a single round.
#[test]
fn single_user_networks_settle_at_once() {
    let beta = BetaTensor::from_fn(7, 1, |bs, _, c| if bs == c { 1.0 } else { 0.1 + 0.01 * (bs + c) as f64 });
    let powers = PowerProfile::uniform(7, 1, 10.0, 10.0);
    let (_, trace) =
        best_response_rounds(AllocationCriterion::MaxminSinr, &beta, &powers, &PilotAssignment::identity(7, 1), 20).unwrap();
    assert!(trace.converged);
    assert_eq!(trace.rounds_played(), 1);
}

#[test]
fn large_arrays_agree_with_limit() {
    let cfg = ExperimentConfig::default();
    let layout = cfg.scenario.layout().unwrap();
    let n = 1 << 14;
    let book = make_pilot_book(4).unwrap();
    for drop in 0..2u64 {
        let beta = generate_drop(&cfg.scenario, &layout, drop).unwrap();
        let powers = PowerProfile::uniform(7, 4, cfg.gamma, cfg.phi_max);
        let a = PilotAssignment::identity(7, 4);
        let bound = asymptotic_sinr(&beta, &powers, &a);
        let mut rng = ChaCha8Rng::seed_from_u64(drop);
        let chan = ChannelRealization::generate(&beta, n, &mut rng).unwrap();
        let csi = simulate_training(&book, &chan, &powers, &a, Noise::Awgn, &mut rng).unwrap();
        let mut measured = Vec::new();
        for kind in [PrecoderKind::Mf, PrecoderKind::Zf] {
            let p = build_precoder(kind, &csi).unwrap();
            let g = downlink_gains(&p, &chan, &powers, &a).unwrap();
            measured.push(empirical_metrics(&g, 4000, Noise::Awgn, &mut rng).unwrap().sinr);
        }
        for u in 0..4 {
            let b = linear_to_db(bound.at(CENTRAL_CELL, u));
            let mf = linear_to_db(measured[0].at(CENTRAL_CELL, u));
            let zf = linear_to_db(measured[1].at(CENTRAL_CELL, u));
            assert!((mf - zf).abs() < 1.0, "drop {drop} user {u}: MF {mf:.2} ZF {zf:.2}");
            assert!((zf - b).abs() < 1.0 && (mf - b).abs() < 1.0, "drop {drop} user {u}: {mf:.2}/{zf:.2} vs {b:.2}");
        }
    }
}

#[test]
fn detection_rails_behave_alike() {
    let cfg = ExperimentConfig::default();
    let layout = cfg.scenario.layout().unwrap();
    let book = make_pilot_book(4).unwrap();
    let (mut re, mut im) = (0.0, 0.0);
    for drop in 0..20u64 {
        let beta = generate_drop(&cfg.scenario, &layout, drop).unwrap();
        let powers = PowerProfile::uniform(7, 4, cfg.gamma, cfg.phi_max);
        let a = PilotAssignment::identity(7, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + drop);
        let chan = ChannelRealization::generate(&beta, 64, &mut rng).unwrap();
        let csi = simulate_training(&book, &chan, &powers, &a, Noise::Awgn, &mut rng).unwrap();
        let p = build_precoder(PrecoderKind::Mf, &csi).unwrap();
        let g = downlink_gains(&p, &chan, &powers, &a).unwrap();
        let m = empirical_metrics(&g, 5000, Noise::Awgn, &mut rng).unwrap();
        re += m.ber_re.as_slice().iter().sum::<f64>();
        im += m.ber_im.as_slice().iter().sum::<f64>();
    }
    let mean = 0.5 * (re + im);
    assert!(mean > 0.0);
    assert!((re - im).abs() / mean < 0.05, "real {re} imag {im}");
}

#[test]
fn training_estimate_norm_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let beta = BetaTensor::from_fn(3, 2, |bs, u, c| if bs == c { 1.0 + u as f64 } else { 0.2 });
    let powers = PowerProfile::uniform(3, 2, 10.0, 10.0);
    let rows =
        check_alpha_convergence(&beta, &powers, &PilotAssignment::identity(3, 2), &[16, 256, 4096], 10, &mut rng).unwrap();
    assert!(rows.windows(2).all(|w| w[1].median_abs_error < w[0].median_abs_error));
    assert!(rows[2].median_abs_error < 1.0);
}
