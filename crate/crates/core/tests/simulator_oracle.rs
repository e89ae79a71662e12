//! Newmark integration against analytic periods, energy bookkeeping, and the
//! ratio-invariance property of elastic buildings.

use std::f64::consts::PI;

use seisdiag::signals::{intensity_ratio, AccelRecord, ChannelPairSet, EtaSet, GROUND};
use seisdiag::simulator::{
    build_dataset, generate_ground_motion, label, simulate, simulate_history, BuildingSpec, GroundMotionSpec,
    HazardScenario, ResponseHistory, DAMAGE_DRIFT,
};
use seisdiag::svm::Label;

fn three_story() -> BuildingSpec {
    BuildingSpec {
        masses: vec![1e5; 3],
        stiffnesses: vec![1.2e8, 1.0e8, 0.8e8],
        yield_drifts: vec![0.004; 3],
        heights: vec![3.0; 3],
        post_yield_ratio: 0.05,
        damping_ratio: 0.05,
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Period from successive upward zero crossings, linearly interpolated.
fn measured_period(x: &[f64], dt: f64) -> f64 {
    let crossings: Vec<f64> = x
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < 0.0 && w[1] >= 0.0)
        .map(|(i, w)| (i as f64 + w[0] / (w[0] - w[1])) * dt)
        .collect();
    assert!(crossings.len() >= 3);
    (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64
}

#[test]
fn free_vibration_period_matches_analytic() {
    let (m, k): (f64, f64) = (2.5e4, 3.0e7);
    let t = 2.0 * PI * (m / k).sqrt();
    let dt = t / 200.0;
    let mut ag = vec![0.0; 200 * 12];
    ag[1] = 1.0;
    ag[2] = 1.0;
    let b = BuildingSpec {
        damping_ratio: 0.0,
        ..BuildingSpec::uniform(1, m, k, f64::INFINITY, 3.0)
    };
    let h = simulate_history(&b, &AccelRecord::new(GROUND, dt, ag).unwrap()).unwrap();
    let x: Vec<f64> = h.displacement[10..].iter().map(|u| u[0]).collect();
    let measured = measured_period(&x, dt);
    assert!((measured / t - 1.0).abs() < 5e-3, "measured {measured} analytic {t}");
}

#[test]
fn elastic_response_is_linear_in_excitation() {
    let b = three_story().linear();
    let gm = generate_ground_motion(&GroundMotionSpec::default(), 1.0, 3).unwrap();
    let full = simulate_history(&b, &gm).unwrap();
    let half = simulate_history(&b, &gm.scaled(0.5)).unwrap();
    let peak = max_abs(full.displacement.iter().flatten().copied());
    let diff = max_abs(
        full.displacement
            .iter()
            .flatten()
            .zip(half.displacement.iter().flatten())
            .map(|(a, b)| a * 0.5 - b),
    );
    assert!(diff <= 1e-9 * 0.5 * peak, "diff {diff} peak {peak}");
}

struct Energy {
    input: f64,
    kinetic: f64,
    strain: f64,
    damping: f64,
}

/// Work terms by trapezoidal integration of the recorded histories.
fn energy_terms(b: &BuildingSpec, h: &ResponseHistory) -> Vec<Energy> {
    let s = b.stories();
    let (a0, a1) = b.rayleigh_coefficients();
    let k = b.stiffness_matrix();
    let c = |v: &[f64]| -> Vec<f64> {
        (0..s)
            .map(|i| a0 * b.masses[i] * v[i] + a1 * (0..s).map(|j| k[(i, j)] * v[j]).sum::<f64>())
            .collect()
    };
    let input_rate = |n: usize| -> f64 { -(0..s).map(|i| b.masses[i] * h.velocity[n][i]).sum::<f64>() * h.ground[n] };
    let damp_rate = |n: usize| -> f64 {
        let cv = c(&h.velocity[n]);
        (0..s).map(|i| h.velocity[n][i] * cv[i]).sum()
    };
    let mut out = Vec::with_capacity(h.velocity.len());
    let (mut input, mut damping) = (0.0, 0.0);
    for n in 0..h.velocity.len() {
        if n > 0 {
            input += 0.5 * h.dt * (input_rate(n - 1) + input_rate(n));
            damping += 0.5 * h.dt * (damp_rate(n - 1) + damp_rate(n));
        }
        let kinetic = 0.5 * (0..s).map(|i| b.masses[i] * h.velocity[n][i].powi(2)).sum::<f64>();
        let strain = 0.5 * (0..s).map(|i| h.story_force[n][i].powi(2) / b.stiffnesses[i]).sum::<f64>();
        out.push(Energy {
            input,
            kinetic,
            strain,
            damping,
        });
    }
    out
}

#[test]
fn elastic_energy_balance_closes() {
    let b = three_story().linear();
    let gm = generate_ground_motion(&GroundMotionSpec::default(), 1.0, 11).unwrap();
    let h = simulate_history(&b, &gm).unwrap();
    let terms = energy_terms(&b, &h);
    let peak_input = max_abs(terms.iter().map(|e| e.input));
    let worst = max_abs(terms.iter().map(|e| e.input - (e.kinetic + e.strain + e.damping)));
    assert!(peak_input > 0.0);
    assert!(worst <= 0.01 * peak_input, "residual {worst} of input {peak_input}");
}

#[test]
fn yielding_story_dissipates_hysteretic_energy() {
    let (m, k): (f64, f64) = (1e5, 1e8);
    let dt = 0.005;
    let w = (k / m).sqrt() * 0.9;
    let ag: Vec<f64> = (0..2000).map(|i| 6.0 * (w * i as f64 * dt).sin()).collect();
    let gm = AccelRecord::new(GROUND, dt, ag).unwrap();
    let work_minus_stored = |b: &BuildingSpec| {
        let h = simulate_history(b, &gm).unwrap();
        let mut work = 0.0;
        for n in 1..h.displacement.len() {
            let dd = h.drift(n, 0) - h.drift(n - 1, 0);
            work += 0.5 * (h.story_force[n][0] + h.story_force[n - 1][0]) * dd;
        }
        let f_end = h.story_force.last().unwrap()[0];
        let peak = (0..h.displacement.len()).map(|n| h.drift(n, 0).abs()).fold(0.0, f64::max);
        (work - 0.5 * f_end * f_end / k, peak)
    };
    let yielding = BuildingSpec {
        damping_ratio: 0.0,
        ..BuildingSpec::uniform(1, m, k, 0.002, 3.0)
    };
    let (loop_area, peak) = work_minus_stored(&yielding);
    assert!(peak > 0.006, "not driven past yield: {peak}");
    assert!(loop_area > 0.0, "{loop_area}");
    let (elastic_area, _) = work_minus_stored(&yielding.linear());
    assert!(elastic_area.abs() < 1e-6 * loop_area, "{elastic_area}");
}

fn ratios(b: &BuildingSpec, gm: &AccelRecord, etas: &[f64]) -> Vec<f64> {
    let r = simulate(b, gm).unwrap();
    let pairs = ChannelPairSet::consecutive(b.stories());
    let find = |id: &str| r.channels.iter().find(|c| c.channel_id() == id).unwrap();
    let mut out = Vec::new();
    for &eta in etas {
        for p in pairs.pairs() {
            out.push(intensity_ratio(find(&p.top), find(&p.bottom), eta).unwrap());
        }
    }
    out
}

#[test]
fn elastic_ratios_are_scale_invariant() {
    let etas = [0.25, 0.8, 1.5, 2.2, 3.0];
    let b = three_story().linear();
    let gm = generate_ground_motion(&GroundMotionSpec::default(), 1.0, 21).unwrap();
    let base = ratios(&b, &gm, &etas);
    for c in [0.5, 2.0, 5.0] {
        for (a, r) in base.iter().zip(ratios(&b, &gm.scaled(c), &etas)) {
            assert!((a - r).abs() <= 1e-6 * a.abs(), "c={c}: {a} vs {r}");
        }
    }
}

#[test]
fn yielding_breaks_ratio_invariance() {
    let etas = [0.5, 1.0, 2.0];
    let b = three_story();
    let gm = generate_ground_motion(&GroundMotionSpec::default(), 0.2, 21).unwrap();
    assert!(simulate(&b, &gm).unwrap().peak_drift_ratios.iter().all(|d| *d < 0.004));
    let big = gm.scaled(10.0);
    assert!(simulate(&b, &big).unwrap().peak_drift_ratios[0] > 0.004);
    let change = ratios(&b, &gm, &etas)
        .iter()
        .zip(ratios(&b, &big, &etas))
        .map(|(a, r)| ((a - r) / a).abs())
        .fold(0.0, f64::max);
    assert!(change > 0.01, "max relative change {change}");
}

#[test]
fn labels_are_monotone_in_scale() {
    let b = three_story();
    let spec = GroundMotionSpec::default();
    for seed in 0..6 {
        let gm = generate_ground_motion(&spec, 1.0, seed).unwrap();
        let mut prev = vec![Label::Undamaged; 3];
        for c in [0.3, 0.6, 0.9, 1.2, 1.6, 2.0, 2.5] {
            let l = label(&simulate(&b, &gm.scaled(c)).unwrap().peak_drift_ratios, DAMAGE_DRIFT);
            for (p, q) in prev.iter().zip(&l.stories) {
                assert!(!(*p == Label::Damaged && *q == Label::Undamaged), "seed {seed} scale {c}");
            }
            prev = l.stories;
        }
    }
}

#[test]
fn dataset_rows_and_probability_mass() {
    let spec = GroundMotionSpec {
        duration: 10.0,
        strong_time: 4.0,
        ..GroundMotionSpec::default()
    };
    let hazard = HazardScenario::exponential(vec![0.5, 1.0, 1.5], 0.8, 5).unwrap();
    let d = build_dataset(&three_story(), &spec, &hazard, 9).unwrap();
    assert_eq!(d.events.len(), 15);
    assert!(d.dropped.is_empty());
    let mass: f64 = d.events.iter().map(|e| e.probability).sum();
    assert!((mass - 1.0).abs() <= 1e-12);
    assert_eq!(d.events[0].record_id, "s00_r000");
    assert_eq!(d.events[14].record_id, "s02_r004");
    assert_eq!(d, build_dataset(&three_story(), &spec, &hazard, 9).unwrap());
    let etas = EtaSet::new(vec![1.0, 2.0]).unwrap();
    let f = d.events[3].features(&ChannelPairSet::consecutive(3), &etas).unwrap();
    assert_eq!(f.values().len(), 8);
}

#[test]
fn stiff_elastic_building_is_never_damaged() {
    let spec = GroundMotionSpec {
        duration: 10.0,
        strong_time: 4.0,
        ..GroundMotionSpec::default()
    };
    let hazard = HazardScenario::exponential(vec![0.5, 1.0, 2.0], 1.0, 4).unwrap();
    let b = BuildingSpec {
        stiffnesses: vec![6e8; 3],
        ..three_story().linear()
    };
    let d = build_dataset(&b, &spec, &hazard, 2).unwrap();
    // Oracle: direct simulation at the largest scale stays below the threshold.
    for e in d.events.iter().filter(|e| e.scale_factor == 2.0) {
        let gm = e.channels[0].clone();
        let direct = simulate(&b, &gm).unwrap();
        assert!(direct.peak_drift_ratios.iter().all(|x| *x < DAMAGE_DRIFT));
    }
    assert!(d.events.iter().all(|e| e.labels.building == Label::Undamaged));
}
