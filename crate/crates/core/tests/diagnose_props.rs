//! Pattern composition, cost identities, and reproducibility of trained models.

use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seisdiag::costs::{cost, ClassCatalog, CostWeights, PenaltyConfig, ScoreMatrix};
use seisdiag::diagnose::{
    evaluate, pattern_catalog, predict_pattern, predict_pattern_values, severity_order, train_location,
    DiagnoseConfig, DiagnoseError, DiagnosisModel, ExistenceModel, LabeledEvents, LocationModel, Mode, ModelBundle,
    Provenance, TrainingOutcome, TuningProblem,
};
use seisdiag::signals::{ChannelPairSet, EtaSet};
use seisdiag::simulator::{build_dataset, BuildingSpec, GroundMotionSpec, HazardScenario, SimulatedDataset};
use seisdiag::svm::{train, Label, Standardization, SvmHyperParams, SvmModel, TrainingSet};

const DIM: usize = 4;

fn random_member(seed: u64) -> SvmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..25).map(|_| (0..DIM).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let w: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<Label> = x
        .iter()
        .map(|r| {
            let s: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
            if s > 0.0 { Label::Damaged } else { Label::Undamaged }
        })
        .collect();
    let probs = vec![1.0; x.len()];
    let ts = TrainingSet::from_probabilities(x, labels, &probs).unwrap();
    train(&ts, &SvmHyperParams::new(1.0, 10.0, 0.5).unwrap()).unwrap()
}

fn location_model(members: Vec<SvmModel>) -> LocationModel {
    let stories = members.len();
    let hyperparams = vec![SvmHyperParams::new(1.0, 10.0, 0.5).unwrap(); stories];
    LocationModel {
        members,
        hyperparams,
        etas: EtaSet::new(vec![1.0]).unwrap(),
        pairs: ChannelPairSet::consecutive(stories),
        catalog: pattern_catalog(stories, &[]).unwrap(),
    }
}

fn trained_members() -> &'static LocationModel {
    static M: OnceLock<LocationModel> = OnceLock::new();
    M.get_or_init(|| location_model((0..3).map(|s| random_member(40 + s)).collect()))
}

proptest! {
    #[test]
    fn pattern_is_letterwise_member_composition(x in prop::collection::vec(-3.0f64..3.0, DIM)) {
        let model = trained_members();
        let pattern = predict_pattern_values(model, &x).unwrap();
        let letters: String = model
            .members
            .iter()
            .map(|m| if m.decision_value(&x).unwrap() > 0.0 { 'D' } else { 'N' })
            .collect();
        prop_assert_eq!(pattern.to_string(), letters);
    }

    #[test]
    fn constant_member_fixes_its_letter(x in prop::collection::vec(-3.0f64..3.0, DIM)) {
        let mut members = trained_members().members.clone();
        let std = members[0].standardization().clone();
        members[2] = SvmModel::constant(Label::Undamaged, std, 0.5);
        let pattern = predict_pattern_values(&location_model(members), &x).unwrap().to_string();
        prop_assert_eq!(pattern.chars().nth(2), Some('N'));
    }

    #[test]
    fn perfect_predictor_cost_ignores_omega(
        diag in prop::collection::vec(0.0f64..5.0, 2..8),
        omega_seed in any::<u64>(),
        w1 in 0.1f64..20.0,
    ) {
        let p = diag.len();
        let catalog = ClassCatalog::all_present((0..p).map(|i| format!("c{i}")).collect()).unwrap();
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        let s = ScoreMatrix::from_rows(catalog, rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(omega_seed);
        let mut pen = PenaltyConfig::uniform(p);
        for o in &mut pen.omega {
            *o = rng.random_range(1.0..200.0);
        }
        let w = CostWeights::new(w1, 5.0, 0.05).unwrap();
        let c = cost(&s, &w, &pen).unwrap();
        let mass: f64 = diag.iter().sum();
        prop_assert!((c + w1 * mass).abs() <= 1e-12 * (1.0 + w1 * mass));
    }

    #[test]
    fn severity_order_runs_from_intact_to_all_damaged(stories in 1usize..=8) {
        let order = severity_order(stories);
        prop_assert_eq!(order.len(), 1 << stories);
        prop_assert!(order[0].stories().iter().all(|l| *l == Label::Undamaged));
        prop_assert!(order.last().unwrap().stories().iter().all(|l| *l == Label::Damaged));
        let counts: Vec<usize> = order
            .iter()
            .map(|p| p.stories().iter().filter(|l| **l == Label::Damaged).count())
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn mixed_decisions_compose_in_story_order() {
    let model = trained_members();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..4000 {
        let x: Vec<f64> = (0..DIM).map(|_| rng.random_range(-3.0..3.0)).collect();
        let signs: Vec<bool> = model.members.iter().map(|m| m.decision_value(&x).unwrap() > 0.0).collect();
        let p = predict_pattern_values(model, &x).unwrap().to_string();
        if signs == [false, false, false] {
            assert_eq!(p, "NNN");
        }
        if signs == [true, false, false] {
            assert_eq!(p, "DNN");
        }
        seen.insert(p);
    }
    assert!(seen.contains("NNN") && seen.contains("DNN"), "{seen:?}");
}

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

fn short_motion() -> GroundMotionSpec {
    GroundMotionSpec {
        duration: 10.0,
        ..GroundMotionSpec::default()
    }
}

fn small_config() -> DiagnoseConfig {
    let mut cfg = DiagnoseConfig::default();
    cfg.tuner.budget = 10;
    cfg.tuner.init_points = 5;
    cfg.tuner.folds = 4;
    cfg.tuner.acquisition_restarts = 8;
    cfg.tuner.seed = 3;
    cfg
}

struct Fixture {
    data: SimulatedDataset,
    pairs: ChannelPairSet,
    outcome: TrainingOutcome,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let hazard = HazardScenario::exponential(vec![0.2, 0.8, 1.4, 2.0, 2.6], 1.0, 8).unwrap();
        let data = build_dataset(&three_story(), &short_motion(), &hazard, 17).unwrap();
        let pairs = ChannelPairSet::consecutive(3);
        let labeled = LabeledEvents {
            events: &data.events,
            pairs: &pairs,
        };
        let outcome = train_location(&labeled, &small_config()).unwrap();
        Fixture { data, pairs, outcome }
    })
}

fn labeled(f: &Fixture) -> LabeledEvents<'_> {
    LabeledEvents {
        events: &f.data.events,
        pairs: &f.pairs,
    }
}

#[test]
fn rerun_at_incumbent_reproduces_pooled_matrix() {
    let f = fixture();
    let problem = TuningProblem::new(labeled(f), f.outcome.train_rows.clone(), Mode::Location, &small_config()).unwrap();
    let best = f.outcome.tuning.best_trial();
    let again = problem.evaluate(&best.point).unwrap();
    assert_eq!(again.pooled, f.outcome.incumbent_cv.pooled);
    assert_eq!(again.cost.to_bits(), best.objective.to_bits());
    assert_eq!(again.fold_costs, best.fold_costs);
}

#[test]
fn location_model_has_one_member_per_story_and_full_catalog() {
    let f = fixture();
    let DiagnosisModel::Location(m) = &f.outcome.model else {
        panic!("expected a location model");
    };
    assert_eq!(m.members.len(), 3);
    assert_eq!(m.catalog.len(), 8);
    let e = &f.data.events[0];
    let x = e.features(&m.pairs, &m.etas).unwrap();
    assert_eq!(predict_pattern(m, &x).unwrap(), predict_pattern_values(m, x.values()).unwrap());
    let other = EtaSet::new(vec![0.5, 1.0]).unwrap();
    let wrong = e.features(&m.pairs, &other).unwrap();
    assert!(matches!(predict_pattern(m, &wrong), Err(DiagnoseError::Layout(_))));
}

#[test]
fn evaluated_mass_equals_test_set_mass() {
    let f = fixture();
    let rows = &f.outcome.holdout_rows;
    let (s, _) = evaluate(&f.outcome.model, &labeled(f), Some(rows)).unwrap();
    let mass: f64 = rows.iter().map(|&i| f.data.events[i].probability).sum();
    assert!((s.total_mass() - mass).abs() <= 1e-12);
}

#[test]
fn bundle_round_trip_preserves_predictions() {
    let f = fixture();
    let prov = Provenance {
        seed: 3,
        config_hash: "00".repeat(32),
    };
    let json = ModelBundle::new(&f.outcome.model, prov.clone()).to_json();
    let back = ModelBundle::from_json(&json).unwrap();
    assert_eq!(back.provenance, prov);
    assert_eq!(back.members.len(), 3);
    let model = back.into_model().unwrap();
    assert_eq!(model, f.outcome.model);
    let (a, _) = evaluate(&model, &labeled(f), None).unwrap();
    let (b, _) = evaluate(&f.outcome.model, &labeled(f), None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn constant_model_on_intact_data_is_fully_accurate() {
    let hazard = HazardScenario::exponential(vec![0.05, 0.1], 1.0, 4).unwrap();
    let data = build_dataset(&three_story(), &short_motion(), &hazard, 5).unwrap();
    assert!(data.events.iter().all(|e| e.labels.building == Label::Undamaged));
    let pairs = ChannelPairSet::consecutive(3);
    let labeled = LabeledEvents {
        events: &data.events,
        pairs: &pairs,
    };
    let etas = EtaSet::new(vec![1.0, 2.0]).unwrap();
    let rows: Vec<usize> = (0..data.events.len()).collect();
    let std = Standardization::fit(&labeled.features(&rows, &etas).unwrap());
    let model = DiagnosisModel::Existence(ExistenceModel {
        svm: SvmModel::constant(Label::Undamaged, std, 1.0),
        hyperparams: SvmHyperParams::new(1.0, 1.0, 1.0).unwrap(),
        etas,
        pairs: pairs.clone(),
    });
    let (s, r) = evaluate(&model, &labeled, None).unwrap();
    assert_eq!(r.global_accuracy, 1.0);
    assert!((s.total_mass() - 1.0).abs() <= 1e-12);

    let err = train_location(&labeled, &small_config()).unwrap_err();
    assert!(matches!(err, DiagnoseError::DegenerateDataset(_)), "{err}");
}

#[test]
fn training_is_deterministic() {
    let f = fixture();
    let again = train_location(&labeled(f), &small_config()).unwrap();
    assert_eq!(again.model, f.outcome.model);
    assert_eq!(again.scores, f.outcome.scores);
    assert_eq!(
        again.tuning.history_csv(&again.space),
        f.outcome.tuning.history_csv(&f.outcome.space)
    );
}
