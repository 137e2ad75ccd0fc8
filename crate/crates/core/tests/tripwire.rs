//! Training must see features and observed labels only.

use nlre::datagen::{gen_gaussian_blobs, inject_noise, split_train_test, CleanDataset, NoiseKind, NoiseSpec, NoisyDataset, NoisySamples};
use nlre::emtrain::{train, train_dataset, Evaluation, SelectionScope, TrainConfig};
use nlre::numkit::Rng;
use nlre::select::CriterionKind;

/// Features and observed labels, with no clean labels anywhere.
struct ObservedOnly {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl NoisySamples for ObservedOnly {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn noisy_label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

fn problem() -> (NoisyDataset, CleanDataset) {
    let mut rng = Rng::new(21);
    let clean = gen_gaussian_blobs(1000, 3, 2, 3.0, &mut rng).unwrap();
    let noisy = inject_noise(&clean, &NoiseSpec::new(NoiseKind::Idn, 0.3), &mut rng).unwrap();
    split_train_test(&noisy, 0.2, &mut rng).unwrap()
}

fn configs() -> Vec<TrainConfig> {
    let base = TrainConfig {
        epochs: 6,
        warmup_epochs: 2,
        ..TrainConfig::default()
    };
    vec![
        base.clone(),
        TrainConfig {
            criterion: CriterionKind::Knn,
            scope: SelectionScope::PerBatch,
            ..base.clone()
        },
        TrainConfig {
            guarded_ascent: true,
            trace_objective: true,
            ..base
        },
    ]
}

#[test]
fn scrambled_clean_labels_do_not_change_training() {
    let (train_ds, test) = problem();
    let mut labels = train_ds.clean_labels().to_vec();
    Rng::new(22).shuffle(&mut labels);
    let scrambled_clean = CleanDataset::new(
        train_ds.features().to_vec(),
        labels,
        train_ds.dim(),
        train_ds.num_classes(),
    )
    .unwrap();
    let scrambled = NoisyDataset::new(
        scrambled_clean,
        train_ds.noisy_labels().to_vec(),
        train_ds.noise_kind(),
        train_ds.nominal_rate(),
    )
    .unwrap();
    assert_ne!(scrambled.flip_mask(), train_ds.flip_mask());
    for config in configs() {
        let a = train_dataset(&config, &train_ds, &test).unwrap();
        let b = train_dataset(&config, &scrambled, &test).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.eps_trajectory, b.eps_trajectory);
        assert_eq!(a.final_split, b.final_split);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn observed_view_trains_identically() {
    let (train_ds, test) = problem();
    let view = ObservedOnly {
        features: train_ds.features().to_vec(),
        labels: train_ds.noisy_labels().to_vec(),
        dim: train_ds.dim(),
        classes: train_ds.num_classes(),
    };
    for config in configs() {
        let full = train_dataset(&config, &train_ds, &test).unwrap();
        let eval = Evaluation {
            test: &test,
            flip_mask: None,
        };
        let blind = train(&config, &view, eval).unwrap();
        assert_eq!(full.model, blind.model);
        assert_eq!(full.eps_trajectory, blind.eps_trajectory);
        assert!(blind.records.iter().all(|r| r.degenerate_flags & nlre::emtrain::FLAG_NO_GROUND_TRUTH != 0));
    }
}
