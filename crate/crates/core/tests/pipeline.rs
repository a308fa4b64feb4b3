use phaseless::autodiff::Reduction;
use phaseless::dataset::{generate_dataset, split, Dataset, DatasetConfig};
use phaseless::geometry::icosphere;
use phaseless::networks::{end_to_end, InverseModel, NetworkConfig, VaeModel};
use phaseless::solver::{
    analytic_soft_sphere, complex_relative_l2, far_field, make_direction_grid, series_terms_needed, solve_soft,
    PlaneWave,
};
use phaseless::training::{evaluate, mean_cloud, train_inverse, train_vae, TrainConfig};

#[test]
fn sphere_far_field_matches_series() {
    let wave = PlaneWave::with_wavenumber([0.0, 0.0, 1.0], 2.0).unwrap();
    let grid = make_direction_grid(13, 25).unwrap();
    let exact = analytic_soft_sphere(1.0, &wave, &grid, series_terms_needed(2.0)).unwrap();
    let sol = solve_soft(&icosphere(3).unwrap(), &wave).unwrap();
    let bem = far_field(&sol, &grid).unwrap();
    let err = complex_relative_l2(bem.complex_values().unwrap(), exact.complex_values().unwrap());
    assert!(err < 0.01, "relative L2 {err}");
}

#[test]
fn dataset_to_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let config = DatasetConfig {
        n: 6,
        subdivisions: 2,
        ..DatasetConfig::default()
    };
    let manifest = generate_dataset(&config, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.len(), 6);
    let (train_ids, test_ids) = split(&manifest, config.seed);
    assert_eq!((train_ids.len(), test_ids.len()), (5, 1));
    let pick = |ids: &[u64]| ids.iter().map(|&id| ds.get(id).unwrap().clone()).collect::<Vec<_>>();
    let (train, test) = (pick(&train_ids), pick(&test_ids));

    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let mut vae = VaeModel::new(NetworkConfig::toy(), 0).unwrap();
    train_vae(&mut vae, &train, &[], &cfg).unwrap();
    let mut inverse = InverseModel::new(NetworkConfig::toy(), 0).unwrap();
    let report = train_inverse(&mut inverse, &vae, None, &train, &[], &cfg).unwrap();
    assert_eq!(report.records.len(), 2);

    // Checkpoints restore the exact same pipeline.
    let (mut a, mut b) = (Vec::new(), Vec::new());
    vae.save(&mut a, 2).unwrap();
    inverse.save(&mut b, 2).unwrap();
    let (vae2, _) = VaeModel::load(a.as_slice()).unwrap();
    let (inverse2, _) = InverseModel::load(b.as_slice()).unwrap();
    let field = ds.field_grid(test_ids[0]).unwrap();
    assert_eq!(end_to_end(&inverse, &vae, &field).unwrap(), end_to_end(&inverse2, &vae2, &field).unwrap());

    let eval = evaluate(&inverse, &vae, None, &test, &mean_cloud(&train).unwrap(), Reduction::Mean).unwrap();
    assert!(eval.mean_chamfer.is_finite() && eval.mean_baseline_chamfer.is_finite());
}
