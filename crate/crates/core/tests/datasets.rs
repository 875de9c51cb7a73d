use fltb_core::dataset::{load_cifar10_dir, write_cifar_file, CifarRaw, CIFAR_PIXELS};
use fltb_core::nn::{evaluate, init_model, loss_and_grad, sgd_epochs, Batch};
use fltb_core::{Arch, Error, ModelConfig, SyntheticSpec, TrainConfig};

fn fake_batch(per_class: usize, salt: u8) -> CifarRaw {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for c in 0..10u8 {
        for k in 0..per_class {
            labels.push(c);
            pixels.extend(
                (0..CIFAR_PIXELS).map(|p| (p as u8).wrapping_mul(7).wrapping_add(c * 13 + k as u8 + salt)),
            );
        }
    }
    CifarRaw { labels, pixels }
}

#[test]
fn cifar_directory_loads_and_standardizes() {
    let dir = tempfile::tempdir().unwrap();
    for i in 1..=5 {
        write_cifar_file(&dir.path().join(format!("data_batch_{i}.bin")), &fake_batch(3, i)).unwrap();
    }
    write_cifar_file(&dir.path().join("test_batch.bin"), &fake_batch(2, 99)).unwrap();
    let (train, test) = load_cifar10_dir(dir.path()).unwrap();
    assert_eq!(train.class_counts(), vec![15; 10]);
    assert_eq!(test.class_counts(), vec![2; 10]);
    assert_eq!(train.dim(), CIFAR_PIXELS);

    // per-channel train statistics become (0, 1)
    let plane = CIFAR_PIXELS / 3;
    for ch in 0..3 {
        let vals: Vec<f64> = (0..train.len())
            .flat_map(|i| {
                train.features(i)[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
    }
}

#[test]
fn missing_cifar_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_cifar_file(&dir.path().join("data_batch_1.bin"), &fake_batch(1, 0)).unwrap();
    match load_cifar10_dir(dir.path()) {
        Err(e @ Error::Io { .. }) => assert!(e.to_string().contains("data_batch_2.bin"), "{e}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn separable_synthetic_set_is_learned_centrally() {
    let spec = SyntheticSpec::new(10, 500, 32, 0.5, 1);
    let (train, test) = spec.generate_split(200).unwrap();
    let cfg = ModelConfig::new(Arch::LinearSoftmax, 32, 10, 0);
    let init = init_model(&cfg);
    let idx = train.all_indices();
    let tc = TrainConfig {
        learning_rate: 0.05,
        batch_size: 64,
        local_epochs: 50,
        weight_decay: 0.0,
        shuffle_seed: 3,
    };
    let trained = sgd_epochs(&init, &cfg, &tc, &train, &idx, None).unwrap();
    let before = loss_and_grad(&init, &cfg, &Batch::new(&train, &idx), 0.0)
        .unwrap()
        .0;
    let after = loss_and_grad(&trained, &cfg, &Batch::new(&train, &idx), 0.0)
        .unwrap()
        .0;
    assert!(after < before);
    let all = test.all_indices();
    let m = evaluate(&trained, &cfg, &Batch::new(&test, &all), None).unwrap();
    assert!(m.accuracy >= 0.95, "{}", m.accuracy);
}
