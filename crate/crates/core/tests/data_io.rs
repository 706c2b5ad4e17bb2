use ovanet_core::{generate_synthetic, load_feature_file, make_category_shift, write_feature_file, Domain, SynthConfig};

#[test]
fn exported_synthetic_data_reloads_exactly() {
    let split = make_category_shift(12, 4, 2, 3).unwrap();
    let cfg = SynthConfig {
        total_classes: 12,
        dim: 5,
        samples_per_class: 7,
        shift_rotation_angle: 0.4,
        shift_translation_sigma: 1.5,
        seed: 11,
        ..Default::default()
    };
    let (src, tgt) = generate_synthetic(&split, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (ds, name, domain) in [(&src, "source.csv", Domain::Source), (&tgt, "target.csv", Domain::Target)] {
        let path = dir.path().join(name);
        write_feature_file(&path, ds).unwrap();
        let back = load_feature_file(&path, domain).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.features.shape(), ds.features.shape());
        for (a, b) in back.features.data().iter().zip(ds.features.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn unlabeled_rows_survive_a_round_trip() {
    let text = "label,f0,f1\n-1,0.5,1e-3\n2,-4,7.25\n";
    let ds = ovanet_core::data::read_features(text.as_bytes(), Domain::Target).unwrap();
    assert_eq!(ds.labels, vec![None, Some(2)]);
    let mut buf = Vec::new();
    ovanet_core::data::write_features(&mut buf, &ds).unwrap();
    let again = ovanet_core::data::read_features(buf.as_slice(), Domain::Target).unwrap();
    assert_eq!(again, ds);
}
