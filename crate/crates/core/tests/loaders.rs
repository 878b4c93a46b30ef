//! Readers against small fixtures written in each corpus's published layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use edd_core::data::{load_dataset, DatasetSource, SplitDataset, SyntheticConfig, WindowingConfig};
use edd_core::Error;

fn windowing() -> WindowingConfig {
    WindowingConfig {
        length: 16,
        overlap: 0.5,
        target_rate: 50.0,
        hhar_samples_per_user: 0,
        seed: 0,
    }
}

fn load(name: &str, root: &Path) -> edd_core::Result<SplitDataset> {
    let source = DatasetSource::from_name(name, Some(root), &SyntheticConfig::default())?;
    load_dataset(&source, &windowing())
}

fn hhar_file(kind: &str, users: &[(char, &str)]) -> String {
    let mut s = String::from("Index,Arrival_Time,Creation_Time,x,y,z,User,Model,Device,gt\n");
    let mut idx = 0;
    for (u, gt) in users {
        // 3 s at 100 Hz
        for i in 0..300 {
            let t_ns = 1_000_000_000_000u64 + i * 10_000_000;
            let v = if kind == "acc" { 9.8 } else { 0.1 } + (i as f64 * 0.1).sin();
            writeln!(s, "{idx},0,{t_ns},{v},{},{},{u},nexus4,nexus4_1,{gt}", v * 0.5, -v).unwrap();
            idx += 1;
        }
    }
    s
}

#[test]
fn hhar_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let users = [('a', "walk"), ('b', "null"), ('g', "sit")];
    fs::write(dir.path().join("Phones_accelerometer.csv"), hhar_file("acc", &users)).unwrap();
    fs::write(dir.path().join("Phones_gyroscope.csv"), hhar_file("gyro", &users)).unwrap();
    let d = load("hhar", dir.path()).unwrap();
    assert_eq!(d.train.window_shape(), Some([6, 16]));
    // 3 s resampled to 50 Hz gives 150 samples and (150 − 16) / 8 + 1 windows
    assert_eq!(d.train.len(), 17);
    assert_eq!(d.validation.len(), 17);
    assert!(d.train.labels.iter().all(|&l| d.train.class_names[l] == "walk"));
    assert!(d.validation.labels.iter().all(|&l| d.validation.class_names[l] == "sit"));
    assert_eq!(d.metadata.train_participants, vec![1]);
    assert_eq!(d.metadata.validation_participants, vec![7]);
    // gyroscope channels follow the accelerometer
    let w = &d.train.windows[0];
    assert!(w.channel(0)[0] > 8.0 && w.channel(3)[0] < 2.0);
}

#[test]
fn hhar_missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("Phones_accelerometer.csv"), "Index,Creation_Time,x,y,User,Device,gt\n").unwrap();
    fs::write(dir.path().join("Phones_gyroscope.csv"), hhar_file("gyro", &[('a', "walk")])).unwrap();
    match load("hhar", dir.path()) {
        Err(Error::MissingChannel { channel, .. }) => assert_eq!(channel, "z"),
        other => panic!("expected a missing channel, got {other:?}"),
    }
}

#[test]
fn hhar_bad_number_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut acc = hhar_file("acc", &[('a', "walk")]);
    acc = acc.replacen(",nexus4,nexus4_1,walk\n", ",nexus4,nexus4_1,walk\n0,0,oops,1,2,3,a,nexus4,nexus4_1,walk\n", 1);
    fs::write(dir.path().join("Phones_accelerometer.csv"), acc).unwrap();
    fs::write(dir.path().join("Phones_gyroscope.csv"), hhar_file("gyro", &[('a', "walk")])).unwrap();
    match load("hhar", dir.path()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn uci_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("UCI HAR Dataset");
    let signals = ["total_acc_x", "total_acc_y", "total_acc_z", "body_gyro_x", "body_gyro_y", "body_gyro_z"];
    for (split, subjects, labels) in [("train", [1u32, 1, 3], [1u32, 4, 6]), ("test", [2, 2, 2], [2, 2, 5])] {
        let inertial = root.join(split).join("Inertial Signals");
        fs::create_dir_all(&inertial).unwrap();
        let lines = |v: &[u32]| v.iter().map(|x| format!("{x}\n")).collect::<String>();
        fs::write(root.join(split).join(format!("y_{split}.txt")), lines(&labels)).unwrap();
        fs::write(root.join(split).join(format!("subject_{split}.txt")), lines(&subjects)).unwrap();
        for (c, s) in signals.iter().enumerate() {
            let mut text = String::new();
            for row in 0..3 {
                let vals: Vec<String> = (0..128).map(|t| format!("{:e}", (c * 1000 + row * 128 + t) as f64)).collect();
                writeln!(text, "  {}", vals.join("  ")).unwrap();
            }
            fs::write(inertial.join(format!("{s}_{split}.txt")), text).unwrap();
        }
    }
    let d = load("uci", dir.path()).unwrap();
    assert_eq!((d.train.len(), d.validation.len()), (3, 3));
    assert_eq!(d.train.labels, vec![0, 3, 5]);
    assert_eq!(d.validation.labels, vec![1, 1, 4]);
    assert_eq!(d.train.window_shape(), Some([6, 128]));
    assert_eq!(d.train.windows[1].at(2, 5), (2000 + 128 + 5) as f64);
}

#[test]
fn uci_missing_signal_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    fs::create_dir_all(train.join("Inertial Signals")).unwrap();
    fs::write(train.join("y_train.txt"), "1\n").unwrap();
    fs::write(train.join("subject_train.txt"), "1\n").unwrap();
    match load("uci", dir.path()) {
        Err(Error::MissingChannel { channel, .. }) => assert_eq!(channel, "total_acc_x"),
        other => panic!("expected a missing channel, got {other:?}"),
    }
}

fn motionsense_csv(rows: usize) -> String {
    let mut s = String::from(
        "\"\",attitude.roll,attitude.pitch,attitude.yaw,gravity.x,gravity.y,gravity.z,rotationRate.x,rotationRate.y,rotationRate.z,userAcceleration.x,userAcceleration.y,userAcceleration.z\n",
    );
    for i in 0..rows {
        let v = i as f64 * 0.01;
        writeln!(s, "{i},0,0,0,0.5,0.25,-1,{v},{},{},0.1,0.2,{v}", 2.0 * v, 3.0 * v).unwrap();
    }
    s
}

#[test]
fn motionsense_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("A_DeviceMotion_data");
    for (trial, sub) in [("wlk_7", 1), ("jog_9", 1), ("sit_5", 20), ("unknown_1", 1)] {
        fs::create_dir_all(base.join(trial)).unwrap();
        fs::write(base.join(trial).join(format!("sub_{sub}.csv")), motionsense_csv(100)).unwrap();
    }
    let d = load("motionsense", dir.path()).unwrap();
    // 100 samples at 50 Hz: (100 − 16) / 8 + 1 windows per file
    assert_eq!(d.train.len(), 2 * 11);
    assert_eq!(d.validation.len(), 11);
    let w = &d.train.windows[0];
    // accelerometer is user acceleration plus gravity
    assert!((w.at(0, 0) - 0.6).abs() < 1e-12);
    assert!((w.at(1, 0) - 0.45).abs() < 1e-12);
    assert!((w.at(4, 3) - 2.0 * w.at(3, 3)).abs() < 1e-12);
}

fn pamap2_dat(rows: &[(f64, u32, bool)]) -> String {
    let mut s = String::new();
    for &(t, activity, missing) in rows {
        let mut cols = vec![format!("{t:.2}"), activity.to_string(), "NaN".into()];
        for c in 3..54 {
            let v = if missing && c == 5 { f64::NAN } else { c as f64 + t };
            cols.push(if v.is_nan() { "NaN".into() } else { format!("{v}") });
        }
        writeln!(s, "{}", cols.join(" ")).unwrap();
    }
    s
}

#[test]
fn pamap2_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let proto = dir.path().join("Protocol");
    fs::create_dir_all(&proto).unwrap();
    // 100 Hz: 2 s of lying, 1 s of transient activity 0, 2 s of walking
    let rows = |offset: f64| -> Vec<(f64, u32, bool)> {
        (0..500)
            .map(|i| {
                let activity = match i {
                    0..200 => 1,
                    200..300 => 0,
                    _ => 4,
                };
                (offset + i as f64 * 0.01, activity, i == 50)
            })
            .collect()
    };
    fs::write(proto.join("subject101.dat"), pamap2_dat(&rows(5.0))).unwrap();
    fs::write(proto.join("subject108.dat"), pamap2_dat(&rows(0.0))).unwrap();
    let d = load("pamap2", dir.path()).unwrap();
    let names = |s: &edd_core::data::LabeledDataset| -> Vec<String> {
        let mut v: Vec<String> = s.labels.iter().map(|&l| s.class_names[l].clone()).collect();
        v.dedup();
        v
    };
    assert_eq!(names(&d.train), vec!["lying", "walking"]);
    assert_eq!(d.metadata.validation_participants, vec![8]);
    // wrist accelerometer is column 4, gyroscope column 10
    let w = &d.train.windows[0];
    assert!((w.at(0, 0) - (4.0 + 5.0)).abs() < 1e-9);
    assert!((w.at(3, 0) - (10.0 + 5.0)).abs() < 1e-9);
    assert!(d.train.len() > 0 && d.train.len() == d.validation.len());
}

#[test]
fn pamap2_short_row_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("subject101.dat"), "0.00 1 NaN 1 2 3\n").unwrap();
    assert!(matches!(load("pamap2", dir.path()), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn unknown_dataset_names_the_key() {
    let e = DatasetSource::from_name("kinetics", Some(Path::new(".")), &SyntheticConfig::default()).unwrap_err();
    assert!(matches!(e, Error::Config { ref key, .. } if key == "data.dataset"));
    let e = DatasetSource::from_name("hhar", None, &SyntheticConfig::default()).unwrap_err();
    assert!(matches!(e, Error::Config { ref key, .. } if key == "data.root"));
}
