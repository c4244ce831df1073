use std::path::Path;

use xlstm_ecg::datasets::{load_multilabel_generic, load_ptbxl, load_synthetic, write_synthetic, LEAD_NAMES};
use xlstm_ecg::wfdb::{header_for, write_record};

fn write_ecg(dir: &Path, rel: &str, leads: usize) {
    let samples: Vec<f64> = (0..200 * leads).map(|i| ((i % 97) as f64 - 48.0) / 100.0).collect();
    let name = Path::new(rel).file_name().unwrap().to_str().unwrap();
    let header = header_for(name, 100.0, leads, &samples, 1000.0, &LEAD_NAMES);
    write_record(&dir.join(rel), &header, &samples).unwrap();
}

fn ptbxl_fixture(dir: &Path) {
    let rows = [
        ("records100/00000/00001_lr", 1, "{'NORM': 100.0, 'SR': 0.0}"),
        ("records100/00000/00002_lr", 3, "{'IMI': 80.0, 'LVH': 50.0}"),
        ("records100/00000/00003_lr", 9, "{'NDT': 100.0, 'XYZ': 15.0}"),
        ("records100/00000/00004_lr", 10, "{'CLBBB': 100.0}"),
        ("records100/00000/00005_lr", 2, "{'SR': 0.0}"),
    ];
    let mut csv = String::from("ecg_id,filename_lr,strat_fold,scp_codes\n");
    for (i, (path, fold, codes)) in rows.iter().enumerate() {
        csv.push_str(&format!("{},{path},{fold},\"{codes}\"\n", i + 1));
        write_ecg(dir, path, 12);
    }
    std::fs::write(dir.join("ptbxl_database.csv"), csv).unwrap();
    std::fs::write(
        dir.join("map.csv"),
        "code,superclass\nNORM,NORM\nIMI,MI\nLVH,HYP\nNDT,STTC\nCLBBB,CD\nSR,\n",
    )
    .unwrap();
}

#[test]
fn ptbxl_superclasses_and_folds() {
    let tmp = tempfile::tempdir().unwrap();
    ptbxl_fixture(tmp.path());
    let loaded = load_ptbxl(&tmp.path().join("ptbxl_database.csv"), tmp.path(), &tmp.path().join("map.csv")).unwrap();
    assert_eq!(loaded.class_names, ["NORM", "CD", "HYP", "MI", "STTC"]);
    let split = &loaded.split;
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (2, 1, 1));
    assert_eq!(split.train[0].labels, [1, 0, 0, 0, 0]);
    assert_eq!(split.train[1].labels, [0, 0, 1, 1, 0]);
    assert_eq!(split.validation[0].labels, [0, 0, 0, 0, 1]);
    assert_eq!(split.test[0].labels, [0, 1, 0, 0, 0]);
    assert_eq!(split.train[0].n_leads(), 12);
    // SR maps to no class: its record is dropped, the code is not unknown
    assert_eq!(loaded.dropped_unlabeled, 1);
    assert_eq!(loaded.unknown_codes.get("XYZ"), Some(&1));
    assert!(!loaded.unknown_codes.contains_key("SR"));
    assert_eq!(loaded.warnings().len(), 2);
    split.check_disjoint().unwrap();
}

#[test]
fn ptbxl_requires_twelve_leads() {
    let tmp = tempfile::tempdir().unwrap();
    ptbxl_fixture(tmp.path());
    write_ecg(tmp.path(), "records100/00000/00001_lr", 3);
    let err = load_ptbxl(&tmp.path().join("ptbxl_database.csv"), tmp.path(), &tmp.path().join("map.csv")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("leads"));
}

#[test]
fn generic_holdout_and_validation_carving() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("record_path,group,labels\n");
    for i in 0..30 {
        let rel = format!("r/{i:03}");
        write_ecg(tmp.path(), &rel, 2);
        let labels = if i % 3 == 0 { "AF;PVC" } else if i % 3 == 1 { "AF" } else { "PVC;noise" };
        csv.push_str(&format!("{rel},{},{labels}\n", i % 3));
    }
    std::fs::write(tmp.path().join("meta.csv"), csv).unwrap();
    let classes = vec!["AF".to_string(), "PVC".to_string()];
    let loaded = load_multilabel_generic(&tmp.path().join("meta.csv"), tmp.path(), &classes, 1).unwrap();
    let split = &loaded.split;
    assert_eq!(split.test.len(), 10);
    assert!(split.test.iter().all(|r| r.labels == [1, 0]));
    assert_eq!(split.train.len() + split.validation.len(), 20);
    assert_eq!(split.validation.len(), 2);
    assert_eq!(loaded.unknown_codes.get("noise"), Some(&10));
    split.check_disjoint().unwrap();

    let err = load_multilabel_generic(&tmp.path().join("meta.csv"), tmp.path(), &[], 1).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn synthetic_set_round_trips_through_wfdb() {
    let tmp = tempfile::tempdir().unwrap();
    let n = write_synthetic(tmp.path(), 20, 300, 4, 12).unwrap();
    assert_eq!(n, 20);
    let loaded = load_synthetic(tmp.path()).unwrap();
    assert_eq!(loaded.class_names, ["class0", "class1", "class2", "class3"]);
    assert_eq!(loaded.split.len(), 20);
    let direct = xlstm_ecg::core::synth::generate_synthetic(20, 300, 4, 12).unwrap();
    for (a, b) in loaded.split.train.iter().zip(&direct.train) {
        assert_eq!(a.record_id, b.record_id);
        assert_eq!(a.labels, b.labels);
        assert!(a.samples().iter().zip(b.samples()).all(|(x, y)| (x - y).abs() <= 0.0005 + 1e-12));
    }
}
